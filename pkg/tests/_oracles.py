"""Independent reference implementations shared by several test modules."""
import numpy as np


def brute_force_knn(support_F, support_y, query_F, k):
    """Double-loop reference: plain Python, no sorting helpers shared with the library."""
    def cos_dist(a, b):
        na = sum(x * x for x in a) ** 0.5
        nb = sum(x * x for x in b) ** 0.5
        if na == 0 or nb == 0:
            return 1.0
        return 1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb)

    preds = []
    for q in query_F:
        # same 1e-12 distance grid as the library, so exact ties are well defined
        d = [(round(cos_dist(q, s) * 1e12), idx) for idx, s in enumerate(support_F)]
        # selection of the k smallest by repeated minimum (ties: lower index)
        chosen = []
        remaining = list(d)
        for _ in range(k):
            best = remaining[0]
            for cand in remaining[1:]:
                if cand[0] < best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                    best = cand
            chosen.append(best)
            remaining.remove(best)
        votes, totals = {}, {}
        for dist, idx in chosen:
            lab = int(support_y[idx])
            votes[lab] = votes.get(lab, 0) + 1
            totals[lab] = totals.get(lab, 0) + dist
        top = max(votes.values())
        tied = sorted(lab for lab, v in votes.items() if v == top)
        preds.append(min(tied, key=lambda lab: (totals[lab], lab)))
    return np.array(preds)
