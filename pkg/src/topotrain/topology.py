"""Neighbour-relation graphs over batch features and the losses that align them.

Conventions: ``G[i, j]`` holds ``p(i | j)``, the probability that sample ``i``
is a neighbour of sample ``j``; column ``j`` is the conditioning sample and
sums to one over ``i != j``. Diagonals are stored as zero and excluded from
every sum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import NumericalError

NORM_FLOOR = 1e-12
Q_CLAMP = 1e-7


class DegenerateFeatureError(NumericalError):
    """A feature row has (numerically) zero norm or a graph column cannot be normalised."""


def _unit_rows(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 2:
        raise ValueError("need a 2-D feature matrix with at least two rows")
    norms = np.sqrt(np.einsum("ij,ij->i", F, F))
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        raise DegenerateFeatureError(f"zero-norm feature rows {bad.tolist()}")
    return F / norms[:, None], norms


def cosine_distances(F: np.ndarray) -> np.ndarray:
    """``d_ij = 1 - cos(f_i, f_j)``; symmetric, zero diagonal, values in [0, 2]."""
    U, _ = _unit_rows(F)
    D = 1.0 - U @ U.T
    D = np.clip(0.5 * (D + D.T), 0.0, 2.0)
    np.fill_diagonal(D, 0.0)
    return D


def offsets(D: np.ndarray) -> np.ndarray:
    """Distance from each sample to its nearest other sample."""
    D = np.asarray(D, dtype=np.float64)
    masked = D + np.diag(np.full(D.shape[0], np.inf))
    return masked.min(axis=1)


def _graph_from_distances(D: np.ndarray):
    n = D.shape[0]
    if n < 3:
        raise ValueError("a neighbour graph needs at least three samples")
    rho = offsets(D)
    num = 2.0 - (D - rho[None, :])
    np.fill_diagonal(num, 0.0)
    z = num.sum(axis=0)
    if np.any(z < NORM_FLOOR):
        raise DegenerateFeatureError("neighbour-graph column with zero normaliser")
    return num / z[None, :], rho, num, z


def neighbor_graph(F: np.ndarray) -> np.ndarray:
    """Conditional neighbour probabilities from offset cosine distances.

    ``p(i|j) = (2 - (d_ij - rho_j)) / sum_{k != j} (2 - (d_jk - rho_j))``.
    """
    return _graph_from_distances(cosine_distances(F))[0]


def _off_diagonal(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def _bernoulli_kl_terms(P: np.ndarray, Qc: np.ndarray) -> np.ndarray:
    from scipy.special import xlogy

    return xlogy(P, P) - P * np.log(Qc) + xlogy(1.0 - P, 1.0 - P) - (1.0 - P) * np.log1p(-Qc)


def topology_loss(P: np.ndarray, Q: np.ndarray) -> float:
    """Sum over ``i != j`` of the Bernoulli KL between ``p(i|j)`` and ``q(i|j)``.

    ``Q`` is clamped to ``[1e-7, 1 - 1e-7]`` before the logarithms. ``P`` gets
    the same clamp, which keeps the loss exactly zero at ``Q == P`` even for
    saturated entries (0 or 1); elsewhere it changes nothing.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"graph shapes differ or are not square: {P.shape} vs {Q.shape}")
    mask = _off_diagonal(P.shape[0])
    Pc = np.clip(P, Q_CLAMP, 1.0 - Q_CLAMP)
    Qc = np.clip(Q, Q_CLAMP, 1.0 - Q_CLAMP)
    return float(_bernoulli_kl_terms(Pc, Qc)[mask].sum())


def absolute_relation_loss(D: np.ndarray, D_prime: np.ndarray) -> float:
    """Mean squared difference of off-diagonal distance entries."""
    D = np.asarray(D, dtype=np.float64)
    D_prime = np.asarray(D_prime, dtype=np.float64)
    if D.shape != D_prime.shape:
        raise ValueError(f"distance matrix shapes differ: {D.shape} vs {D_prime.shape}")
    mask = _off_diagonal(D.shape[0])
    return float(((D - D_prime)[mask] ** 2).mean())


# ---------------------------------------------------------------------------
# Gradients with respect to the feature matrices.


@dataclass
class _GraphTape:
    U: np.ndarray
    norms: np.ndarray
    D: np.ndarray
    rho_arg: np.ndarray
    G: np.ndarray
    z: np.ndarray


def _graph_tape(F: np.ndarray) -> _GraphTape:
    U, norms = _unit_rows(F)
    D = cosine_distances(F)
    G, _, _, z = _graph_from_distances(D)
    masked = D + np.diag(np.full(D.shape[0], np.inf))
    return _GraphTape(U, norms, D, np.argmin(masked, axis=1), G, z)


def _distance_backward(tape: _GraphTape, dD: np.ndarray) -> np.ndarray:
    """Map a gradient on the distance matrix back to the features."""
    dS = -dD
    np.fill_diagonal(dS, 0.0)
    dU = (dS + dS.T) @ tape.U
    radial = np.einsum("ij,ij->i", dU, tape.U)
    return (dU - tape.U * radial[:, None]) / tape.norms[:, None]


def _graph_backward(tape: _GraphTape, dG: np.ndarray) -> np.ndarray:
    """Map a gradient on the graph entries back to the features."""
    n = tape.G.shape[0]
    dG = np.where(_off_diagonal(n), dG, 0.0)
    col = (dG * tape.G).sum(axis=0)
    dnum = (dG - col[None, :]) / tape.z[None, :]
    np.fill_diagonal(dnum, 0.0)
    # num_ij = 2 - d_ij + rho_j, rho_j = d_{j, argmin_j}
    dD = -dnum
    drho = dnum.sum(axis=0)
    dD[np.arange(n), tape.rho_arg] += drho
    return _distance_backward(tape, dD)


def topology_loss_and_grads(
    F_std: np.ndarray, F_adv: np.ndarray, detach_standard: bool = True
) -> tuple[float, np.ndarray, np.ndarray]:
    """Topology loss between graphs built on two feature matrices.

    Returns ``(loss, grad_F_std, grad_F_adv)``. With ``detach_standard`` the
    standard-side graph is a constant and its gradient is exactly zero.
    """
    if F_std.shape[0] != F_adv.shape[0]:
        raise ValueError("feature matrices must describe the same samples")
    tp = _graph_tape(F_std)
    tq = _graph_tape(F_adv)
    P, Q = tp.G, tq.G
    loss = topology_loss(P, Q)
    Pc = np.clip(P, Q_CLAMP, 1.0 - Q_CLAMP)
    Qc = np.clip(Q, Q_CLAMP, 1.0 - Q_CLAMP)
    active = (Q > Q_CLAMP) & (Q < 1.0 - Q_CLAMP)
    dQ = np.where(active, -Pc / Qc + (1.0 - Pc) / (1.0 - Qc), 0.0)
    grad_adv = _graph_backward(tq, dQ)
    if detach_standard:
        grad_std = np.zeros_like(np.asarray(F_std, dtype=np.float64))
    else:
        p_active = (P > Q_CLAMP) & (P < 1.0 - Q_CLAMP)
        dP = np.where(p_active, np.log(Pc) - np.log(Qc) - np.log1p(-Pc) + np.log1p(-Qc), 0.0)
        grad_std = _graph_backward(tp, dP)
    return loss, grad_std, grad_adv


def absolute_relation_loss_and_grads(
    F_std: np.ndarray, F_adv: np.ndarray, detach_standard: bool = True
) -> tuple[float, np.ndarray, np.ndarray]:
    """Absolute-relation ablation loss with feature gradients (same contract as above)."""
    tp_U, tp_norms = _unit_rows(F_std)
    D = cosine_distances(F_std)
    tq = _graph_tape(F_adv)
    n = D.shape[0]
    diff = D - tq.D
    np.fill_diagonal(diff, 0.0)
    loss = float((diff ** 2).sum() / (n * (n - 1)))
    dD = 2.0 * diff / (n * (n - 1))
    grad_adv = _distance_backward(tq, -dD)
    if detach_standard:
        grad_std = np.zeros_like(np.asarray(F_std, dtype=np.float64))
    else:
        shell = _GraphTape(tp_U, tp_norms, D, None, None, None)  # type: ignore[arg-type]
        grad_std = _distance_backward(shell, dD)
    return loss, grad_std, grad_adv


def write_graph_csv(path, G: np.ndarray) -> None:
    """Dump a graph with one row per conditioning sample ``j``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j"] + [f"p_{i}" for i in range(G.shape[0])])
        for j, row in enumerate(np.asarray(G).T):
            writer.writerow([j] + [repr(float(v)) for v in row])
