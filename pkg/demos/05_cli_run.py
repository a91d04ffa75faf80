"""Drive the command-line tool end to end in a temporary directory.

Run: python3 demos/05_cli_run.py
"""
import json
import pathlib
import tempfile

from topotrain.cli import main

work = pathlib.Path(tempfile.mkdtemp(prefix="topotrain-demo-"))
config = work / "run.txt"
config.write_text("# small two-moons run\nepochs = 5\nn_train = 600\nn_test = 300\n"
                  f"out_dir = {work / 'runs'}\nrun_id = demo\n")

main(["train", str(config), "--method", "trades", "--trades-beta", "6.0", "--lambda-base", "1.0"])
run_dir = work / "runs" / "demo"
print("run directory:", sorted(p.name for p in run_dir.iterdir()))
manifest = json.loads((run_dir / "manifest.json").read_text())
ckpt = run_dir / manifest["artifacts"]["checkpoints"][-1]

main(["evaluate", str(ckpt), "--config", str(config)])
main(["topology-score", str(ckpt), "--config", str(config), "--k", "5,10,20,30,40,50"])
main(["export-features", str(ckpt), "--config", str(config), "--out", str(work / "features.csv")])
main(["gen-data", "--dataset", "blobs", "--n", "300", "--n-classes", "4", "--out", str(work / "blobs.csv")])
print((work / "blobs.csv").read_text().splitlines()[:3])
