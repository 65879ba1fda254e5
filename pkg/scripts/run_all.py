"""Run every experiment over a few seeds and write one aggregate report."""
import argparse
import sys
from pathlib import Path

from auxilearn.cli import main as cli

EXPERIMENTS = ("illustrative", "aux-on-train", "poly-kernel", "noisy-aux", "labelgen-toy")
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--seeds", default="5")
    parser.add_argument("--overwrite", action="store_true")
    parser.add_argument("--parallel", action="store_true")
    args = parser.parse_args(argv)

    for name in EXPERIMENTS:
        cmd = ["run", name, "--config", str(CONFIGS / f"{name}.toml"), "--out", args.out, "--seeds", args.seeds]
        if args.overwrite:
            cmd.append("--overwrite")
        if args.parallel:
            cmd.append("--parallel")
        print(f"== {name}", flush=True)
        code = cli(cmd)
        if code:
            return code
    run_dirs = sorted(str(p) for p in Path(args.out).iterdir() if (p / "manifest.json").exists())
    return cli(["report", *run_dirs, "--out", str(Path(args.out) / "report.csv")])


if __name__ == "__main__":
    sys.exit(main())
