"""Run every subcommand on the bundled scenarios and write the artifacts to one directory."""

import argparse
import sys
from pathlib import Path

from dichotomy_lab.cli import run

ROOT = Path(__file__).resolve().parents[1]

PLAN = [
    ("lemma-check", "exp_model.json", []),
    ("lemma-check", "poly_model.json", []),
    ("lemma-check", "log_varying.json", []),
    ("verify-dichotomy", "exp_model.json", []),
    ("verify-dichotomy", "poly_model.json", []),
    ("verify-dichotomy", "log_varying.json", []),
    ("verify-dichotomy", "constant_fit.json", []),
    ("solve-admissibility", "exp_model.json", []),
    ("solve-admissibility", "log_varying.json", []),
    ("robustness-sweep", "exp_model.json", []),
    ("robustness-sweep", "poly_model.json", []),
    ("norm-equivalence", "munu_exp.json", ["--direction", "roundtrip"]),
    ("norm-equivalence", "munu_poly.json", ["--direction", "roundtrip"]),
    ("norm-equivalence", "munu_poly.json", ["--direction", "backward"]),
    ("derive-exponents", "exp_model.json", []),
    ("derive-exponents", "poly_model.json", []),
]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    worst = 0
    for command, config, extra in PLAN:
        tag = "-".join([command, Path(config).stem] + [e.lstrip("-") for e in extra])
        code = run([command, "--config", str(ROOT / "configs" / config),
                    "--out", str(out_dir / f"{tag}.csv"), *extra])
        print(f"{tag}: exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
