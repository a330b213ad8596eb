"""Run each subcommand twice in fresh processes and compare the outputs byte for byte."""

import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

RUNS = [
    ("lemma-check", "exp_model.json", []),
    ("verify-dichotomy", "log_varying.json", []),
    ("solve-admissibility", "poly_model.json", []),
    ("robustness-sweep", "exp_model.json", ["--horizon", "16"]),
    ("norm-equivalence", "munu_exp.json", []),
    ("derive-exponents", "exp_model.json", []),
]


def once(tmp: Path, command: str, config: str, extra: list, tag: str) -> bytes:
    out = tmp / tag / f"{command}.csv"
    out.parent.mkdir(exist_ok=True)
    subprocess.run([sys.executable, "-m", "dichotomy_lab.cli", command, "--config",
                    str(ROOT / "configs" / config), "--out", str(out), *extra], check=True)
    manifest = out.with_name(out.name + ".manifest.json")
    return out.read_bytes() + manifest.read_bytes()


def main() -> int:
    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for command, config, extra in RUNS:
            same = once(tmp, command, config, extra, "a") == once(tmp, command, config, extra, "b")
            failures += not same
            print(f"{command} ({config}): {'identical' if same else 'DIFFERENT'}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
