"""The command line, stage by stage, on a small task in a temporary directory.

Each call below is what you would type in a shell as ``casp <args>``. The
full run writes one directory per seed; the individual stages rebuild one
seed from its predecessors' artifacts and land on the same bytes.

Run:  python demos/cli_walkthrough.py
"""

import json
import tempfile
from pathlib import Path

from casp.cli import main

SMALL = {
    "synth": {
        "n_source": 120, "n_target": 80, "n_valid": 40, "n_test": 60,
        "rotation": {"audio": 0.9, "video": 0.9, "text": 0.9},
    },
    "backbone": {"fusion": "late", "model_dim": 16, "n_layers": 1, "n_heads": 2, "feedforward_dim": 32},
    "pretrain": {"epochs": 10},
    "lam": 75,
    "seeds": [0, 1],
}


def casp(*args):
    print("\n$ casp " + " ".join(args))
    code = main(list(args))
    if code:
        raise SystemExit(code)


def walkthrough():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = dict(SMALL, source_dir=str(tmp / "source"), target_dir=str(tmp / "target"),
                   output_dir=str(tmp / "run"))
        config = tmp / "config.json"
        config.write_text(json.dumps(cfg))

        casp("synth", "--config", str(config))
        casp("run", "--config", str(config))

        # One seed again, one stage at a time, into a second directory.
        for stage in ("pretrain", "adapt", "pseudolabel", "selftrain"):
            casp(stage, "--config", str(config), "--seed", "1", "--set", f'output_dir="{tmp / "staged"}"')
        a = (tmp / "run" / "seed_1" / "casp" / "checkpoint.f32").read_bytes()
        b = (tmp / "staged" / "seed_1" / "casp" / "checkpoint.f32").read_bytes()
        print(f"\nstaged checkpoint identical to the full run: {a == b}")

        casp("eval", "--checkpoint", str(tmp / "staged" / "seed_1" / "casp"), "--dataset", str(tmp / "target"))


if __name__ == "__main__":
    walkthrough()
