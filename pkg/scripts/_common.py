"""Shared helpers for the runnable scripts."""

import argparse
import json
import sys
from pathlib import Path

from hessbound.errors import ConfigInvalid
from hessbound.harness import ExperimentConfig, run, summarize

HERE = Path(__file__).resolve().parent


def main(default_config, description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, default=HERE / "configs" / default_config)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    args = p.parse_args()
    try:
        doc = json.loads(args.config.read_text())
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.jobs is not None:
            doc["jobs"] = args.jobs
        cfg = ExperimentConfig.from_dict(doc)
    except (OSError, json.JSONDecodeError, ConfigInvalid) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    rep = run(cfg)
    out = args.out or Path(cfg.out or Path("results") / args.config.stem)
    paths = rep.write(out)
    print("\n".join(summarize(rep.to_dict())))
    for key, secs in sorted(rep.timing.items()):
        print(f"  time {key}: {secs:.2f} s")
    print(f"wrote {len(paths)} files to {out}")
    return rep.exit_code
