"""Command-line entry point: ``hessbound <subcommand> [options]``.

Exit codes: 0 when every assertion passes or was skipped by a guard, 1 when
an assertion fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .errors import ConfigInvalid, HessboundError
from .harness import ExperimentConfig, run, summarize, validate_report

SUBCOMMANDS = {"check-lemma": "lemma-campaign", "solve": "solve",
               "certify": "barrier-certify", "sweep": "estimate-sweep"}

log = logging.getLogger("hessbound")


def _parser():
    p = argparse.ArgumentParser(prog="hessbound", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        s = sub.add_parser(name, help=f"run a {kind} experiment")
        s.add_argument("--config", type=Path, help="experiment config (JSON)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="output directory for report.json and CSVs")
        s.add_argument("--grid", type=int, help="grid points per axis for the main solve")
        s.add_argument("--jobs", type=int, help="worker threads for independent cases")
        s.add_argument("-q", "--quiet", action="store_true", help="print the summary line only")
    r = sub.add_parser("report", help="re-validate and summarize a report")
    r.add_argument("path", type=Path, help="report.json or a directory holding one")
    return p


def _apply_grid(cfg, m):
    if m is None:
        return cfg
    if m < 5:
        raise ConfigInvalid("--grid must be at least 5")
    if cfg.experiment == "estimate-sweep":
        coarse = (m + 1) // 2
        refine = [coarse, m] if coarse >= 5 and m % 2 == 1 else [m]
        return replace(cfg, grid=dict(cfg.grid, m=m), sweep=dict(cfg.sweep, refine=refine))
    refine = [r for r in cfg.grid.get("refine", []) if r < m]
    return replace(cfg, grid={"m": m, "refine": refine})


def build_config(args):
    kind = SUBCOMMANDS[args.command]
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if cfg.experiment != kind:
            raise ConfigInvalid(f"'{args.command}' expects a {kind} config, "
                                f"got {cfg.experiment}")
    else:
        cfg = ExperimentConfig.from_dict({"experiment": kind})
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigInvalid("--seed must be nonnegative")
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigInvalid("--jobs must be at least 1")
        cfg = replace(cfg, jobs=args.jobs)
    cfg = _apply_grid(cfg, args.grid)
    out = args.out or (Path(cfg.out) if cfg.out else Path("hessbound-out") / kind)
    return replace(cfg, out=str(out))


def _report_command(path):
    target = path / "report.json" if path.is_dir() else path
    try:
        doc = json.loads(target.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read report {target}: {exc}") from exc
    validate_report(doc)
    for line in summarize(doc):
        print(line)
    return int(doc["summary"]["exit_code"])


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return _report_command(args.path)
        cfg = build_config(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = run(cfg)
        for w in caught:
            if issubclass(w.category, UserWarning):
                log.warning("%s", w.message)
        paths = rep.write(cfg.out)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except HessboundError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    doc = rep.to_dict()
    lines = summarize(doc)
    print(lines[0] if args.quiet else "\n".join(lines))
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return rep.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
