"""``aeon`` command line: synth, train, eval, sweep.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import ConfigError, DataError, read_dataset, synthesize, write_dataset
from .config import env_seed, load_config, synth_config, train_config
from .trainer import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("aeon")


def cmd_synth(args) -> int:
    cfg = synth_config(load_config(args.config), seed=env_seed())
    data, test = synthesize(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out, test)
    log.info("wrote %s (%s)", out, data.tag_counts())
    return EXIT_OK


def _load_data(path):
    data, test = read_dataset(path)
    data.check_invariants()
    if test is None:
        raise DataError(f"{path}: no clean test split next to the dataset")
    return data, test


def cmd_train(args) -> int:
    from .trainer import fit

    cfg = train_config(load_config(args.config), seed=env_seed())
    data, test = _load_data(args.data)
    if args.log:
        Path(args.log).parent.mkdir(parents=True, exist_ok=True)
    res = fit(cfg, data, test, log_path=args.log, ckpt_dir=args.ckpt, progress=True)
    last = res.history[-1]
    log.info("done: test_acc=%s eta=(%.3f, %.3f)", last.test_acc, res.est_id.rate, res.est_ood.rate)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .noise_estimation import MaskConfig
    from .trainer import load_checkpoint

    ckpt = Path(args.ckpt)
    if not (ckpt / "model.json").exists():
        raise DataError(f"{ckpt}: no checkpoint found")
    model, est_id, est_ood, cfg = load_checkpoint(ckpt)
    data, test = _load_data(args.data)
    if data.dim != model.config.input_dim:
        raise DataError("dataset dimension does not match the checkpoint")
    mask = MaskConfig(**(cfg or {}).get("loss", {}).get("mask", {}))
    rep = evaluate(model, est_id, est_ood, data, test, mask, config=cfg or {},
                   seed=None if cfg is None else cfg.get("seed"))
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(rep.to_dict(), indent=2))
    log.info("acc=%.4f eta=(%.3f, %.3f) auroc=(%s, %s)", rep.test_accuracy, rep.eta_id, rep.eta_ood,
             rep.auroc_ood, rep.auroc_id)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import SweepSpec, run_sweep

    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    spec = SweepSpec.load(args.spec)
    rows = run_sweep(spec, args.out, workers=args.workers)
    failed = sum(r["failed"] for r in rows)
    log.info("%d cells, %d failed runs; aggregate in %s", len(rows), failed, Path(args.out) / "aggregate.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aeon", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a tagged dual-noise dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--log", required=True)
    t.add_argument("--ckpt", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="run a config grid over seeds")
    w.add_argument("--spec", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
