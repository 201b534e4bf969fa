"""Grid sweeps: Cartesian product of config axes times seeds, one aggregate row per cell."""
from __future__ import annotations

import csv
import itertools
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .benchmark import ConfigError, synthesize
from .config import load_config, merge, set_path, synth_config, train_config
from .metrics import evaluate

METRICS = ("test_accuracy", "test_ece", "eta_id", "eta_ood", "abs_err_id", "abs_err_ood", "auroc_ood", "auroc_id")


@dataclass
class SweepSpec:
    """``axes`` maps a dotted config key to its values. A key may join several
    paths with ``+`` (``train.T_id+train.T_ood``) to set them together."""
    base: dict = field(default_factory=dict)
    axes: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("a sweep needs at least one seed")
        for k, vals in self.axes.items():
            if not isinstance(vals, list) or not vals:
                raise ConfigError(f"axis {k!r} needs a non-empty list of values")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        unknown = set(d) - {"base", "axes", "seeds"}
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(base=d.get("base", {}), axes=d.get("axes", {}), seeds=[int(s) for s in d.get("seeds", [0])])

    @classmethod
    def load(cls, path) -> "SweepSpec":
        return cls.from_dict(load_config(path))

    def cells(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    def cell_config(self, cell: dict, seed: int) -> dict:
        cfg = merge(self.base, {})
        for key, value in cell.items():
            for path in key.split("+"):
                set_path(cfg, path.strip(), value)
        set_path(cfg, "train.seed", seed)
        return cfg

    def validate(self) -> None:
        """Build every cell's configs up front so a bad axis fails before any training."""
        for cell in self.cells():
            cfg = self.cell_config(cell, self.seeds[0])
            synth_config(cfg)
            train_config(cfg)


def run_one(cfg: dict, out_dir: str | None = None) -> dict:
    """Synthesize, train and evaluate one config; returns the report dict."""
    from .trainer import fit

    scfg, tcfg = synth_config(cfg), train_config(cfg)
    data, test = synthesize(scfg)
    log_path = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_path = Path(out_dir) / "metrics.jsonl"
    res = fit(tcfg, data, test, log_path=log_path)
    rep = evaluate(res.model, res.est_id, res.est_ood, data, test, tcfg.loss.mask,
                   config=cfg, seed=tcfg.seed).to_dict()
    return rep


def _run_cell(args) -> dict:
    idx, seed, cfg, out_dir = args
    run_dir = None if out_dir is None else str(Path(out_dir) / "runs" / f"cell{idx:03d}_seed{seed}")
    try:
        rep = run_one(cfg, run_dir)
        rep["error"] = None
    except Exception as exc:  # recorded per cell, the sweep carries on
        rep = {"error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}
    rep["cell"], rep["seed"] = idx, seed
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
    return rep


def _mean(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return sum(vals) / len(vals) if vals else None


def aggregate(spec: SweepSpec, reports: list[dict]) -> list[dict]:
    rows = []
    for idx, cell in enumerate(spec.cells()):
        mine = [r for r in reports if r["cell"] == idx]
        ok = [r for r in mine if r.get("error") is None]
        row = {"cell": idx, **cell, "runs": len(mine), "failed": len(mine) - len(ok)}
        for m in METRICS:
            row[m] = _mean([r.get(m) for r in ok])
        rows.append(row)
    return rows


def write_aggregate(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])


def run_sweep(spec: SweepSpec, out_dir=None, workers: int = 1) -> list[dict]:
    """Run every (cell, seed) pair; write ``aggregate.csv`` once all are done.

    Returns the aggregate rows. Per-run reports land in ``runs/`` under
    ``out_dir`` when it is given.
    """
    spec.validate()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(idx, seed, spec.cell_config(cell, seed), None if out_dir is None else str(out_dir))
            for idx, cell in enumerate(spec.cells()) for seed in spec.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reports = list(ex.map(_run_cell, jobs))
    else:
        reports = [_run_cell(j) for j in jobs]
    rows = aggregate(spec, reports)
    if out_dir is not None:
        write_aggregate(rows, Path(out_dir) / "aggregate.csv")
    return rows
