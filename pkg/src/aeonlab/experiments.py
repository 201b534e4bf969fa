"""Desk-scale experiment setups shared by the acceptance tests and scripts/."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .benchmark import SynthConfig, TaggedDataset, synthesize
from .config import DESK, merge, synth_config, train_config
from .metrics import EvalReport, evaluate
from .trainer import FitResult, TrainConfig, fit


def desk_config(overrides: dict | None = None) -> dict:
    return merge(DESK, overrides or {})


def desk_data(cfg: dict | None = None) -> tuple[TaggedDataset, TaggedDataset]:
    return synthesize(synth_config(desk_config(cfg)))


@dataclass
class RunOutcome:
    fit: FitResult
    report: EvalReport
    seconds: float
    config: TrainConfig


def train_and_evaluate(data, test, cfg: dict | None = None, log_path=None) -> RunOutcome:
    full = desk_config(cfg)
    tcfg = train_config(full)
    t0 = time.perf_counter()
    res = fit(tcfg, data, test, log_path=log_path)
    secs = time.perf_counter() - t0
    rep = evaluate(res.model, res.est_id, res.est_ood, data, test, tcfg.loss.mask, config=full, seed=tcfg.seed)
    return RunOutcome(res, rep, secs, tcfg)


def mask_sanity(history, warmup: int, epochs: int) -> list[tuple[int, float, float]]:
    """Epochs past warm-up + 20% of main epochs where OOD records do not get a
    lower mean w_ood than ID records. Returns ``(epoch, on_ood, on_id)``."""
    start = warmup + int(0.2 * (epochs - warmup))
    bad = []
    for rec in history:
        if rec.epoch >= start and rec.w_ood_on_ood is not None and not rec.w_ood_on_ood < rec.w_ood_on_id:
            bad.append((rec.epoch, rec.w_ood_on_ood, rec.w_ood_on_id))
    return bad


def default_synth() -> SynthConfig:
    return synth_config(desk_config())


# Sweep budget: the 27-cell x 3-seed temperature grid has to fit a single core.
SWEEP_EPOCHS = {"epochs": 30, "warmup_epochs": 10}
TEMP_AXES = {
    "train.loss.mask.T_E": [0.5, 1.0, 2.0],
    "train.T_id+train.T_ood": [5.0, 10.0, 15.0],
    "train.loss.mask.beta_id+train.loss.mask.beta_ood": [0.05, 0.1, 0.2],
}
DEFAULT_TEMP_CELL = {"train.loss.mask.T_E": 1.0, "train.T_id+train.T_ood": 10.0,
                     "train.loss.mask.beta_id+train.loss.mask.beta_ood": 0.1}
INIT_SCALES = [1e-2, 1e-1, 1.0, 10.0]


def temperature_sweep_spec(seeds=(0, 1, 2), budget: dict | None = None):
    from .sweep import SweepSpec
    return SweepSpec(base=desk_config({"train": budget or SWEEP_EPOCHS}), axes=dict(TEMP_AXES), seeds=list(seeds))


def init_sweep_spec(seeds=(0,)):
    from .sweep import SweepSpec
    return SweepSpec(base=desk_config(), axes={"train.gamma_init": list(INIT_SCALES)}, seeds=list(seeds))


def rank_of(rows: list[dict], cell: dict, metric: str = "test_accuracy") -> int:
    """1-based rank of ``cell`` by ``metric`` (descending); ties share the better rank."""
    mine = next(r for r in rows if all(r[k] == v for k, v in cell.items()))
    if mine[metric] is None:
        return len(rows)
    return 1 + sum(1 for r in rows if r[metric] is not None and r[metric] > mine[metric])
