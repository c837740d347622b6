"""Acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict (printed in the pytest terminal
summary, or directly when this file is run as a script) before asserting.

The KDD Cup 99 checks need the full ``kddcup.data`` file (plain or gzipped);
point ``JLVAE_KDD_PATH`` at it. Without the file those criteria are reported as
FAIL with the reason, never skipped silently.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from acceptance_registry import lines, record
from helpers import (
    metric_instance,
    model_gradcheck,
    oracle_aps,
    oracle_curve,
    oracle_roc,
    oracle_topk,
    random_small_config,
)
from jlvae.cli import main
from jlvae.data import LINEAR_SANITY, count_report, filter_labels, parse_kdd_csv, synth_generate
from jlvae.data.kdd import PAPER_ANOMALIES, PAPER_TOTAL, apply_preprocess, fit_preprocess
from jlvae.metrics import average_precision, pr_curve, prc_auc, roc_auc, top_k_precision
from jlvae.model import GaussianLatent, ReconLoss, init_params, kl_rows, kl_std_normal, plant_synth_config
from jlvae.training import TrainConfig, evaluate_loss, train

KDD_ENV = "JLVAE_KDD_PATH"


def _kdd_path() -> Path | None:
    value = os.environ.get(KDD_ENV)
    return Path(value) if value and Path(value).exists() else None


def _cli(*args) -> None:
    code = main([str(a) for a in args])
    assert code == 0, f"command failed: {args}"


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    n = 0
    combos = list(itertools.product([ReconLoss.L2_NORM, ReconLoss.SQUARED_L2], [0.0, 1e-5]))
    for i in range(24):
        recon, lam = combos[i % 4]
        cfg = random_small_config(np.random.Generator(np.random.PCG64(1000 + i)), recon, lam)
        worst = max(worst, model_gradcheck(cfg, 1000 + i))
        n += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    record(1, "gradient check", ok, f"{n} configs, max rel error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_2_kl():
    rng = np.random.Generator(np.random.PCG64(2))
    n_samples = 100_000
    worst_z = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 5))
        mu = rng.normal(0.0, 1.5, size=(1, k))
        log_var = rng.uniform(-3.0, 2.0, size=(1, k))
        analytic = kl_std_normal(GaussianLatent(mu, log_var))
        sd = np.exp(0.5 * log_var[0])
        z = mu[0] + sd * rng.standard_normal((n_samples, k))
        log_ratio = norm.logpdf(z, mu[0], sd).sum(axis=1) - norm.logpdf(z).sum(axis=1)
        se = log_ratio.std(ddof=1) / math.sqrt(n_samples)
        worst_z = max(worst_z, abs(log_ratio.mean() - analytic) / se)
    zero = kl_rows(GaussianLatent(np.zeros((1, 3)), np.zeros((1, 3))))[0]
    ok = worst_z < 3.0 and zero == 0.0
    record(2, "KL vs Monte Carlo", ok, f"50 latents, worst |diff| = {worst_z:.2f} SE (< 3), kl(0,0) = {float(zero)}")
    assert ok


def test_criterion_3_metric_oracles():
    rng = np.random.Generator(np.random.PCG64(3))
    mismatches = 0
    for _ in range(1000):
        s, y = metric_instance(rng)
        sl, yl = s.tolist(), [int(v) for v in y]
        curve = pr_curve(s, y)
        k = int(rng.integers(1, len(s) + 1))
        checks = [
            roc_auc(s, y) == float(oracle_roc(sl, yl)),
            average_precision(s, y) == float(oracle_aps(sl, yl)),
            prc_auc(curve) == float(oracle_aps(sl, yl)),
            [(p.threshold, p.precision, p.recall) for p in curve]
            == [(t, float(p), float(r)) for t, p, r, _ in oracle_curve(sl, yl)],
            top_k_precision(s, y, k) == float(oracle_topk(sl, yl, k)),
        ]
        mismatches += checks.count(False)
    hand = [0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]
    hand_ok = average_precision(*hand) == 5 / 6 and roc_auc(*hand) == 0.75
    ok = mismatches == 0 and hand_ok
    record(3, "metric oracles", ok, f"1000 random instances (N <= 64), {mismatches} mismatches; APS 5/6 and ROC 0.75 hand cases {'ok' if hand_ok else 'wrong'}")
    assert ok


def test_criterion_4_kdd_pipeline():
    path = _kdd_path()
    if path is None:
        record(4, "KDD pipeline", False, f"not run: full KDD Cup 99 file not supplied (set {KDD_ENV})")
        pytest.fail(f"KDD Cup 99 data not available; set {KDD_ENV}")
    records = filter_labels(parse_kdd_csv(path))
    report = count_report(records)
    ds = apply_preprocess(fit_preprocess(records), records)
    in_range = all(0.0 <= b.min() and b.max() <= 1.0 for b in (ds.X, ds.C))
    ok = abs(report["rel_dev_total"]) <= 0.01 and abs(report["rel_dev_anomalies"]) <= 0.01 and in_range
    record(4, "KDD pipeline", ok,
           f"total {report['total']} vs {PAPER_TOTAL} ({report['rel_dev_total']:+.2%}), anomalies {report['anomalies']} "
           f"vs {PAPER_ANOMALIES} ({report['rel_dev_anomalies']:+.2%}), values in [0,1]: {in_range}; "
           f"per label {json.dumps(report['per_label'])}")  # fmt: skip
    assert ok


def test_criterion_5_kdd_detection(tmp_path):
    path = _kdd_path()
    if path is None:
        record(5, "KDD detection quality", False, f"not run: full KDD Cup 99 file not supplied (set {KDD_ENV})")
        pytest.fail(f"KDD Cup 99 data not available; set {KDD_ENV}")
    t0 = time.perf_counter()
    _cli("preprocess", path, "--out", tmp_path / "prep", "--preset", "kdd99")
    _cli("eval", tmp_path / "prep", "--preset", "kdd99", "--folds", 5, "--subsample", 150_000, "--out", tmp_path / "ev")
    report = json.loads((tmp_path / "ev" / "report.json").read_text())["methods"]
    means = {name: entry["mean"] for name, entry in report.items()}
    best = max(("jlvae_recon_error", "jlvae_recon_probability"), key=lambda m: means[m]["prc_auc"])
    roc, prc = means[best]["roc_auc"], means[best]["prc_auc"]
    base = max(means["iforest"]["prc_auc"], means["lof"]["prc_auc"])
    hours = (time.perf_counter() - t0) / 3600
    ok = roc >= 0.95 and prc >= 0.30 and base < 0.5 * prc
    summary = ", ".join(f"{m} ROC {v['roc_auc']:.4f} PRC {v['prc_auc']:.4f}" for m, v in means.items())
    record(5, "KDD detection quality", ok, f"{summary}; best JLVAE score {best}; {hours:.2f} h")
    assert ok


def _robustness_run(root: Path, dim_c: int | None = None) -> dict[str, int]:
    root.mkdir(parents=True)
    config = root / "config.json"
    doc = {} if dim_c is None else {"synth": {"dim_c": dim_c}}
    config.write_text(json.dumps(doc))
    common = ["--preset", "plant_synth", "--config", config]
    _cli("synth", "--out", root / "syn", *common)
    _cli("train", root / "syn", "--out", root / "run", *common)
    _cli("robustness", root / "run", root / "syn", "--out", root / "rob", *common)
    table = json.loads((root / "rob" / "manifest.json").read_text())["table"]
    return table


def _asymmetry(table: dict[str, int]) -> tuple[bool, str]:
    contextual = {k: table[k] for k in ("A2", "B2", "C2", "Dc", "Ec", "Fc")}
    dx, ex, fx = table["Dx"], table["Ex"], table["Fx"]
    worst = max(contextual, key=contextual.get)
    ratio = contextual[worst] / dx if dx else math.inf
    ok = ratio < 0.05 and dx < ex < fx
    text = (f"max contextual-only {worst}={contextual[worst]} vs Dx={dx} ({ratio:.1%} < 5%), "
            f"Dx<Ex<Fx: {dx}<{ex}<{fx}")  # fmt: skip
    return ok, text


def test_criterion_6_robustness(tmp_path):
    t0 = time.perf_counter()
    table = _robustness_run(tmp_path / "c38")
    minutes = (time.perf_counter() - t0) / 60
    ok, text = _asymmetry(table)
    ok = ok and minutes <= 20
    # per-pump layout of ten contextual columns, reported alongside
    side_ok, side_text = _asymmetry(_robustness_run(tmp_path / "c10", dim_c=10))
    record(6, "robustness asymmetry", ok,
           f"28/38 dims: {text}, {minutes:.1f} min; [info] 28/10 dims: {side_text} ({'holds' if side_ok else 'does not hold'})")  # fmt: skip
    assert ok


def test_criterion_7_determinism(tmp_path):
    from kdd_fixture import kdd_rows, write_kdd

    config = tmp_path / "config.json"
    config.write_text(json.dumps({"synth": {"n_samples": 3000}, "train": {"max_epochs": 10}}))
    common = ["--preset", "plant_synth", "--config", config]
    _cli("synth", "--out", tmp_path / "syn", *common)
    for run in ("t1", "t2"):
        _cli("train", tmp_path / "syn", "--out", tmp_path / run, *common)
    same_train = all(
        (tmp_path / "t1" / f).read_bytes() == (tmp_path / "t2" / f).read_bytes()
        for f in ("checkpoint.json", "history.csv")
    )
    raw = write_kdd(tmp_path / "kdd.csv", kdd_rows(1500, 60, 30, seed=11))
    _cli("preprocess", raw, "--out", tmp_path / "prep")
    for run in ("e1", "e2"):
        _cli("eval", tmp_path / "prep", "--folds", 3, "--epochs", 5, "--out", tmp_path / run)
    same_eval = (tmp_path / "e1" / "report.json").read_bytes() == (tmp_path / "e2" / "report.json").read_bytes()
    curves = sorted(p.name for p in (tmp_path / "e1" / "curves").iterdir())
    same_curves = all(
        (tmp_path / "e1" / "curves" / c).read_bytes() == (tmp_path / "e2" / "curves" / c).read_bytes() for c in curves
    )
    ok = same_train and same_eval and same_curves
    record(7, "determinism", ok,
           f"train checkpoint+history identical: {same_train}; eval report identical: {same_eval}; "
           f"{len(curves)} curve files identical: {same_curves}")  # fmt: skip
    assert ok


def test_criterion_8_training_sanity():
    ds, _ = synth_generate(LINEAR_SANITY, 0)
    cfg = plant_synth_config(dim_x=ds.dim_x, dim_c=ds.dim_c)
    init = init_params(cfg, 0)
    before = evaluate_loss(init, ds, cfg)
    params, history = train(ds, ds, cfg, TrainConfig(max_epochs=200, patience=200, seed=0), init=init)
    after = evaluate_loss(params, ds, cfg)
    rx, rc = after.recon_x / before.recon_x, after.recon_c / before.recon_c
    ok = len(history.records) == 200 and rx < 0.05 and rc < 0.05
    record(8, "training sanity", ok,
           f"zero-noise linear data, {len(history.records)} epochs: recon_x {before.recon_x:.3f} -> {after.recon_x:.4f} "
           f"({rx:.2%}), recon_c {before.recon_c:.3f} -> {after.recon_c:.4f} ({rc:.2%}); limit 5%")  # fmt: skip
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]) or print("\n".join(lines())))
