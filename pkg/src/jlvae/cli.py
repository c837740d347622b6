"""Command-line front end.

Commands: preprocess, synth, train, score, eval, robustness. Each command writes
into a staging directory that is renamed into place only on success, and ends
with a ``manifest.json`` holding the resolved config, input fingerprints and
results. Config precedence: preset defaults < ``--config`` JSON < flags.

The log level comes from the ``JLVAE_LOG_LEVEL`` environment variable.
Failures print one JSON object ``{"error", "message", "command"}`` on stderr
and exit with status 1 (2 for malformed command lines).
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import __version__, config, metrics
from .baselines import LofConfig, iforest_fit, iforest_score, lof_score
from .checkpoint import dumps, load_checkpoint, save_checkpoint, write_atomic
from .data import (
    PreparedDataset,
    apply_preprocess,
    count_report,
    filter_labels,
    fit_preprocess,
    load_dataset,
    parse_kdd_csv,
    save_dataset,
    stratified_kfold,
    stratified_split,
    stratified_subsample,
    synth_generate,
)
from .data.kdd import UnknownLabelPolicy, write_records
from .data.store import RAW_RECORDS, load_manifest
from .robustness import CorruptionSpec, paper_specs, run_protocol, spec_to_dict
from .scoring import ScoreMethod, ScoreReport, calibrate_threshold, score
from .training import train

log = logging.getLogger("jlvae")

LOG_ENV = "JLVAE_LOG_LEVEL"
MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.json"
SPLIT = "split.json"
# relative deviation from the reference KDD counts that triggers a warning
COUNT_TOLERANCE = 0.01


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("UsageError", message, None)
        sys.exit(2)


def _emit_error(kind: str, message: str, command: Optional[str]) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "command": command}, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_sha(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@contextmanager
def staged_dir(final: Path) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``final`` only if the block succeeds.

    An existing ``final`` is replaced only when it is empty or a previous run's
    output (it holds a manifest), so unrelated directories are never clobbered.
    """
    final = Path(final)
    if final.exists():
        if not final.is_dir():
            raise CliError(f"output path {final} exists and is not a directory")
        if any(final.iterdir()) and not (final / MANIFEST).exists():
            raise CliError(f"output directory {final} is not empty and holds no {MANIFEST}")
    tmp = final.parent / f".{final.name}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _manifest(args, cfg: dict, started: float, **sections) -> dict:
    doc = {
        "command": args.command,
        "argv": args.argv,
        "tool_version": __version__,
        "config": cfg,
        "created_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_seconds": round(time.perf_counter() - started, 3),
    }
    doc.update(sections)
    return doc


def _write_manifest(out: Path, doc: dict) -> None:
    write_atomic(out / MANIFEST, dumps(doc))


def _data_inputs(data_dir: Path, ds: PreparedDataset) -> dict:
    return {
        "path": str(data_dir),
        "fingerprint": ds.fingerprint(),
        "sha256": {name: _sha256(data_dir / name) for name in ("X.csv", "C.csv", "labels.csv")},
    }


def _checkpoint_path(path: Path) -> Path:
    return path / CHECKPOINT if path.is_dir() else path


def _column_names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{j}" for j in range(n)]


def _split_indices(labels: Optional[np.ndarray], n: int, cfg: dict) -> dict[str, np.ndarray]:
    """Stratified train/val/test positions; fractions are of the whole dataset."""
    y = labels if labels is not None else np.zeros(n, dtype=bool)
    test_frac = cfg["split"]["test_fraction"]
    val_frac = cfg["split"]["val_fraction"]
    if not 0.0 <= test_frac < 1.0 or not 0.0 < val_frac < 1.0 - test_frac:
        raise CliError(f"bad split fractions: val={val_frac}, test={test_frac}")
    rest, test = stratified_split(y, test_frac, cfg["seed"])
    tr, va = stratified_split(y[rest], val_frac / (1.0 - test_frac), cfg["seed"] + 1)
    return {"train": rest[tr], "val": rest[va], "test": test}


# ---------------------------------------------------------------- commands


def cmd_preprocess(args, cfg: dict) -> dict:
    started = time.perf_counter()
    src = Path(args.input)
    if not src.exists():
        raise CliError(f"input file {src} not found")
    records = filter_labels(parse_kdd_csv(src), UnknownLabelPolicy(args.unknown_labels))
    if not records:
        raise CliError(f"no retained records in {src}")
    counts = count_report(records)
    for key in ("rel_dev_total", "rel_dev_anomalies"):
        if abs(counts[key]) > COUNT_TOLERANCE:
            log.warning("retained counts deviate from the reference: %s = %.4f", key, counts[key])
    spec = fit_preprocess(records)
    ds = apply_preprocess(spec, records)
    with staged_dir(Path(args.out)) as out:
        save_dataset(out, ds, None, spec.feature_names("behavioral"), spec.feature_names("contextual"))
        write_records(out / RAW_RECORDS, records)
        doc = _manifest(
            args, cfg, started,
            inputs={"path": str(src), "sha256": _sha256(src)},
            counts=counts,
            widths={"dim_x": ds.dim_x, "dim_c": ds.dim_c},
            fingerprint=ds.fingerprint(),
            preprocess=spec.to_dict(),
        )  # fmt: skip
        _write_manifest(out, doc)
    return {"rows": len(ds), "dim_x": ds.dim_x, "dim_c": ds.dim_c, "anomalies": counts["anomalies"]}


def cmd_synth(args, cfg: dict) -> dict:
    started = time.perf_counter()
    spec = config.synth_spec(cfg)
    ds, truth = synth_generate(spec, cfg["seed"])
    with staged_dir(Path(args.out)) as out:
        save_dataset(out, ds, None, _column_names("x", ds.dim_x), _column_names("c", ds.dim_c))
        doc = _manifest(
            args, cfg, started,
            synth_spec=spec.to_dict(),
            widths={"dim_x": ds.dim_x, "dim_c": ds.dim_c},
            fingerprint=ds.fingerprint(),
        )  # fmt: skip
        _write_manifest(out, doc)
    return ds.fingerprint()


def cmd_train(args, cfg: dict) -> dict:
    started = time.perf_counter()
    data_dir = Path(args.data)
    ds = load_dataset(data_dir)
    data_manifest = load_manifest(data_dir)
    split = _split_indices(ds.labels, len(ds), cfg)
    mcfg = config.model_config(cfg, ds.dim_x, ds.dim_c)
    tcfg = config.train_config(cfg)
    params, history = train(ds.subset(split["train"]), ds.subset(split["val"]), mcfg, tcfg)
    fingerprint = {
        "dataset": ds.fingerprint(),
        "preprocess_sha256": _canonical_sha(data_manifest["preprocess"]) if "preprocess" in data_manifest else None,
    }
    with staged_dir(Path(args.out)) as out:
        save_checkpoint(out / CHECKPOINT, params, mcfg, fingerprint)
        history.write_csv(out / "history.csv")
        split_doc = {name: ds.row_ids[idx].tolist() for name, idx in split.items()}
        write_atomic(out / SPLIT, json.dumps(split_doc, sort_keys=True) + "\n")
        best = history.records[history.best_epoch - 1] if history.best_epoch else None
        results = {
            "epochs_run": len(history.records),
            "best_epoch": history.best_epoch,
            "stopped_early": history.stopped_early,
            "initial_val": history.initial_val.as_dict() if history.initial_val else None,
            "best_val": best.val.as_dict() if best else None,
            "epoch_seconds": [round(r.seconds, 3) for r in history.records],
        }
        doc = _manifest(
            args, cfg, started,
            inputs=_data_inputs(data_dir, ds),
            model_config=mcfg.to_dict(),
            train_config=tcfg.to_dict(),
            split_sizes={k: int(len(v)) for k, v in split.items()},
            results=results,
            checkpoint_sha256=_sha256(out / CHECKPOINT),
        )  # fmt: skip
        _write_manifest(out, doc)
    return {k: results[k] for k in ("epochs_run", "best_epoch", "stopped_early")}


def _load_split(ckpt: Path) -> Optional[dict]:
    path = (ckpt.parent if ckpt.is_file() else ckpt) / SPLIT
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def _select_rows(ds: PreparedDataset, ckpt: Path, which: str) -> PreparedDataset:
    if which == "all":
        return ds
    split = _load_split(ckpt)
    if split is None:
        raise CliError(f"--rows {which} needs {SPLIT} next to the checkpoint")
    pos = {int(r): i for i, r in enumerate(ds.row_ids)}
    try:
        idx = np.array([pos[int(r)] for r in split[which]], dtype=np.int64)
    except KeyError as exc:
        raise CliError(f"row id {exc.args[0]} of the {which} split is not in the dataset") from None
    return ds.subset(idx)


def cmd_score(args, cfg: dict) -> dict:
    started = time.perf_counter()
    ckpt = Path(args.checkpoint)
    params, mcfg, _ = load_checkpoint(_checkpoint_path(ckpt))
    data_dir = Path(args.data)
    full = load_dataset(data_dir)
    ds = _select_rows(full, ckpt, args.rows)
    method = ScoreMethod(cfg["score"]["method"])
    s = score(params, ds.X, ds.C, method, L=cfg["score"]["samples"], seed=cfg["seed"])
    threshold = calibrate_threshold(s, args.target_rate) if args.target_rate is not None else None
    report = ScoreReport(s, method, threshold, row_ids=ds.row_ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".partial")
    extra = _manifest(
        args, cfg, started,
        inputs=_data_inputs(data_dir, full),
        checkpoint={"path": str(ckpt), "sha256": _sha256(_checkpoint_path(ckpt))},
        rows=args.rows,
        flagged=None if report.flags is None else int(report.flags.sum()),
    )  # fmt: skip
    report.write(tmp, extra)
    os.replace(tmp, out)
    os.replace(str(tmp) + ".json", str(out) + ".json")
    return {"rows": len(s), "method": method.value, "threshold": threshold}


def _load_records(data_dir: Path, manifest: dict):
    raw = data_dir / RAW_RECORDS
    if raw.exists() and "preprocess" in manifest:
        return parse_kdd_csv(raw)
    return None


def _fold_data(ds: PreparedDataset, records, train_idx: np.ndarray, test_idx: np.ndarray):
    """Per-fold train/test blocks; raw KDD records are re-prepared from the training fold."""
    if records is None:
        return ds.subset(train_idx), ds.subset(test_idx)
    train_recs = [records[i] for i in train_idx]
    test_recs = [records[i] for i in test_idx]
    spec = fit_preprocess(train_recs)
    tr = apply_preprocess(spec, train_recs)
    te = apply_preprocess(spec, test_recs)
    return (
        PreparedDataset(tr.X, tr.C, tr.labels, ds.row_ids[train_idx]),
        PreparedDataset(te.X, te.C, te.labels, ds.row_ids[test_idx]),
    )


def _write_curve(path: Path, scores: np.ndarray, labels: np.ndarray) -> None:
    lines = ["threshold,precision,recall,fpr,tpr"]
    for p in metrics.pr_curve(scores, labels):
        lines.append(f"{p.threshold!r},{p.precision!r},{p.recall!r},{p.fpr!r},{p.tpr!r}")
    path.write_text("\n".join(lines) + "\n")


def cmd_eval(args, cfg: dict) -> dict:
    started = time.perf_counter()
    ev = cfg["eval"]
    data_dir = Path(args.data)
    ds = load_dataset(data_dir)
    if ds.labels is None:
        raise CliError("eval needs a labelled dataset")
    records = _load_records(data_dir, load_manifest(data_dir))
    if records is not None and len(records) != len(ds):
        raise CliError(f"{RAW_RECORDS} has {len(records)} records, dataset has {len(ds)} rows")
    seed = cfg["seed"]
    rows = np.arange(len(ds))
    if ev["subsample"] is not None and ev["subsample"] < len(ds):
        rows = stratified_subsample(ds.labels, ev["subsample"], seed)
    folds = stratified_kfold(ds.labels[rows], ev["k_folds"], seed)
    k_top = ev["top_k"]
    per_method: dict[str, list[dict]] = {}
    timings = []

    with staged_dir(Path(args.out)) as out:
        (out / "curves").mkdir()
        for f, test_local in enumerate(folds):
            t0 = time.perf_counter()
            train_local = np.setdiff1d(np.arange(len(rows)), test_local)
            tr_all, te = _fold_data(ds, records, rows[train_local], rows[test_local])
            tr_pos, va_pos = stratified_split(tr_all.labels, cfg["split"]["val_fraction"], seed + 1 + f)
            mcfg = config.model_config(cfg, tr_all.dim_x, tr_all.dim_c)
            tcfg = config.train_config(cfg)
            tcfg.seed = seed + f
            params, history = train(tr_all.subset(tr_pos), tr_all.subset(va_pos), mcfg, tcfg)
            t_train = time.perf_counter() - t0

            fold_scores = {
                "jlvae_recon_error": (score(params, te.X, te.C, ScoreMethod.RECON_ERROR), te.labels),
                "jlvae_recon_probability": (
                    score(params, te.X, te.C, ScoreMethod.RECON_PROBABILITY, L=ev["prob_samples"], seed=seed),
                    te.labels,
                ),
            }
            joint_tr = np.hstack([tr_all.C, tr_all.X])
            joint_te = np.hstack([te.C, te.X])
            forest = iforest_fit(joint_tr, ev["iforest_trees"], min(ev["iforest_subsample"], len(joint_tr)), seed + f)
            fold_scores["iforest"] = (iforest_score(forest, joint_te), te.labels)
            lof_rows = stratified_subsample(te.labels, ev["lof_max_rows"], seed + f)
            fold_scores["lof"] = (
                lof_score(joint_te[lof_rows], LofConfig(k=ev["lof_k"])),
                te.labels[lof_rows],
            )
            for name, (s, y) in fold_scores.items():
                row = {"fold": f, "n_test": int(len(y)), "n_anomalies": int(y.sum())}
                row.update(metrics.summary(s, y, k_top))
                per_method.setdefault(name, []).append(row)
                _write_curve(out / "curves" / f"{name}_fold{f}.csv", s, y)
            timings.append({
                "fold": f, "train_seconds": round(t_train, 3),
                "total_seconds": round(time.perf_counter() - t0, 3),
                "epochs_run": len(history.records), "best_epoch": history.best_epoch,
            })  # fmt: skip
            log.info("fold %d done in %.1fs", f, time.perf_counter() - t0)

        report = {"k_folds": len(folds), "n_rows": int(len(rows)), "seed": seed, "methods": {}}
        for name, fold_rows in per_method.items():
            keys = [k for k in fold_rows[0] if k not in ("fold", "n_test", "n_anomalies")]
            mean = {k: float(np.mean([r[k] for r in fold_rows])) for k in keys}
            report["methods"][name] = {"folds": fold_rows, "mean": mean}
        write_atomic(out / "report.json", dumps(report))
        doc = _manifest(
            args, cfg, started,
            inputs=_data_inputs(data_dir, ds),
            per_fold_preprocessing=records is not None,
            lof_rows_per_fold=[r["n_test"] for r in per_method["lof"]],
            timings=timings,
            report_sha256=_sha256(out / "report.json"),
        )  # fmt: skip
        _write_manifest(out, doc)
    return {name: v["mean"] for name, v in report["methods"].items()}


def _load_specs(path: Optional[str], dim_x: int, dim_c: int, cfg: dict) -> list[CorruptionSpec]:
    n_rows = cfg["robustness"]["n_rows"]
    if path is None:
        return paper_specs(dim_x, dim_c, n_rows=n_rows, seed=cfg["seed"])
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise CliError("--specs must hold a non-empty JSON list of corruption specs")
    specs = [CorruptionSpec(**entry) for entry in raw]
    if len({s.n_rows for s in specs}) != 1:
        raise CliError("all corruption specs must share one n_rows (one shared sample)")
    return specs


def cmd_robustness(args, cfg: dict) -> dict:
    started = time.perf_counter()
    ckpt = Path(args.checkpoint)
    params, mcfg, _ = load_checkpoint(_checkpoint_path(ckpt))
    data_dir = Path(args.data)
    full = load_dataset(data_dir)
    which = args.rows
    if which == "auto":
        which = "test" if _load_split(ckpt) is not None else "all"
    test_set = _select_rows(full, ckpt, which)
    specs = _load_specs(args.specs, test_set.dim_x, test_set.dim_c, cfg)
    rb = cfg["robustness"]
    # a spec file carries its own sample size; otherwise the config sets it
    result = run_protocol(
        params, test_set, specs, rb["target_rate"], specs[0].n_rows, cfg["seed"], ScoreMethod(cfg["score"]["method"])
    )
    with staged_dir(Path(args.out)) as out:
        result.write_csv(out / "robustness_table.csv")
        ids = test_set.row_ids[result.sample_rows]
        (out / "sample_rows.csv").write_text("row_id\n" + "".join(f"{int(r)}\n" for r in ids))
        doc = _manifest(
            args, cfg, started,
            inputs=_data_inputs(data_dir, full),
            checkpoint={"path": str(ckpt), "sha256": _sha256(_checkpoint_path(ckpt))},
            rows=which,
            threshold=result.threshold,
            clean_flagged_in_sample=result.clean_flagged,
            specs=[spec_to_dict(s) for s in specs],
            table=result.by_name(),
        )  # fmt: skip
        _write_manifest(out, doc)
    return result.by_name()


# ---------------------------------------------------------------- parsing

COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "robustness": cmd_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", required=True, help="output directory (score: output CSV)")
    common.add_argument("--preset", choices=config.PRESET_NAMES, help="model and data preset")

    p = _Parser(prog="jlvae", description="Contextual anomaly detection with cross-linked VAEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", parents=[common], help="filter and prepare a KDD Cup 99 CSV")
    s.add_argument("input", help="KDD Cup 99 CSV (optionally .gz)")
    s.add_argument("--unknown-labels", choices=[u.value for u in UnknownLabelPolicy], default="drop")

    sub.add_parser("synth", parents=[common], help="generate a synthetic contextual dataset")

    s = sub.add_parser("train", parents=[common], help="train a model on a prepared dataset")
    s.add_argument("data", help="prepared dataset directory")
    s.add_argument("--epochs", type=int, help="maximum epochs (train.max_epochs)")

    s = sub.add_parser("score", parents=[common], help="score rows with a trained model")
    s.add_argument("checkpoint", help="checkpoint file or training output directory")
    s.add_argument("data", help="prepared dataset directory")
    s.add_argument("--method", choices=[m.value for m in ScoreMethod], help="score.method")
    s.add_argument("--rows", choices=["all", "train", "val", "test"], default="all")
    s.add_argument("--target-rate", type=float, help="also flag this fraction of rows")

    s = sub.add_parser("eval", parents=[common], help="k-fold evaluation of the model and baselines")
    s.add_argument("data", help="prepared dataset directory")
    s.add_argument("--folds", type=int, help="eval.k_folds")
    s.add_argument("--subsample", type=int, help="eval.subsample: stratified row cap")
    s.add_argument("--epochs", type=int, help="maximum epochs (train.max_epochs)")

    s = sub.add_parser("robustness", parents=[common], help="corruption robustness table")
    s.add_argument("checkpoint", help="checkpoint file or training output directory")
    s.add_argument("data", help="prepared dataset directory")
    s.add_argument("--specs", help="JSON list of corruption specs (default: the 15-set suite)")
    s.add_argument("--rows", choices=["auto", "all", "test"], default="auto")
    s.add_argument("--method", choices=[m.value for m in ScoreMethod], help="score.method")
    return p


def _flag_overrides(args) -> dict:
    out: dict = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        out["train"] = {"max_epochs": args.epochs}
    if getattr(args, "method", None) is not None:
        out["score"] = {"method": args.method}
    ev = {}
    if getattr(args, "folds", None) is not None:
        ev["k_folds"] = args.folds
    if getattr(args, "subsample", None) is not None:
        ev["subsample"] = args.subsample
    if ev:
        out["eval"] = ev
    return out


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        cfg = config.build(args.preset, args.config, _flag_overrides(args))
        summary = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # surfaced as machine-readable JSON
        log.debug("command failed", exc_info=True)
        _emit_error(type(exc).__name__, str(exc), args.command)
        return 1
    print(json.dumps({"command": args.command, "out": args.out, "summary": summary}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
