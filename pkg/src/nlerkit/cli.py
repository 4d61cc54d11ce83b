"""Command-line orchestration: simulate, train, eval, report.

Artifacts flow through a fixed directory layout under the configured output
directory: dataset containers from ``simulate``, checkpoint + history from
``train``, metric tables (and CDF/surface sidecars) from ``eval``, and the
paired comparison table from ``report``. Exit codes: 0 success, 2 config
error, 3 data error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .artifacts import (
    ArtifactError,
    read_artifact,
    read_table,
    standard_meta,
    write_artifact,
    write_table,
)
from .config import InvalidConfig, load_config
from .evaluation import (
    GroundTruthEvaluator,
    NlerEvaluator,
    build_etest,
    build_ltest,
    etest_metrics,
    ltest_metrics,
)
from .models import build_model
from .nn import UnknownSizeLabel, build_architecture
from .numerics import NotPositiveDefinite
from .sis import ImpossibleTransition
from .training import CalibrationFailed, Dataset, train

logger = logging.getLogger(__name__)


class DataError(Exception):
    pass


class IncompatibleCheckpoint(Exception):
    pass


def _ensure_out(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _dataset_records(dataset):
    xs = dataset.xs
    if np.issubdtype(xs.dtype, np.integer):
        xs = xs.astype(np.int32)
    else:
        xs = xs.astype(np.float64)
    return {
        "xs": xs,
        "thetas": dataset.thetas.astype(np.float64),
        "scores": dataset.scores.astype(np.float64),
    }


def _load_dataset(path, cfg):
    records, meta = read_artifact(path)
    if meta.get("data_hash") and meta["data_hash"] != cfg.data_hash():
        raise DataError(
            f"{path}: data hash {meta['data_hash']} does not match config "
            f"{cfg.data_hash()}; regenerate with `nlerkit simulate`"
        )
    xs = records["xs"]
    if xs.dtype == np.int32:
        xs = xs.astype(np.int64)
    return Dataset(
        case=meta.get("case", cfg.case),
        xs=xs,
        thetas=records["thetas"],
        scores=records["scores"],
        seed=int(meta.get("seed", -1)),
    )


def cmd_simulate(cfg):
    """Write the train + validation datasets (x, theta, score targets)."""
    from .training import generate_dataset

    out = _ensure_out(cfg)
    model = build_model(cfg.case, **cfg.model_kwargs())
    for tag, seed in (("train", cfg.seed), ("val", cfg.seed + 1)):
        dataset = generate_dataset(model, cfg.n_train, seed)
        path = os.path.join(out, f"dataset_{tag}.nler")
        write_artifact(
            path,
            _dataset_records(dataset),
            standard_meta(cfg.config_hash(), cfg.data_hash(), seed, case=cfg.case, split=tag),
        )
        logger.info("wrote %s (%d records)", path, len(dataset))
    return 0


def _checkpoint_meta(cfg, model):
    return {
        "case": model.case,
        "size_label": model.size_label,
        "theta_dim": model.theta_dim,
        "input_shape": ",".join(str(s) for s in model.input_shape),
        "conv_blocks": model.scale.get("conv_blocks", 0),
        "loss_mode": cfg.loss_mode,
    }


def save_checkpoint(path, model, cfg, extra_meta=None):
    records = {f"w{i:04d}": p.astype(np.float64) for i, p in enumerate(model.params())}
    meta = standard_meta(cfg.config_hash(), cfg.data_hash(), cfg.seed, **_checkpoint_meta(cfg, model))
    if extra_meta:
        meta.update(extra_meta)
    write_artifact(path, records, meta)


def load_checkpoint(path, expected_case=None):
    records, meta = read_artifact(path)
    if expected_case and meta.get("case") != expected_case:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint case {meta.get('case')!r} does not match config case {expected_case!r}"
        )
    input_shape = tuple(int(s) for s in meta["input_shape"].split(","))
    kwargs = {}
    if int(meta.get("conv_blocks", 0)):
        kwargs["conv_blocks"] = int(meta["conv_blocks"])
    model = build_architecture(
        meta["case"], meta["size_label"],
        input_shape=input_shape, theta_dim=int(meta["theta_dim"]),
        seed=int(meta.get("seed", 0)), **kwargs,
    )
    weights = [records[k] for k in sorted(records)]
    model.set_weights(weights)
    return model, meta


def _history_rows(history):
    return [
        {k: e[k] for k in (
            "epoch", "train_bce", "train_score", "val_bce", "val_score_mse",
            "alpha", "batch_time_mean", "epoch_time", "cum_time",
        )}
        for e in history.epochs
    ]


def save_history(out, tag, history, cfg):
    epochs = history.epochs
    records = {
        key: np.array([e[key] for e in epochs], dtype=np.float64)
        for key in ("train_bce", "train_score", "val_bce", "val_score_mse",
                    "alpha", "batch_time_mean", "epoch_time", "cum_time")
    }
    if history.alpha_trace:
        records["alpha_trace_batch"] = np.array([t for t, _ in history.alpha_trace], dtype=np.float64)
        records["alpha_trace_value"] = np.array([v for _, v in history.alpha_trace], dtype=np.float64)
    if history.fd_eps is not None:
        records["fd_eps"] = history.fd_eps.astype(np.float64)
    extra = {k: v for k, v in history.meta.items() if k != "seed"}
    meta = standard_meta(
        cfg.config_hash(), cfg.data_hash(), cfg.seed,
        best_epoch=history.best_epoch,
        total_time=f"{history.total_time:.6f}",
        time_to_best=f"{history.time_to_best:.6f}",
        batch_time_mean=f"{history.batch_time_mean:.9f}",
        **extra,
    )
    write_artifact(os.path.join(out, f"history_{tag}.nler"), records, meta)
    identity = {
        "case": cfg.case, "size_label": cfg.size_label, "N": cfg.n_train,
        "loss_mode": cfg.loss_mode, "seed": cfg.seed,
        "best_epoch": history.best_epoch,
        "total_time": f"{history.total_time:.6f}",
        "time_to_best": f"{history.time_to_best:.6f}",
        "batch_time_mean": f"{history.batch_time_mean:.9f}",
    }
    columns = ["epoch", "train_bce", "train_score", "val_bce", "val_score_mse",
               "alpha", "batch_time_mean", "epoch_time", "cum_time"]
    write_table(os.path.join(out, f"history_{tag}.tsv"), columns, _history_rows(history), identity)


def cmd_train(cfg, determinism="on"):
    """Train from saved datasets; write best-epoch checkpoint and full history."""
    out = _ensure_out(cfg)
    train_path = os.path.join(out, "dataset_train.nler")
    val_path = os.path.join(out, "dataset_val.nler")
    for path in (train_path, val_path):
        if not os.path.exists(path):
            raise DataError(f"missing dataset {path}; run `nlerkit simulate` first")
    dataset = _load_dataset(train_path, cfg)
    valset = _load_dataset(val_path, cfg)
    spm = build_model(cfg.case, **cfg.model_kwargs())
    kwargs = {"conv_blocks": cfg.conv_blocks} if cfg.case in ("gp", "stp") else {}
    model = build_architecture(
        cfg.case, cfg.size_label,
        input_shape=spm.input_shape, theta_dim=spm.theta_dim, seed=cfg.seed, **kwargs,
    )
    result = train(spm, model, dataset, valset, cfg.train_config())
    tag = f"{cfg.loss_mode}_{cfg.seed}"
    save_checkpoint(
        os.path.join(out, f"checkpoint_{tag}.nler"), result.model, cfg,
        {"determinism": determinism},
    )
    save_history(out, tag, result.history, cfg)
    logger.info("best epoch %d, total %.1fs", result.history.best_epoch, result.history.total_time)
    return 0


def _metric_rows(identity, metrics):
    return [
        {
            "metric": name,
            "case": identity["case"],
            "size_label": identity["size_label"],
            "N": identity["N"],
            "loss_mode": identity["loss_mode"],
            "seed": identity["seed"],
            "value": float(value),
        }
        for name, value in sorted(metrics.items())
    ]


def cmd_eval(cfg, mode, checkpoint=None, ground_truth=False):
    """Evaluate a checkpoint and/or the exact likelihood; write metric tables."""
    out = _ensure_out(cfg)
    spm = build_model(cfg.case, **cfg.model_kwargs())

    nler = None
    loss_tag = "gt"
    if checkpoint is not None:
        model, _ = load_checkpoint(checkpoint, expected_case=cfg.case)
        nler = NlerEvaluator(model, spm)
        loss_tag = cfg.loss_mode
    elif not ground_truth:
        raise DataError("eval needs --checkpoint PATH or --ground-truth")

    identity = {
        "case": cfg.case, "size_label": cfg.size_label, "N": cfg.n_train,
        "loss_mode": loss_tag, "seed": cfg.seed,
    }
    tag = f"{mode}_{loss_tag}_{cfg.seed}"
    metrics = {}
    arrays = {}

    if mode == "ltest":
        ltest = build_ltest(spm, cfg.ltest_size, cfg.eval_seed)
        evaluators = []
        if nler is not None:
            nler.calibrate(ltest.xs[: 4 * cfg.batch_size], ltest.thetas[: 4 * cfg.batch_size])
            evaluators.append(nler)
        if ground_truth:
            evaluators.append(GroundTruthEvaluator(spm))
        for ev in evaluators:
            bce, score_mse = ltest_metrics(ev, ltest)
            prefix = "ltest" if ev.name == "nler" else "ltest_gt"
            metrics[f"{prefix}_bce"] = bce
            for k, coord in enumerate(spm.space.names):
                metrics[f"{prefix}_score_mse_{coord}"] = float(score_mse[k])
    elif mode == "etest":
        etest = build_etest(
            spm, cfg.eval_seed, n_groups=cfg.etest_groups,
            group_size=cfg.etest_group_size, target_grid=cfg.etest_grid_target,
        )
        gt = GroundTruthEvaluator(spm)
        report = etest_metrics(nler, gt, etest, spm.space, level=cfg.level)
        metrics.update(report.metrics)
        arrays.update(report.arrays)
        _write_cdf_and_surface(out, tag, report, spm.space)
    else:
        raise InvalidConfig(f"unknown eval mode {mode!r}")

    rows = _metric_rows(identity, metrics)
    columns = ["metric", "case", "size_label", "N", "loss_mode", "seed", "value"]
    write_table(os.path.join(out, f"metrics_{tag}.tsv"), columns, rows)
    records = {"metric_values": np.array([r["value"] for r in rows], dtype=np.float64)}
    for name, arr in arrays.items():
        records[name] = np.asarray(arr, dtype=np.float64)
    write_artifact(
        os.path.join(out, f"eval_{tag}.nler"),
        records,
        standard_meta(cfg.config_hash(), cfg.data_hash(), cfg.seed,
                      metric_names=",".join(r["metric"] for r in rows), mode=mode),
    )
    return 0


def _write_cdf_and_surface(out, tag, report, space):
    cdf_rows = []
    for name in ("gt", "nler"):
        key = f"lambda_{name}"
        if key in report.arrays:
            for value in report.arrays[key]:
                cdf_rows.append({"evaluator": name, "value": float(value)})
    write_table(os.path.join(out, f"nullcdf_{tag}.tsv"), ["evaluator", "value"], cdf_rows)

    points = report.arrays.get("surface_points")
    if points is None or points.shape[1] != 2:
        return
    header = {
        "fixed": report.identity.get("surface_fixed_coord", ""),
        "truth": ",".join(f"{v:.17g}" for v in report.arrays["surface_truth"]),
    }
    columns = ["u", "v"]
    for name in ("gt", "nler"):
        if f"surface_gls_{name}" in report.arrays:
            columns.append(f"gls_{name}")
            header[f"mle_{name}"] = ",".join(
                f"{v:.17g}" for v in report.arrays[f"surface_mle_{name}"]
            )
    rows = []
    for i in range(points.shape[0]):
        row = {"u": float(points[i, 0]), "v": float(points[i, 1])}
        for name in ("gt", "nler"):
            if f"gls_{name}" in columns:
                row[f"gls_{name}"] = float(report.arrays[f"surface_gls_{name}"][i])
        rows.append(row)
    write_table(os.path.join(out, f"surface_{tag}.tsv"), columns, rows, header)


def cmd_report(metrics_dir, out_path=None):
    """Join bce/asa runs into paired rows for arrow plots."""
    files = sorted(
        f for f in os.listdir(metrics_dir) if f.startswith("metrics_") and f.endswith(".tsv")
    )
    if not files:
        raise DataError(f"no metrics_*.tsv files in {metrics_dir}")
    entries = {}
    for fname in files:
        _, rows, _ = read_table(os.path.join(metrics_dir, fname))
        for row in rows:
            key = (row["metric"], row["case"], row["size_label"], row["N"], row["seed"])
            entries.setdefault(key, {})[row["loss_mode"]] = row["value"]
    out_rows = []
    for key in sorted(entries):
        modes = entries[key]
        metric, case, size_label, n, seed = key
        row = {
            "metric": metric, "case": case, "size_label": size_label, "N": n, "seed": seed,
            "bce_value": modes.get("bce", ""),
            "asa_value": modes.get("asa", ""),
            "paired": int("bce" in modes and "asa" in modes),
        }
        if not row["paired"] and ("bce" in modes or "asa" in modes):
            logger.warning("unpaired metric row %s (modes: %s)", key, sorted(modes))
        out_rows.append(row)
    out_path = out_path or os.path.join(metrics_dir, "report.tsv")
    columns = ["metric", "case", "size_label", "N", "seed", "bce_value", "asa_value", "paired"]
    write_table(out_path, columns, out_rows)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="nlerkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--loss", choices=("bce", "asa"), default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--determinism", choices=("on", "off"), default="on")

    common(sub.add_parser("simulate", help="generate train/validation datasets"))
    common(sub.add_parser("train", help="train a ratio network from datasets"))
    pe = sub.add_parser("eval", help="evaluate a checkpoint and/or exact likelihood")
    common(pe)
    pe.add_argument("--mode", choices=("ltest", "etest"), required=True)
    pe.add_argument("--checkpoint", default=None)
    pe.add_argument("--ground-truth", action="store_true")
    pr = sub.add_parser("report", help="pair bce/asa metric rows")
    pr.add_argument("--metrics", required=True)
    pr.add_argument("--out", default=None)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.metrics, args.out)
        overrides = {"seed": args.seed, "loss_mode": args.loss, "out_dir": args.out}
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, determinism=args.determinism)
        if args.command == "eval":
            return cmd_eval(cfg, args.mode, checkpoint=args.checkpoint,
                            ground_truth=args.ground_truth)
        raise InvalidConfig(f"unknown command {args.command}")  # pragma: no cover
    except (InvalidConfig, UnknownSizeLabel) as exc:
        logger.error("config error: %s", exc)
        return 2
    except (DataError, ArtifactError, IncompatibleCheckpoint, FileNotFoundError) as exc:
        logger.error("data error: %s", exc)
        return 3
    except (NotPositiveDefinite, ImpossibleTransition, CalibrationFailed, FloatingPointError) as exc:
        logger.error("numerical failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
