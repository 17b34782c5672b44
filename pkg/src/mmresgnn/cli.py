"""Command-line entry point: ``mmresgnn <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or integrity error. Every JSON
artifact carries a ``config`` header with the fully resolved settings.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BaselineModel, fit_baseline
from .dataset import build_dataset
from .errors import MissingCheckpoint, MMResGNNError, UnknownVariant
from .graph import GraphConfig
from .io import atomic_write, read_dataset, write_dataset
from .metrics import compute_metrics
from .model import ModelConfig
from .scene import SCENARIO_KINDS, SceneConfig
from .splits import FEW_SHOT_RATIOS
from .train import Checkpoint, TrainConfig, evaluate, train
from .variants import TransferSpec, empirical_predictions, get_variant, list_variants, model_config_for, run_transfer, run_variant

log = logging.getLogger("mmresgnn")

REPORT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_json(path, payload) -> None:
    atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n").encode("utf-8"))


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _header(args, **resolved) -> dict:
    run = {k: v for k, v in vars(args).items() if k != "func"}
    return {"version": __version__, "command": args.command, "args": run, **resolved}


def _load_run_config(path, seed):
    """``--config`` JSON: optional ``model`` and ``train`` sections."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"--config: no such file {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: invalid JSON ({exc})") from None
        if not isinstance(raw, dict) or set(raw) - {"model", "train"}:
            raise UsageError("--config: expected an object with 'model' and/or 'train' sections")
    try:
        model = ModelConfig.from_dict({**raw.get("model", {}), "seed": seed})
        tcfg = TrainConfig.from_dict({**raw.get("train", {}), "seed": seed})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--config: {exc}") from None
    return model, tcfg


def _variant(vid):
    try:
        return get_variant(vid)
    except UnknownVariant as exc:
        raise UsageError(str(exc)) from None


def _report_payload(args, reports, **resolved) -> dict:
    return {"format_version": REPORT_VERSION, "config": _header(args, **resolved), "reports": reports}


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    scene_cfg = SceneConfig(
        scenario_kind=args.scenario,
        grid_width=args.size,
        grid_height=args.size,
        num_rx=args.num_rx,
        num_vehicles=args.vehicles,
        seed=args.seed,
    )
    graph_cfg = GraphConfig(K=args.K, k_corr=args.k_corr)
    ds = build_dataset(scene_cfg, args.snapshots, seed=args.seed, graph_config=graph_cfg)
    # the output location is left out so identical runs give identical bytes
    header = _header(args)
    del header["args"]["out"]
    manifest = write_dataset(ds, args.out, extra=header)
    log.info("wrote %d snapshots to %s (baseline %s)", manifest["counts"]["snapshots"], args.out, manifest["baseline_id"])
    return 0


def cmd_fit_baseline(args) -> int:
    ds = read_dataset(args.data)
    model = fit_baseline(ds.baseline_links("train"))
    ds = ds.with_baseline(model)
    graphs, _ = ds.subset("train")
    y = np.concatenate([g.pl_raw for g in graphs])
    report = compute_metrics(y, empirical_predictions("C0", ds, graphs), "C0", "train")
    atomic_write(args.out, model.to_text().encode())
    report_path = args.report or f"{args.out}.report.json"
    _write_json(report_path, _report_payload(args, [report.to_dict()], baseline_id=model.model_id))
    print(json.dumps(report.to_dict()))
    return 0


def cmd_train(args) -> int:
    variant = _variant(args.variant)
    if variant.kind != "neural":
        raise UsageError(f"--variant {args.variant} is training-free; use fit-baseline or ablate")
    base, tcfg = _load_run_config(args.config, args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    ds = read_dataset(args.data)
    cfg = model_config_for(args.variant, ds, base)
    data = ds if cfg.use_correlation_edges else ds.without_correlation_edges()
    ckpt, history = train(data, cfg, tcfg, variant_id=args.variant)
    ckpt.meta["config"] = _header(args, model=cfg.to_dict(), train=tcfg.to_dict())
    ckpt.save(args.out)
    best = next(h for h in history if h["best"])
    print(json.dumps({"variant": args.variant, "epochs": len(history), "best": best}))
    return 0


def _load_predictor(path):
    """A torch checkpoint, or a baseline text record (evaluated as C0)."""
    p = Path(path)
    if not p.exists():
        raise MissingCheckpoint(f"{path}: no such checkpoint")
    head = p.read_bytes()[:64]
    if head.lstrip().startswith((b"w0", b"#")):
        return BaselineModel.from_text(p.read_text())
    return Checkpoint.load(p)


def cmd_eval(args) -> int:
    pred = _load_predictor(args.ckpt)
    ds = read_dataset(args.data)
    if isinstance(pred, BaselineModel):
        ds = ds.with_baseline(pred)
        graphs, _ = ds.subset(args.split)
        if not graphs:
            raise MMResGNNError(f"split {args.split!r} is empty")
        y = np.concatenate([g.pl_raw for g in graphs])
        report = compute_metrics(y, empirical_predictions("C0", ds, graphs), "C0", args.split)
        resolved = {"baseline_id": pred.model_id}
    else:
        if not pred.model_config.use_correlation_edges:
            ds = ds.without_correlation_edges()
        report = evaluate(pred, ds, args.split)
        resolved = {"baseline_id": pred.baseline_id, "model": pred.model_config.to_dict(), "checkpoint_config": pred.meta.get("config")}
    _write_json(args.report, _report_payload(args, [report.to_dict()], **resolved))
    print(json.dumps(report.to_dict()))
    return 0


def cmd_ablate(args) -> int:
    ids = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not ids:
        raise UsageError("--variants: empty list")
    for vid in ids:
        _variant(vid)
    base, tcfg = _load_run_config(args.config, args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    ds = read_dataset(args.data)
    reports = []
    for vid in ids:
        report, ckpt = run_variant(vid, ds, args.split, tcfg, base, fit_abg_params=args.fit_abg)
        row = report.to_dict()
        if ckpt is not None:
            row["epochs_run"] = len(ckpt.history)
        reports.append(row)
        log.info("%s: MAE %.4f dB", vid, report.mae)
    _write_json(args.report, _report_payload(args, reports, model=base.to_dict(), train=tcfg.to_dict()))
    for r in reports:
        print(json.dumps(r))
    return 0


def cmd_transfer(args) -> int:
    base, tcfg = _load_run_config(args.config, args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if args.ratio not in FEW_SHOT_RATIOS:
        raise UsageError(f"--ratio must be one of {', '.join(f'{r:g}' for r in FEW_SHOT_RATIOS)}")
    src = _load_predictor(args.source_ckpt) if args.source_ckpt else None
    if isinstance(src, BaselineModel):
        raise UsageError("--source-ckpt must be a network checkpoint")
    if args.strategy == "scratch":
        src = None
    spec = TransferSpec(args.strategy, src, args.ratio, args.seed)
    ds = read_dataset(args.target)
    report, ckpt = run_transfer(spec, ds, tcfg, base)
    row = {**report.to_dict(), "strategy": spec.strategy.value, "ratio": args.ratio, "n_vehicles": len(ckpt.meta["few_shot_vehicles"])}
    _write_json(
        args.report,
        _report_payload(args, [row], model=ckpt.model_config.to_dict(), train=tcfg.to_dict(), few_shot_vehicles=ckpt.meta["few_shot_vehicles"]),
    )
    print(json.dumps(row))
    return 0


def _read_reports(paths) -> list[dict]:
    rows = []
    for path in paths:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise MMResGNNError(f"{path}: no such report") from None
        except json.JSONDecodeError as exc:
            raise MMResGNNError(f"{path}: invalid report ({exc})") from None
        for r in payload.get("reports", []):
            rows.append({**r, "source": str(path)})
    return rows


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _read_reports(args.inputs)
    out = Path(args.plots)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["variant_id", "split", "strategy", "ratio", "n", "mae", "nmse", "mape", "source"]
    buf = [",".join(cols)]
    lines = ["| variant | split | strategy | ratio | MAE (dB) | NMSE | MAPE (%) |", "|---|---|---|---|---|---|---|"]
    for r in rows:
        buf.append(",".join(str(r.get(c, "")) for c in cols))
        lines.append(
            f"| {r.get('variant_id', '')} | {r.get('split', '')} | {r.get('strategy', '')} | {r.get('ratio', '')} "
            f"| {r['mae']:.4f} | {r['nmse']:.4f} | {r['mape']:.4f} |"
        )
    atomic_write(out / "summary.csv", ("\n".join(buf) + "\n").encode())
    atomic_write(out / "summary.md", ("\n".join(lines) + "\n").encode())
    _write_json(out / "summary.json", {"config": _header(args), "rows": rows})

    plain = [r for r in rows if "strategy" not in r]
    if plain:
        fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(plain) + 2), 3.5))
        ax.bar([r["variant_id"] for r in plain], [r["mae"] for r in plain], color="tab:blue")
        ax.set_ylabel("MAE (dB)")
        ax.set_title("Test MAE by variant")
        ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        fig.savefig(out / "mae_by_variant.png", dpi=120)
        plt.close(fig)
    transfer = [r for r in rows if "strategy" in r]
    if transfer:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for strategy in sorted({r["strategy"] for r in transfer}):
            pts = sorted((r["ratio"], r["mae"]) for r in transfer if r["strategy"] == strategy)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=strategy)
        ax.set_xscale("log")
        ax.set_xlabel("target data ratio")
        ax.set_ylabel("MAE (dB)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "data_efficiency.png", dpi=120)
        plt.close(fig)
    print(out / "summary.md")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmresgnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="seed threaded through every stochastic component")

    s = sub.add_parser("gen-data", help="generate a scenario dataset")
    s.add_argument("--scenario", required=True, choices=SCENARIO_KINDS)
    s.add_argument("--snapshots", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--num-rx", type=int, default=400)
    s.add_argument("--size", type=int, default=128, help="grid side in cells")
    s.add_argument("--vehicles", type=int, default=None)
    s.add_argument("--K", type=int, default=50)
    s.add_argument("--k-corr", type=int, default=4)
    common(s)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("fit-baseline", help="fit the physical baseline on the train split")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None, help="train-split metrics (default: OUT.report.json)")
    common(s)
    s.set_defaults(func=cmd_fit_baseline)

    s = sub.add_parser("train", help="train one network variant")
    s.add_argument("--data", required=True)
    s.add_argument("--variant", required=True)
    s.add_argument("--config", default=None, help="JSON with optional 'model' and 'train' sections")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=None)
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint or baseline record")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--report", required=True)
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train and evaluate a list of variants")
    s.add_argument("--data", required=True)
    s.add_argument("--variants", required=True, help="comma-separated ids: " + ",".join(list_variants()))
    s.add_argument("--report", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--fit-abg", action="store_true", help="fit ABG alpha/beta on training links")
    common(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("transfer", help="few-shot adaptation to a target scenario")
    s.add_argument("--source-ckpt", default=None)
    s.add_argument("--target", required=True)
    s.add_argument("--strategy", required=True, choices=["scratch", "full", "frozen"])
    s.add_argument("--ratio", type=float, default=1.0)
    s.add_argument("--report", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--epochs", type=int, default=None)
    common(s)
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("report", help="comparison tables and plots from report files")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--plots", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, UnknownVariant, MissingCheckpoint) as exc:
        print(f"mmresgnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (MMResGNNError, OSError, ValueError, KeyError) as exc:
        print(f"mmresgnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
