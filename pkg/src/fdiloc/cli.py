"""Command-line interface.

Subcommands: ``case``, ``dataset``, ``train``, ``eval``, ``freq-response``,
``order-sweep`` and ``report``. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.

Every command writes into a fresh output directory: files are produced in a
temporary sibling directory that is renamed into place on success, and a
``manifest.json`` lists each file with its SHA-256. Wall-clock timings go
to separate files (listed in the manifest without hashes) so that the
remaining outputs are byte-identical across runs with the same config.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import itertools
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .attacks import ATTACK_CODES, AttackKind, AttackSpec
from .dataset import SPLITS, build_dataset, export_csv, ingest_load_csv, load_dataset, save_dataset
from .exceptions import ConfigError, DataError, FdilocError, NumericalError
from .estimators import make_detector
from .gnn.checkpoint import load_checkpoint, save_checkpoint
from .gnn.model import build_gnn, build_mlp
from .gnn.training import TrainConfig, Trainer
from .grid import case_to_dict, case_topology, load_case, topology_to_dict
from .metrics import evaluate_outputs, timing_benchmark
from .spectral import symmetric_eig

log = logging.getLogger("fdiloc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
TIMING_FILES = ("history.csv", "timing.json")


# -- output handling ----------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: Path, command: str, cfg: dict | None) -> None:
    files, timing = {}, []
    for p in sorted(directory.rglob("*")):
        if not p.is_file() or p.name == "manifest.json":
            continue
        rel = p.relative_to(directory).as_posix()
        if p.name in TIMING_FILES:
            timing.append(rel)
        else:
            files[rel] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
    manifest = {"command": command, "files": files, "timing_files": timing}
    if cfg is not None:
        manifest["config_sha256"] = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


@contextlib.contextmanager
def atomic_output(final: Path, force: bool = False):
    """Yield a temporary directory that replaces ``final`` on success."""
    final = Path(final)
    if final.exists() and any(final.iterdir()) and not force:
        raise ConfigError(f"output directory {final} exists and is not empty (use --force to replace it)")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.tmp-", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- config plumbing ----------------------------------------------------------


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        o["jobs"] = args.jobs
    if getattr(args, "case", None) is not None:
        o["case"] = args.case
    if getattr(args, "samples", None) is not None:
        o.setdefault("dataset", {})["samples"] = args.samples
    if getattr(args, "family", None) is not None:
        o.setdefault("model", {})["family"] = args.family
    if getattr(args, "max_epochs", None) is not None:
        o.setdefault("training", {})["max_epochs"] = args.max_epochs
    if getattr(args, "models", None):
        o.setdefault("freq_response", {})["models"] = args.models
    if getattr(args, "inputs", None) is not None:
        o.setdefault("freq_response", {})["inputs"] = args.inputs
    if getattr(args, "orders", None):
        o.setdefault("order_sweep", {})["K"] = args.orders
    return o


def _resolve(args) -> dict:
    return cfgmod.resolve(getattr(args, "config", None), _overrides(args))


def _out_dir(args, cfg, default_leaf: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg["output_dir"]) / default_leaf


def _attack_spec(cfg) -> AttackSpec:
    a = cfg["dataset"]["attack"]
    return AttackSpec(
        size_range=tuple(a["size_range"]) if a["size_range"] else None,
        v_rel=a["v_rel"],
        theta_deg=a["theta_deg"],
        magnitude=a["magnitude"],
        tau_range=tuple(a["tau_range"]),
        scale_range=tuple(a["scale_range"]),
        neighbor_injections=a["neighbor_injections"],
    )


def _train_config(cfg) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        lr=t["lr"], batch_size=t["batch_size"], max_epochs=t["max_epochs"],
        patience=t["patience"], min_delta=t["min_delta"], seed=cfg["seed"],
    )


def build_model(cfg, case, model_cfg: dict | None = None):
    m = dict(cfg["model"], **(model_cfg or {}))
    if m["family"] == "mlp":
        return build_mlp(case.n, layers=m["layers"], units=m["units"], seed=cfg["seed"])
    topo = case_topology(case, cfg["weighted_adjacency"])
    op = topo.l_modified if m["family"] == "arma" else topo.l_scaled
    return build_gnn(
        m["family"], op, case.n, layers=m["layers"], units=m["units"], K=m["K"], T=m["T"], seed=cfg["seed"],
        share_weights=m["share_weights"], iter_activation=m["iter_activation"],
    )


def _detector_params(cfg, model_cfg: dict, case) -> dict:
    m = dict(cfg["model"], **model_cfg)
    t = cfg["training"]
    common = dict(
        lr=t["lr"], batch_size=t["batch_size"], max_epochs=t["max_epochs"], patience=t["patience"],
        min_delta=t["min_delta"], random_state=cfg["seed"],
    )
    if m["family"] == "mlp":
        return dict(layers=m["layers"], units=m["units"], **common)
    extra = dict(case=case, layers=m["layers"], units=m["units"], K=m["K"], weighted=cfg["weighted_adjacency"])
    if m["family"] == "arma":
        extra.update(T=m["T"], share_weights=m["share_weights"], iter_activation=m["iter_activation"])
    return dict(extra, **common)


def _load_dataset_for(case, directory):
    ds = load_dataset(directory)
    if ds.n != case.n:
        raise DataError(f"dataset has {ds.n} nodes but case {case.name!r} has {case.n} buses")
    return ds


# -- commands -------------------------------------------------------------------


def cmd_case(args) -> int:
    case = load_case(args.path)
    topo = case_topology(case, not args.binary_adjacency)
    spec = symmetric_eig(topo.l)
    out = Path(args.out) if args.out else Path("runs") / f"case_{case.name}"
    with atomic_output(out, args.force) as tmp:
        _dump_json(tmp / "case.json", case_to_dict(case))
        tdict = topology_to_dict(topo, case)
        tdict["spectrum"] = {
            "lambda_min": float(spec.lam[0]),
            "lambda_max": float(spec.lam[-1]),
            "lambda_max_power_iteration": topo.lambda_max,
            "n_zero": int(np.sum(np.abs(spec.lam) < 1e-9)),
        }
        _dump_json(tmp / "topology.json", tdict)
        if args.spectrum:
            _write_csv(tmp / "spectrum.csv", ["index", "lambda"], [[i, _fmt(v)] for i, v in enumerate(spec.lam)])
        write_manifest(tmp, "case", None)
    print(
        f"{case.name}: n={case.n} buses, {len(case.branches)} branches, "
        f"lambda_max={spec.lam[-1]:.6f} (power iteration {topo.lambda_max:.6f}); wrote {out}"
    )
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _resolve(args)
    if args.print_config:
        print(cfgmod.dump(cfg), end="")
        return EXIT_OK
    case = load_case(cfg["case"])
    d = cfg["dataset"]
    profile = None
    if d["profile_csv"]:
        profile = ingest_load_csv(Path(d["profile_csv"]).read_text())
    out = _out_dir(args, cfg, "dataset")
    splits = build_dataset(
        case, d["samples"], cfg["seed"], profile=profile, noise=d["noise"], jitter=d["jitter"],
        attack=_attack_spec(cfg), jobs=cfg["jobs"],
    )
    with atomic_output(out, args.force) as tmp:
        save_dataset(splits, tmp, {"case_source": cfg["case"], "samples_requested": d["samples"]})
        if d["export_csv"] or args.csv:
            export_csv(splits, tmp / "samples.csv")
        (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
        write_manifest(tmp, "dataset", cfg)
    counts = {s: len(splits[s]) for s in SPLITS}
    print(f"dataset {case.name}: {counts} -> {out}")
    return EXIT_OK


def _history_rows(state, with_time: bool):
    for r in state.history:
        row = [r.epoch, _fmt(r.train_loss), _fmt(r.val_loss)]
        yield row + [f"{r.elapsed_ms:.3f}"] if with_time else row


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if args.print_config:
        print(cfgmod.dump(cfg), end="")
        return EXIT_OK
    case = load_case(cfg["case"])
    ds = _load_dataset_for(case, args.dataset)
    out = _out_dir(args, cfg, f"train_{cfg['model']['family']}")
    if args.resume:
        model, trainer = load_checkpoint(args.resume, with_trainer=True)
        # optimizer settings come from the checkpoint; only the epoch budget may grow
        trainer.config.max_epochs = cfg["training"]["max_epochs"]
    else:
        model = build_model(cfg, case)
        trainer = Trainer(model, _train_config(cfg))
    state = trainer.run(ds.train.x, ds.train.y, ds.validation.x, ds.validation.y, epochs=args.epochs)
    trainer.finish()
    with atomic_output(out, args.force) as tmp:
        save_checkpoint(tmp / "model", model, trainer, {"dataset_meta_sha256": _sha256(Path(args.dataset) / "meta.json")})
        _write_csv(tmp / "losses.csv", ["epoch", "train_loss", "val_loss"], _history_rows(state, False))
        _write_csv(tmp / "history.csv", ["epoch", "train_loss", "val_loss", "elapsed_ms"], _history_rows(state, True))
        (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
        write_manifest(tmp, "train", cfg)
    print(
        f"trained {model.family}: {state.epoch} epochs, best validation loss {state.best_loss:.5f} "
        f"at epoch {state.best_epoch}{' (early stop)' if state.stopped else ''} -> {out}"
    )
    return EXIT_OK


def _kind_rates(probs, split, threshold):
    rates = {}
    for k, code in ATTACK_CODES.items():
        sel = split.kinds == code
        if sel.any():
            rates[k.value] = float(np.mean(probs[sel, -1] >= threshold))
    return rates


def _write_eval(tmp: Path, probs, split, threshold, model=None, timing_calls=200):
    res = evaluate_outputs(probs, split.y, threshold)
    sw, nw = res.pop("_reports")
    res["grid_alarm_rate_by_kind"] = _kind_rates(probs, split, threshold)
    _dump_json(tmp / "metrics.json", res)
    _write_csv(
        tmp / "per_sample_f1.csv", ["sample", "kind", "f1", "accuracy"],
        [[i, list(AttackKind)[split.kinds[i]].value, _fmt(sw.f1[i]), _fmt(sw.acc[i])] for i in range(len(sw.f1))],
    )
    _write_csv(tmp / "per_node_f1.csv", ["node", "f1", "accuracy"], [[i, _fmt(nw.f1[i]), _fmt(nw.acc[i])] for i in range(len(nw.f1))])
    box_rows = []
    for rep in (sw, nw):
        b = rep.box
        box_rows.append([rep.axis, _fmt(b.q1), _fmt(b.q2), _fmt(b.q3), _fmt(b.lw), _fmt(b.uw), len(b.outliers)])
    _write_csv(tmp / "box_stats.csv", ["axis", "q1", "q2", "q3", "lw", "uw", "n_outliers"], box_rows)
    _write_csv(
        tmp / "ratios.csv", ["axis", "f1_le_5pct", "f1_ge_95pct"],
        [[r.axis, _fmt(r.ratio_low), _fmt(r.ratio_high)] for r in (sw, nw)],
    )
    if model is not None:
        t = timing_benchmark(model, split.x[: max(1, min(len(split.x), timing_calls))], min_calls=timing_calls)
        _dump_json(tmp / "timing.json", t.to_dict())
    return res


def _grid_combos(cfg):
    family = cfg["model"]["family"]
    g = cfg["eval"]["grid"]
    keys = ["layers", "units"] + (["K"] if family in ("arma", "cheb") else []) + (["T"] if family == "arma" else [])
    # a key missing from the grid stays at the model setting
    for values in itertools.product(*(g.get(k, [cfg["model"][k]]) for k in keys)):
        yield dict(zip(keys, values))


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    if args.print_config:
        print(cfgmod.dump(cfg), end="")
        return EXIT_OK
    case = load_case(cfg["case"])
    ds = _load_dataset_for(case, args.dataset)
    threshold = cfg["eval"]["threshold"]
    split_name = args.split or cfg["eval"]["split"]
    out = _out_dir(args, cfg, "eval_grid" if args.grid_search else "eval")
    if args.grid_search:
        rows = []
        for combo in _grid_combos(cfg):
            est = make_detector(cfg["model"]["family"], **_detector_params(cfg, combo, case))
            est.fit(ds.train.x, ds.train.y, ds.validation.x, ds.validation.y)
            val = evaluate_outputs(est.predict_proba(ds.validation.x), ds.validation.y, threshold)
            rows.append((val["detection"]["f1"], val["sample_wise"]["ratio_f1_ge_95pct"], combo, len(est.history_)))
            log.info("grid %s: val F1 %.4f", combo, rows[-1][0])
        order = sorted(range(len(rows)), key=lambda i: (-rows[i][0], -rows[i][1], i))
        with atomic_output(out, args.force) as tmp:
            keys = list(rows[0][2])
            _write_csv(
                tmp / "leaderboard.csv", ["rank"] + keys + ["val_f1", "val_sw_ratio_ge_95", "epochs"],
                [[r + 1] + [rows[i][2][k] for k in keys] + [_fmt(rows[i][0]), _fmt(rows[i][1]), rows[i][3]]
                 for r, i in enumerate(order)],
            )
            _dump_json(tmp / "best.json", {"family": cfg["model"]["family"], **rows[order[0]][2]})
            (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
            write_manifest(tmp, "eval --grid-search", cfg)
        print(f"grid search over {len(rows)} settings; best {rows[order[0]][2]} (val F1 {rows[order[0]][0]:.4f}) -> {out}")
        return EXIT_OK
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint (or --grid-search)")
    model = load_checkpoint(args.checkpoint)
    split = ds[split_name]
    probs = model.predict_proba(split.x)
    with atomic_output(out, args.force) as tmp:
        res = _write_eval(tmp, probs, split, threshold, model, cfg["eval"]["timing_calls"])
        (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
        write_manifest(tmp, "eval", cfg)
    det = res["detection"]
    print(
        f"{split_name}: DR={det['dr']:.4f} FA={det['fa']:.4f} F1={det['f1']:.4f}; "
        f"SW F1>=95%: {res['sample_wise']['ratio_f1_ge_95pct']:.3f} -> {out}"
    )
    return EXIT_OK


def cmd_freq_response(args) -> int:
    from .freqresp import FitConfig, run_experiment

    cfg = _resolve(args)
    if args.print_config:
        print(cfgmod.dump(cfg), end="")
        return EXIT_OK
    fr = cfg["freq_response"]
    case = load_case(fr["case"])
    topo = case_topology(case, cfg["weighted_adjacency"])
    fit_cfg = FitConfig(
        inputs=fr["inputs"], batch_size=fr["batch_size"], lr=fr["lr"], lr_drops=fr["lr_drops"],
        patience=fr["patience"], max_epochs=fr["max_epochs"], restarts=fr["restarts"], arma_T=fr["arma_T"],
        seed=cfg["seed"],
    )
    spectrum, ideal, results = run_experiment(topo, fr["models"], fr["target"], fit_cfg)
    out = _out_dir(args, cfg, "freq_response")
    with atomic_output(out, args.force) as tmp:
        for r in results:
            _write_csv(
                tmp / f"response_{r.name}.csv", ["lambda", "response", "analytic", "ideal"],
                [[_fmt(l), _fmt(h), _fmt(a), _fmt(i)] for l, h, a, i in zip(spectrum.lam, r.response, r.analytic, ideal)],
            )
        summary = {
            "case": case.name,
            "target": fr["target"],
            "lambda_max": spectrum.lambda_max,
            "models": {
                r.name: {"mse": r.mse, "train_loss": r.train_loss, "epochs": r.epochs, "params": r.params} for r in results
            },
        }
        _dump_json(tmp / "mse.json", summary)
        (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
        write_manifest(tmp, "freq-response", cfg)
    for r in results:
        print(f"{r.name}: MSE {r.mse:.6f}")
    print(f"-> {out}")
    return EXIT_OK


def cmd_order_sweep(args) -> int:
    cfg = _resolve(args)
    if args.print_config:
        print(cfgmod.dump(cfg), end="")
        return EXIT_OK
    case = load_case(cfg["case"])
    ds = _load_dataset_for(case, args.dataset)
    threshold = cfg["eval"]["threshold"]
    rows = []
    for K in cfg["order_sweep"]["K"]:
        est = make_detector("cheb", **_detector_params(cfg, {"family": "cheb", "K": K}, case))
        est.fit(ds.train.x, ds.train.y, ds.validation.x, ds.validation.y)
        f1 = {}
        for s in ("validation", "test"):
            f1[s] = evaluate_outputs(est.predict_proba(ds[s].x), ds[s].y, threshold)["detection"]["f1"]
        rows.append([K, _fmt(f1["validation"]), _fmt(f1["test"]), len(est.history_)])
        print(f"K={K}: validation F1 {f1['validation']:.4f}, test F1 {f1['test']:.4f}")
    out = _out_dir(args, cfg, "order_sweep")
    with atomic_output(out, args.force) as tmp:
        _write_csv(tmp / "order_sweep.csv", ["K", "val_f1", "test_f1", "epochs"], rows)
        (tmp / "config.resolved.yaml").write_text(cfgmod.dump(cfg))
        write_manifest(tmp, "order-sweep", cfg)
    print(f"-> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.run)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    lines = [f"# Run report: {root.name}", ""]
    found = False
    for p in sorted(root.rglob("metrics.json")):
        found = True
        m = json.loads(p.read_text())
        d = m["detection"]
        lines += [
            f"## Evaluation `{p.parent.relative_to(root).as_posix() or '.'}`", "",
            "| DR | FA | F1 | SW F1>=95% | SW F1<=5% | NW mean F1 |", "|---|---|---|---|---|---|",
            f"| {d['dr']:.4f} | {d['fa']:.4f} | {d['f1']:.4f} | {m['sample_wise']['ratio_f1_ge_95pct']:.4f} "
            f"| {m['sample_wise']['ratio_f1_le_5pct']:.4f} | {m['node_wise']['mean_f1']:.4f} |", "",
        ]
        if m.get("grid_alarm_rate_by_kind"):
            lines += ["| kind | alarm rate |", "|---|---|"]
            lines += [f"| {k} | {v:.4f} |" for k, v in m["grid_alarm_rate_by_kind"].items()]
            lines.append("")
        t = p.parent / "timing.json"
        if t.exists():
            tm = json.loads(t.read_text())
            lines += [f"Latency: mean {tm['mean_ms']:.3f} ms, p95 {tm['p95_ms']:.3f} ms per sample.", ""]
    for p in sorted(root.rglob("mse.json")):
        found = True
        m = json.loads(p.read_text())
        lines += [f"## Filter approximation ({m['case']}, {m['target']})", "", "| model | MSE | epochs |", "|---|---|---|"]
        lines += [f"| {k} | {v['mse']:.6f} | {v['epochs']} |" for k, v in m["models"].items()]
        lines.append("")
    for name, title in (("order_sweep.csv", "Filter order sweep"), ("leaderboard.csv", "Grid search leaderboard")):
        for p in sorted(root.rglob(name)):
            found = True
            with open(p) as fh:
                rows = list(csv.reader(fh))
            lines += [f"## {title}", "", "| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
            lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
            lines.append("")
    if not found:
        raise DataError(f"no results found under {root}")
    target = Path(args.out) if args.out else root / "report.md"
    target.write_text("\n".join(lines))
    print(f"wrote {target}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _common(p, with_config=True):
    if with_config:
        p.add_argument("-c", "--config", help="YAML or JSON experiment config")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        p.add_argument("--seed", type=int)
        p.add_argument("--case", help="bundled case name or MATPOWER file (overrides config)")
        p.add_argument("--jobs", type=int, help="worker processes for parallel stages")
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdiloc", description="FDIA detection and localization with graph filters")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("case", help="parse a case and report its topology")
    p.add_argument("path", help="MATPOWER .m file or bundled case name")
    p.add_argument("--spectrum", action="store_true", help="also write spectrum.csv")
    p.add_argument("--binary-adjacency", action="store_true", help="use 0/1 adjacency instead of |Ybus|")
    _common(p, with_config=False)
    p.set_defaults(func=cmd_case)

    p = sub.add_parser("dataset", help="generate a labeled dataset")
    _common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--csv", action="store_true", help="also export samples.csv")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a detector")
    _common(p)
    p.add_argument("--dataset", required=False, help="dataset directory")
    p.add_argument("--family", choices=["arma", "cheb", "mlp"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--epochs", type=int, help="train at most this many more epochs")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or run a grid search")
    _common(p)
    p.add_argument("--dataset", required=False)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=list(SPLITS))
    p.add_argument("--family", choices=["arma", "cheb", "mlp"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--grid-search", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("freq-response", help="fit CHEB/ARMA layers to an ideal filter")
    _common(p)
    p.add_argument("--models", nargs="+")
    p.add_argument("--inputs", type=int)
    p.set_defaults(func=cmd_freq_response)

    p = sub.add_parser("order-sweep", help="CHEB detection F1 versus filter order")
    _common(p)
    p.add_argument("--dataset", required=False)
    p.add_argument("--orders", type=int, nargs="+", metavar="K")
    p.add_argument("--max-epochs", type=int)
    p.set_defaults(func=cmd_order_sweep)

    p = sub.add_parser("report", help="summarize a run directory as Markdown")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    needs_dataset = args.command in ("train", "order-sweep") or (
        args.command == "eval" and not getattr(args, "print_config", False)
    )
    try:
        if needs_dataset and not getattr(args, "print_config", False) and not args.dataset:
            raise ConfigError(f"{args.command} needs --dataset")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FdilocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
