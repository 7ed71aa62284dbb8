"""Command-line entry point tying all stages into reproducible runs.

Subcommands: synth | preprocess | train | eval | gradcam. Every command
writes its outputs plus a run manifest (JSON) into a run directory; identical
seeds reproduce bit-identical containers, checkpoints, and CSV reports.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import PixelMask, write_masks_pgm
from .dataset import (
    SUBTYPES,
    read_cube,
    read_spectraset,
    write_cube,
    write_spectraset,
)
from .errors import DataError, NumericalError
from .evaluation import (
    ConfusionCounts,
    MetricRow,
    classify_binary,
    classify_subtype,
    compute_metrics,
    fold_mean_std,
    patient_vote,
    write_metrics_csv,
    write_patient_table_csv,
)
from .gradcam import class_average, gradcam_spectrum, write_heatmap_csv, write_heatmap_svg
from .model import load_checkpoint, save_checkpoint
from .pipeline import (
    Fold,
    SplitPlan,
    TrainConfig,
    head_mask,
    make_split,
    patients_from_spectraset,
    preprocess_panel,
    targets_for_head,
    train_fold,
    undersample_balance,
)
from .synthgen import SynthConfig, gen_panel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# config files: flat "key = value" lines, '#' comments


def parse_config_file(path) -> dict:
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _parse_value(raw)
    return values


def _parse_value(raw: str):
    if "," in raw:
        return tuple(_parse_value(part.strip()) for part in raw.split(","))
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


class UsageError(Exception):
    pass


def _synth_config(options: dict, seed: int) -> SynthConfig:
    known = {
        "n_patients", "image_size", "noise_sigma", "class_separation",
        "spike_fraction", "spike_amplitude", "scale_range",
        "baseline_const_range", "baseline_coef_range",
    }
    unknown = set(options) - known
    if unknown:
        raise UsageError(f"unknown synth config keys: {sorted(unknown)}")
    kwargs = dict(options)
    if "n_patients" in kwargs:
        n = kwargs["n_patients"]
        if not (isinstance(n, tuple) and len(n) == 4):
            raise UsageError("n_patients must be four comma-separated counts")
    else:
        kwargs["n_patients"] = (8, 8, 7, 7)  # cohort-shaped default: 60 cores
    try:
        return SynthConfig(seed=seed, **kwargs)
    except (DataError, TypeError) as exc:
        raise UsageError(f"bad synth config: {exc}") from exc


# ---------------------------------------------------------------------------
# run directories and manifests


def _run_dir(args, command: str) -> Path:
    if args.out_dir is not None:
        path = Path(args.out_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{stamp}-seed{args.seed}-{command}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(run_dir: Path, command: str, args, config_snapshot: dict,
                    inputs: list[str], outputs: list[str], started: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "package_version": __version__,
        "seed": args.seed,
        "config": config_snapshot,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "started_unix": started,
        "elapsed_s": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    started = time.time()
    options = parse_config_file(args.config) if args.config else {}
    config = _synth_config(options, seed=args.seed)
    run_dir = _run_dir(args, "synth")
    panel = gen_panel(config)

    outputs = []
    index = {"seed": config.seed, "patients": [], "cores": {}, "h2o": "h2o.crns"}
    for record in panel.patients:
        index["patients"].append({
            "patient_id": record.patient_id,
            "subtype": record.subtype,
            "ca_core_id": record.ca_core_id,
            "at_core_id": record.at_core_id,
        })
    for core_id in sorted(panel.cubes):
        name = f"core_{core_id:04d}.crns"
        write_cube(panel.cubes[core_id], run_dir / name,
                   ground_truth=panel.ground_truth[core_id])
        index["cores"][str(core_id)] = name
        outputs.append(run_dir / name)
    write_cube(panel.h2o_cube, run_dir / "h2o.crns")
    outputs.append(run_dir / "h2o.crns")
    with open(run_dir / "panel.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(run_dir / "panel.json")

    _write_manifest(run_dir, "synth", args, _config_dict(config),
                    inputs=[args.config] if args.config else [],
                    outputs=outputs, started=started)
    print(f"synth: {len(panel.cubes)} cores -> {run_dir}")
    return EXIT_OK


def _config_dict(config: SynthConfig) -> dict:
    out = {}
    for name in ("n_patients", "image_size", "noise_sigma", "class_separation",
                 "scale_range", "baseline_const_range", "baseline_coef_range",
                 "tissue_paraffin_range", "tissue_h2o_range",
                 "spike_fraction", "spike_amplitude", "seed"):
        value = getattr(config, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def _load_panel_dir(panel_dir: Path):
    index_path = panel_dir / "panel.json"
    if not index_path.exists():
        raise DataError(f"{panel_dir}: no panel.json found")
    with open(index_path, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    cubes = []
    for core_id in sorted(int(k) for k in index["cores"]):
        cube, _ = read_cube(panel_dir / index["cores"][str(core_id)])
        cubes.append(cube)
    h2o_cube, _ = read_cube(panel_dir / index["h2o"])
    return cubes, h2o_cube, index


def cmd_preprocess(args) -> int:
    started = time.time()
    run_dir = _run_dir(args, "preprocess")
    cubes, h2o_cube, index = _load_panel_dir(Path(args.input))
    sset, results, skipped = preprocess_panel(cubes, h2o_cube, seed=args.seed,
                                              jobs=args.jobs)
    out_path = run_dir / "spectra.crns"
    write_spectraset(sset, out_path)
    outputs = [out_path]
    for core_id, result in sorted(results.items()):
        if result.tissue_mask is not None:
            pgm_path = run_dir / f"masks_core_{core_id:04d}.pgm"
            write_masks_pgm(pgm_path, PixelMask(result.tissue_mask, "tissue"),
                            PixelMask(result.paraffin_mask, "paraffin"))
            outputs.append(pgm_path)
    for core_id, reason in skipped:
        print(f"preprocess: skipped core {core_id}: {reason}", file=sys.stderr)
    stage_log = {str(cid): r.counts.as_dict() for cid, r in sorted(results.items())}
    flagged = sorted(cid for cid, r in results.items()
                     if not (r.tissue_plausible and r.paraffin_plausible))
    _write_manifest(run_dir, "preprocess", args, {"jobs": args.jobs},
                    inputs=[args.input], outputs=outputs, started=started,
                    extra={"stage_counts": stage_log,
                           "implausible_cores": flagged,
                           "skipped": [{"core_id": cid, "reason": r} for cid, r in skipped]})
    print(f"preprocess: {len(sset)} spectra from {len(results)} cores -> {out_path}")
    return EXIT_OK


def _split_to_json(plan: SplitPlan) -> dict:
    return {
        "seed": plan.seed,
        "test_patients": list(plan.test_patients),
        "test_type_cores": [[pid, kind] for pid, kind in plan.test_type_cores],
        "folds": [
            {"train": list(f.train_patients), "dev": list(f.dev_patients)}
            for f in plan.folds
        ],
    }


def _split_from_json(data: dict) -> SplitPlan:
    return SplitPlan(
        seed=int(data["seed"]),
        test_patients=tuple(int(p) for p in data["test_patients"]),
        test_type_cores=tuple((int(p), str(k)) for p, k in data["test_type_cores"]),
        folds=tuple(
            Fold(train_patients=tuple(int(p) for p in f["train"]),
                 dev_patients=tuple(int(p) for p in f["dev"]))
            for f in data["folds"]
        ),
    )


def cmd_train(args) -> int:
    started = time.time()
    run_dir = _run_dir(args, "train")
    sset = read_spectraset(Path(args.container))
    patients = patients_from_spectraset(sset)
    plan = make_split(patients, seed=args.seed)

    config = TrainConfig(
        head=args.head,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        init_seed=args.seed,
        shuffle_seed=args.seed + 1,
        undersample_seed=args.seed + 2,
    )

    outputs = []
    history_all = {}
    for fold_index, fold in enumerate(plan.folds, start=1):
        train_sel = head_mask(sset, config.head, fold.train_patients)
        dev_sel = head_mask(sset, config.head, fold.dev_patients)
        train_labels, train_targets = targets_for_head(sset, config.head, train_sel)
        dev_labels, dev_targets = targets_for_head(sset, config.head, dev_sel)
        balanced = undersample_balance(train_labels, seed=config.undersample_seed)

        train_x = sset.spectra[train_sel][balanced]
        result = train_fold(
            config, train_x, train_labels[balanced], train_targets[balanced],
            sset.spectra[dev_sel], dev_labels, dev_targets,
        )
        for kind, model in (("final", result.model_final), ("best", result.model_best)):
            path = run_dir / f"fold{fold_index}_{kind}.crnm"
            save_checkpoint(model, path, metadata={
                "seed": args.seed, "fold": fold_index, "kind": kind,
                "best_epoch": result.best_epoch, "head": config.head,
            })
            outputs.append(path)
        history_all[f"fold{fold_index}"] = {
            "best_epoch": result.best_epoch,
            "epochs": result.history_dicts(),
        }
        last = result.history[-1]
        print(f"train fold {fold_index}: dev_loss {last.dev_loss:.4f} "
              f"dev_acc {last.dev_accuracy:.3f} (best epoch {result.best_epoch})")

    split_path = run_dir / "split.json"
    with open(split_path, "w", encoding="utf-8") as fh:
        json.dump(_split_to_json(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")
    history_path = run_dir / "history.json"
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump(history_all, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs += [split_path, history_path]
    _write_manifest(run_dir, "train", args,
                    {"head": config.head, "epochs": config.epochs,
                     "batch_size": config.batch_size, "lr": config.lr},
                    inputs=[args.container], outputs=outputs, started=started)
    return EXIT_OK


def _predict(model, spectra: np.ndarray, chunk: int = 2048) -> np.ndarray:
    outs = [model.forward(spectra[i:i + chunk]) for i in range(0, spectra.shape[0], chunk)]
    return np.concatenate(outs)


def _collect_votes(model, sset, head: str, core_ids: list[int]):
    """Per-core spectrum predictions and the voted class for each core."""
    votes = {}
    spectrum_classes = {}
    spectrum_probs = {}
    for core_id in core_ids:
        sel = sset.core_id == core_id
        probs = _predict(model, sset.spectra[sel])
        if head == "type":
            classes = classify_binary(probs[:, 0])
            vote = patient_vote(classes, probs[:, 0], n_classes=2)
        else:
            classes, _ = classify_subtype(probs)
            vote = patient_vote(classes, probs, n_classes=4)
        votes[core_id] = vote.final_class
        spectrum_classes[core_id] = classes
        spectrum_probs[core_id] = probs
    return votes, spectrum_classes, spectrum_probs


def _eval_type_head(models, sset, plan, patients_by_id):
    rows: list[MetricRow] = []
    table = []
    test_cores = []
    for pid, kind in plan.test_type_cores:
        record = patients_by_id[pid]
        core = record.ca_core_id if kind == "CA" else record.at_core_id
        test_cores.append((pid, kind, core, 1 if kind == "CA" else 0))

    per_fold_test_preds = []
    per_fold_dev_counts = []
    for model, fold in zip(models, plan.folds):
        # dev: spectrum-level metrics
        dev_sel = head_mask(sset, "type", fold.dev_patients)
        probs = _predict(model, sset.spectra[dev_sel])
        pred = classify_binary(probs[:, 0])
        truth = sset.core_type[dev_sel].astype(np.int64)
        per_fold_dev_counts.append({cls: compute_metrics(pred, truth, cls) for cls in (0, 1)})
        # test: per-core voting
        votes, _, _ = _collect_votes(model, sset, "type",
                                     [core for _, _, core, _ in test_cores])
        per_fold_test_preds.append([votes[core] for _, _, core, _ in test_cores])

    for cls, name in ((0, "AT"), (1, "CA")):
        acc, sens, spec = [], [], []
        tp = fp = tn = fn = 0
        for counts in per_fold_dev_counts:
            c = counts[cls]
            acc.append(c.accuracy)
            sens.append(c.sensitivity)
            spec.append(c.specificity)
            tp += c.tp; fp += c.fp; tn += c.tn; fn += c.fn
        rows.append(MetricRow("dev", "type", name, "spectrum",
                              fold_mean_std(acc), fold_mean_std(spec), fold_mean_std(sens),
                              ConfusionCounts(tp, fp, tn, fn)))

    truth_classes = np.array([t for _, _, _, t in test_cores])
    for cls, name in ((0, "AT"), (1, "CA")):
        acc, sens, spec = [], [], []
        tp = fp = tn = fn = 0
        for preds in per_fold_test_preds:
            c = compute_metrics(np.array(preds), truth_classes, cls)
            acc.append(c.accuracy)
            sens.append(c.sensitivity)
            spec.append(c.specificity)
            tp += c.tp; fp += c.fp; tn += c.tn; fn += c.fn
        rows.append(MetricRow("test", "type", name, "patient",
                              fold_mean_std(acc), fold_mean_std(spec), fold_mean_std(sens),
                              ConfusionCounts(tp, fp, tn, fn)))

    names = {0: "AT", 1: "CA"}
    for i, (pid, kind, core, truth_cls) in enumerate(test_cores):
        table.append({
            "label": "type", "patient_id": pid, "core": kind,
            "ground_truth": names[truth_cls],
            "predictions": [names[preds[i]] for preds in per_fold_test_preds],
        })
    return rows, table


def _eval_subtype_head(models, sset, plan, patients_by_id):
    rows: list[MetricRow] = []
    table = []
    test_cores = [(pid, patients_by_id[pid].ca_core_id,
                   SUBTYPES.index(patients_by_id[pid].subtype))
                  for pid in plan.test_patients]

    per_fold_dev_counts = []
    per_fold_test_preds = []
    for model, fold in zip(models, plan.folds):
        dev_sel = head_mask(sset, "subtype", fold.dev_patients)
        if dev_sel.any():
            probs = _predict(model, sset.spectra[dev_sel])
            pred, _ = classify_subtype(probs)
            truth = sset.subtype[dev_sel].astype(np.int64)
            per_fold_dev_counts.append(
                {cls: compute_metrics(pred, truth, cls) for cls in range(4)})
        else:
            per_fold_dev_counts.append(None)
        votes, _, _ = _collect_votes(model, sset, "subtype",
                                     [core for _, core, _ in test_cores])
        per_fold_test_preds.append([votes[core] for _, core, _ in test_cores])

    for cls, name in enumerate(SUBTYPES):
        acc, sens, spec = [], [], []
        tp = fp = tn = fn = 0
        for counts in per_fold_dev_counts:
            if counts is None:
                acc.append(None); sens.append(None); spec.append(None)
                continue
            c = counts[cls]
            acc.append(c.accuracy)
            sens.append(c.sensitivity)
            spec.append(c.specificity)
            tp += c.tp; fp += c.fp; tn += c.tn; fn += c.fn
        rows.append(MetricRow("dev", "subtype", name, "spectrum",
                              fold_mean_std(acc), fold_mean_std(spec), fold_mean_std(sens),
                              ConfusionCounts(tp, fp, tn, fn)))

    truth_classes = np.array([t for _, _, t in test_cores])
    for cls, name in enumerate(SUBTYPES):
        acc, sens, spec = [], [], []
        tp = fp = tn = fn = 0
        for preds in per_fold_test_preds:
            c = compute_metrics(np.array(preds), truth_classes, cls)
            acc.append(c.accuracy)
            sens.append(c.sensitivity)
            spec.append(c.specificity)
            tp += c.tp; fp += c.fp; tn += c.tn; fn += c.fn
        rows.append(MetricRow("test", "subtype", name, "patient",
                              fold_mean_std(acc), fold_mean_std(spec), fold_mean_std(sens),
                              ConfusionCounts(tp, fp, tn, fn)))

    for i, (pid, core, truth_cls) in enumerate(test_cores):
        table.append({
            "label": "subtype", "patient_id": pid, "core": "CA",
            "ground_truth": SUBTYPES[truth_cls],
            "predictions": [SUBTYPES[preds[i]] for preds in per_fold_test_preds],
        })
    return rows, table


def cmd_eval(args) -> int:
    started = time.time()
    run_dir = _run_dir(args, "eval")
    train_dir = Path(args.train_dir)
    sset = read_spectraset(Path(args.container))
    patients = patients_from_spectraset(sset)
    patients_by_id = {p.patient_id: p for p in patients}

    split_path = train_dir / "split.json"
    if not split_path.exists():
        raise DataError(f"{train_dir}: no split.json (is this a train run directory?)")
    with open(split_path, "r", encoding="utf-8") as fh:
        plan = _split_from_json(json.load(fh))
    missing = [pid for pid in plan.test_patients if pid not in patients_by_id]
    if missing:
        raise DataError(f"container lacks test patients {missing}")

    models = []
    head = None
    for fold_index in range(1, len(plan.folds) + 1):
        path = train_dir / f"fold{fold_index}_{args.which}.crnm"
        model, _ = load_checkpoint(path)
        if head is None:
            head = model.head
        elif model.head != head:
            raise DataError("fold checkpoints disagree on the model head")
        models.append(model)

    if head == "type":
        rows, table = _eval_type_head(models, sset, plan, patients_by_id)
    else:
        rows, table = _eval_subtype_head(models, sset, plan, patients_by_id)

    metrics_path = run_dir / "metrics.csv"
    table_path = run_dir / "patients.csv"
    write_metrics_csv(rows, metrics_path)
    write_patient_table_csv(table, table_path)
    _write_manifest(run_dir, "eval", args, {"which": args.which, "head": head},
                    inputs=[args.container, args.train_dir],
                    outputs=[metrics_path, table_path], started=started)
    print(f"eval: {head} head -> {metrics_path}")
    return EXIT_OK


def cmd_gradcam(args) -> int:
    started = time.time()
    run_dir = _run_dir(args, "gradcam")
    train_dir = Path(args.train_dir)
    sset = read_spectraset(Path(args.container))
    patients = patients_from_spectraset(sset)
    patients_by_id = {p.patient_id: p for p in patients}

    history_path = train_dir / "history.json"
    split_path = train_dir / "split.json"
    if not history_path.exists() or not split_path.exists():
        raise DataError(f"{train_dir}: missing history.json/split.json")
    with open(history_path, "r", encoding="utf-8") as fh:
        history = json.load(fh)
    with open(split_path, "r", encoding="utf-8") as fh:
        plan = _split_from_json(json.load(fh))

    # best fold = lowest dev loss at its best epoch
    def fold_best_loss(name):
        epochs = history[name]["epochs"]
        return min(e["dev_loss"] for e in epochs)

    best_fold = min(history, key=fold_best_loss)
    model, _ = load_checkpoint(train_dir / f"{best_fold}_best.crnm")

    # group test spectra by true class and average per class
    groups: dict[str, np.ndarray] = {}
    if model.head == "type":
        sel_test = np.isin(sset.patient_id, np.asarray(plan.test_patients))
        spectra = sset.spectra[sel_test & (sset.core_type == 1)]
        if spectra.shape[0] == 0:
            raise DataError("no CA test spectra to attribute")
        groups["CA"] = gradcam_spectrum(model, spectra, target_class=1)
    else:
        for idx, name in enumerate(SUBTYPES):
            pids = [p.patient_id for p in patients
                    if p.subtype == name and p.patient_id in plan.test_patients]
            sel = np.isin(sset.patient_id, np.asarray(pids)) & (sset.core_type == 1)
            if not sel.any():
                raise DataError(f"no test spectra with subtype {name}")
            groups[name] = gradcam_spectrum(model, sset.spectra[sel], target_class=idx)

    heatmaps = class_average(groups, provenance={"fold": best_fold})
    outputs = []
    for name, heatmap in heatmaps.items():
        csv_path = run_dir / f"heatmap_{name}.csv"
        svg_path = run_dir / f"heatmap_{name}.svg"
        write_heatmap_csv(heatmap, sset.axis, csv_path)
        write_heatmap_svg(heatmap, sset.axis, svg_path)
        outputs += [csv_path, svg_path]
    _write_manifest(run_dir, "gradcam", args, {"best_fold": best_fold},
                    inputs=[args.container, args.train_dir],
                    outputs=outputs, started=started)
    print(f"gradcam: {len(heatmaps)} heatmap(s) from {best_fold} -> {run_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carenet",
        description="Synthetic micro-FTIR pipeline: generate, preprocess, train, "
                    "evaluate, attribute.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed for this run")
        p.add_argument("--jobs", type=int, default=1, help="parallel preprocessing workers")
        p.add_argument("--out-dir", default=None,
                       help="run directory (default: runs/<timestamp>-seed<seed>-<cmd>)")

    p_synth = sub.add_parser("synth", help="generate a synthetic panel of cores")
    common(p_synth)
    p_synth.add_argument("--config", default=None, help="key = value config file")
    p_synth.set_defaults(func=cmd_synth)

    p_pre = sub.add_parser("preprocess", help="cluster and preprocess a panel")
    common(p_pre)
    p_pre.add_argument("input", help="panel directory from 'synth'")
    p_pre.set_defaults(func=cmd_preprocess)

    p_train = sub.add_parser("train", help="train the 4 cross-validation folds")
    common(p_train)
    p_train.add_argument("container", help="spectra container from 'preprocess'")
    p_train.add_argument("--head", choices=("type", "subtype"), required=True)
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--batch-size", type=int, default=250)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate fold checkpoints")
    common(p_eval)
    p_eval.add_argument("train_dir", help="run directory from 'train'")
    p_eval.add_argument("container", help="spectra container from 'preprocess'")
    p_eval.add_argument("--which", choices=("final", "best"), default="final")
    p_eval.set_defaults(func=cmd_eval)

    p_cam = sub.add_parser("gradcam", help="wavenumber-importance heatmaps")
    common(p_cam)
    p_cam.add_argument("train_dir", help="run directory from 'train'")
    p_cam.add_argument("container", help="spectra container from 'preprocess'")
    p_cam.set_defaults(func=cmd_gradcam)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
