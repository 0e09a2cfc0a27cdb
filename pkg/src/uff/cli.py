"""Command line interface.

Subcommands::

    synth       generate a synthetic dataset + manifest
    fit         fit encoder and decoder on a manifest split (no labels used)
    encode      write shape and point features of a split to .npz
    train-cls   train shape classifier heads (lsq, rf)
    eval-cls    overall accuracy of a shape classifier head
    train-seg   train per-object-class part segmentation heads
    eval-seg    instance / category mIoU report
    export-ply  write a cloud with predicted part labels as vertex colors

Every command writing an artifact also writes a run log (``--log``,
default ``<artifact>.log``) holding the resolved config and the model
fingerprint. ``UFF_NUM_THREADS`` sets the worker count.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, modelfile, synth
from .config import RunConfig
from .data import DatasetManifest, load_cloud, normalize_cloud, stratified_subset, write_ply
from .learners import fit_segmentation_heads, lsq_fit, rf_fit, segment
from .metrics import SegEvalInput, format_kv, format_table, miou_report, overall_accuracy
from .modelfile import ModelBundle
from .pipeline import encode, fit_uff, point_features, shape_feature

log = logging.getLogger("uff")


class CLIError(Exception):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("UFF_NUM_THREADS", "1")))
    except ValueError:
        raise CLIError("UFF_NUM_THREADS must be an integer") from None


def _setup_log(path: Path | None, args) -> None:
    log.handlers.clear()
    log.setLevel(logging.INFO)
    log.propagate = False
    if path is not None:
        handler = logging.FileHandler(path, mode="w")
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
    log.info("uff %s command=%s", __version__, args.command)
    for key, value in sorted(vars(args).items()):
        if key not in ("func", "command"):
            log.info("arg %s = %s", key, value)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key, value in cfg.items():
        log.info("config %s = %s", key, value)
    return cfg


def _load_bundle(path) -> ModelBundle:
    bundle = modelfile.load_model(path)
    log.info("model %s fingerprint %s", path, modelfile.model_fingerprint(path))
    return bundle


def _save_bundle(bundle: ModelBundle, path) -> None:
    fp = modelfile.save_model(bundle, path)
    log.info("wrote model %s fingerprint %s", path, fp)
    print(f"wrote {path} (fingerprint {fp[:16]})")


def _extract(bundle: ModelBundle, clouds, need_points=True):
    model = bundle.uff

    def one(cloud):
        records = encode(model, cloud)
        sf = shape_feature(records, model.config.aggregations)
        return sf, point_features(records, model) if need_points else None

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, clouds))
    else:
        out = [one(c) for c in clouds]
    return np.array([o[0] for o in out]), [o[1] for o in out]


def _split_subset(manifest: DatasetManifest, split: str, fraction: float, seed: int):
    labels = [e.label for e in manifest.entries(split)]
    idx = stratified_subset(labels, fraction, seed)
    log.info("split %s: using %d of %d samples (fraction %s)", split, len(idx), len(labels), fraction)
    return idx


# --------------------------------------------------------------------------


def cmd_synth(args):
    path = synth.write_dataset(args.out, args.task, args.classes, args.n, args.n_test, args.points, args.seed)
    log.info("wrote manifest %s", path)
    print(f"wrote {path}")


def cmd_fit(args):
    cfg = _config(args)
    manifest = DatasetManifest.load(args.manifest)
    indices = None
    n_total = len(manifest.entries(args.split))
    if cfg.fit_max_clouds and cfg.fit_max_clouds < n_total:
        rng = np.random.default_rng(cfg.seed)
        indices = np.sort(rng.permutation(n_total)[: cfg.fit_max_clouds])
    samples = manifest.load_split(args.split, cfg.normalize, indices)
    log.info("fitting on %d clouds of split %s", len(samples), args.split)
    uff = fit_uff([s.points for s in samples], cfg.pipeline(), workers=_workers())
    log.info("encoder dims %s decoder dims %s", uff.encoder.dims, uff.decoder.dims)
    meta = {"normalize": cfg.normalize, "run_config": cfg.dumps()}
    _save_bundle(ModelBundle(uff, meta=meta), args.out)


def cmd_encode(args):
    bundle = _load_bundle(args.model)
    manifest = DatasetManifest.load(args.manifest)
    samples = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"))
    shape, points = _extract(bundle, [s.points for s in samples])
    offsets = np.concatenate([[0], np.cumsum([len(p) for p in points])])
    np.savez(
        args.out,
        shape_features=shape,
        labels=np.array([s.label for s in samples]),
        point_features=np.vstack(points),
        point_offsets=offsets,
    )
    log.info("wrote features %s: shape %s, points %s", args.out, shape.shape, offsets[-1])
    print(f"wrote {args.out}: {len(samples)} shapes, shape feature dim {shape.shape[1]}, point feature dim {points[0].shape[1]}")


def cmd_train_cls(args):
    cfg = _config(args)
    bundle = _load_bundle(args.model)
    manifest = DatasetManifest.load(args.manifest)
    fraction = args.train_fraction if args.train_fraction is not None else cfg.train_fraction
    idx = _split_subset(manifest, args.split, fraction, cfg.seed)
    samples = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"), idx)
    feats, _ = _extract(bundle, [s.points for s in samples], need_points=False)
    labels = np.array([s.label for s in samples])
    n_classes = manifest.num_classes
    heads = ("lsq", "rf") if args.head == "both" else (args.head,)
    for head in heads:
        if head == "lsq":
            clf = lsq_fit(feats, labels, n_classes, cfg.lsq_ridge)
        else:
            clf = rf_fit(feats, labels, n_classes, cfg.forest_params(), seed=cfg.seed, workers=_workers())
        bundle.shape_classifiers[head] = clf
        acc = overall_accuracy(clf.predict(feats), labels)
        log.info("trained %s head: training OA %.4f", head, acc)
        print(f"{head}: training OA {acc:.4f}")
    bundle.meta["classes"] = manifest.classes
    _save_bundle(bundle, args.out or args.model)


def _classifier(bundle: ModelBundle, head: str):
    try:
        return bundle.shape_classifiers[head]
    except KeyError:
        raise CLIError(f"model has no {head!r} shape classifier; run train-cls first") from None


def _write_report(prefix, title, rows, values):
    table = format_table(rows, title)
    print(table, end="")
    if prefix:
        Path(f"{prefix}.txt").write_text(table)
        Path(f"{prefix}.kv").write_text(format_kv(values))
        log.info("wrote report %s.txt / %s.kv", prefix, prefix)
    for key, value in sorted(values.items()):
        log.info("metric %s = %s", key, value)


def cmd_eval_cls(args):
    bundle = _load_bundle(args.model)
    clf = _classifier(bundle, args.head)
    manifest = DatasetManifest.load(args.manifest)
    samples = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"))
    feats, _ = _extract(bundle, [s.points for s in samples], need_points=False)
    labels = np.array([s.label for s in samples])
    acc = overall_accuracy(clf.predict(feats), labels)
    values = {"overall_accuracy": acc, "num_shapes": len(labels), "head": args.head}
    _write_report(args.report, f"shape classification ({args.split}, {args.head})",
                  [("OA", acc), ("shapes", len(labels))], values)


def cmd_train_seg(args):
    cfg = _config(args)
    bundle = _load_bundle(args.model)
    manifest = DatasetManifest.load(args.manifest)
    fraction = args.train_fraction if args.train_fraction is not None else cfg.train_fraction
    idx = _split_subset(manifest, args.split, fraction, cfg.seed)
    samples = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"), idx)
    if any(s.parts is None for s in samples):
        raise CLIError(f"split {args.split!r} lacks part labels")
    _, maps = _extract(bundle, [s.points for s in samples])
    rng = np.random.default_rng(cfg.seed)
    by_class, labels_by_class = {}, {}
    for s, fmap in zip(samples, maps):
        parts = s.parts
        if cfg.seg_points_per_shape and cfg.seg_points_per_shape < len(parts):
            keep = np.sort(rng.permutation(len(parts))[: cfg.seg_points_per_shape])
            fmap, parts = fmap[keep], parts[keep]
        by_class.setdefault(s.label, []).append(fmap)
        labels_by_class.setdefault(s.label, []).append(parts)
    vocab = manifest.part_vocabularies or None
    heads = fit_segmentation_heads(
        by_class, labels_by_class, vocab, cfg.forest_params(cfg.seg_rf_trees), seed=cfg.seed, workers=_workers()
    )
    bundle.seg_heads = heads
    log.info("trained %d segmentation heads for classes %s", len(heads), sorted(heads))
    print(f"trained {len(heads)} segmentation heads")
    _save_bundle(bundle, args.out or args.model)


def cmd_eval_seg(args):
    bundle = _load_bundle(args.model)
    if not bundle.seg_heads:
        raise CLIError("model has no segmentation heads; run train-seg first")
    clf = _classifier(bundle, args.head) if args.label_mode == "predicted" else None
    manifest = DatasetManifest.load(args.manifest)
    samples = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"))
    if any(s.parts is None for s in samples):
        raise CLIError(f"split {args.split!r} lacks part labels")
    shape, maps = _extract(bundle, [s.points for s in samples])
    inputs = []
    for s, sf, fmap in zip(samples, shape, maps):
        label = s.label if args.label_mode == "ground-truth" else None
        pred = segment(sf, fmap, clf, bundle.seg_heads, label=label)
        vocab = manifest.part_vocabularies.get(s.label)
        if vocab is None:
            vocab = bundle.seg_heads[s.label].vocabulary.tolist()
        inputs.append(SegEvalInput(s.label, s.parts, pred, vocab))
    report = miou_report(inputs)
    values = report.as_dict()
    values["label_mode"] = args.label_mode
    rows = [("Cat. mIoU", report.cat_miou), ("Ins. mIoU", report.ins_miou),
            ("point accuracy", report.point_accuracy), ("shapes", len(inputs))]
    names = manifest.classes
    for cls, value in report.category_miou.items():
        rows.append((f"  {names[cls] if cls < len(names) else cls}", value))
    _write_report(args.report, f"part segmentation ({args.split}, labels: {args.label_mode})", rows, values)


def cmd_export_ply(args):
    bundle = _load_bundle(args.model)
    if args.cloud:
        points = normalize_cloud(load_cloud(args.cloud), bundle.meta.get("normalize", "sphere"))
        label = args.label
    else:
        if not args.manifest:
            raise CLIError("give --cloud or --manifest with --index")
        manifest = DatasetManifest.load(args.manifest)
        sample = manifest.load_split(args.split, bundle.meta.get("normalize", "sphere"), [args.index])[0]
        points = sample.points
        label = sample.label if args.label_mode == "ground-truth" else args.label
    sf, pmap = _extract(bundle, [points])
    clf = None if label is not None else _classifier(bundle, args.head)
    parts = segment(sf[0], pmap[0], clf, bundle.seg_heads, label=label)
    write_ply(args.out, points, parts)
    log.info("wrote %s with %d points", args.out, len(points))
    print(f"wrote {args.out}")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uff", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"uff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--log", type=Path, help="run log path")
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--task", choices=("cls", "seg"), default="cls")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--n", type=int, default=100, help="training shapes per class")
    p.add_argument("--n-test", type=int, default=50, help="test shapes per class")
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = add("fit", cmd_fit, "fit the encoder and decoder")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = add("encode", cmd_encode, "extract shape and point features")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True)

    for name, func, split in (("train-cls", cmd_train_cls, "train"), ("train-seg", cmd_train_seg, "train")):
        p = add(name, func, f"{name.replace('-', ' ')} heads")
        p.add_argument("--model", type=Path, required=True)
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--split", default=split)
        p.add_argument("--config", type=Path)
        p.add_argument("--train-fraction", type=float, help="stratified fraction of the split to train on")
        p.add_argument("--out", type=Path, help="output model (default: update --model in place)")
        if name == "train-cls":
            p.add_argument("--head", choices=("lsq", "rf", "both"), default="both")

    p = add("eval-cls", cmd_eval_cls, "evaluate shape classification")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--head", choices=("lsq", "rf"), default="lsq")
    p.add_argument("--report", help="write <report>.txt and <report>.kv")

    p = add("eval-seg", cmd_eval_seg, "evaluate part segmentation")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--head", choices=("lsq", "rf"), default="lsq")
    p.add_argument("--label-mode", choices=("predicted", "ground-truth"), default="predicted")
    p.add_argument("--report", help="write <report>.txt and <report>.kv")

    p = add("export-ply", cmd_export_ply, "export predicted part labels as a colored PLY")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cloud", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--label", type=int, help="object class to dispatch to (skips the shape classifier)")
    p.add_argument("--label-mode", choices=("predicted", "ground-truth"), default="predicted")
    p.add_argument("--head", choices=("lsq", "rf"), default="lsq")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _default_log(args) -> Path | None:
    if args.log:
        return args.log
    if args.command in ("train-cls", "train-seg"):
        return Path(f"{args.out or args.model}.{args.command}.log")
    target = getattr(args, "out", None) or getattr(args, "report", None)
    if target is None:
        return None
    target = Path(target)
    return target / "run.log" if args.command == "synth" else Path(f"{target}.log")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            Path(args.out).mkdir(parents=True, exist_ok=True)
        _setup_log(_default_log(args), args)
        args.func(args)
    except (CLIError, ValueError, KeyError, FileNotFoundError, np.linalg.LinAlgError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        log.error("error %s: %s", type(exc).__name__, message)
        print(f"uff: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2
    finally:
        for handler in list(log.handlers):
            handler.close()
            log.removeHandler(handler)
    return 0


if __name__ == "__main__":
    sys.exit(main())
