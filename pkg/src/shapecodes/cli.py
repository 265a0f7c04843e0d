"""``shapecodes`` command line: gen, train, eval-recon, eval-knn, export, heatmap, gradcheck.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose keys
are the long flag names (dashes or underscores). Flags given on the command
line override the file. Each run writes a manifest next to its main output.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .config import ConfigError, parse_elevations, parse_floats, read_config, write_manifest
from .evaluation import (AVG_KINDS, AVG_VIEWGRID, CLASS_AVG_VIEW, CLASS_AVG_VIEWGRID, SPLIT_PAIRS, AVG_VIEW,
                         NetReconstructor, NotApplicable, evaluate_reconstruction, fit_avg_from_dataset,
                         net_features, per_view_mse_heatmap, pixel_features, recognition_accuracy, tsv_table)
from .formats import FormatError, read_checkpoint, read_dataset, sha256_file, write_checkpoint, write_dataset
from .ndtensor import NonFiniteError, ShapeError
from .network import AUTOENCODER, CA, FEATURE_LAYERS, VARIANT_ALIASES, NetConfig, ShapeCodeNet, predict_viewgrid
from .shapeforge import TEST, TRAIN, UNSEEN_TEST, DatasetConfig, RenderConfig, generate_dataset
from .training import TrainConfig, checkpoint_metadata, net_from_tensors, net_tensors, train
from .viewgrid import ViewIndex, ViewSphereSpec, montage, shift_images, stack_montages, to_u8, write_pgm

log = logging.getLogger("shapecodes")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", help="manifest path (default: <main output>.manifest)")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapecodes", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render a procedural viewgrid dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8, help="seen classes")
    p.add_argument("--per-class", type=int, default=86, help="objects per seen class (train+val+test)")
    p.add_argument("--unseen", type=int, default=0, help="held-out classes")
    p.add_argument("--unseen-per-class", type=int, default=60)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--unseen-test-fraction", type=float, default=0.3)
    p.add_argument("--families", default="", help="comma-separated family order (default: built-in order)")
    p.add_argument("--azimuths", type=int, default=12)
    p.add_argument("--elevations", default="0,±30,±60,±90")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", help="train a network variant with a learning-rate sweep")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log (default: <out>.log.tsv)")
    p.add_argument("--variant", default="ours", choices=sorted(VARIANT_ALIASES))
    p.add_argument("--lr-grid", default="0.1,0.03,0.01,0.003")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--val-interval", type=int, default=0, help="steps between validations; 0 = once per epoch")
    p.add_argument("--val-views", type=int, default=4, help="validation views per object")
    p.add_argument("--code-dim", type=int, default=256)

    p = sub.add_parser("eval-recon", help="reconstruction MSE x 1000 for a checkpoint and/or baselines")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", default=[], help="repeatable")
    p.add_argument("--baselines", default=",".join(AVG_KINDS), help="comma list, or 'none'")
    p.add_argument("--splits", default="seen,unseen")
    p.add_argument("--out", help="TSV table (default: stdout)")

    p = sub.add_parser("eval-knn", help="k-NN recognition accuracy of feature extractors")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="trained viewgrid network (method 'ours')")
    p.add_argument("--autoencoder", help="trained autoencoder checkpoint")
    p.add_argument("--methods", default="", help="comma list of ours,pixels,random,autoencoder "
                                                 "(default: every method whose inputs are given)")
    p.add_argument("--layers", default=",".join(FEATURE_LAYERS))
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--per-class", type=int, default=1000, help="training views sampled per class")
    p.add_argument("--seeds", default="", help="comma list of sampling seeds (default: --seed)")
    p.add_argument("--splits", default="seen,unseen")
    p.add_argument("--out", help="TSV table (default: stdout)")

    p = sub.add_parser("export", help="PGM montage: ground truth above the one-shot prediction")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--object", type=int, required=True)
    p.add_argument("--row", type=int, default=0, help="observed elevation row")
    p.add_argument("--col", type=int, default=0, help="observed azimuth column")
    p.add_argument("--out", required=True)

    p = sub.add_parser("heatmap", help="per-view reconstruction error map, one per class")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="network checkpoint (omit to use --baseline)")
    p.add_argument("--baseline", choices=AVG_KINDS)
    p.add_argument("--split", default=TEST)
    p.add_argument("--classes", default="", help="comma list of class ids or names (default: all in split)")
    p.add_argument("--cell", type=int, default=8, help="PGM pixels per grid cell")
    p.add_argument("--out", required=True, help="output prefix; writes <out>_<class>.tsv and .pgm")

    p = sub.add_parser("gradcheck", help="finite-difference checks of every layer and the full network")
    _common(p)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--checks", default="", help="comma list (default: all)")
    p.add_argument("--out", help="report path (default: stdout)")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; values from ``--config`` become defaults that flags override."""
    parser = build_parser()
    # first pass only locates the command and config file; required flags may live in the config
    relaxed = build_parser()
    for action in relaxed._subparsers._group_actions[0].choices.values():
        for a in action._actions:
            a.required = False
    first = relaxed.parse_args(argv)
    if not first.config:
        return parser.parse_args(argv)
    args = first
    sub = _subparser(parser, args.command)
    try:
        values = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [v.strip() for v in raw.split(",") if v.strip()]
        else:
            try:
                value = action.type(raw) if action.type else raw
            except ValueError:
                raise ConfigError(f"{args.config}: bad value for {key}: {raw!r}") from None
            if action.choices and value not in action.choices:
                raise ConfigError(f"{args.config}: {key} must be one of {sorted(action.choices)}")
            defaults[key] = value
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _resolved(args: argparse.Namespace) -> Dict[str, str]:
    skip = {"command", "manifest", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _manifest_path(args, main_output: str) -> str:
    return args.manifest or f"{main_output}.manifest"


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# loading helpers


def _load_dataset(path: str):
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    return read_dataset(path)


def _load_net(path: str) -> ShapeCodeNet:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    tensors, meta = read_checkpoint(path)
    try:
        return net_from_tensors(tensors, meta)
    except (KeyError, TypeError, ShapeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _check_compatible(net: ShapeCodeNet, ds, path: str):
    cfg = net.cfg
    if cfg.image_size != ds.image_size:
        raise DataError(f"{path}: network expects {cfg.image_size}px images, dataset has {ds.image_size}px")
    if cfg.variant != AUTOENCODER and (cfg.num_elevations, cfg.num_azimuths) != ds.spec.grid_shape:
        raise DataError(f"{path}: network predicts {cfg.num_elevations}x{cfg.num_azimuths} grids, "
                        f"dataset is {ds.spec.grid_shape[0]}x{ds.spec.grid_shape[1]}")


def _method_name(net: ShapeCodeNet) -> str:
    return {CA: "ours_ca", AUTOENCODER: "autoencoder"}.get(net.cfg.variant, "ours")


def _split_pairs(text: str) -> List[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    for s in names:
        if s not in SPLIT_PAIRS:
            raise UsageError(f"unknown split group {s!r}; use seen and/or unseen")
    return names


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    families = tuple(f.strip() for f in args.families.split(",") if f.strip()) or None
    try:
        elevations = parse_elevations(args.elevations)
        spec = ViewSphereSpec(args.azimuths, tuple(elevations))
        cfg = DatasetConfig(num_classes=args.classes, instances_per_class=args.per_class,
                            val_fraction=args.val_fraction, test_fraction=args.test_fraction,
                            num_unseen=args.unseen, unseen_per_class=args.unseen_per_class,
                            unseen_test_fraction=args.unseen_test_fraction, families=families)
        cfg.family_order()
        render = RenderConfig(image_size=args.image_size)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"cannot write to {out_dir}")
    ds = generate_dataset(cfg, spec, render, args.seed, workers=args.workers,
                          progress=lambda i, n: log.info("rendered %d/%d", i, n))
    digest = write_dataset(args.out, ds)
    write_manifest(_manifest_path(args, args.out), "gen", _resolved(args), outputs={os.path.basename(args.out): digest})
    print(f"{args.out}\t{len(ds)} objects\t{spec.size} views each\tsha256={digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    try:
        tcfg = TrainConfig(lr_grid=tuple(parse_floats(args.lr_grid)), momentum=args.momentum,
                           batch_size=args.batch_size, patience=args.patience, max_epochs=args.max_epochs,
                           val_interval=args.val_interval, val_views_per_object=args.val_views, seed=args.seed)
        n, m = ds.spec.grid_shape
        ncfg = NetConfig(image_size=ds.image_size, num_elevations=n, num_azimuths=m,
                         variant=VARIANT_ALIASES[args.variant], code_dim=args.code_dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = train(ds, ncfg, tcfg, progress=lambda row: log.info(row.line()))
    for run in result.runs:
        status = f"diverged: {run.message}" if run.diverged else f"best val {run.best_val:.6g} @ epoch {run.best_epoch}"
        print(f"lr={run.lr:g}\t{status}\t({run.epochs_run} epochs)")
    data_hash = sha256_file(args.data)
    meta = checkpoint_metadata(result.net, tcfg, data_hash, result.learning_rate)
    digest = write_checkpoint(args.out, net_tensors(result.net), meta)
    log_path = args.log or f"{args.out}.log.tsv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write(result.log_text())
    write_manifest(_manifest_path(args, args.out), "train", _resolved(args), inputs=[args.data],
                   outputs={os.path.basename(args.out): digest})
    print(f"selected lr={result.learning_rate:g}\t{args.out}\tsha256={digest}")
    return EXIT_OK


def recon_rows(ds, predictors: Dict[str, object], split_groups: Sequence[str]) -> List[tuple]:
    """(method, split, class, mse_x1000) rows; inapplicable combinations are left out."""
    test_split = {"seen": TEST, "unseen": UNSEEN_TEST}
    rows = []
    for method, pred in predictors.items():
        for group in split_groups:
            split = test_split[group]
            if len(ds.split_indices(split)) == 0:
                continue
            try:
                res = evaluate_reconstruction(pred, ds, split)
            except NotApplicable:
                continue
            rows.append((method, group, "all", res.overall))
            for c, v in res.per_class.items():
                name = ds.class_names[c] if c < len(ds.class_names) else str(c)
                rows.append((method, group, name, v))
    return rows


def recon_table(rows) -> str:
    lines = ["method\tsplit\tclass\tmse_x1000"]
    lines += [f"{m}\t{s}\t{c}\t{v:.6f}" for m, s, c, v in rows]
    return "\n".join(lines) + "\n"


def cmd_eval_recon(args) -> int:
    ds = _load_dataset(args.data)
    groups = _split_pairs(args.splits)
    predictors = {}
    for path in args.checkpoint:
        net = _load_net(path)
        _check_compatible(net, ds, path)
        if net.cfg.variant == AUTOENCODER:
            raise UsageError(f"{path}: the autoencoder does not reconstruct viewgrids")
        predictors[_method_name(net)] = NetReconstructor(net, ds.spec.elevations)
    kinds = [] if args.baselines.strip() == "none" else [k.strip() for k in args.baselines.split(",") if k.strip()]
    for kind in kinds:
        if kind not in AVG_KINDS:
            raise UsageError(f"unknown baseline {kind!r}; choose from {', '.join(AVG_KINDS)}")
        predictors[kind] = fit_avg_from_dataset(ds, kind, TRAIN)
    if not predictors:
        raise UsageError("nothing to evaluate: give --checkpoint and/or --baselines")
    text = recon_table(recon_rows(ds, predictors, groups))
    _emit(text, args.out)
    if args.out:
        write_manifest(_manifest_path(args, args.out), "eval-recon", _resolved(args),
                       inputs=[args.data, *args.checkpoint], outputs={os.path.basename(args.out): sha256_file(args.out)})
    return EXIT_OK


def random_feature_net(cfg: NetConfig, seed: int) -> ShapeCodeNet:
    """Untrained network with its own init stream, distinct from any training init."""
    sub_seed = int(rngmod.make_rng(seed, rngmod.RANDOM_FEATURES).integers(2 ** 63))
    return ShapeCodeNet(cfg, seed=sub_seed)


def knn_rows(ds, extractors: Dict[str, Dict[str, object]], groups: Sequence[str], k: int, per_class: int,
             seeds: Sequence[int]) -> List[tuple]:
    """Accuracy rows per (method, layer, split), seed-averaged, plus a best-of-layers row per method."""
    rows = []
    for method, layers in extractors.items():
        for group in groups:
            means = {}
            for layer, fn in layers.items():
                accs = [recognition_accuracy(fn, ds, group, per_class, k, s) for s in seeds]
                means[layer] = float(np.mean(accs))
                rows.append((method, layer, group, "accuracy", means[layer]))
                if len(seeds) > 1:
                    rows += [(method, layer, group, f"accuracy_seed{s}", a) for s, a in zip(seeds, accs)]
            if len(layers) > 1:
                best = max(means, key=lambda name: (means[name], -list(layers).index(name)))
                rows.append((method, f"best({best})", group, "accuracy", means[best]))
    return rows


def cmd_eval_knn(args) -> int:
    ds = _load_dataset(args.data)
    groups = _split_pairs(args.splits)
    layers = [s.strip() for s in args.layers.split(",") if s.strip()]
    for layer in layers:
        if layer not in FEATURE_LAYERS:
            raise UsageError(f"unknown layer {layer!r}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()] or [args.seed]
    available = ["pixels"] + (["ours", "random"] if args.checkpoint else []) + (["autoencoder"] if args.autoencoder else [])
    methods = [s.strip() for s in args.methods.split(",") if s.strip()] or available
    nets = {}
    for name, path in (("ours", args.checkpoint), ("autoencoder", args.autoencoder)):
        if path:
            nets[name] = _load_net(path)
            _check_compatible(nets[name], ds, path)
    extractors: Dict[str, Dict[str, object]] = {}
    for method in methods:
        if method == "pixels":
            extractors[method] = {"-": pixel_features}
        elif method in ("ours", "autoencoder"):
            if method not in nets:
                raise UsageError(f"method {method!r} needs --{'checkpoint' if method == 'ours' else 'autoencoder'}")
            extractors[method] = {layer: net_features(nets[method], layer) for layer in layers}
        elif method == "random":
            base = nets.get("ours") or nets.get("autoencoder")
            cfg = base.cfg if base else NetConfig(image_size=ds.image_size, num_elevations=ds.spec.grid_shape[0],
                                                  num_azimuths=ds.spec.grid_shape[1])
            rnet = random_feature_net(cfg, args.seed)
            extractors[method] = {layer: net_features(rnet, layer) for layer in layers}
        else:
            raise UsageError(f"unknown method {method!r}")
    text = tsv_table(knn_rows(ds, extractors, groups, args.k, args.per_class, seeds))
    _emit(text, args.out)
    if args.out:
        write_manifest(_manifest_path(args, args.out), "eval-knn", _resolved(args),
                       inputs=[args.data, args.checkpoint, args.autoencoder],
                       outputs={os.path.basename(args.out): sha256_file(args.out)})
    return EXIT_OK


def export_montage(net: ShapeCodeNet, ds, obj: int, observed: ViewIndex) -> np.ndarray:
    """u8 canvas: canonical ground truth above the prediction rotated back to canonical axes."""
    gt = ds.pixels[obj]
    image = ds.images(obj)[observed.elev_row, observed.azim_col]
    pred = predict_viewgrid(net, image, ds.spec.elevations[observed.elev_row], ds.spec).images
    if net.cfg.variant != CA:
        pred = shift_images(pred, -observed.azim_col)
    return stack_montages(gt, to_u8(pred))


def cmd_export(args) -> int:
    ds = _load_dataset(args.data)
    net = _load_net(args.checkpoint)
    _check_compatible(net, ds, args.checkpoint)
    if net.cfg.variant == AUTOENCODER:
        raise UsageError("the autoencoder does not predict viewgrids")
    if not 0 <= args.object < len(ds):
        raise DataError(f"object id {args.object} out of range [0, {len(ds)})")
    try:
        observed = ViewIndex(args.row, args.col).validate(ds.spec)
    except (ValueError, IndexError) as exc:
        raise DataError(str(exc)) from None
    canvas = export_montage(net, ds, args.object, observed)
    write_pgm(args.out, canvas)
    resolved = _resolved(args)
    resolved["observed_cell"] = f"row {observed.elev_row} col {observed.azim_col} " \
                                f"(elevation {ds.spec.elevations[observed.elev_row]:g}, " \
                                f"azimuth {ds.spec.azimuths[observed.azim_col]:g})"
    resolved["layout"] = "top: ground truth (canonical axes); bottom: prediction rotated to canonical axes"
    write_manifest(_manifest_path(args, args.out), "export", resolved, inputs=[args.data, args.checkpoint],
                   outputs={os.path.basename(args.out): sha256_file(args.out)})
    print(args.out)
    return EXIT_OK


def heatmap_image(mat: np.ndarray, cell: int) -> np.ndarray:
    """Scale to 0..255 by the map's maximum and blow each cell up to ``cell`` pixels."""
    top = float(mat.max())
    scaled = mat / top if top > 0 else np.zeros_like(mat)
    img = np.round(scaled * 255.0).astype(np.uint8)
    return np.kron(img, np.ones((cell, cell), dtype=np.uint8))


def heatmap_text(mat: np.ndarray) -> str:
    return "\n".join("\t".join(repr(float(v)) for v in row) for row in mat) + "\n"


def cmd_heatmap(args) -> int:
    ds = _load_dataset(args.data)
    if bool(args.checkpoint) == bool(args.baseline):
        raise UsageError("give exactly one of --checkpoint or --baseline")
    if args.checkpoint:
        net = _load_net(args.checkpoint)
        _check_compatible(net, ds, args.checkpoint)
        predictor = NetReconstructor(net, ds.spec.elevations)
    else:
        predictor = fit_avg_from_dataset(ds, args.baseline, TRAIN)
    if args.split not in ds.split_names:
        raise UsageError(f"unknown split {args.split!r}")
    idx = ds.split_indices(args.split)
    present = ds.classes_in(args.split)
    wanted = []
    for tok in (t.strip() for t in args.classes.split(",")):
        if not tok:
            continue
        c = int(tok) if tok.isdigit() else (ds.class_names.index(tok) if tok in ds.class_names else -1)
        if c not in present:
            raise DataError(f"class {tok!r} has no objects in split {args.split!r}")
        wanted.append(c)
    outputs = {}
    for c in wanted or present:
        try:
            mat = per_view_mse_heatmap(predictor, ds, idx[ds.class_ids[idx] == c])
        except NotApplicable as exc:
            raise DataError(str(exc)) from None
        name = ds.class_names[c] if c < len(ds.class_names) else str(c)
        base = f"{args.out}_{name}"
        with open(base + ".tsv", "w", encoding="utf-8") as f:
            f.write(heatmap_text(mat))
        write_pgm(base + ".pgm", heatmap_image(mat, args.cell))
        for ext in (".tsv", ".pgm"):
            outputs[os.path.basename(base + ext)] = sha256_file(base + ext)
        print(f"{base}.tsv\tmean mse_x1000={1000 * mat.mean():.4f}")
    write_manifest(_manifest_path(args, args.out), "heatmap", _resolved(args),
                   inputs=[args.data, args.checkpoint], outputs=outputs)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    checks = [c.strip() for c in args.checks.split(",") if c.strip()] or None
    try:
        results = run_suite(args.instances, args.seed, args.tolerance, checks)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    lines = ["check\tinstance\tmax_rel_error\tverdict\tconfiguration"] + [r.line() for r in results]
    failed = [r for r in results if not r.passed]
    lines.append(f"# {len(results) - len(failed)}/{len(results)} passed, tolerance {args.tolerance:g}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval-recon": cmd_eval_recon,
    "eval-knn": cmd_eval_knn,
    "export": cmd_export,
    "heatmap": cmd_heatmap,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2 already
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"shapecodes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"shapecodes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"shapecodes: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, ShapeError, NotApplicable, OSError, ValueError) as exc:
        print(f"shapecodes: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
