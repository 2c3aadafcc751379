"""Command-line surface: evaluate, compose, trimask, refine, audit.

Reports are line-delimited JSON records (a config echo, per-image rows, then
a summary) plus a human-readable digest on stdout. Exit codes: 0 success,
1 usage error, 2 data error. Flag values override the optional JSON config
file (``--config`` or the MATTEKIT_CONFIG environment variable), which in
turn overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .compositing import PlacementError, PlacementPolicy, compose_scene
from .core import ErrorKind, ImqConfig, InstanceMatteSet, quantize
from .matching import _score_row, evaluate_image
from .rasters import (
    RasterError,
    image_names,
    instance_files,
    read_alpha,
    read_alpha_codes,
    read_color,
    read_instance_set,
    resolve_alphas_root,
    write_alpha,
    write_mask,
    write_scene,
)
from .refinement import TriStack, error_map, refine, select_patches, splice_patches
from .trimask import TrimaskAugmentOptions, augment_trimask, partial_band, trimask_from_masks, trimatte_gt

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
CONFIG_ENV = "MATTEKIT_CONFIG"
SCHEMA_VERSION = 1

DEFAULTS: dict[str, object] = {
    "w": 10.0,
    "iou_thresh": 0.5,
    "errors": "mad,mse,grad,conn",
    "grad_sigma": 1.4,
    "conn_step": 0.1,
    "agg": "mean",
    "seed": 0,
    "band_k": 35,
    "patch": 128,
    "threshold": 0.01,
    "jobs": 1,
    "bit_depth": 16,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D401 - argparse API
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flag(parser: argparse.ArgumentParser, name: str, **kwargs) -> None:
    parser.add_argument(name, default=argparse.SUPPRESS, **kwargs)


def _settings(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional JSON config file, and explicit flags."""
    merged = dict(DEFAULTS)
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"config file {path} has unknown keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        if hasattr(args, key):
            merged[key] = getattr(args, key)
    return merged


def _imq_config(settings: dict) -> ImqConfig:
    try:
        kinds = tuple(ErrorKind(k.strip()) for k in str(settings["errors"]).split(",") if k.strip())
        return ImqConfig(
            w=float(settings["w"]),
            iou_threshold=float(settings["iou_thresh"]),
            error_kinds=kinds,
            grad_sigma=float(settings["grad_sigma"]),
            conn_step=float(settings["conn_step"]),
            aggregation=str(settings["agg"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _config_record(command: str, settings: dict, extra: dict | None = None) -> dict:
    record = {"type": "config", "schema": SCHEMA_VERSION, "command": command}
    record.update({k: settings[k] for k in sorted(settings)})
    if extra:
        record.update(extra)
    return record


def _write_report(path: Path, records: list[dict]) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------- evaluate


def _evaluate_one(task: tuple[str, str, str, dict]) -> dict:
    name, pred_dir, gt_dir, config_kwargs = task
    config = ImqConfig(**config_kwargs)
    try:
        preds = read_instance_set(Path(pred_dir))
        gts = read_instance_set(Path(gt_dir))
        report = evaluate_image(preds, gts, config)
    except (RasterError, ValueError) as exc:
        return {"type": "error", "name": name, "message": str(exc)}
    tp, fp, fn = report.match.counts
    return {
        "type": "image",
        "name": name,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "vacuous": any(row.vacuous for row in report.rows.values()),
        "pairs": [
            {"pred_id": p, "gt_id": g, "iou": i} for p, g, i in report.match.pairs
        ],
        "fp_ids": list(report.match.fp),
        "fn_ids": list(report.match.fn),
        "kinds": {
            kind.value: {
                "imq": row.imq,
                "mq": row.mq,
                "rq": row.rq,
                "similarities": list(row.similarities),
            }
            for kind, row in report.rows.items()
        },
    }


def _summarize(images: list[dict], config: ImqConfig) -> dict:
    kinds = {}
    for kind in config.error_kinds:
        key = kind.value
        if config.aggregation == "pooled":
            sims: list[float] = []
            tp = fp = fn = 0
            for row in images:
                sims.extend(row["kinds"][key]["similarities"])
                tp += row["tp"]
                fp += row["fp"]
                fn += row["fn"]
            pooled = _score_row(kind, tuple(sims), tp, fp, fn)
            kinds[key] = {"imq": pooled.imq, "mq": pooled.mq, "rq": pooled.rq}
        else:
            kinds[key] = {
                "imq": float(np.mean([row["kinds"][key]["imq"] for row in images])),
                "mq": float(np.mean([row["kinds"][key]["mq"] for row in images])),
                "rq": float(np.mean([row["kinds"][key]["rq"] for row in images])),
            }
    return kinds


def cmd_evaluate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    config = _imq_config(settings)
    jobs = max(int(settings["jobs"]), 1)
    pred_root = resolve_alphas_root(args.pred_root)
    gt_root = resolve_alphas_root(args.gt_root)
    try:
        gt_names = image_names(gt_root)
        pred_names = image_names(pred_root)
    except RasterError as exc:
        raise DataError(str(exc)) from exc
    if not gt_names:
        raise DataError(f"no image directories under {gt_root}")
    missing = sorted(set(gt_names) - set(pred_names))
    if missing:
        raise DataError(f"prediction directory missing for image {missing[0]!r}")
    extra = sorted(set(pred_names) - set(gt_names))
    if extra:
        raise DataError(f"prediction directory {extra[0]!r} has no matching reference")

    config_kwargs = {
        "w": config.w,
        "iou_threshold": config.iou_threshold,
        "error_kinds": tuple(k.value for k in config.error_kinds),
        "grad_sigma": config.grad_sigma,
        "conn_step": config.conn_step,
        "aggregation": config.aggregation,
    }
    tasks = [
        (name, str(pred_root / name), str(gt_root / name), config_kwargs) for name in gt_names
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_one, tasks))
    else:
        results = [_evaluate_one(task) for task in tasks]
    results.sort(key=lambda record: record["name"])

    images = [r for r in results if r["type"] == "image"]
    skipped = [r["name"] for r in results if r["type"] == "error"]
    if not images:
        raise DataError("no image could be evaluated; see report for details")
    summary = {
        "type": "summary",
        "images": len(images),
        "skipped": skipped,
        "aggregation": config.aggregation,
        "counts": {
            "tp": sum(r["tp"] for r in images),
            "fp": sum(r["fp"] for r in images),
            "fn": sum(r["fn"] for r in images),
        },
        "kinds": _summarize(images, config),
    }
    records = [_config_record("evaluate", settings), *results, summary]
    _write_report(Path(args.out), records)

    print(f"evaluated {len(images)} image(s), skipped {len(skipped)}")
    for key, row in summary["kinds"].items():
        print(f"  imq_{key}: {row['imq']:.2f}  (mq {row['mq']:.2f}, rq {row['rq']:.2f})")
    if skipped:
        print(f"  skipped: {', '.join(skipped)}")
    print(f"report written to {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- compose


def _parse_range(text: str, name: str) -> tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{name} expects 'lo,hi', got {text!r}") from exc
    return lo, hi


def _discover_foregrounds(fg_root: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for color in sorted(Path(fg_root).glob("*_color.*")):
        alpha = color.with_name(color.name.replace("_color.", "_alpha."))
        if alpha.exists():
            pairs.append((color, alpha))
    return pairs


def cmd_compose(args: argparse.Namespace) -> int:
    settings = _settings(args)
    seed = int(settings["seed"])
    bit_depth = int(settings["bit_depth"])
    if args.count is not None and not 2 <= args.count <= 5:
        raise UsageError(f"--count must be between 2 and 5, got {args.count}")
    try:
        policy = PlacementPolicy(
            scale_range=_parse_range(args.scale_range, "--scale-range"),
            overlap_range=_parse_range(args.overlap_range, "--overlap-range"),
            min_visible_fraction=args.min_visible,
            max_tries=args.max_tries,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    fg_pairs = _discover_foregrounds(Path(args.fg_root))
    bg_files = sorted(
        p for p in Path(args.bg_root).iterdir() if p.is_file() and p.suffix.lower() in (".png", ".tif", ".tiff", ".bmp")
    ) if Path(args.bg_root).is_dir() else []
    if not fg_pairs:
        raise UsageError(f"no foreground color/alpha pairs under {args.fg_root}")
    if not bg_files:
        raise UsageError(f"no background rasters under {args.bg_root}")

    try:
        foreground_pool = [
            (read_color(color), read_alpha(alpha)) for color, alpha in fg_pairs
        ]
        backgrounds = [read_color(p) for p in bg_files]
    except RasterError as exc:
        raise DataError(str(exc)) from exc

    from .compositing import Layer  # local import keeps module load light

    out_root = Path(args.out)
    records = [
        _config_record(
            "compose",
            settings,
            {"scenes": args.scenes, "count": args.count, "foregrounds": len(fg_pairs), "backgrounds": len(bg_files)},
        )
    ]
    for index in range(args.scenes):
        rng = np.random.default_rng((seed, index))
        count = args.count if args.count is not None else int(rng.integers(2, 6))
        chosen = rng.choice(len(foreground_pool), size=count, replace=len(foreground_pool) < count)
        layers = [Layer(*foreground_pool[int(i)]) for i in chosen]
        background = backgrounds[int(rng.integers(len(backgrounds)))]
        name = f"scene_{index:04d}"
        try:
            scene = compose_scene(layers, background, policy, seed=(seed, index, 1))
        except PlacementError as exc:
            raise DataError(f"{name}: {exc}") from exc
        entry = write_scene(scene, out_root, name, bit_depth)
        entry.update({"type": "scene", "seed": [seed, index], "sources": [int(i) for i in chosen]})
        records.append(entry)
        print(f"{name}: {count} instance(s)")
    _write_report(out_root / "manifest.jsonl", records)
    print(f"wrote {args.scenes} scene(s) to {out_root}")
    return EXIT_OK


# ----------------------------------------------------------------- trimask


def cmd_trimask(args: argparse.Namespace) -> int:
    settings = _settings(args)
    seed = int(settings["seed"])
    band_k = int(settings["band_k"])
    bit_depth = int(settings["bit_depth"])
    if band_k < 0:
        raise UsageError(f"--band-k must be nonnegative, got {band_k}")
    root = resolve_alphas_root(args.alphas_root)
    out_root = Path(args.out)
    try:
        names = image_names(root)
    except RasterError as exc:
        raise DataError(str(exc)) from exc
    if not names:
        raise DataError(f"no image directories under {root}")

    options = TrimaskAugmentOptions(
        truncation_range=_parse_range(args.truncation_range, "--truncation-range"),
        kernel_range=tuple(int(v) for v in _parse_range(args.kernel_range, "--kernel-range")),
    )
    records = [_config_record("trimask", settings, {"augment": args.augment, "target": args.target})]
    for image_index, name in enumerate(sorted(names)):
        try:
            mattes = read_instance_set(root / name)
        except RasterError as exc:
            raise DataError(f"{name}: {exc}") from exc
        n = len(mattes)
        if n == 0:
            continue
        if args.target == "all":
            targets = range(n)
        else:
            try:
                target = int(args.target)
            except ValueError as exc:
                raise UsageError(f"--target expects an index or 'all', got {args.target!r}") from exc
            if not 0 <= target < n:
                raise UsageError(f"{name}: target index {target} out of range for {n} instances")
            targets = [target]
        masks = [quantize(plane) for plane in mattes.planes]
        for k, mask in enumerate(masks):
            write_mask(out_root / "bands" / name / f"instance_{k:02d}.png", partial_band(mask, band_k))
        for target in targets:
            try:
                matte = trimatte_gt(mattes, target)
            except ValueError as exc:
                raise DataError(f"{name}: {exc}") from exc
            if args.augment:
                mask_triple = augment_trimask(mattes, target, options, seed=(seed, image_index, target))
            else:
                mask_triple = trimask_from_masks(masks, target)
            stem = f"instance_{target:02d}"
            for suffix, plane in (("t", matte.target), ("r", matte.reference), ("b", matte.background)):
                write_alpha(out_root / "trimattes" / name / f"{stem}_{suffix}.png", plane, bit_depth)
            for suffix, mask in (
                ("t", mask_triple.target),
                ("r", mask_triple.reference),
                ("b", mask_triple.background),
            ):
                write_mask(out_root / "trimasks" / name / f"{stem}_{suffix}.png", mask)
        records.append({"type": "image", "name": name, "instances": n})
    _write_report(out_root / "trimask_report.jsonl", records)
    print(f"processed {len(records) - 1} image(s) into {out_root}")
    return EXIT_OK


# ------------------------------------------------------------------ refine


def _read_trimatte_stack(image_dir: Path) -> TriStack:
    from .trimask import TriMatte

    indices = sorted(
        int(p.stem.split("_")[1]) for p in image_dir.glob("instance_*_t.png")
    )
    if not indices:
        raise RasterError(f"no tri-matte triples under {image_dir}")
    if indices != list(range(len(indices))):
        raise RasterError(f"{image_dir}: tri-matte files must be numbered contiguously from 00")
    trimattes = []
    for k in indices:
        stem = f"instance_{k:02d}"
        trimattes.append(
            TriMatte(
                read_alpha(image_dir / f"{stem}_t.png"),
                read_alpha(image_dir / f"{stem}_r.png"),
                read_alpha(image_dir / f"{stem}_b.png"),
            )
        )
    return TriStack.from_trimattes(trimattes)


def cmd_refine(args: argparse.Namespace) -> int:
    settings = _settings(args)
    threshold = float(settings["threshold"])
    patch = int(settings["patch"])
    bit_depth = int(settings["bit_depth"])
    if threshold < 0:
        raise UsageError(f"--threshold must be nonnegative, got {threshold}")
    if patch < 1:
        raise UsageError(f"--patch must be positive, got {patch}")
    if args.rounds < 1:
        raise UsageError(f"--rounds must be at least 1, got {args.rounds}")
    order = None
    if args.order is not None:
        try:
            order = [int(v) for v in args.order.split(",")]
        except ValueError as exc:
            raise UsageError(f"--order expects comma-separated indices, got {args.order!r}") from exc

    root = Path(args.trimatte_root)
    if (root / "trimattes").is_dir():
        root = root / "trimattes"
    try:
        names = image_names(root)
    except RasterError as exc:
        raise DataError(str(exc)) from exc
    if not names:
        raise DataError(f"no image directories under {root}")

    out_root = Path(args.out)
    records = [_config_record("refine", settings, {"mode": args.mode, "order": order, "rounds": args.rounds})]
    for name in names:
        try:
            stack = _read_trimatte_stack(root / name)
        except RasterError as exc:
            raise DataError(f"{name}: {exc}") from exc
        if args.mode == "cycle" and order is None and stack.n > 1:
            raise UsageError("cycle refinement is order-sensitive; pass --order explicitly")
        if order is not None and sorted(order) != list(range(stack.n)):
            raise UsageError(f"{name}: --order must be a permutation of 0..{stack.n - 1}")
        pre = error_map(stack)
        patches = select_patches(pre, threshold, patch)
        if patches:
            refined = refine(stack, args.mode, order, args.rounds)
            result = splice_patches(stack, refined, patches)
        else:
            result = stack
        post = error_map(result)
        for k, matte in enumerate(result.to_trimattes()):
            stem = f"instance_{k:02d}"
            for suffix, plane in (("t", matte.target), ("r", matte.reference), ("b", matte.background)):
                write_alpha(out_root / name / f"{stem}_{suffix}.png", plane, bit_depth)
        records.append(
            {
                "type": "image",
                "name": name,
                "instances": stack.n,
                "patches": len(patches),
                "pre_mean_error": float(pre.values.mean()),
                "post_mean_error": float(post.values.mean()),
            }
        )
        print(f"{name}: {len(patches)} patch(es), mean error {records[-1]['pre_mean_error']:.6f} -> {records[-1]['post_mean_error']:.6f}")
    _write_report(out_root / "refine_report.jsonl", records)
    return EXIT_OK


# ------------------------------------------------------------------- audit


def cmd_audit(args: argparse.Namespace) -> int:
    root = resolve_alphas_root(args.scene_root)
    try:
        names = image_names(root)
    except RasterError as exc:
        raise DataError(str(exc)) from exc
    if not names:
        raise DataError(f"no scene directories under {root}")

    records = [{"type": "config", "schema": SCHEMA_VERSION, "command": "audit"}]
    aggregate: dict[int, int] = {}
    total_pixels = 0
    for name in names:
        try:
            files = instance_files(root / name)
            loaded = [read_alpha_codes(p) for p in files]
        except RasterError as exc:
            raise DataError(f"{name}: {exc}") from exc
        planes = [codes for codes, _ in loaded]
        background = root / name / "background.png"
        if background.exists():
            bg_codes, _ = read_alpha_codes(background)
            counts = (bg_codes > 0).astype(np.int64)
        elif planes:
            max_code = loaded[0][1]
            total = np.zeros_like(planes[0])
            for p in planes:
                total = total + p
            counts = (total < max_code).astype(np.int64)
        else:
            continue
        for p in planes:
            counts = counts + (p > 0)
        values, freq = np.unique(counts, return_counts=True)
        histogram = {int(v): int(f) for v, f in zip(values, freq)}
        pixels = int(counts.size)
        for v, f in histogram.items():
            aggregate[v] = aggregate.get(v, 0) + f
        total_pixels += pixels
        records.append(
            {
                "type": "scene",
                "name": name,
                "pixels": pixels,
                "histogram": {str(k): v for k, v in sorted(histogram.items())},
                "fraction_above_2": sum(f for v, f in histogram.items() if v > 2) / pixels,
                "fraction_above_3": sum(f for v, f in histogram.items() if v > 3) / pixels,
            }
        )
    summary = {
        "type": "summary",
        "scenes": len(records) - 1,
        "pixels": total_pixels,
        "histogram": {str(k): v for k, v in sorted(aggregate.items())},
        "fraction_above_2": sum(f for v, f in aggregate.items() if v > 2) / total_pixels if total_pixels else 0.0,
        "fraction_above_3": sum(f for v, f in aggregate.items() if v > 3) / total_pixels if total_pixels else 0.0,
    }
    records.append(summary)
    _write_report(Path(args.out), records)
    print(f"audited {summary['scenes']} scene(s); layers-per-pixel histogram:")
    for k, v in sorted(aggregate.items()):
        print(f"  {k}: {v / total_pixels:.4%}")
    print(
        f"fraction above 2: {summary['fraction_above_2']:.4%}, above 3: {summary['fraction_above_3']:.4%}"
    )
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="mattekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *names: str) -> None:
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file (or set MATTEKIT_CONFIG)")
        specs = {
            "w": dict(type=float, help="similarity balance factor"),
            "iou_thresh": dict(type=float, help="TP matching threshold", flag="--iou-thresh"),
            "errors": dict(type=str, help="comma list from mad,mse,grad,conn"),
            "grad_sigma": dict(type=float, flag="--grad-sigma"),
            "conn_step": dict(type=float, flag="--conn-step"),
            "agg": dict(type=str, choices=["mean", "pooled"]),
            "seed": dict(type=int),
            "band_k": dict(type=int, flag="--band-k"),
            "patch": dict(type=int),
            "threshold": dict(type=float),
            "jobs": dict(type=int),
            "bit_depth": dict(type=int, choices=[8, 16], flag="--bit-depth"),
        }
        for name in names:
            spec = dict(specs[name])
            flag = spec.pop("flag", f"--{name}")
            _add_config_flag(p, flag, dest=name, **spec)

    p = sub.add_parser("evaluate", help="score predicted instance mattes against references")
    p.add_argument("pred_root")
    p.add_argument("gt_root")
    p.add_argument("--out", default="imq_report.jsonl")
    common(p, "w", "iou_thresh", "errors", "grad_sigma", "conn_step", "agg", "jobs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compose", help="synthesize layered scenes with exact ground truth")
    p.add_argument("fg_root")
    p.add_argument("bg_root")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--count", type=int, default=None, help="instances per scene (2-5; default random)")
    p.add_argument("--scale-range", default="0.4,1.0")
    p.add_argument("--overlap-range", default="-0.3,0.5")
    p.add_argument("--min-visible", type=float, default=0.05)
    p.add_argument("--max-tries", type=int, default=100)
    common(p, "seed", "bit_depth")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("trimask", help="emit tri-masks, ground-truth tri-mattes, and supervision bands")
    p.add_argument("alphas_root")
    p.add_argument("--out", required=True)
    p.add_argument("--target", default="all", help="instance index or 'all'")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--truncation-range", default="0.2,0.8")
    p.add_argument("--kernel-range", default="1,30")
    common(p, "seed", "band_k", "bit_depth")
    p.set_defaults(func=cmd_trimask)

    p = sub.add_parser("refine", help="synchronize tri-mattes inside error-scheduled patches")
    p.add_argument("trimatte_root")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["parallel", "cycle"], default="parallel")
    p.add_argument("--order", default=None, help="comma-separated instance order for cycle mode")
    p.add_argument("--rounds", type=int, default=1)
    common(p, "threshold", "patch", "bit_depth")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("audit", help="sparsity histogram of effective alphas per pixel")
    p.add_argument("scene_root")
    p.add_argument("--out", default="audit_report.jsonl")
    p.set_defaults(func=cmd_audit)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"mattekit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RasterError, OSError) as exc:
        print(f"mattekit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
