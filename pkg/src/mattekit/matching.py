"""Instance matching and instance-matting-quality scoring.

Predicted and reference mattes are matched one-to-one on the IoU of their
supports; matched pairs above the threshold are scored by the similarity of
their alphas over the union support, and the per-image score combines the
summed similarities with F1-style detection counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    AlphaPlane,
    BinaryMask,
    DimensionError,
    ErrorKind,
    ImqConfig,
    InstanceMatteSet,
    iou,
    quantize,
    union_support,
)
from .metrics import ErrorField, error_field, gradient_filter_halfwidth, region_error, similarity


@dataclass(frozen=True)
class MatchResult:
    """One-to-one assignment split into TP pairs and leftover FP/FN ids.

    ``pairs`` holds every assigned (pred_id, gt_id, iou) triple, including the
    ones later demoted for falling at or below the threshold. Reference mattes
    with empty support are excluded from matching entirely.
    """

    pairs: tuple[tuple[int, int, float], ...]
    tp: tuple[tuple[int, int, float], ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.tp), len(self.fp), len(self.fn)


@dataclass(frozen=True)
class ImqRow:
    """Scores for one error kind: all three on a 0-100 scale.

    ``similarities`` aligns with ``match.tp`` order. ``vacuous`` marks images
    with no predictions and no nonempty references, which score 100 by
    convention.
    """

    kind: ErrorKind
    imq: float
    mq: float
    rq: float
    tp: int
    fp: int
    fn: int
    similarities: tuple[float, ...]
    vacuous: bool = False

    @property
    def mq_defined(self) -> bool:
        """False when the 0.0 matting quality only marks an empty TP set."""
        return self.tp > 0 or self.vacuous


@dataclass(frozen=True)
class ImageReport:
    match: MatchResult
    rows: Mapping[ErrorKind, ImqRow]


@dataclass(frozen=True)
class DatasetReport:
    images: tuple[ImageReport, ...]
    summary: Mapping[ErrorKind, ImqRow]
    aggregation: str
    config: ImqConfig


def iou_matrix(preds: InstanceMatteSet, gts: InstanceMatteSet) -> np.ndarray:
    """(n_pred, n_gt) grid of support IoUs."""
    if len(preds) and len(gts) and preds.shape != gts.shape:
        raise DimensionError(f"prediction shape {preds.shape} != reference shape {gts.shape}")
    matrix = np.zeros((len(preds), len(gts)))
    pred_supports = [quantize(m) for m in preds.planes]
    gt_supports = [quantize(m) for m in gts.planes]
    for i, p in enumerate(pred_supports):
        for j, g in enumerate(gt_supports):
            matrix[i, j] = iou(p, g)
    return matrix


def assign(matrix: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one assignment maximizing total IoU.

    Rows/columns beyond the smaller dimension stay unassigned. An optimal
    solver keeps the result deterministic where a greedy sweep would depend
    on iteration order.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        return []
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def classify(
    preds: InstanceMatteSet,
    gts: InstanceMatteSet,
    matrix: np.ndarray,
    assignment: Sequence[tuple[int, int]],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Split an assignment into TP pairs and FP/FN ids.

    A pair is TP only when its IoU is strictly above the threshold; at or
    below, the prediction demotes to FP and the reference to FN. References
    with empty support never count, while empty predictions still cost an FP.
    """
    gt_nonempty = [quantize(m).count > 0 for m in gts.planes]
    pairs = []
    tp = []
    matched_preds: set[int] = set()
    matched_gts: set[int] = set()
    for r, c in assignment:
        if not gt_nonempty[c]:
            continue
        pair = (preds.ids[r], gts.ids[c], float(matrix[r, c]))
        pairs.append(pair)
        if pair[2] > iou_threshold:
            tp.append(pair)
            matched_preds.add(r)
            matched_gts.add(c)
    fp = tuple(pid for i, pid in enumerate(preds.ids) if i not in matched_preds)
    fn = tuple(gid for j, gid in enumerate(gts.ids) if j not in matched_gts and gt_nonempty[j])
    return MatchResult(tuple(pairs), tuple(tp), fp, fn)


def match_instances(
    preds: InstanceMatteSet, gts: InstanceMatteSet, iou_threshold: float = 0.5
) -> MatchResult:
    """Full matching pipeline: IoU matrix, optimal assignment, classification."""
    matrix = iou_matrix(preds, gts)
    return classify(preds, gts, matrix, assign(matrix), iou_threshold)


def _union_crop(pred: AlphaPlane, gt: AlphaPlane, pad: int) -> tuple[slice, slice]:
    """Bounding window of the union support, padded for filter context.

    Error fields are averaged over the union support only, so evaluating them
    on this window is exact while skipping empty background.
    """
    either = (pred.values > 0) | (gt.values > 0)
    rows = np.flatnonzero(either.any(axis=1))
    cols = np.flatnonzero(either.any(axis=0))
    if rows.size == 0:
        return slice(0, pred.height), slice(0, pred.width)
    r0 = max(int(rows[0]) - pad, 0)
    r1 = min(int(rows[-1]) + 1 + pad, pred.height)
    c0 = max(int(cols[0]) - pad, 0)
    c1 = min(int(cols[-1]) + 1 + pad, pred.width)
    return slice(r0, r1), slice(c0, c1)


def pair_errors(
    pred: AlphaPlane,
    gt: AlphaPlane,
    kinds: Sequence[ErrorKind],
    config: ImqConfig,
) -> dict[ErrorKind, float]:
    """Union-support mean error of one matched pair, per requested kind."""
    pad = gradient_filter_halfwidth(config.grad_sigma) if ErrorKind.GRAD in kinds else 0
    rs, cs = _union_crop(pred, gt, pad)
    pred_c = AlphaPlane(pred.values[rs, cs])
    gt_c = AlphaPlane(gt.values[rs, cs])
    region = union_support(pred_c, gt_c)
    return {
        kind: region_error(error_field(kind, pred_c, gt_c, config), region).value
        for kind in kinds
    }


def _tp_similarities(
    match: MatchResult,
    preds: InstanceMatteSet,
    gts: InstanceMatteSet,
    kinds: Sequence[ErrorKind],
    config: ImqConfig,
) -> dict[ErrorKind, tuple[float, ...]]:
    per_kind: dict[ErrorKind, list[float]] = {kind: [] for kind in kinds}
    for pred_id, gt_id, _ in match.tp:
        errors = pair_errors(preds.matte(pred_id), gts.matte(gt_id), kinds, config)
        for kind in kinds:
            per_kind[kind].append(similarity(errors[kind], config.w))
    return {kind: tuple(vals) for kind, vals in per_kind.items()}


def _score_row(kind: ErrorKind, similarities: tuple[float, ...], tp: int, fp: int, fn: int) -> ImqRow:
    denom = tp + 0.5 * (fp + fn)
    if denom == 0:
        return ImqRow(kind, 100.0, 100.0, 100.0, tp, fp, fn, similarities, vacuous=True)
    total = sum(similarities)
    imq_val = 100.0 * total / denom
    rq = 100.0 * tp / denom
    mq = 100.0 * total / tp if tp else 0.0
    return ImqRow(kind, imq_val, mq, rq, tp, fp, fn, similarities)


def imq(
    match: MatchResult,
    preds: InstanceMatteSet,
    gts: InstanceMatteSet,
    kind: ErrorKind,
    config: ImqConfig | None = None,
) -> ImqRow:
    """Score one error kind for a matched image."""
    config = config or ImqConfig()
    kind = ErrorKind(kind)
    sims = _tp_similarities(match, preds, gts, (kind,), config)[kind]
    tp, fp, fn = match.counts
    return _score_row(kind, sims, tp, fp, fn)


def decompose(row: ImqRow) -> tuple[float, float]:
    """Recompute (matting quality, recognition quality) from a row's evidence."""
    rescored = _score_row(row.kind, row.similarities, row.tp, row.fp, row.fn)
    return rescored.mq, rescored.rq


def imq_from_components(mq: float, rq: float) -> float:
    """Recombine the two score components (both on the 0-100 scale)."""
    return mq * rq / 100.0


def evaluate_image(
    preds: InstanceMatteSet, gts: InstanceMatteSet, config: ImqConfig | None = None
) -> ImageReport:
    """Match one image's predictions against its references and score them."""
    config = config or ImqConfig()
    nonempty = [(gid, m) for gid, m in gts if quantize(m).count > 0]
    gts_eff = InstanceMatteSet(tuple(nonempty))
    match = match_instances(preds, gts_eff, config.iou_threshold)
    sims = _tp_similarities(match, preds, gts_eff, config.error_kinds, config)
    tp, fp, fn = match.counts
    rows = {kind: _score_row(kind, sims[kind], tp, fp, fn) for kind in config.error_kinds}
    return ImageReport(match, rows)


def _pooled_rows(images: Sequence[ImageReport], config: ImqConfig) -> dict[ErrorKind, ImqRow]:
    rows = {}
    for kind in config.error_kinds:
        sims: list[float] = []
        tp = fp = fn = 0
        for report in images:
            row = report.rows[kind]
            sims.extend(row.similarities)
            tp += row.tp
            fp += row.fp
            fn += row.fn
        rows[kind] = _score_row(kind, tuple(sims), tp, fp, fn)
    return rows


def _mean_rows(images: Sequence[ImageReport], config: ImqConfig) -> dict[ErrorKind, ImqRow]:
    rows = {}
    for kind in config.error_kinds:
        per_image = [report.rows[kind] for report in images]
        rows[kind] = ImqRow(
            kind,
            float(np.mean([r.imq for r in per_image])),
            float(np.mean([r.mq for r in per_image])),
            float(np.mean([r.rq for r in per_image])),
            sum(r.tp for r in per_image),
            sum(r.fp for r in per_image),
            sum(r.fn for r in per_image),
            (),
            vacuous=all(r.vacuous for r in per_image),
        )
    return rows


def evaluate_dataset(
    pairs: Sequence[tuple[InstanceMatteSet, InstanceMatteSet]],
    config: ImqConfig | None = None,
) -> DatasetReport:
    """Evaluate (prediction, reference) set pairs for many images.

    The default summary is the arithmetic mean of per-image scores; pooled
    mode merges TP/FP/FN sets and similarities across images before scoring.
    """
    config = config or ImqConfig()
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one (preds, gts) pair")
    images = tuple(evaluate_image(p, g, config) for p, g in pairs)
    if config.aggregation == "pooled":
        summary = _pooled_rows(images, config)
    else:
        summary = _mean_rows(images, config)
    return DatasetReport(images, summary, config.aggregation, config)
