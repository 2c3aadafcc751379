import itertools

import numpy as np
import pytest

from mattekit import (
    AlphaPlane,
    DimensionError,
    ErrorKind,
    ImqConfig,
    InstanceMatteSet,
    assign,
    classify,
    decompose,
    evaluate_dataset,
    evaluate_image,
    imq,
    imq_from_components,
    iou_matrix,
    match_instances,
    pair_errors,
)

from helpers import matte_set, plane, random_blob_set, soft_blob


def brute_force_assignment(matrix: np.ndarray) -> float:
    """Best total IoU over all one-to-one assignments, by enumeration."""
    n, m = matrix.shape
    if n == 0 or m == 0:
        return 0.0
    best = -np.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = max(best, sum(matrix[i, c] for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = max(best, sum(matrix[r, j] for j, r in enumerate(rows)))
    return best


def support_set(width, lo, hi):
    row = [0.0] * width
    for i in range(lo, hi):
        row[i] = 1.0
    return plane(row)


class TestIouMatrix:
    def test_identical_single_pair(self):
        p = matte_set([0, 1, 1])
        assert iou_matrix(p, p).tolist() == [[1.0]]

    def test_disjoint_identity_pattern(self):
        preds = matte_set([1, 1, 0, 0], [0, 0, 1, 1])
        matrix = iou_matrix(preds, preds)
        assert matrix.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_counted_example(self):
        preds = matte_set(support_set(16, 0, 8), support_set(16, 4, 12))
        gts = matte_set(support_set(16, 0, 8), support_set(16, 8, 16))
        matrix = iou_matrix(preds, gts)
        assert matrix == pytest.approx(np.array([[1.0, 0.0], [1 / 3, 1 / 3]]), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            iou_matrix(matte_set([1.0]), matte_set([[1.0], [0.0]]))


class TestAssign:
    def test_single_pair(self):
        assert assign(np.array([[0.6]])) == [(0, 0)]

    def test_diagonal_dominant(self):
        assert assign(np.array([[0.9, 0.2], [0.3, 0.8]])) == [(0, 0), (1, 1)]

    def test_beats_greedy_first_choice(self):
        # greedy would grab 0.6 and strand the second row at 0.0
        assert assign(np.array([[0.55, 0.6], [0.0, 0.58]])) == [(0, 0), (1, 1)]

    def test_rectangular_leaves_extras_unassigned(self):
        pairs = assign(np.array([[0.2, 0.9, 0.1]]))
        assert len(pairs) == 1

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            n, m = rng.integers(1, 7, size=2)
            matrix = rng.random((n, m))
            total = sum(matrix[r, c] for r, c in assign(matrix))
            assert total == pytest.approx(brute_force_assignment(matrix), abs=1e-12)


class TestClassify:
    def test_perfect_matching(self):
        sets = matte_set([1, 0, 0, 0], [0, 0, 1, 0])
        result = match_instances(sets, sets)
        assert result.counts == (2, 0, 0)

    def test_no_predictions(self):
        preds = InstanceMatteSet(())
        gts = matte_set([1, 0], [0, 1])
        result = match_instances(preds, gts)
        assert result.counts == (0, 0, 2)

    def test_below_threshold_demotes(self):
        # IoU 0.4: overlap 4 of union 10
        preds = matte_set(support_set(16, 0, 7))
        gts = matte_set(support_set(16, 3, 10))
        matrix = iou_matrix(preds, gts)
        assert matrix[0, 0] == pytest.approx(0.4)
        result = classify(preds, gts, matrix, assign(matrix), 0.5)
        assert result.counts == (0, 1, 1)
        assert len(result.pairs) == 1  # the demoted pair is still recorded

    def test_exactly_at_threshold_demotes(self):
        preds = matte_set(support_set(4, 0, 2))
        gts = matte_set(support_set(4, 0, 4))
        matrix = iou_matrix(preds, gts)
        assert matrix[0, 0] == 0.5
        assert classify(preds, gts, matrix, assign(matrix), 0.5).counts == (0, 1, 1)

    def test_empty_gt_excluded_but_empty_pred_counts(self):
        preds = matte_set([1, 1, 0, 0], [0, 0, 0, 0])
        gts = matte_set([1, 1, 0, 0], [0, 0, 0, 0])
        result = match_instances(preds, gts)
        assert result.counts == (1, 1, 0)


class TestImqScore:
    def test_direct_substitution(self):
        # one TP at known similarity, one FP, one FN
        pred_a = plane([1.0, 0.98, 0.0, 0.0, 0.0, 0.0])
        gt_a = plane([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        preds = InstanceMatteSet.from_planes([pred_a, plane([0, 0, 1, 0, 0, 0])], ids=[0, 1])
        gts = InstanceMatteSet.from_planes([gt_a, plane([0, 0, 0, 0, 1, 1])], ids=[0, 1])
        match = match_instances(preds, gts)
        assert match.counts == (1, 1, 1)
        row = imq(match, preds, gts, ErrorKind.MAD)
        expected_s = 1 - 10 * (0.02 / 2)
        assert row.similarities == (pytest.approx(expected_s),)
        assert row.imq == pytest.approx(100 * expected_s / 2)

    def test_eq16_arithmetic(self):
        from mattekit.matching import _score_row

        row = _score_row(ErrorKind.MAD, (0.8,), 1, 1, 1)
        assert row.imq == pytest.approx(40.0)
        assert row.mq == pytest.approx(80.0)
        assert row.rq == pytest.approx(50.0)

    def test_all_perfect_is_100(self, rng):
        gts = random_blob_set(rng, (24, 24), 3)
        report = evaluate_image(gts, gts)
        for row in report.rows.values():
            assert row.imq == pytest.approx(100.0)

    def test_component_recombination_table(self):
        table = [
            ((25.57, 94.71), 24.22),
            ((68.19, 94.71), 64.58),
            ((63.70, 91.02), 57.98),
            ((73.83, 95.17), 70.26),
        ]
        for (mq, rq), expected in table:
            assert imq_from_components(mq, rq) == pytest.approx(expected, abs=0.01)

    def test_no_tp_flagged(self):
        preds = InstanceMatteSet(())
        gts = matte_set([1, 1])
        report = evaluate_image(preds, gts)
        row = report.rows[ErrorKind.MAD]
        assert (row.imq, row.mq, row.rq) == (0.0, 0.0, 0.0)
        assert not row.vacuous

    def test_vacuous_image(self):
        report = evaluate_image(InstanceMatteSet(()), matte_set([0.0, 0.0]))
        row = report.rows[ErrorKind.MAD]
        assert row.vacuous and row.imq == 100.0


class TestDecompose:
    def test_recomputes_from_row(self, rng):
        preds = random_blob_set(rng, (20, 20), 2)
        gts = random_blob_set(rng, (20, 20), 2)
        report = evaluate_image(preds, gts)
        for row in report.rows.values():
            mq, rq = decompose(row)
            assert mq == pytest.approx(row.mq) and rq == pytest.approx(row.rq)

    def test_no_tp_some_fn(self):
        report = evaluate_image(InstanceMatteSet(()), matte_set([1, 0]))
        mq, rq = decompose(report.rows[ErrorKind.MAD])
        assert (mq, rq) == (0.0, 0.0)
        assert not report.rows[ErrorKind.MAD].mq_defined

    def test_mq_defined_for_scored_rows(self, rng):
        gts = random_blob_set(rng, (16, 16), 2)
        report = evaluate_image(gts, gts)
        assert all(row.mq_defined for row in report.rows.values())


class TestInvariants:
    def test_imq_identity_fuzz(self, rng):
        for _ in range(60):
            preds = random_blob_set(rng, (18, 18), int(rng.integers(0, 4)))
            gts = random_blob_set(rng, (18, 18), int(rng.integers(1, 4)))
            report = evaluate_image(preds, gts)
            for row in report.rows.values():
                assert row.imq == pytest.approx(row.mq * row.rq / 100.0, abs=1e-9)

    def test_rq_independent_of_kind(self, rng):
        preds = random_blob_set(rng, (20, 20), 3)
        gts = random_blob_set(rng, (20, 20), 3)
        rows = evaluate_image(preds, gts).rows
        rqs = {row.rq for row in rows.values()}
        assert len(rqs) == 1

    def test_duplicate_empty_gt_never_changes_scores(self, rng):
        preds = random_blob_set(rng, (20, 20), 2)
        gts = random_blob_set(rng, (20, 20), 2)
        with_empty = InstanceMatteSet(
            (*gts.instances, (99, AlphaPlane(np.zeros((20, 20)))))
        )
        base = evaluate_image(preds, gts)
        extended = evaluate_image(preds, with_empty)
        for kind in base.rows:
            assert extended.rows[kind].imq == base.rows[kind].imq
            assert extended.rows[kind].tp == base.rows[kind].tp

    def test_degrading_a_tp_never_raises_imq(self, rng):
        gt = AlphaPlane(soft_blob((20, 20), (10, 10), (6, 6)))
        gts = InstanceMatteSet.from_planes([gt])
        noise = rng.standard_normal((20, 20))
        config = ImqConfig(error_kinds=(ErrorKind.MAD, ErrorKind.MSE))
        match = match_instances(gts, gts)  # held fixed while the prediction degrades
        assert match.counts[0] == 1
        scores = []
        for delta in (0.0, 0.05, 0.1, 0.2):
            pred = AlphaPlane(np.clip(gt.values + delta * noise, 0, 1))
            preds = InstanceMatteSet.from_planes([pred])
            scores.append(imq(match, preds, gts, ErrorKind.MAD, config).imq)
        assert all(a >= b - 1e-9 for a, b in zip(scores, scores[1:]))

    def test_swap_asymmetry_with_empty_matte(self):
        solid = plane([1, 1, 0, 0])
        empty = plane([0, 0, 0, 0])
        one_pred = InstanceMatteSet.from_planes([solid])
        two_gts = InstanceMatteSet.from_planes([solid, empty])
        forward = evaluate_image(one_pred, two_gts).rows[ErrorKind.MAD].imq
        backward = evaluate_image(two_gts, one_pred).rows[ErrorKind.MAD].imq
        assert forward == pytest.approx(100.0)  # empty reference excluded
        assert backward == pytest.approx(100 / 1.5)  # empty prediction is an FP
        assert forward != backward


class TestPairErrors:
    def test_crop_matches_full_frame(self, rng):
        # pair_errors evaluates on a padded union window; the result must be
        # identical to evaluating on the uncropped planes.
        from mattekit import error_field, region_error, union_support

        config = ImqConfig()
        for _ in range(10):
            pred = random_blob_set(rng, (40, 52), 1).planes[0]
            gt = random_blob_set(rng, (40, 52), 1).planes[0]
            got = pair_errors(pred, gt, config.error_kinds, config)
            region = union_support(pred, gt)
            for kind in config.error_kinds:
                full = region_error(error_field(kind, pred, gt, config), region).value
                assert got[kind] == pytest.approx(full, abs=1e-12)


class TestEvaluateDataset:
    def _image_with(self, s, fp=0, fn=0):
        width = 8 + 2 * (fp + fn)
        err = (1 - s) / 10.0
        gt_row = [1.0] * 8 + [0.0] * (width - 8)
        pred_row = [1.0 - err] * 8 + [0.0] * (width - 8)
        gt_planes = [plane(gt_row)]
        pred_planes = [plane(pred_row)]
        col = 8
        for _ in range(fp):
            row = [0.0] * width
            row[col] = 1.0
            pred_planes.append(plane(row))
            col += 1
        for _ in range(fn):
            row = [0.0] * width
            row[col] = 1.0
            gt_planes.append(plane(row))
            col += 1
        return (
            InstanceMatteSet.from_planes(pred_planes),
            InstanceMatteSet.from_planes(gt_planes),
        )

    def test_mean_of_two_images(self):
        config = ImqConfig(error_kinds=(ErrorKind.MAD,))
        pairs = [self._image_with(0.8, fp=1, fn=1), self._image_with(0.6)]
        report = evaluate_dataset(pairs, config)
        assert report.images[0].rows[ErrorKind.MAD].imq == pytest.approx(40.0)
        assert report.images[1].rows[ErrorKind.MAD].imq == pytest.approx(60.0)
        assert report.summary[ErrorKind.MAD].imq == pytest.approx(50.0)

    def test_single_image_equals_per_image(self):
        config = ImqConfig(error_kinds=(ErrorKind.MAD,))
        pairs = [self._image_with(0.7)]
        report = evaluate_dataset(pairs, config)
        assert report.summary[ErrorKind.MAD].imq == pytest.approx(report.images[0].rows[ErrorKind.MAD].imq)

    def test_pooled_mode(self):
        config = ImqConfig(error_kinds=(ErrorKind.MAD,), aggregation="pooled")
        pairs = [self._image_with(1.0, fp=1), self._image_with(0.5, fn=1)]
        report = evaluate_dataset(pairs, config)
        assert report.summary[ErrorKind.MAD].imq == pytest.approx(50.0)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            evaluate_dataset([])
