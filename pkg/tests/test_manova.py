"""Tests for balanced two-way layouts and Wilks' Lambda tests."""

import math

import numpy as np
import pytest
from scipy.stats import chi2

from mcdmanova.distributions import RngStream, chi2_quantile
from mcdmanova.errors import (
    CellWiped,
    DegenerateWeights,
    DimensionError,
    DomainError,
    EmptyTable,
    MissingCalibration,
    NonNumeric,
    NotPositiveDefinite,
    SingularSubset,
    TooFewLevels,
    Unbalanced,
)
from mcdmanova.manova import (
    BartlettApprox,
    CalibratedApprox,
    Hypothesis,
    Model,
    TwoWayLayout,
    WeightSet,
    bartlett_dfs,
    bartlett_pvalue,
    calibrated_pvalue,
    classical_ssp,
    hypotheses_for,
    layout_from_cells,
    rank_transform,
    robust_weights,
    run_manova,
    unit_weights,
    validate_layout,
    weighted_ssp,
    wilks_lambda,
)
from mcdmanova.mcd import McdConfig


def random_layout(rng, r=3, c=2, n=5, p=2, scale=1.0):
    return layout_from_cells(rng.normal(size=(r, c, n, p)) * scale)


def reference_ssp(layout, w):
    """Loop transliteration of the weighted mean and SSP definitions."""
    r, c, p = layout.r, layout.c, layout.p
    Y = layout.observations
    R, C = layout.row_label, layout.col_label
    kept = w == 1
    cell_mean = np.zeros((r, c, p))
    for i in range(r):
        for j in range(c):
            sel = (R == i) & (C == j) & kept
            cell_mean[i, j] = Y[sel].mean(axis=0)
    row_mean = np.stack([Y[(R == i) & kept].mean(axis=0) for i in range(r)])
    col_mean = np.stack([Y[(C == j) & kept].mean(axis=0) for j in range(c)])
    grand = Y[kept].mean(axis=0)
    W = np.zeros((p, p))
    E = np.zeros((p, p))
    for k in range(layout.size):
        if not kept[k]:
            continue
        dw = Y[k] - cell_mean[R[k], C[k]]
        W += np.outer(dw, dw)
        de = Y[k] - row_mean[R[k]] - col_mean[C[k]] + grand
        E += np.outer(de, de)
    R_row = np.zeros((p, p))
    for i in range(r):
        cnt = np.count_nonzero((R == i) & kept)
        d = row_mean[i] - grand
        R_row += cnt * np.outer(d, d)
    R_col = np.zeros((p, p))
    for j in range(c):
        cnt = np.count_nonzero((C == j) & kept)
        d = col_mean[j] - grand
        R_col += cnt * np.outer(d, d)
    return W, E, R_row, R_col, cell_mean, row_mean, col_mean, grand


class TestValidateLayout:
    def make_rows(self, r=2, c=2, n=2, p=2, rng=None):
        rng = rng or np.random.default_rng(0)
        rows = []
        for i in range(r):
            for j in range(c):
                for _ in range(n):
                    rows.append((f"r{i}", f"c{j}", *rng.normal(size=p)))
        return rows

    def test_accepts_balanced_table(self):
        lay = validate_layout(self.make_rows(3, 2, 4, 2))
        assert (lay.r, lay.c, lay.n, lay.p) == (3, 2, 4, 2)

    def test_levels_in_first_appearance_order(self):
        rows = [
            ("B", "y", 1.0), ("B", "x", 2.0), ("A", "y", 3.0), ("A", "x", 4.0),
            ("B", "y", 5.0), ("B", "x", 6.0), ("A", "y", 7.0), ("A", "x", 8.0),
        ]
        lay = validate_layout(rows)
        # "B" appeared first so it gets index 0, same for column "y"
        assert lay.row_label[0] == 0 and lay.row_label[2] == 1
        assert lay.col_label[0] == 0 and lay.col_label[1] == 1

    def test_unbalanced_rejected(self):
        rows = self.make_rows()
        with pytest.raises(Unbalanced):
            validate_layout(rows[:-1])
        # balanced count but misassigned cells
        rows[0] = ("r1", "c1", *rows[0][2:])
        with pytest.raises(Unbalanced):
            validate_layout(rows)

    def test_single_level_rejected(self):
        rows = [("a", "x", 1.0), ("a", "y", 2.0), ("a", "x", 3.0), ("a", "y", 4.0)]
        with pytest.raises(TooFewLevels):
            validate_layout(rows)

    def test_non_numeric_rejected(self):
        rows = self.make_rows()
        rows[2] = ("r0", "c1", "oops", 1.0)
        with pytest.raises(NonNumeric, match="row 3"):
            validate_layout(rows)
        rows[2] = ("r0", "c1", float("nan"), 1.0)
        with pytest.raises(NonNumeric):
            validate_layout(rows)

    def test_empty_table_rejected(self):
        with pytest.raises(EmptyTable):
            validate_layout([])

    def test_ragged_rows_rejected(self):
        rows = self.make_rows()
        rows[1] = rows[1] + (9.9,)
        with pytest.raises(DimensionError):
            validate_layout(rows)

    def test_single_observation_cells_rejected(self):
        with pytest.raises(DomainError):
            validate_layout(self.make_rows(n=1))


class TestLayoutStructure:
    def test_cell_array_round_trip(self):
        rng = np.random.default_rng(1)
        cells = rng.normal(size=(3, 2, 4, 2))
        lay = layout_from_cells(cells)
        assert np.array_equal(lay.cell_array(), cells)

    def test_cell_array_preserves_within_cell_order(self):
        rows = [
            ("a", "x", 1.0), ("b", "x", 2.0), ("a", "x", 3.0), ("b", "x", 4.0),
            ("a", "y", 5.0), ("b", "y", 6.0), ("a", "y", 7.0), ("b", "y", 8.0),
        ]
        lay = validate_layout(rows)
        cells = lay.cell_array()
        assert cells[0, 0, :, 0].tolist() == [1.0, 3.0]
        assert cells[1, 0, :, 0].tolist() == [2.0, 4.0]
        assert cells[1, 1, :, 0].tolist() == [6.0, 8.0]

    def test_observations_read_only(self):
        lay = random_layout(np.random.default_rng(2))
        with pytest.raises(ValueError):
            lay.observations[0, 0] = 99.0

    def test_size(self):
        lay = random_layout(np.random.default_rng(3), r=3, c=2, n=5)
        assert lay.size == 30


class TestRankTransform:
    def test_simple_column(self):
        rows = [
            ("a", "x", 3.1), ("a", "y", -2.0), ("b", "x", 7.0), ("b", "y", 0.0),
            ("a", "x", 10.0), ("a", "y", 11.0), ("b", "x", 12.0), ("b", "y", 13.0),
        ]
        ranked = rank_transform(validate_layout(rows))
        # sorted pool: -2, 0, 3.1, 7, 10, 11, 12, 13
        assert ranked.observations[:4, 0].tolist() == [3.0, 1.0, 4.0, 2.0]

    def test_ties_get_midranks(self):
        rows = [
            ("a", "x", 5.0), ("a", "y", 5.0), ("b", "x", 1.0), ("b", "y", 2.0),
            ("a", "x", 3.0), ("a", "y", 4.0), ("b", "x", 6.0), ("b", "y", 7.0),
        ]
        ranked = rank_transform(validate_layout(rows))
        # the tied 5.0s occupy sorted positions 5 and 6
        assert ranked.observations[0, 0] == 5.5
        assert ranked.observations[1, 0] == 5.5

    def test_invariant_to_increasing_transform(self):
        rng = np.random.default_rng(4)
        lay = random_layout(rng)
        warped = TwoWayLayout(
            lay.r, lay.c, lay.n, lay.p,
            np.exp(lay.observations), lay.row_label, lay.col_label,
        )
        assert np.array_equal(
            rank_transform(lay).observations, rank_transform(warped).observations
        )

    def test_each_coordinate_ranked_separately(self):
        rng = np.random.default_rng(5)
        lay = random_layout(rng, p=3)
        ranked = rank_transform(lay)
        for j in range(3):
            assert sorted(ranked.observations[:, j]) == list(
                range(1, lay.size + 1)
            )


class TestWeightSet:
    def test_from_vector_totals(self):
        lay = random_layout(np.random.default_rng(6), r=2, c=3, n=4)
        w = np.ones(lay.size, dtype=np.int64)
        w[:3] = 0
        ws = WeightSet.from_vector(lay, w)
        assert ws.grand_total == lay.size - 3
        assert ws.cell_totals.sum() == ws.grand_total
        assert np.array_equal(ws.cell_totals.sum(axis=1), ws.row_totals)
        assert np.array_equal(ws.cell_totals.sum(axis=0), ws.col_totals)

    def test_non_binary_rejected(self):
        lay = random_layout(np.random.default_rng(7))
        w = np.ones(lay.size, dtype=np.int64)
        w[0] = 2
        with pytest.raises(DomainError):
            WeightSet.from_vector(lay, w)

    def test_inconsistent_totals_rejected(self):
        lay = random_layout(np.random.default_rng(8), r=2, c=2, n=3)
        ws = unit_weights(lay)
        with pytest.raises(DomainError):
            WeightSet(ws.w, ws.cell_totals, ws.row_totals, ws.col_totals,
                      ws.grand_total + 1)

    def test_wrong_length_rejected(self):
        lay = random_layout(np.random.default_rng(9))
        with pytest.raises(DimensionError):
            WeightSet.from_vector(lay, np.ones(lay.size + 1, dtype=np.int64))


class TestWeightedSsp:
    def test_matches_reference_unit_weights(self):
        rng = np.random.default_rng(10)
        lay = random_layout(rng, r=3, c=3, n=4, p=2)
        w = np.ones(lay.size, dtype=np.int64)
        d = weighted_ssp(lay, WeightSet.from_vector(lay, w))
        W, E, R_row, R_col, cm, rm, colm, gm = reference_ssp(lay, w)
        assert np.allclose(d.W, W, atol=1e-10)
        assert np.allclose(d.E, E, atol=1e-10)
        assert np.allclose(d.R_row, R_row, atol=1e-10)
        assert np.allclose(d.R_col, R_col, atol=1e-10)
        assert np.allclose(d.means.cell, cm, atol=1e-12)
        assert np.allclose(d.means.grand, gm, atol=1e-12)

    def test_matches_reference_random_weights(self):
        rng = np.random.default_rng(11)
        for trial in range(5):
            lay = random_layout(rng, r=2, c=3, n=5, p=2)
            # keep at least 3 per cell so nothing degenerates
            w = np.ones(lay.size, dtype=np.int64)
            drop = rng.choice(lay.size, size=6, replace=False)
            w[drop[:2]] = 0
            d = weighted_ssp(lay, WeightSet.from_vector(lay, w))
            W, E, R_row, R_col, *_ = reference_ssp(lay, w)
            assert np.allclose(d.W, W, atol=1e-9)
            assert np.allclose(d.E, E, atol=1e-9)
            assert np.allclose(d.R_row, R_row, atol=1e-9)
            assert np.allclose(d.R_col, R_col, atol=1e-9)

    def test_single_deletion_matches_reference(self):
        rng = np.random.default_rng(12)
        lay = random_layout(rng, r=2, c=2, n=6, p=3)
        w = np.ones(lay.size, dtype=np.int64)
        w[7] = 0
        d = weighted_ssp(lay, WeightSet.from_vector(lay, w))
        W, E, R_row, R_col, cm, rm, colm, gm = reference_ssp(lay, w)
        assert np.allclose(d.W, W, atol=1e-10)
        assert np.allclose(d.means.row, rm, atol=1e-12)
        assert np.allclose(d.means.col, colm, atol=1e-12)

    def test_unit_weight_decomposition_identity(self):
        rng = np.random.default_rng(13)
        lay = random_layout(rng, r=3, c=2, n=8, p=2)
        d = classical_ssp(lay)
        Y = lay.observations
        centered = Y - Y.mean(axis=0)
        total = centered.T @ centered
        recon = d.R_row + d.R_col + (d.E - d.W) + d.W
        assert np.allclose(recon, total, rtol=1e-8)
        # interaction SSP is positive semidefinite
        assert np.linalg.eigvalsh(d.E - d.W).min() > -1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(14)
        lay = random_layout(rng, p=3)
        d = classical_ssp(lay)
        for M in (d.W, d.E, d.R_row, d.R_col):
            assert np.abs(M - M.T).max() < 1e-10

    def test_cell_mean_coded_data_zero_within(self):
        # constant within every cell, rows differ: W = 0, R_row != 0
        cells = np.zeros((2, 2, 3, 2))
        cells[1, :, :, 0] = 1.0
        d = classical_ssp(layout_from_cells(cells))
        assert np.abs(d.W).max() == 0.0
        assert d.R_row[0, 0] > 0.0

    def test_identical_values_give_zero_matrices(self):
        cells = np.full((2, 2, 3, 2), 7.5)
        d = classical_ssp(layout_from_cells(cells))
        for M in (d.W, d.E, d.R_row, d.R_col):
            assert np.abs(M).max() == 0.0

    def test_wiped_cell_raises(self):
        lay = random_layout(np.random.default_rng(15), r=2, c=2, n=4)
        w = np.ones(lay.size, dtype=np.int64)
        w[(lay.row_label == 0) & (lay.col_label == 0)] = 0
        with pytest.raises(CellWiped):
            weighted_ssp(lay, WeightSet.from_vector(lay, w))

    def test_degenerate_weights_raise(self):
        lay = random_layout(np.random.default_rng(16), r=2, c=2, n=4, p=3)
        w = np.zeros(lay.size, dtype=np.int64)
        w[:4] = 1
        with pytest.raises(DegenerateWeights):
            weighted_ssp(lay, WeightSet.from_vector(lay, w))


class TestWilksLambda:
    def test_scalar_ratio(self):
        rng = np.random.default_rng(17)
        lay = random_layout(rng, r=2, c=3, n=4, p=1)
        d = classical_ssp(lay)
        lam = wilks_lambda(d, Hypothesis.ROW_EFFECTS, Model.WITH_INTERACTIONS)
        assert lam == pytest.approx(
            d.W[0, 0] / (d.W[0, 0] + d.R_row[0, 0]), rel=1e-12
        )
        lam_add = wilks_lambda(d, Hypothesis.ROW_EFFECTS, Model.ADDITIVE_ONLY)
        assert lam_add == pytest.approx(
            d.E[0, 0] / (d.E[0, 0] + d.R_row[0, 0]), rel=1e-12
        )

    def test_no_row_effect_gives_lambda_one(self):
        # identical cell pattern in every row makes row means equal
        rng = np.random.default_rng(18)
        block = rng.normal(size=(1, 2, 4, 2))
        cells = np.concatenate([block, block], axis=0)
        d = classical_ssp(layout_from_cells(cells))
        assert wilks_lambda(d, Hypothesis.ROW_EFFECTS, Model.ADDITIVE_ONLY) == 1.0

    def test_interaction_requires_model(self):
        d = classical_ssp(random_layout(np.random.default_rng(19)))
        with pytest.raises(DomainError):
            wilks_lambda(d, Hypothesis.INTERACTIONS, Model.ADDITIVE_ONLY)

    def test_singular_within_matrix_raises(self):
        cells = np.zeros((2, 2, 3, 2))
        cells[1, :, :, 0] = 1.0  # W = 0
        d = classical_ssp(layout_from_cells(cells))
        with pytest.raises(NotPositiveDefinite):
            wilks_lambda(d, Hypothesis.INTERACTIONS, Model.WITH_INTERACTIONS)

    def test_lambda_in_unit_interval(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            d = classical_ssp(random_layout(rng, p=2))
            for model in Model:
                for hyp in hypotheses_for(model):
                    lam = wilks_lambda(d, hyp, model)
                    assert 0.0 < lam <= 1.0

    def test_affine_invariance(self):
        rng = np.random.default_rng(21)
        lay = random_layout(rng, r=3, c=2, n=6, p=2)
        A = np.array([[1.5, -0.4], [0.3, 0.9]])
        b = np.array([2.0, -7.0])
        lay_t = TwoWayLayout(
            lay.r, lay.c, lay.n, lay.p,
            lay.observations @ A.T + b, lay.row_label, lay.col_label,
        )
        d0, d1 = classical_ssp(lay), classical_ssp(lay_t)
        for model in Model:
            for hyp in hypotheses_for(model):
                assert wilks_lambda(d0, hyp, model) == pytest.approx(
                    wilks_lambda(d1, hyp, model), rel=1e-8
                )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(22)
        lay = random_layout(rng)
        perm = rng.permutation(lay.size)
        lay_p = TwoWayLayout(
            lay.r, lay.c, lay.n, lay.p,
            lay.observations[perm], lay.row_label[perm], lay.col_label[perm],
        )
        d0, d1 = classical_ssp(lay), classical_ssp(lay_p)
        for hyp in hypotheses_for(Model.WITH_INTERACTIONS):
            assert wilks_lambda(d0, hyp, Model.WITH_INTERACTIONS) == pytest.approx(
                wilks_lambda(d1, hyp, Model.WITH_INTERACTIONS), rel=1e-12
            )


class TestBartlett:
    def test_dfs(self):
        lay = random_layout(np.random.default_rng(23), r=3, c=2, n=30)
        assert bartlett_dfs(lay, Model.WITH_INTERACTIONS, Hypothesis.ROW_EFFECTS) == (174, 2)
        assert bartlett_dfs(lay, Model.WITH_INTERACTIONS, Hypothesis.COL_EFFECTS) == (174, 1)
        assert bartlett_dfs(lay, Model.WITH_INTERACTIONS, Hypothesis.INTERACTIONS) == (174, 2)
        assert bartlett_dfs(lay, Model.ADDITIVE_ONLY, Hypothesis.ROW_EFFECTS) == (176, 2)

    def test_reference_value(self):
        # -(174 - (2 - 2 + 1)/2) * ln(0.9) referred to chi2 with 4 df
        stat = -(174 - 0.5) * math.log(0.9)
        expected = float(chi2.sf(stat, 4))
        assert bartlett_pvalue(0.9, 2, 174, 2) == pytest.approx(expected, rel=1e-10)
        assert expected == pytest.approx(0.0011, abs=2e-4)

    def test_lambda_one_gives_pvalue_one(self):
        assert bartlett_pvalue(1.0, 2, 174, 2) == 1.0

    def test_monotone_in_lambda(self):
        # stay above the deep tail so p-values do not underflow to 0
        ps = [bartlett_pvalue(lam, 2, 174, 2) for lam in (0.99, 0.95, 0.9, 0.8)]
        assert all(a > b for a, b in zip(ps, ps[1:]))

    def test_validation(self):
        with pytest.raises(DomainError):
            bartlett_pvalue(0.0, 2, 174, 2)
        with pytest.raises(DomainError):
            bartlett_pvalue(1.1, 2, 174, 2)
        with pytest.raises(DomainError):
            bartlett_pvalue(0.9, 2, 0, 2)


class _Entry:
    def __init__(self, delta, q):
        self.delta = delta
        self.q = q


class TestCalibratedPvalue:
    def test_reduces_to_plain_chi2(self):
        lam = 0.82
        expected = float(chi2.sf(-math.log(lam), 4))
        assert calibrated_pvalue(lam, _Entry(1.0, 4.0)) == pytest.approx(
            expected, rel=1e-10
        )

    def test_reference_value(self):
        p = calibrated_pvalue(0.9, _Entry(0.0145, 4.2))
        expected = float(chi2.sf(-math.log(0.9) / 0.0145, 4.2))
        assert p == pytest.approx(expected, rel=1e-9)

    def test_lambda_one(self):
        assert calibrated_pvalue(1.0, _Entry(0.5, 4.0)) == 1.0

    def test_validation(self):
        with pytest.raises(DomainError):
            calibrated_pvalue(1.5, _Entry(0.5, 4.0))
        with pytest.raises(DomainError):
            calibrated_pvalue(0.9, _Entry(-1.0, 4.0))


class TestRobustWeights:
    def test_clean_data_trims_near_nominal(self):
        rng = RngStream(1)
        cells = rng.generator().standard_normal((3, 2, 30, 2))
        lay = layout_from_cells(cells)
        ws = robust_weights(lay, McdConfig(), rng.substream(1))
        frac = 1.0 - ws.grand_total / lay.size
        assert 0.005 <= frac <= 0.045

    def test_planted_outliers_zero_weighted(self):
        rng = RngStream(2)
        cells = rng.generator().standard_normal((3, 2, 30, 2))
        shift = 10.0 * math.sqrt(chi2_quantile(0.999, 2) / 2)
        cells[2, 1, :3] = rng.substream(5).generator().normal(
            loc=shift, scale=0.25, size=(3, 2)
        )
        lay = layout_from_cells(cells)
        ws = robust_weights(lay, McdConfig(), rng.substream(1))
        planted = (lay.row_label == 2) & (lay.col_label == 1)
        planted_idx = np.flatnonzero(planted)[:3]
        assert np.all(ws.w[planted_idx] == 0)

    def test_cell_too_small_raises(self):
        lay = random_layout(np.random.default_rng(24), r=2, c=2, n=3, p=2)
        with pytest.raises(DimensionError):
            robust_weights(lay, McdConfig(), RngStream(0))

    def test_constant_cells_raise(self):
        cells = np.zeros((2, 2, 6, 2))
        cells[1, :, :, 0] = 1.0
        with pytest.raises(SingularSubset):
            robust_weights(layout_from_cells(cells), McdConfig(), RngStream(0))

    def test_deterministic(self):
        rng = np.random.default_rng(25)
        lay = random_layout(rng, r=2, c=2, n=12, p=2)
        a = robust_weights(lay, McdConfig(), RngStream(7))
        b = robust_weights(lay, McdConfig(), RngStream(7))
        assert np.array_equal(a.w, b.w)


class TestRunManova:
    def test_classical_reports(self):
        rng = np.random.default_rng(26)
        lay = random_layout(rng, r=3, c=2, n=10, p=2)
        reports = run_manova(lay, Model.WITH_INTERACTIONS, "cla")
        assert [rep.hypothesis for rep in reports] == [
            Hypothesis.ROW_EFFECTS, Hypothesis.COL_EFFECTS, Hypothesis.INTERACTIONS,
        ]
        for rep in reports:
            assert rep.method == "cla"
            assert isinstance(rep.approx, BartlettApprox)
            assert 0.0 <= rep.p_value <= 1.0
            assert 0.0 < rep.lambda_ <= 1.0

    def test_additive_model_skips_interaction(self):
        lay = random_layout(np.random.default_rng(27))
        reports = run_manova(lay, Model.ADDITIVE_ONLY, "cla")
        assert len(reports) == 2

    def test_rank_method_invariant_to_monotone_warp(self):
        rng = np.random.default_rng(28)
        lay = random_layout(rng, r=2, c=2, n=8, p=2)
        warped = TwoWayLayout(
            lay.r, lay.c, lay.n, lay.p,
            np.exp(lay.observations), lay.row_label, lay.col_label,
        )
        rep0 = run_manova(lay, Model.WITH_INTERACTIONS, "rnk")
        rep1 = run_manova(warped, Model.WITH_INTERACTIONS, "rnk")
        for a, b in zip(rep0, rep1):
            assert a.lambda_ == b.lambda_
            assert a.p_value == b.p_value

    def test_mcd_requires_calibration_source(self):
        lay = random_layout(np.random.default_rng(29), n=8)
        with pytest.raises(MissingCalibration):
            run_manova(lay, Model.WITH_INTERACTIONS, "mcd")

    def test_mcd_with_stub_source(self):
        class StubSource:
            def entry_for(self, p, r, c, n, model, hypothesis):
                return _Entry(0.02, 4.0)

        rng = RngStream(30)
        lay = layout_from_cells(rng.generator().standard_normal((3, 2, 15, 2)))
        reports = run_manova(
            lay, Model.WITH_INTERACTIONS, "mcd",
            McdConfig(), StubSource(), rng.substream(1),
        )
        assert len(reports) == 3
        for rep in reports:
            assert isinstance(rep.approx, CalibratedApprox)
            assert rep.approx.delta == 0.02
            assert 0.0 <= rep.p_value <= 1.0

    def test_unknown_method_rejected(self):
        lay = random_layout(np.random.default_rng(31))
        with pytest.raises(DomainError):
            run_manova(lay, Model.WITH_INTERACTIONS, "mle")


class TestScalarAnovaOracle:
    """p = 1 statistics against hand-coded ANOVA sums of squares."""

    @staticmethod
    def anova_oracle(cells):
        y = cells[..., 0]
        r, c, n = y.shape
        gm = y.mean()
        cm = y.mean(axis=2)
        rm = y.mean(axis=(1, 2))
        colm = y.mean(axis=(0, 2))
        ssw = ((y - cm[:, :, None]) ** 2).sum()
        ssa = c * n * ((rm - gm) ** 2).sum()
        ssb = r * n * ((colm - gm) ** 2).sum()
        sse = ((y - rm[:, None, None] - colm[None, :, None] + gm) ** 2).sum()
        return ssw, sse, ssa, ssb

    def test_lambdas_match(self):
        rng = np.random.default_rng(32)
        for _ in range(5):
            r, c, n = rng.integers(2, 4), rng.integers(2, 4), int(rng.integers(4, 9))
            cells = rng.normal(size=(int(r), int(c), n, 1))
            lay = layout_from_cells(cells)
            d = classical_ssp(lay)
            ssw, sse, ssa, ssb = self.anova_oracle(cells)
            cases = {
                (Hypothesis.INTERACTIONS, Model.WITH_INTERACTIONS): ssw / sse,
                (Hypothesis.ROW_EFFECTS, Model.WITH_INTERACTIONS): ssw / (ssw + ssa),
                (Hypothesis.COL_EFFECTS, Model.WITH_INTERACTIONS): ssw / (ssw + ssb),
                (Hypothesis.ROW_EFFECTS, Model.ADDITIVE_ONLY): sse / (sse + ssa),
                (Hypothesis.COL_EFFECTS, Model.ADDITIVE_ONLY): sse / (sse + ssb),
            }
            for (hyp, model), expected in cases.items():
                assert wilks_lambda(d, hyp, model) == pytest.approx(
                    expected, rel=1e-9
                )
