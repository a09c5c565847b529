"""Tests for Gram fields, ranks and the index estimate."""

import time
from fractions import Fraction

import numpy as np
import pytest

from src.analysis.index import (
    exact_rank,
    gram_field,
    index_estimate,
    index_field,
    principal_rank_check,
    psd_violations,
    rank_estimate,
    rank_one_factor,
    stability_check,
)
from src.analysis.measure import boundary_dominant, cell_gram_tables, dominant_measure, gram_with_boundary_dominant
from src.analysis.stats import weighted_quantile
from src.core.config_loader import IndexSettings
from src.core.errors import LevelMismatch
from src.fractal.harmonic import boundary_function

F = Fraction


def test_rank_estimate():
    assert rank_estimate(np.diag([1.0, 1e-15, 0.0]))[0] == 1
    assert rank_estimate(np.eye(3))[0] == 3
    assert rank_estimate(np.zeros((2, 2)))[0] == 0


def test_exact_rank():
    M = np.array([[F(1), F(2)], [F(2), F(4)]], dtype=object)
    assert exact_rank(M) == 1
    assert exact_rank(np.eye(2)) == 2


def test_rank_one_factor():
    M = np.array([[F(4), F(2)], [F(2), F(1)]], dtype=object)
    zeta, residual = rank_one_factor(M)
    assert residual == 0.0
    assert np.allclose(zeta, [2.0, 1.0])
    assert rank_one_factor(np.eye(2))[1] == pytest.approx(2 ** -0.5)


@pytest.fixture(scope="module")
def hata_field(hata, hata_basis):
    dom = boundary_dominant(hata, 4)
    gf = gram_field(hata, hata_basis, dom, 4)
    return dom, gf, index_field(gf)


def test_hata_spine_is_only_rank_two(hata_field):
    _, gf, field = hata_field
    assert len(gf) == 16
    assert field.ranks[0] == 2
    assert (field.ranks[1:] == 1).all()
    assert field.zero_cells == []


def test_hata_rank_one_cells_factor_exactly(hata_field):
    _, gf, _ = hata_field
    for i in (1, 5, 15):
        assert rank_one_factor(gf.exact_matrix(i))[1] == 0.0
        assert exact_rank(gf.exact_matrix(i)) == 1
    assert exact_rank(gf.exact_matrix(0)) == 2


def test_hata_spine_is_shrinking(hata, hata_basis, hata_field):
    dom, _, field = hata_field
    report = index_estimate(hata, hata_basis, field, dom, IndexSettings(refine_depth=2))
    assert report.bulk_rank == 1
    assert report.esssup_proxy == 1
    assert [e.word for e in report.exceptional] == ["1111"]
    spine = report.exceptional[0]
    assert spine.shrinking
    assert spine.high_rank_share[0] == 1.0
    assert len(spine.high_rank_share) == 3


def test_histogram_accounts_for_all_mass(hata, hata_basis, hata_field):
    dom, _, field = hata_field
    report = index_estimate(hata, hata_basis, field, dom)
    assert sum(report.histogram.values()) + report.trimmed_mass == pytest.approx(1.0)
    data = report.to_dict()
    assert set(data) >= {"esssup_proxy", "bulk_rank", "histogram", "sigma_ratio_quantiles", "trimmed"}
    assert set(data["sigma_ratio_quantiles"]) == {"0.1", "0.5", "0.9"}


def test_gasket_positivity(sg, sg_basis):
    dom = boundary_dominant(sg, 3)
    gf = gram_field(sg, sg_basis, dom, 3)
    assert psd_violations(gf) == []
    assert principal_rank_check(gf) == []
    field = index_field(gf)
    # three harmonic functions span a two-dimensional space modulo constants
    assert field.ranks.max() <= 2
    assert (field.sigma_ratio <= 1.0).all()


def test_stability_under_reweighting(hata, hata_basis):
    dom_a = boundary_dominant(hata, 3)
    dom_b = dominant_measure(hata, [(1, hata_basis[0]), (2, hata_basis[1]), (3, hata_basis[2])], 3)
    report = stability_check(hata, hata_basis, dom_a, dom_b, 3)
    assert report.compared == 8
    assert report.disagreements == []
    assert report.excluded == []


def test_dominant_level_mismatch(sg, sg_basis):
    dom = boundary_dominant(sg, 2)
    with pytest.raises(LevelMismatch):
        gram_field(sg, sg_basis, dom, 3)


def test_index_rows(hata_field):
    _, _, field = hata_field
    rows = field.rows()
    assert rows[0]["word"] == "1111"
    assert rows[0]["rank"] == 2
    assert set(rows[0]) == {"word", "rank", "sigma_ratio", "mass"}


def test_precomputed_gram_is_reused(sg, sg_basis):
    gram, dom = gram_with_boundary_dominant(sg, sg_basis, 3)
    reused = gram_field(sg, sg_basis, dom, 3, gram=gram)
    fresh = gram_field(sg, sg_basis, dom, 3)
    assert reused.gram is gram
    assert np.array_equal(reused.matrices, fresh.matrices)
    with pytest.raises(LevelMismatch):
        gram_field(sg, sg_basis, dom, 3, gram=cell_gram_tables(sg, sg_basis, 2))


def test_batched_ranks_match_single_estimates(hata_field):
    _, gf, field = hata_field
    for i, M in enumerate(gf.matrices):
        rank, sigma = rank_estimate(M)
        assert field.ranks[i] == rank
        assert field.sigma_ratio[i] == pytest.approx(sigma[1] / sigma[0])


@pytest.mark.slow
def test_hata_deep_spine(hata, hata_basis):
    gram, dom = gram_with_boundary_dominant(hata, hata_basis, 10)
    gf = gram_field(hata, hata_basis, dom, 10, gram=gram)
    field = index_field(gf)
    assert len(gf) == 1024
    assert field.ranks[0] == 2
    assert (field.ranks[1:] == 1).all()
    report = index_estimate(hata, hata_basis, field, dom)
    assert report.esssup_proxy == 1


@pytest.mark.slow
def test_gasket_pipeline_time(sg, sg_basis):
    start = time.perf_counter()
    gram, dom = gram_with_boundary_dominant(sg, sg_basis, 8)
    gf = gram_field(sg, sg_basis, dom, 8, gram=gram)
    field = index_field(gf)
    violations = psd_violations(gf)
    elapsed = time.perf_counter() - start
    assert len(field.ranks) == 6561
    assert violations == []
    assert elapsed < 5.0


@pytest.mark.slow
def test_gasket_sigma_ratio_shrinks(sg_float):
    basis = [boundary_function(sg_float, [1 if a == q else 0 for a in range(3)]) for q in range(3)]
    medians = []
    for m in (2, 4, 6, 8):
        gram, dom = gram_with_boundary_dominant(sg_float, basis, m)
        field = index_field(gram_field(sg_float, basis, dom, m, gram=gram))
        medians.append(weighted_quantile(field.sigma_ratio, field.masses, 0.5))
    assert all(b < a for a, b in zip(medians, medians[1:]))
    assert medians[-1] < 1e-4


@pytest.mark.slow
def test_ranks_stable_under_single_reference(sg, sg_basis):
    dom_basis = boundary_dominant(sg, 6)
    for seed in range(20):
        g = boundary_function(sg, np.random.default_rng(seed).integers(-5, 6, size=3).tolist())
        if g.is_constant():
            continue
        dom_g = dominant_measure(sg, [(1, g)], 6)
        report = stability_check(sg, sg_basis, dom_basis, dom_g, 6)
        assert report.excluded == []
        assert report.disagreements == []
        assert report.compared == 729
