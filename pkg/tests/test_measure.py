"""Tests for cell energy measures, dominant measures and audits."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.analysis.measure import (
    CellMeasureTable,
    additivity_gap,
    atom_profile,
    audit_cell_tables,
    boundary_dominant,
    cell_energy_measure,
    cell_gram_tables,
    cell_projections,
    dominant_from_gram,
    dominant_measure,
    gram_with_boundary_dominant,
    inequality_audit,
    polarization_gap,
    rn_ratio,
    scaling_audit,
    singularity_check,
    total_mass_gap,
)
from src.core.errors import LevelTooShallow, NonpositiveCoefficient
from src.core.scalars import Mode, format_scalar
from src.fractal.harmonic import basis_function, energy, linear_combination, random_function
from src.fractal.zoo import from_family

F = Fraction


def test_corner_cell_measures(sg, sg_basis):
    table = cell_energy_measure(sg, sg_basis[0], m=1)
    assert table.values.tolist() == [F(12, 5), F(4, 5), F(4, 5)]
    assert table.total() == 4
    assert table.meta == "nu[h_q1]"


def test_float_matches_rational(sg_float):
    table = cell_energy_measure(sg_float, basis_function(sg_float, 1), m=1)
    assert np.allclose(table.values, [2.4, 0.8, 0.8], atol=1e-12)


def test_mutual_measure(sg, sg_basis):
    table = cell_energy_measure(sg, sg_basis[0], sg_basis[1], m=1)
    assert table.value((1,)) == F(-6, 5)
    assert table.total() == -2


def test_mutual_symmetric(hata, hata_basis):
    fg = cell_energy_measure(hata, hata_basis[0], hata_basis[2], m=3).values
    gf = cell_energy_measure(hata, hata_basis[2], hata_basis[0], m=3).values
    assert fg.tolist() == gf.tolist()


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_total_mass(hata, m):
    f = random_function(hata, seed=11, level=0)
    assert total_mass_gap(hata, f, m) == 0


def test_total_mass_deeper_function(sg):
    f = random_function(sg, seed=5, level=2)
    assert total_mass_gap(sg, f, 2) == 0
    assert total_mass_gap(sg, f, 4) == 0


def test_additivity(sg, sg_basis):
    coarse = cell_energy_measure(sg, sg_basis[1], m=2)
    fine = cell_energy_measure(sg, sg_basis[1], m=3)
    assert additivity_gap(coarse, fine) == 0.0
    assert fine.coarsen().values.tolist() == coarse.values.tolist()
    assert fine.subtree((2,)).sum() == cell_energy_measure(sg, sg_basis[1], m=1).value((2,))


def test_level_below_function(sg):
    f = random_function(sg, seed=1, level=2)
    with pytest.raises(LevelTooShallow):
        cell_energy_measure(sg, f, m=1)


def test_rn_ratio_example(sg, sg_basis):
    dom = boundary_dominant(sg, 1)
    nu = cell_energy_measure(sg, sg_basis[0], m=1)
    ratio = rn_ratio(nu, dom.table)
    assert ratio.value((1,)) == F(3, 5)
    assert ratio.violations == []


def test_rn_ratio_zero_conventions():
    num = CellMeasureTable(1, np.array([F(1), F(0), F(0)], dtype=object), 3, "num")
    den = CellMeasureTable(1, np.array([F(2), F(0), F(4)], dtype=object), 3, "den")
    ratio = rn_ratio(num, den)
    assert ratio.values == [F(1, 2), F(1), F(0)]
    assert ratio.violations == []

    num = CellMeasureTable(1, np.array([F(1), F(-3), F(0)], dtype=object), 3, "num")
    ratio = rn_ratio(num, den)
    assert ratio.violations == [1]
    assert ratio.values[1] == -math.inf
    assert ratio.violation_words() == ["2"]


def test_dominant_coefficients(sg, sg_basis):
    dom = dominant_measure(sg, [(2, sg_basis[0]), ("1/2", sg_basis[1])], 1)
    assert dom.table.values.tolist() == [2 * F(12, 5) + F(4, 5) / 2, 2 * F(4, 5) + F(12, 5) / 2, F(8, 5) + F(2, 5)]
    assert dom.labels == ["h_q1", "h_q2"]
    with pytest.raises(NonpositiveCoefficient):
        dominant_measure(sg, [(0, sg_basis[0])], 1)
    with pytest.raises(NonpositiveCoefficient):
        dominant_measure(sg, [(1, sg_basis[0]), (-1, sg_basis[1])], 1)


def test_boundary_dominant_symmetric(sg):
    dom = boundary_dominant(sg, 1)
    assert dom.table.values.tolist() == [4, 4, 4]


def test_singularity_on_hata(hata, hata_basis):
    nu1 = cell_energy_measure(hata, hata_basis[0], m=1)
    nu2 = cell_energy_measure(hata, hata_basis[1], m=1)
    assert nu1.value((2,)) == 0
    report = singularity_check(nu1, nu2)
    assert report.only_second == [1]
    assert report.only_first == []
    assert not report.mutually_absolutely_continuous
    # absolute continuity fails for nu_{h_q2} against nu_{h_q1}
    assert rn_ratio(nu2, nu1).violations == [1]


def test_zero_mask_float():
    table = CellMeasureTable(1, np.array([1.0, 1e-20, 2.0]), 3)
    assert table.zero_mask(1e-14).tolist() == [False, True, False]


@settings(max_examples=20, deadline=None)
@given(seed_f=st.integers(0, 10_000), seed_g=st.integers(0, 10_000))
def test_inequalities_hold(sg, seed_f, seed_g):
    f = random_function(sg, seed_f, level=1)
    g = random_function(sg, seed_g, level=1)
    audit = inequality_audit(sg, f, g, 2)
    assert audit.ok


def test_schwarz_equality_for_multiples(sg, sg_basis):
    g = sg_basis[2]
    f = linear_combination(sg, [-2], [g], constant=1)
    audit = inequality_audit(sg, f, g, 2)
    assert audit.ok
    assert audit.schwarz_equality_cells == 9


def test_scaling_identity(sg):
    f = random_function(sg, seed=21, level=1)
    g = random_function(sg, seed=22, level=2)
    audit = scaling_audit(sg, f, g, (1, 2), 2)
    assert audit.exact
    assert len(audit.lhs) == 9


def test_scaling_identity_hata(hata, hata_basis):
    audit = scaling_audit(hata, hata_basis[1], hata_basis[2], (2, 1, 1), 3)
    assert audit.exact


def test_no_atoms(sg, sg_basis):
    profile = atom_profile(sg, sg_basis[0], [1, 2, 3, 4])
    assert profile.max_share[0] == pytest.approx(0.6)
    assert profile.strictly_decreasing


def test_polarization(hata):
    f = random_function(hata, 3, level=1)
    g = random_function(hata, 4, level=2)
    assert polarization_gap(hata, f, g, 3) == 0


def test_gram_tables_thread_independent(sg):
    fns = [random_function(sg, s, level=1) for s in (1, 2)]
    one = cell_gram_tables(sg, fns, 3, threads=1)
    two = cell_gram_tables(sg, fns, 3, threads=2)
    assert one.shape == (27, 2, 2)
    assert one.tolist() == two.tolist()


def test_table_value_wrong_level(sg, sg_basis):
    table = cell_energy_measure(sg, sg_basis[0], m=2)
    with pytest.raises(LevelTooShallow):
        table.value((1,))
    assert table.rows()[0] == {"word": "11", "value": format_scalar(table.values[0])}


def test_single_sweep_matches_separate_tables(sg, sg_basis):
    f = random_function(sg, 9, level=2)
    gram, dom = gram_with_boundary_dominant(sg, [f], 3)
    assert gram.shape == (27, 1, 1)
    assert gram.tolist() == cell_gram_tables(sg, [f], 3).tolist()
    assert dom.table.values.tolist() == boundary_dominant(sg, 3).table.values.tolist()
    assert dom.labels == ["h_q1", "h_q2", "h_q3"]

    basis_gram, basis_dom = gram_with_boundary_dominant(sg, sg_basis, 2)
    assert basis_gram.shape == (9, 3, 3)
    assert basis_dom.table.values.tolist() == boundary_dominant(sg, 2).table.values.tolist()


def test_dominant_from_gram_checks_components(sg, sg_basis):
    gram = cell_gram_tables(sg, sg_basis[:2], 1)
    components = [(2, sg_basis[0]), ("1/2", sg_basis[1])]
    dom = dominant_from_gram(sg, gram, components, 1)
    assert dom.table.values.tolist() == dominant_measure(sg, components, 1).table.values.tolist()
    with pytest.raises(NonpositiveCoefficient):
        dominant_from_gram(sg, gram, [(1, sg_basis[0]), (0, sg_basis[1])], 1)
    with pytest.raises(ValueError):
        dominant_from_gram(sg, gram, [(1, sg_basis[0])], 1)


def test_rational_descent_matches_float(sg, sg_float):
    exact = cell_gram_tables(sg, [basis_function(sg, 1), basis_function(sg, 3)], 4)
    approx = cell_gram_tables(sg_float, [basis_function(sg_float, 1), basis_function(sg_float, 3)], 4)
    assert exact.dtype == object
    assert all(isinstance(x, Fraction) for x in exact.flat)
    assert np.allclose(exact.astype(np.float64), approx, rtol=1e-12, atol=1e-15)


def test_projections_rebuild_gram(hata):
    f = random_function(hata, 3, level=1)
    g = random_function(hata, 4, level=2)
    PB = cell_projections(hata, [f, g], 3)
    gram = cell_gram_tables(hata, [f, g], 3)
    weights = hata.cell_weights(3)
    for i in range(PB.shape[0]):
        u, v = PB[i, :, 0], PB[i, :, 1]
        assert -2 * (u @ hata.D @ v) / weights[i] == gram[i, 0, 1]


def test_total_bound_comes_from_graph_energy(sg):
    f = random_function(sg, 5, level=1)
    g = random_function(sg, 6, level=1)
    gram = cell_gram_tables(sg, [f, g], 2)
    bound = 2 * energy(sg, linear_combination(sg, [1, -1], [f, g]))
    a, b, c_fg = gram[:, 0, 0], gram[:, 1, 1], gram[:, 0, 1].copy()
    assert audit_cell_tables(a, b, c_fg, bound, 2).total_violations == 0

    c_fg[4] -= bound + 1
    audit = audit_cell_tables(a, b, c_fg, bound, 2)
    assert audit.total_violations == 1
    assert not audit.ok


@pytest.mark.slow
@pytest.mark.parametrize("family", ["gasket:2,2", "hata:1/2"])
def test_inequalities_over_many_pairs(family):
    hs = from_family(family, Mode.FLOAT)[1]
    for seed in range(1000):
        f = random_function(hs, 2 * seed, level=1)
        g = random_function(hs, 2 * seed + 1, level=1)
        audit = inequality_audit(hs, f, g, 6)
        assert audit.energy_violations == 0, seed
        assert audit.schwarz_violations == 0, seed
