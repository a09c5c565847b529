"""Tests for words, cells and vertex sets."""

import numpy as np
import pytest

from src.core.errors import (
    ConfigError,
    DisconnectedStructure,
    DuplicateGluing,
    InvalidSymbolIndex,
    LevelOverflow,
    NotAnchored,
)
from src.fractal.structure import build_structure, cell_index, format_word, word_at
from src.fractal.zoo import HATA_SPEC, gasket_spec

SG_SPEC = {
    "n_symbols": 3,
    "boundary_size": 3,
    "gluing": [[1, 2, 2, 1], [1, 3, 3, 1], [2, 3, 3, 2]],
    "anchors": {"1": 1, "2": 2, "3": 3},
    "name": "sg",
}


def test_cell_index_roundtrip():
    assert cell_index((2, 1), 3) == 3
    assert cell_index((), 3) == 0
    for idx in range(27):
        assert cell_index(word_at(idx, 3, 3), 3) == idx
    assert word_at(5, 2, 3) == (2, 3)


def test_format_word():
    assert format_word((1, 2, 3)) == "123"
    assert format_word(()) == ""
    assert format_word((1, 12)) == "1.12"


def test_gasket_vertex_counts():
    s = build_structure(SG_SPEC)
    # |V_m| = (3^{m+1} + 3) / 2
    assert s.vertex_set(0).size == 3
    assert s.vertex_set(1).size == 6
    assert s.vertex_set(1).identifications == 3
    assert s.vertex_set(2).size == 15
    assert s.vertex_set(3).size == 42


def test_hata_vertex_count():
    s = build_structure(HATA_SPEC)
    assert s.vertex_set(1).size == 5
    assert s.vertex_set(1).identifications == 1


@pytest.mark.parametrize("spec", [SG_SPEC, HATA_SPEC, gasket_spec(2, 3)])
def test_refine_matches_fresh(spec):
    s = build_structure(spec)
    previous = s.vertex_set(1)
    for m in (2, 3):
        refined = s.refine_vertex_set(previous)
        fresh = s.vertex_set(m)
        assert refined.vertices == fresh.vertices
        assert np.array_equal(refined.incidence, fresh.incidence)
        previous = refined


def test_boundary_positions_match_embedding():
    s = build_structure(HATA_SPEC)
    assert s.embed(0, 1).tolist() == s.boundary_positions()
    # q_1 = c sits inside cell 1 as psi_1(q_3)
    v1 = s.vertex_set(1)
    assert v1.vertices[s.boundary_positions()[0]] == v1.vertices[v1.incidence[0, 2]]


def test_embed_is_injective():
    s = build_structure(SG_SPEC)
    positions = s.embed(1, 3)
    assert len(set(positions.tolist())) == s.vertex_set(1).size


def test_subtree_block():
    s = build_structure(SG_SPEC)
    assert s.subtree_block((2,), 1) == (3, 6)
    assert s.subtree_block((1, 3), 2) == (18, 27)
    assert s.child_cells((1,)) == [(1, 1), (1, 2), (1, 3)]


def test_words_lexicographic():
    s = build_structure(SG_SPEC)
    assert s.words(1) == [(1,), (2,), (3,)]
    assert s.words(2)[3] == (2, 1)


def test_disconnected():
    spec = dict(SG_SPEC, gluing=[[1, 2, 2, 1]])
    with pytest.raises(DisconnectedStructure):
        build_structure(spec)


def test_duplicate_gluing():
    spec = dict(SG_SPEC, gluing=SG_SPEC["gluing"] + [[2, 1, 1, 2]])
    with pytest.raises(DuplicateGluing):
        build_structure(spec)


@pytest.mark.parametrize("gluing", [
    [[1, 2, 4, 1], [1, 3, 3, 1], [2, 3, 3, 2]],
    [[1, 2, 2, 5], [1, 3, 3, 1], [2, 3, 3, 2]],
    [[1, 2, 1, 3], [1, 3, 3, 1], [2, 3, 3, 2]],
])
def test_invalid_gluing(gluing):
    with pytest.raises(InvalidSymbolIndex):
        build_structure(dict(SG_SPEC, gluing=gluing))


def test_invalid_anchor():
    with pytest.raises(InvalidSymbolIndex):
        build_structure(dict(SG_SPEC, anchors={"1": 7}))
    with pytest.raises(InvalidSymbolIndex):
        build_structure(dict(SG_SPEC, anchors={"4": 1}))


def test_malformed_description():
    with pytest.raises(ConfigError):
        build_structure({"n_symbols": "three"})


def test_level_overflow():
    s = build_structure(SG_SPEC, max_cells=10)
    s.vertex_set(2)
    with pytest.raises(LevelOverflow):
        s.vertex_set(3)


def test_unanchored_levels():
    s = build_structure(dict(SG_SPEC, anchors={}))
    assert s.vertex_set(1).size == 6
    assert not s.fully_anchored
    with pytest.raises(NotAnchored):
        s.vertex_set(2)


def test_spec_roundtrip():
    s = build_structure(HATA_SPEC)
    again = build_structure(s.to_spec())
    assert again.anchors == s.anchors
    assert again.vertex_set(2).vertices == s.vertex_set(2).vertices
