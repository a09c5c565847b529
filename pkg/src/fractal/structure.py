"""Combinatorial p.c.f. self-similar structures.

A structure is N contraction symbols acting on a boundary V_0 of n0 points,
plus a gluing table saying which first-level boundary points coincide. The
quotient vertex sets V_m are computed by union-find over the raw pairs
(word, boundary index) with |word| = m; no geometry is involved.

Indices are 1-based everywhere in this module (symbols and boundary points),
matching the JSON format.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind
from pydantic import BaseModel, Field, ValidationError

from src.core.errors import (
    ConfigError,
    DisconnectedStructure,
    DuplicateGluing,
    InvalidSymbolIndex,
    LevelOverflow,
    NotAnchored,
    StructureError,
)

logger = logging.getLogger(__name__)

Word = tuple[int, ...]

DEFAULT_MAX_CELLS = 10_000_000


class VertexId(NamedTuple):
    """Canonical label of a vertex of V_m: the smallest raw pair in its class."""
    word: Word
    index: int


@dataclass(frozen=True)
class GluingRule:
    """psi_{left_symbol}(q_{left_index}) = psi_{right_symbol}(q_{right_index})."""
    left_symbol: int
    left_index: int
    right_symbol: int
    right_index: int

    def key(self) -> tuple[tuple[int, int], tuple[int, int]]:
        a = (self.left_symbol, self.left_index)
        b = (self.right_symbol, self.right_index)
        return (a, b) if a <= b else (b, a)

    def to_list(self) -> list[int]:
        return [self.left_symbol, self.left_index, self.right_symbol, self.right_index]


@dataclass(frozen=True)
class Anchor:
    """q_a = psi_symbol(q_index); a fixed point when index == a."""
    symbol: int
    index: int


class StructureSpec(BaseModel):
    """JSON form of a structure.

    Example:
        >>> StructureSpec(n_symbols=2, boundary_size=2, gluing=[[1, 2, 2, 1]],
        ...               anchors={"1": 1, "2": 2})
    """
    n_symbols: int
    boundary_size: int
    gluing: list[list[int]]
    anchors: dict[str, int | list[int]] = Field(default_factory=dict)
    name: str = "custom"

    model_config = {"extra": "ignore"}


@dataclass(frozen=True)
class VertexSet:
    """Quotient vertex set V_m with per-cell incidence.

    Attributes:
        level: m
        vertices: canonical labels, sorted
        incidence: (N^m, n0) int array; row = cell in lexicographic word order,
            column = boundary index - 1, entry = position in ``vertices``
    """
    level: int
    vertices: list[VertexId]
    incidence: np.ndarray
    lookup: dict[VertexId, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.vertices)

    @property
    def identifications(self) -> int:
        return int(self.incidence.size) - self.size

    def cell_vertices(self, word: Word, n_symbols: int) -> list[VertexId]:
        row = self.incidence[cell_index(word, n_symbols)]
        return [self.vertices[i] for i in row]


def cell_index(word: Word, n_symbols: int) -> int:
    """Position of word among W_|word| in lexicographic order.

    Example:
        >>> cell_index((2, 1), 3)
        3
    """
    idx = 0
    for s in word:
        idx = idx * n_symbols + (s - 1)
    return idx


def word_at(index: int, level: int, n_symbols: int) -> Word:
    """Inverse of cell_index."""
    symbols = []
    for _ in range(level):
        index, rem = divmod(index, n_symbols)
        symbols.append(rem + 1)
    return tuple(reversed(symbols))


def format_word(word: Word) -> str:
    """Digit-string form used in CSV/JSON ("" for the empty word, dots above 9 symbols)."""
    if any(s > 9 for s in word):
        return ".".join(str(s) for s in word)
    return "".join(str(s) for s in word)


@dataclass(frozen=True, eq=False)
class SelfSimilarStructure:
    """Symbols, boundary size, gluing table and anchors.

    Immutable after construction; vertex sets are memoized per level.
    """
    n_symbols: int
    boundary_size: int
    gluing: tuple[GluingRule, ...]
    anchors: Mapping[int, Anchor]
    name: str = "custom"
    max_cells: int = DEFAULT_MAX_CELLS
    _vertex_cache: dict[int, VertexSet] = field(default_factory=dict, init=False, repr=False)

    # Words and cells

    def cell_count(self, m: int) -> int:
        """|W_m|; raises LevelOverflow above the configured cap."""
        if m < 0:
            raise StructureError(f"Level must be >= 0, got {m}")
        count = self.n_symbols ** m
        if count > self.max_cells:
            raise LevelOverflow(
                f"Level {m} has {count} cells, above the cap of {self.max_cells} "
                f"(raise limits.max_cells to allow it)"
            )
        return count

    def words(self, m: int) -> list[Word]:
        """W_m in lexicographic order.

        Example:
            >>> structure.words(1)
            [(1,), (2,), (3,)]
        """
        self.cell_count(m)
        return list(itertools.product(range(1, self.n_symbols + 1), repeat=m))

    def child_cells(self, word: Word) -> list[Word]:
        return [word + (i,) for i in range(1, self.n_symbols + 1)]

    def subtree_block(self, word: Word, depth: int) -> tuple[int, int]:
        """Cell positions [start, stop) of word·W_depth inside W_{|word|+depth}."""
        start = cell_index(word, self.n_symbols) * self.n_symbols ** depth
        return start, start + self.n_symbols ** depth

    # Anchors

    @property
    def fully_anchored(self) -> bool:
        return all(a in self.anchors for a in range(1, self.boundary_size + 1))

    def anchor(self, index: int) -> Anchor:
        try:
            return self.anchors[index]
        except KeyError:
            raise NotAnchored(
                f"Boundary point q_{index} has no anchor; levels beyond 1 and the "
                f"embedding of V_0 into V_1 need every boundary point anchored"
            ) from None

    def descend(self, word: Word, index: int, level: int) -> tuple[Word, int]:
        """Rewrite the point psi_word(q_index) as a raw pair of the given level."""
        while len(word) < level:
            a = self.anchor(index)
            word = word + (a.symbol,)
            index = a.index
        return word, index

    # Vertex sets

    def vertex_set(self, m: int) -> VertexSet:
        """V_m by a fresh union-find over W_m x {1..n0}.

        The generating relation is the gluing table applied below every prefix,
        each side rewritten at level m through the anchors.
        """
        if m in self._vertex_cache:
            return self._vertex_cache[m]
        self.cell_count(m)
        uf = UnionFind()
        for word in self.words(m):
            for a in range(1, self.boundary_size + 1):
                uf[(word, a)]
        for k in range(m):
            for prefix in self.words(k):
                for rule in self.gluing:
                    left = self.descend(prefix + (rule.left_symbol,), rule.left_index, m)
                    right = self.descend(prefix + (rule.right_symbol,), rule.right_index, m)
                    uf.union(left, right)
        vs = self._collect(m, uf)
        logger.debug("V_%d of %s: %d vertices, %d identifications", m, self.name, vs.size, vs.identifications)
        self._vertex_cache[m] = vs
        return vs

    def refine_vertex_set(self, previous: VertexSet) -> VertexSet:
        """V_{m+1} from V_m: descend every class one level, then glue siblings."""
        m = previous.level + 1
        self.cell_count(m)
        uf = UnionFind()
        for word in self.words(m):
            for a in range(1, self.boundary_size + 1):
                uf[(word, a)]
        by_class: dict[int, list[tuple[Word, int]]] = {}
        for c, word in enumerate(self.words(previous.level)):
            for a in range(1, self.boundary_size + 1):
                by_class.setdefault(int(previous.incidence[c, a - 1]), []).append(
                    self.descend(word, a, m)
                )
        for members in by_class.values():
            for other in members[1:]:
                uf.union(members[0], other)
        for word in self.words(previous.level):
            for rule in self.gluing:
                uf.union(
                    (word + (rule.left_symbol,), rule.left_index),
                    (word + (rule.right_symbol,), rule.right_index),
                )
        return self._collect(m, uf)

    def _collect(self, m: int, uf: UnionFind) -> VertexSet:
        classes = [min(block) for block in uf.to_sets()]
        members: dict[tuple[Word, int], VertexId] = {}
        for block in uf.to_sets():
            label = VertexId(*min(block))
            for raw in block:
                members[raw] = label
        vertices = sorted(VertexId(*c) for c in classes)
        lookup = {v: i for i, v in enumerate(vertices)}
        incidence = np.empty((self.n_symbols ** m, self.boundary_size), dtype=np.int64)
        for c, word in enumerate(self.words(m)):
            for a in range(1, self.boundary_size + 1):
                incidence[c, a - 1] = lookup[members[(word, a)]]
        return VertexSet(level=m, vertices=vertices, incidence=incidence, lookup=lookup)

    def boundary_positions(self) -> list[int]:
        """Positions of q_1..q_n0 inside V_1."""
        v1 = self.vertex_set(1)
        out = []
        for a in range(1, self.boundary_size + 1):
            word, index = self.descend((), a, 1)
            out.append(int(v1.incidence[cell_index(word, self.n_symbols), index - 1]))
        return out

    def embed(self, k: int, n: int) -> np.ndarray:
        """Positions in V_n of the vertices of V_k (k <= n)."""
        if k > n:
            raise StructureError(f"Cannot embed V_{k} into shallower V_{n}")
        vk = self.vertex_set(k)
        vn = self.vertex_set(n)
        out = np.empty(vk.size, dtype=np.int64)
        for i, v in enumerate(vk.vertices):
            word, index = self.descend(v.word, v.index, n)
            out[i] = vn.incidence[cell_index(word, self.n_symbols), index - 1]
        return out

    def to_spec(self) -> StructureSpec:
        anchors: dict[str, int | list[int]] = {}
        for a, anc in sorted(self.anchors.items()):
            anchors[str(a)] = anc.symbol if anc.index == a else [anc.symbol, anc.index]
        return StructureSpec(
            n_symbols=self.n_symbols,
            boundary_size=self.boundary_size,
            gluing=[r.to_list() for r in self.gluing],
            anchors=anchors,
            name=self.name,
        )


def vertex_set(structure: SelfSimilarStructure, m: int) -> VertexSet:
    return structure.vertex_set(m)


def words(structure: SelfSimilarStructure, m: int) -> list[Word]:
    return structure.words(m)


def child_cells(structure: SelfSimilarStructure, word: Word) -> list[Word]:
    return structure.child_cells(word)


def _parse_anchor(key: str, value: int | list[int], n_symbols: int, n0: int) -> tuple[int, Anchor]:
    try:
        a = int(key)
    except ValueError:
        raise InvalidSymbolIndex(f"Anchor key {key!r} is not a boundary index") from None
    if not 1 <= a <= n0:
        raise InvalidSymbolIndex(f"Anchor key {a} outside boundary indices 1..{n0}")
    if isinstance(value, int):
        symbol, index = value, a
    elif isinstance(value, list) and len(value) == 2:
        symbol, index = value
    else:
        raise InvalidSymbolIndex(f"Anchor for q_{a} must be a symbol or [symbol, index], got {value!r}")
    if not 1 <= symbol <= n_symbols:
        raise InvalidSymbolIndex(f"Anchor for q_{a} references symbol {symbol} outside 1..{n_symbols}")
    if not 1 <= index <= n0:
        raise InvalidSymbolIndex(f"Anchor for q_{a} references boundary index {index} outside 1..{n0}")
    return a, Anchor(symbol=symbol, index=index)


def build_structure(
    spec: StructureSpec | dict[str, Any],
    max_cells: int = DEFAULT_MAX_CELLS,
) -> SelfSimilarStructure:
    """Validate a structure description.

    Raises:
        InvalidSymbolIndex: A gluing or anchor entry is out of range, or glues a cell to itself
        DuplicateGluing: The same identification appears twice
        DisconnectedStructure: The level-1 cell graph is not connected

    Example:
        >>> s = build_structure({"n_symbols": 3, "boundary_size": 3,
        ...     "gluing": [[1, 2, 2, 1], [1, 3, 3, 1], [2, 3, 3, 2]],
        ...     "anchors": {"1": 1, "2": 2, "3": 3}})
        >>> s.vertex_set(1).size
        6
    """
    if isinstance(spec, dict):
        try:
            spec = StructureSpec.model_validate(spec)
        except ValidationError as e:
            raise ConfigError(f"Invalid structure description: {e}") from None

    n, n0 = spec.n_symbols, spec.boundary_size
    if n < 2:
        raise StructureError(f"Need at least 2 symbols, got {n}")
    if n0 < 2:
        raise StructureError(f"Need at least 2 boundary points, got {n0}")
    if not spec.gluing:
        raise StructureError("Gluing table is empty")

    rules: list[GluingRule] = []
    seen: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for entry in spec.gluing:
        if len(entry) != 4:
            raise InvalidSymbolIndex(f"Gluing entry must be [i, a, j, b], got {entry}")
        i, a, j, b = entry
        for sym in (i, j):
            if not 1 <= sym <= n:
                raise InvalidSymbolIndex(f"Gluing {entry} references symbol {sym} outside 1..{n}")
        for idx in (a, b):
            if not 1 <= idx <= n0:
                raise InvalidSymbolIndex(f"Gluing {entry} references boundary index {idx} outside 1..{n0}")
        if i == j:
            raise InvalidSymbolIndex(f"Gluing {entry} identifies points of the same cell {i}")
        rule = GluingRule(i, a, j, b)
        if rule.key() in seen:
            raise DuplicateGluing(f"Gluing {entry} appears more than once")
        seen.add(rule.key())
        rules.append(rule)

    anchors = dict(_parse_anchor(k, v, n, n0) for k, v in spec.anchors.items())

    graph = nx.Graph()
    graph.add_nodes_from(range(1, n + 1))
    graph.add_edges_from((r.left_symbol, r.right_symbol) for r in rules)
    if not nx.is_connected(graph):
        parts = [sorted(c) for c in nx.connected_components(graph)]
        raise DisconnectedStructure(f"Level-1 cells split into components {parts}")

    structure = SelfSimilarStructure(
        n_symbols=n,
        boundary_size=n0,
        gluing=tuple(rules),
        anchors=anchors,
        name=spec.name,
        max_cells=max_cells,
    )
    logger.debug("Built structure %s: N=%d, n0=%d, %d gluing rules", spec.name, n, n0, len(rules))
    return structure
