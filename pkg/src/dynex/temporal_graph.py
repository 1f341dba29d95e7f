"""Temporal network data model, edge-list I/O and the held-out split protocol.

A temporal network is a sequence of undirected edge multisets ``E^(1..T)``
over a vertex set that only ever grows. Vertices are identified externally
by string labels and internally by dense 0-based integer ids assigned in
order of first appearance. Slices are 1-based.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError

log = logging.getLogger(__name__)

__all__ = [
    "EdgeSlice",
    "TemporalNetwork",
    "load_temporal_edgelist",
    "write_temporal_edgelist",
    "neighbors",
    "collapse_parallel",
    "sparsity_ratio",
    "split_last_slice",
    "holdout_split",
]


def _frozen(a, dtype=np.int64):
    a = np.array(a, dtype=dtype).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EdgeSlice:
    """Edges of one time slice, stored canonically with ``u <= v``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64).reshape(-1)
        v = np.asarray(self.v, dtype=np.int64).reshape(-1)
        if u.shape != v.shape:
            raise DomainError("edge endpoint arrays differ in length")
        object.__setattr__(self, "u", _frozen(np.minimum(u, v)))
        object.__setattr__(self, "v", _frozen(np.maximum(u, v)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "EdgeSlice":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0, np.int64), np.empty(0, np.int64))
        a = np.asarray(pairs, dtype=np.int64)
        return cls(a[:, 0], a[:, 1])

    @property
    def N(self) -> int:
        return int(self.u.size)

    def __len__(self):
        return self.N

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.u.tolist(), self.v.tolist()))

    def counts(self) -> Counter:
        return Counter(self.pairs())

    def distinct(self) -> list[tuple[int, int]]:
        """Distinct pairs in order of first occurrence."""
        return list(dict.fromkeys(self.pairs()))


class TemporalNetwork:
    """An immutable sequence of edge slices over a growing vertex set.

    Args:
        labels: external label of each vertex id.
        slices: one `EdgeSlice` per time step, slice ``t`` at index ``t-1``.

    Every labelled vertex must take part in at least one edge.
    """

    def __init__(self, labels: Sequence[str], slices: Sequence[EdgeSlice]):
        self._labels = tuple(str(x) for x in labels)
        self._slices = tuple(slices)
        if not self._slices:
            raise DomainError("a temporal network needs at least one slice")
        n = len(self._labels)
        if len(set(self._labels)) != n:
            raise DomainError("vertex labels must be unique")
        arrival = np.full(n, 0, dtype=np.int64)
        for t, s in enumerate(self._slices, start=1):
            if s.N and (s.u.min() < 0 or s.v.max() >= n):
                raise DomainError(f"slice {t} references an unknown vertex id")
            for ids in (s.u, s.v):
                fresh = ids[arrival[ids] == 0]
                arrival[fresh] = t
        if n and (arrival == 0).any():
            missing = [self._labels[i] for i in np.flatnonzero(arrival == 0)[:5]]
            raise DomainError(f"vertices without any edge: {missing}")
        arrival.setflags(write=False)
        self._arrival = arrival
        counts = np.array(
            [np.count_nonzero(arrival <= t) for t in range(1, self.T + 1)], dtype=np.int64
        )
        counts.setflags(write=False)
        self._vcount = counts
        self._index = {lab: i for i, lab in enumerate(self._labels)}

    @classmethod
    def from_labeled_edges(
        cls, T: int, edges: Iterable[tuple[int, str, str]]
    ) -> "TemporalNetwork":
        """Build from ``(t, u_label, v_label)`` triples, ids by first appearance.

        Triples are consumed in slice order, keeping the given order within a
        slice.
        """
        if T < 1:
            raise DomainError("T must be at least 1")
        per_slice: list[list[tuple[str, str]]] = [[] for _ in range(T)]
        for t, a, b in edges:
            if not 1 <= t <= T:
                raise DomainError(f"slice index {t} outside 1..{T}")
            per_slice[t - 1].append((str(a), str(b)))
        index: dict[str, int] = {}
        slices = []
        for rows in per_slice:
            pairs = []
            for a, b in rows:
                for lab in (a, b):
                    if lab not in index:
                        index[lab] = len(index)
                pairs.append((index[a], index[b]))
            slices.append(EdgeSlice.from_pairs(pairs))
        return cls(list(index), slices)

    # -- basic accessors -------------------------------------------------

    @property
    def T(self) -> int:
        return len(self._slices)

    @property
    def slices(self) -> tuple[EdgeSlice, ...]:
        return self._slices

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    @property
    def n_vertices(self) -> int:
        return len(self._labels)

    @property
    def arrival(self) -> np.ndarray:
        """1-based first slice of participation, indexed by vertex id."""
        return self._arrival

    @property
    def n_edges(self) -> int:
        return sum(s.N for s in self._slices)

    def slice(self, t: int) -> EdgeSlice:
        self._check_t(t)
        return self._slices[t - 1]

    def vertex_count_at(self, t: int) -> int:
        """``|V^(t)|``, with ``|V^(0)| = 0``."""
        if t == 0:
            return 0
        self._check_t(t)
        return int(self._vcount[t - 1])

    def newcomers(self) -> np.ndarray:
        """``|V^(t)| - |V^(t-1)|`` for t = 1..T."""
        return np.diff(np.concatenate([[0], self._vcount]))

    def vertex_id(self, label: str) -> int:
        try:
            return self._index[str(label)]
        except KeyError:
            raise DomainError(f"unknown vertex label {label!r}") from None

    def has_label(self, label: str) -> bool:
        return str(label) in self._index

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All edges flattened in slice order as (t 1-based, u, v)."""
        ts = [np.full(s.N, t, np.int64) for t, s in enumerate(self._slices, start=1)]
        return (
            np.concatenate(ts),
            np.concatenate([s.u for s in self._slices]),
            np.concatenate([s.v for s in self._slices]),
        )

    def slice_offsets(self) -> np.ndarray:
        """Start offset of each slice in `edge_arrays`, plus the total."""
        return np.concatenate([[0], np.cumsum([s.N for s in self._slices])]).astype(np.int64)

    def labeled_edges(self) -> list[tuple[int, str, str]]:
        lab = self._labels
        return [
            (t, lab[a], lab[b])
            for t, s in enumerate(self._slices, start=1)
            for a, b in s.pairs()
        ]

    def neighbors(self, v: int, t: int) -> set[int]:
        return neighbors(self, v, t)

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise DomainError(f"slice index {t} outside 1..{self.T}")

    # Equality is label-level: same T, and the same multiset of labelled
    # pairs in every slice. Ids are an ingestion artefact.
    def _key(self):
        out = []
        for t, a, b in self.labeled_edges():
            out.append((t,) + tuple(sorted((a, b))))
        return (self.T, Counter(out))

    def __eq__(self, other):
        if not isinstance(other, TemporalNetwork):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash((self.T, self.n_vertices, self.n_edges))

    def __repr__(self):
        return (
            f"TemporalNetwork(T={self.T}, vertices={self.n_vertices}, "
            f"edges={[s.N for s in self._slices]})"
        )


def load_temporal_edgelist(path, sep: str | None = None) -> TemporalNetwork:
    """Read a ``t u v`` edge list (``#`` lines are comments).

    ``sep=None`` splits on runs of whitespace. Slices with no lines between
    1 and the largest ``t`` are empty.
    """
    triples = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise DomainError(f"cannot read {path}: {e.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split() if sep is None else [f.strip() for f in line.split(sep)]
            if len(fields) != 3 or not all(fields):
                raise ParseError(f"expected 't u v', got {line!r}", lineno)
            try:
                t = int(fields[0])
            except ValueError:
                raise ParseError(f"slice index {fields[0]!r} is not an integer", lineno) from None
            if t < 1:
                raise DomainError(f"line {lineno}: slice index must be >= 1, got {t}")
            triples.append((t, fields[1], fields[2]))
    if not triples:
        raise DomainError(f"{path}: no edges found")
    T = max(t for t, _, _ in triples)
    triples.sort(key=lambda r: r[0])  # stable: keeps file order within slices
    return TemporalNetwork.from_labeled_edges(T, triples)


def write_temporal_edgelist(net: TemporalNetwork, path, sep: str = " ") -> None:
    """Write lines sorted by (t, u, v) on internal ids."""
    lab = net.labels
    with open(path, "w", encoding="utf-8") as fh:
        for t, s in enumerate(net.slices, start=1):
            order = np.lexsort((s.v, s.u))
            for a, b in zip(s.u[order].tolist(), s.v[order].tolist()):
                fh.write(f"{t}{sep}{lab[a]}{sep}{lab[b]}\n")


def neighbors(net: TemporalNetwork, v: int, t: int) -> set[int]:
    """Distinct vertices sharing at least one edge with ``v`` in slice ``t``."""
    s = net.slice(t)
    out = set(s.v[s.u == v].tolist())
    out.update(s.u[s.v == v].tolist())
    return out


def collapse_parallel(net: TemporalNetwork, labels=None, seed: int = 0):
    """Reduce every slice to a simple edge set.

    With per-edge community ``labels`` (one array per slice), each collapsed
    edge takes the majority label of its parallel copies; ties are broken
    uniformly at random with a generator seeded by ``seed``.

    Returns:
        ``(collapsed_net, collapsed_labels)``; the second item is None when
        no labels were given.
    """
    if labels is not None:
        if len(labels) != net.T:
            raise DomainError(f"expected labels for {net.T} slices, got {len(labels)}")
        for t, (s, lab) in enumerate(zip(net.slices, labels), start=1):
            if len(lab) != s.N:
                raise DomainError(f"slice {t}: {len(lab)} labels for {s.N} edges")
    rng = np.random.default_rng(seed)
    triples = []
    out_labels = [] if labels is not None else None
    names = net.labels
    for t, s in enumerate(net.slices, start=1):
        groups: dict[tuple[int, int], list] = {}
        for i, p in enumerate(s.pairs()):
            groups.setdefault(p, []).append(i)
        slice_labels = []
        for (a, b), idx in groups.items():
            triples.append((t, names[a], names[b]))
            if labels is not None:
                votes = Counter(np.asarray(labels[t - 1])[idx].tolist())
                top = max(votes.values())
                winners = sorted(k for k, c in votes.items() if c == top)
                pick = winners[0] if len(winners) == 1 else winners[rng.integers(len(winners))]
                slice_labels.append(pick)
        if labels is not None:
            out_labels.append(np.asarray(slice_labels, dtype=np.int64))
    return TemporalNetwork.from_labeled_edges(net.T, triples), out_labels


def sparsity_ratio(edge_count: int, vertex_count: int) -> float:
    """``log|E| / log|V|``; below 2 indicates a sparse graph."""
    if vertex_count < 2:
        raise DomainError(f"vertex_count must be >= 2, got {vertex_count}")
    if edge_count < 1:
        raise DomainError(f"edge_count must be >= 1, got {edge_count}")
    return math.log(edge_count) / math.log(vertex_count)


def split_last_slice(net: TemporalNetwork, folds: int, seed: int) -> list[list[tuple[int, int]]]:
    """Partition the distinct edges of slice T into ``folds`` near-equal parts."""
    if folds < 2:
        raise DomainError(f"folds must be >= 2, got {folds}")
    distinct = net.slice(net.T).distinct()
    if not distinct:
        raise DomainError("the last slice has no edges to hold out")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(distinct))
    return [[distinct[i] for i in part] for part in np.array_split(perm, folds)]


def holdout_split(net: TemporalNetwork, folds: int, seed: int):
    """Cross-validation folds over the last slice.

    For fold ``f`` the training network holds slices ``1..T-1`` untouched
    plus every slice-T edge whose pair is not in part ``f``. The held-out
    set is part ``f`` expressed in the training network's ids; pairs with an
    endpoint that never appears in training cannot be scored and are dropped
    with a warning.

    Returns:
        list of ``(train, heldout)`` with ``heldout`` a set of ``(u, v)``.
    """
    parts = split_last_slice(net, folds, seed)
    names = net.labels
    out = []
    for f, part in enumerate(parts):
        held = set(part)
        triples = [
            (t, a, b)
            for t, s in enumerate(net.slices, start=1)
            for (ia, ib) in s.pairs()
            if t < net.T or (ia, ib) not in held
            for a, b in [(names[ia], names[ib])]
        ]
        train = TemporalNetwork.from_labeled_edges(net.T, triples)
        heldout = set()
        dropped = 0
        for a, b in part:
            la, lb = names[a], names[b]
            if train.has_label(la) and train.has_label(lb):
                x, y = train.vertex_id(la), train.vertex_id(lb)
                heldout.add((min(x, y), max(x, y)))
            else:
                dropped += 1
        if dropped:
            warnings.warn(
                f"fold {f}: dropped {dropped} held-out pairs with a vertex unseen in training",
                stacklevel=2,
            )
        out.append((train, heldout))
    return out
