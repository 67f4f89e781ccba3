"""Bipartite user-item interaction graph and edge-list loading."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

NORM_MODES = ("symmetric", "left")
EDGE_FORMATS = ("auto", "pairs", "adjacency")


class EdgeListError(ValueError):
    """Raised for malformed or empty edge-list input."""


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """User-item graph stored as two CSR adjacency structures.

    ``user_indptr``/``user_items`` list N(u) for every user and
    ``item_indptr``/``item_users`` list N(i) for every item; both sides are
    sorted and duplicate free.
    """

    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_items: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, num_users: int, num_items: int, users, items,
                   user_ids: Sequence = (), item_ids: Sequence = ()) -> "InteractionGraph":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ValueError("item index out of range")
        keys = np.unique(users * num_items + items)
        u = keys // num_items
        i = keys % num_items
        # keys sorted by (u, i) give user CSR directly
        user_indptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=num_users), out=user_indptr[1:])
        order = np.lexsort((u, i))
        item_indptr = np.zeros(num_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(i, minlength=num_items), out=item_indptr[1:])
        return cls(int(num_users), int(num_items), user_indptr, i.astype(np.int64),
                   item_indptr, u[order].astype(np.int64), tuple(user_ids), tuple(item_ids))

    @property
    def num_edges(self) -> int:
        return int(self.user_items.size)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def user_neighbors(self, u: int) -> np.ndarray:
        return self.user_items[self.user_indptr[u]:self.user_indptr[u + 1]]

    def item_neighbors(self, i: int) -> np.ndarray:
        return self.item_users[self.item_indptr[i]:self.item_indptr[i + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (users, items) for every edge, sorted by user then item."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees)
        return users, self.user_items.copy()

    def edge_keys(self) -> np.ndarray:
        """Sorted ``u * N + i`` keys, used for fast membership tests."""
        if "keys" not in self._ops:
            users, items = self.edges()
            self._ops["keys"] = users * self.num_items + items
        return self._ops["keys"]

    def has_edges(self, users, items) -> np.ndarray:
        keys = self.edge_keys()
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, keys.size - 1) if keys.size else pos
        return keys[pos] == q if keys.size else np.zeros(q.shape, dtype=bool)

    def operators(self, mode: str = "symmetric") -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Normalized half-step operators ``(users<-items, items<-users)``.

        The first is M x N and maps item rows onto users, the second N x M.
        Cached per mode; the graph itself is immutable.
        """
        if mode not in NORM_MODES:
            raise ValueError(f"unknown norm mode {mode!r}")
        if mode not in self._ops:
            du = self.user_degrees.astype(np.float64)
            di = self.item_degrees.astype(np.float64)
            users, items = self.edges()
            if mode == "symmetric":
                coef = 1.0 / np.sqrt(du[users] * di[items])
                to_users = sp.csr_matrix((coef, (users, items)), shape=(self.num_users, self.num_items))
                to_items = to_users.T.tocsr()
            else:
                to_users = sp.csr_matrix((1.0 / di[items], (users, items)),
                                         shape=(self.num_users, self.num_items))
                to_items = sp.csr_matrix((1.0 / du[users], (items, users)),
                                         shape=(self.num_items, self.num_users))
            to_users.sort_indices()
            to_items.sort_indices()
            self._ops[mode] = (to_users, to_items)
        return self._ops[mode]


@dataclass
class DatasetSplit:
    """Train edges plus per-user held-out test items.

    ``orphan_users``/``orphan_items`` are test-only ids: they have a row in
    the index but no training edge, so propagation cannot rank them.
    """

    train_users: np.ndarray
    train_items: np.ndarray
    test_items: dict[int, np.ndarray]
    orphan_users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    orphan_items: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_test_edges(self) -> int:
        return int(sum(len(v) for v in self.test_items.values()))


def norm_coefficient(graph: InteractionGraph, u: int, i: int, mode: str = "symmetric",
                     target: str = "user") -> float:
    """Propagation weight on edge (u, i).

    ``target`` names the node receiving the message; it only matters in
    ``left`` mode, where the weight is 1/|N(z)| of the aggregated neighbor z.
    """
    if not graph.has_edges([u], [i])[0]:
        raise ValueError(f"({u}, {i}) is not an edge")
    du = int(graph.user_degrees[u])
    di = int(graph.item_degrees[i])
    if du == 0 or di == 0:
        raise ZeroDivisionError("zero-degree node on an edge")
    if mode == "symmetric":
        return 1.0 / math.sqrt(du * di)
    if mode == "left":
        if target == "user":
            return 1.0 / di
        if target == "item":
            return 1.0 / du
        raise ValueError(f"unknown target {target!r}")
    raise ValueError(f"unknown norm mode {mode!r}")


def _open_lines(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def _source_name(source, default: str) -> str:
    if isinstance(source, (str, os.PathLike)):
        return os.fspath(source)
    return getattr(source, "name", default)


def _tokenize(source, name: str) -> list[tuple[int, list[str]]]:
    rows = []
    for lineno, line in enumerate(_open_lines(source), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        toks = stripped.split()
        if len(toks) < 2:
            raise EdgeListError(f"{name}:{lineno}: expected '<user> <item>', got {stripped!r}")
        rows.append((lineno, toks))
    return rows


def _detect_format(rows: list[tuple[int, list[str]]]) -> str:
    # constant token count -> one interaction per line (trailing columns ignored);
    # ragged lines -> '<user> <item1> <item2> ...'
    counts = {len(t) for _, t in rows}
    return "pairs" if len(counts) <= 1 else "adjacency"


def _pairs(rows, fmt: str):
    if fmt == "auto":
        fmt = _detect_format(rows)
    if fmt not in ("pairs", "adjacency"):
        raise ValueError(f"unknown edge format {fmt!r}")
    for _, toks in rows:
        if fmt == "pairs":
            yield toks[0], toks[1]
        else:
            for it in toks[1:]:
                yield toks[0], it


def load_edge_list(train, test=None, fmt: str = "auto") -> tuple[InteractionGraph, DatasetSplit]:
    """Load a training (and optionally test) edge list.

    Ids are arbitrary tokens re-indexed densely in first-seen order, first
    over the training file and then the test file. Duplicate edges collapse.
    The returned graph holds training edges only.
    """
    train_rows = _tokenize(train, _source_name(train, "<train>"))
    if not train_rows:
        raise EdgeListError("no edges")
    test_rows = _tokenize(test, _source_name(test, "<test>")) if test is not None else []

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}

    def index(table, tok):
        idx = table.get(tok)
        if idx is None:
            idx = table[tok] = len(table)
        return idx

    tu, ti = [], []
    for u, i in _pairs(train_rows, fmt):
        tu.append(index(user_index, u))
        ti.append(index(item_index, i))
    n_train_users, n_train_items = len(user_index), len(item_index)

    test_pairs = []
    for u, i in _pairs(test_rows, fmt) if test_rows else ():
        test_pairs.append((index(user_index, u), index(item_index, i)))

    M, N = len(user_index), len(item_index)
    graph = InteractionGraph.from_edges(M, N, tu, ti, user_ids=list(user_index), item_ids=list(item_index))

    test_items: dict[int, set] = {}
    for u, i in test_pairs:
        test_items.setdefault(u, set()).add(i)
    # an interaction present in both files stays a training edge
    split_test = {}
    for u, items in test_items.items():
        arr = np.array(sorted(items), dtype=np.int64)
        arr = arr[~graph.has_edges(np.full(arr.size, u), arr)]
        if arr.size:
            split_test[u] = arr
    users, items = graph.edges()
    split = DatasetSplit(
        train_users=users,
        train_items=items,
        test_items=split_test,
        orphan_users=np.arange(n_train_users, M, dtype=np.int64),
        orphan_items=np.arange(n_train_items, N, dtype=np.int64),
    )
    return graph, split


def load_report(graph: InteractionGraph, split: DatasetSplit) -> str:
    """Key=value summary printed after loading."""
    lines = [
        f"users={graph.num_users}",
        f"items={graph.num_items}",
        f"train_edges={graph.num_edges}",
        f"test_edges={split.num_test_edges}",
        f"orphan_test_nodes={split.orphan_users.size + split.orphan_items.size}",
    ]
    return "\n".join(lines)


def _first_seen_order(graph: InteractionGraph) -> np.ndarray:
    """Edge permutation whose first appearances introduce users and items in index order.

    Reloading the written file then reproduces the same dense indices. Greedy
    never stalls for a graph produced by first-seen indexing: any stall
    would contradict the sequence the graph was loaded from.
    """
    users, items = graph.edges()
    M, N = graph.num_users, graph.num_items
    min_item = np.full(M, N, dtype=np.int64)
    deg_u = graph.user_degrees
    has = deg_u > 0
    min_item[has] = graph.user_items[graph.user_indptr[:-1][has]]
    min_user = np.full(N, M, dtype=np.int64)
    deg_i = graph.item_degrees
    has = deg_i > 0
    min_user[has] = graph.item_users[graph.item_indptr[:-1][has]]

    first_edge = []
    nu = ni = 0
    while nu < M or ni < N:
        if nu < M and min_item[nu] <= ni:
            i = int(min_item[nu])
            first_edge.append(int(graph.user_indptr[nu]))
            nu += 1
            ni += i == ni
        elif ni < N and min_user[ni] < nu:
            u = int(min_user[ni])
            pos = graph.user_indptr[u] + np.searchsorted(graph.user_neighbors(u), ni)
            first_edge.append(int(pos))
            ni += 1
        else:
            break  # only zero-degree nodes remain
    first = np.array(first_edge, dtype=np.int64)
    rest = np.setdiff1d(np.arange(users.size), first, assume_unique=True)
    return np.concatenate([first, rest])


def write_edge_list(graph: InteractionGraph, dest: str | os.PathLike | IO[str]) -> None:
    """Write training edges as '<user-id> <item-id>' lines using original ids."""
    users, items = graph.edges()
    order = _first_seen_order(graph)
    users, items = users[order], items[order]
    uid = graph.user_ids or tuple(str(x) for x in range(graph.num_users))
    iid = graph.item_ids or tuple(str(x) for x in range(graph.num_items))
    text = "".join(f"{uid[u]} {iid[i]}\n" for u, i in zip(users.tolist(), items.tolist()))
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)
