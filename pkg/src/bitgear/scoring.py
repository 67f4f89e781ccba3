"""User-item scoring over full-precision layers or a binarized table.

Three paths share one definition, ``sum_l w_l^2 <x_u^(l), x_i^(l)>``:

* ``full``: float64 teacher layers;
* ``binary_float``: ``alpha * q`` with ``q`` unpacked to +/-1 floats;
* ``bitwise``: ``alpha_u alpha_i (2 popcount(xnor(q_u, q_i) & mask) - d)``.

The two binary paths compute the per-layer code inner products as exact
integers and combine them identically, so their scores agree bit for bit.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

from .binarization import BinarizedTable, valid_mask

WL_SCHEMES = ("linear_shifted", "uniform", "inv_remaining", "exp")
PATHS = ("full", "binary_float", "bitwise")


def layer_weights(L: int, scheme: str = "linear_shifted") -> np.ndarray:
    """Segment weights ``w_0..w_L``.

    ``linear_shifted`` is ``(l + 1) / sum(l' + 1)``: linearly increasing while
    keeping layer 0 alive. The others are 1/(L+1), 1/(L+1-l) and 2^-(L+1-l).
    """
    l = np.arange(L + 1, dtype=np.float64)
    if scheme == "linear_shifted":
        return (l + 1) / (l + 1).sum()
    if scheme == "uniform":
        return np.full(L + 1, 1.0 / (L + 1))
    if scheme == "inv_remaining":
        return 1.0 / (L + 1 - l)
    if scheme == "exp":
        return 2.0 ** -(L + 1 - l)
    raise ValueError(f"unknown layer-weight scheme {scheme!r}")


def _check_weights(w, n_layers: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n_layers,):
        raise ValueError(f"expected {n_layers} layer weights, got shape {w.shape}")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("layer weights must be nonnegative with at least one positive")
    return w


def score_full(layers_u: Sequence[np.ndarray], layers_i: Sequence[np.ndarray], w) -> float:
    """Concatenation inner product of weighted full-precision segments."""
    if len(layers_u) != len(layers_i):
        raise ValueError("layer count mismatch")
    w = _check_weights(w, len(layers_u))
    return float(sum(wl * wl * np.dot(a, b) for wl, a, b in zip(w, layers_u, layers_i)))


def _code_dots_float(table: BinarizedTable, u: int, items) -> np.ndarray:
    qu = table.unpacked(u)                              # (L+1, d)
    qi = table.unpacked(table.num_users + np.asarray(items))  # (n, L+1, d)
    return np.einsum("nld,ld->nl", qi, qu)


def _code_dots_bitwise(table: BinarizedTable, u: int, items) -> np.ndarray:
    qu = table.codes[u]                                 # (L+1, W)
    qi = table.codes[table.num_users + np.asarray(items)]
    x = np.invert(np.bitwise_xor(qi, qu))
    x &= valid_mask(table.d)
    pc = np.bitwise_count(x).sum(axis=-1, dtype=np.int64)
    return 2 * pc - table.d


@intrinsic
def _popcount64(typingctx, x):
    # lowers to llvm.ctpop.i64 (a single POPCNT where the CPU has it)
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@njit(cache=True, nogil=True)
def _bitwise_kernel(item_codes, qu, mask, item_coef_t, au, d, out):
    """Fused XNOR/popcount scoring of one user against every item.

    item_codes is (N, L+1, W), item_coef_t is (L+1, N) holding w_l^2 alpha_i.
    The float accumulation order matches BinaryScorer._finish exactly.
    """
    N, L1, W = item_codes.shape
    for n in range(N):
        acc = 0.0
        for l in range(L1):
            pc = np.int64(0)
            for k in range(W):
                pc += np.int64(_popcount64(~(item_codes[n, l, k] ^ qu[l, k]) & mask[k]))
            acc += (au[l] * item_coef_t[l, n]) * (2 * pc - d)
        out[n] = acc
    return out


def _combine(table: BinarizedTable, u: int, items, dots: np.ndarray, w) -> np.ndarray:
    w = _check_weights(table.layer_weights if w is None else w, table.L + 1)
    au = table.scalers[u].astype(np.float64)
    ai = table.scalers[table.num_users + np.asarray(items)].astype(np.float64)
    # same association order as BinaryScorer._finish so both agree bit for bit
    coef = au * ((w * w) * ai)
    return (coef * dots).sum(axis=-1)


def score_binary_float(table: BinarizedTable, u: int, i: int, w=None) -> float:
    """Score from unpacked +/-1 codes; ``w`` defaults to the table's weights."""
    return float(_combine(table, u, [i], _code_dots_float(table, u, [i]), w)[0])


def score_binary_bitwise(table: BinarizedTable, u: int, i: int, w=None) -> float:
    """Score via XNOR + popcount over packed words."""
    return float(_combine(table, u, [i], _code_dots_bitwise(table, u, [i]), w)[0])


class BinaryScorer:
    """Precomputed item-side state for full-catalog scoring of a binarized table.

    The float path keeps ``(L+1, N, d)`` float32 +/-1 codes (integer inner
    products are exact in float32 for d < 2**24); the bitwise path keeps
    ``(N, L+1, W)`` packed words and runs a compiled XNOR/popcount loop.
    Both feed the same float64 combination.
    """

    def __init__(self, table: BinarizedTable, w=None, paths: Iterable[str] = ("binary_float", "bitwise")):
        self.table = table
        self.w = _check_weights(table.layer_weights if w is None else w, table.L + 1)
        M = table.num_users
        self.item_coef = ((self.w * self.w)[None, :]
                          * table.scalers[M:].astype(np.float64))         # (N, L+1)
        self.item_coef_t = np.ascontiguousarray(self.item_coef.T)         # (L+1, N)
        self.mask = valid_mask(table.d)
        paths = set(paths)
        if "bitwise" in paths:
            self.item_codes = np.ascontiguousarray(table.codes[M:])                 # (N, L+1, W)
        if "binary_float" in paths:
            signs = table.unpacked(slice(M, None)).astype(np.float32)     # (N, L+1, d)
            self.item_signs = np.ascontiguousarray(signs.transpose(1, 0, 2))

    def _finish(self, u: int, dots: np.ndarray) -> np.ndarray:
        au = self.table.scalers[u].astype(np.float64)                     # (L+1,)
        return ((au[:, None] * self.item_coef_t) * dots).sum(axis=0)

    def bitwise(self, u: int) -> np.ndarray:
        au = self.table.scalers[u].astype(np.float64)
        out = np.empty(self.table.num_items)
        return _bitwise_kernel(self.item_codes, self.table.codes[u], self.mask, self.item_coef_t,
                               au, self.table.d, out)

    def bitwise_numpy(self, u: int) -> np.ndarray:
        """Vectorized numpy version of :meth:`bitwise` (reference, slower)."""
        qu = self.table.codes[u][None, :, :]                              # (1, L+1, W)
        x = np.bitwise_xor(self.item_codes, qu)
        np.invert(x, out=x)
        x &= self.mask
        pc = np.bitwise_count(x).sum(axis=-1, dtype=np.int64)             # (N, L+1)
        return self._finish(u, (2 * pc - self.table.d).T)

    def binary_float(self, u: int) -> np.ndarray:
        qu = self.table.unpacked(u).astype(np.float32)[:, :, None]        # (L+1, d, 1)
        dots = np.matmul(self.item_signs, qu)[..., 0]                     # (L+1, N)
        return self._finish(u, dots.astype(np.int64))

    def __call__(self, u: int, path: str) -> np.ndarray:
        if path == "bitwise":
            return self.bitwise(u)
        if path == "binary_float":
            return self.binary_float(u)
        raise ValueError(f"unknown binary scoring path {path!r}")


class FullScorer:
    """Full-catalog scoring from float layers ``[v^(0), ..., v^(L)]``."""

    def __init__(self, layers: Sequence[np.ndarray], num_users: int, w):
        self.w = _check_weights(w, len(layers))
        self.num_users = num_users
        # concatenating w_l-scaled segments turns the score into one matvec
        cat = np.concatenate([wl * np.asarray(x, dtype=np.float64) for wl, x in zip(self.w, layers)], axis=1)
        self.users = cat[:num_users]
        self.items = np.ascontiguousarray(cat[num_users:])

    def __call__(self, u: int, path: str = "full") -> np.ndarray:
        return self.items @ self.users[u]


def score_all_items(source, u: int, w=None, path: str = "bitwise", num_users: int | None = None) -> np.ndarray:
    """Scores of user ``u`` against every item.

    ``source`` is a :class:`BinarizedTable` for the binary paths or a list of
    float layers for ``full`` (then ``num_users`` is required). Callers that
    score many users should hold a :class:`BinaryScorer`/:class:`FullScorer`.
    """
    if path == "full":
        if isinstance(source, BinarizedTable):
            layers = list(source.reconstruct().transpose(1, 0, 2))
            num_users = source.num_users
            w = source.layer_weights if w is None else w
        else:
            layers = source
            if num_users is None or w is None:
                raise ValueError("full path over float layers needs num_users and w")
        return FullScorer(layers, num_users, w)(u)
    if path not in ("binary_float", "bitwise"):
        raise ValueError(f"unknown scoring path {path!r}")
    return BinaryScorer(source, w, paths=[path])(u, path)


def top_k(scores: np.ndarray, K: int, exclude: Iterable[int] = ()) -> np.ndarray:
    """Indices of the ``K`` best non-excluded scores, best first.

    Ties go to the smaller index. Returns every candidate when fewer than
    ``K`` remain.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    scores = np.asarray(scores)
    cand = np.ones(scores.shape[0], dtype=bool)
    excl = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) else exclude
    if excl.size:
        cand[excl] = False
    idx = np.flatnonzero(cand)
    s = scores[idx]
    if K < idx.size:
        # keep everything tied with the K-th best so the tie-break stays exact
        kth = np.partition(s, idx.size - K)[idx.size - K]
        keep = s >= kth
        idx, s = idx[keep], s[keep]
    order = np.lexsort((idx, -s))
    return idx[order[:K]]


def top_k_rows(scores: np.ndarray, K: int, exclude_mask: np.ndarray | None = None) -> list[np.ndarray]:
    """Row-wise :func:`top_k` for a ``(n, N)`` score matrix."""
    scores = np.array(scores, dtype=np.float64, copy=True)
    if exclude_mask is not None:
        scores[exclude_mask] = -np.inf
        available = (~exclude_mask).sum(axis=1)
    else:
        available = np.full(scores.shape[0], scores.shape[1])
    order = np.argsort(-scores, axis=1, kind="stable")[:, :K]
    return [row[: min(K, int(n))] for row, n in zip(order, available)]
