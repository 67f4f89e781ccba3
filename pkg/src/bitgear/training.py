"""Teacher pre-training, teacher cache and binarized student training.

Everything is plain numpy with hand-written backward passes. Scores are
``sum_l w_l^2 <x_u^(l), x_i^(l)>`` where ``x`` is the propagated layer
(teacher) or its binarization ``alpha * sign`` (student). Score gradients
for a batch are collected into one sparse user x item coefficient matrix
per layer, so the gradient w.r.t. every layer is two sparse products.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .binarization import BinarizedTable, build_tables, signs
from .config import TrainingConfig
from .graph import InteractionGraph
from .propagation import propagate, propagate_adjoint
from .scoring import layer_weights

log = logging.getLogger(__name__)

# per-purpose RNG streams derived from the run seed
STREAM_INIT = 0
STREAM_TEACHER_SAMPLING = 1
STREAM_STUDENT_SAMPLING = 2
STREAM_BENCH = 3

NEG_REJECTION_CAP = 1000


class TrainingDiverged(RuntimeError):
    pass


def rng_stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose,))))


# ---------------------------------------------------------------------------
# gradient estimators for sign()


def estimator_factor(v: np.ndarray, kind: str = "dirac_gauss", gamma: float = 1.0) -> np.ndarray:
    """Surrogate derivative of sign at ``v``.

    ``dirac_gauss`` is ``2 gamma / sqrt(pi) * exp(-(gamma v)^2)``, twice a
    Gaussian approximation of the Dirac delta (sign = 2 step - 1).
    """
    v = np.asarray(v, dtype=np.float64)
    if kind == "dirac_gauss":
        return (2.0 * gamma / math.sqrt(math.pi)) * np.exp(-np.square(gamma * v))
    if kind == "ste":
        return np.ones_like(v)
    if kind == "tanh":
        return gamma * (1.0 - np.square(np.tanh(gamma * v)))
    raise ValueError(f"unknown estimator {kind!r}")


def estimate_sign_gradient(v: np.ndarray, upstream: np.ndarray, kind: str = "dirac_gauss",
                           gamma: float = 1.0) -> np.ndarray:
    if kind == "ste":
        return np.array(upstream, dtype=np.float64, copy=True)
    return np.asarray(upstream, dtype=np.float64) * estimator_factor(v, kind, gamma)


# ---------------------------------------------------------------------------
# losses


def bpr_loss_and_score_grads(pos, neg):
    """``-ln sigmoid(pos - neg)`` and its derivatives w.r.t. pos and neg."""
    x = np.asarray(pos, dtype=np.float64) - np.asarray(neg, dtype=np.float64)
    loss = np.logaddexp(0.0, -x)
    g = expit(-x)
    return loss, -g, g


def rank_weights(R: int, scheme: str = "geometric", lambda1: float = 1.0, lambda2: float = 0.1) -> np.ndarray:
    """Weights ``w_k`` for ranks k = 1..R of the teacher's pseudo-positives."""
    k = np.arange(1, R + 1, dtype=np.float64)
    if scheme == "geometric":
        return lambda1 * np.exp(-lambda2 * k)
    if scheme == "linear_decay":
        return (R - k) / R
    if scheme == "inverse_rank":
        return 1.0 / k
    if scheme == "exp_rank":
        return 2.0 ** -k
    raise ValueError(f"unknown rank-weight scheme {scheme!r}")


def distill_loss_and_score_grads(scores: np.ndarray, wk: np.ndarray):
    """Layer-wise inference distillation for a set of users.

    ``scores[..., l, k]`` is the student's layer-l segment score for the
    teacher's k-th pseudo-positive. Returns the loss summed over users and
    the gradient w.r.t. every score.
    """
    scores = np.asarray(scores, dtype=np.float64)
    R = scores.shape[-1]
    wk = np.asarray(wk, dtype=np.float64)
    loss = float((wk * np.logaddexp(0.0, -scores)).sum() / R)
    grads = -(wk / R) * expit(-scores)
    return loss, grads


# ---------------------------------------------------------------------------
# sampling


def sample_bpr_batch(graph: InteractionGraph, B: int, rng: np.random.Generator):
    """``B`` triples (u, i, j): (u, i) uniform over edges, j uniform over non-neighbors.

    Negatives are redrawn until j is not in N(u); after
    ``NEG_REJECTION_CAP`` rounds the remaining triples get a fresh edge.
    """
    E = graph.num_edges
    if E == 0:
        raise ValueError("graph has no edges")
    users, items = graph.edges()
    full = graph.user_degrees >= graph.num_items
    if full.all():
        raise ValueError("every user interacts with every item; no negatives exist")
    e = rng.integers(E, size=B)
    u, i = users[e], items[e]
    j = rng.integers(graph.num_items, size=B)
    bad = np.flatnonzero(graph.has_edges(u, j))
    rounds = 0
    while bad.size:
        rounds += 1
        if rounds > NEG_REJECTION_CAP:
            warnings.warn(f"negative sampling hit the rejection cap for {bad.size} triples; resampling users")
            e = rng.integers(E, size=bad.size)
            u[bad], i[bad] = users[e], items[e]
            rounds = 0
        j[bad] = rng.integers(graph.num_items, size=bad.size)
        bad = bad[graph.has_edges(u[bad], j[bad])]
    return u, i, j


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimizerState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray, eta: float):
    """Bias-corrected Adam update applied in place; returns (params, state)."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between params, grads and optimizer state")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * np.square(grads)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params -= eta * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class LossParts:
    bpr: float = 0.0
    id: float = 0.0
    l2: float = 0.0

    @property
    def total(self) -> float:
        return self.bpr + self.id + self.l2


@dataclass
class TeacherCache:
    """``items[u, l]`` holds the teacher's top-R items for user u at layer l."""

    items: np.ndarray

    @property
    def R(self) -> int:
        return self.items.shape[2]

    @property
    def num_layers(self) -> int:
        return self.items.shape[1]


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("nd,nd->n", a, b)


def binarized_layers(layers):
    """``alpha * sign(v)`` per layer, scalers treated as constants."""
    out = []
    for v in layers:
        alpha = np.abs(v).mean(axis=1, keepdims=True)
        out.append(alpha * signs(v))
    return out


def loss_and_grad(graph: InteractionGraph, base: np.ndarray, batch, config: TrainingConfig,
                  w: np.ndarray, cache: TeacherCache | None = None, wk: np.ndarray | None = None,
                  quantize: bool = False) -> tuple[LossParts, np.ndarray]:
    """Batch objective and its gradient w.r.t. the base table.

    With ``quantize`` the scores use binarized layers and the gradient on
    each binarized entry passes to ``v`` through the configured estimator
    (the scaler is a constant). Without it this is the teacher objective,
    plus distillation when ``cache`` is given.
    """
    M = graph.num_users
    L = config.L
    layers = propagate(graph, base, L, config.norm_mode)
    xs = binarized_layers(layers) if quantize else layers
    w2 = np.square(np.asarray(w, dtype=np.float64))

    u, i, j = (np.asarray(a, dtype=np.int64) for a in batch)
    pos = np.zeros(u.size)
    neg = np.zeros(u.size)
    for l, x in enumerate(xs):
        pos += w2[l] * _rowdot(x[u], x[M + i])
        neg += w2[l] * _rowdot(x[u], x[M + j])
    bpr, gpos, gneg = bpr_loss_and_score_grads(pos, neg)
    parts = LossParts(bpr=float(bpr.sum()))

    rows = [np.concatenate([u, u])]
    cols = [np.concatenate([i, j])]
    vals = [np.concatenate([gpos, gneg])]
    per_layer = [(rows, cols, vals)]

    use_id = cache is not None and wk is not None and np.any(wk != 0)
    if use_id:
        if cache.num_layers != L + 1:
            raise ValueError(f"cache has {cache.num_layers} layers, config expects {L + 1}")
        users = np.unique(u)
        per_layer = []
        id_loss = 0.0
        for l, x in enumerate(xs):
            targets = cache.items[users, l]                               # (nU, R)
            seg = w2[l] * np.einsum("nd,nrd->nr", x[users], x[M + targets])
            lo, g = distill_loss_and_score_grads(seg, wk)
            id_loss += lo
            per_layer.append((rows + [np.repeat(users, targets.shape[1])],
                              cols + [targets.ravel()],
                              vals + [g.ravel()]))
        parts.id = id_loss

    grads = []
    for l, x in enumerate(xs):
        r, c, v = per_layer[l] if use_id else per_layer[0]
        coef = sp.csr_matrix((w2[l] * np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                             shape=(M, graph.num_items))
        gx = np.empty_like(x)
        gx[:M] = coef @ x[M:]
        gx[M:] = coef.T @ x[:M]
        if quantize:
            gx = estimate_sign_gradient(layers[l], gx, config.estimator, config.gamma)
        grads.append(gx)

    grad = propagate_adjoint(graph, grads, config.norm_mode)
    parts.l2 = float(config.lambda_ * np.sum(np.square(base)))
    grad += 2.0 * config.lambda_ * base
    return parts, grad


# ---------------------------------------------------------------------------
# training loops


@dataclass
class EpochRecord:
    epoch: int
    loss_bpr: float
    loss_id: float
    loss_l2: float
    lr: float
    secs: float

    def line(self) -> str:
        return (f"epoch={self.epoch} loss_bpr={self.loss_bpr:.6g} loss_id={self.loss_id:.6g} "
                f"loss_l2={self.loss_l2:.6g} lr={self.lr:g} secs={self.secs:.3f}")


@dataclass
class TrainResult:
    base: np.ndarray
    layers: list
    history: list = field(default_factory=list)
    table: BinarizedTable | None = None


def init_base(graph: InteractionGraph, config: TrainingConfig) -> np.ndarray:
    rng = rng_stream(config.seed, STREAM_INIT)
    return rng.normal(0.0, config.init_std, size=(graph.num_nodes, config.d))


def _run_epochs(graph, base, config, epochs, stream, step_fn, on_epoch):
    rng = rng_stream(config.seed, stream)
    state = OptimizerState.zeros_like(base)
    n_batches = math.ceil(graph.num_edges / config.B)
    history = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        acc = LossParts()
        for _ in range(n_batches):
            batch = sample_bpr_batch(graph, config.B, rng)
            parts, grad = step_fn(base, batch)
            if not (math.isfinite(parts.total) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: bpr={parts.bpr} "
                                       f"id={parts.id} l2={parts.l2}")
            adam_step(state, base, grad, config.eta)
            acc.bpr += parts.bpr
            acc.id += parts.id
            acc.l2 += parts.l2
        rec = EpochRecord(epoch, acc.bpr / n_batches, acc.id / n_batches, acc.l2 / n_batches,
                          config.eta, time.perf_counter() - t0)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def pretrain_teacher(graph: InteractionGraph, config: TrainingConfig,
                     on_epoch: Callable[[EpochRecord], None] | None = None,
                     epochs: int | None = None) -> TrainResult:
    """Full-precision BPR pre-training (binarization and estimator off)."""
    w = layer_weights(config.L, config.wl_scheme)
    base = init_base(graph, config)
    epochs = config.epochs_teacher if epochs is None else epochs

    def step_fn(b, batch):
        return loss_and_grad(graph, b, batch, config, w)

    history = _run_epochs(graph, base, config, epochs, STREAM_TEACHER_SAMPLING, step_fn, on_epoch)
    return TrainResult(base, propagate(graph, base, config.L, config.norm_mode), history)


def build_teacher_cache(teacher_layers, num_users: int, w, R: int, chunk: int = 1024) -> TeacherCache:
    """Per-user, per-layer top-R items under teacher segment scores.

    Ties are broken by ascending item index. ``R`` larger than the catalog
    is clamped with a warning.
    """
    n_items = teacher_layers[0].shape[0] - num_users
    if R < 1:
        raise ValueError("R must be >= 1")
    if R > n_items:
        warnings.warn(f"R={R} exceeds the {n_items} items; clamping")
        R = n_items
    w = np.asarray(w, dtype=np.float64)
    out = np.empty((num_users, len(teacher_layers), R), dtype=np.int64)
    for l, v in enumerate(teacher_layers):
        seg = w[l] * np.asarray(v, dtype=np.float64)
        users, items = seg[:num_users], seg[num_users:]
        for start in range(0, num_users, chunk):
            s = users[start:start + chunk] @ items.T
            out[start:start + chunk, l] = np.argsort(-s, axis=1, kind="stable")[:, :R]
    return TeacherCache(out)


def train_student(graph: InteractionGraph, teacher_base: np.ndarray, cache: TeacherCache,
                  config: TrainingConfig, on_epoch: Callable[[EpochRecord], None] | None = None,
                  epochs: int | None = None) -> TrainResult:
    """Binarized training warm-started from the teacher base embeddings.

    Objective per batch: student BPR + layer-wise inference distillation
    over the batch's distinct users + L2 on the base table.
    """
    if cache.num_layers != config.L + 1:
        raise ValueError(f"cache has {cache.num_layers - 1} propagation layers but config L={config.L}")
    if cache.items.shape[0] != graph.num_users:
        raise ValueError("cache and graph disagree on the number of users")
    if teacher_base.shape != (graph.num_nodes, config.d):
        raise ValueError(f"teacher base has shape {teacher_base.shape}, expected {(graph.num_nodes, config.d)}")
    w = layer_weights(config.L, config.wl_scheme)
    wk = rank_weights(cache.R, config.wk_scheme, config.lambda1, config.lambda2)
    base = np.array(teacher_base, dtype=np.float64, copy=True)
    epochs = config.epochs_student if epochs is None else epochs

    def step_fn(b, batch):
        return loss_and_grad(graph, b, batch, config, w, cache=cache, wk=wk, quantize=True)

    history = _run_epochs(graph, base, config, epochs, STREAM_STUDENT_SAMPLING, step_fn, on_epoch)
    layers = propagate(graph, base, config.L, config.norm_mode)
    return TrainResult(base, layers, history, build_tables(layers, graph.num_users, w))
