"""Light graph convolution over the user-item graph and its adjoint.

Embedding tables are ``(M + N, d)`` arrays with users in rows ``0..M-1``
and items after them. Each layer is two half-steps over compressed
adjacency (items -> users, users -> items), both reading layer ``l - 1``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .graph import InteractionGraph


def _check_table(graph: InteractionGraph, table: np.ndarray) -> None:
    if table.ndim != 2 or table.shape[0] != graph.num_nodes:
        raise ValueError(f"expected a ({graph.num_nodes}, d) table, got shape {table.shape}")


def step(graph: InteractionGraph, x: np.ndarray, mode: str = "symmetric") -> np.ndarray:
    """One propagation layer: ``x^(l) = P x^(l-1)``."""
    to_users, to_items = graph.operators(mode)
    M = graph.num_users
    out = np.empty_like(x)
    out[:M] = to_users @ x[M:]
    out[M:] = to_items @ x[:M]
    return out


def step_transpose(graph: InteractionGraph, g: np.ndarray, mode: str = "symmetric") -> np.ndarray:
    """``P^T g``; identical to :func:`step` in symmetric mode."""
    if mode == "symmetric":
        return step(graph, g, mode)
    to_users, to_items = graph.operators(mode)
    M = graph.num_users
    out = np.empty_like(g)
    out[:M] = to_items.T @ g[M:]
    out[M:] = to_users.T @ g[:M]
    return out


def propagate(graph: InteractionGraph, base: np.ndarray, L: int, mode: str = "symmetric") -> list[np.ndarray]:
    """Return ``[v^(0), ..., v^(L)]`` with ``v^(0)`` the base table itself."""
    if L < 0:
        raise ValueError("L must be >= 0")
    _check_table(graph, base)
    layers = [base]
    for _ in range(L):
        layers.append(step(graph, layers[-1], mode))
    return layers


def propagate_adjoint(graph: InteractionGraph, grad_layers: Sequence[np.ndarray],
                      mode: str = "symmetric") -> np.ndarray:
    """Back-propagate per-layer gradients to the base table.

    ``grad_layers[l]`` is dLoss/dv^(l); the result is dLoss/dv^(0), i.e.
    ``sum_l (P^T)^l grad_layers[l]`` evaluated Horner-style from layer L down.
    """
    if not grad_layers:
        raise ValueError("need at least one gradient layer")
    for g in grad_layers:
        _check_table(graph, g)
    if len({g.shape for g in grad_layers}) != 1:
        raise ValueError("gradient layers differ in shape")
    acc = np.array(grad_layers[-1], copy=True)
    for g in reversed(grad_layers[:-1]):
        acc = step_transpose(graph, acc, mode)
        acc += g
    return acc
