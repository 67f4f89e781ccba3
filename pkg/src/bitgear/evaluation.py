"""Recall@K / NDCG@K and full test-set evaluation."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import DatasetSplit, InteractionGraph
from .scoring import top_k


def recall_at_k(ranked: Sequence[int], relevant, K: int) -> float:
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = sum(1 for x in list(ranked)[:K] if int(x) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant, K: int) -> float:
    """Binary-relevance NDCG with log2(p + 1) discount and IDCG cut at min(K, |relevant|)."""
    relevant = set(int(x) for x in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(p + 2) for p, x in enumerate(list(ranked)[:K]) if int(x) in relevant)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(K, len(relevant))))
    return dcg / idcg


@dataclass
class MetricReport:
    ks: list[int]
    recall: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    seconds: float = 0.0
    path: str = ""
    extra: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = ["K\trecall\tndcg"]
        lines += [f"{k}\t{self.recall[k]:.6f}\t{self.ndcg[k]:.6f}" for k in self.ks]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "path": self.path,
            "users": self.num_users,
            "seconds": round(self.seconds, 6),
            "metrics": [{"K": k, "recall": self.recall[k], "ndcg": self.ndcg[k]} for k in self.ks],
            **self.extra,
        }, indent=2)

    def same_metrics(self, other: "MetricReport") -> bool:
        return (self.ks == other.ks and self.num_users == other.num_users
                and self.recall == other.recall and self.ndcg == other.ndcg)


def evaluation_users(split: DatasetSplit) -> np.ndarray:
    """Users with a nonempty test set that also appear in training."""
    orphan = set(split.orphan_users.tolist())
    return np.array(sorted(u for u, items in split.test_items.items() if len(items) and u not in orphan),
                    dtype=np.int64)


def evaluate(score_fn: Callable[[int], np.ndarray], graph: InteractionGraph, split: DatasetSplit,
             Ks: Sequence[int] = (20,), threads: int = 1, path: str = "") -> MetricReport:
    """Rank every test user's catalog and average Recall/NDCG at each K.

    ``score_fn(u)`` returns scores over all items. Training items and
    test-only (orphan) items are never ranked; orphan items still count in
    the relevant set. Per-user results are independent, so the report is the
    same for any thread count.
    """
    Ks = sorted(set(int(k) for k in Ks))
    if not Ks or Ks[0] < 1:
        raise ValueError("Ks must be positive")
    kmax = Ks[-1]
    users = evaluation_users(split)
    rec = np.zeros((users.size, len(Ks)))
    nd = np.zeros((users.size, len(Ks)))
    orphan_items = split.orphan_items

    def run(chunk: np.ndarray):
        for pos in chunk:
            u = int(users[pos])
            exclude = np.concatenate([graph.user_neighbors(u), orphan_items])
            ranked = top_k(score_fn(u), kmax, exclude)
            relevant = split.test_items[u]
            for c, k in enumerate(Ks):
                rec[pos, c] = recall_at_k(ranked, relevant, k)
                nd[pos, c] = ndcg_at_k(ranked, relevant, k)

    t0 = time.perf_counter()
    chunks = np.array_split(np.arange(users.size), max(1, threads * 4)) if users.size else []
    if threads <= 1:
        for ch in chunks:
            run(ch)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, chunks))
    seconds = time.perf_counter() - t0
    if users.size:
        mean_r, mean_n = rec.mean(axis=0), nd.mean(axis=0)
    else:
        mean_r = mean_n = np.zeros(len(Ks))
    return MetricReport(Ks, {k: float(mean_r[c]) for c, k in enumerate(Ks)},
                        {k: float(mean_n[c]) for c, k in enumerate(Ks)}, int(users.size), seconds, path)
