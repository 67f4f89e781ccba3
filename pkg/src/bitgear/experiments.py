"""Desk-scale study: teacher vs binarized student and two ablations.

For each seed a teacher is pre-trained once, its cache is built once, and
three students are trained from it: the full objective, ``noID``
(lambda1 = 0, no distillation) and ``ste`` (straight-through estimator).
Everything is evaluated with Recall@K / NDCG@K on the test split.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field

from .config import TrainingConfig
from .evaluation import MetricReport, evaluate
from .graph import DatasetSplit, InteractionGraph
from .scoring import BinaryScorer, FullScorer, layer_weights
from .training import build_teacher_cache, pretrain_teacher, train_student

log = logging.getLogger(__name__)

VARIANTS = {
    "full": {},
    "noID": {"lambda1": 0.0},
    "ste": {"estimator": "ste"},
}


@dataclass
class SeedResult:
    seed: int
    teacher: MetricReport
    students: dict[str, MetricReport] = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class StudyResult:
    K: int
    runs: list[SeedResult]

    def median_recall(self, name: str) -> float:
        if name == "teacher":
            return statistics.median(r.teacher.recall[self.K] for r in self.runs)
        return statistics.median(r.students[name].recall[self.K] for r in self.runs)

    def table(self) -> str:
        names = ["teacher"] + list(self.runs[0].students)
        lines = ["seed\t" + "\t".join(names)]
        for r in self.runs:
            vals = [r.teacher.recall[self.K]] + [r.students[n].recall[self.K] for n in names[1:]]
            lines.append(f"{r.seed}\t" + "\t".join(f"{v:.4f}" for v in vals))
        lines.append("median\t" + "\t".join(f"{self.median_recall(n):.4f}" for n in names))
        return "\n".join(lines) + "\n"


def run_study(graph: InteractionGraph, split: DatasetSplit, config: TrainingConfig, seeds,
              variants=VARIANTS, K: int = 20, threads: int = 1) -> StudyResult:
    w = layer_weights(config.L, config.wl_scheme)
    runs = []
    for seed in seeds:
        t0 = time.perf_counter()
        cfg = config.replace(seed=seed)
        teacher = pretrain_teacher(graph, cfg)
        scorer = FullScorer(teacher.layers, graph.num_users, w)
        res = SeedResult(seed, evaluate(scorer, graph, split, [K], threads, path="full"))
        cache = build_teacher_cache(teacher.layers, graph.num_users, w, cfg.R)
        for name, changes in variants.items():
            student = train_student(graph, teacher.base, cache, cfg.replace(**changes))
            res.students[name] = evaluate(BinaryScorer(student.table, paths=["bitwise"]).bitwise,
                                          graph, split, [K], threads, path="bitwise")
            log.info("seed=%d %s recall@%d=%.4f", seed, name, K, res.students[name].recall[K])
        res.seconds = time.perf_counter() - t0
        log.info("seed=%d teacher recall@%d=%.4f (%.0fs)", seed, K, res.teacher.recall[K], res.seconds)
        runs.append(res)
    return StudyResult(K, runs)
