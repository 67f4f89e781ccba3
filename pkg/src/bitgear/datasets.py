"""MovieLens-100K for desk-scale runs.

grouplens.org is often unreachable from build machines, so the raw ratings
are taken from the RecBole wheel (which ships them as an example dataset)
through ``pip download``. Nothing is redistributed with this package; the
data lands in ``$BITGEAR_DATA`` (default ``~/.cache/bitgear``).
"""

from __future__ import annotations

import glob
import os
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

RECBOLE_SPEC = "recbole==1.2.1"
INTER_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def data_dir() -> Path:
    root = os.environ.get("BITGEAR_DATA") or os.path.join(os.path.expanduser("~"), ".cache", "bitgear")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fetch_interactions(dest: Path) -> Path:
    raw = dest / "ml-100k.inter"
    if raw.exists():
        return raw
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", RECBOLE_SPEC, "-d", tmp],
                       check=True)
        wheel = glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]
        with zipfile.ZipFile(wheel) as zf:
            data = zf.read(INTER_MEMBER)
    tmp_raw = raw.with_suffix(".part")
    tmp_raw.write_bytes(data)
    tmp_raw.replace(raw)
    return raw


def split_by_user(pairs: list[tuple[str, str]], test_frac: float, seed: int):
    """Hold out ``test_frac`` of each user's items (at least one, never all)."""
    by_user: dict[str, list[str]] = {}
    for u, i in pairs:
        items = by_user.setdefault(u, [])
        if i not in items:
            items.append(i)
    rng = np.random.default_rng(seed)
    train, test = {}, {}
    for u, items in by_user.items():
        perm = rng.permutation(len(items))
        n_test = min(len(items) - 1, max(1, int(round(test_frac * len(items))))) if len(items) > 1 else 0
        test[u] = [items[k] for k in sorted(perm[:n_test])]
        train[u] = [items[k] for k in sorted(perm[n_test:])]
    return train, test


def _write_adjacency(path: Path, table: dict[str, list[str]]) -> None:
    lines = [f"{u} {' '.join(items)}\n" for u, items in table.items() if items]
    path.write_text("".join(lines), encoding="utf-8")


def movielens_100k(test_frac: float = 0.2, seed: int = 2022) -> tuple[Path, Path]:
    """Return ``(train, test)`` paths in '<user> <item1> <item2> ...' format."""
    dest = data_dir() / "ml-100k"
    dest.mkdir(parents=True, exist_ok=True)
    train_path = dest / f"train-{seed}.txt"
    test_path = dest / f"test-{seed}.txt"
    if train_path.exists() and test_path.exists():
        return train_path, test_path
    raw = _fetch_interactions(dest)
    pairs = []
    with open(raw, encoding="utf-8") as fh:
        next(fh)  # header: user_id:token item_id:token rating:float timestamp:float
        for line in fh:
            toks = line.split()
            if len(toks) >= 2:
                pairs.append((toks[0], toks[1]))
    train, test = split_by_user(pairs, test_frac, seed)
    _write_adjacency(train_path, train)
    _write_adjacency(test_path, test)
    return train_path, test_path
