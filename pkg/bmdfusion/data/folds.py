"""bmd-binned stratified k-fold assignment"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from bmdfusion.config import BIN_EDGES, DEFAULT_SEED
from bmdfusion.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


def bin_index(bmd, edges: Sequence[float] = BIN_EDGES) -> np.ndarray:
    """half-open bins [lo, hi), last bin closed; values outside clamp to the edge bins"""
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, np.asarray(bmd, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass
class FoldPlan:
    n_folds: int
    assignments: Dict[str, int]  # sample id -> test fold, in dataset order
    bin_edges: Tuple[float, ...] = BIN_EDGES
    seed: int = DEFAULT_SEED
    bins: Dict[str, int] = field(default_factory=dict)

    def _check(self, fold: int) -> None:
        if not 0 <= fold < self.n_folds:
            raise ConfigError(f"fold {fold} outside 0..{self.n_folds - 1}")

    def test_ids(self, fold: int) -> List[str]:
        self._check(fold)
        return [i for i, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> List[str]:
        self._check(fold)
        return [i for i, f in self.assignments.items() if f != fold]

    def fold_sizes(self) -> List[int]:
        return [sum(1 for f in self.assignments.values() if f == k) for k in range(self.n_folds)]

    def bin_counts(self) -> np.ndarray:
        """[n_bins, n_folds] sample counts"""
        counts = np.zeros((len(self.bin_edges) - 1, self.n_folds), dtype=int)
        for sample_id, fold in self.assignments.items():
            counts[self.bins[sample_id], fold] += 1
        return counts

    def to_dict(self) -> Dict:
        return {
            "n_folds": self.n_folds,
            "seed": self.seed,
            "bin_edges": list(self.bin_edges),
            "assignments": [{"id": i, "fold": f, "bin": self.bins.get(i)} for i, f in self.assignments.items()],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FoldPlan":
        try:
            rows = data["assignments"]
            return cls(
                n_folds=int(data["n_folds"]),
                assignments={r["id"]: int(r["fold"]) for r in rows},
                bin_edges=tuple(data["bin_edges"]),
                seed=int(data["seed"]),
                bins={r["id"]: int(r["bin"]) for r in rows if r.get("bin") is not None},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed fold plan: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "FoldPlan":
        try:
            with open(Path(path), "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except OSError as exc:
            raise DataError(f"cannot read fold plan {path}: {exc}") from exc


def stratified_folds(manifest, n_folds: int = 10, seed: int = DEFAULT_SEED,
                     edges: Sequence[float] = BIN_EDGES) -> FoldPlan:
    """shuffles each bin with the seed, then deals its ids round-robin over the folds.

    The dealing counter carries over from one bin to the next, so fold sizes
    stay within one of each other as well as per-bin counts.
    """
    if n_folds < 2:
        raise ConfigError(f"n_folds must be >= 2, got {n_folds}")
    ids = list(manifest.ids)
    if len(ids) < n_folds:
        raise ConfigError(f"{len(ids)} samples cannot fill {n_folds} folds")
    bins = bin_index(manifest.bmd, edges)
    rng = np.random.default_rng(seed)
    fold_of: Dict[str, int] = {}
    counter = 0
    for b in range(len(edges) - 1):
        members = [ids[i] for i in np.flatnonzero(bins == b)]
        for k in rng.permutation(len(members)):
            fold_of[members[k]] = counter % n_folds
            counter += 1
    plan = FoldPlan(
        n_folds=n_folds,
        assignments={i: fold_of[i] for i in ids},
        bin_edges=tuple(float(e) for e in edges),
        seed=seed,
        bins={i: int(b) for i, b in zip(ids, bins)},
    )
    logger.debug("fold sizes %s", plan.fold_sizes())
    return plan
