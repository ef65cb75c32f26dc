"""Anchor resolution: map a referent phrase to a belief over scene objects."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from .scene import ObjectNode, ObserverPose, SceneGraph

BELIEF_TOL = 1e-9


class EmptyGraph(ValueError):
    pass


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def string_similarity(a: str, b: str) -> float:
    """max(token-set Jaccard, 1 - edit distance / longer length)."""
    a, b = normalize_text(a), normalize_text(b)
    if a == b:
        return 1.0
    ta, tb = set(a.split()), set(b.split())
    jaccard = len(ta & tb) / len(ta | tb) if ta | tb else 1.0
    ratio = 1.0 - edit_distance(a, b) / max(len(a), len(b))
    return max(jaccard, ratio)


class SimilarityProvider(Protocol):
    def score(self, text_a: str, text_b: str) -> float: ...


class TableSimilarityProvider:
    """Symmetric lookup of fixed text-pair scores; unknown pairs score 0."""

    def __init__(self, pairs: Mapping[tuple[str, str], float] | None = None):
        self._table: dict[frozenset, float] = {}
        for (a, b), value in (pairs or {}).items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"similarity for ({a!r}, {b!r}) outside [0, 1]: {value}")
            self._table[frozenset((normalize_text(a), normalize_text(b)))] = float(value)

    @classmethod
    def from_json(cls, path) -> "TableSimilarityProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({(a, b): v for a, b, v in data["pairs"]})

    @classmethod
    def default(cls) -> "TableSimilarityProvider":
        with resources.files("spatialground.data").joinpath("similarity_pairs.json").open(encoding="utf-8") as fh:
            data = json.load(fh)
        return cls({(a, b): v for a, b, v in data["pairs"]})

    def score(self, text_a: str, text_b: str) -> float:
        a, b = normalize_text(text_a), normalize_text(text_b)
        if a == b:
            return 1.0
        return self._table.get(frozenset((a, b)), 0.0)


@dataclass(frozen=True)
class ResolverWeights:
    w_string: float = 0.5
    w_embed: float = 0.3
    w_salience: float = 0.2
    salience_length_scale: float = 5.0
    commit_threshold: float = 0.4

    def __post_init__(self):
        ws = (self.w_string, self.w_embed, self.w_salience)
        if min(ws) < 0 or abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"resolver weights must be nonnegative and sum to 1, got {ws}")
        if self.salience_length_scale <= 0:
            raise ValueError("salience_length_scale must be > 0")
        if not 0.0 < self.commit_threshold <= 1.0:
            raise ValueError("commit_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class Belief:
    """Probability over candidate node ids; iteration order is graph order."""

    entries: Mapping[str, float]

    def __post_init__(self):
        entries = dict(self.entries)
        if not entries:
            raise ValueError("belief must have nonempty support")
        values = np.fromiter(entries.values(), dtype=float)
        if np.any(values < 0) or abs(values.sum() - 1.0) > BELIEF_TOL:
            raise ValueError(f"belief must be a probability distribution, sums to {values.sum()!r}")
        object.__setattr__(self, "entries", entries)

    def __getitem__(self, node_id: str) -> float:
        return self.entries.get(node_id, 0.0)

    def argmax(self) -> tuple[str, float]:
        best = max(self.entries.values())
        node_id = min(k for k, v in self.entries.items() if v == best)
        return node_id, best


@dataclass(frozen=True)
class Decision:
    """Commit to ``node_id``, or defer when it is ``None``."""

    node_id: str | None

    @property
    def committed(self) -> bool:
        return self.node_id is not None


DEFER = Decision(None)


def salience(observer: ObserverPose, node: ObjectNode, length_scale: float) -> float:
    if length_scale <= 0:
        raise ValueError("length_scale must be > 0")
    return math.exp(-float(np.linalg.norm(node.position - observer.position)) / length_scale)


def raw_scores(anchor_text: str, graph: SceneGraph, observer: ObserverPose,
               provider: SimilarityProvider, weights: ResolverWeights) -> dict[str, float]:
    return {
        n.id: weights.w_string * string_similarity(anchor_text, n.label)
        + weights.w_embed * provider.score(anchor_text, n.label)
        + weights.w_salience * salience(observer, n, weights.salience_length_scale)
        for n in graph
    }


def belief_from_scores(scores: Mapping[str, float]) -> Belief:
    positive = {k: v for k, v in scores.items() if v > 0}
    if not positive:
        return Belief({k: 1.0 / len(scores) for k in scores})
    total = math.fsum(positive.values())
    return Belief({k: v / total for k, v in positive.items()})


def resolve(anchor_text: str, graph: SceneGraph, observer: ObserverPose,
            provider: SimilarityProvider, weights: ResolverWeights) -> Belief:
    if len(graph) == 0:
        raise EmptyGraph(f"cannot resolve {anchor_text!r} against an empty scene graph")
    return belief_from_scores(raw_scores(anchor_text, graph, observer, provider, weights))


def decide(belief: Belief, threshold: float) -> Decision:
    node_id, p = belief.argmax()
    return Decision(node_id) if p >= threshold else DEFER
