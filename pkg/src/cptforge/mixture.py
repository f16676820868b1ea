"""Round-indexed topic-mixture adjustment driven by validation perplexity.

Per round, each topic's mean validation PPL change is normalized by the
largest absolute change, scaled into a multiplicative adjustment
coefficient f_i = 1 + alpha * delta_i * w_i (floored so every topic keeps a
positive share), and folded into the sampling proportions, which are then
renormalized. All operations are pure; states are immutable values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .errors import DataError

DEFAULT_ALPHA = 0.5
DEFAULT_WEIGHT = 1.0
DEFAULT_FLOOR = 0.05
PROPORTION_SUM_TOL = 1e-9


def _as_vector(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"{name} must be a non-empty 1-d vector")
    return arr


@dataclass(frozen=True)
class PplSnapshot:
    """Mean validation perplexity per topic at one round."""

    round: int
    ppl: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ppl", _as_vector(self.ppl, "ppl"))
        if self.round < 0:
            raise DataError("snapshot round must be >= 0")
        if not np.all(np.isfinite(self.ppl)) or np.any(self.ppl <= 0):
            raise DataError("ppl entries must be finite and > 0")

    @classmethod
    def from_json(cls, obj: dict, topic_order: Sequence[str]) -> "PplSnapshot":
        """Import {"round": t, "ppl": {label: value}} against a fixed topic order."""
        ppl_map = obj.get("ppl")
        if not isinstance(ppl_map, dict):
            raise DataError("snapshot JSON must carry a 'ppl' object keyed by topic")
        missing = [t for t in topic_order if t not in ppl_map]
        if missing:
            raise DataError(f"snapshot missing topics: {missing}")
        values = [float(ppl_map[t]) for t in topic_order]
        return cls(round=int(obj.get("round", 0)), ppl=np.array(values))

    def to_json(self, topic_order: Sequence[str]) -> dict:
        return {
            "round": self.round,
            "ppl": {t: float(v) for t, v in zip(topic_order, self.ppl)},
        }


@dataclass(frozen=True)
class MixtureState:
    """Sampling proportions plus the knobs that steer their per-round drift."""

    round: int
    proportions: np.ndarray
    weights: np.ndarray
    alpha: float = DEFAULT_ALPHA
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "proportions", _as_vector(self.proportions, "proportions"))
        object.__setattr__(self, "weights", _as_vector(self.weights, "weights"))
        if self.proportions.shape != self.weights.shape:
            raise DataError("proportions and weights must share length")
        if np.any(self.proportions < 0):
            raise DataError("proportions must be >= 0")
        if abs(float(self.proportions.sum()) - 1.0) > PROPORTION_SUM_TOL:
            raise DataError(
                f"proportions must sum to 1 within {PROPORTION_SUM_TOL}, "
                f"got {float(self.proportions.sum())!r}"
            )
        if np.any(self.weights < 0):
            raise DataError("weights must be >= 0")
        if self.alpha < 0:
            raise DataError("alpha must be >= 0")
        if self.floor <= 0:
            raise DataError("floor must be > 0")

    @property
    def size(self) -> int:
        return int(self.proportions.size)

    @classmethod
    def uniform(
        cls,
        n: int,
        alpha: float = DEFAULT_ALPHA,
        weights: Sequence[float] | None = None,
        floor: float = DEFAULT_FLOOR,
        round: int = 0,
    ) -> "MixtureState":
        if n <= 0:
            raise DataError("taxonomy size must be positive")
        w = np.full(n, DEFAULT_WEIGHT) if weights is None else _as_vector(weights, "weights")
        return cls(round=round, proportions=np.full(n, 1.0 / n), weights=w,
                   alpha=alpha, floor=floor)

    def to_json(self, topic_order: Sequence[str] | None = None) -> dict:
        out = {
            "round": self.round,
            "proportions": [float(v) for v in self.proportions],
            "weights": [float(v) for v in self.weights],
            "alpha": self.alpha,
            "floor": self.floor,
        }
        if topic_order is not None:
            out["topics"] = list(topic_order)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureState":
        return cls(
            round=int(obj["round"]),
            proportions=np.array(obj["proportions"], dtype=np.float64),
            weights=np.array(obj["weights"], dtype=np.float64),
            alpha=float(obj.get("alpha", DEFAULT_ALPHA)),
            floor=float(obj.get("floor", DEFAULT_FLOOR)),
        )


def performance_change(prev: PplSnapshot, cur: PplSnapshot) -> np.ndarray:
    """Per-topic PPL delta between consecutive rounds: cur - prev, elementwise."""
    if cur.round != prev.round + 1:
        raise DataError(
            f"snapshots must be consecutive rounds, got {prev.round} -> {cur.round}"
        )
    if prev.ppl.shape != cur.ppl.shape:
        raise DataError("snapshot lengths differ")
    return cur.ppl - prev.ppl


def normalize_change(delta_p: np.ndarray) -> np.ndarray:
    """Scale deltas by the max absolute delta; an all-zero delta stays zero."""
    delta_p = _as_vector(delta_p, "delta_p")
    if not np.all(np.isfinite(delta_p)):
        raise DataError("delta_p entries must be finite")
    max_abs = float(np.max(np.abs(delta_p)))
    if max_abs == 0.0:
        return np.zeros_like(delta_p)
    return delta_p / max_abs


def adjustment_coefficients(delta_norm: np.ndarray, state: MixtureState) -> np.ndarray:
    """f_i = max(floor, 1 + alpha * delta_i * w_i), elementwise."""
    delta_norm = _as_vector(delta_norm, "delta_norm")
    if delta_norm.shape != state.weights.shape:
        raise DataError("delta_norm length does not match state")
    return np.maximum(state.floor, 1.0 + state.alpha * delta_norm * state.weights)


def update_proportions(state: MixtureState, f: np.ndarray) -> MixtureState:
    """Fold coefficients into proportions and renormalize; round advances by 1.

    An all-ones f is an exact fixed point: proportions pass through
    bit-identically rather than being renormalized.
    """
    f = _as_vector(f, "f")
    if f.shape != state.proportions.shape:
        raise DataError("f length does not match state")
    if np.any(f <= 0):
        raise DataError("adjustment coefficients must be > 0")
    if np.all(f == 1.0):
        new_r = state.proportions.copy()
    else:
        scaled = state.proportions * f
        denom = float(scaled.sum())
        assert denom > 0.0, "renormalization denominator vanished despite positive f"
        new_r = scaled / denom
    new_state = MixtureState(
        round=state.round + 1,
        proportions=new_r,
        weights=state.weights,
        alpha=state.alpha,
        floor=state.floor,
    )
    return new_state


@dataclass(frozen=True)
class MixtureAuditRecord:
    round: int
    delta_p: list[float]
    delta_norm: list[float]
    f: list[float]
    r_prev: list[float]
    r_new: list[float]

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "delta_p": self.delta_p,
            "delta_norm": self.delta_norm,
            "f": self.f,
            "r_prev": self.r_prev,
            "r_new": self.r_new,
        }


def mixture_step(
    state: MixtureState,
    prev: PplSnapshot,
    cur: PplSnapshot,
    audit_sink: IO[str] | None = None,
) -> tuple[MixtureState, MixtureAuditRecord]:
    """One full adjustment round; equals the four component operations composed."""
    if prev.ppl.size != state.size:
        raise DataError("snapshot length does not match mixture state")
    delta_p = performance_change(prev, cur)
    delta_norm = normalize_change(delta_p)
    f = adjustment_coefficients(delta_norm, state)
    new_state = update_proportions(state, f)
    record = MixtureAuditRecord(
        round=new_state.round,
        delta_p=[float(v) for v in delta_p],
        delta_norm=[float(v) for v in delta_norm],
        f=[float(v) for v in f],
        r_prev=[float(v) for v in state.proportions],
        r_new=[float(v) for v in new_state.proportions],
    )
    if audit_sink is not None:
        audit_sink.write(json.dumps(record.to_json()) + "\n")
    return new_state, record


def snapshot_from_topic_means(
    round: int, means: dict[str, float], topic_order: Sequence[str]
) -> PplSnapshot:
    """Build a snapshot from per-topic mean PPLs, failing on missing topics."""
    missing = [t for t in topic_order if t not in means]
    if missing:
        raise DataError(f"no PPL mean for topics: {missing}")
    for topic, value in means.items():
        if not math.isfinite(value) or value <= 0:
            raise DataError(f"PPL mean for {topic!r} must be finite and > 0, got {value}")
    return PplSnapshot(round=round, ppl=np.array([means[t] for t in topic_order]))
