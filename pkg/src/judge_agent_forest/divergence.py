"""
Donsker-Varadhan dual estimation of KL divergence between two empirical samples.

For a scalar scoring function f the empirical dual is

    D_f(A || B) = mean_{a in A} f(a) - log mean_{b in B} exp(f(b))

and the KL divergence is its maximum over f. Scorers are trained by gradient
ascent on this objective, so no density is ever estimated.
"""

import copy
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from judge_agent_forest.errors import (
    DegenerateInput,
    DimensionError,
    NoInformativeSplit,
    TooFewPoints,
)
from pydantic import BaseModel, NonNegativeFloat, PositiveFloat, PositiveInt
from scipy.special import logsumexp, softmax

logger = logging.getLogger(__name__)

DEFAULT_MIN_GAIN = 0.01

Objective = Literal["forward", "symmetric"]


class ScorerConfig(BaseModel):
    """
    Function class and optimizer settings of a dual scorer.
    """

    architecture: Literal["affine", "feedforward"] = "affine"
    hidden_width: PositiveInt = 16
    learning_rate: PositiveFloat = 0.1
    epochs: PositiveInt = 100
    batch_size: PositiveInt = 256
    weight_penalty: NonNegativeFloat = 0.0
    init_scale: PositiveFloat = 0.1


@dataclass(eq=False)
class DualScorer:
    """
    Scalar scoring function. ``affine``: f(x) = w.x + b. ``feedforward``:
    f(x) = v.tanh(W x + a) + b with one hidden layer.
    """

    architecture: Literal["affine", "feedforward"]
    input_dim: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def affine(cls, weights: Sequence[float], bias: float = 0.0) -> "DualScorer":
        w = np.asarray(weights, dtype=np.float64)
        return cls(
            architecture="affine",
            input_dim=len(w),
            params={"w": w, "b": np.asarray(float(bias))},
        )

    @classmethod
    def initialize(cls, cfg: ScorerConfig, input_dim: int, rng: np.random.Generator) -> "DualScorer":
        if cfg.architecture == "affine":
            return cls(
                architecture="affine",
                input_dim=input_dim,
                params={
                    "w": rng.normal(0.0, cfg.init_scale, size=input_dim),
                    "b": np.asarray(0.0),
                },
            )
        hidden = cfg.hidden_width
        return cls(
            architecture="feedforward",
            input_dim=input_dim,
            params={
                "W": rng.normal(0.0, cfg.init_scale, size=(hidden, input_dim)),
                "a": np.zeros(hidden),
                "v": rng.normal(0.0, cfg.init_scale, size=hidden),
                "b": np.asarray(0.0),
            },
        )

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.input_dim == 1 else x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"Scorer expects inputs of dimension {self.input_dim}, got shape {x.shape}"
            )
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Scores of the rows of ``x`` (a 1-D input of a 1-D scorer is a column)."""
        x = self._check(x)
        if self.architecture == "affine":
            return x @ self.params["w"] + self.params["b"]
        hidden = np.tanh(x @ self.params["W"].T + self.params["a"])
        return hidden @ self.params["v"] + self.params["b"]

    def weighted_gradient(self, x: np.ndarray, weights: np.ndarray) -> dict[str, np.ndarray]:
        """Sum over rows of ``weights[n] * grad_theta f(x_n)``."""
        if self.architecture == "affine":
            return {"w": weights @ x, "b": np.asarray(weights.sum())}
        hidden = np.tanh(x @ self.params["W"].T + self.params["a"])
        d_pre = (1.0 - hidden ** 2) * self.params["v"]
        weighted = weights[:, None] * d_pre
        return {
            "W": weighted.T @ x,
            "a": weighted.sum(axis=0),
            "v": weights @ hidden,
            "b": np.asarray(weights.sum()),
        }

    def penalized_names(self) -> tuple[str, ...]:
        return ("w",) if self.architecture == "affine" else ("W", "v")

    def copy(self) -> "DualScorer":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_dim": self.input_dim,
            "params": {name: value.tolist() for name, value in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DualScorer":
        return cls(
            architecture=data["architecture"],
            input_dim=int(data["input_dim"]),
            params={name: np.asarray(value, dtype=np.float64) for name, value in data["params"].items()},
        )


def log_mean_exp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(logsumexp(values) - math.log(len(values)))


def dual_objective(scores_a: np.ndarray, scores_b: np.ndarray) -> float:
    """Empirical dual value from precomputed scores: mean(f_a) - log mean exp(f_b)."""
    return float(np.mean(scores_a)) - log_mean_exp(scores_b)


def _as_samples(samples, input_dim: int | None = None) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if input_dim in (None, 1) else x.reshape(1, -1)
    if x.ndim != 2:
        raise DimensionError(f"Samples must be a matrix, got shape {x.shape}")
    return x


def estimate_divergence(scorer: DualScorer, samples_a, samples_b) -> float:
    """
    Empirical Donsker-Varadhan estimate D_f(A || B) in nats, computed with a
    max-shifted log-sum-exp.
    :raises DimensionError: if the samples do not match the scorer.
    """
    a = _as_samples(samples_a, scorer.input_dim)
    b = _as_samples(samples_b, scorer.input_dim)
    if len(a) == 0 or len(b) == 0:
        raise TooFewPoints("Both sample sets must be non-empty")
    return dual_objective(scorer(a), scorer(b))


def _objective_value(scorer: DualScorer, a: np.ndarray, b: np.ndarray, objective: Objective) -> float:
    fa, fb = scorer(a), scorer(b)
    value = dual_objective(fa, fb)
    if objective == "symmetric":
        value += dual_objective(-fb, -fa)
    return value


def _ascent_direction(
        scorer: DualScorer, a: np.ndarray, b: np.ndarray, objective: Objective, penalty: float
) -> dict[str, np.ndarray]:
    fa, fb = scorer(a), scorer(b)
    weights_a = np.full(len(a), 1.0 / len(a))
    weights_b = -softmax(fb)
    if objective == "symmetric":
        # Second direction uses -f: mean(-f_b) - log mean exp(-f_a).
        weights_a = weights_a + softmax(-fa)
        weights_b = weights_b - 1.0 / len(b)
    grad_a = scorer.weighted_gradient(a, weights_a)
    grad_b = scorer.weighted_gradient(b, weights_b)
    grads = {name: grad_a[name] + grad_b[name] for name in grad_a}
    if penalty > 0.0:
        for name in scorer.penalized_names():
            grads[name] = grads[name] - 2.0 * penalty * scorer.params[name]
    return grads


def train_dual_scorer(
        samples_a,
        samples_b,
        cfg: ScorerConfig,
        rng: np.random.Generator,
        objective: Objective = "forward",
) -> DualScorer:
    """
    Maximize the empirical dual objective by mini-batch gradient ascent.

    ``forward`` maximizes D_f(A || B); ``symmetric`` maximizes
    D_f(A || B) + D_{-f}(B || A), whose optimum is the same log density ratio.
    The parameters with the best full-data (unpenalized) objective seen are
    returned, so training never makes the estimate worse than initialization.
    :raises DimensionError: if the two sample sets have different widths.
    :raises TooFewPoints: if either set has fewer than two points.
    :raises DegenerateInput: if every point of both sets is identical.
    """
    a = _as_samples(samples_a)
    b = _as_samples(samples_b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"Sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise TooFewPoints(f"Need at least two points per set, got {len(a)} and {len(b)}")
    if np.all(a == a[0]) and np.all(b == a[0]):
        raise DegenerateInput("All sample points are identical")

    scorer = DualScorer.initialize(cfg, a.shape[1], rng)
    best = scorer.copy()
    best_value = _objective_value(scorer, a, b, objective)

    n_batches = math.ceil(max(len(a), len(b)) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        perm_a = rng.permutation(len(a))
        perm_b = rng.permutation(len(b))
        for j in range(n_batches):
            positions = np.arange(j * cfg.batch_size, (j + 1) * cfg.batch_size)
            batch_a = a[perm_a[positions % len(a)]]
            batch_b = b[perm_b[positions % len(b)]]
            grads = _ascent_direction(scorer, batch_a, batch_b, objective, cfg.weight_penalty)
            for name, grad in grads.items():
                scorer.params[name] = scorer.params[name] + cfg.learning_rate * grad

        value = _objective_value(scorer, a, b, objective)
        if not math.isfinite(value):
            logger.warning(f"Dual objective diverged at epoch {epoch}; keeping best parameters")
            break
        if value > best_value:
            best_value = value
            best = scorer.copy()

    logger.debug(
        f"Trained {cfg.architecture} scorer ({objective}) on {len(a)}/{len(b)} points: "
        f"objective {best_value:.4f} nats"
    )
    return best


def symmetric_score_divergence(left_scores, right_scores) -> float:
    """
    D_f(left || right) + D_f(right || left) using the scores themselves as f.
    """
    left = np.asarray(left_scores, dtype=np.float64)
    right = np.asarray(right_scores, dtype=np.float64)
    return dual_objective(left, right) + dual_objective(right, left)


@dataclass(frozen=True)
class CutResult:
    cut_value: float
    objective: float
    left_count: int
    right_count: int
    gain: float


def best_contiguous_cut(scores, min_gain: float = DEFAULT_MIN_GAIN) -> CutResult:
    """
    Search the n-1 contiguous cuts of the sorted scores for the one maximizing
    ``symmetric_score_divergence``. Ties go to the most balanced split, then to
    the lower cut value. A cut only falls between distinct scores; its value is
    the midpoint of the two boundary scores (points at or above go right).

    The symmetric objective of scores used as their own f never exceeds 0, so
    the gate uses the separation of the chosen cut instead: mean(right) minus
    log mean exp(left), which is positive for any cut between distinct scores.
    The best cut must separate by at least ``min_gain`` nats.
    :raises TooFewPoints: for fewer than two scores.
    :raises NoInformativeSplit: if no cut separates by ``min_gain``.
    """
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = len(s)
    if n < 2:
        raise TooFewPoints(f"Cut search needs at least two scores, got {n}")
    if not np.all(np.isfinite(s)):
        raise DimensionError("Scores must be finite")

    best: CutResult | None = None
    best_key = None
    for k in range(1, n):
        if s[k - 1] == s[k]:
            continue
        objective = symmetric_score_divergence(s[:k], s[k:])
        cut_value = float((s[k - 1] + s[k]) / 2.0)
        key = (objective, -abs(n - 2 * k), -cut_value)
        if best_key is None or key > best_key:
            best_key = key
            best = CutResult(
                cut_value=cut_value,
                objective=objective,
                left_count=k,
                right_count=n - k,
                gain=dual_objective(s[k:], s[:k]),
            )

    if best is None or best.gain < min_gain:
        raise NoInformativeSplit(
            f"No contiguous cut separates {n} scores by {min_gain} nats"
        )
    return best
