"""Categorical distribution algebra and optimal real/generated mixing weights.

Mixing weights are expressed as ``alpha_gen``, the fraction of *generated*
data in the mixture; the real-data fraction is ``alpha_real = 1 - alpha_gen``.

Two KL directions are supported throughout:

* ``"forward"``: KL(p || p'), target first.
* ``"reverse"``: KL(p' || p), mixture first.

An infinite divergence is reported as ``math.inf``, which orders above every
finite value and is never clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import logsumexp

INF = math.inf
SUM_TOL = 1e-9
TIE_TOL = 1e-12
DIRECTIONS = ("forward", "reverse")


def _check_probs(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    if np.any(arr < 0):
        raise ValueError(f"{what} has negative entries")
    if abs(arr.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"{what} sums to {arr.sum()!r}, expected 1")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CategoricalDist:
    """Probability vector over a finite set of outcomes."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        object.__setattr__(self, "probs", _check_probs(arr, "probs"))

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "CategoricalDist":
        counts = np.asarray(counts, dtype=float)
        return cls(counts / counts.sum())

    def __len__(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def to_json(self) -> list:
        return self.probs.tolist()


@dataclass(frozen=True)
class JointDist:
    """Joint table indexed ``[label y, attribute a]``."""

    table: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.table, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError("table must be a non-empty 2-D matrix")
        object.__setattr__(self, "table", _check_probs(arr, "table"))

    @property
    def shape(self) -> tuple:
        return self.table.shape

    def marginal_y(self) -> np.ndarray:
        return self.table.sum(axis=1)

    def conditional_a_given_y(self) -> np.ndarray:
        """Rows t(a|y); rows whose label has zero mass are NaN."""
        marg = self.marginal_y()
        out = np.full_like(self.table, np.nan)
        ok = marg > 0
        out[ok] = self.table[ok] / marg[ok, None]
        return out

    def to_json(self) -> list:
        return self.table.tolist()


DistLike = Union[CategoricalDist, Sequence[float], np.ndarray]
JointLike = Union[JointDist, Sequence[Sequence[float]], np.ndarray]


def _probs(d: DistLike) -> np.ndarray:
    if isinstance(d, CategoricalDist):
        return d.probs
    return CategoricalDist(d).probs


def _table(d: JointLike) -> np.ndarray:
    if isinstance(d, JointDist):
        return d.table
    return JointDist(d).table


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL(p_i || q_i) along the last axis, with 0 ln(0/q) = 0."""
    p, q = np.broadcast_arrays(p, q)
    pos = p > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = np.where(pos, p * np.log(np.where(pos, p, 1.0) / q), 0.0)
    terms = np.where(pos & (q <= 0), np.inf, terms)
    return terms.sum(axis=-1)


def kl_divergence(p: DistLike, q: DistLike) -> float:
    """KL(p || q) in nats; ``math.inf`` when q misses support of p."""
    p, q = _probs(p), _probs(q)
    if p.shape != q.shape:
        raise ValueError(f"outcome count mismatch: {p.size} vs {q.size}")
    return float(_kl_rows(p, q))


def mix(t: DistLike, p_hat: DistLike, alpha_gen: float) -> CategoricalDist:
    """(1 - alpha_gen) * t + alpha_gen * p_hat."""
    t, p_hat = _probs(t), _probs(p_hat)
    if t.shape != p_hat.shape:
        raise ValueError(f"outcome count mismatch: {t.size} vs {p_hat.size}")
    if not 0.0 <= alpha_gen <= 1.0:
        raise ValueError(f"alpha_gen must lie in [0, 1], got {alpha_gen}")
    return CategoricalDist((1.0 - alpha_gen) * t + alpha_gen * p_hat)


@dataclass(frozen=True)
class MixResult:
    alpha_gen: float
    kl: float
    direction: str

    @property
    def alpha_real(self) -> float:
        return 1.0 - self.alpha_gen

    def to_json(self) -> dict:
        return {"alpha_gen": self.alpha_gen, "kl": _json_float(self.kl), "direction": self.direction}


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


def _grid_argmin(values: np.ndarray) -> int:
    """First grid index within TIE_TOL of the minimum (prefers small weights)."""
    best = values.min()
    if math.isinf(best):
        return 0
    return int(np.flatnonzero(values <= best + TIE_TOL)[0])


def _golden(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _minimize_unit(
    f_grid: Callable[[np.ndarray], np.ndarray],
    step: float,
) -> tuple[float, float]:
    """Grid search on [0, 1] followed by one golden-section pass around the winner."""
    n = int(round(1.0 / step))
    grid = np.linspace(0.0, 1.0, n + 1)
    values = f_grid(grid)
    i = _grid_argmin(values)
    x_best, f_best = float(grid[i]), float(values[i])
    if math.isinf(f_best):
        return x_best, f_best
    lo, hi = max(0.0, x_best - step), min(1.0, x_best + step)

    def f_scalar(x: float) -> float:
        return float(f_grid(np.array([x]))[0])

    x_ref = _golden(f_scalar, lo, hi)
    f_ref = f_scalar(x_ref)
    if f_ref < f_best - TIE_TOL:
        return x_ref, f_ref
    return x_best, f_best


def optimal_alpha(
    p: DistLike,
    t: DistLike,
    p_hat: DistLike,
    direction: str = "forward",
    step: float = 1e-4,
) -> MixResult:
    """Generated fraction minimizing the divergence between p and mix(t, p_hat, alpha).

    Ties within 1e-12 resolve to the smallest alpha_gen, i.e. toward real data.
    """
    _check_direction(direction)
    p, t, p_hat = _probs(p), _probs(t), _probs(p_hat)
    if not (p.shape == t.shape == p_hat.shape):
        raise ValueError("p, t and p_hat must have the same outcome count")

    def objective(alphas: np.ndarray) -> np.ndarray:
        mixed = (1.0 - alphas)[:, None] * t + alphas[:, None] * p_hat
        if direction == "forward":
            return _kl_rows(p, mixed)
        return _kl_rows(mixed, p)

    alpha, kl = _minimize_unit(objective, step)
    return MixResult(alpha_gen=alpha, kl=kl, direction=direction)


def sample_empirical(p: DistLike, n: int, seed: int) -> CategoricalDist:
    """Empirical frequencies of n i.i.d. draws from p."""
    p = _probs(p)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts = np.random.default_rng(seed).multinomial(n, p)
    return CategoricalDist(counts / n)


def sample_empirical_joint(p: JointLike, n: int, seed: int) -> JointDist:
    table = _table(p)
    flat = sample_empirical(table.ravel(), n, seed)
    return JointDist(flat.probs.reshape(table.shape))


# -- two-variable model with a hidden attribute -------------------------------


@dataclass(frozen=True)
class HiddenMixResult:
    """Optimal label-level resampling of real (bar_t) and generated (bar_p) data."""

    bar_t: np.ndarray
    bar_p: np.ndarray
    kl: float
    direction: str
    feasible: bool = field(default=True)

    def to_json(self) -> dict:
        return {
            "bar_t": self.bar_t.tolist(),
            "bar_p": self.bar_p.tolist(),
            "kl": _json_float(self.kl),
            "direction": self.direction,
            "feasible": self.feasible,
        }


def hidden_mix_joint(t: JointLike, p_hat: JointLike, bar_t, bar_p) -> np.ndarray:
    """p'(y, a) = t(a|y) bar_t(y) + p_hat(a|y) bar_p(y).

    Labels with zero weight contribute nothing even if their conditional is undefined.
    """
    t_cond = JointDist(_table(t)).conditional_a_given_y()
    p_cond = JointDist(_table(p_hat)).conditional_a_given_y()
    bar_t = np.asarray(bar_t, dtype=float)
    bar_p = np.asarray(bar_p, dtype=float)
    if np.any((bar_t > 0) & np.isnan(t_cond[:, 0])) or np.any((bar_p > 0) & np.isnan(p_cond[:, 0])):
        raise ValueError("positive weight on a label with no mass in its source")
    out = np.zeros_like(t_cond)
    for y in range(out.shape[0]):
        if bar_t[y] > 0:
            out[y] += bar_t[y] * t_cond[y]
        if bar_p[y] > 0:
            out[y] += bar_p[y] * p_cond[y]
    return out


def hidden_mix_kl(p: JointLike, t: JointLike, p_hat: JointLike, bar_t, bar_p, direction: str = "reverse") -> float:
    """Divergence between p and the mixture of a given split, on the full joint."""
    _check_direction(direction)
    target = _table(p).ravel()
    mixed = hidden_mix_joint(t, p_hat, bar_t, bar_p).ravel()
    if direction == "forward":
        return float(_kl_rows(target, mixed))
    return float(_kl_rows(mixed, target))


def optimize_hidden_mix(
    p: JointLike,
    t: JointLike,
    p_hat: JointLike,
    direction: str = "reverse",
    use_generated: bool = True,
    step: float = 1e-3,
) -> HiddenMixResult:
    """Best label-level weights bar_t, bar_p for the hidden-attribute model.

    Writing bar_t(y) = m(y)(1 - b(y)) and bar_p(y) = m(y) b(y), the joint KL splits
    into a label term in m and one conditional term per label in b(y).  Each b(y)
    is grid searched (``step``) with a golden-section refinement.  The label
    weights m then have a closed form: m = p(y) for the forward direction, and
    m(y) proportional to p(y) exp(-c(y)) for the reverse one, where c(y) is the
    optimized conditional term.

    With ``use_generated=False`` the generated source is disabled (b = 0), which
    gives the real-only baseline.
    """
    _check_direction(direction)
    p_tab, t_tab, g_tab = _table(p), _table(t), _table(p_hat)
    if not (p_tab.shape == t_tab.shape == g_tab.shape):
        raise ValueError("p, t and p_hat must share the same (label, attribute) shape")
    n_labels = p_tab.shape[0]
    p_y = p_tab.sum(axis=1)
    p_cond = JointDist(p_tab).conditional_a_given_y()
    t_cond = JointDist(t_tab).conditional_a_given_y()
    g_cond = JointDist(g_tab).conditional_a_given_y()

    betas = np.zeros(n_labels)
    costs = np.full(n_labels, INF)
    for y in range(n_labels):
        if p_y[y] <= 0:
            continue
        has_t = not np.isnan(t_cond[y, 0])
        has_g = use_generated and not np.isnan(g_cond[y, 0])
        if not (has_t or has_g):
            continue

        def cond_kl(bs: np.ndarray, y=y) -> np.ndarray:
            q = (1.0 - bs)[:, None] * np.nan_to_num(t_cond[y]) + bs[:, None] * np.nan_to_num(g_cond[y])
            if direction == "forward":
                return _kl_rows(p_cond[y], q)
            return _kl_rows(q, p_cond[y])

        if has_t and has_g:
            betas[y], costs[y] = _minimize_unit(cond_kl, step)
        else:
            betas[y] = 0.0 if has_t else 1.0
            costs[y] = float(cond_kl(np.array([betas[y]]))[0])

    if direction == "forward":
        masses = p_y.copy()
        feasible = not np.any((p_y > 0) & np.isinf(costs))
    else:
        with np.errstate(divide="ignore"):
            log_w = np.log(p_y) - costs
        feasible = bool(np.any(np.isfinite(log_w)))
        masses = np.exp(log_w - logsumexp(log_w)) if feasible else np.zeros(n_labels)

    if not feasible:
        return HiddenMixResult(
            bar_t=np.zeros(n_labels), bar_p=np.zeros(n_labels), kl=INF, direction=direction, feasible=False
        )
    bar_t = masses * (1.0 - betas)
    bar_p = masses * betas
    kl = hidden_mix_kl(p_tab, t_tab, g_tab, bar_t, bar_p, direction)
    return HiddenMixResult(bar_t=bar_t, bar_p=bar_p, kl=kl, direction=direction, feasible=True)


# -- resampling experiments ---------------------------------------------------


def bernoulli_optimal_alphas(
    p0: float, p_hat0: float, n: int, resamples: int, seed: int, direction: str = "forward"
) -> np.ndarray:
    """Optimal alpha_gen for ``resamples`` training sets of size n drawn from Bernoulli(p0).

    Only n + 1 empirical distributions exist, so each is optimized once.
    """
    rng = np.random.default_rng(seed)
    zeros = rng.binomial(n, p0, size=resamples)
    p = [p0, 1.0 - p0]
    g = [p_hat0, 1.0 - p_hat0]
    cache = {}
    for k in np.unique(zeros):
        cache[int(k)] = optimal_alpha(p, [k / n, 1.0 - k / n], g, direction=direction).alpha_gen
    return np.array([cache[int(k)] for k in zeros])


def bootstrap_mean_ci(values, level: float = 0.95, n_boot: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def hidden_trial(p: JointLike, p_hat: JointLike, n: int, seed: int, direction: str = "reverse"):
    """One resampled training set: returns (mixed, real_only) results."""
    t = sample_empirical_joint(p, n, seed)
    mixed = optimize_hidden_mix(p, t, p_hat, direction=direction)
    real = optimize_hidden_mix(p, t, p_hat, direction=direction, use_generated=False)
    return mixed, real
