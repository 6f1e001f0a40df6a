"""Distribution-shift and fairness analytics.

MMD with a cubic polynomial kernel, Mann-Whitney U, PCA component counts,
AUC and subgroup gaps, top-k and high-risk sensitivity, and a Beta
posterior estimate of performance differences between groups.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

EXACT_MWU_MAX = 10


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    domain_tag: str = ""

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, float))
        if v.shape[0] < 1:
            raise ValueError("embedding set is empty")
        if not np.isfinite(v).all():
            raise ValueError("embedding set has non-finite entries")
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return len(self.vectors)


@dataclass(frozen=True)
class ScoredPrediction:
    score: float
    truth: int
    subgroup: object = None

    def __post_init__(self):
        if self.truth not in (0, 1):
            raise ValueError("truth must be 0 or 1")


def _vectors(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.vectors
    return np.atleast_2d(np.asarray(x, float))


# -- MMD ----------------------------------------------------------------------


def cubic_kernel(a, b, offset: float = 1.0) -> np.ndarray:
    return (a @ b.T + offset) ** 3


def mmd2(u, z, kernel_offset: float = 1.0, include_diagonal: bool = False) -> float:
    """Squared MMD between equal-size sets.

    By default the within-set sums skip i == j and are scaled by 1/(N(N-1))
    (the unbiased estimate).  With ``include_diagonal`` every pair is kept and
    all three sums are scaled by 1/N^2.
    """
    u = _vectors(u)
    z = _vectors(z)
    n = len(u)
    if n < 2:
        raise ValueError("need at least 2 vectors per set")
    if len(z) != n or u.shape[1] != z.shape[1]:
        raise ValueError("sets must have the same size and dimension")
    kuu = cubic_kernel(u, u, kernel_offset)
    kzz = cubic_kernel(z, z, kernel_offset)
    kuz = cubic_kernel(u, z, kernel_offset)
    if include_diagonal:
        return float((kuu.sum() + kzz.sum() - 2.0 * kuz.sum()) / (n * n))
    within = (kuu.sum() - np.trace(kuu) + kzz.sum() - np.trace(kzz)) / (n * (n - 1))
    return float(within - 2.0 * kuz.sum() / (n * n))


def mmd_protocol(a, b, s: int = 30, n: int = 300, seed=0, kernel_offset: float = 1.0) -> np.ndarray:
    """s estimates of mmd2 on size-n subsamples drawn without replacement.

    Draw i uses the same seed for both sets, so a set compared with itself
    gets identical subsamples.
    """
    a = _vectors(a)
    b = _vectors(b)
    if s < 1 or n < 2:
        raise ValueError("need s >= 1 and n >= 2")
    if len(a) < n or len(b) < n:
        raise ValueError(f"each set needs at least n={n} vectors")
    out = np.empty(s)
    for i in range(s):
        ia = np.random.default_rng([seed, i]).choice(len(a), n, replace=False)
        ib = np.random.default_rng([seed, i]).choice(len(b), n, replace=False)
        out[i] = mmd2(a[ia], b[ib], kernel_offset)
    return out


def format_mean_std(values, digits: int = 4) -> str:
    v = np.asarray(values, float)
    return f"{v.mean():.{digits}f} ± {v.std():.{digits}f}"


# -- Mann-Whitney -------------------------------------------------------------


def _exact_mwu_p(ranks2: np.ndarray, n1: int, u2_obs: int) -> Fraction:
    """Two-sided exact p from all splits of the pooled (doubled) midranks."""
    n = len(ranks2)
    off2 = n1 * (n1 + 1)  # doubled n1(n1+1)/2
    mean2 = n1 * (n - n1)  # doubled mean of U
    obs = abs(u2_obs - mean2)
    hits = total = 0
    for combo in itertools.combinations(range(n), n1):
        u2 = int(ranks2[list(combo)].sum()) - off2
        total += 1
        hits += abs(u2 - mean2) >= obs
    return Fraction(hits, total)


def mann_whitney_u(x, y, method: str = "auto") -> tuple[float, float]:
    """U statistic for x (midranks) and two-sided p-value.

    ``method`` is "exact" (enumeration), "normal" (tie-corrected normal
    approximation with continuity correction) or "auto", which is exact for
    at most 10 pooled observations.
    """
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    ranks2 = np.rint(2 * ranks).astype(np.int64)
    u2 = int(ranks2[:n1].sum()) - n1 * (n1 + 1)
    u = u2 / 2
    n = n1 + n2
    if method == "auto":
        method = "exact" if n <= EXACT_MWU_MAX else "normal"
    if method == "exact":
        return u, float(_exact_mwu_p(ranks2, n1, u2))
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    _, counts = np.unique(pooled, return_counts=True)
    tie = float((counts**3 - counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return u, 1.0
    dev = max(abs(u - n1 * n2 / 2.0) - 0.5, 0.0)
    return u, min(1.0, math.erfc(dev / math.sqrt(var) / math.sqrt(2.0)))


# -- PCA ----------------------------------------------------------------------


def pca_components_for_variance(points, fraction: float) -> int:
    """Smallest m whose top-m covariance eigenvalues reach fraction of the total."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    x = np.asarray(points, float)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need an N x D matrix with N >= 2")
    x = x - x.mean(axis=0)
    vals = np.linalg.eigvalsh(x.T @ x)[::-1]
    if vals.size == 0 or vals[0] <= 0:
        return 0
    tol = vals[0] * max(x.shape) * np.finfo(float).eps
    vals = np.where(vals > tol, vals, 0.0)
    cum = np.cumsum(vals)
    # the relative slack keeps fraction=1.0 at the rank despite rounding in the sum
    return int(np.argmax(cum >= fraction * cum[-1] * (1 - 1e-12)) + 1)


# -- classification metrics ---------------------------------------------------


def auc(scores, truth=None) -> float:
    """ROC AUC as P(pos > neg) + P(tie)/2, via midranks.

    Accepts either a list of ScoredPrediction or parallel score and truth arrays.
    """
    if truth is None:
        preds = list(scores)
        scores = [p.score for p in preds]
        truth = [p.truth for p in preds]
    s = np.asarray(scores, float)
    t = np.asarray(truth)
    pos = t == 1
    n_pos = int(pos.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative")
    r = rankdata(s)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def subgroup_aucs(preds) -> dict:
    groups: dict = {}
    for p in preds:
        groups.setdefault(p.subgroup, []).append(p)
    return {g: auc(v) for g, v in sorted(groups.items(), key=lambda kv: str(kv[0]))}


def auc_parity(preds, group) -> tuple[float, float]:
    """(signed, absolute) AUC difference between one subgroup and everyone else."""
    preds = list(preds)
    inside = [p for p in preds if p.subgroup == group]
    outside = [p for p in preds if p.subgroup != group]
    d = auc(inside) - auc(outside)
    return d, abs(d)


def subgroup_gap(metric_per_subgroup: dict):
    """Best minus worst subgroup value."""
    if len(metric_per_subgroup) < 2:
        raise ValueError("need at least 2 subgroups")
    vals = list(metric_per_subgroup.values())
    return max(vals) - min(vals)


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty input")
    return float(np.mean(pred == truth))


def balanced_accuracy(pred, truth) -> float:
    """Mean per-class recall over the classes present in truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise ValueError("empty input")
    return float(np.mean([np.mean(pred[truth == c] == c) for c in np.unique(truth)]))


def top_k_accuracy(preds, k: int) -> float:
    """Fraction of (ranked classes, truth) pairs with truth in the first k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    preds = list(preds)
    if not preds:
        raise ValueError("empty input")
    return sum(truth in list(ranked)[:k] for ranked, truth in preds) / len(preds)


def high_risk_sensitivity(preds, high_risk) -> float:
    """Recall over high-risk truths, counting a hit when truth is in the top-k list."""
    high_risk = set(high_risk)
    if not high_risk:
        raise ValueError("high-risk set is empty")
    rel = [(list(top), truth) for top, truth in preds if truth in high_risk]
    if not rel:
        raise ValueError("no high-risk examples")
    return sum(truth in top for top, truth in rel) / len(rel)


def beta_fairness_estimate(group, outgroup, n_samples: int = 100_000, seed=0) -> tuple[float, float]:
    """Mean and std of group-minus-outgroup draws from Beta(1+s, 1+f) posteriors."""
    (s1, n1), (s2, n2) = group, outgroup
    for s, n in ((s1, n1), (s2, n2)):
        if n < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= s <= n:
            raise ValueError("successes must be in [0, trials]")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    a = rng.beta(1 + s1, 1 + n1 - s1, n_samples)
    b = rng.beta(1 + s2, 1 + n2 - s2, n_samples)
    d = a - b
    return float(d.mean()), float(d.std())


# -- reports and ingestion ----------------------------------------------------


@dataclass
class MetricsReport:
    """Named scalars, or (mean, std, n) triples."""

    metrics: dict = field(default_factory=dict)

    def add(self, name: str, value) -> None:
        if isinstance(value, tuple):
            mean, std, n = value
            if std < 0:
                raise ValueError("std must be >= 0")
            value = (float(mean), float(std), int(n))
        else:
            value = float(value)
        self.metrics[name] = value

    def add_samples(self, name: str, values) -> None:
        v = np.asarray(values, float)
        self.add(name, (v.mean(), v.std(), v.size))

    def to_json(self) -> dict:
        out = {}
        for k in sorted(self.metrics):
            v = self.metrics[k]
            out[k] = {"mean": v[0], "std": v[1], "n": v[2]} if isinstance(v, tuple) else v
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["metric", "value", "mean", "std", "n"])
        for k in sorted(self.metrics):
            v = self.metrics[k]
            if isinstance(v, tuple):
                wr.writerow([k, "", repr(v[0]), repr(v[1]), v[2]])
            else:
                wr.writerow([k, repr(v), "", "", ""])
        return buf.getvalue()


def load_embeddings(path, domain_tag: str | None = None) -> EmbeddingSet:
    """Read vectors from CSV (one per row, optional header) or JSON Lines.

    A JSON Lines file may start with a {"domain_tag": ...} record; each other
    line is a list of numbers or an object with a "vector" list.
    """
    path = Path(path)
    rows = []
    tag = domain_tag
    text = path.read_text()
    if path.suffix in (".jsonl", ".json"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if isinstance(obj, dict) and "domain_tag" in obj and "vector" not in obj:
                tag = tag or str(obj["domain_tag"])
                continue
            vec = obj.get("vector") if isinstance(obj, dict) else obj
            rows.append(_numeric_row(vec, lineno))
    else:
        for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not rec or not any(c.strip() for c in rec):
                continue
            if lineno == 1 and not _is_numeric(rec):
                continue
            rows.append(_numeric_row(rec, lineno))
    if not rows:
        raise ValueError(f"{path}: no vectors")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: ragged rows (row {i + 1} has {len(r)} values, expected {width})")
    return EmbeddingSet(np.array(rows), tag if tag is not None else path.stem)


def _is_numeric(rec) -> bool:
    try:
        [float(c) for c in rec]
        return True
    except ValueError:
        return False


def _numeric_row(vec, lineno: int) -> list:
    if not isinstance(vec, (list, tuple)) or not vec:
        raise ValueError(f"line {lineno}: expected a non-empty list of numbers")
    try:
        row = [float(v) for v in vec]
    except (TypeError, ValueError):
        raise ValueError(f"line {lineno}: non-numeric value") from None
    if not all(math.isfinite(v) for v in row):
        raise ValueError(f"line {lineno}: non-finite value")
    return row
