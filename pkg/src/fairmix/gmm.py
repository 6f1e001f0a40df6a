"""Gaussian mixtures fit by EM and the semi-supervised augmentation experiment.

The experiment draws a ground-truth mixture (one component per class), fits a
mixture to unlabelled points, names each fitted mode with a class using a few
labelled points, then trains a classifier on labelled plus generated points.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

RIDGE = 1e-6
VALIDATION_SIZE = 2000


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    # mean per-point log-likelihood after each E-step of the fit that produced this mixture
    log_likelihood_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-9, rtol=0):
            raise ValueError("covariances must be symmetric")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_probs(self, x) -> np.ndarray:
        """log w_k + log N(x | mu_k, Sigma_k), shape (n, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return _component_log_probs(x, self.weights, self.means, self.covariances)

    def responsibilities(self, x) -> np.ndarray:
        lp = self.component_log_probs(x)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def score(self, x) -> float:
        """Mean per-point log-likelihood."""
        return float(logsumexp(self.component_log_probs(x), axis=1).mean())

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }


def _component_log_probs(x, weights, means, covs) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, len(weights)))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for k in range(len(weights)):
        chol = linalg.cholesky(covs[k], lower=True, check_finite=False)
        z = linalg.solve_triangular(chol, (x - means[k]).T, lower=True, check_finite=False)
        out[:, k] = (
            log_w[k]
            - 0.5 * np.einsum("ij,ij->j", z, z)
            - np.log(np.diag(chol)).sum()
            - 0.5 * d * math.log(2.0 * math.pi)
        )
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, iters: int) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    labels = None
    for _ in range(iters):
        d2 = sq[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(axis=1)
        new = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(len(centers)):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
    if labels is None:
        d2 = sq[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(axis=1)
        labels = d2.argmin(axis=1)
    return labels


def _m_step(x: np.ndarray, resp: np.ndarray, ridge: float):
    n, d = x.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    eye = np.eye(d)
    for k in range(len(nk)):
        diff = x - means[k]
        covs[k] = (diff.T * resp[:, k]) @ diff / nk[k]
        covs[k] = 0.5 * (covs[k] + covs[k].T) + ridge * eye
    return weights, means, covs


def fit_em(
    points,
    k: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-6,
    ridge: float = RIDGE,
    init_iters: int = 100,
    n_init: int = 1,
) -> GaussianMixture:
    """Fit a full-covariance mixture by expectation-maximization.

    Initialization: k-means++ seeding followed by up to ``init_iters`` Lloyd
    updates; the resulting hard partition gives the first M-step.  Iteration
    stops when the mean per-point log-likelihood improves by less than ``tol``
    or after ``max_iters`` E-steps.  Every covariance carries ``ridge * I``.

    With ``n_init > 1`` the fit is restarted from independent seedings and the
    run with the highest final log-likelihood is kept.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("points contain non-finite values")

    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        fit = _em_once(x, k, rng, max_iters, tol, ridge, init_iters)
        if best is None or fit.log_likelihood_trace[-1] > best.log_likelihood_trace[-1]:
            best = fit
    return best


def _em_once(x, k, rng, max_iters, tol, ridge, init_iters) -> GaussianMixture:
    labels = _lloyd(x, _kmeans_pp(x, k, rng), init_iters)
    resp = np.eye(k)[labels]
    weights, means, covs = _m_step(x, resp, ridge)

    trace = []
    prev = None
    for _ in range(max(max_iters, 1)):
        lp = _component_log_probs(x, weights, means, covs)
        ll = logsumexp(lp, axis=1, keepdims=True)
        cur = float(ll.mean())
        if trace and cur < trace[-1]:
            # the ridge makes the M-step inexact; never accept a worse step
            weights, means, covs = prev
            break
        trace.append(cur)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        prev = (weights, means, covs)
        resp = np.exp(lp - ll)
        weights, means, covs = _m_step(x, resp, ridge)
    return GaussianMixture(weights, means, covs, log_likelihood_trace=tuple(trace))


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gmm_sample(g: GaussianMixture, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n i.i.d. draws and the index of the mode each came from."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    modes = rng.choice(g.n_components, size=n, p=g.weights)
    noise = rng.standard_normal((n, g.dim))
    x = np.empty((n, g.dim))
    for k in range(g.n_components):
        sel = modes == k
        if sel.any():
            x[sel] = g.means[k] + noise[sel] @ _sqrt_factor(g.covariances[k]).T
    return x, modes


# -- mode naming --------------------------------------------------------------


def _mode_class_counts(g: GaussianMixture, x, y, n_classes: int) -> np.ndarray:
    modes = g.component_log_probs(x).argmax(axis=1)
    counts = np.zeros((g.n_components, n_classes), dtype=int)
    np.add.at(counts, (modes, y), 1)
    return counts


def assign_modes(g: GaussianMixture, x, y, n_classes: Optional[int] = None, method: str = "majority") -> np.ndarray:
    """Class index for every mode of ``g``, learned from labelled points (x, y).

    ``"majority"``: each labelled point goes to its most responsible mode and a
    mode takes the majority class of its points; modes that receive no points
    take the most frequent labelled class.  Ties go to the lower class index.

    ``"exhaustive"``: searches every map from modes to classes for the fewest
    labelled errors (lexicographically first among equals).  Only for small
    problems.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("need at least one labelled point")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")
    counts = _mode_class_counts(g, x, y, n_classes)

    if method == "majority":
        fallback = int(np.bincount(y, minlength=n_classes).argmax())
        out = counts.argmax(axis=1)
        out[counts.sum(axis=1) == 0] = fallback
        return out
    if method == "exhaustive":
        if n_classes ** g.n_components > 2_000_000:
            raise ValueError("exhaustive mode assignment is limited to small problems")
        best, best_map = -1, None
        rows = np.arange(g.n_components)
        for mapping in itertools.product(range(n_classes), repeat=g.n_components):
            hits = counts[rows, mapping].sum()
            if hits > best:
                best, best_map = hits, mapping
        return np.array(best_map)
    raise ValueError(f"unknown method {method!r}")


def labelled_errors(g: GaussianMixture, class_of_mode, x, y) -> int:
    pred = np.asarray(class_of_mode)[g.component_log_probs(x).argmax(axis=1)]
    return int((pred != np.asarray(y)).sum())


# -- downstream classifier ----------------------------------------------------


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)

    def logits(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights.T + self.biases

    def predict(self, x) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def accuracy(self, x, y) -> float:
        return float((self.predict(x) == np.asarray(y)).mean())


def _softmax_xent(logits: np.ndarray, y: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - logsumexp(z, axis=1, keepdims=True)
    return -log_p[np.arange(len(y)), y].mean(), np.exp(log_p)


def cross_entropy(clf: LinearClassifier, x, y) -> float:
    return float(_softmax_xent(clf.logits(x), np.asarray(y))[0])


def train_classifier(
    x,
    y,
    n_classes: Optional[int] = None,
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: int = 64,
) -> LinearClassifier:
    """Multinomial logistic regression by mini-batch gradient descent.

    Features are standardized internally and the scaling is folded back into the
    returned weights.  Parameters start at zero, so ``lr=0`` returns zeros.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("empty training set")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")

    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - center) / scale

    rng = np.random.default_rng(seed)
    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, prob = _softmax_xent(xs[idx] @ w.T + b, y[idx])
            prob[np.arange(len(idx)), y[idx]] -= 1.0
            w -= lr * prob.T @ xs[idx] / len(idx)
            b -= lr * prob.mean(axis=0)

    w_raw = w / scale
    return LinearClassifier(weights=w_raw, biases=b - w_raw @ center)


# -- experiment ---------------------------------------------------------------


@dataclass(frozen=True)
class GMMExperimentConfig:
    dims: int
    components: int
    n_labelled: Sequence[int]
    n_unlabelled: int
    n_generated: Sequence[int]
    seeds: Sequence[int]
    epochs: int = 200
    lr: float = 0.1
    batch_size: int = 64
    validation_size: int = VALIDATION_SIZE
    covariance_scale: float = 0.1
    shared_means: bool = False
    em_max_iters: int = 100
    em_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "n_labelled", tuple(int(v) for v in self.n_labelled))
        object.__setattr__(self, "n_generated", tuple(int(v) for v in self.n_generated))
        object.__setattr__(self, "seeds", tuple(int(v) for v in self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.dims < 1 or self.components < 1:
            raise ValueError("dims and components must be >= 1")
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        if not self.n_labelled or not self.n_generated:
            raise ValueError("n_labelled and n_generated must be non-empty")
        if min(self.n_labelled) < 1:
            raise ValueError("need at least one labelled point per class")
        if min(self.n_generated) < 0:
            raise ValueError("n_generated must be >= 0")
        if self.n_unlabelled < self.components * (self.dims + 1):
            raise ValueError(
                f"n_unlabelled={self.n_unlabelled} < components*(dims+1)={self.components * (self.dims + 1)}"
            )
        if self.validation_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("invalid training or validation settings")


def make_true_mixture(dims: int, components: int, rng: np.random.Generator, scale: float = 0.1, shared_means: bool = False) -> GaussianMixture:
    """Equal-weight mixture with means ~ U[0, 1]^D and covariance A A^T, A_ij ~ N(0, scale^2)."""
    means = rng.uniform(0.0, 1.0, size=(components, dims))
    if shared_means:
        means[:] = means[0]
    covs = np.empty((components, dims, dims))
    for k in range(components):
        a = rng.normal(0.0, scale, size=(dims, dims))
        covs[k] = a @ a.T
        covs[k] = 0.5 * (covs[k] + covs[k].T)
    return GaussianMixture(np.full(components, 1.0 / components), means, covs)


def _sample_per_class(g: GaussianMixture, per_class: int, rng: np.random.Generator):
    xs, ys = [], []
    for k in range(g.n_components):
        one = GaussianMixture(np.array([1.0]), g.means[k : k + 1], g.covariances[k : k + 1])
        x, _ = gmm_sample(one, per_class, int(rng.integers(2**63)))
        xs.append(x)
        ys.append(np.full(per_class, k))
    return np.concatenate(xs), np.concatenate(ys)


def run_seed(cfg: GMMExperimentConfig, seed: int) -> dict:
    """Validation accuracy for every (n_labelled, n_generated) pair under one seed."""
    streams = np.random.SeedSequence(seed).spawn(4)
    truth_rng, data_rng, label_rng, gen_rng = (np.random.default_rng(s) for s in streams)

    truth = make_true_mixture(cfg.dims, cfg.components, truth_rng, cfg.covariance_scale, cfg.shared_means)
    x_unl, _ = gmm_sample(truth, cfg.n_unlabelled, int(data_rng.integers(2**63)))
    x_val, y_val = gmm_sample(truth, cfg.validation_size, int(data_rng.integers(2**63)))
    fitted = fit_em(x_unl, cfg.components, seed=int(data_rng.integers(2**63)), max_iters=cfg.em_max_iters, tol=cfg.em_tol)

    clf_seed = int(label_rng.integers(2**31))
    acc = {}
    for n_lab in cfg.n_labelled:
        x_lab, y_lab = _sample_per_class(truth, n_lab, label_rng)
        class_of_mode = assign_modes(fitted, x_lab, y_lab, n_classes=cfg.components)
        gen_seed = int(gen_rng.integers(2**63))
        for n_gen in cfg.n_generated:
            x_gen, modes = gmm_sample(fitted, n_gen, gen_seed)
            x_train = np.concatenate([x_lab, x_gen])
            y_train = np.concatenate([y_lab, class_of_mode[modes]])
            clf = train_classifier(
                x_train, y_train, cfg.components, epochs=cfg.epochs, lr=cfg.lr, seed=clf_seed, batch_size=cfg.batch_size
            )
            acc[(n_lab, n_gen)] = clf.accuracy(x_val, y_val)
    return acc


def _run_seed_star(args):
    return args[1], run_seed(*args)


def run_gmm_experiment(cfg: GMMExperimentConfig, workers: int = 1) -> list[dict]:
    """Mean/std validation accuracy per (n_labelled, n_generated) over the seed list.

    Seeds run independently (optionally in a process pool); results are reduced
    in seed order so the worker count never changes the output.
    """
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed_star, jobs))
    else:
        per_seed = [_run_seed_star(j) for j in jobs]
    per_seed.sort(key=lambda r: r[0])

    rows = []
    for n_lab in cfg.n_labelled:
        for n_gen in cfg.n_generated:
            vals = np.array([acc[(n_lab, n_gen)] for _, acc in per_seed])
            rows.append(
                {
                    "n_labelled": n_lab,
                    "n_generated": n_gen,
                    "mean_acc": float(vals.mean()),
                    "std_acc": float(vals.std()),
                    "n_seeds": len(vals),
                    "per_seed": vals.tolist(),
                }
            )
    return rows


RESULT_COLUMNS = ("n_labelled", "n_generated", "mean_acc", "std_acc", "n_seeds")


def write_results_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([r["n_labelled"], r["n_generated"], repr(r["mean_acc"]), repr(r["std_acc"]), r["n_seeds"]])


def config_to_json(cfg: GMMExperimentConfig) -> dict:
    d = asdict(cfg)
    for key in ("n_labelled", "n_generated", "seeds"):
        d[key] = list(d[key])
    return d


PAPER_CONFIGS = {
    "2c64d": dict(dims=64, components=2, n_unlabelled=10_000),
    "5c64d": dict(dims=64, components=5, n_unlabelled=10_000),
    # 10_000 unlabelled points would violate n_unlabelled >= components*(dims+1)
    "10c1024d": dict(dims=1024, components=10, n_unlabelled=10 * 1025),
}
