"""A small conditional denoising diffusion model on low-dimensional vectors.

The denoiser is a dense network fed with the noisy vector, a sinusoidal
timestep embedding and a one-hot condition made of a label block and an
attribute block.  Index 0 of each block is the null condition: unlabelled
data always uses it, and labelled data is randomly dropped to it during
training so the same network serves as the unconditional branch for
classifier-free guidance.

The module also carries the degradation pipeline used to build low/high
resolution training pairs for an upsampler.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import expit

EMBED_DIM = 16
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


# -- schedule -----------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def to_json(self) -> dict:
        return {"betas": self.betas.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "DiffusionSchedule":
        betas = np.asarray(obj["betas"], float)
        return cls(betas, np.cumprod(1.0 - betas))


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear beta schedule over T steps."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    return DiffusionSchedule(betas, np.cumprod(1.0 - betas))


def forward_diffuse(x0, t: int, sched: DiffusionSchedule, seed) -> tuple[np.ndarray, np.ndarray]:
    """Sample x_t from q(x_t | x_0); returns (x_t, eps)."""
    if not 0 <= t < sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T})")
    x0 = np.asarray(x0, float)
    eps = np.random.default_rng(seed).standard_normal(x0.shape)
    ab = sched.alpha_bars[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps, eps


# -- conditioning -------------------------------------------------------------


@dataclass(frozen=True)
class ConditionVector:
    """Label and attribute indices; 0 in a block means null."""

    label: int
    attribute: int
    n_labels: int
    n_attrs: int = 0

    def __post_init__(self):
        if not 0 <= self.label <= self.n_labels:
            raise ValueError(f"label {self.label} outside 0..{self.n_labels}")
        if not 0 <= self.attribute <= self.n_attrs:
            raise ValueError(f"attribute {self.attribute} outside 0..{self.n_attrs}")

    @property
    def is_null(self) -> bool:
        return self.label == 0 and self.attribute == 0

    def vector(self) -> np.ndarray:
        return encode_conditions([self.label], [self.attribute], self.n_labels, self.n_attrs)[0]

    def null(self) -> "ConditionVector":
        return ConditionVector(0, 0, self.n_labels, self.n_attrs)

    @classmethod
    def from_onehot(cls, label_vec, attr_vec) -> "ConditionVector":
        label_vec = np.asarray(label_vec)
        attr_vec = np.asarray(attr_vec)
        for block in (label_vec, attr_vec):
            if np.count_nonzero(block) != 1:
                raise ValueError("each block needs exactly one nonzero entry")
        return cls(int(np.flatnonzero(label_vec)[0]), int(np.flatnonzero(attr_vec)[0]),
                   len(label_vec) - 1, len(attr_vec) - 1)


def encode_conditions(labels, attrs, n_labels: int, n_attrs: int) -> np.ndarray:
    labels = np.asarray(labels, int)
    attrs = np.asarray(attrs, int)
    out = np.zeros((len(labels), n_labels + n_attrs + 2))
    rows = np.arange(len(labels))
    out[rows, labels] = 1.0
    out[rows, n_labels + 1 + attrs] = 1.0
    return out


def timestep_embedding(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, float))
    half = EMBED_DIM // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# -- network ------------------------------------------------------------------


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s + z * s * (1.0 - s)


@dataclass
class DenoiserNet:
    """Dense noise predictor.  params alternates weight, bias per layer."""

    dim: int
    n_labels: int
    n_attrs: int
    params: list
    adam: dict = field(default_factory=dict, repr=False)

    @property
    def in_dim(self) -> int:
        return self.dim + EMBED_DIM + self.n_labels + self.n_attrs + 2

    def _inputs(self, xt, t, cond_onehot):
        xt = np.atleast_2d(np.asarray(xt, float))
        t = np.broadcast_to(np.asarray(t), (len(xt),))
        cond_onehot = np.broadcast_to(cond_onehot, (len(xt), cond_onehot.shape[-1]))
        return np.concatenate([xt, timestep_embedding(t), cond_onehot], axis=1)

    def _forward(self, inp):
        acts = [inp]
        pre = []
        h = inp
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                pre.append(z)
                h = _silu(z)
                acts.append(h)
            else:
                h = z
        return h, acts, pre

    def predict(self, xt, t, cond_onehot) -> np.ndarray:
        """Predicted noise for a batch sharing or not sharing t and condition."""
        return self._forward(self._inputs(xt, t, cond_onehot))[0]

    def copy(self) -> "DenoiserNet":
        return copy.deepcopy(self)

    def to_json(self, sched: DiffusionSchedule | None = None) -> dict:
        obj = {
            "dim": self.dim,
            "n_labels": self.n_labels,
            "n_attrs": self.n_attrs,
            "params": [p.tolist() for p in self.params],
        }
        if sched is not None:
            obj["schedule"] = sched.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "DenoiserNet":
        params = [np.asarray(p, float) for p in obj["params"]]
        return cls(int(obj["dim"]), int(obj["n_labels"]), int(obj["n_attrs"]), params)


def init_denoiser(dim: int, n_labels: int, n_attrs: int = 0, hidden: int = 64,
                  depth: int = 2, seed=0) -> DenoiserNet:
    if dim < 1 or dim > 16:
        raise ValueError("dim must be in 1..16")
    if n_labels < 0 or n_attrs < 0 or hidden < 1 or depth < 1:
        raise ValueError("bad network shape")
    rng = np.random.default_rng(seed)
    sizes = [dim + EMBED_DIM + n_labels + n_attrs + 2] + [hidden] * depth + [dim]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append(rng.standard_normal((a, b)) / math.sqrt(a))
        params.append(np.zeros(b))
    return DenoiserNet(dim, n_labels, n_attrs, params)


def loss_and_grad(net: DenoiserNet, xt, t, cond_onehot, eps) -> tuple[float, list]:
    """Mean squared noise-prediction error and its gradient w.r.t. net.params."""
    inp = net._inputs(xt, t, cond_onehot)
    out, acts, pre = net._forward(inp)
    eps = np.asarray(eps, float)
    diff = out - eps
    loss = float(np.mean(diff**2))
    g = 2.0 * diff / diff.size
    grads = [None] * len(net.params)
    n_layers = len(net.params) // 2
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.params[2 * i].T) * _silu_grad(pre[i - 1])
    return loss, grads


def _adam_step(net: DenoiserNet, grads, lr: float):
    if not net.adam:
        net.adam = {"step": 0, "m": [np.zeros_like(p) for p in net.params],
                    "v": [np.zeros_like(p) for p in net.params]}
    st = net.adam
    st["step"] += 1
    b1, b2 = ADAM_BETAS
    c1 = 1.0 - b1 ** st["step"]
    c2 = 1.0 - b2 ** st["step"]
    for p, g, m, v in zip(net.params, grads, st["m"], st["v"]):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def train_epoch(net: DenoiserNet, x, labels, attrs, sched: DiffusionSchedule, lr: float,
                drop_prob: float = 0.1, seed=0, batch_size: int = 128) -> tuple[DenoiserNet, float]:
    """One shuffled pass of Adam over (x, labels, attrs); returns (new net, mean loss).

    Label 0 marks an unlabelled example, which always trains with the null
    condition.  Labelled examples are nulled with probability drop_prob.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n = len(x)
    if n == 0:
        raise ValueError("empty training data")
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError("drop_prob must be in [0, 1]")
    labels = np.asarray(labels, int)
    attrs = np.zeros(n, int) if attrs is None else np.asarray(attrs, int)
    net = net.copy()
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        m = len(idx)
        t = rng.integers(0, sched.T, size=m)
        eps = rng.standard_normal((m, net.dim))
        # always drawn so the stream does not depend on the labels
        dropped = rng.random(m) < drop_prob
        lab = labels[idx].copy()
        att = attrs[idx].copy()
        null = dropped | (lab == 0)
        lab[null] = 0
        att[null] = 0
        ab = sched.alpha_bars[t][:, None]
        xt = np.sqrt(ab) * x[idx] + np.sqrt(1.0 - ab) * eps
        cond = encode_conditions(lab, att, net.n_labels, net.n_attrs)
        loss, grads = loss_and_grad(net, xt, t, cond, eps)
        total += loss * m
        if lr != 0.0:
            _adam_step(net, grads, lr)
    return net, total / n


def cfg_denoise(net: DenoiserNet, xt, t, cond: ConditionVector, w: float) -> np.ndarray:
    """Classifier-free guided noise estimate (1 + w) eps_cond - w eps_null."""
    if cond.is_null:
        raise ValueError("guidance needs a non-null condition")
    eps_c = net.predict(xt, t, cond.vector())
    if w == 0:
        return eps_c
    eps_u = net.predict(xt, t, cond.null().vector())
    return (1.0 + w) * eps_c - w * eps_u


def sample(net: DenoiserNet, sched: DiffusionSchedule, cond: ConditionVector, w: float,
           n: int, seed) -> np.ndarray:
    """Ancestral sampling of n vectors with fixed reverse variance beta_t."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, net.dim))
    for t in range(sched.T - 1, -1, -1):
        beta = sched.betas[t]
        eps = cfg_denoise(net, x, t, cond, w)
        x = (x - beta / math.sqrt(1.0 - sched.alpha_bars[t]) * eps) / math.sqrt(1.0 - beta)
        if t > 0:
            x = x + math.sqrt(beta) * rng.standard_normal(x.shape)
    return x


def train(net: DenoiserNet, x, labels, attrs, sched: DiffusionSchedule, steps: int, lr: float = 1e-3,
          drop_prob: float = 0.1, seed=0, batch_size: int = 128) -> tuple[DenoiserNet, list]:
    """Run whole epochs until at least `steps` optimizer steps; returns (net, epoch losses)."""
    per_epoch = -(-len(x) // batch_size)
    epochs = max(1, -(-steps // per_epoch))
    seeds = np.random.SeedSequence(seed).spawn(epochs)
    losses = []
    for s in seeds:
        net, loss = train_epoch(net, x, labels, attrs, sched, lr, drop_prob,
                                int(s.generate_state(1)[0]), batch_size)
        losses.append(loss)
    return net, losses


def save_checkpoint(net: DenoiserNet, sched: DiffusionSchedule, path) -> None:
    Path(path).write_text(json.dumps(net.to_json(sched), sort_keys=True))


def load_checkpoint(path) -> tuple[DenoiserNet, DiffusionSchedule]:
    obj = json.loads(Path(path).read_text())
    return DenoiserNet.from_json(obj), DiffusionSchedule.from_json(obj["schedule"])


def write_samples_csv(rows, path) -> None:
    """rows: iterable of (ConditionVector, vectors array)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        dim = None
        for cond, vecs in rows:
            vecs = np.atleast_2d(vecs)
            if dim is None:
                dim = vecs.shape[1]
                wr.writerow(["label", "attribute"] + [f"x{i}" for i in range(dim)])
            for v in vecs:
                wr.writerow([cond.label, cond.attribute] + [repr(float(a)) for a in v])


# -- upsampler degradation ----------------------------------------------------


@dataclass(frozen=True)
class DegradePlan:
    """The random decisions of one degradation call."""

    antialias: bool
    add_noise: bool
    blur_sigma: float


def degrade_plan(seed, antialias_prob=0.5, noise_prob=0.2, blur_sigma_std=0.2) -> DegradePlan:
    rng = np.random.default_rng(seed)
    antialias = bool(rng.random() < antialias_prob)
    add_noise = bool(rng.random() < noise_prob)
    sigma = abs(float(rng.normal(0.0, blur_sigma_std))) if blur_sigma_std > 0 else 0.0
    return DegradePlan(antialias, add_noise, sigma)


def bilinear_resize(img, h2: int, w2: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping."""
    img = np.asarray(img, float)
    h, w = img.shape

    def taps(n_in, n_out):
        c = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    r0, r1, fr = taps(h, h2)
    c0, c1, fc = taps(w, w2)
    rows = img[r0] * (1 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1 - fc) + rows[:, c1] * fc


def gaussian_kernel(sigma: float, size: int = 7) -> np.ndarray:
    r = np.arange(size) - size // 2
    if sigma <= 0:
        return (r == 0).astype(float)
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def quantize(img) -> np.ndarray:
    """Clip to [0, 255] and round to the 256 integer levels."""
    return np.rint(np.clip(np.asarray(img, float), 0.0, 255.0))


def degrade_for_upsampler(img, target, seed, *, antialias_prob=0.5, noise_prob=0.2,
                          noise_sigma=4.0, blur_sigma_std=0.2, blur_size=7) -> np.ndarray:
    """Upsample, maybe add noise, blur, quantize and map to [-1, 1]."""
    img = np.asarray(img, float)
    if img.ndim != 2:
        raise ValueError("expected a 2-D grid")
    h2, w2 = target
    if h2 < img.shape[0] or w2 < img.shape[1]:
        raise ValueError("target must not be smaller than the source")
    plan = degrade_plan(seed, antialias_prob, noise_prob, blur_sigma_std)
    noise_rng = np.random.default_rng([int(s) for s in np.atleast_1d(seed)] + [1])
    # anti-aliasing only alters downsampling, so both branches coincide here
    out = bilinear_resize(img, h2, w2)
    if plan.add_noise:
        out = out + noise_sigma * noise_rng.standard_normal(out.shape)
    k = gaussian_kernel(plan.blur_sigma, blur_size)
    out = ndimage.correlate1d(out, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return quantize(out) / 127.5 - 1.0
