"""Datasets with sensitive attributes, fair sampling and mixed real/generated batches.

Attribute values are stored as category indices into the dataset schema, with
``None`` standing for UNKNOWN.  UNKNOWN values never enter the fair attribute
distribution and are never removed when a dataset is skewed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

UNKNOWN = "UNKNOWN"
ORIGINS = ("real", "generated")


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int | None = None
    soft: np.ndarray | None = None
    attrs: tuple = ()
    origin: str = "real"

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, float))
        if self.label is None and self.soft is None:
            raise ValueError("example needs a label or a soft label")
        if self.soft is not None:
            soft = np.asarray(self.soft, float)
            if (soft < 0).any() or abs(soft.sum() - 1.0) > 1e-6:
                raise ValueError("soft label must be nonnegative and sum to 1")
            object.__setattr__(self, "soft", soft)
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        object.__setattr__(self, "attrs", tuple(self.attrs))

    def class_mass(self, n_classes: int) -> np.ndarray:
        """Soft label, or the one-hot vector of the hard label."""
        if self.soft is not None:
            return self.soft
        out = np.zeros(n_classes)
        out[self.label] = 1.0
        return out


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    class_names: tuple
    attribute_schemas: tuple = ()  # ((axis name, (category, ...)), ...)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "attribute_schemas",
                           tuple((name, tuple(cats)) for name, cats in self.attribute_schemas))
        c = len(self.class_names)
        for i, ex in enumerate(self.examples):
            if ex.label is not None and not 0 <= ex.label < c:
                raise ValueError(f"example {i}: label {ex.label} outside 0..{c - 1}")
            if ex.soft is not None and len(ex.soft) != c:
                raise ValueError(f"example {i}: soft label has {len(ex.soft)} entries, expected {c}")
            if len(ex.attrs) != len(self.attribute_schemas):
                raise ValueError(f"example {i}: expected {len(self.attribute_schemas)} attributes")
            for v, (name, cats) in zip(ex.attrs, self.attribute_schemas):
                if v is not None and not 0 <= v < len(cats):
                    raise ValueError(f"example {i}: {name} value {v} outside schema")

    def __len__(self):
        return len(self.examples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def axis_index(self, axis) -> int:
        if isinstance(axis, str):
            names = [n for n, _ in self.attribute_schemas]
            if axis not in names:
                raise ValueError(f"unknown attribute axis {axis!r}")
            return names.index(axis)
        if not 0 <= axis < len(self.attribute_schemas):
            raise ValueError(f"attribute axis {axis} out of range")
        return int(axis)

    def categories(self, axis) -> tuple:
        return self.attribute_schemas[self.axis_index(axis)][1]

    def with_examples(self, examples) -> "Dataset":
        return Dataset(tuple(examples), self.class_names, self.attribute_schemas)

    def label_mass(self) -> np.ndarray:
        """Per-class count, soft labels contributing fractionally."""
        out = np.zeros(self.n_classes)
        for ex in self.examples:
            out += ex.class_mass(self.n_classes)
        return out

    def attribute_counts(self, axis) -> dict:
        k = self.axis_index(axis)
        counts: dict = {}
        for ex in self.examples:
            counts[ex.attrs[k]] = counts.get(ex.attrs[k], 0) + 1
        return counts


@dataclass(frozen=True)
class MixPolicy:
    alpha_real: float
    equality_level_l: float = 0.0
    filter_top_k: int = 4
    fair_attribute_axis: int | str | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha_real <= 1.0:
            raise ValueError("alpha_real must be in [0, 1]")
        if self.equality_level_l < 0:
            raise ValueError("equality level must be >= 0")
        if self.filter_top_k < 0:
            raise ValueError("filter_top_k must be >= 0")


# -- JSON Lines ---------------------------------------------------------------


def _parse_example(obj: dict, schemas, lineno: int) -> LabeledExample:
    if not isinstance(obj, dict) or "features" not in obj:
        raise ValueError(f"line {lineno}: expected an object with 'features'")
    attrs = []
    raw = obj.get("attrs", {})
    for name, cats in schemas:
        v = raw.get(name, UNKNOWN)
        if v == UNKNOWN or v is None:
            attrs.append(None)
        elif isinstance(v, str):
            if v not in cats:
                raise ValueError(f"line {lineno}: {name} value {v!r} not in schema")
            attrs.append(cats.index(v))
        else:
            attrs.append(int(v))
    try:
        return LabeledExample(obj["features"], obj.get("label"), obj.get("soft"), attrs, obj.get("origin", "real"))
    except ValueError as e:
        raise ValueError(f"line {lineno}: {e}") from None


def load_dataset(path) -> Dataset:
    """Read a JSON Lines dataset, with an optional leading {"schema": ...} line.

    Without a schema, classes are 0..max label and attribute categories are
    the sorted observed values.
    """
    rows = []
    schema = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"line {lineno}: invalid JSON ({e.msg})") from None
        if not rows and schema is None and isinstance(obj, dict) and "schema" in obj:
            schema = obj["schema"]
            continue
        rows.append((lineno, obj))
    if schema is not None:
        class_names = list(schema["class_names"])
        schemas = [(n, list(c)) for n, c in schema.get("attributes", {}).items()]
    else:
        max_label = -1
        observed: dict = {}
        for lineno, obj in rows:
            if not isinstance(obj, dict):
                raise ValueError(f"line {lineno}: expected an object")
            if obj.get("label") is not None:
                max_label = max(max_label, int(obj["label"]))
            elif obj.get("soft") is not None:
                max_label = max(max_label, len(obj["soft"]) - 1)
            for name, v in obj.get("attrs", {}).items():
                vals = observed.setdefault(name, set())
                if v != UNKNOWN and v is not None:
                    vals.add(v)
        class_names = [str(i) for i in range(max_label + 1)]
        schemas = [(n, sorted(observed[n], key=str)) for n in sorted(observed)]
        # integer-valued attributes without a schema index themselves
        schemas = [(n, list(range(max(c) + 1)) if c and all(isinstance(v, int) for v in c) else c)
                   for n, c in schemas]
    examples = [_parse_example(obj, schemas, lineno) for lineno, obj in rows]
    return Dataset(examples, class_names, schemas)


def save_dataset(d: Dataset, path) -> None:
    lines = [json.dumps({"schema": {"class_names": list(d.class_names),
                                    "attributes": {n: list(c) for n, c in d.attribute_schemas}}})]
    for ex in d.examples:
        obj = {"features": ex.features.tolist()}
        if ex.label is not None:
            obj["label"] = int(ex.label)
        if ex.soft is not None:
            obj["soft"] = ex.soft.tolist()
        obj["attrs"] = {n: (UNKNOWN if v is None else cats[v]) for v, (n, cats) in zip(ex.attrs, d.attribute_schemas)}
        obj["origin"] = ex.origin
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + "\n")


# -- fair sampling ------------------------------------------------------------


def fair_sampling_spec(train: Dataset, axis, exact: bool = False):
    """p_train(y) times a uniform distribution over the axis categories.

    Returns a (classes x categories) array, or nested lists of Fractions when
    ``exact`` is set.
    """
    if len(train) == 0:
        raise ValueError("empty dataset")
    cats = train.categories(axis)
    if not cats:
        raise ValueError("attribute axis has no categories")
    mass = train.label_mass()
    if (mass <= 0).any():
        raise ValueError("every class must be present in the training set")
    if exact:
        py = [Fraction(m).limit_denominator(10**12) / len(train) for m in mass]
        return [[p / len(cats) for _ in cats] for p in py]
    py = mass / mass.sum()
    return np.repeat(py[:, None] / len(cats), len(cats), axis=1)


def weight_w1(p_fair: float, p_train: float, l: float) -> float:
    """Importance weight (p_fair / p_train) ** l."""
    if p_train <= 0:
        raise ValueError("p_train must be > 0")
    if l < 0:
        raise ValueError("l must be >= 0")
    return float((p_fair / p_train) ** l)


def prevalence_ranking(d: Dataset) -> list[int]:
    """Classes ordered by descending training mass, ties to the lower index."""
    mass = d.label_mass()
    return sorted(range(d.n_classes), key=lambda c: (-mass[c], c))


def weight_w2(label: int, prevalence_rank: Sequence[int], k: int = 4) -> float:
    """0 for generated examples of the k most prevalent classes, else 1."""
    return 0.0 if label in list(prevalence_rank)[:k] else 1.0


def _train_conditionals(d: Dataset, axis: int) -> np.ndarray:
    """p_train(a | y) over known attribute values."""
    counts = np.zeros((d.n_classes, len(d.attribute_schemas[axis][1])))
    for ex in d.examples:
        a = ex.attrs[axis]
        if a is not None:
            counts[:, a] += ex.class_mass(d.n_classes)
    tot = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return counts / tot


def real_weights(d: Dataset, policy: MixPolicy) -> np.ndarray:
    """w1 for every real example; UNKNOWN attributes and hard-less labels get 1."""
    out = np.ones(len(d))
    if policy.fair_attribute_axis is None or policy.equality_level_l == 0:
        return out
    axis = d.axis_index(policy.fair_attribute_axis)
    cond = _train_conditionals(d, axis)
    p_fair = 1.0 / cond.shape[1]
    for i, ex in enumerate(d.examples):
        a = ex.attrs[axis]
        if a is None:
            continue
        y = ex.label if ex.label is not None else int(np.argmax(ex.soft))
        out[i] = weight_w1(p_fair, cond[y, a], policy.equality_level_l)
    return out


Generator = Callable[[int, "int | None", np.random.Generator], object]


def build_batch(real: Dataset, generator: Generator | None, policy: MixPolicy, batch: int, seed) -> list:
    """Draw a mixed batch of (LabeledExample, loss weight) pairs.

    Each slot is real with probability alpha_real.  Real slots sample the real
    set uniformly and carry w1; generated slots draw (label, attribute) from
    the fair target, call ``generator(label, attribute, rng)`` and carry w2.
    The generator may return a feature vector or a LabeledExample.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if policy.alpha_real < 1 and generator is None:
        raise ValueError("a generator is required when alpha_real < 1")
    if policy.alpha_real > 0 and len(real) == 0:
        raise ValueError("real dataset is empty")
    rng = np.random.default_rng(seed)
    w_real = real_weights(real, policy) if len(real) else None
    ranking = prevalence_ranking(real)
    if policy.fair_attribute_axis is not None:
        axis = real.axis_index(policy.fair_attribute_axis)
        target = fair_sampling_spec(real, axis)
    else:
        axis = None
        mass = real.label_mass()
        target = (mass / mass.sum())[:, None]
    flat = target.ravel()
    n_attr = target.shape[1]
    out = []
    is_real = rng.random(batch) < policy.alpha_real
    for r in is_real:
        if r:
            i = int(rng.integers(len(real)))
            out.append((real.examples[i], float(w_real[i])))
            continue
        cell = int(rng.choice(flat.size, p=flat))
        y, a = divmod(cell, n_attr)
        a = a if axis is not None else None
        child = np.random.default_rng(int(rng.integers(2**63)))
        made = generator(y, a, child)
        if not isinstance(made, LabeledExample):
            attrs = [None] * len(real.attribute_schemas)
            if axis is not None:
                attrs[axis] = a
            made = LabeledExample(made, y, None, attrs, "generated")
        out.append((made, weight_w2(y, ranking, policy.filter_top_k)))
    return out


# -- skewing ------------------------------------------------------------------


def skew_dataset(d: Dataset, axis, caps: dict, seed) -> Dataset:
    """Keep a uniform subset of at most caps[v] examples for each capped value v."""
    k = d.axis_index(axis)
    cats = d.attribute_schemas[k][1]
    norm = {}
    for v, cap in caps.items():
        if isinstance(v, str):
            if v == UNKNOWN:
                continue
            if v not in cats:
                raise ValueError(f"value {v!r} not in schema")
            v = cats.index(v)
        if cap < 0:
            raise ValueError("caps must be >= 0")
        norm[int(v)] = int(cap)
    rng = np.random.default_rng(seed)
    drop = set()
    for v in sorted(norm):
        idx = [i for i, ex in enumerate(d.examples) if ex.attrs[k] == v]
        if len(idx) > norm[v]:
            keep = set(rng.choice(idx, size=norm[v], replace=False).tolist())
            drop.update(i for i in idx if i not in keep)
    return d.with_examples(ex for i, ex in enumerate(d.examples) if i not in drop)


# -- soft labels --------------------------------------------------------------


def aggregate_soft_labels(ratings, classes) -> np.ndarray:
    """Inverse-rank weighted vote over raters.

    ``ratings`` holds one list of (condition, confidence) pairs per rater.
    Each rater's conditions are ranked by descending confidence, ties kept in
    listing order, and weighted 1/rank.  ``classes`` is the class count, or a
    list of class names when conditions are given by name.
    """
    if isinstance(classes, int):
        n = classes
        index = None
    else:
        names = list(classes)
        n = len(names)
        index = {c: i for i, c in enumerate(names)}
    if not ratings:
        raise ValueError("no ratings")
    votes = np.zeros(n)
    for r, rater in enumerate(ratings):
        conds = [c for c, _ in rater]
        if len(set(conds)) != len(conds) or len(conds) > 3:
            raise ValueError(f"rater {r}: at most 3 distinct conditions")
        for cond, conf in rater:
            if not (isinstance(conf, (int, np.integer)) and 1 <= conf <= 5):
                raise ValueError(f"rater {r}: confidence {conf!r} outside 1..5")
        ranked = sorted(enumerate(rater), key=lambda item: (-item[1][1], item[0]))
        for rank, (_, (cond, _)) in enumerate(ranked, start=1):
            i = index[cond] if index is not None else int(cond)
            if not 0 <= i < n:
                raise ValueError(f"rater {r}: unknown condition {cond!r}")
            votes[i] += 1.0 / rank
    total = votes.sum()
    if total == 0:
        raise ValueError("no ratings")
    return votes / total


def threshold_confident(d: Dataset, cls: int, t: float) -> Dataset:
    """Examples whose (soft) label mass on cls is at least t."""
    if not 0 < t <= 1:
        raise ValueError("t must be in (0, 1]")
    if not 0 <= cls < d.n_classes:
        raise ValueError(f"class {cls} out of range")
    return d.with_examples(ex for ex in d.examples if ex.class_mass(d.n_classes)[cls] >= t)
