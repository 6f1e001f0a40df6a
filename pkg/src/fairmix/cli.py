"""Command-line entry point.

    fairmix bernoulli|gmm|diffusion|analyze [--config PATH] [--set KEY=VALUE ...]
                                            [--out DIR] [--workers N] [--seed-offset N]

Each run writes one directory holding the effective config, CSV tables, a JSON
summary and a manifest of SHA-256 hashes.  Nothing in the output depends on
wall-clock time or on the worker count.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, diffusion, distmix, gmm

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    experiment: str
    params: dict
    seeds: list
    out: Path


DEFAULTS = {
    "bernoulli": {
        "p0": 0.2,
        "p_hat0": 0.5,
        "t0": 1 / 6,
        "direction": "forward",
        "n_values": [6, 25, 100],
        "resamples": 1000,
        "sweep_p_hat": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.7, 0.9],
        "sweep_n": 6,
        "ci_level": 0.95,
        "hidden_p": [[0.35, 0.4], [0.1, 0.15]],
        "hidden_p_hat": [[0.7, 0.2], [0.05, 0.05]],
        "hidden_n_values": [10, 50, 200],
        "hidden_trials": 10,
        "hidden_direction": "reverse",
        "seeds": [0],
    },
    "gmm": {
        "preset": "2c64d",
        "dims": None,
        "components": None,
        "n_unlabelled": None,
        "n_labelled": [4],
        "n_generated": [0, 1000],
        "epochs": 200,
        "lr": 0.1,
        "batch_size": 64,
        "validation_size": gmm.VALIDATION_SIZE,
        "covariance_scale": 0.1,
        "shared_means": False,
        "em_max_iters": 100,
        "em_tol": 1e-6,
        "seeds": list(range(10)),
    },
    "diffusion": {
        "mode": "train",
        "checkpoint": "checkpoint.json",
        "data": None,
        "centers": [[-2.0, 0.0], [2.0, 0.0]],
        "spread": 0.5,
        "n_per_class": 1000,
        "steps": 2000,
        "lr": 1e-3,
        "drop_prob": 0.1,
        "batch_size": 128,
        "hidden": 64,
        "T": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "labels": None,
        "attribute": 0,
        "w": None,
        "n": 500,
        "seeds": [0],
    },
    "analyze": {
        "embeddings": {},
        "predictions": None,
        "beta": [],
        "metrics": ["mmd", "mann_whitney", "pca", "auc", "beta"],
        "mmd_s": 30,
        "mmd_n": 300,
        "kernel_offset": 1.0,
        "pca_fractions": [0.6, 0.7, 0.8, 0.9, 0.95],
        "beta_samples": 100_000,
        "seeds": [0],
    },
}


# -- config handling ----------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(command: str, path=None, overrides=(), seed_offset: int = 0, out=None) -> RunConfig:
    params = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            given = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON at line {e.lineno}: {e.msg}") from None
        if not isinstance(given, dict):
            raise ConfigError(f"{p}: top level must be an object")
        given.pop("experiment", None)
        _merge(params, given, str(p))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        _merge(params, {key.strip(): _parse_value(val)}, "--set")
    seeds = params.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    params["seeds"] = [s + seed_offset for s in seeds]
    out = Path(out) if out is not None else Path("runs") / command
    return RunConfig(command, params, params["seeds"], out)


def _merge(params: dict, given: dict, origin: str) -> None:
    for k, v in given.items():
        if k not in params:
            raise ConfigError(f"{origin}: unknown parameter {k!r}")
        params[k] = v


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


# -- output helpers -----------------------------------------------------------


class RunWriter:
    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: dict = {}

    def text(self, name: str, content: str) -> Path:
        path = self.out / name
        path.write_text(content, newline="")
        self.files[name] = hashlib.sha256(content.encode()).hexdigest()
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_cell(v) for v in r])
        return self.text(name, buf.getvalue())

    def finish(self) -> None:
        manifest = json.dumps({"files": dict(sorted(self.files.items()))}, indent=2, sort_keys=True) + "\n"
        (self.out / "manifest.json").write_text(manifest, newline="")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if math.isinf(v) and v > 0 else repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            raise NumericalFailure("NaN in output")
        return "inf" if math.isinf(v) and v > 0 else ("-inf" if math.isinf(v) else v)
    return obj


def _pmap(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _derive(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# -- bernoulli ----------------------------------------------------------------


def _bernoulli_task(args):
    p0, p_hat0, n, resamples, seeds, direction, level = args
    alphas = np.concatenate([distmix.bernoulli_optimal_alphas(p0, p_hat0, n, resamples, _derive(s, n), direction)
                             for s in seeds])
    lo, hi = distmix.bootstrap_mean_ci(alphas, level, seed=_derive(seeds[0], n, 1))
    return float(alphas.mean()), lo, hi


def _hidden_task(args):
    p, p_hat, n, seed, direction = args
    mixed, real = distmix.hidden_trial(p, p_hat, n, seed, direction)
    return mixed, real


def cmd_bernoulli(cfg: RunConfig, workers: int) -> dict:
    P = cfg.params
    for k in ("p0", "p_hat0", "t0"):
        _require(isinstance(P[k], (int, float)) and 0 <= P[k] <= 1, f"{k} must be in [0, 1]")
    _require(P["direction"] in distmix.DIRECTIONS, f"direction must be one of {distmix.DIRECTIONS}")
    _require(isinstance(P["resamples"], int) and P["resamples"] >= 1, "resamples must be >= 1")
    _require(all(isinstance(n, int) and n >= 1 for n in P["n_values"] + [P["sweep_n"]]), "sample sizes must be >= 1")
    _require(0 < P["ci_level"] < 1, "ci_level must be in (0, 1)")
    p = [P["p0"], 1 - P["p0"]]
    g = [P["p_hat0"], 1 - P["p_hat0"]]
    single = distmix.optimal_alpha(p, [P["t0"], 1 - P["t0"]], g, direction=P["direction"])

    tasks = [(P["p0"], P["p_hat0"], n, P["resamples"], cfg.seeds, P["direction"], P["ci_level"])
             for n in P["n_values"]]
    tasks += [(P["p0"], ph, P["sweep_n"], P["resamples"], cfg.seeds, P["direction"], P["ci_level"])
              for ph in P["sweep_p_hat"]]
    res = _pmap(_bernoulli_task, tasks, workers)
    rows = [("n", n, *r) for n, r in zip(P["n_values"], res[: len(P["n_values"])])]
    rows += [("p_hat0", ph, *r) for ph, r in zip(P["sweep_p_hat"], res[len(P["n_values"]):])]

    hidden_rows = []
    if P["hidden_trials"] > 0 and P["hidden_n_values"]:
        try:
            distmix.JointDist(P["hidden_p"])
            distmix.JointDist(P["hidden_p_hat"])
        except ValueError as e:
            raise ConfigError(f"hidden model: {e}") from None
        htasks = [(P["hidden_p"], P["hidden_p_hat"], n, _derive(s, n, i), P["hidden_direction"])
                  for n in P["hidden_n_values"] for s in cfg.seeds for i in range(P["hidden_trials"])]
        hres = _pmap(_hidden_task, htasks, workers)
        for (_, _, n, seed, _), (mixed, real) in zip(htasks, hres):
            hidden_rows.append((n, seed, mixed.kl, real.kl, *mixed.bar_t, *mixed.bar_p))

    w = RunWriter(cfg.out)
    w.json("config.json", cfg.params)
    w.csv("alphas.csv", ["parameter", "value", "mean_alpha_gen", "ci_low", "ci_high"], rows)
    if hidden_rows:
        nl = len(P["hidden_p"])
        w.csv("hidden.csv", ["n", "seed", "kl_mixed", "kl_real_only"] + [f"bar_t{i}" for i in range(nl)]
              + [f"bar_p{i}" for i in range(nl)], hidden_rows)
    summary = {"single_run": single.to_json(),
               "trend": {str(r[1]): {"mean": r[2], "ci": [r[3], r[4]]} for r in rows if r[0] == "n"}}
    if hidden_rows:
        summary["hidden_mixed_never_worse"] = all(r[2] <= r[3] + 1e-12 for r in hidden_rows)
    w.json("summary.json", summary)
    w.finish()
    return summary


# -- gmm ----------------------------------------------------------------------


def cmd_gmm(cfg: RunConfig, workers: int) -> dict:
    P = dict(cfg.params)
    preset = P.pop("preset")
    base = {}
    if preset is not None:
        _require(preset in gmm.PAPER_CONFIGS, f"unknown preset {preset!r}; choose from {sorted(gmm.PAPER_CONFIGS)}")
        base = dict(gmm.PAPER_CONFIGS[preset])
    for k in ("dims", "components", "n_unlabelled"):
        if P[k] is not None:
            base[k] = P[k]
        P.pop(k)
    _require(all(k in base for k in ("dims", "components", "n_unlabelled")),
             "dims, components and n_unlabelled are required without a preset")
    P["seeds"] = cfg.seeds
    try:
        gcfg = gmm.GMMExperimentConfig(**base, **P)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    rows = gmm.run_gmm_experiment(gcfg, workers=workers)
    w = RunWriter(cfg.out)
    w.json("config.json", cfg.params)
    w.csv("results.csv", list(gmm.RESULT_COLUMNS), [[r[c] for c in gmm.RESULT_COLUMNS] for r in rows])
    w.csv("per_seed.csv", ["n_labelled", "n_generated", "seed", "acc"],
          [(r["n_labelled"], r["n_generated"], s, a) for r in rows for s, a in zip(gcfg.seeds, r["per_seed"])])
    summary = {"config": gmm.config_to_json(gcfg),
               "results": [{c: r[c] for c in gmm.RESULT_COLUMNS} for r in rows]}
    w.json("summary.json", summary)
    w.finish()
    return summary


# -- diffusion ----------------------------------------------------------------


def _diffusion_data(P):
    if P["data"] is not None:
        path = Path(P["data"])
        if not path.is_file():
            raise ConfigError(f"data file not found: {path}")
        rows = []
        with open(path, newline="") as fh:
            for lineno, rec in enumerate(csv.reader(fh), start=1):
                if lineno == 1 and rec[:2] == ["label", "attribute"]:
                    continue
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    raise ConfigError(f"{path}: line {lineno}: non-numeric value") from None
                if len(rows[-1]) < 3 or len(rows[-1]) != len(rows[0]):
                    raise ConfigError(f"{path}: line {lineno}: expected label, attribute and a vector")
        _require(bool(rows), f"{path}: no rows")
        arr = np.array(rows)
        labels = arr[:, 0].astype(int)
        attrs = arr[:, 1].astype(int)
        return arr[:, 2:], labels, attrs, int(labels.max()), int(attrs.max())
    centers = np.asarray(P["centers"], float)
    _require(centers.ndim == 2 and len(centers) >= 1, "centers must be a list of vectors")
    _require(P["n_per_class"] >= 1 and P["spread"] > 0, "n_per_class >= 1 and spread > 0 required")
    rng = np.random.default_rng(_derive(P["seeds"][0], 0))
    x = np.concatenate([rng.normal(c, P["spread"], (P["n_per_class"], len(c))) for c in centers])
    labels = np.repeat(np.arange(1, len(centers) + 1), P["n_per_class"])
    return x, labels, np.zeros(len(x), int), len(centers), 0


def _sample_task(args):
    ckpt, label, attribute, w, n, seed = args
    net, sched = diffusion.DenoiserNet.from_json(ckpt), diffusion.DiffusionSchedule.from_json(ckpt["schedule"])
    cond = diffusion.ConditionVector(label, attribute, net.n_labels, net.n_attrs)
    return diffusion.sample(net, sched, cond, w, n, seed)


def cmd_diffusion(cfg: RunConfig, workers: int) -> dict:
    P = cfg.params
    _require(P["mode"] in ("train", "sample"), "mode must be 'train' or 'sample'")
    w = RunWriter(cfg.out)
    if P["mode"] == "train":
        _require(isinstance(P["steps"], int) and P["steps"] >= 1, "steps must be >= 1")
        _require(0 <= P["drop_prob"] <= 1, "drop_prob must be in [0, 1]")
        try:
            sched = diffusion.make_schedule(P["T"], P["beta_start"], P["beta_end"])
            x, labels, attrs, n_labels, n_attrs = _diffusion_data(P)
            net = diffusion.init_denoiser(x.shape[1], n_labels, n_attrs, hidden=P["hidden"],
                                          seed=_derive(cfg.seeds[0], 1))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        net, losses = diffusion.train(net, x, labels, attrs, sched, P["steps"], P["lr"], P["drop_prob"],
                                      _derive(cfg.seeds[0], 2), P["batch_size"])
        if not all(math.isfinite(v) for v in losses) or not all(np.isfinite(p).all() for p in net.params):
            raise NumericalFailure("training diverged")
        w.json("config.json", P)
        w.text("checkpoint.json", json.dumps(net.to_json(sched), sort_keys=True) + "\n")
        w.csv("losses.csv", ["epoch", "loss"], list(enumerate(losses)))
        summary = {"epochs": len(losses), "first_loss": losses[0], "final_loss": losses[-1]}
    else:
        _require(P["w"] is not None, "sample mode requires a guidance weight w")
        _require(isinstance(P["w"], (int, float)), "w must be a number")
        _require(isinstance(P["n"], int) and P["n"] >= 1, "n must be >= 1")
        path = Path(P["checkpoint"])
        _require(path.is_file(), f"checkpoint not found: {path}")
        try:
            ckpt = json.loads(path.read_text())
            net = diffusion.DenoiserNet.from_json(ckpt)
            diffusion.DiffusionSchedule.from_json(ckpt["schedule"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path}: unreadable checkpoint ({e})") from None
        labels = P["labels"] if P["labels"] is not None else list(range(1, net.n_labels + 1))
        try:
            conds = [diffusion.ConditionVector(int(y), int(P["attribute"]), net.n_labels, net.n_attrs) for y in labels]
        except ValueError as e:
            raise ConfigError(str(e)) from None
        _require(all(not c.is_null for c in conds), "guided sampling needs non-null conditions")
        tasks = [(ckpt, c.label, c.attribute, float(P["w"]), P["n"], _derive(s, c.label, c.attribute))
                 for s in cfg.seeds for c in conds]
        draws = _pmap(_sample_task, tasks, workers)
        if not all(np.isfinite(d).all() for d in draws):
            raise NumericalFailure("non-finite samples")
        w.json("config.json", P)
        diffusion.write_samples_csv([(c, d) for (_, c), d in zip([(s, c) for s in cfg.seeds for c in conds], draws)],
                                    cfg.out / "samples.csv")
        w.files["samples.csv"] = hashlib.sha256((cfg.out / "samples.csv").read_bytes()).hexdigest()
        summary = {"conditions": [[c.label, c.attribute] for c in conds], "n": P["n"], "w": P["w"],
                   "means": {f"{s}:{c.label}:{c.attribute}": d.mean(axis=0)
                             for (s, c), d in zip([(s, c) for s in cfg.seeds for c in conds], draws)}}
    w.json("summary.json", summary)
    w.finish()
    return summary


# -- analyze ------------------------------------------------------------------


def _load_predictions(path: Path):
    preds = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        _require(header is not None and header[:2] == ["score", "truth"],
                 f"{path}: line 1: expected header score,truth[,subgroup]")
        for lineno, rec in enumerate(rd, start=2):
            if not rec:
                continue
            try:
                preds.append(analysis.ScoredPrediction(float(rec[0]), int(rec[1]), rec[2] if len(rec) > 2 else None))
            except (ValueError, IndexError) as e:
                raise ConfigError(f"{path}: line {lineno}: {e}") from None
    return preds


def _mmd_task(args):
    a, b, s, n, seed, offset = args
    return analysis.mmd_protocol(a, b, s, n, seed, offset)


def _embedding_layout(spec: dict) -> dict:
    """Normalise ``{domain: path}`` or ``{scheme: {domain: path}}`` to the nested form."""
    if all(isinstance(v, str) for v in spec.values()):
        return {"default": dict(spec)} if spec else {}
    _require(all(isinstance(v, dict) and all(isinstance(p, str) for p in v.values()) for v in spec.values()),
             "embeddings must be {domain: path} or {scheme: {domain: path}}")
    return spec


def cmd_analyze(cfg: RunConfig, workers: int) -> dict:
    P = cfg.params
    known = {"mmd", "mann_whitney", "pca", "auc", "beta"}
    _require(set(P["metrics"]) <= known, f"metrics must be drawn from {sorted(known)}")
    _require(isinstance(P["embeddings"], dict), "embeddings must map a name to a file")
    schemes = _embedding_layout(P["embeddings"])
    emb: dict = {}      # (scheme, domain) -> EmbeddingSet
    for scheme in sorted(schemes):
        for domain in sorted(schemes[scheme]):
            path = Path(schemes[scheme][domain])
            _require(path.is_file(), f"embeddings file not found: {path}")
            try:
                emb[scheme, domain] = analysis.load_embeddings(path, domain_tag=domain)
            except ValueError as e:
                raise ConfigError(f"{path}: {e}") from None
    report = analysis.MetricsReport()
    w = RunWriter(cfg.out)
    w.json("config.json", P)
    summary: dict = {}

    # estimates[scheme][(a, b)] for every unordered pair of distinct domains
    estimates: dict = {}
    if {"mmd", "mann_whitney"} & set(P["metrics"]) and emb:
        for key, e in emb.items():
            _require(len(e) >= P["mmd_n"], f"{'/'.join(key)}: needs at least mmd_n={P['mmd_n']} vectors")
        jobs = []
        for scheme in sorted(schemes):
            doms = sorted(schemes[scheme])
            jobs += [(scheme, a, b) for i, a in enumerate(doms) for b in doms[i + 1:]]
        # the subsample stream depends only on the domain pair, so schemes are compared on equal draws
        pair_ids = {pair: i for i, pair in enumerate(sorted({(a, b) for _, a, b in jobs}))}
        tasks = [(emb[sc, a].vectors, emb[sc, b].vectors, P["mmd_s"], P["mmd_n"],
                  _derive(s, pair_ids[a, b]), P["kernel_offset"])
                 for sc, a, b in jobs for s in cfg.seeds]
        res = _pmap(_mmd_task, tasks, workers)
        k = len(cfg.seeds)
        rows = []
        for i, (sc, a, b) in enumerate(jobs):
            est = np.concatenate(res[i * k:(i + 1) * k])
            estimates.setdefault(sc, {})[a, b] = est
            report.add_samples(f"mmd/{sc}/{a}|{b}", est)
            rows.append((sc, a, b, est.mean(), est.std(), analysis.format_mean_std(est)))
        w.csv("mmd.csv", ["scheme", "domain_a", "domain_b", "mean", "std", "formatted"], rows)
        summary["mmd"] = {f"{r[0]}/{r[1]}|{r[2]}": r[5] for r in rows}
    if "mann_whitney" in P["metrics"] and estimates:
        names = sorted(estimates)
        rows = []
        for pair in sorted({p for sc in names for p in estimates[sc]}):
            have = [sc for sc in names if pair in estimates[sc]]
            for i, s1 in enumerate(have):
                for s2 in have[i:]:
                    u, p = analysis.mann_whitney_u(estimates[s1][pair], estimates[s2][pair])
                    rows.append((pair[0], pair[1], s1, s2, u, p))
                    report.add(f"mann_whitney_p/{pair[0]}|{pair[1]}/{s1}~{s2}", p)
        w.csv("mann_whitney.csv", ["domain_a", "domain_b", "scheme_1", "scheme_2", "U", "p_two_sided"], rows)
    if "pca" in P["metrics"] and emb:
        fracs = P["pca_fractions"]
        _require(all(0 < f <= 1 for f in fracs), "pca fractions must be in (0, 1]")
        rows = []
        for (sc, a), e in emb.items():
            for f in fracs:
                m = analysis.pca_components_for_variance(e.vectors, f)
                rows.append((sc, a, f, m))
                report.add(f"pca/{sc}/{a}/{f}", m)
        w.csv("pca.csv", ["scheme", "dataset", "fraction", "components"], rows)
    if "auc" in P["metrics"] and P["predictions"] is not None:
        path = Path(P["predictions"])
        _require(path.is_file(), f"predictions file not found: {path}")
        preds = _load_predictions(path)
        try:
            report.add("auc/all", analysis.auc(preds))
            groups = {p.subgroup for p in preds if p.subgroup is not None}
            if len(groups) >= 2:
                per = analysis.subgroup_aucs([p for p in preds if p.subgroup is not None])
                for g, v in per.items():
                    report.add(f"auc/{g}", v)
                    signed, absolute = analysis.auc_parity(preds, g)
                    report.add(f"auc_parity_signed/{g}", signed)
                    report.add(f"auc_parity_abs/{g}", absolute)
                report.add("auc_gap", analysis.subgroup_gap(per))
        except ValueError as e:
            raise ConfigError(f"{path}: {e}") from None
    if "beta" in P["metrics"]:
        for j, item in enumerate(P["beta"]):
            try:
                name = item.get("name", f"beta{j}")
                mean, spread = analysis.beta_fairness_estimate(tuple(item["group"]), tuple(item["outgroup"]),
                                                               P["beta_samples"], _derive(cfg.seeds[0], 7, j))
            except (AttributeError, KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"beta entry {j}: {e}") from None
            report.add(f"beta/{name}/mean_diff", mean)
            report.add(f"beta/{name}/spread", spread)
    w.json("metrics.json", report.to_json())
    w.text("metrics.csv", report.to_csv())
    summary["n_metrics"] = len(report.metrics)
    w.json("summary.json", summary)
    w.finish()
    return summary


COMMANDS = {"bernoulli": cmd_bernoulli, "gmm": cmd_gmm, "diffusion": cmd_diffusion, "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairmix", description="Reproducible mixing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed-offset", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.seed_offset < 0:
            raise ConfigError("--seed-offset must be >= 0")
        cfg = load_config(args.command, args.config, args.set, args.seed_offset, args.out)
        with np.errstate(over="ignore", under="ignore"):
            COMMANDS[args.command](cfg, args.workers)
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as e:
        # LinAlgError subclasses ValueError, so it must be caught first
        print(f"fairmix {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"fairmix {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
