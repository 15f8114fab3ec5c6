"""Sample-complexity sweeps: model kind x training size x seed."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from gpinet.errors import ContractError, GpiError
from gpinet.graphs import SyntheticSpec, generate_instances
from gpinet.io import atomic_write_text
from gpinet.synthbench.baselines import build_matched_models, check_param_parity
from gpinet.synthbench.training import Arrays, TrainConfig, TrialResult, train

log = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "size", "seed", "train_acc", "eval_acc", "params", "seconds")
CURVE_COLUMNS = ("model", "size", "seed", "epoch", "loss", "train_acc", "eval_acc")


def _derived_seed(*key):
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def train_seed(seed):
    return _derived_seed(seed, 0)


def eval_seed(seed):
    return _derived_seed(seed, 1)


def task_spec(cfg, count, seed):
    return SyntheticSpec(n=cfg.n, K=cfg.K, p_edge=cfg.p_edge, count=count, seed=seed)


def run_trial(cfg, kind, size, seed, kinds=None):
    """One training run. Training sets for a seed are nested across sizes."""
    dtype = np.dtype(cfg.dtype).type
    kinds = tuple(kinds or (kind,))
    models, target = build_matched_models(kinds, cfg.n, cfg.K, 1, cfg.width, cfg.rho_sees_s_i,
                                          seed=seed, dtype=dtype)
    check_param_parity(models, target)
    model = models[kind]
    train_set = generate_instances(task_spec(cfg, size, train_seed(seed)))
    eval_set = generate_instances(task_spec(cfg, cfg.eval_size, eval_seed(seed)))
    trial_cfg = replace(cfg, seed=seed, model=kind)
    try:
        result = train(model, Arrays.from_graphs(train_set, dtype), trial_cfg,
                       Arrays.from_graphs(eval_set, dtype))
    except GpiError as exc:
        log.error("trial %s/%d/%d failed: %s", kind, size, seed, exc)
        return TrialResult(kind, size, seed, float("nan"), float("nan"), model.param_count(),
                           0.0, status="failed", error=str(exc))
    result.model = kind
    return result


def _run_packed(args):
    return run_trial(*args)


def sweep(cfg, kinds, sizes, seeds, jobs=1):
    """Full factorial of trials, returned in (kind, size, seed) order."""
    kinds, sizes, seeds = tuple(kinds), tuple(sizes), tuple(seeds)
    if len(set(kinds)) < 2 or len(set(seeds)) < 3 or not sizes:
        raise ContractError("a sweep compares at least 2 model kinds over at least 3 seeds")
    for s in seeds:
        models, target = build_matched_models(kinds, cfg.n, cfg.K, 1, cfg.width,
                                              cfg.rho_sees_s_i, seed=s)
        check_param_parity(models, target)
    jobs_list = [(cfg, k, size, s, kinds) for k in kinds for size in sizes for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_packed, jobs_list))
    out = []
    for job in jobs_list:
        result = run_trial(*job)
        log.info("%s size=%d seed=%d eval_acc=%.4f (%.1fs)", result.model, result.size,
                 result.seed, result.eval_acc, result.seconds)
        out.append(result)
    return out


def _fmt(x):
    return "nan" if x != x else f"{x:.6f}"


def results_csv(results, timing=True):
    """CSV text with the fixed column set; ``timing=False`` writes 0 seconds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([r.model, r.size, r.seed, _fmt(r.train_acc), _fmt(r.eval_acc), r.params,
                    f"{r.seconds:.3f}" if timing else "0"])
    return buf.getvalue()


def curves_csv(results):
    """Long-format per-epoch learning curves."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in results:
        for row in r.trace:
            w.writerow([r.model, r.size, r.seed, row["epoch"], f"{row['loss']:.6f}",
                        _fmt(row["train_acc"]), _fmt(row["eval_acc"])])
    return buf.getvalue()


def read_results_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [TrialResult(r["model"], int(r["size"]), int(r["seed"]), float(r["train_acc"]),
                        float(r["eval_acc"]), int(r["params"]), float(r["seconds"]))
            for r in rows]


def write_outputs(path, results, cfg, kinds, sizes, seeds, timing=True):
    """Results CSV plus ``<path>.meta.json`` and ``<path>.curves.csv`` beside it."""
    atomic_write_text(path, results_csv(results, timing))
    meta = {
        "config": cfg.to_dict(),
        "kinds": list(kinds),
        "sizes": [int(s) for s in sizes],
        "seeds": [int(s) for s in seeds],
        "params": {r.model: r.params for r in results},
        "failed": [[r.model, r.size, r.seed, r.error] for r in results if r.status != "ok"],
        "epochs_run": [[r.model, r.size, r.seed, r.epochs_run] for r in results],
    }
    atomic_write_text(f"{path}.meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    atomic_write_text(f"{path}.curves.csv", curves_csv(results))


def summarize(results):
    """``{kind: {size: mean eval accuracy over seeds}}`` ignoring failed trials."""
    acc = {}
    for r in results:
        if r.status == "ok":
            acc.setdefault(r.model, {}).setdefault(r.size, []).append(r.eval_acc)
    return {k: {s: float(np.mean(v)) for s, v in sorted(by.items())} for k, by in acc.items()}


def threshold_size(curve, level=0.9):
    """Smallest size whose mean eval accuracy reaches ``level`` (None if never)."""
    for size in sorted(curve):
        if curve[size] >= level:
            return size
    return None


def dominates(curve_a, curve_b, min_size):
    """True when ``curve_a >= curve_b`` at every shared size ``>= min_size``."""
    shared = [s for s in curve_a if s in curve_b and s >= min_size]
    return bool(shared) and all(curve_a[s] >= curve_b[s] for s in shared)


__all__ = [
    "CSV_COLUMNS", "TrainConfig", "curves_csv", "dominates", "read_results_csv", "results_csv",
    "run_trial", "summarize", "sweep", "threshold_size", "write_outputs",
]
