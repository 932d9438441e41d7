"""Experiment orchestration, metrics, poisoning, and robustness analyses.

An experiment binds a graph (path or generator params), a model, an
attack (main or baseline), and a target sample into a Report: a header
echoing the configuration, one record per attacked node sorted by node
id, and a summary recomputable from the records.  Reports serialize as
one JSON object per line; node ids and class labels are 1-based on disk.

Summaries carry no wall-clock fields, so re-running the same
configuration yields byte-identical files; runtime lives on the Report
object only.
"""

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import backend
from .attack import AttackConfig, AttackOutcome, margin, mibtack
from .baselines import BaselineConfig, run_baseline
from .graph import Graph, SbmParams, degree, generate_sbm, load_graph, toggle_edges
from .models import (
    NonFiniteError,
    TrainConfig,
    default_train_config,
    load_model,
    predict_probs,
    train,
)

REPORT_FORMATS = ("json", "csv")


@dataclass(frozen=True)
class ExperimentConfig:
    arch: str
    attack: object
    num_targets: int
    seed: int = 0
    graph_path: str = None
    sbm: SbmParams = None
    train_config: TrainConfig = None
    checkpoint: str = None
    only_correct: bool = False
    gamma_sweep: tuple = ()
    out_path: str = None
    out_format: str = "json"

    def __post_init__(self):
        if (self.graph_path is None) == (self.sbm is None):
            raise ValueError("exactly one of graph_path and sbm is required")
        if not isinstance(self.attack, (AttackConfig, BaselineConfig)):
            raise ValueError("attack must be an AttackConfig or BaselineConfig")
        if self.num_targets < 1:
            raise ValueError("num_targets must be >= 1")
        if self.out_format not in REPORT_FORMATS:
            raise ValueError(f"out_format must be one of {REPORT_FORMATS}")


@dataclass
class Report:
    header: dict
    records: tuple
    summary: dict
    runtime_seconds: float = field(default=0.0, compare=False)


def _mask_label(mask):
    if mask is None:
        return None
    return getattr(mask, "mask_label", "custom")


def _attack_echo(atk):
    if isinstance(atk, AttackConfig):
        return {
            "kind": "mibtack",
            "alpha0": atk.alpha0,
            "beta0": atk.beta0,
            "patience": atk.patience,
            "gamma": atk.gamma,
            "max_total_iters": atk.max_total_iters,
            "seed": atk.seed,
            "candidate_mask": _mask_label(atk.candidate_mask),
            "init_mode": atk.init_mode,
        }
    return {
        "kind": atk.kind,
        "flip_cap": atk.flip_cap,
        "pgd_iters": atk.pgd_iters,
        "seed": atk.seed,
    }


def _train_echo(tc):
    return {
        "learning_rate": tc.learning_rate,
        "weight_decay": tc.weight_decay,
        "dropout": tc.dropout,
        "max_epochs": tc.max_epochs,
        "patience": tc.patience,
        "seed": tc.seed,
    }


def _header(cfg, tc):
    if cfg.graph_path is not None:
        source = {"path": cfg.graph_path}
    else:
        p = cfg.sbm
        source = {"sbm": {
            "num_nodes": p.num_nodes, "num_blocks": p.num_blocks,
            "p_in": p.p_in, "p_out": p.p_out, "num_features": p.num_features,
            "feature_signal": p.feature_signal, "seed": p.seed,
        }}
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    from . import __version__
    return {
        "type": "header",
        "graph": source,
        "arch": cfg.arch,
        "train": _train_echo(tc),
        "checkpoint": cfg.checkpoint,
        "attack": _attack_echo(cfg.attack),
        "num_targets": cfg.num_targets,
        "only_correct": cfg.only_correct,
        "seed": cfg.seed,
        "backend": backend.backend_name(),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba_version,
        },
    }


def sample_targets(g, num_targets, seed, model=None, only_correct=False):
    """Sample target nodes uniformly from the test split, sorted by id.

    With only_correct the pool is first restricted to test nodes the
    model classifies correctly on the clean graph.
    """
    pool = np.sort(np.asarray(g.splits.test, dtype=np.int64))
    if only_correct:
        if model is None:
            raise ValueError("only_correct target sampling needs a model")
        keep = [v for v in pool if margin(model, g, int(v)) >= 0.0]
        pool = np.asarray(keep, dtype=np.int64)
    if num_targets > pool.size:
        raise ValueError(f"requested {num_targets} targets from a pool of {pool.size}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=num_targets, replace=False)
    return np.sort(chosen)


def _resolve_graph(cfg):
    if cfg.graph_path is not None:
        return load_graph(cfg.graph_path)
    return generate_sbm(cfg.sbm)


def _resolve_model(cfg, g, tc):
    if cfg.checkpoint is not None:
        model = load_model(cfg.checkpoint)
        if model.arch != cfg.arch:
            raise ValueError(f"checkpoint holds a {model.arch} model, config says {cfg.arch}")
        return model
    return train(cfg.arch, g, tc)


def _summary(records):
    n = len(records)
    margins_after = np.array([o.margin_after for o in records])
    return {
        "type": "summary",
        "num_targets": n,
        "num_success": int(sum(o.success for o in records)),
        "acc": float(np.mean(margins_after >= 0.0)),
        "total_budget": int(sum(o.min_budget for o in records)),
        "mean_abs_margin_after": float(np.mean(np.abs(margins_after))),
    }


def run_experiment(cfg):
    """Train (or load) the model, attack sampled targets, aggregate, write."""
    t0 = time.perf_counter()
    g = _resolve_graph(cfg)
    tc = cfg.train_config or default_train_config(cfg.arch, seed=cfg.seed)
    model = _resolve_model(cfg, g, tc)
    targets = sample_targets(g, cfg.num_targets, cfg.seed, model=model,
                             only_correct=cfg.only_correct)
    records = []
    for v in targets:
        v = int(v)
        if isinstance(cfg.attack, AttackConfig):
            records.append(mibtack(model, g, v, cfg.attack))
        else:
            records.append(run_baseline(model, g, v, cfg.attack))
    records.sort(key=lambda o: o.node)
    report = Report(
        header=_header(cfg, tc),
        records=tuple(records),
        summary=_summary(records),
        runtime_seconds=time.perf_counter() - t0,
    )
    if cfg.out_path is not None:
        save_report(report, cfg.out_path, fmt=cfg.out_format)
    return report


def run_gamma_sweep(cfg):
    """Run the experiment once per gamma in cfg.gamma_sweep.

    Returns ((gamma, Report), ...).  Only meaningful for the main attack;
    out_path, if set, gains a per-gamma suffix.
    """
    if not cfg.gamma_sweep:
        raise ValueError("gamma_sweep is empty")
    if not isinstance(cfg.attack, AttackConfig):
        raise ValueError("gamma sweep applies to the main attack only")
    results = []
    for gamma in cfg.gamma_sweep:
        out = None
        if cfg.out_path is not None:
            root, ext = os.path.splitext(cfg.out_path)
            out = f"{root}-gamma{gamma:g}{ext}"
        sub = replace(cfg, attack=replace(cfg.attack, gamma=float(gamma)),
                      gamma_sweep=(), out_path=out)
        results.append((float(gamma), run_experiment(sub)))
    return tuple(results)


def _record_to_doc(o):
    return {
        "type": "record",
        "node": int(o.node) + 1,
        "success": bool(o.success),
        "min_budget": int(o.min_budget),
        "flips": [[int(u) + 1, kind] for u, kind in o.flips],
        "margin_before": float(o.margin_before),
        "margin_after": float(o.margin_after),
        "iterations": int(o.iterations),
        "init_class": None if o.init_class is None else int(o.init_class) + 1,
        "method": o.method,
    }


def _doc_to_record(doc):
    return AttackOutcome(
        node=int(doc["node"]) - 1,
        success=bool(doc["success"]),
        min_budget=int(doc["min_budget"]),
        flips=tuple((int(u) - 1, kind) for u, kind in doc["flips"]),
        margin_before=float(doc["margin_before"]),
        margin_after=float(doc["margin_after"]),
        iterations=int(doc["iterations"]),
        init_class=None if doc["init_class"] is None else int(doc["init_class"]) - 1,
        method=doc["method"],
    )


def _atomic_write(path, text):
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_report(report, path, fmt="json"):
    """Write a report atomically; json is the canonical round-trip format."""
    if fmt == "json":
        lines = [_dumps(report.header)]
        lines += [_dumps(_record_to_doc(o)) for o in report.records]
        lines.append(_dumps(report.summary))
        _atomic_write(path, "\n".join(lines) + "\n")
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "method", "success", "min_budget", "flips",
                    "margin_before", "margin_after", "iterations", "init_class"])
        for o in report.records:
            doc = _record_to_doc(o)
            flips = ";".join(f"{u}:{kind}" for u, kind in doc["flips"])
            w.writerow([doc["node"], doc["method"], doc["success"], doc["min_budget"],
                        flips, repr(doc["margin_before"]), repr(doc["margin_after"]),
                        doc["iterations"], doc["init_class"]])
        _atomic_write(path, buf.getvalue())
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path):
    """Read a json report and re-derive the summary as a consistency check."""
    with open(path) as f:
        docs = [json.loads(line) for line in f if line.strip()]
    if len(docs) < 2 or docs[0].get("type") != "header" or docs[-1].get("type") != "summary":
        raise ValueError("report must hold a header, records, and a summary")
    if any(d.get("type") != "record" for d in docs[1:-1]):
        raise ValueError("unexpected record type in report body")
    records = tuple(_doc_to_record(d) for d in docs[1:-1])
    summary = docs[-1]
    if _summary(records) != summary:
        raise ValueError("report summary does not match its records")
    return Report(header=docs[0], records=records, summary=summary)


def _poison_seed(base_seed, node):
    return int(np.random.SeedSequence([int(base_seed), int(node)]).generate_state(1)[0])


def poison_eval(g, outcomes, arch, tc, max_targets=None):
    """Retrain on each perturbed graph and measure surviving accuracy.

    For every outcome considered, the target's flips are applied to a
    copy of the graph, the model retrains from scratch with a seed
    derived from (tc.seed, node), and the target is tested against the
    retrained model.  Failed attacks and diverging retrains count as
    still correctly classified.  Returns the still-correct fraction, or
    None for an empty outcome list.
    """
    outcomes = sorted(outcomes, key=lambda o: o.node)
    if max_targets is not None:
        outcomes = outcomes[:max_targets]
    if not outcomes:
        return None
    still = 0
    for o in outcomes:
        if not o.success:
            still += 1
            continue
        pairs = [tuple(sorted((int(o.node), int(u)))) for u, _ in o.flips]
        gp = toggle_edges(g, pairs) if pairs else g
        seeded = replace(tc, seed=_poison_seed(tc.seed, o.node))
        try:
            m2 = train(arch, gp, seeded)
        except NonFiniteError:
            still += 1
            continue
        if margin(m2, gp, int(o.node)) >= 0.0:
            still += 1
    return still / len(outcomes)


def robustness_vs_degree(outcomes, g):
    """OLS fit of attack budget against clean degree over successful outcomes.

    Returns (slope, intercept, rows) with rows of (node, degree,
    robustness); slope and intercept are None when every degree is equal.
    """
    succ = [o for o in outcomes if o.success]
    if len(succ) < 2:
        raise ValueError("need at least 2 successful outcomes")
    rows = [(int(o.node), degree(g, int(o.node)), int(o.min_budget)) for o in succ]
    rows.sort()
    degs = np.array([r[1] for r in rows], dtype=np.float64)
    rhos = np.array([r[2] for r in rows], dtype=np.float64)
    if np.all(degs == degs[0]):
        return None, None, rows
    slope, intercept = np.polyfit(degs, rhos, 1)
    return float(slope), float(intercept), rows


def robustness_deciles(outcomes, model, g):
    """Clean accuracy and confidence across ten robustness-ranked bins.

    Targets are ranked by budget ascending (ties by node id) and split
    into 10 near-equal bins, the remainder going to the lowest bins.
    Each row is (decile, accuracy, mean_confidence) on the clean graph.
    """
    if len(outcomes) < 10:
        raise ValueError("need at least 10 outcomes")
    ranked = sorted(outcomes, key=lambda o: (o.min_budget, o.node))
    probs = predict_probs(model, g)
    n = len(ranked)
    base, rem = divmod(n, 10)
    rows = []
    start = 0
    for d in range(10):
        size = base + (1 if d < rem else 0)
        chunk = ranked[start:start + size]
        start += size
        nodes = [int(o.node) for o in chunk]
        acc = float(np.mean([o.margin_before >= 0.0 for o in chunk]))
        conf = float(np.mean([probs[v].max() for v in nodes]))
        rows.append((d + 1, acc, conf))
    return rows


def margin_pairs(outcomes):
    """Per-node (clean margin, attacked margin) rows, 0-based node ids."""
    rows = [(int(o.node), float(o.margin_before), float(o.margin_after))
            for o in outcomes]
    rows.sort()
    return rows


def _write_csv(path, headers, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(headers)
    for row in rows:
        w.writerow([x if isinstance(x, (int, str)) else repr(float(x)) for x in row])
    _atomic_write(path, buf.getvalue())


def write_degree_table(path, outcomes, g):
    slope, intercept, rows = robustness_vs_degree(outcomes, g)
    _write_csv(path, ["node", "degree", "robustness"],
               [(n + 1, d, r) for n, d, r in rows])
    return slope, intercept


def write_decile_table(path, outcomes, model, g):
    rows = robustness_deciles(outcomes, model, g)
    _write_csv(path, ["decile", "accuracy", "mean_confidence"], rows)
    return rows


def write_margin_table(path, outcomes):
    rows = margin_pairs(outcomes)
    _write_csv(path, ["node", "margin_clean", "margin_attacked"],
               [(n + 1, a, b) for n, a, b in rows])
    return rows
