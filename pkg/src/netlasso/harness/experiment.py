"""
Multi-trial orchestration and CSV/JSON emission.

Outputs (all text, LF line endings, floats as %.16e):

traces.csv     trial,case,algorithm,t,metric,value       one row per value
summary.csv    case,algorithm,t,metric,mean,p10,p90,n_trials
metadata.json  resolved gamma, rho, K, alpha and statistical error per run
rounds.csv     topology,m,rule,rho,target,rounds,chebyshev_rounds (round tables)

Trial i uses seed base_seed + i. Step sizes left open in the config are
grid-searched on trial 0 and frozen for all trials. Traces that stop early
are forward-filled to the longest trial before averaging.
"""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import __version__
from ..errors import ConvergenceFailure, DivergenceFailure, ExperimentFailure
from ..model import generate_model, reference_solution
from ..network import (
    ChebyshevMixing,
    build_topology,
    chebyshev_rounds_for_target,
    erdos_renyi_for_rho,
    mixing_matrix,
    rounds_for_target,
)
from ..solvers import RunConfig, grid_search_gamma, run

TRACE_METRICS = (
    "avg_estimation_error",
    "avg_estimation_error_normalized",
    "avg_optimization_error",
    "avg_optimization_error_normalized",
    "consensus_error",
    "tracking_residual",
    "delta_t",
    "comm_rounds",
    "comm_total_channel_use",
)
TRACE_HEADER = ("trial", "case", "algorithm", "t", "metric", "value")
SUMMARY_HEADER = ("case", "algorithm", "t", "metric", "mean", "p10", "p90", "n_trials")
ROUNDS_HEADER = ("topology", "m", "rule", "rho", "target", "rounds", "chebyshev_rounds")
FLOAT_FMT = "%.16e"


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % v


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def read_csv(path):
    """Rows of an emitted CSV as dicts of strings."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        return [dict(zip(header, line.rstrip("\n").split(","))) for line in fh if line.strip()]


# --- graphs -----------------------------------------------------------------


def case_network(case):
    """(graph, base mixing matrix) for a case; the graph is shared by all trials."""
    m = case.model.m
    if case.target_rho is not None:
        return erdos_renyi_for_rho(m, case.target_rho, case.rule, seed=case.graph_seed)
    g = build_topology(case.topology, m, case.topology_params, seed=case.graph_seed)
    return g, mixing_matrix(g, case.rule)


def _trial_model(case, seed):
    return generate_model(replace(case.model, seed=seed))


def _radius(case, model):
    return case.r if case.r is not None else float(np.abs(model.theta_star).sum())


def _reference(model, r, cfg):
    """(theta_hat, fixed-point residual); an unconverged estimate is kept and flagged."""
    try:
        ref = reference_solution(model, r, tol=cfg.reference_tol, max_iter=cfg.reference_max_iter)
        return ref.theta, ref.residual
    except ConvergenceFailure as exc:
        return exc.estimate, exc.residual


def _run_config(spec, gamma, r, full):
    return RunConfig(algorithm=spec.algorithm, gamma=gamma, T=spec.T, r=r, K=spec.K,
                     chebyshev=spec.chebyshev, stop=spec.stop, tol=spec.tol,
                     full_metrics=full)


# --- one trial --------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    case: str
    stat_error: float  # ||theta_hat - theta*||^2, nan without a reference
    traces: dict  # algorithm label -> {metric: array} or None if diverged
    diverged_at: dict  # algorithm label -> iteration
    reference_residual: float = math.nan


def run_trial(cfg, case_index, trial, gammas):
    """Run every algorithm of one case on the instance of one trial."""
    case = cfg.cases[case_index]
    _, W = case_network(case)
    model = _trial_model(case, cfg.base_seed + trial)
    r = _radius(case, model)
    theta_hat, stat, ref_resid = None, math.nan, math.nan
    if cfg.reference:
        theta_hat, ref_resid = _reference(model, r, cfg)
        stat = float(np.sum((theta_hat - model.theta_star) ** 2))
    traces, diverged = {}, {}
    for spec in case.algorithms:
        rc = _run_config(spec, gammas[spec.name], r, cfg.full_metrics)
        try:
            tr = run(model, rc, network=W, theta_hat=theta_hat)
        except DivergenceFailure as exc:
            traces[spec.name] = None
            diverged[spec.name] = exc.iteration
            continue
        cols = {}
        for name in TRACE_METRICS:
            col = tr.column(name)
            if not np.all(np.isnan(col)):
                cols[name] = col
        traces[spec.name] = cols
    return TrialResult(trial, case.label, stat, traces, diverged, ref_resid)


def _run_trial_star(args):
    return run_trial(*args)


# --- gamma resolution -------------------------------------------------------


def resolve_gammas(cfg):
    """
    Per case, a map algorithm label -> (gamma, grid scores or None).

    A case with ``gamma_from`` copies the gamma resolved for the same
    algorithm type in the named case.
    """
    out = []
    by_label = {}
    for case in cfg.cases:
        resolved = {}
        source = by_label.get(case.gamma_from, {})
        pending = []
        for spec in case.algorithms:
            if spec.gamma is not None:
                resolved[spec.name] = (spec.gamma, None)
            elif spec.algorithm in source:
                resolved[spec.name] = source[spec.algorithm]
            else:
                pending.append(spec)
        if pending:
            _, W = case_network(case)
            model = _trial_model(case, cfg.base_seed)
            r = _radius(case, model)
            theta_hat = None
            for spec in pending:
                if spec.search_metric.startswith("avg_optimization") and theta_hat is None:
                    theta_hat = _reference(model, r, cfg)[0]
                resolved[spec.name] = grid_search_gamma(
                    model, W, spec.algorithm, spec.gamma_grid, spec.probe_T, r=r,
                    metric=spec.search_metric, theta_hat=theta_hat, return_scores=True,
                    K=spec.K, chebyshev=spec.chebyshev,
                )
        by_algo = {}
        for spec in case.algorithms:
            by_algo.setdefault(spec.algorithm, resolved[spec.name])
        by_label[case.label] = by_algo
        out.append(resolved)
    return out


# --- aggregation ------------------------------------------------------------


def _forward_fill(arrays):
    n = max(len(a) for a in arrays)
    return np.stack([np.concatenate([a, np.full(n - len(a), a[-1])]) for a in arrays])


def aggregate(results, cfg):
    """summary[(case, algorithm)][metric] = (mean, p10, p90, n_trials) arrays over t."""
    summary = {}
    for case in cfg.cases:
        mine = sorted((r for r in results if r.case == case.label), key=lambda r: r.trial)
        for spec in case.algorithms:
            ok = [r.traces[spec.name] for r in mine if r.traces[spec.name] is not None]
            if not ok:
                raise ExperimentFailure(
                    f"every trial of {spec.name} on case {case.label!r} diverged"
                )
            entry = {}
            for metric in TRACE_METRICS:
                if metric not in ok[0]:
                    continue
                A = _forward_fill([tr[metric] for tr in ok])
                entry[metric] = (
                    A.mean(axis=0),
                    np.percentile(A, 10, axis=0),
                    np.percentile(A, 90, axis=0),
                    len(ok),
                )
            summary[(case.label, spec.name)] = entry
    return summary


# --- drivers ----------------------------------------------------------------


@dataclass
class ExperimentResult:
    out_dir: str
    metadata: dict
    summary: dict  # see aggregate(); empty for round tables
    results: list

    def mean(self, case, algorithm, metric="avg_estimation_error_normalized"):
        return self.summary[(case, algorithm)][metric][0]


def _workers(cfg):
    env = os.environ.get("NETLASSO_WORKERS")
    return max(1, int(env)) if env else cfg.workers


def run_experiment(cfg, out_dir=None, trial_order=None):
    """
    Run all trials and write traces.csv, summary.csv and metadata.json.

    ``trial_order`` permutes execution order only; outputs are keyed by trial
    and do not depend on it.
    """
    out_dir = out_dir or os.environ.get("NETLASSO_OUT_DIR") or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if cfg.kind == "rounds":
        return run_round_table(cfg, out_dir)

    gammas = resolve_gammas(cfg)
    order = list(range(cfg.trials)) if trial_order is None else list(trial_order)
    if sorted(order) != list(range(cfg.trials)):
        raise ValueError("trial_order must be a permutation of range(trials)")
    tasks = [
        (cfg, ci, trial, {k: g for k, (g, _) in gammas[ci].items()})
        for trial in order
        for ci in range(len(cfg.cases))
    ]
    workers = _workers(cfg)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_star, tasks))
    else:
        results = [run_trial(*t) for t in tasks]
    case_pos = {c.label: i for i, c in enumerate(cfg.cases)}
    results.sort(key=lambda r: (r.trial, case_pos[r.case]))

    summary = aggregate(results, cfg)
    _write_traces(os.path.join(out_dir, "traces.csv"), results, cfg)
    _write_summary(os.path.join(out_dir, "summary.csv"), summary, cfg)
    meta = _metadata(cfg, gammas, results)
    with open(os.path.join(out_dir, "metadata.json"), "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(out_dir, meta, summary, results)


def _write_traces(path, results, cfg):
    def rows():
        for res in results:
            case = cfg.cases[[c.label for c in cfg.cases].index(res.case)]
            for spec in case.algorithms:
                cols = res.traces[spec.name]
                if cols is None:
                    continue
                n = len(cols["avg_estimation_error"])
                for t in range(n):
                    for metric in TRACE_METRICS:
                        if metric in cols:
                            v = cols[metric][t]
                            if metric.startswith("comm_"):
                                v = int(v)
                            yield (res.trial, res.case, spec.name, t, metric, v)

    _write_csv(path, TRACE_HEADER, rows())


def _write_summary(path, summary, cfg):
    def rows():
        for case in cfg.cases:
            for spec in case.algorithms:
                entry = summary[(case.label, spec.name)]
                n = len(entry["avg_estimation_error"][0])
                for t in range(n):
                    for metric in TRACE_METRICS:
                        if metric in entry:
                            mean, p10, p90, k = entry[metric]
                            yield (case.label, spec.name, t, metric,
                                   float(mean[t]), float(p10[t]), float(p90[t]), k)

    _write_csv(path, SUMMARY_HEADER, rows())


def _metadata(cfg, gammas, results):
    cases = []
    for ci, case in enumerate(cfg.cases):
        g, W = case_network(case)
        mine = sorted((r for r in results if r.case == case.label), key=lambda r: r.trial)
        stats = [r.stat_error for r in mine]
        algos = []
        for spec in case.algorithms:
            gamma, scores = gammas[ci][spec.name]
            eff_rho = W.rho**spec.K
            if spec.chebyshev and spec.K > 1:
                eff_rho = ChebyshevMixing(W, spec.K).rho
            algos.append({
                "label": spec.name,
                "algorithm": spec.algorithm,
                "gamma": gamma,
                "gamma_scores": None if scores is None
                else [[k, v] for k, v in sorted(scores.items())],
                "K": spec.K,
                "chebyshev": spec.chebyshev,
                "rho_effective": eff_rho,
                "diverged_trials": {str(r.trial): r.diverged_at[spec.name]
                                    for r in mine if spec.name in r.diverged_at},
            })
        cases.append({
            "label": case.label,
            "alpha": case.model.alpha,
            "d": case.model.d,
            "s": case.model.s,
            "m": case.model.m,
            "n": case.model.n,
            "N": case.model.N,
            "graph": {"kind": g.kind, "params": g.params, "seed": g.seed,
                      "n_edges": g.n_edges, "resamples": g.resamples},
            "rule": case.rule,
            "rho": W.rho,
            "stat_error_mean": None if cfg.reference is False else float(np.mean(stats)),
            "stat_error_per_trial": None if cfg.reference is False else stats,
            "reference_residual_max": None if cfg.reference is False
            else float(np.max([r.reference_residual for r in mine])),
            "algorithms": algos,
        })
    return {
        "name": cfg.name,
        "scale": cfg.scale,
        "trials": cfg.trials,
        "base_seed": cfg.base_seed,
        "package_version": __version__,
        "config": _jsonable(cfg.to_dict()),
        "cases": cases,
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# --- round tables -----------------------------------------------------------


def round_table(spec):
    """Rows (topology, m, rule, rho, target, rounds, chebyshev_rounds)."""
    rows = []
    for topo in spec.topologies:
        for m in spec.ms:
            params = {"p": spec.p} if topo == "erdos_renyi" else {}
            g = build_topology(topo, m, params, seed=spec.graph_seed)
            for rule in spec.rules:
                W = mixing_matrix(g, rule)
                target = float(m) ** -spec.exponent
                rows.append((topo, m, rule, W.rho, target,
                             rounds_for_target(W.rho, target),
                             chebyshev_rounds_for_target(W.rho, target)))
    return rows


def run_round_table(cfg, out_dir):
    rows = round_table(cfg.rounds)
    _write_csv(os.path.join(out_dir, "rounds.csv"), ROUNDS_HEADER, rows)
    meta = {
        "name": cfg.name,
        "scale": cfg.scale,
        "package_version": __version__,
        "config": _jsonable(cfg.to_dict()),
        "rows": [dict(zip(ROUNDS_HEADER, r)) for r in rows],
    }
    with open(os.path.join(out_dir, "metadata.json"), "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(out_dir, meta, {}, rows)
