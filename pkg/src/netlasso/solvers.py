"""
Centralized PGD, DGD, NetLASSO (gradient tracking) and star push-pull.

Step-size conventions
---------------------
PGD, NetLASSO and star push-pull use ``gamma`` as a proximal weight, so the
gradient step is 1/gamma. DGD uses ``gamma`` directly as the step size.

All runs start from zero. NetLASSO's first half-step is fixed at zero as
well, so its iterate at t+1 lines up with PGD's iterate at t.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import compute_metrics
from .errors import DivergenceFailure, InvalidArgument, InvariantViolation, SearchFailure
from .model import global_gradients_at_rows, stacked_local_gradients
from .network import ChebyshevMixing, CommCost, Graph, MixingMatrix, comm_cost, power_mixing
from .numerics import project_l1_ball, project_l1_rows

ALGORITHMS = ("pgd", "dgd", "netlasso", "star_pushpull")
STOP_RULES = ("fixed_T", "residual")
DIVERGENCE_NORM = 1e12


def _env_checks():
    return os.environ.get("NETLASSO_CHECK_INVARIANTS", "") == "1"


@dataclass
class RunConfig:
    """
    Parameters of one solver run.

    gamma is a proximal weight (step 1/gamma) for pgd, netlasso and
    star_pushpull and a plain step size for dgd. r=None means ||theta*||_1.
    """

    algorithm: str
    gamma: float
    T: int
    r: Optional[float] = None
    K: int = 1
    chebyshev: bool = False
    stop: str = "fixed_T"
    tol: float = 1e-10
    full_metrics: bool = True
    check_invariants: bool = field(default_factory=_env_checks)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown algorithm {self.algorithm!r}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgument(f"gamma must be positive, got {self.gamma}")
        if self.T < 1:
            raise InvalidArgument(f"T must be >= 1, got {self.T}")
        if self.K < 1:
            raise InvalidArgument(f"K must be >= 1, got {self.K}")
        if self.stop not in STOP_RULES:
            raise InvalidArgument(f"unknown stop rule {self.stop!r}")
        if self.r is not None and not (np.isfinite(self.r) and self.r >= 0):
            raise InvalidArgument(f"radius must be >= 0, got {self.r}")


@dataclass
class SolverState:
    Theta: np.ndarray  # m x d iterates
    Theta_half: np.ndarray  # m x d half-step (next projected point)
    G: Optional[np.ndarray]  # m x d gradient or tracking matrix
    t: int
    gamma: float


@dataclass
class RunTrace:
    algorithm: str
    config: RunConfig
    radius: float
    records: list = field(default_factory=list)
    state: Optional[SolverState] = None
    rho: Optional[float] = None
    rounds_per_iteration: int = 0
    comm: Optional[CommCost] = None

    def __len__(self):
        return len(self.records)

    @property
    def t(self):
        return np.array([rec.t for rec in self.records])

    def column(self, name):
        vals = [getattr(rec, name) for rec in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)

    def final(self, name="avg_estimation_error"):
        return getattr(self.records[-1], name)


def _check_model(model, m=None):
    if m is not None and model.m != m:
        raise InvalidArgument(f"mixing operator has {m} nodes, model has {model.m} agents")


def _graph_of(op):
    g = getattr(op, "graph", None)
    if g is not None:
        return g
    W = op.matrix
    i, j = np.nonzero(np.triu(W, 1) != 0)
    return Graph(W.shape[0], list(zip(i.tolist(), j.tolist())), "custom")


def mixing_operator(network, K=1, chebyshev=False):
    """K-round (W^K) or Chebyshev mixing operator built on a base matrix."""
    if isinstance(network, ChebyshevMixing) or (K == 1 and not chebyshev):
        return network
    if not isinstance(network, MixingMatrix):
        raise InvalidArgument("multi-round mixing needs a base MixingMatrix")
    if chebyshev:
        return ChebyshevMixing(network, K)
    return power_mixing(network, K)


class _Runner:
    """Bookkeeping shared by all algorithms: metrics, divergence, stopping."""

    def __init__(self, model, cfg, theta_hat, callback, comm_unit, rounds_per_iter, rho=None):
        self.model = model
        self.cfg = cfg
        self.theta_hat = theta_hat
        self.callback = callback
        self.comm_unit = comm_unit  # CommCost with rounds=1, or None
        r = cfg.r if cfg.r is not None else float(np.abs(model.theta_star).sum())
        self.trace = RunTrace(cfg.algorithm, cfg, r, rho=rho, rounds_per_iteration=rounds_per_iter)

    @property
    def r(self):
        return self.trace.radius

    def guard(self, t, *arrays):
        for a in arrays:
            if not np.all(np.isfinite(a)) or np.max(np.abs(a), initial=0.0) > DIVERGENCE_NORM:
                raise DivergenceFailure(
                    f"{self.cfg.algorithm} diverged at iteration {t}",
                    iteration=t,
                    algorithm=self.cfg.algorithm,
                )

    def record(self, state, global_grads=None, tracking=True):
        comm = None
        if self.comm_unit is not None:
            u = self.comm_unit
            comm = CommCost(
                u.channel_use_per_round,
                u.max_node_channel_use,
                state.t * self.trace.rounds_per_iteration,
            )
        full = self.cfg.full_metrics and tracking
        rec = compute_metrics(state, self.model, self.theta_hat, full=full, comm=comm,
                              global_grads=global_grads)
        self.trace.records.append(rec)
        self.trace.state = state
        self.trace.comm = comm
        if self.callback is not None:
            self.callback(state)

    def done(self, t, residual):
        if t >= self.cfg.T:
            return True
        return self.cfg.stop == "residual" and residual <= self.cfg.tol


def _pooled_gradient(model, theta):
    # sum_j X_j^T (X_j theta - y_j) / N as one product over the stacked design;
    # the average of the local gradients, in a single BLAS call
    Xs = model.X_stacked
    return Xs.T @ (Xs @ theta - model.y_stacked) / model.N


def pgd_iterate(model, theta, r, gamma):
    """One centralized step P(theta - grad L(theta)/gamma)."""
    return project_l1_ball(theta - _pooled_gradient(model, theta) / gamma, r)


def _centralized(model, cfg, theta_hat, init, callback, protocol):
    m, d = model.m, model.d
    if protocol == "star_pushpull":
        unit = comm_cost(m, 1, "star_pushpull")
        rounds = 1
    else:
        unit, rounds = CommCost(0, 0, 1), 0
    runner = _Runner(model, cfg, theta_hat, callback, unit, rounds)
    r = runner.r
    theta = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    t = 0
    while True:
        # workers evaluate local gradients at the broadcast iterate and the
        # master sums them and takes the prox step
        grad = _pooled_gradient(model, theta)
        arg = theta - grad / cfg.gamma
        runner.guard(t, arg)
        nxt = project_l1_rows(arg[None, :], r)[0]
        state = SolverState(theta[None, :], nxt[None, :], grad[None, :], t, cfg.gamma)
        runner.record(state, global_grads=grad[None, :])
        resid = float(np.linalg.norm(nxt - theta))
        if runner.done(t, resid):
            break
        theta = nxt
        t += 1
    return runner.trace


def _run_config(algorithm, gamma, T, r, **kw):
    return RunConfig(algorithm=algorithm, gamma=gamma, T=T, r=r, **kw)


def pgd_run(model, r, gamma, T, theta_hat=None, init=None, callback=None, **kw):
    """
    Centralized projected gradient descent theta <- P(theta - grad L(theta)/gamma).

    The trace has one record per t = 0..T; record t holds theta^t.
    """
    cfg = _run_config("pgd", gamma, T, r, **kw)
    return _centralized(model, cfg, theta_hat, init, callback, "none")


def star_pushpull_run(model, r, gamma, T, theta_hat=None, init=None, callback=None, **kw):
    """PGD executed over a star: same iterates as pgd_run, star channel accounting."""
    cfg = _run_config("star_pushpull", gamma, T, r, **kw)
    return _centralized(model, cfg, theta_hat, init, callback, "star_pushpull")


def dgd_run(model, network, r, gamma, T, theta_hat=None, init=None, callback=None, **kw):
    """
    Decentralized gradient descent theta_i <- P(sum_j w_ij theta_j - gamma grad L_i(theta_i)).

    ``gamma`` is the step size itself here.
    """
    cfg = _run_config("dgd", gamma, T, r, **kw)
    op = mixing_operator(network, cfg.K, cfg.chebyshev)
    _check_model(model, op.m)
    runner = _Runner(model, cfg, theta_hat, callback, comm_cost(_graph_of(op), 1), op.rounds,
                  rho=op.rho)
    r = runner.r
    m, d = model.m, model.d
    Theta = np.zeros((m, d)) if init is None else np.array(np.broadcast_to(init, (m, d)))
    t = 0
    while True:
        G = stacked_local_gradients(model, Theta)
        arg = op.apply(Theta) - gamma * G
        runner.guard(t, arg)
        nxt = project_l1_rows(arg, r)
        runner.record(SolverState(Theta, nxt, G, t, gamma), tracking=False)
        resid = float(np.linalg.norm(nxt - Theta)) / math.sqrt(m)
        if runner.done(t, resid):
            break
        Theta = nxt
        t += 1
    return runner.trace


def netlasso_run(model, network, r, gamma, T, K=1, chebyshev=False, theta_hat=None,
                 init=None, callback=None, **kw):
    """
    NetLASSO: projected gradient steps on a gradient-tracking estimate.

    Each iteration mixes the previous half-step and the tracking matrix,

        Theta^t = W Theta^{t-1/2}
        G^t     = W (G^{t-1} + grad(Theta^t) - grad(Theta^{t-1}))
        Theta^{t+1/2} = P(Theta^t - G^t / gamma)   (row-wise l1 projection)

    where W is the base matrix raised to K rounds, or its Chebyshev
    polynomial when ``chebyshev`` is set. Starts from Theta^0 = Theta^{1/2} = 0
    and G^0 = local gradients at Theta^0.
    """
    cfg = _run_config("netlasso", gamma, T, r, K=K, chebyshev=chebyshev, **kw)
    op = mixing_operator(network, K, chebyshev)
    _check_model(model, op.m)
    runner = _Runner(model, cfg, theta_hat, callback, comm_cost(_graph_of(op), 1), op.rounds,
                  rho=op.rho)
    r = runner.r
    m, d = model.m, model.d
    check = cfg.check_invariants

    Theta = np.zeros((m, d)) if init is None else np.array(np.broadcast_to(init, (m, d)))
    grads = stacked_local_gradients(model, Theta)
    G = grads.copy()
    half = Theta.copy()
    # rounding in G accumulates at the size of the largest gradients seen so
    # far, so the conservation check is relative to that running maximum
    grad_scale = float(np.max(np.linalg.norm(grads, axis=1), initial=0.0))
    runner.record(SolverState(Theta, half, G, 0, gamma))
    t = 0
    while t < cfg.T:
        t += 1
        prev_half, prev_grads, prev_Theta = half, grads, Theta
        Theta = op.apply(prev_half)
        grads = stacked_local_gradients(model, Theta)
        G = op.apply(G + grads - prev_grads)
        arg = Theta - G / gamma
        runner.guard(t, arg, G)
        half = project_l1_rows(arg, r)
        if check:
            grad_scale = max(grad_scale, float(np.max(np.linalg.norm(grads, axis=1))))
            _check_tracking(t, Theta, G, grads, prev_half, grad_scale)
        gg = global_gradients_at_rows(model, Theta) if cfg.full_metrics else None
        runner.record(SolverState(Theta, half, G, t, gamma), global_grads=gg)
        resid = max(np.linalg.norm(half - Theta), np.linalg.norm(Theta - prev_Theta))
        if runner.done(t, float(resid) / math.sqrt(m)):
            break
    return runner.trace


def _check_tracking(t, Theta, G, grads, prev_half, grad_scale):
    # the tracking matrix preserves the agent-average of the local gradients
    scale = max(grad_scale, np.max(np.linalg.norm(G, axis=1)))
    gap = np.linalg.norm(G.mean(axis=0) - grads.mean(axis=0))
    if gap > 1e-10 * max(scale, np.finfo(float).tiny):
        raise InvariantViolation(f"tracking average drifted by {gap:.3e} at iteration {t}")
    # disagreement evolves as Theta_perp^t = (W - J) Theta^{t-1/2}
    perp = Theta - Theta.mean(axis=0)
    mixed_perp = Theta - prev_half.mean(axis=0)
    gap = np.linalg.norm(perp - mixed_perp)
    tol = 1e-12 * max(1.0, np.linalg.norm(prev_half))
    if gap > tol:
        raise InvariantViolation(f"consensus recursion off by {gap:.3e} at iteration {t}")


def run(model, cfg: RunConfig, network=None, theta_hat=None, init=None,
        callback: Optional[Callable] = None):
    """Dispatch a RunConfig to its algorithm."""
    opts = dict(stop=cfg.stop, tol=cfg.tol, full_metrics=cfg.full_metrics,
                check_invariants=cfg.check_invariants)
    common = dict(theta_hat=theta_hat, init=init, callback=callback)
    if cfg.algorithm == "pgd":
        return pgd_run(model, cfg.r, cfg.gamma, cfg.T, **common, **opts)
    if cfg.algorithm == "star_pushpull":
        return star_pushpull_run(model, cfg.r, cfg.gamma, cfg.T, **common, **opts)
    if network is None:
        raise InvalidArgument(f"{cfg.algorithm} needs a mixing matrix")
    if cfg.algorithm == "dgd":
        return dgd_run(model, network, cfg.r, cfg.gamma, cfg.T, K=cfg.K,
                       chebyshev=cfg.chebyshev, **common, **opts)
    return netlasso_run(model, network, cfg.r, cfg.gamma, cfg.T, K=cfg.K,
                        chebyshev=cfg.chebyshev, **common, **opts)


def grid_search_gamma(model, network, algorithm, candidates, T_probe, r=None,
                      metric="avg_estimation_error", theta_hat=None, return_scores=False, **kw):
    """
    Pick gamma by the final error of a T_probe-iteration run per candidate.

    Diverged runs are dropped; ties go to the larger gamma (the more
    conservative step for the proximal convention). ``metric`` may be any
    MetricsRecord field; optimization-error metrics need ``theta_hat``.
    """
    cands = [float(g) for g in candidates]
    if not cands:
        raise InvalidArgument("empty candidate list")
    if len(cands) == 1:
        return (cands[0], {cands[0]: None}) if return_scores else cands[0]
    kw.setdefault("full_metrics", False)
    scores = {}
    for g in cands:
        cfg = RunConfig(algorithm=algorithm, gamma=g, T=T_probe, r=r, **kw)
        try:
            tr = run(model, cfg, network=network, theta_hat=theta_hat)
        except DivergenceFailure:
            continue
        val = tr.final(metric)
        if np.isfinite(val):
            scores[g] = val
    if not scores:
        raise SearchFailure(f"all {len(cands)} step sizes diverged for {algorithm}")
    best = min(scores.values())
    chosen = max(g for g, v in scores.items() if v == best)
    return (chosen, scores) if return_scores else chosen
