"""
Per-iteration metrics and the closed-form quantities of the convergence theory.

Theory outputs hold only up to universal constants; C1, C2, C3 and c6 are
inputs (default 1, 1, 4, 1) rather than known values.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InsufficientData, InvalidArgument, PreconditionViolation
from .model import global_gradients_at_rows, local_gradient, global_gradient


@dataclass
class MetricsRecord:
    t: int
    avg_estimation_error: float
    avg_estimation_error_normalized: float
    consensus_error: float
    avg_optimization_error: Optional[float] = None
    avg_optimization_error_normalized: Optional[float] = None
    tracking_residual: Optional[float] = None
    delta_t: Optional[float] = None
    comm_rounds: int = 0
    comm_total_channel_use: int = 0
    comm_max_node_channel_use: int = 0

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


def compute_metrics(state, model, theta_hat=None, full=True, comm=None, global_grads=None):
    """
    Metrics of a solver state.

    ``state`` needs ``Theta`` (m x d), ``t`` and, for the tracking fields,
    ``G`` and ``Theta_half``. With ``full=False`` the tracking residual and
    delta_t (which need the centralized gradient at every agent's iterate)
    are skipped.
    """
    Theta = np.atleast_2d(state.Theta)
    theta_star = model.theta_star
    star_sq = float(theta_star @ theta_star)

    est = float(np.mean(np.sum((Theta - theta_star) ** 2, axis=1)))
    centered = Theta - Theta.mean(axis=0)
    rec = MetricsRecord(
        t=int(state.t),
        avg_estimation_error=est,
        avg_estimation_error_normalized=est / star_sq if star_sq > 0 else est,
        consensus_error=float(np.sum(centered**2)),
    )
    if theta_hat is not None:
        opt = float(np.mean(np.sum((Theta - theta_hat) ** 2, axis=1)))
        rec.avg_optimization_error = opt
        rec.avg_optimization_error_normalized = opt / star_sq if star_sq > 0 else opt
    if full and getattr(state, "G", None) is not None:
        if global_grads is None:
            global_grads = global_gradients_at_rows(model, Theta)
        diff = global_grads - np.atleast_2d(state.G)
        rec.tracking_residual = float(np.max(np.linalg.norm(diff, axis=1)))
        if theta_hat is not None and getattr(state, "Theta_half", None) is not None:
            rec.delta_t = float(np.sum(diff * (np.atleast_2d(state.Theta_half) - theta_hat)))
    if comm is not None:
        rec.comm_rounds = comm.rounds
        rec.comm_total_channel_use = comm.total_channel_use
        rec.comm_max_node_channel_use = comm.max_node_total
    return rec


def c_g_estimate(model, theta=None):
    """max_j ||grad L_j(theta*)||_inf + ||grad L(theta*)||_inf."""
    theta = model.theta_star if theta is None else theta
    local = max(np.max(np.abs(local_gradient(model, j, theta))) for j in range(model.m))
    return float(local + np.max(np.abs(global_gradient(model, theta))))


# --- theory -----------------------------------------------------------------


@dataclass(frozen=True)
class TheoryParams:
    mu: float  # global RSC curvature
    L: float  # global RSM curvature
    ell: float  # local RSM curvature
    tau_mu: float
    tau_g: float
    tau_ell: float
    s: int
    rho: float
    m: int
    nu: float = 0.0
    c_m: Optional[float] = None  # defaults to the sqrt(m) bound
    C1: float = 1.0
    C2: float = 1.0

    def __post_init__(self):
        vals = (self.mu, self.L, self.ell, self.tau_mu, self.tau_g, self.tau_ell, self.rho, self.nu)
        if any(v < 0 for v in vals):
            raise InvalidArgument("theory parameters must be nonnegative")
        if not (0 < self.mu <= self.L <= self.ell):
            raise InvalidArgument(
                f"need 0 < mu <= L <= ell, got {self.mu}, {self.L}, {self.ell}"
            )
        if self.c_m is None:
            object.__setattr__(self, "c_m", math.sqrt(self.m))

    @property
    def kappa(self):
        return self.L / self.mu


def gaussian_ensemble_params(d, N, m, s, sigma_min=1.0, sigma_max=1.0, zeta=1.0, rho=0.0,
                             nu=0.0, c1=1.0, **kw):
    """
    RSC/RSM parameters that hold w.h.p. for Sigma-Gaussian designs:
    mu = sigma_min/2, L = 2 sigma_max, ell = 16 m sigma_max,
    tau_mu = tau_g = c1 zeta log d / N, tau_ell = c1 zeta m^2 log d / N.
    """
    t = c1 * zeta * math.log(d) / N
    return TheoryParams(
        mu=sigma_min / 2,
        L=2 * sigma_max,
        ell=16 * m * sigma_max,
        tau_mu=t,
        tau_g=t,
        tau_ell=c1 * zeta * m**2 * math.log(d) / N,
        s=s,
        rho=rho,
        m=m,
        nu=nu,
        **kw,
    )


class Rate(NamedTuple):
    value: float
    contractive: bool  # False flags a rate >= 1, outside what the theory covers


def theoretical_rate(p):
    """lambda = (1 - 1/(2 kappa) + C1 s (tau_mu + tau_g)/L) / (1 - 2 C1 s tau_g / L)."""
    denom = 1.0 - 2.0 * p.C1 * p.s * p.tau_g / p.L
    if denom <= 0:
        raise PreconditionViolation(f"rate denominator 1 - 2 C1 s tau_g / L = {denom:.3g} <= 0")
    num = 1.0 - 1.0 / (2.0 * p.kappa) + p.C1 * p.s * (p.tau_mu + p.tau_g) / p.L
    lam = num / denom
    return Rate(lam, lam < 1.0)


def delta_stat(p):
    """Residual error: a network-dependent term (vanishes at rho = 0) plus a network-free one."""
    if not p.rho < 1:
        raise InvalidArgument(f"delta_stat needs rho < 1, got {p.rho}")
    network = (
        p.rho / (2 * p.L) * (p.ell / p.mu) * 5 * p.C2**2 * p.c_m**2 / (1 - p.rho) ** 2
    ) * p.tau_ell * p.nu**2
    local = p.C1 * (p.tau_mu + p.tau_g) * p.nu**2 / p.L
    return network + local


def theoretical_gamma(p, C3=4.0):
    """gamma = L + C3 (ell^2 / mu) c_m^2 sqrt(rho) / (1 - rho)^4."""
    return p.L + C3 * p.ell**2 / p.mu * p.c_m**2 * math.sqrt(p.rho) / (1 - p.rho) ** 4


@dataclass
class ConditionReport:
    checks: dict = field(default_factory=dict)  # name -> (passed, margin)
    theory_gap: Optional[bool] = None

    @property
    def all_pass(self):
        return all(ok for ok, _ in self.checks.values())

    def failed(self):
        return [k for k, (ok, _) in self.checks.items() if not ok]


def _ratio(num, den):
    return math.inf if den == 0 else num / den


def condition_check(p, c6=1.0, observed_converged=None):
    """
    Evaluate the sufficient conditions of the linear-rate theorem.

    Margins are ratios (allowed / actual): a margin above 1 means the
    condition holds, infinity means the constrained quantity is zero.
    ``theory_gap`` is set when an observed run converged although some
    condition failed.
    """
    rep = ConditionReport()
    lhs = 36 * p.C1 * p.s * (p.tau_mu + p.tau_g)
    rep.checks["rsc_sample"] = (p.mu > lhs, _ratio(p.mu, lhs))

    inner = 2 * (
        75 * p.c_m**2 * p.C2**2 * p.ell**2 / p.mu**2
        + p.ell / p.mu**2 * 6 * p.C2**2 * p.c_m**2 * p.s * p.tau_ell
    )
    bound = inner**-2
    rep.checks["rho_bound"] = (p.rho <= bound, _ratio(bound, p.rho))

    prod = c6 * p.rho * p.m**8 * p.kappa**4
    rep.checks["rho_m8_kappa4"] = (prod < 1, _ratio(1.0, prod))

    denom = 1.0 - 2.0 * p.C1 * p.s * p.tau_g / p.L
    rep.checks["rate_denominator"] = (denom > 0, denom)

    if observed_converged is not None:
        rep.theory_gap = bool(observed_converged and not rep.all_pass)
    return rep


# --- trace analysis ---------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float  # d log(error) / dt
    intercept: float
    plateau: float
    window: tuple  # [start, stop) iteration indices
    n_points: int

    @property
    def rate(self):
        return math.exp(self.slope)


def plateau_level(values):
    """Median of the final quarter of a trace."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.median(v[-max(1, len(v) // 4):]))


def slope_fit(trace, window=None, metric="avg_estimation_error_normalized", factor=4.0,
              min_points=10):
    """
    Least-squares slope of log(error) against t over the linear phase.

    ``trace`` is a RunTrace or a 1-d array indexed by t. Without an explicit
    ``window`` the phase runs from the last iterate before the error first
    drops until the error reaches ``factor`` times the plateau.
    """
    v = np.asarray(trace.column(metric) if hasattr(trace, "column") else trace, dtype=np.float64)
    plateau = plateau_level(v)
    if window is None:
        moved = np.nonzero(v < v[0])[0]
        if moved.size:
            start = max(int(moved[0]) - 1, 0)
            below = np.nonzero(v[start:] <= factor * plateau)[0]
            stop = start + int(below[0]) if below.size else len(v)
        else:
            # a trace that never decreases has no separate plateau
            start, stop = 0, len(v)
        window = (start, stop)
    start, stop = window
    seg = v[start:stop]
    t = np.arange(start, stop, dtype=np.float64)
    good = seg > 0
    if good.sum() < min_points:
        raise InsufficientData(
            f"linear phase {window} has {int(good.sum())} usable points, need {min_points}"
        )
    slope, intercept = np.polyfit(t[good], np.log(seg[good]), 1)
    return SlopeFit(float(slope), float(intercept), plateau, (start, stop), int(good.sum()))


def iterations_to_target(trace, target, metric="avg_estimation_error_normalized"):
    """First t at which the metric is <= target, or None."""
    v = trace.column(metric) if hasattr(trace, "column") else np.asarray(trace)
    hit = np.nonzero(np.asarray(v) <= target)[0]
    return int(hit[0]) if hit.size else None
