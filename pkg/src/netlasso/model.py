"""
Synthetic sparse linear model y_i = X_i theta* + n_i split across m agents.

Random streams
--------------
All randomness is drawn from numpy's counter-based Philox generator. A model
seed is split into independent named streams with ``SeedSequence(seed,
spawn_key=(stream_id,))``:

    0  "model"       ground truth and design matrices
    1  "noise"       observation noise
    2  "directions"  RSC/RSM probe directions

so that, e.g., asking the probe for more directions never changes the model.
"""

import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConvergenceFailure, InvalidArgument
from .numerics import project_l1_ball, spectral_norm

STREAMS = {"model": 0, "noise": 1, "directions": 2}

COVARIANCE_KINDS = ("identity", "diagonal", "toeplitz")
SIGNAL_RULES = ("gaussian", "uniform_sign")


def stream_rng(seed, stream):
    """Generator for one named stream of a 64-bit seed."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CovarianceSpec:
    """
    Row covariance of the design.

    identity   Sigma = I
    diagonal   Sigma_jj geometrically spaced from 1 to `param` (so zeta = max(1, param))
    toeplitz   Sigma_ij = param ** |i - j|, |param| < 1
    """

    kind: str = "identity"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise InvalidArgument(f"unknown covariance kind {self.kind!r}")
        if self.kind == "diagonal" and not self.param > 0:
            raise InvalidArgument("diagonal covariance needs a positive scale")
        if self.kind == "toeplitz" and not abs(self.param) < 1:
            raise InvalidArgument("toeplitz covariance needs |r| < 1")

    def diagonal_entries(self, d):
        if self.kind == "diagonal":
            return np.geomspace(1.0, self.param, d) if d > 1 else np.array([self.param])
        return np.ones(d)

    def matrix(self, d):
        if self.kind == "toeplitz":
            idx = np.arange(d)
            return self.param ** np.abs(idx[:, None] - idx[None, :])
        return np.diag(self.diagonal_entries(d))

    def zeta(self, d):
        return float(self.diagonal_entries(d).max())

    def eig_range(self, d):
        """(sigma_min, sigma_max) of Sigma; closed form except for toeplitz."""
        if self.kind == "toeplitz":
            ev = np.linalg.eigvalsh(self.matrix(d))
            return float(ev[0]), float(ev[-1])
        diag = self.diagonal_entries(d)
        return float(diag.min()), float(diag.max())

    def quad(self, U):
        """Row-wise u^T Sigma u for U of shape (k, d)."""
        U = np.atleast_2d(U)
        if self.kind == "toeplitz":
            S = self.matrix(U.shape[1])
            return np.einsum("kd,de,ke->k", U, S, U)
        return (U**2) @ self.diagonal_entries(U.shape[1])

    def sample(self, rng, rows, d):
        Z = rng.standard_normal((rows, d))
        if self.kind == "identity":
            return Z
        if self.kind == "diagonal":
            return Z * np.sqrt(self.diagonal_entries(d))
        # stationary AR(1) columns have exactly the Toeplitz covariance
        r = self.param
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        c = math.sqrt(1.0 - r * r)
        for j in range(1, d):
            X[:, j] = r * X[:, j - 1] + c * Z[:, j]
        return X


@dataclass(frozen=True)
class ModelConfig:
    d: int
    s: int
    m: int
    n: int
    sigma_noise: float = 0.5
    covariance: CovarianceSpec = field(default_factory=CovarianceSpec)
    signal_rule: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or not (1 <= self.s <= self.d):
            raise InvalidArgument(f"need 1 <= s <= d, got s={self.s}, d={self.d}")
        if self.m < 1 or self.n < 1:
            raise InvalidArgument("m and n must be >= 1")
        if not self.sigma_noise >= 0:
            raise InvalidArgument("sigma_noise must be >= 0")
        if self.signal_rule not in SIGNAL_RULES:
            raise InvalidArgument(f"unknown signal rule {self.signal_rule!r}")

    @property
    def N(self):
        return self.m * self.n

    @property
    def alpha(self):
        """Sample-complexity ratio s log d / N."""
        return self.s * math.log(self.d) / self.N

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        cov = data.pop("covariance", None) or {}
        if not isinstance(cov, CovarianceSpec):
            cov = CovarianceSpec(**cov)
        return cls(covariance=cov, **data)


@dataclass(frozen=True, eq=False)
class LinearModel:
    config: ModelConfig
    X: np.ndarray  # (m, n, d)
    y: np.ndarray  # (m, n)
    theta_star: np.ndarray  # (d,)
    noise: np.ndarray  # (m, n)

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def N(self):
        return self.m * self.n

    @property
    def s(self):
        return self.config.s

    @property
    def covariance(self):
        return self.config.covariance

    @property
    def zeta(self):
        return self.covariance.zeta(self.d)

    @property
    def alpha(self):
        return self.config.alpha

    @property
    def X_stacked(self):
        return self.X.reshape(self.N, self.d)

    @property
    def y_stacked(self):
        return self.y.reshape(self.N)


def generate_model(cfg):
    """Draw a model instance; a deterministic function of ``cfg``."""
    rng = stream_rng(cfg.seed, "model")
    theta = np.zeros(cfg.d)
    if cfg.signal_rule == "gaussian":
        theta[: cfg.s] = rng.standard_normal(cfg.s)
    else:
        theta[: cfg.s] = rng.choice([-1.0, 1.0], size=cfg.s)
    # a Gaussian draw of exactly zero is not a practical concern, but the
    # support size is part of the contract
    theta[: cfg.s][theta[: cfg.s] == 0.0] = 1.0
    X = cfg.covariance.sample(rng, cfg.N, cfg.d).reshape(cfg.m, cfg.n, cfg.d)
    noise = cfg.sigma_noise * stream_rng(cfg.seed, "noise").standard_normal((cfg.m, cfg.n))
    y = np.einsum("ind,d->in", X, theta) + noise
    return LinearModel(cfg, X, y, theta, noise)


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.d,):
        raise InvalidArgument(f"theta must have shape ({model.d},), got {theta.shape}")
    return theta


def local_loss(model, i, theta):
    if not 0 <= i < model.m:
        raise InvalidArgument(f"agent index {i} out of range [0, {model.m})")
    theta = _check_theta(model, theta)
    res = model.y[i] - model.X[i] @ theta
    return float(res @ res) / (2 * model.n)


def local_gradient(model, i, theta):
    """(1/n) X_i^T (X_i theta - y_i)."""
    if not 0 <= i < model.m:
        raise InvalidArgument(f"agent index {i} out of range [0, {model.m})")
    theta = _check_theta(model, theta)
    Xi = model.X[i]
    return Xi.T @ (Xi @ theta - model.y[i]) / model.n


def global_loss(model, theta):
    return sum(local_loss(model, i, theta) for i in range(model.m)) / model.m


def global_gradient(model, theta):
    theta = _check_theta(model, theta)
    G = stacked_local_gradients(model, np.broadcast_to(theta, (model.m, model.d)))
    return G.mean(axis=0)


def stacked_local_gradients(model, Theta):
    """Row i is grad L_i evaluated at row i of Theta (shape (m, d))."""
    R = np.matmul(model.X, Theta[:, :, None])[:, :, 0] - model.y
    return np.matmul(model.X.transpose(0, 2, 1), R[:, :, None])[:, :, 0] / model.n


def global_gradients_at_rows(model, Theta):
    """Row i is grad L evaluated at row i of Theta."""
    Xs = model.X_stacked
    R = Xs @ Theta.T - model.y_stacked[:, None]
    return (Xs.T @ R).T / model.N


def lipschitz_estimate(model, tol=1e-6):
    """Largest eigenvalue of X^T X / N by power iteration."""
    return spectral_norm(model.X_stacked / math.sqrt(model.N), tol=tol, method="power") ** 2


@dataclass
class ReferenceSolution:
    theta: np.ndarray
    radius: float
    gamma: float
    residual: float
    iterations: int
    constraint_active: bool


def reference_solution(model, r=None, tol=1e-10, max_iter=200_000):
    """
    Constrained LASSO estimate by centralized PGD run to a fixed point.

    The proximal weight is 1.05 times the power-iteration estimate of the
    largest eigenvalue of X^T X / N. Iterates until
    ||theta - P(theta - grad L(theta)/gamma)|| <= tol.
    """
    from .solvers import pgd_iterate

    if r is None:
        r = float(np.abs(model.theta_star).sum())
    if not r > 0:
        raise InvalidArgument("radius must be > 0")
    gamma = 1.05 * lipschitz_estimate(model)
    theta = np.zeros(model.d)
    resid = np.inf
    for it in range(1, max_iter + 1):
        nxt = pgd_iterate(model, theta, r, gamma)
        resid = float(np.linalg.norm(nxt - theta))
        theta = nxt
        if resid <= tol:
            break
    else:
        raise ConvergenceFailure(
            f"reference PGD residual {resid:.3e} > {tol:.1e} after {max_iter} iterations",
            estimate=theta,
            residual=resid,
        )
    active = abs(float(np.abs(theta).sum()) - r) <= 1e-8 * max(1.0, r)
    return ReferenceSolution(theta, r, gamma, resid, it, active)


def statistical_nu(theta_hat, theta_star, s):
    """nu = 2 ||Delta*||_1 + 2 sqrt(s) ||Delta*||_2 with Delta* = theta_hat - theta*."""
    delta = np.asarray(theta_hat) - np.asarray(theta_star)
    return 2 * np.abs(delta).sum() + 2 * math.sqrt(s) * np.linalg.norm(delta)


def cone_bound(theta, theta_hat, theta_star, s, slack=1e-8):
    """
    Check ||theta - theta_hat||_1 <= 2 sqrt(s) ||theta - theta_hat||_2 + nu.

    Valid for feasible theta when the constraint is active at theta_hat.
    Returns (holds, lhs, rhs).
    """
    diff = np.asarray(theta) - np.asarray(theta_hat)
    lhs = float(np.abs(diff).sum())
    rhs = 2 * math.sqrt(s) * float(np.linalg.norm(diff)) + statistical_nu(theta_hat, theta_star, s)
    return lhs <= rhs + slack, lhs, rhs


@dataclass
class ProbeReport:
    n_dirs: int
    kinds: list  # direction family per sample: "k=1", "k=s", "k=2s", "dense"
    margins: dict  # inequality name -> array of rhs - lhs at c1 = 1
    c1_fit: float
    satisfaction_fraction: float  # all inequalities hold at c1 = 1
    fraction_by_inequality: dict


def _probe_directions(rng, d, s, n_dirs, families):
    U = np.zeros((n_dirs, d))
    kinds = []
    sizes = {"k=1": 1, "k=s": s, "k=2s": min(2 * s, d), "dense": d}
    for j in range(n_dirs):
        fam = families[j % len(families)]
        k = sizes[fam]
        support = rng.choice(d, size=k, replace=False) if k < d else np.arange(d)
        U[j, support] = rng.standard_normal(k)
        kinds.append(fam)
    return U, kinds


def rsc_rsm_probe(model, n_dirs, seed=None, families=("k=1", "k=s", "k=2s", "dense")):
    """
    Empirical check of the restricted curvature inequalities on sampled directions.

    For each direction u evaluates, with t = zeta log d / N and the local
    t_loc = zeta m log d / n,

        global_lower   ||Xu||^2/N >= 1/2 u'Su - c1 t ||u||_1^2
        global_upper   ||Xu||^2/N <= 2 u'Su + c1 t ||u||_1^2
        local_upper    max_i ||X_i u||^2/n <= 16 m u'Su + c1 t_loc ||u||_1^2

    reports margins at c1 = 1 and the smallest c1 satisfying every sample.
    """
    if n_dirs < 1:
        raise InvalidArgument("n_dirs must be >= 1")
    seed = model.config.seed if seed is None else seed
    rng = stream_rng(seed, "directions")
    U, kinds = _probe_directions(rng, model.d, model.s, n_dirs, list(families))

    log_d = math.log(model.d) if model.d > 1 else 0.0
    zeta = model.zeta
    quad = model.covariance.quad(U)
    l1sq = np.abs(U).sum(axis=1) ** 2
    XU = model.X_stacked @ U.T  # (N, k)
    q_glob = (XU**2).sum(axis=0) / model.N
    q_loc = ((XU.reshape(model.m, model.n, -1) ** 2).sum(axis=1) / model.n).max(axis=0)

    tol_g = zeta * log_d / model.N * l1sq
    tol_l = zeta * model.m * log_d / model.n * l1sq

    margins = {
        "global_lower": q_glob - (0.5 * quad - tol_g),
        "global_upper": 2 * quad + tol_g - q_glob,
        "local_upper": 16 * model.m * quad + tol_l - q_loc,
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        needs = [
            np.where(tol_g > 0, (0.5 * quad - q_glob) / tol_g, 0.0),
            np.where(tol_g > 0, (q_glob - 2 * quad) / tol_g, 0.0),
            np.where(tol_l > 0, (q_loc - 16 * model.m * quad) / tol_l, 0.0),
        ]
    c1_fit = float(max(0.0, max(float(np.max(v)) for v in needs)))
    ok = np.all([v >= 0 for v in margins.values()], axis=0)
    by_ineq = {k: float(np.mean(v >= 0)) for k, v in margins.items()}
    return ProbeReport(n_dirs, kinds, margins, c1_fit, float(np.mean(ok)), by_ineq)


# --- binary container -------------------------------------------------------
#
# Layout, all little-endian:
#   magic        4 bytes  b"NLSM"
#   version      uint32   1
#   d, s, m, n   uint64 x4
#   seed         uint64
#   cov tag      uint8    0 identity, 1 diagonal, 2 toeplitz
#   signal tag   uint8    0 gaussian, 1 uniform_sign
#   pad          6 bytes
#   cov param    float64
#   sigma_noise  float64
#   theta_star   float64[d]
#   X            float64[m*n*d]  row-major (agent, sample, feature)
#   y            float64[m*n]
#   noise        float64[m*n]

_MAGIC = b"NLSM"
_HEADER = struct.Struct("<4sI5QBB6xdd")


def export_model(model, path):
    cfg = model.config
    header = _HEADER.pack(
        _MAGIC,
        1,
        cfg.d,
        cfg.s,
        cfg.m,
        cfg.n,
        int(cfg.seed) & (2**64 - 1),
        COVARIANCE_KINDS.index(cfg.covariance.kind),
        SIGNAL_RULES.index(cfg.signal_rule),
        float(cfg.covariance.param),
        float(cfg.sigma_noise),
    )
    le = np.dtype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (model.theta_star, model.X, model.y, model.noise):
            fh.write(np.ascontiguousarray(arr, dtype=le).tobytes())


def import_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise InvalidArgument("file too short for a model header")
    magic, version, d, s, m, n, seed, cov_tag, sig_tag, cov_param, sigma = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise InvalidArgument("not a model container (bad magic or version)")
    cfg = ModelConfig(
        d=d,
        s=s,
        m=m,
        n=n,
        sigma_noise=sigma,
        covariance=CovarianceSpec(COVARIANCE_KINDS[cov_tag], cov_param),
        signal_rule=SIGNAL_RULES[sig_tag],
        seed=seed,
    )
    sizes = [d, m * n * d, m * n, m * n]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(raw) != expected:
        raise InvalidArgument(f"model file has {len(raw)} bytes, expected {expected}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    parts = np.split(body, np.cumsum(sizes)[:-1])
    theta, X, y, noise = parts
    return LinearModel(cfg, X.reshape(m, n, d), y.reshape(m, n), theta.copy(), noise.reshape(m, n))
