"""
Experiment configuration and its TOML representation.

A trace experiment is a list of cases (one problem family on one graph) and,
per case, a list of algorithm runs. A round-table experiment only computes
consensus round counts. Schema::

    name = "demo"
    trials = 5
    base_seed = 0
    workers = 1
    full_metrics = false
    reference = true             # solve for theta_hat in every trial

    [[cases]]
    label = "d500"
    topology = "erdos_renyi"     # line | grid2d | star | complete | erdos_renyi
    topology_params = { p = 0.5 }
    rule = "metropolis"          # metropolis | lazy_metropolis | uniform_complete
    graph_seed = 0
    # target_rho = 0.4           # search the ER link probability for this rho
    # gamma_from = "other"       # reuse the step sizes resolved for another case

    [cases.model]
    d = 500
    s = 23
    m = 50
    n = 14
    sigma_noise = 0.5
    covariance = { kind = "identity" }

    [[cases.algorithms]]
    algorithm = "netlasso"       # pgd | dgd | netlasso | star_pushpull
    T = 300
    gamma_grid = [0.5, 1.0, 2.0, 4.0]   # or a fixed: gamma = 2.0
    probe_T = 40
    K = 1

    # round-table experiments instead carry
    [rounds]
    ms = [50, 625]
    topologies = ["erdos_renyi", "line"]
    rules = ["metropolis", "lazy_metropolis"]
    p = 0.87
    exponent = 8                 # target rho^k <= m^-exponent
"""

import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from ..errors import InvalidArgument
from ..model import ModelConfig
from ..network import TOPOLOGIES, WEIGHT_RULES
from ..solvers import ALGORITHMS, STOP_RULES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class AlgoSpec:
    algorithm: str
    T: int
    gamma: Optional[float] = None
    gamma_grid: tuple = ()
    probe_T: int = 40
    search_metric: str = "avg_estimation_error"
    K: int = 1
    chebyshev: bool = False
    stop: str = "fixed_T"
    tol: float = 1e-10
    label: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown algorithm {self.algorithm!r}")
        if self.gamma is None and not self.gamma_grid:
            raise InvalidArgument(f"{self.algorithm}: give gamma or a non-empty gamma_grid")
        if self.gamma is not None and not self.gamma > 0:
            raise InvalidArgument(f"gamma must be positive, got {self.gamma}")
        if self.T < 1 or self.K < 1 or self.probe_T < 1:
            raise InvalidArgument("T, K and probe_T must be >= 1")
        if self.stop not in STOP_RULES:
            raise InvalidArgument(f"unknown stop rule {self.stop!r}")
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))

    @property
    def name(self):
        if self.label:
            return self.label
        tag = self.algorithm
        if self.K > 1:
            tag += f"_K{self.K}" + ("_cheb" if self.chebyshev else "")
        return tag


@dataclass(frozen=True)
class CaseSpec:
    label: str
    model: ModelConfig
    algorithms: tuple
    topology: str = "erdos_renyi"
    topology_params: dict = field(default_factory=dict)
    rule: str = "metropolis"
    graph_seed: int = 0
    target_rho: Optional[float] = None
    r: Optional[float] = None  # None: ||theta*||_1 of each trial
    gamma_from: Optional[str] = None  # label of an earlier case whose gammas to reuse

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise InvalidArgument(f"unknown topology {self.topology!r}")
        if self.rule not in WEIGHT_RULES:
            raise InvalidArgument(f"unknown weight rule {self.rule!r}")
        if self.target_rho is not None and self.topology != "erdos_renyi":
            raise InvalidArgument("target_rho needs an erdos_renyi topology")
        if not self.algorithms:
            raise InvalidArgument(f"case {self.label!r} has no algorithms")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"case {self.label!r}: duplicate algorithm labels {names}")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))


@dataclass(frozen=True)
class RoundTableSpec:
    ms: tuple = (50, 625, 1250, 2500)
    topologies: tuple = ("erdos_renyi", "line")
    rules: tuple = ("metropolis", "lazy_metropolis")
    p: float = 0.87
    exponent: float = 8.0
    graph_seed: int = 0

    def __post_init__(self):
        for name in ("ms", "topologies", "rules"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if any(m < 2 for m in self.ms):
            raise InvalidArgument("round table needs m >= 2")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    cases: tuple = ()
    trials: int = 1
    base_seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    scale: str = "custom"
    full_metrics: bool = False
    reference: bool = True  # compute theta_hat per trial for optimization errors
    reference_tol: float = 1e-10
    reference_max_iter: int = 200_000
    rounds: Optional[RoundTableSpec] = None

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidArgument(f"trials must be >= 1, got {self.trials}")
        if self.workers < 1:
            raise InvalidArgument(f"workers must be >= 1, got {self.workers}")
        if self.base_seed < 0:
            raise InvalidArgument("base_seed must be >= 0")
        if not self.cases and self.rounds is None:
            raise InvalidArgument("experiment has neither cases nor a round table")
        labels = [c.label for c in self.cases]
        if len(set(labels)) != len(labels):
            raise InvalidArgument(f"duplicate case labels {labels}")
        for i, c in enumerate(self.cases):
            if c.gamma_from is not None and c.gamma_from not in labels[:i]:
                raise InvalidArgument(
                    f"case {c.label!r}: gamma_from {c.gamma_from!r} is not an earlier case"
                )
        object.__setattr__(self, "cases", tuple(self.cases))

    @property
    def kind(self):
        return "rounds" if self.rounds is not None else "trace"

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)


def _algo_from_dict(d):
    d = dict(d)
    if "gamma_grid" in d:
        d["gamma_grid"] = tuple(d["gamma_grid"])
    return AlgoSpec(**d)


def _case_from_dict(d):
    d = dict(d)
    try:
        model = ModelConfig.from_dict(d.pop("model"))
        algos = tuple(_algo_from_dict(a) for a in d.pop("algorithms"))
    except KeyError as exc:
        raise InvalidArgument(f"case is missing {exc.args[0]!r}") from None
    return CaseSpec(model=model, algorithms=algos, **d)


def config_from_dict(data):
    data = dict(data)
    try:
        cases = tuple(_case_from_dict(c) for c in data.pop("cases", ()))
        rounds = data.pop("rounds", None)
        if rounds is not None:
            rounds = RoundTableSpec(**rounds)
        return ExperimentConfig(cases=cases, rounds=rounds, **data)
    except TypeError as exc:
        # unknown or missing keys in one of the dataclasses
        raise InvalidArgument(f"bad experiment config: {exc}") from None


def load_config(path):
    """Read an ExperimentConfig from a TOML file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidArgument(f"{path}: {exc}") from None
    data.setdefault("name", str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0])
    return config_from_dict(data)
