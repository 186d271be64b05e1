"""
The six standard experiments, each at a "paper" and a "desk" scale.

Desk scales divide d by ten and run 20 trials instead of 100, choosing the
remaining sizes so that alpha = s log d / N stays close to its full-scale value.
"""

import math

import numpy as np

from ..errors import InvalidArgument
from ..model import ModelConfig
from .config import AlgoSpec, CaseSpec, ExperimentConfig, RoundTableSpec

PRESETS = (
    "P1_fixed_alpha",
    "P2_varying_alpha",
    "P3_fixed_rho_growing_m",
    "P4_fixed_p_growing_m",
    "P5_multi_consensus",
    "P6_round_table",
)
SCALES = ("desk", "paper")
TRIALS = {"desk": 20, "paper": 100}

# P5 graphs: contraction factors of the three networks and the consensus
# rounds that bring each to roughly 0.06
MULTI_ROUND = ((0.0638, 1), (0.4038, 3), (0.7281, 9))


def _grid(lo, hi, k):
    return tuple(float(x) for x in np.geomspace(lo, hi, k))


def _netlasso(T, grid, probe_T, K=1):
    return AlgoSpec("netlasso", T=T, gamma_grid=grid, probe_T=probe_T, K=K)


def _p1(scale):
    if scale == "paper":
        dims = [(5000, 61), (10000, 94), (20000, 142)]
        T = 300
    else:
        dims = [(500, 14), (1000, 22), (2000, 34)]
        T = 200
    algo = (_netlasso(T, _grid(0.25, 32, 8), probe_T=20),)
    cases = []
    for i, (d, n) in enumerate(dims):
        cases.append(CaseSpec(
            label=f"d{d}",
            model=ModelConfig(d=d, s=math.ceil(math.sqrt(d)), m=50, n=n),
            algorithms=algo,
            topology_params={"p": 0.5},
            # one step size, tuned on the smallest instance, for all three
            gamma_from=None if i == 0 else f"d{dims[0][0]}",
        ))
    return cases


def _alpha_sweep(scale):
    # d, s with s log d / (50 n) close to {1, 0.2, 0.04} for n = 1, 5, 25
    if scale == "paper":
        d = 20000
        s = math.ceil(math.log(d) / 2)
    else:
        d = 2000
        s = 7
    return [(f"n{n}", ModelConfig(d=d, s=s, m=50, n=n)) for n in (1, 5, 25)]


def _p2(scale):
    algo = (_netlasso(1000, _grid(0.5, 128, 9), probe_T=40),)
    return [
        CaseSpec(label=lab, model=mc, algorithms=algo, topology_params={"p": 0.5})
        for lab, mc in _alpha_sweep(scale)
    ]


def _growing_m(scale, fixed_p):
    if scale == "paper":
        d, N = 5000, 2500
        ms = (50, 625, 1250, 2500)
        ps = (0.87, 0.4, 0.23, 0.15)
    else:
        d, N = 500, 600
        ms = (50, 100, 150, 200)
        ps = None
    s = math.ceil(math.sqrt(d))
    algo = (_netlasso(300, _grid(0.25, 32, 8), probe_T=30),)
    cases = []
    for i, m in enumerate(ms):
        kw = {}
        if fixed_p:
            kw["topology_params"] = {"p": 0.87}
        elif ps is not None:
            kw["topology_params"] = {"p": ps[i]}
        else:
            kw["target_rho"] = 0.18
        cases.append(CaseSpec(
            label=f"m{m}",
            model=ModelConfig(d=d, s=s, m=m, n=N // m),
            algorithms=algo,
            **kw,
        ))
    return cases


def _p5(scale):
    grid = _grid(0.5, 128, 9)
    cases = []
    for lab, mc in _alpha_sweep(scale):
        base = None
        for rho, K in MULTI_ROUND:
            label = f"{lab}_rho{rho:g}_K{K}"
            cases.append(CaseSpec(
                label=label,
                model=mc,
                algorithms=(_netlasso(1000, grid, probe_T=40, K=K),),
                target_rho=rho,
                gamma_from=base,
            ))
            base = base or label
    return cases


def preset(name, scale="desk"):
    """ExperimentConfig of a standard experiment; ``name`` may be "P1" or the full name."""
    if scale not in SCALES:
        raise InvalidArgument(f"scale must be one of {SCALES}, got {scale!r}")
    full = next((p for p in PRESETS if name in (p, p.split("_")[0])), None)
    if full is None:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    common = dict(name=full, trials=TRIALS[scale], scale=scale)
    key = full.split("_")[0]
    if key == "P6":
        return ExperimentConfig(rounds=RoundTableSpec(), **common)
    if key == "P1":
        cases = _p1(scale)
    elif key == "P2":
        cases = _p2(scale)
    elif key == "P3":
        cases = _growing_m(scale, fixed_p=False)
    elif key == "P4":
        cases = _growing_m(scale, fixed_p=True)
    else:
        cases = _p5(scale)
    return ExperimentConfig(cases=tuple(cases), **common)
