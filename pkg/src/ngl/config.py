"""Flat dotted-key experiment configs for the command-line harness.

A config is a single JSON object whose keys are dotted paths such as
"problem.family" or "oracle.alpha".  The flat shape keeps experiment
folders diffable: one line per knob, no nesting.  Sweep configs use the
same keys but may give a list of values for any leaf, meaning a
cross-product over the listed values.

Sections and keys:

  problem.family   nesterov_convex | nesterov_strongly_convex | quadratic
  problem.n        dimension, default 100
  problem.k        chain length (nesterov_convex only)
  problem.mu       strong convexity modulus (required unless convex family)
  problem.L        smoothness constant, required
  oracle.mode      none | sampled_unbiased | adversarial_opposing | top_k
                   | sign | grid | finite_difference | reduced_precision
  oracle.alpha     relative noise level (synthetic modes)
  oracle.delta     absolute noise level (synthetic modes)
  oracle.seed      noise stream seed, default 0
  oracle.k         kept coordinates (top_k)
  oracle.m         grid resolution (grid)
  oracle.h         difference step (finite_difference)
  oracle.value_noise  value-oracle noise bound (finite_difference)
  oracle.precision_bits  significand bits (reduced_precision, quadratic only)
  oracle.domain_radius   certified query radius (reduced_precision)
  solver.name      gd | re_agm | adaptive_gd, default gd
  solver.N         step budget, default 10^4 strongly convex / 10^3 convex
  solver.alpha_param  level handed to the step-size rule, default declared
  solver.L0        initial smoothness guess (adaptive_gd)
  solver.tau       adapt the smoothness guess too (adaptive_gd), default false
  driver.name      none | regularize | stopping | restart | combined
  driver.epsilon   target accuracy (regularize, restart, combined)
  driver.beta      budget exponent (regularize with re_agm), default 0.5
  driver.tau       budget exponent (combined), default 0.0
  driver.K         stopping-rule multiplier (stopping)
  output.dir       directory for trace.csv and summary.json

The quadratic family builds a diagonal spectrum spread linearly over
[mu, L] with the minimizer at the all-ones point, so conditioning is
set by (mu, L) alone.  The start point is always the origin and driver
radii come from the problem's analytic minimizer; both are reproduction
conveniences, not tuned inputs.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numkit import PrecisionSpec
from .oracles import (
    CompressedGradientOracle,
    FiniteDifferenceOracle,
    FloatingPointQuadraticOracle,
    GradientOracle,
    NoiseSpec,
    SyntheticNoiseOracle,
)
from .problems import (
    ObjectiveProblem,
    nesterov_convex,
    nesterov_strongly_convex,
    quadratic,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config_file",
    "parse_config",
    "expand_sweep",
    "build_problem",
    "build_oracle",
]

FAMILIES = ("nesterov_convex", "nesterov_strongly_convex", "quadratic")
ORACLE_MODES = ("none", "sampled_unbiased", "adversarial_opposing", "top_k",
                "sign", "grid", "finite_difference", "reduced_precision")
SOLVERS = ("gd", "re_agm", "adaptive_gd")
DRIVERS = ("none", "regularize", "stopping", "restart", "combined")

_SYNTHETIC_MODES = ("sampled_unbiased", "adversarial_opposing")


class ConfigError(ValueError):
    """Malformed config: names the offending field or source line."""


def load_config_file(path: str) -> dict:
    """Read a flat JSON config, reporting parse errors with line/column."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object of "
                          f"dotted keys, got {type(data).__name__}")
    return data


class _Flat:
    """Typed reader over the flat dict; tracks consumed keys."""

    def __init__(self, raw: dict):
        for key in raw:
            if not isinstance(key, str):
                raise ConfigError(f"config keys must be strings, got {key!r}")
        self.raw = raw
        self.seen = set()

    def has(self, key: str) -> bool:
        return key in self.raw

    def _get(self, key, default, required):
        if key not in self.raw:
            if required:
                raise ConfigError(f"{key}: required field is missing")
            return default
        self.seen.add(key)
        return self.raw[key]

    def str_(self, key, default=None, required=False, choices=None):
        v = self._get(key, default, required)
        if v is default and key not in self.raw:
            return default
        if not isinstance(v, str):
            raise ConfigError(f"{key}: expected a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(f"{key}: {v!r} is not one of {list(choices)}")
        return v

    def number(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is default and key not in self.raw:
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite, got {v!r}")
        return float(v)

    def int_(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is default and key not in self.raw:
            return default
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return v

    def bool_(self, key, default=None, required=False):
        v = self._get(key, default, required)
        if v is default and key not in self.raw:
            return default
        if not isinstance(v, bool):
            raise ConfigError(f"{key}: expected true or false, got {v!r}")
        return v

    def reject_unknown(self):
        unknown = sorted(set(self.raw) - self.seen)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")


def _positive(key, v):
    if not v > 0.0:
        raise ConfigError(f"{key}: must be positive, got {v}")
    return v


def _nonnegative(key, v):
    if v < 0.0:
        raise ConfigError(f"{key}: must be >= 0, got {v}")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    """One validated experiment: problem, oracle, solver, driver, output."""

    family: str
    n: int
    k: Optional[int]
    mu: float
    L: float
    mode: str
    alpha: float
    delta: float
    seed: int
    top_k: Optional[int]
    grid_m: Optional[int]
    fd_h: Optional[float]
    fd_value_noise: float
    precision_bits: Optional[int]
    domain_radius: float
    solver: str
    steps: int
    alpha_param: Optional[float]
    L0: Optional[float]
    adapt_L: bool
    driver: str
    epsilon: Optional[float]
    beta: float
    tau: float
    K: Optional[float]
    out_dir: Optional[str]


def parse_config(raw: dict, seed_override: Optional[int] = None,
                 require_output: bool = True) -> ExperimentConfig:
    """Validate a flat dict into an ExperimentConfig.

    Structural problems (types, unknown keys, inapplicable or missing
    fields, broken cross-field wiring) raise ConfigError here; the
    mathematical hypothesis guards stay in the core modules and fire at
    assembly or run time.
    """
    flat = _Flat(raw)

    family = flat.str_("problem.family", required=True, choices=FAMILIES)
    n = flat.int_("problem.n", default=100)
    if n < 1:
        raise ConfigError(f"problem.n: must be >= 1, got {n}")
    L = flat.number("problem.L", required=True)
    _positive("problem.L", L)

    k = flat.int_("problem.k")
    mu = flat.number("problem.mu")
    if family == "nesterov_convex":
        if k is None:
            raise ConfigError("problem.k: required for family nesterov_convex")
        if not 1 <= k <= n:
            raise ConfigError(f"problem.k: need 1 <= k <= n={n}, got {k}")
        if mu not in (None, 0.0):
            raise ConfigError(f"problem.mu: nesterov_convex is a mu = 0 "
                              f"family, got {mu}")
        mu = 0.0
    else:
        if k is not None:
            raise ConfigError(f"problem.k: not used by family {family}")
        if mu is None:
            raise ConfigError(f"problem.mu: required for family {family}")
        _positive("problem.mu", mu)
        if mu > L:
            raise ConfigError(f"problem.mu: must not exceed problem.L, "
                              f"got mu={mu} > L={L}")

    mode = flat.str_("oracle.mode", default="none", choices=ORACLE_MODES)
    alpha = flat.number("oracle.alpha", default=0.0)
    delta = flat.number("oracle.delta", default=0.0)
    seed = flat.int_("oracle.seed", default=0)
    if seed_override is not None:
        seed = seed_override
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"oracle.alpha: must be in [0, 1), got {alpha}")
    _nonnegative("oracle.delta", delta)
    if mode not in _SYNTHETIC_MODES and (alpha != 0.0 or delta != 0.0):
        raise ConfigError(f"oracle.alpha/oracle.delta: set but ignored by "
                          f"mode {mode!r}; its levels are derived")

    top_k = flat.int_("oracle.k")
    grid_m = flat.int_("oracle.m")
    fd_h = flat.number("oracle.h")
    fd_value_noise = flat.number("oracle.value_noise", default=0.0)
    precision_bits = flat.int_("oracle.precision_bits")
    domain_radius = flat.number("oracle.domain_radius", default=1.0)

    def _only_for(key, value, wanted, sentinel=None):
        if value is not sentinel and mode != wanted:
            raise ConfigError(f"{key}: only used by oracle.mode {wanted!r}")

    _only_for("oracle.k", top_k, "top_k")
    _only_for("oracle.m", grid_m, "grid")
    _only_for("oracle.h", fd_h, "finite_difference")
    _only_for("oracle.precision_bits", precision_bits, "reduced_precision")
    if fd_value_noise != 0.0 and mode != "finite_difference":
        raise ConfigError("oracle.value_noise: only used by oracle.mode "
                          "'finite_difference'")
    if domain_radius != 1.0 and mode != "reduced_precision":
        raise ConfigError("oracle.domain_radius: only used by oracle.mode "
                          "'reduced_precision'")
    if mode == "top_k":
        if top_k is None:
            raise ConfigError("oracle.k: required for mode top_k")
        if not 1 <= top_k <= n:
            raise ConfigError(f"oracle.k: need 1 <= k <= n={n}, got {top_k}")
    if mode == "grid":
        if grid_m is None:
            raise ConfigError("oracle.m: required for mode grid")
        if grid_m < 1:
            raise ConfigError(f"oracle.m: must be >= 1, got {grid_m}")
    if mode == "finite_difference":
        if fd_h is None:
            raise ConfigError("oracle.h: required for mode finite_difference")
        _positive("oracle.h", fd_h)
        _nonnegative("oracle.value_noise", fd_value_noise)
    if mode == "reduced_precision":
        if family != "quadratic":
            raise ConfigError("oracle.mode: reduced_precision needs an "
                              "explicit quadratic, set problem.family to "
                              "'quadratic'")
        if precision_bits is None:
            raise ConfigError("oracle.precision_bits: required for mode "
                              "reduced_precision")
        if not 1 <= precision_bits <= 52:
            raise ConfigError(f"oracle.precision_bits: must be in [1, 52], "
                              f"got {precision_bits}")
        _positive("oracle.domain_radius", domain_radius)

    solver = flat.str_("solver.name", default="gd", choices=SOLVERS)
    steps = flat.int_("solver.N", default=10_000 if mu > 0.0 else 1_000)
    if steps < 0:
        raise ConfigError(f"solver.N: must be >= 0, got {steps}")
    alpha_param = flat.number("solver.alpha_param")
    if alpha_param is not None:
        if not 0.0 <= alpha_param < 1.0:
            raise ConfigError(f"solver.alpha_param: must be in [0, 1), "
                              f"got {alpha_param}")
        if solver == "adaptive_gd":
            raise ConfigError("solver.alpha_param: adaptive_gd discovers its "
                              "level, the field is not used")
    L0 = flat.number("solver.L0")
    adapt_L = flat.bool_("solver.tau", default=False)
    if solver != "adaptive_gd":
        if L0 is not None:
            raise ConfigError("solver.L0: only used by solver.name "
                              "'adaptive_gd'")
        if adapt_L:
            raise ConfigError("solver.tau: only used by solver.name "
                              "'adaptive_gd'")
    elif L0 is not None:
        _positive("solver.L0", L0)

    driver = flat.str_("driver.name", default="none", choices=DRIVERS)
    epsilon = flat.number("driver.epsilon")
    beta = flat.number("driver.beta", default=0.5)
    tau = flat.number("driver.tau", default=0.0)
    K = flat.number("driver.K")

    needs_epsilon = driver in ("regularize", "restart", "combined")
    if needs_epsilon:
        if epsilon is None:
            raise ConfigError(f"driver.epsilon: required for driver {driver}")
        _positive("driver.epsilon", epsilon)
    elif epsilon is not None:
        raise ConfigError(f"driver.epsilon: not used by driver {driver}")
    if K is not None and driver != "stopping":
        raise ConfigError("driver.K: only used by driver 'stopping'")
    if driver == "stopping":
        if K is None:
            raise ConfigError("driver.K: required for driver stopping")
        if not K > 1.0:
            raise ConfigError(f"driver.K: must exceed 1, got {K}")
    if beta != 0.5 and not (driver == "regularize" and solver == "re_agm"):
        raise ConfigError("driver.beta: only used by driver 'regularize' "
                          "with solver 're_agm'")
    if not 0.0 <= beta <= 0.5:
        raise ConfigError(f"driver.beta: must be in [0, 1/2], got {beta}")
    if tau != 0.0 and driver != "combined":
        raise ConfigError("driver.tau: only used by driver 'combined'")
    if not 0.0 <= tau <= 0.5:
        raise ConfigError(f"driver.tau: must be in [0, 1/2], got {tau}")

    # cross-field wiring
    if driver != "none" and solver == "adaptive_gd":
        raise ConfigError("driver.name: drivers dispatch gd or re_agm only, "
                          "not adaptive_gd")
    if alpha_param is not None and driver != "none":
        raise ConfigError("solver.alpha_param: drivers prescribe their own "
                          "solver level, the field needs driver 'none'")
    if flat.has("solver.N") and driver in ("regularize", "restart", "combined"):
        raise ConfigError(f"solver.N: driver {driver} budgets its own runs, "
                          "the field is not used")
    if driver in ("regularize", "combined") and mu != 0.0:
        raise ConfigError(f"driver.name: {driver} needs a convex base "
                          f"(mu = 0), got mu={mu}")
    if driver in ("stopping", "restart") and not mu > 0.0:
        raise ConfigError(f"driver.name: {driver} needs a strongly convex "
                          f"problem (mu > 0)")
    if solver == "re_agm" and mu == 0.0 and driver not in ("regularize",
                                                           "combined"):
        raise ConfigError("solver.name: re_agm needs mu > 0; on a convex "
                          "problem use driver regularize or combined")

    out_dir = flat.str_("output.dir", required=require_output)
    if out_dir is not None and not out_dir:
        raise ConfigError("output.dir: must be a non-empty path")

    flat.reject_unknown()
    return ExperimentConfig(
        family=family, n=n, k=k, mu=float(mu), L=L,
        mode=mode, alpha=alpha, delta=delta, seed=seed,
        top_k=top_k, grid_m=grid_m, fd_h=fd_h, fd_value_noise=fd_value_noise,
        precision_bits=precision_bits, domain_radius=domain_radius,
        solver=solver, steps=steps, alpha_param=alpha_param, L0=L0,
        adapt_L=adapt_L, driver=driver, epsilon=epsilon, beta=beta, tau=tau,
        K=K, out_dir=out_dir,
    )


def expand_sweep(raw: dict):
    """Split a sweep config into its cross-product of single-run dicts.

    Any list-valued field is a sweep axis.  Returns (varied_keys, runs)
    with keys sorted and the product enumerated with the last key
    varying fastest, so run indices are stable across invocations.
    """
    axes = {}
    base = {}
    for key, value in raw.items():
        if isinstance(value, list):
            if not value:
                raise ConfigError(f"{key}: empty sweep list")
            if any(isinstance(v, (list, dict)) for v in value):
                raise ConfigError(f"{key}: sweep values must be scalars")
            axes[key] = value
        else:
            base[key] = value
    varied = sorted(axes)
    runs = []
    for combo in itertools.product(*(axes[k] for k in varied)):
        d = dict(base)
        d.update(zip(varied, combo))
        runs.append(d)
    return varied, runs


def build_problem(cfg: ExperimentConfig) -> ObjectiveProblem:
    """Instantiate the configured objective."""
    if cfg.family == "nesterov_convex":
        return nesterov_convex(cfg.k, cfg.L, cfg.n)
    if cfg.family == "nesterov_strongly_convex":
        return nesterov_strongly_convex(cfg.mu, cfg.L, cfg.n)
    # diagonal spectrum spread over [mu, L], minimizer at the ones vector
    diag = np.linspace(cfg.mu, cfg.L, cfg.n)
    A = np.diag(diag)
    b = -diag.copy()
    return quadratic(A, b, name=f"diag[{cfg.mu},{cfg.L}]^{cfg.n}")


def build_oracle(cfg: ExperimentConfig, problem: ObjectiveProblem) -> GradientOracle:
    """Instantiate the configured gradient oracle for a built problem."""
    if cfg.mode in ("none",) + _SYNTHETIC_MODES:
        spec = NoiseSpec(alpha=cfg.alpha, delta=cfg.delta, mode=cfg.mode,
                         seed=cfg.seed)
        return SyntheticNoiseOracle(problem, spec)
    if cfg.mode == "top_k":
        return CompressedGradientOracle(problem, "top_k", cfg.top_k)
    if cfg.mode == "sign":
        return CompressedGradientOracle(problem, "sign")
    if cfg.mode == "grid":
        return CompressedGradientOracle(problem, "grid", cfg.grid_m)
    if cfg.mode == "finite_difference":
        return FiniteDifferenceOracle(problem, cfg.fd_h, cfg.fd_value_noise,
                                      cfg.seed)
    return FloatingPointQuadraticOracle(problem, PrecisionSpec(cfg.precision_bits),
                                        cfg.domain_radius)
