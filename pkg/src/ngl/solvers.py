"""Iterative gradient methods driven by inexact gradient oracles.

Three runners share one trace format:

- ``gd_run``: fixed-step descent whose step size is shrunk according to
  the declared relative error level.
- ``re_agm_run``: an accelerated two-sequence method for strongly convex
  objectives; its momentum weight is the largest root of a small
  quadratic and tolerates relative error up to 1/3.
- ``adaptive_gd_run``: backtracking descent that doubles its error-level
  guess (optionally the smoothness guess too) until a descent predicate
  accepts the step; no relative level needs to be known up front.

Trace convention: row 0 is the starting point before any step; row k is
the iterate after k accepted steps.  All runners accept an optional
``monitor`` callback that inspects each iterate and may end the run
early (used for stopping rules and envelope violation detection).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numkit import as_vector
from .oracles import GradientOracle
from .problems import ObjectiveProblem

TERMINAL_STEPS_EXHAUSTED = "steps_exhausted"
TERMINAL_STOPPING_RULE = "stopping_rule"
TERMINAL_ENVELOPE_VIOLATION = "envelope_violation"
TERMINAL_REASONS = (
    TERMINAL_STEPS_EXHAUSTED,
    TERMINAL_STOPPING_RULE,
    TERMINAL_ENVELOPE_VIOLATION,
)
# only attached to traces carried by errors, never returned normally
_TERMINAL_DIVERGED = "diverged"
_TERMINAL_STALLED = "inner_loop_stall"

INNER_LOOP_CAP = 64
_GAP_FLOOR = -1e-9


def _check_steps(steps) -> int:
    if isinstance(steps, bool) or not isinstance(steps, (int, np.integer)):
        raise ValueError(f"steps must be an integer, got {steps!r}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    return int(steps)


@dataclass(frozen=True)
class GDConfig:
    """Fixed-step descent: N steps at the level-alpha step size."""

    steps: int
    alpha: float
    L: float

    def __post_init__(self):
        object.__setattr__(self, "steps", _check_steps(self.steps))
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if not (self.L > 0.0 and math.isfinite(self.L)):
            raise ValueError(f"L must be positive and finite, got {self.L}")

    @property
    def step_size(self) -> float:
        return gd_step_size(self.alpha, self.L)


@dataclass(frozen=True)
class ReAgmConfig:
    """Accelerated method config; requires strong convexity (mu > 0)."""

    steps: int
    mu: float
    L: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "steps", _check_steps(self.steps))
        # same domain checks as re_agm_calculate_parameters, applied eagerly
        _check_re_agm_domain(self.mu, self.L, self.alpha)

    def parameters(self) -> "ReAgmParameters":
        return re_agm_calculate_parameters(self.mu, self.L, self.alpha)


@dataclass(frozen=True)
class AdaptiveGDConfig:
    """Backtracking descent config.

    ``L0`` is the initial smoothness guess; ``adapt_L`` additionally
    doubles the smoothness guess with the error-level guess.  ``delta``
    is the absolute error level, assumed known (the acceptance predicate
    needs it).
    """

    steps: int
    L0: float
    delta: float = 0.0
    adapt_L: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", _check_steps(self.steps))
        if not (self.L0 > 0.0 and math.isfinite(self.L0)):
            raise ValueError(f"L0 must be positive and finite, got {self.L0}")
        if not (self.delta >= 0.0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be >= 0 and finite, got {self.delta}")


def gd_step_size(alpha: float, L: float) -> float:
    """Step size ((1-alpha)/(1+alpha))^{3/2} / (4L)."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if L <= 0.0:
        raise ValueError(f"L must be > 0, got {L}")
    return ((1.0 - alpha) / (1.0 + alpha)) ** 1.5 / (4.0 * L)


def _check_re_agm_domain(mu, L, alpha) -> None:
    if not (mu > 0.0 and math.isfinite(mu)):
        raise ValueError(f"mu must be > 0 (strongly convex only), got {mu}")
    if not (L >= mu and math.isfinite(L)):
        raise ValueError(f"need L >= mu > 0, got mu={mu}, L={L}")
    if not 0.0 <= alpha <= 1.0 / 3.0:
        raise ValueError(f"alpha must be in [0, 1/3], got {alpha}")


@dataclass(frozen=True)
class ReAgmParameters:
    """Derived constants of the accelerated method.

    ``omega`` is the largest root of  m*w^2 + (s - m)*w - q = 0, computed
    with the cancellation-free rearrangement and certified against the
    residual and its lower bracket (1/150)*(mu/2L)^(1-gamma_star).
    """

    h: float
    L_hat: float
    gamma_star: float
    s: float
    m: float
    q: float
    omega: float

    def as_dict(self) -> dict:
        return {
            "h": self.h,
            "L_hat": self.L_hat,
            "gamma_star": self.gamma_star,
            "s": self.s,
            "m": self.m,
            "q": self.q,
            "omega": self.omega,
        }


def re_agm_calculate_parameters(mu: float, L: float, alpha: float) -> ReAgmParameters:
    """Derive (h, L_hat, gamma_star, s, m, q, omega) for given constants.

    Valid for 0 < mu <= L and 0 <= alpha <= 1/3.  gamma_star interpolates
    between 1/2 (alpha = 0) and 0 (alpha = 1/3); the momentum weight
    omega shrinks with it.
    """
    _check_re_agm_domain(mu, L, alpha)
    ratio = mu / (2.0 * L)
    if alpha == 0.0:
        gamma_star = 0.5
    else:
        # log base ratio of 3*alpha; ratio < 1 so both logs are <= 0
        gamma_star = min(math.log(3.0 * alpha) / math.log(ratio), 0.5)
    pw = ratio**gamma_star
    s = (1.0 + 0.25 * pw) * (1.0 + alpha) ** 2 + 2.0 * alpha**2
    m = (1.0 - 0.25 * pw) * (1.0 - alpha) ** 2 - 2.0 * alpha**2
    L_hat = 8.0 * (1.0 + alpha) * L / (1.0 - alpha) ** 3
    q = mu / (2.0 * L_hat)
    h = gd_step_size(alpha, L)
    # largest root of m*w^2 + (s-m)*w - q = 0; s > m > 0 here, so the
    # conjugate form below avoids cancellation when s - m >> q
    b = s - m
    omega = 2.0 * q / (b + math.sqrt(b * b + 4.0 * m * q))

    if not m > 0.0:
        raise AssertionError(f"derived m must be positive, got m={m}")
    residual = m * omega * omega + b * omega - q
    if abs(residual) > 1e-12 * max(1.0, q):
        raise AssertionError(f"omega residual {residual} out of tolerance (q={q})")
    lower = (1.0 / 150.0) * ratio ** (1.0 - gamma_star)
    if not (omega >= lower * (1.0 - 1e-12) and omega < 1.0):
        raise AssertionError(f"omega={omega} outside [{lower}, 1)")
    return ReAgmParameters(h=h, L_hat=L_hat, gamma_star=gamma_star, s=s, m=m, q=q, omega=omega)


@dataclass(frozen=True)
class IterateView:
    """What a monitor callback sees at each recorded point.

    ``kind`` is "x" for main-sequence iterates and "y" for the
    accelerated method's extrapolation points.  ``noisy_grad_norm`` is
    NaN when no oracle query was made at the point.
    """

    kind: str
    k: int
    x: np.ndarray
    f_gap: float
    grad_norm: float
    noisy_grad_norm: float


Monitor = Callable[[IterateView], Optional[str]]


@dataclass
class RunTrace:
    """Per-iteration record of a single run.

    Arrays ``k``, ``f_gap``, ``grad_norm``, ``noisy_grad_norm`` all have
    length (executed iterations + 1); row 0 is the starting point.
    ``noisy_grad_norm`` is NaN where the runner made no oracle query at
    that row.  Adaptive runs fill ``inner_loops`` (failed trials while
    leaving row k), ``alpha_hat`` and ``L_hat`` (accepted values for that
    step; NaN on the final row).  Accelerated runs fill the ``y_*``
    arrays with one row per extrapolation point evaluated.

    ``x_final``/``final_f_gap`` give the terminal point, which for a
    monitor-halted accelerated run can be an extrapolation point rather
    than the last main-sequence row.
    """

    k: np.ndarray
    f_gap: np.ndarray
    grad_norm: np.ndarray
    noisy_grad_norm: np.ndarray
    terminal: str
    x_final: np.ndarray
    final_f_gap: float
    declared_alpha: float
    declared_delta: float
    inner_loops: Optional[np.ndarray] = None
    alpha_hat: Optional[np.ndarray] = None
    L_hat: Optional[np.ndarray] = None
    y_f_gap: Optional[np.ndarray] = None
    y_grad_norm: Optional[np.ndarray] = None
    y_noisy_grad_norm: Optional[np.ndarray] = None

    @property
    def iterations(self) -> int:
        """Number of executed steps (rows minus one)."""
        return len(self.k) - 1

    @property
    def total_inner_loops(self) -> int:
        if self.inner_loops is None:
            return 0
        return int(self.inner_loops.sum())

    def __len__(self) -> int:
        return len(self.k)


class DivergedError(RuntimeError):
    """A non-finite iterate appeared; carries the trace up to the last finite row."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


class InnerLoopStallError(RuntimeError):
    """Backtracking failed INNER_LOOP_CAP trials in one step.

    Indicates an oracle whose error conforms to no (alpha, delta) with
    alpha < 1 at the queried point.  Carries the trace so far.
    """

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


class _TraceBuilder:
    def __init__(self, oracle: GradientOracle, adaptive: bool = False, with_y: bool = False):
        self.declared_alpha = oracle.declared_alpha
        self.declared_delta = oracle.declared_delta
        self.adaptive = adaptive
        self.with_y = with_y
        self.k: list[int] = []
        self.f_gap: list[float] = []
        self.grad_norm: list[float] = []
        self.noisy_grad_norm: list[float] = []
        self.inner_loops: list[int] = []
        self.alpha_hat: list[float] = []
        self.L_hat: list[float] = []
        self.y_f_gap: list[float] = []
        self.y_grad_norm: list[float] = []
        self.y_noisy_grad_norm: list[float] = []

    def add_row(self, k, f_gap, grad_norm, noisy_grad_norm,
                inner=0, alpha_hat=math.nan, L_hat=math.nan):
        if not f_gap >= _GAP_FLOOR:
            raise AssertionError(f"f_gap {f_gap} below {_GAP_FLOOR} at row {k}: bad f_star?")
        self.k.append(int(k))
        self.f_gap.append(float(f_gap))
        self.grad_norm.append(float(grad_norm))
        self.noisy_grad_norm.append(float(noisy_grad_norm))
        if self.adaptive:
            self.inner_loops.append(int(inner))
            self.alpha_hat.append(float(alpha_hat))
            self.L_hat.append(float(L_hat))

    def add_y_row(self, f_gap, grad_norm, noisy_grad_norm):
        if not f_gap >= _GAP_FLOOR:
            raise AssertionError(f"y f_gap {f_gap} below {_GAP_FLOOR}: bad f_star?")
        self.y_f_gap.append(float(f_gap))
        self.y_grad_norm.append(float(grad_norm))
        self.y_noisy_grad_norm.append(float(noisy_grad_norm))

    def build(self, terminal: str, x_final: np.ndarray, final_f_gap: float) -> RunTrace:
        if terminal not in TERMINAL_REASONS + (_TERMINAL_DIVERGED, _TERMINAL_STALLED):
            raise ValueError(f"unknown terminal reason {terminal!r}")
        return RunTrace(
            k=np.asarray(self.k, dtype=np.int64),
            f_gap=np.asarray(self.f_gap, dtype=np.float64),
            grad_norm=np.asarray(self.grad_norm, dtype=np.float64),
            noisy_grad_norm=np.asarray(self.noisy_grad_norm, dtype=np.float64),
            terminal=terminal,
            x_final=np.array(x_final, dtype=np.float64, copy=True),
            final_f_gap=float(final_f_gap),
            declared_alpha=self.declared_alpha,
            declared_delta=self.declared_delta,
            inner_loops=np.asarray(self.inner_loops, dtype=np.int64) if self.adaptive else None,
            alpha_hat=np.asarray(self.alpha_hat, dtype=np.float64) if self.adaptive else None,
            L_hat=np.asarray(self.L_hat, dtype=np.float64) if self.adaptive else None,
            y_f_gap=np.asarray(self.y_f_gap, dtype=np.float64) if self.with_y else None,
            y_grad_norm=np.asarray(self.y_grad_norm, dtype=np.float64) if self.with_y else None,
            y_noisy_grad_norm=(
                np.asarray(self.y_noisy_grad_norm, dtype=np.float64) if self.with_y else None
            ),
        )


def _start_point(problem: ObjectiveProblem, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(problem.dim)
    return as_vector(x0, problem.dim).copy()


def _checked_value(problem, x, tb, k, last_x):
    """f(x) with divergence guard; raises carrying the rows recorded so far."""
    if not np.all(np.isfinite(x)):
        raise DivergedError(
            f"non-finite iterate at step {k}",
            tb.build(_TERMINAL_DIVERGED, last_x, tb.f_gap[-1] if tb.f_gap else math.nan),
        )
    f_val = problem.value(x)
    if not math.isfinite(f_val):
        raise DivergedError(
            f"non-finite objective value at step {k}",
            tb.build(_TERMINAL_DIVERGED, last_x, tb.f_gap[-1] if tb.f_gap else math.nan),
        )
    return f_val


def _checked_query(oracle, x, tb, k, last_x):
    est, exact = oracle.estimate_with_exact(x)
    if not np.all(np.isfinite(est)):
        raise DivergedError(
            f"non-finite gradient estimate at step {k}",
            tb.build(_TERMINAL_DIVERGED, last_x, tb.f_gap[-1] if tb.f_gap else math.nan),
        )
    return est, exact


def gd_run(problem: ObjectiveProblem, oracle: GradientOracle, cfg: GDConfig,
           x0=None, monitor: Optional[Monitor] = None) -> RunTrace:
    """Run N fixed steps x <- x - h * estimate(x).

    The step size comes from cfg.alpha/cfg.L; if cfg.alpha understates
    the oracle's declared relative level the run proceeds but is flagged
    with a warning, since the descent guarantees no longer apply.
    """
    if cfg.alpha < oracle.declared_alpha:
        warnings.warn(
            f"config alpha={cfg.alpha} is below the oracle's declared "
            f"relative level {oracle.declared_alpha}; descent guarantees do not apply",
            stacklevel=2,
        )
    h = cfg.step_size
    x = _start_point(problem, x0)
    last_finite = x
    tb = _TraceBuilder(oracle)

    for k in range(cfg.steps + 1):
        f_val = _checked_value(problem, x, tb, k, last_finite)
        gap = f_val - problem.f_star
        last = k == cfg.steps
        if last and monitor is None:
            grad_norm = float(np.linalg.norm(problem.gradient(x)))
            tb.add_row(k, gap, grad_norm, math.nan)
            break
        est, exact = _checked_query(oracle, x, tb, k, last_finite)
        grad_norm = float(np.linalg.norm(exact))
        noisy_norm = float(np.linalg.norm(est))
        tb.add_row(k, gap, grad_norm, noisy_norm)
        if monitor is not None:
            reason = monitor(IterateView("x", k, x, gap, grad_norm, noisy_norm))
            if reason is not None:
                return tb.build(reason, x, gap)
        if last:
            break
        last_finite = x
        x = x - h * est
    return tb.build(TERMINAL_STEPS_EXHAUSTED, x, tb.f_gap[-1])


def gd_theoretical_descent_check(trace: RunTrace, problem: ObjectiveProblem,
                                 cfg: GDConfig) -> bool:
    """Check the per-step descent inequality along a gd_run trace.

    Uses cfg's (alpha, L) for the constants and the trace's declared
    absolute level for the noise term:

        f(x^{k+1}) <= f(x^k) - (1-a)^3/((1+a) 16L) ||grad f(x^k)||^2
                              + 3 delta^2 / (16L (1+a)^2)

    with slack tolerance 1e-9 * max(1, |f(x^k)|) per step.  Expected to
    hold whenever cfg.alpha covers the oracle's true relative level; a
    False return indicates an understated level (or a non-conforming
    oracle).
    """
    a, L = cfg.alpha, cfg.L
    delta = trace.declared_delta
    c1 = (1.0 - a) ** 3 / ((1.0 + a) * 16.0 * L)
    c2 = 3.0 / (16.0 * L * (1.0 + a) ** 2)
    noise_term = c2 * delta * delta
    gaps = trace.f_gap
    gnorms = trace.grad_norm
    for k in range(len(gaps) - 1):
        allowed = gaps[k] - c1 * gnorms[k] ** 2 + noise_term
        slack_scale = 1e-9 * max(1.0, abs(gaps[k] + problem.f_star))
        if gaps[k + 1] > allowed + slack_scale:
            return False
    return True


def re_agm_run(problem: ObjectiveProblem, oracle: GradientOracle, cfg: ReAgmConfig,
               x0=None, monitor: Optional[Monitor] = None) -> RunTrace:
    """Run the accelerated two-sequence recursion.

    Starting from u = x, each iteration extrapolates
    y = (omega*u + x)/(1 + omega), queries the oracle at y, then updates
    u <- (1-omega)u + omega*y - (2 omega/mu) estimate and takes the
    descent step x <- y - h*estimate.  Row k of the trace is x^k; the
    y_* arrays record every extrapolation point.

    With a monitor, each new x is also queried so stopping rules can
    watch both sequences; a monitor halt at y makes that y the terminal
    point (see RunTrace).
    """
    params = cfg.parameters()
    omega, h, mu = params.omega, params.h, cfg.mu
    x = _start_point(problem, x0)
    u = x.copy()
    tb = _TraceBuilder(oracle, with_y=True)

    f_val = _checked_value(problem, x, tb, 0, x)
    gap = f_val - problem.f_star
    tb.add_row(0, gap, float(np.linalg.norm(problem.gradient(x))), math.nan)

    for k in range(cfg.steps):
        y = (omega * u + x) / (1.0 + omega)
        fy = _checked_value(problem, y, tb, k, x)
        y_gap = fy - problem.f_star
        est_y, exact_y = _checked_query(oracle, y, tb, k, x)
        y_gn = float(np.linalg.norm(exact_y))
        y_ngn = float(np.linalg.norm(est_y))
        tb.add_y_row(y_gap, y_gn, y_ngn)
        if monitor is not None:
            reason = monitor(IterateView("y", k, y, y_gap, y_gn, y_ngn))
            if reason is not None:
                return tb.build(reason, y, y_gap)
        u = (1.0 - omega) * u + omega * y - (2.0 * omega / mu) * est_y
        x_prev = x
        x = y - h * est_y
        f_val = _checked_value(problem, x, tb, k + 1, x_prev)
        gap = f_val - problem.f_star
        if monitor is not None:
            est_x, exact_x = _checked_query(oracle, x, tb, k + 1, x_prev)
            gn = float(np.linalg.norm(exact_x))
            ngn = float(np.linalg.norm(est_x))
        else:
            gn = float(np.linalg.norm(problem.gradient(x)))
            ngn = math.nan
        tb.add_row(k + 1, gap, gn, ngn)
        if monitor is not None:
            reason = monitor(IterateView("x", k + 1, x, gap, gn, ngn))
            if reason is not None:
                return tb.build(reason, x, gap)
    return tb.build(TERMINAL_STEPS_EXHAUSTED, x, tb.f_gap[-1])


def _adaptive_coefficients(t: int, L0: float, adapt_L: bool):
    alpha_hat = 1.0 - 2.0 ** (-t)
    L_hat = L0 * 2.0**t if adapt_L else L0
    ratio = (1.0 - alpha_hat) / (1.0 + alpha_hat)
    h = math.sqrt(ratio) / (4.0 * L_hat)
    theta = ratio / (32.0 * L_hat)
    return alpha_hat, L_hat, h, theta


def adaptive_gd_run(problem: ObjectiveProblem, oracle: GradientOracle,
                    cfg: AdaptiveGDConfig, x0=None,
                    monitor: Optional[Monitor] = None) -> RunTrace:
    """Backtracking descent with doubling error-level guesses.

    Each outer step reuses one oracle query and retries the step with
    t = J, J+1, ... (alpha_hat = 1 - 2^-t; L_hat = L0 * 2^t when adapt_L)
    until exact function values satisfy the acceptance predicate

        f(x+) <= f(x) - theta ||estimate||^2 + 3 delta^2/(4 (1+alpha_hat)^2 L_hat).

    After acceptance J decreases by one (floored at 1), so the failed
    trial count telescopes: across N steps it stays within
    N + max(log2(1/(1-alpha)), log2(L/L0)) + 1 for conforming oracles.
    inner_loops[k] records failed trials while leaving row k.
    """
    x = _start_point(problem, x0)
    last_finite = x
    tb = _TraceBuilder(oracle, adaptive=True)
    J = 1
    delta_sq = cfg.delta * cfg.delta

    for k in range(cfg.steps + 1):
        f_val = _checked_value(problem, x, tb, k, last_finite)
        gap = f_val - problem.f_star
        last = k == cfg.steps
        if last and monitor is None:
            tb.add_row(k, gap, float(np.linalg.norm(problem.gradient(x))), math.nan)
            break
        est, exact = _checked_query(oracle, x, tb, k, last_finite)
        grad_norm = float(np.linalg.norm(exact))
        noisy_norm = float(np.linalg.norm(est))
        if monitor is not None:
            reason = monitor(IterateView("x", k, x, gap, grad_norm, noisy_norm))
            if reason is not None:
                tb.add_row(k, gap, grad_norm, noisy_norm)
                return tb.build(reason, x, gap)
        if last:
            tb.add_row(k, gap, grad_norm, noisy_norm)
            break

        est_sq = noisy_norm * noisy_norm
        fails = 0
        t = J
        while True:
            alpha_hat, L_hat, h, theta = _adaptive_coefficients(t, cfg.L0, cfg.adapt_L)
            x_next = x - h * est
            f_next = problem.value(x_next)
            allowed = f_val - theta * est_sq + 3.0 * delta_sq / (4.0 * (1.0 + alpha_hat) ** 2 * L_hat)
            # h == 0 means alpha_hat hit 1 in floats; such a "step" can
            # only pass vacuously, so count it as a failure to let
            # violating oracles reach the cap instead of freezing
            if h > 0.0 and math.isfinite(f_next) and f_next <= allowed:
                break
            fails += 1
            if fails >= INNER_LOOP_CAP:
                tb.add_row(k, gap, grad_norm, noisy_norm, inner=fails,
                           alpha_hat=alpha_hat, L_hat=L_hat)
                raise InnerLoopStallError(
                    f"step {k}: {fails} rejected trials (last alpha_hat={alpha_hat}, "
                    f"L_hat={L_hat}); oracle error fits no alpha < 1",
                    tb.build(_TERMINAL_STALLED, x, gap),
                )
            t += 1
        tb.add_row(k, gap, grad_norm, noisy_norm, inner=fails,
                   alpha_hat=alpha_hat, L_hat=L_hat)
        J = max(1, t - 1)
        last_finite = x
        x = x_next
    return tb.build(TERMINAL_STEPS_EXHAUSTED, x, tb.f_gap[-1])
