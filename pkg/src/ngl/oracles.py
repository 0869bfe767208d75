"""Gradient estimators with declared composite error levels.

Every oracle promises ||estimate - grad f(x)|| <= declared_alpha *
||grad f(x)|| + declared_delta and can certify each emitted estimate
against that promise (debug mode). Sources of error: ball-sampled or
adversarial synthetic noise, deterministic compression (top-k, sign,
grid), forward finite differences of noisy values, and reduced-precision
arithmetic for explicit quadratics.

Randomness is counter-based (Philox keyed by seed, counter = query
index), so any run is bit-reproducible from (seed, query index) and
queries never share stream state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import PrecisionSpec, as_vector, round_to_precision
from .problems import ObjectiveProblem

MODES = ("sampled_unbiased", "adversarial_opposing", "none")
CERT_SLACK = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    """Composite noise levels and generation mode for synthetic oracles."""

    alpha: float = 0.0
    delta: float = 0.0
    mode: str = "none"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.delta < 0.0 or not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _query_rng(seed: int, query_index: int) -> np.random.Generator:
    """Independent stream per query: Philox counter block = query index."""
    key = int(seed) & (2**64 - 1)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, query_index]))


def _uniform_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    if radius <= 0.0:
        return np.zeros(n)
    direction = rng.standard_normal(n)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return np.zeros(n)
    r = radius * rng.uniform() ** (1.0 / n)
    return (r / norm) * direction


class GradientOracle:
    """Base estimator: exact problem reference plus declared error levels.

    ``certify=True`` re-checks the composite bound on every query and
    raises on violation; tests and the verification harness use it.
    """

    def __init__(self, problem: ObjectiveProblem, declared_alpha: float, declared_delta: float,
                 certify: bool = False):
        if not 0.0 <= declared_alpha < 1.0:
            raise ValueError(f"declared_alpha must be in [0, 1), got {declared_alpha}")
        if declared_delta < 0.0:
            raise ValueError(f"declared_delta must be >= 0, got {declared_delta}")
        self.problem = problem
        self.declared_alpha = float(declared_alpha)
        self.declared_delta = float(declared_delta)
        self.certify = bool(certify)
        self.queries = 0

    def _estimate(self, x: np.ndarray, exact: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def estimate_with_exact(self, x) -> tuple[np.ndarray, np.ndarray]:
        """One query: returns (estimate, exact gradient).

        Exposing the exact gradient saves solvers a second gradient
        evaluation per step when recording traces.
        """
        x = as_vector(x, self.problem.dim)
        exact = self.problem.gradient(x)
        est = self._estimate(x, exact)
        self.queries += 1
        if self.certify:
            err = float(np.linalg.norm(est - exact))
            allowed = self.declared_alpha * float(np.linalg.norm(exact)) + self.declared_delta
            if err > allowed + CERT_SLACK:
                raise AssertionError(
                    f"composite bound violated: error {err} > {allowed} (query {self.queries})"
                )
        return est, exact

    def gradient_estimate(self, x) -> np.ndarray:
        return self.estimate_with_exact(x)[0]

    __call__ = gradient_estimate


class SyntheticNoiseOracle(GradientOracle):
    """Additive noise at declared levels, sampled or adversarial."""

    def __init__(self, problem: ObjectiveProblem, spec: NoiseSpec, certify: bool = False):
        alpha, delta = spec.alpha, spec.delta
        if spec.mode == "none":
            alpha, delta = 0.0, 0.0
        super().__init__(problem, alpha, delta, certify)
        self.spec = spec

    def sample_components(self, x, query_index: int | None = None):
        """Return (estimate, relative part, absolute part) at x."""
        x = as_vector(x, self.problem.dim)
        exact = self.problem.gradient(x)
        q = self.queries if query_index is None else query_index
        rel, absolute = self._components(exact, q)
        return exact + rel + absolute, rel, absolute

    def _components(self, exact: np.ndarray, query_index: int):
        n = exact.shape[0]
        gnorm = float(np.linalg.norm(exact))
        mode = self.spec.mode
        if mode == "none" or (self.declared_alpha == 0.0 and self.declared_delta == 0.0):
            return np.zeros(n), np.zeros(n)
        if mode == "adversarial_opposing":
            rel = -self.declared_alpha * exact
            absolute = np.zeros(n) if gnorm == 0.0 else -self.declared_delta / gnorm * exact
            return rel, absolute
        rng = _query_rng(self.spec.seed, query_index)
        rel = _uniform_ball(rng, n, self.declared_alpha * gnorm)
        absolute = _uniform_ball(rng, n, self.declared_delta)
        return rel, absolute

    def _estimate(self, x: np.ndarray, exact: np.ndarray) -> np.ndarray:
        rel, absolute = self._components(exact, self.queries)
        return exact + rel + absolute


def top_k_compress(g, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries (ties: lowest index), zero the rest."""
    g = as_vector(g)
    n = g.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n={n}, got k={k}")
    if k == n:
        return g.copy()
    # stable sort on -|g| keeps the earliest index first among ties
    order = np.argsort(-np.abs(g), kind="stable")
    out = np.zeros_like(g)
    keep = order[:k]
    out[keep] = g[keep]
    return out


def sign_compress(g) -> np.ndarray:
    """Mean magnitude times the sign pattern; sign(0) = 0."""
    g = as_vector(g)
    return float(np.mean(np.abs(g))) * np.sign(g)


def sparsify_grid(g, m: int) -> np.ndarray:
    """Round each coordinate to the nearest s/m grid point, ties toward even s."""
    g = as_vector(g)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return np.rint(g * m) / m  # rint ties to even


class CompressedGradientOracle(GradientOracle):
    """Deterministic compression of the exact gradient.

    kind: "top_k" (param k), "sign" (no param), "grid" (param m).
    Declared levels are the worst-case compression errors.
    """

    def __init__(self, problem: ObjectiveProblem, kind: str, param: int | None = None,
                 certify: bool = False):
        n = problem.dim
        if kind == "top_k":
            if param is None:
                raise ValueError("top_k compression needs k")
            alpha, delta = math.sqrt(max(0.0, 1.0 - param / n)), 0.0
            if not 1 <= param <= n:
                raise ValueError(f"need 1 <= k <= n={n}, got k={param}")
        elif kind == "sign":
            alpha, delta = math.sqrt(1.0 - 1.0 / n), 0.0
        elif kind == "grid":
            if param is None or param < 1:
                raise ValueError("grid sparsification needs m >= 1")
            alpha, delta = 0.0, math.sqrt(n) / (2.0 * param)
        else:
            raise ValueError(f"unknown compressor kind {kind!r}")
        super().__init__(problem, alpha, delta, certify)
        self.kind = kind
        self.param = param

    def _estimate(self, x: np.ndarray, exact: np.ndarray) -> np.ndarray:
        if self.kind == "top_k":
            return top_k_compress(exact, self.param)
        if self.kind == "sign":
            return sign_compress(exact)
        return sparsify_grid(exact, self.param)


def finite_difference_gradient(problem: ObjectiveProblem, x, h: float, value_noise: float = 0.0,
                               seed: int = 0, query_index: int = 0) -> np.ndarray:
    """Forward differences of (optionally perturbed) values along the basis.

    Each of the n+1 evaluations is shifted by an independent uniform draw
    in [-value_noise, value_noise]. Worst-case error:
    sqrt(n) * (L*h/2 + 2*value_noise/h).
    """
    x = as_vector(x, problem.dim)
    if h <= 0.0:
        raise ValueError(f"h must be > 0, got {h}")
    if value_noise < 0.0:
        raise ValueError(f"value_noise must be >= 0, got {value_noise}")
    n = problem.dim
    if value_noise > 0.0:
        rng = _query_rng(seed, query_index)
        shifts = rng.uniform(-value_noise, value_noise, size=n + 1)
    else:
        shifts = np.zeros(n + 1)
    f0 = problem.value(x) + shifts[0]
    g = np.empty(n)
    for j in range(n):
        step = x.copy()
        step[j] += h
        g[j] = (problem.value(step) + shifts[j + 1] - f0) / h
    return g


class FiniteDifferenceOracle(GradientOracle):
    """Gradient from forward differences of noisy values; absolute error only."""

    def __init__(self, problem: ObjectiveProblem, h: float, value_noise: float = 0.0,
                 seed: int = 0, certify: bool = False):
        if h <= 0.0:
            raise ValueError(f"h must be > 0, got {h}")
        if value_noise < 0.0:
            raise ValueError(f"value_noise must be >= 0, got {value_noise}")
        delta = math.sqrt(problem.dim) * (problem.L * h / 2.0 + 2.0 * value_noise / h)
        super().__init__(problem, 0.0, delta, certify)
        self.h = float(h)
        self.value_noise = float(value_noise)
        self.seed = int(seed)

    def _estimate(self, x: np.ndarray, exact: np.ndarray) -> np.ndarray:
        return finite_difference_gradient(
            self.problem, x, self.h, self.value_noise, self.seed, self.queries
        )


def _compensated_sum_at_precision(values, spec: PrecisionSpec) -> float:
    """Neumaier-compensated sum with every elementary op rounded to p bits."""

    def rnd(v: float) -> float:
        return round_to_precision(v, spec)

    total = 0.0
    carry = 0.0
    for v in values:
        t = rnd(total + v)
        if abs(total) >= abs(v):
            carry = rnd(carry + rnd(rnd(total - t) + v))
        else:
            carry = rnd(carry + rnd(rnd(v - t) + total))
        total = t
    return rnd(total + carry)


def fp_quadratic_gradient(A, b, x, spec: PrecisionSpec) -> np.ndarray:
    """Ax + b in simulated p-bit arithmetic with compensated row sums.

    Inputs are stored (rounded) at p bits; every product and every
    accumulation op rounds to p bits. Error stays within the
    C*(eps + n*eps^2)*(|b_i| + sum_j |A_ij x_j|) envelope, C <= 8.
    """
    A = np.asarray(A, dtype=np.float64)
    x = as_vector(x)
    b = as_vector(b)
    n = x.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}, x {x.shape}")
    Ap = round_to_precision(A, spec)
    xp = round_to_precision(x, spec)
    bp = round_to_precision(b, spec)
    out = np.empty(n)
    for i in range(n):
        products = round_to_precision(Ap[i] * xp, spec)
        out[i] = _compensated_sum_at_precision([bp[i], *products], spec)
    return out


class FloatingPointQuadraticOracle(GradientOracle):
    """Reduced-precision gradient of an explicit quadratic problem.

    The declared absolute level covers every query with ||x|| <=
    domain_radius; certification additionally checks the sharp
    x-dependent per-row envelope on each query.
    """

    ERROR_CONSTANT = 8.0

    def __init__(self, problem, spec: PrecisionSpec, domain_radius: float = 1.0,
                 certify: bool = False):
        if not hasattr(problem, "A") or not hasattr(problem, "b"):
            raise ValueError("reduced-precision oracle needs an explicit quadratic problem")
        if domain_radius <= 0.0:
            raise ValueError("domain_radius must be > 0")
        n = problem.dim
        eps = spec.eps
        # |x_j| <= ||x||_2 <= radius, so |b_i| + sum_j |A_ij||x_j| is bounded rowwise
        per_row = np.abs(problem.b) + domain_radius * np.abs(problem.A).sum(axis=1)
        delta = self.ERROR_CONSTANT * (eps + n * eps**2) * float(np.linalg.norm(per_row))
        super().__init__(problem, 0.0, delta, certify=certify)
        self.precision = spec
        self.domain_radius = float(domain_radius)
        self._certify_fp = bool(certify)

    def row_error_bound(self, x) -> float:
        """l2 bound from the per-row envelope at this x."""
        x = as_vector(x, self.problem.dim)
        n = self.problem.dim
        eps = self.precision.eps
        per_row = np.abs(self.problem.b) + np.abs(self.problem.A) @ np.abs(x)
        return self.ERROR_CONSTANT * (eps + n * eps**2) * float(np.linalg.norm(per_row))

    def _estimate(self, x: np.ndarray, exact: np.ndarray) -> np.ndarray:
        est = fp_quadratic_gradient(self.problem.A, self.problem.b, x, self.precision)
        if self._certify_fp:
            err = float(np.linalg.norm(est - exact))
            allowed = self.row_error_bound(x)
            if err > allowed + CERT_SLACK:
                raise AssertionError(f"precision bound violated: {err} > {allowed}")
        return est


def noisy_gradient(oracle: GradientOracle, x) -> np.ndarray:
    """Query an oracle (functional form of oracle.gradient_estimate)."""
    return oracle.gradient_estimate(x)


def certification_report(estimate, exact, alpha: float, delta: float) -> dict:
    """Slacks of the composite bound and its derived sandwich inequalities.

    Every entry is (non-negative means satisfied): value = lhs-to-rhs slack.
    Derived bounds: norm sandwich both ways, squared-norm sandwich both
    ways, and the alignment (cosine) bound when delta = 0.
    """
    est = as_vector(estimate)
    g = as_vector(exact)
    ge = float(np.linalg.norm(est))
    gn = float(np.linalg.norm(g))
    err = float(np.linalg.norm(est - g))
    report = {
        "composite": alpha * gn + delta - err,
        "norm_upper": (1.0 + alpha) * gn + delta - ge,
        "norm_lower": ge - ((1.0 - alpha) * gn - delta),
        "exact_norm_upper": (ge + delta) / (1.0 - alpha) - gn,
        "exact_norm_lower": gn - (ge - delta) / (1.0 + alpha),
        "sq_upper": 2.0 * (1.0 + alpha) ** 2 * gn**2 + 2.0 * delta**2 - ge**2,
        "sq_lower": ge**2 - (0.5 * (1.0 - alpha) ** 2 * gn**2 - delta**2),
        "exact_sq_upper": 2.0 / (1.0 - alpha) ** 2 * ge**2 + 2.0 / (1.0 - alpha) ** 2 * delta**2 - gn**2,
        "exact_sq_lower": gn**2 - (ge**2 / (2.0 * (1.0 + alpha) ** 2) - delta**2 / (1.0 + alpha) ** 2),
    }
    if delta == 0.0:
        report["alignment"] = float(est @ g) - math.sqrt(max(0.0, 1.0 - alpha**2)) * ge * gn
    return report
