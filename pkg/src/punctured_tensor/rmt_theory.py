"""Limiting-theory solvers: Stieltjes fixed point, spectral density, spike
equations and phase-transition thresholds.

The coupled fixed point reads, for each mode l,

    eps * m_l(z) * (mbar(z) - m_l(z)) + z * m_l(z) + c_l = 0,

with mbar = m1 + m2 + m3. It is solved by a damped iteration
m_l <- -c_l / (z + eps * (mbar - m_l)); the damping tames oscillation near
the support edge. The spike equation couples mbar on the real axis with the
alignment limits q_l^2 = 1 - eps * m_l(sigma)^2 / c_l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class FixedPointError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class OutsideSupportError(RuntimeError):
    """The real-axis branch does not exist here (point inside the support)."""


@dataclass(frozen=True)
class ModelParams:
    c1: float
    c2: float
    c3: float
    epsilon: float
    beta: float | None = None
    d: int = 3

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("mode ratios must be positive")
        if abs(self.c1 + self.c2 + self.c3 - 1.0) > 1e-12:
            raise ValueError("mode ratios must sum to 1")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def ratios(self):
        return (self.c1, self.c2, self.c3)


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    m1: complex
    m2: complex
    m3: complex
    residual: float

    @property
    def mbar(self) -> complex:
        return self.m1 + self.m2 + self.m3

    @property
    def values(self):
        return (self.m1, self.m2, self.m3)


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    eta: float

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True)
class SpikePrediction:
    sigma_inf: float
    q1: float
    q2: float
    q3: float
    m_at_sigma: tuple | None
    feasible: bool
    residual: float = 0.0

    @property
    def q(self):
        return (self.q1, self.q2, self.q3)


INFEASIBLE = SpikePrediction(math.nan, 0.0, 0.0, 0.0, None, False)


def _newton_polish(z, c, eps, m, tol):
    """Newton steps on the coupled system from a warm start.

    Returns the refined triple or None when Newton strays (diverges or
    leaves the Herglotz branch sign(Im m) == sign(Im z))."""
    m = np.asarray(m, dtype=complex)
    c_arr = np.asarray(c, dtype=float)
    sign = 1.0 if z.imag > 0 else -1.0
    for _ in range(60):
        mbar = m.sum()
        G = eps * m * (mbar - m) + z * m + c_arr
        J = eps * np.outer(m, np.ones(3))
        J[np.diag_indices(3)] = eps * (mbar - m) + z
        try:
            step = np.linalg.solve(J, G)
        except np.linalg.LinAlgError:
            return None
        m = m - step
        if not np.all(np.isfinite(m.view(float))) or np.max(np.abs(m)) > 1e14:
            return None
        if np.max(np.abs(step)) < 0.1 * tol:
            break
    if np.any(sign * m.imag < 0):
        return None
    mbar = m.sum()
    if np.max(np.abs(eps * m * (mbar - m) + z * m + c_arr)) > 1e-11:
        return None
    return tuple(m)


def _fixed_point(z, c, eps, init, damping, tol, max_iter):
    """Damped scalar iteration; returns (m1, m2, m3, residual).

    Near an atom of the limit the plain iteration contracts at a rate
    1 - O(|Im z|^(1/2)); a periodic Newton polish (branch-guarded, accepted
    only when it lands on the Herglotz solution) removes that slowdown.
    """
    c1, c2, c3 = c
    if init is None:
        m1, m2, m3 = -c1 / z, -c2 / z, -c3 / z
    else:
        m1, m2, m3 = init
    g = damping
    h = 1.0 - damping
    converged = False
    for it in range(1, max_iter + 1):
        mbar = m1 + m2 + m3
        try:
            n1 = -c1 / (z + eps * (mbar - m1))
            n2 = -c2 / (z + eps * (mbar - m2))
            n3 = -c3 / (z + eps * (mbar - m3))
        except ZeroDivisionError:
            raise FixedPointError(f"division by zero in fixed point at z={z}")
        n1 = h * m1 + g * n1
        n2 = h * m2 + g * n2
        n3 = h * m3 + g * n3
        delta = max(abs(n1 - m1), abs(n2 - m2), abs(n3 - m3))
        m1, m2, m3 = n1, n2, n3
        if not (abs(m1) < 1e12):
            raise FixedPointError(f"iteration diverged at z={z}")
        if delta < tol:
            converged = True
            break
        if it % 200 == 0:
            polished = _newton_polish(z, c, eps, (m1, m2, m3), tol)
            if polished is not None:
                m1, m2, m3 = polished
                converged = True
                break
    if not converged:
        raise FixedPointError(
            f"no fixed-point convergence at z={z}", residual=delta
        )
    mbar = m1 + m2 + m3
    residual = max(
        abs(eps * m1 * (mbar - m1) + z * m1 + c1),
        abs(eps * m2 * (mbar - m2) + z * m2 + c2),
        abs(eps * m3 * (mbar - m3) + z * m3 + c3),
    )
    return m1, m2, m3, residual


def solve_stieltjes(
    z: complex,
    p: ModelParams,
    init=None,
    damping: float = 0.5,
    tol: float = 1e-13,
    max_iter: int = 100_000,
) -> StieltjesSolution:
    """Solve the coupled fixed point at a complex point z (Im z != 0)."""
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("use real_branch_stieltjes on the real axis")
    if init is None and abs(z.imag) < 0.1:
        # Cold starts at -c/z are far off when |Im z| is tiny (near an atom
        # of the limit the iteration then relaxes over ~1/|Im z| steps).
        # Continuation: solve high above the axis first and halve Im z,
        # warm-starting each stage.
        eta = 1.0 if z.imag > 0 else -1.0
        while abs(eta) > abs(z.imag) * 1.999:
            stage = complex(z.real, eta)
            init = _fixed_point(
                stage, p.ratios, p.epsilon, init, damping, tol, max_iter
            )[:3]
            eta *= 0.5
    m1, m2, m3, res = _fixed_point(
        z, p.ratios, p.epsilon, init, damping, tol, max_iter
    )
    return StieltjesSolution(z, m1, m2, m3, res)


# --- Real-axis branch -------------------------------------------------------
#
# Fixing m1 = t < 0, the difference of the mode-l equation and the mode-1
# equation eliminates the cross terms, leaving decoupled quadratics for m2
# and m3 and a closed form for the abscissa:
#
#     eps*m_l^2 - (eps*t - c1/t)*m_l - c_l = 0,   x = -c1/t - eps*(m2 + m3).
#
# The decaying branch (all m_l < 0, m_l ~ -c_l/x at infinity) is the minus
# root. x(t) is smooth with a unique interior minimum: the support edge.
# Parametrizing by t removes the square-root singularity at the edge, so the
# edge and the branch values carry machine precision.


def _branch_at(t: float, c, eps: float):
    """(m1, m2, m3, x) on the decaying real branch parametrized by m1 = t < 0."""
    c1, c2, c3 = c
    A = eps * t - c1 / t
    m2 = (A - math.sqrt(A * A + 4.0 * eps * c2)) / (2.0 * eps)
    m3 = (A - math.sqrt(A * A + 4.0 * eps * c3)) / (2.0 * eps)
    x = -c1 / t - eps * (m2 + m3)
    return t, m2, m3, x


_EDGE_CACHE: dict = {}


def _edge_point(p: ModelParams):
    """(edge abscissa, branch parameter t at the edge), cached."""
    key = (p.c1, p.c2, p.c3, p.epsilon)
    if key in _EDGE_CACHE:
        return _EDGE_CACHE[key]
    c, eps = p.ratios, p.epsilon

    def x_of(t):
        return _branch_at(t, c, eps)[3]

    # Coarse geometric scan for a bracket around the minimum of x(t).
    scale = math.sqrt(p.c1 / eps)
    ts = -scale * np.logspace(-4, 3, 400)
    xs = [x_of(float(t)) for t in ts]
    i = int(np.argmin(xs))
    a, b = float(ts[min(i + 1, len(ts) - 1)]), float(ts[max(i - 1, 0)])
    # Golden-section refinement; the minimum is quadratic, so the edge value
    # is accurate to machine precision long before t is.
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = x_of(x1), x_of(x2)
    for _ in range(120):
        if b - a < 1e-13 * max(1.0, abs(a)):
            break
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = x_of(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = x_of(x2)
    t_edge = 0.5 * (a + b)
    result = (x_of(t_edge), t_edge)
    _EDGE_CACHE[key] = result
    return result


def support_edge(p: ModelParams) -> float:
    """Right edge of the limiting support (beta plays no role)."""
    return _edge_point(p)[0]


def _branch_solution(p: ModelParams, t: float) -> StieltjesSolution:
    c1, c2, c3 = p.ratios
    eps = p.epsilon
    m1, m2, m3, x = _branch_at(t, p.ratios, eps)
    mbar = m1 + m2 + m3
    residual = max(
        abs(eps * m1 * (mbar - m1) + x * m1 + c1),
        abs(eps * m2 * (mbar - m2) + x * m2 + c2),
        abs(eps * m3 * (mbar - m3) + x * m3 + c3),
    )
    return StieltjesSolution(x, m1, m2, m3, residual)


def real_branch_stieltjes(x: float, p: ModelParams) -> StieltjesSolution:
    """Decaying real-axis branch at x, strictly right of the support edge.

    Raises OutsideSupportError for x at or inside the support.
    """
    x = float(x)
    if x <= 0:
        raise ValueError("the real branch is evaluated right of the support, x > 0")
    edge, t_edge = _edge_point(p)
    if x < edge:
        raise OutsideSupportError(f"x={x} lies inside the support (edge {edge})")
    # x(t) increases from the edge value to +infinity as t rises to 0-.
    lo, hi = t_edge, -1e-300
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _branch_at(mid, p.ratios, p.epsilon)[3] < x:
            lo = mid
        else:
            hi = mid
        if hi - lo <= abs(lo) * 1e-16:
            break
    return _branch_solution(p, 0.5 * (lo + hi))


def limiting_density(
    p: ModelParams,
    x_min: float,
    x_max: float,
    n_points: int,
    eta: float = 1e-6,
) -> DensityCurve:
    """Density Im mbar(x + i eta) / pi on a uniform grid, warm-started."""
    if not x_min < x_max:
        raise ValueError("x_min must be smaller than x_max")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    grid = np.linspace(x_min, x_max, n_points)
    density = np.empty(n_points)
    init = None
    for idx, x in enumerate(grid):
        try:
            sol = solve_stieltjes(complex(x, eta), p, init=init)
        except FixedPointError as exc:
            raise FixedPointError(
                f"density evaluation failed at grid point x={x}"
            ) from exc
        init = sol.values
        density[idx] = sol.mbar.imag / math.pi
    return DensityCurve(grid, density, eta)


def _qs(sol: StieltjesSolution, p: ModelParams):
    return tuple(
        math.sqrt(max(0.0, 1.0 - p.epsilon * (m.real ** 2) / c))
        for m, c in zip(sol.values, p.ratios)
    )


def _spike_objective(sigma, p, beta):
    """F(sigma) = sigma + eps*mbar - eps*beta*q1*q2*q3 and the m values."""
    sol = real_branch_stieltjes(sigma, p)
    q1, q2, q3 = _qs(sol, p)
    F = sigma + p.epsilon * sol.mbar.real - p.epsilon * beta * q1 * q2 * q3
    return F, sol


def solve_spike(p: ModelParams) -> SpikePrediction:
    """Largest real root of the spike equation right of the support edge.

    Returns the infeasible marker (all q = 0) when no root exists, i.e.
    beta is below the statistical threshold. Feasibility is decided at the
    support edge itself: the root leaves the bulk through the edge, so F at
    the edge is negative exactly when a root exists to its right (a guarded
    interior-dip search covers any additional roots).
    """
    if p.beta is None:
        raise ValueError("solve_spike needs beta set on the parameters")
    beta = p.beta
    if beta == 0.0:
        return INFEASIBLE
    eps = p.epsilon
    edge = support_edge(p)
    hi = eps * beta + 3.0
    # Make sure F is positive at the upper end (it tends to +infinity).
    F_hi, _ = _spike_objective(hi, p, beta)
    while F_hi <= 0.0:
        hi *= 2.0
        if hi > 1e9:
            raise FixedPointError("spike bracket expansion failed")
        F_hi, _ = _spike_objective(hi, p, beta)

    F_edge, _ = _spike_objective(edge, p, beta)
    n_scan = 256
    xs = np.linspace(hi, edge, n_scan)
    Fs = np.array([_spike_objective(float(x), p, beta)[0] for x in xs])

    neg = np.where(Fs < 0.0)[0]
    if neg.size:
        i = int(neg[0])  # xs is descending: first negative = rightmost root side
        s_neg, s_pos = float(xs[i]), float(xs[i - 1])
    elif F_edge < 0.0:
        s_neg, s_pos = edge, float(xs[-2])
    else:
        # No negative value anywhere on the grid or at the edge; scan for a
        # dip narrower than the grid step before declaring infeasibility.
        i = int(np.argmin(Fs))
        a = float(xs[min(i + 1, xs.size - 1)])
        b = float(xs[max(i - 1, 0)])
        s_neg = None
        for _ in range(200):
            if b - a < 1e-13:
                break
            x1 = a + (b - a) / 3.0
            x2 = b - (b - a) / 3.0
            F1, _ = _spike_objective(x1, p, beta)
            F2, _ = _spike_objective(x2, p, beta)
            if min(F1, F2) < 0.0:
                s_neg = x1 if F1 < F2 else x2
                break
            if F1 < F2:
                b = x2
            else:
                a = x1
        if s_neg is None:
            return INFEASIBLE
        s_pos = hi

    # Bisect the rightmost sign change down to 1e-12.
    a, b = s_neg, s_pos  # F(a) < 0 <= F(b), a < b
    while b - a > 1e-12:
        mid = 0.5 * (a + b)
        F_mid, _ = _spike_objective(mid, p, beta)
        if F_mid < 0.0:
            a = mid
        else:
            b = mid
    sigma = 0.5 * (a + b)
    F_val, sol = _spike_objective(sigma, p, beta)
    q1, q2, q3 = _qs(sol, p)
    return SpikePrediction(
        sigma,
        q1,
        q2,
        q3,
        tuple(m.real for m in sol.values),
        True,
        residual=abs(F_val),
    )


def beta_threshold(p: ModelParams, tol: float = 1e-9) -> float:
    """Smallest beta for which the spike equation has a root, by bisection."""
    lo, hi = 1e-3, 1e3
    if solve_spike(replace(p, beta=lo)).feasible:
        return lo
    if not solve_spike(replace(p, beta=hi)).feasible:
        raise FixedPointError("beta threshold bracket failure")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if solve_spike(replace(p, beta=mid)).feasible:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def beta_threshold_cubic(epsilon: float, d: int = 3) -> float:
    """Closed-form statistical threshold in the equal-ratio setting."""
    if d < 3:
        raise ValueError("the closed form requires tensor order d >= 3")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    return math.sqrt((d - 1) / (epsilon * d)) * ((d - 1) / (d - 2)) ** ((d - 2) / 2.0)


def threshold_alignment_cubic(d: int = 3) -> float:
    """Alignment limit right after the transition; independent of epsilon."""
    if d < 3:
        raise ValueError("the closed form requires tensor order d >= 3")
    return math.sqrt((d - 2) / (d - 1))


def epsilon_threshold(beta: float, c, tol: float = 1e-6) -> float | None:
    """Smallest epsilon in (0, 1] with a feasible spike; None if even
    epsilon = 1 is below the transition."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    c1, c2, c3 = c

    def feasible(eps):
        return solve_spike(ModelParams(c1, c2, c3, eps, beta=beta)).feasible

    if not feasible(1.0):
        return None
    lo, hi = 1e-6, 1.0
    if feasible(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def universality_map(p: ModelParams) -> ModelParams:
    """Equivalent unpunctured parameters: epsilon' = 1, beta' = sqrt(eps)*beta."""
    beta = None if p.beta is None else math.sqrt(p.epsilon) * p.beta
    return ModelParams(p.c1, p.c2, p.c3, 1.0, beta=beta, d=p.d)
