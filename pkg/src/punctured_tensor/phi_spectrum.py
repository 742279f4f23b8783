"""The associated symmetric block matrix Phi(u, v, w) and its spectral checks.

Phi has zero diagonal blocks and off-diagonal blocks given by the three
one-mode contractions of the masked tensor on the critical-point factors.
Its spectrum carries the structural eigenpairs (2 sigma, -sigma, -sigma) and
the resolvent (Phi - sigma I)^-1 predicts how the factors react to a
perturbation of a single noise entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rank_one import CriticalPoint
from .tensor_core import (
    DimensionMismatchError,
    RngSeed,
    Shape3,
    SignalTriple,
    Tensor3,
    contract_one,
)


class SingularResolventError(RuntimeError):
    """sigma is (numerically) an eigenvalue of Phi; the resolvent blows up."""


@dataclass(frozen=True)
class PhiMatrix:
    shape: Shape3
    matrix: np.ndarray  # (N, N), symmetric, zero diagonal blocks

    @property
    def block_slices(self):
        n1, n2, n3 = self.shape.dims
        return (slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, n1 + n2 + n3))


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray  # sorted descending
    eigenvectors: np.ndarray | None  # columns, matching eigenvalue order
    zero_count: int
    zero_threshold: float


@dataclass(frozen=True)
class ESDHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray  # raw integer counts per bin
    density: np.ndarray  # normalized so the total area is 1
    excluded_zero_count: int


@dataclass(frozen=True)
class CheckItem:
    name: str
    passed: bool
    residual: float
    tolerance: float


@dataclass(frozen=True)
class StructuralReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def _check_factors(shape: Shape3, u, v, w):
    u, v, w = (np.asarray(f, dtype=np.float64) for f in (u, v, w))
    if u.shape != (shape.n1,) or v.shape != (shape.n2,) or w.shape != (shape.n3,):
        raise DimensionMismatchError("factor lengths do not match the tensor shape")
    return u, v, w


def _assemble(shape: Shape3, b12, b13, b23) -> PhiMatrix:
    n1, n2, n3 = shape.dims
    N = shape.N
    phi = np.zeros((N, N))
    s1, s2, s3 = slice(0, n1), slice(n1, n1 + n2), slice(n1 + n2, N)
    phi[s1, s2] = b12
    phi[s1, s3] = b13
    phi[s2, s3] = b23
    phi[s2, s1] = b12.T
    phi[s3, s1] = b13.T
    phi[s3, s2] = b23.T
    return PhiMatrix(shape, phi)


def build_phi(tm: Tensor3, u, v, w) -> PhiMatrix:
    """Assemble Phi from the already-masked tensor and the three factors."""
    u, v, w = _check_factors(tm.shape, u, v, w)
    b12 = contract_one(tm, 3, w)
    b13 = contract_one(tm, 2, v)
    b23 = contract_one(tm, 1, u)
    return _assemble(tm.shape, b12, b13, b23)


def build_phi0_streamed(
    shape: Shape3, epsilon: float, u, v, w, rng: RngSeed
) -> PhiMatrix:
    """Phi of a pure-noise masked tensor, built slab by slab along mode 3.

    Never materializes the n1 x n2 x n3 array, so large-N spectra fit in
    memory. Draws are made per mode-3 slab (noise then mask), which is a
    different stream layout than generate_spiked + sample_mask; the two are
    equal in distribution, not bit-for-bit.
    """
    u, v, w = _check_factors(shape, u, v, w)
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    n1, n2, n3 = shape.dims
    gen = rng.generator()
    scale = 1.0 / np.sqrt(shape.N)
    b12 = np.zeros((n1, n2))
    b13 = np.zeros((n1, n3))
    b23 = np.zeros((n2, n3))
    for k in range(n3):
        slab = gen.standard_normal((n1, n2))
        slab *= scale
        slab *= gen.random((n1, n2)) < epsilon
        b12 += w[k] * slab
        b13[:, k] = slab @ v
        b23[:, k] = slab.T @ u
    return _assemble(shape, b12, b13, b23)


def eigen_spectrum(
    phi: PhiMatrix, want_vectors: bool = False, zero_tol: float = 1e-10
) -> SpectrumResult:
    """Full symmetric eigendecomposition, eigenvalues sorted descending.

    zero_tol is relative: eigenvalues below zero_tol * max|lambda| count as
    zero (the degenerate subspace of the block structure).
    """
    if want_vectors:
        vals, vecs = np.linalg.eigh(phi.matrix)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    else:
        vals = np.linalg.eigvalsh(phi.matrix)[::-1]
        vecs = None
    scale = float(np.max(np.abs(vals))) if vals.size else 1.0
    threshold = zero_tol * max(scale, 1e-300)
    zero_count = int(np.sum(np.abs(vals) < threshold))
    return SpectrumResult(vals, vecs, zero_count, threshold)


def check_structural_eigenpairs(
    phi: PhiMatrix, cp: CriticalPoint, tol: float = 1e-8
) -> StructuralReport:
    """Verify the three structural facts about the spectrum of Phi.

    (1) [u; v; w] is an eigenvector with eigenvalue 2 sigma;
    (2) [u; -v; 0] and [u; 0; -w] are mapped to -sigma times themselves;
    (3) every eigenvalue is 2 sigma or lies in [-sigma, sigma], up to tol.
    """
    M = phi.matrix
    sigma = cp.sigma
    u, v, w = cp.u, cp.v, cp.w
    z2, z3 = np.zeros_like(v), np.zeros_like(w)

    s = np.concatenate([u, v, w])
    r1 = float(np.linalg.norm(M @ s - 2.0 * sigma * s))

    e1 = np.concatenate([u, -v, z3])
    e2 = np.concatenate([u, z2, -w])
    r2 = max(
        float(np.linalg.norm(M @ e1 + sigma * e1)),
        float(np.linalg.norm(M @ e2 + sigma * e2)),
    )

    vals = np.linalg.eigvalsh(M)
    is_top = np.abs(vals - 2.0 * sigma) <= tol * max(1.0, 2.0 * sigma)
    excess = np.abs(vals) - sigma
    excess[is_top] = -np.inf
    r3 = float(max(0.0, np.max(excess)))

    checks = (
        CheckItem("eigenpair_2sigma", r1 <= tol, r1, tol),
        CheckItem("eigenspace_minus_sigma", r2 <= tol, r2, tol),
        CheckItem("bulk_bounded_by_sigma", r3 <= tol, r3, tol),
    )
    return StructuralReport(checks)


def spike_core(signal: SignalTriple, cp: CriticalPoint):
    """Block-diagonal embedding V of (x, y, z) and the 3x3 core S."""
    n1, n2, n3 = signal.x.size, signal.y.size, signal.z.size
    N = n1 + n2 + n3
    V = np.zeros((N, 3))
    V[:n1, 0] = signal.x
    V[n1 : n1 + n2, 1] = signal.y
    V[n1 + n2 :, 2] = signal.z
    a1 = float(signal.x @ cp.u)
    a2 = float(signal.y @ cp.v)
    a3 = float(signal.z @ cp.w)
    S = np.array([[0.0, a3, a2], [a3, 0.0, a1], [a2, a1, 0.0]])
    return V, S


def spike_decomposition_residual(
    phi: PhiMatrix,
    signal: SignalTriple,
    cp: CriticalPoint,
    phi0: PhiMatrix,
    epsilon: float,
    power_iters: int = 50,
) -> float:
    """Operator-norm estimate of E = Phi - eps*beta*V S V^T - Phi0.

    The norm is estimated by power iteration on E^T E with a fixed seed;
    only the order of magnitude matters (the claim is ||E|| -> 0).
    """
    if phi.shape != phi0.shape:
        raise DimensionMismatchError("phi and phi0 have different shapes")
    V, S = spike_core(signal, cp)
    E = phi.matrix - epsilon * signal.beta * (V @ S @ V.T) - phi0.matrix
    gen = np.random.default_rng(0)
    b = gen.standard_normal(E.shape[0])
    b /= np.linalg.norm(b)
    for _ in range(power_iters):
        b = E.T @ (E @ b)
        n = np.linalg.norm(b)
        if n == 0.0:
            return 0.0
        b /= n
    return float(np.linalg.norm(E @ b))


def resolvent_solve(phi: PhiMatrix, sigma: float, rhs, gap_tol: float = 1e-8):
    """Solve (Phi - sigma I) q = rhs by a direct dense solve.

    Refuses when sigma sits within gap_tol of an eigenvalue.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != phi.shape.N:
        raise DimensionMismatchError("right-hand side length does not match N")
    vals = np.linalg.eigvalsh(phi.matrix)
    gap = float(np.min(np.abs(vals - sigma)))
    if gap <= gap_tol:
        raise SingularResolventError(
            f"sigma={sigma} is within {gap:.3e} of an eigenvalue"
        )
    N = phi.shape.N
    return np.linalg.solve(phi.matrix - sigma * np.eye(N), rhs)


def predict_factor_derivative(
    phi: PhiMatrix, cp: CriticalPoint, entry: tuple, mask_bit: int
) -> np.ndarray:
    """Predicted derivative of [u; v; w] w.r.t. the standard-normal noise
    entry (i, j, k), via the resolvent at sigma.

    A masked entry (mask_bit = 0) has no influence: the derivative is zero.
    """
    i, j, k = entry
    n1, n2, n3 = phi.shape.dims
    if not (0 <= i < n1 and 0 <= j < n2 and 0 <= k < n3):
        raise DimensionMismatchError(f"entry {entry} outside {phi.shape.dims}")
    N = phi.shape.N
    if mask_bit == 0:
        return np.zeros(N)
    u, v, w = cp.u, cp.v, cp.w
    r = np.empty(N)
    r1 = -u[i] * u
    r1[i] += 1.0
    r2 = -v[j] * v
    r2[j] += 1.0
    r3 = -w[k] * w
    r3[k] += 1.0
    r[:n1] = v[j] * w[k] * r1
    r[n1 : n1 + n2] = u[i] * w[k] * r2
    r[n1 + n2 :] = u[i] * v[j] * r3
    q = resolvent_solve(phi, cp.sigma, r)
    return -(mask_bit / np.sqrt(N)) * q


def esd_histogram(
    spec: SpectrumResult, bins: int = 60, exclude_zeros: bool = False
) -> ESDHistogram:
    """Density-normalized histogram of the eigenvalues."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    vals = spec.eigenvalues
    excluded = 0
    if exclude_zeros:
        keep = np.abs(vals) >= spec.zero_threshold
        excluded = int(vals.size - np.sum(keep))
        vals = vals[keep]
    counts, edges = np.histogram(vals, bins=bins)
    widths = np.diff(edges)
    total = counts.sum()
    density = counts / (total * widths) if total else np.zeros_like(widths)
    return ESDHistogram(edges, counts, density, excluded)
