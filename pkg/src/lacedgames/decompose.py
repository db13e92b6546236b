"""Virtual decomposition of the collective control.

At a base phase point where zero pure control maps to zero interactive
control, the reconstructed feedback map is differentiated numerically; its
eigencoordinates give a linear change of control variables after which each
virtual player's control depends only on that player's pure control, to first
order.  The residual nonlinear cross-coupling is measured rather than removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import AnalysisError, ConfigError
from .lacing import LacingIntegralSet, SingularJacobianError, reconstruct_feedback

__all__ = [
    "DecompositionMap",
    "StationarityError",
    "ComplexEigenvaluesError",
    "DefectiveJacobianError",
    "feedback_jacobian_at_zero",
    "virtual_decompose",
    "coupling_residual",
]

STATIONARITY_TOL = 1e-10
JACOBIAN_FD_STEP = 1e-6
INVERSE_TOL = 1e-12
DIAGONAL_RTOL = 1e-10
DEFECTIVE_COND = 1e10


class StationarityError(AnalysisError):
    """Zero pure control does not map to zero interactive control."""


class ComplexEigenvaluesError(AnalysisError):
    """The feedback Jacobian has a complex eigenvalue pair, so no real
    eigencoordinate change exists."""


class DefectiveJacobianError(AnalysisError):
    """The eigenvector basis is numerically defective (not diagonalizable)."""


@dataclass(frozen=True)
class DecompositionMap:
    """Invertible linear change of control coordinates w = forward @ u that
    diagonalizes the feedback Jacobian at the base phase point.

    ``forward @ inverse`` is the identity to 1e-12 and
    ``forward @ J @ inverse`` is diagonal to 1e-10 relative to the largest
    eigenvalue; both are enforced at construction.
    """

    base_phi: np.ndarray
    base_dphi: np.ndarray
    forward: np.ndarray
    inverse: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        for name in ("base_phi", "base_dphi", "forward", "inverse", "eigenvalues"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        identity_gap = float(
            np.max(np.abs(self.forward @ self.inverse - np.eye(len(self.forward))))
        )
        if identity_gap > INVERSE_TOL:
            raise AnalysisError(
                f"forward and inverse are not mutual inverses (gap {identity_gap:.3e})"
            )


def feedback_jacobian_at_zero(
    iset: LacingIntegralSet,
    phi,
    dphi,
    step: float = JACOBIAN_FD_STEP,
) -> np.ndarray:
    """Jacobian of the reconstructed map pure-control -> interactive-control
    at zero pure control, by central differences of the reconstruction.

    Requires the stationarity hypothesis: reconstructing at zero pure control
    must return (numerically) zero interactive control.
    """
    size = 2 * iset.n
    zero = np.zeros(size)
    at_zero = reconstruct_feedback(iset, zero, phi, dphi, zero).u
    magnitude = float(np.max(np.abs(at_zero)))
    if magnitude > STATIONARITY_TOL:
        raise StationarityError(
            f"zero pure control reconstructs to |u| = {magnitude:.3e} > "
            f"{STATIONARITY_TOL} at the base point; the decomposition "
            f"hypothesis fails here"
        )
    jac = np.empty((size, size))
    for j in range(size):
        probe = np.zeros(size)
        probe[j] = step
        u_plus = reconstruct_feedback(iset, probe, phi, dphi, at_zero).u
        probe[j] = -step
        u_minus = reconstruct_feedback(iset, probe, phi, dphi, at_zero).u
        jac[:, j] = (u_plus - u_minus) / (2.0 * step)
    return jac


def virtual_decompose(jacobian, phi, dphi) -> DecompositionMap:
    """Real eigendecomposition of the feedback Jacobian as a decomposition map.

    Eigenvalues are sorted descending; eigenvectors are unit length with the
    first nonzero component positive, so identical Jacobians always give
    bit-identical maps.  Complex eigenvalue pairs and defective bases are
    typed errors, matching the real-diagonalizability hypothesis.
    """
    jac = np.asarray(jacobian, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise ConfigError(f"jacobian must be square, got shape {jac.shape}")
    size = jac.shape[0]
    scale = max(1.0, float(np.max(np.abs(jac))))
    det = float(np.linalg.det(jac))
    if abs(det) < 1e-12 * scale**size:
        raise SingularJacobianError(
            f"feedback Jacobian is singular (det {det:.3e})"
        )
    eigvals, eigvecs = np.linalg.eig(jac)
    if np.any(eigvals.imag != 0.0):
        idx = int(np.argmax(np.abs(eigvals.imag)))
        raise ComplexEigenvaluesError(
            f"feedback Jacobian has complex eigenvalue pair "
            f"{eigvals[idx]:.6g} / {np.conj(eigvals[idx]):.6g}; "
            f"no real eigencoordinate change exists"
        )
    eigvals = eigvals.real
    eigvecs = eigvecs.real
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    for j in range(size):
        col = eigvecs[:, j]
        col /= math.sqrt(float(col @ col))
        threshold = 1e-12 * float(np.max(np.abs(col)))
        for v in col:
            if abs(v) > threshold:
                if v < 0:
                    col *= -1.0
                break
        eigvecs[:, j] = col
    cond = float(np.linalg.cond(eigvecs))
    if cond > DEFECTIVE_COND:
        raise DefectiveJacobianError(
            f"eigenvector basis condition {cond:.3e} exceeds {DEFECTIVE_COND:.0e}; "
            f"Jacobian is numerically defective"
        )
    forward = np.linalg.inv(eigvecs)
    diag = forward @ jac @ eigvecs
    off = diag - np.diag(np.diag(diag))
    limit = DIAGONAL_RTOL * max(float(np.max(np.abs(eigvals))), 1e-300)
    if float(np.max(np.abs(off))) > limit:
        raise DefectiveJacobianError(
            f"eigencoordinates leave off-diagonal coupling "
            f"{float(np.max(np.abs(off))):.3e} > {limit:.3e}"
        )
    return DecompositionMap(
        base_phi=np.asarray(phi, dtype=float),
        base_dphi=np.asarray(dphi, dtype=float),
        forward=forward,
        inverse=eigvecs,
        eigenvalues=eigvals,
    )


def _sphere_points(dim: int, radius: float, grid: int) -> list[np.ndarray]:
    """Deterministic grid on the sphere of the given radius: polar angles on
    [0, pi], azimuth on [0, 2pi)."""
    if dim == 1:
        return [np.array([radius]), np.array([-radius])]
    polar_axes = [np.linspace(0.0, math.pi, grid)] * (dim - 2)
    azimuth = [2.0 * math.pi * j / grid for j in range(grid)]
    points = []
    for angles in product(*polar_axes, azimuth):
        x = np.empty(dim)
        sin_prod = radius
        for i, angle in enumerate(angles):
            x[i] = sin_prod * math.cos(angle)
            sin_prod *= math.sin(angle)
        x[dim - 1] = sin_prod
        points.append(x)
    return points


def coupling_residual(
    iset: LacingIntegralSet,
    dmap: DecompositionMap,
    radius: float,
    grid: int,
) -> float:
    """How far the linear decomposition is from exact componentwise decoupling.

    Samples virtual pure controls on the sphere of the given radius, maps each
    through the reconstruction, and returns the largest deviation of any
    virtual-control component from its value when all other components of the
    virtual pure control are zeroed.  Zero for feedbacks linear in the pure
    controls, O(radius^2) for smooth ones.
    """
    if radius <= 0:
        raise ConfigError(f"radius must be positive, got {radius!r}")
    if grid < 2:
        raise ConfigError(f"grid must be at least 2, got {grid!r}")
    size = 2 * iset.n
    zero = np.zeros(size)

    def virtual_response(w_pure: np.ndarray) -> np.ndarray:
        u_pure = dmap.inverse @ w_pure
        u = reconstruct_feedback(iset, u_pure, dmap.base_phi, dmap.base_dphi, zero).u
        return dmap.forward @ u

    worst = 0.0
    for w_pure in _sphere_points(size, radius, grid):
        w = virtual_response(w_pure)
        for i in range(size):
            axis = np.zeros(size)
            axis[i] = w_pure[i]
            w_axis = virtual_response(axis)
            worst = max(worst, abs(float(w[i] - w_axis[i])))
    return worst
