"""Weighted least-squares state estimation and largest-normalized-residual
bad-data detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalError
from .grid import GridCase
from .powerflow import (
    NOISE_FLOOR,
    MeasurementFrame,
    StateVector,
    h_vector,
    measurement_jacobian,
    measurement_sigma,
)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-6
STEP_TOL = 1e-11
MAX_ITER = 30
FULL_COVARIANCE_MAX_N = 60
DEFAULT_THRESHOLD = 3.0


@dataclass(frozen=True, eq=False)
class EstimationResult:
    x_hat: StateVector
    residuals: np.ndarray
    normalized_residuals: np.ndarray
    iterations: int
    converged: bool
    objective: float = float("nan")
    omega: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class BddResult:
    clean: bool
    indices: tuple[int, ...] = ()
    largest: float = 0.0

    def __bool__(self):
        # truthy when bad data was found
        return not self.clean


def default_variances(z, sigma_rel: float = 0.01, floor: float = NOISE_FLOOR) -> np.ndarray:
    """Diagonal of R matching the noise generator, evaluated at ``z``."""
    if isinstance(z, MeasurementFrame):
        z = z.vector()
    return measurement_sigma(np.asarray(z, float), sigma_rel, floor) ** 2


def wls_objective(case: GridCase, z: np.ndarray, r_diag: np.ndarray, x: StateVector) -> float:
    r = z - h_vector(case, x)
    return float(np.sum(r * r / r_diag))


def wlse_estimate(
    case: GridCase,
    z: MeasurementFrame | np.ndarray,
    r_diag: np.ndarray | None = None,
    *,
    x0: StateVector | None = None,
    max_iter: int = MAX_ITER,
    grad_tol: float = GRAD_TOL,
    full_covariance: bool | None = None,
) -> EstimationResult:
    """Gauss-Newton minimizer of ``(z - h(x))^T R^-1 (z - h(x))``.

    The slack angle is held at zero. Iteration stops when the gradient
    infinity-norm drops below ``grad_tol`` or the Gauss-Newton step stalls
    at round-off level; after ``max_iter`` updates the last iterate is
    returned with ``converged=False``.
    """
    zv = z.vector() if isinstance(z, MeasurementFrame) else np.asarray(z, float)
    r_diag = default_variances(zv) if r_diag is None else np.asarray(r_diag, float)
    if r_diag.shape != zv.shape or np.any(r_diag <= 0):
        raise ValueError("r_diag must be positive and match the measurement vector")
    n = case.n
    keep = np.r_[np.delete(np.arange(n), case.slack), np.arange(n, 2 * n)]
    winv = 1.0 / r_diag

    if x0 is None:
        th = np.zeros(n)
        v = np.ones(n)
    else:
        th, v = x0.theta.copy(), x0.v.copy()
        th -= th[case.slack]

    converged = False
    it = 0
    while True:
        x = StateVector(v=v, theta=th)
        res = zv - h_vector(case, x)
        jac = measurement_jacobian(case, x)[:, keep]
        grad = jac.T @ (winv * res)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= grad_tol:
            converged = True
            break
        if it >= max_iter:
            break
        gain = jac.T @ (winv[:, None] * jac)
        try:
            dx = np.linalg.solve(gain, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular gain matrix; measurement set unobservable") from exc
        full = np.r_[th, v]
        full[keep] += dx
        th, v = full[:n], full[n:]
        it += 1
        if not np.all(np.isfinite(full)):
            raise NumericalError("state estimate diverged")
        if np.max(np.abs(dx)) <= STEP_TOL * max(1.0, np.max(np.abs(full))):
            # round-off floor: gradient cannot shrink further
            x = StateVector(v=v, theta=th)
            res = zv - h_vector(case, x)
            jac = measurement_jacobian(case, x)[:, keep]
            converged = True
            break
    if not converged:
        log.warning("state estimation did not converge in %d iterations (|grad|=%.2e)", max_iter, gnorm)

    gain = jac.T @ (winv[:, None] * jac)
    ginv_ht = np.linalg.solve(gain, jac.T)
    if full_covariance is None:
        full_covariance = n <= FULL_COVARIANCE_MAX_N
    if full_covariance:
        omega = np.diag(r_diag) - jac @ ginv_ht
        omega_diag = np.diag(omega).copy()
    else:
        omega = None
        omega_diag = r_diag - np.einsum("ij,ji->i", jac, ginv_ht)
    # critical measurements have (numerically) zero residual variance
    tiny = omega_diag <= 1e-10 * r_diag
    denom = np.sqrt(np.where(tiny, 1.0, omega_diag))
    rn = np.where(tiny, 0.0, res / denom)
    return EstimationResult(
        x_hat=x,
        residuals=res,
        normalized_residuals=rn,
        iterations=it,
        converged=converged,
        objective=float(np.sum(res * res * winv)),
        omega=omega,
    )


def lnrt_bdd(result: EstimationResult, threshold: float = DEFAULT_THRESHOLD) -> BddResult:
    """Flag every measurement whose |normalized residual| exceeds ``threshold``."""
    a = np.abs(result.normalized_residuals)
    bad = np.flatnonzero(a > threshold)
    largest = float(a.max()) if a.size else 0.0
    return BddResult(clean=bad.size == 0, indices=tuple(int(i) for i in bad), largest=largest)


def bdd_flags(case: GridCase, frames, threshold: float = DEFAULT_THRESHOLD, sigma_rel: float = 0.01) -> np.ndarray:
    """Run estimation + LNRT over a sequence of frames; True where flagged."""
    out = []
    for fr in frames:
        z = fr.vector()
        res = wlse_estimate(case, z, default_variances(z, sigma_rel))
        out.append(not lnrt_bdd(res, threshold).clean)
    return np.array(out, dtype=bool)
