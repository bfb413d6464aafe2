"""Graph spectral tools: Jacobi eigensolver, graph Fourier transform, ideal
filters, exact spectral filtering and empirical frequency responses."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10
OFF_TOL = 1e-11
MAX_SWEEPS = 100
RESPONSE_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GraphSpectrum:
    u: np.ndarray
    lam: np.ndarray

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def lambda_max(self) -> float:
        return float(self.lam[-1])

    def matrix(self, h=None) -> np.ndarray:
        """``U diag(h(lambda)) U^T`` (the original matrix when ``h`` is None)."""
        g = self.lam if h is None else np.asarray(_evaluate(h, self.lam), float)
        return (self.u * g) @ self.u.T


def _evaluate(h, lam):
    return h(lam) if callable(h) else np.broadcast_to(np.asarray(h, float), lam.shape)


def _sign_fix(u: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def symmetric_eig(a, tol: float = OFF_TOL, max_sweeps: int = MAX_SWEEPS) -> GraphSpectrum:
    """Cyclic Jacobi eigendecomposition of a real symmetric matrix.

    Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm is at
    most ``tol`` (scaled by the matrix norm when that exceeds 1). Eigenpairs
    are returned in ascending order, each eigenvector's largest-magnitude
    entry made positive.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("symmetric_eig expects a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    stop = tol * max(1.0, float(np.linalg.norm(a)))

    def off(m):
        return float(np.sqrt(max(np.sum(m * m) - np.sum(np.diag(m) ** 2), 0.0)))

    for _ in range(max_sweeps):
        if off(a) <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        if off(a) > stop:
            raise ArithmeticError("Jacobi eigensolver did not converge")
    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return GraphSpectrum(u=_sign_fix(v[:, order]), lam=lam[order])


def gft(spectrum: GraphSpectrum, x) -> np.ndarray:
    """Forward graph Fourier transform ``U^T x`` (x is (n,) or (n, f))."""
    return spectrum.u.T @ np.asarray(x, float)


def igft(spectrum: GraphSpectrum, xt) -> np.ndarray:
    return spectrum.u @ np.asarray(xt, float)


def spectral_filter(spectrum: GraphSpectrum, h, x) -> np.ndarray:
    """``U diag(h(lambda)) U^T x``; ``h`` is a callable or per-eigenvalue array."""
    g = np.asarray(_evaluate(h, spectrum.lam), float)
    xt = gft(spectrum, x)
    return igft(spectrum, g.reshape((-1,) + (1,) * (xt.ndim - 1)) * xt)


class IdealKind(str, enum.Enum):
    BANDPASS_THIRDS = "bandpass_thirds"
    LOWPASS_HALF = "lowpass_half"
    ALLPASS = "allpass"


@dataclass(frozen=True)
class IdealFilter:
    """Piecewise-constant target responses relative to ``lambda_max``.

    ``bandpass_thirds`` passes ``lambda_max/3 < lambda < 2 lambda_max/3``;
    ``lowpass_half`` passes ``lambda < lambda_max/2``; ``allpass`` is 1.
    """

    kind: IdealKind
    lambda_max: float

    def __call__(self, lam):
        lam = np.asarray(lam, float)
        lm = self.lambda_max
        if self.kind is IdealKind.BANDPASS_THIRDS:
            return ((lam > lm / 3) & (lam < 2 * lm / 3)).astype(float)
        if self.kind is IdealKind.LOWPASS_HALF:
            return (lam < lm / 2).astype(float)
        return np.ones_like(lam)

    @classmethod
    def make(cls, kind, spectrum_or_lmax) -> "IdealFilter":
        lm = spectrum_or_lmax.lambda_max if isinstance(spectrum_or_lmax, GraphSpectrum) else float(spectrum_or_lmax)
        return cls(IdealKind(kind), lm)


def empirical_frequency_response(spectrum: GraphSpectrum, pairs, floor: float = RESPONSE_FLOOR) -> np.ndarray:
    """Average of ``u_i^T y / u_i^T x`` over input/output pairs.

    ``pairs`` is an iterable of ``(x, y)`` with x, y of shape (n,) or
    (n, f) (columns count as separate pairs), or a tuple of two arrays of
    shape (N, n). Terms with ``|u_i^T x| < floor`` are skipped; frequencies
    with no retained term are NaN.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2 and np.shape(pairs[0])[1] == spectrum.n:
        xs, ys = np.asarray(pairs[0], float), np.asarray(pairs[1], float)
        num = xs @ spectrum.u
        out = ys @ spectrum.u
    else:
        cols_x, cols_y = [], []
        for x, y in pairs:
            x = np.asarray(x, float).reshape(spectrum.n, -1)
            y = np.asarray(y, float).reshape(spectrum.n, -1)
            cols_x.append(x)
            cols_y.append(y)
        if not cols_x:
            return np.full(spectrum.n, np.nan)
        num = gft(spectrum, np.hstack(cols_x)).T
        out = gft(spectrum, np.hstack(cols_y)).T
    keep = np.abs(num) >= floor
    ratio = np.where(keep, out / np.where(keep, num, 1.0), 0.0)
    cnt = keep.sum(axis=0)
    with np.errstate(invalid="ignore"):
        resp = ratio.sum(axis=0) / cnt
    return np.where(cnt > 0, resp, np.nan)


def response_mse(response, target) -> float:
    """Mean squared deviation over frequencies where ``response`` is defined."""
    r = np.asarray(response, float)
    t = np.asarray(target, float)
    ok = np.isfinite(r)
    if not ok.any():
        return float("nan")
    return float(np.mean((r[ok] - t[ok]) ** 2))


def chebyshev_response(coeffs, lam, lambda_max: float) -> np.ndarray:
    """``sum_k a_k T_k(2 lambda / lambda_max - 1)`` for scalar coefficients."""
    return np.polynomial.chebyshev.chebval(2.0 * np.asarray(lam, float) / lambda_max - 1.0, np.asarray(coeffs, float))


def arma_response(a, b, lam, iterations: int | None = None) -> np.ndarray:
    """Scalar ARMA_K response on the modified spectrum ``1 - lambda``.

    With ``iterations=None`` this is the converged rational form
    ``mean_k b_k / (1 - a_k lt)``; otherwise the truncated geometric series
    produced by that many unrolled iterations.
    """
    lt = 1.0 - np.asarray(lam, float)
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    u = np.multiply.outer(lt, a)
    if iterations is None:
        terms = b / (1.0 - u)
    else:
        terms = b * sum(u**t for t in range(iterations + 1))
    return terms.mean(axis=-1)
