"""AC power flow (polar Newton-Raphson) and the nonlinear measurement
function ``h(x)`` shared by power flow, state estimation and attack
construction.

Measurement vector layout (see :meth:`MeasurementFrame.vector`)::

    [ P_inj (n) | Q_inj (n) | P_from (nb) | P_to (nb) | Q_from (nb) | Q_to (nb) ]
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import NonConvergenceError, NumericalError
from .grid import GridCase

NOISE_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class StateVector:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))

    @property
    def complex(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)

    @classmethod
    def flat(cls, case: GridCase) -> "StateVector":
        v = np.where([b.kind.value != "PQ" for b in case.buses], case.array("v_set"), 1.0)
        return cls(v=v, theta=np.zeros(case.n))


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """Injections and both-end branch flows at one timestamp (per-unit).

    ``state`` optionally carries the power-flow state that produced the
    frame; it is not a measurement.
    """

    p_inj: np.ndarray
    q_inj: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    timestamp: int = 0
    state: StateVector | None = None

    @property
    def n(self) -> int:
        return len(self.p_inj)

    @property
    def n_branches(self) -> int:
        return len(self.p_flow) // 2

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p_inj, self.q_inj, self.p_flow, self.q_flow])

    def with_vector(self, z: np.ndarray) -> "MeasurementFrame":
        n, nb = self.n, self.n_branches
        return replace(
            self,
            p_inj=z[:n].copy(),
            q_inj=z[n : 2 * n].copy(),
            p_flow=z[2 * n : 2 * n + 2 * nb].copy(),
            q_flow=z[2 * n + 2 * nb :].copy(),
        )

    def features(self) -> np.ndarray:
        """Node feature matrix ``[[P_i, Q_i]]`` of shape (n, 2)."""
        return np.stack([self.p_inj, self.q_inj], axis=1)


def measurement_layout(n: int, nb: int) -> dict[str, slice]:
    return {
        "p_inj": slice(0, n),
        "q_inj": slice(n, 2 * n),
        "p_from": slice(2 * n, 2 * n + nb),
        "p_to": slice(2 * n + nb, 2 * n + 2 * nb),
        "q_from": slice(2 * n + 2 * nb, 2 * n + 3 * nb),
        "q_to": slice(2 * n + 3 * nb, 2 * n + 4 * nb),
    }


def _powers(case: GridCase, vc: np.ndarray):
    adm = case.admittance
    s_inj = vc * np.conj(adm.y @ vc)
    s_f = vc[adm.f] * np.conj(adm.yf @ vc)
    s_t = vc[adm.t] * np.conj(adm.yt @ vc)
    return s_inj, s_f, s_t


def measurement_function(case: GridCase, x: StateVector, timestamp: int = 0) -> MeasurementFrame:
    """Evaluate ``h(x)``: injections and from/to branch flows in polar form."""
    vc = x.complex
    if not np.all(np.isfinite(vc)):
        raise NumericalError("non-finite state passed to measurement_function")
    s_inj, s_f, s_t = _powers(case, vc)
    return MeasurementFrame(
        p_inj=s_inj.real,
        q_inj=s_inj.imag,
        p_flow=np.concatenate([s_f.real, s_t.real]),
        q_flow=np.concatenate([s_f.imag, s_t.imag]),
        timestamp=timestamp,
        state=x,
    )


def h_vector(case: GridCase, x: StateVector) -> np.ndarray:
    return measurement_function(case, x).vector()


def _dsbus(case: GridCase, vc: np.ndarray):
    """dS_inj/dtheta and dS_inj/dV (complex, n x n)."""
    y = case.admittance.y
    ibus = y @ vc
    vnorm = vc / np.abs(vc)
    ds_dv = vc[:, None] * np.conj(y * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    ds_dth = 1j * vc[:, None] * np.conj(np.diag(ibus) - y * vc[None, :])
    return ds_dth, ds_dv


def _dsbr(yb: np.ndarray, idx: np.ndarray, vc: np.ndarray):
    """Derivatives of branch-end power ``V[idx] * conj(yb V)``."""
    nb, n = yb.shape
    ib = yb @ vc
    vnorm = vc / np.abs(vc)
    cv = np.zeros((nb, n), complex)
    cv[np.arange(nb), idx] = vc[idx]
    cvn = np.zeros((nb, n), complex)
    cvn[np.arange(nb), idx] = vnorm[idx]
    ds_dth = 1j * (np.conj(ib)[:, None] * cv - vc[idx][:, None] * np.conj(yb * vc[None, :]))
    ds_dv = vc[idx][:, None] * np.conj(yb * vnorm[None, :]) + np.conj(ib)[:, None] * cvn
    return ds_dth, ds_dv


def injection_jacobian(case: GridCase, x: StateVector):
    """Real Jacobian blocks of (P_inj, Q_inj) w.r.t. (theta, V).

    Returns ``(dP_dth, dP_dV, dQ_dth, dQ_dV)``, each n x n.
    """
    ds_dth, ds_dv = _dsbus(case, x.complex)
    return ds_dth.real, ds_dv.real, ds_dth.imag, ds_dv.imag


def measurement_jacobian(case: GridCase, x: StateVector) -> np.ndarray:
    """Full ``dh/d[theta, V]`` of shape (2n + 4nb, 2n) in vector layout."""
    vc = x.complex
    adm = case.admittance
    bth, bv = _dsbus(case, vc)
    fth, fv = _dsbr(adm.yf, adm.f, vc)
    tth, tv = _dsbr(adm.yt, adm.t, vc)
    blocks = [
        np.hstack([bth.real, bv.real]),
        np.hstack([bth.imag, bv.imag]),
        np.hstack([fth.real, fv.real]),
        np.hstack([tth.real, tv.real]),
        np.hstack([fth.imag, fv.imag]),
        np.hstack([tth.imag, tv.imag]),
    ]
    return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class PowerFlowResult:
    state: StateVector
    iterations: int
    mismatch: float


def _scheduled_injection(case: GridCase, loading, q_loading, gen_scale) -> np.ndarray:
    n = case.n
    lp = np.broadcast_to(np.asarray(loading, dtype=float), (n,))
    lq = lp if q_loading is None else np.broadcast_to(np.asarray(q_loading, dtype=float), (n,))
    if not (np.all(np.isfinite(lp)) and np.all(np.isfinite(lq))):
        raise ValueError("load scaling must be finite")
    g = 1.0 if gen_scale is None else float(gen_scale)
    p = g * case.array("p_gen") - lp * case.array("p_load")
    q = case.array("q_gen") - lq * case.array("q_load")
    return p + 1j * q


def newton_raphson(
    case: GridCase,
    loading=1.0,
    *,
    q_loading=None,
    gen_scale=None,
    tol: float = 1e-8,
    max_iter: int = 20,
    x0: StateVector | None = None,
) -> PowerFlowResult:
    """Polar Newton-Raphson power flow.

    ``loading`` scales bus loads (scalar or per bus; ``q_loading`` overrides
    the reactive part) and ``gen_scale`` scales scheduled active generation
    at non-slack buses. PV reactive limits are not enforced.

    Raises
    ------
    NonConvergenceError
        Mismatch still above ``tol`` after ``max_iter`` updates.
    NumericalError
        Singular Jacobian or non-finite iterate.
    """
    s_spec = _scheduled_injection(case, loading, q_loading, gen_scale)
    pv, pq = case.pv, case.pq
    pvpq = np.r_[pv, pq]
    x = StateVector.flat(case) if x0 is None else x0
    th, v = x.theta.copy(), x.v.copy()
    th[case.slack] = 0.0
    npvpq = len(pvpq)

    def mismatch(th, v):
        vc = v * np.exp(1j * th)
        s = vc * np.conj(case.admittance.y @ vc)
        d = s - s_spec
        return vc, np.r_[d.real[pvpq], d.imag[pq]]

    vc, f = mismatch(th, v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise NonConvergenceError(f"power flow did not converge in {max_iter} iterations", norm)
        ds_dth, ds_dv = _dsbus(case, vc)
        jac = np.block(
            [
                [ds_dth.real[np.ix_(pvpq, pvpq)], ds_dv.real[np.ix_(pvpq, pq)]],
                [ds_dth.imag[np.ix_(pq, pvpq)], ds_dv.imag[np.ix_(pq, pq)]],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular power-flow Jacobian at iteration {it}") from exc
        th[pvpq] += dx[:npvpq]
        v[pq] += dx[npvpq:]
        it += 1
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(v))) or np.any(v <= 0):
            raise NonConvergenceError("power flow diverged", norm)
        vc, f = mismatch(th, v)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
    return PowerFlowResult(StateVector(v=v, theta=th), it, norm)


def solve_power_flow(case: GridCase, loading=1.0, **kwargs) -> StateVector:
    """Solve the AC power flow for a loading scenario; see :func:`newton_raphson`."""
    return newton_raphson(case, loading, **kwargs).state


def measurement_sigma(z: np.ndarray, sigma_rel: float, floor: float = NOISE_FLOOR) -> np.ndarray:
    """Per-measurement noise standard deviation ``sigma_rel * max(|z|, floor)``."""
    return sigma_rel * np.maximum(np.abs(z), floor)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def add_noise(frame: MeasurementFrame, sigma_rel: float, rng_seed=None, floor: float = NOISE_FLOOR) -> MeasurementFrame:
    """Relative Gaussian measurement noise with an absolute floor."""
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be non-negative")
    z = frame.vector()
    if sigma_rel == 0:
        return frame.with_vector(z)
    noise = _rng(rng_seed).standard_normal(z.shape) * measurement_sigma(z, sigma_rel, floor)
    return frame.with_vector(z + noise)
