"""Gaussian-process smoothness prior from a constant-velocity LTV-SDE.

State is ``x = [p; v]`` with ``A = [[0, I], [0, 0]]`` and noise entering the
acceleration (``F = [0; I]``) with power-spectral density ``q * I``.  The
exogenous input is zero.  Consecutive waypoints are linked by the Markov
factors ``e_i = Phi(dt) x_{i-1} - x_i`` weighted by ``Q_i^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad_vec

from .core import InvalidTimeError, StateTime, Trajectory

_I2 = np.eye(2)
A_MATRIX = np.block([[np.zeros((2, 2)), _I2], [np.zeros((2, 2)), np.zeros((2, 2))]])
F_MATRIX = np.vstack([np.zeros((2, 2)), _I2])


@dataclass(frozen=True)
class GpParams:
    q: float = 1.0

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("power-spectral density q must be > 0")

    @property
    def Qc(self) -> np.ndarray:
        return self.q * _I2

    @property
    def u(self) -> np.ndarray:
        return np.zeros(4)


@dataclass(frozen=True)
class PriorFactor:
    i: int
    Phi: np.ndarray
    Qi: np.ndarray
    Qi_inv: np.ndarray


def transition(delta_t: float) -> np.ndarray:
    if delta_t < 0:
        raise ValueError("delta_t must be >= 0")
    # A is nilpotent, so exp(A dt) = I + A dt exactly
    phi = np.eye(4)
    phi[0, 2] = phi[1, 3] = delta_t
    return phi


def process_noise_cov(delta_t: float, params: GpParams) -> np.ndarray:
    if not delta_t > 0:
        raise ValueError("delta_t must be > 0")
    dt = delta_t
    return params.q * np.block([
        [dt ** 3 / 3.0 * _I2, dt ** 2 / 2.0 * _I2],
        [dt ** 2 / 2.0 * _I2, dt * _I2],
    ])


def process_noise_inv(delta_t: float, params: GpParams) -> np.ndarray:
    """Closed-form inverse of :func:`process_noise_cov`."""
    dt = delta_t
    return (1.0 / params.q) * np.block([
        [12.0 / dt ** 3 * _I2, -6.0 / dt ** 2 * _I2],
        [-6.0 / dt ** 2 * _I2, 4.0 / dt * _I2],
    ])


@lru_cache(maxsize=64)
def _whitener(delta_t: float, q: float) -> np.ndarray:
    # W with W^T W = Q^-1, from the Cholesky factor of the inverse
    L = np.linalg.cholesky(process_noise_inv(delta_t, GpParams(q)))
    W = L.T.copy()
    W.setflags(write=False)
    return W


def whitener(delta_t: float, params: GpParams) -> np.ndarray:
    return _whitener(float(delta_t), float(params.q))


def prior_factor(i: int, delta_t: float, params: GpParams) -> PriorFactor:
    return PriorFactor(i, transition(delta_t), process_noise_cov(delta_t, params),
                       process_noise_inv(delta_t, params))


def prior_error(prev: StateTime, cur: StateTime, params: GpParams) -> np.ndarray:
    delta = cur.t - prev.t
    if not delta > 0:
        raise InvalidTimeError("prior factor needs strictly increasing times")
    return transition(delta) @ prev.as_array() + params.u - cur.as_array()


def prior_errors(states: np.ndarray, dt: float) -> np.ndarray:
    """All consecutive-pair errors of an ``(N, 4)`` state array, shape ``(N-1, 4)``."""
    prev = states[:-1]
    e = prev - states[1:]
    e[:, 0:2] += dt * prev[:, 2:4]
    return e


def prior_neg_log_density(traj: Trajectory, params: GpParams) -> float:
    """``0.5 * sum e_i^T Q_i^-1 e_i`` over consecutive waypoints."""
    e = prior_errors(traj.states, traj.dt)
    Qinv = process_noise_inv(traj.dt, params)
    return 0.5 * float(np.einsum("ni,ij,nj->", e, Qinv, e))


# Dense form: joint mean and kernel of the GP at a set of times.  Used to
# cross-check the sparse factorisation; the integrals are evaluated
# numerically rather than through the closed forms above.

def _noise_integral(t_a: float, t_b: float, t_lo: float, t_hi: float, params: GpParams) -> np.ndarray:
    if t_hi <= t_lo:
        return np.zeros((4, 4))
    G = F_MATRIX @ params.Qc @ F_MATRIX.T

    def integrand(s):
        return transition(t_a - s) @ G @ transition(t_b - s).T

    val, _ = quad_vec(integrand, t_lo, t_hi, epsabs=1e-14, epsrel=1e-12)
    return val


def dense_kernel(times, params: GpParams, K0: np.ndarray) -> np.ndarray:
    """Joint covariance of the states at ``times`` (first entry is ``t0``)."""
    times = [float(t) for t in times]
    t0 = times[0]
    n = len(times)
    K = np.zeros((4 * n, 4 * n))
    for a, ta in enumerate(times):
        for b in range(a, n):
            tb = times[b]
            blk = transition(ta - t0) @ K0 @ transition(tb - t0).T
            blk = blk + _noise_integral(ta, tb, t0, min(ta, tb), params)
            K[4 * a:4 * a + 4, 4 * b:4 * b + 4] = blk
            K[4 * b:4 * b + 4, 4 * a:4 * a + 4] = blk.T
    return K


def dense_mean(times, mu0: np.ndarray) -> np.ndarray:
    t0 = float(times[0])
    return np.concatenate([transition(float(t) - t0) @ mu0 for t in times])


def dense_neg_log_density(traj: Trajectory, params: GpParams, K0=None, mu0=None) -> float:
    """``0.5 * ||xi - mu||^2_K`` with the dense joint kernel.

    ``mu0`` defaults to the first waypoint, which makes the start term vanish.
    """
    times = traj.times
    if K0 is None:
        K0 = np.eye(4)
    if mu0 is None:
        mu0 = traj.states[0]
    K = dense_kernel(times, params, np.asarray(K0, dtype=float))
    resid = traj.states.reshape(-1) - dense_mean(times, np.asarray(mu0, dtype=float))
    return 0.5 * float(resid @ np.linalg.solve(K, resid))
