"""MAP trajectory optimisation: GP prior plus hinged Timed-ESDF likelihood.

The objective is ``0.5 * sum ||W e_i||^2 + 0.5 * sum (h_i / sigma_obs)^2``
over the free waypoints (every waypoint except the two endpoints), minimised
with Levenberg-Marquardt using Marquardt's diagonal scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solveh_banded

from .core import Trajectory
from .gp_prior import GpParams, process_noise_inv, prior_errors, transition, whitener
from .timed_esdf import TimedEsdf, query_many


class SolverFailure(RuntimeError):
    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass
class FactorGraph:
    n_waypoints: int
    field: TimedEsdf
    params: GpParams = field(default_factory=GpParams)
    sigma_obs: float = 0.05

    def __post_init__(self):
        if self.n_waypoints < 2:
            raise ValueError("a factor graph needs at least 2 waypoints")
        if not self.sigma_obs > 0:
            raise ValueError("sigma_obs must be > 0")

    @property
    def free(self) -> range:
        return range(1, self.n_waypoints - 1)

    @property
    def n_free(self) -> int:
        return max(self.n_waypoints - 2, 0)

    @property
    def residual_dim(self) -> int:
        return 4 * (self.n_waypoints - 1) + self.n_free


@dataclass
class SolveReport:
    iterations: int = 0
    initial_objective: float = math.nan
    final_objective: float = math.nan
    converged: bool = False
    trace: list[float] = field(default_factory=list)
    lam: float = math.nan
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _check(traj: Trajectory, graph: FactorGraph) -> None:
    if len(traj) != graph.n_waypoints:
        raise ValueError(f"trajectory has {len(traj)} waypoints, graph expects {graph.n_waypoints}")


def _obstacle_terms(states: np.ndarray, times: np.ndarray, graph: FactorGraph):
    """Hinge values and their gradients w.r.t. the free waypoint states."""
    fs = states[1:-1]
    if len(fs) == 0:
        return np.zeros(0), np.zeros((0, 4))
    d, gp, gv, _, _ = query_many(graph.field, fs[:, :2], fs[:, 2:], times[1:-1])
    eps = graph.field.epsilon
    active = d < eps
    h = np.where(active, eps - d, 0.0)
    grad = np.zeros((len(fs), 4))
    grad[active, :2] = -gp[active]
    grad[active, 2:] = -gv[active]
    return h, grad


def objective(traj: Trajectory, graph: FactorGraph) -> float:
    _check(traj, graph)
    return _objective(traj.states, traj.times, traj.dt, graph)


def _objective(states, times, dt, graph: FactorGraph) -> float:
    e = prior_errors(states, dt)
    Qinv = process_noise_inv(dt, graph.params)
    prior = 0.5 * float(np.einsum("ni,ij,nj->", e, Qinv, e))
    h, _ = _obstacle_terms(states, times, graph)
    return prior + 0.5 * float(np.sum(h * h)) / graph.sigma_obs ** 2


def residuals_and_jacobian(traj: Trajectory, graph: FactorGraph):
    """Whitened residual vector and its sparse Jacobian w.r.t. the free states.

    Rows: ``4 * (N - 1)`` prior rows (pair ``i`` at ``4*(i-1)``), then one
    obstacle row per free waypoint.  Columns: 4 per free waypoint.
    """
    _check(traj, graph)
    states, dt, n = traj.states, traj.dt, len(traj)
    W = whitener(dt, graph.params)
    e = prior_errors(states, dt)
    r_prior = e @ W.T
    h, hgrad = _obstacle_terms(states, traj.times, graph)
    r = np.concatenate([r_prior.ravel(), h / graph.sigma_obs])

    WPhi = W @ transition(dt)
    rows, cols, vals = [], [], []
    nf = n - 2
    for i in range(1, n):
        prev, cur = i - 1, i
        r0 = 4 * (i - 1)
        if 1 <= prev <= n - 2:
            c0 = 4 * (prev - 1)
            for a in range(4):
                for b in range(4):
                    if WPhi[a, b] != 0.0:
                        rows.append(r0 + a); cols.append(c0 + b); vals.append(WPhi[a, b])
        if 1 <= cur <= n - 2:
            c0 = 4 * (cur - 1)
            for a in range(4):
                for b in range(4):
                    if W[a, b] != 0.0:
                        rows.append(r0 + a); cols.append(c0 + b); vals.append(-W[a, b])
    base = 4 * (n - 1)
    for j in range(nf):
        for b in range(4):
            if hgrad[j, b] != 0.0:
                rows.append(base + j); cols.append(4 * j + b); vals.append(hgrad[j, b] / graph.sigma_obs)
    J = sp.csr_matrix((vals, (rows, cols)), shape=(len(r), 4 * nf))
    return r, J


class _NormalEquations:
    """Block-tridiagonal ``J^T J`` and ``J^T r`` without forming ``J``."""

    def __init__(self, n: int, dt: float, params: GpParams, sigma: float):
        self.n, self.nf, self.dt, self.sigma = n, n - 2, dt, sigma
        self.Qinv = process_noise_inv(dt, params)
        self.Phi = transition(dt)
        nf = self.nf
        H = np.zeros((4 * nf, 4 * nf))
        PtQ = self.Phi.T @ self.Qinv
        diag_blk = self.Qinv + PtQ @ self.Phi
        for j in range(nf):
            H[4 * j:4 * j + 4, 4 * j:4 * j + 4] = diag_blk
            if j + 1 < nf:
                H[4 * j:4 * j + 4, 4 * j + 4:4 * j + 8] = -PtQ
                H[4 * j + 4:4 * j + 8, 4 * j:4 * j + 4] = -PtQ.T
        self.H_prior = H

    def build(self, states, times, graph: FactorGraph):
        e = prior_errors(states, self.dt)
        Qe = e @ self.Qinv.T                       # Q^-1 e_i, rows i = 1..n-1
        # free waypoint j (state index j+1) is "cur" of pair j and "prev" of pair j+1
        g = -Qe[:-1] + Qe[1:] @ self.Phi           # (nf, 4)
        h, hgrad = _obstacle_terms(states, times, graph)
        rho = h / self.sigma
        G = hgrad / self.sigma
        g = g + G * rho[:, None]
        H = self.H_prior.copy()
        for j in np.flatnonzero(rho > 0.0):
            H[4 * j:4 * j + 4, 4 * j:4 * j + 4] += np.outer(G[j], G[j])
        return H, g.ravel()


_BAND = 7


def _solve_damped(H: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    A = H + lam * np.diag(np.diag(H))
    n = len(g)
    ab = np.zeros((_BAND + 1, n))
    for k in range(min(_BAND, n - 1) + 1):
        ab[_BAND - k, k:] = np.diagonal(A, k)
    return solveh_banded(ab, -g)


def optimize(init: Trajectory, graph: FactorGraph, max_iters: int = 50,
             lambda0: float = 1e-8, lambda_max: float = 1e12):
    """Levenberg-Marquardt on the free waypoints; endpoints are never touched.

    Returns ``(trajectory, report)``.  ``SolverFailure`` (carrying the report)
    is raised when the damped normal equations cannot be factorised.
    """
    _check(init, graph)
    times, dt = init.times, init.dt
    states = np.array(init.states)
    f0 = _objective(states, times, dt, graph)
    report = SolveReport(initial_objective=f0, final_objective=f0, trace=[f0], lam=lambda0)
    if graph.n_free == 0 or max_iters <= 0:
        report.converged = graph.n_free == 0
        report.message = "nothing to optimise" if graph.n_free == 0 else "max_iters reached"
        return init, report

    ne = _NormalEquations(graph.n_waypoints, dt, graph.params, graph.sigma_obs)
    lam = lambda0
    f = f0
    H, g = ne.build(states, times, graph)
    for it in range(1, max_iters + 1):
        report.iterations = it
        try:
            delta = _solve_damped(H, g, lam)
        except (LinAlgError, ValueError) as exc:
            report.lam = lam
            report.message = f"normal equations not positive definite: {exc}"
            raise SolverFailure(report.message, report) from exc
        if not np.all(np.isfinite(delta)):
            report.message = "non-finite step"
            raise SolverFailure(report.message, report)
        # relative parameter tolerance
        if np.linalg.norm(delta) < 1e-8 * (np.linalg.norm(states[1:-1]) + 1e-8):
            report.converged = True
            report.message = "step below tolerance"
            break
        trial = states.copy()
        trial[1:-1] += delta.reshape(-1, 4)
        f_new = _objective(trial, times, dt, graph)
        if f_new < f:
            rel = (f - f_new) / max(f, 1e-300)
            states, f = trial, f_new
            report.trace.append(f)
            lam = lam / 3.0
            if rel < 1e-6 or f == 0.0:
                report.converged = True
                report.message = "relative decrease below tolerance" if f else "zero objective"
                break
            H, g = ne.build(states, times, graph)
        else:
            lam = lam * 3.0
            if lam > lambda_max:
                report.converged = True
                report.message = "damping limit reached"
                break
    else:
        report.message = "max_iters reached"
    report.final_objective = f
    report.lam = lam
    return init.with_states(states), report
