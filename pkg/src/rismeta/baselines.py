"""Classical reference solvers: WMMSE, Riemannian CG on the phase circle, and
their alternating composition (AO), plus Random Phase and the restart-based
upper-bound proxy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import sysmetrics as sm
from .chanmodel import ChannelPair
from .config import SystemConfig
from .errors import DegenerateInputError, NumericFailure

log = logging.getLogger(__name__)

WMMSE_TOL = 1e-6
WMMSE_MAX_ITER = 200
RCG_ITERS = 50
AO_OUTER_TOL = 1e-4
AO_MAX_OUTER = 30

ARMIJO_STEP0 = 1.0
ARMIJO_SHRINK = 0.5
ARMIJO_C = 1e-4
ARMIJO_MAX_BACKTRACK = 30


@dataclass
class WmmseState:
    W: np.ndarray
    u: np.ndarray
    Omega: np.ndarray
    dual: float
    trace: list[float] = field(default_factory=list)
    iterations: int = 0


def _wmmse_se(A, cfg):
    return float(sm._kernels.active.rate(np.ascontiguousarray(A), cfg.noise_power, cfg.w))


def _solve_dual(evals, proj_sq, P, tol):
    """Find lambda >= 0 with sum(proj_sq / (lambda + evals)^2) = P.

    ``evals`` are the eigenvalues of the weighted covariance and ``proj_sq``
    the squared magnitudes of the right-hand sides in its eigenbasis.
    """
    pos = evals > evals.max() * 1e-12
    power = lambda lam: float(np.sum(proj_sq[pos] / (lam + evals[pos]) ** 2))
    if power(0.0) <= P:
        return 0.0
    lo, hi = 0.0, 1.0
    while power(hi) > P:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise NumericFailure("wmmse bisection", detail="cannot bracket the dual variable")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        p = power(mid)
        if abs(p / P - 1.0) <= tol:
            return mid
        if p > P:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return 0.5 * (lo + hi)


def wmmse(
    Hc: np.ndarray,
    cfg: SystemConfig,
    tol: float = WMMSE_TOL,
    max_iter: int = WMMSE_MAX_ITER,
    W0: np.ndarray | None = None,
    bisection_tol: float = 1e-12,
    w_tol: float | None = None,
) -> WmmseState:
    """Weighted MMSE precoding for a fixed cascaded channel ``Hc`` (K x M).

    Iterates the closed-form receiver, MSE weight and precoder updates; the
    power dual is found by bisection on the eigen-decomposition of the
    weighted covariance, which costs one M x M Hermitian eigensolve per
    iteration. Stops when the relative SE change drops below ``tol``, or,
    if ``w_tol`` is given, only once the precoder itself moves by less than
    ``w_tol`` relative (the SE is flat to second order near a fixed point,
    so the SE test alone leaves W accurate to roughly sqrt(tol)).
    """
    K, M = Hc.shape
    fro = float(np.linalg.norm(Hc))
    if fro == 0.0:
        raise DegenerateInputError("all-zero cascaded channel")
    w = cfg.w
    W = sm.normalize_w(Hc.conj().T.copy(), cfg.P) if W0 is None else np.array(W0, dtype=complex)
    A = Hc @ W
    rate = _wmmse_se(A, cfg)
    state = WmmseState(W=W, u=np.zeros(K, complex), Omega=np.ones(K), dual=0.0, trace=[rate])
    for it in range(1, max_iter + 1):
        p = np.abs(A) ** 2
        total = p.sum(axis=1) + cfg.noise_power
        u = np.diagonal(A) / total
        Omega = 1.0 / (1.0 - (u.conj() * np.diagonal(A)).real)
        d = w * np.abs(u) ** 2 * Omega
        Phi = (Hc.conj().T * d) @ Hc
        B = Hc.conj().T * (w * u * Omega)
        evals, U = np.linalg.eigh(Phi)
        evals = np.maximum(evals, 0.0)
        C = U.conj().T @ B
        lam = _solve_dual(evals, np.sum(np.abs(C) ** 2, axis=1), cfg.P, bisection_tol)
        inv = np.zeros_like(evals)
        keep = (lam + evals) > evals.max() * 1e-12
        inv[keep] = 1.0 / (lam + evals[keep])
        W = U @ (inv[:, None] * C)
        if not np.all(np.isfinite(W)):
            raise NumericFailure("wmmse", detail=f"iteration {it}")
        A = Hc @ W
        new_rate = _wmmse_se(A, cfg)
        state.trace.append(new_rate)
        moved = float(np.linalg.norm(W - state.W)) / max(float(np.linalg.norm(W)), 1e-300)
        state.W, state.u, state.Omega, state.dual, state.iterations = W, u, Omega, lam, it
        if w_tol is None:
            converged = abs(new_rate - rate) <= tol * max(abs(rate), 1e-300)
        else:
            converged = moved <= w_tol
        rate = new_rate
        if converged:
            break
    return state


# ---------------------------------------------------------------------------
# Riemannian conjugate gradient on the complex circle manifold

@dataclass
class RcgState:
    """``theta_complex`` is the unit-modulus vector t with t^H a = h^H Theta G w."""

    theta_complex: np.ndarray
    direction: np.ndarray
    prev_grad: np.ndarray
    trace: list[float] = field(default_factory=list)
    stalled: bool = False


def _effective_vectors(W, channel):
    # a[k, i, :] = diag(h_k^H) G w_i
    V = channel.G @ W
    return channel.H[:, None, :] * V.T[None, :, :]


def _rcg_value(t, a, cfg):
    A = np.einsum("n,kin->ki", t.conj(), a)
    return _wmmse_se(A, cfg)


def rcg_egrad(t: np.ndarray, a: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Euclidean gradient of the SE w.r.t. t, i.e. sum_k 2 w_k S_k / ln 2.

    S_k = sum_i a_ik a_ik^H t / (sum_i |t^H a_ik|^2 + s2)
          - sum_{i != k} a_ik a_ik^H t / (sum_{i != k} |t^H a_ik|^2 + s2)
    """
    A = np.einsum("n,kin->ki", t.conj(), a)  # t^H a_ik
    p = np.abs(A) ** 2
    total = p.sum(axis=1) + cfg.noise_power
    interf = total - np.diagonal(p)
    K = A.shape[0]
    coef = (1.0 / total)[:, None] - (1.0 / interf)[:, None] * (1.0 - np.eye(K))
    # a_ik a_ik^H t = a_ik * conj(t^H a_ik)
    S = np.einsum("ki,kin->kn", coef * A.conj(), a)
    return (2.0 / np.log(2.0)) * (cfg.w @ S)


def tangent_project(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v - (v * t.conj()).real * t


def _retract(t, step):
    y = t + step
    mag = np.abs(y)
    mag[mag == 0.0] = 1.0
    return y / mag


def _inner(x, y):
    return float(np.vdot(x, y).real)


def rcg_theta(
    W: np.ndarray,
    theta,
    channel: ChannelPair,
    cfg: SystemConfig,
    iters: int = RCG_ITERS,
) -> tuple[sm.PhaseVector, RcgState]:
    """Improve the RIS phases for a fixed precoder by Riemannian CG.

    Minimizes f = -SE over the product of unit circles: Riemannian gradient
    by tangent projection, Polak-Ribiere direction with a nonnegativity clamp,
    projection-based vector transport, normalization retraction and Armijo
    backtracking. Every accepted step is an ascent step for the SE.
    """
    a = _effective_vectors(W, channel)
    t = np.exp(-1j * sm.angles(theta))
    f = -_rcg_value(t, a, cfg)
    rg = tangent_project(t, -rcg_egrad(t, a, cfg))
    d = -rg
    state = RcgState(theta_complex=t, direction=d, prev_grad=rg, trace=[-f])
    for _ in range(iters):
        slope = _inner(rg, d)
        if slope >= 0.0:
            d = -rg
            slope = -_inner(rg, rg)
        if slope == 0.0:
            break
        step = ARMIJO_STEP0
        for _ in range(ARMIJO_MAX_BACKTRACK):
            t_new = _retract(t, step * d)
            f_new = -_rcg_value(t_new, a, cfg)
            if f_new <= f + ARMIJO_C * step * slope:
                break
            step *= ARMIJO_SHRINK
        else:
            state.stalled = True
            break
        rg_new = tangent_project(t_new, -rcg_egrad(t_new, a, cfg))
        d_old = tangent_project(t_new, d)
        g_old = tangent_project(t_new, rg)
        eta = max(0.0, _inner(rg_new, rg_new - g_old) / _inner(rg, rg))
        d = -rg_new + eta * d_old
        t, f, rg = t_new, f_new, rg_new
        state.trace.append(-f)
    state.theta_complex, state.direction, state.prev_grad = t, d, rg
    return sm.PhaseVector(-np.angle(t)), state


# ---------------------------------------------------------------------------
# compositions

@dataclass
class AoResult:
    W: np.ndarray
    theta: sm.PhaseVector
    se: float
    trace: list[float]
    outer: int


def random_phase(cfg: SystemConfig, rng: np.random.Generator) -> sm.PhaseVector:
    if cfg.N < 1:
        raise ValueError("need at least one RIS element")
    return sm.PhaseVector(rng.uniform(0.0, 2.0 * np.pi, cfg.N))


def random_phase_solve(channel: ChannelPair, cfg: SystemConfig, rng: np.random.Generator) -> AoResult:
    """Random Phase baseline: draw the phases, then WMMSE at those phases."""
    theta = random_phase(cfg, rng)
    st = wmmse(sm.cascaded(channel.H, theta, channel.G), cfg)
    se = sm.spectral_efficiency(st.W, theta, channel, cfg)
    return AoResult(W=st.W, theta=theta, se=se, trace=[se], outer=0)


def ao(
    channel: ChannelPair,
    cfg: SystemConfig,
    outer_tol: float = AO_OUTER_TOL,
    max_outer: int = AO_MAX_OUTER,
    theta0=None,
    rng: np.random.Generator | None = None,
    rcg_iters: int = RCG_ITERS,
    wmmse_tol: float = WMMSE_TOL,
    wmmse_max_iter: int = WMMSE_MAX_ITER,
) -> AoResult:
    """Alternate WMMSE (fixed phases) and RCG (fixed precoder).

    WMMSE is warm-started from the previous precoder so the per-loop SE never
    decreases. Initial phases come from ``theta0`` or are drawn from ``rng``.
    """
    if theta0 is None:
        theta0 = random_phase(cfg, rng if rng is not None else np.random.default_rng())
    theta = sm.PhaseVector(sm.angles(theta0))
    W = None
    trace: list[float] = []
    se = -np.inf
    outer = 0
    for outer in range(1, max_outer + 1):
        Hc = sm.cascaded(channel.H, theta, channel.G)
        W = wmmse(Hc, cfg, tol=wmmse_tol, max_iter=wmmse_max_iter, W0=W).W
        if rcg_iters > 0:
            theta, _ = rcg_theta(W, theta, channel, cfg, iters=rcg_iters)
        new_se = sm.spectral_efficiency(W, theta, channel, cfg)
        trace.append(new_se)
        gain = (new_se - se) / abs(new_se) if np.isfinite(se) else np.inf
        se = new_se
        if gain < outer_tol:
            break
    return AoResult(W=W, theta=theta, se=se, trace=trace, outer=outer)


def upper_bound_proxy(
    channel: ChannelPair,
    cfg: SystemConfig,
    restarts: int,
    rng: np.random.Generator,
    **ao_kw,
) -> float:
    """Best SE over ``restarts`` independently initialized AO runs."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    seeds = rng.spawn(restarts)
    return max(ao(channel, cfg, rng=s, **ao_kw).se for s in seeds)
