"""Spectral efficiency, the cascaded channel, and analytic gradients.

Complex gradients use the convention ``g = dR/dRe(z) + 1j * dR/dIm(z)``
(twice the conjugate Wirtinger derivative), so a real first-order change is
``dR = Re(sum(conj(g) * dz))``.

Shapes: ``H`` K x N, ``G`` N x M, ``W`` M x K (column k serves user k),
``X`` K x K, ``theta`` length N.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .chanmodel import ChannelPair
from .config import SystemConfig
from .errors import DegenerateInputError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PhaseVector:
    """RIS phase angles, stored reduced into [0, 2*pi)."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.mod(np.asarray(self.theta, dtype=float), TWO_PI)
        # mod can round up to exactly 2*pi for tiny negative inputs
        t[t >= TWO_PI] = 0.0
        object.__setattr__(self, "theta", t)

    @property
    def phasors(self) -> np.ndarray:
        return np.exp(1j * self.theta)

    @property
    def Theta(self) -> np.ndarray:
        return np.diag(self.phasors)

    def __len__(self):
        return self.theta.size


def angles(theta) -> np.ndarray:
    if isinstance(theta, PhaseVector):
        return theta.theta
    return np.asarray(theta, dtype=float)


def cascaded(H: np.ndarray, theta, G: np.ndarray) -> np.ndarray:
    """K x M cascaded channel, row k = h_k^H diag(e^{j theta}) G."""
    t = angles(theta)
    if H.shape[1] != t.size or G.shape[0] != t.size:
        raise ValueError(f"dimension mismatch: H{H.shape}, theta({t.size}), G{G.shape}")
    return (H * np.exp(1j * t)) @ G


def _check_w(W, Hc):
    if W.ndim != 2 or W.shape[0] != Hc.shape[1] or W.shape[1] != Hc.shape[0]:
        raise ValueError(f"precoder shape {W.shape} does not match cascaded channel {Hc.shape}")


def sinr(W: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    Hc = cascaded(channel.H, theta, channel.G)
    _check_w(W, Hc)
    p = np.abs(Hc @ W) ** 2
    sig = np.diagonal(p)
    return sig / (cfg.noise_power + p.sum(axis=1) - sig)


def spectral_efficiency(W: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> float:
    """Weighted sum rate in bits/s/Hz."""
    Hc = cascaded(channel.H, theta, channel.G)
    _check_w(W, Hc)
    return float(_kernels.active.rate(np.ascontiguousarray(Hc @ W), cfg.noise_power, cfg.w))


def recover_w(Hc: np.ndarray, X: np.ndarray) -> np.ndarray:
    if X.shape != (Hc.shape[0], Hc.shape[0]):
        raise ValueError(f"X must be {Hc.shape[0]}x{Hc.shape[0]}, got {X.shape}")
    return Hc.conj().T @ X


def se_compressed(X: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> float:
    Hc = cascaded(channel.H, theta, channel.G)
    return spectral_efficiency(recover_w(Hc, X), theta, channel, cfg)


def normalize_power(X: np.ndarray, Hc: np.ndarray, P: float) -> np.ndarray:
    """Rescale X so that W = Hc^H X meets Tr(W^H W) = P."""
    W = recover_w(Hc, X)
    power = float(np.vdot(W, W).real)
    if not power > 0.0:
        raise DegenerateInputError("recovered precoder has zero power")
    return np.sqrt(P / power) * X


def normalize_w(W: np.ndarray, P: float) -> np.ndarray:
    power = float(np.vdot(W, W).real)
    if not power > 0.0:
        raise DegenerateInputError("precoder has zero power")
    return np.sqrt(P / power) * W


def rate_and_grad_response(A: np.ndarray, cfg: SystemConfig):
    """SE of the response matrix ``A = Hc W`` and its gradient w.r.t. A."""
    return _kernels.active.rate_grad(np.ascontiguousarray(A), cfg.noise_power, cfg.w)


def grad_w(W: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    """Gradient of the SE w.r.t. the full precoder (M x K)."""
    Hc = cascaded(channel.H, theta, channel.G)
    _check_w(W, Hc)
    _, gA = rate_and_grad_response(Hc @ W, cfg)
    return Hc.conj().T @ gA


def grad_x(X: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    """Gradient of :func:`se_compressed` w.r.t. X at fixed phases (K x K).

    Since A = Hc Hc^H X, this is Q gA with Q = Hc Hc^H; only K x K work once
    Q is known.
    """
    Hc = cascaded(channel.H, theta, channel.G)
    Q = Hc @ Hc.conj().T
    _, gA = rate_and_grad_response(Q @ X, cfg)
    return Q @ gA


def phase_grad_from_hphi(H: np.ndarray, theta, g_hphi: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. ``H * e^{j theta}`` down to the real angles."""
    t = angles(theta)
    return _kernels.active.phase_grad(
        np.ascontiguousarray(H), np.exp(1j * t), np.ascontiguousarray(g_hphi)
    )


def grad_theta(W: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    """dR/dtheta_n with the precoder W held fixed (length N, real)."""
    t = angles(theta)
    Hc = cascaded(channel.H, t, channel.G)
    _check_w(W, Hc)
    _, gA = rate_and_grad_response(Hc @ W, cfg)
    # A = (H*phi) G W  ->  g_{H*phi} = gA (G W)^H
    return phase_grad_from_hphi(channel.H, t, gA @ (channel.G @ W).conj().T)


def q_vjp_theta(gQ: np.ndarray, Hc: np.ndarray, channel: ChannelPair, theta) -> np.ndarray:
    """Pull a gradient on Q = Hc Hc^H back to the phase angles."""
    g_hc = (gQ + gQ.conj().T) @ Hc
    return phase_grad_from_hphi(channel.H, theta, g_hc @ channel.G.conj().T)


def grad_theta_compressed(X: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    """Total dR/dtheta of :func:`se_compressed`, with W = Hc(theta)^H X moving."""
    t = angles(theta)
    Hc = cascaded(channel.H, t, channel.G)
    _, gA = rate_and_grad_response((Hc @ Hc.conj().T) @ X, cfg)
    return q_vjp_theta(gA @ X.conj().T, Hc, channel, t)


def user_rate_grads(W: np.ndarray, theta, channel: ChannelPair, cfg: SystemConfig) -> np.ndarray:
    """Per-user rate gradients from the KKT analysis.

    Returns ``g`` of shape (K, M, K) with ``g[i, :, k]`` the gradient of the
    unweighted rate log2(1 + SINR_i) w.r.t. w_k::

        g[i, :, k] = (2 / ln 2) * h_ci^H * z_ik
        z_ik = (h_ci w_k) * (1 / T_i - [i != k] / I_i)

    with T_i the total received power plus noise and I_i the interference
    plus noise at user i.
    """
    Hc = cascaded(channel.H, theta, channel.G)
    _check_w(W, Hc)
    A = Hc @ W
    p = np.abs(A) ** 2
    total = p.sum(axis=1) + cfg.noise_power
    interf = total - np.diagonal(p)
    K = A.shape[0]
    z = A * ((1.0 / total)[:, None] - (1.0 / interf)[:, None] * (1.0 - np.eye(K)))
    return (2.0 / np.log(2.0)) * Hc.conj()[:, :, None] * z[:, None, :]


def loss_from_se(rate: float) -> float:
    return -float(rate)


def loss_and_avg(losses) -> float:
    """Average of the per-outer-iteration losses."""
    arr = np.asarray(list(losses), dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one loss value")
    return float(arr.mean())


def rescale_problem(channel: ChannelPair, cfg: SystemConfig):
    """Exact change of units: scale H and G to unit mean entry power.

    The noise power is scaled by the same squared factor, so every SINR, and
    hence the SE of any (W, theta), is unchanged. Returns the scaled channel
    and config.
    """
    a = np.sqrt(channel.H.size / float(np.vdot(channel.H, channel.H).real))
    b = np.sqrt(channel.G.size / float(np.vdot(channel.G, channel.G).real))
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DegenerateInputError("zero channel")
    scaled = ChannelPair(H=a * channel.H, G=b * channel.G)
    return scaled, cfg.replace(noise_power=cfg.noise_power * (a * b) ** 2)
