"""One unrolled outer iteration of the meta-learner, forward and backward.

Forward (N_i inner steps each):

* phase network: starting from the frozen initial phases, feed the phase
  gradient (precoder held at the inherited value), squash the output through
  the regulator and add it to the angles;
* precoding network: starting from the frozen initial iterate, feed the
  gradient, add the output, renormalize to full power. In ``GMML`` mode the
  iterate is the K x K compressed precoder X with W = Hc^H X; in ``GML``/``ML``
  it is W itself. ``ML`` feeds the current iterates instead of gradients.

Backward is reverse-mode through regulator, phase update, normalization and
recovery to both parameter sets. The network inputs are treated as
constants (first-order unroll).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sysmetrics as sm
from .chanmodel import ChannelPair
from .config import SystemConfig
from .errors import NumericFailure
from .neural import (
    MlpCache,
    MlpParams,
    RegulatorSpec,
    mlp_backward_cached,
    mlp_forward,
    regulator,
    regulator_grad,
)

TWO_PI = 2.0 * np.pi
MODES = ("GMML", "GML", "ML")


def _split(Z: np.ndarray) -> np.ndarray:
    """Columns of a complex matrix -> rows of [Re, Im] (one row per column)."""
    return np.ascontiguousarray(np.concatenate([Z.real.T, Z.imag.T], axis=1))


def _merge(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[1] // 2
    return (rows[:, :n] + 1j * rows[:, n:]).T


def _finite(stage: str, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericFailure(stage)


@dataclass
class _PhaseStep:
    cache: MlpCache
    raw: np.ndarray
    delta: np.ndarray
    theta: np.ndarray  # angles after the step


@dataclass
class _PrecStep:
    cache: MlpCache
    pre: np.ndarray  # un-normalized iterate
    tau: float
    scale: float
    out: np.ndarray  # normalized iterate


@dataclass
class Trajectory:
    mode: str
    channel: ChannelPair
    cfg: SystemConfig
    lam: float
    pn: MlpParams
    tn: MlpParams
    theta0: np.ndarray
    start: np.ndarray  # X0 (GMML) or W0 (GML/ML)
    phase_steps: list[_PhaseStep] = field(default_factory=list)
    prec_steps: list[_PrecStep] = field(default_factory=list)
    Hc: np.ndarray | None = None
    Q: np.ndarray | None = None
    theta_star: np.ndarray | None = None
    X_star: np.ndarray | None = None
    W_star: np.ndarray | None = None
    se: float = 0.0

    @property
    def loss(self) -> float:
        return -self.se

    def precoders(self) -> list[np.ndarray]:
        """Full precoder after every inner step of the precoding network."""
        if self.mode == "GMML":
            return [sm.recover_w(self.Hc, s.out) for s in self.prec_steps]
        return [s.out for s in self.prec_steps]

    def backward(self) -> tuple[MlpParams, MlpParams]:
        """Gradients of the loss (= -SE) w.r.t. (PN params, TN params)."""
        cfg, ch = self.cfg, self.channel
        zero_pn = self.pn.map(np.zeros_like)
        zero_tn = self.tn.map(np.zeros_like)
        if self.mode == "GMML":
            Q, X = self.Q, self.X_star
            _, gA = sm.rate_and_grad_response(Q @ X, cfg)
            g = Q @ gA
            gQ = gA @ X.conj().T
            for st in reversed(self.prec_steps):
                c = float(np.vdot(g, st.pre).real)
                QXt = Q @ st.pre
                gQ = gQ - (c * st.scale / (2.0 * st.tau)) * (st.pre @ st.pre.conj().T)
                g = st.scale * (g - (c / st.tau) * QXt)
                grads, _ = mlp_backward_cached(self.pn, st.cache, _split(g))
                zero_pn = _accumulate(zero_pn, grads)
            g_theta = sm.q_vjp_theta(gQ, self.Hc, ch, self.theta_star)
        else:
            Hc, W = self.Hc, self.W_star
            _, gA = sm.rate_and_grad_response(Hc @ W, cfg)
            g = Hc.conj().T @ gA
            g_hc = gA @ W.conj().T
            for st in reversed(self.prec_steps):
                c = float(np.vdot(g, st.pre).real)
                g = st.scale * (g - (c / st.tau) * st.pre)
                grads, _ = mlp_backward_cached(self.pn, st.cache, _split(g))
                zero_pn = _accumulate(zero_pn, grads)
            g_theta = sm.phase_grad_from_hphi(ch.H, self.theta_star, g_hc @ ch.G.conj().T)
        for st in reversed(self.phase_steps):
            up = g_theta * regulator_grad(st.raw, RegulatorSpec(self.lam))
            grads, _ = mlp_backward_cached(self.tn, st.cache, up[None, :])
            zero_tn = _accumulate(zero_tn, grads)
        # descent direction is on the loss = -SE
        g_pn = zero_pn.map(np.negative)
        g_tn = zero_tn.map(np.negative)
        _finite("backward", *g_pn.arrays(), *g_tn.arrays())
        return g_pn, g_tn


def _accumulate(acc: MlpParams, g: MlpParams) -> MlpParams:
    return MlpParams.from_arrays([a + b for a, b in zip(acc.arrays(), g.arrays())])


def phase_stage(mode, channel, cfg, lam, tn, theta0, w_inherited, n_inner, given_inputs=None):
    """Run the phase network for ``n_inner`` steps; returns the step records.

    ``given_inputs`` replaces the computed network inputs (used to evaluate
    the detached graph by finite differences).
    """
    theta = np.asarray(theta0, dtype=float)
    steps = []
    spec = RegulatorSpec(lam)
    for i in range(n_inner):
        if given_inputs is not None:
            inp = given_inputs[i][0]
        elif mode == "ML":
            inp = theta.copy()
        else:
            inp = sm.grad_theta(w_inherited, theta, channel, cfg)
        _finite("phase network input", inp)
        raw, cache = mlp_forward(tn, inp[None, :], return_cache=True)
        raw = raw[0]
        delta = regulator(raw, spec)
        theta = np.mod(theta + delta, TWO_PI)
        _finite("phase network", theta)
        steps.append(_PhaseStep(cache, raw, delta, theta))
    return steps


def precoder_stage(mode, channel, cfg, pn, Hc, start, n_inner, given_inputs=None):
    """Run the precoding network for ``n_inner`` steps from ``start``."""
    steps = []
    Z = start
    Q = Hc @ Hc.conj().T if mode == "GMML" else None
    for i in range(n_inner):
        if given_inputs is not None:
            inp = _merge(given_inputs[i])
        elif mode == "GMML":
            _, gA = sm.rate_and_grad_response(Q @ Z, cfg)
            inp = Q @ gA
        elif mode == "GML":
            _, gA = sm.rate_and_grad_response(Hc @ Z, cfg)
            inp = Hc.conj().T @ gA
        else:
            inp = Z
        rows = _split(inp)
        _finite("precoding network input", rows)
        out, cache = mlp_forward(pn, rows, return_cache=True)
        pre = Z + _merge(out)
        if mode == "GMML":
            tau = float(np.vdot(pre, Q @ pre).real)
        else:
            tau = float(np.vdot(pre, pre).real)
        if not tau > 0.0:
            raise NumericFailure("power normalization", detail="zero power")
        scale = np.sqrt(cfg.P / tau)
        Z = scale * pre
        _finite("precoding network", Z)
        steps.append(_PrecStep(cache, pre, tau, scale, Z))
    return steps, Q


def unroll(
    channel: ChannelPair,
    cfg: SystemConfig,
    hyper,
    theta_init,
    start,
    params_pn: MlpParams,
    params_tn: MlpParams,
    w_inherited: np.ndarray | None = None,
    mode: str | None = None,
    frozen: Trajectory | None = None,
) -> Trajectory:
    """Forward pass of one outer iteration with everything kept for backward.

    ``start`` is X0 (K x K) in GMML mode, W0 (M x K) otherwise.
    ``w_inherited`` is the precoder fed to the phase-gradient computation; it
    defaults to the one implied by ``start`` at the initial phases.
    ``frozen`` reuses the network inputs recorded in another trajectory,
    which makes the forward map exactly the graph that :meth:`backward`
    differentiates.
    """
    mode = mode or getattr(hyper, "mode", "GMML")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if hyper.N_i < 1:
        raise ValueError("N_i must be >= 1")
    theta0 = sm.angles(theta_init)
    start = np.asarray(start, dtype=complex)
    if w_inherited is None:
        if mode == "GMML":
            w_inherited = sm.recover_w(sm.cascaded(channel.H, theta0, channel.G), start)
        else:
            w_inherited = start
    traj = Trajectory(mode, channel, cfg, hyper.lam, params_pn, params_tn, theta0, start)
    phase_in = prec_in = None
    if frozen is not None:
        phase_in = [st.cache.x for st in frozen.phase_steps]
        prec_in = [st.cache.x for st in frozen.prec_steps]
    traj.phase_steps = phase_stage(
        mode, channel, cfg, hyper.lam, params_tn, theta0, w_inherited, hyper.N_i, phase_in
    )
    theta = traj.phase_steps[-1].theta
    Hc = sm.cascaded(channel.H, theta, channel.G)
    traj.prec_steps, traj.Q = precoder_stage(mode, channel, cfg, params_pn, Hc, start, hyper.N_i, prec_in)
    traj.Hc, traj.theta_star = Hc, theta
    if mode == "GMML":
        traj.X_star = traj.prec_steps[-1].out
        traj.W_star = sm.recover_w(Hc, traj.X_star)
        traj.se = float(sm._kernels.active.rate(np.ascontiguousarray(traj.Q @ traj.X_star), cfg.noise_power, cfg.w))
    else:
        traj.W_star = traj.prec_steps[-1].out
        traj.se = float(sm._kernels.active.rate(np.ascontiguousarray(Hc @ traj.W_star), cfg.noise_power, cfg.w))
    if not np.isfinite(traj.se):
        raise NumericFailure("spectral efficiency")
    return traj
