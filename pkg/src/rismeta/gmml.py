"""Gradient-based manifold meta-learning (GMML) for joint precoding and RIS
phase design, plus the GML and ML ablations.

A run optimizes a single channel from scratch: two small networks (one for
the precoder, one for the phases) are trained online so that one unrolled
pass from fixed random initial iterates lands on a high-SE point. The best
(W, theta) ever produced is kept.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sysmetrics as sm
from .chanmodel import ChannelPair
from .config import SystemConfig
from .errors import NumericFailure
from .neural import AdamState, MlpParams, RegulatorSpec, adam_step
from .trajectory import MODES, Trajectory, phase_stage, precoder_stage, unroll

TRACE_COLUMNS = ("epoch", "design_SE", "eval_SE", "best_SE", "elapsed_ms")


@dataclass(frozen=True)
class GmmlHyper:
    N_e: int = 500
    N_o: int = 1
    N_i: int = 1
    alpha_X: float = 1e-3
    alpha_Theta: float = 1.5e-3
    lam: float = 2.0 * np.pi
    n_0: int = 5
    hidden: int = 200
    depth: int = 1
    mode: str = "GMML"

    def __post_init__(self):
        for name in ("N_e", "N_o", "N_i", "n_0", "hidden", "depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (self.alpha_X > 0 and self.alpha_Theta > 0):
            raise ValueError("learning rates must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def replace(self, **kw) -> "GmmlHyper":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass
class RunTrace:
    design_se: list[float] = field(default_factory=list)
    eval_se: list[float] = field(default_factory=list)
    best_se: list[float] = field(default_factory=list)
    elapsed_ms: list[float] = field(default_factory=list)
    best: float = 0.0
    best_eval: float = 0.0
    W_opt: np.ndarray | None = None
    theta_opt: sm.PhaseVector | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def to_csv(self, include_timing: bool = True) -> str:
        cols = TRACE_COLUMNS if include_timing else TRACE_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for e in range(len(self.design_se)):
            row = [e + 1, f"{self.design_se[e]:.9g}", f"{self.eval_se[e]:.9g}", f"{self.best_se[e]:.9g}"]
            if include_timing:
                row.append(f"{self.elapsed_ms[e]:.9g}")
            w.writerow(row)
        return buf.getvalue()


def _cgauss(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def tn_inner(theta_start, w_star, channel, cfg, params_tn, spec: RegulatorSpec = RegulatorSpec(),
             n_inner: int = 1, mode: str = "GMML") -> sm.PhaseVector:
    """Phase-network inner loop with the inherited precoder held fixed."""
    if n_inner < 1:
        raise ValueError("need at least one inner iteration")
    steps = phase_stage(mode, channel, cfg, spec.lam, params_tn, sm.angles(theta_start), w_star, n_inner)
    return sm.PhaseVector(steps[-1].theta)


def pn_inner(x_start, theta_star, channel, cfg, params_pn, n_inner: int = 1, mode: str = "GMML"):
    """Precoding-network inner loop at fixed phases.

    Returns ``(X, W)``; in GML/ML mode the iterate is W itself and the first
    element equals the second.
    """
    if n_inner < 1:
        raise ValueError("need at least one inner iteration")
    Hc = sm.cascaded(channel.H, theta_star, channel.G)
    steps, _ = precoder_stage(mode, channel, cfg, params_pn, Hc, np.asarray(x_start, complex), n_inner)
    Z = steps[-1].out
    if mode == "GMML":
        return Z, sm.recover_w(Hc, Z)
    return Z, Z


@dataclass
class _Init:
    theta0: np.ndarray
    start: np.ndarray
    W0: np.ndarray
    pn: MlpParams
    tn: MlpParams


def initialize(channel: ChannelPair, cfg: SystemConfig, hyper: GmmlHyper, rng: np.random.Generator) -> _Init:
    """Random initial phases, initial iterate (normalized) and network weights.

    Each of the four draws uses its own child stream of ``rng``, so runs of
    different modes from the same generator share theta0 and the phase
    network's initial weights.
    """
    r_theta, r_start, r_pn, r_tn = rng.spawn(4)
    theta0 = r_theta.uniform(0.0, 2.0 * np.pi, cfg.N)
    if hyper.mode == "GMML":
        Hc = sm.cascaded(channel.H, theta0, channel.G)
        start = sm.normalize_power(_cgauss(r_start, (cfg.K, cfg.K)), Hc, cfg.P)
        W0 = sm.recover_w(Hc, start)
        width = 2 * cfg.K
    else:
        start = sm.normalize_w(_cgauss(r_start, (cfg.M, cfg.K)), cfg.P)
        W0 = start
        width = 2 * cfg.M
    pn = MlpParams.init(width, width, r_pn, hidden=hyper.hidden, depth=hyper.depth)
    tn = MlpParams.init(cfg.N, cfg.N, r_tn, hidden=hyper.hidden, depth=hyper.depth)
    return _Init(theta0, start, W0, pn, tn)


def working_units(cfg: SystemConfig, ini: _Init):
    """Exact change of units in which the power budget is 1.

    Scaling both P and the noise power by 1/P leaves every SINR unchanged
    when precoders are scaled by 1/sqrt(P). Returns the new config, the
    initial state in those units and the factor that converts a working-unit
    precoder back.
    """
    s = 1.0 / np.sqrt(cfg.P)
    new_cfg = cfg.replace(P=1.0, noise_power=cfg.noise_power / cfg.P)
    return new_cfg, _Init(ini.theta0, ini.start * s, ini.W0 * s, ini.pn, ini.tn), s


def run(
    channel_design: ChannelPair,
    channel_eval: ChannelPair,
    cfg: SystemConfig,
    hyper: GmmlHyper = GmmlHyper(),
    rng: np.random.Generator | None = None,
    on_outer: Callable[[int, int, Trajectory], None] | None = None,
    init: _Init | None = None,
) -> RunTrace:
    """Optimize (W, theta) for one channel; returns the per-epoch trace.

    The networks see ``channel_design`` only, internally expressed in units
    where the channel entries have unit mean power and P = 1 (this leaves
    every SE unchanged). Reported SEs are
    evaluated on the original channels; the eval column uses
    ``channel_eval``. ``on_outer(epoch, j, trajectory)`` is called after
    every outer iteration.
    """
    if (channel_design.H.shape, channel_design.G.shape) != (channel_eval.H.shape, channel_eval.G.shape):
        raise ValueError("design and evaluation channels must have the same shapes")
    if rng is None:
        rng = np.random.default_rng()
    scaled, scfg = sm.rescale_problem(channel_design, cfg)
    ini = init if init is not None else initialize(scaled, scfg, hyper, rng)
    scfg, ini, w_unit = working_units(scfg, ini)
    pn, tn = ini.pn, ini.tn
    adam_pn, adam_tn = AdamState.fresh(pn), AdamState.fresh(tn)

    trace = RunTrace()
    timings = {"forward": 0.0, "backward": 0.0, "update": 0.0, "record": 0.0}
    w_inherited = ini.W0
    t_start = time.perf_counter()
    for epoch in range(1, hyper.N_e + 1):
        acc_pn = acc_tn = None
        ses = []
        for j in range(1, hyper.N_o + 1):
            t0 = time.perf_counter()
            try:
                traj = unroll(scaled, scfg, hyper, ini.theta0, ini.start, pn, tn, w_inherited=w_inherited)
                t1 = time.perf_counter()
                g_pn, g_tn = traj.backward()
            except NumericFailure as exc:
                raise NumericFailure(exc.stage, epoch=epoch) from exc
            t2 = time.perf_counter()
            timings["forward"] += t1 - t0
            timings["backward"] += t2 - t1
            acc_pn = g_pn if acc_pn is None else _add(acc_pn, g_pn)
            acc_tn = g_tn if acc_tn is None else _add(acc_tn, g_tn)
            w_inherited = traj.W_star
            W_here = traj.W_star / w_unit
            se = sm.spectral_efficiency(W_here, traj.theta_star, channel_design, cfg)
            ses.append(se)
            if se > trace.best or trace.W_opt is None:
                trace.best = se
                trace.W_opt = W_here
                trace.theta_opt = sm.PhaseVector(traj.theta_star)
            if on_outer is not None:
                on_outer(epoch, j, traj)
            timings["record"] += time.perf_counter() - t2
        t3 = time.perf_counter()
        if hyper.N_o > 1:
            acc_pn = acc_pn.map(lambda a: a / hyper.N_o)
            acc_tn = acc_tn.map(lambda a: a / hyper.N_o)
        adam_pn, pn = adam_step(adam_pn, acc_pn, pn, hyper.alpha_X)
        if epoch % hyper.n_0 == 0:
            adam_tn, tn = adam_step(adam_tn, acc_tn, tn, hyper.alpha_Theta)
        t4 = time.perf_counter()
        timings["update"] += t4 - t3
        if channel_eval is channel_design:
            eval_se = ses[-1]
        else:
            eval_se = sm.spectral_efficiency(W_here, traj.theta_star, channel_eval, cfg)
        trace.design_se.append(float(np.mean(ses)))
        trace.eval_se.append(eval_se)
        trace.best_se.append(trace.best)
        trace.elapsed_ms.append(1e3 * (time.perf_counter() - t_start))
        timings["record"] += time.perf_counter() - t4
    if channel_eval is channel_design:
        trace.best_eval = trace.best
    else:
        trace.best_eval = sm.spectral_efficiency(trace.W_opt, trace.theta_opt, channel_eval, cfg)
    trace.timings = timings
    return trace


def _add(a: MlpParams, b: MlpParams) -> MlpParams:
    return MlpParams.from_arrays([x + y for x, y in zip(a.arrays(), b.arrays())])


def run_variant(mode: str, channel_design, channel_eval, cfg, hyper: GmmlHyper = GmmlHyper(), rng=None, **kw) -> RunTrace:
    """GML (no manifold compression) or ML (no gradient inputs either)."""
    if mode not in ("GML", "ML"):
        raise ValueError("variant mode must be 'GML' or 'ML'")
    return run(channel_design, channel_eval, cfg, hyper.replace(mode=mode), rng, **kw)
