"""Geometry-based Rician mmWave channels and imperfect-CSI copies.

Scene conventions (2-D): the BS ULA lies along the y axis with broadside
+x, the RIS ULA lies along the x axis with broadside +y. Steering angles are
measured from broadside, so ``sin(angle)`` is the component of the unit
direction along the array axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import textio
from .config import SystemConfig
from .errors import DegenerateInputError

NO_ERROR_DB = float("-inf")


@dataclass(frozen=True)
class ChannelPair:
    """``H`` is K x N (row k is h_k^H), ``G`` is N x M."""

    H: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        if self.H.ndim != 2 or self.G.ndim != 2 or self.H.shape[1] != self.G.shape[0]:
            raise ValueError(f"incompatible shapes H{self.H.shape}, G{self.G.shape}")
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.G))):
            raise ValueError("channel entries must be finite")

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]

    @property
    def M(self) -> int:
        return self.G.shape[1]

    def to_text(self) -> str:
        return textio.dumps({"H": self.H, "G": self.G})

    @classmethod
    def from_text(cls, text: str) -> "ChannelPair":
        m = textio.loads(text)
        return cls(H=m["H"], G=m["G"])

    def save(self, path: str | Path) -> None:
        textio.save(path, {"H": self.H, "G": self.G})

    @classmethod
    def load(cls, path: str | Path) -> "ChannelPair":
        m = textio.load(path)
        return cls(H=m["H"], G=m["G"])


@dataclass(frozen=True)
class CorruptionSpec:
    cee_db: float
    per_sample_exact: bool = True

    def __post_init__(self):
        if not np.isfinite(self.cee_db):
            raise ValueError(f"cee_db must be finite, got {self.cee_db}")


def place_users(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Drop ``cfg.K`` users uniformly over the disk around ``cfg.user_center``.

    Returns a (K, 2) array of positions in meters.
    """
    r = cfg.user_radius * np.sqrt(rng.random(cfg.K))
    phi = 2.0 * np.pi * rng.random(cfg.K)
    center = np.asarray(cfg.user_center, dtype=float)
    return center + np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def pathloss_db(distance, is_los: bool):
    """3GPP UMi-style path loss at 28 GHz, distance in meters."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if is_los:
        return 56.9 + 22.0 * np.log10(d)
    return 60.3 + 36.7 * np.log10(d)


def amplitude_gain(distance, is_los: bool):
    return 10.0 ** (-pathloss_db(distance, is_los) / 20.0)


def steering_vector(num_elements: int, spacing_wavelengths: float, angle: float) -> np.ndarray:
    if num_elements < 1:
        raise ValueError("num_elements must be >= 1")
    n = np.arange(num_elements)
    return np.exp(1j * 2.0 * np.pi * spacing_wavelengths * n * np.sin(angle))


def _cgauss(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _geometry(cfg: SystemConfig, positions: np.ndarray):
    bs = np.asarray(cfg.bs_pos, dtype=float)
    ris = np.asarray(cfg.ris_pos, dtype=float)
    v_g = ris - bs
    d_g = float(np.hypot(*v_g))
    v_h = np.asarray(positions, dtype=float) - ris
    d_h = np.hypot(v_h[:, 0], v_h[:, 1])
    if d_g == 0.0 or np.any(d_h == 0.0):
        raise ValueError("BS, RIS and users must not coincide")
    # BS axis is y, RIS axis is x
    ang_bs_out = np.arcsin(np.clip(v_g[1] / d_g, -1.0, 1.0))
    ang_ris_in = np.arcsin(np.clip(-v_g[0] / d_g, -1.0, 1.0))
    ang_users = np.arcsin(np.clip(v_h[:, 0] / d_h, -1.0, 1.0))
    return d_g, d_h, ang_bs_out, ang_ris_in, ang_users


def gen_channel(cfg: SystemConfig, positions: np.ndarray, rng: np.random.Generator) -> ChannelPair:
    """Draw one Rician realization of (H, G) for users at ``positions``.

    Path loss is applied per component: the LoS term is scaled by the LoS
    amplitude gain and the NLoS term by the NLoS one, both at the same
    geometric distance.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.shape != (cfg.K, 2):
        raise ValueError(f"positions must be ({cfg.K}, 2)")
    d_g, d_h, ang_bs, ang_ris_in, ang_users = _geometry(cfg, positions)
    sp = cfg.antenna_spacing

    kg = cfg.rician_g
    g_los = np.outer(steering_vector(cfg.N, sp, ang_ris_in), steering_vector(cfg.M, sp, ang_bs).conj())
    G = (
        amplitude_gain(d_g, True) * np.sqrt(kg / (1.0 + kg)) * g_los
        + amplitude_gain(d_g, False) * np.sqrt(1.0 / (1.0 + kg)) * _cgauss(rng, (cfg.N, cfg.M))
    )

    kh = cfg.rician_h
    h_los = np.stack([steering_vector(cfg.N, sp, a) for a in ang_users])
    h = (
        (amplitude_gain(d_h, True) * np.sqrt(kh / (1.0 + kh)))[:, None] * h_los
        + (amplitude_gain(d_h, False) * np.sqrt(1.0 / (1.0 + kh)))[:, None] * _cgauss(rng, (cfg.K, cfg.N))
    )
    return ChannelPair(H=h.conj(), G=G)


def draw_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelPair:
    """Convenience: drop users, then draw a channel, from one stream."""
    return gen_channel(cfg, place_users(cfg, rng), rng)


def _corrupt(a: np.ndarray, cee_db: float, exact: bool, rng: np.random.Generator) -> np.ndarray:
    power = float(np.vdot(a, a).real)
    if power == 0.0:
        raise DegenerateInputError("cannot corrupt an all-zero channel")
    ratio = 10.0 ** (cee_db / 10.0)
    z = _cgauss(rng, a.shape)
    if exact:
        z *= np.sqrt(ratio * power / float(np.vdot(z, z).real))
    else:
        z *= np.sqrt(ratio * power / a.size)
    return a + z


def corrupt_csi(channel: ChannelPair, spec: CorruptionSpec, rng: np.random.Generator) -> ChannelPair:
    """Return an estimate ``h + z`` of both H and G at the requested CEE.

    In exact mode the Gaussian error is rescaled so that each matrix hits the
    target ratio for this very draw, not just on average.
    """
    H = _corrupt(channel.H, spec.cee_db, spec.per_sample_exact, rng)
    G = _corrupt(channel.G, spec.cee_db, spec.per_sample_exact, rng)
    return ChannelPair(H=H, G=G)


def measured_cee(true_channel, estimated_channel) -> float:
    """CEE in dB of one realization; ``-inf`` when the estimate is exact.

    Accepts plain arrays or :class:`ChannelPair` (then H and G are pooled).
    """
    if isinstance(true_channel, ChannelPair):
        h = np.concatenate([true_channel.H.ravel(), true_channel.G.ravel()])
        e = np.concatenate([estimated_channel.H.ravel(), estimated_channel.G.ravel()])
    else:
        h, e = np.asarray(true_channel).ravel(), np.asarray(estimated_channel).ravel()
    ref = float(np.vdot(h, h).real)
    if ref == 0.0:
        raise DegenerateInputError("true channel is zero")
    err = float(np.vdot(h - e, h - e).real)
    if err == 0.0:
        return NO_ERROR_DB
    return 10.0 * np.log10(err / ref)
