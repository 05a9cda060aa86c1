"""System parameters for the RIS-aided downlink scene.

Power quantities are stored in linear watts. Use :func:`dbm_to_watt` (or
:meth:`SystemConfig.from_dbm`) when working from dBm figures.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NOISE_DBM = -120.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Scene and link budget.

    Defaults reproduce the desk-scale scenario: BS at the origin, RIS at
    (100, 0) m, users dropped in a 5 m disk around (100, 15) m, 28 GHz,
    Rician factor 10 on both hops.
    """

    M: int = 64
    N: int = 100
    K: int = 4
    P: float = dbm_to_watt(10.0)
    noise_power: float = dbm_to_watt(DEFAULT_NOISE_DBM)
    weights: tuple[float, ...] | None = None
    carrier_freq: float = 28e9
    bs_pos: tuple[float, float] = (0.0, 0.0)
    ris_pos: tuple[float, float] = (100.0, 0.0)
    user_center: tuple[float, float] = (100.0, 15.0)
    user_radius: float = 5.0
    rician_h: float = 10.0
    rician_g: float = 10.0
    antenna_spacing: float = 0.5
    _w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.M >= self.K >= 1):
            raise ValueError(f"need M >= K >= 1, got M={self.M}, K={self.K}")
        if self.N < 1:
            raise ValueError(f"need N >= 1, got N={self.N}")
        if not self.P > 0 or not self.noise_power > 0:
            raise ValueError("transmit and noise power must be positive")
        if self.user_radius < 0:
            raise ValueError("user_radius must be nonnegative")
        w = np.ones(self.K) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (self.K,) or np.any(w <= 0):
            raise ValueError("weights must be K positive values")
        object.__setattr__(self, "_w", w)

    @classmethod
    def from_dbm(cls, power_dbm: float = 10.0, noise_dbm: float = DEFAULT_NOISE_DBM, **kw) -> "SystemConfig":
        return cls(P=dbm_to_watt(power_dbm), noise_power=dbm_to_watt(noise_dbm), **kw)

    @property
    def w(self) -> np.ndarray:
        """User weights as a float array (all ones unless given)."""
        return self._w

    @property
    def power_dbm(self) -> float:
        return watt_to_dbm(self.P)

    @property
    def wavelength(self) -> float:
        return 299_792_458.0 / self.carrier_freq

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.init}
        d["weights"] = None if self.weights is None else list(self.weights)
        for key in ("bs_pos", "ris_pos", "user_center"):
            d[key] = list(d[key])
        return d
