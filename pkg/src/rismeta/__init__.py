"""Joint BS precoding and RIS phase design by online meta-learning, with
WMMSE / Riemannian-CG baselines and an experiment harness."""
from ._kernels import BACKEND
from .config import SystemConfig, dbm_to_watt, watt_to_dbm
from .chanmodel import ChannelPair, CorruptionSpec, corrupt_csi, draw_channel, measured_cee
from .errors import DegenerateInputError, NumericFailure

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ChannelPair",
    "CorruptionSpec",
    "DegenerateInputError",
    "NumericFailure",
    "SystemConfig",
    "corrupt_csi",
    "dbm_to_watt",
    "draw_channel",
    "measured_cee",
    "watt_to_dbm",
]
