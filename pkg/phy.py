"""MCS table, power levels, PRB allocation and the per-step PHY figures (beta, T, Gamma, energy)."""
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from channel import db_to_linear
from models import PhyConfig
from schemas import McsTableError, SimulationException

logger = logging.getLogger(__name__)

BUNDLED_MCS_TABLE = Path(__file__).resolve().parent / "data" / "mcs_table.csv"
NUM_MCS = 29

IntLike = Union[int, np.ndarray]


@dataclass(frozen=True)
class McsTable:
    spectral_efficiency: np.ndarray   # bits/s/Hz, index m-1
    sinr_threshold: np.ndarray        # dB, index m-1

    @classmethod
    def from_values(cls, spectral_efficiency: Sequence[float], sinr_low: float = -6.7,
                    sinr_high: float = 11.7) -> "McsTable":
        se = np.asarray(spectral_efficiency, dtype=float)
        if se.ndim != 1 or se.size < 2:
            raise McsTableError("MCS table needs at least two entries")
        if np.any(se <= 0) or np.any(np.diff(se) <= 0):
            raise McsTableError("Spectral efficiency must be positive and strictly increasing in m")
        # linear interpolation across the received SINR margin, rounded so anchors are exact
        steps = np.arange(se.size) * (sinr_high - sinr_low) / (se.size - 1)
        thresholds = np.round(sinr_low + steps, 10)
        se.setflags(write=False)
        thresholds.setflags(write=False)
        return cls(spectral_efficiency=se, sinr_threshold=thresholds)

    @property
    def size(self) -> int:
        return int(self.spectral_efficiency.size)

    def _index(self, m: IntLike) -> IntLike:
        idx = np.asarray(m) - 1
        if np.any(idx < 0) or np.any(idx >= self.size):
            raise SimulationException(f"MCS index out of range 1..{self.size}: {m}")
        return idx

    def se(self, m: IntLike):
        return self.spectral_efficiency[self._index(m)]

    def threshold(self, m: IntLike):
        return self.sinr_threshold[self._index(m)]


@dataclass(frozen=True)
class PowerSet:
    levels: tuple  # dBm, k = 1..len

    @classmethod
    def from_config(cls, cfg: PhyConfig) -> "PowerSet":
        return cls(levels=tuple(float(p) for p in cfg.power_levels))

    @property
    def size(self) -> int:
        return len(self.levels)

    @property
    def p_max(self) -> float:
        return self.levels[-1]

    def level(self, k: IntLike):
        idx = np.asarray(k) - 1
        if np.any(idx < 0) or np.any(idx >= self.size):
            raise SimulationException(f"Power index out of range 1..{self.size}: {k}")
        return np.asarray(self.levels)[idx]


@dataclass(frozen=True)
class PrbAllocation:
    prbs: int
    prb_bandwidth: float
    max_prbs: int
    prb_offset: int = 0

    def __post_init__(self):
        if not 1 <= self.prbs <= self.max_prbs:
            raise SimulationException(f"PRB count {self.prbs} outside 1..{self.max_prbs}")

    @property
    def prb_range(self) -> range:
        return range(self.prb_offset, self.prb_offset + self.prbs)

    def overlap_fraction(self, other: "PrbAllocation") -> float:
        shared = min(self.prb_offset + self.prbs, other.prb_offset + other.prbs) - max(
            self.prb_offset, other.prb_offset
        )
        return max(shared, 0) / self.prbs


def _verify_checksum(path: Path) -> None:
    sidecar = path.with_name(path.name + ".sha256")
    if not sidecar.exists():
        if path == BUNDLED_MCS_TABLE:
            raise McsTableError(f"Missing checksum file for bundled MCS table: {sidecar}")
        return
    expected = sidecar.read_text().split()[0].strip().lower()
    actual = hashlib.sha256(path.read_bytes()).hexdigest()
    if actual != expected:
        raise McsTableError(f"Checksum mismatch for {path}: expected {expected}, got {actual}")


def load_mcs_table(source: Optional[Union[str, Path]] = None, sinr_low: float = -6.7,
                   sinr_high: float = 11.7) -> McsTable:
    """Load the 29-row "index,spectral_efficiency" table (bundled 3GPP TS 38.214 values by default)."""
    path = Path(source) if source is not None else BUNDLED_MCS_TABLE
    try:
        _verify_checksum(path)
        df = pd.read_csv(path, comment="#")
    except McsTableError:
        raise
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise McsTableError(f"Malformed MCS table {path}: {e}")

    if list(df.columns) != ["index", "spectral_efficiency"]:
        raise McsTableError(f"MCS table {path} must have columns index,spectral_efficiency")
    if len(df) != NUM_MCS:
        raise McsTableError(f"MCS table {path} has {len(df)} rows, expected {NUM_MCS}")
    try:
        index = pd.to_numeric(df["index"], errors="raise")
        se = pd.to_numeric(df["spectral_efficiency"], errors="raise")
    except (ValueError, TypeError) as e:
        raise McsTableError(f"Malformed MCS table {path}: {e}")
    if index.tolist() != list(range(1, NUM_MCS + 1)):
        raise McsTableError(f"MCS table {path} indices must run 1..{NUM_MCS} in order")

    table = McsTable.from_values(se.to_numpy(dtype=float), sinr_low, sinr_high)
    logger.debug(f"Loaded MCS table from {path}")
    return table


def attempt_outcome(sinr: float, m: IntLike, table: McsTable):
    """1 iff the received SINR reaches the MCS threshold (inclusive)."""
    success = np.asarray(sinr) >= table.threshold(m)
    return success.astype(int) if success.ndim else int(success)


def data_bits(m: IntLike, alloc: PrbAllocation, tau: float, table: McsTable):
    return alloc.prbs * alloc.prb_bandwidth * table.se(m) * tau


def throughput(m: IntLike, success, alloc: PrbAllocation, table: McsTable):
    """Delivered rate in bits/s; zero on failure."""
    return success * alloc.prbs * alloc.prb_bandwidth * table.se(m)


def step_energy(power_dbm, tau: float):
    """Transmit energy of one step in millijoules."""
    return db_to_linear(power_dbm) * tau


def energy_efficiency(bits, power_dbm, tau: float):
    """Bits per millijoule of transmit energy."""
    return bits / step_energy(power_dbm, tau)
