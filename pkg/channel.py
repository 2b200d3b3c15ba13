"""Path loss x log-normal shadowing x Rayleigh fading channel, received power and SINR."""
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from models import ChannelConfig
from schemas import SimulationException

ArrayLike = Union[float, np.ndarray]

# Smallest fading power kept so that 10*log10 stays finite
_MIN_FADING_POWER = np.finfo(float).tiny


@dataclass(frozen=True)
class LinkRealization:
    pathloss: ArrayLike       # dB
    shadowing: ArrayLike      # dB
    fading_power: ArrayLike   # linear, > 0


def db_to_linear(value_db: ArrayLike) -> ArrayLike:
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value: ArrayLike) -> ArrayLike:
    return 10.0 * np.log10(value)


def path_loss_db(d: ArrayLike, cfg: ChannelConfig) -> ArrayLike:
    """-xi - 10*phi*log10(d/d0), with d clamped up to d0."""
    dist = np.asarray(d, dtype=float)
    if np.any(dist <= 0):
        raise SimulationException(f"Distance must be positive, got {d}")
    dist = np.maximum(dist, cfg.reference_distance)
    loss = -cfg.intercept_db - 10.0 * cfg.pathloss_exponent * np.log10(dist / cfg.reference_distance)
    return float(loss) if loss.ndim == 0 else loss


def sample_link(rng: np.random.Generator, d: ArrayLike, cfg: ChannelConfig) -> LinkRealization:
    pathloss = path_loss_db(d, cfg)
    shape = np.shape(pathloss)
    if cfg.shadowing_sigma > 0:
        shadowing = rng.normal(0.0, cfg.shadowing_sigma, size=shape)
    else:
        shadowing = np.zeros(shape)
    if cfg.fading_model == "rayleigh":
        fading = np.maximum(rng.exponential(1.0, size=shape), _MIN_FADING_POWER)
    else:
        fading = np.ones(shape)
    if shape == ():
        return LinkRealization(pathloss, float(shadowing), float(fading))
    return LinkRealization(pathloss, shadowing, fading)


def received_power_dbm(ptx: ArrayLike, link: LinkRealization) -> ArrayLike:
    return ptx + link.pathloss + link.shadowing + linear_to_db(link.fading_power)


def sinr_db(signal: float, interferers: Iterable[float], noise: float) -> float:
    interferers = list(interferers)
    if not interferers:
        return float(signal - noise)
    denominator = db_to_linear(noise) + float(np.sum(db_to_linear(interferers)))
    return float(linear_to_db(db_to_linear(signal) / denominator))
