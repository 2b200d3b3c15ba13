import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from models import TopologyConfig
from schemas import TopologyError

logger = logging.getLogger(__name__)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Topology:
    """Layout of one run: AP grid, transmitter positions and the N_u / U_e association maps."""
    ap_positions: np.ndarray   # (U, 2) meters
    tx_positions: np.ndarray   # (N, 2) meters
    association: np.ndarray    # (N,) transmitter -> AP
    ec_of_ap: np.ndarray       # (U,) AP -> edge cloud
    coverage_radius: float

    @property
    def num_transmitters(self) -> int:
        return int(self.tx_positions.shape[0])

    @property
    def num_aps(self) -> int:
        return int(self.ap_positions.shape[0])

    def transmitters_of_ap(self, ap: int) -> List[int]:
        return [int(n) for n in np.flatnonzero(self.association == ap)]

    def aps_of_ec(self, ec: int) -> List[int]:
        return [int(u) for u in np.flatnonzero(self.ec_of_ap == ec)]

    def ec_of_transmitter(self, tx: int) -> int:
        return int(self.ec_of_ap[self.association[tx]])

    def distances_to_aps(self) -> np.ndarray:
        """(N, U) matrix of transmitter-to-AP distances in meters."""
        diff = self.tx_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def serving_distances(self) -> np.ndarray:
        centers = self.ap_positions[self.association]
        return np.linalg.norm(self.tx_positions - centers, axis=-1)


def _split_evenly(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def build_topology(cfg: TopologyConfig, rng: Optional[np.random.Generator] = None) -> Topology:
    """Place APs on a grid with 2R spacing and drop transmitters uniformly inside their AP's disk."""
    if cfg.transmitters < 1:
        raise TopologyError("Topology needs at least one transmitter")
    if cfg.num_edge_clouds < 1 or cfg.aps_per_ec < 1:
        raise TopologyError("Topology needs at least one AP")
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)

    total_aps = cfg.total_aps
    spacing = 2.0 * cfg.coverage_radius
    cols = math.ceil(math.sqrt(total_aps))
    ap_positions = np.array(
        [((u % cols) * spacing, (u // cols) * spacing) for u in range(total_aps)], dtype=float
    )
    ec_of_ap = np.repeat(np.arange(cfg.num_edge_clouds), cfg.aps_per_ec)

    association = []
    for ec in range(cfg.num_edge_clouds):
        first_ap = ec * cfg.aps_per_ec
        for offset, count in enumerate(_split_evenly(cfg.transmitters, cfg.aps_per_ec)):
            association.extend([first_ap + offset] * count)
    association = np.array(association, dtype=int)

    n = association.size
    radii = cfg.coverage_radius * np.sqrt(rng.random(n))
    angles = 2.0 * np.pi * rng.random(n)
    tx_positions = ap_positions[association] + np.column_stack(
        (radii * np.cos(angles), radii * np.sin(angles))
    )

    logger.debug(f"Built topology: {total_aps} APs, {n} transmitters")
    return Topology(
        ap_positions=_frozen(ap_positions),
        tx_positions=_frozen(tx_positions),
        association=_frozen(association),
        ec_of_ap=_frozen(ec_of_ap),
        coverage_radius=float(cfg.coverage_radius),
    )


def advance_mobility(topo: Topology, cfg: TopologyConfig, rng: np.random.Generator) -> Topology:
    """Move every transmitter speed*tau in a random direction, reflecting at the serving disk edge."""
    step = cfg.speed * cfg.step_duration
    angles = 2.0 * np.pi * rng.random(topo.num_transmitters)
    if step == 0.0:
        return topo

    centers = topo.ap_positions[topo.association]
    moved = topo.tx_positions + step * np.column_stack((np.cos(angles), np.sin(angles)))
    offset = moved - centers
    dist = np.linalg.norm(offset, axis=-1)
    outside = dist > topo.coverage_radius
    if np.any(outside):
        reflected = np.clip(2.0 * topo.coverage_radius - dist[outside], 0.0, topo.coverage_radius)
        moved[outside] = centers[outside] + offset[outside] * (reflected / dist[outside])[:, None]
    return replace(topo, tx_positions=_frozen(moved))
