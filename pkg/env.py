"""Multi-agent MDP over the factory network: states, joint actions, rewards, constraints, signaling."""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, List, Optional, Sequence, Tuple

import numpy as np

from channel import sample_link, received_power_dbm, sinr_db
from models import ConstraintThresholds, RewardWeights, RunConfig
from phy import (
    McsTable,
    PowerSet,
    PrbAllocation,
    attempt_outcome,
    data_bits,
    energy_efficiency,
    step_energy,
    throughput,
)
from schemas import ActionError, SimulationException
from topology import Topology, advance_mobility

logger = logging.getLogger(__name__)

NUM_MCS = 29
NUM_POWER_LEVELS = 6
NUM_ACTIONS = NUM_MCS * NUM_POWER_LEVELS
STATE_DIM = 6

# affine normalization windows for the observation
SINR_RANGE_DB = (-20.0, 40.0)
RX_POWER_RANGE_DBM = (-120.0, 0.0)


# Actions
def encode_action(m: int, k: int, num_mcs: int = NUM_MCS, num_power: int = NUM_POWER_LEVELS) -> int:
    if not 1 <= m <= num_mcs:
        raise ActionError(f"MCS index {m} outside 1..{num_mcs}")
    if not 1 <= k <= num_power:
        raise ActionError(f"Power index {k} outside 1..{num_power}")
    return (m - 1) * num_power + (k - 1)


def decode_action(a: int, num_mcs: int = NUM_MCS, num_power: int = NUM_POWER_LEVELS) -> Tuple[int, int]:
    if not 0 <= a < num_mcs * num_power:
        raise ActionError(f"Action index {a} outside 0..{num_mcs * num_power - 1}")
    m, k = divmod(int(a), num_power)
    return m + 1, k + 1


# States
def _affine(value: float, low: float, high: float) -> float:
    return float(np.clip(2.0 * (value - low) / (high - low) - 1.0, -1.0, 1.0))


@dataclass(frozen=True)
class AgentState:
    """Observation of step t-1: SINR, throughput, outcome bit, received power and the previous action."""
    sinr: float = 0.0
    throughput: float = 0.0
    outcome: int = 0
    rx_power: float = 0.0
    mcs: float = 0.0
    power: float = 0.0

    @classmethod
    def zero(cls) -> "AgentState":
        return cls()

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.sinr, self.throughput, float(self.outcome), self.rx_power, self.mcs, self.power]
        )


@dataclass(frozen=True)
class StateNorms:
    throughput_cap: float    # bits/s at m=29 and zeta_max
    efficiency_cap: float    # bits/mJ at m=29, zeta_max and minimum power
    num_mcs: int = NUM_MCS
    num_power: int = NUM_POWER_LEVELS

    @classmethod
    def from_config(cls, cfg: RunConfig, table: McsTable) -> "StateNorms":
        top_se = float(table.spectral_efficiency[-1])
        t_cap = cfg.phy.max_prbs * cfg.phy.prb_bandwidth * top_se
        bits_cap = t_cap * cfg.topology.step_duration
        g_cap = float(energy_efficiency(bits_cap, min(cfg.phy.power_levels), cfg.topology.step_duration))
        return cls(
            throughput_cap=t_cap,
            efficiency_cap=g_cap,
            num_mcs=table.size,
            num_power=len(cfg.phy.power_levels),
        )


def build_state(sinr: float, rate: float, outcome: int, rx_power: float, prev_action: int,
                norms: StateNorms) -> AgentState:
    m, k = decode_action(prev_action, norms.num_mcs, norms.num_power)
    return AgentState(
        sinr=_affine(sinr, *SINR_RANGE_DB),
        throughput=float(np.clip(rate / norms.throughput_cap, -1.0, 1.0)),
        outcome=int(outcome),
        rx_power=_affine(rx_power, *RX_POWER_RANGE_DBM),
        mcs=(m - 1) / (norms.num_mcs - 1) * 2.0 - 1.0,
        power=(k - 1) / (norms.num_power - 1) * 2.0 - 1.0,
    )


# Rewards
def local_reward(success: int, t_hat: float, gamma_hat: float, attempted_t_hat: float,
                 w: RewardWeights) -> float:
    """Per-transmitter reward on normalized throughput and efficiency; Omega equals the outcome bit."""
    if success:
        return w.alpha1 * t_hat + w.alpha2 * gamma_hat + w.tau1 * 1.0
    return -w.alpha1 * attempted_t_hat - w.tau2 * w.penalty_constant - w.tau3 * w.penalty_constant


def global_reward(locals_: Sequence[float]) -> float:
    values = list(locals_)
    if not values:
        raise SimulationException("Global reward needs at least one local reward")
    return math.fsum(values) / len(values)


# Constraints
@dataclass
class ConstraintReport:
    c1: int = 0
    c2: int = 0
    c3: int = 0
    c4: int = 0

    def __add__(self, other: "ConstraintReport") -> "ConstraintReport":
        return ConstraintReport(self.c1 + other.c1, self.c2 + other.c2, self.c3 + other.c3, self.c4 + other.c4)


def constraint_report(rates: np.ndarray, powers_dbm: np.ndarray, sinrs: np.ndarray, prbs: np.ndarray,
                      th: ConstraintThresholds) -> ConstraintReport:
    return ConstraintReport(
        c1=int(np.count_nonzero(np.asarray(rates) < th.min_throughput)),
        c2=int(np.count_nonzero(np.asarray(powers_dbm) > th.max_power)),
        c3=int(np.count_nonzero(np.asarray(sinrs) < th.min_sinr)),
        c4=int(np.count_nonzero(np.asarray(prbs) > th.max_prbs)),
    )


@dataclass
class StepOutcome:
    """Per-transmitter arrays for one time step plus the shared global reward."""
    step: int
    sinr: np.ndarray          # dB
    rx_power: np.ndarray      # dBm
    success: np.ndarray       # {0, 1}
    throughput: np.ndarray    # bits/s delivered
    efficiency: np.ndarray    # bits/mJ delivered
    energy: np.ndarray        # mJ
    local_rewards: np.ndarray
    actions: np.ndarray
    global_reward: float
    constraints: ConstraintReport = field(default_factory=ConstraintReport)

    @property
    def num_transmitters(self) -> int:
        return int(self.sinr.size)


# Signaling
class Direction(str, Enum):
    UL = "UL"
    DL = "DL"


class Interface(str, Enum):
    OFH = "OFH"
    F1 = "F1"
    E2 = "E2"
    A1 = "A1"


class Payload(str, Enum):
    MEASUREMENT_REPORT = "measurement-report"
    KPI_AGGREGATE = "kpi-aggregate"
    RECONFIG_DECISION = "reconfig-decision"
    RECONFIG_COMMAND = "reconfig-command"
    MODEL_UPDATE = "model-update"
    MODEL_UPLOAD = "model-upload"


@dataclass(frozen=True)
class TraceRecord:
    step: int
    direction: Direction
    interface: Interface
    from_node: str
    to_node: str
    payload: Payload

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "direction": self.direction.value,
            "interface": self.interface.value,
            "from": self.from_node,
            "to": self.to_node,
            "payload": self.payload.value,
        }


# per-step phase order: UL OFH -> F1 -> E2, decision on E2, DL F1 -> OFH
_STEP_PHASES = [
    (Direction.UL, Interface.OFH),
    (Direction.UL, Interface.F1),
    (Direction.UL, Interface.E2),
    (Direction.DL, Interface.E2),
    (Direction.DL, Interface.F1),
    (Direction.DL, Interface.OFH),
]


class SignalingTrace:
    def __init__(self):
        self.records: List[TraceRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, step: int, direction: Direction, interface: Interface, from_node: str,
               to_node: str, payload: Payload) -> None:
        self.records.append(TraceRecord(step, direction, interface, from_node, to_node, payload))

    def emit_step(self, step: int, topo: Topology) -> None:
        """O-RU -> O-DU -> O-CU -> nRT-RIC reports, then decisions and commands back down."""
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.UL, Interface.OFH, f"O-RU{u}", f"O-DU{e}", Payload.MEASUREMENT_REPORT)
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.UL, Interface.F1, f"O-DU{e}", f"O-CU{e}", Payload.MEASUREMENT_REPORT)
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.UL, Interface.E2, f"O-CU{e}", f"nRT-RIC{e}", Payload.KPI_AGGREGATE)
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.DL, Interface.E2, f"nRT-RIC{e}", f"O-CU{e}", Payload.RECONFIG_DECISION)
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.DL, Interface.F1, f"O-CU{e}", f"O-DU{e}", Payload.RECONFIG_COMMAND)
        for u in range(topo.num_aps):
            e = int(topo.ec_of_ap[u])
            self.record(step, Direction.DL, Interface.OFH, f"O-DU{e}", f"O-RU{u}", Payload.RECONFIG_COMMAND)

    def emit_model_exchange(self, step: int, topo: Topology, direction: Direction) -> None:
        """One A1 record per agent: global model down, or local model up to the non-RT RIC."""
        payload = Payload.MODEL_UPDATE if direction == Direction.DL else Payload.MODEL_UPLOAD
        for n in range(topo.num_transmitters):
            agent = f"xApp{n}@nRT-RIC{topo.ec_of_transmitter(n)}"
            if direction == Direction.DL:
                self.record(step, direction, Interface.A1, "non-RT-RIC", agent, payload)
            else:
                self.record(step, direction, Interface.A1, agent, "non-RT-RIC", payload)

    def check_ordering(self) -> bool:
        last_phase = {}
        for rec in self.records:
            if rec.interface == Interface.A1:
                continue
            phase = _STEP_PHASES.index((rec.direction, rec.interface))
            if phase < last_phase.get(rec.step, 0):
                return False
            last_phase[rec.step] = phase
        return True

    def write_ndjson(self, stream: IO[str]) -> None:
        for rec in self.records:
            stream.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


class FactoryEnvironment:
    """Owns the evolving topology and channel streams; executes one joint action per step."""

    def __init__(self, cfg: RunConfig, topology: Topology, table: McsTable,
                 channel_rngs: Sequence[np.random.Generator], mobility_rng: np.random.Generator,
                 trace: Optional[SignalingTrace] = None):
        if topology.num_transmitters == 0:
            raise SimulationException("Environment needs at least one transmitter")
        if len(channel_rngs) != topology.num_transmitters:
            raise SimulationException("One channel stream per transmitter is required")
        self.cfg = cfg
        self.topology = topology
        self.table = table
        self.powers = PowerSet.from_config(cfg.phy)
        self.norms = StateNorms.from_config(cfg, table)
        self.channel_rngs = list(channel_rngs)
        self.mobility_rng = mobility_rng
        self.trace = trace
        self.step_index = 0
        self.allocations = self._allocate_prbs()

    def _allocate_prbs(self) -> List[PrbAllocation]:
        """Disjoint PRB ranges within each AP; the same local slot reuses the same PRBs at every AP."""
        allocations = []
        for n in range(self.topology.num_transmitters):
            peers = self.topology.transmitters_of_ap(int(self.topology.association[n]))
            slot = peers.index(n)
            allocations.append(PrbAllocation(
                prbs=self.cfg.phy.prbs_per_transmitter,
                prb_bandwidth=self.cfg.phy.prb_bandwidth,
                max_prbs=self.cfg.phy.max_prbs,
                prb_offset=slot * self.cfg.phy.prbs_per_transmitter,
            ))
        return allocations

    @property
    def num_agents(self) -> int:
        return self.topology.num_transmitters

    @property
    def num_actions(self) -> int:
        return self.norms.num_mcs * self.norms.num_power

    def initial_states(self) -> List[AgentState]:
        return [AgentState.zero() for _ in range(self.num_agents)]

    def _interferers(self, n: int, rx: np.ndarray) -> List[float]:
        if self.cfg.channel.interference_mode == "noise_limited":
            return []
        topo = self.topology
        ap = int(topo.association[n])
        powers = []
        for j in range(topo.num_transmitters):
            if int(topo.association[j]) == ap:
                continue
            frac = self.allocations[n].overlap_fraction(self.allocations[j])
            if frac > 0:
                powers.append(float(rx[j, ap]) + 10.0 * math.log10(frac))
        return powers

    def step(self, joint_actions: Sequence[int]) -> Tuple[StepOutcome, List[AgentState], Optional[SignalingTrace]]:
        topo = self.topology
        n_tx = topo.num_transmitters
        if len(joint_actions) == 0 or len(joint_actions) != n_tx:
            raise ActionError(f"Expected {n_tx} actions, got {len(joint_actions)}")
        actions = np.asarray(joint_actions, dtype=int)
        decoded = [decode_action(int(a), self.norms.num_mcs, self.norms.num_power) for a in actions]
        mcs = np.array([m for m, _ in decoded])
        ptx = np.asarray(self.powers.level(np.array([k for _, k in decoded])), dtype=float)
        tau = self.cfg.topology.step_duration

        distances = topo.distances_to_aps()
        rx = np.empty_like(distances)
        for n in range(n_tx):
            link = sample_link(self.channel_rngs[n], distances[n], self.cfg.channel)
            rx[n] = received_power_dbm(ptx[n], link)

        serving = topo.association
        signal = rx[np.arange(n_tx), serving]
        sinr = np.array([
            sinr_db(float(signal[n]), self._interferers(n, rx), self.cfg.channel.noise_power)
            for n in range(n_tx)
        ])

        success = np.array([attempt_outcome(sinr[n], int(mcs[n]), self.table) for n in range(n_tx)])
        alloc_prbs = np.array([a.prbs for a in self.allocations])
        bits = np.array([data_bits(int(mcs[n]), self.allocations[n], tau, self.table) for n in range(n_tx)])
        rates = np.array([throughput(int(mcs[n]), int(success[n]), self.allocations[n], self.table)
                          for n in range(n_tx)])
        energy = np.asarray(step_energy(ptx, tau), dtype=float)
        efficiency = np.asarray(energy_efficiency(success * bits, ptx, tau), dtype=float)

        t_hat = rates / self.norms.throughput_cap
        attempted_t_hat = (bits / tau) / self.norms.throughput_cap
        gamma_hat = efficiency / self.norms.efficiency_cap
        locals_ = np.array([
            local_reward(int(success[n]), float(t_hat[n]), float(gamma_hat[n]), float(attempted_t_hat[n]),
                         self.cfg.reward)
            for n in range(n_tx)
        ])

        outcome = StepOutcome(
            step=self.step_index,
            sinr=sinr,
            rx_power=signal,
            success=success,
            throughput=rates,
            efficiency=efficiency,
            energy=energy,
            local_rewards=locals_,
            actions=actions,
            global_reward=global_reward(locals_),
            constraints=constraint_report(rates, ptx, sinr, alloc_prbs, self.cfg.constraints),
        )
        next_states = [
            build_state(float(sinr[n]), float(rates[n]), int(success[n]), float(signal[n]), int(actions[n]),
                        self.norms)
            for n in range(n_tx)
        ]

        self.topology = advance_mobility(topo, self.cfg.topology, self.mobility_rng)
        if self.trace is not None:
            self.trace.emit_step(self.step_index, topo)
        logger.debug(f"Step {self.step_index}: global reward {outcome.global_reward:.4f}, "
                     f"successes {int(success.sum())}/{n_tx}")
        self.step_index += 1
        return outcome, next_states, self.trace


def env_step(env: FactoryEnvironment, joint_actions: Sequence[int]):
    return env.step(joint_actions)


def random_joint_actions(rng: np.random.Generator, num_agents: int, num_actions: int = NUM_ACTIONS) -> List[int]:
    return [int(a) for a in rng.integers(0, num_actions, size=num_agents)]

