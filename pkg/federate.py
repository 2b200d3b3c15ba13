"""Global rounds: broadcast, local D3QN training, FedAvg aggregation; plus the IDRL and RA baselines."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from drl import (D3qnAgent, MomentumState, NetLayout, QNetParams, load_checkpoint, save_checkpoint,
                 sync_target)
from env import STATE_DIM, Direction, FactoryEnvironment, SignalingTrace, random_joint_actions
from models import DrlHyper, RoundReport, RunConfig, RunMode
from phy import McsTable, load_mcs_table
from schemas import ShapeMismatchError, SimulationException
from topology import build_topology

logger = logging.getLogger(__name__)


@dataclass
class GlobalModel:
    params: QNetParams
    momentum: MomentumState
    round: int = 0

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, self.params, self.momentum, self.round)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GlobalModel":
        params, momentum, round_index = load_checkpoint(path)
        if momentum is None:
            momentum = MomentumState.zeros(params.layout)
        return cls(params, momentum, round_index)


def _mean_vectors(vectors: Sequence[np.ndarray], weights: Optional[Sequence[float]]) -> np.ndarray:
    first = vectors[0]
    for v in vectors[1:]:
        if v.shape != first.shape:
            raise ShapeMismatchError(f"Cannot aggregate vectors of shape {first.shape} and {v.shape}")
    # centred on the first vector: identical inputs return it unchanged
    deltas = np.stack([v - first for v in vectors])
    return first + np.average(deltas, axis=0, weights=weights)


def aggregate(params_list: Sequence[QNetParams], momentum_list: Sequence[MomentumState],
              weights: Optional[Sequence[float]] = None, round_index: int = 0) -> GlobalModel:
    """FedAvg over agents: element-wise mean of Theta and of omega."""
    if not params_list or not momentum_list:
        raise SimulationException("Aggregation needs at least one agent")
    if len(params_list) != len(momentum_list):
        raise ShapeMismatchError(f"{len(params_list)} parameter vectors but {len(momentum_list)} momentum vectors")
    if weights is not None and (len(weights) != len(params_list) or sum(weights) <= 0):
        raise SimulationException("Aggregation weights must be one positive total per agent")

    layout = params_list[0].layout
    theta = _mean_vectors([p.vector for p in params_list], weights)
    omega = _mean_vectors([m.vector for m in momentum_list], weights)
    if omega.shape != theta.shape:
        raise ShapeMismatchError("Momentum and parameter vectors differ in shape")
    return GlobalModel(QNetParams(layout, theta), MomentumState(omega), round_index)


def broadcast(global_model: GlobalModel, agents: Sequence[D3qnAgent], trace: Optional[SignalingTrace] = None,
              env: Optional[FactoryEnvironment] = None) -> None:
    for agent in agents:
        agent.load(global_model.params, global_model.momentum)
    if trace is not None and env is not None:
        trace.emit_model_exchange(env.step_index, env.topology, Direction.DL)


def run_round(env: FactoryEnvironment, agents: Sequence[D3qnAgent], hyper: DrlHyper, mode: RunMode,
              rng: np.random.Generator, round_index: int = 1, steps: int = 500) -> RoundReport:
    """T environment steps from the zero state; learning agents update every update_period steps."""
    learning = mode != RunMode.RA
    first_step = env.step_index
    states = [s.as_vector() for s in env.initial_states()]
    updates_before = sum(agent.update_count for agent in agents)

    throughput_sum = 0.0
    rewards = []
    energy_sum = 0.0
    efficiency_sum = 0.0
    c1 = c2 = c3 = c4 = 0

    for t in range(steps):
        if learning:
            actions = [agent.act(state) for agent, state in zip(agents, states)]
        else:
            actions = random_joint_actions(rng, env.num_agents, env.num_actions)
        outcome, next_states, _ = env.step(actions)
        next_vectors = [s.as_vector() for s in next_states]

        if learning:
            for agent, state, action, next_state in zip(agents, states, actions, next_vectors):
                agent.remember(state, action, outcome.global_reward, next_state)
            if (t + 1) % hyper.update_period == 0:
                for agent in agents:
                    agent.learn()

        throughput_sum += float(outcome.throughput.sum())
        rewards.append(outcome.global_reward)
        energy_sum += float(outcome.energy.mean())
        efficiency_sum += float(outcome.efficiency.mean())
        c1 += outcome.constraints.c1
        c2 += outcome.constraints.c2
        c3 += outcome.constraints.c3
        c4 += outcome.constraints.c4
        states = next_vectors

    return RoundReport(
        round=round_index,
        step_span=f"{first_step}-{env.step_index - 1}",
        system_throughput_bps=throughput_sum / steps,
        cum_reward=float(np.sum(rewards)),
        avg_energy_mj=energy_sum / steps,
        avg_eff_bits_per_mj=efficiency_sum / steps,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        gradient_updates=sum(agent.update_count for agent in agents) - updates_before,
        mean_epsilon=float(np.mean([agent.epsilon for agent in agents])),
    )


class TrainingSystem:
    """Environment, agents and random streams for one (config, seed) run."""

    def __init__(self, cfg: RunConfig, seed: int, trace: Optional[SignalingTrace] = None,
                 table: Optional[McsTable] = None):
        self.cfg = cfg
        self.seed = seed
        self.table = table or load_mcs_table(
            cfg.phy.mcs_table_path, cfg.phy.sinr_margin_low, cfg.phy.sinr_margin_high
        )
        n = cfg.topology.total_transmitters
        # independent streams: topology, mobility, policy, one channel and one agent stream per transmitter
        streams = np.random.SeedSequence([seed, cfg.topology.rng_seed]).spawn(3 + 2 * n)
        generators = [np.random.default_rng(s) for s in streams]
        topo_rng, mobility_rng, self.policy_rng = generators[:3]
        channel_rngs = generators[3:3 + n]
        agent_rngs = generators[3 + n:]

        topology = build_topology(cfg.topology, topo_rng)
        self.env = FactoryEnvironment(cfg, topology, self.table, channel_rngs, mobility_rng, trace)
        self.trace = trace
        self.layout = NetLayout(STATE_DIM, tuple(cfg.drl.hidden_layers), self.env.num_actions)
        total_steps = cfg.federate.rounds * cfg.federate.steps_per_round
        self.agents = [
            D3qnAgent(i, self.layout, cfg.drl, cfg.replay, agent_rngs[i], total_steps) for i in range(n)
        ]


def _aggregation_weights(cfg: RunConfig, agents: Sequence[D3qnAgent]) -> Optional[List[float]]:
    if not cfg.federate.weighted_aggregation:
        return None
    return [float(len(agent.buffer)) for agent in agents]


def _checkpoint_dir(cfg: RunConfig, mode: RunMode, seed: int) -> Optional[Path]:
    if cfg.federate.checkpoint_dir is None:
        return None
    return Path(cfg.federate.checkpoint_dir) / f"{mode.value}_n{cfg.topology.total_transmitters}_seed{seed}"


def run_training(cfg: RunConfig, mode: Union[RunMode, str], seed: int = 1,
                 resume_from: Optional[Union[str, Path]] = None,
                 trace: Optional[SignalingTrace] = None) -> List[RoundReport]:
    """Rounds 1..R, or the rounds after the checkpoint's round up to R when resuming.

    A resumed run restores the global weights and momentum and syncs the target nets to them.
    Epsilon, replay buffers and step counters start fresh.
    """
    mode = RunMode(mode)
    system = TrainingSystem(cfg, seed, trace)
    env, agents = system.env, system.agents
    fed = cfg.federate

    if resume_from is not None:
        global_model = GlobalModel.load(resume_from)
        if global_model.params.layout != system.layout:
            raise ShapeMismatchError(f"Checkpoint {resume_from} does not match the configured network")
        for agent in agents:
            agent.load(global_model.params, global_model.momentum)
            agent.target = sync_target(agent.params)
        logger.info(f"Resumed {mode.value} from {resume_from} (round {global_model.round})")
    else:
        # round one starts from the first agent's initialization
        global_model = GlobalModel(agents[0].params.copy(), agents[0].momentum.copy(), 0)

    first_round = global_model.round + 1
    if first_round > fed.rounds:
        logger.warning(f"Checkpoint round {global_model.round} already reaches {fed.rounds} rounds; nothing to run")

    ckpt_dir = _checkpoint_dir(cfg, mode, seed)
    reports = []
    for r in range(first_round, fed.rounds + 1):
        if mode == RunMode.FEDDRL:
            broadcast(global_model, agents, trace, env)

        report = run_round(env, agents, cfg.drl, mode, system.policy_rng, r, fed.steps_per_round)
        reports.append(report)

        if mode == RunMode.FEDDRL:
            if trace is not None:
                trace.emit_model_exchange(env.step_index, env.topology, Direction.UL)
            global_model = aggregate(
                [a.params for a in agents], [a.momentum for a in agents],
                _aggregation_weights(cfg, agents), round_index=r,
            )
            if ckpt_dir is not None:
                global_model.save(ckpt_dir / f"global_r{r:03d}.ckpt")
        elif mode == RunMode.IDRL and ckpt_dir is not None:
            for agent in agents:
                save_checkpoint(ckpt_dir / f"agent{agent.agent_id}_r{r:03d}.ckpt",
                                agent.params, agent.momentum, r)

        logger.info(
            f"[{mode.value} n={env.num_agents} seed={seed}] round {r}/{fed.rounds}: "
            f"throughput {report.system_throughput_bps / 1e6:.3f} Mbps, "
            f"cum reward {report.cum_reward:.3f}, epsilon {report.mean_epsilon:.3f}"
        )
    return reports
