"""Dueling double DQN in numpy: flat parameter vectors, manual backprop, momentum gradient descent."""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from models import DrlHyper, ReplayConfig
from replay import PerBuffer, ReplayBatch
from schemas import CheckpointError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FEDRANCK"


@dataclass(frozen=True)
class NetLayout:
    """Fixed ordering of every weight and bias inside the flat parameter vector."""
    state_dim: int
    hidden: Tuple[int, ...]
    num_actions: int
    entries: Tuple[Tuple[str, Tuple[int, ...]], ...] = field(init=False)

    def __post_init__(self):
        entries = []
        fan_in = self.state_dim
        for i, width in enumerate(self.hidden):
            entries += [(f"W{i}", (fan_in, width)), (f"b{i}", (width,))]
            fan_in = width
        entries += [("Wv", (fan_in, 1)), ("bv", (1,)), ("Wa", (fan_in, self.num_actions)),
                    ("ba", (self.num_actions,))]
        object.__setattr__(self, "entries", tuple(entries))

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.entries)

    def unflatten(self, vector: np.ndarray) -> Dict[str, np.ndarray]:
        """Views into the flat vector, keyed by entry name."""
        if vector.shape != (self.size,):
            raise ShapeMismatchError(f"Parameter vector of shape {vector.shape}, layout needs ({self.size},)")
        views, offset = {}, 0
        for name, shape in self.entries:
            count = int(np.prod(shape))
            views[name] = vector[offset:offset + count].reshape(shape)
            offset += count
        return views

    def to_dict(self) -> dict:
        return {"state_dim": self.state_dim, "hidden": list(self.hidden), "num_actions": self.num_actions}

    @classmethod
    def from_dict(cls, data: dict) -> "NetLayout":
        return cls(int(data["state_dim"]), tuple(int(h) for h in data["hidden"]), int(data["num_actions"]))


@dataclass
class QNetParams:
    layout: NetLayout
    vector: np.ndarray

    def copy(self) -> "QNetParams":
        return QNetParams(self.layout, self.vector.copy())

    def serialize(self) -> bytes:
        return self.vector.astype("<f8").tobytes()

    @classmethod
    def deserialize(cls, layout: NetLayout, data: bytes) -> "QNetParams":
        vector = np.frombuffer(data, dtype="<f8").astype(float)
        if vector.size != layout.size:
            raise ShapeMismatchError(f"Serialized vector has {vector.size} values, layout needs {layout.size}")
        return cls(layout, vector)


@dataclass
class MomentumState:
    vector: np.ndarray

    @classmethod
    def zeros(cls, layout: NetLayout) -> "MomentumState":
        return cls(np.zeros(layout.size))

    def copy(self) -> "MomentumState":
        return MomentumState(self.vector.copy())


def init_params(rng: np.random.Generator, layout: NetLayout) -> QNetParams:
    """Glorot-uniform weights, zero biases."""
    vector = np.zeros(layout.size)
    views = layout.unflatten(vector)
    for name, shape in layout.entries:
        if name.startswith("W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            views[name][...] = rng.uniform(-bound, bound, size=shape)
    return QNetParams(layout, vector)


def _forward(params: QNetParams, states: np.ndarray):
    p = params.layout.unflatten(params.vector)
    activations = [states]
    h = states
    for i in range(len(params.layout.hidden)):
        h = np.tanh(h @ p[f"W{i}"] + p[f"b{i}"])
        activations.append(h)
    value = h @ p["Wv"] + p["bv"]
    advantage = h @ p["Wa"] + p["ba"]
    q = value + (advantage - advantage.mean(axis=1, keepdims=True))
    return q, value[:, 0], activations


def forward_with_value(params: QNetParams, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    single = np.ndim(states) == 1
    q, value, _ = _forward(params, np.atleast_2d(states))
    return (q[0], value[0]) if single else (q, value)


def forward(params: QNetParams, states: np.ndarray) -> np.ndarray:
    """Q(s, a) = V(s) + A(s, a) - mean over a' of A(s, a'); one row per state."""
    return forward_with_value(params, states)[0]


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; ties resolve to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(q_values.size))
    return int(np.argmax(q_values))


def decay_epsilon(epsilon: float, hyper: DrlHyper) -> float:
    return max(hyper.epsilon_min, epsilon * hyper.epsilon_decay)


def td_targets(rewards: np.ndarray, next_states: np.ndarray, online: QNetParams, target: QNetParams,
               gamma: float) -> np.ndarray:
    """Double DQN: the online net picks the next action, the target net scores it. No terminal mask."""
    next_actions = np.argmax(forward(online, next_states), axis=1)
    next_q = forward(target, next_states)[np.arange(next_actions.size), next_actions]
    return np.asarray(rewards, dtype=float) + gamma * next_q


def loss_and_grad(states: np.ndarray, actions: np.ndarray, targets: np.ndarray, params: QNetParams,
                  is_weights: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray, np.ndarray]:
    """Importance-weighted mean squared TD error, its gradient, and |TD| per sample."""
    layout = params.layout
    batch = actions.size
    weights = np.ones(batch) if is_weights is None else np.asarray(is_weights, dtype=float)
    q, _, activations = _forward(params, np.atleast_2d(states))
    rows = np.arange(batch)
    td = targets - q[rows, actions]
    loss = float(np.sum(weights * td ** 2) / batch)

    p = layout.unflatten(params.vector)
    grad = np.zeros(layout.size)
    g = layout.unflatten(grad)

    d_q = -2.0 * weights * td / batch
    d_value = d_q[:, None]
    d_adv = -np.repeat(d_q[:, None], layout.num_actions, axis=1) / layout.num_actions
    d_adv[rows, actions] += d_q

    h = activations[-1]
    g["Wv"][...] = h.T @ d_value
    g["bv"][...] = d_value.sum(axis=0)
    g["Wa"][...] = h.T @ d_adv
    g["ba"][...] = d_adv.sum(axis=0)
    d_h = d_value @ p["Wv"].T + d_adv @ p["Wa"].T
    for i in reversed(range(len(layout.hidden))):
        d_z = d_h * (1.0 - activations[i + 1] ** 2)
        g[f"W{i}"][...] = activations[i].T @ d_z
        g[f"b{i}"][...] = d_z.sum(axis=0)
        d_h = d_z @ p[f"W{i}"].T
    return loss, grad, np.abs(td)


def mgd_update(theta: np.ndarray, omega: np.ndarray, grad: np.ndarray, eta: float,
               alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """omega <- eta*omega + grad ; theta <- theta - alpha*omega"""
    if not theta.shape == omega.shape == grad.shape:
        raise ShapeMismatchError(f"MGD shapes differ: {theta.shape}, {omega.shape}, {grad.shape}")
    omega_next = eta * omega + grad
    return theta - alpha * omega_next, omega_next


def sync_target(params: QNetParams) -> QNetParams:
    return params.copy()


def should_sync(update_count: int, period: int) -> bool:
    return update_count > 0 and update_count % period == 0


# Checkpoints: magic, header length, JSON header (layout + sha256), little-endian float64 payload
def save_checkpoint(path: Union[str, Path], params: QNetParams, momentum: Optional[MomentumState] = None,
                    round_index: int = 0) -> Path:
    path = Path(path)
    payload = params.serialize()
    if momentum is not None:
        payload += momentum.vector.astype("<f8").tobytes()
    header = json.dumps({
        "layout": params.layout.to_dict(),
        "round": round_index,
        "has_momentum": momentum is not None,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + payload)
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}", 500)
    logger.debug(f"Checkpoint written: {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[QNetParams, Optional[MomentumState], int]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}", 404)
    if not blob.startswith(CHECKPOINT_MAGIC) or len(blob) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointError(f"{path} is not a checkpoint file")
    start = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack("<I", blob[start:start + 4])
    try:
        header = json.loads(blob[start + 4:start + 4 + header_len].decode("utf-8"))
        layout = NetLayout.from_dict(header["layout"])
    except (ValueError, KeyError) as e:
        raise CheckpointError(f"Corrupt checkpoint header in {path}: {e}")
    payload = blob[start + 4 + header_len:]
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"Checksum mismatch in checkpoint {path}")

    width = layout.size * 8
    expected = width * (2 if header.get("has_momentum") else 1)
    if len(payload) != expected:
        raise CheckpointError(f"Checkpoint {path} payload has {len(payload)} bytes, expected {expected}")
    params = QNetParams.deserialize(layout, payload[:width])
    momentum = None
    if header.get("has_momentum"):
        momentum = MomentumState(np.frombuffer(payload[width:], dtype="<f8").astype(float))
    return params, momentum, int(header.get("round", 0))


class D3qnAgent:
    """One xApp learner: online/target nets, momentum, epsilon schedule and its own replay buffer."""

    def __init__(self, agent_id: int, layout: NetLayout, hyper: DrlHyper, replay_cfg: ReplayConfig,
                 rng: np.random.Generator, total_steps: int = 1):
        self.agent_id = agent_id
        self.layout = layout
        self.hyper = hyper
        self.rng = rng
        self.params = init_params(rng, layout)
        self.momentum = MomentumState.zeros(layout)
        self.target = sync_target(self.params)
        self.epsilon = hyper.epsilon_start
        self.buffer = PerBuffer(replay_cfg, layout.state_dim, total_steps)
        self.env_steps = 0
        self.update_count = 0
        self.sync_counts: List[int] = []

    def act(self, state: np.ndarray) -> int:
        action = select_action(forward(self.params, state), self.epsilon, self.rng)
        self.epsilon = decay_epsilon(self.epsilon, self.hyper)
        return action

    def act_randomly(self) -> int:
        return int(self.rng.integers(self.layout.num_actions))

    def remember(self, state: np.ndarray, action: int, reward: float, next_state: np.ndarray) -> None:
        self.buffer.push(state, action, reward, next_state)
        self.env_steps += 1

    def learn(self) -> Optional[float]:
        """One PER minibatch update; None while the buffer is still smaller than the batch."""
        if len(self.buffer) < self.hyper.batch_size:
            return None
        batch: ReplayBatch = self.buffer.sample(
            self.hyper.batch_size, self.rng, beta=self.buffer.beta_at(self.env_steps)
        )
        targets = td_targets(batch.rewards, batch.next_states, self.params, self.target, self.hyper.gamma)
        loss, grad, td_abs = loss_and_grad(batch.states, batch.actions, targets, self.params, batch.weights)
        theta, omega = mgd_update(self.params.vector, self.momentum.vector, grad,
                                  self.hyper.momentum, self.hyper.learning_rate)
        self.params = QNetParams(self.layout, theta)
        self.momentum = MomentumState(omega)
        self.buffer.update_priorities(batch.indices, td_abs)

        self.update_count += 1
        if should_sync(self.update_count, self.hyper.target_sync_period):
            self.target = sync_target(self.params)
            self.sync_counts.append(self.update_count)
            logger.debug(f"Agent {self.agent_id}: target synced at update {self.update_count}")
        return loss

    def load(self, params: QNetParams, momentum: MomentumState) -> None:
        """Replace local weights and momentum; epsilon, buffer and target net are kept."""
        if params.vector.shape != self.params.vector.shape or momentum.vector.shape != self.momentum.vector.shape:
            raise ShapeMismatchError("Global model does not match the agent's layout")
        self.params = params.copy()
        self.momentum = momentum.copy()
