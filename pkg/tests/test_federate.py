import numpy as np
import pytest

from conftest import make_config
from drl import MomentumState, NetLayout, QNetParams, forward, init_params
from env import Direction, Interface, SignalingTrace
from federate import GlobalModel, TrainingSystem, aggregate, broadcast, run_round, run_training
from models import RunMode
from schemas import ShapeMismatchError, SimulationException

LAYOUT = NetLayout(6, (8,), 5)


def _models(vectors):
    return [QNetParams(LAYOUT, np.asarray(v, dtype=float)) for v in vectors]


def _momenta(vectors):
    return [MomentumState(np.asarray(v, dtype=float)) for v in vectors]


def _schedule_config(**federate):
    return make_config(
        topology={"aps_per_ec": 1, "transmitters": 2},
        drl={"hidden_layers": [8]},
        federate={"rounds": 1, "steps_per_round": 500, **federate},
    )


def test_aggregate_identical_models_is_exact(rng):
    v = rng.normal(size=LAYOUT.size)
    m = rng.normal(size=LAYOUT.size)
    model = aggregate(_models([v, v, v]), _momenta([m, m, m]))
    assert model.params.vector.tobytes() == v.tobytes()
    assert model.momentum.vector.tobytes() == m.tobytes()


def test_aggregate_mean_of_zero_and_two():
    zeros, twos = np.zeros(LAYOUT.size), np.full(LAYOUT.size, 2.0)
    model = aggregate(_models([zeros, twos]), _momenta([zeros, twos]))
    np.testing.assert_array_equal(model.params.vector, np.ones(LAYOUT.size))
    np.testing.assert_array_equal(model.momentum.vector, np.ones(LAYOUT.size))


def test_aggregate_matches_summation_oracle(rng):
    vectors = [rng.normal(size=LAYOUT.size) for _ in range(7)]
    oracle = np.zeros(LAYOUT.size)
    for v in vectors:
        oracle = oracle + v
    oracle = oracle / len(vectors)
    model = aggregate(_models(vectors), _momenta(vectors))
    np.testing.assert_allclose(model.params.vector, oracle, atol=1e-12)


def test_aggregate_is_linear(rng):
    vectors = [rng.normal(size=LAYOUT.size) for _ in range(4)]
    base = aggregate(_models(vectors), _momenta(vectors)).params.vector
    scaled = aggregate(_models([3.0 * v for v in vectors]), _momenta(vectors)).params.vector
    np.testing.assert_allclose(scaled, 3.0 * base, atol=1e-12)


def test_weighted_aggregation_hook():
    zeros, ones = np.zeros(LAYOUT.size), np.ones(LAYOUT.size)
    model = aggregate(_models([zeros, ones]), _momenta([zeros, ones]), weights=[1.0, 3.0])
    np.testing.assert_allclose(model.params.vector, 0.75)


def test_aggregate_errors():
    with pytest.raises(SimulationException):
        aggregate([], [])
    good = np.zeros(LAYOUT.size)
    bad = QNetParams(LAYOUT, np.zeros(LAYOUT.size + 1))
    with pytest.raises(ShapeMismatchError):
        aggregate(_models([good]) + [bad], _momenta([good, good]))
    with pytest.raises(ShapeMismatchError):
        aggregate(_models([good, good]), _momenta([good]))


def test_broadcast_replaces_local_models(tiny_config):
    trace = SignalingTrace()
    system = TrainingSystem(tiny_config, 1, trace)
    agents = system.agents
    agents[1].epsilon = 0.42
    state = np.full(6, 0.1)
    agents[2].remember(state, 3, 1.0, state)

    source = agents[0]
    global_model = GlobalModel(source.params.copy(), source.momentum.copy())
    broadcast(global_model, agents, trace, system.env)

    states = np.random.default_rng(0).uniform(-1, 1, size=(10, 6))
    reference = forward(agents[0].params, states)
    for agent in agents:
        np.testing.assert_array_equal(forward(agent.params, states), reference)
        assert agent.params.vector is not global_model.params.vector
    assert agents[1].epsilon == 0.42
    assert len(agents[2].buffer) == 1
    a1 = [r for r in trace.records if r.interface == Interface.A1]
    assert len(a1) == len(agents)
    assert all(r.direction == Direction.DL for r in a1)


def test_random_actions_never_learn(tiny_config):
    system = TrainingSystem(tiny_config, 1)
    report = run_round(system.env, system.agents, tiny_config.drl, RunMode.RA, system.policy_rng, 1, 20)
    assert report.gradient_updates == 0
    assert all(len(agent.buffer) == 0 for agent in system.agents)
    assert report.step_span == "0-19"


def test_ten_updates_per_agent_per_round():
    cfg = _schedule_config()
    system = TrainingSystem(cfg, 1)
    report = run_round(system.env, system.agents, cfg.drl, RunMode.IDRL, system.policy_rng, 1, 500)
    assert [agent.update_count for agent in system.agents] == [10, 10]
    assert report.gradient_updates == 20


def test_round_report_is_deterministic(tiny_config):
    def once():
        system = TrainingSystem(tiny_config, 3)
        return run_round(system.env, system.agents, tiny_config.drl, RunMode.IDRL, system.policy_rng, 1, 20)

    assert once() == once()


def test_round_report_metrics(tiny_config):
    system = TrainingSystem(tiny_config, 2)
    report = run_round(system.env, system.agents, tiny_config.drl, RunMode.FEDDRL, system.policy_rng, 1, 20)
    assert report.system_throughput_bps >= 0
    assert report.avg_energy_mj > 0
    assert report.avg_eff_bits_per_mj >= 0
    assert report.c2 == 0 and report.c4 == 0
    assert 0 < report.mean_epsilon < 1


def test_single_agent_feddrl_equals_idrl():
    cfg = make_config(
        topology={"aps_per_ec": 1, "transmitters": 1},
        drl={"batch_size": 8, "update_period": 5, "hidden_layers": [8]},
        federate={"rounds": 3, "steps_per_round": 30},
    )
    fed = run_training(cfg, RunMode.FEDDRL, seed=4)
    idrl = run_training(cfg, RunMode.IDRL, seed=4)
    assert fed == idrl


def test_feddrl_agents_share_parameters_after_broadcast(tiny_config):
    system = TrainingSystem(tiny_config, 1)
    agents = system.agents
    global_model = GlobalModel(agents[0].params.copy(), agents[0].momentum.copy())
    for r in range(1, 3):
        broadcast(global_model, agents)
        first = agents[0].params.vector
        assert all(agent.params.vector.tobytes() == first.tobytes() for agent in agents)
        run_round(system.env, agents, tiny_config.drl, RunMode.FEDDRL, system.policy_rng, r, 20)
        global_model = aggregate([a.params for a in agents], [a.momentum for a in agents], round_index=r)


def test_idrl_agents_diverge(tiny_config):
    system = TrainingSystem(tiny_config, 1)
    for r in range(1, 3):
        run_round(system.env, system.agents, tiny_config.drl, RunMode.IDRL, system.policy_rng, r, 20)
    a, b = system.agents[0].params.vector, system.agents[1].params.vector
    assert np.max(np.abs(a - b)) > 1e-6


def test_states_reset_each_round(tiny_config):
    system = TrainingSystem(tiny_config, 1)
    run_round(system.env, system.agents, tiny_config.drl, RunMode.IDRL, system.policy_rng, 1, 20)
    run_round(system.env, system.agents, tiny_config.drl, RunMode.IDRL, system.policy_rng, 2, 20)
    first_of_round_two = system.agents[0].buffer.states[20]
    assert np.all(first_of_round_two == 0.0)


def test_run_training_reports_every_round(tiny_config):
    reports = run_training(tiny_config, "feddrl", seed=1)
    assert [r.round for r in reports] == [1, 2, 3]
    assert [r.step_span for r in reports] == ["0-19", "20-39", "40-59"]


def test_model_exchange_in_trace(tiny_config):
    trace = SignalingTrace()
    run_training(tiny_config, RunMode.FEDDRL, seed=1, trace=trace)
    a1 = [r for r in trace.records if r.interface == Interface.A1]
    agents = tiny_config.topology.total_transmitters
    assert len(a1) == 2 * agents * tiny_config.federate.rounds
    assert trace.check_ordering()


def test_target_sync_schedule():
    cfg = make_config(
        topology={"aps_per_ec": 1, "transmitters": 1},
        drl={"batch_size": 8, "update_period": 5, "hidden_layers": [8], "target_sync_period": 4},
        federate={"rounds": 1, "steps_per_round": 60},
    )
    system = TrainingSystem(cfg, 1)
    run_round(system.env, system.agents, cfg.drl, RunMode.IDRL, system.policy_rng, 1, 60)
    assert system.agents[0].update_count == 11
    assert system.agents[0].sync_counts == [4, 8]


def test_checkpoints_and_resume(tmp_path, tiny_config):
    cfg = tiny_config.model_copy(
        update={"federate": tiny_config.federate.model_copy(update={"checkpoint_dir": str(tmp_path)})}
    )
    run_training(cfg, RunMode.FEDDRL, seed=1)
    run_dir = tmp_path / "feddrl_n4_seed1"
    files = sorted(p.name for p in run_dir.glob("*.ckpt"))
    assert files == ["global_r001.ckpt", "global_r002.ckpt", "global_r003.ckpt"]

    saved = GlobalModel.load(run_dir / "global_r003.ckpt")
    assert saved.round == 3
    assert run_training(cfg, RunMode.FEDDRL, seed=1, resume_from=run_dir / "global_r003.ckpt") == []


def test_resume_continues_after_checkpoint_round(tmp_path, tiny_config):
    cfg = tiny_config.model_copy(
        update={"federate": tiny_config.federate.model_copy(update={"checkpoint_dir": str(tmp_path)})}
    )
    run_training(cfg, RunMode.FEDDRL, seed=1)
    checkpoint = tmp_path / "feddrl_n4_seed1" / "global_r001.ckpt"
    reports = run_training(cfg, RunMode.FEDDRL, seed=1, resume_from=checkpoint)
    assert [r.round for r in reports] == [2, 3]
    assert GlobalModel.load(tmp_path / "feddrl_n4_seed1" / "global_r003.ckpt").round == 3

    idrl = run_training(tiny_config, RunMode.IDRL, seed=1, resume_from=checkpoint)
    assert [r.round for r in idrl] == [2, 3]


def test_resume_rejects_other_network(tmp_path, tiny_config):
    other = GlobalModel(init_params(np.random.default_rng(0), LAYOUT), MomentumState.zeros(LAYOUT))
    path = other.save(tmp_path / "other.ckpt")
    with pytest.raises(ShapeMismatchError):
        run_training(tiny_config, RunMode.IDRL, seed=1, resume_from=path)


def test_idrl_checkpoints_every_agent(tmp_path, tiny_config):
    cfg = tiny_config.model_copy(
        update={"federate": tiny_config.federate.model_copy(update={"checkpoint_dir": str(tmp_path)})}
    )
    run_training(cfg, RunMode.IDRL, seed=2)
    assert len(list((tmp_path / "idrl_n4_seed2").glob("agent*_r*.ckpt"))) == 4 * 3
