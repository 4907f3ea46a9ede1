import numpy as np
import pytest

from fedms.config import ExperimentConfig
from fedms.engine import (
    _BATCH,
    RoundFailed,
    Simulation,
    ablation_without_mavericks,
    aggregate,
    build_environment,
    run_experiment,
    run_round,
    stream_seed,
)
from fedms.nn import TrainConfig, init_model, local_update
from fedms.selection import contribution_scores, selection_probabilities
from fedms.shapley import exact_class_shapley


def small(**kw):
    base = dict(
        num_rounds=4, total_clients=5, cohort_size=3, num_classes=3, per_class=40,
        test_per_class=40, dim=4, hidden="6", epochs=1, batch_size=16, engine="exact",
        mavericks="2:0", seed=3,
    )
    base.update(kw)
    cfg = ExperimentConfig(**base)
    cfg.validate()
    return cfg


def test_aggregate_weights_by_size():
    a, b = init_model([2, 2], 0), init_model([2, 2], 1)
    assert np.allclose(aggregate([a, b], [1, 3], [0, 1]).weights, 0.25 * a.weights + 0.75 * b.weights)
    assert np.array_equal(aggregate([a, b], [1, 3], [1]).weights, b.weights)
    with pytest.raises(ValueError):
        aggregate([a, b], [1, 3], [])


@pytest.mark.parametrize("strategy", ["fedms", "fedavg", "sfedavg", "fedemd", "fedprox", "greedyfed", "poc"])
@pytest.mark.parametrize("engine", ["exact", "gtg", "tmr"])
def test_every_strategy_replays_bit_for_bit(strategy, engine):
    cfg = small(strategy=strategy, engine=engine)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert len(a.records) == cfg.num_rounds
    assert all(x.same_as(y) for x, y in zip(a.records, b.records))
    for rec in a.records:
        assert set(rec.best_set) <= set(rec.cohort)
        assert len(set(rec.cohort)) == cfg.cohort_size
        assert abs(rec.beta.sum() - 1) <= 1e-9
        assert 0 <= rec.test_acc <= 1 and ((0 <= rec.val_class_acc) & (rec.val_class_acc <= 1)).all()
        assert sorted(rec.rewards) == list(rec.cohort)


def test_without_best_subset_aggregates_whole_cohort():
    for rec in run_experiment(small(aggregate_best_subset=False)).records:
        assert rec.best_set == rec.cohort


def test_baselines_aggregate_whole_cohort():
    for rec in run_experiment(small(strategy="fedavg")).records:
        assert rec.best_set == rec.cohort


def test_new_global_model_in_convex_hull():
    cfg = small(strategy="fedms")
    env = build_environment(cfg)
    sim = Simulation(cfg, env)
    g = init_model(env.layer_sizes, 0)
    for t in range(3):
        new, rec = sim.run_round(g, t)
        models = [
            local_update(g, env.clients[i], TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, 0.0,
                                                        stream_seed(cfg.seed, _BATCH, t, env.client_ids[i])))
            for i in rec.best_set
        ]
        w = np.stack([m.weights for m in models])
        assert (new.weights >= w.min(axis=0) - 1e-12).all() and (new.weights <= w.max(axis=0) + 1e-12).all()
        g = new


def test_loop_phi_matches_standalone_exact():
    cfg = small(strategy="fedavg", total_clients=3, cohort_size=3, mavericks="")
    env = build_environment(cfg)
    sim = Simulation(cfg, env)
    g = init_model(env.layer_sizes, 0)
    for t in range(3):
        tcs = [TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, 0.0,
                           stream_seed(cfg.seed, _BATCH, t, env.client_ids[i])) for i in range(3)]
        new, rec = sim.run_round(g, t)
        models = [local_update(g, env.clients[i], tcs[i]) for i in rec.cohort]
        alone, _ = exact_class_shapley(models, env.sizes[list(rec.cohort)], g, env.val)
        assert np.array_equal(alone.values, rec.phi)
        g = new


def test_zero_rounds_reports_initial_accuracy():
    rep = run_experiment(small(num_rounds=0))
    assert rep.records == [] and rep.final_test_acc == rep.initial_test_acc


def test_single_client_is_plain_training():
    cfg = small(strategy="fedavg", total_clients=1, cohort_size=1, mavericks="", num_rounds=1)
    env = build_environment(cfg)
    g = init_model(env.layer_sizes, 0)
    new, rec = Simulation(cfg, env).run_round(g, 0)
    tc = TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, 0.0, stream_seed(cfg.seed, _BATCH, 0, 0))
    assert np.array_equal(new.weights, local_update(g, env.clients[0], tc).weights)
    assert rec.cohort == (0,)


def test_identical_clients_get_uniform_probabilities():
    # full-batch training makes every client's update identical up to summation order
    cfg = small(strategy="fedms", total_clients=4, cohort_size=4, mavericks="", batch_size=1000)
    env = build_environment(cfg)
    env.clients = [env.clients[0]] * 4
    sim = Simulation(cfg, env)
    g = init_model(env.layer_sizes, 0)
    for t in range(4):
        g, _ = sim.run_round(g, t)
        p = selection_probabilities(contribution_scores(sim.state))
        assert np.allclose(p, 0.25, rtol=0, atol=1e-6)


def test_ablation_drops_mavericks_and_never_learns_their_class():
    cfg = small(strategy="fedms", num_rounds=15, mavericks="2:0", per_class=60, test_per_class=200, epochs=3)
    rep = ablation_without_mavericks(cfg)
    assert rep.num_clients == cfg.total_clients - 1 and 0 not in rep.client_ids
    assert max(r.val_class_acc[2] for r in rep.records) <= 0.1
    assert rep.records[-1].val_class_acc[:2].mean() >= 0.8


def test_ablation_needs_a_maverick():
    with pytest.raises(ValueError):
        ablation_without_mavericks(small(mavericks=""))


def test_summary_fields():
    rep = run_experiment(small())
    s = rep.summary()
    assert s["mavericks"] == [0] and len(s["cumulative_rewards"]) == 5
    assert s["final_test_acc"] == rep.records[-1].test_acc


def test_failed_round_carries_index():
    cfg = small()
    env = build_environment(cfg)
    sim = Simulation(cfg, env)
    g = init_model((9, 3), 0)  # wrong input width
    with pytest.raises(RoundFailed) as e:
        run_round(sim, g, 7)
    assert e.value.round_index == 7


def test_cohort_larger_than_pool_rejected():
    cfg = small(total_clients=3, cohort_size=3, mavericks="2:0")
    with pytest.raises(ValueError):
        run_experiment(cfg, drop_mavericks=True)
