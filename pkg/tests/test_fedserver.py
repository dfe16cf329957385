import copy
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab import fedserver as F
from trafficlab.agent import Hyperparams, Transition
from trafficlab.tensorlite import GradientSet


def brute_force(grads, masks):
    n = len(next(iter(grads.values())))
    out = np.zeros(n)
    for j in range(n):
        num = sum(grads[c][j] for c in grads)
        den = sum(masks[c][j] for c in masks)
        out[j] = num / den if den else 0.0
    return out


def random_round(rng, n_clients, size):
    masks = {c: (rng.random(size) < rng.uniform(0.2, 0.9)).astype(float) for c in range(n_clients)}
    grads = {c: rng.normal(size=size) * masks[c] for c in masks}
    return grads, masks


# -- provisioning ------------------------------------------------------------

def test_single_unpruned_client_equals_base():
    prov = F.provision(1)
    actor, critic = prov.models[0]
    for p, q in zip(actor.params + critic.params, prov.base_actor.params + prov.base_critic.params):
        np.testing.assert_array_equal(p, q)


def test_three_clients_equal_counts_different_supports():
    prov = F.provision(3, (0.2, 0.4))
    counts = {tuple(int(m.sum()) for m in a.mask) for a, _ in prov.models}
    assert len(counts) == 1
    supports = [a.flat_mask() for a, _ in prov.models]
    for x, y in itertools.combinations(supports, 2):
        assert not np.array_equal(x, y)
    # each client holds base params under its own mask
    for a, _ in prov.models:
        np.testing.assert_array_equal(a.flat_params(), prov.base_actor.flat_params() * a.flat_mask())


def test_provision_deterministic():
    a, b = F.provision(3, (0.2, 0.4), base_seed=5), F.provision(3, (0.2, 0.4), base_seed=5)
    for (x1, x2), (y1, y2) in zip(a.models, b.models):
        assert x1.to_bytes() == y1.to_bytes() and x2.to_bytes() == y2.to_bytes()


def test_provision_rejects_zero_clients():
    with pytest.raises(ValueError):
        F.provision(0)


def test_registry_masks_immutable_and_shapes_checked():
    prov = F.provision(2, (0.2, 0.4))
    info = prov.registry.clients[0]
    with pytest.raises(ValueError):
        info.mask[0] = 0
    with pytest.raises(ValueError):
        prov.registry.register(F.ClientInfo(9, np.ones(3), ((1, 1),), ((1, 1),)))


# -- aggregation -------------------------------------------------------------

def test_single_client_identity():
    g = np.random.default_rng(0).normal(size=20)
    np.testing.assert_array_equal(F.aggregate_gradients({0: g}, {0: np.ones(20)}), g)


def test_two_clients_mean():
    g = np.random.default_rng(1).normal(size=10)
    out = F.aggregate_gradients({0: g, 1: 3 * g}, {0: np.ones(10), 1: np.ones(10)})
    np.testing.assert_allclose(out, 2 * g, rtol=1e-15)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), size=st.integers(1, 40))
def test_aggregation_matches_brute_force(seed, n, size):
    grads, masks = random_round(np.random.default_rng(seed), n, size)
    np.testing.assert_allclose(F.aggregate_gradients(grads, masks), brute_force(grads, masks),
                               rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_aggregation_independent_of_arrival_order(seed, n):
    rng = np.random.default_rng(seed)
    grads, masks = random_round(rng, n, 30)
    ref = F.aggregate_gradients(grads, masks)
    order = rng.permutation(n)
    shuffled = {int(c): grads[int(c)] for c in order}
    np.testing.assert_array_equal(F.aggregate_gradients(shuffled, {int(c): masks[int(c)] for c in order}), ref)


def test_zero_denominator_yields_zero():
    masks = {0: np.array([1.0, 0.0, 1.0]), 1: np.array([0.0, 0.0, 1.0])}
    grads = {0: np.array([2.0, 0.0, 1.0]), 1: np.array([0.0, 0.0, 3.0])}
    np.testing.assert_array_equal(F.aggregate_gradients(grads, masks), [2.0, 0.0, 2.0])


def test_mask_violation_is_client_fault():
    with pytest.raises(F.ClientFault) as info:
        F.aggregate_gradients({0: np.ones(3), 4: np.array([1.0, 1.0, 0.5])},
                              {0: np.ones(3), 4: np.array([1.0, 1.0, 0.0])})
    assert info.value.client_id == 4
    with pytest.raises(F.ClientFault):
        F.aggregate_gradients({0: np.ones(3)}, {0: np.ones(4)})


def test_incomplete_round_refused():
    prov = F.provision(2)
    rnd = F.Round(0, frozenset(prov.registry.ids))
    rnd.submit(0, GradientSet(np.zeros(prov.registry.clients[0].mask.size), 0))
    with pytest.raises(F.IncompleteRound):
        F.aggregate(rnd, prov.registry)
    assert rnd.missing == [1]


def test_round_rejects_duplicates_and_strangers():
    rnd = F.Round(0, frozenset({0, 1}))
    rnd.submit(0, GradientSet(np.zeros(2), 0))
    with pytest.raises(F.ClientFault):
        rnd.submit(0, GradientSet(np.zeros(2), 0))
    with pytest.raises(F.ClientFault):
        rnd.submit(7, GradientSet(np.zeros(2), 7))


# -- applying ----------------------------------------------------------------

def agents(n=1, rates=(0.0, 0.0), **hp):
    prov = F.provision(n, rates, base_seed=3)
    return prov, F.make_agents(prov, Hyperparams(**hp), seed=1)


def flat(agent):
    return np.concatenate([agent.actor.flat_params(), agent.critic.flat_params()])


def test_apply_zero_gradient_only_advances_step():
    _, (ag,) = agents()
    before = flat(ag)
    F.apply_aggregated(ag, np.zeros(before.size))
    np.testing.assert_array_equal(flat(ag), before)
    assert ag.actor.step == 1 and ag.critic.step == 1


def test_apply_keeps_pruned_zero():
    prov, ags = agents(2, (0.3, 0.5))
    rng = np.random.default_rng(0)
    for ag in ags:
        for _ in range(5):
            F.apply_aggregated(ag, rng.normal(size=flat(ag).size))
        assert np.all(flat(ag)[ag.mask_vector == 0] == 0)


def test_apply_shape_mismatch():
    _, (ag,) = agents()
    with pytest.raises(ValueError):
        F.apply_aggregated(ag, np.zeros(10))


def test_local_then_aggregated_matches_two_step_adam():
    # equal gradients g twice: both bias-corrected steps equal -lr * g / (|g| + eps)
    prov, (ag,) = agents()
    server = F.FedServer(prov.registry)
    theta0 = flat(ag)
    rng = np.random.default_rng(4)
    for _ in range(5):
        ag.remember(Transition(rng.normal(size=13), 1, 2, -1.0, rng.normal(size=13), -np.log(8)))
    g = copy.deepcopy(ag).train_on_batch().gradient.vector
    F.run_round([ag], server)
    n_a = ag.actor.size
    lr = np.concatenate([np.full(n_a, ag.hp.lr_actor), np.full(g.size - n_a, ag.hp.lr_critic)])
    expected = theta0 - 2 * lr * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(flat(ag), expected, rtol=1e-10, atol=1e-12)


# -- rounds ------------------------------------------------------------------

def fill(ags, rng):
    for ag in ags:
        for _ in range(ag.hp.batch_size):
            ag.remember(Transition(rng.normal(size=13), int(rng.integers(8)), int(rng.integers(8)),
                                   float(rng.normal()), rng.normal(size=13), float(-np.log(8))))


def test_round_ids_strictly_increase():
    prov, ags = agents(3, (0.2, 0.4))
    server = F.FedServer(prov.registry)
    runner = F.RoundRunner(server, parallel=True, timeout=10)
    rng = np.random.default_rng(0)
    ids = []
    try:
        for _ in range(4):
            fill(ags, rng)
            ids.append(runner.run_round(ags))
    finally:
        runner.close()
    assert ids == [0, 1, 2, 3]
    assert [r.round_id for r in server.log] == ids


def test_stalled_client_times_out():
    prov, ags = agents(3)
    server = F.FedServer(prov.registry)
    size = prov.registry.clients[0].mask.size
    server.submit(0, GradientSet(np.zeros(size), 0))
    server.submit(2, GradientSet(np.zeros(size), 2))
    with pytest.raises(F.RoundTimeout) as info:
        server.wait(0, timeout=0.05)
    assert info.value.round_id == 0 and info.value.missing == (1,)
    assert "round 0" in str(info.value) and "[1]" in str(info.value)


def test_stale_round_submission_rejected():
    prov, _ = agents(1)
    server = F.FedServer(prov.registry)
    with pytest.raises(F.ClientFault):
        server.submit(0, GradientSet(np.zeros(prov.registry.clients[0].mask.size), 0), round_id=3)


def sequential_oracle(ags, batches):
    """Straight-line replay: train each client, aggregate by formula, apply."""
    masks = {ag.client_id: ag.mask_vector for ag in ags}
    for rnd in batches:
        grads = {}
        for ag, batch in zip(ags, rnd):
            for t in batch:
                ag.remember(t)
            grads[ag.client_id] = ag.train_on_batch().gradient.vector
        agg = F.aggregate_gradients(grads, masks)
        for ag in ags:
            ag.apply_aggregated(agg)


def test_threaded_rounds_match_sequential_replay():
    rng = np.random.default_rng(8)
    recorded = []
    for _ in range(20):
        recorded.append([[Transition(rng.normal(size=13), int(rng.integers(8)), int(rng.integers(8)),
                                     float(rng.normal()), rng.normal(size=13), float(-np.log(8)))
                          for _ in range(5)] for _ in range(3)])
    prov, threaded = agents(3, (0.2, 0.4))
    _, oracle = agents(3, (0.2, 0.4))
    server = F.FedServer(prov.registry)
    runner = F.RoundRunner(server, parallel=True, timeout=10)
    try:
        for rnd in recorded:
            for ag, batch in zip(threaded, rnd):
                for t in batch:
                    ag.remember(t)
            runner.run_round(threaded)
    finally:
        runner.close()
    sequential_oracle(oracle, recorded)
    for a, b in zip(threaded, oracle):
        assert a.to_bytes() == b.to_bytes()
        np.testing.assert_array_equal(flat(a), flat(b))


def test_homogeneous_full_masks_reduce_to_mean():
    rng = np.random.default_rng(2)
    grads = {c: rng.normal(size=25) for c in range(5)}
    out = F.aggregate_gradients(grads, {c: np.ones(25) for c in grads})
    np.testing.assert_allclose(out, np.mean(list(grads.values()), axis=0), rtol=1e-12)


def test_round_log_csv(tmp_path):
    prov, ags = agents(2, (0.2, 0.4))
    server = F.FedServer(prov.registry)
    fill(ags, np.random.default_rng(0))
    F.run_round(ags, server)
    path = tmp_path / "rounds.csv"
    server.write_log(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,client_norms,aggregated_norm,bytes_exchanged"
    rid, norms, agg, nbytes = lines[1].split(",")
    assert rid == "0" and len(norms.split(";")) == 2 and float(agg) > 0
    kept = sum(int(prov.registry.clients[c].mask.sum()) for c in (0, 1))
    assert int(nbytes) == 2 * 4 * kept
