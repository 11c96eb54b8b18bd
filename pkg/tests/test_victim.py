import numpy as np
import pytest

from poisonlab.gridworld import GridSpec, default_env, transition_tensor
from poisonlab.victim import (
    NO_ACTION, BehaviorTrace, PolicyEstimate, TargetSpec, Victim, VictimParams, default_target,
    make_target_policy, softmax_action, softmax_probs, target_path, td_update, train_and_trace,
)


def test_softmax_probs():
    assert np.allclose(softmax_probs(np.zeros(4), 1.0), 0.25)
    p = softmax_probs(np.array([1.0, 0, 0, 0]), 1.0)
    assert np.allclose(p, [0.4754, 0.1749, 0.1749, 0.1749], atol=1e-4)
    assert softmax_probs(np.array([1.0, 0, 0, 0]), 1e-3)[0] == pytest.approx(1.0)


def test_softmax_action_frequencies():
    rng = np.random.default_rng(0)
    q = np.array([[1.0, 0, 0, 0]])
    draws = [softmax_action(q, 0, 1.0, rng) for _ in range(4000)]
    assert np.mean(np.array(draws) == 0) == pytest.approx(0.4754, abs=0.03)


def test_td_update_examples():
    p = VictimParams()
    q = np.zeros((2, 4))
    td_update(q, 0, 1, -1.0, 1, False, p)
    assert q[0, 1] == pytest.approx(-0.1)
    frozen = np.zeros((2, 4))
    td_update(frozen, 0, 0, -1.0, 1, False, VictimParams(alpha=0.0))
    assert np.all(frozen == 0)
    fixed = np.zeros((2, 4))
    fixed[1] = [2.0, 1.0, 0.0, 0.0]
    fixed[0, 0] = 0.9 * 2.0
    before = fixed.copy()
    td_update(fixed, 0, 0, 0.0, 1, False, p)
    assert np.allclose(fixed, before)


def test_terminal_bootstrap_is_zero():
    q = np.zeros((2, 4))
    q[1] = 100.0
    td_update(q, 0, 0, -1.0, 1, True, VictimParams())
    assert q[0, 0] == pytest.approx(-0.1)


def test_zero_episodes_leaves_everything_blank():
    q = np.zeros((16, 4))
    _, tr, pol = train_and_trace(default_env(), q, VictimParams(), np.random.default_rng(0), n_episodes=0)
    assert np.all(tr.symbols == NO_ACTION)
    assert np.allclose(pol.probs, 0.25)
    assert np.all(q == 0)


def test_trace_and_policy_consistency():
    q = np.zeros((16, 4))
    params = VictimParams()
    _, tr, pol = train_and_trace(default_env(), q, params, np.random.default_rng(2))
    visited = tr.visited
    assert visited[GridSpec().start]
    assert np.allclose(pol.probs.sum(axis=1), 1.0)
    assert np.allclose(pol.probs[~visited], 0.25)
    # visited rows are multiples of 1/h
    scaled = pol.probs[visited] * params.history
    counts_ok = np.isclose(scaled, np.round(scaled)) | np.isclose(pol.probs[visited] * np.round(1 / pol.probs[visited].clip(1e-9)), 1)
    assert counts_ok.all()
    # the last recorded action is part of the recent history
    for s in np.flatnonzero(visited):
        assert pol.probs[s, tr.symbols[s]] > 0


def test_jit_matches_python_kernel():
    w = default_env()
    params = VictimParams()
    q1, q2 = np.zeros((16, 4)), np.zeros((16, 4))
    _, t1, p1 = train_and_trace(w, q1, params, np.random.default_rng(4))
    _, t2, p2 = train_and_trace(w, q2, params, np.random.default_rng(4), use_jit=False)
    assert np.array_equal(q1, q2)
    assert np.array_equal(t1.symbols, t2.symbols)
    assert np.array_equal(p1.probs, p2.probs)


def test_seeded_victim_is_deterministic():
    a = Victim(GridSpec(), VictimParams(), 11).observe(default_env())
    b = Victim(GridSpec(), VictimParams(), 11).observe(default_env())
    assert np.array_equal(a[0].symbols, b[0].symbols)
    assert np.array_equal(a[1].probs, b[1].probs)


def _value_iteration(T, goal, gamma=0.9, reward=-1.0):
    m = T.shape[0]
    v = np.zeros(m)
    for _ in range(2000):
        q = reward + gamma * np.einsum("sat,t->sa", T, np.where(np.arange(m) == goal, 0.0, v))
        v_new = q.max(axis=1)
        v_new[goal] = 0.0
        if np.max(np.abs(v_new - v)) < 1e-12:
            break
        v = v_new
    return q


def test_trained_victim_follows_shortest_path():
    spec = GridSpec()
    w = default_env()
    q_opt = _value_iteration(transition_tensor(w), spec.goal)
    v = Victim(spec, VictimParams(), 0)
    for _ in range(25):  # 2000 episodes
        v.observe(w)
    path = v.greedy_path(w)
    assert path[-1] == spec.goal
    assert len(path) - 1 == spec.manhattan(spec.start, spec.goal)
    for a, b in zip(path[:-1], path[1:]):
        assert spec.manhattan(b, spec.goal) == spec.manhattan(a, spec.goal) - 1
    # oracle: the optimal policy of the known MDP also takes a Manhattan-shortest route
    s, steps = spec.start, 0
    while s != spec.goal and steps < 16:
        s = int(np.argmax(transition_tensor(w)[s, int(np.argmax(q_opt[s]))]))
        steps += 1
    assert steps == spec.manhattan(spec.start, spec.goal)


def test_make_target_policy():
    target = TargetSpec((0, 1), (1, 2))
    pol = PolicyEstimate(np.full((16, 4), 0.25))
    tr = BehaviorTrace.empty(16)
    pstar, tstar = make_target_policy(pol, tr, target)
    assert np.array_equal(pstar.probs[0], [0, 1, 0, 0])
    assert np.array_equal(pstar.probs[1], [0, 0, 1, 0])
    assert np.allclose(pstar.probs[2:], 0.25)
    assert list(tstar.symbols[:2]) == [1, 2]
    same_p, same_t = make_target_policy(pol, tr, TargetSpec((), ()))
    assert np.array_equal(same_p.probs, pol.probs)
    assert np.array_equal(same_t.symbols, tr.symbols)


def test_default_target_path():
    spec = GridSpec()
    target = default_target(spec)
    path = target_path(spec, target)
    assert len(path) - 1 == 3 * spec.manhattan(spec.start, spec.goal)
    assert path[0] == spec.start and path[-1] == spec.goal
    assert len(set(path)) == len(path)
    for a, b, act in zip(path[:-1], path[1:], target.actions):
        assert spec.neighbour(a, act) == b


def test_default_target_infeasible():
    with pytest.raises(ValueError):
        default_target(GridSpec(width=2, height=1, start=0, goal=1))


def test_trace_and_policy_serialization():
    tr = BehaviorTrace.parse("NSEW-" + "-" * 11)
    assert str(tr) == "NSEW-" + "-" * 11
    assert list(tr.symbols[:5]) == [0, 1, 2, 3, NO_ACTION]
    pol = PolicyEstimate(np.random.default_rng(0).dirichlet(np.ones(4), size=16))
    assert np.array_equal(PolicyEstimate.from_csv(pol.to_csv()).probs, pol.probs)
