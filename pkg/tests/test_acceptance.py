"""End-to-end acceptance checks, one test per criterion.

The slow criteria (5, 7, 10) share two 1000-episode training runs.
"""

import csv
import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import finite_difference, relative_error, transport_by_vertices
from poisonlab.attacker import AttackerParams, TransitionRecord, bellman_targets
from poisonlab.divergence import build_joint_chain, ground_matrix, klr, wasserstein1
from poisonlab.gridworld import GridSpec, GridWorld, default_env, transition_tensor
from poisonlab.harness import ExperimentConfig, evaluate, train, wilcoxon_signed_rank
from poisonlab.harness.archive import LOWER_IS_BETTER, load_slot, read_history
from poisonlab.metrics import acc
from poisonlab.nn import Mlp, gradients
from poisonlab.victim import Victim, VictimParams, default_target

SPEC = GridSpec()
COST = ground_matrix(SPEC)
FD_EPS = 1e-5


def random_distribution(rng, n=64, max_support=4):
    k = int(rng.integers(1, max_support + 1))
    support = rng.choice(n, k, replace=False)
    p = np.zeros(n)
    p[support] = rng.dirichlet(np.ones(k))
    return p, support


def random_joint_chain(rng):
    world = GridWorld(SPEC, rng.uniform(SPEC.h_lo, SPEC.h_hi, SPEC.n_cells))
    pi = rng.dirichlet(np.full(4, 0.5), size=SPEC.n_cells)
    q0 = rng.dirichlet(np.ones(SPEC.n_cells))
    return build_joint_chain(transition_tensor(world), pi, q0)


def test_criterion_1_ot_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(200):
        p, sp = random_distribution(rng)
        q, sq = random_distribution(rng)
        oracle = transport_by_vertices(p[sp], q[sq], COST[np.ix_(sp, sq)])
        worst = max(worst, abs(wasserstein1(p, q, COST) - oracle))
    elapsed = time.monotonic() - t0
    print(f"max |W1 - oracle| = {worst:.3e}, {elapsed:.2f} s")
    assert worst <= 1e-8
    assert elapsed < 10.0


def test_criterion_2_metric_axioms():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b, c = (rng.dirichlet(np.full(64, 0.3)) for _ in range(3))
        ab, ba = wasserstein1(a, b, COST), wasserstein1(b, a, COST)
        bc, ac = wasserstein1(b, c, COST), wasserstein1(a, c, COST)
        assert min(ab, bc, ac) >= -1e-8
        assert abs(ab - ba) <= 1e-8
        assert ac <= ab + bc + 1e-8
        assert abs(wasserstein1(a, a, COST)) <= 1e-8
    for _ in range(100):
        ch1, ch2 = random_joint_chain(rng), random_joint_chain(rng)
        assert abs(klr(ch1, ch1)) <= 1e-9
        assert klr(ch1, ch2) >= -1e-9


ARCHITECTURES = {
    "actor": ([21, 400, 300, 16], ["relu", "relu", "tanh"]),
    "critic": ([37, 400, 300, 1], ["relu", "relu", "identity"]),
    "encoder": ([16, 36, 36, 5], ["relu", "relu", "identity"]),
    "decoder": ([7, 36, 36, 4], ["relu", "relu", "softmax"]),
}


def worst_gradient_error(dims, acts, seed, per_tensor):
    rng = np.random.default_rng(seed)
    net = Mlp(dims, acts, rng)
    x = rng.normal(size=dims[0])
    up = rng.normal(size=dims[-1])
    grads, gx = gradients(net, x, up)

    def objective():
        return float(np.sum(net.forward(x) * up))

    worst = 0.0
    for p, g in zip(net.params, grads):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        idx = np.arange(flat_p.size)
        if flat_p.size > per_tensor:
            idx = rng.choice(flat_p.size, per_tensor, replace=False)
        for i in idx:
            old = flat_p[i]
            flat_p[i] = old + FD_EPS
            hi = objective()
            flat_p[i] = old - FD_EPS
            lo = objective()
            flat_p[i] = old
            worst = max(worst, float(relative_error(flat_g[i], (hi - lo) / (2 * FD_EPS))))
    worst = max(worst, float(relative_error(gx, finite_difference(objective, x, FD_EPS)).max()))
    return worst


def test_criterion_3_gradient_checks():
    t0 = time.monotonic()
    worst = {}
    for name, (dims, acts) in ARCHITECTURES.items():
        # the two 400-wide networks have 1e5+ weights, so each tensor is sampled
        per_tensor = 40 if dims[1] >= 400 else 10**9
        worst[name] = max(worst_gradient_error(dims, acts, s, per_tensor) for s in range(10))
    elapsed = time.monotonic() - t0
    print(f"worst relative errors {worst}, {elapsed:.1f} s")
    assert all(v < 1e-4 for v in worst.values())
    assert elapsed < 30.0


def test_criterion_4_per_transition_gamma():
    rng = np.random.default_rng(3)
    actor = Mlp([21, 400, 300, 16], ["relu", "relu", "tanh"], rng)
    critic = Mlp([37, 400, 300, 1], ["relu", "relu", "identity"], rng)
    gammas = np.array([0.80, 0.85, 0.90, 0.99])
    rewards = np.array([0.0, 0.25, 0.5, 1.0])
    batch = [TransitionRecord(rng.normal(size=21), rng.uniform(-1, 1, 16), float(r),
                              rng.normal(size=21), float(g), False)
             for r, g in zip(rewards, gammas)]
    x_next = np.stack([rec.x_next for rec in batch])
    q_next = critic.forward(np.hstack([x_next, actor.forward(x_next)]))[:, 0]
    y = bellman_targets(batch, critic, actor)
    assert np.array_equal(y, rewards + gammas * q_next)
    # a different gamma on any single record changes only that target
    assert len(set(np.round(y - rewards - 0.9 * q_next, 12))) == 4


def test_criterion_6_victim_sanity():
    t0 = time.monotonic()
    target = default_target(SPEC)
    world = default_env()
    shortest = 0
    for seed in (0, 7, 16, 25):
        victim = Victim(SPEC, VictimParams(), seed)
        bout_acc = []
        for _ in range(2000 // victim.params.episodes_per_step):
            _, policy = victim.observe(world)
            bout_acc.append(acc(policy, target))
        path = victim.greedy_path(world)
        steps_ok = all(SPEC.manhattan(b, SPEC.goal) == SPEC.manhattan(a, SPEC.goal) - 1
                       for a, b in zip(path[:-1], path[1:]))
        if path[-1] == SPEC.goal and steps_ok:
            shortest += 1
        print(f"seed {seed}: path {path}, mean unattacked @Acc {np.mean(bout_acc):.3f}")
        assert np.mean(bout_acc) < 0.3
    elapsed = time.monotonic() - t0
    assert shortest >= 3
    assert elapsed < 120.0


def test_criterion_8_wilcoxon_exactness():
    a = np.arange(1, 21, dtype=float)
    w, p = wilcoxon_signed_rank(a, np.zeros(20), "greater")
    assert w == 210.0
    assert f"{p:.5e}" == "9.53674e-07"
    w, p = wilcoxon_signed_rank(-a, np.zeros(20), "less")
    assert w == 0.0
    assert f"{p:.5e}" == "9.53674e-07"


def test_criterion_9_determinism(pretrained_codec, tmp_path):
    _, codec_dir = pretrained_codec
    params = AttackerParams(warmup_episodes=2)
    paths = []
    for name in ("a", "b"):
        cfg = ExperimentConfig(episodes=6, attacker=params, codec_dir=str(codec_dir),
                               out_dir=str(tmp_path / name))
        _, metrics = train(cfg)
        paths.append(metrics)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["updates"] > 0
    assert filecmp.cmp(paths[0], paths[1], shallow=False)


@pytest.fixture(scope="module")
def training_runs(pretrained_codec, tmp_path_factory):
    """Full-length WD and KLR runs for seed 0, plus the WD evaluation."""
    codec, codec_dir = pretrained_codec
    base = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for variant in ("wd", "klr"):
        cfg = ExperimentConfig(codec_dir=str(codec_dir), out_dir=str(base / variant),
                               seed=0).with_discount(variant)
        t0 = time.monotonic()
        train(cfg, codec)
        report = None
        if variant == "wd":
            report = evaluate(cfg, load_slot(base / variant / "archive", "acc", "mean"), codec)
            (base / variant / "eval.json").write_text(report.to_json())
        runs[variant] = (cfg, base / variant, report, time.monotonic() - t0)
    return runs


def _logged_gammas(run_dir):
    with open(run_dir / "divergence_debug.jsonl") as fh:
        debug = [json.loads(line)["gamma"] for line in fh]
    with open(run_dir / "metrics.csv", newline="") as fh:
        logged = [float(r["gamma"]) for r in csv.DictReader(fh) if r["attack_step"] != "0"]
    assert len(debug) == len(logged) > 0
    return np.array(logged + debug)


@pytest.mark.slow
def test_criterion_5_discount_ranges(training_runs):
    for variant, (lo, hi) in (("wd", (0.80, 0.99)), ("klr", (0.90, 0.99))):
        gammas = _logged_gammas(training_runs[variant][1])
        violations = int(np.sum((gammas < lo) | (gammas > hi)))
        print(f"{variant}: {len(gammas) // 2} gammas in [{gammas.min():.4f}, {gammas.max():.4f}], "
              f"{violations} violations")
        assert violations == 0


@pytest.mark.slow
def test_criterion_7_attack_efficacy(training_runs, pretrained_codec):
    cfg, run_dir, report, elapsed = training_runs["wd"]
    elapsed += float((pretrained_codec[1] / "pretrain_seconds.txt").read_text())
    same = report.summary["same"]
    efforts = [e for t in report.traces for e in t["effort"]]
    with open(run_dir / "metrics.csv", newline="") as fh:
        efforts += [float(r["effort"]) for r in csv.DictReader(fh) if r["attack_step"] != "0"]
    print(f"same-seed test @Acc {same['test_acc']:.3f} (finals {same['final_acc']}), "
          f"different-seed {report.summary['different']['test_acc']:.3f}, "
          f"max @Effort {max(efforts):.3f}, {elapsed / 60:.1f} min")
    assert max(efforts) <= 1.0
    assert elapsed < 45 * 60
    assert same["test_acc"] >= 0.5


@pytest.mark.slow
def test_criterion_10_archive_monotonicity(training_runs):
    for variant in ("wd", "klr"):
        run_dir = training_runs[variant][1]
        rows = read_history(run_dir / "archive_history.csv")
        last = {}
        for r in rows:
            key = (r["criterion"], r["aggregation"])
            if key in last:
                if r["criterion"] in LOWER_IS_BETTER:
                    assert r["best_value"] <= last[key]
                else:
                    assert r["best_value"] >= last[key]
            last[key] = r["best_value"]
        assert len(last) == 33
        for (c, a), best in last.items():
            meta = json.loads((run_dir / "archive" / f"{c}_{a}" / "slot.json").read_text())
            assert meta["value"] == best
