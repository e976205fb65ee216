"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

The two trend checks (ordering across algorithms, fine-tuning gain under
heterogeneity) run the full desk-scale protocol and take a couple of minutes
combined; everything else is fast.
"""
import itertools
import time
from dataclasses import replace

import numpy as np

from fedme import baselines, engine, nn
from fedme.baselines import TrainingParams
from fedme.clustering import kmeans
from fedme.data import Dataset, UnlabeledPool, split_shard
from fedme.engine import (ClientState, FedMeConfig,
                          RoundOverrides, assign_exchanges, derive_seed)
from fedme.harness import ExperimentConfig, run_experiment, validate_config
from fedme.nn import ArchitectureSpec, Model


def _report(name, ok):
    print(f"criterion {name}: {'PASS' if ok else 'FAIL'}")
    assert ok


# ---------------------------------------------------------------- criterion 1

def _kink_free(model, x, margin=1e-3):
    """Central differences are invalid where a relu unit sits at its kink, so
    sampled cases must keep every hidden pre-activation away from zero."""
    if model.arch.activation != "relu":
        return True
    _, _, zs = nn._forward_cached(model, x)
    return all(np.min(np.abs(z)) > margin for z in zs[:-1])


def test_criterion_1_gradient_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    eps = 1e-5
    worst = 0.0
    for case in range(50):
        layers = tuple(int(w) for w in rng.integers(1, 4, size=rng.integers(1, 3)))
        arch_p = ArchitectureSpec(int(rng.integers(2, 5)), layers,
                                  int(rng.integers(2, 4)),
                                  ("relu", "tanh")[case % 2])
        arch_ex = ArchitectureSpec(arch_p.input_dim,
                                   tuple(int(w) for w in rng.integers(1, 4, size=1)),
                                   arch_p.num_classes)
        assert arch_p.parameter_count() <= 200
        model_p = nn.init_model(arch_p, case)
        model_ex = nn.init_model(arch_ex, case + 1000)
        while True:
            x = rng.normal(size=(int(rng.integers(2, 7)), arch_p.input_dim))
            if _kink_free(model_p, x) and _kink_free(model_ex, x):
                break
        y = rng.integers(0, arch_p.num_classes, size=len(x))
        _, _, g_p, g_ex = nn.dml_losses_and_grads(model_p, model_ex, x, y)

        def loss(params, which):
            p = Model(arch_p, params) if which == "p" else model_p
            e = Model(arch_ex, params) if which == "ex" else model_ex
            probs_p, probs_ex = nn.forward(p, x), nn.forward(e, x)
            if which == "p":
                return nn.cross_entropy(probs_p, y) + nn.kl_divergence(probs_ex, probs_p)
            return nn.cross_entropy(probs_ex, y) + nn.kl_divergence(probs_p, probs_ex)

        for grad, model, which in ((g_p, model_p, "p"), (g_ex, model_ex, "ex")):
            fd = np.zeros_like(grad)
            for j in range(len(grad)):
                up, down = model.params.copy(), model.params.copy()
                up[j] += eps
                down[j] -= eps
                fd[j] = (loss(up, which) - loss(down, which)) / (2 * eps)
            scale = np.maximum(np.abs(grad) + np.abs(fd), 1e-8)
            worst = max(worst, float(np.max(np.abs(grad - fd) / scale)))
    elapsed = time.perf_counter() - start
    _report("1 (gradient oracle)", worst < 1e-4 and elapsed < 30.0)


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_loss_identities():
    rng = np.random.default_rng(2)
    ok = True
    for m in (2, 3, 5):
        p = rng.dirichlet(np.ones(m), size=8)
        ok &= abs(nn.kl_divergence(p, p)) <= 1e-12
        uniform = np.full((8, m), 1.0 / m)
        labels = rng.integers(0, m, size=8)
        ok &= abs(nn.cross_entropy(uniform, labels) - np.log(m)) <= 1e-9
    pairs = rng.dirichlet(np.ones(4), size=(10_000, 2))
    for p, q in pairs:
        ok &= nn.kl_divergence(p[None], q[None]) >= -1e-12
    _report("2 (loss identities)", bool(ok))


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_aggregation_exactness():
    arch = ArchitectureSpec(1, (1,), 2)
    rng = np.random.default_rng(3)
    ok = True
    for trial in range(10):
        assignments = rng.integers(0, rng.integers(1, 4), size=10)
        plan = assign_exchanges(assignments, trial + 1, seed=trial)
        states = []
        for i in range(10):
            state = ClientState(i, None, Model(arch, rng.normal(size=6)))
            states.append(state)
        for i in range(10):
            # a trained exchanged copy of the donor's lineage
            states[i].exchanged = Model(arch, rng.normal(size=6))
            states[i].exchange_origin = plan.donor[i]
        agg = engine.aggregate(states, plan)
        s = {i: sum(1 for j in range(10) if plan.donor[j] == i) for i in range(10)}
        ok &= sum(s.values()) == 10
        for i in range(10):
            copies = [states[i].personalized.params]
            copies += [states[j].exchanged.params for j in range(10)
                       if plan.donor[j] == i]
            ok &= len(copies) == s[i] + 1
            ok &= bool(np.max(np.abs(agg[i].params -
                                     np.mean(copies, axis=0))) <= 1e-12)
    _report("3 (aggregation exactness)", bool(ok))


# ------------------------------------------------------- shared run fixtures

def _shards_and_pool(num_clients=5, rows_each=30, seed=0):
    rng = np.random.default_rng(seed)
    n = num_clients * rows_each
    centers = np.array([[2.0, 0.0], [-2.0, 0.0]])
    labels = rng.integers(0, 2, size=n)
    ds = Dataset(centers[labels] + rng.normal(size=(n, 2)), labels, 2)
    shards = [split_shard(ds, np.arange(i * rows_each, (i + 1) * rows_each), i,
                          seed=derive_seed(seed, engine.TAG_SPLIT, i))
              for i in range(num_clients)]
    pool = UnlabeledPool(rng.normal(size=(40, 2)))
    return shards, pool


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_tuning_rule_conformance():
    shards, pool = _shards_and_pool()
    arch = ArchitectureSpec(2, (4,), 2)
    config = FedMeConfig(rounds=6, lr=0.05, seed=5)
    _, records = engine.run_fedme(shards, [arch] * 5, pool, config)
    violations = 0
    for r in records:
        expected = r.client if r.loss_p_val <= r.loss_ex_val else r.donor
        if r.a != expected:
            violations += 1
    tie_ok = engine.model_tuning(0.25, 0.25, client_id=1, exchange_origin=4) == 1
    _report("4 (tuning rule conformance)", violations == 0 and tie_ok)


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_running_example_trace():
    donors = {1: {0: 2, 1: 3, 2: 0, 3: 4, 4: 1},
              2: {0: 2, 1: 3, 2: 0, 3: 1, 4: 3}}
    clusters = {1: np.zeros(5, dtype=int), 2: np.array([0, 1, 0, 1, 1])}
    selections = {1: {0: 2, 1: 1, 2: 2, 3: 3, 4: 1},
                  2: {0: 0, 1: 3, 2: 2, 3: 3, 4: 3}}
    overrides = RoundOverrides(
        clusters=lambda t, n: clusters[t],
        donors=lambda t, a: donors[t],
        selections=lambda t, i, lp, lex: selections[t][i])
    shards, pool = _shards_and_pool()
    arch = ArchitectureSpec(2, (4,), 2)
    states, records = engine.run_fedme(shards, [arch] * 5, pool,
                                       FedMeConfig(rounds=2, lr=0.05, seed=9),
                                       overrides)
    ok = all(r.donor == donors[r.round][r.client] and
             r.a == selections[r.round][r.client] for r in records)
    # round-1 aggregation pairs: lineage 0 gathers {own copy, client 2's
    # exchanged copy}, and every lineage has exactly one borrower
    receivers = {i: [j for j in range(5) if donors[1][j] == i] for i in range(5)}
    ok &= receivers == {0: [2], 1: [4], 2: [0], 3: [1], 4: [3]}
    # round-2 redistribution (0, 3, 2, 3, 3): clients 1, 3 and 4 share a model
    ok &= np.array_equal(states[1].personalized.params,
                         states[3].personalized.params)
    ok &= np.array_equal(states[3].personalized.params,
                         states[4].personalized.params)
    _report("5 (running-example trace)", bool(ok))


# ---------------------------------------------------------------- criterion 6

def _best_partition_inertia(points, k):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(points)):
        if len(set(labels)) < k:
            continue
        labels = np.array(labels)
        total = 0.0
        for j in range(k):
            members = points[labels == j]
            total += ((members - members.mean(axis=0)) ** 2).sum()
        best = min(best, total)
    return best


def test_criterion_6_kmeans_oracle():
    rng = np.random.default_rng(6)
    ok = True
    for trial in range(30):
        k = int(rng.integers(2, 4))
        pts = rng.normal(size=(int(rng.integers(k + 1, 9)), 2))
        _, inertia = kmeans(pts, k, seed=trial, restarts=20)
        ok &= abs(inertia - _best_partition_inertia(pts, k)) <= 1e-9
    _report("6 (k-means oracle)", bool(ok))


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_degeneracy_equivalences():
    shards, pool = _shards_and_pool()
    arch = ArchitectureSpec(2, (4,), 2)
    stub = FedMeConfig(rounds=5, lr=0.05, tuning=False, dml=False,
                       clustering=False, exchange=False, seed=3)
    states, _ = engine.run_fedme(shards, [arch] * 5, pool, stub)
    params = TrainingParams(rounds=5, epochs=2, lr=0.05, seed=3)
    local_models, _ = baselines.run_local_only(shards, [arch] * 5, params)
    a_ok = all(np.array_equal(s.personalized.params, m.params)
               for s, m in zip(states, local_models))

    one = [shards[0]]
    avg_model, _ = baselines.run_fedavg(one, arch, params)
    cent_model, _ = baselines.run_centralized(one, arch, params)
    b_ok = np.array_equal(avg_model.params, cent_model.params)
    _report("7 (degeneracy equivalences)", a_ok and b_ok)


# ---------------------------------------------------- desk-scale trend runs

def _trend_config(algorithm):
    return validate_config(ExperimentConfig(
        algorithm=algorithm, num_clients=20, rounds=50, epochs=2,
        num_classes=4, dim=16, per_class_count=375, class_separation=3.0,
        noise_sigma=1.5, alpha_label=0.5, alpha_size=10.0, lr=0.05,
        weight_decay=1e-3, model_menu=((8,), (8, 8), (8, 8, 8), (8, 8, 8, 8)),
        cluster_thresholds=(25, 38, 46), fine_tune_epochs=10, repeats=5,
        seed=0))


def test_criterion_8_trend_reproduction():
    start = time.perf_counter()
    cent = run_experiment(_trend_config("centralized")).mean
    fedme_acc = run_experiment(_trend_config("fedme")).mean
    local = run_experiment(
        replace(_trend_config("local_only"), fine_tune_epochs=0)).mean
    elapsed = time.perf_counter() - start
    print(f"  centralized+FT {cent:.4f}, fedme+FT {fedme_acc:.4f}, "
          f"local-only {local:.4f} ({elapsed:.0f}s)")
    ok = (cent >= fedme_acc > local
          and fedme_acc - local >= 0.05
          and fedme_acc >= 0.9 * cent
          and elapsed < 600.0)
    _report("8 (trend reproduction)", bool(ok))


def test_criterion_9_heterogeneity_direction():
    gains = {}
    for algorithm in ("fedme", "fedavg"):
        for alpha in (None, 5.0, 0.5, 0.1):
            config = replace(_trend_config(algorithm), alpha_label=alpha)
            report = run_experiment(config)
            gains[(algorithm, alpha)] = report.mean - report.mean_pre_ft
    for algorithm in ("fedme", "fedavg"):
        print(f"  {algorithm} fine-tuning gain: "
              + ", ".join(f"alpha={a if a is not None else 'iid'} "
                          f"{gains[(algorithm, a)]:+.4f}"
                          for a in (None, 5.0, 0.5, 0.1)))
    ok = (gains[("fedme", 0.1)] > gains[("fedme", None)]
          and gains[("fedavg", 0.1)] > gains[("fedavg", None)])
    _report("9 (heterogeneity direction)", bool(ok))


# --------------------------------------------------------------- criterion 10

def test_criterion_10_determinism(tmp_path):
    config = validate_config(ExperimentConfig(
        algorithm="fedme", num_clients=5, rounds=4, epochs=1, num_classes=3,
        dim=4, per_class_count=50, noise_sigma=1.0, unlabeled_count=20,
        model_menu=((4,), (4, 4)), init_policy="best_local", probe_epochs=1,
        cluster_thresholds=(2, 3), fine_tune_epochs=2, repeats=2, lr=0.05,
        seed=11))
    run_experiment(config, str(tmp_path / "a"))
    run_experiment(config, str(tmp_path / "b"))
    ok = True
    for r in range(2):
        for name in ["rounds.csv"] + [f"client_{i}.model" for i in range(5)]:
            a = (tmp_path / "a" / f"run_{r}" / name).read_bytes()
            b = (tmp_path / "b" / f"run_{r}" / name).read_bytes()
            ok &= a == b
    _report("10 (determinism)", bool(ok))
