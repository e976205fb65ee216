"""The round engine: clustering on unlabeled-data outputs, exchange
assignment, deep-mutual-learning client training, loss-based model tuning,
per-lineage aggregation, and redistribution.

Determinism: every random choice draws from a stream derived from
(master seed, purpose tag, round, client), so results do not depend on the
order in which client work is executed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .clustering import ClusterSchedule, cluster_count, kmeans
from .data import ClientShard, UnlabeledPool
from .nn import Model

# purpose tags for deriving independent RNG streams from one master seed
TAG_INIT = 1
TAG_KMEANS = 2
TAG_EXCHANGE = 3
TAG_BATCH = 4
TAG_FINE_TUNE = 5
TAG_SPLIT = 6
TAG_PROBE = 7


def derive_seed(*keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(list(keys))


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    personalized: Model
    exchanged: Model | None = None
    exchange_origin: int | None = None
    selection: int | None = None

    def clear_exchange(self) -> None:
        self.exchanged = None
        self.exchange_origin = None


@dataclass
class ExchangePlan:
    round: int
    donor: dict[int, int]
    cluster_of: dict[int, int]
    k: int

    def __post_init__(self):
        for i, j in self.donor.items():
            if i == j:
                raise ValueError(f"client {i} cannot be its own donor")


@dataclass
class RoundRecord:
    round: int
    client: int
    k: int
    cluster: int | None
    donor: int | None
    a: int | None
    loss_p_train: float
    loss_ex_train: float | None
    loss_p_val: float
    loss_ex_val: float | None
    val_acc: float
    test_acc: float
    client_ms: float
    server_ms: float


@dataclass
class FedMeConfig:
    rounds: int
    epochs: int = 2
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 20
    schedule: ClusterSchedule = field(default_factory=ClusterSchedule)
    kmeans_restarts: int = 8
    tuning: bool = True
    dml: bool = True
    clustering: bool = True
    exchange: bool = True
    seed: int = 0


@dataclass
class RoundOverrides:
    """Deterministic stand-ins for the engine's random choices, for scripted
    traces and tests. Each hook may return None to fall back to the default."""

    clusters: "callable | None" = None   # (t, num_clients) -> assignments
    donors: "callable | None" = None     # (t, assignments) -> {client: donor}
    selections: "callable | None" = None  # (t, client, loss_p, loss_ex) -> a


def model_outputs_on_unlabeled(models: list[Model], pool: UnlabeledPool) -> np.ndarray:
    """Row i is the flattened probability matrix of model i on the pool."""
    if pool.n == 0:
        raise ValueError("unlabeled pool is empty")
    return np.stack([nn.forward(m, pool.features).ravel() for m in models])


def assign_exchanges(assignments: np.ndarray, t: int, seed: int,
                     donors_override: dict[int, int] | None = None) -> ExchangePlan:
    """Donor per receiver, uniform within the receiver's cluster (excluding
    itself); a singleton falls back to a uniform draw over all other clients.
    Draws are independent per receiver, so duplicate donors are allowed."""
    assignments = np.asarray(assignments)
    n = len(assignments)
    if n < 2:
        raise ValueError("need at least 2 clients to exchange models")
    k = int(assignments.max()) + 1 if n else 1
    donors = {}
    for i in range(n):
        if donors_override is not None:
            donors[i] = donors_override[i]
            continue
        peers = [j for j in range(n) if j != i and assignments[j] == assignments[i]]
        if not peers:
            peers = [j for j in range(n) if j != i]
        rng = np.random.default_rng(derive_seed(seed, TAG_EXCHANGE, t, i))
        donors[i] = peers[rng.integers(len(peers))]
    return ExchangePlan(t, donors, {i: int(assignments[i]) for i in range(n)}, k)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def dml_train(state: ClientState, config: FedMeConfig,
              rng: np.random.Generator) -> None:
    """Train personalized and exchanged models in lockstep on identical
    batches; with DML off each model gets plain cross-entropy updates."""
    train = state.shard.train
    for _ in range(config.epochs):
        for batch in _batches(train.n, config.batch_size, rng):
            x, y = train.features[batch], train.labels[batch]
            if config.dml and state.exchanged is not None:
                _, _, g_p, g_ex = nn.dml_losses_and_grads(
                    state.personalized, state.exchanged, x, y)
                state.personalized = nn.sgd_step(
                    state.personalized, g_p, config.lr, config.momentum,
                    config.weight_decay)
                state.exchanged = nn.sgd_step(
                    state.exchanged, g_ex, config.lr, config.momentum,
                    config.weight_decay)
            else:
                _, g_p = nn.ce_loss_and_grad(state.personalized, x, y)
                state.personalized = nn.sgd_step(
                    state.personalized, g_p, config.lr, config.momentum,
                    config.weight_decay)
                if state.exchanged is not None:
                    _, g_ex = nn.ce_loss_and_grad(state.exchanged, x, y)
                    state.exchanged = nn.sgd_step(
                        state.exchanged, g_ex, config.lr, config.momentum,
                        config.weight_decay)


def model_tuning(loss_p_val: float, loss_ex_val: float, client_id: int,
                 exchange_origin: int) -> int:
    """Keep the own lineage on a tie; adopt the donor's only on strictly
    smaller validation loss."""
    return client_id if loss_p_val <= loss_ex_val else exchange_origin


def aggregate(states: list[ClientState], plan: ExchangePlan) -> dict[int, Model]:
    """Per-lineage mean of the owner's trained copy plus every trained
    exchanged copy of that lineage."""
    aggregated = {}
    for state in states:
        copies = [state.personalized]
        for other in states:
            if plan.donor.get(other.client_id) == state.client_id:
                assert other.exchanged is not None
                copies.append(other.exchanged)
        aggregated[state.client_id] = nn.average_params(copies)
    return aggregated


def redistribute(states: list[ClientState], aggregated: dict[int, Model],
                 selections: dict[int, int]) -> None:
    """Each client adopts an independent copy of its selected lineage."""
    for state in states:
        state.personalized = aggregated[selections[state.client_id]].copy()
        state.selection = selections[state.client_id]
        state.clear_exchange()


def run_fedme(shards: list[ClientShard], archs: list[nn.ArchitectureSpec],
              pool: UnlabeledPool, config: FedMeConfig,
              overrides: RoundOverrides | None = None):
    """Run the full exchange/train/tune/aggregate/redistribute loop.

    Returns (final client states, round records)."""
    n = len(shards)
    if len(archs) != n:
        raise ValueError("need one architecture per client")
    overrides = overrides or RoundOverrides()
    states = [
        ClientState(i, shard, nn.init_model(arch, derive_seed(config.seed, TAG_INIT, i)))
        for i, (shard, arch) in enumerate(zip(shards, archs))
    ]
    records: list[RoundRecord] = []

    for t in range(1, config.rounds + 1):
        server_start = time.perf_counter()
        if config.exchange:
            k = cluster_count(t, config.schedule, n) if config.clustering else 1
            assignments = None
            if overrides.clusters is not None:
                assignments = overrides.clusters(t, n)
            if assignments is None:
                if k == 1:
                    assignments = np.zeros(n, dtype=np.int64)
                else:
                    feats = model_outputs_on_unlabeled(
                        [s.personalized for s in states], pool)
                    assignments, _ = kmeans(
                        feats, k, derive_seed(config.seed, TAG_KMEANS, t).generate_state(1)[0],
                        config.kmeans_restarts)
            donors_override = overrides.donors(t, assignments) if overrides.donors else None
            plan = assign_exchanges(assignments, t, config.seed, donors_override)
            for state in states:
                donor = plan.donor[state.client_id]
                state.exchanged = states[donor].personalized.copy()
                state.exchange_origin = donor
        else:
            plan = None
            for state in states:
                state.personalized.reset_momentum()
        server_ms = (time.perf_counter() - server_start) * 1000.0

        client_ms = {}
        selections = {}
        client_losses = {}
        for state in states:
            start = time.perf_counter()
            rng = np.random.default_rng(
                derive_seed(config.seed, TAG_BATCH, t, state.client_id))
            dml_train(state, config, rng)
            loss_p_train, _ = nn.evaluate(state.personalized,
                                          state.shard.train.features,
                                          state.shard.train.labels)
            loss_p_val, _ = nn.evaluate(state.personalized,
                                        state.shard.validation.features,
                                        state.shard.validation.labels)
            if state.exchanged is not None:
                loss_ex_train, _ = nn.evaluate(state.exchanged,
                                               state.shard.train.features,
                                               state.shard.train.labels)
                loss_ex_val, _ = nn.evaluate(state.exchanged,
                                             state.shard.validation.features,
                                             state.shard.validation.labels)
            else:
                loss_ex_train = loss_ex_val = None

            a = None
            if overrides.selections is not None:
                a = overrides.selections(t, state.client_id, loss_p_val, loss_ex_val)
            if a is None:
                if config.tuning and state.exchange_origin is not None:
                    a = model_tuning(loss_p_val, loss_ex_val, state.client_id,
                                     state.exchange_origin)
                else:
                    a = state.client_id
            selections[state.client_id] = a
            client_losses[state.client_id] = (loss_p_train, loss_ex_train,
                                              loss_p_val, loss_ex_val)
            client_ms[state.client_id] = (time.perf_counter() - start) * 1000.0

        server_start = time.perf_counter()
        if plan is not None:
            aggregated = aggregate(states, plan)
            redistribute(states, aggregated, selections)
        else:
            for state in states:
                state.selection = selections[state.client_id]
        server_ms += (time.perf_counter() - server_start) * 1000.0

        for state in states:
            lp_tr, lex_tr, lp_val, lex_val = client_losses[state.client_id]
            _, val_acc = nn.evaluate(state.personalized,
                                     state.shard.validation.features,
                                     state.shard.validation.labels)
            _, test_acc = nn.evaluate(state.personalized,
                                      state.shard.test.features,
                                      state.shard.test.labels)
            records.append(RoundRecord(
                round=t, client=state.client_id,
                k=plan.k if plan is not None else 1,
                cluster=plan.cluster_of[state.client_id] if plan is not None else None,
                donor=plan.donor[state.client_id] if plan is not None else None,
                a=selections[state.client_id],
                loss_p_train=lp_tr, loss_ex_train=lex_tr,
                loss_p_val=lp_val, loss_ex_val=lex_val,
                val_acc=val_acc, test_acc=test_acc,
                client_ms=client_ms[state.client_id], server_ms=server_ms))

    return states, records


def fine_tune(model: Model, shard: ClientShard, epochs: int, lr: float,
              momentum: float = 0.9, weight_decay: float = 1e-4,
              batch_size: int = 20, seed: int = 0) -> Model:
    """Plain cross-entropy retraining on the client's own train split."""
    tuned = model.copy()
    tuned.reset_momentum()
    rng = np.random.default_rng(derive_seed(seed, TAG_FINE_TUNE, shard.client_id))
    for _ in range(epochs):
        for batch in _batches(shard.train.n, batch_size, rng):
            x, y = shard.train.features[batch], shard.train.labels[batch]
            _, grad = nn.ce_loss_and_grad(tuned, x, y)
            tuned = nn.sgd_step(tuned, grad, lr, momentum, weight_decay)
    return tuned
