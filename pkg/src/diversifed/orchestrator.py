"""Round loops: DiversiFed, FedAvg, Separate, and the pull/push toy.

Every random stream is derived from ``(seed, purpose, client, round)`` so a
run is reproducible regardless of how local updates are scheduled.  All
clients start from one shared initialization.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import distance
from .client import ClientState, local_update
from .config import RunConfig
from .datasets import (LabeledDataset, PartitionSpec, load_idx, materialize, partition_dirichlet,
                       partition_pathological, partition_practical, synth_blobs)
from .neural import MlpSpec, evaluate_accuracy, init_params
from .params import ModelPool, ParamVector

log = logging.getLogger(__name__)

# tags separating the seed streams derived from one master seed
_DATA, _TEST_DATA, _PARTITION, _INIT, _PARTICIPANTS = range(5)


@dataclass
class RoundRecord:
    round: int
    accuracies: list[float]
    mean_accuracy: float
    losses: list[float]
    participants: list[int]


@dataclass
class RunReport:
    method: str
    config: dict
    records: list[RoundRecord] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    final_params: dict[int, ParamVector] = field(default_factory=dict, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def best_mean_accuracy(self) -> float:
        return max(r.mean_accuracy for r in self.records)

    @property
    def best_round(self) -> int:
        best = self.best_mean_accuracy
        return next(r.round for r in self.records if r.mean_accuracy == best)

    @property
    def final_mean_accuracy(self) -> float:
        return self.records[-1].mean_accuracy

    @property
    def per_client_best(self) -> list[float]:
        return np.max([r.accuracies for r in self.records], axis=0).tolist()

    def same_trajectory(self, other: "RunReport") -> bool:
        """Bitwise equality of every record and final model (wall clock ignored)."""
        if len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if (a.accuracies != b.accuracies or a.mean_accuracy != b.mean_accuracy
                    or not np.array_equal(a.losses, b.losses, equal_nan=True)):
                return False
        if self.final_params.keys() != other.final_params.keys():
            return False
        return all(np.array_equal(self.final_params[k], other.final_params[k]) for k in self.final_params)


OnRound = Callable[[RoundRecord], None]


# ---------------------------------------------------------------- setup

def derive_seed(master_seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([master_seed, *tags]).generate_state(1)[0])


def sample_participants(n_clients: int, fraction: float, round_idx: int, master_seed: int) -> list[int]:
    """ceil(fraction * N) distinct clients, uniform, fixed by (seed, round)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"participation fraction must be in (0, 1], got {fraction}")
    k = math.ceil(fraction * n_clients - 1e-12)
    if k >= n_clients:
        return list(range(n_clients))
    rng = np.random.default_rng(derive_seed(master_seed, _PARTICIPANTS, round_idx))
    return sorted(int(i) for i in rng.choice(n_clients, size=k, replace=False))


def build_datasets(cfg: RunConfig) -> tuple[LabeledDataset, Optional[LabeledDataset]]:
    d = cfg.dataset
    if d.kind == "idx":
        train = load_idx(d.train_images, d.train_labels, d.num_classes)
        test = load_idx(d.test_images, d.test_labels, d.num_classes) if d.test_images else None
        return train, test
    train = synth_blobs(d.num_classes, d.samples_per_class, d.feature_dim, d.separation, d.noise,
                        derive_seed(cfg.seed, _DATA))
    test = synth_blobs(d.num_classes, d.test_samples_per_class, d.feature_dim, d.separation, d.noise,
                       derive_seed(cfg.seed, _TEST_DATA))
    return train, test


def build_partition(cfg: RunConfig, train: LabeledDataset, test: Optional[LabeledDataset]) -> PartitionSpec:
    p = cfg.partition
    seed = derive_seed(cfg.seed, _PARTITION)
    if p.scheme == "pathological":
        return partition_pathological(train, cfg.n_clients, p.classes_per_client, p.train_per_client,
                                      p.test_per_client, seed, test_ds=test)
    if p.scheme == "dirichlet":
        return partition_dirichlet(train, cfg.n_clients, p.alpha, p.train_per_client,
                                   p.test_per_client, seed, test_ds=test)
    return partition_practical(train, cfg.n_clients, p.groups, p.dominant_classes, p.dominant_fraction,
                               p.train_per_client, p.test_per_client, seed, test_ds=test)


def setup_clients(cfg: RunConfig) -> tuple[MlpSpec, list[ClientState]]:
    train, test = build_datasets(cfg)
    spec = cfg.mlp_spec(train.feature_dim, train.num_classes)
    partition = build_partition(cfg, train, test)
    w0 = init_params(spec, derive_seed(cfg.seed, _INIT))
    clients = []
    for cid in range(cfg.n_clients):
        tr, te = materialize(train, partition, cid, test_ds=test)
        clients.append(ClientState(cid, w0.copy(), tr, te))
    return spec, clients


# ---------------------------------------------------------------- shared machinery

def _run_updates(jobs, workers: int):
    """Run zero-argument callables, results in submission order."""
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _record(round_idx, spec, eval_params, clients, participants) -> RoundRecord:
    accs = [evaluate_accuracy(eval_params(c), spec, c.test) for c in clients]
    return RoundRecord(round_idx, accs, float(np.mean(accs)), [c.last_loss for c in clients],
                       list(participants))


def _finish(report: RunReport, clients, started: float) -> RunReport:
    report.final_params = {c.id: c.params.copy() for c in clients}
    report.wall_clock_seconds = time.perf_counter() - started
    return report


def _participants(cfg: RunConfig, round_idx: int) -> list[int]:
    return sample_participants(cfg.n_clients, cfg.participation_fraction, round_idx, cfg.seed)


# ---------------------------------------------------------------- methods

def run_separate(cfg: RunConfig, on_round: Optional[OnRound] = None, setup=None) -> RunReport:
    """Every client trains alone every round; participation does not apply."""
    started = time.perf_counter()
    spec, clients = setup or setup_clients(cfg)
    hyper = cfg.client_hyper
    report = RunReport("separate", cfg.to_flat())
    everyone = list(range(cfg.n_clients))
    for t in range(cfg.rounds):
        jobs = [lambda c=c: local_update(c, None, hyper, spec, seed=cfg.seed, round_idx=t)
                for c in clients]
        clients = _run_updates(jobs, cfg.workers)
        rec = _record(t, spec, lambda c: c.params, clients, everyone)
        report.records.append(rec)
        if on_round:
            on_round(rec)
    return _finish(report, clients, started)


def run_diversifed(cfg: RunConfig, on_round: Optional[OnRound] = None, setup=None) -> RunReport:
    """Alternate client proximal updates with the server's one-step anchors.

    Round 0 trains on L_e alone.  Afterwards each participant is pulled toward
    the last anchor the server computed for it.  Anchors come from the pool of
    that round's participants only.  No anchor is served when the step carries
    no information from other clients (gradient exactly zero, e.g. N=2 or a
    lone participant), and the client then trains on L_e alone.
    """
    started = time.perf_counter()
    spec, clients = setup or setup_clients(cfg)
    hyper = cfg.client_hyper
    server = cfg.server_hyper
    report = RunReport("diversifed", cfg.to_flat())
    served: dict[int, Optional[ParamVector]] = {}
    max_identity_gap = 0.0

    for t in range(cfg.rounds):
        part = _participants(cfg, t)
        jobs = []
        for cid in part:
            anchor = None if t == 0 else served.get(cid)
            jobs.append(lambda c=clients[cid], a=anchor:
                        local_update(c, a, hyper, spec, seed=cfg.seed, round_idx=t))
        for cid, updated in zip(part, _run_updates(jobs, cfg.workers)):
            clients[cid] = updated

        if len(part) >= 2:
            pool = ModelPool.from_models((cid, clients[cid].params) for cid in part)
            for cid in part:
                grad = distance.model_distance_grad(pool, cid, server)
                if not np.any(grad):
                    served[cid] = None
                    continue
                z = pool[cid] - server.alpha_t * grad
                if cfg.check_identity:
                    combo = distance.apply_weights(pool, distance.combination_weights(pool, cid, server))
                    gap = float(np.max(np.abs(z - combo)))
                    max_identity_gap = max(max_identity_gap, gap)
                    if gap > 1e-9:
                        raise RuntimeError(f"round {t}, client {cid}: anchor deviates from its "
                                           f"combination-weight form by {gap:.3e}")
                served[cid] = z
        else:
            for cid in part:
                served[cid] = None

        rec = _record(t, spec, lambda c: c.params, clients, part)
        report.records.append(rec)
        if on_round:
            on_round(rec)
    if cfg.check_identity:
        report.diagnostics["max_identity_gap"] = max_identity_gap
    return _finish(report, clients, started)


def run_fedavg(cfg: RunConfig, on_round: Optional[OnRound] = None, setup=None) -> RunReport:
    """One global model; participants train from it and the server averages by train size."""
    started = time.perf_counter()
    spec, clients = setup or setup_clients(cfg)
    hyper = cfg.client_hyper
    report = RunReport("fedavg", cfg.to_flat())
    global_w = clients[0].params.copy()

    for t in range(cfg.rounds):
        part = _participants(cfg, t)
        jobs = [lambda c=replace(clients[cid], params=global_w):
                local_update(c, None, hyper, spec, seed=cfg.seed, round_idx=t) for cid in part]
        for cid, updated in zip(part, _run_updates(jobs, cfg.workers)):
            clients[cid] = updated
        sizes = np.array([len(clients[cid].train) for cid in part], dtype=np.float64)
        weights = sizes / sizes.sum()
        agg = weights[0] * clients[part[0]].params
        for wgt, cid in zip(weights[1:], part[1:]):
            agg = agg + wgt * clients[cid].params
        global_w = agg

        rec = _record(t, spec, lambda c: global_w, clients, part)
        report.records.append(rec)
        if on_round:
            on_round(rec)
    for c in range(len(clients)):
        clients[c] = replace(clients[c], params=global_w)
    return _finish(report, clients, started)


def pullpush_grad(w: ParamVector, others: np.ndarray, toy_lambda: float, eps: float) -> ParamVector:
    """Gradient of toy_lambda * sum_j ||w - w_j|| with coincident pairs contributing zero."""
    diffs = w[None, :] - others
    norms = np.sqrt(np.sum(diffs * diffs, axis=1))
    coef = np.zeros_like(norms)
    live = norms >= eps
    coef[live] = 1.0 / norms[live]
    return toy_lambda * (coef @ diffs)


def run_toy_pullpush(cfg: RunConfig, on_round: Optional[OnRound] = None, setup=None) -> RunReport:
    """Each client minimizes L_ce + toy_lambda * sum_j ||w_i - w_j|| against a round-start snapshot."""
    started = time.perf_counter()
    spec, clients = setup or setup_clients(cfg)
    hyper = replace(cfg.client_hyper, lam=0.0)
    report = RunReport("toy_pullpush", cfg.to_flat())
    everyone = list(range(cfg.n_clients))
    for t in range(cfg.rounds):
        snapshot = np.stack([c.params for c in clients])
        jobs = []
        for c in clients:
            extra = None
            if cfg.toy_lambda != 0.0:
                others = np.delete(snapshot, c.id, axis=0)
                extra = (lambda w, o=others: pullpush_grad(w, o, cfg.toy_lambda, cfg.epsilon_dist))
            jobs.append(lambda c=c, e=extra:
                        local_update(c, None, hyper, spec, seed=cfg.seed, round_idx=t, extra_grad=e))
        clients = _run_updates(jobs, cfg.workers)
        rec = _record(t, spec, lambda c: c.params, clients, everyone)
        report.records.append(rec)
        if on_round:
            on_round(rec)
    return _finish(report, clients, started)


RUNNERS = {
    "diversifed": run_diversifed,
    "fedavg": run_fedavg,
    "separate": run_separate,
    "toy_pullpush": run_toy_pullpush,
}


def run(cfg: RunConfig, on_round: Optional[OnRound] = None) -> RunReport:
    cfg.validate()
    log.info("running %s: N=%d T=%d seed=%d", cfg.method, cfg.n_clients, cfg.rounds, cfg.seed)
    return RUNNERS[cfg.method](cfg, on_round)
