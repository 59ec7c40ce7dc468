"""Server-orchestrated federated training and its baselines.

Implements FedAvg, FedProx, and SCAFFOLD with full client participation,
plus centralized SGD, per-client local-only training, logit-averaging
ensembles, and uniform weight averaging (model soup).

Determinism contract: every batch draw comes from a stream derived from
(seed, round, client_id), and aggregation sums clients in ascending id
order, so results are bit-identical regardless of execution schedule.
SCAFFOLD uses the control-variate update
``c_i' = c_i - c + (w_global - w_local) / (K * lr)`` with the server
control moving by the mean client delta each round.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .nnet import (
    Batch,
    ModelSpec,
    ParamVector,
    check_same_layout,
    init_params,
    logits_to_proba,
    loss_and_grad,
    _forward_with_cache,
)


class TrainingDivergedError(RuntimeError):
    """Raised when a NaN loss is encountered during training."""


@dataclass(frozen=True)
class FLConfig:
    algorithm: str = "fedavg"
    rounds: int = 10
    local_steps: int = 20
    lr: float = 0.35
    prox_mu: float = 0.01
    server_lr: float = 1.0
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("fedavg", "fedprox", "scaffold"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.rounds < 1 or self.local_steps < 1:
            raise ValueError("rounds and local_steps must be at least 1")
        if self.lr <= 0 or self.server_lr <= 0 or self.batch_size < 1:
            raise ValueError("lr, server_lr and batch_size must be positive")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")


@dataclass
class ClientState:
    client_id: int
    inputs: np.ndarray
    labels: np.ndarray
    control: ParamVector | None = None

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError(f"client {self.client_id} has an empty dataset")
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must align")

    @property
    def n(self) -> int:
        return len(self.inputs)


@dataclass
class ClientUpdate:
    params: ParamVector
    n: int
    control_delta: ParamVector | None = None


@dataclass
class RoundRecord:
    round: int
    client_losses: dict[int, float]
    val_metric: float | None
    seconds: float


@dataclass
class TrainingHistory:
    records: list[RoundRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_rows(self) -> list[tuple]:
        rows = []
        for r in self.records:
            for cid, loss in sorted(r.client_losses.items()):
                rows.append((r.round, str(cid), loss, r.val_metric, r.seconds))
        return rows


def client_stream(seed: int, round_idx: int, client_id: int) -> np.random.Generator:
    """Batch-sampling stream; a pure function of (seed, round, client)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, round_idx, client_id])
    )


def _draw_batch(inputs, labels, batch_size, rng) -> Batch:
    n = len(inputs)
    idx = rng.integers(0, n, size=min(batch_size, n))
    return Batch(inputs[idx], labels[idx])


def fedprox_gradient(
    base_grad: ParamVector, w: ParamVector, w_global: ParamVector, mu: float
) -> ParamVector:
    """Gradient of the proximally regularized local objective."""
    check_same_layout(base_grad, w, w_global)
    return ParamVector(base_grad.values + mu * (w.values - w_global.values), w.layout)


def scaffold_local_step(
    w: ParamVector, grad: ParamVector, c_i: ParamVector, c: ParamVector, lr: float
) -> ParamVector:
    """Drift-corrected step ``w - lr * (grad - c_i + c)``."""
    check_same_layout(w, grad, c_i, c)
    return ParamVector(w.values - lr * (grad.values - c_i.values + c.values), w.layout)


def scaffold_update_controls(
    w_global: ParamVector,
    w_local_final: ParamVector,
    c_i: ParamVector,
    c: ParamVector,
    local_steps: int,
    lr: float,
) -> tuple[ParamVector, ParamVector]:
    """New client control and its delta from the drift over one round."""
    if local_steps < 1 or lr <= 0:
        raise ValueError("local_steps and lr must be positive")
    check_same_layout(w_global, w_local_final, c_i, c)
    drift = (w_global.values - w_local_final.values) / (local_steps * lr)
    c_i_new = ParamVector(c_i.values - c.values + drift, c_i.layout)
    delta = ParamVector(c_i_new.values - c_i.values, c_i.layout)
    return c_i_new, delta


def run_local_training(
    spec: ModelSpec,
    client: ClientState,
    w_global: ParamVector,
    cfg: FLConfig,
    rng: np.random.Generator,
    server_control: ParamVector | None = None,
) -> ClientUpdate:
    """K local SGD steps from the broadcast weights; algorithm-specific gradient."""
    w = w_global.copy()
    for step in range(cfg.local_steps):
        batch = _draw_batch(client.inputs, client.labels, cfg.batch_size, rng)
        loss, grad = loss_and_grad(spec, w, batch)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"NaN loss on client {client.client_id} at local step {step}"
            )
        if cfg.algorithm == "fedprox":
            grad = fedprox_gradient(grad, w, w_global, cfg.prox_mu)
            w = ParamVector(w.values - cfg.lr * grad.values, w.layout)
        elif cfg.algorithm == "scaffold":
            w = scaffold_local_step(w, grad, client.control, server_control, cfg.lr)
        else:
            w = ParamVector(w.values - cfg.lr * grad.values, w.layout)
    if cfg.algorithm == "scaffold":
        c_i_new, delta = scaffold_update_controls(
            w_global, w, client.control, server_control, cfg.local_steps, cfg.lr
        )
        client.control = c_i_new
        return ClientUpdate(w, client.n, delta)
    return ClientUpdate(w, client.n, None)


def fedavg_aggregate(updates: list[tuple[ParamVector, int]]) -> ParamVector:
    """Sample-count weighted mean of client parameter vectors."""
    if not updates:
        raise ValueError("need at least one update")
    check_same_layout(*[w for w, _ in updates])
    total = sum(n for _, n in updates)
    if total <= 0:
        raise ValueError("zero total samples across updates")
    acc = np.zeros_like(updates[0][0].values)
    for w, n in updates:
        acc += (n / total) * w.values
    return ParamVector(acc, updates[0][0].layout)


def _dataset_loss(spec, params, inputs, labels, cap: int = 512) -> float:
    sub = slice(0, min(len(inputs), cap))
    loss, _ = loss_and_grad(spec, params, Batch(inputs[sub], labels[sub]))
    return loss


def run_federated(
    spec: ModelSpec,
    clients: list[ClientState],
    cfg: FLConfig,
    init: ParamVector | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    val_metric=None,
    record_history: bool = True,
) -> tuple[ParamVector, TrainingHistory]:
    """R rounds of broadcast, parallel-safe local training, and aggregation."""
    if not clients:
        raise ValueError("need at least one client")
    clients = sorted(clients, key=lambda c: c.client_id)
    w = init.copy() if init is not None else init_params(spec, cfg.seed)
    server_control = w.zeros_like() if cfg.algorithm == "scaffold" else None
    if cfg.algorithm == "scaffold":
        for c in clients:
            c.control = w.zeros_like()
    history = TrainingHistory()
    for t in range(cfg.rounds):
        t0 = time.perf_counter()
        updates = []
        for client in clients:
            rng = client_stream(cfg.seed, t, client.client_id)
            updates.append(
                (
                    client,
                    run_local_training(spec, client, w, cfg, rng, server_control),
                )
            )
        agg = fedavg_aggregate([(u.params, u.n) for _, u in updates])
        if cfg.server_lr == 1.0:  # plain replacement averaging, exactly
            w = agg
        else:
            w = ParamVector(w.values + cfg.server_lr * (agg.values - w.values), w.layout)
        if cfg.algorithm == "scaffold":
            mean_delta = np.mean([u.control_delta.values for _, u in updates], axis=0)
            server_control = ParamVector(server_control.values + mean_delta, w.layout)
        if record_history:
            losses = {
                c.client_id: _dataset_loss(spec, w, c.inputs, c.labels)
                for c, _ in updates
            }
            metric = None
            if val is not None and val_metric is not None:
                metric = float(val_metric(spec, w, val[0], val[1]))
            history.records.append(
                RoundRecord(t, losses, metric, time.perf_counter() - t0)
            )
    return w, history


def run_centralized(
    spec: ModelSpec,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: FLConfig,
    init: ParamVector | None = None,
    record_history: bool = True,
) -> tuple[ParamVector, TrainingHistory]:
    """Plain SGD for rounds*local_steps steps on one merged dataset.

    Structured as rounds of local_steps with the same batch streams as a
    single federated client (id 0), so a one-client FedAvg run is
    bit-identical to this.
    """
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    w = init.copy() if init is not None else init_params(spec, cfg.seed)
    history = TrainingHistory()
    for t in range(cfg.rounds):
        t0 = time.perf_counter()
        rng = client_stream(cfg.seed, t, 0)
        for step in range(cfg.local_steps):
            batch = _draw_batch(inputs, labels, cfg.batch_size, rng)
            loss, grad = loss_and_grad(spec, w, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"NaN loss at round {t} step {step}")
            w = ParamVector(w.values - cfg.lr * grad.values, w.layout)
        if record_history:
            history.records.append(
                RoundRecord(
                    t,
                    {0: _dataset_loss(spec, w, inputs, labels)},
                    None,
                    time.perf_counter() - t0,
                )
            )
    return w, history


def derive_seed(seed: int, *keys: int) -> int:
    """Stable sub-seed for per-client / per-cell streams."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1)[0])


def run_local_only(
    spec: ModelSpec,
    clients: list[ClientState],
    cfg: FLConfig,
    inits: list[ParamVector] | None = None,
) -> list[ParamVector]:
    """Independent centralized runs per client with per-client seeds."""
    models = []
    for i, client in enumerate(sorted(clients, key=lambda c: c.client_id)):
        sub_cfg = FLConfig(
            algorithm="fedavg",
            rounds=cfg.rounds,
            local_steps=cfg.local_steps,
            lr=cfg.lr,
            prox_mu=cfg.prox_mu,
            server_lr=cfg.server_lr,
            batch_size=cfg.batch_size,
            seed=derive_seed(cfg.seed, 0x10CA1, client.client_id),
        )
        init = inits[i] if inits is not None else None
        w, _ = run_centralized(
            spec, client.inputs, client.labels, sub_cfg, init=init, record_history=False
        )
        models.append(w)
    return models


def ensemble_predict(
    models: list[ParamVector], spec: ModelSpec, inputs: np.ndarray
) -> np.ndarray:
    """Mean of per-model logits, then softmax (patch) or sigmoid (image)."""
    if not models:
        raise ValueError("need at least one model")
    check_same_layout(*models)
    logit_sum = None
    for m in models:
        logits, _ = _forward_with_cache(spec, m, inputs)
        logit_sum = logits if logit_sum is None else logit_sum + logits
    return logits_to_proba(spec, logit_sum / len(models))


def model_soup(models: list[ParamVector]) -> ParamVector:
    """Uniform elementwise mean of parameter vectors."""
    if not models:
        raise ValueError("need at least one model")
    check_same_layout(*models)
    mean = np.mean([m.values for m in models], axis=0)
    return ParamVector(mean, models[0].layout)
