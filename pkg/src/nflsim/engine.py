"""The round loop: sampling, behavior dispatch, aggregation, detection, metrics.

Four operating modes share one engine. ``fedavg`` never sets the recovery
flag and never emits detector events; ``detect_recover`` runs the full
report/cancel state machine; ``all_time`` pins the flag on from round 1
with the detector disabled; ``short_term`` behaves like detect_recover
until the first cancel, after which adaptation is permanently off while
clients keep their adapted models for inference.

Client updates within a round are independent and may run on a thread
pool; every client draws from a private (seed, client, round) RNG stream
and reports are combined in ascending client id order, so results are
identical for any worker count.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adversary, detection, protocol
from .config import SimConfig
from .data import gen_synthetic, load_delimited, partition
from .errors import ConfigError
from .model import ParamVector, init_params, train_private
from .recovery import inference_model
from .rng import substream
from .robust import agg_k_norm, agg_median, agg_multi_krum, agg_trimmed_mean


@dataclass
class RoundMetrics:
    round: int
    beta_r: float
    beta_win: float
    beta_true: float
    acc: float
    beta_guard: float
    nfl_flag: bool
    events: tuple[str, ...] = ()


@dataclass
class RunResult:
    config: SimConfig
    metrics: list[RoundMetrics]
    events: list[dict]
    behaviors: list[str]
    final_global: ParamVector
    adapted: dict[int, ParamVector]
    trajectory: list[str]
    summary: dict


@dataclass
class _ModeControl:
    mode: str
    recovery_stopped: bool = False  # short_term latch

    def client_flag(self, server_flag: bool) -> bool:
        if self.mode == "fedavg":
            return False
        if self.mode == "all_time":
            return True
        if self.recovery_stopped:
            return False
        return server_flag

    @property
    def local_policy_allowed(self) -> bool:
        return self.mode in ("detect_recover", "short_term") and not self.recovery_stopped

    @property
    def detector_armed(self) -> bool:
        return self.mode in ("detect_recover", "short_term") and not self.recovery_stopped


def _hash_params(params: ParamVector) -> str:
    return hashlib.sha256(params.values.tobytes()).hexdigest()


def _aggregate(cfg: SimConfig, w_prev: ParamVector, reports, noise_rng) -> ParamVector:
    """Clip (if configured), aggregate, noise (if configured).

    With the plain aggregator and clipping on, this is exactly the
    noised uniform-mean-of-clipped-deltas rule; robust aggregators slot
    into the middle of the same pipeline, operating on update deltas.
    """
    kind = cfg.aggregator.kind
    if kind == "fedavg":
        if cfg.dp is not None:
            return protocol.aggregate_dp(w_prev, reports, cfg.dp.clip, cfg.dp.sigma, noise_rng)
        return protocol.aggregate_fedavg(reports, w_prev.spec)

    reps = sorted(reports, key=lambda r: r.client_id)
    ids = [r.client_id for r in reps]
    deltas = np.stack([r.params.values - w_prev.values for r in reps])
    if cfg.dp is not None:
        norms = np.linalg.norm(deltas, axis=1)
        over = norms > cfg.dp.clip
        deltas[over] *= (cfg.dp.clip / norms[over])[:, None]
    if kind == "median":
        agg = agg_median(deltas)
    elif kind == "trimmed_mean":
        agg = agg_trimmed_mean(deltas, cfg.aggregator.trim_k)
    elif kind == "multi_krum":
        agg = agg_multi_krum(deltas, ids, cfg.aggregator.f, cfg.aggregator.m)
    elif kind == "k_norm":
        agg = agg_k_norm(deltas, ids, cfg.aggregator.k)
    else:  # pragma: no cover - config validation rejects this earlier
        raise ConfigError(f"unknown aggregator {kind!r}")
    out = w_prev.values + agg
    if cfg.dp is not None and cfg.dp.sigma > 0:
        out = out + noise_rng.normal(0.0, cfg.dp.sigma, out.size)
    return ParamVector(out, w_prev.spec)


def _update_one(client, w_prev, flag, lup, rng):
    if client.behavior == "vanilla":
        return adversary.vanilla_client_report(client, w_prev, lup, rng)
    if client.behavior == "attacker":
        return adversary.attacker_report(client, w_prev, flag, lup, rng)
    return protocol.client_update(client, w_prev, flag, lup, rng)


def run_round(
    server: protocol.ServerState,
    clients: list[protocol.ClientState],
    cfg: SimConfig,
    ctl: _ModeControl,
    pool: ThreadPoolExecutor | None = None,
) -> tuple[protocol.ServerState, float, list[dict], int]:
    """Advance one round; returns the new server state, the round median
    gain, the round's events, and the number of adapted-model steps."""
    r = server.round + 1
    active = protocol.sample_active(len(clients), cfg.k, r, cfg.seed)
    flag = ctl.client_flag(server.nfl_flag)
    lup = protocol.LocalUpdateParams(
        epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        eta=cfg.eta,
        adaptation=cfg.adaptation,
        nr=cfg.nr,
        c=cfg.c,
        allow_local_policy=ctl.local_policy_allowed,
    )

    def work(cid: int):
        client = clients[cid]
        client.adapt_steps = 0
        client.last_policy_action = None
        rng = substream(cfg.seed, "client", cid, r)
        try:
            return cid, _update_one(client, server.global_params, flag, lup, rng)
        except protocol.SkipClient:
            return cid, None

    if pool is not None:
        results = dict(pool.map(work, active))
    else:
        results = dict(work(cid) for cid in active)

    events: list[dict] = []
    reports = [results[cid] for cid in active if results[cid] is not None]
    adapt_steps = 0
    for cid in active:
        client = clients[cid]
        adapt_steps += client.adapt_steps
        if client.last_policy_action == detection.ACTIVATE:
            events.append({"round": r, "type": "client_activate", "client": cid})
        elif client.last_policy_action == detection.STOP:
            events.append({"round": r, "type": "client_stop", "client": cid})

    if not reports:
        # Nothing to aggregate: model unchanged, history carries the last value.
        prev = server.detector.history[-1] if server.detector.history else 0.0
        beta_r = prev
        detector = detection.record_round(server.detector, beta_r)
        new_global = server.global_params
        events.append({"round": r, "type": "empty_round"})
    else:
        beta_r = detection.round_median([rep.beta_hat for rep in reports])
        new_global = _aggregate(cfg, server.global_params, reports, substream(cfg.seed, "noise", r))
        if ctl.detector_armed:
            detector, det_events = detection.detector_step(server.detector, beta_r)
            for ev in det_events:
                events.append({"round": r, "type": f"nfl_{ev}"})
            if cfg.mode == "short_term" and "cancel" in det_events:
                ctl.recovery_stopped = True
                events.append({"round": r, "type": "recovery_stopped"})
        else:
            detector = detection.record_round(server.detector, beta_r)

    if adapt_steps:
        events.append({"round": r, "type": "adapt_steps", "count": adapt_steps})

    new_server = protocol.ServerState(r, new_global, detector)
    return new_server, beta_r, events, adapt_steps


def _build_clients(cfg: SimConfig) -> tuple[list[protocol.ClientState], list[str]]:
    if cfg.data.kind == "synthetic":
        dataset = gen_synthetic(
            cfg.data.class_count,
            cfg.data.dim,
            cfg.data.per_class,
            cfg.data.spread,
            substream(cfg.seed, "data"),
        )
    else:
        dataset = load_delimited(cfg.data.path, cfg.data.delimiter)
    if dataset.features.shape[1] != cfg.model.input_dim:
        raise ConfigError(
            f"dataset dimension {dataset.features.shape[1]} does not match the model input "
            f"{cfg.model.input_dim}"
        )
    parts = partition(dataset, cfg.n_clients, cfg.partition, substream(cfg.seed, "partition"))
    behaviors = adversary.assign_behaviors(
        cfg.n_clients, cfg.behaviors, substream(cfg.seed, "behaviors")
    )
    clients = []
    for cid in range(cfg.n_clients):
        train, test = parts[cid]
        if behaviors[cid] == "attacker":
            train = adversary.flip_batch(train, dataset.class_count)
            test = adversary.flip_batch(test, dataset.class_count)
        private, p_i = train_private(
            train,
            test,
            cfg.model,
            cfg.private.epochs,
            cfg.private.eta,
            cfg.private.batch_size,
            substream(cfg.seed, "private", cid),
        )
        clients.append(
            protocol.ClientState(
                client_id=cid,
                train=train,
                test=test,
                p_i=p_i,
                private_params=private,
                behavior=behaviors[cid],
                fabrication=cfg.behaviors.fabrication,
            )
        )
    return clients, behaviors


def _evaluate(clients, global_params, behaviors) -> tuple[float, float, float]:
    """(true overall gain, mean inference accuracy, gain over guard clients)."""
    models = [inference_model(cl, global_params) for cl in clients]
    record = detection.true_beta(clients, models, "equal")
    accs = [b + cl.p_i for b, cl in zip(record.per_client, clients)]
    guard = [b for b, kind in zip(record.per_client, behaviors) if kind == "honest_guard"]
    guard_beta = sum(guard) / len(guard) if guard else 0.0
    return record.overall, float(np.mean(accs)), guard_beta


def run_simulation(cfg: SimConfig, workers: int = 1) -> RunResult:
    """Execute a full run and collect its artifact.

    True-gain evaluation happens at round 1, every eval_every rounds, and
    in each of the last 10 rounds; metrics carry the latest value forward
    in between.
    """
    cfg.validate()
    clients, behaviors = _build_clients(cfg)
    server = protocol.ServerState(
        0,
        init_params(cfg.model, substream(cfg.seed, "init")),
        detection.DetectorState(c=cfg.c, nr=cfg.nr, nfl_flag=cfg.mode == "all_time"),
    )
    ctl = _ModeControl(cfg.mode)
    events: list[dict] = [
        {
            "round": 0,
            "type": "behavior_assignment",
            "attackers": [i for i, b in enumerate(behaviors) if b == "attacker"],
            "vanilla": [i for i, b in enumerate(behaviors) if b == "vanilla"],
        }
    ]
    trajectory = [_hash_params(server.global_params)]
    metrics: list[RoundMetrics] = []

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        beta_true = acc = beta_guard = float("nan")
        for r in range(1, cfg.rounds + 1):
            server, beta_r, round_events, _ = run_round(server, clients, cfg, ctl, pool)
            if r == 1 or r % cfg.eval_every == 0 or r > cfg.rounds - 10:
                beta_true, acc, beta_guard = _evaluate(clients, server.global_params, behaviors)
            events.extend(round_events)
            trajectory.append(_hash_params(server.global_params))
            metrics.append(
                RoundMetrics(
                    round=r,
                    beta_r=beta_r,
                    beta_win=server.detector.windowed,
                    beta_true=beta_true,
                    acc=acc,
                    beta_guard=beta_guard,
                    nfl_flag=server.nfl_flag,
                    events=tuple(ev["type"] for ev in round_events),
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()

    tail = metrics[-10:]
    summary = {
        "rounds": cfg.rounds,
        "final_acc": float(np.mean([m.acc for m in tail])),
        "final_beta_true": float(np.mean([m.beta_true for m in tail])),
        "final_beta_guard": float(np.mean([m.beta_guard for m in tail])),
        "final_beta_win": float(np.mean([m.beta_win for m in tail])),
        "report_rounds": [e["round"] for e in events if e["type"] == "nfl_report"],
        "cancel_rounds": [e["round"] for e in events if e["type"] == "nfl_cancel"],
        "final_nfl_flag": bool(server.nfl_flag),
    }
    adapted = {cl.client_id: cl.adapted for cl in clients if cl.adapted is not None}
    return RunResult(
        config=cfg,
        metrics=metrics,
        events=events,
        behaviors=behaviors,
        final_global=server.global_params,
        adapted=adapted,
        trajectory=trajectory,
        summary=summary,
    )
