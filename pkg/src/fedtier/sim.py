"""The round engine.

Three strategies over the same federation:

  partitioned  UCDs score their fresh shard with the frozen encoder,
               route samples (discard / local classifier training /
               transmit), then the classifiers are averaged; each AP
               trains the full model on its client's transmitted
               samples and the full models are averaged. One iteration
               spends two communication rounds.
  ucd_only     classic FL on the classifier only; the encoder never
               changes after deployment. One comm round per iteration.
  ap_only      clients upload their whole fresh shard; APs train the
               full model. One comm round per iteration.

Data is streaming: every participation treats the online shard as
freshly collected, so ap_only re-uploads it each time while partitioned
uploads only the routed slice.

Selected data is retained, not consumed. A UCD keeps the instances it
routed to local training and trains on the whole accumulated set each
round; that is what selection buys it, since storing every raw batch
would not fit. Warmup batches are trained on but not retained: until
the score queues fill there is no importance signal to justify a slot.
An AP likewise keeps every instance it has received for a client and
trains on the full set. Both stores evict oldest-first when the tier's
storage budget is hit. ucd_only has no selection, so it cannot afford
retention and trains on each fresh batch as it streams past.

Determinism contract: every stochastic step has its own named stream
(see rng.py), client phases touch only their own client's state, and
all reductions (averaging, ledger records) happen in ascending client
id order, so worker count cannot change any output bit.
"""
from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ExperimentConfig, STRATEGIES
from .cost import CostLedger, DeviceProfile, storage_overflow
from .data import (ClientShards, Dataset, dirichlet_partition, load_csv_dataset,
                   make_blobs, split_online_extra, split_pools)
from .mobility import (ConnectivityTrace, ConnectivityVector, Eoam, generate_eoam,
                       offline_to_epochs, sample_lambda, sample_online,
                       sample_online_simple)
from .partition import ModelPartition, build_partition, count_params, select_classifier
from .rng import (STREAM_DATA, STREAM_INIT, STREAM_MOBILITY, STREAM_PARTITION,
                  STREAM_PRETRAIN, STREAM_SAMPLING, STREAM_SELECTION, stream)
from .selection import SelectionParams, SelectionState, SlidingCDF, route_by_grad, route_by_loss


@dataclass
class ClientState:
    client_id: int
    shards: ClientShards
    selection: SelectionState
    classifier: nn.Network  # local copy; synced from global at each participation
    trace: ConnectivityTrace = field(default_factory=ConnectivityTrace)
    pending_transmit: list[int] = field(default_factory=list)  # dataset rows awaiting upload
    local_store: list[int] = field(default_factory=list)  # rows retained on the UCD
    ap_store: list[int] = field(default_factory=list)  # rows retained at the client's AP
    eoam: Eoam | None = None
    rng: np.random.Generator | None = None


@dataclass
class UcdPhaseResult:
    client_id: int
    classifier: nn.Network
    new_transmit: list[int]
    new_retained: list[int]
    train_samples: int
    selection_macs: int
    train_macs: int
    spent_units: int = 0


@dataclass
class ApPhaseResult:
    client_id: int
    partition: ModelPartition
    uploaded_samples: int
    train_macs: int


@dataclass
class RunResult:
    strategy: str
    seed: int
    rows: list[dict]
    ledger: CostLedger
    final_partition: ModelPartition
    final_accuracy: float
    best_accuracy: float
    storage_warnings: int
    dataset_hash: str


def _mean_arrays(arrays: list[np.ndarray], weights: list[float] | None = None) -> np.ndarray:
    """Elementwise (weighted) mean, shifted by the first array so that the
    mean of identical inputs is exactly the input (naive sum/K rounds)."""
    base = arrays[0]
    if len(arrays) == 1:
        return base.copy()
    acc = np.zeros_like(base)
    if weights is None:
        for a in arrays[1:]:
            acc += a - base
        return base + acc / len(arrays)
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    for a, w in zip(arrays[1:], weights[1:]):
        acc += (w / total) * (a - base)
    return base + acc


def fedavg_networks(nets: list[nn.Network], weights: list[float] | None = None) -> nn.Network:
    """Unweighted (or sample-weighted) elementwise parameter mean."""
    if not nets:
        raise ValueError("nothing to average")
    first = nets[0]
    for net in nets[1:]:
        if len(net.layers) != len(first.layers) or any(
            a.weights.shape != b.weights.shape or a.relu != b.relu
            for a, b in zip(net.layers, first.layers)
        ):
            raise ValueError("cannot average networks with different shapes")
    layers = []
    for i, ref in enumerate(first.layers):
        layers.append(nn.DenseLayer(
            weights=_mean_arrays([net.layers[i].weights for net in nets], weights),
            bias=_mean_arrays([net.layers[i].bias for net in nets], weights),
            relu=ref.relu,
        ))
    return nn.Network(layers=layers)


def fedavg_partitions(
    parts: list[ModelPartition], weights: list[float] | None = None
) -> ModelPartition:
    """Joint encoder+classifier mean; identical to averaging each part
    independently because the mean is elementwise."""
    return ModelPartition(
        encoder=fedavg_networks([p.encoder for p in parts], weights),
        classifier=fedavg_networks([p.classifier for p in parts], weights),
    )


def sample_clients(num_clients: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """round(A x fraction) distinct ids, uniform without replacement, ascending."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    k = round(num_clients * fraction)
    if k < 1:
        raise ValueError("fraction rounds to zero clients")
    return np.sort(rng.choice(num_clients, size=k, replace=False))


def _dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(ds.features.tobytes())
    h.update(ds.labels.tobytes())
    return h.hexdigest()[:16]


def _prepare_dataset(cfg: ExperimentConfig, seed: int):
    rng = stream(seed, STREAM_DATA)
    d = cfg.dataset
    if d.csv_path:
        ds = load_csv_dataset(d.csv_path)
    else:
        ds = make_blobs(d.classes, d.per_class, d.dim, d.spread, rng)
    train_idx, test_idx, pre_idx = split_pools(
        len(ds), d.test_fraction, d.pretrain_fraction, rng
    )
    return ds, train_idx, test_idx, pre_idx


def _pretrain_encoder(
    part: ModelPartition, ds: Dataset, pre_idx: np.ndarray, cfg: ExperimentConfig, seed: int
) -> None:
    """Centrally train the encoder on the held-out pretraining shard.

    Mode "clean" uses true labels; "label_shuffle" permutes the label
    vector across samples, destroying the feature-label pairing, which
    leaves the deployed encoder genuinely mistrained. The throwaway head
    keeps the deployed classifier untouched by pretraining.
    """
    m = cfg.model
    if m.pretrain_mode == "none" or m.pretrain_epochs == 0 or len(pre_idx) == 0:
        return
    rng = stream(seed, STREAM_PRETRAIN)
    x = ds.features[pre_idx]
    y = ds.labels[pre_idx].copy()
    if m.pretrain_mode == "label_shuffle":
        y = y[rng.permutation(len(y))]
    head = nn.make_network([part.encoder.out_dim, ds.classes], rng)
    net = nn.compose(part.encoder, head)  # shares encoder layers: trains them in place
    f = cfg.federation
    for _ in range(m.pretrain_epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(y), f.batch_size):
            b = order[s : s + f.batch_size]
            _, grads, _ = nn.loss_and_grad(net, x[b], y[b], m.backward_multiplier)
            nn.sgd_step(net, grads, f.lr)


def _train_epochs(
    net: nn.Network,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    lr: float,
    backward_multiplier: float,
    rng: np.random.Generator,
) -> int:
    """SGD over shuffled minibatches; returns total MACs spent."""
    macs = 0
    n = len(y)
    if n == 0:
        return 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            b = order[s : s + batch_size]
            _, grads, pm = nn.loss_and_grad(net, x[b], y[b], backward_multiplier)
            nn.sgd_step(net, grads, lr)
            macs += pm.total
    return macs


def _extra_offline_training(
    state: ClientState,
    encoder: nn.Network,
    classifier: nn.Network,
    ds: Dataset,
    cfg: ExperimentConfig,
) -> int:
    """Spend banked offline units: one plain classifier epoch per unit on
    a fresh 20% slice of the extra shard. Returns MACs (encoder forward
    for the slice plus classifier training)."""
    units = state.trace.spend_units()
    extra = state.shards.extra
    if units == 0 or len(extra) == 0:
        return 0
    n_epochs, slice_size = offline_to_epochs(units, len(extra))
    if slice_size == 0:
        return 0
    f, m = cfg.federation, cfg.model
    macs = 0
    for _ in range(n_epochs):
        pick = state.rng.choice(len(extra), size=slice_size, replace=False)
        rows = extra[pick]
        feats, _, enc_macs = nn.forward(encoder, ds.features[rows])
        macs += enc_macs
        macs += _train_epochs(
            classifier, feats, ds.labels[rows], 1, f.batch_size, f.lr,
            m.backward_multiplier, state.rng,
        )
    return macs


@dataclass
class _ExtraSpend:
    selection_macs: int = 0
    train_macs: int = 0
    units: int = 0
    new_transmit: list[int] = field(default_factory=list)
    new_retained: list[int] = field(default_factory=list)


def _extra_offline_partitioned(
    state: ClientState,
    encoder: nn.Network,
    classifier: nn.Network,
    ds: Dataset,
    cfg: ExperimentConfig,
    params: SelectionParams,
) -> _ExtraSpend:
    """Spend banked offline units through the full on-device path: each
    unit scores a fresh 20% slice of the extra shard, routes it, trains
    the classifier one epoch on the kept part, and banks the transmit
    picks in the pending buffer for the next upload. Offline time
    thereby feeds the access point too, not just the classifier."""
    out = _ExtraSpend()
    units = state.trace.spend_units()
    extra = state.shards.extra
    if units == 0 or len(extra) == 0:
        return out
    n_epochs, slice_size = offline_to_epochs(units, len(extra))
    if slice_size == 0:
        return out
    out.units = n_epochs
    f, m = cfg.federation, cfg.model
    for _ in range(n_epochs):
        pick = state.rng.choice(len(extra), size=slice_size, replace=False)
        rows = extra[pick]
        x, y = ds.features[rows], ds.labels[rows]
        warm = len(state.selection.loss_cdf) < params.warmup_min
        feats, _, enc_macs = nn.forward(encoder, x)
        losses, norms, clf_macs = nn.losses_and_grad_norms(classifier, feats, y)
        out.selection_macs += enc_macs + clf_macs
        routed = route_by_loss(losses, state.selection.loss_cdf, params, state.rng)
        dc = routed.classifier_idx
        copies = route_by_grad(norms[dc], state.selection.grad_cdf, params, state.rng)
        dm = np.sort(np.concatenate([routed.transmit_idx, dc[copies]]))
        out.train_macs += _train_epochs(
            classifier, feats[dc], y[dc], 1, f.batch_size, f.lr,
            m.backward_multiplier, state.rng,
        )
        out.new_transmit.extend(int(row) for row in rows[dm])
        if not warm:
            out.new_retained.extend(int(row) for row in rows[dc])
    return out


def _ucd_phase_partitioned(
    state: ClientState,
    encoder: nn.Network,
    global_classifier: nn.Network,
    ds: Dataset,
    cfg: ExperimentConfig,
    params: SelectionParams,
) -> UcdPhaseResult:
    """Score the fresh shard, route it, train the classifier on the
    retained store plus the fresh local slice. The scoring pass is one
    shared forward: its losses drive the routing and its activations
    give the per-sample gradient norms."""
    rows = state.shards.online
    x, y = ds.features[rows], ds.labels[rows]
    clf = nn.clone_network(global_classifier)
    warm = len(state.selection.loss_cdf) < params.warmup_min
    feats, _, enc_macs = nn.forward(encoder, x)
    losses, norms, clf_macs = nn.losses_and_grad_norms(clf, feats, y)
    routed = route_by_loss(losses, state.selection.loss_cdf, params, state.rng)
    dc = routed.classifier_idx
    copies = route_by_grad(norms[dc], state.selection.grad_cdf, params, state.rng)
    dm = np.sort(np.concatenate([routed.transmit_idx, dc[copies]]))
    f, m = cfg.federation, cfg.model
    train_macs = 0
    train_feats, train_y = feats[dc], y[dc]
    if state.local_store:
        store_rows = np.asarray(state.local_store, dtype=np.int64)
        store_feats, _, store_macs = nn.forward(encoder, ds.features[store_rows])
        train_macs += store_macs
        train_feats = np.concatenate([store_feats, train_feats])
        train_y = np.concatenate([ds.labels[store_rows], train_y])
    train_macs += _train_epochs(
        clf, train_feats, train_y, f.epochs, f.batch_size, f.lr,
        m.backward_multiplier, state.rng,
    )
    spend = _extra_offline_partitioned(state, encoder, clf, ds, cfg, params)
    return UcdPhaseResult(
        client_id=state.client_id,
        classifier=clf,
        new_transmit=[int(row) for row in rows[dm]] + spend.new_transmit,
        new_retained=([] if warm else [int(row) for row in rows[dc]]) + spend.new_retained,
        train_samples=len(train_y),
        selection_macs=enc_macs + clf_macs + spend.selection_macs,
        train_macs=train_macs + spend.train_macs,
        spent_units=spend.units,
    )


def _ucd_phase_plain(
    state: ClientState,
    encoder: nn.Network,
    global_classifier: nn.Network,
    ds: Dataset,
    cfg: ExperimentConfig,
) -> UcdPhaseResult:
    """Classifier-only training on the whole fresh shard (no selection)."""
    rows = state.shards.online
    clf = nn.clone_network(global_classifier)
    feats, _, enc_macs = nn.forward(encoder, ds.features[rows])
    f, m = cfg.federation, cfg.model
    train_macs = enc_macs + _train_epochs(
        clf, feats, ds.labels[rows], f.epochs, f.batch_size, f.lr,
        m.backward_multiplier, state.rng,
    )
    train_macs += _extra_offline_training(state, encoder, clf, ds, cfg)
    return UcdPhaseResult(
        client_id=state.client_id,
        classifier=clf,
        new_transmit=[],
        new_retained=[],
        train_samples=len(rows),
        selection_macs=0,
        train_macs=train_macs,
    )


def _ap_phase(
    state: ClientState,
    global_part: ModelPartition,
    new_rows: list[int],
    ds: Dataset,
    cfg: ExperimentConfig,
    extra_epochs: int = 0,
) -> ApPhaseResult:
    """Full-model training on everything the AP holds for this client:
    its retained store plus the instances uploaded this round. An AP
    with nothing to train on is a no-op and returns the global model
    unchanged, which damps the average toward the current global.

    extra_epochs mirrors the client's banked offline time: the AP keeps
    training while its device is away, one extra epoch per offline unit,
    settled when the device reconnects. Extra epochs follow the same 20%
    rule as on-device spending, each drawing a fresh slice of the store
    rather than replaying all of it."""
    enc = nn.clone_network(global_part.encoder)
    clf = nn.clone_network(global_part.classifier)
    full = nn.compose(enc, clf)
    rows = np.asarray(list(state.ap_store) + list(new_rows), dtype=np.int64)
    f, m = cfg.federation, cfg.model
    macs = _train_epochs(
        full, ds.features[rows], ds.labels[rows], f.epochs, f.batch_size,
        f.lr, m.backward_multiplier, state.rng,
    )
    if extra_epochs and len(rows):
        _, slice_size = offline_to_epochs(extra_epochs, len(rows))
        for _ in range(extra_epochs):
            pick = state.rng.choice(len(rows), size=slice_size, replace=False)
            macs += _train_epochs(
                full, ds.features[rows[pick]], ds.labels[rows[pick]], 1,
                f.batch_size, f.lr, m.backward_multiplier, state.rng,
            )
    return ApPhaseResult(
        client_id=state.client_id,
        partition=ModelPartition(encoder=enc, classifier=clf),
        uploaded_samples=len(new_rows),
        train_macs=macs,
    )


def _map_clients(fn, args_list, pool):
    """Run one task per client; order of results = order of args_list."""
    if pool is None:
        return [fn(*args) for args in args_list]
    return list(pool.map(lambda args: fn(*args), args_list))


def run(
    cfg: ExperimentConfig, strategy: str, seed: int, workers: int | None = None
) -> RunResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    f, m, mob = cfg.federation, cfg.model, cfg.mobility
    workers = cfg.run.workers if workers is None else workers

    ds, train_idx, test_idx, pre_idx = _prepare_dataset(cfg, seed)
    test_x, test_y = ds.features[test_idx], ds.labels[test_idx]

    encoder_dims = [ds.features.shape[1], *m.encoder_widths]
    budget = cfg.memory_budget()
    chosen = select_classifier(
        cfg.classifier_candidates(), budget, encoder_dims[-1], m.policy
    )
    global_part = build_partition(encoder_dims, chosen, budget, stream(seed, STREAM_INIT))
    _pretrain_encoder(global_part, ds, pre_idx, cfg, seed)

    ucd_prof = cfg.devices.ucd.to_profile("ucd")
    ap_prof = cfg.devices.ap.to_profile("ap")
    params = cfg.selection_params()
    bpp = m.bytes_per_param
    cls_bytes = count_params(global_part.classifier) * bpp
    model_bytes = (count_params(global_part.encoder) + count_params(global_part.classifier)) * bpp
    sample_bytes = cfg.devices.sample_bytes

    part_rng = stream(seed, STREAM_PARTITION)
    assignments = dirichlet_partition(ds.labels[train_idx], f.num_clients, cfg.dataset.lda_alpha, part_rng)
    lam: ConnectivityVector | None = None
    if mob.enabled:
        lam = sample_lambda(mob.n_locations, mob.lambda_bucket, stream(seed, STREAM_MOBILITY))
    clients = []
    for cid in range(f.num_clients):
        clients.append(ClientState(
            client_id=cid,
            shards=split_online_extra(train_idx[assignments[cid]], part_rng),
            selection=SelectionState(
                loss_cdf=SlidingCDF(cfg.selection.queue_capacity),
                grad_cdf=SlidingCDF(cfg.selection.queue_capacity),
            ),
            classifier=nn.clone_network(global_part.classifier),
            eoam=generate_eoam(mob.n_slots, mob.n_locations, stream(seed, STREAM_MOBILITY, cid))
            if mob.enabled else None,
            rng=stream(seed, STREAM_SELECTION, cid),
        ))

    ledger = CostLedger()
    # one-time model deployment to every device that holds one
    if strategy in ("partitioned", "ucd_only"):
        for c in clients:
            ledger.record(0, "ucd", "comm_down", ucd_prof, nbytes=model_bytes)

    n_iters = f.rounds // 2 if strategy == "partitioned" else f.rounds
    comm_per_iter = 2 if strategy == "partitioned" else 1
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    rows: list[dict] = []
    storage_warnings = 0
    best_acc = 0.0
    try:
        for r in range(n_iters):
            sampled = sample_clients(
                f.num_clients, f.participation_fraction, stream(seed, STREAM_SAMPLING, r)
            )
            # connectivity is device time, not participation time: every
            # client flips its gate each round and banks a unit when offline
            sampled_set = set(int(cid) for cid in sampled)
            online: list[int] = []
            gates: dict[int, np.random.Generator] = {}
            for cid in range(f.num_clients):
                grng = stream(seed, STREAM_MOBILITY, cid, r)
                if mob.enabled:
                    ok = sample_online(clients[cid].eoam, lam, r % mob.n_slots, grng)
                else:
                    ok = sample_online_simple(ucd_prof.disconnect_prob, grng)
                clients[cid].trace.record(ok)
                if ok and cid in sampled_set:
                    online.append(cid)
                    gates[cid] = grng
            transmitted = 0
            units_spent: dict[int, int] = {}

            if strategy in ("partitioned", "ucd_only"):
                if strategy == "partitioned":
                    results = _map_clients(
                        _ucd_phase_partitioned,
                        [(clients[cid], global_part.encoder, global_part.classifier,
                          ds, cfg, params) for cid in online],
                        pool,
                    )
                else:
                    results = _map_clients(
                        _ucd_phase_plain,
                        [(clients[cid], global_part.encoder, global_part.classifier,
                          ds, cfg) for cid in online],
                        pool,
                    )
                for res in results:  # ascending client id: online is sorted
                    ledger.record(r, "ucd", "comm_down", ucd_prof, nbytes=cls_bytes)
                    if res.selection_macs:
                        ledger.record(r, "ucd", "selection_compute", ucd_prof,
                                      macs=res.selection_macs)
                    ledger.record(r, "ucd", "train_compute", ucd_prof, macs=res.train_macs)
                    ledger.record(r, "ucd", "comm_up", ucd_prof, nbytes=cls_bytes)
                    st = clients[res.client_id]
                    st.classifier = res.classifier
                    st.pending_transmit.extend(res.new_transmit)
                    st.local_store.extend(res.new_retained)
                    units_spent[res.client_id] = res.spent_units
                if results:
                    wts = None
                    if f.weighted_fedavg and sum(res.train_samples for res in results) > 0:
                        wts = [float(res.train_samples) for res in results]
                    avg = fedavg_networks([res.classifier for res in results], wts)
                    global_part = ModelPartition(encoder=global_part.encoder, classifier=avg)

            if strategy == "partitioned":
                # every reachable AP joins the full-model round, no-ops included
                ap_ids = [cid for cid in online if _ap_reachable(gates[cid], ap_prof)]
                ap_results = _map_clients(
                    _ap_phase,
                    [(clients[cid], global_part, clients[cid].pending_transmit, ds, cfg,
                      units_spent.get(cid, 0)) for cid in ap_ids],
                    pool,
                )
                for res in ap_results:
                    st = clients[res.client_id]
                    if res.uploaded_samples:
                        ledger.record(r, "ucd", "comm_up", ucd_prof,
                                      nbytes=res.uploaded_samples * sample_bytes)
                    ledger.record(r, "ap", "comm_down", ap_prof, nbytes=model_bytes)
                    if res.train_macs:
                        ledger.record(r, "ap", "train_compute", ap_prof, macs=res.train_macs)
                    ledger.record(r, "ap", "comm_up", ap_prof, nbytes=model_bytes)
                    transmitted += res.uploaded_samples
                    st.ap_store.extend(st.pending_transmit)
                    st.pending_transmit = []
                if ap_results:
                    wts = None
                    if f.weighted_fedavg and sum(res.uploaded_samples for res in ap_results) > 0:
                        wts = [float(res.uploaded_samples) for res in ap_results]
                    global_part = fedavg_partitions([res.partition for res in ap_results], wts)

            elif strategy == "ap_only":
                ap_results = _map_clients(
                    _ap_phase,
                    [(clients[cid], global_part,
                      [int(row) for row in clients[cid].shards.online], ds, cfg)
                     for cid in online],
                    pool,
                )
                for res in ap_results:
                    st = clients[res.client_id]
                    ledger.record(r, "ucd", "comm_up", ucd_prof,
                                  nbytes=res.uploaded_samples * sample_bytes)
                    ledger.record(r, "ap", "comm_down", ap_prof, nbytes=model_bytes)
                    ledger.record(r, "ap", "train_compute", ap_prof, macs=res.train_macs)
                    ledger.record(r, "ap", "comm_up", ap_prof, nbytes=model_bytes)
                    transmitted += res.uploaded_samples
                    st.ap_store.extend(int(row) for row in st.shards.online)
                if ap_results:
                    wts = None
                    if f.weighted_fedavg and sum(res.uploaded_samples for res in ap_results) > 0:
                        wts = [float(res.uploaded_samples) for res in ap_results]
                    global_part = fedavg_partitions([res.partition for res in ap_results], wts)

            for cid in sampled:
                st = clients[cid]
                reserved = 0
                if strategy != "ap_only":
                    reserved += cls_bytes
                    reserved += (len(st.selection.loss_cdf) + len(st.selection.grad_cdf)) * 8
                dropped = 0

                def _used() -> int:
                    return reserved + (len(st.local_store) + len(st.pending_transmit)) * sample_bytes

                # purge oldest first; committed uploads go last
                while st.local_store and storage_overflow(_used(), ucd_prof):
                    st.local_store.pop(0)
                    dropped += 1
                while st.pending_transmit and storage_overflow(_used(), ucd_prof):
                    st.pending_transmit.pop(0)
                    dropped += 1
                while st.ap_store and storage_overflow(len(st.ap_store) * sample_bytes, ap_prof):
                    st.ap_store.pop(0)
                    dropped += 1
                if dropped or storage_overflow(_used(), ucd_prof):
                    storage_warnings += 1
                    warnings.warn(
                        f"client {cid} round {r}: storage pressure, "
                        f"dropped {dropped} retained instances"
                    )

            acc = nn.accuracy(
                nn.compose(global_part.encoder, global_part.classifier), test_x, test_y
            )
            best_acc = max(best_acc, acc)
            cell = {t: ledger.totals(tier=t, round_idx=r) for t in ("ucd", "ap")}
            rows.append({
                "round": r,
                "comm_round": comm_per_iter * (r + 1),
                "accuracy": acc,
                "participants": len(sampled),
                "online": len(online),
                "transmitted_samples": transmitted,
                "ucd_macs": cell["ucd"].macs,
                "ucd_bytes": cell["ucd"].nbytes,
                "ucd_seconds": cell["ucd"].seconds,
                "ucd_joules": cell["ucd"].joules,
                "ap_macs": cell["ap"].macs,
                "ap_bytes": cell["ap"].nbytes,
                "ap_seconds": cell["ap"].seconds,
                "ap_joules": cell["ap"].joules,
            })
    finally:
        if pool is not None:
            pool.shutdown()

    return RunResult(
        strategy=strategy,
        seed=seed,
        rows=rows,
        ledger=ledger,
        final_partition=global_part,
        final_accuracy=rows[-1]["accuracy"] if rows else 0.0,
        best_accuracy=best_acc,
        storage_warnings=storage_warnings,
        dataset_hash=_dataset_hash(ds),
    )


def _ap_reachable(grng: np.random.Generator, ap_prof: DeviceProfile) -> bool:
    if ap_prof.disconnect_prob <= 0.0:
        return True
    return bool(grng.random() >= ap_prof.disconnect_prob)
