"""DQN training loop with the blended TD + latent-permutation loss.

Two parameter sets of identical shape are kept: the local network theta is
trained, the target network theta-minus is a frozen copy refreshed every
`target_sync_period` training steps and never receives gradients (its forward
passes are pruned from the tape entirely).

Per training step a minibatch of stored transitions is replayed. Both
networks re-embed raw observations with their current encoder weights, run
the graph stage (polynomial GCN filter or the attention stack, depending on
the algorithm), and produce per-action values. For GS-* algorithms the
permutation network matches the local features at t to the target features at
t+1, predicts the next-step features by permuting the embedded current ones,
and (a) blends the predicted next-step action values into the TD target with
weights alpha/beta, (b) adds the prediction error as an auxiliary loss. With
beta = 0 and a zero auxiliary weight the computation degenerates exactly to
the plain DQN-over-graph baseline, bit for bit.

All agents share one parameter set. Replay stores observations plus graph
topology, not features, so embeddings always reflect current weights.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import gridworld as gw
from .autodiff import ContractError, ParamStore, RngStream, ShapeError, Tensor
from .gnn import GatLayerParams, GcnParams, QHeadParams, gat_stack, gcn_forward, q_values
from .graphs import GraphSnapshot, build_graph, embed_observations, shift_operator
from .sinkhorn import GsParams, gs_network, predict_next

ALGORITHMS = ("GCN", "GS-GCN", "GAT", "GS-GAT")
LOSS_MODES = ("decomposed", "paper_literal")
OPTIMIZERS = ("sgd", "momentum")

CHECKPOINT_MAGIC = b"GSGATCK1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    gamma: float = 0.95
    alpha: float = 0.7
    beta: float = 0.3
    gs_loss_weight: float = 1.0
    learning_rate: float = 0.001
    batch_size: int = 16
    buffer_capacity: int = 20000
    target_sync_period: int = 200
    episodes: int = 511
    train_start_episode: int = 44
    epsilon_start: float = 0.9
    epsilon_floor: float = 0.02
    epsilon_decay_per_episode: float = 0.05
    epsilon_decay_start_episode: int = 60
    loss_mode: str = "decomposed"
    seed: int = 0
    normalize_blend: bool = True
    # architecture
    feature_dim: int = 64
    num_heads: int = 4
    head_dim: int = 16
    gat_layers: int = 2
    nonlinearity: str = "relu"
    attention_scaled: bool = True
    gcn_order: int = 2
    gcn_shift: str = "random_walk"
    neighbor_count: int = 3
    # permutation network
    temperature: float = 0.5
    sinkhorn_iters: int = 20
    noise_scale: float = 1.0
    # optimizer
    optimizer: str = "sgd"
    momentum: float = 0.9

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("blend weights alpha and beta must be >= 0")
        if self.normalize_blend and abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError(f"alpha + beta must equal 1 (got {self.alpha + self.beta}); "
                             "set normalize_blend = false to lift this")
        if self.gs_loss_weight < 0:
            raise ValueError("gs_loss_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need buffer_capacity >= batch_size >= 1")
        if self.target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")
        if self.episodes < 1 or self.train_start_episode < 1:
            raise ValueError("episodes and train_start_episode must be >= 1")
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_floor <= epsilon_start <= 1")
        if self.epsilon_decay_per_episode < 0 or self.epsilon_decay_start_episode < 0:
            raise ValueError("epsilon decay parameters must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.nonlinearity not in ad.NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if min(self.feature_dim, self.num_heads, self.head_dim, self.gat_layers) < 1:
            raise ValueError("architecture dims must be >= 1")
        if self.gcn_order < 0:
            raise ValueError("gcn_order must be >= 0")
        if self.neighbor_count < 1:
            raise ValueError("neighbor_count must be >= 1")
        if self.temperature <= 0 or self.sinkhorn_iters < 1 or self.noise_scale < 0:
            raise ValueError("bad permutation-network parameters")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


def effective_config(cfg: TrainConfig, algorithm: str) -> TrainConfig:
    """Per-algorithm view: plain algorithms run with the GS pathway disabled."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm.startswith("GS-"):
        return cfg
    return replace(cfg, alpha=1.0, beta=0.0, gs_loss_weight=0.0)


@dataclass
class Transition:
    obs_t: np.ndarray
    actions_t: np.ndarray
    rewards_t: np.ndarray
    obs_t1: np.ndarray
    graph_t: GraphSnapshot
    graph_t1: GraphSnapshot
    alive_t: np.ndarray
    alive_t1: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring; batches are drawn uniformly without replacement."""

    def __init__(self, capacity: int, rng: RngStream):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self._rng = rng
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._cursor] = tr
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, k: int) -> list[Transition]:
        if k > len(self._items):
            raise ContractError(f"cannot sample {k} of {len(self._items)} items")
        idx = self._rng.choice_without_replacement(len(self._items), k)
        return [self._items[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


def init_params(rng: RngStream, obs_dim: int, cfg: TrainConfig,
                algorithm: str) -> ParamStore:
    """Fresh parameter store; declaration order is the checkpoint order.

    Every algorithm creates the permutation-network weights too, so a plain
    run and its GS twin draw identical initial values from the same stream.
    """
    store = ParamStore()
    d = cfg.feature_dim

    def xavier(name, rows, cols):
        limit = np.sqrt(6.0 / (rows + cols))
        store.add(name, rng.uniform((rows, cols)) * 2 * limit - limit)

    xavier("encoder.w", obs_dim, d)
    store.add("encoder.b", np.zeros((1, d)))
    if algorithm.endswith("GCN"):
        for k in range(cfg.gcn_order + 1):
            store.add(f"gcn.h{k}", rng.uniform((1, 1)) - 0.5)
    else:
        for layer in range(cfg.gat_layers):
            for m in range(cfg.num_heads):
                xavier(f"gat{layer}.h{m}.wq", d, cfg.head_dim)
                xavier(f"gat{layer}.h{m}.wk", d, cfg.head_dim)
                xavier(f"gat{layer}.h{m}.wv", d, cfg.head_dim)
            xavier(f"gat{layer}.mix", cfg.num_heads * cfg.head_dim, d)
    xavier("qhead.w", d, gw.NUM_ACTIONS)
    store.add("qhead.b", np.zeros((1, gw.NUM_ACTIONS)))
    xavier("gs.wa", d, d)
    xavier("gs.wb", d, d)
    xavier("gs.wp", d, d)
    return store


class QNetworks:
    """Local (trained) and target (frozen) parameter sets plus optimizer state."""

    def __init__(self, local: ParamStore, cfg: TrainConfig, algorithm: str):
        self.local = local
        self.target = local.clone(trainable=False)
        self.cfg = cfg
        self.algorithm = algorithm
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(t.value) for name, t in local.items()
        }

    def sync_target(self) -> None:
        self.target.copy_values_from(self.local)

    def gat_layers_of(self, store: ParamStore) -> list[GatLayerParams]:
        cfg = self.cfg
        layers = []
        for layer in range(cfg.gat_layers):
            heads = [
                (store[f"gat{layer}.h{m}.wq"], store[f"gat{layer}.h{m}.wk"],
                 store[f"gat{layer}.h{m}.wv"])
                for m in range(cfg.num_heads)
            ]
            layers.append(GatLayerParams(heads=heads, mix=store[f"gat{layer}.mix"],
                                         nonlinearity=cfg.nonlinearity,
                                         scaled=cfg.attention_scaled))
        return layers

    def gcn_params_of(self, store: ParamStore) -> GcnParams:
        taps = [store[f"gcn.h{k}"] for k in range(self.cfg.gcn_order + 1)]
        return GcnParams(taps=taps, nonlinearity=self.cfg.nonlinearity)

    def qhead_of(self, store: ParamStore) -> QHeadParams:
        return QHeadParams(weight=store["qhead.w"], bias=store["qhead.b"])

    def gs_params(self) -> GsParams:
        cfg = self.cfg
        return GsParams(score_left=self.local["gs.wa"],
                        score_right=self.local["gs.wb"],
                        embed=self.local["gs.wp"],
                        temperature=cfg.temperature,
                        sinkhorn_iters=cfg.sinkhorn_iters,
                        noise_scale=cfg.noise_scale)


def build_networks(env_cfg: gw.EnvConfig, cfg: TrainConfig, algorithm: str,
                   init_rng: RngStream) -> QNetworks:
    cfg.validate()
    local = init_params(init_rng, env_cfg.obs_dim, cfg, algorithm)
    return QNetworks(local, cfg, algorithm)


@dataclass
class ForwardOut:
    features: Tensor
    gnn_out: Tensor
    q: Tensor
    alive: np.ndarray


def forward_pipeline(obs: np.ndarray, snapshots: list[GraphSnapshot],
                     nets: QNetworks, store: ParamStore) -> ForwardOut:
    """Embed -> graph stage -> Q head over a stack of per-item node blocks.

    `obs` holds the row-concatenated observations of every snapshot in order;
    items never exchange information because masks and shift operators are
    block-diagonal.
    """
    cfg = nets.cfg
    alive = np.concatenate([g.alive for g in snapshots])
    if obs.shape[0] != alive.shape[0]:
        raise ShapeError(f"{obs.shape[0]} observation rows for {alive.shape[0]} nodes")
    x = embed_observations(obs, store["encoder.w"], store["encoder.b"],
                           alive, cfg.nonlinearity)
    if nets.algorithm.endswith("GCN"):
        shift = _block_diag([shift_operator(g, cfg.gcn_shift) for g in snapshots])
        z = gcn_forward(shift, x, nets.gcn_params_of(store))
    else:
        mask = _block_diag_bool([g.attention_mask() for g in snapshots])
        z = gat_stack(x, nets.gat_layers_of(store), mask)
    q = q_values(z, nets.qhead_of(store), alive)
    return ForwardOut(features=x, gnn_out=z, q=q, alive=alive)


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=np.float64)
    at = 0
    for b in blocks:
        k = b.shape[0]
        out[at:at + k, at:at + k] = b
        at += k
    return out


def _block_diag_bool(blocks: list[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=bool)
    at = 0
    for b in blocks:
        k = b.shape[0]
        out[at:at + k, at:at + k] = b
        at += k
    return out


# ---------------------------------------------------------------------------
# Policies and schedules
# ---------------------------------------------------------------------------


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    """Exploration rate for a 1-based episode index."""
    if episode < 1:
        raise ContractError("episodes are 1-based")
    if episode <= cfg.epsilon_decay_start_episode:
        return cfg.epsilon_start
    decayed = cfg.epsilon_start - cfg.epsilon_decay_per_episode * (
        episode - cfg.epsilon_decay_start_episode)
    return max(cfg.epsilon_floor, decayed)


def select_actions(q: np.ndarray, epsilon: float, alive: np.ndarray,
                   rng: RngStream) -> np.ndarray:
    """Independent epsilon-greedy per alive agent; dead agents no-op.

    Ties in a Q row resolve to the lowest action index. Only alive agents
    consume randomness, in agent order, so trajectories are reproducible.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must be in [0, 1], got {epsilon}")
    n = q.shape[0]
    actions = np.full(n, gw.NOOP, dtype=np.int64)
    for i in range(n):
        if not alive[i]:
            continue
        if float(rng.uniform()) < epsilon:
            actions[i] = int(rng.integers(gw.NUM_ACTIONS))
        else:
            actions[i] = int(np.argmax(q[i]))
    return actions


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def compute_losses(batch: list[Transition], nets: QNetworks, cfg: TrainConfig,
                   rng: RngStream) -> tuple[Tensor, dict]:
    """Blended TD loss plus the permutation-prediction loss over a minibatch.

    The TD target bootstraps from the frozen target network; for GS-*
    configurations the next-step values blend the target network's output
    with values of the predicted next-step features (weights alpha / beta),
    and the prediction error itself enters the loss. Terminal transitions
    bootstrap nothing. Dead agents contribute exactly zero everywhere.
    """
    if not batch:
        raise ContractError("empty minibatch")
    use_gs = cfg.beta != 0.0 or cfg.gs_loss_weight != 0.0
    n_agents = batch[0].obs_t.shape[0]

    obs_t = np.concatenate([tr.obs_t for tr in batch], axis=0)
    obs_t1 = np.concatenate([tr.obs_t1 for tr in batch], axis=0)
    local_out = forward_pipeline(obs_t, [tr.graph_t for tr in batch], nets, nets.local)
    target_out = forward_pipeline(obs_t1, [tr.graph_t1 for tr in batch], nets, nets.target)

    actions = np.concatenate([tr.actions_t for tr in batch])
    rewards = np.concatenate([tr.rewards_t for tr in batch])[:, None]
    nonterminal = np.concatenate([
        np.full(n_agents, 0.0 if tr.terminal else 1.0) for tr in batch
    ])[:, None]

    chosen_q = ad.gather_cols(local_out.q, actions)

    gs_sq_terms: Tensor | None = None
    if use_gs:
        gs_p = nets.gs_params()
        target_qhead = nets.qhead_of(nets.target)
        blended_parts = []
        sq_parts = []
        for b, tr in enumerate(batch):
            lo, hi = b * n_agents, (b + 1) * n_agents
            gat_t_b = ad.take_rows(local_out.gnn_out, lo, hi)
            gat_t1_b = ad.take_rows(target_out.gnn_out, lo, hi)
            p_soft = gs_network(gat_t_b, gat_t1_b, gs_p, rng, "soft",
                                tr.alive_t, tr.alive_t1)
            pred = predict_next(gat_t_b, p_soft, nets.local["gs.wp"])
            alive1 = tr.alive_t1.astype(np.float64)[:, None]
            pred = ad.mul(pred, alive1)
            q_hat = q_values(pred, target_qhead, tr.alive_t1)
            q_t1_b = ad.take_rows(target_out.q, lo, hi)
            blended_parts.append(ad.add(ad.mul(q_t1_b, cfg.alpha),
                                        ad.mul(q_hat, cfg.beta)))
            diff = ad.sub(pred, gat_t1_b)
            sq_parts.append(ad.reduce_sum(ad.square(diff), axis=1, keepdims=True))
        blended = ad.concat_rows(blended_parts)
        gs_sq_terms = ad.concat_rows(sq_parts)
    else:
        blended = ad.mul(target_out.q, cfg.alpha)

    next_best = ad.reduce_max(blended, axis=1, keepdims=True)
    td_target = ad.add(rewards, ad.mul(next_best, cfg.gamma * nonterminal))
    td_residual = ad.sub(td_target, chosen_q)

    if cfg.loss_mode == "decomposed":
        loss = ad.mean(ad.square(td_residual))
        if use_gs and cfg.gs_loss_weight != 0.0:
            loss = ad.add(loss, ad.mul(ad.mean(gs_sq_terms), cfg.gs_loss_weight))
    else:  # paper_literal: square the sum of TD residual and prediction row norm
        if use_gs:
            loss = ad.mean(ad.square(ad.add(td_residual, ad.sqrt0(gs_sq_terms))))
        else:
            loss = ad.mean(ad.square(td_residual))

    stats = {
        "loss": float(loss.value),
        "td": float(np.mean(np.square(td_residual.value))),
        "gs": float(np.mean(gs_sq_terms.value)) if gs_sq_terms is not None else 0.0,
    }
    if not np.isfinite(stats["loss"]):
        raise ContractError("loss is not finite")
    return loss, stats


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train_step(buffer: ReplayBuffer, nets: QNetworks, cfg: TrainConfig,
               rng: RngStream) -> dict | None:
    """One gradient step; returns None (skip) while the buffer is underfull."""
    if len(buffer) < cfg.batch_size:
        return None
    batch = buffer.sample(cfg.batch_size)
    loss, stats = compute_losses(batch, nets, cfg, rng)
    ad.backward(loss, nets.local)
    for name, t in nets.local.items():
        g = t.grad
        if cfg.optimizer == "momentum":
            v = nets.velocity[name]
            v *= cfg.momentum
            v += g
            g = v
        t.value -= cfg.learning_rate * g
    nets.local.step += 1
    if nets.local.step % cfg.target_sync_period == 0:
        nets.sync_target()
    return stats


@dataclass
class EpisodeRecord:
    episode: int
    mean_reward: float
    epsilon: float
    loss: float | None
    live: int
    death: int
    kill: int
    wall_ms: int


def run_training(env_cfg: gw.EnvConfig, train_cfg: TrainConfig, algorithm: str,
                 on_episode=None) -> tuple[list[EpisodeRecord], QNetworks]:
    """Full training run; per-episode records stream to `on_episode` as made."""
    env_cfg.validate()
    cfg = effective_config(train_cfg, algorithm)
    cfg.validate()
    root = RngStream(cfg.seed)
    nets = build_networks(env_cfg, cfg, algorithm, root.spawn("init"))
    buffer = ReplayBuffer(cfg.buffer_capacity, root.spawn("replay"))
    action_rng = root.spawn("actions")
    gumbel_rng = root.spawn("gumbel")
    records: list[EpisodeRecord] = []

    for episode in range(1, cfg.episodes + 1):
        t0 = time.perf_counter()
        eps = epsilon_at(episode, cfg)
        state = gw.reset(env_cfg, root.spawn(("env", episode)))
        blue_ids = state.team_indices(gw.BLUE)
        n_blue = blue_ids.shape[0]

        obs = gw.observe_team(state, gw.BLUE)
        graph = build_graph(state.positions[blue_ids], state.alive[blue_ids],
                            cfg.neighbor_count)
        total_reward = 0.0
        losses: list[float] = []
        events: list[gw.StepResult] = []
        training = episode >= cfg.train_start_episode

        while not state.done:
            out = forward_pipeline(obs, [graph], nets, nets.local)
            blue_actions = select_actions(out.q.value, eps,
                                          state.alive[blue_ids], action_rng)
            if env_cfg.scenario == gw.BATTLE:
                actions = gw.scripted_enemy_policy(state)
                actions[blue_ids] = blue_actions
            else:
                actions = blue_actions
            alive_before = state.alive[blue_ids].copy()
            state, result = gw.step(state, actions)
            events.append(result)
            total_reward += float(result.per_agent_reward[blue_ids].sum())

            obs1 = gw.observe_team(state, gw.BLUE)
            graph1 = build_graph(state.positions[blue_ids],
                                 state.alive[blue_ids], cfg.neighbor_count)
            buffer.push(Transition(
                obs_t=obs, actions_t=blue_actions,
                rewards_t=result.per_agent_reward[blue_ids].copy(),
                obs_t1=obs1, graph_t=graph, graph_t1=graph1,
                alive_t=alive_before, alive_t1=state.alive[blue_ids].copy(),
                terminal=result.done,
            ))
            if training:
                stats = train_step(buffer, nets, cfg, gumbel_rng)
                if stats is not None:
                    losses.append(stats["loss"])
            obs, graph = obs1, graph1

        metrics = gw.team_metrics(events, env_cfg.scenario, n_blue)
        record = EpisodeRecord(
            episode=episode,
            mean_reward=total_reward / n_blue,
            epsilon=eps,
            loss=float(np.mean(losses)) if losses else None,
            live=metrics.live,
            death=metrics.death,
            kill=metrics.kill,
            wall_ms=int(round((time.perf_counter() - t0) * 1000.0)),
        )
        records.append(record)
        if on_episode is not None:
            on_episode(record)
    return records, nets


def evaluate_policy(env_cfg: gw.EnvConfig, cfg: TrainConfig, algorithm: str,
                    nets: QNetworks | None, episodes: int, seed: int,
                    epsilon: float = 0.0) -> list[EpisodeRecord]:
    """Greedy (or exploratory) rollouts without learning.

    With `nets` None actions are uniform random over the whole action set,
    which is the reference baseline policy.
    """
    env_cfg.validate()
    root = RngStream(seed)
    action_rng = root.spawn("actions")
    records: list[EpisodeRecord] = []
    for episode in range(1, episodes + 1):
        t0 = time.perf_counter()
        state = gw.reset(env_cfg, root.spawn(("env", episode)))
        blue_ids = state.team_indices(gw.BLUE)
        n_blue = blue_ids.shape[0]
        total_reward = 0.0
        events = []
        while not state.done:
            alive = state.alive[blue_ids]
            if nets is None:
                blue_actions = np.full(n_blue, gw.NOOP, dtype=np.int64)
                for i in range(n_blue):
                    if alive[i]:
                        blue_actions[i] = int(action_rng.integers(gw.NUM_ACTIONS))
            else:
                obs = gw.observe_team(state, gw.BLUE)
                graph = build_graph(state.positions[blue_ids], alive,
                                    cfg.neighbor_count)
                out = forward_pipeline(obs, [graph], nets, nets.local)
                blue_actions = select_actions(out.q.value, epsilon, alive, action_rng)
            if env_cfg.scenario == gw.BATTLE:
                actions = gw.scripted_enemy_policy(state)
                actions[blue_ids] = blue_actions
            else:
                actions = blue_actions
            state, result = gw.step(state, actions)
            events.append(result)
            total_reward += float(result.per_agent_reward[blue_ids].sum())
        metrics = gw.team_metrics(events, env_cfg.scenario, n_blue)
        records.append(EpisodeRecord(
            episode=episode, mean_reward=total_reward / n_blue, epsilon=epsilon,
            loss=None, live=metrics.live, death=metrics.death, kill=metrics.kill,
            wall_ms=int(round((time.perf_counter() - t0) * 1000.0)),
        ))
    return records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, store: ParamStore, algorithm: str,
                    extra: dict | None = None) -> None:
    """Versioned flat file: magic, JSON header, then raw little-endian f8 arrays."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "algorithm": algorithm,
        "params": [{"name": n, "shape": list(s)} for n, s in store.shapes()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in store.items():
            fh.write(np.ascontiguousarray(t.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint and validate its shapes manifest against the payload."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {header.get('format_version')}")
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ContractError(f"checkpoint truncated at parameter {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ContractError("trailing bytes after final parameter")
    return header, params


def restore_networks(header: dict, params: dict[str, np.ndarray],
                     env_cfg: gw.EnvConfig, cfg: TrainConfig) -> QNetworks:
    nets = build_networks(env_cfg, cfg, header["algorithm"], RngStream(0))
    expected = nets.local.shapes()
    got = [(n, tuple(a.shape)) for n, a in params.items()]
    if expected != got:
        raise ContractError("checkpoint shapes manifest does not match the model")
    for name, arr in params.items():
        np.copyto(nets.local[name].value, arr)
    nets.sync_target()
    return nets
