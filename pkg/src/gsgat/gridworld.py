"""Deterministic Gather and Battle gridworld scenarios.

Gather: one team forages food; a food cell is absorbed after five attacks and
only the absorbing hit is rewarded. Agents can kill each other with a single
attack (no reward for it). Battle: two equal teams of combat agents with
10 HP, 2 HP attack damage and 0.1 HP per-turn recovery; the red team is
driven by a scripted policy standing in for a pretrained opponent.

Within a step, attacks resolve first (in agent-index order, so the kill
credit is unambiguous), deaths commit, then moves resolve in agent-index
order (losers of a cell conflict stay put), then HP recovery. Dead agents are
"blacked out": their observations are all-zero and they vanish from every
other agent's channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, RngStream

GATHER = "gather"
BATTLE = "battle"
SCENARIOS = (GATHER, BATTLE)

BLUE = 0
RED = 1

# actions: 4 moves, 4 attacks, no-op; direction order is N, E, S, W
NUM_ACTIONS = 9
MOVE_N, MOVE_E, MOVE_S, MOVE_W = 0, 1, 2, 3
ATTACK_N, ATTACK_E, ATTACK_S, ATTACK_W = 4, 5, 6, 7
NOOP = 8
DIR_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
DIR_NAMES = ("N", "E", "S", "W")

FOOD_HITS = 5  # attacks needed to absorb one food cell

NUM_CHANNELS = 6  # oob, teammates, enemies, food, food hp fraction, own hp

# scenario combat mechanics: (hp max, attack damage, per-turn recovery)
MECHANICS = {
    GATHER: (1.0, 1.0, 0.0),
    BATTLE: (10.0, 2.0, 0.1),
}

DEFAULT_REWARDS = {
    GATHER: {"food": 5.0, "food_hit": 0.0, "step": -0.01, "death": -1.0,
             "attack": 0.0, "kill": 0.0},
    BATTLE: {"food": 0.0, "food_hit": 0.0, "step": -0.005, "death": -1.0,
             "attack": 0.2, "kill": 5.0},
}


class CapacityError(ValueError):
    """More entities requested than grid cells available."""


@dataclass
class EnvConfig:
    scenario: str
    grid_size: int = 30
    num_agents: int = 74          # per team in battle
    num_food: int = 157           # gather only
    view_size: int = 15
    max_steps: int = 300
    reward_table: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def defaults(cls, scenario: str) -> "EnvConfig":
        if scenario == GATHER:
            return cls(scenario=GATHER, grid_size=30, num_agents=74, num_food=157,
                       view_size=15, max_steps=300)
        if scenario == BATTLE:
            # the near-global battle view, clipped at borders; 29 is the
            # largest odd window that fits the 30-cell grid
            return cls(scenario=BATTLE, grid_size=30, num_agents=30, num_food=0,
                       view_size=29, max_steps=300)
        raise ValueError(f"unknown scenario {scenario!r}")

    def rewards(self) -> dict[str, float]:
        table = dict(DEFAULT_REWARDS[self.scenario])
        table.update(self.reward_table)
        return table

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.view_size % 2 != 1:
            raise ValueError(f"view_size must be odd, got {self.view_size}")
        if self.grid_size < self.view_size:
            raise ValueError(f"grid_size {self.grid_size} < view_size {self.view_size}")
        if self.num_agents < 1:
            raise ValueError("need at least one agent")
        if self.scenario == GATHER and self.num_food < 1:
            raise ValueError("gather needs at least one food cell")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        known = set(DEFAULT_REWARDS[self.scenario])
        bad = set(self.reward_table) - known
        if bad:
            raise ValueError(f"unknown reward keys {sorted(bad)}; valid: {sorted(known)}")

    @property
    def total_agents(self) -> int:
        return self.num_agents * (2 if self.scenario == BATTLE else 1)

    @property
    def obs_dim(self) -> int:
        return self.view_size * self.view_size * NUM_CHANNELS


@dataclass
class EnvState:
    config: EnvConfig
    positions: np.ndarray      # (N, 2) int
    hp: np.ndarray             # (N,) float
    team: np.ndarray           # (N,) int
    alive: np.ndarray          # (N,) bool
    food_pos: np.ndarray       # (F, 2) int
    food_attacks: np.ndarray   # (F,) int, attacks remaining
    food_alive: np.ndarray     # (F,) bool
    step_count: int = 0
    done: bool = False

    @property
    def num_agents(self) -> int:
        return self.positions.shape[0]

    def team_indices(self, team: int) -> np.ndarray:
        return np.flatnonzero(self.team == team)


@dataclass
class EventCounts:
    food_eaten: int = 0
    kills_by_team: tuple[int, int] = (0, 0)
    deaths_by_team: tuple[int, int] = (0, 0)


@dataclass
class StepResult:
    per_agent_reward: np.ndarray
    done: bool
    events: EventCounts


@dataclass
class TeamMetrics:
    live: int
    death: int
    kill: int
    ratio: float
    ratio_is_infinite: bool


def reset(config: EnvConfig, rng: RngStream | None = None) -> EnvState:
    """Place agents (and food for gather) on distinct cells from the seed."""
    config.validate()
    if rng is None:
        rng = RngStream(config.seed)
    g = config.grid_size

    if config.scenario == GATHER:
        needed = config.num_agents + config.num_food
        if needed > g * g:
            raise CapacityError(f"{needed} entities do not fit a {g}x{g} grid")
        cells = rng.permutation(g * g)[:needed]
        coords = np.stack([cells // g, cells % g], axis=1)
        positions = coords[: config.num_agents]
        food_pos = coords[config.num_agents:]
        team = np.zeros(config.num_agents, dtype=np.int64)
    else:
        half = g // 2
        if config.num_agents > g * half:
            raise CapacityError(f"{config.num_agents} agents do not fit half a {g}x{g} grid")
        left = rng.permutation(g * half)[: config.num_agents]
        right = rng.permutation(g * (g - half))[: config.num_agents]
        blue = np.stack([left // half, left % half], axis=1)
        red = np.stack([right // (g - half), right % (g - half) + half], axis=1)
        positions = np.concatenate([blue, red], axis=0)
        team = np.concatenate([
            np.zeros(config.num_agents, dtype=np.int64),
            np.ones(config.num_agents, dtype=np.int64),
        ])
        food_pos = np.zeros((0, 2), dtype=np.int64)

    n = positions.shape[0]
    hp_max = MECHANICS[config.scenario][0]
    f = food_pos.shape[0]
    return EnvState(
        config=config,
        positions=positions.astype(np.int64),
        hp=np.full(n, hp_max, dtype=np.float64),
        team=team,
        alive=np.ones(n, dtype=bool),
        food_pos=food_pos.astype(np.int64),
        food_attacks=np.full(f, FOOD_HITS, dtype=np.int64),
        food_alive=np.ones(f, dtype=bool),
    )


def _occupancy(state: EnvState) -> tuple[np.ndarray, np.ndarray]:
    g = state.config.grid_size
    agent_grid = np.full((g, g), -1, dtype=np.int64)
    for i in np.flatnonzero(state.alive):
        agent_grid[state.positions[i, 0], state.positions[i, 1]] = i
    food_grid = np.full((g, g), -1, dtype=np.int64)
    for f in np.flatnonzero(state.food_alive):
        food_grid[state.food_pos[f, 0], state.food_pos[f, 1]] = f
    return agent_grid, food_grid


def step(state: EnvState, actions) -> tuple[EnvState, StepResult]:
    """Advance one turn. Mutates and returns `state` plus the step outcome."""
    cfg = state.config
    n = state.num_agents
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (n,):
        raise ContractError(f"expected {n} actions, got shape {actions.shape}")
    if state.done:
        raise ContractError("episode already finished")

    hp_max, damage, recovery = MECHANICS[cfg.scenario]
    rewards_table = cfg.rewards()
    g = cfg.grid_size
    rewards = np.zeros(n, dtype=np.float64)
    alive_at_start = state.alive.copy()
    kills = [0, 0]
    deaths = [0, 0]
    food_eaten = 0

    agent_grid, food_grid = _occupancy(state)

    # attacks, in agent-index order; the hit that drops hp to 0 is the kill
    for i in range(n):
        if not state.alive[i] or not ATTACK_N <= actions[i] <= ATTACK_W:
            continue
        dr, dc = DIR_DELTAS[actions[i] - ATTACK_N]
        r, c = state.positions[i, 0] + dr, state.positions[i, 1] + dc
        if not (0 <= r < g and 0 <= c < g):
            continue
        j = agent_grid[r, c]
        if j >= 0:
            # in battle an attack on a teammate is not registered; gather has
            # a single free-for-all team whose members can kill each other
            if cfg.scenario == BATTLE and state.team[j] == state.team[i]:
                continue
            if state.hp[j] <= 0.0:
                continue  # already downed earlier this turn
            state.hp[j] -= damage
            rewards[i] += rewards_table["attack"]
            if state.hp[j] <= 0.0:
                rewards[i] += rewards_table["kill"]
                kills[state.team[i]] += 1
            continue
        f = food_grid[r, c]
        if f >= 0:
            state.food_attacks[f] -= 1
            rewards[i] += rewards_table["food_hit"]
            if state.food_attacks[f] == 0:
                state.food_alive[f] = False
                food_grid[r, c] = -1
                rewards[i] += rewards_table["food"]
                food_eaten += 1

    # commit deaths
    for j in range(n):
        if state.alive[j] and state.hp[j] <= 0.0:
            state.alive[j] = False
            state.hp[j] = 0.0
            deaths[state.team[j]] += 1
            rewards[j] += rewards_table["death"]
            agent_grid[state.positions[j, 0], state.positions[j, 1]] = -1

    # moves, in agent-index order; blocked cells leave the agent in place
    for i in range(n):
        if not state.alive[i] or not MOVE_N <= actions[i] <= MOVE_W:
            continue
        dr, dc = DIR_DELTAS[actions[i] - MOVE_N]
        r, c = state.positions[i, 0] + dr, state.positions[i, 1] + dc
        if not (0 <= r < g and 0 <= c < g):
            continue
        if agent_grid[r, c] >= 0 or food_grid[r, c] >= 0:
            continue
        agent_grid[state.positions[i, 0], state.positions[i, 1]] = -1
        agent_grid[r, c] = i
        state.positions[i] = (r, c)

    # recovery, then the living cost for everyone who acted this turn
    if recovery > 0.0:
        live = state.alive
        state.hp[live] = np.minimum(state.hp[live] + recovery, hp_max)
    rewards[alive_at_start] += rewards_table["step"]

    state.step_count += 1
    done = state.step_count >= cfg.max_steps
    if cfg.scenario == GATHER:
        done = done or not state.food_alive.any() or not state.alive.any()
    else:
        blue_up = state.alive[state.team == BLUE].any()
        red_up = state.alive[state.team == RED].any()
        done = done or not blue_up or not red_up
    state.done = done

    events = EventCounts(
        food_eaten=food_eaten,
        kills_by_team=(kills[0], kills[1]),
        deaths_by_team=(deaths[0], deaths[1]),
    )
    return state, StepResult(per_agent_reward=rewards, done=done, events=events)


def _channel_grids(state: EnvState) -> np.ndarray:
    """Global (4, G, G) stack: per-team presence, food presence, food hp."""
    g = state.config.grid_size
    grids = np.zeros((4, g, g), dtype=np.float64)
    for i in np.flatnonzero(state.alive):
        grids[state.team[i], state.positions[i, 0], state.positions[i, 1]] = 1.0
    for f in np.flatnonzero(state.food_alive):
        r, c = state.food_pos[f]
        grids[2, r, c] = 1.0
        grids[3, r, c] = state.food_attacks[f] / FOOD_HITS
    return grids


def observe(state: EnvState, agent_id: int,
            grids: np.ndarray | None = None) -> np.ndarray:
    """Agent-centered (view, view, channels) stack; all-zero when dead.

    Channels: out-of-bounds marker, own-team presence (self excluded), enemy
    presence, food presence, food hp fraction, own hp fraction broadcast over
    the plane. All values lie in [0, 1].
    """
    cfg = state.config
    v = cfg.view_size
    out = np.zeros((v, v, NUM_CHANNELS), dtype=np.float64)
    if not state.alive[agent_id]:
        return out
    if grids is None:
        grids = _channel_grids(state)
    g = cfg.grid_size
    half = v // 2
    r0, c0 = state.positions[agent_id]
    hp_max = MECHANICS[cfg.scenario][0]
    my_team = state.team[agent_id]

    rows = np.arange(r0 - half, r0 + half + 1)
    cols = np.arange(c0 - half, c0 + half + 1)
    in_r = (rows >= 0) & (rows < g)
    in_c = (cols >= 0) & (cols < g)
    oob = ~(in_r[:, None] & in_c[None, :])
    out[:, :, 0] = oob

    rr = rows[in_r]
    cc = cols[in_c]
    window = np.ix_(in_r, in_c)
    src = np.ix_(rr, cc)
    out[:, :, 1][window] = grids[my_team][src]
    out[:, :, 2][window] = grids[1 - my_team][src]
    out[:, :, 3][window] = grids[2][src]
    out[:, :, 4][window] = grids[3][src]
    out[half, half, 1] = 0.0  # self is implicit at the center
    out[:, :, 5] = state.hp[agent_id] / hp_max
    return out


def observe_team(state: EnvState, team: int = BLUE) -> np.ndarray:
    """Flattened observations for one team, (num team agents, obs_dim)."""
    grids = _channel_grids(state)
    ids = state.team_indices(team)
    return np.stack([observe(state, i, grids).reshape(-1) for i in ids], axis=0)


def scripted_enemy_policy(state: EnvState, rng: RngStream | None = None) -> np.ndarray:
    """Deterministic red-team controller for battle.

    Attack an adjacent blue agent when one exists (lowest blue index first),
    otherwise step along a shortest Manhattan path toward the nearest blue
    agent, direction ties broken in N, E, S, W order. The rng argument is
    accepted for interface stability; the rules here consume no randomness.
    """
    if state.config.scenario != BATTLE:
        raise ContractError("scripted enemy policy applies to battle only")
    n = state.num_agents
    actions = np.full(n, NOOP, dtype=np.int64)
    blue_ids = [i for i in state.team_indices(BLUE) if state.alive[i]]
    if not blue_ids:
        return actions
    blue_pos = {i: tuple(state.positions[i]) for i in blue_ids}

    for i in state.team_indices(RED):
        if not state.alive[i]:
            continue
        r, c = state.positions[i]
        attack_dir = None
        for j in blue_ids:  # ascending index
            jr, jc = blue_pos[j]
            for d, (dr, dc) in enumerate(DIR_DELTAS):
                if (r + dr, c + dc) == (jr, jc):
                    attack_dir = d
                    break
            if attack_dir is not None:
                break
        if attack_dir is not None:
            actions[i] = ATTACK_N + attack_dir
            continue
        # chase the nearest blue agent (ties: lowest index)
        best_j, best_d = None, None
        for j in blue_ids:
            d = abs(blue_pos[j][0] - r) + abs(blue_pos[j][1] - c)
            if best_d is None or d < best_d:
                best_j, best_d = j, d
        jr, jc = blue_pos[best_j]
        for d, (dr, dc) in enumerate(DIR_DELTAS):
            if abs(jr - (r + dr)) + abs(jc - (c + dc)) < best_d:
                actions[i] = MOVE_N + d
                break
    return actions


def team_metrics(episode_events: list[StepResult], scenario: str,
                 num_agents: int) -> TeamMetrics:
    """Episode-level team metrics.

    Gather: (live, death, live/death) over the single team. Battle: (kill,
    death, kill/death) from the blue team's perspective. A zero denominator
    reports the numerator as the ratio and raises the infinite flag.
    """
    blue_deaths = sum(r.events.deaths_by_team[BLUE] for r in episode_events)
    red_deaths = sum(r.events.deaths_by_team[RED] for r in episode_events)
    if scenario == GATHER:
        live = num_agents - blue_deaths
        num, den = live, blue_deaths
        kill = 0
    else:
        live = num_agents - blue_deaths
        kill = red_deaths
        num, den = red_deaths, blue_deaths
    if den == 0:
        return TeamMetrics(live=live, death=blue_deaths, kill=kill,
                           ratio=float(num), ratio_is_infinite=True)
    return TeamMetrics(live=live, death=blue_deaths, kill=kill,
                       ratio=num / den, ratio_is_infinite=False)
