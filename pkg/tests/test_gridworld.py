import numpy as np
import pytest

from gsgat.autodiff import ContractError, RngStream
from gsgat import gridworld as gw


def states_equal(a: gw.EnvState, b: gw.EnvState) -> bool:
    return (
        np.array_equal(a.positions, b.positions)
        and np.array_equal(a.hp, b.hp)
        and np.array_equal(a.team, b.team)
        and np.array_equal(a.alive, b.alive)
        and np.array_equal(a.food_pos, b.food_pos)
        and np.array_equal(a.food_attacks, b.food_attacks)
        and np.array_equal(a.food_alive, b.food_alive)
        and a.step_count == b.step_count
        and a.done == b.done
    )


def tiny_gather(n_agents=2, n_food=1, grid=9, view=5, seed=0, **rewards) -> gw.EnvConfig:
    return gw.EnvConfig(scenario=gw.GATHER, grid_size=grid, num_agents=n_agents,
                        num_food=n_food, view_size=view, max_steps=50,
                        reward_table=rewards, seed=seed)


def place(state: gw.EnvState, agent_positions, food_positions=None):
    """Pin entity positions for hand-built scenarios."""
    for i, pos in enumerate(agent_positions):
        state.positions[i] = pos
    if food_positions is not None:
        for f, pos in enumerate(food_positions):
            state.food_pos[f] = pos
    return state


def test_gather_reset_counts():
    state = gw.reset(gw.EnvConfig.defaults(gw.GATHER))
    assert state.alive.sum() == 74
    assert state.food_alive.sum() == 157
    # all placements distinct and in bounds
    cells = {tuple(p) for p in state.positions} | {tuple(p) for p in state.food_pos}
    assert len(cells) == 74 + 157
    assert state.positions.min() >= 0 and state.positions.max() < 30


def test_battle_reset_counts_and_hp():
    state = gw.reset(gw.EnvConfig.defaults(gw.BATTLE))
    assert state.alive.sum() == 60
    assert (state.hp == 10.0).all()
    assert (state.team == gw.BLUE).sum() == 30
    assert (state.team == gw.RED).sum() == 30


def test_reset_is_deterministic():
    cfg = gw.EnvConfig.defaults(gw.GATHER)
    assert states_equal(gw.reset(cfg), gw.reset(cfg))


def test_reset_capacity_error():
    cfg = gw.EnvConfig(scenario=gw.GATHER, grid_size=5, num_agents=20, num_food=6,
                       view_size=3, max_steps=10)
    with pytest.raises(gw.CapacityError):
        gw.reset(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        gw.EnvConfig(scenario=gw.GATHER, view_size=4).validate()
    with pytest.raises(ValueError):
        gw.EnvConfig(scenario=gw.GATHER, grid_size=9, view_size=15).validate()
    with pytest.raises(ValueError):
        gw.EnvConfig(scenario="maze").validate()
    with pytest.raises(ValueError):
        gw.EnvConfig(scenario=gw.GATHER, reward_table={"bonus": 1.0}).validate()


def test_battle_attack_then_recovery_hp():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(4, 4), (4, 5)])  # blue at center, red just east
    actions = np.array([gw.NOOP, gw.ATTACK_W])
    state, res = gw.step(state, actions)
    assert state.hp[0] == pytest.approx(10.0 - 2.0 + 0.1)
    assert res.per_agent_reward[1] == pytest.approx(0.2 - 0.005)


def test_food_absorbed_on_fifth_hit():
    cfg = tiny_gather(n_agents=1, n_food=1)
    state = gw.reset(cfg)
    place(state, [(4, 4)], [(4, 5)])
    total = 0.0
    for k in range(5):
        state, res = gw.step(state, np.array([gw.ATTACK_E]))
        total += res.per_agent_reward[0]
        if k < 4:
            assert state.food_alive[0]
            assert state.food_attacks[0] == 4 - k
    assert not state.food_alive[0]
    assert res.events.food_eaten == 1
    assert res.done  # last food gone ends the episode
    # +5 only on the absorbing hit, minus five living costs
    assert total == pytest.approx(5.0 - 5 * 0.01)


def test_battle_teammate_attack_not_registered():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=2, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(4, 4), (4, 5), (8, 0), (8, 8)])  # two blue adjacent
    state, res = gw.step(state, np.array([gw.ATTACK_E, gw.NOOP, gw.NOOP, gw.NOOP]))
    assert state.alive.all()
    assert (state.hp == 10.0).all()
    assert res.per_agent_reward[0] == pytest.approx(-0.005)  # only the living cost


def test_gather_single_attack_kills():
    # gather is a free-for-all: one hit downs another agent, no reward for it
    cfg = tiny_gather(n_agents=2, n_food=1)
    state = gw.reset(cfg)
    place(state, [(4, 4), (4, 5)], [(0, 0)])
    state, res = gw.step(state, np.array([gw.ATTACK_E, gw.NOOP]))
    assert not state.alive[1]
    assert res.events.deaths_by_team[gw.BLUE] == 1
    assert res.per_agent_reward[0] == pytest.approx(-0.01)  # no kill reward
    assert res.per_agent_reward[1] == pytest.approx(-1.0 - 0.01)


def test_move_blocking_and_conflict_priority():
    cfg = tiny_gather(n_agents=3, n_food=1)
    state = gw.reset(cfg)
    place(state, [(4, 3), (4, 5), (0, 0)], [(8, 8)])
    # agents 0 and 1 both try to enter (4, 4); lower index wins
    state, _ = gw.step(state, np.array([gw.MOVE_E, gw.MOVE_W, gw.NOOP]))
    assert tuple(state.positions[0]) == (4, 4)
    assert tuple(state.positions[1]) == (4, 5)
    # blocked by grid edge
    place(state, [(0, 4), (4, 5), (0, 0)])
    state, _ = gw.step(state, np.array([gw.MOVE_N, gw.NOOP, gw.NOOP]))
    assert tuple(state.positions[0]) == (0, 4)
    # blocked by food
    place(state, [(8, 7), (4, 5), (0, 0)])
    state, _ = gw.step(state, np.array([gw.MOVE_E, gw.NOOP, gw.NOOP]))
    assert tuple(state.positions[0]) == (8, 7)


def test_action_vector_length_checked():
    state = gw.reset(tiny_gather())
    with pytest.raises(ContractError):
        gw.step(state, np.array([gw.NOOP]))


def test_dead_agent_observation_all_zero():
    state = gw.reset(tiny_gather(n_agents=2))
    state.alive[0] = False
    state.hp[0] = 0.0
    assert not gw.observe(state, 0).any()


def test_lone_agent_empty_map_observation():
    cfg = tiny_gather(n_agents=1, n_food=1, grid=9, view=5)
    state = gw.reset(cfg)
    place(state, [(4, 4)], [(0, 0)])
    state.food_alive[0] = False  # empty the world
    obs = gw.observe(state, 0)
    assert not obs[:, :, :5].any()
    np.testing.assert_allclose(obs[:, :, 5], 1.0)  # own hp broadcast at full health


def test_food_offset_maps_to_view_cell():
    # independent oracle: view cell = center + (world - agent position)
    cfg = tiny_gather(n_agents=1, n_food=1, grid=9, view=5)
    state = gw.reset(cfg)
    place(state, [(4, 4)], [(5, 4)])  # offset (+1, 0)
    obs = gw.observe(state, 0)
    half = cfg.view_size // 2
    hot = np.argwhere(obs[:, :, 3] > 0)
    assert hot.tolist() == [[half + 1, half]]
    assert obs[half + 1, half, 4] == pytest.approx(1.0)


def test_out_of_bounds_channel():
    cfg = tiny_gather(n_agents=1, n_food=1, grid=9, view=5)
    state = gw.reset(cfg)
    place(state, [(0, 0)], [(8, 8)])
    obs = gw.observe(state, 0)
    assert obs[0, 0, 0] == 1.0      # corner beyond the grid
    assert obs[2, 2, 0] == 0.0      # own cell (center) is in bounds
    assert obs[:2, :, 0].all()      # two rows above the map


def test_dead_agents_invisible_to_others():
    cfg = tiny_gather(n_agents=2, n_food=1, grid=9, view=5)
    state = gw.reset(cfg)
    place(state, [(4, 4), (4, 5)], [(0, 0)])
    obs = gw.observe(state, 0)
    assert obs[2, 3, 1] == 1.0  # neighbor visible in the team channel
    state.alive[1] = False
    state.hp[1] = 0.0
    obs = gw.observe(state, 0)
    assert not obs[:, :, 1].any()
    assert not obs[:, :, 2].any()


def test_own_team_channel_excludes_self():
    cfg = tiny_gather(n_agents=1, n_food=1, grid=9, view=5)
    state = gw.reset(cfg)
    obs = gw.observe(state, 0)
    assert obs[2, 2, 1] == 0.0


def test_scripted_enemy_attacks_adjacent_blue():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(4, 5), (4, 4)])  # blue east of red
    actions = gw.scripted_enemy_policy(state)
    assert actions[1] == gw.ATTACK_E
    assert actions[0] == gw.NOOP  # blue agents are untouched


def test_scripted_enemy_chases_nearest_blue():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(1, 4), (4, 4)])  # blue three cells north
    actions = gw.scripted_enemy_policy(state)
    assert actions[1] == gw.MOVE_N


def test_scripted_enemy_noop_without_targets():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    state.alive[0] = False
    state.hp[0] = 0.0
    actions = gw.scripted_enemy_policy(state)
    assert actions[1] == gw.NOOP


def test_scripted_enemy_direction_tiebreak_order():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(2, 6), (4, 4)])  # both N and E reduce distance; N comes first
    actions = gw.scripted_enemy_policy(state)
    assert actions[1] == gw.MOVE_N


def test_team_metrics_gather_table_values():
    events = [gw.StepResult(np.zeros(74), False,
                            gw.EventCounts(deaths_by_team=(18, 0)))]
    m = gw.team_metrics(events, gw.GATHER, num_agents=74)
    assert (m.live, m.death) == (56, 18)
    assert m.ratio == pytest.approx(3.11, abs=0.005)
    assert not m.ratio_is_infinite


def test_team_metrics_battle_table_values():
    events = [gw.StepResult(np.zeros(60), False,
                            gw.EventCounts(deaths_by_team=(1, 11)))]
    m = gw.team_metrics(events, gw.BATTLE, num_agents=30)
    assert (m.kill, m.death) == (11, 1)
    assert m.ratio == pytest.approx(11.0)


def test_team_metrics_zero_denominator_flagged():
    events = [gw.StepResult(np.zeros(60), False,
                            gw.EventCounts(deaths_by_team=(0, 4)))]
    m = gw.team_metrics(events, gw.BATTLE, num_agents=30)
    assert m.ratio_is_infinite
    assert m.ratio == pytest.approx(4.0)


def test_trajectory_determinism_and_conservation():
    cfg = tiny_gather(n_agents=4, n_food=3, grid=9, view=5, seed=12)

    def rollout():
        rng = RngStream(5)
        state = gw.reset(cfg)
        trace = []
        alive_counts, food_counts = [], []
        for _ in range(30):
            actions = rng.integers(gw.NUM_ACTIONS, size=state.num_agents)
            state, res = gw.step(state, actions)
            trace.append((state.positions.copy(), state.hp.copy(),
                          state.alive.copy(), res.per_agent_reward.copy()))
            alive_counts.append(int(state.alive.sum()))
            food_counts.append(int(state.food_alive.sum()))
            assert (state.hp >= 0).all() and (state.hp <= 10).all()
            if state.done:
                break
        return trace, alive_counts, food_counts

    t1, alive1, food1 = rollout()
    t2, alive2, food2 = rollout()
    assert len(t1) == len(t2)
    for (p1, h1, a1, r1), (p2, h2, a2, r2) in zip(t1, t2):
        assert np.array_equal(p1, p2) and np.array_equal(h1, h2)
        assert np.array_equal(a1, a2) and np.array_equal(r1, r2)
    # monotone conservation: nothing respawns
    assert all(b <= a for a, b in zip(alive1, alive1[1:]))
    assert all(b <= a for a, b in zip(food1, food1[1:]))


def test_battle_ends_when_team_eliminated():
    cfg = gw.EnvConfig(scenario=gw.BATTLE, grid_size=9, num_agents=1, num_food=0,
                       view_size=5, max_steps=50)
    state = gw.reset(cfg)
    place(state, [(4, 4), (4, 5)])
    for _ in range(6):  # net 1.9 hp lost per attacked turn
        state, res = gw.step(state, np.array([gw.ATTACK_E, gw.NOOP]))
        if res.done:
            break
    assert res.done
    assert not state.alive[1]
