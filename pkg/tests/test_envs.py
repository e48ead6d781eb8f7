import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peglab.envs import (
    CoopNav,
    EnvSpec,
    GridWorld,
    coop_nav_reward,
    derive_permdp,
    load_map,
    make_env,
    parse_map,
    project_observation,
    reset,
    step,
)
from peglab.envs.coopnav import LANDMARKS, WALL_HALF_WIDTH
from peglab.envs.grid import DOWN, LEFT, RIGHT, STAY, UP

LEFT_, RIGHT_, UP_, DOWN_, STAY_ = 0, 1, 2, 3, 4


def test_action_order():
    assert (LEFT, RIGHT, UP, DOWN, STAY) == (LEFT_, RIGHT_, UP_, DOWN_, STAY_)


def test_lava2_reset_places_agents_in_corners():
    env = make_env("lava2")
    assert reset(env) == ((0.0, 0.0), (11.0, 11.0))
    assert reset(env) == reset(make_env("lava2"))
    assert env.grid.goals == ((11, 11), (0, 0))


def test_lava_block_is_centered():
    grid = load_map("lava2")
    assert grid.width == grid.height == 12
    assert grid.lava == frozenset((x, y) for x in range(3, 9) for y in range(3, 9))


@pytest.mark.parametrize("kind,n", [("lava2", 2), ("lava3", 3), ("lava4", 4), ("door_easy", 2), ("door_hard", 2)])
def test_maps_load_with_expected_agent_counts(kind, n):
    assert load_map(kind).n_agents == n
    assert make_env(kind).n_agents == n


def test_success_reward_at_step_50():
    env = make_env("lava2")
    env.reset()
    env.set_state([[11, 10], [0, 1]], steps=49)
    _, r, done, info = step(env, [DOWN, UP])
    assert done and info["success"] and info["terminated"]
    assert r == pytest.approx(9.5)


def test_scaled_success_formula_is_selectable():
    env = make_env("lava2", success_formula="scaled")
    env.reset()
    env.set_state([[11, 10], [0, 1]], steps=49)
    assert step(env, [DOWN, UP])[1] == pytest.approx(5.0)


def test_same_target_collision_reverts_both():
    env = make_env("lava2")
    env.reset()
    env.set_state([[0, 1], [2, 1]])
    s, r, done, info = step(env, [RIGHT, LEFT])
    assert s == ((0.0, 1.0), (2.0, 1.0)) and r == -1.0 and not done and info["collisions"] == 1


def test_swap_collision():
    env = make_env("lava2")
    env.reset()
    env.set_state([[0, 1], [1, 1]])
    s, r, _, _ = step(env, [RIGHT, LEFT])
    assert s == ((0.0, 1.0), (1.0, 1.0)) and r == -1.0


def test_moving_into_stationary_agent_collides():
    env = make_env("lava2")
    env.reset()
    env.set_state([[0, 1], [1, 1]])
    s, r, _, _ = step(env, [RIGHT, STAY])
    assert s == ((0.0, 1.0), (1.0, 1.0)) and r == -1.0


def test_following_agent_does_not_collide():
    env = make_env("lava2")
    env.reset()
    env.set_state([[0, 1], [1, 1]])
    s, r, _, _ = step(env, [RIGHT, RIGHT])
    assert s == ((1.0, 1.0), (2.0, 1.0)) and r == 0.0


def test_lava_ends_episode_without_success():
    env = make_env("lava2")
    env.reset()
    env.set_state([[2, 3], [11, 11]])
    _, r, done, info = step(env, [RIGHT, STAY])
    assert done and info["lava"] and not info["success"] and r == 0.0


def test_agent_frozen_at_goal_in_lava():
    env = make_env("lava2")
    env.reset()
    env.set_state([[11, 11], [5, 0]])
    s, _, done, _ = step(env, [LEFT, LEFT])
    assert s[0] == (11.0, 11.0) and not done


def test_truncation_at_max_step():
    env = make_env("lava2", max_step=3)
    reset(env)
    for _ in range(2):
        assert not step(env, [STAY, STAY])[2]
    _, r, done, info = step(env, [STAY, STAY])
    assert done and info["truncated"] and not info["terminated"] and r == 0.0


def test_stepping_finished_env_raises():
    env = make_env("lava2", max_step=1)
    reset(env)
    step(env, [STAY, STAY])
    with pytest.raises(RuntimeError):
        step(env, [STAY, STAY])


def test_door_needs_trigger():
    env = make_env("door_easy")
    reset(env)
    env.set_state([[4, 3], [1, 5]])
    s, _, _, _ = step(env, [RIGHT, STAY])
    assert s[0] == (4.0, 3.0)
    env.set_state([[4, 3], [4, 2]])
    s, _, _, _ = step(env, [RIGHT, STAY])
    assert s[0] == (5.0, 3.0)


def test_door_success_needs_only_red_agent():
    env = make_env("door_easy")
    reset(env)
    env.set_state([[8, 3], [1, 5]], steps=10)
    _, r, done, info = step(env, [RIGHT, STAY])
    assert done and info["success"] and r == pytest.approx(10 - 11 / 100)


def test_hard_door_trigger_blocks_corridor():
    grid = load_map("door_hard")
    (tx, ty), = grid.triggers
    assert (tx, ty - 1) in grid.walls and (tx, ty + 1) in grid.walls
    assert grid.goals[1] == (tx, ty)


@pytest.mark.parametrize("kind", ["lava3", "door_easy", "door_hard"])
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_walks_stay_in_bounds_and_off_walls(kind, seed):
    rng = np.random.default_rng(seed)
    env = make_env(kind, 4)
    obs = env.reset()
    walls = env._walls
    crossed_with_trigger = True
    for _ in range(150):
        before = env.pos.copy()
        trigger_held = env._triggers[before[..., 1], before[..., 0]].any(axis=1)
        obs, _, term, trunc, _ = env.step(rng.integers(0, 5, size=(4, env.n_agents)))
        pos = env.pos
        assert (pos >= 0).all() and (pos[..., 0] < env.grid.width).all() and (pos[..., 1] < env.grid.height).all()
        assert not walls[pos[..., 1], pos[..., 0]].any()
        entered = env._doors[pos[..., 1], pos[..., 0]] & ~env._doors[before[..., 1], before[..., 0]]
        if entered.any():
            crossed_with_trigger &= bool(trigger_held[entered.any(axis=1)].all())
        if (term | trunc).any():
            obs = env.reset(term | trunc)
    assert crossed_with_trigger


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=20))
def test_grid_dynamics_are_deterministic(actions):
    a, b = make_env("lava2"), make_env("lava2")
    reset(a), reset(b)
    for joint in actions:
        ra, rb = step(a, joint), step(b, joint)
        assert ra[:3] == rb[:3]
        if ra[2]:
            break


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 99))
def test_success_reward_range(steps):
    env = make_env("lava2")
    reset(env)
    env.set_state([[11, 10], [0, 1]], steps=steps - 1)
    r = step(env, [DOWN, UP])[1]
    assert 9.0 < r <= 10.0


def test_success_on_the_last_step_earns_the_floor():
    env = make_env("lava2")
    reset(env)
    env.set_state([[11, 10], [0, 1]], steps=99)
    _, r, done, info = step(env, [DOWN, UP])
    assert info["success"] and not info["truncated"] and r == pytest.approx(9.0)


def test_parse_map_errors():
    with pytest.raises(ValueError):
        parse_map("0.\n.x")
    with pytest.raises(ValueError):
        parse_map("0L\n..\ngoal 0 1 0")
    with pytest.raises(ValueError):
        parse_map("0..\n..")
    with pytest.raises(ValueError):
        parse_map("0..\n...\ngoal 0 5 5")


def test_envspec_validation():
    with pytest.raises(ValueError):
        EnvSpec.for_kind("mars")
    with pytest.raises(ValueError):
        EnvSpec(kind="lava2", n_agents=3, max_step=100)


# -- personalized MDPs ----------------------------------------------------------


def test_permdp_lava_keeps_agent_goal():
    env = derive_permdp("lava2", 0)
    assert env.n_agents == 1 and env.grid.goals == ((11, 11),)
    assert reset(env) == ((0.0, 0.0),)


def test_permdp_door_red_agent_door_open_green_agent_targets_trigger():
    red = derive_permdp("door_easy", 0)
    reset(red)
    red.set_state([[4, 3]])
    assert step(red, [RIGHT])[0] == ((5.0, 3.0),)
    green = derive_permdp("door_easy", 1)
    assert green.grid.goals[0] in green.grid.triggers


def test_permdp_optimum_matches_shortest_path():
    env = derive_permdp("lava2", 1)
    reset(env)
    # 11 left along the top row, then 11 down the left column
    total, done = 0.0, False
    for a in [LEFT] * 11 + [UP] * 11:
        _, r, done, _ = step(env, [a])
        total += r
    assert done and total == pytest.approx(10 - 22 / 100)


def test_make_env_with_permdp_spec():
    spec = EnvSpec.for_kind("lava2", n_agents=1, permdp_agent=1)
    assert make_env(spec).grid.starts == ((11, 11),)


# -- cooperative navigation -------------------------------------------------------


def test_coop_nav_reward_examples():
    assert coop_nav_reward(LANDMARKS) == pytest.approx(0.0)
    far = np.array([[-0.9, 0.9], [-0.9, -0.9]])
    assert coop_nav_reward(far) == pytest.approx(-1.2)
    near = np.array([[0.6, 0.4], [-0.9, -0.9]])
    assert coop_nav_reward(near) == pytest.approx(-0.8)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_coop_nav_reward_bounds(xs):
    r = coop_nav_reward(np.array(xs).reshape(2, 2))
    assert -1.2 - 1e-12 <= r <= 0.0


def test_coop_nav_reset_on_spawn_side():
    env = make_env("coop_nav", 3)
    obs = env.reset()
    assert (env.pos[..., 0] < -WALL_HALF_WIDTH).all() and (env.vel == 0).all()
    assert obs.shape == (3, 2, 10)


def test_coop_nav_wall_blocks_and_speed_is_capped():
    env = make_env("coop_nav")
    env.reset()
    env.pos[:] = [[-0.1, 0.0], [-0.6, -0.3]]
    for _ in range(10):
        env.step(np.array([[RIGHT, STAY]]))
        assert np.linalg.norm(env.vel, axis=-1).max() <= 1.0 + 1e-12
    assert env.pos[0, 0, 0] <= -WALL_HALF_WIDTH


def test_coop_nav_goes_around_wall():
    env = make_env("coop_nav")
    env.reset()
    env.pos[:] = [[-0.3, 0.7], [-0.6, -0.3]]
    for _ in range(10):
        env.step(np.array([[RIGHT, STAY]]))
    assert env.pos[0, 0, 0] > WALL_HALF_WIDTH


def test_coop_nav_truncates_without_termination():
    env = make_env("coop_nav", max_step=5)
    reset(env)
    for t in range(5):
        _, _, done, info = step(env, [STAY, STAY])
    assert done and info["truncated"] and not info["terminated"]


def test_project_observation():
    env = make_env("coop_nav")
    obs = env.reset()[0]
    proj = project_observation(env, obs, 1)
    assert proj.shape == (8,)
    assert np.array_equal(proj, obs[1, :8])
    assert np.array_equal(env.personal_obs(proj), proj)
    grid = make_env("lava2")
    gobs = grid.reset()[0]
    assert np.array_equal(project_observation(grid, gobs, 1), gobs[1])


def test_coop_permdp_single_agent_reward():
    env = derive_permdp("coop_nav", 0)
    assert env.n_agents == 1 and len(env.landmarks) == 2
    env.reset()
    env.pos[:] = [[0.6, 0.3]]
    assert env.reward_for(env.pos)[0] == pytest.approx(-0.3)
    env.pos[:] = [[-0.9, 0.9]]
    assert env.reward_for(env.pos)[0] == pytest.approx(-0.9)
