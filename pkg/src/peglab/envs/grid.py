"""Gridworld scenarios: lava ponds and doors held open by a trigger cell."""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from peglab.envs.base import EnvSpec, MultiAgentEnv

LEFT, RIGHT, UP, DOWN, STAY = range(5)
DELTAS = np.array([[-1, 0], [1, 0], [0, -1], [0, 1], [0, 0]], dtype=np.int64)
ACTION_NAMES = ("left", "right", "up", "down", "stay")


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    walls: frozenset
    lava: frozenset
    doors: frozenset
    triggers: frozenset
    starts: tuple
    goals: tuple

    @property
    def n_agents(self) -> int:
        return len(self.starts)

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def passable(self, cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    def validate(self) -> None:
        if len(self.starts) != len(self.goals):
            raise ValueError(f"{len(self.starts)} starts but {len(self.goals)} goals")
        if any(g is None for g in self.goals):
            raise ValueError("every agent needs a goal")
        for cell in self.walls | self.lava | self.doors | self.triggers | set(self.starts) | set(self.goals):
            if not self.in_bounds(cell):
                raise ValueError(f"cell {cell} lies outside the {self.width}x{self.height} map")
        for cell in list(self.starts) + list(self.goals):
            if cell in self.walls or cell in self.lava:
                raise ValueError(f"start/goal {cell} is on a wall or lava")
        if len(set(self.starts)) != len(self.starts):
            raise ValueError("agents share a start cell")

    def masks(self):
        shape = (self.height, self.width)
        out = {}
        for name in ("walls", "lava", "doors", "triggers"):
            m = np.zeros(shape, dtype=bool)
            for x, y in getattr(self, name):
                m[y, x] = True
            out[name] = m
        return out

    def restricted_to(self, agent: int) -> "GridMap":
        return replace(self, starts=(self.starts[agent],), goals=(self.goals[agent],))


def parse_map(text: str) -> GridMap:
    """Parse the plain-text map format.

    Grid rows use ``.`` floor, ``#`` wall, ``L`` lava, ``D`` door, ``T``
    trigger, ``0``-``3`` agent starts and ``a``-``d`` goals. Lines starting
    with ``%`` are comments. Placements that would overlap in the grid are
    given after it as ``start <agent> <x> <y>`` or ``goal <agent> <x> <y>``.
    """
    rows, directives = [], []
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line or line.startswith("%"):
            continue
        if line.split()[0] in ("start", "goal"):
            directives.append(line.split())
        else:
            rows.append(line)
    if not rows:
        raise ValueError("map has no grid rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("map rows have unequal length")
    walls, lava, doors, triggers = set(), set(), set(), set()
    starts: dict[int, tuple] = {}
    goals: dict[int, tuple] = {}
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            cell = (x, y)
            if ch == "#":
                walls.add(cell)
            elif ch == "L":
                lava.add(cell)
            elif ch == "D":
                doors.add(cell)
            elif ch == "T":
                triggers.add(cell)
            elif ch in "0123":
                starts[int(ch)] = cell
            elif ch in "abcd":
                goals["abcd".index(ch)] = cell
            elif ch != ".":
                raise ValueError(f"unknown map character {ch!r} at {cell}")
    for kind, agent, x, y in directives:
        (starts if kind == "start" else goals)[int(agent)] = (int(x), int(y))
    n = len(starts)
    if sorted(starts) != list(range(n)):
        raise ValueError(f"agent starts must be numbered 0..{n - 1}")
    grid = GridMap(
        width=width,
        height=len(rows),
        walls=frozenset(walls),
        lava=frozenset(lava),
        doors=frozenset(doors),
        triggers=frozenset(triggers),
        starts=tuple(starts[i] for i in range(n)),
        goals=tuple(goals.get(i) for i in range(n)),
    )
    grid.validate()
    return grid


def load_map(kind_or_path: str | Path) -> GridMap:
    path = Path(kind_or_path)
    if path.suffix == ".txt" and path.exists():
        return parse_map(path.read_text())
    text = resources.files("peglab.envs.maps").joinpath(f"{kind_or_path}.txt").read_text()
    return parse_map(text)


class GridWorld(MultiAgentEnv):
    """Batched gridworld with simultaneous moves.

    Conflicting moves (two agents heading for the same cell, or swapping
    cells) are both reverted and cost one collision penalty per pair.
    Lava ends the episode without the success reward. In lava scenarios an
    agent that reached its goal stays frozen there and no longer collides.
    """

    discrete_states = True

    def __init__(
        self,
        spec: EnvSpec,
        grid: GridMap,
        num_envs: int = 1,
        *,
        success_agents: tuple[int, ...] | None = None,
        freeze_at_goal: bool = False,
        door_always_open: bool = False,
    ):
        if grid.n_agents != spec.n_agents:
            raise ValueError(f"map has {grid.n_agents} agents, spec wants {spec.n_agents}")
        self.spec = spec
        self.grid = grid
        self.num_envs = int(num_envs)
        self.success_agents = tuple(range(spec.n_agents)) if success_agents is None else tuple(success_agents)
        self.freeze_at_goal = freeze_at_goal
        self.door_always_open = door_always_open
        m = grid.masks()
        self._walls, self._lava, self._doors, self._triggers = m["walls"], m["lava"], m["doors"], m["triggers"]
        self._starts = np.array(grid.starts, dtype=np.int64)
        self._goals = np.array(grid.goals, dtype=np.int64)
        self._size = np.array([grid.width, grid.height], dtype=np.int64)
        self._success_fn = spec.success_reward()
        n = spec.n_agents
        self.pos = np.zeros((self.num_envs, n, 2), dtype=np.int64)
        self.reached = np.zeros((self.num_envs, n), dtype=bool)
        self.steps = np.zeros(self.num_envs, dtype=np.int64)
        self.done = np.ones(self.num_envs, dtype=bool)

    @property
    def local_dim(self) -> int:
        return 2

    @property
    def actor_dim(self) -> int:
        return 2 * self.n_agents

    @property
    def critic_dim(self) -> int:
        return 2 * self.n_agents

    def reset(self, mask=None):
        idx = slice(None) if mask is None else np.asarray(mask, dtype=bool)
        self.pos[idx] = self._starts
        self.reached[idx] = False
        self.steps[idx] = 0
        self.done[idx] = False
        return self.observe()

    def observe(self):
        return self.pos.astype(np.float64)

    def set_state(self, positions, steps=0) -> None:
        """Place the agents explicitly (all copies); used by tests and search."""
        self.pos[:] = np.asarray(positions, dtype=np.int64)
        self.steps[:] = steps
        self.reached[:] = False
        if self.freeze_at_goal:
            self.reached[:] = np.all(self.pos == self._goals, axis=-1)
        self.done[:] = False

    def _cell(self, mask2d, cells):
        return mask2d[cells[..., 1], cells[..., 0]]

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.int64).reshape(self.num_envs, self.n_agents)
        if self.done.any():
            raise RuntimeError("step() called on a finished episode; reset it first")
        pos = self.pos
        k, n = self.num_envs, self.n_agents
        frozen = self.reached & self.freeze_at_goal
        intended = pos + DELTAS[actions]
        outside = np.any((intended < 0) | (intended >= self._size), axis=-1)
        intended[outside] = pos[outside]
        intended[self._cell(self._walls, intended)] = pos[self._cell(self._walls, intended)]
        if self._doors.any() and not self.door_always_open:
            on_trigger = self._cell(self._triggers, pos) & ~frozen
            door_open = on_trigger.any(axis=1)
            entering = self._cell(self._doors, intended) & ~self._cell(self._doors, pos) & ~door_open[:, None]
            intended[entering] = pos[entering]
        intended[frozen] = pos[frozen]

        pairs = np.zeros((k, n, n), dtype=bool)
        active = ~frozen
        changed = True
        while changed:
            changed = False
            for i in range(n):
                for j in range(i + 1, n):
                    both = active[:, i] & active[:, j]
                    same = np.all(intended[:, i] == intended[:, j], axis=-1)
                    swap = np.all(intended[:, i] == pos[:, j], axis=-1) & np.all(intended[:, j] == pos[:, i], axis=-1)
                    moved = np.any(intended[:, i] != pos[:, i], axis=-1) | np.any(intended[:, j] != pos[:, j], axis=-1)
                    conflict = both & (same | swap) & moved
                    if conflict.any():
                        intended[conflict, i] = pos[conflict, i]
                        intended[conflict, j] = pos[conflict, j]
                        pairs[conflict, i, j] = True
                        changed = True
        collisions = pairs.sum(axis=(1, 2))

        self.pos = intended
        self.steps += 1
        in_lava = np.any(self._cell(self._lava, intended) & active, axis=1)
        at_goal = np.all(intended == self._goals, axis=-1)
        if self.freeze_at_goal:
            self.reached |= at_goal & ~in_lava[:, None]
        else:
            self.reached = at_goal
        success = np.all(at_goal[:, self.success_agents] | self.reached[:, self.success_agents], axis=1) & ~in_lava

        reward = -self.spec.collision_penalty * collisions.astype(np.float64)
        reward = reward + np.where(success, self._success_fn(self.steps.astype(np.float64)), 0.0)
        terminated = in_lava | success
        truncated = ~terminated & (self.steps >= self.spec.max_step)
        self.done = terminated | truncated
        info = {"success": success, "collisions": collisions, "lava": in_lava}
        return self.observe(), reward, terminated, truncated, info

    # -- encodings ---------------------------------------------------------
    def normalize_personal(self, local):
        scale = (self._size - 1).astype(np.float64)
        return 2.0 * np.asarray(local, dtype=np.float64) / scale - 1.0

    def actor_inputs(self, obs):
        flat = self.normalize_personal(obs).reshape(obs.shape[0], -1)
        return np.repeat(flat[:, None, :], self.n_agents, axis=1)

    def critic_inputs(self, obs):
        return self.normalize_personal(obs).reshape(obs.shape[0], -1)
