"""Discounted state-action occupancy tables and the counting-based shadow reward."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable

import numpy as np

from peglab.core import RolloutBatch, Transition, state_key

Key = tuple[Hashable, Hashable]


@dataclass
class OccupancyTable:
    """Sparse map ``(state key, action key) -> discounted visitation mass``."""

    mass: dict = field(default_factory=dict)
    gamma: float = 0.99
    source_count: int = 0

    def __getitem__(self, key: Key) -> float:
        return self.mass.get(key, 0.0)

    def __len__(self) -> int:
        return len(self.mass)

    def total(self) -> float:
        return float(sum(self.mass.values()))

    def lookup(self, keys: Iterable[Key]) -> np.ndarray:
        return np.array([self.mass.get(k, 0.0) for k in keys])

    def mix(self, other: "OccupancyTable", weight: float) -> "OccupancyTable":
        """``(1 - weight) * self + weight * other`` on the union of keys."""
        keys = set(self.mass) | set(other.mass)
        mixed = {k: (1.0 - weight) * self[k] + weight * other[k] for k in keys}
        return OccupancyTable(mixed, self.gamma, other.source_count)

    def to_csv(self, path: str | Path) -> None:
        rows = sorted(self.mass.items(), key=lambda kv: repr(kv[0]))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            width = len(_flatten(rows[0][0][0])) if rows else 0
            writer.writerow([f"s{i}" for i in range(width)] + ["action", "mass"])
            for (s, a), m in rows:
                writer.writerow([*_flatten(s), _fmt_action(a), repr(m)])

    def dense(self, width: int, height: int, n_actions: int) -> np.ndarray:
        """Grid tables as an array indexed ``[x, y, action]``."""
        out = np.zeros((width, height, n_actions))
        for ((x, y), a), m in self.mass.items():
            out[x, y, a] = m
        return out


def _flatten(s):
    if isinstance(s, tuple) and s and isinstance(s[0], tuple):
        return [v for part in s for v in part]
    return list(s)


def _fmt_action(a):
    return "|".join(str(v) for v in a) if isinstance(a, tuple) else str(a)


@dataclass(frozen=True)
class ShadowRewardParams:
    eta: float = 0.05
    smoothing_eps: float = 1e-8
    clamp: float = 10.0

    def __post_init__(self):
        if self.clamp <= 0:
            raise ValueError("clamp must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


# -- key functions ----------------------------------------------------------


def global_key(tr: Transition, *, exact: bool = True) -> Key:
    return tuple(state_key(s, exact=exact) for s in tr.state), tuple(tr.joint_action)


def local_key(agent: int, *, exact: bool = True) -> Callable[[Transition], Key]:
    def key(tr: Transition) -> Key:
        return state_key(tr.state[agent], exact=exact), tr.joint_action[agent]

    return key


# -- estimation -------------------------------------------------------------


def estimate_occupancy(
    batch: RolloutBatch,
    gamma: float,
    key_fn: Callable[[Transition], Key] = global_key,
    *,
    discrete: bool = True,
) -> OccupancyTable:
    """Average discounted visit counts over the trajectories of ``batch``."""
    if not discrete:
        raise ValueError(
            "occupancy tables need a discrete state space; continuous environments are not supported"
        )
    if len(batch) == 0:
        raise ValueError("cannot estimate occupancy from an empty batch")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    mass: dict = defaultdict(float)
    norm = 1.0 / len(batch)
    for traj in batch.trajectories:
        scale = norm
        for tr in traj.transitions:
            mass[key_fn(tr)] += scale
            scale *= gamma
    return OccupancyTable(dict(mass), gamma, len(batch))


def estimate_from_arrays(states, actions, timesteps, n_trajectories: int, gamma: float) -> OccupancyTable:
    """Array fast path over rows of integer states, actions and in-episode times.

    ``states`` is ``(M, d)`` for local keys or ``(M, N, d)`` for joint keys,
    with ``actions`` shaped ``(M,)`` or ``(M, N)`` to match; keys come out in
    the same form as ``local_key`` and ``global_key``.
    """
    if n_trajectories <= 0:
        raise ValueError("cannot estimate occupancy from an empty batch")
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    joint = states.ndim == 3
    m = len(states)
    rows = np.concatenate([states.reshape(m, -1), actions.reshape(m, -1)], axis=1)
    weights = np.power(gamma, np.asarray(timesteps, dtype=np.float64)) / n_trajectories
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    sums = np.bincount(inverse.ravel(), weights=weights, minlength=len(uniq))
    mass = {}
    if joint:
        n, d = states.shape[1], states.shape[2]
        for row, w in zip(uniq.tolist(), sums):
            s = tuple(tuple(row[i * d : (i + 1) * d]) for i in range(n))
            mass[(s, tuple(row[n * d :]))] = float(w)
    else:
        for row, w in zip(uniq.tolist(), sums):
            mass[(tuple(row[:-1]), row[-1])] = float(w)
    return OccupancyTable(mass, gamma, n_trajectories)


def expected_total_mass(lengths: Iterable[int], gamma: float) -> float:
    lengths = list(lengths)
    return float(np.mean([sum(gamma**t for t in range(h)) for h in lengths]))


def marginalize_global(table: OccupancyTable, agent: int) -> OccupancyTable:
    out: dict = defaultdict(float)
    for (states, actions), m in table.mass.items():
        out[(states[agent], actions[agent])] += m
    return OccupancyTable(dict(out), table.gamma, table.source_count)


# -- shadow reward ----------------------------------------------------------


def shadow_bonus(lambda_pi, lambda_e, params: ShadowRewardParams = ShadowRewardParams()):
    """Clamped ``-log(2 lam_pi / (lam_pi + lam_E))`` with epsilon smoothing."""
    eps = params.smoothing_eps
    lp = np.asarray(lambda_pi, dtype=np.float64)
    le = np.asarray(lambda_e, dtype=np.float64)
    if np.any(lp < 0) or np.any(le < 0):
        raise ValueError("occupancy masses must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        bonus = -np.log(2.0 * (lp + eps) / (lp + le + 2.0 * eps))
    return np.clip(bonus, -params.clamp, params.clamp)


def shadow_reward(lambda_pi, lambda_e, r, params: ShadowRewardParams = ShadowRewardParams()):
    out = np.asarray(r, dtype=np.float64) + params.eta * shadow_bonus(lambda_pi, lambda_e, params)
    return float(out) if out.ndim == 0 else out


# -- exact forward dynamic programming --------------------------------------

StepFn = Callable[[Hashable, tuple], list[tuple[float, Hashable, bool]]]
PolicyFn = Callable[[Hashable], list[np.ndarray]]


def exact_occupancy_oracle(
    initial: dict,
    step_fn: StepFn,
    policy_fn: PolicyFn,
    gamma: float,
    horizon: int,
    *,
    max_states: int = 10_000,
) -> OccupancyTable:
    """Exact ``sum_{t<=H} gamma^t P(s_t = s, a_t = a)`` by propagating the state law.

    ``initial`` maps joint states to probabilities, ``step_fn`` returns
    ``(prob, next_state, done)`` outcomes of a joint action and ``policy_fn``
    returns one action distribution per agent. Keys match ``global_key``:
    states are tuples of per-agent keys and actions tuples of indices.
    """
    import itertools

    mass: dict = defaultdict(float)
    dist = dict(initial)
    for t in range(horizon + 1):
        if len(dist) > max_states:
            raise ValueError(f"state distribution grew past {max_states} states")
        nxt: dict = defaultdict(float)
        scale = gamma**t
        for s, ps in dist.items():
            if ps == 0.0:
                continue
            probs = policy_fn(s)
            supports = [np.flatnonzero(p > 0) for p in probs]
            for joint in itertools.product(*supports):
                pa = float(np.prod([probs[i][a] for i, a in enumerate(joint)]))
                w = ps * pa
                joint = tuple(int(a) for a in joint)
                mass[(s, joint)] += scale * w
                if t == horizon:
                    continue
                for p_next, s_next, done in step_fn(s, joint):
                    if not done:
                        nxt[s_next] += w * p_next
        dist = nxt
    return OccupancyTable(dict(mass), gamma, 1)
