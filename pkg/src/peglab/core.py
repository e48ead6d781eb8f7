"""Shared identifiers, trajectory containers, seeded RNG and return utilities."""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LocalState = tuple[float, ...]
GlobalState = tuple[LocalState, ...]

# episode-end codes used by Transition.done and the text format
RUNNING, TERMINATED, TRUNCATED = 0, 1, 2

STATE_KEY_DECIMALS = 6


def as_local_state(values: Iterable[float]) -> LocalState:
    return tuple(float(v) for v in values)


def as_global_state(array: np.ndarray | Sequence[Sequence[float]]) -> GlobalState:
    return tuple(as_local_state(row) for row in array)


def state_key(state: LocalState, *, exact: bool = True) -> tuple:
    """Hashable key for a local state.

    Grid coordinates are integers and are keyed exactly; continuous states are
    rounded to ``STATE_KEY_DECIMALS`` places.
    """
    if exact:
        return tuple(int(round(v)) for v in state)
    return tuple(round(v, STATE_KEY_DECIMALS) for v in state)


def split_local(state: GlobalState, agent: int) -> LocalState:
    if not 0 <= agent < len(state):
        raise IndexError(f"agent {agent} out of range for {len(state)} agents")
    return state[agent]


def join_locals(locals_: Sequence[LocalState]) -> GlobalState:
    return tuple(tuple(s) for s in locals_)


@dataclass(frozen=True)
class Transition:
    state: GlobalState
    joint_action: tuple[int, ...]
    reward: float
    next_state: GlobalState
    done: int = RUNNING
    log_probs: tuple[float, ...] = ()

    @property
    def terminated(self) -> bool:
        return self.done == TERMINATED

    @property
    def truncated(self) -> bool:
        return self.done == TRUNCATED


@dataclass
class Trajectory:
    transitions: list[Transition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def rewards(self) -> list[float]:
        return [tr.reward for tr in self.transitions]

    @property
    def num_agents(self) -> int:
        return len(self.transitions[0].state) if self.transitions else 0

    def validate(self) -> None:
        for t, tr in enumerate(self.transitions):
            if tr.done != RUNNING and t != len(self.transitions) - 1:
                raise ValueError(f"done flag set at t={t} before the last transition")
            if any(not np.isfinite(lp) for lp in tr.log_probs):
                raise ValueError(f"non-finite log-prob at t={t}")


@dataclass
class RolloutBatch:
    trajectories: list[Trajectory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def env_steps(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def transitions(self):
        for traj in self.trajectories:
            yield from traj.transitions


class Rng:
    """Seeded random stream backed by the counter-based Philox generator.

    Named substreams are derived from the root seed and the name only, so the
    order in which they are requested does not matter.
    """

    def __init__(self, seed: int, name: str = ""):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.name = name
        key = (zlib.crc32(name.encode()),) if name else ()
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self.gen = np.random.Generator(np.random.Philox(seq))

    def substream(self, name: str) -> "Rng":
        full = f"{self.name}/{name}" if self.name else name
        return Rng(self.seed, full)

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)


def discounted_return(traj: Trajectory | Sequence[float], gamma: float) -> float:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = traj.rewards if isinstance(traj, Trajectory) else list(traj)
    total, scale = 0.0, 1.0
    for r in rewards:
        total += scale * r
        scale *= gamma
    return total


def visitation_counts(batch: RolloutBatch, agent: int, *, exact: bool = True) -> Counter:
    """Undiscounted local-state visit counts, one state per transition."""
    counts: Counter = Counter()
    for tr in batch.transitions():
        counts[state_key(split_local(tr.state, agent), exact=exact)] += 1
    return counts


# -- text serialization ------------------------------------------------------
#
# Header:  "# trajectories agents=<N> state_dim=<d> count=<episodes>"
# Record:  t <TAB> s <TAB> a <TAB> r <TAB> s' <TAB> done <TAB> logp
# s and s' are the N local states joined by ';', components by ','.
# a and logp are comma-separated per agent; done is 0 running, 1 terminated,
# 2 truncated. A record with t == 0 starts a new trajectory. Floats use repr,
# so a save/load cycle is exact.


def _fmt_state(state: GlobalState) -> str:
    return ";".join(",".join(repr(float(v)) for v in loc) for loc in state)


def _parse_state(text: str) -> GlobalState:
    return tuple(tuple(float(v) for v in loc.split(",")) for loc in text.split(";"))


def format_trajectories(trajectories: Sequence[Trajectory]) -> list[str]:
    n_agents = trajectories[0].num_agents if trajectories else 0
    dim = len(trajectories[0].transitions[0].state[0]) if n_agents else 0
    lines = [f"# trajectories agents={n_agents} state_dim={dim} count={len(trajectories)}"]
    for traj in trajectories:
        for t, tr in enumerate(traj.transitions):
            fields = [
                str(t),
                _fmt_state(tr.state),
                ",".join(str(int(a)) for a in tr.joint_action),
                repr(float(tr.reward)),
                _fmt_state(tr.next_state),
                str(int(tr.done)),
                ",".join(repr(float(lp)) for lp in tr.log_probs),
            ]
            lines.append("\t".join(fields))
    return lines


def parse_trajectories(lines: Iterable[str]) -> list[Trajectory]:
    trajectories: list[Trajectory] = []
    header = None
    for raw in lines:
        line = raw.rstrip("\n")
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# trajectories"):
                header = dict(kv.split("=") for kv in line.split()[2:])
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ValueError(f"malformed trajectory record: {line!r}")
        t = int(parts[0])
        if t == 0 or not trajectories:
            trajectories.append(Trajectory())
        logp = tuple(float(v) for v in parts[6].split(",")) if parts[6] else ()
        trajectories[-1].transitions.append(
            Transition(
                state=_parse_state(parts[1]),
                joint_action=tuple(int(a) for a in parts[2].split(",")),
                reward=float(parts[3]),
                next_state=_parse_state(parts[4]),
                done=int(parts[5]),
                log_probs=logp,
            )
        )
    if header is not None and int(header["count"]) != len(trajectories):
        raise ValueError(f"header announces {header['count']} trajectories, found {len(trajectories)}")
    return trajectories


def save_trajectories(path: str | Path, trajectories: Sequence[Trajectory]) -> None:
    Path(path).write_text("\n".join(format_trajectories(trajectories)) + "\n")


def load_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path) as fh:
        return parse_trajectories(fh)
