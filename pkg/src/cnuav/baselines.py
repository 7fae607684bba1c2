"""Comparison allocators: greedy, OMA, random, tabular Q-learning and an
exhaustive-search oracle for desk-scale instances."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from cnuav import noma
from cnuav.noma import Allocation, InfeasibleSpacingError


class OracleSizeError(ValueError):
    """The instance is too large for exhaustive enumeration."""


@dataclass
class PowerGrid:
    """Discrete transmit power levels in (0, cap] for baselines and the oracle."""

    levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if self.levels.size == 0 or np.any(self.levels <= 0):
            raise ValueError("power levels must be positive")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("power levels must be strictly increasing")

    @classmethod
    def linear(cls, cap: float, num_levels: int = 4) -> "PowerGrid":
        return cls(levels=cap * np.arange(1, num_levels + 1) / num_levels)


@dataclass
class QTable:
    """Per-SU tabular action values over (occupancy pattern, gain bucket) states."""

    values: np.ndarray  # (num_sus, num_states, num_actions)
    num_channels: int
    num_levels: int

    def action_index(self, channel: int, level: int) -> int:
        # channel == num_channels encodes "idle"
        if channel == self.num_channels:
            return self.num_channels * self.num_levels
        return channel * self.num_levels + level


def _project_channel(alloc: Allocation, k: int, gains, delta_y, p_th, noise_power,
                     per_user_cap, best_effort=True):
    """Apply the spacing projection on channel k in place; returns feasibility."""
    members = alloc.membership[k]
    if not members:
        alloc.sic_orders[k] = []
        return True
    powers = np.array([alloc.powers[u, k] for u in members])
    g = np.array([gains[u] for u in members])
    caps = np.array([per_user_cap] * len(members))
    res = noma.enforce_min_distance(powers, g, delta_y, p_th, noise_power,
                                    per_user_cap=caps, best_effort=best_effort)
    for i, u in enumerate(members):
        alloc.powers[u, k] = res.powers[i]
    alloc.sic_orders[k] = [members[i] for i in res.order]
    return res.feasible


def project_allocation(alloc: Allocation, gains, delta_y, p_th, noise_power,
                       per_user_cap, best_effort=True):
    """Project every channel's powers; returns the per-channel feasibility flags."""
    return [
        _project_channel(alloc, k, gains, delta_y, p_th, noise_power,
                         per_user_cap, best_effort)
        for k in range(alloc.num_subchannels)
    ]


def greedy_allocate(gains, free_channels, max_multiplexed: int, p_max: float,
                    delta_y: float, p_th: float, noise_power: float) -> Allocation:
    """Fill free channels with the best-gain SUs at full requested power.

    SUs are sorted by gain and dealt round-robin over the free channels, up to
    ``max_multiplexed`` per channel; powers are then spaced by the ladder
    projection.  Used both as a large-instance comparator and as the generator
    of preferred (training) transmissions.
    """
    gains = np.asarray(gains, dtype=float)
    n = gains.shape[0]
    alloc = Allocation.empty(n, max(free_channels, default=-1) + 1 if free_channels else 1)
    # allocate against the full channel count implied by callers
    return fill_greedy(alloc, gains, free_channels, max_multiplexed, p_max,
                       delta_y, p_th, noise_power)


def fill_greedy(alloc: Allocation, gains, free_channels, max_multiplexed, p_max,
                delta_y, p_th, noise_power) -> Allocation:
    free = sorted(free_channels)
    if not free:
        return alloc
    order = np.argsort(-gains, kind="stable")
    capacity = len(free) * max_multiplexed
    for rank, u in enumerate(order[:capacity]):
        k = free[rank % len(free)]
        alloc.membership[k].append(int(u))
        alloc.powers[u, k] = p_max
    project_allocation(alloc, gains, delta_y, p_th, noise_power, p_max,
                       best_effort=True)
    return alloc


def oma_allocate(gains, free_channels, num_subchannels: int, p_max: float,
                 delta_y: float, p_th: float, noise_power: float) -> Allocation:
    """Orthogonal access: one SU per free channel, best gain first, full power."""
    gains = np.asarray(gains, dtype=float)
    alloc = Allocation.empty(gains.shape[0], num_subchannels)
    order = np.argsort(-gains, kind="stable")
    for k, u in zip(sorted(free_channels), order):
        alloc.membership[k] = [int(u)]
        alloc.powers[u, k] = p_max
    project_allocation(alloc, gains, delta_y, p_th, noise_power, p_max)
    return alloc


def random_allocate(gains, free_channels, num_subchannels: int,
                    max_multiplexed: int, grid: PowerGrid, p_max: float,
                    delta_y: float, p_th: float, noise_power: float,
                    rng: np.random.Generator) -> Allocation:
    """Feasible uniform-random assignment with grid powers."""
    gains = np.asarray(gains, dtype=float)
    n = gains.shape[0]
    alloc = Allocation.empty(n, num_subchannels)
    free = sorted(free_channels)
    if free:
        for u in range(n):
            k = free[rng.integers(0, len(free))]
            if len(alloc.membership[k]) >= max_multiplexed:
                continue  # channel full: the SU idles this time
            p = float(grid.levels[rng.integers(0, grid.levels.size)])
            alloc.membership[k].append(u)
            alloc.powers[u, k] = min(p, p_max)
        project_allocation(alloc, gains, delta_y, p_th, noise_power, p_max)
    return alloc


def exhaustive_oracle(gains, free_channels, num_subchannels: int,
                      max_multiplexed: int, grid: PowerGrid, p_max: float,
                      delta_y: float, p_th: float, noise_power: float,
                      subchannels, size_limit: int = 10_000_000):
    """Exact argmax of the sum rate over assignments and grid powers.

    Every SU independently either idles or picks a (free channel, power level)
    pair; combinations violating the multiplexing cap or the spacing
    projection are discarded.  Ties break toward the lexicographically
    smallest assignment vector.  Refuses instances whose enumeration exceeds
    ``size_limit`` combinations.
    """
    gains = np.asarray(gains, dtype=float)
    n = gains.shape[0]
    free = sorted(free_channels)
    num_choices = 1 + len(free) * grid.levels.size
    total = num_choices ** n
    if total > size_limit:
        raise OracleSizeError(
            f"oracle instance too large: {num_choices}^{n} = {total} combinations "
            f"exceeds the {size_limit} limit")

    choices = [None] + [(k, p) for k in free for p in grid.levels]
    best = None
    best_rate = -1.0
    best_key = None
    for combo in itertools.product(range(num_choices), repeat=n):
        counts = {}
        ok = True
        for u, ci in enumerate(combo):
            if ci == 0:
                continue
            k, _ = choices[ci]
            counts[k] = counts.get(k, 0) + 1
            if counts[k] > max_multiplexed:
                ok = False
                break
        if not ok:
            continue
        alloc = Allocation.empty(n, num_subchannels)
        for u, ci in enumerate(combo):
            if ci == 0:
                continue
            k, p = choices[ci]
            alloc.membership[k].append(u)
            alloc.powers[u, k] = min(p, p_max)
        try:
            flags = project_allocation(alloc, gains, delta_y, p_th, noise_power,
                                       p_max, best_effort=False)
        except InfeasibleSpacingError:
            continue
        if not all(flags):
            continue
        rate = noma.achievable_rate(alloc, gains, subchannels).sum_rate
        key = combo
        if rate > best_rate + 1e-12 or (abs(rate - best_rate) <= 1e-12
                                        and (best_key is None or key < best_key)):
            best, best_rate, best_key = alloc, rate, key
    if best is None:
        best = Allocation.empty(n, num_subchannels)
        best_rate = 0.0
    return best, float(best_rate)


@dataclass
class QLearningConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 0.3
    epsilon_end: float = 0.01
    num_gain_buckets: int = 3
    num_levels: int = 4

    def __post_init__(self):
        for name in ("alpha", "gamma", "epsilon_start"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")


def gain_buckets(gains, num_buckets: int) -> np.ndarray:
    """Equal-population gain buckets (coarse channel-quality state)."""
    gains = np.asarray(gains, dtype=float)
    qs = np.quantile(gains, np.linspace(0, 1, num_buckets + 1)[1:-1])
    return np.searchsorted(qs, gains, side="right")


def occupancy_index(occupancy) -> int:
    idx = 0
    for i, bit in enumerate(np.asarray(occupancy, dtype=bool)):
        idx |= int(bit) << i
    return idx


class QLearningAllocator:
    """Per-SU epsilon-greedy tabular Q-learning over (channel, power level) actions.

    Each SU keeps its own table; the shared per-slot reward is the system
    goodput sum rate of the jointly induced allocation.
    """

    def __init__(self, num_sus: int, num_subchannels: int, grid: PowerGrid,
                 config: QLearningConfig):
        self.config = config
        self.grid = grid
        self.num_sus = num_sus
        self.num_channels = num_subchannels
        num_states = (2 ** num_subchannels) * config.num_gain_buckets
        num_actions = num_subchannels * grid.levels.size + 1  # + idle
        self.table = QTable(values=np.zeros((num_sus, num_states, num_actions)),
                            num_channels=num_subchannels,
                            num_levels=grid.levels.size)
        self.epsilon = config.epsilon_start

    def state_index(self, occupancy, bucket: int) -> int:
        return occupancy_index(occupancy) * self.config.num_gain_buckets + bucket

    def select(self, state: int, su: int, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(0, self.table.values.shape[2]))
        return int(np.argmax(self.table.values[su, state]))

    def decode_action(self, action: int):
        """Returns (channel, power) or None for the idle action."""
        if action == self.num_channels * self.table.num_levels:
            return None
        k, level = divmod(action, self.table.num_levels)
        return k, float(self.grid.levels[level])

    def update(self, su: int, state: int, action: int, reward: float,
               next_state: int):
        cfg = self.config
        q = self.table.values[su]
        target = reward + cfg.gamma * np.max(q[next_state])
        q[state, action] += cfg.alpha * (target - q[state, action])

    def decay_epsilon(self, progress: float):
        cfg = self.config
        self.epsilon = cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * \
            min(1.0, max(0.0, progress))
