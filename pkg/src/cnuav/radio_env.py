"""Time-varying radio environment: geometry, channel gains, fading and PU activity.

All randomness flows through explicitly injected ``numpy.random.Generator``
instances so that identical seeds reproduce identical episodes bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Scenario:
    """Geometry and size of one radio environment instance.

    Positions are horizontal coordinates in meters; the UAV hovers at a fixed
    altitude above the cell center.
    """

    cell_radius: float = 1000.0
    uav_altitude: float = 100.0
    uav_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    su_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    min_uav_su_distance: float = 100.0
    num_subchannels: int = 6
    num_sus: int = 20
    episode_length: int = 24

    def __post_init__(self):
        self.uav_xy = np.asarray(self.uav_xy, dtype=float)
        self.su_positions = np.asarray(self.su_positions, dtype=float).reshape(-1, 2)
        if self.num_subchannels < 1:
            raise ValueError("num_subchannels must be >= 1")
        if self.num_sus < 1:
            raise ValueError("num_sus must be >= 1")
        if self.uav_altitude <= 0:
            raise ValueError("uav_altitude must be positive")

    def validate_positions(self):
        """Check the SU placement invariants (inside cell, min UAV distance)."""
        r = np.linalg.norm(self.su_positions, axis=1)
        if np.any(r > self.cell_radius + 1e-9):
            raise ValueError("SU outside cell radius")
        d = distance_uav_to_su(self.uav_xy, self.su_positions, self.uav_altitude)
        if np.any(d < self.min_uav_su_distance - 1e-9):
            raise ValueError("SU closer to UAV than the minimum distance")


@dataclass
class PathLossConfig:
    """Free-space path loss with linear power gain ``rho0`` at 1 m."""

    rho0: float = 1e-4  # -40 dB

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")


@dataclass
class FadingConfig:
    """Rician small-scale fading with linear K-factor ``rician_k``.

    ``mean_power`` normalises the coefficient so E[|omega|^2] = mean_power.
    """

    rician_k: float = 10.0
    mean_power: float = 1.0

    def __post_init__(self):
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if self.mean_power <= 0:
            raise ValueError("mean_power must be positive")


@dataclass
class PuActivityModel:
    """Two-state Markov occupancy per PU channel; non-PU channels stay vacant.

    ``transition[c]`` is the 2x2 row-stochastic matrix for channel ``c`` with
    state order (vacant, occupied).
    """

    occupancy: np.ndarray
    transition: np.ndarray
    pu_channels: frozenset

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.transition = np.asarray(self.transition, dtype=float)
        self.pu_channels = frozenset(int(c) for c in self.pu_channels)
        k = self.occupancy.shape[0]
        if self.transition.shape != (k, 2, 2):
            raise ValueError("transition must have shape (K, 2, 2)")
        rows = self.transition.sum(axis=2)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1")
        if any(c < 0 or c >= k for c in self.pu_channels):
            raise ValueError("pu_channels indices out of range")

    @classmethod
    def static_occupied(cls, num_subchannels: int, pu_channels) -> "PuActivityModel":
        """Occupancy fixed forever: PU channels occupied, the rest vacant."""
        occ = np.zeros(num_subchannels, dtype=bool)
        for c in pu_channels:
            occ[c] = True
        trans = np.tile(np.eye(2), (num_subchannels, 1, 1))
        return cls(occupancy=occ, transition=trans, pu_channels=frozenset(pu_channels))

    def forecast_occupied(self) -> np.ndarray:
        """Probability that each channel is occupied in the next slot."""
        p = np.zeros(self.occupancy.shape[0])
        for c in self.pu_channels:
            state = 1 if self.occupancy[c] else 0
            p[c] = self.transition[c, state, 1]
        return p


@dataclass
class Subchannel:
    """One frequency subchannel: bandwidth in Hz and noise power in watts."""

    index: int
    bandwidth: float
    noise_power: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")


def noise_power_watts(noise_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Thermal noise power over a bandwidth, from a PSD in dBm/Hz."""
    return 10.0 ** ((noise_dbm_per_hz - 30.0) / 10.0) * bandwidth_hz


def make_subchannels(num_subchannels: int, system_bandwidth_hz: float,
                     noise_dbm_per_hz: float) -> list[Subchannel]:
    """Split the system bandwidth equally; one noise power per subchannel."""
    b = system_bandwidth_hz / num_subchannels
    eta = noise_power_watts(noise_dbm_per_hz, b)
    return [Subchannel(index=k, bandwidth=b, noise_power=eta)
            for k in range(num_subchannels)]


def distance_uav_to_su(q_u, w_n, h: float):
    """3-D distance from the hovering UAV to ground SU position(s)."""
    if h <= 0:
        raise ValueError("altitude must be positive")
    q_u = np.asarray(q_u, dtype=float)
    w_n = np.asarray(w_n, dtype=float)
    horiz = np.linalg.norm(q_u - w_n, axis=-1)
    return np.sqrt(h * h + horiz * horiz)


def large_scale_gain(rho0: float, d):
    """Free-space large-scale power gain rho0 / d^2."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return rho0 / (d * d)


def sample_small_scale(fading: FadingConfig, rng: np.random.Generator, size=None):
    """Draw complex Rician fading coefficient(s) with E[|omega|^2] = mean_power.

    The line-of-sight component has fixed phase; the scattered component is
    circularly symmetric Gaussian.  ``rician_k = 0`` reduces to Rayleigh.
    """
    k = fading.rician_k
    los = np.sqrt(fading.mean_power * k / (k + 1.0))
    scatter_var = fading.mean_power / (k + 1.0)  # total over both quadratures
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    eps = rng.standard_normal(shape + (2,)) * np.sqrt(scatter_var / 2.0)
    omega = los + eps[..., 0] + 1j * eps[..., 1]
    return omega if size is not None else complex(omega)


def channel_gain(scenario: Scenario, path_loss: PathLossConfig,
                 fading: FadingConfig, n: int, rng: np.random.Generator) -> float:
    """Linear power gain for SU ``n``: large-scale gain times |omega|^2.

    The coefficient is drawn once per call; callers hold it constant within an
    episode (block fading) and redraw between episodes.
    """
    d = distance_uav_to_su(scenario.uav_xy, scenario.su_positions[n], scenario.uav_altitude)
    omega = sample_small_scale(fading, rng)
    return float(large_scale_gain(path_loss.rho0, d) * abs(omega) ** 2)


def draw_episode_gains(scenario: Scenario, path_loss: PathLossConfig,
                       fading: FadingConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-SU channel power gains for one episode (block fading)."""
    d = distance_uav_to_su(scenario.uav_xy, scenario.su_positions, scenario.uav_altitude)
    omega = sample_small_scale(fading, rng, size=scenario.num_sus)
    return large_scale_gain(path_loss.rho0, d) * np.abs(omega) ** 2


def step_pu_activity(model: PuActivityModel, rng: np.random.Generator) -> np.ndarray:
    """Advance every PU channel's Markov chain by one slot, in place."""
    occ = model.occupancy
    for c in sorted(model.pu_channels):
        state = 1 if occ[c] else 0
        occ[c] = rng.random() < model.transition[c, state, 1]
    return occ


def move_sus(scenario: Scenario, mobility_step: float, rng: np.random.Generator) -> np.ndarray:
    """Random-direction bounded step per SU, reflected at the cell boundary.

    Positions are also pushed out radially from the UAV's ground projection so
    the 3-D minimum UAV distance keeps holding.  Returns the new positions and
    updates the scenario in place.
    """
    if mobility_step < 0:
        raise ValueError("mobility_step must be >= 0")
    pos = scenario.su_positions
    if mobility_step > 0:
        n = pos.shape[0]
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        step = rng.uniform(0.0, mobility_step, size=n)
        pos = pos + np.column_stack((step * np.cos(theta), step * np.sin(theta)))
        # reflect at the cell boundary
        r = np.linalg.norm(pos, axis=1)
        outside = r > scenario.cell_radius
        if np.any(outside):
            pos[outside] *= ((2.0 * scenario.cell_radius - r[outside]) / r[outside])[:, None]
        # keep the 3-D distance to the UAV above the minimum
        min_horiz_sq = scenario.min_uav_su_distance ** 2 - scenario.uav_altitude ** 2
        if min_horiz_sq > 0:
            min_horiz = np.sqrt(min_horiz_sq)
            rel = pos - scenario.uav_xy
            d = np.linalg.norm(rel, axis=1)
            close = d < min_horiz
            if np.any(close):
                safe = np.where(d[close] > 0, d[close], 1.0)
                pos[close] = scenario.uav_xy + rel[close] * (min_horiz / safe)[:, None]
                pos[close & (d == 0)] = scenario.uav_xy + np.array([min_horiz, 0.0])
    scenario.su_positions = pos
    return pos


def place_sus_uniform(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Scatter SUs uniformly over the cell disk, honouring the UAV distance."""
    n = scenario.num_sus
    min_horiz_sq = max(0.0, scenario.min_uav_su_distance ** 2 - scenario.uav_altitude ** 2)
    r = np.sqrt(rng.uniform(min_horiz_sq, scenario.cell_radius ** 2, size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    scenario.su_positions = np.column_stack((r * np.cos(theta), r * np.sin(theta)))
    scenario.validate_positions()
    return scenario.su_positions
