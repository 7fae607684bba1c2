"""Active-inference decision layer: policies, action selection, episode loop.

The allocator keeps a per-SU probability table over subchannels and a
per-cluster continuous power offset table.  Each slot it samples actions,
transmits, filters every channel with the learned switching model, scores the
slot by message-mismatch abnormality, and nudges both tables along the
resulting generalized action errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cnuav import noma, simulate
from cnuav.baselines import project_allocation
from cnuav.gdbn import LearnedModel
from cnuav.mjpf import (BeliefState, Message, abnormality, belief_update,
                        discrete_abnormality, init_belief)
from cnuav.noma import Allocation
from cnuav.radio_env import (PuActivityModel, Scenario, FadingConfig,
                             PathLossConfig, draw_episode_gains, move_sus,
                             step_pu_activity)


@dataclass
class ActionSpace:
    """Discrete subchannel choices plus a continuous power interval per SU."""

    num_subchannels: int
    power_min: float
    power_max: float

    def __post_init__(self):
        if self.num_subchannels < 1:
            raise ValueError("need at least one subchannel")
        if not 0 <= self.power_min <= self.power_max:
            raise ValueError("power interval must satisfy 0 <= min <= max")


@dataclass
class PolicyTables:
    """State-action tables: channel probabilities and per-cluster power offsets."""

    channel_probs: list          # per tau segment: (N, K) rows summing to 1
    power_offsets: list          # per tau segment: (num_clusters,) watts
    a0_power: float
    power_state: np.ndarray      # (N,) current requested watts

    def rows(self, segment: int = 0) -> np.ndarray:
        return self.channel_probs[segment]

    def offsets(self, segment: int = 0) -> np.ndarray:
        return self.power_offsets[segment]


def init_policy(num_subchannels: int, num_sus: int, a0_power: float,
                num_clusters: int = 1, tau_segments: int = 1) -> PolicyTables:
    """Uniform 1/K rows; offsets zeroed so the initial power equals a0."""
    if num_subchannels < 1:
        raise ValueError("num_subchannels must be >= 1")
    rows = [np.full((num_sus, num_subchannels), 1.0 / num_subchannels)
            for _ in range(tau_segments)]
    offsets = [np.zeros(num_clusters) for _ in range(tau_segments)]
    return PolicyTables(channel_probs=rows, power_offsets=offsets,
                        a0_power=a0_power,
                        power_state=np.full(num_sus, float(a0_power)))


@dataclass
class NetworkEnvironment:
    """Scenario plus physical-layer parameters and per-episode channel state."""

    scenario: Scenario
    path_loss: PathLossConfig
    fading: FadingConfig
    pu_model: PuActivityModel
    subchannels: list
    constellation: noma.ConstellationConfig
    p_max: float
    per_channel_cap: float
    max_multiplexed: int
    pu_amplitude: float = 20.0
    mobility_step: float = 0.0
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def noise_power(self) -> float:
        return self.subchannels[0].noise_power

    @property
    def num_subchannels(self) -> int:
        return self.scenario.num_subchannels

    @property
    def num_sus(self) -> int:
        return self.scenario.num_sus

    def new_episode(self, rng: np.random.Generator):
        """Move SUs and redraw block fading; gains stay fixed within the episode."""
        if self.mobility_step > 0:
            move_sus(self.scenario, self.mobility_step, rng)
        self.gains = draw_episode_gains(self.scenario, self.path_loss,
                                        self.fading, rng)
        return self.gains

    def freeze_gains(self, gains):
        self.gains = np.asarray(gains, dtype=float)


@dataclass
class AgentConfig:
    particles: int = 100
    samples_per_slot: int = 4
    policy_step: float = 0.08
    policy_step_decay: float = 30.0   # harmonic decay constant, in episodes
    power_step: float = 0.06          # offset learning rate
    power_ramp_w: float = 0.04        # max power change per SU per slot, watts
    temperature: float = 1.0
    pu_skip_threshold: float = 0.5
    exploration_floor: float = 1e-3
    abnormality_combiner: str = "sum"  # "sum" or "max"

    def combine(self, continuous: float, discrete: float) -> float:
        if self.abnormality_combiner == "max":
            return max(continuous, discrete)
        return continuous + discrete


@dataclass
class EpisodeTrace:
    """Per-slot record of one episode."""

    assignments: np.ndarray       # (slots, N) channel index or -1 for idle
    powers: np.ndarray            # (slots, N) transmitted watts
    abnormality: np.ndarray       # (slots,) combined over channels
    action_error_norm: np.ndarray
    inphase_error: np.ndarray     # (slots,) mean |innovation_I|
    sum_rate: np.ndarray          # (slots,) goodput bits/s
    per_user_rates: np.ndarray    # (slots, N)
    feasible: np.ndarray          # (slots, K) spacing feasibility per channel

    @property
    def episode_sum_rate(self) -> float:
        return float(self.sum_rate.mean())

    @property
    def episode_abnormality(self) -> float:
        return float(self.abnormality.sum())

    @property
    def mean_inphase_error(self) -> float:
        return float(self.inphase_error.mean())


def select_actions(tables: PolicyTables, pu_forecast, map_clusters, env:
                   NetworkEnvironment, rng: np.random.Generator,
                   segment: int = 0, skip_threshold: float = 0.5,
                   exploration_floor: float = 1e-3, power_ramp_w: float = 0.01):
    """Sample subchannels and powers, then project onto a feasible allocation.

    Channels whose forecast occupancy reaches the threshold are skipped; rows
    are renormalized over the remaining channels.  Memberships overflowing the
    multiplexing cap lose their weakest requesters (by requested received
    power) to the next-best admissible channel with room, or to idling.
    The continuous action adds the target channel's per-cluster offset to the
    current power, rate-limited to ``power_ramp_w`` watts per slot.
    Returns the allocation, per-channel spacing feasibility, the admissible
    mask and the effective per-SU sampling rows.
    """
    k = env.num_subchannels
    n = env.num_sus
    admissible = np.asarray(pu_forecast) < skip_threshold
    alloc = Allocation.empty(n, k)
    rows = tables.rows(segment)
    eff_rows = np.zeros_like(rows)
    if not np.any(admissible):
        return alloc, [True] * k, admissible, eff_rows, tables.power_state.copy()

    offsets = tables.offsets(segment)
    requested = np.zeros(n)
    target = np.full(n, -1, dtype=int)
    for u in range(n):
        row = np.where(admissible, rows[u] + exploration_floor, 0.0)
        row = row / row.sum()
        eff_rows[u] = row
        target[u] = int(rng.choice(k, p=row))
        cluster = map_clusters[target[u]]
        step = power_ramp_w * float(np.clip(offsets[cluster] / tables.a0_power,
                                            -1.0, 1.0))
        requested[u] = float(np.clip(tables.power_state[u] + step,
                                     1e-6 * env.p_max,
                                     min(env.p_max, env.per_channel_cap)))

    # enforce the per-channel multiplexing cap; bump the weakest requesters
    received = requested * env.gains
    pending = sorted(range(n), key=lambda u: (-received[u], u))
    capacity = {c: env.max_multiplexed for c in range(k) if admissible[c]}
    for u in pending:
        c = target[u]
        if capacity.get(c, 0) > 0:
            capacity[c] -= 1
            alloc.membership[c].append(u)
            alloc.powers[u, c] = requested[u]
            continue
        fallback = [c2 for c2 in np.argsort(-eff_rows[u], kind="stable")
                    if capacity.get(int(c2), 0) > 0]
        if fallback:
            c2 = int(fallback[0])
            capacity[c2] -= 1
            alloc.membership[c2].append(u)
            alloc.powers[u, c2] = requested[u]
        # otherwise the SU idles this slot

    for c in range(k):
        alloc.membership[c].sort()
    flags = project_allocation(alloc, env.gains, env.constellation.delta_y,
                               env.constellation.p_th, env.noise_power,
                               min(env.p_max, env.per_channel_cap),
                               best_effort=True)
    return alloc, flags, admissible, eff_rows, requested


def action_error(pi_row: np.ndarray, lambda_row: np.ndarray, action=None):
    """Generalized action error: the action paired with lambda - pi."""
    pi_row = np.asarray(pi_row, dtype=float)
    lambda_row = np.asarray(lambda_row, dtype=float)
    if pi_row.shape != lambda_row.shape:
        raise ValueError("messages must be defined over the same action set")
    return action, lambda_row - pi_row


def update_policy(tables: PolicyTables, errors: np.ndarray, step: float,
                  power_errors=None, power_step: float = 0.0,
                  segment: int = 0) -> PolicyTables:
    """Move rows along the action errors and renormalize; adjust power offsets."""
    if not 0.0 < step <= 1.0:
        raise ValueError("step size must be in (0, 1]")
    rows = tables.rows(segment)
    updated = np.clip(rows + step * np.asarray(errors, dtype=float), 0.0, None)
    updated += 1e-12
    tables.channel_probs[segment] = updated / updated.sum(axis=1, keepdims=True)
    if power_errors is not None:
        offsets = tables.offsets(segment)
        for cluster, ge in power_errors:
            offsets[cluster] = float(np.clip(offsets[cluster] - power_step * ge,
                                             -tables.a0_power, tables.a0_power))
    return tables


def _slot_messages(obs: np.ndarray, pred_means, pred_covs, dyn):
    """Slot-aggregated Gaussian messages in the observed subspace."""
    lam_mean = obs.mean(axis=0)
    centered = obs - lam_mean
    lam_cov = centered.T @ centered / max(1, obs.shape[0]) + dyn.R
    pred_means = np.asarray(pred_means)
    pi_mean = pred_means.mean(axis=0)
    spread = pred_means - pi_mean
    pi_cov = (np.asarray(pred_covs).mean(axis=0)
              + spread.T @ spread / max(1, pred_means.shape[0]))
    return (Message(kind="prediction", mean=pi_mean, cov=0.5 * (pi_cov + pi_cov.T)),
            Message(kind="diagnostic", mean=lam_mean, cov=0.5 * (lam_cov + lam_cov.T)))


def classify_channel(obs: np.ndarray, obs_moments: dict, dyn) -> str:
    """Label a channel's slot by the closest entity's stationary observation law."""
    lam_mean = obs.mean(axis=0)
    centered = obs - lam_mean
    lam_cov = centered.T @ centered / max(1, obs.shape[0]) + dyn.R
    lam = Message(kind="diagnostic", mean=lam_mean, cov=lam_cov)
    best, best_ups = None, np.inf
    for entity, (mean, cov) in obs_moments.items():
        ups = abnormality(Message(kind="prediction", mean=np.asarray(mean),
                                  cov=np.asarray(cov) + dyn.R), lam)
        if ups < best_ups:
            best, best_ups = entity, ups
    return best


def run_episode(env: NetworkEnvironment, model: LearnedModel,
                tables: PolicyTables, config: AgentConfig,
                rng: np.random.Generator, episode: int = 0,
                beliefs=None, segment: int = 0):
    """One episode of the online loop; returns the trace and updated tables."""
    vocab = model.vocabulary("combined")
    dyn = model.dynamics["combined"]
    k, n = env.num_subchannels, env.num_sus
    slots = env.scenario.episode_length
    if beliefs is None:
        beliefs = [init_belief(vocab, dyn, config.particles, rng) for _ in range(k)]

    step = config.policy_step / (1.0 + episode / config.policy_step_decay)
    power_step = config.power_step / (1.0 + episode / config.policy_step_decay)

    trace = EpisodeTrace(
        assignments=np.full((slots, n), -1, dtype=int),
        powers=np.zeros((slots, n)),
        abnormality=np.zeros(slots),
        action_error_norm=np.zeros(slots),
        inphase_error=np.zeros(slots),
        sum_rate=np.zeros(slots),
        per_user_rates=np.zeros((slots, n)),
        feasible=np.ones((slots, k), dtype=bool),
    )
    map_clusters = np.zeros(k, dtype=int)

    for t in range(slots):
        forecast = env.pu_model.forecast_occupied()
        alloc, flags, admissible, eff_rows, requested = select_actions(
            tables, forecast, map_clusters, env, rng, segment,
            config.pu_skip_threshold, config.exploration_floor,
            config.power_ramp_w)
        step_pu_activity(env.pu_model, rng)

        slot_scores = np.zeros(k)
        decode_fractions = []
        inphase_errs = []
        power_errors = []
        for c in range(k):
            members = alloc.sic_orders[c]
            powers = np.array([alloc.powers[u, c] for u in members])
            gains = np.array([env.gains[u] for u in members])
            tx = simulate.simulate_slot(
                members, powers, gains, env.noise_power, env.max_multiplexed,
                config.samples_per_slot, rng,
                pu_active=bool(env.pu_model.occupancy[c]),
                pu_amplitude=env.pu_amplitude)
            decode_fractions.append(tx.decode_fraction)

            pred_means, pred_covs = [], []
            pis, lams = [], []
            for z in tx.observations:
                beliefs[c], _, _, info = belief_update(
                    beliefs[c], z, vocab, dyn, rng, channel=c, segment=segment)
                pred_means.append(info["pred_obs_mean"])
                pred_covs.append(info["pred_obs_cov"])
                pis.append(info["pi_s"].weights)
                lams.append(info["lambda_s"].weights)
            map_clusters[c] = int(np.argmax(lams[-1]))
            pi_msg, lam_msg = _slot_messages(tx.observations, pred_means,
                                             pred_covs, dyn)
            ups_c = abnormality(pi_msg, lam_msg)
            ups_d = discrete_abnormality(np.mean(pis, axis=0), np.mean(lams, axis=0))
            slot_scores[c] = config.combine(ups_c, ups_d)
            if members:
                # power-directed generalized error: observed vs predicted
                # received magnitude (normalized amplitude units)
                rms_obs = float(np.sqrt(np.sum(lam_msg.mean ** 2)
                                        + np.trace(lam_msg.cov)))
                rms_pred = float(np.sqrt(np.sum(pi_msg.mean ** 2)
                                         + np.trace(pi_msg.cov)))
                ge_rel = (rms_obs - rms_pred) / max(rms_pred, 1e-9)
                power_errors.append((int(map_clusters[c]),
                                     ge_rel * tables.a0_power))
                # in-phase envelope prediction error for this slot
                rms_obs_i = np.sqrt(lam_msg.mean[0] ** 2 + lam_msg.cov[0, 0])
                rms_pred_i = np.sqrt(pi_msg.mean[0] ** 2 + pi_msg.cov[0, 0])
                inphase_errs.append(abs(rms_obs_i - rms_pred_i))

        good = simulate.goodput_rates(alloc, env.gains, env.subchannels,
                                      decode_fractions)
        trace.per_user_rates[t] = good.sum(axis=1)
        trace.sum_rate[t] = good.sum()
        # action-quality abnormality: admissible channels only (occupied
        # channels are sensed, not acted on)
        trace.abnormality[t] = slot_scores[admissible].sum()
        trace.inphase_error[t] = float(np.mean(inphase_errs)) if inphase_errs else 0.0
        trace.feasible[t] = flags
        for c, members in enumerate(alloc.membership):
            for u in members:
                trace.assignments[t, u] = c
                trace.powers[t, u] = alloc.powers[u, c]

        if admissible.any():
            # diagnostic action message over admissible channels
            lam_a = np.where(admissible, -slot_scores / config.temperature,
                             -np.inf)
            lam_a = np.exp(lam_a - lam_a.max())
            lam_a /= lam_a.sum()
            errors = np.zeros((n, k))
            for u in range(n):
                _, err = action_error(eff_rows[u], lam_a)
                errors[u] = err
            trace.action_error_norm[t] = float(np.abs(errors).mean())
            update_policy(tables, errors, step, power_errors, power_step,
                          segment)
        # the rate-limited request becomes the current power state
        tables.power_state = requested

    return trace, tables, beliefs
