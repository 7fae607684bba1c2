"""Slot-level signal simulation shared by training and the online loop.

Observations are noise-normalized: the received composite is divided by the
noise standard deviation, so the additive noise is unit-power circular
Gaussian and received amplitudes are sqrt(p * g / eta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnuav import noma


@dataclass
class SlotTransmission:
    """One slot on one channel: observations, decode outcome, layers."""

    observations: np.ndarray      # (samples, 2) I/Q, noise-normalized
    members: list                 # SU indices in SIC order (may be empty)
    decode_fraction: np.ndarray   # per member (SIC order), fraction of correct samples
    pu_active: bool


def received_amplitudes(powers, gains, noise_power: float) -> np.ndarray:
    return np.sqrt(np.asarray(powers, dtype=float) * np.asarray(gains, dtype=float)
                   / noise_power)


def simulate_slot(members, powers, gains, noise_power: float, max_multiplexed: int,
                  samples: int, rng: np.random.Generator,
                  pu_active: bool = False, pu_amplitude: float = 0.0,
                  noiseless: bool = False) -> SlotTransmission:
    """Transmit one slot on a channel and SIC-decode every sample.

    ``members`` must already be in SIC order (strongest received first);
    constellation rotations are assigned by SIC layer.  The primary user, when
    active, is treated as unsuppressed interference.
    """
    m = len(members)
    amps = received_amplitudes(powers, gains, noise_power) if m else np.zeros(0)
    consts = [amps[i] * noma.user_constellation(i, max_multiplexed)
              for i in range(m)]

    y = np.zeros(samples, dtype=complex)
    syms = rng.integers(0, 4, size=(samples, m)) if m else np.zeros((samples, 0), int)
    for i in range(m):
        y += consts[i][syms[:, i]]
    if pu_active and pu_amplitude > 0:
        y += pu_amplitude * noma.BPSK[rng.integers(0, 2, size=samples)]
    if not noiseless:
        n = rng.standard_normal((samples, 2)) * np.sqrt(0.5)
        y += n[:, 0] + 1j * n[:, 1]
    obs = np.column_stack((y.real, y.imag))

    correct = np.zeros(m)
    residual = y.copy()
    for i in range(m):
        d = np.abs(residual[:, None] - consts[i][None, :])
        picks = np.argmin(d, axis=1)
        correct[i] = np.sum(picks == syms[:, i])
        residual -= consts[i][picks]
    frac = correct / samples if m else np.zeros(0)
    return SlotTransmission(observations=obs, members=list(members),
                            decode_fraction=frac, pu_active=pu_active)


def goodput_rates(alloc, gains, subchannels, decode_fractions) -> np.ndarray:
    """Achievable rates weighted by each user's symbol decode fraction.

    ``decode_fractions[k]`` aligns with ``alloc.sic_orders[k]``.
    """
    report = _rates(alloc, gains, subchannels)
    out = report.per_user_rates.copy()
    for k, members in enumerate(alloc.sic_orders):
        for i, u in enumerate(members):
            out[u, k] *= decode_fractions[k][i]
    return out


def _rates(alloc, gains, subchannels):
    return noma.achievable_rate(alloc, gains, subchannels)
