"""Physical layer: constellations, superposition coding, SIC decoding and rates.

Power shaping uses a geometric received-power ladder with a fixed amplitude
ratio between successive SIC layers.  The ratio 2.45 was calibrated by
exhaustive enumeration over all symbol combinations of rotated QPSK
constellations: it guarantees error-free hard-decision layered SIC in the
noiseless case for up to 7 multiplexed users, and the resulting composite
constellation has minimum distance sqrt(2) times the bottom-layer amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Amplitude ratio between adjacent SIC layers of the enforced ladder.
LADDER_AMP_RATIO = 2.45
LADDER_POWER_RATIO = LADDER_AMP_RATIO ** 2
# Composite minimum distance of the enforced ladder, in units of the
# bottom-layer received amplitude (enumerated for m <= 7).
LADDER_MIN_DIST_COEF = np.sqrt(2.0)

# Gray-coded unit-energy QPSK, symbol index order 00, 01, 11, 10.
QPSK_GRAY = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)
BPSK = np.array([1.0 + 0j, -1.0 + 0j])

_GRAY_INDEX = {(0, 0): 0, (0, 1): 1, (1, 1): 2, (1, 0): 3}


class InfeasibleSpacingError(ValueError):
    """Raised when no power ladder satisfies the spacing constraints."""


@dataclass
class ConstellationConfig:
    """Constellation separation parameters.

    ``delta_y`` is the minimum composite-constellation distance and ``p_th``
    the minimum received-power gap between successive SIC layers.  Both are
    expressed in noise-normalized units (amplitude and power respectively).
    """

    delta_y: float = 30.0
    p_th: float = 1.0

    def __post_init__(self):
        if self.delta_y <= 0:
            raise ValueError("delta_y must be positive")
        if self.p_th < 0:
            raise ValueError("p_th must be >= 0")


@dataclass
class Allocation:
    """Subchannel membership, transmit powers and SIC orders.

    ``membership[k]`` lists the SUs multiplexed on channel ``k``;
    ``powers[n, k]`` is SU ``n``'s transmit power on channel ``k`` in watts;
    ``sic_orders[k]`` lists the members of channel ``k`` in decode order
    (strongest received power first).
    """

    membership: list
    powers: np.ndarray
    sic_orders: list

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=float)

    @property
    def num_sus(self) -> int:
        return self.powers.shape[0]

    @property
    def num_subchannels(self) -> int:
        return self.powers.shape[1]

    @classmethod
    def empty(cls, num_sus: int, num_subchannels: int) -> "Allocation":
        return cls(membership=[[] for _ in range(num_subchannels)],
                   powers=np.zeros((num_sus, num_subchannels)),
                   sic_orders=[[] for _ in range(num_subchannels)])


@dataclass
class RateReport:
    """Per-user achievable rates (bits/s) and their total."""

    per_user_rates: np.ndarray
    sum_rate: float


def rotation_for_layer(layer: int, max_multiplexed: int) -> float:
    """Phase offset of the constellation used by a SIC layer within a channel."""
    return layer * np.pi / (2.0 * max(1, max_multiplexed))


def user_constellation(layer: int = 0, max_multiplexed: int = 1) -> np.ndarray:
    """Unit-energy QPSK rotated by the layer-specific offset."""
    return QPSK_GRAY * np.exp(1j * rotation_for_layer(layer, max_multiplexed))


def modulate(bits, layer: int = 0, max_multiplexed: int = 1) -> complex:
    """Map a 2-bit word to the layer's rotated Gray-coded QPSK point."""
    bits = tuple(int(b) for b in bits)
    if len(bits) != 2 or any(b not in (0, 1) for b in bits):
        raise ValueError("QPSK expects a 2-bit word")
    return complex(user_constellation(layer, max_multiplexed)[_GRAY_INDEX[bits]])


def modulate_pu(bit) -> complex:
    """Map one bit to BPSK (primary-user modulation)."""
    b = int(bit)
    if b not in (0, 1):
        raise ValueError("BPSK expects a single bit")
    return complex(BPSK[b])


def superimpose(symbols, powers, gains) -> complex:
    """Power-domain superposition: sum of sqrt(p_m g_m) * x_m."""
    symbols = np.asarray(symbols)
    powers = np.asarray(powers, dtype=float)
    gains = np.asarray(gains, dtype=float)
    if not (symbols.shape == powers.shape == gains.shape):
        raise ValueError("symbols, powers and gains must have equal length")
    return complex(np.sum(np.sqrt(powers * gains) * symbols))


def sic_order(gains, powers=None) -> np.ndarray:
    """Decode order: received power p*g descending, ties by lower SU index."""
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0:
        raise ValueError("empty gain list")
    received = gains if powers is None else gains * np.asarray(powers, dtype=float)
    return np.argsort(-received, kind="stable")


def sic_decode(composite: complex, powers, gains, order, constellations):
    """Hard-decision layered SIC.

    Iteratively detects the strongest remaining user's symbol as the nearest
    point of its amplitude-scaled constellation, subtracts it, and proceeds.
    Returns the decoded symbol indices (aligned to the user arrays) and the
    magnitude of the final residual.
    """
    powers = np.asarray(powers, dtype=float)
    gains = np.asarray(gains, dtype=float)
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(len(powers))):
        raise ValueError("order must cover all multiplexed users")
    amps = np.sqrt(powers * gains)
    decoded = np.zeros(len(powers), dtype=int)
    residual = complex(composite)
    for u in order:
        points = amps[u] * np.asarray(constellations[u])
        idx = int(np.argmin(np.abs(residual - points)))
        decoded[u] = idx
        residual -= points[idx]
    return decoded, abs(residual)


def achievable_rate(alloc: Allocation, gains, subchannels) -> RateReport:
    """Uplink SIC rates: each user sees interference from users decoded later.

    Rates are computed as differences of logs of the interference suffix sums,
    which makes the per-channel total telescope exactly to
    b_k * log2(1 + sum(p g) / eta).
    """
    gains = np.asarray(gains, dtype=float)
    n, k = alloc.powers.shape
    rates = np.zeros((n, k))
    for ch in range(k):
        members = alloc.sic_orders[ch] if alloc.sic_orders[ch] else alloc.membership[ch]
        if not members:
            continue
        sub = subchannels[ch]
        received = np.array([alloc.powers[u, ch] * gains[u] for u in members])
        # suffix[i] = interference + own power for the i-th decoded user
        suffix = np.concatenate((np.cumsum(received[::-1])[::-1], [0.0]))
        for i, u in enumerate(members):
            rates[u, ch] = sub.bandwidth * (
                np.log2(sub.noise_power + suffix[i])
                - np.log2(sub.noise_power + suffix[i + 1])
            )
    return RateReport(per_user_rates=rates, sum_rate=float(rates.sum()))


def sum_rate(report: RateReport) -> float:
    """Total of all per-user rates."""
    return float(report.per_user_rates.sum())


def check_constraints(alloc: Allocation, max_multiplexed: int, p_max: float,
                      per_channel_caps=None):
    """Verify the allocation constraints; returns (feasible, violations).

    Checks, in order: per-SU total power budget, nonnegativity, per-channel
    membership cap, and per-user-per-channel power caps.  All violations are
    collected rather than stopping at the first.
    """
    violations = []
    totals = alloc.powers.sum(axis=1)
    for nn in np.nonzero(totals > p_max * (1 + 1e-12))[0]:
        violations.append(
            f"power budget: SU {nn} total {totals[nn]:.6g} W exceeds P_max {p_max:.6g} W")
    neg = np.argwhere(alloc.powers < 0)
    for nn, kk in neg:
        violations.append(f"nonnegativity: SU {nn} power on channel {kk} is negative")
    for kk, members in enumerate(alloc.membership):
        if len(members) > max_multiplexed:
            violations.append(
                f"multiplexing cap: channel {kk} has {len(members)} SUs, limit {max_multiplexed}")
    if per_channel_caps is not None:
        caps = np.broadcast_to(np.asarray(per_channel_caps, dtype=float), alloc.powers.shape)
        over = np.argwhere(alloc.powers > caps * (1 + 1e-12))
        for nn, kk in over:
            violations.append(
                f"per-channel cap: SU {nn} power on channel {kk} exceeds "
                f"{caps[nn, kk]:.6g} W")
    return len(violations) == 0, violations


@dataclass
class SpacingResult:
    """Outcome of the spacing projection on one channel."""

    powers: np.ndarray       # transmit watts, aligned to the input users
    order: np.ndarray        # SIC order (indices into the input arrays)
    feasible: bool           # exact ladder fits within caps
    received: np.ndarray     # received powers in noise-normalized units
    min_distance: float      # composite min distance, normalized amplitude


def enforce_min_distance(powers, gains, delta_y: float, p_th: float,
                         noise_power: float = 1.0, per_user_cap=None,
                         total_cap=None, best_effort: bool = False) -> SpacingResult:
    """Project requested powers onto a SIC-decodable geometric ladder.

    Received powers (p*g/noise) are placed on the fixed-ratio ladder, ordered
    by the requested received power.  The common scale is the requested total,
    clipped from below by the delta_y and p_th floors and from above by the
    power caps.  When floors and caps conflict the exact ladder is infeasible:
    with ``best_effort`` the requested powers are returned clipped to the caps
    and flagged, otherwise ``InfeasibleSpacingError`` is raised.
    """
    powers = np.asarray(powers, dtype=float)
    gains = np.asarray(gains, dtype=float)
    m = len(powers)
    if m == 0:
        return SpacingResult(np.zeros(0), np.zeros(0, dtype=int), True,
                             np.zeros(0), np.inf)
    if np.any(gains <= 0):
        raise ValueError("gains must be positive")
    caps = np.full(m, np.inf) if per_user_cap is None else \
        np.broadcast_to(np.asarray(per_user_cap, dtype=float), (m,)).copy()

    if m == 1:
        p = min(float(powers[0]), float(caps[0]))
        if total_cap is not None:
            p = min(p, float(total_cap))
        rx = np.array([p * gains[0] / noise_power])
        return SpacingResult(np.array([p]), np.array([0]), True, rx,
                             float(LADDER_MIN_DIST_COEF * np.sqrt(rx[0])))

    order = sic_order(gains, powers)
    # ladder shape in received power, bottom layer = 1
    shape = LADDER_POWER_RATIO ** np.arange(m - 1, -1, -1)

    s_min = max(delta_y ** 2 / 2.0, p_th / (LADDER_POWER_RATIO - 1.0), 1e-300)
    # scale upper bounds from the per-user and total transmit caps
    s_max = np.inf
    for layer, u in enumerate(order):
        s_max = min(s_max, caps[u] * gains[u] / (noise_power * shape[layer]))
    if total_cap is not None:
        denom = noise_power * sum(shape[layer] / gains[u]
                                  for layer, u in enumerate(order))
        s_max = min(s_max, total_cap / denom)

    if s_max < s_min:
        if not best_effort:
            raise InfeasibleSpacingError(
                f"spacing infeasible for {m} users: ladder floor {s_min:.3g} exceeds "
                f"cap-limited scale {s_max:.3g}; reduce M or increase cap")
        clipped = np.minimum(powers, caps)
        if total_cap is not None and clipped.sum() > total_cap > 0:
            clipped *= total_cap / clipped.sum()
        rx = clipped * gains / noise_power
        rx_sorted = np.sort(rx)
        dmin = float(LADDER_MIN_DIST_COEF * np.sqrt(max(rx_sorted[0], 0.0)))
        return SpacingResult(clipped, order, False, rx, dmin)

    requested_total_rx = float(np.sum(powers * gains)) / noise_power
    s = min(max(requested_total_rx / shape.sum(), s_min), s_max)

    out = np.zeros(m)
    rx = np.zeros(m)
    for layer, u in enumerate(order):
        rx[u] = s * shape[layer]
        out[u] = rx[u] * noise_power / gains[u]
    return SpacingResult(out, order, True, rx,
                         float(LADDER_MIN_DIST_COEF * np.sqrt(s)))


def composite_points(amplitudes, constellations) -> np.ndarray:
    """All composite constellation points for the given received amplitudes."""
    pts = np.array([0.0 + 0.0j])
    for a, const in zip(amplitudes, constellations):
        pts = (pts[:, None] + a * np.asarray(const)[None, :]).ravel()
    return pts


def composite_min_distance(amplitudes, constellations) -> float:
    """Minimum pairwise distance of the composite constellation (enumerated)."""
    pts = composite_points(amplitudes, constellations)
    if len(pts) > 4096:
        raise ValueError("composite enumeration limited to 6 users")
    d = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(d, np.inf)
    return float(d.min())
