import itertools

import numpy as np
import pytest

from cnuav import noma
from cnuav.noma import (Allocation, InfeasibleSpacingError, achievable_rate,
                        check_constraints, composite_min_distance,
                        enforce_min_distance, modulate, modulate_pu, sic_decode,
                        sic_order, sum_rate, superimpose, user_constellation)
from cnuav.radio_env import Subchannel


def unit_subchannels(k, bandwidth=1.0, noise=1.0):
    return [Subchannel(index=i, bandwidth=bandwidth, noise_power=noise)
            for i in range(k)]


class TestModulation:
    def test_canonical_corner(self):
        assert modulate((0, 0), layer=0) == pytest.approx((1 + 1j) / np.sqrt(2))

    def test_unit_energy_all_words(self):
        for layer in range(5):
            for bits in itertools.product((0, 1), repeat=2):
                assert abs(modulate(bits, layer, 5)) == pytest.approx(1.0)

    def test_rotated_constellations_disjoint(self):
        # enumerate all point pairs across 5 distinct layers
        consts = [user_constellation(i, 5) for i in range(5)]
        for a, b in itertools.combinations(range(5), 2):
            d = np.abs(consts[a][:, None] - consts[b][None, :])
            assert d.min() > 1e-6

    def test_bpsk(self):
        assert modulate_pu(0) == 1.0
        assert modulate_pu(1) == -1.0

    def test_invalid_word(self):
        with pytest.raises(ValueError):
            modulate((0, 1, 1))


class TestSuperimpose:
    def test_single_user_identity(self):
        x = modulate((0, 1))
        assert superimpose([x], [1.0], [1.0]) == pytest.approx(x)

    def test_two_user_composite_distinct(self):
        c0 = user_constellation(0, 2)
        c1 = user_constellation(1, 2)
        pts = [superimpose([a, b], [4.0, 1.0], [1.0, 1.0])
               for a in c0 for b in c1]
        d = np.abs(np.subtract.outer(pts, pts))
        np.fill_diagonal(d, np.inf)
        assert len(pts) == 16
        assert d.min() > 1e-9

    def test_all_zero_powers(self):
        assert superimpose([1 + 0j, 1j], [0.0, 0.0], [1.0, 1.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            superimpose([1 + 0j], [1.0, 2.0], [1.0, 1.0])


class TestSicOrder:
    def test_by_gain_positions(self):
        assert list(sic_order([1.0, 3.0, 2.0])) == [1, 2, 0]

    def test_single_user(self):
        assert list(sic_order([2.0])) == [0]

    def test_tie_breaks_ascending(self):
        assert list(sic_order([1.0, 1.0, 1.0])) == [0, 1, 2]

    def test_powers_participate(self):
        assert list(sic_order([1.0, 1.0], powers=[1.0, 4.0])) == [1, 0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sic_order([])


class TestSicDecode:
    def test_two_user_exhaustive_exact(self):
        powers, gains = np.array([4.0, 1.0]), np.array([1.0, 1.0])
        consts = [user_constellation(i, 2) for i in range(2)]
        amps = np.sqrt(powers * gains)
        for s0 in range(4):
            for s1 in range(4):
                y = amps[0] * consts[0][s0] + amps[1] * consts[1][s1]
                decoded, residual = sic_decode(y, powers, gains, [0, 1], consts)
                assert list(decoded) == [s0, s1]
                assert residual == pytest.approx(0.0, abs=1e-12)

    def test_single_user(self):
        consts = [user_constellation(0, 1)]
        y = 3.0 * consts[0][2]
        decoded, residual = sic_decode(y, [9.0], [1.0], [0], consts)
        assert decoded[0] == 2 and residual == pytest.approx(0.0, abs=1e-12)

    def test_enforced_five_user_random_draws(self):
        rng = np.random.default_rng(0)
        m = 5
        res = enforce_min_distance(np.full(m, 20.0), np.ones(m), delta_y=0.05,
                                   p_th=0.001, per_user_cap=np.full(m, 20.0))
        assert res.feasible
        consts = [user_constellation(i, m) for i in range(m)]
        powers = res.powers[res.order]
        consts_ordered = [consts[i] for i in range(m)]
        amps = np.sqrt(powers)
        for _ in range(1024):
            syms = rng.integers(0, 4, size=m)
            y = sum(amps[i] * consts_ordered[i][syms[i]] for i in range(m))
            decoded, residual = sic_decode(y, powers, np.ones(m),
                                           np.arange(m), consts_ordered)
            assert np.array_equal(decoded, syms)
            assert residual < 1e-9

    def test_order_must_cover(self):
        with pytest.raises(ValueError):
            sic_decode(0j, [1.0, 1.0], [1.0, 1.0], [0],
                       [user_constellation(0, 2)] * 2)


def make_alloc(powers_by_channel, n, k):
    alloc = Allocation.empty(n, k)
    for ch, entries in powers_by_channel.items():
        for u, p in entries:
            alloc.membership[ch].append(u)
            alloc.powers[u, ch] = p
        alloc.membership[ch].sort()
        alloc.sic_orders[ch] = [u for u, _ in
                                sorted(entries, key=lambda e: (-e[1], e[0]))]
    return alloc


class TestAchievableRate:
    def test_single_user_snr3(self):
        alloc = make_alloc({0: [(0, 3.0)]}, 1, 1)
        rep = achievable_rate(alloc, [1.0], unit_subchannels(1))
        assert rep.sum_rate == pytest.approx(2.0, rel=1e-12)

    def test_two_user_split(self):
        alloc = make_alloc({0: [(0, 3.0), (1, 1.0)]}, 2, 1)
        rep = achievable_rate(alloc, [1.0, 1.0], unit_subchannels(1))
        assert rep.per_user_rates[0, 0] == pytest.approx(1.3219280948873623, rel=1e-9)
        assert rep.per_user_rates[1, 0] == pytest.approx(1.0, rel=1e-9)
        assert rep.sum_rate == pytest.approx(np.log2(5.0), rel=1e-12)

    def test_zero_power_zero_rate(self):
        alloc = make_alloc({0: [(0, 3.0)]}, 2, 1)
        rep = achievable_rate(alloc, [1.0, 1.0], unit_subchannels(1))
        assert rep.per_user_rates[1, 0] == 0.0

    def test_empty_allocation(self):
        alloc = Allocation.empty(3, 2)
        rep = achievable_rate(alloc, np.ones(3), unit_subchannels(2))
        assert sum_rate(rep) == 0.0

    def test_oma_k_copies(self):
        k = 4
        alloc = make_alloc({c: [(c, 3.0)] for c in range(k)}, k, k)
        rep = achievable_rate(alloc, np.ones(k), unit_subchannels(k))
        assert rep.sum_rate == pytest.approx(2.0 * k, rel=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        gains = rng.uniform(0.5, 2.0, size=4)
        alloc = make_alloc({0: [(0, 5.0), (1, 2.0)], 1: [(2, 4.0), (3, 1.0)]}, 4, 2)
        rep = achievable_rate(alloc, gains, unit_subchannels(2))
        perm = np.array([2, 3, 0, 1])
        alloc_p = make_alloc({0: [(2, 5.0), (3, 2.0)], 1: [(0, 4.0), (1, 1.0)]}, 4, 2)
        rep_p = achievable_rate(alloc_p, gains[np.argsort(perm)], unit_subchannels(2))
        assert rep_p.per_user_rates[perm[0], 0] == pytest.approx(
            rep.per_user_rates[0, 0], rel=1e-12)

    def test_own_power_monotonicity_last_decoded(self):
        gains = [1.0, 1.0]
        subs = unit_subchannels(1)
        prev = -1.0
        for p in np.linspace(0.5, 5.0, 10):
            alloc = make_alloc({0: [(0, 9.0), (1, p)]}, 2, 1)
            r = achievable_rate(alloc, gains, subs).per_user_rates[1, 0]
            assert r >= prev
            prev = r


class TestTelescopingIdentity:
    def test_thousand_random_allocations(self):
        rng = np.random.default_rng(7)
        subs = unit_subchannels(3, bandwidth=2.0, noise=0.7)
        for _ in range(1000):
            n = rng.integers(1, 7)
            gains = rng.uniform(0.1, 10.0, size=n)
            alloc = Allocation.empty(n, 3)
            for u in range(n):
                ch = rng.integers(0, 3)
                alloc.membership[ch].append(u)
                alloc.powers[u, ch] = rng.uniform(0.01, 20.0)
            for ch in range(3):
                members = alloc.membership[ch]
                alloc.sic_orders[ch] = sorted(
                    members, key=lambda u: (-alloc.powers[u, ch] * gains[u], u))
            rep = achievable_rate(alloc, gains, subs)
            for ch in range(3):
                members = alloc.membership[ch]
                if not members:
                    continue
                total = sum(alloc.powers[u, ch] * gains[u] for u in members)
                lhs = rep.per_user_rates[:, ch].sum()
                rhs = subs[ch].bandwidth * np.log2(1 + total / subs[ch].noise_power)
                assert lhs == pytest.approx(rhs, rel=1e-9)


class TestConstraints:
    def test_budget_violation(self):
        alloc = make_alloc({0: [(0, 21.0)]}, 1, 1)
        ok, violations = check_constraints(alloc, 5, 20.0)
        assert not ok
        assert any("power budget" in v for v in violations)

    def test_multiplexing_violation(self):
        alloc = make_alloc({0: [(u, 1.0) for u in range(6)]}, 6, 1)
        ok, violations = check_constraints(alloc, 5, 20.0)
        assert not ok
        assert any("multiplexing cap" in v for v in violations)

    def test_all_zero_feasible(self):
        ok, violations = check_constraints(Allocation.empty(4, 2), 5, 20.0)
        assert ok and violations == []

    def test_collects_all_violations(self):
        alloc = make_alloc({0: [(u, 5.0) for u in range(6)]}, 6, 1)
        alloc.powers[0, 0] = 25.0
        ok, violations = check_constraints(alloc, 5, 20.0, per_channel_caps=20.0)
        assert not ok
        assert len(violations) >= 3


class TestEnforceMinDistance:
    def test_single_user_unchanged(self):
        res = enforce_min_distance([7.5], [2.0], delta_y=1.0, p_th=1.0,
                                   per_user_cap=[20.0])
        assert res.powers[0] == pytest.approx(7.5)
        assert res.feasible

    def test_two_equal_gain_gap(self):
        res = enforce_min_distance([20.0, 20.0], [1.0, 1.0], delta_y=0.5,
                                   p_th=1.0, per_user_cap=[20.0, 20.0])
        rx = np.sort(res.received)[::-1]
        assert rx[0] - rx[1] >= 1.0
        assert res.feasible
        assert res.powers.max() <= 20.0 + 1e-9

    def test_seven_users_table_caps_flagged(self):
        # preset-scale: normalized received SNR per user bounded by the caps;
        # the exact ladder for 7 layers cannot fit under them
        gains = np.full(7, 1e-10)
        eta = 9.3e-16
        with pytest.raises(InfeasibleSpacingError):
            enforce_min_distance(np.full(7, 20.0), gains, delta_y=30.0,
                                 p_th=1.0, noise_power=eta,
                                 per_user_cap=np.full(7, 20.0))
        res = enforce_min_distance(np.full(7, 20.0), gains, delta_y=30.0,
                                   p_th=1.0, noise_power=eta,
                                   per_user_cap=np.full(7, 20.0),
                                   best_effort=True)
        assert not res.feasible

    def test_delta_y_floor_met(self):
        res = enforce_min_distance([1e-6, 1e-6], [1.0, 1.0], delta_y=2.0,
                                   p_th=0.0, per_user_cap=[20.0, 20.0])
        assert res.min_distance >= 2.0 - 1e-9
        # verify against enumeration of the actual composite constellation
        consts = [user_constellation(i, 2) for i in range(2)]
        amps = np.sqrt(np.sort(res.received)[::-1])
        assert composite_min_distance(amps, consts) == pytest.approx(
            res.min_distance, rel=1e-9)

    def test_output_passes_constraints(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = rng.integers(1, 6)
            gains = rng.uniform(0.5, 2.0, size=m)
            req = rng.uniform(1.0, 20.0, size=m)
            res = enforce_min_distance(req, gains, delta_y=0.05, p_th=0.005,
                                       per_user_cap=np.full(m, 20.0))
            alloc = Allocation.empty(m, 1)
            alloc.membership[0] = list(range(m))
            for u in range(m):
                alloc.powers[u, 0] = res.powers[u]
            alloc.sic_orders[0] = list(res.order)
            ok, violations = check_constraints(alloc, 5, 20.0,
                                               per_channel_caps=20.0)
            assert ok, violations

    def test_requested_scale_tracked(self):
        # below-cap requests keep their total after projection
        lo = enforce_min_distance([2.0, 2.0], [1.0, 1.0], delta_y=0.1,
                                  p_th=0.01, per_user_cap=[20.0, 20.0])
        hi = enforce_min_distance([10.0, 10.0], [1.0, 1.0], delta_y=0.1,
                                  p_th=0.01, per_user_cap=[20.0, 20.0])
        assert lo.powers.sum() == pytest.approx(4.0, rel=1e-9)
        assert hi.powers.sum() == pytest.approx(20.0, rel=1e-9)
        assert hi.powers.sum() > lo.powers.sum()
