import numpy as np
import pytest

from mortss import (
    AgeGroup,
    build_table,
    death_probability,
    default_grouping,
    life_expectancy_fan,
)
from mortss.forecast import ForecastFan

GROUPS21 = default_grouping()


def oracle_expectancies(rates, widths, a=0.5, radix=100_000.0):
    """Straightforward list-based reimplementation of the table recursions."""
    q = [min(1.0, n * m / (1.0 + n * (1.0 - a) * m)) for m, n in zip(rates, widths)]
    l = [radix]
    for qi in q:
        l.append(l[-1] * (1.0 - qi))
    L = [n * (l[i + 1] + a * (l[i] - l[i + 1])) for i, n in enumerate(widths)]
    total = [sum(L[i:]) for i in range(len(L))]
    return [total[i] / l[i] if l[i] > 0 else 0.0 for i in range(len(L))]


class TestDeathProbability:
    def test_zero_rate(self):
        assert death_probability(0.0, 5) == 0.0

    def test_direct_arithmetic(self):
        assert death_probability(0.01, 5, 0.5) == pytest.approx(0.05 / 1.025)

    def test_clamped_to_one(self):
        assert death_probability(1e9, 5, 0.5) == 1.0

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            death_probability(-0.1, 5)


class TestBuildTable:
    def test_zero_rates_give_full_span_expectancy(self):
        table = build_table(np.zeros(21), GROUPS21)
        assert np.all(table.q == 0.0)
        assert table.e[0] == pytest.approx(100.0)
        assert np.all(table.l == 100_000.0)

    def test_radix(self):
        table = build_table(np.full(21, 0.01), GROUPS21)
        assert table.l[0] == 100_000.0

    def test_constant_rate_matches_oracle(self):
        widths = [g.width for g in GROUPS21]
        table = build_table(np.full(21, 0.01), GROUPS21)
        oracle = oracle_expectancies([0.01] * 21, widths)
        assert np.allclose(table.e, oracle, atol=1e-9)

    def test_randomized_rates_match_oracle(self):
        rng = np.random.default_rng(0)
        widths = [g.width for g in GROUPS21]
        for _ in range(10):
            rates = rng.uniform(0.0005, 0.5, size=21)
            table = build_table(rates, GROUPS21)
            oracle = oracle_expectancies(list(rates), widths)
            assert np.allclose(table.e, oracle, atol=1e-9)

    def test_certain_death_in_first_group(self):
        rates = np.zeros(21)
        rates[0] = 1e18  # q -> 1 in the one-year infant band
        table = build_table(rates, GROUPS21)
        assert table.q[0] == 1.0
        assert table.e[0] == pytest.approx(0.5 * 1)  # a * n0

    def test_survivorship_monotone(self):
        rng = np.random.default_rng(1)
        table = build_table(rng.uniform(0.001, 0.3, 21), GROUPS21)
        assert np.all(np.diff(table.l) <= 0)
        assert np.all(table.l > 0)

    def test_locality_above_age(self):
        # exact as long as survivors remain positive at the age in question
        rng = np.random.default_rng(2)
        rates = rng.uniform(0.001, 0.05, 21)
        base = build_table(rates, GROUPS21)
        bumped = rates.copy()
        bumped[:19] *= 3.0  # everything below age 90
        redone = build_table(bumped, GROUPS21)
        i90 = [g.start for g in GROUPS21].index(90)
        assert redone.l[i90] > 0
        assert redone.e[i90] == pytest.approx(base.e[i90], abs=1e-12)

    def test_identity_columns(self):
        rng = np.random.default_rng(3)
        table = build_table(rng.uniform(0.001, 0.1, 21), GROUPS21)
        l_next = np.append(table.l[1:], table.l[-1] - table.d[-1])
        assert np.allclose(table.d, table.l - l_next, atol=1e-9)
        assert np.allclose(table.Tlived, np.cumsum(table.L[::-1])[::-1], atol=1e-6)

    def test_csv_schema(self):
        lines = build_table(np.full(21, 0.01), GROUPS21).to_csv().strip().split("\n")
        assert lines[0] == "age_start,n,q,l,d,L,T,e"
        assert len(lines) == 22


class TestExpectancyFan:
    def make_fan(self, L=4, K=3, noise=0.0, seed=0):
        rng = np.random.default_rng(seed)
        base = np.log(np.linspace(0.001, 0.15, 21))
        samples = np.tile(base, (L, K, 1)) + noise * rng.standard_normal((L, K, 21))
        return ForecastFan(samples=samples, kappa_samples=np.zeros((L, K)),
                           gamma_samples=None, jumpoff_mode="fitted",
                           jumpoff_shift=None, groups=list(GROUPS21),
                           years=np.arange(2011, 2011 + K))

    def test_requested_ages(self):
        out = life_expectancy_fan(self.make_fan(), [0, 65, 85])
        assert set(out) == {0, 65, 85}
        assert out[0].shape == (4, 3)

    def test_deterministic_fan_gives_identical_samples(self):
        out = life_expectancy_fan(self.make_fan(noise=0.0), [0])
        assert np.ptp(out[0]) == 0.0

    def test_e85_uses_only_old_age_rates(self):
        fan = self.make_fan(noise=0.0)
        bumped = self.make_fan(noise=0.0)
        bumped.samples[:, :, :17] += 0.5  # ages below 85
        a = life_expectancy_fan(fan, [85])[85]
        b = life_expectancy_fan(bumped, [85])[85]
        assert np.allclose(a, b, atol=1e-12)

    def test_non_boundary_age_rejected(self):
        with pytest.raises(ValueError, match="boundary"):
            life_expectancy_fan(self.make_fan(), [66])

    def test_matches_direct_tables(self):
        fan = self.make_fan(L=2, K=2, noise=0.1, seed=5)
        out = life_expectancy_fan(fan, [0, 65])
        for ell in range(2):
            for k in range(2):
                table = build_table(np.exp(fan.samples[ell, k]), GROUPS21)
                assert out[0][ell, k] == table.expectancy_at(0)
                assert out[65][ell, k] == table.expectancy_at(65)
