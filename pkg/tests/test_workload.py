"""Generator tests: golden vectors, distribution laws, derivations, IO."""

import math
import random
from fractions import Fraction

import pytest

from grubsim.errors import GenerationError
from grubsim.model import ExecKind, ExecModel
from grubsim.workload import (
    ScenarioConfig,
    default_weibull_params,
    derive_budget,
    derive_periods,
    gen_exec_range,
    generate_scenario,
    load_scenario,
    mix_seed,
    sample_exec_two_level,
    sample_exec_weibull,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    uunifast_discard,
)


def test_uunifast_single_element():
    assert uunifast_discard(1, Fraction(7, 10), random.Random(1)) == [Fraction(7, 10)]


def test_uunifast_exact_sum_after_snapping():
    utils = uunifast_discard(25, Fraction(2), random.Random(9))
    assert sum(utils) == Fraction(2)
    assert all(0 < u < 1 for u in utils)
    assert all(u.denominator <= 10**6 for u in utils)


def test_uunifast_golden_seed_42():
    # Reference values from running the plain recurrence by hand with
    # random.Random(42): the first vector contains 1.0879... and is
    # discarded; the second draw is (0.590094507, 0.129043697,
    # 0.252453019, 0.528408777), snapped to 1e-6 with the -1e-6 residual
    # absorbed by the largest element.
    utils = uunifast_discard(4, Fraction(3, 2), random.Random(42))
    assert utils == [
        Fraction(295047, 500000),
        Fraction(32261, 250000),
        Fraction(252453, 1000000),
        Fraction(528409, 1000000),
    ]
    assert sum(utils) == Fraction(3, 2)


def test_uunifast_unsatisfiable_target():
    with pytest.raises(GenerationError):
        uunifast_discard(2, Fraction(3), random.Random(1))


def test_uunifast_marginals_symmetric():
    # uniform-simplex symmetry: per-slot means agree within 3 standard
    # errors at 10^4 draws (fixed seed; ~6% of seeds fail a 25-way 3-sigma
    # family by chance, this one was checked to be comfortably inside)
    n, draws = 25, 10_000
    rng = random.Random(123)
    sums = [0.0] * n
    sq = [0.0] * n
    for _ in range(draws):
        v = uunifast_discard(n, Fraction(2), rng)
        for i, u in enumerate(v):
            f = float(u)
            sums[i] += f
            sq[i] += f * f
    expected = 2.0 / n
    for i in range(n):
        mean = sums[i] / draws
        var = sq[i] / draws - mean * mean
        se = math.sqrt(var / draws)
        assert abs(mean - expected) <= 3 * se + 1e-12


def test_exec_range_sorted_and_in_bounds():
    rng = random.Random(5)
    for _ in range(500):
        lo, hi = gen_exec_range(rng)
        assert 5 <= lo < hi <= 200


def test_two_level_overrun_fraction():
    model = ExecModel(ExecKind.TWO_LEVEL_UNIFORM, 10, 100, 55, 0.75)
    rng = random.Random(7)
    n = 100_000
    over = sum(1 for _ in range(n) if sample_exec_two_level(model, rng) > 55)
    assert abs(over / n - 0.25) <= 0.02


def test_two_level_single_point_upper_band():
    model = ExecModel(ExecKind.TWO_LEVEL_UNIFORM, 10, 100, 99, 0.5)
    rng = random.Random(7)
    samples = [sample_exec_two_level(model, rng) for _ in range(200)]
    assert all(s == 100 for s in samples if s > 99)
    assert any(s == 100 for s in samples)


def test_two_level_pm_one_never_overruns():
    model = ExecModel(ExecKind.TWO_LEVEL_UNIFORM, 10, 100, 55, 1.0)
    rng = random.Random(7)
    assert all(sample_exec_two_level(model, rng) <= 55 for _ in range(500))


def test_weibull_samples_in_range():
    model = ExecModel(ExecKind.WEIBULL, 10, 100, 40, 0.75, wk=2.0, wlam=50.0, wtheta=10.0)
    rng = random.Random(3)
    for _ in range(1000):
        assert 10 <= sample_exec_weibull(model, rng) <= 100


def test_weibull_truncated_mean_matches_quadrature():
    # k=1 reduces to a (shifted) exponential; compare the empirical mean of
    # in-range samples against Simpson quadrature of the truncated density.
    lo, hi, lam = 5, 60, 10.0
    model = ExecModel(ExecKind.WEIBULL, lo, hi, 14, 0.75, wk=1.0, wlam=lam, wtheta=0.0)

    def pdf(x):
        return math.exp(-x / lam) / lam

    steps = 4096
    h = (hi - lo) / steps
    num = 0.0
    den = 0.0
    for i in range(steps + 1):
        x = lo + i * h
        w = 1 if i in (0, steps) else (4 if i % 2 else 2)
        num += w * x * pdf(x)
        den += w * pdf(x)
    expected = num / den

    rng = random.Random(11)
    n = 100_000
    mean = sum(sample_exec_weibull(model, rng) for _ in range(n)) / n
    assert abs(mean - expected) / expected < 0.05


def test_derive_budget_two_level_midpoint():
    assert derive_budget(ExecKind.TWO_LEVEL_UNIFORM, 10, 100, 0.75) == 55


def test_derive_budget_weibull_exponential_quantile():
    # k=1, lam=10, theta=0, pm=0.75: ceil(-10 ln 0.25) = 14
    b = derive_budget(ExecKind.WEIBULL, 5, 60, 0.75, wk=1.0, wlam=10.0, wtheta=0.0)
    assert b == 14


def test_derive_budget_weibull_clamps_to_range():
    b = derive_budget(ExecKind.WEIBULL, 5, 60, 0.999999, wk=1.0, wlam=1000.0, wtheta=0.0)
    assert b == 59


def test_derive_periods():
    assert derive_periods(20, Fraction(1, 2)) == (40, 40)
    assert derive_periods(7, Fraction(3, 10)) == (23, 23)  # 23.33 rounds down
    assert derive_periods(5, Fraction(1)) == (5, 5)


def test_derive_periods_recomputed_utilization():
    period, _ = derive_periods(7, Fraction(3, 10))
    assert Fraction(7, period) == Fraction(7, 23)


def test_default_weibull_median_mid_range():
    k, lam, theta = default_weibull_params(10, 100)
    median = theta + lam * math.log(2.0) ** (1.0 / k)
    assert abs(median - 55.0) < 1e-9


def test_generate_scenario_light_load_accepted():
    cfg = ScenarioConfig(n=25, m=4, target_util=Fraction(1, 2))
    s = generate_scenario(cfg, 1)
    assert s is not None
    assert set(s.partitions) == {"ff", "bf", "wf"}
    assert len(s.tasks) == 25


def test_generate_scenario_servers_exact():
    cfg = ScenarioConfig(n=10, m=4, target_util=Fraction(3, 2))
    s = generate_scenario(cfg, 3)
    assert s is not None
    for t in s.tasks:
        assert t.server.utilization == Fraction(t.server.budget, t.server.period)
        assert t.server.migrating_utilization == Fraction(1, 10)
        assert t.spec.period == t.server.period


def test_generate_scenario_heavy_load_discards():
    cfg = ScenarioConfig(n=25, m=4, target_util=Fraction(3))
    results = [generate_scenario(cfg, mix_seed(5, i)) is None for i in range(60)]
    assert any(results)  # the density filter must reject some


def test_partition_respects_unit_capacity():
    cfg = ScenarioConfig(n=25, m=4, target_util=Fraction(5, 2))
    s = None
    i = 0
    while s is None:
        s = generate_scenario(cfg, mix_seed(6, i))
        i += 1
    for assignment in s.partitions.values():
        load = {}
        for t in s.tasks:
            core = assignment[t.spec.id]
            load[core] = load.get(core, Fraction(0)) + t.server.utilization
        assert all(u <= 1 for u in load.values())


def test_scenario_roundtrip(tmp_path):
    cfg = ScenarioConfig(n=8, m=2, target_util=Fraction(6, 5))
    s = generate_scenario(cfg, 17)
    assert s is not None
    path = tmp_path / "scenario.json"
    save_scenario(s, str(path))
    loaded = load_scenario(str(path))
    assert scenario_to_dict(loaded) == scenario_to_dict(s)


def test_scenario_dict_identity():
    cfg = ScenarioConfig(n=4, m=2, target_util=Fraction(1))
    s = generate_scenario(cfg, 23)
    assert s is not None
    assert scenario_to_dict(scenario_from_dict(scenario_to_dict(s))) == scenario_to_dict(s)


def test_mix_seed_spreads():
    seeds = {mix_seed(42, i) for i in range(1000)}
    assert len(seeds) == 1000
