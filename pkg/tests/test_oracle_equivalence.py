"""Event-driven engine vs fixed-step fluid reference on one core.

Random single-core instances with overrunning jobs; every job completion
and every deadline postponement must line up with the 1/1024-step oracle
within one step (virtual times within one step's worth of advance at the
server's current rate).
"""

import random
from fractions import Fraction

from grubsim.engine import parse_policy, run_simulation
from grubsim.model import ExecKind, ExecModel, ServerParams, TaskKind, TaskSpec
from grubsim.workload import GeneratedTask, Scenario, ScenarioConfig, mix_seed, sample_exec

from fluid_oracle import STEP, OracleTask, run_oracle

HORIZON = 2000


def random_instance(seed: int) -> tuple[Scenario, list[OracleTask]]:
    """Up to 4 tasks, periods <= 50, total utilization <= 1, overruns common."""
    rng = random.Random(seed)
    n = rng.randint(1, 4)
    while True:
        periods = [rng.randint(5, 50) for _ in range(n)]
        budgets = [rng.randint(1, p - 1) for p in periods]
        if sum(Fraction(q, p) for q, p in zip(budgets, periods)) <= 1:
            break
    tasks = []
    for i, (p, q) in enumerate(zip(periods, budgets)):
        # demands uniform-ish over [1, 2Q]: overruns roughly half the time
        model = ExecModel(
            ExecKind.TWO_LEVEL_UNIFORM, minexec=1, maxexec=2 * q, budget=q, pm=0.5
        ) if q > 1 else ExecModel(
            ExecKind.TWO_LEVEL_UNIFORM, minexec=1, maxexec=2, budget=1, pm=0.5
        )
        spec = TaskSpec(i, p, TaskKind.PERIODIC, model)
        server = ServerParams(q, p, Fraction(q, p), Fraction(0))
        tasks.append(GeneratedTask(spec, server, rng_seed=mix_seed(seed, i)))
    cfg = ScenarioConfig(n=n, m=1, target_util=Fraction(1, 2), horizon=HORIZON)
    part = {h: {t.spec.id: 0 for t in tasks} for h in ("ff", "bf", "wf")}
    scenario = Scenario(config=cfg, seed=seed, tasks=tasks, partitions=part)

    oracle_tasks = []
    for t in tasks:
        stream_rng = random.Random(t.rng_seed)
        jobs = [
            (a, sample_exec(t.spec.exec_model, stream_rng))
            for a in range(0, HORIZON + 1, t.spec.period)
        ]
        oracle_tasks.append(OracleTask(period=t.spec.period, budget=t.server.budget, jobs=jobs))
    return scenario, oracle_tasks


def engine_events(scenario: Scenario):
    res = run_simulation(
        scenario, parse_policy("wf"), horizon=HORIZON, debug=True, collect_trace=True
    )
    completions: dict[int, list[tuple[float, float]]] = {}
    postponements: dict[int, list[float]] = {}
    for line in res.trace:
        fields = dict(kv.split("=", 1) for kv in line.split())
        t = float(Fraction(fields["t"]))
        if fields["ev"] == "completion":
            completions.setdefault(int(fields["task"]), []).append(
                (t, float(Fraction(fields["v"])))
            )
        elif fields["ev"] == "postpone":
            postponements.setdefault(int(fields["server"]), []).append(t)
    return completions, postponements


def compare_instance(seed: int) -> tuple[float, float, float]:
    """Return the worst deviations (completion t, completion V in steps of
    the local rate, postponement t) for one instance; asserts alignment."""
    scenario, oracle_tasks = random_instance(seed)
    completions, postponements = engine_events(scenario)
    oracle = run_oracle(oracle_tasks, HORIZON)

    ora_comp: dict[int, list[tuple[float, float, float]]] = {}
    for idx, t, v, rate in oracle.completions:
        ora_comp.setdefault(idx, []).append((t, v, rate))
    ora_post: dict[int, list[float]] = {}
    for idx, t in oracle.postponements:
        ora_post.setdefault(idx, []).append(t)

    cutoff = HORIZON - 2  # both sides truncate at the horizon
    worst_t = worst_v = worst_p = 0.0
    for tid in range(len(oracle_tasks)):
        eng = [e for e in completions.get(tid, []) if e[0] <= cutoff]
        ora = [o for o in ora_comp.get(tid, []) if o[0] <= cutoff]
        assert abs(len(eng) - len(ora)) <= 1, f"task {tid}: {len(eng)} vs {len(ora)} completions"
        for (te, ve), (to, vo, rate) in zip(eng, ora):
            dt = abs(te - to)
            dv_steps = abs(ve - vo) / (rate * STEP)
            worst_t = max(worst_t, dt)
            worst_v = max(worst_v, dv_steps)
            assert dt <= STEP + 1e-6, f"task {tid}: completion {te} vs {to}"
            assert dv_steps <= 1.0 + 1e-3, f"task {tid}: V {ve} vs {vo} ({dv_steps} steps)"
        engp = [t for t in postponements.get(tid, []) if t <= cutoff]
        orap = [t for t in ora_post.get(tid, []) if t <= cutoff]
        assert abs(len(engp) - len(orap)) <= 1, f"task {tid}: postponement counts"
        for te, to in zip(engp, orap):
            worst_p = max(worst_p, abs(te - to))
            assert abs(te - to) <= STEP + 1e-6, f"task {tid}: postpone {te} vs {to}"
    return worst_t, worst_v, worst_p


def test_oracle_equivalence_batch():
    for seed in range(20):
        compare_instance(mix_seed(404, seed))
