"""Random scenario generation: utilizations, execution times, servers.

Server utilizations are drawn with UUNIFAST (discarding vectors containing
a value >= 1), generated in floating point and then snapped to exact
rationals with denominator 10^6 and renormalized so the vector sums to the
target exactly. Every downstream admission test runs on the exact values.

Execution-time ranges come from two Unif(5, 200) samples per task; job
execution times follow either a two-level uniform distribution (below the
budget with probability ``pm``) or a truncated Weibull. Task and server
periods are the budget divided by the utilization, rounded to ticks, and
the server utilization used by all ledgers is recomputed exactly from the
rounded period.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .balancer import Heuristic, select_core_heuristic
from .errors import ConfigError, GenerationError
from .global_sched import global_edf_admission_test
from .model import ExecKind, ExecModel, ServerParams, TaskKind, TaskSpec
from .rational import ONE, ZERO, frac_str, parse_frac

SCHEMA_VERSION = 1
SNAP_DENOMINATOR = 10**6
EXEC_RANGE_LO = 5
EXEC_RANGE_HI = 200

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mix function (64-bit)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, *indices: int) -> int:
    """Derive an independent sub-seed from a master seed and indices."""
    x = seed & _MASK64
    for i in indices:
        x = splitmix64(x ^ (i & _MASK64))
    return x


def uunifast(n: int, target: float, rng: random.Random) -> list[float]:
    """Classic UUNIFAST recurrence: n utilizations summing to ``target``."""
    utils = []
    remaining = target
    for i in range(1, n):
        nxt = remaining * rng.random() ** (1.0 / (n - i))
        utils.append(remaining - nxt)
        remaining = nxt
    utils.append(remaining)
    return utils


def uunifast_discard(
    n: int, target_util: Fraction, rng: random.Random, max_attempts: int = 10**5
) -> list[Fraction]:
    """UUNIFAST with whole-vector discard of any element >= 1, snapped exact.

    The returned rationals sum to ``target_util`` bit-for-bit and every
    element lies strictly in (0, 1).
    """
    if target_util > n:
        raise GenerationError(f"target utilization {target_util} > n = {n}")
    if target_util <= 0:
        raise GenerationError("target utilization must be positive")
    target_f = float(target_util)
    for _ in range(max_attempts):
        raw = uunifast(n, target_f, rng)
        if any(u >= 1.0 for u in raw):
            continue
        snapped = _snap_exact(raw, target_util)
        if snapped is not None:
            return snapped
    raise GenerationError(
        f"uunifast_discard: no admissible vector after {max_attempts} attempts "
        f"(n={n}, target={target_util})"
    )


def _snap_exact(raw: list[float], target: Fraction) -> list[Fraction] | None:
    """Round to denominator 10^6 and push the residual onto one element.

    The element is chosen as the largest one that stays strictly inside
    (0, 1) after absorbing the residual; returns None when no element can
    (the caller then resamples the whole vector).
    """
    snapped = [Fraction(max(1, round(u * SNAP_DENOMINATOR)), SNAP_DENOMINATOR) for u in raw]
    diff = target - sum(snapped, ZERO)
    if diff == 0:
        if all(u < 1 for u in snapped):
            return snapped
        return None
    order = sorted(range(len(snapped)), key=lambda i: (-snapped[i], i))
    for i in order:
        candidate = snapped[i] + diff
        if 0 < candidate < 1:
            snapped[i] = candidate
            if all(u < 1 for u in snapped):
                return snapped
            return None
    return None


def gen_exec_range(rng: random.Random) -> tuple[int, int]:
    """Two independent Unif(5, 200) samples, sorted, resampled on ties."""
    while True:
        a = rng.randint(EXEC_RANGE_LO, EXEC_RANGE_HI)
        b = rng.randint(EXEC_RANGE_LO, EXEC_RANGE_HI)
        if a != b:
            return (a, b) if a < b else (b, a)


def sample_exec_two_level(model: ExecModel, rng: random.Random) -> int:
    """Below the budget with probability ``pm``, above it otherwise."""
    if model.kind is not ExecKind.TWO_LEVEL_UNIFORM:
        raise ConfigError("not a two-level model")
    if model.budget + 1 > model.maxexec:
        raise ConfigError("empty overrun band")
    if rng.random() < model.pm:
        return rng.randint(model.minexec, model.budget)
    return rng.randint(model.budget + 1, model.maxexec)


def sample_exec_weibull(model: ExecModel, rng: random.Random) -> int:
    """Inverse-transform Weibull sample, rejected into [minexec, maxexec]."""
    if model.kind is not ExecKind.WEIBULL:
        raise ConfigError("not a weibull model")
    while True:
        u = rng.random()
        x = model.wtheta + model.wlam * (-math.log1p(-u)) ** (1.0 / model.wk)
        c = round(x)
        if model.minexec <= c <= model.maxexec:
            return c


def sample_exec(model: ExecModel, rng: random.Random) -> int:
    if model.kind is ExecKind.TWO_LEVEL_UNIFORM:
        return sample_exec_two_level(model, rng)
    return sample_exec_weibull(model, rng)


def derive_budget(
    kind: ExecKind,
    minexec: int,
    maxexec: int,
    pm: float,
    wk: float | None = None,
    wlam: float | None = None,
    wtheta: float | None = None,
) -> int:
    """Budget such that roughly a fraction ``1 - pm`` of jobs overrun it.

    For the two-level model the budget is the distribution's own split
    point, chosen at the midpoint of the execution range. For the Weibull
    model it is the smallest integer whose (untruncated) CDF reaches
    ``pm``, clamped into [minexec, maxexec - 1].
    """
    if kind is ExecKind.TWO_LEVEL_UNIFORM:
        return (minexec + maxexec) // 2
    # Weibull quantile: theta + lam * (-ln(1 - pm))^(1/k)
    if pm >= 1.0:
        return maxexec - 1
    q = wtheta + wlam * (-math.log1p(-pm)) ** (1.0 / wk)
    b = math.ceil(q)
    return max(minexec, min(maxexec - 1, b))


def derive_periods(budget: int, util: Fraction) -> tuple[int, int]:
    """Task and server period: budget / utilization, rounded half-up."""
    if util <= 0:
        raise GenerationError("utilization must be positive")
    period = int(Fraction(budget) / util + Fraction(1, 2))
    period = max(1, period)
    return period, period


def default_weibull_params(minexec: int, maxexec: int, shape: float = 2.0) -> tuple[float, float, float]:
    """Shape k, scale chosen so the untruncated median sits mid-range."""
    theta = float(minexec)
    mid = (minexec + maxexec) / 2.0
    lam = (mid - theta) / (math.log(2.0) ** (1.0 / shape))
    return shape, lam, theta


@dataclass(frozen=True)
class GeneratedTask:
    """A task together with its server parameters and RNG sub-seed."""

    spec: TaskSpec
    server: ServerParams
    rng_seed: int
    dynamic: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    m: int
    target_util: Fraction
    exec_kind: ExecKind = ExecKind.TWO_LEVEL_UNIFORM
    pm: float = 0.75
    migrating_util_default: Fraction = Fraction(1, 10)
    task_kind: TaskKind = TaskKind.PERIODIC
    horizon: int = 100_000

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigError("n and m must be >= 1")
        if not (0 < self.target_util <= self.m):
            raise ConfigError(f"target utilization {self.target_util} outside (0, m]")
        if not (0.0 < self.pm < 1.0):
            raise ConfigError("pm must lie strictly in (0, 1)")


@dataclass
class Scenario:
    """A concrete experiment instance; fully determined by its seed."""

    config: ScenarioConfig
    seed: int
    tasks: list[GeneratedTask]
    partitions: dict[str, dict[int, int]]  # heuristic name -> task id -> core
    gfb_admitted: bool = True

    def static_tasks(self) -> list[GeneratedTask]:
        return [t for t in self.tasks if not t.dynamic]

    def dynamic_tasks(self) -> list[GeneratedTask]:
        return [t for t in self.tasks if t.dynamic]


def partition_tasks(
    utils: list[tuple[int, Fraction]], m: int, heuristic: Heuristic
) -> dict[int, int] | None:
    """Bin-pack (task id, utilization) pairs onto m unit cores, in order.

    Returns task id -> core, or None when some task does not fit anywhere.
    """
    load = [ZERO] * m
    assignment: dict[int, int] = {}
    for tid, u in utils:
        candidates = [(c, ONE - load[c]) for c in range(m) if ONE - load[c] >= u]
        core = select_core_heuristic(candidates, heuristic)
        if core is None:
            return None
        assignment[tid] = core
        load[core] += u
    return assignment


def build_task(
    tid: int,
    util: Fraction,
    cfg: ScenarioConfig,
    rng: random.Random,
    scenario_seed: int,
    arrival_time: int = 0,
    departure_time: int | None = None,
    dynamic: bool = False,
    pm: float | None = None,
) -> GeneratedTask:
    """Derive the execution model, budget and periods for one task."""
    pm = cfg.pm if pm is None else pm
    minexec, maxexec = gen_exec_range(rng)
    if cfg.exec_kind is ExecKind.TWO_LEVEL_UNIFORM:
        budget = derive_budget(cfg.exec_kind, minexec, maxexec, pm)
        model = ExecModel(cfg.exec_kind, minexec, maxexec, budget, pm)
    else:
        wk, wlam, wtheta = default_weibull_params(minexec, maxexec)
        budget = derive_budget(cfg.exec_kind, minexec, maxexec, pm, wk, wlam, wtheta)
        model = ExecModel(cfg.exec_kind, minexec, maxexec, budget, pm, wk, wlam, wtheta)
    period, server_period = derive_periods(budget, util)
    eff_util = Fraction(budget, server_period)
    spec = TaskSpec(
        id=tid,
        period=period,
        kind=cfg.task_kind,
        exec_model=model,
        arrival_time=arrival_time,
        departure_time=departure_time,
    )
    server = ServerParams(
        budget=budget,
        period=server_period,
        utilization=eff_util,
        migrating_utilization=cfg.migrating_util_default,
    )
    return GeneratedTask(spec, server, mix_seed(scenario_seed, 1000 + tid), dynamic)


def generate_scenario(cfg: ScenarioConfig, seed: int) -> Scenario | None:
    """Build one scenario, or None when it fails the admission filters.

    A scenario is kept only if first fit, best fit AND worst fit can all
    partition it (per-core utilization <= 1) and the global-EDF density
    bound accepts it, so all compared policies consume the same instances.
    """
    rng = random.Random(seed)
    utils = uunifast_discard(cfg.n, cfg.target_util, rng)
    tasks = [build_task(tid, u, cfg, rng, seed) for tid, u in enumerate(utils)]
    eff = [(t.spec.id, t.server.utilization) for t in tasks]

    partitions: dict[str, dict[int, int]] = {}
    for h in (Heuristic.FIRST_FIT, Heuristic.BEST_FIT, Heuristic.WORST_FIT):
        assignment = partition_tasks(eff, cfg.m, h)
        if assignment is None:
            return None
        partitions[h.value] = assignment

    if not global_edf_admission_test([u for _, u in eff], cfg.m):
        return None
    return Scenario(config=cfg, seed=seed, tasks=tasks, partitions=partitions)


def generate_accepted(
    cfg: ScenarioConfig, master_seed: int, count: int, max_attempts: int = 10**4
) -> list[Scenario]:
    """Generate scenarios until ``count`` pass the filters."""
    out: list[Scenario] = []
    attempt = 0
    while len(out) < count:
        if attempt >= max_attempts:
            raise GenerationError(
                f"scenario generation stalled: {len(out)}/{count} accepted "
                f"after {attempt} attempts (m={cfg.m}, n={cfg.n}, U={cfg.target_util})"
            )
        scenario = generate_scenario(cfg, mix_seed(master_seed, attempt))
        attempt += 1
        if scenario is not None:
            out.append(scenario)
    return out


# --- serialization ---------------------------------------------------------

def _exec_model_to_dict(m: ExecModel) -> dict:
    d = {
        "kind": m.kind.value,
        "minexec": m.minexec,
        "maxexec": m.maxexec,
        "budget": m.budget,
        "pm": m.pm,
    }
    if m.kind is ExecKind.WEIBULL:
        d.update({"wk": m.wk, "wlam": m.wlam, "wtheta": m.wtheta})
    return d


def _exec_model_from_dict(d: dict) -> ExecModel:
    return ExecModel(
        kind=ExecKind(d["kind"]),
        minexec=d["minexec"],
        maxexec=d["maxexec"],
        budget=d["budget"],
        pm=d["pm"],
        wk=d.get("wk"),
        wlam=d.get("wlam"),
        wtheta=d.get("wtheta"),
    )


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": s.seed,
        "config": {
            "n": s.config.n,
            "m": s.config.m,
            "target_util": frac_str(s.config.target_util),
            "exec_kind": s.config.exec_kind.value,
            "pm": s.config.pm,
            "migrating_util_default": frac_str(s.config.migrating_util_default),
            "task_kind": s.config.task_kind.value,
            "horizon": s.config.horizon,
        },
        "tasks": [
            {
                "id": t.spec.id,
                "period": t.spec.period,
                "kind": t.spec.kind.value,
                "arrival_time": t.spec.arrival_time,
                "departure_time": t.spec.departure_time,
                "exec_model": _exec_model_to_dict(t.spec.exec_model),
                "server": {
                    "budget": t.server.budget,
                    "period": t.server.period,
                    "utilization": frac_str(t.server.utilization),
                    "migrating_utilization": frac_str(t.server.migrating_utilization),
                },
                "rng_seed": t.rng_seed,
                "dynamic": t.dynamic,
            }
            for t in s.tasks
        ],
        "partitions": {
            h: {str(tid): core for tid, core in sorted(assign.items())}
            for h, assign in sorted(s.partitions.items())
        },
        "gfb_admitted": s.gfb_admitted,
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario schema_version: {d.get('schema_version')}")
    c = d["config"]
    cfg = ScenarioConfig(
        n=c["n"],
        m=c["m"],
        target_util=parse_frac(c["target_util"]),
        exec_kind=ExecKind(c["exec_kind"]),
        pm=c["pm"],
        migrating_util_default=parse_frac(c["migrating_util_default"]),
        task_kind=TaskKind(c["task_kind"]),
        horizon=c["horizon"],
    )
    tasks = []
    for td in d["tasks"]:
        spec = TaskSpec(
            id=td["id"],
            period=td["period"],
            kind=TaskKind(td["kind"]),
            exec_model=_exec_model_from_dict(td["exec_model"]),
            arrival_time=td["arrival_time"],
            departure_time=td["departure_time"],
        )
        sv = td["server"]
        server = ServerParams(
            budget=sv["budget"],
            period=sv["period"],
            utilization=parse_frac(sv["utilization"]),
            migrating_utilization=parse_frac(sv["migrating_utilization"]),
        )
        tasks.append(GeneratedTask(spec, server, td["rng_seed"], td["dynamic"]))
    partitions = {
        h: {int(tid): core for tid, core in assign.items()}
        for h, assign in d["partitions"].items()
    }
    return Scenario(
        config=cfg,
        seed=d["seed"],
        tasks=tasks,
        partitions=partitions,
        gfb_admitted=d.get("gfb_admitted", True),
    )


def save_scenario(s: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
