"""Verification suites.

Each suite runs end to end on builtin or generated measures and returns
``SuiteRow``s; a suite passes when every row passes.
"""

import csv
import itertools
import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

from ppp_ci.catalog import BIVARIATE_EXPECTED, builtin_measure
from ppp_ci.ci_core import (
    classify_bivariate,
    equivalence_crosscheck,
    reproduce_witness,
    semigraphoid_check,
)
from ppp_ci.measure_core import (
    LayeredDiscreteMeasure,
    PerpVariant,
    build_perp_measure,
    check_E1_equivalence,
    declared_measure,
    marginalize,
    mass_on_rectangle,
    random_face_classes,
)
from ppp_ci.measure_spec import build_measure, parse_measure_spec
from ppp_ci.models import (
    AbsAboveSet,
    CiQuery,
    ConfigError,
    IntervalSet,
    SuiteRow,
    TestRectangle,
    UnionSet,
    ValueSet,
    format_rational,
)
from ppp_ci.ppp_sim import (
    PointPattern,
    RandomSource,
    format_pattern_dump,
    functional_rep_kernels,
    laplace_check,
    project,
    sample_depth,
    simulate_functional_rep_counts,
    simulate_window_counts,
)
from ppp_ci.stat_tests import (
    ALPHA,
    Z_THRESHOLD,
    count_covariance,
    disjoint_covariance,
    empirical_cond_cov,
    joint_count_equality,
    poisson_gof,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SuiteContext:
    """Parameters shared by every suite."""
    depth: int = 6
    replicates: int = 100_000
    seed: int = 20240601
    threads: int = 1
    block_size: int = 10_000
    random_measures: int = 100
    e1_declarations: int = 100
    min_gof_replicates: int = 10_000
    min_joint_replicates: int = 100_000

    @property
    def source(self) -> RandomSource:
        return RandomSource(self.seed)


def _row(suite: str, case: str, statistic: str, value: Any, threshold: Any, passed: bool) -> SuiteRow:
    return SuiteRow(suite=suite, case=case, statistic=statistic, value=str(value), threshold=str(threshold), passed=passed)


def all_queries(labels: Sequence[int]) -> list[CiQuery]:
    """Every query with nonempty A and B over ``labels``."""
    queries = []
    for assignment in itertools.product(range(4), repeat=len(labels)):
        a = frozenset(l for l, k in zip(labels, assignment) if k == 1)
        b = frozenset(l for l, k in zip(labels, assignment) if k == 2)
        c = frozenset(l for l, k in zip(labels, assignment) if k == 3)
        if a and b:
            queries.append(CiQuery(a=a, b=b, c=c))
    return queries


# =============================================================================
# Random kernel-built measures
# =============================================================================

def _random_probs(rng: np.random.Generator, n: int) -> list[str]:
    weights = [int(w) for w in rng.integers(1, 6, size=n)]
    total = sum(weights)
    return [format_rational(Fraction(w, total)) for w in weights]


def _random_multipliers(rng: np.random.Generator, size: int, n: int) -> list[list[str]]:
    """n distinct multiplier vectors with entries in {-1, 0, 1}."""
    pool = list(itertools.product((-1, 0, 1), repeat=size))
    picks = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return [[str(x) for x in pool[i]] for i in sorted(picks)]


def random_kernel_spec(rng: np.random.Generator, dims: int = 3) -> dict[str, Any]:
    """Random kernel-built measure spec whose atoms have equal non-zero magnitudes.

    The base is a superposition of geometric axes on E_C; kernels use
    multipliers in {-1, 0, 1}; an optional geometric part lives on {y_C = 0}.
    """
    labels = [int(v) for v in rng.permutation(np.arange(1, dims + 1))]
    c_size = int(rng.integers(1, dims - 1))
    c = sorted(labels[:c_size])
    rest = labels[c_size:]
    split = int(rng.integers(1, len(rest)))
    a, b = sorted(rest[:split]), sorted(rest[split:])

    parts = []
    for _ in range(int(rng.integers(1, 3))):
        axes = sorted(int(v) for v in rng.choice(np.arange(1, c_size + 1), size=int(rng.integers(1, c_size + 1)), replace=False))
        weight = format_rational(Fraction(int(rng.integers(1, 4)), int(rng.integers(1, 4))))
        parts.append({"family": "geometric_axis", "dims": c_size, "axes": axes, "weight": weight})
    base = parts[0] if len(parts) == 1 else {"family": "superposition", "dims": c_size, "parts": parts}

    spec: dict[str, Any] = {"dims": dims, "a": a, "b": b, "c": c, "base": base}
    if rng.random() < 0.5:
        outs_a = _random_multipliers(rng, len(a), int(rng.integers(1, 4)))
        outs_b = _random_multipliers(rng, len(b), int(rng.integers(1, 4)))
        spec.update({
            "family": "kernel_product",
            "kernel_a": [{"value": v, "prob": p} for v, p in zip(outs_a, _random_probs(rng, len(outs_a)))],
            "kernel_b": [{"value": v, "prob": p} for v, p in zip(outs_b, _random_probs(rng, len(outs_b)))],
        })
    else:
        outs_a = _random_multipliers(rng, len(a), 2)
        outs_b = _random_multipliers(rng, len(b), 2)
        cells = [(va, vb) for va in outs_a for vb in outs_b]
        keep = sorted(rng.choice(len(cells), size=int(rng.integers(1, len(cells) + 1)), replace=False))
        probs = _random_probs(rng, len(keep))
        spec.update({
            "family": "joint_kernel",
            "kernel_ab": [{"a": cells[i][0], "b": cells[i][1], "prob": p} for i, p in zip(keep, probs)],
        })
    if rng.random() < 0.5:
        ab = a + b
        axes = sorted(int(v) for v in rng.choice(ab, size=int(rng.integers(1, len(ab) + 1)), replace=False))
        spec["axis_parts"] = [{"family": "geometric_axis", "dims": dims, "axes": axes}]
    return spec


# =============================================================================
# Suites
# =============================================================================

def _crosscheck_all(measure: LayeredDiscreteMeasure, ctx: SuiteContext, random_trials: int = 0) -> tuple[int, int]:
    rng = np.random.default_rng(ctx.seed)
    reports = [
        equivalence_crosscheck(measure, q, ctx.depth, random_trials, rng) for q in all_queries(measure.labels)
    ]
    return sum(r.agree for r in reports), len(reports)


def run_equivalence(ctx: SuiteContext) -> list[SuiteRow]:
    rows = []
    for name in ("M1", "M2", "M3"):
        agree, total = _crosscheck_all(builtin_measure(name), ctx, random_trials=20)
        rows.append(_row("equivalence", name, "queries_agreeing", f"{agree}/{total}", "all", agree == total))

    query = CiQuery.parse("1 _|_ 2 | 3")
    m1 = equivalence_crosscheck(builtin_measure("M1"), query, ctx.depth)
    rows.append(_row("equivalence", "M1 holds", "holds", m1.holds, True, m1.holds and m1.agree))

    m2_measure = builtin_measure("M2")
    m2 = equivalence_crosscheck(m2_measure, query, ctx.depth)
    kernel_witness = m2.verdicts[2].witness
    ok = (
        kernel_witness is not None
        and kernel_witness.kind == "kernel_row"
        and kernel_witness.c == (Fraction(1),)
        and kernel_witness.lhs == Fraction(1, 2)
        and kernel_witness.rhs == Fraction(1, 4)
        and reproduce_witness(m2_measure, query, kernel_witness) == kernel_witness
    )
    value = kernel_witness.describe() if kernel_witness else "none"
    rows.append(_row("equivalence", "M2 witness", "kernel_row", value, "1/2 != 1/4 at y_3 = 1", ok))

    m3 = equivalence_crosscheck(builtin_measure("M3"), query, ctx.depth)
    face_witness = m3.verdicts[1].witness
    ok = face_witness is not None and face_witness.kind == "face" and face_witness.face == (1, 2)
    rows.append(_row("equivalence", "M3 witness", "face", face_witness.face if face_witness else "none", "(1, 2)", ok))

    rng = np.random.default_rng(ctx.seed)
    started = time.perf_counter()
    agree_all = total_all = 0
    for _ in range(ctx.random_measures):
        measure = build_measure(parse_measure_spec(random_kernel_spec(rng)))
        agree, total = _crosscheck_all(measure, ctx)
        agree_all += agree
        total_all += total
    logger.info(f"Equivalence on {ctx.random_measures} random measures took {time.perf_counter() - started:.1f}s")
    rows.append(_row(
        "equivalence", f"random x{ctx.random_measures}", "queries_agreeing", f"{agree_all}/{total_all}", "all",
        agree_all == total_all,
    ))
    return rows


def _axis_windows() -> list[TestRectangle]:
    eighth = Fraction(1, 8)
    return [TestRectangle(name=f"|y{v}|>1/8", sets={v: AbsAboveSet(threshold=eighth)}) for v in (1, 2, 3)]


def run_sampler(ctx: SuiteContext) -> list[SuiteRow]:
    windows = _axis_windows()
    source = ctx.source.substream("sampler")
    rows = []
    cases = [("M1 direct vs functional", "M1", True), ("M2 direct vs product impostor", "M2", False)]
    for case, name, expect_pass in cases:
        measure = builtin_measure(name)
        direct = simulate_window_counts(
            measure, windows, ctx.depth, ctx.replicates, source.substream(name, "direct"), ctx.block_size, ctx.threads
        )
        # The marginal rows of the disintegration only rebuild the measure when its rows factorize.
        perp = build_perp_measure(measure, {1}, {2}, {3}, PerpVariant.SEPARATED)
        h_a, h_b = functional_rep_kernels(measure, {1}, {2}, {3}, ctx.depth)
        rep = simulate_functional_rep_counts(
            perp, h_a, h_b, windows, ctx.depth, ctx.replicates, source.substream(name, "functional"),
            ctx.block_size, ctx.threads,
        )
        report = joint_count_equality(direct, rep, min_replicates=ctx.min_joint_replicates)
        rows.append(_row(
            "sampler", case, "p_value", f"{report.p_value:.4g}", f"> {ALPHA}" if expect_pass else f"<= {ALPHA}",
            report.passed == expect_pass,
        ))
    return rows


def run_semigraphoid(ctx: SuiteContext) -> list[SuiteRow]:
    rows = []
    for name in ("M1_4", "PERP4"):
        report = semigraphoid_check(builtin_measure(name), ctx.depth)
        rows.append(_row("semigraphoid", name, "violations", len(report.violations), 0, report.passed))

    rng = np.random.default_rng(ctx.seed)
    agreeing = 0
    for _ in range(ctx.e1_declarations):
        labels = list(range(1, int(rng.integers(2, 6)) + 1))
        if check_E1_equivalence(declared_measure(labels, random_face_classes(labels, rng))):
            agreeing += 1
    rows.append(_row(
        "semigraphoid", f"E1 equivalence x{ctx.e1_declarations}", "agreeing", f"{agreeing}/{ctx.e1_declarations}",
        "all", agreeing == ctx.e1_declarations,
    ))
    return rows


def bivariate_windows() -> list[TestRectangle]:
    """Windows {y_1 in {0} u (1/4, 1]} and {y_2 != 0}."""
    return [
        TestRectangle(name="y1 in {0}u(1/4,1]", sets={1: UnionSet(parts=(
            ValueSet(values=(Fraction(0),)), IntervalSet(lo=Fraction(1, 4), hi=Fraction(1)),
        ))}),
        TestRectangle(name="y2 != 0", sets={2: AbsAboveSet(threshold=Fraction(0))}),
    ]


def run_bivariate(ctx: SuiteContext) -> list[SuiteRow]:
    rows = []
    for name, expected in BIVARIATE_EXPECTED.items():
        found = classify_bivariate(builtin_measure(name), depth=ctx.depth)
        rows.append(_row("bivariate", name, "case", found.case.value, expected, found.case.value == expected))

    sample = simulate_window_counts(
        builtin_measure("BIV_NOT"), bivariate_windows(), ctx.depth, ctx.replicates,
        ctx.source.substream("bivariate"), ctx.block_size, ctx.threads,
    )
    report = count_covariance(sample, 0, 1, expect="positive")
    rows.append(_row(
        "bivariate", "BIV_NOT covariance", "z", f"{report.value:.3f}", f"> {Z_THRESHOLD}", report.passed,
    ))
    return rows


def run_laplace(ctx: SuiteContext) -> list[SuiteRow]:
    measure = builtin_measure("M1")
    windows = [
        TestRectangle.reduced(2, 3),
        TestRectangle(name="y1 in (1/8,1]", sets={1: IntervalSet(lo=Fraction(1, 8), hi=Fraction(1))}),
    ]
    rows = []
    source = ctx.source.substream("laplace")
    for window in windows:
        for t in (Fraction(1, 2), Fraction(1), Fraction(2)):
            def f(point: tuple, window: TestRectangle = window, t: Fraction = t) -> Fraction:
                return t if window.contains(point, measure.labels) else Fraction(0)

            report = laplace_check(
                measure, f, ctx.depth, ctx.replicates, source.substream(window.describe(), str(t)),
                ctx.block_size, ctx.threads,
            )
            rows.append(_row(
                "laplace", f"{window.describe()} t={format_rational(t)}", "z", f"{report.z_score:.3f}",
                f"|z| < {Z_THRESHOLD}", abs(report.z_score) < Z_THRESHOLD,
            ))
    return rows


def run_condcov(ctx: SuiteContext) -> list[SuiteRow]:
    rows = []
    source = ctx.source.substream("condcov")

    m1 = builtin_measure("M1")
    base, _ = marginalize(m1, (3,))
    xi_c = project(sample_depth(base, ctx.depth, source.substream("xi_c")), (3,))
    eighth = Fraction(1, 8)
    report = empirical_cond_cov(
        m1,
        TestRectangle(name="|y1|>1/8", sets={1: AbsAboveSet(threshold=eighth)}),
        TestRectangle(name="|y2|>1/8", sets={2: AbsAboveSet(threshold=eighth)}),
        xi_c, ctx.replicates, source.substream("M1"),
    )
    rows.append(_row("condcov", "M1 sampled xi_C", "z_cov", f"{report.value:.3f}", f"|z| < {Z_THRESHOLD}", report.passed))

    worked = PointPattern((3,), ((Fraction(1),),), ctx.seed, (), 1)
    report = empirical_cond_cov(
        builtin_measure("M2"),
        TestRectangle(name="y1=1", sets={1: ValueSet(values=(Fraction(1),))}),
        TestRectangle(name="y2=1", sets={2: ValueSet(values=(Fraction(1),))}),
        worked, ctx.replicates, source.substream("M2"),
    )
    rows.append(_row("condcov", "M2 xi_C={1}", "z_cov", f"{report.value:.3f}", f"|z| < {Z_THRESHOLD}", report.passed))
    return rows


def poisson_windows() -> list[TestRectangle]:
    """Windows of masses 3, 1 and 1/4 under POISSON3."""
    return [
        TestRectangle(name="y1 in (1/8,1]", sets={1: IntervalSet(lo=Fraction(1, 8), hi=Fraction(1))}),
        TestRectangle(name="y1=1/8", sets={1: ValueSet(values=(Fraction(1, 8),))}),
        TestRectangle(name="y2=1/2", sets={2: ValueSet(values=(Fraction(1, 2),))}),
    ]


def run_poisson(ctx: SuiteContext) -> list[SuiteRow]:
    measure = builtin_measure("POISSON3")
    windows = poisson_windows()
    source = ctx.source.substream("poisson")
    sample = simulate_window_counts(measure, windows, ctx.depth, ctx.replicates, source, ctx.block_size, ctx.threads)
    means = [mass_on_rectangle(measure, w).value for w in windows]
    gof = poisson_gof(sample, means, min_replicates=ctx.min_gof_replicates)
    rows = [
        _row("poisson", c.name, "p_value", f"{c.p_value:.4g}", f"> {ALPHA}", c.passed) for c in gof.components
    ]
    cov = disjoint_covariance(sample, 0, 1)
    rows.append(_row("poisson", "disjoint covariance", "z", f"{cov.value:.3f}", f"|z| < {Z_THRESHOLD}", cov.passed))

    first = format_pattern_dump(sample_depth(measure, ctx.depth, source.substream("dump")))
    second = format_pattern_dump(sample_depth(measure, ctx.depth, RandomSource(ctx.seed).substream("poisson", "dump")))
    rows.append(_row("poisson", "determinism", "identical_dumps", first == second, True, first == second))
    return rows


SUITES: dict[str, Callable[[SuiteContext], list[SuiteRow]]] = {
    "equivalence": run_equivalence,
    "sampler": run_sampler,
    "semigraphoid": run_semigraphoid,
    "bivariate": run_bivariate,
    "laplace": run_laplace,
    "condcov": run_condcov,
    "poisson": run_poisson,
}


def run_suite(name: str, ctx: SuiteContext) -> list[SuiteRow]:
    """Run one suite, or every suite for ``"all"``.

    Raises:
        ConfigError: For unknown suite names.
    """
    if name == "all":
        return [row for suite in SUITES for row in run_suite(suite, ctx)]
    runner = SUITES.get(name)
    if runner is None:
        raise ConfigError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    started = time.perf_counter()
    rows = runner(ctx)
    failed = [r.case for r in rows if not r.passed]
    logger.info(
        f"Suite {name}: {len(rows) - len(failed)}/{len(rows)} passed in {time.perf_counter() - started:.1f}s"
        + (f"; failed: {failed}" if failed else "")
    )
    return rows


def write_suite_csv(rows: Sequence[SuiteRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["suite", "case", "statistic", "value", "threshold", "passed"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())
