"""Statistical checks on simulated point counts.

Chi-square tests come from ``scipy.stats``; everything else is plain numpy over
``CountSample`` matrices. All verdicts use the significance level ``ALPHA`` or a
band of ``Z_THRESHOLD`` standard errors.
"""

from __future__ import annotations

import csv
import logging
import math
from fractions import Fraction
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import stats

from ppp_ci.measure_core import LayeredDiscreteMeasure, disintegrate, is_origin, layer_of, marginalize
from ppp_ci.models import BinningError, CountSample, TestRectangle, TestReport, format_rational
from ppp_ci.ppp_sim import JointKernel, PointPattern, RandomSource, cond_moment_formulas

logger = logging.getLogger(__name__)

ALPHA = 0.001
Z_THRESHOLD = 4.0
MIN_EXPECTED = 5.0

__all__ = [
    "ALPHA",
    "Z_THRESHOLD",
    "CountSample",
    "TestReport",
    "poisson_bins",
    "poisson_gof",
    "joint_count_equality",
    "empirical_cond_cov",
    "count_moments",
    "write_count_csv",
    "count_covariance",
    "disjoint_covariance",
]


# =============================================================================
# Poisson goodness of fit
# =============================================================================

def poisson_bins(mean: float, replicates: int) -> list[tuple[int, Optional[int]]]:
    """Left-to-right pooled bins [lo, hi] with every expected count >= 5; the last bin is open."""
    dist = stats.poisson(mean)
    bins: list[tuple[int, Optional[int]]] = []
    lo = 0
    k = 0
    while True:
        tail = replicates * dist.sf(k)
        if tail < MIN_EXPECTED:
            if replicates * dist.sf(lo - 1) < MIN_EXPECTED and bins:
                bins[-1] = (bins[-1][0], None)
            else:
                bins.append((lo, None))
            return bins
        if replicates * (dist.cdf(k) - dist.cdf(lo - 1)) >= MIN_EXPECTED:
            bins.append((lo, k))
            lo = k + 1
        k += 1


def _gof_window(name: str, counts: np.ndarray, mean: Fraction, alpha: float) -> TestReport:
    n = len(counts)
    if mean == 0:
        passed = bool(np.all(counts == 0))
        return TestReport(
            name=f"poisson_gof[{name}]", statistic="chi2", value=0.0, dof=0,
            p_value=1.0 if passed else 0.0, threshold=alpha, passed=passed, degenerate=True,
            inputs={"window": name, "mean": "0", "replicates": n},
        )
    mu = float(mean)
    bins = poisson_bins(mu, n)
    if len(bins) < 2:
        raise BinningError(f"window {name}: mean {mu} leaves fewer than two bins at {n} replicates")
    dist = stats.poisson(mu)
    observed = []
    expected = []
    for lo, hi in bins:
        if hi is None:
            observed.append(int(np.count_nonzero(counts >= lo)))
            expected.append(n * dist.sf(lo - 1))
        else:
            observed.append(int(np.count_nonzero((counts >= lo) & (counts <= hi))))
            expected.append(n * (dist.cdf(hi) - dist.cdf(lo - 1)))
    exp = np.array(expected)
    exp *= n / exp.sum()
    result = stats.chisquare(np.array(observed), exp)
    p = float(result.pvalue)
    return TestReport(
        name=f"poisson_gof[{name}]", statistic="chi2", value=float(result.statistic), dof=len(bins) - 1,
        p_value=p, threshold=alpha, passed=p > alpha,
        inputs={"window": name, "mean": format_rational(mean), "replicates": n, "bins": [list(b) for b in bins]},
    )


def poisson_gof(
    sample: CountSample,
    expected_means: Sequence[Fraction],
    min_replicates: int = 10_000,
    alpha: float = ALPHA,
) -> TestReport:
    """Per-window chi-square of counts against Poisson(exact mean); passes iff every window passes.

    Raises:
        BinningError: With fewer than ``min_replicates`` replicates or too few bins.
    """
    if len(expected_means) != len(sample.windows):
        raise BinningError(f"{len(expected_means)} means for {len(sample.windows)} windows")
    if sample.replicates < min_replicates:
        raise BinningError(f"poisson_gof needs >= {min_replicates} replicates, got {sample.replicates}")
    components = [
        _gof_window(name, sample.matrix[:, i], Fraction(mean), alpha)
        for i, (name, mean) in enumerate(zip(sample.windows, expected_means))
    ]
    worst = min(components, key=lambda r: r.p_value if r.p_value is not None else 1.0)
    passed = all(r.passed for r in components)
    if not passed:
        logger.info(f"Poisson GOF failed on {[r.name for r in components if not r.passed]}")
    return TestReport(
        name="poisson_gof", statistic="chi2", value=worst.value, dof=worst.dof, p_value=worst.p_value,
        threshold=alpha, passed=passed,
        inputs={"windows": list(sample.windows), "seeds": list(sample.seeds), "replicates": sample.replicates},
        components=components,
    )


# =============================================================================
# Two-sample equality of joint counts
# =============================================================================

def joint_count_equality(
    s1: CountSample,
    s2: CountSample,
    min_replicates: int = 100_000,
    alpha: float = ALPHA,
    cap_quantile: float = 0.995,
) -> TestReport:
    """Two-sample chi-square on the joint window-count vectors.

    Counts are capped at the pooled ``cap_quantile`` per window (the cap value
    becomes a tail bin), and joint cells with an expected count below 5 are
    pooled into one rare cell.

    Raises:
        BinningError: For mismatched windows, too few replicates or fewer than two cells.
    """
    if s1.windows != s2.windows:
        raise BinningError(f"samples cover different windows: {s1.windows} vs {s2.windows}")
    if min(s1.replicates, s2.replicates) < min_replicates:
        raise BinningError(f"joint_count_equality needs >= {min_replicates} replicates per sample")
    pooled = np.vstack([s1.matrix, s2.matrix])
    caps = np.maximum(np.quantile(pooled, cap_quantile, axis=0, method="higher").astype(np.int64), 1)
    capped = np.minimum(pooled, caps)
    _, inverse = np.unique(capped, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    n_cells = int(inverse.max()) + 1
    table = np.vstack([
        np.bincount(inverse[: s1.replicates], minlength=n_cells),
        np.bincount(inverse[s1.replicates:], minlength=n_cells),
    ]).astype(float)

    def expected_min(t: np.ndarray) -> np.ndarray:
        return (np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()).min(axis=0)

    rare = expected_min(table) < MIN_EXPECTED
    if rare.any():
        table = np.hstack([table[:, ~rare], table[:, rare].sum(axis=1, keepdims=True)])
        if table.shape[1] > 1 and expected_min(table)[-1] < MIN_EXPECTED:
            smallest = int(np.argmin(table[:, :-1].sum(axis=0)))
            table[:, smallest] += table[:, -1]
            table = table[:, :-1]
    if table.shape[1] < 2:
        raise BinningError("joint counts collapse into a single cell")

    chi2, p, dof, _ = stats.chi2_contingency(table, correction=False)
    report = TestReport(
        name="joint_count_equality", statistic="chi2", value=float(chi2), dof=int(dof), p_value=float(p),
        threshold=alpha, passed=float(p) > alpha,
        inputs={
            "windows": list(s1.windows), "seeds_1": list(s1.seeds), "seeds_2": list(s2.seeds),
            "replicates": [s1.replicates, s2.replicates], "caps": caps.tolist(), "cells": int(table.shape[1]),
        },
    )
    logger.debug(f"joint_count_equality chi2={chi2:.2f} dof={dof} p={p:.4g}")
    return report


# =============================================================================
# Conditional moments and covariances
# =============================================================================

def _z_report(name: str, estimate: float, target: float, stderr: float, threshold: float, inputs: dict) -> TestReport:
    degenerate = stderr == 0.0
    if degenerate:
        z = 0.0 if math.isclose(estimate, target, rel_tol=1e-9, abs_tol=1e-12) else math.inf
        logger.warning(f"{name}: zero variance, comparing {estimate} with {target} directly")
    else:
        z = (estimate - target) / stderr
    return TestReport(
        name=name, statistic="z", value=z, z_score=z, threshold=threshold, passed=abs(z) < threshold,
        degenerate=degenerate, inputs={**inputs, "estimate": estimate, "target": target, "stderr": stderr},
    )


def empirical_cond_cov(
    measure: LayeredDiscreteMeasure,
    window_a: TestRectangle,
    window_b: TestRectangle,
    xi_c: PointPattern,
    replicates: int,
    source: RandomSource,
    threshold: float = Z_THRESHOLD,
) -> TestReport:
    """Monte-Carlo conditional means and covariance of window counts given a frozen xi_C.

    Each point of xi_C draws its (y_A, y_B) from the joint kernel row on
    substream ("point", i); the verdict needs all three estimates within
    ``threshold`` standard errors of the exact formulas.
    """
    formula = cond_moment_formulas(measure, window_a, window_b, xi_c)
    a_labels, b_labels = tuple(sorted(window_a.sets)), tuple(sorted(window_b.sets))
    c_labels = tuple(xi_c.labels)
    working, _ = marginalize(measure, a_labels + b_labels + c_labels)
    base_points = [p for p in xi_c.points if not is_origin(p)]
    depth = max([xi_c.depth, 1] + [layer_of(p) for p in base_points])
    kernel = JointKernel.from_disintegration(disintegrate(working, a_labels, b_labels, c_labels, depth)[1])

    x = np.zeros(replicates)
    y = np.zeros(replicates)
    for i, point in enumerate(base_points):
        cells = sorted(kernel.cells(point).items())
        cdf = np.cumsum([float(p) for _, p in cells])
        cdf[-1] = 1.0
        in_a = np.array([window_a.contains(ya, a_labels) for (ya, _), _ in cells], dtype=float)
        in_b = np.array([window_b.contains(yb, b_labels) for (_, yb), _ in cells], dtype=float)
        u = source.substream("point", i).generator.random(replicates)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cells) - 1)
        x += in_a[idx]
        y += in_b[idx]

    root_n = math.sqrt(replicates)
    terms = (x - x.mean()) * (y - y.mean())
    inputs = {"points": len(base_points), "replicates": replicates, "seed": source.seed, "stream": list(source.stream)}
    components = [
        _z_report("cond_mean_1", float(x.mean()), float(formula.mean_1), float(x.std(ddof=1) / root_n) if replicates > 1 else 0.0, threshold, inputs),
        _z_report("cond_mean_2", float(y.mean()), float(formula.mean_2), float(y.std(ddof=1) / root_n) if replicates > 1 else 0.0, threshold, inputs),
        _z_report("cond_cov", float(terms.mean()), float(formula.cov), float(terms.std(ddof=1) / root_n) if replicates > 1 else 0.0, threshold, inputs),
    ]
    cov = components[2]
    return TestReport(
        name="empirical_cond_cov", statistic="z", value=cov.value, z_score=cov.z_score, threshold=threshold,
        passed=all(c.passed for c in components), degenerate=any(c.degenerate for c in components),
        inputs={**inputs, "formula": formula.model_dump(mode="json")}, components=components,
    )


def count_covariance(
    sample: CountSample,
    i: int,
    j: int,
    expect: Literal["zero", "positive"] = "zero",
    threshold: float = Z_THRESHOLD,
) -> TestReport:
    """Empirical covariance of two window columns, tested against 0 in standard errors."""
    x = sample.matrix[:, i].astype(float)
    y = sample.matrix[:, j].astype(float)
    terms = (x - x.mean()) * (y - y.mean())
    cov = float(terms.mean())
    stderr = float(terms.std(ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else 0.0
    inputs = {"windows": [sample.windows[i], sample.windows[j]], "seeds": list(sample.seeds), "covariance": cov}
    if expect == "zero":
        report = _z_report("count_covariance", cov, 0.0, stderr, threshold, inputs)
        return report
    z = cov / stderr if stderr > 0 else (math.inf if cov > 0 else 0.0)
    return TestReport(
        name="count_covariance", statistic="z", value=z, z_score=z, threshold=threshold, passed=z > threshold,
        degenerate=stderr == 0, inputs={**inputs, "stderr": stderr},
    )


def disjoint_covariance(sample: CountSample, i: int, j: int, threshold: float = Z_THRESHOLD) -> TestReport:
    """Counts in disjoint windows are independent, so their covariance is 0."""
    return count_covariance(sample, i, j, "zero", threshold)


# =============================================================================
# Count statistics CSV
# =============================================================================

def count_moments(sample: CountSample, block_size: Optional[int] = None) -> list[dict[str, object]]:
    """Mean, variance and standard error per window and replicate block."""
    size = block_size or sample.block_size
    rows: list[dict[str, object]] = []
    for w, name in enumerate(sample.windows):
        for block, start in enumerate(range(0, sample.replicates, size)):
            col = sample.matrix[start:start + size, w].astype(float)
            var = float(col.var(ddof=1)) if len(col) > 1 else 0.0
            rows.append({
                "window_id": name,
                "replicate_block": block,
                "count_mean": float(col.mean()),
                "count_var": var,
                "stderr": math.sqrt(var / len(col)),
            })
    return rows


def write_count_csv(rows: Sequence[dict[str, object]], path: str) -> None:
    fields = ["window_id", "replicate_block", "count_mean", "count_var", "stderr"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
