"""MCP tool server for ppp-ci.

Exposes measure inspection, exact CI checks and Poisson-process simulation as
MCP tools. Measures are referenced by builtin name, spec file path, or an
inline JSON spec document.
"""

import asyncio
import json
import logging
from typing import Annotated, Optional

from fastmcp import FastMCP
from fastmcp.exceptions import ToolError
from pydantic import Field

from ppp_ci import ci_core
from ppp_ci.catalog import BUILTIN_MEASURES, get_builtin, resolve_measure
from ppp_ci.config import get_settings
from ppp_ci.measure_core import LayeredDiscreteMeasure, check_assumption_iv, mass_on_rectangle
from ppp_ci.models import CiQuery, PppCiError, TestRectangle
from ppp_ci.ppp_sim import RandomSource, simulate_window_counts
from ppp_ci.stat_tests import count_moments
from ppp_ci.suites import SUITES, SuiteContext, run_suite


def main():
    """Main entry point for running the MCP server."""
    mcp.run(transport="stdio", show_banner=False)


# Configure logging - WARNING by default to keep the stdio transport clean
logging.basicConfig(
    level=get_settings().log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logging.getLogger("docket").setLevel(logging.ERROR)
logging.getLogger("fastmcp").setLevel(logging.ERROR)
logging.getLogger("mcp").setLevel(logging.ERROR)
logger = logging.getLogger(__name__)

mcp = FastMCP(
    "ppp-ci",
    instructions=(
        "Exact conditional-independence checks for infinite measures on punctured product spaces, "
        "and Monte-Carlo verification through Poisson point processes."
    ),
)

MeasureRef = Annotated[
    str,
    Field(description="Builtin measure name (see list_measures), a spec file path, or an inline JSON spec"),
]


def _resolve(measure: str) -> LayeredDiscreteMeasure:
    ref: object = measure
    if measure.lstrip().startswith("{"):
        try:
            ref = json.loads(measure)
        except json.JSONDecodeError as e:
            raise ToolError(f"Inline measure spec is not valid JSON: {e}")
    try:
        return resolve_measure(ref)[0]
    except PppCiError as e:
        raise ToolError(str(e))


# =============================================================================
# Measure Tools
# =============================================================================

@mcp.tool()
async def list_measures() -> str:
    """List the builtin measures with their usual queries."""
    lines = [f"Builtin Measures ({len(BUILTIN_MEASURES)}):", ""]
    for m in BUILTIN_MEASURES.values():
        lines.append(f"  {m.name}: {m.description}")
        if m.query:
            lines.append(f"    Query: {m.query}")
        if m.tags:
            lines.append(f"    Suites: {', '.join(m.tags)}")
    return "\n".join(lines)


@mcp.tool()
async def describe_measure(
    measure: MeasureRef,
    depth: Annotated[int, Field(ge=1, le=16, description="Layers to summarize")] = 4,
) -> str:
    """Describe a measure: face classes and the atoms of its first layers."""
    m = _resolve(measure)
    lines = [f"Measure: {m.provenance}", f"Labels: {m.labels}", "", "Face classes:"]
    for face, mass in sorted(m.face_classes.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
        lines.append(f"  {{{', '.join(str(v) for v in sorted(face))}}}: {mass}")
    lines.append("")
    if measure in BUILTIN_MEASURES:
        lines.append(f"Spec: {json.dumps(get_builtin(measure).spec)}")
        lines.append("")
    for h in range(1, depth + 1):
        try:
            atoms = m.layer(h)
        except PppCiError as e:
            raise ToolError(str(e))
        lines.append(f"Layer {h}: {len(atoms)} atom(s)")
        for atom in atoms[:8]:
            point = ", ".join(str(x) for x in atom.point)
            lines.append(f"    ({point}) weight {atom.weight}")
        if len(atoms) > 8:
            lines.append(f"    ... {len(atoms) - 8} more")
    return "\n".join(lines)


@mcp.tool()
async def check_assumptions(measure: MeasureRef) -> str:
    """Check the face-mass assumption: every aggregate {y_A != 0, y_B = 0} is Zero or Infinite."""
    m = _resolve(measure)
    report = check_assumption_iv(m)
    if report.passed:
        return f"Assumption holds for {m.provenance} ({len(report.pairs)} pairs checked)."
    lines = [f"Assumption FAILS for {m.provenance}:"]
    for pair in report.offending:
        lines.append(f"  A={pair.a} B={pair.b}: {pair.mass}")
    return "\n".join(lines)


# =============================================================================
# CI Tools
# =============================================================================

@mcp.tool()
async def check_ci(
    measure: MeasureRef,
    query: Annotated[str, Field(description='Query "A _|_ B | C", labels comma-separated, e.g. "1 _|_ 2 | 3"')],
    depth: Annotated[Optional[int], Field(ge=1, description="Depth H (default from settings)")] = None,
) -> str:
    """Decide A _|_ B | C up to depth H with all three characterizations and cross-check them."""
    m = _resolve(measure)
    depth = depth or get_settings().default_depth
    try:
        q = CiQuery.parse(query)
        report = await asyncio.to_thread(ci_core.equivalence_crosscheck, m, q, depth)
    except PppCiError as e:
        raise ToolError(str(e))

    holds = report.agree and report.holds
    lines = [f"{q}: {'HOLDS' if holds else 'FAILS'} up to depth H={depth}"]
    for v in report.verdicts:
        line = f"  {v.method.value}: {'holds' if v.holds else 'fails'}"
        if v.witness is not None:
            line += f" ({v.witness.describe()})"
        lines.append(line)
    if not report.agree:
        lines.append("  WARNING: characterizations disagree")
    return "\n".join(lines)


@mcp.tool()
async def classify_bivariate(
    measure: MeasureRef,
    blocks: Annotated[
        Optional[str], Field(description='Two blocks as "1,2;3" for marginalized classification')
    ] = None,
) -> str:
    """Classify a two-block measure into the bivariate independence cases."""
    m = _resolve(measure)
    parsed = None
    if blocks:
        try:
            left, right = blocks.split(";")
            parsed = (
                tuple(int(x) for x in left.split(",") if x.strip()),
                tuple(int(x) for x in right.split(",") if x.strip()),
            )
        except ValueError:
            raise ToolError(f"blocks must look like '1,2;3', got {blocks!r}")
    try:
        result = ci_core.classify_bivariate(m, parsed)
    except PppCiError as e:
        raise ToolError(str(e))
    verdict = "independent" if result.case.independent else "not independent"
    return (
        f"Case {result.case.value} ({verdict}) for blocks {result.blocks}\n"
        f"  total: {result.total}\n"
        f"  interior: {result.interior}\n"
        f"  y1 = 0: {result.mass_y1_zero}\n"
        f"  y2 = 0: {result.mass_y2_zero}"
    )


# =============================================================================
# Simulation Tools
# =============================================================================

@mcp.tool()
async def simulate_counts(
    measure: MeasureRef,
    windows: Annotated[
        str,
        Field(description='JSON list of rectangles, e.g. [{"name": "W", "sets": {"1": {"kind": "abs_above", "threshold": "1/8"}}}]'),
    ],
    depth: Annotated[Optional[int], Field(ge=1, description="Depth H")] = None,
    replicates: Annotated[int, Field(ge=1, le=1_000_000, description="Replicates N")] = 10_000,
    seed: Annotated[Optional[int], Field(ge=0, description="Root seed")] = None,
) -> str:
    """Simulate Poisson window counts and compare their means with the exact window masses."""
    settings = get_settings()
    m = _resolve(measure)
    try:
        rects = [TestRectangle.model_validate(w) for w in json.loads(windows)]
    except (json.JSONDecodeError, ValueError) as e:
        raise ToolError(f"Invalid windows: {e}")
    depth = depth or settings.default_depth
    seed = settings.default_seed if seed is None else seed
    try:
        sample = await asyncio.to_thread(
            simulate_window_counts, m, rects, depth, replicates, RandomSource(seed), settings.block_size, settings.threads
        )
        masses = [mass_on_rectangle(m, r) for r in rects]
    except PppCiError as e:
        raise ToolError(str(e))

    lines = [f"Window counts of {m.provenance} (H={depth}, N={replicates}, seed={seed}):"]
    for i, (name, mass) in enumerate(zip(sample.windows, masses)):
        col = sample.matrix[:, i]
        lines.append(f"  {name}: mean {col.mean():.4f} var {col.var():.4f} exact mass {mass}")
    moments = count_moments(sample)
    lines.append(f"  {len(moments)} block statistics computed")
    return "\n".join(lines)


@mcp.tool(name="run_suite")
async def run_suite_tool(
    suite: Annotated[str, Field(description=f"Suite name: {', '.join(SUITES)} or all")],
    replicates: Annotated[int, Field(ge=1, description="Replicates N for Monte-Carlo suites")] = 100_000,
    seed: Annotated[Optional[int], Field(ge=0, description="Root seed")] = None,
) -> str:
    """Run a verification suite and report each case."""
    settings = get_settings()
    ctx = SuiteContext(
        depth=settings.default_depth,
        replicates=replicates,
        seed=settings.default_seed if seed is None else seed,
        threads=settings.threads,
        block_size=settings.block_size,
        min_gof_replicates=min(replicates, 10_000),
        min_joint_replicates=min(replicates, 100_000),
    )
    try:
        rows = await asyncio.to_thread(run_suite, suite, ctx)
    except PppCiError as e:
        raise ToolError(str(e))
    passed = sum(r.passed for r in rows)
    lines = [f"Suite {suite}: {passed}/{len(rows)} passed", ""]
    for r in rows:
        lines.append(f"  {'PASS' if r.passed else 'FAIL'} {r.suite}/{r.case}: {r.statistic}={r.value} ({r.threshold})")
    return "\n".join(lines)
