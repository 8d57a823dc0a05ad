"""Tests for the MCP tools, called in-process through a FastMCP client."""

import json
from fractions import Fraction as F

import pytest
from fastmcp import Client
from fastmcp.exceptions import ToolError

from ppp_ci.measure_core import Atom, LayeredDiscreteMeasure, PuncturedSpace
from ppp_ci.server import mcp


async def call(tool, **arguments):
    async with Client(mcp) as client:
        result = await client.call_tool(tool, arguments)
    return result.content[0].text


# =============================================================================
# Test: measure tools
# =============================================================================

class TestMeasureTools:
    """Tests for list_measures, describe_measure and check_assumptions."""

    async def test_tools_registered(self):
        async with Client(mcp) as client:
            names = {tool.name for tool in await client.list_tools()}
        assert {
            "list_measures", "describe_measure", "check_assumptions", "check_ci",
            "classify_bivariate", "simulate_counts", "run_suite",
        } <= names

    async def test_list_measures(self):
        text = await call("list_measures")
        assert "M2:" in text
        assert "Query: 1 _|_ 2 | 3" in text

    async def test_describe_builtin(self):
        text = await call("describe_measure", measure="M2", depth=2)
        assert "Layer 1: 2 atom(s)" in text
        assert "(1, 1, 1) weight 1/2" in text

    async def test_describe_inline_spec(self):
        spec = json.dumps({"family": "geometric_axis", "dims": 2, "axes": [1]})
        text = await call("describe_measure", measure=spec, depth=1)
        assert "Labels: (1, 2)" in text

    async def test_invalid_inline_spec(self):
        with pytest.raises(ToolError):
            await call("describe_measure", measure="{not json")

    async def test_unknown_measure(self):
        with pytest.raises(ToolError):
            await call("describe_measure", measure="M9")

    async def test_bad_layer_reported_as_tool_error(self, monkeypatch):
        misplaced = LayeredDiscreteMeasure(PuncturedSpace((1, 2)), lambda h: [Atom((F(1), F(0)), F(1))], provenance="misplaced")
        monkeypatch.setattr("ppp_ci.server.resolve_measure", lambda ref: (misplaced, None))
        with pytest.raises(ToolError, match=r"^atom .* generated in layer 2 belongs to layer 1$"):
            await call("describe_measure", measure="M1", depth=2)

    async def test_assumption_report(self):
        assert "holds" in await call("check_assumptions", measure="M1")
        text = await call("check_assumptions", measure="BIV_NOT")
        assert "FAILS" in text


# =============================================================================
# Test: CI tools
# =============================================================================

class TestCiTools:
    """Tests for check_ci and classify_bivariate."""

    async def test_check_ci_holds(self):
        text = await call("check_ci", measure="M1", query="1 _|_ 2 | 3", depth=3)
        assert text.startswith("1 _|_ 2 | 3: HOLDS")

    async def test_check_ci_witness(self):
        text = await call("check_ci", measure="M2", query="1 _|_ 2 | 3", depth=3)
        assert "FAILS" in text
        assert "1/2 != 1/4" in text

    async def test_check_ci_bad_query(self):
        with pytest.raises(ToolError):
            await call("check_ci", measure="M1", query="1 and 2", depth=3)

    async def test_classify(self):
        text = await call("classify_bivariate", measure="BIV_B1")
        assert text.startswith("Case b1 (independent)")

    async def test_classify_blocks(self):
        text = await call("classify_bivariate", measure="M3", blocks="1,2;3")
        assert text.startswith("Case b2")

    async def test_classify_bad_blocks(self):
        with pytest.raises(ToolError):
            await call("classify_bivariate", measure="M3", blocks="1,2")


# =============================================================================
# Test: simulation tools
# =============================================================================

class TestSimulationTools:
    """Tests for simulate_counts and run_suite."""

    async def test_simulate_counts(self):
        windows = json.dumps([{"name": "W", "sets": {"1": {"kind": "interval", "lo": "1/8", "hi": "1"}}}])
        text = await call("simulate_counts", measure="POISSON3", windows=windows, depth=3, replicates=1000, seed=1)
        assert "W: mean" in text
        assert "exact mass 3" in text

    async def test_simulate_infinite_window(self):
        windows = json.dumps([{"sets": {"1": {"kind": "abs_above", "threshold": "0"}}}])
        with pytest.raises(ToolError):
            await call("simulate_counts", measure="POISSON3", windows=windows, depth=3, replicates=10)

    async def test_run_suite(self):
        text = await call("run_suite", suite="bivariate", replicates=2000, seed=3)
        assert text.startswith("Suite bivariate: 6/6 passed")

    async def test_unknown_suite(self):
        with pytest.raises(ToolError):
            await call("run_suite", suite="nope")
