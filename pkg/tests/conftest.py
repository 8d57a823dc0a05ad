"""Shared pytest configuration: the expensive marker, cached-settings reset,
builtin measures and a seeded random source.
"""

import asyncio

import pytest
from dotenv import load_dotenv

load_dotenv()


def pytest_addoption(parser):
    """Add --run-expensive."""
    parser.addoption(
        "--run-expensive",
        action="store_true",
        default=False,
        help="Run full-scale Monte-Carlo tests (N = 10^5 replicates)",
    )


def pytest_configure(config):
    """Register the expensive marker."""
    config.addinivalue_line(
        "markers",
        "expensive: mark test as expensive (full-scale Monte-Carlo)",
    )


def pytest_collection_modifyitems(config, items):
    """Skip expensive tests unless --run-expensive is given."""
    if config.getoption("--run-expensive"):
        return

    skip_expensive = pytest.mark.skip(reason="need --run-expensive option to run")
    for item in items:
        if "expensive" in item.keywords:
            item.add_marker(skip_expensive)


# =============================================================================
# Shared Fixtures
# =============================================================================

@pytest.fixture(scope="session")
def event_loop_policy():
    """Return the event loop policy."""
    return asyncio.DefaultEventLoopPolicy()


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Drop cached settings so PPP_* variables set by a test take effect."""
    from ppp_ci.config import get_settings

    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def m1():
    from ppp_ci.catalog import builtin_measure
    return builtin_measure("M1")


@pytest.fixture
def m2():
    from ppp_ci.catalog import builtin_measure
    return builtin_measure("M2")


@pytest.fixture
def m3():
    from ppp_ci.catalog import builtin_measure
    return builtin_measure("M3")


@pytest.fixture
def poisson3():
    from ppp_ci.catalog import builtin_measure
    return builtin_measure("POISSON3")


@pytest.fixture
def query_123():
    """The query 1 _|_ 2 | 3."""
    from ppp_ci.models import CiQuery
    return CiQuery.parse("1 _|_ 2 | 3")


@pytest.fixture
def source():
    """Seeded random source shared by the simulation tests."""
    from ppp_ci.ppp_sim import RandomSource
    return RandomSource(20240601)
