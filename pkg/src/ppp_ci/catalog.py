"""Builtin measures.

Every builtin is stored as a measure spec document, so the catalog doubles as a
set of examples for the spec format.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from ppp_ci.measure_core import LayeredDiscreteMeasure
from ppp_ci.measure_spec import build_measure, load_measure_spec, parse_measure_spec
from ppp_ci.models import MeasureValidationError

logger = logging.getLogger(__name__)

_FAIR_COIN = [{"value": ["0"], "prob": "1/2"}, {"value": ["1"], "prob": "1/2"}]


def _geometric(dims: int, axes: list[int], weight: str = "1") -> dict[str, Any]:
    return {"family": "geometric_axis", "dims": dims, "axes": axes, "weight": weight}


@dataclass(frozen=True)
class BuiltinMeasure:
    """Named measure spec with the query it is usually checked against."""
    name: str
    description: str
    spec: dict[str, Any]
    query: Optional[str] = None
    tags: tuple[str, ...] = field(default_factory=tuple)


BUILTIN_MEASURES: dict[str, BuiltinMeasure] = {
    m.name: m
    for m in [
        BuiltinMeasure(
            name="M1",
            description="Geometric base on y_3 with independent fair-coin kernels for y_1 and y_2 (CI-true)",
            spec={
                "family": "kernel_product", "dims": 3, "a": [1], "b": [2], "c": [3],
                "base": _geometric(1, [1]), "kernel_a": _FAIR_COIN, "kernel_b": _FAIR_COIN,
            },
            query="1 _|_ 2 | 3",
            tags=("equivalence", "sampler", "condcov"),
        ),
        BuiltinMeasure(
            name="M2",
            description="Geometric base on y_3 with a coupled kernel putting (y_1, y_2) on (0, 0) or (y_3, y_3)",
            spec={
                "family": "joint_kernel", "dims": 3, "a": [1], "b": [2], "c": [3],
                "base": _geometric(1, [1]),
                "kernel_ab": [
                    {"a": ["0"], "b": ["0"], "prob": "1/2"},
                    {"a": ["1"], "b": ["1"], "prob": "1/2"},
                ],
            },
            query="1 _|_ 2 | 3",
            tags=("equivalence", "sampler", "condcov"),
        ),
        BuiltinMeasure(
            name="M3",
            description="Geometric atoms on the diagonal of (y_1, y_2) with y_3 = 0 (face-null violator)",
            spec=_geometric(3, [1, 2]),
            query="1 _|_ 2 | 3",
            tags=("equivalence",),
        ),
        BuiltinMeasure(
            name="M1_4",
            description="Fair-coin kernels for y_1, y_2 over separate geometric axes on y_3 and y_4",
            spec={
                "family": "kernel_product", "dims": 4, "a": [1], "b": [2], "c": [3, 4],
                "base": {"family": "superposition", "dims": 2, "parts": [_geometric(2, [1]), _geometric(2, [2])]},
                "kernel_a": _FAIR_COIN, "kernel_b": _FAIR_COIN,
            },
            query="1 _|_ 2 | 3,4",
            tags=("semigraphoid",),
        ),
        BuiltinMeasure(
            name="PERP4",
            description="Geometric atoms on each of the four axes separately",
            spec={"family": "superposition", "dims": 4, "parts": [_geometric(4, [v]) for v in (1, 2, 3, 4)]},
            query="1 _|_ 2 | ",
            tags=("semigraphoid",),
        ),
        BuiltinMeasure(
            name="BIV_A",
            description="Zero measure on the punctured plane",
            spec={"family": "raw_layers", "dims": 2, "atoms": []},
            tags=("bivariate",),
        ),
        BuiltinMeasure(
            name="BIV_B1",
            description="Geometric atoms on both axes, none inside",
            spec={"family": "superposition", "dims": 2, "parts": [_geometric(2, [1]), _geometric(2, [2])]},
            tags=("bivariate",),
        ),
        BuiltinMeasure(
            name="BIV_B2",
            description="Geometric atoms on the first axis only",
            spec=_geometric(2, [1]),
            tags=("bivariate",),
        ),
        BuiltinMeasure(
            name="BIV_B3",
            description="Geometric atoms on the second axis only",
            spec=_geometric(2, [2]),
            tags=("bivariate",),
        ),
        BuiltinMeasure(
            name="BIV_NOT",
            description="Geometric atoms on the first axis plus one unit atom at (0, 1)",
            spec={
                "family": "superposition", "dims": 2,
                "parts": [
                    _geometric(2, [1]),
                    {"family": "raw_layers", "dims": 2, "atoms": [{"point": ["0", "1"], "weight": "1"}]},
                ],
            },
            tags=("bivariate",),
        ),
        BuiltinMeasure(
            name="POISSON3",
            description="Geometric atoms on the first axis plus an atom of mass 1/4 at (0, 1/2, 0)",
            spec={
                "family": "superposition", "dims": 3,
                "parts": [
                    _geometric(3, [1]),
                    {"family": "raw_layers", "dims": 3, "atoms": [{"point": ["0", "1/2", "0"], "weight": "1/4"}]},
                ],
            },
            tags=("poisson",),
        ),
    ]
}

# Expected classification of each bivariate builtin.
BIVARIATE_EXPECTED: dict[str, str] = {
    "BIV_A": "a",
    "BIV_B1": "b1",
    "BIV_B2": "b2",
    "BIV_B3": "b3",
    "BIV_NOT": "not_independent",
}


def builtin_names() -> list[str]:
    return list(BUILTIN_MEASURES)


def get_builtin(name: str) -> BuiltinMeasure:
    try:
        return BUILTIN_MEASURES[name]
    except KeyError:
        raise MeasureValidationError(
            f"unknown builtin measure {name!r}; available: {', '.join(BUILTIN_MEASURES)}"
        ) from None


def builtin_measure(name: str) -> LayeredDiscreteMeasure:
    """Build a builtin measure by name."""
    return build_measure(parse_measure_spec(get_builtin(name).spec, f"builtin {name}"))


def resolve_measure(ref: Union[str, dict[str, Any], Any]) -> tuple[LayeredDiscreteMeasure, Any]:
    """Build a measure from a builtin name, a spec file path, an inline document or a parsed spec.

    Returns:
        The measure and its validated spec.
    """
    if isinstance(ref, str):
        if ref in BUILTIN_MEASURES:
            spec = parse_measure_spec(BUILTIN_MEASURES[ref].spec, f"builtin {ref}")
        elif Path(ref).expanduser().exists():
            spec = load_measure_spec(ref)
        else:
            raise MeasureValidationError(f"{ref!r} is neither a builtin measure nor a spec file")
    elif isinstance(ref, dict):
        spec = parse_measure_spec(ref)
    else:
        spec = ref
    measure = build_measure(spec)
    logger.info(f"Resolved measure {measure.provenance}")
    return measure, spec
