"""Pydantic models and shared types for ppp-ci data structures.

Exact rationals travel through every model as ``fractions.Fraction`` and are
serialized as ``"p/q"`` strings (plain integers when the denominator is 1).
"""

from __future__ import annotations

from enum import Enum
from fractions import Fraction
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    WithJsonSchema,
    model_validator,
)


# =============================================================================
# Errors
# =============================================================================

class PppCiError(Exception):
    """Root of every error raised by ppp-ci."""
    pass


class OriginError(PppCiError):
    """Raised when the origin is passed where a punctured point is required."""
    pass


class MeasureValidationError(PppCiError):
    """Raised when a measure or measure spec violates its declared structure."""
    pass


class UndecidableMassError(PppCiError):
    """Raised when an unbounded rectangle cannot be classified from face declarations."""
    pass


class UnboundedRectangleError(PppCiError):
    """Raised when an operation needs a bounded rectangle and gets an unbounded one."""
    pass


class ZeroMassError(PppCiError):
    """Raised when normalizing a rectangle of zero mass."""
    pass


class MalformedKernelError(PppCiError):
    """Raised for kernel tables that are not layer-preserving probability tables."""
    pass


class QueryError(PppCiError):
    """Raised for conditional-independence queries with invalid index sets."""
    pass


class AssumptionViolationError(PppCiError):
    """Raised when a measure fails the face-mass assumption (every face aggregate 0 or infinite)."""

    def __init__(self, message: str, report: Optional["AssumptionReport"] = None):
        super().__init__(message)
        self.report = report


class UnsupportedCaseError(PppCiError):
    """Raised for cases the exact checkers refuse rather than guess."""
    pass


class InfiniteWindowError(PppCiError):
    """Raised when sampling a window of infinite mass."""
    pass


class TruncationError(PppCiError):
    """Raised when a window's mass is not exhausted by the simulated depth."""
    pass


class KernelRowMissingError(PppCiError):
    """Raised when a kernel has no row for a realized point."""
    pass


class IntegrabilityError(PppCiError):
    """Raised when a Poisson integral lacks an integrability certificate."""
    pass


class BinningError(PppCiError):
    """Raised for under-pooled or degenerate chi-square binning."""
    pass


class ConfigError(PppCiError):
    """Raised for invalid experiment configuration."""
    pass


# =============================================================================
# Rationals
# =============================================================================

def parse_rational(value: Any) -> Fraction:
    """Parse an int, a ``"p/q"`` string, a decimal string or a Fraction into a Fraction.

    Floats are accepted through their shortest decimal repr, so ``0.2`` becomes ``1/5``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"not a rational: {value!r}") from e
    raise ValueError(f"not a rational: {value!r}")


def format_rational(value: Fraction) -> str:
    """Format a Fraction as ``"p/q"`` (or ``"p"`` for integers)."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


Rational = Annotated[
    Fraction,
    PlainValidator(parse_rational),
    PlainSerializer(format_rational, return_type=str),
    WithJsonSchema({"type": "string", "pattern": r"^-?\d+(/\d+)?$", "examples": ["3", "1/4"]}),
]

RationalPoint = tuple[Rational, ...]

Point = tuple[Fraction, ...]


def format_point(point: Point) -> str:
    """Format a point as ``(p/q, ...)`` for messages."""
    return "(" + ", ".join(format_rational(x) for x in point) + ")"


# =============================================================================
# Mass classes
# =============================================================================

class MassKind(str, Enum):
    """Mass classes attached to faces and regions."""
    ZERO = "zero"
    FINITE = "finite"
    INFINITE = "infinite"


class MassClass(BaseModel):
    """Mass of a region: zero, a positive finite rational, or infinite.

    Sums follow measure arithmetic: infinite dominates, finite totals add.
    """
    model_config = ConfigDict(frozen=True)

    kind: MassKind = Field(description="Zero, finite or infinite")
    total: Optional[Rational] = Field(default=None, description="Total mass for finite classes")

    @model_validator(mode="after")
    def check_total(self) -> "MassClass":
        if self.kind is MassKind.FINITE:
            if self.total is None or self.total <= 0:
                raise ValueError("finite mass classes need a positive total")
        elif self.total is not None:
            raise ValueError(f"{self.kind.value} mass classes carry no total")
        return self

    @classmethod
    def zero(cls) -> "MassClass":
        return cls(kind=MassKind.ZERO)

    @classmethod
    def infinite(cls) -> "MassClass":
        return cls(kind=MassKind.INFINITE)

    @classmethod
    def of(cls, value: Fraction) -> "MassClass":
        """Class of an exact nonnegative mass."""
        if value < 0:
            raise ValueError(f"negative mass {value}")
        if value == 0:
            return cls.zero()
        return cls(kind=MassKind.FINITE, total=value)

    @property
    def is_zero(self) -> bool:
        return self.kind is MassKind.ZERO

    @property
    def is_infinite(self) -> bool:
        return self.kind is MassKind.INFINITE

    @property
    def is_finite(self) -> bool:
        return self.kind is MassKind.FINITE

    @property
    def value(self) -> Fraction:
        """Exact mass; raises for infinite classes."""
        if self.kind is MassKind.INFINITE:
            raise ValueError("infinite mass has no finite value")
        return self.total if self.total is not None else Fraction(0)

    def __add__(self, other: "MassClass") -> "MassClass":
        if self.is_infinite or other.is_infinite:
            return MassClass.infinite()
        return MassClass.of(self.value + other.value)

    def scale(self, factor: Fraction) -> "MassClass":
        """Multiply by a nonnegative rational factor."""
        if factor < 0:
            raise ValueError("mass classes scale by nonnegative factors only")
        if factor == 0 or self.is_zero:
            return MassClass.zero()
        if self.is_infinite:
            return self
        return MassClass.of(self.value * factor)

    def __str__(self) -> str:
        if self.is_finite:
            return f"finite({format_rational(self.value)})"
        return self.kind.value


def sum_mass_classes(classes: Any) -> MassClass:
    """Sum an iterable of mass classes."""
    total = MassClass.zero()
    for mass in classes:
        total = total + mass
    return total


# =============================================================================
# Coordinate sets and rectangles
# =============================================================================

def _depth_bound(distance: Fraction, attained: bool) -> int:
    """Smallest h >= 1 with every |x| >= distance (strict if attained is False) above 2^-h."""
    h = 1
    while True:
        threshold = Fraction(1, 2 ** h)
        if distance > threshold or (distance == threshold and not attained):
            return h
        h += 1


class IntervalSet(BaseModel):
    """Interval of the real line; ``None`` endpoints are unbounded."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["interval"] = "interval"
    lo: Optional[Rational] = Field(default=None, description="Lower endpoint (None = -inf)")
    hi: Optional[Rational] = Field(default=None, description="Upper endpoint (None = +inf)")
    lo_open: bool = Field(default=True, description="Whether the lower endpoint is excluded")
    hi_open: bool = Field(default=False, description="Whether the upper endpoint is excluded")

    def contains(self, x: Fraction) -> bool:
        if self.lo is not None and (x < self.lo or (x == self.lo and self.lo_open)):
            return False
        if self.hi is not None and (x > self.hi or (x == self.hi and self.hi_open)):
            return False
        return True

    def is_empty(self) -> bool:
        if self.lo is None or self.hi is None:
            return False
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and (self.lo_open or self.hi_open)

    def depth_bound(self, exclude_zero: bool = False) -> Optional[int]:
        if self.is_empty():
            return 1
        if self.lo is not None and self.lo >= 0:
            if self.lo == 0 and (exclude_zero or self.lo_open):
                return None
            return _depth_bound(self.lo, attained=not self.lo_open)
        if self.hi is not None and self.hi <= 0:
            if self.hi == 0 and (exclude_zero or self.hi_open):
                return None
            return _depth_bound(-self.hi, attained=not self.hi_open)
        return None

    def covers_unit_half_line(self, sign: int) -> bool:
        if sign > 0:
            lo_ok = self.lo is None or self.lo <= 0
            hi_ok = self.hi is None or self.hi > 1 or (self.hi == 1 and not self.hi_open)
        else:
            lo_ok = self.lo is None or self.lo < -1 or (self.lo == -1 and not self.lo_open)
            hi_ok = self.hi is None or self.hi >= 0
        return lo_ok and hi_ok


class ValueSet(BaseModel):
    """Finite set of values."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["values"] = "values"
    values: tuple[Rational, ...] = Field(default=(), description="Members of the set")

    def contains(self, x: Fraction) -> bool:
        return x in self.values

    def depth_bound(self, exclude_zero: bool = False) -> Optional[int]:
        members = [v for v in self.values if v != 0] if exclude_zero else list(self.values)
        if not members:
            return 1
        if 0 in members:
            return None
        return _depth_bound(min(abs(v) for v in members), attained=True)

    def covers_unit_half_line(self, sign: int) -> bool:
        return False


class AbsAboveSet(BaseModel):
    """The set ``{x : |x| > threshold}``."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["abs_above"] = "abs_above"
    threshold: Rational = Field(description="Nonnegative threshold")

    def contains(self, x: Fraction) -> bool:
        return abs(x) > self.threshold

    def depth_bound(self, exclude_zero: bool = False) -> Optional[int]:
        if self.threshold <= 0:
            return None
        return _depth_bound(self.threshold, attained=False)

    def covers_unit_half_line(self, sign: int) -> bool:
        return self.threshold <= 0


class FullLine(BaseModel):
    """The whole real line."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["full"] = "full"

    def contains(self, x: Fraction) -> bool:
        return True

    def depth_bound(self, exclude_zero: bool = False) -> Optional[int]:
        return None

    def covers_unit_half_line(self, sign: int) -> bool:
        return True


class UnionSet(BaseModel):
    """Union of coordinate sets."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["union"] = "union"
    parts: tuple["CoordinateSet", ...] = Field(description="Member sets")

    def contains(self, x: Fraction) -> bool:
        return any(part.contains(x) for part in self.parts)

    def depth_bound(self, exclude_zero: bool = False) -> Optional[int]:
        bounds = [part.depth_bound(exclude_zero) for part in self.parts]
        if not bounds:
            return 1
        if any(b is None for b in bounds):
            return None
        return max(bounds)  # type: ignore[type-var]

    def covers_unit_half_line(self, sign: int) -> bool:
        return any(part.covers_unit_half_line(sign) for part in self.parts)


CoordinateSet = Annotated[
    Union[IntervalSet, ValueSet, AbsAboveSet, FullLine, UnionSet],
    Field(discriminator="kind"),
]

UnionSet.model_rebuild()

_FULL_LINE = FullLine()


class TestRectangle(BaseModel):
    """Product set over coordinate labels; labels without an entry are the full line.

    A rectangle is bounded when some coordinate set is bounded away from 0;
    ``depth_bound`` then returns the witness h with R inside L_{h,V}.
    """
    __test__ = False
    model_config = ConfigDict(frozen=True)

    name: Optional[str] = Field(default=None, description="Window id used in reports and CSVs")
    sets: dict[int, CoordinateSet] = Field(default_factory=dict, description="Label -> coordinate set")

    @classmethod
    def reduced(cls, h: int, v: int) -> "TestRectangle":
        """The reduced test set R_{h,v} = {|y_v| > 2^-h} x E_{V minus v}."""
        return cls(name=f"R_{{{h},{v}}}", sets={v: AbsAboveSet(threshold=Fraction(1, 2 ** h))})

    def set_for(self, label: int) -> Any:
        return self.sets.get(label, _FULL_LINE)

    def contains(self, point: Point, labels: tuple[int, ...]) -> bool:
        return all(self.set_for(label).contains(x) for label, x in zip(labels, point))

    def depth_bound(self, labels: tuple[int, ...]) -> Optional[int]:
        """Bound witness h (R inside L_{h,V}) or None when R is unbounded."""
        bounds = [self.set_for(label).depth_bound() for label in labels]
        finite = [b for b in bounds if b is not None]
        return min(finite) if finite else None

    def labels_used(self) -> frozenset[int]:
        return frozenset(self.sets)

    def describe(self) -> str:
        if self.name:
            return self.name
        return " x ".join(f"y{label}:{self.sets[label]!r}" for label in sorted(self.sets)) or "E"


# =============================================================================
# Conditional-independence queries and verdicts
# =============================================================================

def _format_set(s: frozenset[int]) -> str:
    return ",".join(str(v) for v in sorted(s))


class CiQuery(BaseModel):
    """Query A _|_ B | C over coordinate labels."""
    model_config = ConfigDict(frozen=True)

    a: frozenset[int] = Field(default_factory=frozenset, description="Set A")
    b: frozenset[int] = Field(default_factory=frozenset, description="Set B")
    c: frozenset[int] = Field(default_factory=frozenset, description="Conditioning set C")

    @model_validator(mode="after")
    def check_disjoint(self) -> "CiQuery":
        if self.a & self.b or self.a & self.c or self.b & self.c:
            raise ValueError(f"query sets must be pairwise disjoint: {self}")
        if any(v < 1 for v in self.a | self.b | self.c):
            raise ValueError("coordinate labels start at 1")
        return self

    @classmethod
    def of(cls, a: Any = (), b: Any = (), c: Any = ()) -> "CiQuery":
        try:
            return cls(a=frozenset(a), b=frozenset(b), c=frozenset(c))
        except ValueError as e:
            raise QueryError(str(e)) from e

    @classmethod
    def parse(cls, text: str) -> "CiQuery":
        """Parse ``"A _|_ B | C"`` with comma-separated labels; empty sides are empty sets."""
        if "_|_" not in text:
            raise QueryError(f"query must look like 'A _|_ B | C': {text!r}")
        left, rest = text.split("_|_", 1)
        right, _, cond = rest.partition("|")

        def labels(part: str) -> frozenset[int]:
            part = part.strip()
            if not part:
                return frozenset()
            try:
                return frozenset(int(tok) for tok in part.split(",") if tok.strip())
            except ValueError as e:
                raise QueryError(f"bad label list {part!r} in query {text!r}") from e

        return cls.of(labels(left), labels(right), labels(cond))

    @property
    def labels(self) -> frozenset[int]:
        return self.a | self.b | self.c

    @property
    def is_trivial(self) -> bool:
        return not self.a or not self.b

    def swapped(self) -> "CiQuery":
        return CiQuery(a=self.b, b=self.a, c=self.c)

    def __str__(self) -> str:
        return f"{_format_set(self.a)} _|_ {_format_set(self.b)} | {_format_set(self.c)}".rstrip()


class CiMethod(str, Enum):
    """Characterizations used to decide a CI relation."""
    DEFINITION_B = "definition_b"
    REDUCED_C = "reduced_c"
    KERNEL_D = "kernel_d"
    RANDOM_RECTANGLES = "random_rectangles"


class CiWitness(BaseModel):
    """Concrete evidence that a CI relation fails.

    ``rectangle`` witnesses carry the test rectangle, its depth and the violating
    (a, b, c) triple with exact P(a,b,c)P(c) and P(a,c)P(b,c);
    ``kernel_row`` witnesses carry the base atom c and the (a, b) cell with the
    joint row value and the product of marginal rows; ``face`` witnesses carry the
    face whose mass breaks the null condition.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["rectangle", "kernel_row", "face"] = Field(description="Witness type")
    depth: int = Field(description="Depth at which the violation was established")
    rectangle: Optional[TestRectangle] = Field(default=None, description="Violating test rectangle")
    a: Optional[RationalPoint] = Field(default=None, description="Value of y_A")
    b: Optional[RationalPoint] = Field(default=None, description="Value of y_B")
    c: Optional[RationalPoint] = Field(default=None, description="Value of y_C")
    lhs: Optional[Rational] = Field(default=None, description="Joint side of the factorization")
    rhs: Optional[Rational] = Field(default=None, description="Product side of the factorization")
    face: Optional[tuple[int, ...]] = Field(default=None, description="Face breaking the null condition")
    face_mass: Optional[MassClass] = Field(default=None, description="Declared mass of that face")

    def describe(self) -> str:
        if self.kind == "face":
            return f"face {{{_format_set(frozenset(self.face or ()))}}} has mass {self.face_mass}"
        where = self.rectangle.describe() if self.rectangle else f"base atom {format_point(self.c or ())}"
        return (
            f"{where}: a={format_point(self.a or ())} b={format_point(self.b or ())} "
            f"c={format_point(self.c or ())}: {format_rational(self.lhs or Fraction(0))} != "
            f"{format_rational(self.rhs or Fraction(0))}"
        )


class CiVerdict(BaseModel):
    """Outcome of one CI check, qualified by the depth it reached."""
    query: str = Field(description="Query as 'A _|_ B | C'")
    method: CiMethod = Field(description="Characterization used")
    depth: int = Field(description="Depth H checked")
    holds: bool = Field(description="No violation up to depth H")
    witness: Optional[CiWitness] = Field(default=None, description="Violation evidence when holds is False")
    rectangles_checked: int = Field(default=0, description="Number of positive-mass rectangles evaluated")
    rows_checked: int = Field(default=0, description="Number of kernel rows evaluated")
    note: Optional[str] = Field(default=None, description="Remarks (trivial query, deferral)")

    @model_validator(mode="after")
    def witness_on_failure(self) -> "CiVerdict":
        if not self.holds and self.witness is None:
            raise ValueError("failing verdicts must carry a witness")
        return self


class EquivalenceReport(BaseModel):
    """Cross-check of the three characterizations on one query."""
    query: str = Field(description="Query")
    depth: int = Field(description="Depth H")
    verdicts: list[CiVerdict] = Field(description="Verdicts of definition_b, reduced_c, kernel_d")
    auxiliary: Optional[CiVerdict] = Field(default=None, description="Random-rectangle oracle verdict")
    agree: bool = Field(description="Whether all verdicts coincide")

    @property
    def holds(self) -> bool:
        return all(v.holds for v in self.verdicts)


class PairAggregate(BaseModel):
    """Aggregated face mass of {y_A != 0, y_B = 0}."""
    a: tuple[int, ...] = Field(description="Set A (nonempty)")
    b: tuple[int, ...] = Field(description="Set B (possibly empty)")
    mass: MassClass = Field(description="Aggregate mass class")

    @property
    def ok(self) -> bool:
        return not self.mass.is_finite


class AssumptionReport(BaseModel):
    """Report of the face-mass assumption over every disjoint pair (A, B)."""
    labels: tuple[int, ...] = Field(description="Coordinate labels")
    pairs: list[PairAggregate] = Field(description="All evaluated pairs")

    @property
    def passed(self) -> bool:
        return all(p.ok for p in self.pairs)

    @property
    def offending(self) -> list[PairAggregate]:
        return [p for p in self.pairs if not p.ok]


class BivariateCase(str, Enum):
    """Cases of the bivariate independence classification."""
    TRIVIAL_ZERO = "a"
    SEPARATED_B1 = "b1"
    SEPARATED_B2 = "b2"
    SEPARATED_B3 = "b3"
    FINITE_FACTORIZED_C = "c"
    FINITE_FACTORIZED_D = "d"
    NOT_INDEPENDENT = "not_independent"

    @property
    def independent(self) -> bool:
        return self is not BivariateCase.NOT_INDEPENDENT


class BivariateClassification(BaseModel):
    """Classification of a measure on a punctured two-block space."""
    case: BivariateCase = Field(description="Case of the classification")
    blocks: tuple[tuple[int, ...], tuple[int, ...]] = Field(description="The two blocks")
    total: MassClass = Field(description="Mass of the punctured space")
    interior: MassClass = Field(description="Mass of {y_1 != 0, y_2 != 0}")
    mass_y1_zero: MassClass = Field(description="Mass of {y_1 = 0}")
    mass_y2_zero: MassClass = Field(description="Mass of {y_2 = 0}")


class AxiomViolation(BaseModel):
    """Semigraphoid axiom instance whose premise holds but conclusion fails."""
    axiom: Literal["symmetry", "decomposition", "weak_union", "contraction"]
    a: tuple[int, ...]
    b: tuple[int, ...]
    c: tuple[int, ...]
    d: tuple[int, ...]
    failed_conclusion: str = Field(description="Conclusion that failed")


class SemigraphoidReport(BaseModel):
    """Exhaustive semigraphoid check over ordered disjoint quadruples."""
    labels: tuple[int, ...] = Field(description="Coordinate labels")
    depth: int = Field(description="Depth H")
    quadruples: int = Field(description="Quadruples enumerated")
    premises_held: dict[str, int] = Field(description="Instances with a true premise, per axiom")
    oracle_calls: int = Field(description="Distinct CI queries evaluated")
    violations: list[AxiomViolation] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


# =============================================================================
# Simulation and statistics
# =============================================================================

class CountSample(BaseModel):
    """Replicate x window matrix of point counts."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    windows: tuple[str, ...] = Field(description="Window ids, one per column")
    matrix: np.ndarray = Field(description="Integer counts, shape (replicates, windows)")
    seeds: tuple[int, ...] = Field(description="Seed and stream key that produced the sample")
    depth: int = Field(description="Depth H simulated")
    block_size: int = Field(description="Replicates per worker block")

    @model_validator(mode="after")
    def check_shape(self) -> "CountSample":
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.windows):
            raise ValueError(f"count matrix shape {self.matrix.shape} does not match {len(self.windows)} windows")
        if self.matrix.size and self.matrix.min() < 0:
            raise ValueError("counts must be nonnegative")
        return self

    @property
    def replicates(self) -> int:
        return int(self.matrix.shape[0])

    def column(self, window: str) -> np.ndarray:
        return self.matrix[:, self.windows.index(window)]


class TestReport(BaseModel):
    """Result of one statistical test, with everything needed to reproduce it."""
    __test__ = False

    name: str = Field(description="Test name")
    statistic: str = Field(description="Statistic name (chi2, z, ...)")
    value: float = Field(description="Statistic value")
    dof: Optional[int] = Field(default=None, description="Degrees of freedom")
    p_value: Optional[float] = Field(default=None, description="p-value")
    z_score: Optional[float] = Field(default=None, description="Standardized deviation")
    threshold: float = Field(description="Pass threshold (p > threshold or |z| < threshold)")
    passed: bool = Field(description="Verdict")
    degenerate: bool = Field(default=False, description="Zero-variance case reported rather than tested")
    inputs: dict[str, Any] = Field(default_factory=dict, description="Echoed inputs")
    components: list["TestReport"] = Field(default_factory=list, description="Per-window sub-reports")


class LaplaceReport(BaseModel):
    """Monte-Carlo Laplace functional against its closed form."""
    mc_estimate: float
    closed_form: float
    stderr: float
    z_score: float
    replicates: int
    depth: int


class CondMoments(BaseModel):
    """Exact conditional means and covariance of window counts given a realized pattern."""
    mean_1: Rational
    mean_2: Rational
    cov: Rational


class SuiteRow(BaseModel):
    """One line of a verification suite summary."""
    suite: str
    case: str
    statistic: str
    value: str
    threshold: str
    passed: bool
