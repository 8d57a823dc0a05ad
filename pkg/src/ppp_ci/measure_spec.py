"""Measure specification files.

A measure spec is a JSON document describing how to build a layered measure.
The top-level ``family`` field selects the construction:

- ``geometric_axis``: atoms ``weight * 2^-k`` on the diagonal of ``axes``;
- ``kernel_product``: a base spec on the C coordinates with scale-covariant
  kernels for A and B, plus optional axis parts on {y_C = 0};
- ``joint_kernel``: the same with one coupled (A, B) table;
- ``raw_layers``: an explicit finite list of atoms;
- ``perp_of``: the perp measure of a source spec for a partition A, B, C;
- ``superposition``: the sum of component specs.

Kernel outcomes are multiplier vectors in [-1, 1]; at a base point y_C the
emitted value is ``multiplier * max |y_C|``.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from ppp_ci.measure_core import (
    Atom,
    JointScaledKernel,
    LayeredDiscreteMeasure,
    PerpVariant,
    PuncturedSpace,
    ScaledKernel,
    build_perp_measure,
    from_atoms,
    from_joint_kernel,
    from_kernel_product,
    geometric_axis,
    superpose,
)
from ppp_ci.models import MassClass, MassKind, MeasureValidationError, PppCiError, Rational

logger = logging.getLogger(__name__)


# =============================================================================
# Building blocks
# =============================================================================

class FaceClassDecl(BaseModel):
    """Declared mass class of one face."""
    model_config = ConfigDict(populate_by_name=True)

    face: list[int] = Field(description="Coordinates that are non-zero on the face")
    mass_class: MassKind = Field(alias="class", description="zero, finite or infinite")
    total: Optional[Rational] = Field(default=None, description="Total mass for finite faces")

    @model_validator(mode="after")
    def check_total(self) -> "FaceClassDecl":
        if not self.face:
            raise ValueError("faces must name at least one coordinate")
        if self.mass_class is MassKind.FINITE and (self.total is None or self.total <= 0):
            raise ValueError(f"finite face {self.face} needs a positive total")
        if self.mass_class is not MassKind.FINITE and self.total is not None:
            raise ValueError(f"face {self.face} is {self.mass_class.value} and takes no total")
        return self

    def to_mass_class(self) -> MassClass:
        return MassClass(kind=self.mass_class, total=self.total)


class KernelOutcome(BaseModel):
    """Multiplier vector of a single-block kernel and its probability."""
    value: list[Rational] = Field(description="Multipliers in [-1, 1], one per block coordinate")
    prob: Rational = Field(description="Probability of the outcome")


class JointOutcome(BaseModel):
    """Coupled multiplier vectors for blocks A and B and their probability."""
    a: list[Rational] = Field(description="Multipliers for the A coordinates")
    b: list[Rational] = Field(description="Multipliers for the B coordinates")
    prob: Rational = Field(description="Probability of the outcome")


class RawAtom(BaseModel):
    point: list[Rational] = Field(description="Coordinates, inside the unit box")
    weight: Rational = Field(description="Positive weight")


class _SpecBase(BaseModel):
    """Fields shared by every family."""
    model_config = ConfigDict(extra="forbid")

    dims: int = Field(ge=1, description="Number of coordinates d (labels 1..d)")
    name: Optional[str] = Field(default=None, description="Human-readable name")
    face_classes: list[FaceClassDecl] = Field(
        default_factory=list, description="Face classes overriding the derived ones"
    )

    @model_validator(mode="after")
    def check_faces(self) -> "_SpecBase":
        for decl in self.face_classes:
            if any(v < 1 or v > self.dims for v in decl.face):
                raise ValueError(f"face {decl.face} is outside 1..{self.dims}")
        return self


def _check_blocks(dims: int, *blocks: list[int]) -> None:
    labels = [v for block in blocks for v in block]
    if sorted(labels) != list(range(1, dims + 1)):
        raise ValueError(f"blocks {list(blocks)} must partition 1..{dims}")


# =============================================================================
# Families
# =============================================================================

class GeometricAxisSpec(_SpecBase):
    family: Literal["geometric_axis"] = "geometric_axis"
    axes: list[int] = Field(description="Coordinates carrying the atoms")
    weight: Rational = Field(default=1, description="Mass of every atom")

    @model_validator(mode="after")
    def check_axes(self) -> "GeometricAxisSpec":
        if not self.axes or any(v < 1 or v > self.dims for v in self.axes):
            raise ValueError(f"axes {self.axes} must be a nonempty subset of 1..{self.dims}")
        if self.weight <= 0:
            raise ValueError("weight must be positive")
        return self


class KernelProductSpec(_SpecBase):
    family: Literal["kernel_product"] = "kernel_product"
    a: list[int] = Field(description="Coordinates of block A")
    b: list[int] = Field(description="Coordinates of block B")
    c: list[int] = Field(description="Conditioning coordinates C")
    base: "MeasureSpec" = Field(description="Spec of the base measure on E_C (dims = |C|)")
    kernel_a: list[KernelOutcome] = Field(description="Outcomes of h_A")
    kernel_b: list[KernelOutcome] = Field(description="Outcomes of h_B")
    axis_parts: list["MeasureSpec"] = Field(default_factory=list, description="Parts on {y_C = 0}")

    @model_validator(mode="after")
    def check_layout(self) -> "KernelProductSpec":
        _check_blocks(self.dims, self.a, self.b, self.c)
        if self.base.dims != len(self.c):
            raise ValueError(f"base spec has {self.base.dims} coordinates, C has {len(self.c)}")
        return self


class JointKernelSpec(_SpecBase):
    family: Literal["joint_kernel"] = "joint_kernel"
    a: list[int] = Field(description="Coordinates of block A")
    b: list[int] = Field(description="Coordinates of block B")
    c: list[int] = Field(description="Conditioning coordinates C")
    base: "MeasureSpec" = Field(description="Spec of the base measure on E_C (dims = |C|)")
    kernel_ab: list[JointOutcome] = Field(description="Coupled outcomes of (A, B)")
    axis_parts: list["MeasureSpec"] = Field(default_factory=list, description="Parts on {y_C = 0}")

    @model_validator(mode="after")
    def check_layout(self) -> "JointKernelSpec":
        _check_blocks(self.dims, self.a, self.b, self.c)
        if self.base.dims != len(self.c):
            raise ValueError(f"base spec has {self.base.dims} coordinates, C has {len(self.c)}")
        return self


class RawLayersSpec(_SpecBase):
    family: Literal["raw_layers"] = "raw_layers"
    atoms: list[RawAtom] = Field(default_factory=list, description="Explicit atoms")

    @model_validator(mode="after")
    def check_atoms(self) -> "RawLayersSpec":
        for atom in self.atoms:
            if len(atom.point) != self.dims:
                raise ValueError(f"atom {atom.point} needs {self.dims} coordinates")
        return self


class PerpOfSpec(_SpecBase):
    family: Literal["perp_of"] = "perp_of"
    source: "MeasureSpec" = Field(description="Measure whose perp measure is built")
    a: list[int] = Field(description="Coordinates of block A")
    b: list[int] = Field(description="Coordinates of block B")
    c: list[int] = Field(description="Coordinates of block C")
    variant: PerpVariant = Field(default=PerpVariant.MARGINAL, description="marginal or separated")

    @model_validator(mode="after")
    def check_layout(self) -> "PerpOfSpec":
        _check_blocks(self.dims, self.a, self.b, self.c)
        if self.source.dims != self.dims:
            raise ValueError("perp_of keeps the dimension of its source")
        return self


class SuperpositionSpec(_SpecBase):
    family: Literal["superposition"] = "superposition"
    parts: list["MeasureSpec"] = Field(description="Component specs on the same space")

    @model_validator(mode="after")
    def check_parts(self) -> "SuperpositionSpec":
        if not self.parts:
            raise ValueError("a superposition needs at least one part")
        if any(p.dims != self.dims for p in self.parts):
            raise ValueError("superposed parts must share dims")
        return self


MeasureSpec = Annotated[
    Union[
        GeometricAxisSpec,
        KernelProductSpec,
        JointKernelSpec,
        RawLayersSpec,
        PerpOfSpec,
        SuperpositionSpec,
    ],
    Field(discriminator="family"),
]

for _model in (KernelProductSpec, JointKernelSpec, PerpOfSpec, SuperpositionSpec):
    _model.model_rebuild()

MeasureSpecAdapter: TypeAdapter = TypeAdapter(MeasureSpec)


# =============================================================================
# Loading and building
# =============================================================================

def parse_measure_spec(data: Any, source: str = "<inline>") -> Any:
    """Validate a decoded JSON document as a measure spec.

    Raises:
        MeasureValidationError: If the document does not match any family.
    """
    try:
        return MeasureSpecAdapter.validate_python(data)
    except ValidationError as e:
        raise MeasureValidationError(f"invalid measure spec in {source}: {e}") from e


def load_measure_spec(path: str) -> Any:
    """Read and validate a measure spec file."""
    spec_file = Path(path).expanduser()
    if not spec_file.exists():
        raise MeasureValidationError(f"measure spec file not found: {spec_file}")
    logger.info(f"Loading measure spec from {spec_file}")
    try:
        with open(spec_file, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MeasureValidationError(f"{spec_file} is not valid JSON: {e}") from e
    return parse_measure_spec(data, str(spec_file))


def measure_spec_schema() -> dict[str, Any]:
    """JSON schema of measure spec documents."""
    return MeasureSpecAdapter.json_schema()


def spec_digest(spec: Any) -> str:
    return hashlib.sha256(spec.model_dump_json().encode("utf-8")).hexdigest()


def _relabel(spec: Any, measure: LayeredDiscreteMeasure, labels: list[int]) -> LayeredDiscreteMeasure:
    """Move a measure built on 1..k onto the given labels (kept in ascending order)."""
    target = tuple(sorted(labels))
    if tuple(labels) != target:
        raise MeasureValidationError(f"block {labels} must be listed in ascending order")
    if measure.labels == target:
        return measure
    mapping = dict(zip(measure.labels, target))
    classes = {frozenset(mapping[v] for v in face): m for face, m in measure.face_classes.items()}
    return LayeredDiscreteMeasure(PuncturedSpace(target), measure.layer, classes, measure.provenance)


def _scaled(labels: list[int], outcomes: list[KernelOutcome]) -> ScaledKernel:
    return ScaledKernel(tuple(labels), tuple((tuple(o.value), o.prob) for o in outcomes))


def build_measure(spec: Any) -> LayeredDiscreteMeasure:
    """Build the layered measure described by a spec.

    Raises:
        MeasureValidationError: If the construction is inconsistent.
        MalformedKernelError: If a kernel table is not a valid probability table.
    """
    try:
        measure = _build(spec)
    except PppCiError:
        raise
    except ValueError as e:
        raise MeasureValidationError(str(e)) from e
    if spec.face_classes:
        classes = measure.face_classes
        for decl in spec.face_classes:
            classes[frozenset(decl.face)] = decl.to_mass_class()
        measure = LayeredDiscreteMeasure(measure.space, measure.layer, classes, measure.provenance)
    return measure


def _build(spec: Any) -> LayeredDiscreteMeasure:
    labels = list(range(1, spec.dims + 1))
    if isinstance(spec, GeometricAxisSpec):
        return geometric_axis(labels, spec.axes, spec.weight)
    if isinstance(spec, RawLayersSpec):
        return from_atoms(
            labels, [Atom(tuple(a.point), a.weight) for a in spec.atoms], provenance=f"raw_layers({spec_digest(spec)[:12]})"
        )
    if isinstance(spec, (KernelProductSpec, JointKernelSpec)):
        base = _relabel(spec.base, build_measure(spec.base), spec.c)
        axis_parts = [build_measure(p) for p in spec.axis_parts]
        if isinstance(spec, KernelProductSpec):
            return from_kernel_product(base, _scaled(spec.a, spec.kernel_a), _scaled(spec.b, spec.kernel_b), axis_parts)
        joint = JointScaledKernel(
            tuple(spec.a), tuple(spec.b), tuple(((tuple(o.a), tuple(o.b)), o.prob) for o in spec.kernel_ab)
        )
        return from_joint_kernel(base, joint, axis_parts)
    if isinstance(spec, PerpOfSpec):
        return build_perp_measure(build_measure(spec.source), spec.a, spec.b, spec.c, spec.variant)
    if isinstance(spec, SuperpositionSpec):
        return superpose(*(build_measure(p) for p in spec.parts))
    raise MeasureValidationError(f"unknown measure family {getattr(spec, 'family', spec)!r}")
