"""Layered discrete measures on punctured product spaces.

A measure lives on E° = E minus the origin, with E = R^d and coordinates labelled
1..d (or any sorted label tuple after marginalization). Mass is carried by atoms
sorted into layers: layer h holds the points with max |y_v| in (2^-h, 2^-h+1].
Layer 1 is the outermost one and atoms outside the unit box are rejected.

Each layer is finite, so every bounded rectangle has exact rational mass, while
faces {y_S != 0, y_rest = 0} carry a declared mass class that lets unbounded
regions be classified as zero, finite or infinite.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from ppp_ci.models import (
    AssumptionReport,
    MalformedKernelError,
    MassClass,
    MassKind,
    MeasureValidationError,
    OriginError,
    PairAggregate,
    Point,
    TestRectangle,
    UnboundedRectangleError,
    UndecidableMassError,
    ZeroMassError,
    format_point,
    sum_mass_classes,
)

logger = logging.getLogger(__name__)

Face = frozenset[int]

# Depth up to which atoms are inspected when deciding whether an unbounded
# rectangle covers the support of an infinite face.
SCAN_DEPTH = 8


# =============================================================================
# Points, faces and layers
# =============================================================================

def layer_threshold(h: int) -> Fraction:
    """Lower edge 2^-h of layer h."""
    return Fraction(1, 2 ** h)


def layer_of_magnitude(magnitude: Fraction) -> int:
    """Layer index of a point with max |y_v| equal to ``magnitude``."""
    if magnitude <= 0:
        raise OriginError("the origin belongs to no layer")
    if magnitude > 1:
        raise MeasureValidationError(f"atom magnitude {magnitude} lies outside the unit box")
    h = 1
    while magnitude <= layer_threshold(h):
        h += 1
    return h


def layer_of(point: Point) -> int:
    """Layer index of a punctured point."""
    return layer_of_magnitude(max((abs(x) for x in point), default=Fraction(0)))


def face_of(point: Point, labels: Optional[Sequence[int]] = None) -> Face:
    """Face {v : y_v != 0} of a point, as 1-based labels.

    Raises:
        OriginError: If the point is the origin.
    """
    if labels is None:
        labels = range(1, len(point) + 1)
    face = frozenset(label for label, x in zip(labels, point) if x != 0)
    if not face:
        raise OriginError("the origin has no face")
    return face


def is_origin(point: Point) -> bool:
    return all(x == 0 for x in point)


def in_localization(point: Point, h: int, subset: Iterable[int], labels: Sequence[int]) -> bool:
    """Membership of a point in L_{h,A} = {exists a in A with |y_a| > 2^-h}."""
    wanted = set(subset)
    threshold = layer_threshold(h)
    return any(abs(x) > threshold for label, x in zip(labels, point) if label in wanted)


def project_point(point: Point, labels: Sequence[int], onto: Sequence[int]) -> Point:
    """Coordinates of ``point`` (indexed by ``labels``) restricted to ``onto``."""
    index = {label: i for i, label in enumerate(labels)}
    return tuple(point[index[label]] for label in onto)


def compose_point(labels: Sequence[int], *parts: tuple[Sequence[int], Point]) -> Point:
    """Assemble a point on ``labels`` from (sub-labels, sub-point) pieces; missing labels are 0."""
    values: dict[int, Fraction] = {}
    for sub_labels, sub_point in parts:
        for label, x in zip(sub_labels, sub_point):
            values[label] = x
    return tuple(values.get(label, Fraction(0)) for label in labels)


def point_sort_key(point: Point) -> tuple[int, Point]:
    return (layer_of(point), point)


@dataclass(frozen=True, slots=True)
class Atom:
    """Weighted point of a layered measure."""
    point: Point
    weight: Fraction


@dataclass(frozen=True)
class PuncturedSpace:
    """Coordinate labels of a punctured product space."""
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise MeasureValidationError("a punctured space needs at least one coordinate")
        if list(self.labels) != sorted(set(self.labels)):
            raise MeasureValidationError(f"labels must be sorted and distinct: {self.labels}")

    @classmethod
    def of_dims(cls, dims: int) -> "PuncturedSpace":
        return cls(tuple(range(1, dims + 1)))

    @property
    def dims(self) -> int:
        return len(self.labels)

    @property
    def origin(self) -> Point:
        return tuple(Fraction(0) for _ in self.labels)


def merge_atoms(atoms: Iterable[Atom]) -> tuple[Atom, ...]:
    """Merge atoms on equal points and sort them by point."""
    weights: dict[Point, Fraction] = defaultdict(Fraction)
    for atom in atoms:
        weights[atom.point] += atom.weight
    return tuple(Atom(point, weights[point]) for point in sorted(weights) if weights[point] != 0)


# =============================================================================
# Layered measure
# =============================================================================

class LayeredDiscreteMeasure:
    """Sigma-finite discrete measure given layer by layer.

    Args:
        space: Coordinate labels.
        generator: Callable returning the atoms of layer h (h >= 1).
        face_classes: Declared mass class per face; undeclared faces are zero.
        provenance: Short description of how the measure was built.
    """

    def __init__(
        self,
        space: PuncturedSpace,
        generator: Callable[[int], Iterable[Atom]],
        face_classes: Optional[Mapping[Face, MassClass]] = None,
        provenance: str = "measure",
    ):
        self.space = space
        self.provenance = provenance
        self._generator = generator
        self._layers: dict[int, tuple[Atom, ...]] = {}
        self._face_classes: dict[Face, MassClass] = {}
        for face, mass in (face_classes or {}).items():
            face = frozenset(face)
            if not face or not face <= set(space.labels):
                raise MeasureValidationError(f"face {sorted(face)} is not a face of {space.labels}")
            if not mass.is_zero:
                self._face_classes[face] = mass
        self._marginals: dict[tuple[int, ...], tuple["LayeredDiscreteMeasure", MassClass]] = {}
        self._assumption_report: Optional[AssumptionReport] = None

    @property
    def labels(self) -> tuple[int, ...]:
        return self.space.labels

    @property
    def dims(self) -> int:
        return self.space.dims

    def layer(self, h: int) -> tuple[Atom, ...]:
        """Atoms of layer h, merged and sorted; each atom is validated on first access."""
        if h < 1:
            raise ValueError(f"layers start at 1, got {h}")
        cached = self._layers.get(h)
        if cached is not None:
            return cached
        atoms = merge_atoms(self._generator(h))
        for atom in atoms:
            if len(atom.point) != self.dims:
                raise MeasureValidationError(
                    f"atom {format_point(atom.point)} has {len(atom.point)} coordinates, expected {self.dims}"
                )
            if atom.weight < 0:
                raise MeasureValidationError(f"negative weight at {format_point(atom.point)}")
            if is_origin(atom.point):
                raise MeasureValidationError("the origin carries no mass on a punctured space")
            found = layer_of(atom.point)
            if found != h:
                raise MeasureValidationError(
                    f"atom {format_point(atom.point)} generated in layer {h} belongs to layer {found}"
                )
        self._layers[h] = atoms
        return atoms

    def atoms_to_depth(self, depth: int) -> list[Atom]:
        """All atoms of layers 1..depth."""
        out: list[Atom] = []
        for h in range(1, depth + 1):
            out.extend(self.layer(h))
        return out

    def face_class(self, face: Iterable[int]) -> MassClass:
        return self._face_classes.get(frozenset(face), MassClass.zero())

    @property
    def face_classes(self) -> dict[Face, MassClass]:
        """Declared non-zero face classes."""
        return dict(self._face_classes)

    def total_class(self) -> MassClass:
        return sum_mass_classes(self._face_classes.values())

    def region_class(self, predicate: Callable[[Face], bool]) -> MassClass:
        """Sum of the face classes whose face satisfies ``predicate``."""
        return sum_mass_classes(m for f, m in self._face_classes.items() if predicate(f))

    def __repr__(self) -> str:
        return f"LayeredDiscreteMeasure(labels={self.labels}, provenance={self.provenance!r})"


def empty_measure(labels: Sequence[int]) -> LayeredDiscreteMeasure:
    """The zero measure."""
    return LayeredDiscreteMeasure(PuncturedSpace(tuple(labels)), lambda h: (), {}, "zero")


def declared_measure(labels: Sequence[int], face_classes: Mapping[Face, MassClass]) -> LayeredDiscreteMeasure:
    """Atom-free carrier of face declarations, for checks that only read face classes."""
    return LayeredDiscreteMeasure(
        PuncturedSpace(tuple(labels)), lambda h: (), face_classes, "declared face classes"
    )


def validate_measure(measure: LayeredDiscreteMeasure, depth: int = SCAN_DEPTH) -> None:
    """Check atoms up to ``depth`` against the face declarations.

    Raises:
        MeasureValidationError: If an atom sits on a zero face, or atoms on a
            finite face outweigh its declared total.
    """
    partial: dict[Face, Fraction] = defaultdict(Fraction)
    for atom in measure.atoms_to_depth(depth):
        face = face_of(atom.point, measure.labels)
        mass = measure.face_class(face)
        if mass.is_zero:
            raise MeasureValidationError(
                f"atom {format_point(atom.point)} lies on face {sorted(face)} declared zero"
            )
        partial[face] += atom.weight
        if mass.is_finite and partial[face] > mass.value:
            raise MeasureValidationError(
                f"atoms on face {sorted(face)} exceed the declared total {mass.value}"
            )
    if not check_localization_consistency(measure, depth):
        raise MeasureValidationError(f"localization sets of {measure!r} are not consistent")
    logger.debug(f"Validated {measure!r} up to depth {depth}")


def check_localization_consistency(measure: LayeredDiscreteMeasure, depth: int) -> bool:
    """Check L_{h, A u B} = L_{h,A} u L_{h,B} on every atom up to ``depth``."""
    labels = measure.labels
    atoms = measure.atoms_to_depth(depth)
    for a_set, b_set in _disjoint_pairs(labels, allow_empty_b=False):
        for h in range(1, depth + 1):
            for atom in atoms:
                joint = in_localization(atom.point, h, a_set | b_set, labels)
                split = in_localization(atom.point, h, a_set, labels) or in_localization(
                    atom.point, h, b_set, labels
                )
                if joint != split:
                    return False
    return True


# =============================================================================
# Rectangles
# =============================================================================

def _face_atoms(measure: LayeredDiscreteMeasure, face: Face, depth: int) -> Iterator[Atom]:
    for atom in measure.atoms_to_depth(depth):
        if face_of(atom.point, measure.labels) == face:
            yield atom


def _face_covered(measure: LayeredDiscreteMeasure, face: Face, rect: TestRectangle) -> bool:
    """Whether ``rect`` contains every point of ``face`` seen up to the scan depth.

    Coverage is decided per coordinate and sign: for each v in the face and each
    sign realized by the face's atoms, the set R_v must contain the unit half-line.
    """
    signs: dict[int, set[int]] = defaultdict(set)
    seen = False
    for atom in _face_atoms(measure, face, SCAN_DEPTH):
        seen = True
        for label, x in zip(measure.labels, atom.point):
            if label in face:
                signs[label].add(1 if x > 0 else -1)
    if not seen:
        return False
    return all(
        rect.set_for(label).covers_unit_half_line(sign)
        for label, label_signs in signs.items()
        for sign in label_signs
    )


def mass_on_rectangle(measure: LayeredDiscreteMeasure, rect: TestRectangle) -> MassClass:
    """Exact mass class of a rectangle.

    Bounded rectangles sum the atoms of layers 1..h. Unbounded ones are split by
    face: a face contributes nothing when R excludes 0 on a coordinate outside the
    face, is summed exactly when R is bounded away from 0 on a coordinate of the
    face, and contributes its declared class when R covers its support.

    Raises:
        UndecidableMassError: If some face is neither excluded, bounded nor covered.
    """
    labels = measure.labels
    bound = rect.depth_bound(labels)
    if bound is not None:
        return MassClass.of(
            sum((a.weight for a in measure.atoms_to_depth(bound) if rect.contains(a.point, labels)), Fraction(0))
        )

    total = MassClass.zero()
    undecidable: list[Face] = []
    for face, mass in sorted(measure.face_classes.items(), key=lambda kv: sorted(kv[0])):
        if any(label not in face and not rect.set_for(label).contains(Fraction(0)) for label in labels):
            continue
        face_bounds = [
            b for b in (rect.set_for(label).depth_bound(exclude_zero=True) for label in face) if b is not None
        ]
        if face_bounds:
            depth = min(face_bounds)
            exact = sum(
                (a.weight for a in _face_atoms(measure, face, depth) if rect.contains(a.point, labels)),
                Fraction(0),
            )
            total = total + MassClass.of(exact)
        elif _face_covered(measure, face, rect):
            total = total + mass
        else:
            undecidable.append(face)
    if total.is_infinite:
        return total
    if undecidable:
        faces = ", ".join(str(sorted(f)) for f in undecidable)
        raise UndecidableMassError(f"cannot classify the mass of {rect.describe()} on faces {faces}")
    return total


def truncated_mass(measure: LayeredDiscreteMeasure, rect: TestRectangle, depth: int) -> Fraction:
    """Mass of the atoms of layers 1..depth inside ``rect``."""
    return sum(
        (a.weight for a in measure.atoms_to_depth(depth) if rect.contains(a.point, measure.labels)),
        Fraction(0),
    )


# =============================================================================
# Finite restrictions and conditional kernels
# =============================================================================

@dataclass(frozen=True)
class FiniteRestriction:
    """Finite measure obtained by restricting a layered measure to a window.

    ``atoms`` carry either raw weights (``normalized`` False) or probabilities.
    """
    labels: tuple[int, ...]
    atoms: tuple[Atom, ...]
    total: Fraction
    window: str
    depth: int
    normalized: bool = False

    @property
    def is_empty(self) -> bool:
        return self.total == 0

    def probabilities(self) -> dict[Point, Fraction]:
        if self.total == 0:
            raise ZeroMassError(f"window {self.window} has zero mass")
        return {a.point: a.weight / self.total for a in self.atoms}

    def marginal(self, onto: Sequence[int]) -> dict[Point, Fraction]:
        """Push-forward weights on the coordinates ``onto`` (origin included)."""
        out: dict[Point, Fraction] = defaultdict(Fraction)
        for atom in self.atoms:
            out[project_point(atom.point, self.labels, onto)] += atom.weight
        return dict(out)


def restrict(measure: LayeredDiscreteMeasure, rect: TestRectangle, depth: int) -> FiniteRestriction:
    """Unnormalized restriction of the atoms of layers 1..depth to ``rect``."""
    atoms = tuple(a for a in measure.atoms_to_depth(depth) if rect.contains(a.point, measure.labels))
    return FiniteRestriction(
        labels=measure.labels,
        atoms=atoms,
        total=sum((a.weight for a in atoms), Fraction(0)),
        window=rect.describe(),
        depth=depth,
    )


def restrict_to_depth(measure: LayeredDiscreteMeasure, depth: int) -> FiniteRestriction:
    """Finite restriction of the measure to L_H (layers 1..depth)."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    atoms = tuple(measure.atoms_to_depth(depth))
    return FiniteRestriction(
        labels=measure.labels,
        atoms=atoms,
        total=sum((a.weight for a in atoms), Fraction(0)),
        window=f"L_{depth}",
        depth=depth,
    )


def normalized_restriction(
    measure: LayeredDiscreteMeasure, rect: TestRectangle, depth: Optional[int] = None
) -> FiniteRestriction:
    """Probability measure Lambda(. n R) / Lambda(R) on a bounded rectangle.

    Raises:
        UnboundedRectangleError: If ``rect`` is not bounded away from the origin.
        ZeroMassError: If ``rect`` has zero mass.
    """
    bound = rect.depth_bound(measure.labels)
    if bound is None:
        raise UnboundedRectangleError(f"{rect.describe()} is not bounded away from the origin")
    use_depth = bound if depth is None else min(depth, bound)
    raw = restrict(measure, rect, use_depth)
    if raw.total == 0:
        raise ZeroMassError(f"{rect.describe()} has zero mass")
    return FiniteRestriction(
        labels=raw.labels,
        atoms=tuple(Atom(a.point, a.weight / raw.total) for a in raw.atoms),
        total=Fraction(1),
        window=raw.window,
        depth=use_depth,
        normalized=True,
    )


@dataclass
class ConditionalKernel:
    """Disintegration of a measure along y_C at a fixed depth.

    ``rows[c]`` is the probability table of (y_A, y_B) given y_C = c, for every
    base atom c (ordered by C-layer, then by point).
    """
    a_labels: tuple[int, ...]
    b_labels: tuple[int, ...]
    c_labels: tuple[int, ...]
    depth: int
    base: dict[Point, Fraction]
    rows: dict[Point, dict[tuple[Point, Point], Fraction]]

    def __post_init__(self) -> None:
        for c, row in self.rows.items():
            if sum(row.values(), Fraction(0)) != 1:
                raise MalformedKernelError(f"row at {format_point(c)} does not sum to 1")

    def row(self, c: Point) -> dict[tuple[Point, Point], Fraction]:
        return self.rows[c]

    def marginal_a(self, c: Point) -> dict[Point, Fraction]:
        out: dict[Point, Fraction] = defaultdict(Fraction)
        for (a, _), p in self.rows[c].items():
            out[a] += p
        return dict(out)

    def marginal_b(self, c: Point) -> dict[Point, Fraction]:
        out: dict[Point, Fraction] = defaultdict(Fraction)
        for (_, b), p in self.rows[c].items():
            out[b] += p
        return dict(out)

    def factorization_violation(self, c: Point) -> Optional[tuple[Point, Point, Fraction, Fraction]]:
        """First (a, b, joint, product) cell where the row at c does not factorize."""
        row = self.rows[c]
        ma = self.marginal_a(c)
        mb = self.marginal_b(c)
        for a in sorted(ma):
            for b in sorted(mb):
                joint = row.get((a, b), Fraction(0))
                product = ma[a] * mb[b]
                if joint != product:
                    return a, b, joint, product
        return None


def _check_partition(labels: Sequence[int], *parts: Iterable[int]) -> list[tuple[int, ...]]:
    sets = [tuple(sorted(p)) for p in parts]
    seen: set[int] = set()
    for s in sets:
        if seen & set(s):
            raise MeasureValidationError(f"blocks {sets} are not disjoint")
        seen |= set(s)
    if seen != set(labels):
        raise MeasureValidationError(f"blocks {sets} do not partition the labels {tuple(labels)}")
    return sets


def disintegrate(
    measure: LayeredDiscreteMeasure,
    a: Iterable[int],
    b: Iterable[int],
    c: Iterable[int],
    depth: int,
) -> tuple[FiniteRestriction, ConditionalKernel]:
    """Base measure on E_C° and conditional kernel y_C -> (y_A, y_B), up to C-layer ``depth``.

    The C-layer of y_C never falls below the layer of y, so atoms of layers
    1..depth hold every group whose base point has C-layer <= depth.
    """
    a_labels, b_labels, c_labels = _check_partition(measure.labels, a, b, c)
    if not c_labels:
        raise MeasureValidationError("disintegration needs a nonempty conditioning set")
    groups: dict[Point, dict[tuple[Point, Point], Fraction]] = defaultdict(lambda: defaultdict(Fraction))
    labels = measure.labels
    for atom in measure.atoms_to_depth(depth):
        yc = project_point(atom.point, labels, c_labels)
        if is_origin(yc) or layer_of(yc) > depth:
            continue
        key = (project_point(atom.point, labels, a_labels), project_point(atom.point, labels, b_labels))
        groups[yc][key] += atom.weight

    base: dict[Point, Fraction] = {}
    rows: dict[Point, dict[tuple[Point, Point], Fraction]] = {}
    for yc in sorted(groups, key=point_sort_key):
        mass = sum(groups[yc].values(), Fraction(0))
        base[yc] = mass
        rows[yc] = {cell: w / mass for cell, w in sorted(groups[yc].items())}

    base_restriction = FiniteRestriction(
        labels=c_labels,
        atoms=tuple(Atom(p, w) for p, w in base.items()),
        total=sum(base.values(), Fraction(0)),
        window=f"L_{depth} on C",
        depth=depth,
    )
    return base_restriction, ConditionalKernel(a_labels, b_labels, c_labels, depth, base, rows)


# =============================================================================
# Marginals and superpositions
# =============================================================================

def marginalize(measure: LayeredDiscreteMeasure, onto: Iterable[int]) -> tuple[LayeredDiscreteMeasure, MassClass]:
    """Marginal on E_D° and the mass class pushed onto the origin of E_D.

    Returns:
        The marginal measure and the class of {y_D = 0} (dropped from the punctured marginal).
    """
    target = tuple(sorted(set(onto)))
    if not target:
        raise MeasureValidationError("cannot marginalize onto an empty label set")
    if not set(target) <= set(measure.labels):
        raise MeasureValidationError(f"labels {target} are not all in {measure.labels}")
    if target == measure.labels:
        return measure, MassClass.zero()
    cached = measure._marginals.get(target)
    if cached is not None:
        return cached

    source_labels = measure.labels

    def generate(h: int) -> Iterator[Atom]:
        for h0 in range(1, h + 1):
            for atom in measure.layer(h0):
                projected = project_point(atom.point, source_labels, target)
                if not is_origin(projected) and layer_of(projected) == h:
                    yield Atom(projected, atom.weight)

    classes: dict[Face, MassClass] = defaultdict(MassClass.zero)
    origin = MassClass.zero()
    for face, mass in measure.face_classes.items():
        image = face & set(target)
        if image:
            classes[frozenset(image)] = classes[frozenset(image)] + mass
        else:
            origin = origin + mass

    marginal = LayeredDiscreteMeasure(
        PuncturedSpace(target),
        generate,
        classes,
        provenance=f"marginal of {measure.provenance} on {target}",
    )
    measure._marginals[target] = (marginal, origin)
    return marginal, origin


def superpose(*measures: LayeredDiscreteMeasure) -> LayeredDiscreteMeasure:
    """Sum of measures on the same space."""
    if not measures:
        raise MeasureValidationError("superposition needs at least one measure")
    labels = measures[0].labels
    if any(m.labels != labels for m in measures):
        raise MeasureValidationError("superposed measures must share their labels")

    classes: dict[Face, MassClass] = defaultdict(MassClass.zero)
    for m in measures:
        for face, mass in m.face_classes.items():
            classes[face] = classes[face] + mass

    return LayeredDiscreteMeasure(
        PuncturedSpace(labels),
        lambda h: [atom for m in measures for atom in m.layer(h)],
        classes,
        provenance=" + ".join(m.provenance for m in measures),
    )


class PerpVariant(str, Enum):
    """How the perp measure places its A and B parts."""
    MARGINAL = "marginal"
    SEPARATED = "separated"


def build_perp_measure(
    measure: LayeredDiscreteMeasure,
    a: Iterable[int],
    b: Iterable[int],
    c: Iterable[int],
    variant: PerpVariant = PerpVariant.MARGINAL,
) -> LayeredDiscreteMeasure:
    """Perp measure: the A-, B- and C-parts placed on disjoint embedded faces.

    ``MARGINAL`` embeds the marginals on E_A°, E_B° and E_C°. ``SEPARATED`` keeps
    the C-marginal but takes the A and B parts from the restrictions of the
    measure to {y_A != 0, y_B = 0, y_C = 0} and {y_A = 0, y_B != 0, y_C = 0},
    which is the base measure of the point-level functional representation.
    Embedding preserves max |y|, so layer h of each part lands in layer h.
    """
    labels = measure.labels
    a_labels, b_labels, c_labels = _check_partition(labels, a, b, c)
    variant = PerpVariant(variant)

    parts: list[tuple[tuple[int, ...], LayeredDiscreteMeasure]] = []
    classes: dict[Face, MassClass] = defaultdict(MassClass.zero)
    blocks = [c_labels] if variant is PerpVariant.SEPARATED else [a_labels, b_labels, c_labels]
    for block in blocks:
        if not block:
            continue
        marginal, _ = marginalize(measure, block)
        parts.append((block, marginal))
        for face, mass in marginal.face_classes.items():
            classes[face] = classes[face] + mass

    separated_blocks: list[frozenset[int]] = []
    if variant is PerpVariant.SEPARATED:
        separated_blocks = [frozenset(x) for x in (a_labels, b_labels) if x]
        for face, mass in measure.face_classes.items():
            if any(face <= block for block in separated_blocks):
                classes[face] = classes[face] + mass

    def generate(h: int) -> Iterator[Atom]:
        for block, marginal in parts:
            for atom in marginal.layer(h):
                yield Atom(compose_point(labels, (block, atom.point)), atom.weight)
        for atom in measure.layer(h) if separated_blocks else ():
            face = face_of(atom.point, labels)
            if any(face <= block for block in separated_blocks):
                yield atom

    return LayeredDiscreteMeasure(
        PuncturedSpace(labels),
        generate,
        classes,
        provenance=f"perp[{variant.value}]({measure.provenance}; A={a_labels}, B={b_labels}, C={c_labels})",
    )


def from_atoms(
    labels: Sequence[int],
    atoms: Iterable[Atom],
    face_classes: Optional[Mapping[Face, MassClass]] = None,
    provenance: str = "raw atoms",
) -> LayeredDiscreteMeasure:
    """Measure with finitely many atoms; face classes default to the finite face totals."""
    by_layer: dict[int, list[Atom]] = defaultdict(list)
    derived: dict[Face, Fraction] = defaultdict(Fraction)
    labels = tuple(labels)
    for atom in atoms:
        if len(atom.point) != len(labels):
            raise MeasureValidationError(f"atom {format_point(atom.point)} does not match labels {labels}")
        if atom.weight <= 0:
            raise MeasureValidationError(f"atom {format_point(atom.point)} needs a positive weight")
        by_layer[layer_of(atom.point)].append(atom)
        derived[face_of(atom.point, labels)] += atom.weight
    classes = {face: MassClass.of(total) for face, total in derived.items()}
    if face_classes:
        classes.update({frozenset(f): m for f, m in face_classes.items()})
    return LayeredDiscreteMeasure(PuncturedSpace(labels), lambda h: by_layer.get(h, ()), classes, provenance)


def geometric_axis(
    labels: Sequence[int],
    axes: Iterable[int],
    weight: Fraction = Fraction(1),
) -> LayeredDiscreteMeasure:
    """Atoms of mass ``weight`` at 2^-k on the diagonal of ``axes`` (k >= 0).

    Layer h holds the single atom with value 2^-(h-1) on every axis coordinate,
    so the face ``axes`` has infinite mass.
    """
    labels = tuple(labels)
    axis_set = frozenset(axes)
    if not axis_set or not axis_set <= set(labels):
        raise MeasureValidationError(f"axes {sorted(axis_set)} must be a nonempty subset of {labels}")
    if weight <= 0:
        raise MeasureValidationError("geometric weights must be positive")

    def generate(h: int) -> list[Atom]:
        value = Fraction(1, 2 ** (h - 1))
        return [Atom(tuple(value if label in axis_set else Fraction(0) for label in labels), weight)]

    return LayeredDiscreteMeasure(
        PuncturedSpace(labels),
        generate,
        {axis_set: MassClass.infinite()},
        provenance=f"geometric_axis(axes={sorted(axis_set)}, weight={weight})",
    )


# =============================================================================
# Scale-covariant kernels
# =============================================================================

def _validate_probabilities(probs: Iterable[Fraction], what: str) -> None:
    values = list(probs)
    if not values:
        raise MalformedKernelError(f"{what} has no outcomes")
    if any(p <= 0 for p in values):
        raise MalformedKernelError(f"{what} has non-positive probabilities")
    if sum(values, Fraction(0)) != 1:
        raise MalformedKernelError(f"{what} probabilities sum to {sum(values, Fraction(0))}, not 1")


def _check_multipliers(mult: Point, size: int, what: str) -> None:
    if len(mult) != size:
        raise MalformedKernelError(f"{what} outcome {format_point(mult)} needs {size} coordinates")
    if any(abs(m) > 1 for m in mult):
        raise MalformedKernelError(f"{what} multipliers must lie in [-1, 1]: {format_point(mult)}")


@dataclass(frozen=True)
class ScaledKernel:
    """Kernel y_C -> y_X drawing a multiplier vector and scaling it by max |y_C|.

    Multipliers in [-1, 1] keep the layer of every generated point equal to the
    layer of its base point, and the origin row is the point mass at 0.
    """
    labels: tuple[int, ...]
    outcomes: tuple[tuple[Point, Fraction], ...]

    def __post_init__(self) -> None:
        _validate_probabilities((p for _, p in self.outcomes), f"kernel on {self.labels}")
        for mult, _ in self.outcomes:
            _check_multipliers(mult, len(self.labels), f"kernel on {self.labels}")

    @classmethod
    def fair_coin(cls, labels: Sequence[int]) -> "ScaledKernel":
        """Values 0 or max |y_C| on every coordinate, with probability 1/2 each."""
        zero = tuple(Fraction(0) for _ in labels)
        one = tuple(Fraction(1) for _ in labels)
        return cls(tuple(labels), ((zero, Fraction(1, 2)), (one, Fraction(1, 2))))

    def row(self, yc: Point) -> dict[Point, Fraction]:
        scale = max((abs(x) for x in yc), default=Fraction(0))
        out: dict[Point, Fraction] = defaultdict(Fraction)
        for mult, p in self.outcomes:
            out[tuple(m * scale for m in mult)] += p
        return dict(out)

    def face_probabilities(self) -> dict[Face, Fraction]:
        out: dict[Face, Fraction] = defaultdict(Fraction)
        for mult, p in self.outcomes:
            out[frozenset(l for l, m in zip(self.labels, mult) if m != 0)] += p
        return dict(out)


@dataclass(frozen=True)
class JointScaledKernel:
    """Kernel y_C -> (y_A, y_B) drawing coupled multiplier vectors."""
    a_labels: tuple[int, ...]
    b_labels: tuple[int, ...]
    outcomes: tuple[tuple[tuple[Point, Point], Fraction], ...]

    def __post_init__(self) -> None:
        what = f"joint kernel on {self.a_labels} x {self.b_labels}"
        _validate_probabilities((p for _, p in self.outcomes), what)
        for (ma, mb), _ in self.outcomes:
            _check_multipliers(ma, len(self.a_labels), what)
            _check_multipliers(mb, len(self.b_labels), what)

    @classmethod
    def product(cls, kernel_a: ScaledKernel, kernel_b: ScaledKernel) -> "JointScaledKernel":
        return cls(
            kernel_a.labels,
            kernel_b.labels,
            tuple(((ma, mb), pa * pb) for ma, pa in kernel_a.outcomes for mb, pb in kernel_b.outcomes),
        )

    def row(self, yc: Point) -> dict[tuple[Point, Point], Fraction]:
        scale = max((abs(x) for x in yc), default=Fraction(0))
        out: dict[tuple[Point, Point], Fraction] = defaultdict(Fraction)
        for (ma, mb), p in self.outcomes:
            out[(tuple(m * scale for m in ma), tuple(m * scale for m in mb))] += p
        return dict(out)

    def face_probabilities(self) -> dict[Face, Fraction]:
        out: dict[Face, Fraction] = defaultdict(Fraction)
        for (ma, mb), p in self.outcomes:
            face = {l for l, m in zip(self.a_labels, ma) if m != 0}
            face |= {l for l, m in zip(self.b_labels, mb) if m != 0}
            out[frozenset(face)] += p
        return dict(out)


def from_joint_kernel(
    base_c: LayeredDiscreteMeasure,
    kernel_ab: JointScaledKernel,
    axis_parts: Sequence[LayeredDiscreteMeasure] = (),
) -> LayeredDiscreteMeasure:
    """Measure Lambda(dy) = base_c(dy_C) K(y_C, dy_A dy_B) plus parts on {y_C = 0}.

    Raises:
        MeasureValidationError: If the blocks overlap or an axis part charges y_C != 0.
    """
    a_labels, b_labels, c_labels = kernel_ab.a_labels, kernel_ab.b_labels, base_c.labels
    labels = tuple(sorted(a_labels + b_labels + c_labels))
    _check_partition(labels, a_labels, b_labels, c_labels)
    for part in axis_parts:
        if part.labels != labels:
            raise MeasureValidationError(f"axis part on {part.labels} does not live on {labels}")
        for face in part.face_classes:
            if face & set(c_labels):
                raise MeasureValidationError(f"axis part charges face {sorted(face)} with y_C != 0")

    def generate(h: int) -> Iterator[Atom]:
        for atom in base_c.layer(h):
            for (ya, yb), p in kernel_ab.row(atom.point).items():
                yield Atom(compose_point(labels, (a_labels, ya), (b_labels, yb), (c_labels, atom.point)), atom.weight * p)
        for part in axis_parts:
            yield from part.layer(h)

    classes: dict[Face, MassClass] = defaultdict(MassClass.zero)
    pattern_probs = kernel_ab.face_probabilities()
    for base_face, mass in base_c.face_classes.items():
        for ab_face, p in pattern_probs.items():
            face = frozenset(base_face | ab_face)
            classes[face] = classes[face] + mass.scale(p)
    for part in axis_parts:
        for face, mass in part.face_classes.items():
            classes[face] = classes[face] + mass

    parts = "".join(f" + {p.provenance}" for p in axis_parts)
    return LayeredDiscreteMeasure(
        PuncturedSpace(labels),
        generate,
        classes,
        provenance=f"joint_kernel(base={base_c.provenance}){parts}",
    )


def from_kernel_product(
    base_c: LayeredDiscreteMeasure,
    kernel_a: ScaledKernel,
    kernel_b: ScaledKernel,
    axis_parts: Sequence[LayeredDiscreteMeasure] = (),
) -> LayeredDiscreteMeasure:
    """Measure Lambda(dy) = base_c(dy_C) h_A(y_C, dy_A) h_B(y_C, dy_B) plus parts on {y_C = 0}."""
    return from_joint_kernel(base_c, JointScaledKernel.product(kernel_a, kernel_b), axis_parts)


# =============================================================================
# Face-mass assumption
# =============================================================================

def _disjoint_pairs(labels: Sequence[int], allow_empty_b: bool = True) -> Iterator[tuple[Face, Face]]:
    """Every ordered disjoint pair (A, B) of label sets with A nonempty."""
    for assignment in itertools.product((0, 1, 2), repeat=len(labels)):
        a_set = frozenset(l for l, k in zip(labels, assignment) if k == 1)
        b_set = frozenset(l for l, k in zip(labels, assignment) if k == 2)
        if not a_set or (not b_set and not allow_empty_b):
            continue
        yield a_set, b_set


def check_assumption_iv(measure: LayeredDiscreteMeasure) -> AssumptionReport:
    """Aggregate mass of {y_A != 0, y_B = 0} for every disjoint A (nonempty) and B.

    The assumption holds when every aggregate is zero or infinite.
    """
    if measure._assumption_report is not None:
        return measure._assumption_report
    pairs = []
    for a_set, b_set in _disjoint_pairs(measure.labels):
        mass = measure.region_class(lambda f: bool(f & a_set) and not f & b_set)
        pairs.append(PairAggregate(a=tuple(sorted(a_set)), b=tuple(sorted(b_set)), mass=mass))
    report = AssumptionReport(labels=measure.labels, pairs=pairs)
    measure._assumption_report = report
    if not report.passed:
        logger.debug(f"{measure!r} fails the face-mass assumption on {len(report.offending)} pairs")
    return report


def e1_condition_holds(measure: LayeredDiscreteMeasure) -> bool:
    """For every D and d in D, the mass of {y_d != 0, y_(V minus D) = 0} is zero or infinite."""
    labels = measure.labels
    for size in range(1, len(labels) + 1):
        for subset in itertools.combinations(labels, size):
            d_set = frozenset(subset)
            for d in d_set:
                mass = measure.region_class(lambda f: d in f and f <= d_set)
                if mass.is_finite:
                    return False
    return True


def check_E1_equivalence(measure: LayeredDiscreteMeasure) -> bool:
    """Whether the face-mass assumption and the single-coordinate condition agree."""
    return check_assumption_iv(measure).passed == e1_condition_holds(measure)


def random_face_classes(labels: Sequence[int], rng: np.random.Generator) -> dict[Face, MassClass]:
    """Random declaration of zero, finite or infinite mass on every face."""
    classes: dict[Face, MassClass] = {}
    for size in range(1, len(labels) + 1):
        for subset in itertools.combinations(labels, size):
            kind = MassKind(rng.choice([k.value for k in MassKind]))
            if kind is MassKind.FINITE:
                classes[frozenset(subset)] = MassClass.of(
                    Fraction(int(rng.integers(1, 10)), int(rng.integers(1, 10)))
                )
            elif kind is MassKind.INFINITE:
                classes[frozenset(subset)] = MassClass.infinite()
    return classes
