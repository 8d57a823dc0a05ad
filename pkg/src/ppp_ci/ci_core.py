"""Exact conditional-independence checks for layered measures.

A relation A _|_ B | C holds for an infinite measure when it holds for every
normalized restriction to a positive-mass rectangle bounded away from the
origin. Three equivalent characterizations are implemented, each probing the
layers 1..H:

- ``ci_check_definition``: the declared face classes, then the restrictions to
  the reduced rectangles R_{h,v} for every h <= H and every coordinate v;
- ``ci_check_reduced``: the face-null condition plus the rectangles R_{h,c}, c in C;
- ``ci_check_kernel``: the face-null condition plus factorization of the
  conditional kernel y_C -> (y_A, y_B).

Queries that do not cover every coordinate are first marginalized onto A u B u C.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from ppp_ci.measure_core import (
    Face,
    FiniteRestriction,
    LayeredDiscreteMeasure,
    check_assumption_iv,
    disintegrate,
    is_origin,
    layer_of,
    marginalize,
    project_point,
    restrict,
)
from ppp_ci.models import (
    AssumptionViolationError,
    AxiomViolation,
    BivariateCase,
    BivariateClassification,
    CiMethod,
    CiQuery,
    CiVerdict,
    CiWitness,
    EquivalenceReport,
    MassClass,
    Point,
    QueryError,
    SemigraphoidReport,
    TestRectangle,
    UnsupportedCaseError,
    ValueSet,
)

logger = logging.getLogger(__name__)

CiOracle = Callable[[LayeredDiscreteMeasure, CiQuery, int], CiVerdict]


# =============================================================================
# Finite CI
# =============================================================================

def ci_under_restriction(
    restriction: FiniteRestriction,
    a: frozenset[int],
    b: frozenset[int],
    c: frozenset[int],
) -> tuple[bool, Optional[CiWitness]]:
    """Finite-measure CI test P(a,b,c) P(c) = P(a,c) P(b,c) over every support triple.

    Returns:
        (holds, witness); the witness carries exact probabilities and no rectangle.
    """
    if not a or not b:
        return True, None
    probs = restriction.probabilities()
    labels = restriction.labels
    a_labels, b_labels, c_labels = sorted(a), sorted(b), sorted(c)

    joint: dict[tuple[Point, Point, Point], Fraction] = defaultdict(Fraction)
    pac: dict[tuple[Point, Point], Fraction] = defaultdict(Fraction)
    pbc: dict[tuple[Point, Point], Fraction] = defaultdict(Fraction)
    pc: dict[Point, Fraction] = defaultdict(Fraction)
    a_support: dict[Point, set[Point]] = defaultdict(set)
    b_support: dict[Point, set[Point]] = defaultdict(set)
    for point, p in probs.items():
        ya = project_point(point, labels, a_labels)
        yb = project_point(point, labels, b_labels)
        yc = project_point(point, labels, c_labels)
        joint[(ya, yb, yc)] += p
        pac[(ya, yc)] += p
        pbc[(yb, yc)] += p
        pc[yc] += p
        a_support[yc].add(ya)
        b_support[yc].add(yb)

    for yc in sorted(pc):
        for ya in sorted(a_support[yc]):
            for yb in sorted(b_support[yc]):
                lhs = joint.get((ya, yb, yc), Fraction(0)) * pc[yc]
                rhs = pac[(ya, yc)] * pbc[(yb, yc)]
                if lhs != rhs:
                    return False, CiWitness(
                        kind="rectangle", depth=restriction.depth, a=ya, b=yb, c=yc, lhs=lhs, rhs=rhs
                    )
    return True, None


# =============================================================================
# Shared preparation
# =============================================================================

def _prepare(measure: LayeredDiscreteMeasure, query: CiQuery, depth: int) -> LayeredDiscreteMeasure:
    """Validate the query and the assumption, then marginalize onto A u B u C."""
    if depth < 1:
        raise QueryError(f"CI checks need depth >= 1, got {depth}")
    unknown = query.labels - set(measure.labels)
    if unknown:
        raise QueryError(f"query {query} uses labels {sorted(unknown)} outside {measure.labels}")
    report = check_assumption_iv(measure)
    if not report.passed:
        worst = report.offending[0]
        raise AssumptionViolationError(
            f"face mass of {{y_{list(worst.a)} != 0, y_{list(worst.b)} = 0}} is {worst.mass}; "
            f"{len(report.offending)} pairs have finite positive mass",
            report,
        )
    if query.is_trivial:
        return measure
    marginal, _ = marginalize(measure, query.labels)
    return marginal


def _trivial_verdict(query: CiQuery, method: CiMethod, depth: int) -> CiVerdict:
    return CiVerdict(query=str(query), method=method, depth=depth, holds=True, note="A or B is empty")


def face_null_violation(measure: LayeredDiscreteMeasure, query: CiQuery) -> Optional[tuple[Face, MassClass]]:
    """First face meeting both A and B but not C with non-zero mass."""
    for face, mass in sorted(measure.face_classes.items(), key=lambda kv: sorted(kv[0])):
        if face & query.a and face & query.b and not face & query.c:
            return face, mass
    return None


def _face_witness(face: Face, mass: MassClass) -> CiWitness:
    # declared classes are known from layer 1 on
    return CiWitness(kind="face", depth=1, face=tuple(sorted(face)), face_mass=mass)


def _check_rectangles(
    measure: LayeredDiscreteMeasure,
    query: CiQuery,
    depth: int,
    coordinates: list[int],
    method: CiMethod,
) -> CiVerdict:
    checked = 0
    for h in range(1, depth + 1):
        for v in coordinates:
            rect = TestRectangle.reduced(h, v)
            restriction = restrict(measure, rect, h)
            if restriction.is_empty:
                continue
            checked += 1
            holds, witness = ci_under_restriction(restriction, query.a, query.b, query.c)
            if not holds and witness is not None:
                witness = witness.model_copy(update={"rectangle": rect, "depth": h})
                logger.debug(f"{query} fails on {rect.describe()}: {witness.describe()}")
                return CiVerdict(
                    query=str(query), method=method, depth=depth, holds=False,
                    witness=witness, rectangles_checked=checked,
                )
    return CiVerdict(query=str(query), method=method, depth=depth, holds=True, rectangles_checked=checked)


# =============================================================================
# The three characterizations
# =============================================================================

def ci_check_definition(measure: LayeredDiscreteMeasure, query: CiQuery, depth: int) -> CiVerdict:
    """CI on every reduced rectangle R_{h,v}, h <= depth, v in A u B u C.

    Declared face classes are read before any rectangle: a non-null face meeting
    A and B but not C breaks CI on rectangles of every deep enough layer, so the
    verdict fails at any depth with the face as witness.
    """
    working = _prepare(measure, query, depth)
    if query.is_trivial:
        return _trivial_verdict(query, CiMethod.DEFINITION_B, depth)
    violation = face_null_violation(working, query)
    if violation is not None:
        return CiVerdict(
            query=str(query), method=CiMethod.DEFINITION_B, depth=depth, holds=False,
            witness=_face_witness(*violation),
        )
    return _check_rectangles(working, query, depth, list(working.labels), CiMethod.DEFINITION_B)


def ci_check_reduced(measure: LayeredDiscreteMeasure, query: CiQuery, depth: int) -> CiVerdict:
    """Face-null condition, then CI on the rectangles R_{h,c} for c in C."""
    working = _prepare(measure, query, depth)
    if query.is_trivial:
        return _trivial_verdict(query, CiMethod.REDUCED_C, depth)
    violation = face_null_violation(working, query)
    if violation is not None:
        return CiVerdict(
            query=str(query), method=CiMethod.REDUCED_C, depth=depth, holds=False,
            witness=_face_witness(*violation),
        )
    if not query.c:
        return CiVerdict(
            query=str(query), method=CiMethod.REDUCED_C, depth=depth, holds=True,
            note="empty C: the face condition decides",
        )
    return _check_rectangles(working, query, depth, sorted(query.c), CiMethod.REDUCED_C)


def ci_check_kernel(measure: LayeredDiscreteMeasure, query: CiQuery, depth: int) -> CiVerdict:
    """Face-null condition, then factorization of every kernel row with C-layer <= depth."""
    working = _prepare(measure, query, depth)
    if query.is_trivial:
        return _trivial_verdict(query, CiMethod.KERNEL_D, depth)
    if not query.c:
        verdict = ci_check_reduced(measure, query, depth)
        return verdict.model_copy(update={"method": CiMethod.KERNEL_D, "note": "empty C: deferred to reduced"})
    violation = face_null_violation(working, query)
    if violation is not None:
        return CiVerdict(
            query=str(query), method=CiMethod.KERNEL_D, depth=depth, holds=False,
            witness=_face_witness(*violation),
        )
    _, kernel = disintegrate(working, query.a, query.b, query.c, depth)
    rows = 0
    for yc in kernel.rows:
        rows += 1
        found = kernel.factorization_violation(yc)
        if found is not None:
            ya, yb, joint, product = found
            witness = CiWitness(kind="kernel_row", depth=layer_of(yc), a=ya, b=yb, c=yc, lhs=joint, rhs=product)
            return CiVerdict(
                query=str(query), method=CiMethod.KERNEL_D, depth=depth, holds=False,
                witness=witness, rows_checked=rows,
            )
    return CiVerdict(query=str(query), method=CiMethod.KERNEL_D, depth=depth, holds=True, rows_checked=rows)


def ci_check_random_rectangles(
    measure: LayeredDiscreteMeasure,
    query: CiQuery,
    depth: int,
    trials: int,
    rng: np.random.Generator,
) -> CiVerdict:
    """One-sided oracle: CI on random bounded rectangles built from realized coordinate values.

    A failure is conclusive; a pass only means no sampled rectangle disagreed.
    """
    working = _prepare(measure, query, depth)
    if query.is_trivial:
        return _trivial_verdict(query, CiMethod.RANDOM_RECTANGLES, depth)
    labels = working.labels
    atoms = working.atoms_to_depth(depth)
    values: dict[int, list[Fraction]] = {
        label: sorted({Fraction(0)} | {a.point[i] for a in atoms}) for i, label in enumerate(labels)
    }
    checked = 0
    for _ in range(trials):
        sets = {}
        anchor = labels[int(rng.integers(len(labels)))]
        for label in labels:
            pool = values[label] if label != anchor else [x for x in values[label] if x != 0]
            if not pool:
                pool = [Fraction(1)]
            size = int(rng.integers(1, len(pool) + 1))
            chosen = [pool[i] for i in sorted(rng.choice(len(pool), size=size, replace=False))]
            sets[label] = ValueSet(values=tuple(chosen))
        rect = TestRectangle(name="random", sets=sets)
        bound = rect.depth_bound(labels)
        restriction = restrict(working, rect, bound if bound is not None else depth)
        if restriction.is_empty:
            continue
        checked += 1
        holds, witness = ci_under_restriction(restriction, query.a, query.b, query.c)
        if not holds and witness is not None:
            return CiVerdict(
                query=str(query), method=CiMethod.RANDOM_RECTANGLES, depth=depth, holds=False,
                witness=witness.model_copy(update={"rectangle": rect}), rectangles_checked=checked,
            )
    return CiVerdict(
        query=str(query), method=CiMethod.RANDOM_RECTANGLES, depth=depth, holds=True,
        rectangles_checked=checked, note="one-sided: no violation among sampled rectangles",
    )


def equivalence_crosscheck(
    measure: LayeredDiscreteMeasure,
    query: CiQuery,
    depth: int,
    random_trials: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> EquivalenceReport:
    """Run the three characterizations (and optionally the random oracle) and compare."""
    verdicts = [
        ci_check_definition(measure, query, depth),
        ci_check_reduced(measure, query, depth),
        ci_check_kernel(measure, query, depth),
    ]
    agree = len({v.holds for v in verdicts}) == 1
    auxiliary = None
    if random_trials > 0:
        auxiliary = ci_check_random_rectangles(
            measure, query, depth, random_trials, rng if rng is not None else np.random.default_rng(0)
        )
        if not auxiliary.holds and verdicts[0].holds:
            agree = False
    if not agree:
        logger.warning(
            f"Characterizations disagree on {query} at depth {depth}: "
            + ", ".join(f"{v.method.value}={v.holds}" for v in verdicts)
        )
    return EquivalenceReport(query=str(query), depth=depth, verdicts=verdicts, auxiliary=auxiliary, agree=agree)


def reproduce_witness(measure: LayeredDiscreteMeasure, query: CiQuery, witness: CiWitness) -> CiWitness:
    """Recompute a witness from scratch; equal to the input when the witness is sound."""
    working = _prepare(measure, query, max(witness.depth, 1))
    if witness.kind == "face":
        face = frozenset(witness.face or ())
        return _face_witness(face, working.face_class(face))

    a_labels, b_labels, c_labels = sorted(query.a), sorted(query.b), sorted(query.c)
    ya, yb, yc = tuple(witness.a or ()), tuple(witness.b or ()), tuple(witness.c or ())
    if witness.kind == "rectangle":
        if witness.rectangle is None:
            raise ValueError("rectangle witnesses must carry their rectangle")
        restriction = restrict(working, witness.rectangle, witness.depth)
        probs = restriction.probabilities()
        joint = pac = pbc = pc = Fraction(0)
        for point, p in probs.items():
            pa = project_point(point, working.labels, a_labels)
            pb = project_point(point, working.labels, b_labels)
            pcv = project_point(point, working.labels, c_labels)
            if pcv != yc:
                continue
            pc += p
            if pa == ya:
                pac += p
            if pb == yb:
                pbc += p
            if pa == ya and pb == yb:
                joint += p
        return witness.model_copy(update={"lhs": joint * pc, "rhs": pac * pbc})

    _, kernel = disintegrate(working, query.a, query.b, query.c, max(witness.depth, layer_of(yc)))
    row = kernel.row(yc)
    joint = row.get((ya, yb), Fraction(0))
    product = kernel.marginal_a(yc).get(ya, Fraction(0)) * kernel.marginal_b(yc).get(yb, Fraction(0))
    return witness.model_copy(update={"lhs": joint, "rhs": product})


# =============================================================================
# Semigraphoid axioms
# =============================================================================

def semigraphoid_check(
    measure: LayeredDiscreteMeasure,
    depth: int,
    oracle: CiOracle = ci_check_kernel,
    max_dims: int = 4,
) -> SemigraphoidReport:
    """Check symmetry, decomposition, weak union and contraction over all disjoint quadruples.

    Raises:
        UnsupportedCaseError: If the space has more than ``max_dims`` coordinates.
        AssumptionViolationError: If the measure fails the face-mass assumption.
    """
    labels = measure.labels
    if len(labels) > max_dims:
        raise UnsupportedCaseError(f"semigraphoid enumeration is limited to {max_dims} coordinates")
    if not check_assumption_iv(measure).passed:
        raise AssumptionViolationError("semigraphoid check needs the face-mass assumption", check_assumption_iv(measure))

    cache: dict[tuple[frozenset[int], frozenset[int], frozenset[int]], bool] = {}

    def holds(a: frozenset[int], b: frozenset[int], c: frozenset[int]) -> bool:
        if not a or not b:
            return True
        key = (a, b, c)
        if key not in cache:
            cache[key] = oracle(measure, CiQuery(a=a, b=b, c=c), depth).holds
        return cache[key]

    premises = {"symmetry": 0, "decomposition": 0, "weak_union": 0, "contraction": 0}
    violations: list[AxiomViolation] = []
    quadruples = 0

    def record(axiom: str, a: frozenset[int], b: frozenset[int], c: frozenset[int], d: frozenset[int], conclusion: str) -> None:
        violations.append(AxiomViolation(
            axiom=axiom,  # type: ignore[arg-type]
            a=tuple(sorted(a)), b=tuple(sorted(b)), c=tuple(sorted(c)), d=tuple(sorted(d)),
            failed_conclusion=conclusion,
        ))

    for assignment in itertools.product(range(5), repeat=len(labels)):
        groups = [frozenset(l for l, k in zip(labels, assignment) if k == i) for i in range(4)]
        a, b, c, d = groups
        quadruples += 1

        if holds(a, b, c):
            premises["symmetry"] += 1
            if not holds(b, a, c):
                record("symmetry", a, b, c, d, "B _|_ A | C")
        if holds(a, b | d, c):
            premises["decomposition"] += 1
            if not holds(a, b, c):
                record("decomposition", a, b, c, d, "A _|_ B | C")
            if not holds(a, d, c):
                record("decomposition", a, b, c, d, "A _|_ D | C")
            premises["weak_union"] += 1
            if not holds(a, b, c | d):
                record("weak_union", a, b, c, d, "A _|_ B | C u D")
        if holds(a, b, c) and holds(a, d, b | c):
            premises["contraction"] += 1
            if not holds(a, b | d, c):
                record("contraction", a, b, c, d, "A _|_ B u D | C")

    logger.info(
        f"Semigraphoid check on {labels}: {quadruples} quadruples, {len(cache)} queries, "
        f"{len(violations)} violations"
    )
    return SemigraphoidReport(
        labels=labels, depth=depth, quadruples=quadruples, premises_held=premises,
        oracle_calls=len(cache), violations=violations,
    )


# =============================================================================
# Bivariate classification
# =============================================================================

def _finite_atoms(measure: LayeredDiscreteMeasure, total: Fraction, depth: int) -> FiniteRestriction:
    atoms = tuple(measure.atoms_to_depth(depth))
    found = sum((a.weight for a in atoms), Fraction(0))
    if found != total:
        raise UnsupportedCaseError(
            f"finite mass {total} is not exhausted by the atoms up to depth {depth} (found {found})"
        )
    return FiniteRestriction(measure.labels, atoms, total, f"L_{depth}", depth)


def _factorizes(restriction: FiniteRestriction, block_1: list[int], block_2: list[int]) -> bool:
    """Whether w(a, b) T = w_1(a) w_2(b) for a in supp of y_1 != 0 and every b (origin included)."""
    labels = restriction.labels
    joint: dict[tuple[Point, Point], Fraction] = defaultdict(Fraction)
    m1: dict[Point, Fraction] = defaultdict(Fraction)
    m2: dict[Point, Fraction] = defaultdict(Fraction)
    for atom in restriction.atoms:
        y1 = project_point(atom.point, labels, block_1)
        y2 = project_point(atom.point, labels, block_2)
        joint[(y1, y2)] += atom.weight
        m1[y1] += atom.weight
        m2[y2] += atom.weight
    total = restriction.total
    return all(
        joint.get((y1, y2), Fraction(0)) * total == m1[y1] * m2[y2]
        for y1 in m1 if not is_origin(y1)
        for y2 in m2
    )


def classify_bivariate(
    measure: LayeredDiscreteMeasure,
    blocks: Optional[tuple[tuple[int, ...], tuple[int, ...]]] = None,
    depth: int = 8,
) -> BivariateClassification:
    """Classify a measure on a two-block punctured space into the independence cases.

    Infinite totals are decided from face classes: independence needs a null
    interior {y_1 != 0, y_2 != 0}; finite totals also need the atoms to exhaust
    the declared mass so that the factorization can be checked exactly.

    Separated cases with a null interior are labelled by which face carries the
    mass. ``b2`` is Lambda(y_2 = 0) infinite with Lambda(y_1 = 0) zero, so all
    points sit on block 1. ``b3`` is the mirror image, all points on block 2.
    Some statements of the bivariate lemma use the opposite labelling.
    """
    if blocks is None:
        if measure.dims != 2:
            raise UnsupportedCaseError("give the two blocks explicitly for spaces of dimension != 2")
        blocks = ((measure.labels[0],), (measure.labels[1],))
    block_1, block_2 = (tuple(sorted(b)) for b in blocks)
    if not block_1 or not block_2 or set(block_1) & set(block_2):
        raise QueryError(f"blocks {blocks} must be nonempty and disjoint")
    working, _ = marginalize(measure, block_1 + block_2)
    s1, s2 = set(block_1), set(block_2)

    total = working.total_class()
    interior = working.region_class(lambda f: bool(f & s1) and bool(f & s2))
    y1_zero = working.region_class(lambda f: not f & s1)
    y2_zero = working.region_class(lambda f: not f & s2)

    case = BivariateCase.NOT_INDEPENDENT
    if total.is_zero:
        case = BivariateCase.TRIVIAL_ZERO
    elif total.is_infinite:
        if interior.is_zero:
            if y1_zero.is_infinite and y2_zero.is_infinite:
                case = BivariateCase.SEPARATED_B1
            elif y2_zero.is_infinite and y1_zero.is_zero:
                case = BivariateCase.SEPARATED_B2
            elif y1_zero.is_infinite and y2_zero.is_zero:
                case = BivariateCase.SEPARATED_B3
    else:
        restriction = _finite_atoms(working, total.value, depth)
        if y1_zero.is_zero and _factorizes(restriction, list(block_1), list(block_2)):
            case = BivariateCase.FINITE_FACTORIZED_C
        elif y2_zero.is_zero and _factorizes(restriction, list(block_2), list(block_1)):
            case = BivariateCase.FINITE_FACTORIZED_D

    logger.debug(f"Bivariate classification of {measure!r} on {blocks}: {case.value}")
    return BivariateClassification(
        case=case, blocks=(block_1, block_2), total=total, interior=interior,
        mass_y1_zero=y1_zero, mass_y2_zero=y2_zero,
    )
