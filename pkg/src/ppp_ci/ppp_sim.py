"""Poisson point process simulation for layered measures.

Randomness flows through ``RandomSource``: a numpy ``SeedSequence`` keyed by a
root seed and a spawn key. Every consumer (layer, point, replicate block)
derives its own substream, so results do not depend on thread scheduling.
"""

from __future__ import annotations

import hashlib
import logging
import math
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from ppp_ci.measure_core import (
    SCAN_DEPTH,
    ConditionalKernel,
    Face,
    LayeredDiscreteMeasure,
    compose_point,
    disintegrate,
    face_of,
    is_origin,
    layer_of,
    marginalize,
    mass_on_rectangle,
    normalized_restriction,
    project_point,
    truncated_mass,
)
from ppp_ci.models import (
    CondMoments,
    CountSample,
    InfiniteWindowError,
    IntegrabilityError,
    KernelRowMissingError,
    LaplaceReport,
    MalformedKernelError,
    MeasureValidationError,
    Point,
    TestRectangle,
    TruncationError,
    UnsupportedCaseError,
    ValueSet,
    format_point,
    format_rational,
)

logger = logging.getLogger(__name__)


# =============================================================================
# Random sources
# =============================================================================

def _key_int(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError("stream keys must be nonnegative")
    return int(part)


class RandomSource:
    """Seeded PCG64 generator addressed by (seed, stream key)."""

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(stream)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.stream))
        )

    def substream(self, *key: Union[int, str]) -> "RandomSource":
        """Independent child source; string parts are hashed to stable integers."""
        return RandomSource(self.seed, self.stream + tuple(_key_int(k) for k in key))

    def spawn(self, n: int) -> list["RandomSource"]:
        return [self.substream(i) for i in range(n)]

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, stream={self.stream})"


# =============================================================================
# Point patterns
# =============================================================================

def measure_digest(measure: LayeredDiscreteMeasure) -> str:
    return hashlib.sha256(measure.provenance.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class PointPattern:
    """Finite multiset of points with the provenance of its randomness.

    ``punctured`` is False for projections and kernel outputs, which may hold
    origin atoms; those are counted and reported through ``origin_count``.
    """
    labels: tuple[int, ...]
    points: tuple[Point, ...]
    seed: int
    stream: tuple[int, ...]
    depth: int
    digest: str = ""
    punctured: bool = True

    def __len__(self) -> int:
        return len(self.points)

    @property
    def origin_count(self) -> int:
        return sum(1 for p in self.points if is_origin(p))

    def counts(self) -> Counter:
        return Counter(self.points)

    def count_in(self, rect: TestRectangle) -> int:
        return sum(1 for p in self.points if rect.contains(p, self.labels))


def _pattern(source: RandomSource, labels: tuple[int, ...], points: Iterable[Point], depth: int, digest: str, punctured: bool = True) -> PointPattern:
    return PointPattern(labels, tuple(points), source.seed, source.stream, depth, digest, punctured)


def _draw_atoms(atoms: Sequence, total: Fraction, source: RandomSource) -> list[Point]:
    """Poisson(total) points drawn i.i.d. from the atoms' normalized weights."""
    if total == 0 or not atoms:
        return []
    gen = source.generator
    n = int(gen.poisson(float(total)))
    probs = np.array([float(a.weight) for a in atoms])
    probs /= probs.sum()
    idx = gen.choice(len(atoms), size=n, p=probs)
    return [atoms[i].point for i in idx]


def sample_window(measure: LayeredDiscreteMeasure, rect: TestRectangle, source: RandomSource) -> PointPattern:
    """Poisson process restricted to a finite-mass rectangle.

    Raises:
        InfiniteWindowError: If the rectangle has infinite mass.
    """
    mass = mass_on_rectangle(measure, rect)
    if mass.is_infinite:
        raise InfiniteWindowError(f"{rect.describe()} has infinite mass")
    digest = measure_digest(measure)
    if mass.is_zero:
        return _pattern(source, measure.labels, (), 0, digest)
    restriction = normalized_restriction(measure, rect)
    points = _draw_atoms(restriction.atoms, mass.value, source)
    return _pattern(source, measure.labels, points, restriction.depth, digest)


def sample_layer(measure: LayeredDiscreteMeasure, h: int, source: RandomSource) -> list[Point]:
    atoms = measure.layer(h)
    return _draw_atoms(atoms, sum((a.weight for a in atoms), Fraction(0)), source)


def sample_depth(measure: LayeredDiscreteMeasure, depth: int, source: RandomSource) -> PointPattern:
    """Independent Poisson draws on layers 1..depth, layer h on substream ("layer", h)."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    points: list[Point] = []
    for h in range(1, depth + 1):
        points.extend(sample_layer(measure, h, source.substream("layer", h)))
    return _pattern(source, measure.labels, points, depth, measure_digest(measure))


def superpose_patterns(*patterns: PointPattern) -> PointPattern:
    """Union of patterns on the same labels, keeping the first pattern's provenance."""
    if not patterns:
        raise ValueError("nothing to superpose")
    first = patterns[0]
    if any(p.labels != first.labels for p in patterns):
        raise MeasureValidationError("superposed patterns must share their labels")
    points = tuple(point for p in patterns for point in p.points)
    return PointPattern(
        first.labels, points, first.seed, first.stream, max(p.depth for p in patterns),
        "+".join(p.digest for p in patterns), all(p.punctured for p in patterns),
    )


def project(pattern: PointPattern, onto: Sequence[int]) -> PointPattern:
    """Pattern of the projections y_I; points landing on the origin are kept and flagged."""
    target = tuple(sorted(onto))
    if not set(target) <= set(pattern.labels):
        raise MeasureValidationError(f"cannot project {pattern.labels} onto {target}")
    points = tuple(project_point(p, pattern.labels, target) for p in pattern.points)
    projected = PointPattern(target, points, pattern.seed, pattern.stream, pattern.depth, pattern.digest, punctured=False)
    if projected.origin_count:
        logger.debug(f"Projection onto {target} put {projected.origin_count} points on the origin")
    return projected


# =============================================================================
# Kernels and transforms
# =============================================================================

class SamplableKernel(Protocol):
    """Finite probability table y -> distribution over points on ``labels``."""
    labels: tuple[int, ...]

    def row(self, y: Point) -> Mapping[Point, Fraction]: ...


@dataclass(frozen=True)
class TableKernel:
    """Kernel given by explicit rows; the origin row defaults to the point mass at 0."""
    labels: tuple[int, ...]
    rows: dict[Point, dict[Point, Fraction]]
    origin_row_default: bool = True

    def __post_init__(self) -> None:
        for y, row in self.rows.items():
            if any(p < 0 for p in row.values()) or sum(row.values(), Fraction(0)) != 1:
                raise MalformedKernelError(f"row at {format_point(y)} is not a probability table")

    def row(self, y: Point) -> Mapping[Point, Fraction]:
        found = self.rows.get(tuple(y))
        if found is not None:
            return found
        if self.origin_row_default and is_origin(y):
            return {tuple(Fraction(0) for _ in self.labels): Fraction(1)}
        raise KernelRowMissingError(f"no kernel row for {format_point(y)}")


@dataclass(frozen=True)
class IdentityKernel:
    labels: tuple[int, ...]

    def row(self, y: Point) -> Mapping[Point, Fraction]:
        return {tuple(y): Fraction(1)}


@dataclass(frozen=True)
class ConstantKernel:
    """Every point maps to ``target``."""
    labels: tuple[int, ...]
    target: Point

    def row(self, y: Point) -> Mapping[Point, Fraction]:
        return {self.target: Fraction(1)}


@dataclass(frozen=True)
class JointKernel:
    """Joint (y_A, y_B) rows of a disintegration, indexed by y_C."""
    a_labels: tuple[int, ...]
    b_labels: tuple[int, ...]
    rows: dict[Point, dict[tuple[Point, Point], Fraction]]

    @classmethod
    def from_disintegration(cls, kernel: ConditionalKernel) -> "JointKernel":
        return cls(kernel.a_labels, kernel.b_labels, kernel.rows)

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted(self.a_labels + self.b_labels))

    def cells(self, y: Point) -> dict[tuple[Point, Point], Fraction]:
        found = self.rows.get(tuple(y))
        if found is None:
            raise KernelRowMissingError(f"no joint row for {format_point(y)}")
        return found

    def row(self, y: Point) -> Mapping[Point, Fraction]:
        return {
            compose_point(self.labels, (self.a_labels, ya), (self.b_labels, yb)): p
            for (ya, yb), p in self.cells(y).items()
        }


def _cdf(row: Mapping[Point, Fraction]) -> tuple[list[Point], np.ndarray]:
    outcomes = sorted(row)
    cumulative = np.cumsum([float(row[o]) for o in outcomes])
    cumulative[-1] = 1.0
    return outcomes, cumulative


def draw_from_row(row: Mapping[Point, Fraction], theta: float) -> Point:
    """Inverse-CDF draw with a uniform ``theta`` over outcomes in point order."""
    cumulative = Fraction(0)
    outcomes = sorted(row)
    for outcome in outcomes:
        cumulative += row[outcome]
        if theta < cumulative:
            return outcome
    return outcomes[-1]


def _row(kernel: SamplableKernel, y: Point) -> Mapping[Point, Fraction]:
    try:
        return kernel.row(y)
    except KeyError as e:
        raise KernelRowMissingError(f"no kernel row for {format_point(y)}") from e


def nu_transform(pattern: PointPattern, kernel: SamplableKernel, source: RandomSource) -> PointPattern:
    """Image pattern {Z_i ~ kernel(y_i, .)} with point i driven by substream ("point", i)."""
    points = []
    for i, y in enumerate(pattern.points):
        theta = source.substream("point", i).generator.random()
        points.append(draw_from_row(_row(kernel, y), theta))
    return _pattern(source, tuple(kernel.labels), points, pattern.depth, pattern.digest, punctured=False)


def check_vanishing(kernel: SamplableKernel, c_dims: int) -> None:
    """Kernels feeding the functional representation must map y_C = 0 to the origin."""
    row = _row(kernel, tuple(Fraction(0) for _ in range(c_dims)))
    origin = tuple(Fraction(0) for _ in kernel.labels)
    if dict(row) != {origin: Fraction(1)}:
        raise MalformedKernelError(f"kernel on {kernel.labels} does not vanish at y_C = 0")


def _split(perp: LayeredDiscreteMeasure, h_a: SamplableKernel, h_b: SamplableKernel) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    a_labels, b_labels = tuple(h_a.labels), tuple(h_b.labels)
    c_labels = tuple(l for l in perp.labels if l not in a_labels and l not in b_labels)
    if set(a_labels) & set(b_labels) or not set(a_labels + b_labels) <= set(perp.labels):
        raise MeasureValidationError(f"kernel labels {a_labels}, {b_labels} do not split {perp.labels}")
    if not c_labels:
        raise MeasureValidationError("the functional representation needs a nonempty C")
    check_vanishing(h_a, len(c_labels))
    check_vanishing(h_b, len(c_labels))
    return a_labels, b_labels, c_labels


def sample_functional_rep(
    perp: LayeredDiscreteMeasure,
    h_a: SamplableKernel,
    h_b: SamplableKernel,
    depth: int,
    source: RandomSource,
) -> PointPattern:
    """Points eta + (h_A(eta_C, theta_A), h_B(eta_C, theta_B), 0) of a perp-measure sample.

    eta comes from substream "eta"; the i-th point uses ("theta_a", i) and ("theta_b", i).
    """
    labels = perp.labels
    a_labels, b_labels, c_labels = _split(perp, h_a, h_b)
    eta = sample_depth(perp, depth, source.substream("eta"))
    points = []
    for i, y in enumerate(eta.points):
        yc = project_point(y, labels, c_labels)
        if is_origin(yc):
            points.append(y)
            continue
        ua = source.substream("theta_a", i).generator.random()
        ub = source.substream("theta_b", i).generator.random()
        da = draw_from_row(_row(h_a, yc), ua)
        db = draw_from_row(_row(h_b, yc), ub)
        ya = tuple(x + dx for x, dx in zip(project_point(y, labels, a_labels), da))
        yb = tuple(x + dx for x, dx in zip(project_point(y, labels, b_labels), db))
        points.append(compose_point(labels, (a_labels, ya), (b_labels, yb), (c_labels, yc)))
    return _pattern(source, labels, points, depth, measure_digest(perp))


def sample_nonpunctured_rep(
    base: PointPattern,
    h_1: SamplableKernel,
    h_2: SamplableKernel,
    source: RandomSource,
) -> PointPattern:
    """Points (h_1(eta, theta_1), h_2(eta, theta_2), eta) for a base pattern on E_C°."""
    labels = tuple(sorted(base.labels + tuple(h_1.labels) + tuple(h_2.labels)))
    points = []
    for i, y in enumerate(base.points):
        y1 = draw_from_row(_row(h_1, y), source.substream("theta_1", i).generator.random())
        y2 = draw_from_row(_row(h_2, y), source.substream("theta_2", i).generator.random())
        points.append(compose_point(labels, (tuple(h_1.labels), y1), (tuple(h_2.labels), y2), (base.labels, y)))
    return _pattern(source, labels, points, base.depth, base.digest, punctured=False)


def functional_rep_kernels(
    measure: LayeredDiscreteMeasure,
    a: Iterable[int],
    b: Iterable[int],
    c: Iterable[int],
    depth: int,
) -> tuple[TableKernel, TableKernel]:
    """Marginal rows of the disintegration, as tables for h_A and h_B.

    When A _|_ B | C holds the rows factorize, so these kernels reproduce the
    interior part of the measure from its C-marginal.
    """
    _, kernel = disintegrate(measure, a, b, c, depth)
    rows_a = {yc: kernel.marginal_a(yc) for yc in kernel.rows}
    rows_b = {yc: kernel.marginal_b(yc) for yc in kernel.rows}
    return TableKernel(kernel.a_labels, rows_a), TableKernel(kernel.b_labels, rows_b)


# =============================================================================
# Poisson integrals and the Laplace functional
# =============================================================================

@dataclass(frozen=True)
class IntegrabilityCertificate:
    """Evidence that the integral of min(|f|, 1) against the measure is finite.

    ``finite_part`` bounds the layers 1..support_depth; ``tail_faces`` are faces
    with finite declared mass on which f may be non-zero below that depth.
    """
    labels: tuple[int, ...]
    support_depth: int
    finite_part: Fraction
    tail_faces: frozenset[Face]
    tail_budget: Fraction


def certify_integrability(
    measure: LayeredDiscreteMeasure,
    f: Callable[[Point], Fraction],
    support_depth: int,
    tail_faces: Iterable[Iterable[int]] = (),
) -> IntegrabilityCertificate:
    """Certify integrability of f, assumed zero below ``support_depth`` outside ``tail_faces``.

    Raises:
        IntegrabilityError: If a tail face carries infinite mass.
    """
    faces = frozenset(frozenset(t) for t in tail_faces)
    budget = Fraction(0)
    for face in faces:
        mass = measure.face_class(face)
        if mass.is_infinite:
            raise IntegrabilityError(f"tail face {sorted(face)} has infinite mass")
        if mass.is_finite:
            budget += mass.value
    finite = sum(
        (min(abs(Fraction(f(a.point))), Fraction(1)) * a.weight for a in measure.atoms_to_depth(support_depth)),
        Fraction(0),
    )
    return IntegrabilityCertificate(measure.labels, support_depth, finite, faces, budget)


def poisson_integral(
    pattern: PointPattern,
    f: Callable[[Point], Fraction],
    certificate: Optional[IntegrabilityCertificate],
) -> Fraction:
    """Sum of f over the points of a pattern, for certified integrable f.

    Raises:
        IntegrabilityError: Without a certificate, or for points outside its coverage.
    """
    if certificate is None:
        raise IntegrabilityError("Poisson integrals need an integrability certificate")
    if certificate.labels != pattern.labels:
        raise IntegrabilityError(f"certificate for {certificate.labels} used on {pattern.labels}")
    total = Fraction(0)
    for point in pattern.points:
        value = Fraction(f(point))
        if value == 0:
            continue
        if not is_origin(point) and layer_of(point) > certificate.support_depth:
            if face_of(point, pattern.labels) not in certificate.tail_faces:
                raise IntegrabilityError(
                    f"f is non-zero at {format_point(point)} beyond the certified depth {certificate.support_depth}"
                )
        total += value
    return total


def poisson_count_matrix(weights: np.ndarray, replicates: int, source: RandomSource, block_size: int, threads: int) -> np.ndarray:
    """Independent Poisson(weight) counts per atom, shape (replicates, atoms), in seeded blocks."""
    sizes = [min(block_size, replicates - start) for start in range(0, replicates, block_size)]
    blocks = source.spawn(len(sizes))

    def run(args: tuple[RandomSource, int]) -> np.ndarray:
        block, size = args
        return block.generator.poisson(weights, size=(size, len(weights)))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(run, zip(blocks, sizes)))
    if not parts:
        return np.zeros((0, len(weights)), dtype=np.int64)
    return np.vstack(parts)


def laplace_check(
    measure: LayeredDiscreteMeasure,
    f: Callable[[Point], Fraction],
    depth: int,
    replicates: int,
    source: RandomSource,
    block_size: int = 10_000,
    threads: int = 1,
) -> LaplaceReport:
    """Monte-Carlo E exp(-xi(f)) against exp(-integral of (1 - e^-f)) on layers 1..depth.

    Raises:
        IntegrabilityError: If f is non-zero on an atom of a scanned layer beyond ``depth``.
        ValueError: If f is negative somewhere on layers 1..depth.
    """
    for h in range(depth + 1, max(depth + 1, SCAN_DEPTH) + 1):
        for atom in measure.layer(h):
            if f(atom.point) != 0:
                raise IntegrabilityError(
                    f"f is non-zero at {format_point(atom.point)} in layer {h}, beyond depth {depth}"
                )
    atoms = measure.atoms_to_depth(depth)
    values = np.array([float(f(a.point)) for a in atoms])
    if np.any(values < 0):
        raise ValueError("the Laplace functional needs a nonnegative f")
    weights = np.array([float(a.weight) for a in atoms])
    closed = math.exp(-math.fsum((1.0 - math.exp(-v)) * w for v, w in zip(values, weights)))
    counts = poisson_count_matrix(weights, replicates, source, block_size, threads)
    samples = np.exp(-(counts @ values))
    estimate = math.fsum(samples) / replicates
    stderr = float(np.std(samples, ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    if stderr == 0.0:
        z = 0.0 if math.isclose(estimate, closed, rel_tol=1e-12, abs_tol=1e-15) else math.inf
    else:
        z = (estimate - closed) / stderr
    logger.debug(f"Laplace check: mc={estimate:.6f} closed={closed:.6f} z={z:.3f}")
    return LaplaceReport(mc_estimate=estimate, closed_form=closed, stderr=stderr, z_score=z, replicates=replicates, depth=depth)


# =============================================================================
# Conditional moments
# =============================================================================

def _window_labels(window: TestRectangle) -> tuple[int, ...]:
    labels = tuple(sorted(window.sets))
    if not labels:
        raise MeasureValidationError("windows must name the coordinates they constrain")
    return labels


def cond_moment_formulas(
    measure: LayeredDiscreteMeasure,
    window_a: TestRectangle,
    window_b: TestRectangle,
    xi_c: PointPattern,
) -> CondMoments:
    """Exact E[xi_A(A_1) | xi_C], E[xi_B(A_2) | xi_C] and their conditional covariance.

    ``window_a`` constrains the labels A, ``window_b`` the labels B, and the
    pattern lives on C. Origin points of ``xi_C`` are ignored.

    Raises:
        IntegrabilityError: If a window is not bounded away from the origin.
        UnsupportedCaseError: If a window charges {y_C = 0}.
    """
    a_labels, b_labels, c_labels = _window_labels(window_a), _window_labels(window_b), tuple(xi_c.labels)
    working, _ = marginalize(measure, a_labels + b_labels + c_labels)
    for labels, window in ((a_labels, window_a), (b_labels, window_b)):
        if window.depth_bound(labels) is None:
            raise IntegrabilityError(f"window {window.describe()} has no certified finite marginal mass")
        on_axis = TestRectangle(
            name="axis", sets={**window.sets, **{c: ValueSet(values=(Fraction(0),)) for c in c_labels}}
        )
        if not mass_on_rectangle(working, on_axis).is_zero:
            raise UnsupportedCaseError(f"window {window.describe()} charges {{y_C = 0}}")

    base_points = [p for p in xi_c.points if not is_origin(p)]
    depth = max([xi_c.depth, 1] + [layer_of(p) for p in base_points])
    _, kernel = disintegrate(working, a_labels, b_labels, c_labels, depth)

    mean_1 = mean_2 = cov = Fraction(0)
    for point in base_points:
        if point not in kernel.rows:
            raise KernelRowMissingError(f"no conditional row at {format_point(point)}")
        pa = pb = pab = Fraction(0)
        for (ya, yb), p in kernel.row(point).items():
            in_a = window_a.contains(ya, a_labels)
            in_b = window_b.contains(yb, b_labels)
            pa += p if in_a else 0
            pb += p if in_b else 0
            pab += p if in_a and in_b else 0
        mean_1 += pa
        mean_2 += pb
        cov += pab - pa * pb
    return CondMoments(mean_1=mean_1, mean_2=mean_2, cov=cov)


# =============================================================================
# Vectorized count engine
# =============================================================================

def _check_windows(measure: LayeredDiscreteMeasure, windows: Sequence[TestRectangle], depth: int) -> list[str]:
    names = []
    for i, window in enumerate(windows):
        name = window.name or f"W{i + 1}"
        mass = mass_on_rectangle(measure, window)
        if mass.is_infinite:
            raise InfiniteWindowError(f"window {name} has infinite mass")
        found = truncated_mass(measure, window, depth)
        if found != mass.value:
            raise TruncationError(
                f"window {name} holds mass {format_rational(mass.value)} but depth {depth} reaches only {format_rational(found)}"
            )
        names.append(name)
    return names


def simulate_window_counts(
    measure: LayeredDiscreteMeasure,
    windows: Sequence[TestRectangle],
    depth: int,
    replicates: int,
    source: RandomSource,
    block_size: int = 10_000,
    threads: int = 1,
) -> CountSample:
    """Window counts of independent Poisson samples on layers 1..depth.

    Each atom receives a Poisson(weight) count per replicate; window counts are
    the membership-weighted sums. Blocks run on a thread pool with spawned seeds.

    Raises:
        InfiniteWindowError: If a window has infinite mass.
        TruncationError: If a window's mass is not exhausted at ``depth``.
    """
    names = _check_windows(measure, windows, depth)
    atoms = measure.atoms_to_depth(depth)
    weights = np.array([float(a.weight) for a in atoms])
    membership = np.array(
        [[1 if w.contains(a.point, measure.labels) else 0 for w in windows] for a in atoms], dtype=np.int64
    ).reshape(len(atoms), len(windows))
    counts = poisson_count_matrix(weights, replicates, source, block_size, threads)
    logger.debug(f"Simulated {replicates} replicates over {len(atoms)} atoms and {len(windows)} windows")
    return CountSample(
        windows=tuple(names), matrix=counts @ membership, seeds=(source.seed,) + source.stream,
        depth=depth, block_size=block_size,
    )


def simulate_functional_rep_counts(
    perp: LayeredDiscreteMeasure,
    h_a: SamplableKernel,
    h_b: SamplableKernel,
    windows: Sequence[TestRectangle],
    depth: int,
    replicates: int,
    source: RandomSource,
    block_size: int = 10_000,
    threads: int = 1,
) -> CountSample:
    """Window counts of the functional representation built on a perp-measure sample.

    Per block, eta counts come from substream "eta" and the kernel draws from
    the separate substreams "theta_a" and "theta_b".
    """
    labels = perp.labels
    a_labels, b_labels, c_labels = _split(perp, h_a, h_b)
    atoms = perp.atoms_to_depth(depth)
    weights = np.array([float(a.weight) for a in atoms])

    # Per eta atom: outcome CDFs for the two kernels and window membership per (i_a, i_b).
    plans = []
    for atom in atoms:
        yc = project_point(atom.point, labels, c_labels)
        if is_origin(yc):
            member = np.array([[[int(w.contains(atom.point, labels)) for w in windows]]], dtype=np.int64)
            plans.append((None, None, member))
            continue
        outs_a, cdf_a = _cdf(_row(h_a, yc))
        outs_b, cdf_b = _cdf(_row(h_b, yc))
        ea = project_point(atom.point, labels, a_labels)
        eb = project_point(atom.point, labels, b_labels)
        member = np.zeros((len(outs_a), len(outs_b), len(windows)), dtype=np.int64)
        for ia, da in enumerate(outs_a):
            for ib, db in enumerate(outs_b):
                point = compose_point(
                    labels,
                    (a_labels, tuple(x + d for x, d in zip(ea, da))),
                    (b_labels, tuple(x + d for x, d in zip(eb, db))),
                    (c_labels, yc),
                )
                member[ia, ib] = [int(w.contains(point, labels)) for w in windows]
        plans.append((cdf_a, cdf_b, member))

    names = [w.name or f"W{i + 1}" for i, w in enumerate(windows)]
    sizes = [min(block_size, replicates - start) for start in range(0, replicates, block_size)]
    blocks = source.spawn(len(sizes))

    def run(args: tuple[RandomSource, int]) -> np.ndarray:
        block, size = args
        eta_counts = block.substream("eta").generator.poisson(weights, size=(size, len(weights)))
        gen_a = block.substream("theta_a").generator
        gen_b = block.substream("theta_b").generator
        out = np.zeros((size, len(windows)), dtype=np.int64)
        for j, (cdf_a, cdf_b, member) in enumerate(plans):
            column = eta_counts[:, j]
            if cdf_a is None:
                out += np.outer(column, member[0, 0])
                continue
            total = int(column.sum())
            if total == 0:
                continue
            reps = np.repeat(np.arange(size), column)
            ia = np.minimum(np.searchsorted(cdf_a, gen_a.random(total), side="right"), len(cdf_a) - 1)
            ib = np.minimum(np.searchsorted(cdf_b, gen_b.random(total), side="right"), len(cdf_b) - 1)
            np.add.at(out, reps, member[ia, ib])
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(run, zip(blocks, sizes)))
    matrix = np.vstack(parts) if parts else np.zeros((0, len(windows)), dtype=np.int64)
    return CountSample(
        windows=tuple(names), matrix=matrix, seeds=(source.seed,) + source.stream,
        depth=depth, block_size=block_size,
    )


# =============================================================================
# Pattern dumps
# =============================================================================

def format_pattern_dump(pattern: PointPattern) -> str:
    """TSV text of a pattern: a comment header, then one sorted point per line as p/q values."""
    header = (
        f"# seed={pattern.seed}\tstream={'.'.join(str(k) for k in pattern.stream)}\t"
        f"depth={pattern.depth}\tdigest={pattern.digest}\tlabels={','.join(str(l) for l in pattern.labels)}"
    )
    lines = [header] + ["\t".join(format_rational(x) for x in point) for point in sorted(pattern.points)]
    return "\n".join(lines) + "\n"


def write_pattern_dump(pattern: PointPattern, path: str) -> None:
    with open(path, "w") as f:
        f.write(format_pattern_dump(pattern))


def read_pattern_dump(path: str) -> PointPattern:
    """Inverse of ``write_pattern_dump``."""
    with open(path, "r") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path} has no pattern header")
    meta = dict(item.split("=", 1) for item in lines[0][2:].split("\t"))
    labels = tuple(int(x) for x in meta["labels"].split(","))
    stream = tuple(int(x) for x in meta["stream"].split(".")) if meta["stream"] else ()
    points = tuple(tuple(Fraction(x) for x in line.split("\t")) for line in lines[1:])
    return PointPattern(labels, points, int(meta["seed"]), stream, int(meta["depth"]), meta["digest"])
