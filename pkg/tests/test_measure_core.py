"""Unit tests for layered measures, rectangles, marginals and disintegration."""

from fractions import Fraction

import numpy as np
import pytest

from ppp_ci.catalog import builtin_measure
from ppp_ci.measure_core import (
    Atom,
    LayeredDiscreteMeasure,
    PerpVariant,
    PuncturedSpace,
    ScaledKernel,
    build_perp_measure,
    check_assumption_iv,
    check_E1_equivalence,
    check_localization_consistency,
    declared_measure,
    disintegrate,
    e1_condition_holds,
    empty_measure,
    face_of,
    from_atoms,
    geometric_axis,
    in_localization,
    layer_of,
    marginalize,
    mass_on_rectangle,
    normalized_restriction,
    random_face_classes,
    restrict_to_depth,
    superpose,
    validate_measure,
)
from ppp_ci.models import (
    AbsAboveSet,
    IntervalSet,
    MassClass,
    MeasureValidationError,
    OriginError,
    TestRectangle,
    UnboundedRectangleError,
    UndecidableMassError,
    ValueSet,
    ZeroMassError,
)

F = Fraction


# =============================================================================
# Test: layers and faces
# =============================================================================

class TestLayers:
    """Tests for layer and face helpers."""

    def test_layer_edges(self):
        assert layer_of((F(1), F(0))) == 1
        assert layer_of((F(1, 2), F(0))) == 2
        assert layer_of((F(3, 4), F(-1, 8))) == 1
        assert layer_of((F(0), F(1, 5))) == 3

    def test_origin_has_no_layer(self):
        with pytest.raises(OriginError):
            layer_of((F(0), F(0)))

    def test_outside_unit_box_rejected(self):
        with pytest.raises(MeasureValidationError):
            layer_of((F(3, 2),))

    def test_face_of_uses_labels(self):
        assert face_of((F(0), F(1, 2), F(1)), (2, 5, 7)) == frozenset({5, 7})

    def test_face_of_origin_raises(self):
        with pytest.raises(OriginError):
            face_of((F(0),))

    def test_localization(self):
        point = (F(1, 4), F(0), F(1, 16))
        assert in_localization(point, 2, {1}, (1, 2, 3)) is False
        assert in_localization(point, 3, {1}, (1, 2, 3)) is True
        assert in_localization(point, 3, {2, 3}, (1, 2, 3)) is False

    def test_labels_must_be_sorted(self):
        with pytest.raises(MeasureValidationError):
            PuncturedSpace((2, 1))


# =============================================================================
# Test: measure construction
# =============================================================================

class TestLayeredMeasure:
    """Tests for building and validating layered measures."""

    def test_geometric_axis_layers(self):
        m = geometric_axis((1, 2), [1])
        assert m.layer(1) == (Atom((F(1), F(0)), F(1)),)
        assert m.layer(3) == (Atom((F(1, 4), F(0)), F(1)),)
        assert m.face_class({1}).is_infinite
        assert m.face_class({2}).is_zero

    def test_atom_in_wrong_layer_rejected(self):
        bad = LayeredDiscreteMeasure(PuncturedSpace((1,)), lambda h: [Atom((F(1),), F(1))])
        bad.layer(1)
        with pytest.raises(MeasureValidationError, match="belongs to layer 1"):
            bad.layer(2)

    def test_origin_atom_rejected(self):
        m = LayeredDiscreteMeasure(PuncturedSpace((1, 2)), lambda h: [Atom((F(0), F(0)), F(1))])
        with pytest.raises(MeasureValidationError):
            m.layer(1)

    def test_from_atoms_derives_finite_faces(self):
        m = from_atoms((1, 2), [Atom((F(1), F(0)), F(2)), Atom((F(1, 4), F(1, 4)), F(1, 3))])
        assert m.face_class({1}) == MassClass.of(F(2))
        assert m.face_class({1, 2}) == MassClass.of(F(1, 3))

    def test_validate_flags_atoms_on_zero_faces(self):
        m = from_atoms((1, 2), [Atom((F(1), F(0)), F(1))], face_classes={frozenset({1}): MassClass.zero()})
        with pytest.raises(MeasureValidationError, match="declared zero"):
            validate_measure(m, 4)

    def test_validate_flags_overweight_finite_face(self):
        m = from_atoms((1,), [Atom((F(1),), F(2))], face_classes={frozenset({1}): MassClass.of(F(1))})
        with pytest.raises(MeasureValidationError, match="exceed"):
            validate_measure(m, 2)

    def test_builtins_validate(self):
        for name in ("M1", "M2", "M3", "POISSON3"):
            validate_measure(builtin_measure(name), 6)

    def test_localization_consistency(self, m1):
        assert check_localization_consistency(m1, 4)

    def test_superpose_adds_face_classes(self):
        m = superpose(geometric_axis((1, 2), [1]), from_atoms((1, 2), [Atom((F(0), F(1)), F(1))]))
        assert m.face_class({1}).is_infinite
        assert m.face_class({2}) == MassClass.of(F(1))
        assert len(m.layer(1)) == 2


# =============================================================================
# Test: mass_on_rectangle
# =============================================================================

class TestMassOnRectangle:
    """Tests for exact rectangle masses."""

    def test_bounded_rectangle_exact(self, poisson3):
        rect = TestRectangle(sets={1: IntervalSet(lo=F(1, 8), hi=F(1))})
        assert mass_on_rectangle(poisson3, rect) == MassClass.of(F(3))

    def test_value_set_rectangle(self, poisson3):
        rect = TestRectangle(sets={2: ValueSet(values=(F(1, 2),))})
        assert mass_on_rectangle(poisson3, rect) == MassClass.of(F(1, 4))

    def test_reduced_rectangle_on_m1(self, m1):
        # layer 1 of M1: base y_3 = 1 with four kernel outcomes of weight 1/4
        assert mass_on_rectangle(m1, TestRectangle.reduced(1, 3)) == MassClass.of(F(1))
        assert mass_on_rectangle(m1, TestRectangle.reduced(2, 3)) == MassClass.of(F(2))
        assert mass_on_rectangle(m1, TestRectangle.reduced(2, 1)) == MassClass.of(F(1))

    def test_unbounded_infinite(self, m1):
        assert mass_on_rectangle(m1, TestRectangle(sets={3: AbsAboveSet(threshold=F(0))})).is_infinite
        assert mass_on_rectangle(m1, TestRectangle()).is_infinite

    def test_unbounded_finite_face(self):
        m = superpose(geometric_axis((1, 2), [1]), from_atoms((1, 2), [Atom((F(0), F(1)), F(1))]))
        rect = TestRectangle(sets={2: AbsAboveSet(threshold=F(0))})
        assert mass_on_rectangle(m, rect) == MassClass.of(F(1))

    def test_unbounded_zero(self):
        m = geometric_axis((1, 2), [1])
        assert mass_on_rectangle(m, TestRectangle(sets={2: AbsAboveSet(threshold=F(0))})).is_zero

    def test_undecidable_partial_cover(self):
        m = geometric_axis((1, 2), [1])
        rect = TestRectangle(sets={1: IntervalSet(lo=F(-1), hi=F(1, 2))})
        with pytest.raises(UndecidableMassError):
            mass_on_rectangle(m, rect)

    def test_empty_measure_has_zero_mass(self):
        assert mass_on_rectangle(empty_measure((1, 2)), TestRectangle()).is_zero


# =============================================================================
# Test: restrictions
# =============================================================================

class TestRestrictions:
    """Tests for finite and normalized restrictions."""

    def test_normalized_restriction_sums_to_one(self, m2):
        r = normalized_restriction(m2, TestRectangle.reduced(2, 3))
        assert sum(r.probabilities().values()) == 1
        assert r.depth == 2

    def test_unbounded_restriction_rejected(self, m1):
        with pytest.raises(UnboundedRectangleError):
            normalized_restriction(m1, TestRectangle())

    def test_zero_mass_restriction_rejected(self):
        m = geometric_axis((1, 2), [1])
        with pytest.raises(ZeroMassError):
            normalized_restriction(m, TestRectangle.reduced(3, 2))

    def test_restrict_to_depth(self, m3):
        r = restrict_to_depth(m3, 3)
        assert r.total == 3
        assert len(r.atoms) == 3

    def test_restrict_to_depth_zero_is_empty(self, m3):
        assert restrict_to_depth(m3, 0).is_empty


# =============================================================================
# Test: marginalize / disintegrate
# =============================================================================

class TestMarginalize:
    """Tests for marginals on sub-labels."""

    def test_marginal_keeps_labels(self, m1):
        marginal, origin = marginalize(m1, [3])
        assert marginal.labels == (3,)
        assert marginal.layer(2) == (Atom((F(1, 2),), F(1)),)
        assert origin.is_zero

    def test_marginal_pushes_mass_to_origin(self, m3):
        marginal, origin = marginalize(m3, [3])
        assert origin.is_infinite
        assert marginal.face_classes == {}

    def test_marginal_merges_atoms(self, m1):
        marginal, _ = marginalize(m1, [1, 3])
        # y_2 is summed out: (0, 1) and (1, 1) each carry 1/2 in layer 1
        assert marginal.layer(1) == (Atom((F(0), F(1)), F(1, 2)), Atom((F(1), F(1)), F(1, 2)))

    def test_marginal_of_marginal(self, m1, m2):
        for measure in (m1, m2):
            direct, _ = marginalize(measure, [3])
            via, _ = marginalize(marginalize(measure, [1, 3])[0], [3])
            for h in range(1, 5):
                assert via.layer(h) == direct.layer(h)
            assert {f: c for f, c in via.face_classes.items() if not c.is_zero} == {
                f: c for f, c in direct.face_classes.items() if not c.is_zero
            }

    def test_marginal_is_cached(self, m1):
        assert marginalize(m1, [3])[0] is marginalize(m1, [3])[0]

    def test_marginal_rejects_unknown_labels(self, m1):
        with pytest.raises(MeasureValidationError):
            marginalize(m1, [4])


class TestDisintegrate:
    """Tests for the conditional kernel y_C -> (y_A, y_B)."""

    def test_m2_rows(self, m2):
        base, kernel = disintegrate(m2, [1], [2], [3], 3)
        assert list(kernel.rows) == [(F(1),), (F(1, 2),), (F(1, 4),)]
        assert base.total == 3
        assert kernel.row((F(1),)) == {((F(0),), (F(0),)): F(1, 2), ((F(1),), (F(1),)): F(1, 2)}
        assert kernel.factorization_violation((F(1),)) == ((F(0),), (F(0),), F(1, 2), F(1, 4))

    def test_m1_rows_factorize(self, m1):
        _, kernel = disintegrate(m1, [1], [2], [3], 4)
        assert all(kernel.factorization_violation(c) is None for c in kernel.rows)

    def test_needs_partition(self, m1):
        with pytest.raises(MeasureValidationError):
            disintegrate(m1, [1], [2], [], 3)
        with pytest.raises(MeasureValidationError):
            disintegrate(m1, [1], [1, 2], [3], 3)


# =============================================================================
# Test: perp measures and kernels
# =============================================================================

class TestPerpMeasure:
    """Tests for build_perp_measure."""

    def test_marginal_variant_embeds_marginals(self, m1):
        perp = build_perp_measure(m1, [1], [2], [3])
        assert perp.face_class({1}).is_infinite
        assert perp.face_class({2}).is_infinite
        assert perp.face_class({3}).is_infinite
        assert perp.face_class({1, 3}).is_zero
        assert Atom((F(1), F(0), F(0)), F(1, 2)) in perp.layer(1)

    @pytest.mark.parametrize("name", ["M1", "M2"])
    def test_marginals_of_perp_match_input(self, name):
        measure = builtin_measure(name)
        perp = build_perp_measure(measure, [1], [2], [3])
        for block in ([1], [2], [3]):
            expected, _ = marginalize(measure, block)
            got, _ = marginalize(perp, block)
            for h in range(1, 5):
                assert got.layer(h) == expected.layer(h), f"{name} block {block} layer {h}"

    def test_separated_variant_keeps_only_c_marginal(self, m1):
        perp = build_perp_measure(m1, [1], [2], [3], PerpVariant.SEPARATED)
        assert perp.layer(1) == (Atom((F(0), F(0), F(1)), F(1)),)
        assert set(perp.face_classes) == {frozenset({3})}


class TestScaledKernel:
    """Tests for scale-covariant kernels."""

    def test_fair_coin_row(self):
        k = ScaledKernel.fair_coin((1,))
        assert k.row((F(1, 4),)) == {(F(0),): F(1, 2), (F(1, 4),): F(1, 2)}

    def test_vanishes_at_origin(self):
        k = ScaledKernel.fair_coin((1,))
        assert k.row((F(0),)) == {(F(0),): F(1)}


# =============================================================================
# Test: face-mass assumption
# =============================================================================

class TestAssumption:
    """Tests for check_assumption_iv and the single-coordinate form."""

    def test_builtins_pass(self, m1, m2, m3):
        for m in (m1, m2, m3):
            assert check_assumption_iv(m).passed

    def test_finite_face_fails(self):
        m = superpose(geometric_axis((1, 2), [1]), from_atoms((1, 2), [Atom((F(0), F(1)), F(1))]))
        report = check_assumption_iv(m)
        assert not report.passed
        assert any(p.a == (2,) for p in report.offending)

    def test_zero_measure_passes(self):
        assert check_assumption_iv(empty_measure((1, 2, 3))).passed

    def test_e1_condition(self):
        m = declared_measure((1, 2), {frozenset({1}): MassClass.of(F(1)), frozenset({1, 2}): MassClass.infinite()})
        assert not e1_condition_holds(m)
        assert not check_assumption_iv(m).passed

    def test_e1_equivalence_on_random_declarations(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            labels = list(range(1, int(rng.integers(2, 6)) + 1))
            assert check_E1_equivalence(declared_measure(labels, random_face_classes(labels, rng)))
