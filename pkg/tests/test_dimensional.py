"""Dimension vectors, pi groups, dynamic matching and system-spec files."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimless_mpc.dimensional import (
    DimensionVector,
    DimensionalError,
    InfeasibleMatchError,
    PiGroup,
    Quantity,
    QuantitySet,
    UnknownQuantityError,
    compute_pi_groups,
    dump_system_spec,
    match_similar_system,
    parse_system_spec,
    pi_distance,
    scaling_factor,
    validate_repeating_set,
)
from dimless_mpc.dynamics import cartpole_quantities, racecar_quantities


def monomials(qs):
    return {g.symbol(): g.monomial for g in compute_pi_groups(qs)}


class TestDimensionVector:
    def test_roundtrip_fractions(self):
        d = DimensionVector.from_dict({"M": "1", "L": "1/2", "T": "-3/2"})
        assert d.exponents == (Fraction(1), Fraction(1, 2), Fraction(-3, 2))
        assert DimensionVector.from_dict(d.to_dict()) == d

    def test_arithmetic(self):
        a = DimensionVector([1, 0, -1])
        b = DimensionVector([0, 1, -1])
        assert (a + b).exponents == (1, 1, -2)
        assert (-a).exponents == (-1, 0, 1)

    def test_zero(self):
        assert DimensionVector.zero(3).is_zero


class TestPiGroups:
    def test_cartpole_groups_exact(self):
        qs = cartpole_quantities()
        groups = compute_pi_groups(qs)
        assert len(groups) == 2
        by_name = {next(iter(g.monomial)): g.monomial for g in groups}
        assert by_name["m_p"] == {"m_p": Fraction(1), "m_c": Fraction(-1)}
        assert by_name["mu_f"] == {
            "mu_f": Fraction(1),
            "m_c": Fraction(-1),
            "l": Fraction(1, 2),
            "g": Fraction(-1, 2),
        }

    def test_cartpole_group_values(self):
        qs = cartpole_quantities()
        vals = {next(iter(g.monomial)): g.value for g in compute_pi_groups(qs)}
        assert vals["m_p"] == pytest.approx(0.1, rel=1e-15)
        assert vals["mu_f"] == pytest.approx(
            0.1 / 1.0 * math.sqrt(0.8 / 9.81), rel=1e-14
        )

    def test_racecar_groups_exact(self):
        qs = racecar_quantities()
        groups = compute_pi_groups(qs)
        assert len(groups) == 5
        by_name = {next(iter(g.monomial)): g.monomial for g in groups}
        one = Fraction(1)
        assert by_name["l_r"] == {"l_r": one, "l": -one}
        assert by_name["c_m1"] == {"c_m1": one, "m": -one, "l": one, "c_r3": 2 * one}
        assert by_name["c_m2"] == {"c_m2": one, "m": -one, "l": one, "c_r3": one}
        assert by_name["c_r0"] == {"c_r0": one, "m": -one, "l": one, "c_r3": 2 * one}
        assert by_name["c_r2"] == {"c_r2": one, "m": -one, "l": one}

    def test_group_dimension_is_exactly_zero(self):
        for qs in (cartpole_quantities(), racecar_quantities()):
            for g in compute_pi_groups(qs):
                total = DimensionVector.zero(3)
                for name, e in g.monomial.items():
                    total = total + qs[name].dim.scale(e)
                assert total.is_zero

    def test_only_repeating_quantities_yields_empty(self):
        qs = QuantitySet(
            (
                Quantity("m", 1.0, DimensionVector([1, 0, 0])),
                Quantity("l", 1.0, DimensionVector([0, 1, 0])),
            ),
            repeating=("m", "l"),
        )
        assert compute_pi_groups(qs) == []

    def test_dependent_repeating_set_rejected(self):
        qs = QuantitySet(
            (
                Quantity("a", 1.0, DimensionVector([0, 1, 0])),
                Quantity("b", 2.0, DimensionVector([0, 2, 0])),
                Quantity("c", 3.0, DimensionVector([0, 0, 1])),
            ),
            repeating=("a", "b"),
        )
        assert not validate_repeating_set(qs)
        with pytest.raises(DimensionalError):
            compute_pi_groups(qs)


class TestScalingFactor:
    def test_known_monomials(self):
        qs = cartpole_quantities()
        assert scaling_factor(DimensionVector([0, 1, 0]), qs) == pytest.approx(0.8)
        assert scaling_factor(DimensionVector([0, 0, 1]), qs) == pytest.approx(
            math.sqrt(0.8 / 9.81), rel=1e-14
        )
        assert scaling_factor(DimensionVector([0, 1, -1]), qs) == pytest.approx(
            math.sqrt(9.81 * 0.8), rel=1e-14
        )
        assert scaling_factor(DimensionVector([1, 1, -2]), qs) == pytest.approx(
            1.0 * 9.81, rel=1e-14
        )

    def test_racecar_time_unit(self):
        qs = racecar_quantities()
        assert scaling_factor(DimensionVector([0, 0, 1]), qs) == pytest.approx(
            0.06 * 5.0, rel=1e-14
        )

    @given(
        st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3),
        st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3),
    )
    @settings(max_examples=50, deadline=None)
    def test_multiplicative(self, a1, a2, a3, b1, b2, b3):
        qs = cartpole_quantities()
        da = DimensionVector([a1, a2, a3])
        db = DimensionVector([b1, b2, b3])
        assert scaling_factor(da + db, qs) == pytest.approx(
            scaling_factor(da, qs) * scaling_factor(db, qs), rel=1e-10
        )


class TestMatching:
    def test_cartpole_closed_form(self):
        ref = cartpole_quantities()
        for l_new in (0.1, 5.0):
            matched = match_similar_system(
                ref, fixed=("mu_f", "g"), new_values={"l": l_new}
            )
            ratio = math.sqrt(l_new / 0.8)
            assert matched.value("m_c") == pytest.approx(1.0 * ratio, rel=1e-12)
            assert matched.value("m_p") == pytest.approx(0.1 * ratio, rel=1e-12)
            assert matched.value("l") == l_new
            assert matched.value("mu_f") == 0.1
            assert matched.value("g") == 9.81
            assert pi_distance(ref, matched) < 1e-12

    def test_identity_match(self):
        ref = cartpole_quantities()
        same = match_similar_system(ref, fixed=("mu_f", "g"), new_values={"l": 0.8})
        for name in ref.names:
            assert same.value(name) == pytest.approx(ref.value(name), rel=1e-12)

    def test_racecar_pair(self):
        ref = racecar_quantities()
        big = match_similar_system(
            ref, fixed=("c_r3",), new_values={"l": 4.0, "m": 1500.0}
        )
        assert pi_distance(ref, big) < 1e-12
        assert big.value("l_r") == pytest.approx(0.017 * 4.0 / 0.06, rel=1e-12)

    def test_overdetermined_is_infeasible(self):
        ref = cartpole_quantities()
        with pytest.raises(InfeasibleMatchError):
            match_similar_system(
                ref,
                fixed=("mu_f", "g", "m_c", "m_p"),
                new_values={"l": 0.1},
            )

    def test_unknown_quantity(self):
        ref = cartpole_quantities()
        with pytest.raises(UnknownQuantityError):
            match_similar_system(ref, fixed=("nope",), new_values={"l": 0.1})


class TestPiDistance:
    def test_zero_on_self(self):
        qs = cartpole_quantities()
        assert pi_distance(qs, qs) == 0.0

    def test_positive_on_perturbation(self):
        a = cartpole_quantities()
        b = cartpole_quantities(m_p=0.2)
        assert pi_distance(a, b) > 0.1

    def test_symmetric(self):
        a = cartpole_quantities()
        b = cartpole_quantities(m_p=0.2, mu_f=0.3)
        assert pi_distance(a, b) == pytest.approx(pi_distance(b, a), rel=1e-15)


class TestSystemSpecFiles:
    def test_roundtrip(self):
        for qs in (cartpole_quantities(), racecar_quantities()):
            again = parse_system_spec(dump_system_spec(qs))
            assert again.names == qs.names
            assert again.repeating == qs.repeating
            assert again.values() == qs.values()
            for name in qs.names:
                assert again[name].dim == qs[name].dim

    def test_fractional_exponents_preserved(self):
        qs = QuantitySet(
            (Quantity("x", 2.0, DimensionVector([Fraction(1, 2), 0, 0])),),
            repeating=(),
        )
        again = parse_system_spec(dump_system_spec(qs))
        assert again["x"].dim.exponents[0] == Fraction(1, 2)


class TestPiGroupEvaluate:
    def test_evaluate_matches_value(self):
        qs = racecar_quantities()
        for g in compute_pi_groups(qs):
            assert g.evaluate(qs.values()) == pytest.approx(g.value, rel=1e-14)

    def test_symbol_contains_leading_quantity(self):
        g = PiGroup({"a": Fraction(1), "b": Fraction(-1, 2)}, 1.0)
        assert "a" in g.symbol() and "b^(-1/2)" in g.symbol()
