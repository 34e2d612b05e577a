import math

import numpy as np
import pytest
from pydantic import ValidationError

from jumplab import (
    CadlagPath,
    CompensatorDivergesException,
    CompensatorSpec,
    DomainException,
    IntegrabilityException,
    InvalidParametersException,
    TestFunction,
)
from jumplab.functionals import (
    Atom,
    HeavyTailMark,
    RateDensity,
    RateFunction,
    compensator_diverges,
    compensator_integral,
    compensator_path,
    functional,
    gamma_process,
    jump_integral,
    mean_zero_deviation,
    phi_values,
    quadratic_variation,
)
from jumplab.path_core import value_at
from tests.fixutres.paths import absorbed_path, jump_path  # noqa: F401


def two_point_atom(time: float = 1.0) -> Atom:
    return Atom(time=time, sizes=(1.0, -0.5), masses=(1 / 3, 2 / 3))


def cox_density() -> RateDensity:
    return RateDensity(intensity=RateFunction(name="inverse_square"), mark=RateFunction(name="linear"))


class TestTestFunction:
    def test_values(self) -> None:
        assert functional("square")(2.0) == 4.0
        assert np.allclose(functional("truncated_abs")([0.5, -2.0]), [0.25, 2.0])
        assert functional("xm_log")(0.0) == 0.0
        assert np.allclose(functional("pos_tail", kappa=1.0)([0.5, 2.0]), [0.0, 2.0])
        assert functional("expm")(0.0) == 0.0

    def test_tail_functions(self) -> None:
        xs = [-3.0, -0.5, 0.5, 3.0]
        assert np.allclose(functional("neg_tail", kappa=1.0)(xs), [3.0, 0.0, 0.0, 0.0])
        assert np.allclose(functional("neg_log_tail", kappa=0.25)([-0.5, 0.5]), [math.log(2), 0.0])
        assert np.allclose(functional("entropy_tail", kappa=1.0)(xs), [0.0, 0.0, 0.0, 4 * math.log(4) - 3])

    def test_entropy_tail_ignores_jumps_below_minus_one(self) -> None:
        fn = functional("entropy_tail")
        assert not fn.needs_log_domain
        assert fn(-1.0) == 0.0

    def test_log_domain(self) -> None:
        with pytest.raises(DomainException):
            functional("log1p")(-1.0)

        assert functional("square")(-1.0) == 1.0

    def test_custom_table(self) -> None:
        fn = TestFunction(tag="custom", table_x=(0.0, 1.0), table_y=(0.0, 2.0))
        assert fn(0.5) == pytest.approx(1.0)

        with pytest.raises(InvalidParametersException):
            TestFunction(tag="custom")

    def test_kappa_must_be_positive(self) -> None:
        with pytest.raises(ValidationError):
            TestFunction(tag="pos_tail", kappa=0.0)

    def test_phi(self) -> None:
        assert np.allclose(phi_values([1.0, -0.5, 0.0]), [-0.5, 1.0, 0.0])

        with pytest.raises(DomainException):
            phi_values(-1.0)


class TestRateFunction:
    def test_inverse_square(self) -> None:
        rate = RateFunction(name="inverse_square", coef=2.0)
        assert float(rate.integral(1.0)) == pytest.approx(1.0)
        assert rate.total() == pytest.approx(2.0)
        assert rate.inverse(1.0) == pytest.approx(1.0)
        assert math.isinf(rate.inverse(2.0))

    @pytest.mark.parametrize(
        "name",
        ["constant", "inverse_square", "linear", "shifted_square", "inverse_linear", "ratio"],
    )
    def test_inverse_matches_integral(self, name: str) -> None:
        rate = RateFunction(name=name)  # type: ignore[arg-type]
        t = rate.inverse(0.3)
        assert float(rate.integral(t)) == pytest.approx(0.3, rel=1e-8)
        assert rate.inverse(0.0) == 0.0


class TestRateDensity:
    @pytest.mark.parametrize("tag", ["one", "identity", "square", "truncated_abs", "log1p", "xm_log"])
    def test_closed_forms_match_quadrature(self, tag: str) -> None:
        density = cox_density()
        fn = functional(tag)  # type: ignore[arg-type]
        closed = density.integrate(fn, 3.0)
        numeric = density.integrate(lambda x: fn(x), 3.0)
        assert closed == pytest.approx(numeric, rel=1e-6, abs=1e-10)

    def test_tilted_closed_forms_match_quadrature(self) -> None:
        density = cox_density().tilt()
        assert density.reflected and density.weight_power == 1

        for tag in ("one", "identity", "log1p"):
            fn = functional(tag)  # type: ignore[arg-type]
            assert density.integrate(fn, 3.0) == pytest.approx(
                density.integrate(lambda x: fn(x), 3.0), rel=1e-6, abs=1e-10
            )

    def test_tilt_is_an_involution(self) -> None:
        density = cox_density()
        assert density.tilt().tilt() == density

    def test_arrival_time_inverts_cumulative_rate(self) -> None:
        density = cox_density()
        assert density.arrival_time(0.5) == pytest.approx(1.0)
        assert math.isinf(density.arrival_time(1.0))

        tilted = density.tilt()
        t = tilted.arrival_time(0.7)
        assert tilted.cumulative_rate(t) == pytest.approx(0.7, rel=1e-8)


class TestCompensator:
    def test_atom_mass_above_one(self) -> None:
        with pytest.raises(InvalidParametersException):
            Atom(time=1.0, sizes=(1.0, 2.0), masses=(0.7, 0.7))

        with pytest.raises(InvalidParametersException):
            Atom(time=1.0, sizes=(1.0,), masses=(-0.1,))

    def test_atom_integrals(self) -> None:
        atom = two_point_atom()
        assert atom.integrate(functional("identity")) == pytest.approx(0.0)
        assert atom.integrate(functional("square")) == pytest.approx(0.5)
        assert atom.total_mass() == pytest.approx(1.0)

    def test_atoms_must_increase(self) -> None:
        with pytest.raises(InvalidParametersException):
            CompensatorSpec(atoms=(two_point_atom(2.0), two_point_atom(1.0)))

    def test_atom_lookup(self) -> None:
        comp = CompensatorSpec(atoms=(two_point_atom(1.0), two_point_atom(2.0)))
        assert comp.atom_at(1.0) is not None
        assert comp.atom_at(1.5) is None
        assert len(comp.atoms_until(1.5)) == 1

    def test_tilt_swaps_reciprocal_sizes(self) -> None:
        tilted = CompensatorSpec(atoms=(two_point_atom(),)).tilt()
        atom = tilted.atoms[0]
        assert np.allclose(atom.sizes, [-0.5, 1.0])
        assert np.allclose(atom.masses, [2 / 3, 1 / 3])
        assert atom.total_mass() == pytest.approx(1.0)

    def test_compensator_integral(self) -> None:
        comp = CompensatorSpec(atoms=(two_point_atom(1.0), two_point_atom(2.0)))
        assert compensator_integral(comp, functional("square"), 1.5) == pytest.approx(0.5)
        assert compensator_integral(comp, functional("square"), 2.0) == pytest.approx(1.0)
        assert mean_zero_deviation(comp) == pytest.approx(0.0)

    def test_divergent_compensator(self) -> None:
        comp = CompensatorSpec(rate_density=cox_density())

        with pytest.raises(IntegrabilityException):
            compensator_integral(comp, functional("square"), math.inf)

        assert math.isinf(compensator_integral(comp, functional("square"), math.inf, allow_infinite=True))
        assert compensator_diverges(comp, functional("square"), math.inf)
        assert not compensator_diverges(comp, functional("one"), math.inf)

    def test_infinite_atom_before_horizon(self) -> None:
        comp = CompensatorSpec(atoms=(Atom(time=1.0, heavy_tail=HeavyTailMark(mass=0.5)),))
        path = CadlagPath.pure_jump([(1.0, 2.0)], horizon=3.0)

        with pytest.raises(CompensatorDivergesException):
            compensator_path(comp, functional("entropy"), path)

        assert math.isfinite(value_at(compensator_path(comp, functional("identity"), path), 3.0))

    def test_density_part_stops_at_arrival(self) -> None:
        comp = CompensatorSpec(rate_density=cox_density())
        path = CadlagPath.pure_jump([(1.0, 1.0)], horizon=3.0)
        stopped = compensator_integral(comp, functional("one"), 3.0, path)
        assert stopped == pytest.approx(0.5)

        as_path = compensator_path(comp, functional("one"), path)
        assert value_at(as_path, 3.0) == pytest.approx(0.5, rel=1e-6)

    def test_gamma_process(self) -> None:
        comp = CompensatorSpec(atoms=(two_point_atom(),))
        assert gamma_process(comp, 1.0) == pytest.approx(math.log(2) / 3)
        assert gamma_process(comp, 0.5) == 0.0

    def test_heavy_tail_mark(self) -> None:
        mark = HeavyTailMark(mass=0.5)
        assert mark.integrate(functional("one")) == pytest.approx(0.5, rel=1e-3)
        assert math.isfinite(mark.integrate(functional("identity")))
        assert math.isinf(mark.integrate(functional("entropy")))


class TestJumpFunctionals:
    def test_quadratic_variation(self, jump_path: CadlagPath) -> None:  # noqa: F811
        qv = quadratic_variation(jump_path)
        assert value_at(qv, 4.0) == pytest.approx(0.25 + 0.0625 + 1.0)

    def test_jump_integral(self, jump_path: CadlagPath) -> None:  # noqa: F811
        summed = jump_integral(jump_path, functional("identity"))
        assert value_at(summed, 4.0) == pytest.approx(1.25)

    def test_jump_integral_domain(self, absorbed_path: CadlagPath) -> None:  # noqa: F811
        with pytest.raises(DomainException):
            jump_integral(absorbed_path, functional("log1p"))
