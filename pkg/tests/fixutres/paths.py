import numpy as np
from pytest import fixture

from jumplab import CadlagPath, CompensatorSpec, EnsembleRunner
from jumplab.functionals import Atom
from jumplab.path_core import ConstantDrift


def three_jump_path() -> CadlagPath:
    return CadlagPath.pure_jump([(1.0, 0.5), (2.0, -0.25), (3.0, 1.0)], horizon=4.0)


@fixture
def jump_path() -> CadlagPath:
    return three_jump_path()


@fixture
def drift_path() -> CadlagPath:
    return CadlagPath(
        initial=1.0,
        jump_times=np.array([2.0]),
        jump_sizes=np.array([-1.0]),
        horizon=4.0,
        drift=(ConstantDrift(0.0, 4.0, 0.5),),
    )


@fixture
def absorbed_path() -> CadlagPath:
    return CadlagPath.pure_jump([(1.0, 0.5), (2.0, -1.0)], horizon=3.0)


@fixture
def runner() -> EnsembleRunner:
    return EnsembleRunner(threads=1)


def martingale_path() -> tuple[CadlagPath, CompensatorSpec]:
    path = CadlagPath.pure_jump([(1.0, 1.0), (2.0, -0.5), (3.0, 1.0)], horizon=4.0)
    atoms = tuple(Atom(time=t, sizes=(1.0, -0.5), masses=(1 / 3, 2 / 3)) for t in (1.0, 2.0, 3.0))
    return path, CompensatorSpec(atoms=atoms)
