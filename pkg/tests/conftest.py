"""Shared fixtures: the built-in families in both scalar modes."""

import pytest

from src.core.scalars import Mode
from src.fractal.harmonic import basis_function
from src.fractal.zoo import from_family


@pytest.fixture(scope="session")
def sg():
    """Sierpinski gasket gasket:2,2, rational mode."""
    return from_family("gasket:2,2")[1]


@pytest.fixture(scope="session")
def sg_float():
    return from_family("gasket:2,2", Mode.FLOAT)[1]


@pytest.fixture(scope="session")
def hata():
    """Hata's set with r = 1/2 (weights 1/2, 3/4), rational mode."""
    return from_family("hata:1/2")[1]


@pytest.fixture(scope="session")
def interval():
    return from_family("interval")[1]


@pytest.fixture(scope="session")
def sg_basis(sg):
    return [basis_function(sg, q) for q in (1, 2, 3)]


@pytest.fixture(scope="session")
def hata_basis(hata):
    return [basis_function(hata, q) for q in (1, 2, 3)]
