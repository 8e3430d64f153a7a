import warnings

import numpy as np
import pytest

from dnform.eigen import solve_modes
from dnform.model import BeamConfig, assemble_vk_beam, polynomial_model


@pytest.fixture(scope="session")
def beam():
    return assemble_vk_beam(BeamConfig())


@pytest.fixture(scope="session")
def beam_modes(beam):
    return solve_modes(beam, 10, (0,))


@pytest.fixture(scope="session")
def midspan(beam):
    return beam.find_dof(10, "transverse")


@pytest.fixture(scope="session")
def beam_dnf1(beam, beam_modes):
    from dnform.dnf import compute_dnf
    return compute_dnf(beam, beam_modes, (0,), order=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def modal_model(omegas, g=None, h=None):
    """Unit-mass model in modal coordinates with the given tensors."""
    n = len(omegas)
    return polynomial_model(np.eye(n), np.diag(np.asarray(omegas, float) ** 2), g, h)


@pytest.fixture(autouse=True)
def _quiet_resonance_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="near resonance", category=RuntimeWarning)
        yield
