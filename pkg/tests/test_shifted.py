import numpy as np
import pytest

from dnform.eigen import solve_modes
from dnform.errors import SmallDenominatorError, ValidationError
from dnform.model import polynomial_model
from dnform.shifted import ShiftedSolver, solve_sigma_system


@pytest.fixture(scope="module")
def pencil():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((8, 8))
    M = np.eye(8) + 0.2 * (A @ A.T + (A @ A.T).T) / 16
    K = np.diag(np.arange(1.0, 9.0) ** 2) * 1e4
    model = polynomial_model(M, K)
    return model, solve_modes(model, 8, (0,))


class TestShiftedSolver:
    def test_plain_solve(self, pencil, rng):
        model, sp = pencil
        rhs = rng.standard_normal(8)
        sigma = 0.5 * (sp.omegas[2] + sp.omegas[3])
        Z, P = ShiftedSolver(model, sp).solve(sigma, rhs)
        assert np.allclose((sigma**2 * model.mass - model.stiffness) @ Z, rhs)
        assert P.shape == (0,)

    def test_cache_reuse(self, pencil, rng):
        model, sp = pencil
        s = ShiftedSolver(model, sp)
        sigma = 1.5 * sp.omegas[0]
        s.solve(sigma, rng.standard_normal(8))
        s.solve(-sigma, rng.standard_normal((8, 3)))
        s.solve(sigma * (1 + 1e-14), rng.standard_normal(8))
        assert s.n_factorizations == 1 and s.n_solves == 3

    @pytest.mark.parametrize("s", [0, 4])
    def test_bordered_resonant_shift(self, pencil, rng, s):
        model, sp = pencil
        rhs = rng.standard_normal(8)
        Z, P = ShiftedSolver(model, sp).solve(sp.omegas[s], rhs, border=(s,))
        phi = sp.phis[:, s]
        M = model.mass
        assert abs(phi @ M @ Z) <= 1e-10 * np.sqrt(Z @ M @ Z)
        # the retained component is the projection of the right-hand side
        assert P[0] == pytest.approx(phi @ rhs, rel=1e-10)
        A = sp.omegas[s] ** 2 * M - model.stiffness
        assert np.allclose(A @ Z + P[0] * (M @ phi), rhs, atol=1e-9 * np.abs(rhs).max())

    def test_resonant_without_border_raises(self, pencil):
        model, sp = pencil
        with pytest.raises(SmallDenominatorError, match="resonant with mode"):
            ShiftedSolver(model, sp).solve(sp.omegas[1] * (1 + 1e-5), np.ones(8))

    def test_uncomputed_mode_singular(self):
        model = polynomial_model(np.eye(2), np.diag([1.0, 9.0]))
        sp = solve_modes(model, 1, (0,))
        with pytest.raises(SmallDenominatorError, match="singular"):
            ShiftedSolver(model, sp).solve(3.0, np.ones(2))

    def test_input_checks(self, pencil):
        model, sp = pencil
        with pytest.raises(ValidationError):
            ShiftedSolver(model, sp).solve(1.0, np.ones(7))
        with pytest.raises(ValidationError):
            ShiftedSolver(model).solve(sp.omegas[0], np.ones(8), border=(0,))

    def test_one_shot(self, pencil, rng):
        model, sp = pencil
        rhs = rng.standard_normal(8)
        Z, p = solve_sigma_system(model, sp.omegas[0], rhs, resonant_mode=0, spectrum=sp)
        assert p == pytest.approx(sp.phis[:, 0] @ rhs, rel=1e-10)
        Z2, p2 = solve_sigma_system(model, 0.0, rhs)
        assert p2 == 0.0
        assert np.allclose(model.stiffness @ Z2, -rhs)
