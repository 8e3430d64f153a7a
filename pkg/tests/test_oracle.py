import itertools

import numpy as np
import pytest

from dnform.errors import NumericalError, ValidationError
from dnform.oracle import (DenseModalSystem, MAX_SIZE, equivalence_suite,
                           mass_inverse_second_order, modal_AB, modal_second_order,
                           modal_system_from_model, modal_third_order,
                           random_nonresonant_model, random_symmetric_tensors)


@pytest.fixture(scope="module")
def system():
    m = random_nonresonant_model(np.random.default_rng(5), 6)
    return modal_system_from_model(m) + (m,)


class TestDenseModalSystem:
    def test_rejects_asymmetric(self):
        g = np.zeros((2, 2, 2))
        g[0, 0, 1] = 1.0
        with pytest.raises(ValidationError):
            DenseModalSystem(np.ones(2), g, np.zeros((2,) * 4))

    def test_size_limit(self):
        n = MAX_SIZE + 1
        with pytest.raises(ValidationError):
            DenseModalSystem(np.ones(n), np.zeros((n,) * 3), np.zeros((1,) * 4))

    def test_projection_keeps_force(self, system, rng):
        sysm, sp, m = system
        # modal force of modal coordinates equals projected physical force
        q = rng.standard_normal(6)
        f_phys = sp.phis.T @ m.nonlinear_force(sp.phis @ q)
        f_mod = np.einsum("sij,i,j->s", sysm.g, q, q) + np.einsum("sijk,i,j,k->s", sysm.h, q, q, q)
        assert np.allclose(f_mod, f_phys)


class TestSecondOrderForms:
    @pytest.mark.parametrize("form", ["closed", "system"])
    def test_forms_agree(self, system, form):
        sysm = system[0]
        ref = modal_second_order(sysm, "split")
        other = modal_second_order(sysm, form)
        for key in ("a", "b", "gamma"):
            assert np.allclose(other[key], ref[key], rtol=1e-10, atol=1e-12 * np.abs(ref[key]).max())

    def test_mass_inverse(self, system):
        sysm, sp, m = system
        a = modal_second_order(sysm)["a"]
        G = m.force_evaluator.quadratic
        V = sp.phis
        force = np.einsum("prs,r,s->p", G, V[:, 1], V[:, 4])
        got = mass_inverse_second_order(m.mass, m.stiffness, sp.omegas[1], sp.omegas[4], force)
        assert np.allclose(got, V @ a[1, 4], rtol=1e-10)

    def test_resonance_raises(self):
        g = np.zeros((2, 2, 2))
        g[1, 0, 0] = 1.0
        with pytest.raises(NumericalError):
            modal_second_order(DenseModalSystem(np.array([1.0, 2.0]), g, np.zeros((2,) * 4)))

    def test_unknown_form(self, system):
        with pytest.raises(ValidationError):
            modal_second_order(system[0], "partial")


class TestThirdOrder:
    def test_system_form_agrees(self, system):
        sysm = system[0]
        o2 = modal_second_order(sysm)
        A, B = modal_AB(sysm, o2["a"], o2["b"])
        trip = [t for t in itertools.permutations(range(4), 3)]
        split = modal_third_order(sysm, A, B, "split", trip)
        solved = modal_third_order(sysm, A, B, "system", trip)
        for key in ("r", "u", "mu", "nu"):
            idx = tuple(np.array(trip).T)
            ref = split[key][idx]
            assert np.allclose(solved[key][idx], ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())

    def test_trivially_resonant_rows_blank(self, system):
        sysm = system[0]
        o2 = modal_second_order(sysm)
        A, B = modal_AB(sysm, o2["a"], o2["b"])
        o3 = modal_third_order(sysm, A, B, "split", [(0, 0, 0)])
        # x_0^3 contains w_0: its own row is not part of the mapping
        assert np.isnan(o3["r"][0, 0, 0, 0])
        assert np.all(np.isfinite(o3["r"][0, 0, 0, 1:]))


class TestRandomSystems:
    def test_tensors_are_potential_gradients(self, rng):
        G, H = random_symmetric_tensors(rng, 4)
        for perm in itertools.permutations(range(3)):
            assert np.allclose(G, G.transpose(perm))
        x, v = rng.standard_normal((2, 4))
        V = lambda y: np.einsum("ijk,i,j,k", G, y, y, y) / 3 + np.einsum("ijkl,i,j,k,l", H, y, y, y, y) / 4
        f = np.einsum("pij,i,j->p", G, x, x) + np.einsum("pijk,i,j,k->p", H, x, x, x)
        h = 1e-5
        assert (V(x + h * v) - V(x - h * v)) / (2 * h) == pytest.approx(f @ v, rel=1e-7)

    def test_nonresonant_gap(self, rng):
        m = random_nonresonant_model(rng, 5, min_gap=0.05)
        sysm, _ = modal_system_from_model(m)
        w = sysm.omegas
        for i, j in itertools.combinations_with_replacement(range(5), 2):
            assert np.all(np.abs((w[i] + w[j]) ** 2 - w**2) >= 0.05 * w**2)


def test_equivalence_suite_small():
    err = equivalence_suite(n_systems=3, seed=3, sizes=(4, 6))
    assert max(err["order2"], err["order3"]) <= 1e-8
    assert max(err["split_vs_closed"], err["split_vs_system"], err["split_vs_mass_inverse"],
               err["split_vs_system_3"]) <= 1e-10
