import itertools

import numpy as np
import pytest

from dnform.eigen import solve_modes
from dnform.errors import ValidationError
from dnform.oracle import random_nonresonant_model
from dnform.step import (CountingModel, cubic_force, quadratic_force, step_evaluation_count,
                         step_tensors)


@pytest.fixture(scope="module")
def poly():
    model = random_nonresonant_model(np.random.default_rng(7), 6, masters=(0, 2, 3))
    return model, solve_modes(model, 6, (0, 2, 3))


class TestPolarization:
    def test_matches_dense_tensors(self, poly, rng):
        model, _ = poly
        G, H = model.force_evaluator.quadratic, model.force_evaluator.cubic
        u, v, w = rng.standard_normal((3, 6))
        assert np.allclose(quadratic_force(model, v, w), np.einsum("prs,r,s->p", G, v, w))
        assert np.allclose(cubic_force(model, u, v, w),
                           np.einsum("prst,r,s,t->p", H, u, v, w))

    def test_batched(self, poly, rng):
        model, _ = poly
        V, W = rng.standard_normal((2, 4, 6))
        batch = quadratic_force(model, V, W)
        for k in range(4):
            assert np.allclose(batch[k], quadratic_force(model, V[k], W[k]))

    def test_symmetric_in_arguments(self, beam, beam_modes):
        p1, p2, p3 = beam_modes.phis[:, :3].T
        g12, g21 = quadratic_force(beam, p1, p2), quadratic_force(beam, p2, p1)
        assert np.allclose(g12, g21, rtol=0, atol=1e-12 * np.abs(g12).max())
        h = [cubic_force(beam, *perm) for perm in itertools.permutations((p1, p2, p3))]
        scale = np.abs(h[0]).max()
        assert all(np.allclose(x, h[0], rtol=0, atol=1e-9 * scale) for x in h)

    def test_amplitude_independent(self, beam, beam_modes):
        p1 = beam_modes.phis[:, 0]
        ref = cubic_force(beam, p1, p1, p1)
        for amp in (1e-3, 1e-5):
            got = cubic_force(beam, p1, p1, p1, amplitude=amp)
            assert np.allclose(got, ref, rtol=0, atol=1e-6 * np.abs(ref).max())

    def test_shape_mismatch(self, poly):
        model, _ = poly
        with pytest.raises(ValidationError):
            quadratic_force(model, np.zeros(6), np.zeros(5))


class TestStepTensors:
    def test_exact_on_polynomial(self, poly):
        model, sp = poly
        st = step_tensors(model, sp)
        G, H = model.force_evaluator.quadratic, model.force_evaluator.cubic
        V = sp.phis
        for i, j in itertools.combinations_with_replacement(sp.master_indices, 2):
            assert np.allclose(st.G(i, j), np.einsum("prs,r,s->p", G, V[:, i], V[:, j]),
                               rtol=1e-12, atol=1e-12)
            assert st.g(1, j, i) == pytest.approx(V[:, 1] @ st.G(i, j))
        for i, j, k in itertools.combinations_with_replacement(sp.master_indices, 3):
            ref = np.einsum("prst,r,s,t->p", H, V[:, i], V[:, j], V[:, k])
            assert np.allclose(st.H(k, j, i), ref, rtol=1e-12, atol=1e-12)

    def test_entry_counts(self, poly):
        model, sp = poly
        st = step_tensors(model, sp)
        n = len(sp.master_indices)
        assert len(st.quadratic) == n * (n + 1) // 2
        assert len(st.cubic) == n * (n + 1) * (n + 2) // 6

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_evaluation_count(self, beam, beam_modes, n):
        counter = CountingModel(beam)
        st = step_tensors(counter, beam_modes, tuple(range(n)))
        assert st.n_evaluations == step_evaluation_count(n)
        assert counter.count == step_evaluation_count(n)

    def test_evaluation_count_values(self):
        # single mode: +-phi only; two modes: phi1, phi2, phi1+phi2, 2phi1, 2phi2, 2phi1+phi2, ...
        assert step_evaluation_count(1) == 2
        assert step_evaluation_count(2) == 2 * (2 + 1 + 2 + 2)

    def test_no_masters(self, poly):
        model, sp = poly
        with pytest.raises(ValidationError):
            step_tensors(model, sp, ())
        with pytest.raises(ValidationError):
            step_tensors(model, sp, (9,))
