import csv

import numpy as np
import pytest

from dnform.dnf import compute_dnf
from dnform.eigen import solve_modes
from dnform.errors import ValidationError
from dnform.hbm import (Branch, ForcingSpec, FullSystem, HbmConfig, RomSystem, backbone,
                        default_time_samples, first_harmonic_amplitude, frf, hbm_jacobian,
                        hbm_residual, reconstructed_amplitude, solve_point, time_series)
from dnform.model import DampingSpec, polynomial_model
from dnform.oracle import random_nonresonant_model
from dnform.rom import RomModel, assemble_rom


@pytest.fixture(scope="module")
def duffing():
    H = np.zeros((1, 1, 1, 1))
    H[0, 0, 0, 0] = 1.0
    return polynomial_model(np.eye(1), np.eye(1), None, H)


class TestConfig:
    def test_defaults(self):
        c = HbmConfig()
        assert c.n_harmonics == 9 and c.n_time_samples == default_time_samples(9) == 64
        assert default_time_samples(1) == 8

    @pytest.mark.parametrize("kw", [{"n_harmonics": 0}, {"n_harmonics": 9, "n_time_samples": 36},
                                    {"step": 0.5}, {"step_min": 0.1, "step": 0.05},
                                    {"tol": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            HbmConfig(**kw)

    def test_from_mapping(self):
        assert HbmConfig.from_mapping({"n_harmonics": 3}).n_harmonics == 3
        with pytest.raises(ValidationError, match="unknown"):
            HbmConfig.from_mapping({"harmonics": 3})


class TestResidual:
    def test_linear_forced_response(self):
        m = polynomial_model(np.eye(2), np.diag([1.0, 4.0]))
        F = np.array([1.0, 0.5])
        w, zeta = 1.3, 0.1
        X = solve_point(FullSystem(m, DampingSpec(zeta, 0.0), F), w, HbmConfig(n_harmonics=3))
        # x = Re(z e^{iwt}) with (K - w^2 M + i w C) z = F
        z = np.linalg.solve(np.diag([1.0, 4.0]) - w**2 * np.eye(2) + 1j * w * zeta * np.eye(2), F)
        assert np.allclose(X[1], z.real) and np.allclose(X[2], -z.imag)
        assert np.allclose(X[[0, 3, 4, 5, 6]], 0.0)

    def test_residual_vanishes_on_solution(self, duffing):
        sys_ = FullSystem(duffing, DampingSpec(0.05, 0.0), ForcingSpec(0, 0.2))
        cfg = HbmConfig(n_harmonics=7, tol=1e-12)
        X = solve_point(sys_, 1.2, cfg)
        assert np.abs(hbm_residual(sys_, X, 1.2, config=cfg)).max() <= 1e-10
        assert abs(X[5, 0]) > 1e-4          # third harmonic generated by the cubic term
        # odd nonlinearity: no mean and no even harmonics
        assert np.allclose(X[[0, 3, 4, 7, 8, 11, 12]], 0.0, atol=1e-14)

    def test_jacobian(self, rng):
        m = random_nonresonant_model(rng, 3)
        sys_ = FullSystem(m, DampingSpec(0.1, 1e-3))
        X = 0.05 * rng.standard_normal((7, 3))
        J = hbm_jacobian(sys_, X, 2.0)
        v = rng.standard_normal(21)
        h = 1e-6
        fd = (hbm_residual(sys_, X.ravel() + h * v, 2.0) - hbm_residual(sys_, X.ravel() - h * v, 2.0)) / (2 * h)
        assert np.allclose(J @ v, fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())

    def test_shape_errors(self, duffing):
        with pytest.raises(ValidationError):
            hbm_residual(FullSystem(duffing), np.zeros((4, 1)), 1.0)
        with pytest.raises(ValidationError):
            FullSystem(duffing, forcing=ForcingSpec(3, 1.0))

    def test_time_series(self):
        X = np.zeros((5, 1))
        X[0], X[1], X[4] = 0.1, 1.0, 0.5
        t, x = time_series(X, 2.0, 64)
        assert np.allclose(x[:, 0], 0.1 + np.cos(2 * t) + 0.5 * np.sin(4 * t))
        assert first_harmonic_amplitude(X, 0) == 1.0


class TestBackbone:
    @pytest.mark.parametrize("formulation", ["even", "phase"])
    def test_duffing_asymptotics(self, duffing, formulation):
        cfg = HbmConfig(n_harmonics=5, amplitude_cap=0.3, step=0.02, tol=1e-11)
        br = backbone(FullSystem(duffing), 0, cfg, probe=0, formulation=formulation)
        a = br.first_harmonic()
        pred = 1 + 3 * a**2 / 8
        small = a <= 0.1
        assert small.sum() >= 5 and br.reason == "amplitude cap reached"
        # next correction of the series is O(a^4)
        assert np.max(np.abs(br.omega[small] - pred[small])) <= 1e-5
        assert np.all(np.diff(br.omega) > 0) and br.n_folds == 0
        assert br.info["formulation"] == formulation
        if formulation == "phase":
            assert np.abs(br.lam).max() <= 1e-8

    def test_formulations_agree(self, duffing):
        cfg = HbmConfig(n_harmonics=5, amplitude_cap=0.2, step=0.02, tol=1e-11)
        a = backbone(FullSystem(duffing), 0, cfg, probe=0, formulation="even")
        b = backbone(FullSystem(duffing), 0, cfg, probe=0, formulation="phase")
        amp = a.first_harmonic()
        assert np.allclose(np.interp(amp, b.first_harmonic(), b.omega), a.omega, rtol=1e-9)

    def test_rom_matches_reconstruction(self, beam_dnf1, midspan):
        rom = assemble_rom(beam_dnf1, "O3-trivial")
        cap = 5e-3 / abs(beam_dnf1.phis[midspan, 0])
        br = backbone(RomSystem(rom), 0, HbmConfig(n_harmonics=5, amplitude_cap=cap))
        amp = reconstructed_amplitude(br, beam_dnf1, midspan)
        assert amp[-1] == pytest.approx(5e-3, rel=0.05)
        assert np.all(np.diff(amp) > 0)
        lin = reconstructed_amplitude(br, beam_dnf1, midspan, order=2)
        assert np.allclose(lin, amp, rtol=0.02)

    def test_damping_terms_ignored(self):
        m = random_nonresonant_model(np.random.default_rng(9), 4, masters=(0,))
        sp = solve_modes(m, 4, (0,))
        t = compute_dnf(m, sp, (0,), order=2, damping=DampingSpec(0.01, 1e-4))
        cfg = HbmConfig(n_harmonics=3, max_steps=10)
        damped = backbone(RomSystem(assemble_rom(t, "O2-full", nonlinear_damping="self")), 0, cfg)
        plain = backbone(RomSystem(assemble_rom(t, "O2-full").without_damping()), 0, cfg)
        assert np.array_equal(damped.omega, plain.omega)

    def test_even_rejects_odd_velocity_terms(self):
        rom = RomModel((0,), np.array([1.0]), np.zeros(1), np.array([0]), np.array([[2]]),
                       np.array([[1]]), np.array([0.1]))
        with pytest.raises(ValidationError, match="odd velocity"):
            backbone(RomSystem(rom), 0, HbmConfig(n_harmonics=3, max_steps=3))

    def test_bad_formulation(self, duffing):
        with pytest.raises(ValidationError):
            backbone(FullSystem(duffing), 0, HbmConfig(), formulation="sine")


class TestFrf:
    def test_duffing_folds(self, duffing):
        sys_ = FullSystem(duffing, DampingSpec(0.02, 0.0), ForcingSpec(0, 0.05))
        cfg = HbmConfig(n_harmonics=5, omega_window=(0.5, 2.0), step=0.05, step_max=0.1,
                        max_steps=2000)
        br = frf(sys_, cfg)
        assert br.n_folds == 2
        lo, hi = sorted(br.omega[br.fold])
        assert 1.0 < lo < hi < 2.0
        # the resonance peak sits on the backbone
        k = np.argmax(br.amplitude)
        bb = backbone(FullSystem(duffing), 0, HbmConfig(n_harmonics=5, amplitude_cap=2.0), probe=0)
        w_bb = np.interp(br.first_harmonic()[k], bb.first_harmonic(), bb.omega)
        assert br.omega[k] == pytest.approx(w_bb, rel=0.01)

    def test_needs_window_and_force(self, duffing):
        with pytest.raises(ValidationError, match="window"):
            frf(FullSystem(duffing, forcing=ForcingSpec(0, 1.0)), HbmConfig())
        with pytest.raises(ValidationError, match="forcing"):
            frf(FullSystem(duffing), HbmConfig(omega_window=(0.5, 1.5)))


class TestBranchOutput:
    def test_csv(self, tmp_path, duffing):
        br = backbone(FullSystem(duffing), 0, HbmConfig(n_harmonics=3, amplitude_cap=0.1), probe=0)
        assert isinstance(br, Branch)
        path = tmp_path / "b.csv"
        br.to_csv(path, omega_ref=1.0)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["omega_rad_s", "omega_over_omega_ref_1", "probe_amplitude_m",
                               "fold_flag_1"]
        assert len(rows[0]) == 4 + 4 and len(rows) == len(br) + 1
        assert float(rows[-1][0]) == pytest.approx(br.omega[-1], rel=1e-12)
        assert br.harmonic_norms().shape == (len(br), 4)
