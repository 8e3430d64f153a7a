"""Harmonic balance (AFT) with pseudo-arclength continuation.

Unknowns are real Fourier coefficients ordered ``[c0, a1, b1, ..., aH, bH]``
per coordinate, ``x(t) = c0 + sum_k a_k cos(k w t) + b_k sin(k w t)``, stored
as an array of shape ``(2H+1, n)``.  The nonlinear force is sampled on
``n_time_samples`` equally spaced instants and projected back (alternating
frequency/time); with at least ``4H+1`` samples a cubic polynomial force is
projected without aliasing.

Two kinds of branches are traced:

* forced responses (``frf``): unknowns ``(x, w)``;
* backbones (``backbone``) of the conservative system, either with a
  cosine-only series (reversible systems: unknowns ``(a, w)``, the sine
  equations vanish identically) or with the full series, unknowns
  ``(x, w, lam)``, the phase condition ``b1[probe] = 0`` and an unfolding
  term ``lam M x'`` that removes the degeneracy of the conservative family
  (``lam`` vanishes on every solution).

Continuation works in scaled variables (displacements by ``x_scale``,
frequency by the reference frequency); folds are flagged where the
frequency component of the branch tangent changes sign.
"""

from dataclasses import dataclass, field, replace
import csv
import logging
import math

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "HbmConfig",
    "ForcingSpec",
    "Branch",
    "FullSystem",
    "RomSystem",
    "default_time_samples",
    "hbm_residual",
    "hbm_jacobian",
    "continue_branch",
    "backbone",
    "frf",
    "solve_point",
    "time_series",
    "first_harmonic_amplitude",
    "reconstructed_amplitude",
]


def default_time_samples(n_harmonics):
    """Smallest power of two ``>= 4H + 2``."""
    return 2 ** math.ceil(math.log2(4 * n_harmonics + 2))


@dataclass(frozen=True)
class HbmConfig:
    """Harmonic-balance and continuation settings.

    Attributes
    ----------
    n_harmonics : int
    n_time_samples : int, optional
        Defaults to :func:`default_time_samples`; must be ``>= 4H + 1``.
    tol : float
        Corrector tolerance on the scaled residual norm.
    max_newton : int
    max_steps : int
    step, step_min, step_max : float
        Arclength step (scaled variables).
    kick : float
        Backbone start-up force, relative to ``K``-scale times ``x_scale``.
    omega_window : (float, float)
        Branch window (rad/s); ``None`` entries are unbounded.
    amplitude_cap : float, optional
        Stop when the probe amplitude exceeds this value.
    x_scale : float, optional
        Displacement scale of the continuation variables.
    """

    n_harmonics: int = 9
    n_time_samples: int = None
    tol: float = 1e-8
    max_newton: int = 15
    max_steps: int = 400
    step: float = 0.05
    step_min: float = 1e-6
    step_max: float = 0.2
    kick: float = 1e-4
    omega_window: tuple = (None, None)
    amplitude_cap: float = None
    x_scale: float = None

    def __post_init__(self):
        H = int(self.n_harmonics)
        if H < 1:
            raise ValidationError("at least one harmonic is required")
        nt = default_time_samples(H) if self.n_time_samples is None else int(self.n_time_samples)
        if nt < 4 * H + 1:
            raise ValidationError(f"n_time_samples={nt} < 4H+1={4 * H + 1}: cubic terms would alias")
        object.__setattr__(self, "n_harmonics", H)
        object.__setattr__(self, "n_time_samples", nt)
        if not 0 < self.step_min <= self.step <= self.step_max:
            raise ValidationError("steps must satisfy 0 < step_min <= step <= step_max")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        if "omega_window" in data:
            data["omega_window"] = tuple(data["omega_window"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown continuation settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ForcingSpec:
    """Harmonic force ``F cos(W t)`` on one coordinate.

    ``dof`` is a physical dof index for the full model; for a ROM the force
    is projected on the masters (see :meth:`RomSystem.from_rom`).
    """

    dof: int
    amplitude: float
    direction: str = ""

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValidationError("forcing amplitude must be non-negative")


# ---------------------------------------------------------------------------
# systems

class FullSystem:
    """Full-order model ``M x'' + C x' + K x + f(x) = F cos(W t)``.

    Parameters
    ----------
    model : StructuralModel
    damping : DampingSpec, optional
    forcing : ForcingSpec or ndarray, optional
    """

    kind = "full"

    def __init__(self, model, damping=None, forcing=None):
        self.model = model
        self.n = model.n_dof
        self.M = np.asarray(model.mass)
        self.K = np.asarray(model.stiffness)
        if damping is not None and not damping.is_zero:
            self.C = damping.zeta_m * self.M + damping.zeta_k * self.K
        else:
            self.C = None
        self.force = _force_vector(forcing, self.n)
        self.row_scale = 1.0 / np.diag(self.K)
        self.velocity_dependent = False

    def nl(self, x, v):
        return self.model.nonlinear_force(x)

    def nl_jac(self, x, v):
        return self.model.nonlinear_tangent(x), None


class RomSystem:
    """Reduced dynamics of a :class:`~dnform.rom.RomModel` (unit modal mass)."""

    kind = "rom"

    def __init__(self, rom, forcing=None):
        self.rom = rom
        self.n = rom.n
        self.M = np.eye(self.n)
        self.K = np.diag(rom.omegas**2)
        self.C = np.diag(rom.zeta) if np.any(rom.zeta) else None
        if forcing is None and rom.forcing is not None:
            forcing = rom.forcing
        self.force = _force_vector(forcing, self.n)
        self.row_scale = 1.0 / rom.omegas**2
        self.velocity_dependent = bool(rom.S_exp.any()) if rom.n_monomials else False

    @classmethod
    def from_rom(cls, rom, tensors=None, forcing=None):
        """ROM system; a physical :class:`ForcingSpec` is projected with ``tensors.phis``."""
        if isinstance(forcing, ForcingSpec):
            if tensors is None:
                raise ValidationError("projecting a physical force needs the mapping tensors")
            forcing = tensors.phis[forcing.dof] * forcing.amplitude
        return cls(rom, forcing)

    def nl(self, x, v):
        return self.rom.nonlinear(x.T, v.T).T

    def nl_jac(self, x, v):
        dR, dS = self.rom.nonlinear_jacobian(x.T, v.T)
        dS = dS.transpose(2, 0, 1) if self.velocity_dependent else None
        return dR.transpose(2, 0, 1), dS


def _force_vector(forcing, n):
    if forcing is None:
        return None
    if isinstance(forcing, ForcingSpec):
        if not 0 <= forcing.dof < n:
            raise ValidationError(f"forcing dof {forcing.dof} out of range 0..{n - 1}")
        f = np.zeros(n)
        f[forcing.dof] = forcing.amplitude
        return f
    f = np.asarray(forcing, dtype=float)
    if f.shape != (n,):
        raise ValidationError(f"forcing vector must have shape ({n},)")
    return f


# ---------------------------------------------------------------------------
# AFT machinery

class _Basis:
    """Sampling/projection matrices for ``H`` harmonics and ``N`` samples."""

    def __init__(self, H, N):
        self.H, self.N = H, N
        th = 2 * np.pi * np.arange(N) / N
        k = np.arange(1, H + 1)
        E = np.zeros((N, 2 * H + 1))
        Ed = np.zeros_like(E)
        E[:, 0] = 1.0
        E[:, 1::2] = np.cos(np.outer(th, k))
        E[:, 2::2] = np.sin(np.outer(th, k))
        Ed[:, 1::2] = -k * np.sin(np.outer(th, k))
        Ed[:, 2::2] = k * np.cos(np.outer(th, k))
        P = E.T * (2.0 / N)
        P[0] *= 0.5
        self.E, self.Ed, self.P = E, Ed, P
        self.k = k


_BASES = {}


def _basis(H, N):
    key = (H, N)
    if key not in _BASES:
        _BASES[key] = _Basis(H, N)
    return _BASES[key]




def _residual(system, X, omega, basis, lam=0.0, force=None):
    """Frequency-domain residual, shape ``(2H+1, n)``."""
    H = basis.H
    k = basis.k[:, None]
    Xa, Xb = X[1::2], X[2::2]
    Rres = np.empty_like(X)
    Rres[0] = X[0] @ system.K.T
    Ka, Kb = Xa @ system.K.T, Xb @ system.K.T
    Ma, Mb = Xa @ system.M.T, Xb @ system.M.T
    Rres[1::2] = Ka - (k * omega) ** 2 * Ma
    Rres[2::2] = Kb - (k * omega) ** 2 * Mb
    if system.C is not None:
        Ca, Cb = Xa @ system.C.T, Xb @ system.C.T
        Rres[1::2] += k * omega * Cb
        Rres[2::2] -= k * omega * Ca
    if lam:
        Rres[1::2] += lam * k * omega * Mb
        Rres[2::2] -= lam * k * omega * Ma
    x_t = basis.E @ X
    v_t = omega * (basis.Ed @ X)
    Rres += basis.P @ system.nl(x_t, v_t)
    f = system.force if force is None else force
    if f is not None:
        Rres[1] -= f
    return Rres


def _jacobian(system, X, omega, basis, lam=0.0):
    """Derivatives of :func:`_residual` w.r.t. ``X`` (flattened), ``omega`` and ``lam``."""
    H, n = basis.H, system.n
    m = (2 * H + 1) * n
    J = np.zeros((2 * H + 1, n, 2 * H + 1, n))
    dw = np.zeros((2 * H + 1, n))
    dlam = np.zeros((2 * H + 1, n))
    J[0, :, 0, :] = system.K
    Xa, Xb = X[1::2], X[2::2]
    for kk in range(1, H + 1):
        ia, ib = 2 * kk - 1, 2 * kk
        D = system.K - (kk * omega) ** 2 * system.M
        J[ia, :, ia, :] = D
        J[ib, :, ib, :] = D
        dw[ia] = -2 * kk**2 * omega * (system.M @ Xa[kk - 1])
        dw[ib] = -2 * kk**2 * omega * (system.M @ Xb[kk - 1])
        if system.C is not None:
            J[ia, :, ib, :] += kk * omega * system.C
            J[ib, :, ia, :] -= kk * omega * system.C
            dw[ia] += kk * (system.C @ Xb[kk - 1])
            dw[ib] -= kk * (system.C @ Xa[kk - 1])
        J[ia, :, ib, :] += lam * kk * omega * system.M
        J[ib, :, ia, :] -= lam * kk * omega * system.M
        dw[ia] += lam * kk * (system.M @ Xb[kk - 1])
        dw[ib] -= lam * kk * (system.M @ Xa[kk - 1])
        dlam[ia] = kk * omega * (system.M @ Xb[kk - 1])
        dlam[ib] = -kk * omega * (system.M @ Xa[kk - 1])
    x_t = basis.E @ X
    xd_t = basis.Ed @ X
    v_t = omega * xd_t
    dfx, dfv = system.nl_jac(x_t, v_t)
    J += np.einsum("ht,tij,tg->higj", basis.P, dfx, basis.E, optimize=True)
    if dfv is not None:
        J += omega * np.einsum("ht,tij,tg->higj", basis.P, dfv, basis.Ed, optimize=True)
        dw += basis.P @ np.einsum("tij,tj->ti", dfv, xd_t)
    return J.reshape(m, m), dw.ravel(), dlam.ravel()


def hbm_residual(system, coeffs, omega, forcing=None, config=None):
    """Harmonic-balance residual of ``system`` at ``omega``.

    Parameters
    ----------
    system : FullSystem or RomSystem
    coeffs : ndarray, shape (2H+1, n) or ((2H+1) n,)
    omega : float
        Fundamental frequency (rad/s).
    forcing : ndarray, shape (n,), optional
        Overrides the system forcing.
    config : HbmConfig, optional
        Provides the number of time samples.

    Returns
    -------
    ndarray, same shape as ``coeffs``
    """
    X = np.asarray(coeffs, dtype=float)
    flat = X.ndim == 1
    if flat:
        if X.size % system.n:
            raise ValidationError(f"coefficient vector of size {X.size} does not match n={system.n}")
        X = X.reshape(-1, system.n)
    if X.shape[1] != system.n or X.shape[0] % 2 != 1:
        raise ValidationError(f"coefficient block of shape {X.shape} is not (2H+1, {system.n})")
    H = (X.shape[0] - 1) // 2
    nt = config.n_time_samples if config is not None else default_time_samples(H)
    if nt < 4 * H + 1:
        raise ValidationError("too few time samples for the harmonic count")
    f = None if forcing is None else _force_vector(forcing, system.n)
    R = _residual(system, X, float(omega), _basis(H, nt), force=f)
    return R.ravel() if flat else R


def hbm_jacobian(system, coeffs, omega, config=None):
    """Jacobian of :func:`hbm_residual` w.r.t. the flattened coefficients."""
    X = np.asarray(coeffs, dtype=float).reshape(-1, system.n)
    H = (X.shape[0] - 1) // 2
    nt = config.n_time_samples if config is not None else default_time_samples(H)
    return _jacobian(system, X, float(omega), _basis(H, nt))[0]


def time_series(coeffs, omega, n_samples=256):
    """Sampled signal over one period: ``t`` and ``x`` of shape ``(n_samples, n)``."""
    X = np.asarray(coeffs, dtype=float)
    H = (X.shape[0] - 1) // 2
    th = 2 * np.pi * np.arange(n_samples) / n_samples
    k = np.arange(1, H + 1)
    x = X[0] + np.cos(np.outer(th, k)) @ X[1::2] + np.sin(np.outer(th, k)) @ X[2::2]
    return th / omega, x


def first_harmonic_amplitude(coeffs, index):
    X = np.asarray(coeffs)
    return float(np.hypot(X[1, index], X[2, index]))


def _peak(X, index, n_samples=256):
    """``max |x_index(t)|``: sampled maximum refined by Newton on ``x'(theta) = 0``."""
    c = np.asarray(X)[:, index]
    H = (len(c) - 1) // 2
    k = np.arange(1, H + 1)
    a, b = c[1::2], c[2::2]
    th = 2 * np.pi * np.arange(n_samples) / n_samples
    x = c[0] + np.cos(np.outer(th, k)) @ a + np.sin(np.outer(th, k)) @ b
    i = int(np.argmax(np.abs(x)))
    t = th[i]
    for _ in range(8):
        ck, sk = np.cos(k * t), np.sin(k * t)
        d1 = k * (b * ck - a * sk)
        d2 = -k**2 * (a * ck + b * sk)
        if d2.sum() == 0:
            break
        step = d1.sum() / d2.sum()
        if abs(step) > np.pi / n_samples:
            break
        t -= step
    val = c[0] + np.cos(k * t) @ a + np.sin(k * t) @ b
    return float(max(abs(val), abs(x[i])))


# ---------------------------------------------------------------------------
# branches

@dataclass(frozen=True, eq=False)
class Branch:
    """Continuation output.

    Attributes
    ----------
    omega : ndarray, shape (K,)
    coeffs : ndarray, shape (K, 2H+1, n)
    amplitude : ndarray, shape (K,)
        Peak ``|x_probe(t)|`` over a period.
    fold : ndarray of bool, shape (K,)
        True where the frequency component of the tangent changed sign.
    arclength : ndarray, shape (K,)
    probe : int
    kind : str
        ``"backbone"`` or ``"frf"``.
    reason : str
        Why continuation stopped.
    """

    omega: np.ndarray
    coeffs: np.ndarray
    amplitude: np.ndarray
    fold: np.ndarray
    arclength: np.ndarray
    probe: int
    kind: str
    reason: str = ""
    lam: np.ndarray = None
    residual: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.omega)

    @property
    def n_folds(self):
        return int(np.count_nonzero(self.fold))

    @property
    def n_harmonics(self):
        return (self.coeffs.shape[1] - 1) // 2

    def harmonic_norms(self):
        """Norm of each harmonic over all coordinates, shape ``(K, H+1)``."""
        c = self.coeffs
        h0 = np.linalg.norm(c[:, 0], axis=1)
        hk = np.sqrt(np.sum(c[:, 1::2] ** 2 + c[:, 2::2] ** 2, axis=2))
        return np.column_stack([h0, hk])

    def first_harmonic(self, index=None):
        index = self.probe if index is None else index
        return np.hypot(self.coeffs[:, 1, index], self.coeffs[:, 2, index])

    def to_csv(self, path, omega_ref=None, amplitude=None, amplitude_unit="m",
               coeff_unit="m"):
        """Write the branch with unit-labelled headers.

        Parameters
        ----------
        omega_ref : float, optional
            Normalizing frequency; defaults to the first point.
        amplitude : ndarray, optional
            Replaces the stored probe amplitude (e.g. physical reconstruction
            of a ROM branch).
        """
        omega_ref = float(self.omega[0]) if omega_ref is None else float(omega_ref)
        amp = self.amplitude if amplitude is None else np.asarray(amplitude)
        norms = self.harmonic_norms()
        header = ["omega_rad_s", "omega_over_omega_ref_1", f"probe_amplitude_{amplitude_unit}",
                  "fold_flag_1"] + [f"h{k}_norm_{coeff_unit}" for k in range(norms.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([f"{self.omega[i]:.12e}", f"{self.omega[i] / omega_ref:.12e}",
                            f"{amp[i]:.12e}", int(self.fold[i])]
                           + [f"{v:.12e}" for v in norms[i]])


class _Problem:
    """Scaled nonlinear system ``F(y) = 0`` with ``len(y) = len(F) + 1``.

    ``kind`` is ``"frf"`` (unknowns ``X, w``), ``"backbone"`` (``X, w, lam``
    plus the phase condition) or ``"backbone-even"`` (cosine coefficients
    and ``w``; sine equations vanish identically for reversible systems).
    """

    def __init__(self, system, config, kind, probe, x_scale, omega_ref):
        self.system = system
        self.config = config
        self.kind = kind
        self.probe = probe
        self.H = H = config.n_harmonics
        self.basis = _basis(H, config.n_time_samples)
        self.n = n = system.n
        self.m = (2 * H + 1) * n
        rows = np.arange(2 * H + 1)
        if kind == "backbone-even":
            rows = rows[(rows == 0) | (rows % 2 == 1)]
        self.rows = rows
        self.keep = (rows[:, None] * n + np.arange(n)[None, :]).ravel()
        self.iw = len(self.keep)
        ys = [np.full(self.iw, x_scale), [omega_ref]]
        if kind == "backbone":
            ys.append([omega_ref])
        self.y_scale = np.concatenate(ys)
        rs = np.tile(system.row_scale, len(rows)) / x_scale
        self.r_scale = np.concatenate([rs, [1.0 / x_scale]]) if kind == "backbone" else rs

    def index(self, harmonic_row, dof):
        """Position of coefficient ``X[harmonic_row, dof]`` in ``y``."""
        pos = np.nonzero(self.rows == harmonic_row)[0]
        if not pos.size:
            raise ValidationError(f"harmonic row {harmonic_row} is not an unknown")
        return int(pos[0] * self.n + dof)

    def split(self, y):
        z = y * self.y_scale
        flat = np.zeros(self.m)
        flat[self.keep] = z[: self.iw]
        X = flat.reshape(2 * self.H + 1, self.n)
        lam = z[self.iw + 1] if self.kind == "backbone" else 0.0
        return X, z[self.iw], lam

    def pack(self, X, omega, lam=0.0):
        z = [np.asarray(X).ravel()[self.keep], [omega]]
        if self.kind == "backbone":
            z.append([lam])
        return np.concatenate(z) / self.y_scale

    def FJ(self, y, force=None):
        X, w, lam = self.split(y)
        R = _residual(self.system, X, w, self.basis, lam, force).ravel()[self.keep]
        Jx, dw, dl = _jacobian(self.system, X, w, self.basis, lam)
        k = self.keep
        cols = [Jx[np.ix_(k, k)], dw[k, None]]
        if self.kind == "backbone":
            cols.append(dl[k, None])
            J = np.hstack(cols)
            row = np.zeros(J.shape[1])
            row[self.index(2, self.probe)] = 1.0
            J = np.vstack([J, row])
            R = np.append(R, X[2, self.probe])
        else:
            J = np.hstack(cols)
        J = (J * self.y_scale[None, :]) * self.r_scale[:, None]
        return R * self.r_scale, J


def _newton(fun_jac, y0, tol, max_iter, extra=None):
    """Newton iterations on ``[F(y); extra(y)] = 0`` (square system)."""
    y = y0.copy()
    for it in range(1, max_iter + 1):
        F, J = fun_jac(y)
        if extra is not None:
            g, dg = extra(y)
            F = np.append(F, g)
            J = np.vstack([J, dg])
        nrm = np.linalg.norm(F, np.inf)
        if not np.isfinite(nrm):
            return y, False, it, nrm
        if nrm <= tol and it > 1:
            return y, True, it, nrm
        try:
            dy = linalg.solve(J, -F, check_finite=False)
        except (linalg.LinAlgError, ValueError):
            return y, False, it, nrm
        y = y + dy
        if np.linalg.norm(dy, np.inf) <= 1e-14 * max(1.0, np.linalg.norm(y, np.inf)):
            F, _ = fun_jac(y)
            return y, np.linalg.norm(F, np.inf) <= tol, it, np.linalg.norm(F, np.inf)
    F, _ = fun_jac(y)
    nrm = np.linalg.norm(F, np.inf)
    return y, nrm <= tol, max_iter, nrm


def _tangent(J, t_prev=None):
    """Unit null vector of ``J`` (one more column than rows), oriented like ``t_prev``."""
    m = J.shape[0]
    if t_prev is None:
        _, _, vt = linalg.svd(J)
        t = vt[-1]
    else:
        A = np.vstack([J, t_prev])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        t = linalg.solve(A, b, check_finite=False)
    return t / np.linalg.norm(t)


def continue_branch(problem, y0, config, t0=None, direction=1.0):
    """Pseudo-arclength continuation from a converged point.

    Parameters
    ----------
    problem : _Problem
    y0 : ndarray
        Converged scaled start point.
    config : HbmConfig
    t0 : ndarray, optional
        Initial tangent; computed from the null space when omitted.
    direction : float
        Sign applied to the initial tangent.

    Returns
    -------
    Branch
    """
    F, J = problem.FJ(y0)
    if np.linalg.norm(F, np.inf) > 10 * config.tol:
        raise NumericalError(f"start point not converged (residual {np.linalg.norm(F, np.inf):.2e})")
    t = _tangent(J) if t0 is None else t0 / np.linalg.norm(t0)
    t = direction * t
    wlo, whi = config.omega_window
    pts, arcs, lams, resid, folds = [y0.copy()], [0.0], [], [np.linalg.norm(F, np.inf)], [False]
    tw_prev = t[problem.iw]
    h = config.step
    y = y0
    s = 0.0
    reason = "max_steps"
    for _ in range(config.max_steps):
        while True:
            yp = y + h * t
            tt = t

            def extra(z, yp=yp, tt=tt):
                return np.array([tt @ (z - yp)]), tt[None, :]

            yn, ok, nit, nrm = _newton(problem.FJ, yp, config.tol, config.max_newton, extra)
            if ok:
                # reject branch jumps: corrector far from the predictor or a sharp turn
                _, Jn = problem.FJ(yn)
                tn = _tangent(Jn, t)
                dist, turn = np.linalg.norm(yn - yp), tn @ t
                if dist <= 0.5 * h and turn >= 0.9:
                    break
                log.debug("step %.3g rejected: corrector distance %.3g, tangent cosine %.4f",
                          h, dist, turn)
                ok = False
            else:
                log.debug("step %.3g rejected: corrector residual %.3g after %d iterations",
                          h, nrm, nit)
            h *= 0.5
            if h < config.step_min:
                reason = f"corrector failed at minimum step (residual {nrm:.2e})"
                break
        if not ok:
            break
        s += float(np.linalg.norm(yn - y))
        # the start tangent is not compared: at a vertical start its w-component is round-off
        fold = bool(len(pts) > 1 and tw_prev != 0.0 and np.sign(tn[problem.iw]) != np.sign(tw_prev))
        tw_prev = tn[problem.iw] if tn[problem.iw] != 0.0 else tw_prev
        y, t = yn, tn
        pts.append(y.copy())
        arcs.append(s)
        folds.append(fold)
        resid.append(nrm)
        X, w, _ = problem.split(y)
        if (wlo is not None and w < wlo) or (whi is not None and w > whi):
            reason = "left frequency window"
            break
        if config.amplitude_cap is not None and _peak(X, problem.probe) > config.amplitude_cap:
            reason = "amplitude cap reached"
            break
        if nit <= 3:
            h = min(h * 1.5, config.step_max)
        elif nit >= 8:
            h = max(h * 0.7, config.step_min)
    Xs, ws, ls = zip(*(problem.split(p) for p in pts))
    coeffs = np.array(Xs)
    amp = np.array([_peak(X, problem.probe) for X in coeffs])
    return Branch(omega=np.array(ws), coeffs=coeffs, amplitude=amp, fold=np.array(folds),
                  arclength=np.array(arcs), probe=problem.probe, kind=problem.kind,
                  reason=reason, lam=np.array(ls), residual=np.array(resid),
                  info={"system": problem.system.kind, "n_harmonics": problem.H})


def _x_scale(config, system, default):
    if config.x_scale is not None:
        return float(config.x_scale)
    if config.amplitude_cap is not None:
        return float(config.amplitude_cap) / 10
    return default


def _mode_shape(system, mode):
    w2, V = linalg.eigh(system.K, system.M)
    return math.sqrt(w2[mode]), V[:, mode]


def backbone(system, mode, config, probe=None, start_amplitude=None, formulation="even",
             start=None, direction=1.0):
    """Backbone of the conservative system through linear mode ``mode``.

    Start-up: a forced undamped solve with a small kick force just above the
    linear frequency; the forcing is then removed and the unforced orbit
    with the same first-harmonic probe amplitude is converged.
    Continuation proceeds with increasing amplitude (``direction=1``).

    Two formulations are available:

    * ``"even"`` (default): cosine-only series.  Undamped systems whose
      velocity terms have even degree are time-reversible, so the sine
      equations vanish identically; the phase is fixed by construction and
      the symmetry-breaking branch points of internal resonances are not
      part of the problem.
    * ``"phase"``: full series with ``b1[probe] = 0`` and the unfolding
      parameter ``lam`` (see module docstring).

    Parameters
    ----------
    system : FullSystem or RomSystem
        Damping and forcing are ignored.
    mode : int
        Linear mode (0-based, of the system's own coordinates) to follow.
    config : HbmConfig
    probe : int, optional
        Coordinate used for the phase/amplitude constraints and the amplitude
        measure; defaults to the largest entry of the mode shape.
    start_amplitude : float, optional
        Probe amplitude of the first point; defaults to ``x_scale / 100``.
    formulation : {"even", "phase"}
    start : (ndarray, float), optional
        Coefficient block and frequency used as the first point instead of
        the kick start-up (e.g. a reconstructed ROM orbit).
    direction : float
        ``+1`` for increasing, ``-1`` for decreasing amplitude.

    Returns
    -------
    Branch
    """
    if formulation not in ("even", "phase"):
        raise ValidationError(f"unknown backbone formulation {formulation!r}")
    cons = _conservative(system)
    if formulation == "even" and isinstance(cons, RomSystem) and cons.rom.n_monomials \
            and np.any(cons.rom.S_exp.sum(axis=1) % 2):
        raise ValidationError("the reduced dynamics has odd velocity terms; use formulation='phase'")
    w0, phi = _mode_shape(cons, mode)
    if probe is None:
        probe = int(np.argmax(np.abs(phi)))
    phi = phi / phi[probe]
    xs = _x_scale(config, cons, 1.0)
    kind = "backbone-even" if formulation == "even" else "backbone"
    prob = _Problem(cons, config, kind, probe, xs, w0)
    H = config.n_harmonics

    if start is None:
        # kick: forced undamped response slightly above the linear frequency
        a0 = xs / 100 if start_amplitude is None else float(start_amplitude)
        X = np.zeros((2 * H + 1, cons.n))
        X[1] = -a0 * phi          # linear response above resonance is in antiphase
        force = config.kick * (cons.M @ phi) * w0**2 * xs
        w_start = w0 * math.sqrt(1.0 + config.kick * xs / a0)
        frc = _Problem(cons, config, "frf", probe, xs, w0)
        yk = frc.pack(X, w_start)

        def fj_fixed(z, w=w_start / w0):
            F, J = frc.FJ(np.append(z, w), force)
            return F, J[:, :-1]

        zk, ok, _, nrm = _newton(fj_fixed, yk[:-1], config.tol, config.max_newton)
        if not ok:
            raise NumericalError(f"backbone kick solve did not converge (residual {nrm:.2e})")
        X0 = zk.reshape(2 * H + 1, cons.n) * xs
    else:
        X0, w_start = np.asarray(start[0], dtype=float), float(start[1])
        if X0.shape != (2 * H + 1, cons.n):
            raise ValidationError(f"start coefficients must have shape {(2 * H + 1, cons.n)}")
    amp1 = X0[1, probe]

    # unforced orbit with the same first-harmonic probe amplitude
    y = prob.pack(X0, w_start, 0.0)
    idx = prob.index(1, probe)

    def extra(z):
        g = np.zeros_like(z)
        g[idx] = 1.0
        return np.array([z[idx] - amp1 / xs]), g[None, :]

    y, ok, _, nrm = _newton(prob.FJ, y, config.tol, config.max_newton, extra)
    if not ok:
        raise NumericalError(f"backbone start-up failed after removing the kick force "
                             f"(last residual {nrm:.2e})")
    _, J = prob.FJ(y)
    t = _tangent(J)
    if t[idx] * np.sign(y[idx]) * direction < 0:
        t = -t
    br = continue_branch(prob, y, config, t)
    return replace(br, info={**br.info, "omega0": w0, "mode": mode, "formulation": formulation})


def _conservative(system):
    """Copy of ``system`` without damping and forcing."""
    import copy
    c = copy.copy(system)
    c.C = None
    c.force = None
    if isinstance(system, RomSystem) and system.rom.info.get("damping_rows") is not None \
            and np.any(system.rom.info["damping_rows"]):
        c.rom = system.rom.without_damping()
        c.velocity_dependent = bool(c.rom.S_exp.any()) if c.rom.n_monomials else False
    return c


def solve_point(system, omega, config, guess=None, probe=0, x_scale=1.0):
    """Converged forced response at fixed ``omega`` (coefficient block)."""
    prob = _Problem(system, config, "frf", probe, x_scale, omega)
    H = config.n_harmonics
    if guess is None:
        guess = np.zeros((2 * H + 1, system.n))
        if system.force is not None:
            A = system.K - omega**2 * system.M
            if system.C is None:
                guess[1] = linalg.solve(A, system.force)
            else:
                B = omega * system.C
                sol = linalg.solve(np.block([[A, B], [-B, A]]),
                                   np.concatenate([system.force, np.zeros(system.n)]))
                guess[1], guess[2] = sol[: system.n], sol[system.n:]
    y = prob.pack(guess, omega)

    def fj(z):
        F, J = prob.FJ(np.append(z, 1.0))
        return F, J[:, :-1]

    z, ok, _, nrm = _newton(fj, y[:-1], config.tol, config.max_newton)
    if not ok:
        raise NumericalError(f"harmonic balance did not converge at omega={omega:.6g} "
                             f"(residual {nrm:.2e})")
    return z.reshape(2 * H + 1, system.n) * x_scale


def frf(system, config, probe=None, omega_start=None):
    """Forced-response branch over ``config.omega_window`` (increasing frequency).

    Parameters
    ----------
    system : FullSystem or RomSystem
        With forcing (and usually damping).
    config : HbmConfig
        ``omega_window`` must be bounded.
    probe : int, optional
        Amplitude coordinate; defaults to the forced coordinate.

    Returns
    -------
    Branch
    """
    wlo, whi = config.omega_window
    if wlo is None or whi is None:
        raise ValidationError("frequency-response continuation needs a bounded omega_window")
    if system.force is None:
        raise ValidationError("frequency-response continuation needs a forcing")
    if probe is None:
        probe = int(np.argmax(np.abs(system.force)))
    w_start = wlo if omega_start is None else omega_start
    H = config.n_harmonics
    X0 = solve_point(system, w_start, config, probe=probe, x_scale=1.0)
    xs = _x_scale(config, system, max(np.abs(X0).max(), 1e-300) * 10)
    prob = _Problem(system, config, "frf", probe, xs, 0.5 * (wlo + whi))
    y0 = prob.pack(X0, w_start)
    if not np.any(X0):
        # unforced: trivial branch, no continuation needed
        return Branch(omega=np.array([w_start, whi]), coeffs=np.zeros((2, 2 * H + 1, system.n)),
                      amplitude=np.zeros(2), fold=np.zeros(2, bool), arclength=np.zeros(2),
                      probe=probe, kind="frf", reason="zero forcing")
    y0, ok, _, nrm = _newton(lambda z: prob.FJ(z), y0, config.tol, config.max_newton,
                             lambda z: (np.array([z[prob.iw] - y0[prob.iw]]),
                                        np.eye(1, len(z), prob.iw)))
    if not ok:
        raise NumericalError(f"start of frequency response did not converge (residual {nrm:.2e})")
    _, J = prob.FJ(y0)
    t = _tangent(J)
    if t[prob.iw] < 0:
        t = -t
    return continue_branch(prob, y0, config, t)


def reconstructed_amplitude(branch, tensors, dof, order=None, n_samples=256, damped=False):
    """Peak physical displacement at ``dof`` along a ROM branch.

    Normal coordinates ``R(t)``, ``S(t)`` of each point are pushed through
    the nonlinear mapping (:func:`dnform.rom.reconstruct`); ``damped``
    includes the light-damping mapping terms.

    Returns
    -------
    ndarray, shape (K,)
    """
    from .rom import NormalState, reconstruct

    H = branch.n_harmonics
    b = _Basis(H, n_samples)
    out = np.empty(len(branch))
    for i, (X, w) in enumerate(zip(branch.coeffs, branch.omega)):
        R = b.E @ X
        S = w * (b.Ed @ X)
        Xp, _ = reconstruct(tensors, NormalState(R, S), order=order, damped=damped)
        out[i] = np.max(np.abs(Xp[:, dof]))
    return out
