"""Shifted and bordered linear solves ``(sigma^2 M - K) Z = rhs``.

Factorizations are cached by shift (relative key tolerance 1e-12) and by
border, so the many repeated shifts of the third-order problem reuse a
single LU decomposition.  A resonant shift is handled with the bordered
matrix::

    [ sigma^2 M - K   M phi_S ] [ Z ]   [ rhs ]
    [ (M phi_S)^T        0    ] [ P ] = [  0  ]

whose solution satisfies ``phi_s^T M Z = 0``; ``P`` is the force component
that stays in the reduced dynamics (``P_s = phi_s^T rhs``).  The border
columns are scaled to the norm of the shifted operator before factorization
(and ``P`` rescaled), which keeps the condition estimate meaningful when
``M phi`` and ``K`` differ by many orders of magnitude.
"""

import threading

import numpy as np
from scipy import linalg

from .errors import NumericalError, SmallDenominatorError, ValidationError
from .resonance import DEFAULT_TOL

__all__ = ["ShiftedSolver", "solve_sigma_system", "RCOND_MIN"]

RCOND_MIN = 1e-13


class ShiftedSolver:
    """Cached factorizations of ``sigma^2 M - K`` and their bordered variants.

    Parameters
    ----------
    model : StructuralModel
    spectrum : Spectrum, optional
        Computed modes, used to reject undeclared resonant shifts and to
        provide border vectors.
    tol : float
        Relative resonance threshold on ``sigma^2`` vs ``w_s^2``.
    """

    def __init__(self, model, spectrum=None, tol=DEFAULT_TOL, key_rtol=1e-12):
        self.M = np.asarray(model.mass)
        self.K = np.asarray(model.stiffness)
        self.spectrum = spectrum
        self.tol = float(tol)
        self.key_rtol = float(key_rtol)
        if spectrum is not None and spectrum.n_computed:
            self._scale = float(np.max(spectrum.omegas) ** 2)
        else:
            self._scale = float(np.max(np.abs(self.K)) / np.max(np.abs(self.M)))
        self._cache = {}
        self._lock = threading.Lock()
        self.n_factorizations = 0
        self.n_solves = 0

    def _key(self, sigma2, border):
        return (int(round(sigma2 / self._scale / self.key_rtol)), tuple(border))

    def _factor(self, sigma2, border):
        key = self._key(sigma2, border)
        fac = self._cache.get(key)
        if fac is not None:
            return fac
        A = sigma2 * self.M - self.K
        kappa = 1.0
        if border:
            C = self.M @ self.spectrum.phis[:, list(border)]
            nb = C.shape[1]
            # border scaled to the operator norm so the condition estimate stays meaningful
            kappa = np.linalg.norm(A, 1) / np.linalg.norm(C, 1)
            C = kappa * C
            A = np.block([[A, C], [C.T, np.zeros((nb, nb))]])
        lu, piv = linalg.lu_factor(A, check_finite=False)
        anorm = np.linalg.norm(A, 1)
        rcond, info = linalg.lapack.dgecon(lu, anorm, norm="1")
        with self._lock:
            self._cache.setdefault(key, (lu, piv, rcond, kappa))
            self.n_factorizations += 1
        if rcond < RCOND_MIN:
            raise SmallDenominatorError(
                f"shifted operator singular at sigma^2={sigma2:.6g} (rcond={rcond:.2e}, "
                f"border={list(border)}): a frequency combination is resonant with an "
                f"uncomputed or undeclared mode; compute more modes or declare the resonance")
        return self._cache[key]

    def check_shift(self, sigma, border=()):
        """Raise if ``sigma`` is resonant with a computed mode that is not bordered."""
        if self.spectrum is None:
            return
        s2 = sigma**2
        w2 = self.spectrum.omegas**2
        close = np.nonzero(np.abs(s2 - w2) <= self.tol * w2)[0]
        missing = [int(s) for s in close if s not in border]
        if missing:
            raise SmallDenominatorError(
                f"shift sigma={sigma:.8g} rad/s is resonant with mode(s) {missing} "
                f"(omega={self.spectrum.omegas[missing]}) but no resonance was declared for it; "
                f"declare the internal resonance or adjust the tolerance")

    def solve(self, sigma, rhs, border=()):
        """Solve the (possibly bordered) shifted system.

        Parameters
        ----------
        sigma : float
            Shift frequency (rad/s); only ``sigma**2`` matters.
        rhs : ndarray, shape (n,) or (n, k)
        border : sequence of int
            Modes used as border vectors (must be computed modes).

        Returns
        -------
        Z : ndarray
            Same shape as ``rhs``.
        P : ndarray, shape (len(border),) or (len(border), k)
            Retained force components.
        """
        border = tuple(sorted(set(int(s) for s in border)))
        if border and self.spectrum is None:
            raise ValidationError("bordered solves need a spectrum")
        self.check_shift(sigma, border)
        rhs = np.asarray(rhs, dtype=float)
        n = self.M.shape[0]
        if rhs.shape[0] != n:
            raise ValidationError(f"rhs has {rhs.shape[0]} rows, expected {n}")
        lu, piv, _, kappa = self._factor(float(sigma) ** 2, border)
        nb = len(border)
        if nb:
            pad = np.zeros((nb,) + rhs.shape[1:])
            sol = linalg.lu_solve((lu, piv), np.concatenate([rhs, pad]), check_finite=False)
            Z, P = sol[:n], kappa * sol[n:]
        else:
            Z = linalg.lu_solve((lu, piv), rhs, check_finite=False)
            P = np.zeros((0,) + rhs.shape[1:])
        if not np.all(np.isfinite(Z)):
            raise NumericalError(f"non-finite solution of the shifted system at sigma={sigma:.6g}")
        self.n_solves += 1
        return Z, P


def solve_sigma_system(model, sigma, rhs, resonant_mode=None, spectrum=None, tol=DEFAULT_TOL):
    """One-shot shifted solve ``(sigma^2 M - K) Z = rhs``.

    Parameters
    ----------
    model : StructuralModel
    sigma : float
    rhs : ndarray, shape (n,)
    resonant_mode : int, optional
        Border the system with ``M phi_s`` for this mode.
    spectrum : Spectrum, optional
        Needed for bordering and for the resonance check.
    tol : float

    Returns
    -------
    Z : ndarray, shape (n,)
    residual : float
        ``P_s`` for a bordered solve, otherwise 0.
    """
    solver = ShiftedSolver(model, spectrum, tol)
    border = () if resonant_mode is None else (int(resonant_mode),)
    Z, P = solver.solve(sigma, rhs, border)
    return Z, (float(P[0]) if border else 0.0)
