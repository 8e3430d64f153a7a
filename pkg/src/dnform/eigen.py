"""Mass-normalized linear modes.

The generalized symmetric eigenproblem ``K phi = omega^2 M phi`` is solved
densely (LAPACK ``sygvd`` through :func:`scipy.linalg.eigh`); this is
adequate up to a few thousand dofs.  Eigenvectors are M-orthonormal and
sign-fixed so that the entry of largest magnitude is positive.
"""

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError

__all__ = ["Spectrum", "solve_modes", "CLUSTER_TOL"]

CLUSTER_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenfrequencies and mass-normalized mode shapes.

    Attributes
    ----------
    omegas : ndarray, shape (m,)
        Ascending angular frequencies (rad/s).
    phis : ndarray, shape (n_dof, m)
        Mode shapes as columns, ``phis.T @ M @ phis = I``.
    master_indices : tuple of int
        Indices (into ``omegas``) of the master modes, 0-based.
    clusters : tuple of tuple of int
        Groups of modes whose eigenvalues coincide to ``CLUSTER_TOL``.
    """

    omegas: np.ndarray
    phis: np.ndarray
    master_indices: tuple = ()
    clusters: tuple = field(default=())

    def __post_init__(self):
        for name in ("omegas", "phis"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        bad = [m for m in self.master_indices if not 0 <= m < self.n_computed]
        if bad:
            raise ValidationError(f"master indices {bad} outside the {self.n_computed} computed modes")

    @property
    def n_computed(self):
        return self.omegas.size

    @property
    def frequencies_hz(self):
        return self.omegas / (2.0 * np.pi)

    def with_masters(self, masters):
        """Copy of the spectrum with another master selection."""
        return Spectrum(self.omegas, self.phis, tuple(int(m) for m in masters), self.clusters)

    @property
    def master_phis(self):
        return self.phis[:, list(self.master_indices)]

    @property
    def master_omegas(self):
        return self.omegas[list(self.master_indices)]


def _fix_signs(phis):
    idx = np.argmax(np.abs(phis), axis=0)
    signs = np.sign(phis[idx, np.arange(phis.shape[1])])
    signs[signs == 0] = 1.0
    return phis * signs


def solve_modes(model, n_modes, masters=(0,)):
    """Lowest ``n_modes`` eigenpairs of ``(K, M)``.

    Parameters
    ----------
    model : StructuralModel
    n_modes : int
        Number of modes to compute (``1 <= n_modes <= n_dof``).
    masters : sequence of int
        0-based indices of the master modes among the computed ones.

    Returns
    -------
    Spectrum

    Raises
    ------
    ValidationError
        If ``n_modes`` is out of range or an operator is not positive definite.
    """
    n = model.n_dof
    if not 1 <= n_modes <= n:
        raise ValidationError(f"n_modes must be in [1, {n}], got {n_modes}")
    M, K = model.mass, model.stiffness
    for name, A in (("mass", M), ("stiffness", K)):
        try:
            linalg.cholesky(A)
        except linalg.LinAlgError:
            raise ValidationError(f"{name} matrix is indefinite; the eigenproblem needs SPD operators") from None
    if n_modes == n:
        lam, phis = linalg.eigh(K, M, driver="gvd")
    else:
        lam, phis = linalg.eigh(K, M, subset_by_index=[0, n_modes - 1], driver="gvx")
    if np.any(lam <= 0):
        raise NumericalError("non-positive eigenvalue from an SPD pencil")
    order = np.argsort(lam, kind="stable")
    lam, phis = lam[order], phis[:, order]

    # clusters: re-orthonormalize in the M inner product (modified Gram-Schmidt)
    clusters = []
    start = 0
    for i in range(1, n_modes + 1):
        if i == n_modes or lam[i] - lam[i - 1] > CLUSTER_TOL * lam[i]:
            if i - start > 1:
                clusters.append(tuple(range(start, i)))
            start = i
    for group in clusters:
        block = phis[:, list(group)]
        for a in range(block.shape[1]):
            for b in range(a):
                block[:, a] -= (block[:, b] @ M @ block[:, a]) * block[:, b]
            block[:, a] /= np.sqrt(block[:, a] @ M @ block[:, a])
        phis[:, list(group)] = block
        warnings.warn(f"clustered eigenvalues for modes {group}; vectors re-orthonormalized",
                      RuntimeWarning, stacklevel=2)

    # one refinement pass of the normalization keeps phi^T M phi = 1 to round-off
    phis = phis / np.sqrt(np.einsum("ij,ij->j", phis, M @ phis))
    phis = _fix_signs(phis)
    return Spectrum(np.sqrt(lam), phis, tuple(int(m) for m in masters), tuple(clusters))
