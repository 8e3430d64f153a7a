"""Structural models with exactly quadratic + cubic internal forces.

Two model families are provided:

* a clamped-clamped von Kármán (Euler-Bernoulli) beam assembled from
  two-node elements (:func:`assemble_vk_beam`);
* explicit polynomial oscillators whose quadratic and cubic tensors are read
  from a text file (:func:`load_polynomial_model`) or given as arrays
  (:func:`polynomial_model`).

Both expose the same :class:`StructuralModel` interface: symmetric positive
definite mass and stiffness on the free dofs, and a batched evaluator of the
nonlinear force ``G(X, X) + H(X, X, X)`` and of its Jacobian.
"""

from dataclasses import dataclass, field
import itertools

import numpy as np
from scipy import linalg, sparse

from . import kernels
from ._kernel_py import hermite_slopes
from .errors import ValidationError

__all__ = [
    "BeamConfig",
    "DampingSpec",
    "StructuralModel",
    "PolynomialForce",
    "VKBeamForce",
    "assemble_vk_beam",
    "polynomial_model",
    "load_polynomial_model",
    "write_polynomial_model",
    "internal_force",
]

DIRECTIONS = ("transverse", "axial", "rotation")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_batch(X, n):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != n or X.ndim not in (1, 2):
        raise ValidationError(f"state has shape {X.shape}, expected ({n},) or (ns, {n})")
    return np.atleast_2d(X), X.ndim == 1


# ---------------------------------------------------------------------------
# configuration records

@dataclass(frozen=True)
class BeamConfig:
    """Geometry, material and mesh of a clamped-clamped beam.

    The defaults are the beam used throughout the examples (1 m long,
    1 cm square section, steel-like stiffness with a dense material).
    """

    length: float = 1.0
    width: float = 0.01
    height: float = 0.01
    young_modulus: float = 210e9
    density: float = 8750.0
    poisson: float = 0.3
    n_elements: int = 20
    boundary: str = "clamped-clamped"

    def __post_init__(self):
        for name in ("length", "width", "height", "young_modulus", "density", "poisson"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValidationError(f"beam parameter {name} must be positive, got {v!r}")
        if int(self.n_elements) != self.n_elements or self.n_elements < 4:
            raise ValidationError(f"n_elements must be an integer >= 4, got {self.n_elements!r}")
        if self.boundary != "clamped-clamped":
            raise ValidationError(f"unsupported boundary {self.boundary!r}")

    @property
    def area(self):
        return self.width * self.height

    @property
    def inertia(self):
        return self.width * self.height**3 / 12.0

    @classmethod
    def from_mapping(cls, data):
        """Build from a mapping, ignoring unknown keys is *not* allowed."""
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown beam parameters: {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class DampingSpec:
    """Rayleigh damping ``C = zeta_m M + zeta_k K``."""

    zeta_m: float = 0.0
    zeta_k: float = 0.0

    def __post_init__(self):
        for name in ("zeta_m", "zeta_k"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v!r}")

    def modal(self, omega):
        """Modal damping coefficient ``zeta_m + zeta_k omega**2`` (1/s)."""
        return self.zeta_m + self.zeta_k * np.asarray(omega, dtype=float) ** 2

    def ratio(self, omega):
        """Critical damping ratio ``(zeta_m/omega + zeta_k omega)/2``."""
        omega = np.asarray(omega, dtype=float)
        return 0.5 * (self.zeta_m / omega + self.zeta_k * omega)

    @property
    def is_zero(self):
        return self.zeta_m == 0.0 and self.zeta_k == 0.0


# ---------------------------------------------------------------------------
# nonlinear force evaluators

class PolynomialForce:
    """Contraction of dense full-summation tensors.

    ``f_p = sum_rs G[p,r,s] X_r X_s + sum_rst H[p,r,s,t] X_r X_s X_t``
    with ``G`` symmetric in its last two and ``H`` in its last three indices.
    """

    def __init__(self, quadratic, cubic):
        self.quadratic = _frozen(quadratic)
        self.cubic = _frozen(cubic)
        n = self.quadratic.shape[0]
        if self.quadratic.shape != (n, n, n) or self.cubic.shape != (n, n, n, n):
            raise ValidationError("tensor shapes must be (n,n,n) and (n,n,n,n)")
        self.n = n

    def force(self, X):
        X, single = _as_batch(X, self.n)
        f = np.einsum("prs,kr,ks->kp", self.quadratic, X, X, optimize=True)
        f += np.einsum("prst,kr,ks,kt->kp", self.cubic, X, X, X, optimize=True)
        return f[0] if single else f

    def tangent(self, X):
        X, single = _as_batch(X, self.n)
        kt = 2.0 * np.einsum("prs,ks->kpr", self.quadratic, X, optimize=True)
        kt += 3.0 * np.einsum("prst,ks,kt->kpr", self.cubic, X, X, optimize=True)
        return kt[0] if single else kt


class VKBeamForce:
    """Membrane nonlinearity of the von Kármán beam, on free dofs."""

    def __init__(self, n_full, free, edofs, slopes, weights, lengths, ea):
        self.n_full = int(n_full)
        self.free = np.asarray(free, dtype=np.int64)
        self.n = self.free.size
        self.edofs = np.ascontiguousarray(edofs, dtype=np.int64)
        self.slopes = np.ascontiguousarray(slopes, dtype=float)
        self.weights = np.ascontiguousarray(weights, dtype=float)
        self.lengths = np.ascontiguousarray(lengths, dtype=float)
        self.ea = float(ea)

    def _expand(self, X):
        q = np.zeros((X.shape[0], self.n_full))
        q[:, self.free] = X
        return q

    def force(self, X, backend=None):
        X, single = _as_batch(X, self.n)
        fn = backend.vk_force_nl if backend is not None else kernels.vk_force_nl
        f = fn(self._expand(X), self.edofs, self.slopes, self.weights,
               self.lengths, self.ea)[:, self.free]
        return f[0] if single else f

    def tangent(self, X, backend=None):
        X, single = _as_batch(X, self.n)
        fn = backend.vk_tangent_nl if backend is not None else kernels.vk_tangent_nl
        kt = fn(self._expand(X), self.edofs, self.slopes, self.weights,
                self.lengths, self.ea)
        kt = kt[:, self.free[:, None], self.free[None, :]]
        return kt[0] if single else kt


# ---------------------------------------------------------------------------
# the model record

@dataclass(frozen=True, eq=False)
class StructuralModel:
    """Mass, stiffness and nonlinear internal force on the free dofs.

    Attributes
    ----------
    mass, stiffness : ndarray, shape (n, n)
        Symmetric positive definite operators (read-only arrays).
    force_evaluator : object
        Provides ``force(X)`` and ``tangent(X)``, each accepting a single
        state ``(n,)`` or a batch ``(ns, n)``.
    constrained_dofs : tuple of int
        Indices (in the unconstrained numbering) removed from the model.
    labels : tuple of (node, direction)
        One label per free dof.
    """

    mass: np.ndarray
    stiffness: np.ndarray
    force_evaluator: object
    constrained_dofs: tuple = ()
    labels: tuple = ()
    name: str = "model"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        M = _frozen(self.mass)
        K = _frozen(self.stiffness)
        object.__setattr__(self, "mass", M)
        object.__setattr__(self, "stiffness", K)
        n = M.shape[0]
        for name, A in (("mass", M), ("stiffness", K)):
            if A.shape != (n, n):
                raise ValidationError(f"{name} matrix must be square {n}x{n}, got {A.shape}")
            scale = np.max(np.abs(A)) if A.size else 1.0
            if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * scale:
                raise ValidationError(f"{name} matrix is not symmetric")
            try:
                linalg.cholesky(A, lower=True)
            except linalg.LinAlgError:
                raise ValidationError(f"{name} matrix is not positive definite on the free dofs") from None
        if getattr(self.force_evaluator, "n", n) != n:
            raise ValidationError("nonlinear force evaluator size does not match the operators")
        if self.labels and len(self.labels) != n:
            raise ValidationError("one label per free dof is required")

    @property
    def n_dof(self):
        return self.mass.shape[0]

    def nonlinear_force(self, X):
        """``G(X, X) + H(X, X, X)`` for one state or a batch of states."""
        return self.force_evaluator.force(X)

    def nonlinear_tangent(self, X):
        """Jacobian of :meth:`nonlinear_force` (tangent minus ``K``)."""
        return self.force_evaluator.tangent(X)

    def dof_mask(self, direction):
        """Boolean mask of free dofs with the given direction label."""
        return np.array([lab[1] == direction for lab in self.labels], dtype=bool)

    def find_dof(self, node, direction):
        """Free-dof index of ``(node, direction)``."""
        try:
            return self.labels.index((int(node), direction))
        except ValueError:
            raise ValidationError(f"no free dof ({node}, {direction!r}) in model {self.name}") from None


def internal_force(model, X):
    """Full internal force ``K X + G(X, X) + H(X, X, X)``.

    Parameters
    ----------
    model : StructuralModel
    X : array_like, shape (n,) or (ns, n)

    Returns
    -------
    ndarray
        Same shape as ``X``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.n_dof:
        raise ValidationError(f"state size {X.shape[-1]} does not match n_dof={model.n_dof}")
    return X @ model.stiffness + model.nonlinear_force(X)


# ---------------------------------------------------------------------------
# von Kármán beam

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(5)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


def _bending_stiffness(le):
    return np.array([
        [12.0, 6 * le, -12.0, 6 * le],
        [6 * le, 4 * le**2, -6 * le, 2 * le**2],
        [-12.0, -6 * le, 12.0, -6 * le],
        [6 * le, 2 * le**2, -6 * le, 4 * le**2],
    ]) / le**3


def _bending_mass(le):
    return np.array([
        [156.0, 22 * le, 54.0, -13 * le],
        [22 * le, 4 * le**2, 13 * le, -3 * le**2],
        [54.0, 13 * le, 156.0, -22 * le],
        [-13 * le, -3 * le**2, -22 * le, 4 * le**2],
    ]) * le / 420.0


def assemble_vk_beam(config=BeamConfig()):
    """Assemble the clamped-clamped von Kármán beam.

    Each node carries ``(transverse w, axial u, rotation theta)``.  The
    transverse field is interpolated with cubic Hermite polynomials, the
    axial one linearly; the strain energy is
    ``EA/2 int (u' + w'^2/2)^2 + EI/2 int w''^2``, integrated exactly with
    five Gauss points.  Mass is consistent.  Both end nodes are clamped and
    removed from the dof set.

    Parameters
    ----------
    config : BeamConfig

    Returns
    -------
    StructuralModel
    """
    ne = int(config.n_elements)
    nn = ne + 1
    nfull = 3 * nn
    le = config.length / ne
    ea = config.young_modulus * config.area
    ei = config.young_modulus * config.inertia
    rho_a = config.density * config.area

    edofs = np.array([[3 * e + k for k in range(6)] for e in range(ne)], dtype=np.int64)
    w_idx = np.array([0, 2, 3, 5])
    u_idx = np.array([1, 4])
    ke = np.zeros((6, 6))
    me = np.zeros((6, 6))
    ke[np.ix_(w_idx, w_idx)] = ei * _bending_stiffness(le)
    ke[np.ix_(u_idx, u_idx)] = ea / le * np.array([[1.0, -1.0], [-1.0, 1.0]])
    me[np.ix_(w_idx, w_idx)] = rho_a * _bending_mass(le)
    me[np.ix_(u_idx, u_idx)] = rho_a * le / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])

    rows = np.repeat(edofs, 6, axis=1).ravel()
    cols = np.tile(edofs, (1, 6)).ravel()
    K = sparse.coo_matrix((np.tile(ke.ravel(), ne), (rows, cols)), shape=(nfull, nfull)).toarray()
    M = sparse.coo_matrix((np.tile(me.ravel(), ne), (rows, cols)), shape=(nfull, nfull)).toarray()

    constrained = tuple(range(3)) + tuple(range(nfull - 3, nfull))
    free = np.setdiff1d(np.arange(nfull), constrained)
    slopes = np.repeat(hermite_slopes(le, _GAUSS_X)[None], ne, axis=0)
    weights = np.tile(_GAUSS_W * le, (ne, 1))
    lengths = np.full(ne, le)
    evaluator = VKBeamForce(nfull, free, edofs, slopes, weights, lengths, ea)
    labels = tuple((int(d // 3), DIRECTIONS[d % 3]) for d in free)
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    return StructuralModel(
        mass=M[np.ix_(free, free)],
        stiffness=K[np.ix_(free, free)],
        force_evaluator=evaluator,
        constrained_dofs=constrained,
        labels=labels,
        name="vk-beam",
        info={"config": config, "node_x": np.linspace(0.0, config.length, nn)},
    )


# ---------------------------------------------------------------------------
# polynomial models

def _full_quadratic(n, entries):
    G = np.zeros((n, n, n))
    seen = {}
    for (p, r, s), v in entries:
        key = (p,) + tuple(sorted((r, s)))
        if key in seen and seen[key] != v:
            raise ValidationError(
                f"quadratic tensor violates g^p_rs = g^p_sr at p={p}, (r,s)={key[1:]}: "
                f"{seen[key]!r} != {v!r}")
        seen[key] = v
    for (p, r, s), v in seen.items():
        G[p, r, s] = G[p, s, r] = v
    return G


def _full_cubic(n, entries):
    H = np.zeros((n, n, n, n))
    seen = {}
    for (p, r, s, t), v in entries:
        key = (p,) + tuple(sorted((r, s, t)))
        if key in seen and seen[key] != v:
            raise ValidationError(
                f"cubic tensor violates h^p_rst symmetry in (r,s,t) (e.g. h^p_rst = h^p_tsr) "
                f"at p={p}, (r,s,t)={key[1:]}: {seen[key]!r} != {v!r}")
        seen[key] = v
    for (p, r, s, t), v in seen.items():
        for perm in set(itertools.permutations((r, s, t))):
            H[(p,) + perm] = v
    return H


def polynomial_model(mass, stiffness, quadratic=None, cubic=None, name="polynomial"):
    """Model from dense full-summation tensors.

    Parameters
    ----------
    mass, stiffness : array_like, shape (n, n)
    quadratic : array_like, shape (n, n, n), optional
        ``G[p, r, s]``, symmetric in ``(r, s)``.
    cubic : array_like, shape (n, n, n, n), optional
        ``H[p, r, s, t]``, symmetric in ``(r, s, t)``.
    """
    mass = np.asarray(mass, dtype=float)
    n = mass.shape[0]
    G = np.zeros((n, n, n)) if quadratic is None else np.asarray(quadratic, dtype=float)
    H = np.zeros((n, n, n, n)) if cubic is None else np.asarray(cubic, dtype=float)
    scale_g = max(np.max(np.abs(G), initial=0.0), 1e-300)
    scale_h = max(np.max(np.abs(H), initial=0.0), 1e-300)
    if np.max(np.abs(G - G.transpose(0, 2, 1)), initial=0.0) > 1e-12 * scale_g:
        raise ValidationError("quadratic tensor violates g^p_rs = g^p_sr")
    for perm in ((0, 2, 1, 3), (0, 3, 2, 1), (0, 1, 3, 2)):
        if np.max(np.abs(H - H.transpose(perm)), initial=0.0) > 1e-12 * scale_h:
            raise ValidationError("cubic tensor violates h^p_rst symmetry in (r,s,t)")
    labels = tuple((i, "generalized") for i in range(n))
    return StructuralModel(mass=mass, stiffness=np.asarray(stiffness, dtype=float),
                           force_evaluator=PolynomialForce(G, H), labels=labels, name=name)


def _parse_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise ValidationError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise ValidationError(f"line {lineno}: data before the first section header")
        sections[current].append((lineno, line))
    return sections


def _read_matrix(rows, n, name):
    A = np.zeros((n, n))
    given = {}
    for lineno, line in rows:
        parts = line.split()
        if len(parts) != 3:
            raise ValidationError(f"line {lineno}: [{name}] rows are 'row col value'")
        i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"line {lineno}: index out of range for n_dof={n}")
        given[(i, j)] = v
    for (i, j), v in given.items():
        w = given.get((j, i), v)
        if w != v:
            raise ValidationError(f"[{name}] is not symmetric at ({i},{j}): {v!r} != {w!r}")
        A[i, j] = A[j, i] = v
    return A


def _read_tensor(rows, n, order, name):
    entries = []
    for lineno, line in rows:
        parts = line.split()
        if len(parts) != order + 2:
            raise ValidationError(f"line {lineno}: [{name}] rows need {order + 1} indices and a value")
        idx = tuple(int(p) for p in parts[:-1])
        if any(not 0 <= k < n for k in idx):
            raise ValidationError(f"line {lineno}: index out of range for n_dof={n}")
        entries.append((idx, float(parts[-1])))
    return entries


def load_polynomial_model(path):
    """Read a polynomial model file.

    The format is plain text with ``[section]`` headers and
    whitespace-separated rows; ``#`` starts a comment.  Indices are 0-based
    and values are in SI units::

        [dimensions]
        n_dof = 2
        [mass]            # row col value (one triangle suffices)
        0 0 1.0
        [stiffness]
        0 0 1.0
        [quadratic]       # p r s value, tensor entry G[p,r,s], r <= s
        1 0 0 1.0
        [cubic]           # p r s t value, tensor entry H[p,r,s,t], r <= s <= t
        0 0 0 0 0.5

    Tensor rows are entries of the full-summation tensors; the loader fills in
    the permuted partners.  A non-canonical row that repeats a canonical one
    with a different value is reported as a symmetry violation.

    Returns
    -------
    StructuralModel
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    sec = _parse_sections(text)
    if "dimensions" not in sec:
        raise ValidationError("missing [dimensions] section")
    dims = {}
    for lineno, line in sec["dimensions"]:
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        dims[k] = v
    try:
        n = int(dims["n_dof"])
    except (KeyError, ValueError):
        raise ValidationError("[dimensions] must define an integer n_dof") from None
    for name in ("mass", "stiffness"):
        if name not in sec:
            raise ValidationError(f"missing [{name}] section")
    M = _read_matrix(sec["mass"], n, "mass")
    K = _read_matrix(sec["stiffness"], n, "stiffness")
    G = _full_quadratic(n, _read_tensor(sec.get("quadratic", []), n, 2, "quadratic"))
    H = _full_cubic(n, _read_tensor(sec.get("cubic", []), n, 3, "cubic"))
    unknown = set(sec) - {"dimensions", "mass", "stiffness", "quadratic", "cubic"}
    if unknown:
        raise ValidationError(f"unknown sections: {sorted(unknown)}")
    return polynomial_model(M, K, G, H, name=str(path))


def write_polynomial_model(path, mass, stiffness, quadratic, cubic, tol=0.0):
    """Write dense tensors in the canonical file format (inverse of the loader)."""
    n = np.asarray(mass).shape[0]
    lines = ["# polynomial structural model, SI units, 0-based indices",
             "[dimensions]", f"n_dof = {n}", "[mass]"]
    for name, A in (("mass", mass), ("stiffness", stiffness)):
        if name == "stiffness":
            lines.append("[stiffness]")
        for i in range(n):
            for j in range(i, n):
                if abs(A[i, j]) > tol:
                    lines.append(f"{i} {j} {float(A[i, j])!r}")
    lines.append("[quadratic]")
    for p in range(n):
        for r in range(n):
            for s in range(r, n):
                if abs(quadratic[p, r, s]) > tol:
                    lines.append(f"{p} {r} {s} {float(quadratic[p, r, s])!r}")
    lines.append("[cubic]")
    for p in range(n):
        for r, s, t in itertools.combinations_with_replacement(range(n), 3):
            if abs(cubic[p, r, s, t]) > tol:
                lines.append(f"{p} {r} {s} {t} {float(cubic[p, r, s, t])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
