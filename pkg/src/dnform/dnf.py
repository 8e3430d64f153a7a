"""Direct normal form: nonlinear mapping tensors from shifted solves.

Everything is computed in the physical basis from ``M``, ``K``, the master
modes and force evaluations; no modal expansion over the slave modes is
needed.

Second order, for each pair of masters ``(i, j)``::

    Zs_ij = ((w_i + w_j)^2 M - K)^-1 G(phi_i, phi_j)
    Zd_ij = ((w_j - w_i)^2 M - K)^-1 G(phi_i, phi_j)
    a_ij = (Zd + Zs) / 2,   b_ij = (Zd - Zs) / (2 w_i w_j)
    gamma_ij = (w_j - w_i)/w_j Zd + (w_j + w_i)/w_j Zs

Third order, for each ordered triple, four shifted solves at
``+-w_i +-w_j +-w_k`` with right-hand sides assembled from
``A_ijk = 2 G(phi_i, a_jk)``, ``B_ijk = 2 G(phi_i, b_jk)`` and
``H(phi_i, phi_j, phi_k)``.

Resonant rows are removed with bordered solves (see :mod:`dnform.shifted`):
for an index multiset and a mode ``s`` flagged by the
:class:`~dnform.resonance.ResonanceSet`, all solves of that multiset are
bordered with ``M phi_s``, so the mapping has no ``phi_s`` content there and
the complete monomial stays in the reduced dynamics.

Index convention: tensors are stored as arrays over *local* master
positions ``p, q, r`` (``masters[p]`` is the mode number), with the physical
vector on the last axis.  All sums are full (ordered) sums.
"""

from dataclasses import asdict, dataclass, field, fields, replace
import itertools
import json

import numpy as np
from scipy import linalg

from .errors import ResonancePolicyError, ValidationError
from .resonance import DEFAULT_TOL, detect_resonances
from .shifted import ShiftedSolver
from .step import quadratic_force, step_tensors

__all__ = [
    "MappingTensors",
    "ResidualRecord",
    "second_order_tensors",
    "third_order_force_tensors",
    "reduced_force_tensors",
    "third_order_tensors",
    "damping_tensors",
    "static_modal_derivative",
    "compute_dnf",
    "save_mapping",
    "load_mapping",
]


@dataclass(frozen=True)
class ResidualRecord:
    """Force component retained by a bordered solve."""

    stage: str            # "Zs", "Zd", "Z0".."Z3", "Zss", "Zdd"
    indices: tuple        # mode numbers, ordered as in the tensor
    s: int                # border mode
    value: float          # P^s
    orthogonality: float  # |phi_s^T M Z| / ||Z||_M


@dataclass(frozen=True, eq=False)
class MappingTensors:
    """Normal-form mapping tensors over the master modes.

    Arrays have shape ``(n,) * order + (n_dof,)`` and are indexed by local
    master positions.  Order-3 and damping fields are ``None`` until computed.
    """

    masters: tuple
    omegas: np.ndarray          # master frequencies (rad/s)
    phis: np.ndarray            # (n_dof, n) master shapes
    Zs: np.ndarray
    Zd: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    resonances: object = None
    residuals: tuple = ()
    Gphi: np.ndarray = None     # G(phi_i, phi_j), (n, n, n_dof)
    Abar: np.ndarray = None
    Bbar: np.ndarray = None
    Hphi: np.ndarray = None
    Z: np.ndarray = None        # (4, n, n, n, n_dof)
    r: np.ndarray = None
    u: np.ndarray = None
    mu: np.ndarray = None
    nu: np.ndarray = None
    damping: object = None
    Zss: np.ndarray = None
    Zdd: np.ndarray = None
    c: np.ndarray = None
    alpha: np.ndarray = None
    beta: np.ndarray = None
    Cbar: np.ndarray = None     # 2 G(phi_i, c_jk), (n, n, n, n_dof)
    info: dict = field(default_factory=dict)

    @property
    def n_masters(self):
        return len(self.masters)

    @property
    def order(self):
        return 3 if self.r is not None else 2

    @property
    def has_damping(self):
        return self.c is not None

    def local(self, mode):
        """Local position of a master mode number."""
        try:
            return self.masters.index(mode)
        except ValueError:
            raise ValidationError(f"mode {mode} is not a master {self.masters}") from None

    def get(self, name, *modes):
        """Tensor entry by mode numbers, e.g. ``get('a', 0, 2)``."""
        arr = getattr(self, name)
        if arr is None:
            raise ValidationError(f"tensor {name!r} has not been computed")
        return arr[tuple(self.local(m) for m in modes)]


def _pairs(n):
    return list(itertools.combinations_with_replacement(range(n), 2))


def _m_norm(M, z):
    return float(np.sqrt(max(z @ M @ z, 0.0)))


def _record(records, stage, idx, border, Z, P, M, phis):
    for pos, s in enumerate(border):
        nz = _m_norm(M, Z)
        orth = abs(phis[:, s] @ M @ Z) / nz if nz > 0 else 0.0
        records.append(ResidualRecord(stage, idx, s, float(P[pos]), float(orth)))


def _setup(model, spectrum, masters, resonances, tol, solver):
    masters = tuple(spectrum.master_indices if masters is None else masters)
    if not masters:
        raise ValidationError("at least one master mode is required")
    if len(set(masters)) != len(masters):
        raise ValidationError(f"duplicate masters in {masters}")
    if resonances is None:
        resonances = detect_resonances(spectrum, masters, tol)
    elif tuple(resonances.masters) != masters:
        raise ValidationError("resonance set was built for another master selection")
    if solver is None:
        solver = ShiftedSolver(model, spectrum, resonances.tolerance)
    return masters, resonances, solver


def second_order_tensors(model, spectrum, masters=None, resonances=None, step=None,
                         tol=DEFAULT_TOL, solver=None):
    """Quadratic mapping tensors ``a, b, gamma`` (and ``Zs, Zd``).

    Parameters
    ----------
    model : StructuralModel
    spectrum : Spectrum
    masters : sequence of int, optional
    resonances : ResonanceSet, optional
        Detected with ``tol`` when omitted.
    step : StepTensors, optional
        Precomputed ``G(phi_i, phi_j)``; extracted when omitted.
    tol : float
    solver : ShiftedSolver, optional
        Shared factorization cache.

    Returns
    -------
    MappingTensors
    """
    masters, resonances, solver = _setup(model, spectrum, masters, resonances, tol, solver)
    if step is None:
        step = step_tensors(model, spectrum, masters)
    n, N = len(masters), model.n_dof
    w = spectrum.omegas[list(masters)]
    phis = spectrum.phis
    M = np.asarray(model.mass)
    Zs = np.zeros((n, n, N))
    Zd = np.zeros((n, n, N))
    Gphi = np.zeros((n, n, N))
    records = []
    for p, q in _pairs(n):
        i, j = masters[p], masters[q]
        rhs = step.G(i, j)
        Gphi[p, q] = Gphi[q, p] = rhs
        border = resonances.blocked_modes((i, j))
        zs, Ps = solver.solve(w[p] + w[q], rhs, border)
        zd, Pd = solver.solve(w[q] - w[p], rhs, border)
        _record(records, "Zs", (i, j), border, zs, Ps, M, phis)
        _record(records, "Zd", (i, j), border, zd, Pd, M, phis)
        Zs[p, q] = Zs[q, p] = zs
        Zd[p, q] = Zd[q, p] = zd
    wi = w[:, None, None]
    wj = w[None, :, None]
    a = 0.5 * (Zd + Zs)
    b = (Zd - Zs) / (2.0 * wi * wj)
    gamma = (wj - wi) / wj * Zd + (wj + wi) / wj * Zs
    return MappingTensors(
        masters=masters, omegas=w, phis=phis[:, list(masters)], Zs=Zs, Zd=Zd,
        a=a, b=b, gamma=gamma, resonances=resonances, residuals=tuple(records), Gphi=Gphi,
        info={"n_factorizations": solver.n_factorizations, "solver": solver, "step": step},
    )


def third_order_force_tensors(model, spectrum, order2):
    """``A_ijk = 2 G(phi_i, a_jk)`` and ``B_ijk = 2 G(phi_i, b_jk)``.

    Returns
    -------
    Abar, Bbar : ndarray, shape (n, n, n, n_dof)
    n_calls : int
        Number of bilinear-form evaluations (each costs 6 force evaluations).
    """
    n = order2.n_masters
    phi = order2.phis
    left, a_right, b_right, where = [], [], [], []
    for p in range(n):
        for q, r in _pairs(n):
            left.append(phi[:, p])
            a_right.append(order2.a[q, r])
            b_right.append(order2.b[q, r])
            where.append((p, q, r))
    both = quadratic_force(model, np.array(left + left), np.array(a_right + b_right))
    ga, gb = both[: len(left)], both[len(left):]
    N = model.n_dof
    Abar = np.zeros((n, n, n, N))
    Bbar = np.zeros((n, n, n, N))
    for (p, q, r), va, vb in zip(where, ga, gb):
        Abar[p, q, r] = Abar[p, r, q] = 2.0 * va
        Bbar[p, q, r] = Bbar[p, r, q] = 2.0 * vb
    return Abar, Bbar, 2 * len(left)


def reduced_force_tensors(model, spectrum, order2, step=None):
    """Attach ``Abar``, ``Bbar`` and ``H(phi_i, phi_j, phi_k)`` to a mapping.

    These force vectors feed both the cubic mapping and the cubic terms of
    the reduced dynamics (at second and third order alike).

    Returns
    -------
    MappingTensors
    """
    if order2.Abar is not None and order2.Hphi is not None:
        return order2
    masters = order2.masters
    step = step or order2.info.get("step") or step_tensors(model, spectrum, masters)
    n = len(masters)
    Abar, Bbar, n_calls = third_order_force_tensors(model, spectrum, order2)
    Hphi = np.zeros((n, n, n, model.n_dof))
    for p, q, r in itertools.product(range(n), repeat=3):
        Hphi[p, q, r] = step.H(masters[p], masters[q], masters[r])
    info = dict(order2.info)
    info.update(n_quadratic_calls_order3=n_calls)
    return replace(order2, Abar=Abar, Bbar=Bbar, Hphi=Hphi, info=info)


def third_order_tensors(model, spectrum, order2, step=None, solver=None):
    """Cubic mapping tensors ``r, u, mu, nu`` (and ``Z0..Z3``).

    Parameters
    ----------
    model : StructuralModel
    spectrum : Spectrum
    order2 : MappingTensors
        Result of :func:`second_order_tensors`.
    step : StepTensors, optional
    solver : ShiftedSolver, optional

    Returns
    -------
    MappingTensors
        ``order2`` extended with the order-3 fields.

    Raises
    ------
    ResonancePolicyError
        If a second-order internal resonance is flagged.
    """
    res = order2.resonances
    if res is not None and res.has_second_order:
        pairs = sorted({(e.s, e.indices) for e in res.second_order})
        raise ResonancePolicyError(
            f"second-order internal resonance flagged {pairs}: the cubic normal form is not "
            f"applicable; use the second-order DNF (order 2) reduced model only")
    masters = order2.masters
    step = step or order2.info.get("step") or step_tensors(model, spectrum, masters)
    solver = solver or order2.info.get("solver") or ShiftedSolver(model, spectrum, res.tolerance)
    n, N = len(masters), model.n_dof
    w = order2.omegas
    phis = spectrum.phis
    M = np.asarray(model.mass)

    order2 = reduced_force_tensors(model, spectrum, order2, step)
    Abar, Bbar, Hphi = order2.Abar, order2.Bbar, order2.Hphi

    Z = np.zeros((4, n, n, n, N))
    records = list(order2.residuals)
    for p, q, r in itertools.product(range(n), repeat=3):
        wi, wj, wk = w[p], w[q], w[r]
        S = Abar[p, q, r] + Abar[q, r, p] + Abar[r, p, q] + 3.0 * Hphi[p, q, r]
        b1 = wj * wk * Bbar[p, q, r]
        b2 = wk * wi * Bbar[q, r, p]
        b3 = wi * wj * Bbar[r, p, q]
        rhs = (S - b1 - b2 - b3, S - b1 + b2 + b3, S + b1 - b2 + b3, S + b1 + b2 - b3)
        sig = (wi + wj + wk, -wi + wj + wk, wi - wj + wk, wi + wj - wk)
        idx = (masters[p], masters[q], masters[r])
        border = res.blocked_modes(idx)
        for m in range(4):
            z, P = solver.solve(sig[m], rhs[m], border)
            Z[m, p, q, r] = z
            _record(records, f"Z{m}", idx, border, z, P, M, phis)

    wi = w[:, None, None, None]
    wj = w[None, :, None, None]
    wk = w[None, None, :, None]
    s0, s1, s2, s3 = wi + wj + wk, -wi + wj + wk, wi - wj + wk, wi + wj - wk
    Z0, Z1, Z2, Z3 = Z
    r_t = (Z0 + Z1 + Z2 + Z3) / 12.0
    u_t = (-Z0 - Z1 + Z2 + Z3) / (4.0 * wj * wk)
    mu_t = (-s0 * Z0 + s1 * Z1 + s2 * Z2 + s3 * Z3) / (12.0 * wi * wj * wk)
    nu_t = (s0 * Z0 - s1 * Z1 + s2 * Z2 + s3 * Z3) / (4.0 * wi)
    info = dict(order2.info)
    info.update(n_factorizations=solver.n_factorizations)
    return replace(order2, Z=Z, r=r_t, u=u_t, mu=mu_t,
                   nu=nu_t, residuals=tuple(records), info=info)


def damping_tensors(model, spectrum, order2, damping, solver=None):
    """Light-damping quadratic tensors ``c, alpha, beta`` (and ``Zss, Zdd``).

    With Rayleigh damping ``C = zeta_m M + zeta_k K`` and
    ``zeta_i = zeta_m + zeta_k w_i^2``::

        Zss = ((w_i + w_j)^2 M - K)^-1 M Zs,   Zdd = ((w_j - w_i)^2 M - K)^-1 M Zd
        c_ij = (zeta_m + 3 w_i^2 zeta_k) b_ij - 2 zeta_k a_ij
               + (2 w_i^2 zeta_k - zeta_m) (Zss + Zdd)
               + (2 w_j^2 zeta_k - zeta_m) (w_i / w_j) (Zss - Zdd)
        alpha_ij = -w_i^2 c_ij,   beta_ij = c_ij - (zeta_i + zeta_j) b_ij

    ``c_ij`` multiplies ``R_i S_j`` in the displacement mapping.  The
    nonlinear-damping force ``Cbar_ijk = 2 G(phi_i, c_jk)`` is also returned.

    Returns
    -------
    MappingTensors
    """
    res = order2.resonances
    solver = solver or order2.info.get("solver") or ShiftedSolver(model, spectrum, res.tolerance)
    masters = order2.masters
    n, N = len(masters), model.n_dof
    w = order2.omegas
    M = np.asarray(model.mass)
    phis = spectrum.phis
    Zss = np.zeros((n, n, N))
    Zdd = np.zeros((n, n, N))
    records = list(order2.residuals)
    for p, q in _pairs(n):
        i, j = masters[p], masters[q]
        border = res.blocked_modes((i, j)) if res is not None else ()
        zss, P1 = solver.solve(w[p] + w[q], M @ order2.Zs[p, q], border)
        zdd, P2 = solver.solve(w[q] - w[p], M @ order2.Zd[p, q], border)
        _record(records, "Zss", (i, j), border, zss, P1, M, phis)
        _record(records, "Zdd", (i, j), border, zdd, P2, M, phis)
        Zss[p, q] = Zss[q, p] = zss
        Zdd[p, q] = Zdd[q, p] = zdd
    zm, zk = damping.zeta_m, damping.zeta_k
    wi = w[:, None, None]
    wj = w[None, :, None]
    c = ((zm + 3 * wi**2 * zk) * order2.b - 2 * zk * order2.a
         + (2 * wi**2 * zk - zm) * (Zss + Zdd)
         + (2 * wj**2 * zk - zm) * (wi / wj) * (Zss - Zdd))
    zeta = damping.modal(w)
    alpha = -wi**2 * c
    beta = c - (zeta[:, None, None] + zeta[None, :, None]) * order2.b
    left, right, where = [], [], []
    for p in range(n):
        for q, r in itertools.product(range(n), repeat=2):
            left.append(order2.phis[:, p])
            right.append(c[q, r])
            where.append((p, q, r))
    gc = quadratic_force(model, np.array(left), np.array(right))
    Cbar = np.zeros((n, n, n, N))
    for (p, q, r), v in zip(where, gc):
        Cbar[p, q, r] = 2.0 * v
    return replace(order2, damping=damping, Zss=Zss, Zdd=Zdd, c=c, alpha=alpha, beta=beta,
                   Cbar=Cbar, residuals=tuple(records))


def static_modal_derivative(model, spectrum, i, j, step=None):
    """Static modal derivative ``theta_ij = -K^-1 G(phi_i, phi_j) / 2``.

    With ``G`` the symmetric bilinear form, ``theta_ii`` is half the
    second-order static shift ``Zd_ii``.
    """
    if step is not None:
        g = step.G(i, j)
    else:
        g = quadratic_force(model, spectrum.phis[:, i], spectrum.phis[:, j])
    c = linalg.cho_factor(np.asarray(model.stiffness))
    return -0.5 * linalg.cho_solve(c, g)


def compute_dnf(model, spectrum, masters=None, order=3, damping=None, resonances=None,
                tol=DEFAULT_TOL, declared=()):
    """Convenience driver: STEP, second order, optional damping and third order.

    Parameters
    ----------
    model : StructuralModel
    spectrum : Spectrum
    masters : sequence of int, optional
    order : {2, 3}
    damping : DampingSpec, optional
    resonances : ResonanceSet, optional
    tol : float
    declared : sequence
        Resonance declarations used when ``resonances`` is omitted.

    Returns
    -------
    MappingTensors
    """
    if order not in (2, 3):
        raise ValidationError(f"order must be 2 or 3, got {order!r}")
    masters = tuple(spectrum.master_indices if masters is None else masters)
    if resonances is None:
        resonances = detect_resonances(spectrum, masters, tol, declared)
    if order == 3 and resonances.has_second_order:
        third_order_tensors(model, spectrum, _stub(masters, resonances))
    step = step_tensors(model, spectrum, masters)
    t = second_order_tensors(model, spectrum, masters, resonances, step)
    t = reduced_force_tensors(model, spectrum, t, step)
    if order == 3:
        t = third_order_tensors(model, spectrum, t, step)
    if damping is not None and not damping.is_zero:
        t = damping_tensors(model, spectrum, t, damping)
    return t


def _stub(masters, resonances):
    z = np.zeros((0,))
    return MappingTensors(masters, z, z, z, z, z, z, z, resonances=resonances)


_ARRAY_FIELDS = ("omegas", "phis", "Zs", "Zd", "a", "b", "gamma", "Gphi", "Abar", "Bbar", "Hphi",
                 "Z", "r", "u", "mu", "nu", "Zss", "Zdd", "c", "alpha", "beta", "Cbar")


def save_mapping(tensors, spectrum, path):
    """Write a mapping-tensor archive (``.npz``).

    Arrays are stored exactly; the resonance set is stored by its inputs
    (computed frequencies, tolerance, declared relations) and rebuilt on
    loading.
    """
    res = tensors.resonances
    meta = {
        "masters": [int(m) for m in tensors.masters],
        "spectrum_omegas_rad_s": [float(w) for w in spectrum.omegas],
        "tolerance": None if res is None else res.tolerance,
        "declared": [] if res is None else [str(r) for r in res.declared],
        "damping": None if tensors.damping is None else asdict(tensors.damping),
        "residuals": [asdict(r) for r in tensors.residuals],
    }
    arrays = {k: getattr(tensors, k) for k in _ARRAY_FIELDS if getattr(tensors, k) is not None}
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_mapping(path):
    """Read an archive written by :func:`save_mapping`.

    Returns
    -------
    MappingTensors
    """
    from .eigen import Spectrum
    from .model import DampingSpec

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k: data[k] for k in _ARRAY_FIELDS if k in data.files}
    masters = tuple(meta["masters"])
    res = None
    if meta["tolerance"] is not None:
        w = np.asarray(meta["spectrum_omegas_rad_s"])
        spec = Spectrum(w, np.zeros((0, w.size)), masters)
        res = detect_resonances(spec, masters, meta["tolerance"], meta["declared"])
    damping = None if meta["damping"] is None else DampingSpec(**meta["damping"])
    records = tuple(ResidualRecord(**{**r, "indices": tuple(r["indices"])}) for r in meta["residuals"])
    missing = [f.name for f in fields(MappingTensors) if f.name in ("Zs", "Zd", "a", "b", "gamma")
               and f.name not in arrays]
    if missing:
        raise ValidationError(f"{path}: archive lacks {missing}")
    return MappingTensors(masters=masters, resonances=res, residuals=records, damping=damping,
                          **arrays)
