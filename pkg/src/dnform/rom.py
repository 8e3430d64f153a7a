"""Reduced dynamics as explicit monomial lists, and the inverse mapping.

The reduced dynamics of master ``r`` reads::

    R_r'' + zeta_r R_r' + w_r^2 R_r + sum_m c_m prod_i R_i^e_i S_i^f_i = F_r cos(W t)

with ``S = R'``.  Every monomial is one row ``(r, e, f, c_m)``; coefficients
of ordered index tuples that give the same monomial are summed.  The cubic
coefficients are

* ``(A + h)^r_ijk`` on ``R_i R_j R_k`` with ``A^r = phi_r^T Abar``,
  ``h^r = phi_r^T H(phi_i, phi_j, phi_k)``;
* ``B^r_ijk`` on ``R_i S_j S_k``;
* ``C^r_ijk`` on ``R_i R_j S_k`` (nonlinear damping, second order only);

and ``g^r_ij`` on ``R_i R_j`` for a second-order internal resonance.

Variants
--------
``"O2-full"``
    Second-order mapping: every cubic monomial among the masters.
``"O3-trivial"``
    Third-order mapping: only the trivially resonant monomials.
``"O3-resonant"``
    Third-order mapping: trivial plus declared/detected resonant monomials.
Nonlinear damping is added to ``"O2-full"`` with ``nonlinear_damping``
set to ``"full"`` (all ``C^r_ijk``) or ``"self"`` (``C^p_ppp`` only).
"""

from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .errors import ResonancePolicyError, ValidationError

__all__ = [
    "NormalState",
    "RomModel",
    "VARIANTS",
    "assemble_rom",
    "rom_rhs",
    "reconstruct",
    "mapping_velocity",
    "invariance_residual",
    "save_rom",
    "load_rom",
]

VARIANTS = ("O2-full", "O3-trivial", "O3-resonant")


@dataclass(frozen=True)
class NormalState:
    """Normal displacements ``R`` and velocities ``S`` (rows may be batched)."""

    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if R.shape != S.shape:
            raise ValidationError(f"R and S shapes differ: {R.shape} vs {S.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S", S)


@dataclass(frozen=True, eq=False)
class RomModel:
    """Reduced dynamics over ``n`` master coordinates.

    Attributes
    ----------
    masters : tuple of int
        Mode numbers (0-based) of the masters.
    omegas : ndarray, shape (n,)
    zeta : ndarray, shape (n,)
        Linear modal damping ``zeta_M + zeta_K w_r^2`` (1/s).
    eq : ndarray of int, shape (m,)
        Equation (local master position) of each monomial.
    R_exp, S_exp : ndarray of int, shape (m, n)
    coeff : ndarray, shape (m,)
    variant : str
    forcing : ndarray, shape (n,), optional
        Modal force amplitudes ``phi_r^T F``.
    """

    masters: tuple
    omegas: np.ndarray
    zeta: np.ndarray
    eq: np.ndarray
    R_exp: np.ndarray
    S_exp: np.ndarray
    coeff: np.ndarray
    variant: str = "O2-full"
    forcing: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.masters)

    @property
    def n_monomials(self):
        return len(self.coeff)

    def monomial_keys(self):
        """Set of ``(eq, R_exp, S_exp)`` tuples."""
        return {(int(e), tuple(int(v) for v in r), tuple(int(v) for v in s))
                for e, r, s in zip(self.eq, self.R_exp, self.S_exp)}

    def coefficient_list(self):
        """Sorted ``[(eq, R_exp, S_exp, coeff), ...]``."""
        rows = [(int(e), tuple(int(v) for v in r), tuple(int(v) for v in s), float(c))
                for e, r, s, c in zip(self.eq, self.R_exp, self.S_exp, self.coeff)]
        return sorted(rows)

    def with_forcing(self, amplitudes):
        f = np.asarray(amplitudes, dtype=float)
        if f.shape != (self.n,):
            raise ValidationError(f"forcing must have {self.n} modal amplitudes")
        return RomModel(self.masters, self.omegas, self.zeta, self.eq, self.R_exp,
                        self.S_exp, self.coeff, self.variant, f, dict(self.info))

    def without_damping(self):
        keep = ~np.asarray(self.info.get("damping_rows", np.zeros(self.n_monomials, bool)))
        return RomModel(self.masters, self.omegas, np.zeros(self.n), self.eq[keep],
                        self.R_exp[keep], self.S_exp[keep], self.coeff[keep], self.variant,
                        self.forcing, {**self.info, "damping_rows": np.zeros(keep.sum(), bool)})

    def nonlinear(self, R, S):
        """Sum of the monomials per equation.

        Parameters
        ----------
        R, S : ndarray, shape (n,) or (n, T)

        Returns
        -------
        ndarray, same shape as ``R``
        """
        R = np.asarray(R, dtype=float)
        S = np.asarray(S, dtype=float)
        out = np.zeros_like(R)
        if not self.n_monomials:
            return out
        np.add.at(out, self.eq, _monomials(self.coeff, self.R_exp, self.S_exp, R, S))
        return out

    def nonlinear_jacobian(self, R, S):
        """Derivatives of :meth:`nonlinear` w.r.t. ``R`` and ``S``.

        Returns
        -------
        dR, dS : ndarray, shape (n, n) + R.shape[1:]
            ``dR[r, i]`` is the derivative of equation ``r`` w.r.t. ``R_i``.
        """
        R = np.asarray(R, dtype=float)
        S = np.asarray(S, dtype=float)
        rest = R.shape[1:]
        dR = np.zeros((self.n, self.n) + rest)
        dS = np.zeros((self.n, self.n) + rest)
        for which, out in (("R", dR), ("S", dS)):
            exps_all = self.R_exp if which == "R" else self.S_exp
            for i in range(self.n):
                e = exps_all[:, i]
                rows = np.nonzero(e)[0]
                if not rows.size:
                    continue
                Rx, Sx = self.R_exp[rows].copy(), self.S_exp[rows].copy()
                (Rx if which == "R" else Sx)[:, i] -= 1
                acc = np.zeros((self.n,) + rest)
                np.add.at(acc, self.eq[rows], _monomials(self.coeff[rows] * e[rows], Rx, Sx, R, S))
                out[:, i] = acc
        return dR, dS

    def equations(self, names=None):
        """Human-readable dump of the reduced equations (1-based mode labels)."""
        names = names or [str(m + 1) for m in self.masters]
        lines = [f"# reduced dynamics, variant {self.variant}"]
        for p in range(self.n):
            w = self.omegas[p]
            head = f"R{names[p]}'' "
            if self.zeta[p]:
                head += f"+ {self.zeta[p]:.6g} R{names[p]}' "
            head += f"+ {w**2:.10g} R{names[p]}"
            lines.append(head)
            for e, rx, sx, c in self.coefficient_list():
                if e != p:
                    continue
                mono = "".join(_factor(f"R{names[i]}", k) for i, k in enumerate(rx))
                mono += "".join(_factor(f"R{names[i]}'", k) for i, k in enumerate(sx))
                lines.append(f"    {'+' if c >= 0 else '-'} {abs(c):.10g} {mono}")
            forcing = "" if self.forcing is None else f"{self.forcing[p]:.6g} cos(W t)"
            lines.append(f"    = {forcing or '0'}")
        return "\n".join(lines)


def _factor(name, k):
    if k == 0:
        return ""
    return f"{name}^{k} " if k > 1 else f"{name} "


def _monomials(coeff, R_exp, S_exp, R, S):
    """Values ``coeff_m prod_i R_i^e_mi S_i^f_mi``, shape ``(m,) + R.shape[1:]``."""
    shape = (-1,) + (1,) * (R.ndim - 1)
    t = np.broadcast_to(coeff.reshape(shape), (len(coeff),) + R.shape[1:]).copy()
    for i in range(R.shape[0]):
        for exps, V in ((R_exp[:, i], R[i]), (S_exp[:, i], S[i])):
            if exps.any():
                t *= V[None] ** exps.reshape(shape)
    return t


def _multiset_resonant(res, r_mode, modes, kinds):
    if res is None:
        return False
    for e in res.third_order if len(modes) == 3 else res.second_order:
        if e.s == r_mode and tuple(sorted(e.indices)) == tuple(sorted(modes)) and e.kind in kinds:
            return True
    return False


def assemble_rom(tensors, variant="O2-full", damping=None, nonlinear_damping=None,
                 forcing=None):
    """Assemble the reduced dynamics from mapping tensors.

    Parameters
    ----------
    tensors : MappingTensors
        With ``Abar``, ``Bbar`` and ``Hphi`` (see
        :func:`dnform.dnf.reduced_force_tensors`); ``O3-*`` variants need the
        third-order mapping, nonlinear damping needs the damping tensors.
    variant : {"O2-full", "O3-trivial", "O3-resonant"}
    damping : DampingSpec, optional
        Linear modal damping; defaults to ``tensors.damping``.
    nonlinear_damping : {None, "full", "self"}
    forcing : array_like, shape (n,), optional
        Modal force amplitudes.

    Returns
    -------
    RomModel
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if tensors.Abar is None or tensors.Hphi is None:
        raise ValidationError("reduced force tensors (Abar, Bbar, Hphi) are missing")
    res = tensors.resonances
    masters = tensors.masters
    n = len(masters)
    if variant.startswith("O3"):
        if tensors.r is None:
            raise ValidationError(f"variant {variant} needs the third-order mapping")
        if res is not None and res.has_second_order:
            raise ResonancePolicyError("second-order internal resonance: only O2-full is allowed")
        kinds = ("trivial",) if variant == "O3-trivial" else ("trivial", "declared", "detected")
        if variant == "O3-trivial" and any(e.kind != "trivial" for e in res.third_order):
            raise ValidationError("the mapping was built with non-trivial resonances; "
                                  "use the O3-resonant variant")
    if res is not None:
        for e in res.second_order + res.third_order:
            if e.s not in masters:
                raise ResonancePolicyError(
                    f"mode {e.s} is resonant with master combination {e.indices} but is not "
                    f"a master; add it to the master set")
    damping = damping if damping is not None else tensors.damping
    if nonlinear_damping not in (None, "full", "self"):
        raise ValidationError(f"nonlinear_damping must be None, 'full' or 'self'")
    if nonlinear_damping:
        if variant != "O2-full":
            raise ValidationError("nonlinear damping terms are defined for the O2-full variant")
        if tensors.Cbar is None:
            raise ValidationError("nonlinear damping needs the damping tensors")

    phis = tensors.phis
    AH = np.einsum("nr,pqsn->pqsr", phis, tensors.Abar + tensors.Hphi)
    B = np.einsum("nr,pqsn->pqsr", phis, tensors.Bbar)
    rows = {}
    damp_keys = set()

    def add(r, rx, sx, c, damp=False):
        key = (r, tuple(rx), tuple(sx))
        rows[key] = rows.get(key, 0.0) + c
        if damp:
            damp_keys.add(key)

    def counts(idx):
        v = [0] * n
        for i in idx:
            v[i] += 1
        return v

    def keep(r, idx):
        modes = tuple(masters[i] for i in idx)
        if variant == "O2-full":
            return True
        return _multiset_resonant(res, masters[r], modes, kinds)

    zero = [0] * n
    for r in range(n):
        for p, q, s in itertools.product(range(n), repeat=3):
            if not keep(r, (p, q, s)):
                continue
            add(r, counts((p, q, s)), zero, AH[p, q, s, r])
            add(r, counts((p,)), counts((q, s)), B[p, q, s, r])
        if res is not None and res.has_second_order:
            g = np.einsum("n,pqn->pq", phis[:, r], tensors.Gphi)
            for p, q in itertools.product(range(n), repeat=2):
                if _multiset_resonant(res, masters[r], (masters[p], masters[q]),
                                      ("trivial", "declared", "detected")):
                    add(r, counts((p, q)), zero, g[p, q])
    if nonlinear_damping:
        C = np.einsum("nr,pqsn->pqsr", phis, tensors.Cbar)
        for r in range(n):
            for p, q, s in itertools.product(range(n), repeat=3):
                if nonlinear_damping == "self" and not p == q == s == r:
                    continue
                add(r, counts((p, q)), counts((s,)), C[p, q, s, r], damp=True)

    keys = sorted(rows)
    eq = np.array([k[0] for k in keys], dtype=int)
    R_exp = np.array([k[1] for k in keys], dtype=int).reshape(len(keys), n)
    S_exp = np.array([k[2] for k in keys], dtype=int).reshape(len(keys), n)
    coeff = np.array([rows[k] for k in keys], dtype=float)
    zeta = damping.modal(tensors.omegas) if damping is not None else np.zeros(n)
    tag = variant
    if nonlinear_damping:
        tag = f"O2-damped-{nonlinear_damping}-C"
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape != (n,):
            raise ValidationError(f"forcing must have {n} modal amplitudes")
    info = {"damping_rows": np.array([k in damp_keys for k in keys], dtype=bool)}
    return RomModel(tuple(masters), np.asarray(tensors.omegas, dtype=float), np.asarray(zeta),
                    eq, R_exp, S_exp, coeff, tag, forcing, info)


def rom_rhs(rom, state, t=0.0, Omega=None):
    """Normal accelerations ``R''`` of the reduced dynamics.

    Parameters
    ----------
    rom : RomModel
    state : NormalState
    t : float
        Time (s), used by the forcing term.
    Omega : float, optional
        Forcing frequency (rad/s); forcing is ignored when omitted.

    Returns
    -------
    ndarray, same shape as ``state.R``
    """
    R, S = state.R, state.S
    if R.shape[0] != rom.n:
        raise ValidationError(f"state has {R.shape[0]} coordinates, ROM has {rom.n}")
    shape = (-1,) + (1,) * (R.ndim - 1)
    acc = -(rom.omegas**2).reshape(shape) * R - rom.zeta.reshape(shape) * S - rom.nonlinear(R, S)
    if rom.forcing is not None and Omega is not None:
        acc = acc + rom.forcing.reshape(shape) * math.cos(Omega * t)
    return acc


# ---------------------------------------------------------------------------
# mapping

def _mapping_terms(tensors, order, damped):
    """Polynomial terms ``(tensor, variables)`` of the X and Y mappings."""
    phiT = tensors.phis.T
    X = [(phiT, "R"), (tensors.a, "RR"), (tensors.b, "SS")]
    Y = [(phiT, "S"), (tensors.gamma, "RS")]
    if damped:
        if tensors.c is None:
            raise ValidationError("damped reconstruction needs the damping tensors")
        X.append((tensors.c, "RS"))
        Y += [(tensors.alpha, "RR"), (tensors.beta, "SS")]
    if order == 3:
        if tensors.r is None:
            raise ValidationError("order-3 reconstruction needs the third-order mapping")
        X += [(tensors.r, "RRR"), (tensors.u, "RSS")]
        Y += [(tensors.mu, "SSS"), (tensors.nu, "SRR")]
    elif order != 2:
        raise ValidationError(f"order must be 2 or 3, got {order!r}")
    return X, Y


def _contract(T, vecs):
    """``T[i, j, ..., :] v1[m, i] v2[m, j] ...`` for batched vectors ``v[m, n]``."""
    out = np.einsum("i...,mi->m...", T, vecs[0])
    for v in vecs[1:]:
        out = np.einsum("mi...,mi->m...", out, v)
    return out


def _evaluate(terms, R, S, dR=None, dS=None):
    m = R.shape[0]
    total = None
    for T, vars_ in terms:
        base = [R if c == "R" else S for c in vars_]
        if dR is None:
            val = _contract(T, base)
        else:
            val = 0.0
            for pos, c in enumerate(vars_):
                vecs = list(base)
                vecs[pos] = dR if c == "R" else dS
                val = val + _contract(T, vecs)
        total = val if total is None else total + val
    return total if total is not None else np.zeros((m, 0))


def _batched(state, n):
    R = np.atleast_2d(state.R)
    S = np.atleast_2d(state.S)
    if R.shape[1] != n:
        raise ValidationError(f"state has {R.shape[1]} coordinates, mapping has {n}")
    return R, S, state.R.ndim == 1


def reconstruct(tensors, state, order=None, damped=None, velocity="mapping"):
    """Physical displacement and velocity from normal coordinates.

    Parameters
    ----------
    tensors : MappingTensors
    state : NormalState
        ``R``, ``S`` of shape ``(n,)`` or ``(m, n)``.
    order : {2, 3}, optional
        Defaults to the order of ``tensors``.
    damped : bool, optional
        Include ``c, alpha, beta``; defaults to whether they were computed.
    velocity : {"mapping", "deduced"}
        ``"mapping"`` uses the velocity mapping; ``"deduced"`` differentiates
        the displacement mapping with ``R' = S``, ``S' = -w^2 R``.

    Returns
    -------
    X, Y : ndarray, shape (n_dof,) or (m, n_dof)
    """
    order = tensors.order if order is None else order
    damped = tensors.has_damping if damped is None else damped
    Xt, Yt = _mapping_terms(tensors, order, damped)
    R, S, single = _batched(state, tensors.n_masters)
    X = _evaluate(Xt, R, S)
    if velocity == "mapping":
        Y = _evaluate(Yt, R, S)
    elif velocity == "deduced":
        Y = _evaluate(Xt, R, S, S, -tensors.omegas**2 * R)
    else:
        raise ValidationError(f"velocity must be 'mapping' or 'deduced', got {velocity!r}")
    return (X[0], Y[0]) if single else (X, Y)


def mapping_velocity(tensors, state, dstate, order=None, damped=None):
    """Directional derivatives of ``X`` and ``Y`` along ``(dR, dS)``."""
    order = tensors.order if order is None else order
    damped = tensors.has_damping if damped is None else damped
    Xt, Yt = _mapping_terms(tensors, order, damped)
    R, S, single = _batched(state, tensors.n_masters)
    dR, dS, _ = _batched(dstate, tensors.n_masters)
    dX = _evaluate(Xt, R, S, dR, dS)
    dY = _evaluate(Yt, R, S, dR, dS)
    return (dX[0], dY[0]) if single else (dX, dY)


def invariance_residual(model, tensors, rom, state, order=None):
    """Residuals of the equations of motion on the reconstructed manifold.

    With ``R' = S`` and ``S'`` from the reduced dynamics, returns the
    kinematic residual ``X' - Y`` and the dynamic residual
    ``M Y' + K X + f_nl(X)`` (undamped, unforced).

    Returns
    -------
    kinematic, dynamic : ndarray, shape (n_dof,) or (m, n_dof)
    """
    R, S, single = _batched(state, tensors.n_masters)
    acc = rom_rhs(rom, NormalState(R.T, S.T)).T
    X, Y = reconstruct(tensors, NormalState(R, S), order, damped=False)
    dX, dY = mapping_velocity(tensors, NormalState(R, S), NormalState(S, acc), order,
                              damped=False)
    M = np.asarray(model.mass)
    K = np.asarray(model.stiffness)
    kin = dX - Y
    dyn = dY @ M + X @ K + model.nonlinear_force(X)
    return (kin[0], dyn[0]) if single else (kin, dyn)


# ---------------------------------------------------------------------------
# archive

def save_rom(rom, path):
    """Write a ROM archive (plain text, exact float round-trip)."""
    lines = ["# dnform reduced-order model", "[rom]", f"variant = {rom.variant}",
             "masters = " + " ".join(str(m) for m in rom.masters),
             "omegas_rad_s = " + " ".join(repr(float(w)) for w in rom.omegas),
             "zeta_1_s = " + " ".join(repr(float(z)) for z in rom.zeta)]
    if rom.forcing is not None:
        lines.append("forcing = " + " ".join(repr(float(f)) for f in rom.forcing))
    damp = rom.info.get("damping_rows", np.zeros(rom.n_monomials, bool))
    lines += ["[monomials]", "# eq | R exponents | S exponents | coefficient | nonlinear damping"]
    for e, rx, sx, c, d in zip(rom.eq, rom.R_exp, rom.S_exp, rom.coeff, damp):
        lines.append(f"{e} | {' '.join(map(str, rx))} | {' '.join(map(str, sx))} | "
                     f"{float(c)!r} | {int(d)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_rom(path):
    """Read a ROM archive written by :func:`save_rom`."""
    meta, mono, section = {}, [], None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[]").strip()
                continue
            if section == "rom":
                key, _, val = line.partition("=")
                meta[key.strip()] = val.strip()
            elif section == "monomials":
                parts = [p.strip() for p in line.split("|")]
                if len(parts) != 5:
                    raise ValidationError(f"{path}:{lineno}: malformed monomial row")
                mono.append(parts)
            else:
                raise ValidationError(f"{path}:{lineno}: content outside a known section")
    try:
        masters = tuple(int(v) for v in meta["masters"].split())
        omegas = np.array([float(v) for v in meta["omegas_rad_s"].split()])
        zeta = np.array([float(v) for v in meta["zeta_1_s"].split()])
    except KeyError as exc:
        raise ValidationError(f"{path}: missing key {exc}") from None
    n = len(masters)
    forcing = None
    if "forcing" in meta:
        forcing = np.array([float(v) for v in meta["forcing"].split()])
    eq = np.array([int(p[0]) for p in mono], dtype=int)
    R_exp = np.array([[int(v) for v in p[1].split()] for p in mono], dtype=int).reshape(-1, n)
    S_exp = np.array([[int(v) for v in p[2].split()] for p in mono], dtype=int).reshape(-1, n)
    coeff = np.array([float(p[3]) for p in mono])
    damp = np.array([bool(int(p[4])) for p in mono], dtype=bool)
    return RomModel(masters, omegas, zeta, eq, R_exp, S_exp, coeff, meta.get("variant", "O2-full"),
                    forcing, {"damping_rows": damp})
