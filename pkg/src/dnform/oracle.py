"""Dense modal-basis normal-form formulas, used to cross-check :mod:`dnform.dnf`.

Everything here works on small systems (``N <= 20``) written in modal
coordinates ``x_s`` with ``x'' + w_s^2 x + g^s_ij x_i x_j + h^s_ijk x_i x_j x_k = 0``
(full sums).  Tensors are returned with the mode component on the *last*
axis, e.g. ``a[i, j, s]``, so ``V @ a[i, j]`` is directly comparable with the
physical-basis vectors.

Three routes are provided for the quadratic tensors and two for the cubic
ones:

* ``"split"`` -- partial fractions over the sum/difference denominators;
* ``"system"`` -- per-component solution of the balance equations obtained
  by substituting the mapping into the equations of motion (the unsplit
  rational form, solved numerically rather than in closed form);
* ``"closed"`` -- (second order only) the unsplit closed form with the
  fourth-order denominator ``D_ij``;
* :func:`mass_inverse_second_order` -- the physical-basis product form with
  ``O^2 = M^-1 K``, which needs ``M^-1`` and is therefore only a test path.
"""

from dataclasses import dataclass
import itertools

import numpy as np
from scipy import linalg

from .eigen import solve_modes
from .errors import NumericalError, ValidationError
from .model import polynomial_model

__all__ = [
    "DenseModalSystem",
    "modal_system_from_model",
    "modal_second_order",
    "mass_inverse_second_order",
    "modal_AB",
    "modal_third_order",
    "modal_damping_c",
    "random_symmetric_tensors",
    "random_nonresonant_model",
    "equivalence_suite",
    "MAX_SIZE",
]

MAX_SIZE = 20
_SING = 1e-6


@dataclass(frozen=True, eq=False)
class DenseModalSystem:
    """Modal frequencies with full quadratic/cubic coupling tensors.

    Attributes
    ----------
    omegas : ndarray, shape (N,)
    g : ndarray, shape (N, N, N)
        ``g[s, i, j]``, symmetric in ``(i, j)``.
    h : ndarray, shape (N, N, N, N)
        ``h[s, i, j, k]``, symmetric in ``(i, j, k)``.
    """

    omegas: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        N = w.size
        if N > MAX_SIZE:
            raise ValidationError(f"oracle systems are limited to N <= {MAX_SIZE}")
        g = np.asarray(self.g, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if g.shape != (N, N, N) or h.shape != (N, N, N, N):
            raise ValidationError("tensor shapes do not match the number of modes")
        sg = max(np.abs(g).max(initial=0.0), 1e-300)
        sh = max(np.abs(h).max(initial=0.0), 1e-300)
        if np.abs(g - g.transpose(0, 2, 1)).max(initial=0.0) > 1e-10 * sg:
            raise ValidationError("g must be symmetric in its last two indices")
        if np.abs(h - h.transpose(0, 3, 2, 1)).max(initial=0.0) > 1e-10 * sh or \
                np.abs(h - h.transpose(0, 2, 1, 3)).max(initial=0.0) > 1e-10 * sh:
            raise ValidationError("h must be symmetric in its last three indices")
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)

    @property
    def n(self):
        return self.omegas.size


def modal_system_from_model(model, spectrum=None):
    """Project a polynomial model on all of its modes.

    Returns
    -------
    system : DenseModalSystem
    spectrum : Spectrum
        All ``n_dof`` modes (``V = spectrum.phis``).
    """
    if spectrum is None or spectrum.n_computed != model.n_dof:
        spectrum = solve_modes(model, model.n_dof)
    V = spectrum.phis
    ev = model.force_evaluator
    if not hasattr(ev, "quadratic"):
        raise ValidationError("the modal oracle needs a model with explicit tensors")
    g = np.einsum("ps,prt,ri,tj->sij", V, ev.quadratic, V, V, optimize=True)
    h = np.einsum("ps,prtu,ri,tj,uk->sijk", V, ev.cubic, V, V, V, optimize=True)
    g = 0.5 * (g + g.transpose(0, 2, 1))
    h = sum(h.transpose((0,) + tuple(1 + p for p in perm))
            for perm in itertools.permutations(range(3))) / 6.0
    return DenseModalSystem(spectrum.omegas, g, h), spectrum


def _check_denominator(d, scale, what):
    if np.any(np.abs(d) < _SING * scale):
        raise NumericalError(f"resonant denominator in {what}: the oracle does not handle resonances")


def modal_second_order(system, form="split"):
    """Quadratic normal-form tensors in modal coordinates.

    Parameters
    ----------
    system : DenseModalSystem
    form : {"split", "closed", "system"}

    Returns
    -------
    dict
        ``a``, ``b``, ``gamma`` with shape ``(N, N, N)`` indexed ``[i, j, s]``;
        ``gamma[i, j]`` multiplies ``R_i S_j`` in the velocity mapping.
    """
    w = system.omegas
    N = w.size
    W2 = w**2
    gT = system.g.transpose(1, 2, 0)                  # [i, j, s]
    wi = w[:, None, None]
    wj = w[None, :, None]
    ws2 = W2[None, None, :]
    dsum = (wi + wj) ** 2 - ws2
    ddif = (wj - wi) ** 2 - ws2
    scale = W2.max()
    _check_denominator(dsum, scale, "second order (sum)")
    _check_denominator(ddif, scale, "second order (difference)")
    if form == "split":
        zs = gT / dsum
        zd = gT / ddif
        a = 0.5 * (zs + zd)
        b = (zd - zs) / (2 * wi * wj)
        gamma = (wj - wi) / wj * zd + (wj + wi) / wj * zs
    elif form == "closed":
        D = dsum * ddif
        a = (wi**2 + wj**2 - ws2) * gT / D
        b = 2 * gT / D
        gamma = (-wi**2 + wj**2 - ws2) * 2 * gT / D
    elif form == "system":
        a = np.zeros((N, N, N))
        b = np.zeros_like(a)
        gamma = np.zeros_like(a)
        for i, j, s in itertools.product(range(N), repeat=3):
            # unknowns (a_ij, b_ij, gamma_ij, gamma_ji) for component s
            A = np.array([
                [2.0, -2 * W2[i], -1.0, 0.0],
                [2.0, -2 * W2[j], 0.0, -1.0],
                [-2 * W2[s], 0.0, W2[j], W2[i]],
                [0.0, 2 * W2[s], 1.0, 1.0],
            ])
            sol = np.linalg.solve(A, [0.0, 0.0, 2.0 * gT[i, j, s], 0.0])
            a[i, j, s], b[i, j, s], gamma[i, j, s] = sol[:3]
    else:
        raise ValidationError(f"unknown form {form!r}")
    return {"a": a, "b": b, "gamma": gamma}


def mass_inverse_second_order(M, K, wi, wj, force):
    """``a_ij`` through ``O^2 = M^-1 K`` (product of three dense solves).

    ``a = (d I - O^2)^-1 (s I - O^2)^-1 ((wi^2 + wj^2) I - O^2) M^-1 G``
    with ``d = (wj - wi)^2`` and ``s = (wi + wj)^2``.
    """
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    O2 = linalg.solve(M, K)
    I = np.eye(M.shape[0])
    v = linalg.solve(M, force)
    v = ((wi**2 + wj**2) * I - O2) @ v
    v = linalg.solve((wi + wj) ** 2 * I - O2, v)
    return linalg.solve((wj - wi) ** 2 * I - O2, v)


def modal_AB(system, a, b):
    """Fourth-order tensors ``A^r_ijk = sum_s 2 g^r_is a^s_jk`` (and ``B`` with ``b``).

    Returns
    -------
    A, B : ndarray, shape (N, N, N, N), indexed ``[i, j, k, r]``
    """
    A = 2.0 * np.einsum("ris,jks->ijkr", system.g, a)
    B = 2.0 * np.einsum("ris,jks->ijkr", system.g, b)
    return A, B


def _resonant_rows(w, i, j, k):
    """Components ``s`` resonant with any sign pattern of ``(i, j, k)``."""
    sig = np.array([w[i] + w[j] + w[k], -w[i] + w[j] + w[k], w[i] - w[j] + w[k], w[i] + w[j] - w[k]])
    d = sig[:, None] ** 2 - w[None, :] ** 2
    return np.any(np.abs(d) < _SING * w.max() ** 2, axis=0)


def modal_third_order(system, A, B, form="split", triples=None):
    """Cubic normal-form tensors in modal coordinates.

    Parameters
    ----------
    system : DenseModalSystem
    A, B : ndarray, shape (N, N, N, N)
        From :func:`modal_AB`.
    form : {"split", "system"}
    triples : iterable of (i, j, k), optional
        Defaults to all ordered triples.

    Returns
    -------
    dict
        ``r``, ``u``, ``mu``, ``nu`` of shape ``(N, N, N, N)`` indexed
        ``[i, j, k, s]``, plus boolean ``resonant`` marking rows left as NaN
        (resonant components are not covered by the oracle).
    """
    w = system.omegas
    N = w.size
    W2 = w**2
    h = system.h.transpose(1, 2, 3, 0)
    out = {k: np.full((N, N, N, N), np.nan) for k in ("r", "u", "mu", "nu")}
    resonant = np.zeros((N, N, N, N), dtype=bool)
    if triples is None:
        triples = itertools.product(range(N), repeat=3)
    for i, j, k in triples:
        wi, wj, wk = w[i], w[j], w[k]
        S = A[i, j, k] + A[j, k, i] + A[k, i, j] + 3 * h[i, j, k]
        b1, b2, b3 = wj * wk * B[i, j, k], wk * wi * B[j, k, i], wi * wj * B[k, i, j]
        res = _resonant_rows(w, i, j, k)
        resonant[i, j, k] = res
        ok = ~res
        if form == "split":
            sig = np.array([wi + wj + wk, -wi + wj + wk, wi - wj + wk, wi + wj - wk])
            P = np.array([S - b1 - b2 - b3, S - b1 + b2 + b3, S + b1 - b2 + b3, S + b1 + b2 - b3])
            Z = np.zeros((4, N))
            Z[:, ok] = P[:, ok] / (sig[:, None] ** 2 - W2[None, ok])
            s0, s1, s2, s3 = sig
            vals = {
                "r": Z.sum(axis=0) / 12,
                "u": (-Z[0] - Z[1] + Z[2] + Z[3]) / (4 * wj * wk),
                "mu": (-s0 * Z[0] + s1 * Z[1] + s2 * Z[2] + s3 * Z[3]) / (12 * wi * wj * wk),
                "nu": (s0 * Z[0] - s1 * Z[1] + s2 * Z[2] + s3 * Z[3]) / (4 * wi),
            }
            for key, v in vals.items():
                out[key][i, j, k, ok] = v[ok]
        elif form == "system":
            if len({i, j, k}) < 3:
                raise ValidationError("the balance system is stated for distinct indices only")
            for s in np.nonzero(ok)[0]:
                # unknowns: r, u_ijk, u_jki, u_kij, mu, nu_ijk, nu_jki, nu_kij
                O = W2[s]
                Mx = np.array([
                    [0, -1, -1, -1, 3, 0, 0, 0],
                    [3, -W2[j], -W2[i], 0, 0, 0, 0, -1],
                    [3, -W2[k], 0, -W2[i], 0, 0, -1, 0],
                    [3, 0, -W2[k], -W2[j], 0, -1, 0, 0],
                    [-3 * O, 0, 0, 0, 0, W2[i], W2[j], W2[k]],
                    [0, -O, 0, 0, 3 * W2[i], 0, -1, -1],
                    [0, 0, -O, 0, 3 * W2[j], -1, 0, -1],
                    [0, 0, 0, -O, 3 * W2[k], -1, -1, 0],
                ], dtype=float)
                rhs = np.array([0, 0, 0, 0, S[s], B[i, j, k, s], B[j, k, i, s], B[k, i, j, s]])
                sol = np.linalg.solve(Mx, rhs)
                out["r"][i, j, k, s] = sol[0]
                out["u"][i, j, k, s] = sol[1]
                out["mu"][i, j, k, s] = sol[4]
                out["nu"][i, j, k, s] = sol[5]
        else:
            raise ValidationError(f"unknown form {form!r}")
    out["resonant"] = resonant
    return out


def modal_damping_c(system, a, b, zeta_m, zeta_k):
    """Light-damping tensor ``c[i, j, s]`` evaluated component by component."""
    w = system.omegas
    W2 = w**2
    gT = system.g.transpose(1, 2, 0)
    wi = w[:, None, None]
    wj = w[None, :, None]
    ws2 = W2[None, None, :]
    dsum = (wi + wj) ** 2 - ws2
    ddif = (wj - wi) ** 2 - ws2
    zss = gT / dsum**2
    zdd = gT / ddif**2
    return ((zeta_m + 3 * wi**2 * zeta_k) * b - 2 * zeta_k * a
            + (2 * wi**2 * zeta_k - zeta_m) * (zss + zdd)
            + (2 * wj**2 * zeta_k - zeta_m) * (wi / wj) * (zss - zdd))


# ---------------------------------------------------------------------------
# random test systems

def random_symmetric_tensors(rng, n, scale_g=1.0, scale_h=1.0):
    """Tensors derived from a random cubic + quartic potential.

    ``G[p, r, s]`` and ``H[p, r, s, t]`` are fully symmetric, so the force
    ``G(X, X) + H(X, X, X)`` is the gradient of
    ``V = sum G X X X / 3 + sum H X X X X / 4``.
    """
    c = rng.standard_normal((n, n, n))
    G = sum(c.transpose(p) for p in itertools.permutations(range(3))) / 6.0
    d = rng.standard_normal((n, n, n, n))
    H = sum(d.transpose(p) for p in itertools.permutations(range(4))) / 24.0
    return scale_g * G, scale_h * H


def _min_gap(w, subset=None):
    """Smallest relative mismatch over non-trivial 2nd/3rd-order combinations of ``subset``."""
    N = w.size
    W2 = w**2
    subset = range(N) if subset is None else subset
    gap = np.inf
    for i, j in itertools.combinations_with_replacement(subset, 2):
        for sig in (w[i] + w[j], w[j] - w[i]):
            gap = min(gap, np.min(np.abs(sig**2 - W2) / W2))
    for i, j, k in itertools.combinations_with_replacement(subset, 3):
        idx = (i, j, k)
        for signs in ((1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)):
            sig = sum(e * w[m] for e, m in zip(signs, idx))
            for s in range(N):
                vec = {}
                for e, m in zip(signs, idx):
                    vec[m] = vec.get(m, 0) + e
                trivial = any({m: c for m, c in {**vec, s: vec.get(s, 0) - t}.items() if c} == {}
                              for t in (1, -1))
                if trivial:
                    continue
                gap = min(gap, abs(sig**2 - W2[s]) / W2[s])
    return gap


def random_nonresonant_model(rng, n, masters=None, min_gap=1e-2, max_tries=500,
                             mass_spread=0.5):
    """Random dense SPD pencil with potential-derived tensors, away from resonance.

    Combinations of the modes in ``masters`` (all modes by default) stay at
    least ``min_gap`` (relative, on ``sigma^2``) away from every frequency.

    Returns
    -------
    StructuralModel
    """
    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        M = np.eye(n) + mass_spread * (A @ A.T) / n
        B = rng.standard_normal((n, n))
        lam = np.sort(rng.uniform(1.0, 30.0, n)) ** 2
        Q, _ = np.linalg.qr(B)
        Lm = np.linalg.cholesky(M)
        K = Lm @ Q @ np.diag(lam) @ Q.T @ Lm.T
        K = 0.5 * (K + K.T)
        w = np.sqrt(linalg.eigh(K, M, eigvals_only=True))
        if _min_gap(w, masters) < min_gap:
            continue
        G, H = random_symmetric_tensors(rng, n)
        return polynomial_model(M, K, G, H, name=f"random-{n}")
    raise NumericalError("could not draw a non-resonant random system")


def _rel(a, b):
    den = max(np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / den)


def equivalence_suite(n_systems=10, seed=0, sizes=(4, 12), n_masters=3):
    """Compare physical-basis DNF tensors with the modal oracle.

    Returns
    -------
    dict
        Maximum relative errors: ``order2`` (a, b, gamma vs ``V @ modal``),
        ``order3`` (r, u, mu, nu on non-resonant rows, zero rows elsewhere),
        ``split_vs_closed``, ``split_vs_system``, ``split_vs_mass_inverse``
        (second order) and ``split_vs_system_3`` (third order, distinct indices).
    """
    from .dnf import compute_dnf

    rng = np.random.default_rng(seed)
    err = dict.fromkeys(("order2", "order3", "split_vs_closed", "split_vs_system",
                         "split_vs_mass_inverse", "split_vs_system_3"), 0.0)
    for _ in range(n_systems):
        N = int(rng.integers(sizes[0], sizes[1] + 1))
        nm = min(n_masters, N)
        masters = tuple(sorted(rng.choice(N, nm, replace=False).tolist()))
        model = random_nonresonant_model(rng, N, masters)
        sysm, spec = modal_system_from_model(model)
        spec = spec.with_masters(masters)
        t = compute_dnf(model, spec, masters, order=3)
        V = spec.phis
        o2 = modal_second_order(sysm, "split")
        o2c = modal_second_order(sysm, "closed")
        o2s = modal_second_order(sysm, "system")
        for key in ("a", "b", "gamma"):
            err["split_vs_closed"] = max(err["split_vs_closed"], _rel(o2c[key], o2[key]))
            err["split_vs_system"] = max(err["split_vs_system"], _rel(o2s[key], o2[key]))
        ml = list(masters)
        for key in ("a", "b", "gamma"):
            ref = np.einsum("ps,ijs->ijp", V, o2[key][np.ix_(ml, ml)])
            err["order2"] = max(err["order2"], _rel(getattr(t, key), ref))
        G = model.force_evaluator.quadratic
        for p, q in itertools.product(range(nm), repeat=2):
            i, j = masters[p], masters[q]
            force = np.einsum("prs,r,s->p", G, V[:, i], V[:, j])
            am = mass_inverse_second_order(model.mass, model.stiffness, spec.omegas[i],
                                           spec.omegas[j], force)
            err["split_vs_mass_inverse"] = max(err["split_vs_mass_inverse"],
                                               _rel(am, V @ o2["a"][i, j]))
        A, B = modal_AB(sysm, o2["a"], o2["b"])
        trip = list(itertools.product(ml, repeat=3))
        o3 = modal_third_order(sysm, A, B, "split", trip)
        distinct = [tr for tr in trip if len(set(tr)) == 3]
        if distinct:
            o3s = modal_third_order(sysm, A, B, "system", distinct)
            for key in ("r", "u", "mu", "nu"):
                sel = o3s[key][tuple(np.array(distinct).T)]
                ref = o3[key][tuple(np.array(distinct).T)]
                m = ~np.isnan(ref)
                err["split_vs_system_3"] = max(err["split_vs_system_3"], _rel(sel[m], ref[m]))
        for key in ("r", "u", "mu", "nu"):
            mod = o3[key][np.ix_(ml, ml, ml)]
            mod = np.where(np.isnan(mod), 0.0, mod)
            ref = np.einsum("ps,ijks->ijkp", V, mod)
            err["order3"] = max(err["order3"], _rel(getattr(t, key), ref))
    return err
