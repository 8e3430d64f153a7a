"""Non-intrusive extraction of quadratic and cubic force tensors.

Because the internal force is an exact polynomial, the bilinear and
trilinear forms are recovered by polarization of force evaluations:

* even part ``Q(x) = [f(x) + f(-x)] / 2 = G(x, x)``,
  ``G(v, w) = [Q(v + w) - Q(v) - Q(w)] / 2``;
* odd part ``T(x) = [f(x) - f(-x)] / 2 = H(x, x, x)``,
  ``H(u, v, w) = [T(u+v+w) - T(u+v) - T(v+w) - T(u+w) + T(u) + T(v) + T(w)] / 6``.

The ``amplitude`` argument evaluates the force at ``amplitude * x`` and
rescales (the classical prescribed-displacement scheme); for polynomial
forces any amplitude gives the same result up to round-off.
"""

from dataclasses import dataclass
import itertools

import numpy as np

from .errors import ValidationError

__all__ = [
    "quadratic_force",
    "cubic_force",
    "StepTensors",
    "step_tensors",
    "step_evaluation_count",
    "CountingModel",
]


class CountingModel:
    """Proxy counting nonlinear force evaluations (one per state)."""

    def __init__(self, model):
        self._model = model
        self.count = 0

    def __getattr__(self, name):
        return getattr(self._model, name)

    def nonlinear_force(self, X):
        X = np.asarray(X)
        self.count += 1 if X.ndim == 1 else X.shape[0]
        return self._model.nonlinear_force(X)


def _check(model, *vecs):
    out = []
    for v in vecs:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != model.n_dof or v.ndim > 2:
            raise ValidationError(f"vector of shape {v.shape} does not match n_dof={model.n_dof}")
        out.append(v)
    shapes = {v.shape for v in out}
    if len(shapes) > 1:
        raise ValidationError(f"vector shapes differ: {sorted(shapes)}")
    return out


def _even_odd(model, X, amplitude):
    """Q and T of every row of ``X`` (one batched force call of 2*len(X) states)."""
    X = amplitude * np.atleast_2d(X)
    f = model.nonlinear_force(np.concatenate([X, -X]))
    fp, fm = f[: len(X)], f[len(X):]
    return 0.5 * (fp + fm) / amplitude**2, 0.5 * (fp - fm) / amplitude**3


def quadratic_force(model, v, w, amplitude=1.0):
    """Symmetric bilinear force ``G(v, w)``.

    Parameters
    ----------
    model : StructuralModel
    v, w : array_like, shape (n,) or (k, n)
        Displacement vectors (rows are independent pairs).
    amplitude : float
        Evaluation scale of the polarization.

    Returns
    -------
    ndarray
        Same shape as ``v``.
    """
    v, w = _check(model, v, w)
    single = v.ndim == 1
    v2, w2 = np.atleast_2d(v), np.atleast_2d(w)
    k = len(v2)
    q, _ = _even_odd(model, np.concatenate([v2 + w2, v2, w2]), amplitude)
    g = 0.5 * (q[:k] - q[k:2 * k] - q[2 * k:])
    return g[0] if single else g


def cubic_force(model, u, v, w, amplitude=1.0):
    """Symmetric trilinear force ``H(u, v, w)``.

    Parameters
    ----------
    model : StructuralModel
    u, v, w : array_like, shape (n,) or (k, n)
    amplitude : float

    Returns
    -------
    ndarray
        Same shape as ``u``.
    """
    u, v, w = _check(model, u, v, w)
    single = u.ndim == 1
    u2, v2, w2 = (np.atleast_2d(a) for a in (u, v, w))
    k = len(u2)
    combos = [u2 + v2 + w2, u2 + v2, v2 + w2, u2 + w2, u2, v2, w2]
    _, t = _even_odd(model, np.concatenate(combos), amplitude)
    t = t.reshape(7, k, -1)
    h = (t[0] - t[1] - t[2] - t[3] + t[4] + t[5] + t[6]) / 6.0
    return h[0] if single else h


@dataclass(frozen=True, eq=False)
class StepTensors:
    """Quadratic and cubic forces on master modes.

    ``quadratic[(i, j)]`` holds ``G(phi_i, phi_j)`` for ``i <= j`` and
    ``cubic[(i, j, k)]`` holds ``H(phi_i, phi_j, phi_k)`` for ``i <= j <= k``
    (physical force vectors; indices are mode numbers).  ``g`` and ``h``
    return modal projections on any computed mode.
    """

    masters: tuple
    quadratic: dict
    cubic: dict
    phis: np.ndarray
    n_evaluations: int = 0

    def G(self, i, j):
        return self.quadratic[tuple(sorted((i, j)))]

    def H(self, i, j, k):
        return self.cubic[tuple(sorted((i, j, k)))]

    def g(self, r, i, j):
        """Modal coefficient ``phi_r^T G(phi_i, phi_j)``."""
        return float(self.phis[:, r] @ self.G(i, j))

    def h(self, r, i, j, k):
        """Modal coefficient ``phi_r^T H(phi_i, phi_j, phi_k)``."""
        return float(self.phis[:, r] @ self.H(i, j, k))


def step_evaluation_count(n):
    """Number of force evaluations performed by :func:`step_tensors`.

    Each distinct combination vector is evaluated at ``+x`` and ``-x``.  The
    distinct vectors are the ``n`` single modes, the ``n(n-1)/2`` sums of two
    different modes, the ``n`` doubled modes (needed by ``H(phi_i, phi_i,
    phi_j)`` when ``n >= 2``) and every three-mode sum except the ``n``
    tripled ones (``H(phi_i, phi_i, phi_i) = T(phi_i)`` directly).
    """
    doubled = n if n >= 2 else 0
    return 2 * (n + n * (n - 1) // 2 + doubled + n * (n + 1) * (n + 2) // 6 - n)


def step_tensors(model, spectrum, masters=None, amplitude=1.0):
    """Extract ``G(phi_i, phi_j)`` and ``H(phi_i, phi_j, phi_k)`` on masters.

    Exactly ``n(n+1)/2`` quadratic and ``n(n+1)(n+2)/6`` cubic entries are
    produced, from :func:`step_evaluation_count` force evaluations in a
    single batched call.

    Parameters
    ----------
    model : StructuralModel
    spectrum : Spectrum
    masters : sequence of int, optional
        Mode indices; defaults to ``spectrum.master_indices``.
    amplitude : float
        Polarization scale.

    Returns
    -------
    StepTensors
    """
    masters = tuple(spectrum.master_indices if masters is None else masters)
    if not masters:
        raise ValidationError("at least one master mode is required")
    for m in masters:
        if not 0 <= m < spectrum.n_computed:
            raise ValidationError(f"master {m} not among the {spectrum.n_computed} computed modes")
    phi = {m: spectrum.phis[:, m] for m in masters}

    keys = set((i,) for i in masters)
    for i, j in itertools.combinations_with_replacement(masters, 2):
        if i != j:
            keys.add(tuple(sorted((i, j))))
    for tri in itertools.combinations_with_replacement(masters, 3):
        if len(set(tri)) == 1:
            continue
        keys.add(tri)
        for a, b in itertools.combinations(tri, 2):
            keys.add(tuple(sorted((a, b))))
    keys = sorted(keys, key=lambda t: (len(t), t))
    X = np.array([sum(phi[m] for m in key) for key in keys])
    counter = CountingModel(model)
    Q, T = _even_odd(counter, X, amplitude)
    Q = dict(zip(keys, Q))
    T = dict(zip(keys, T))

    quad = {}
    for i, j in itertools.combinations_with_replacement(masters, 2):
        if i == j:
            quad[(i, j)] = Q[(i,)]
        else:
            quad[(i, j)] = 0.5 * (Q[(i, j)] - Q[(i,)] - Q[(j,)])
    cub = {}
    for i, j, k in itertools.combinations_with_replacement(masters, 3):
        if i == j == k:
            cub[(i, j, k)] = T[(i,)]
            continue
        s = lambda *idx: T[tuple(sorted(idx))] if len(idx) > 1 else T[idx]
        cub[(i, j, k)] = (s(i, j, k) - s(i, j) - s(j, k) - s(i, k)
                          + s(i) + s(j) + s(k)) / 6.0
    return StepTensors(masters, quad, cub, spectrum.phis, counter.count)
