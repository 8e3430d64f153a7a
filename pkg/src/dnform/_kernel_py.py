"""Pure-numpy von Kármán beam kernels (reference implementation).

These are the hot loops of the beam model: the nonlinear part of the
internal force and of the tangent stiffness, evaluated for a whole batch of
displacement states at once (one state per harmonic-balance time sample).
The compiled module ``_vkcore`` provides the same two functions; this file
is the fallback and the reference the compiled version is tested against.

Element dof order is ``[w1, u1, th1, w2, u2, th2]`` (transverse, axial,
rotation per node).  All arrays are float64 and C-contiguous.
"""

import numpy as np

# positions of the Hermite (transverse) and linear (axial) dofs inside an element
_W = np.array([0, 2, 3, 5])
_U = np.array([1, 4])


def hermite_slopes(length, xi):
    """First derivative of the cubic Hermite shape functions.

    Parameters
    ----------
    length : float
        Element length.
    xi : ndarray
        Reference coordinates in [0, 1].

    Returns
    -------
    ndarray, shape (len(xi), 4)
        dN/dx for the dofs ``(w1, th1, w2, th2)``.
    """
    xi = np.asarray(xi, dtype=float)
    return np.column_stack([
        (-6.0 * xi + 6.0 * xi**2) / length,
        1.0 - 4.0 * xi + 3.0 * xi**2,
        (6.0 * xi - 6.0 * xi**2) / length,
        -2.0 * xi + 3.0 * xi**2,
    ])


def _element_fields(q, edofs, slopes, lengths):
    qe = q[:, edofs]                                   # (ns, ne, 6)
    wp = np.einsum("sea,ega->seg", qe[:, :, _W], slopes)
    up = (qe[:, :, 4] - qe[:, :, 1]) / lengths         # (ns, ne)
    return wp, up


def vk_force_nl(q, edofs, slopes, weights, lengths, ea):
    """Nonlinear internal force for a batch of full-dof states.

    Parameters
    ----------
    q : ndarray, shape (ns, n_full)
        Displacement states.
    edofs : ndarray of int, shape (ne, 6)
        Global dof indices of each element.
    slopes : ndarray, shape (ne, ng, 4)
        Hermite slopes at the Gauss points of each element.
    weights : ndarray, shape (ne, ng)
        Gauss weights already multiplied by the element length.
    lengths : ndarray, shape (ne,)
    ea : float
        Axial rigidity.

    Returns
    -------
    ndarray, shape (ns, n_full)
    """
    ns, nfull = q.shape
    wp, up = _element_fields(q, edofs, slopes, lengths)
    wq = weights[None] * ea
    # axial: EA/2 int w'^2 du' ; transverse: EA int (u' w' + w'^3/2) dw'
    nu = 0.5 * np.sum(wq * wp**2, axis=2) / lengths    # (ns, ne)
    tw = wq * (up[:, :, None] * wp + 0.5 * wp**3)
    fw = np.einsum("seg,ega->sea", tw, slopes)
    f = np.zeros((ns, nfull))
    for parity in (0, 1):
        sel = slice(parity, None, 2)
        d = edofs[sel]
        f[:, d[:, 1]] -= nu[:, sel]
        f[:, d[:, 4]] += nu[:, sel]
        f[:, d[:, _W]] += fw[:, sel]
    return f


def vk_tangent_nl(q, edofs, slopes, weights, lengths, ea):
    """Jacobian of :func:`vk_force_nl` for a batch of states.

    Returns
    -------
    ndarray, shape (ns, n_full, n_full)
        Symmetric nonlinear tangent stiffness per state.
    """
    ns, nfull = q.shape
    ne = edofs.shape[0]
    wp, up = _element_fields(q, edofs, slopes, lengths)
    wq = weights[None] * ea
    bu = np.array([-1.0, 1.0])[None, :] / lengths[:, None]          # (ne, 2)
    kuw = np.einsum("seg,ega,eb->seba", wq * wp, slopes, bu)         # (ns, ne, 2, 4)
    kww = np.einsum("seg,ega,egb->seab",
                    wq * (up[:, :, None] + 1.5 * wp**2), slopes, slopes)
    ke = np.zeros((ns, ne, 6, 6))
    ke[:, :, _U[:, None], _W[None, :]] = kuw
    ke[:, :, _W[:, None], _U[None, :]] = np.swapaxes(kuw, 2, 3)
    ke[:, :, _W[:, None], _W[None, :]] = kww
    kt = np.zeros((ns, nfull, nfull))
    for parity in (0, 1):
        d = edofs[parity::2]
        kt[:, d[:, :, None], d[:, None, :]] += ke[:, parity::2]
    return kt
