"""Small dense linear-algebra helpers shared by the denoisers and SE."""

import numpy as np

EIG_FLOOR = 1e-12


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _floor(w):
    # eigenvalue floor relative to the trace, per matrix in a batch
    L = w.shape[-1]
    scale = np.maximum(np.abs(w).sum(axis=-1, keepdims=True) / L, 1e-300)
    return scale * EIG_FLOOR


def pinv_psd(a):
    """Symmetric pseudo-inverse, dropping eigenvalues below 1e-12 * trace/L."""
    w, v = np.linalg.eigh(sym(a))
    keep = w > _floor(w)
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv_w[..., None, :]) @ np.swapaxes(v, -1, -2)


def inv_psd(a):
    """Inverse of a PSD matrix with eigenvalues floored at 1e-12 * trace/L."""
    w, v = np.linalg.eigh(sym(a))
    w = np.maximum(w, _floor(w))
    return (v / w[..., None, :]) @ np.swapaxes(v, -1, -2), np.log(w).sum(axis=-1)


def sqrt_psd(a):
    """Symmetric square root with negative eigenvalues clipped to zero."""
    w, v = np.linalg.eigh(sym(a))
    return (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def mvn_logpdf(x, cov):
    """Row-wise log N(x; 0, cov) with the floored inverse.

    x has shape (..., d); cov is (d, d) or broadcasts against x's batch shape.
    """
    prec, logdet = inv_psd(cov)
    d = x.shape[-1]
    quad = np.einsum("...i,...ij,...j->...", x, prec, x)
    return -0.5 * (quad + logdet + d * np.log(2 * np.pi))


def min_eig(a):
    return np.linalg.eigvalsh(sym(a)).min()
