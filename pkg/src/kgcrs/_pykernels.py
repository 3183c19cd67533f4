"""Pure numpy fallback for the compiled aggregation kernels.

Same signatures and summation order as ``_ckernels``; used when the
extension is not built or ``KGCRS_PURE_PYTHON`` is set.
"""
import numpy as np


def _live(indptr, nbr, alive):
    rows = np.repeat(np.arange(indptr.shape[0] - 1), np.diff(indptr))
    keep = (alive[rows] != 0) & (alive[nbr] != 0)
    return rows[keep], nbr[keep], keep


def spmm(indptr, nbr, w, alive, x, out):
    rows, cols, keep = _live(indptr, nbr, alive)
    out[...] = 0.0
    np.add.at(out, rows, w[keep][:, None] * x[cols])


def spmm_t(indptr, nbr, w, alive, g, out):
    rows, cols, keep = _live(indptr, nbr, alive)
    out[...] = 0.0
    np.add.at(out, cols, w[keep][:, None] * g[rows])


def row_softmax(indptr, nbr, alpha, alive, out):
    rows, cols, keep = _live(indptr, nbr, alive)
    out[...] = 0.0
    if not rows.size:
        return
    a = alpha[keep]
    mx = np.full(indptr.shape[0] - 1, -np.inf)
    np.maximum.at(mx, rows, a)
    e = np.exp(a - mx[rows])
    tot = np.zeros(indptr.shape[0] - 1)
    np.add.at(tot, rows, e)
    out[keep] = e / tot[rows]
