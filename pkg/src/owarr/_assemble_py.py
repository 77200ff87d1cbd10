"""Pure numpy implementation of the normal-equation assembly kernel.

This is the reference path; ``_assemble_ext.pyx`` computes the same
quantities in two fused passes over the rows.
"""
import numpy as np


def assemble(Xs, ys, Xt, yt, mus, mut, wt, lam, gam):
    """Assemble the regularized normal equations for one source domain.

    Parameters
    ----------
    Xs, ys : (n, d), (n,)
        Source features and labels.
    Xt, yt : (m, d), (m,)
        Target calibration features and labels; ``m`` may be zero.
    mus, mut : (n, C), (m, C)
        Normalized fuzzy memberships. Columns of classes that must not
        contribute are all zero. ``C`` may be zero.
    wt : float
        Weight of every target row.
    lam, gam : float
        Distribution and correlation regularization weights.

    Returns
    -------
    A : (d, d) system matrix
    b : (d,) right-hand side
    x_mean : (d,) column means over all n + m rows
    y_mean : float
    yty : float
        Squared norm of the centered labels.
    """
    n, d = Xs.shape
    m = Xt.shape[0]
    X = np.vstack([Xs, Xt]) if m else Xs
    y = np.concatenate([ys, yt]) if m else ys
    e = np.ones(n + m)
    if m:
        e[n:] = wt
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = (Xc * e[:, None]).T @ Xc
    b = Xc.T @ (e * yc)
    yty = float(yc @ yc)
    if m and lam > 0:
        qv = Xc[:n].mean(axis=0) - Xc[n:].mean(axis=0)
        A += lam * np.outer(qv, qv)
        if mus.shape[1]:
            Q = Xc[:n].T @ mus - Xc[n:].T @ mut
            A += lam * (Q @ Q.T)
    if gam > 0 and yty > 0:
        qy = Xc.T @ yc
        A += (gam / yty) * (Xc.T @ Xc - np.outer(qy, qy))
    return A, b, x_mean, float(y_mean), yty
