"""Hot loop behind one column of the upper-bounding matrix game.

``column_payoffs`` evaluates, for every row history ``g`` and own action
``a``, the conditional payoff of a stored tuple: expected reward under the
tuple's opponent rule plus the discounted successor bound and its Lipschitz
penalty.  The numba version is used unless ``ZSPOSG_NO_NUMBA`` is set.
"""
import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

USE_NUMBA = njit is not None and os.environ.get("ZSPOSG_NO_NUMBA", "") in ("", "0")


def column_payoffs_numpy(seg, n_rows, cval, ctval, b2, q, r, nu, gamma, pen, terminal):
    rew = np.einsum("u,uo,umo->um", cval, b2, r)
    out = np.zeros((n_rows, r.shape[1]))
    np.add.at(out, seg, rew)
    if terminal:
        return out
    w = b2[:, None, :, None, None] * q
    x = cval[:, None, None, None, None] * w
    y = ctval[:, None, None, None, None] * w
    xs = np.zeros((n_rows, q.shape[1], q.shape[3]))
    ys = np.zeros_like(xs)
    np.add.at(xs, seg, x.sum(axis=(2, 4)))
    np.add.at(ys, seg, y.sum(axis=(2, 4)))
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = np.where(xs > 0, 1.0 / xs, 0.0)[seg][:, :, None, :, None] * x
        yn = np.where(ys > 0, 1.0 / ys, 0.0)[seg][:, :, None, :, None] * y
    dist = np.zeros_like(xs)
    np.add.at(dist, seg, np.abs(xn - yn).sum(axis=(2, 4)))
    dist = np.where(ys > 0, dist, 2.0)
    out += (xs * (gamma * nu + pen * dist)).sum(axis=2)
    return out


def _column_payoffs_loop(seg, n_rows, cval, ctval, b2, q, r, nu, gamma, pen, terminal):
    U, Am, Ao, Zm, Zo = q.shape
    out = np.zeros((n_rows, Am))
    for u in range(U):
        c = cval[u]
        if c == 0.0:
            continue
        g = seg[u]
        for am in range(Am):
            acc = 0.0
            for ao in range(Ao):
                acc += b2[u, ao] * r[u, am, ao]
            out[g, am] += c * acc
    if terminal:
        return out
    xs = np.zeros((n_rows, Am, Zm))
    ys = np.zeros((n_rows, Am, Zm))
    for u in range(U):
        g = seg[u]
        for am in range(Am):
            for ao in range(Ao):
                bo = b2[u, ao]
                if bo == 0.0:
                    continue
                for zm in range(Zm):
                    acc = 0.0
                    for zo in range(Zo):
                        acc += q[u, am, ao, zm, zo]
                    xs[g, am, zm] += cval[u] * bo * acc
                    ys[g, am, zm] += ctval[u] * bo * acc
    dist = np.zeros((n_rows, Am, Zm))
    for u in range(U):
        g = seg[u]
        for am in range(Am):
            for zm in range(Zm):
                sx = xs[g, am, zm]
                sy = ys[g, am, zm]
                ix = 1.0 / sx if sx > 0.0 else 0.0
                iy = 1.0 / sy if sy > 0.0 else 0.0
                acc = 0.0
                for ao in range(Ao):
                    bo = b2[u, ao]
                    if bo == 0.0:
                        continue
                    for zo in range(Zo):
                        w = bo * q[u, am, ao, zm, zo]
                        acc += abs(cval[u] * w * ix - ctval[u] * w * iy)
                dist[g, am, zm] += acc
    for g in range(n_rows):
        for am in range(Am):
            for zm in range(Zm):
                d = dist[g, am, zm] if ys[g, am, zm] > 0.0 else 2.0
                out[g, am] += xs[g, am, zm] * (gamma * nu[g, am, zm] + pen * d)
    return out


column_payoffs_numba = njit(cache=True)(_column_payoffs_loop) if njit is not None else None


def column_payoffs(seg, n_rows, cval, ctval, b2, q, r, nu, gamma, pen, terminal):
    if USE_NUMBA:
        return column_payoffs_numba(seg, n_rows, cval, ctval, np.ascontiguousarray(b2),
                                    np.ascontiguousarray(q), np.ascontiguousarray(r),
                                    np.ascontiguousarray(nu), float(gamma), float(pen),
                                    bool(terminal))
    return column_payoffs_numpy(seg, n_rows, cval, ctval, b2, q, r, nu, gamma, pen, terminal)
