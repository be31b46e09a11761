"""Hot loop of the constrained-SOM organization, in numba-compilable form.

The per-presentation update keeps cluster weights shared: instead of
updating every member node and re-averaging, it applies the closed form
of that average directly (member nodes outside the search window keep
the old shared weight, members inside move by eta*h, so the new mean is
W + eta*(sum h)/|cluster| * (x - W), with join/leave corrections for the
presented cell). math.exp/math.sqrt are used so the plain-Python
fallback is bit-identical to the jitted path.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, but keep a fallback
    njit = None


def _organize_impl(lat_q, lon_q, X, nbr_idx, nbr_ptr, orders, etas, product_rule):
    n, dim = X.shape
    t_max = orders.shape[0]

    phi = np.arange(n)
    cw = X.copy()
    gs = np.ones(n, dtype=np.int64)
    qe = np.zeros(t_max)

    max_m = 0
    for i in range(n):
        m = nbr_ptr[i + 1] - nbr_ptr[i]
        if m > max_m:
            max_m = m

    uc = np.empty(max_m, dtype=np.int64)
    usize = np.empty(max_m, dtype=np.int64)
    udist = np.empty(max_m)
    s_h = np.empty(max_m)
    kk = np.empty(max_m, dtype=np.int64)
    w_v_new = np.empty(dim)

    for t in range(t_max):
        eta = etas[t]
        for oi in range(n):
            v = orders[t, oi]
            lo = nbr_ptr[v]
            hi = nbr_ptr[v + 1]
            m = hi - lo

            # unique clusters in the window and their window sizes
            nu = 0
            for a in range(m):
                j = nbr_idx[lo + a]
                cj = phi[j]
                found = -1
                for u in range(nu):
                    if uc[u] == cj:
                        found = u
                        break
                if found < 0:
                    uc[nu] = cj
                    usize[nu] = 1
                    kk[a] = nu
                    nu += 1
                else:
                    usize[found] += 1
                    kk[a] = found

            for u in range(nu):
                s = 0.0
                for q in range(dim):
                    diff = cw[uc[u], q] - X[v, q]
                    s += diff * diff
                udist[u] = math.sqrt(s)

            # winner: smallest (distance[, *window size]) then largest window
            # size, smallest cluster id, nearest cell, smallest cell key
            best = -1
            b_key = 0.0
            b_size = np.int64(-1)
            b_cid = np.int64(0)
            b_cheb = np.int64(0)
            b_lat = np.int64(0)
            b_lon = np.int64(0)
            for a in range(m):
                j = nbr_idx[lo + a]
                u = kk[a]
                if product_rule:
                    key = udist[u] * usize[u]
                else:
                    key = udist[u]
                size = usize[u]
                cid = uc[u]
                dlat = lat_q[j] - lat_q[v]
                if dlat < 0:
                    dlat = -dlat
                dlon = lon_q[j] - lon_q[v]
                if dlon < 0:
                    dlon = -dlon
                cheb = dlat if dlat > dlon else dlon
                better = False
                if best < 0:
                    better = True
                elif key != b_key:
                    better = key < b_key
                elif size != b_size:
                    better = size > b_size
                elif cid != b_cid:
                    better = cid < b_cid
                elif cheb != b_cheb:
                    better = cheb < b_cheb
                elif lat_q[j] != b_lat:
                    better = lat_q[j] < b_lat
                elif lon_q[j] != b_lon:
                    better = lon_q[j] < b_lon
                if better:
                    best = j
                    b_key = key
                    b_size = size
                    b_cid = cid
                    b_cheb = cheb
                    b_lat = lat_q[j]
                    b_lon = lon_q[j]
            winner = best

            # neighborhood factors, summed per window cluster
            h_v = 0.0
            for u in range(nu):
                s_h[u] = 0.0
            for a in range(m):
                j = nbr_idx[lo + a]
                u = kk[a]
                dlat = lat_q[j] - lat_q[winner]
                if dlat < 0:
                    dlat = -dlat
                dlon = lon_q[j] - lon_q[winner]
                if dlon < 0:
                    dlon = -dlon
                dch = dlat if dlat > dlon else dlon
                h = math.exp(-dch / (usize[u] + 1.0))
                s_h[u] += h
                if j == v:
                    h_v = h

            old_c = phi[v]
            win_c = phi[winner]

            # presented cell's own updated weight, before any cluster means move
            f_v = eta * h_v
            for q in range(dim):
                w_v_new[q] = cw[old_c, q] + f_v * (X[v, q] - cw[old_c, q])

            phi[v] = win_c

            for u in range(nu):
                c = uc[u]
                n_c = gs[c]
                if c == old_c and c == win_c:
                    factor = eta * s_h[u] / n_c
                    for q in range(dim):
                        cw[c, q] += factor * (X[v, q] - cw[c, q])
                elif c == old_c:
                    if n_c == 1:
                        gs[c] = 0
                    else:
                        factor = eta * (s_h[u] - h_v) / (n_c - 1)
                        for q in range(dim):
                            cw[c, q] += factor * (X[v, q] - cw[c, q])
                        gs[c] = n_c - 1
                elif c == win_c:
                    f = eta * s_h[u]
                    for q in range(dim):
                        cw[c, q] = (n_c * cw[c, q] + f * (X[v, q] - cw[c, q]) + w_v_new[q]) / (
                            n_c + 1.0
                        )
                    gs[c] = n_c + 1
                else:
                    factor = eta * s_h[u] / n_c
                    for q in range(dim):
                        cw[c, q] += factor * (X[v, q] - cw[c, q])

        # quantization error for this cycle
        acc = 0.0
        for i in range(n):
            s = 0.0
            for q in range(dim):
                diff = cw[phi[i], q] - X[i, q]
                s += diff * diff
            acc += math.sqrt(s)
        qe[t] = acc / n

    return phi, cw, qe


if njit is not None:
    organize = njit(cache=True)(_organize_impl)
else:  # pragma: no cover
    organize = _organize_impl
