"""Numba kernels for the per-pixel hot loops.

All kernels are sequential and deterministic; ties in the z-buffer and
SLIC assignment resolve to the earliest candidate in iteration order.
"""

import numpy as np
from numba import njit

NORMAL_PENALTY = 2.0  # stand-in distance when either normal is invalid


@njit(cache=True)
def slic_assign(lab, normals, normal_valid, depth_valid,
                centers_yx, centers_lab, centers_n, centers_n_valid,
                half_window, alpha, beta, labels, best_d):
    """One SLIC assignment sweep; updates ``labels``/``best_d`` in place."""
    h, w = depth_valid.shape
    K = centers_yx.shape[0]
    for k in range(K):
        cy = centers_yx[k, 0]
        cx = centers_yx[k, 1]
        y0 = int(cy - half_window)
        y1 = int(cy + half_window) + 1
        x0 = int(cx - half_window)
        x1 = int(cx + half_window) + 1
        if y0 < 0:
            y0 = 0
        if x0 < 0:
            x0 = 0
        if y1 > h:
            y1 = h
        if x1 > w:
            x1 = w
        cl0 = centers_lab[k, 0]
        cl1 = centers_lab[k, 1]
        cl2 = centers_lab[k, 2]
        cn0 = centers_n[k, 0]
        cn1 = centers_n[k, 1]
        cn2 = centers_n[k, 2]
        cnv = centers_n_valid[k]
        for y in range(y0, y1):
            for x in range(x0, x1):
                if not depth_valid[y, x]:
                    continue
                d0 = lab[y, x, 0] - cl0
                d1 = lab[y, x, 1] - cl1
                d2 = lab[y, x, 2] - cl2
                d_lab = (d0 * d0 + d1 * d1 + d2 * d2) ** 0.5
                if cnv and normal_valid[y, x]:
                    n0 = normals[y, x, 0] - cn0
                    n1 = normals[y, x, 1] - cn1
                    n2 = normals[y, x, 2] - cn2
                    d_n = (n0 * n0 + n1 * n1 + n2 * n2) ** 0.5
                else:
                    d_n = NORMAL_PENALTY
                dy = y - cy
                dx = x - cx
                d_xy = (dy * dy + dx * dx) ** 0.5
                d = d_lab + alpha * d_n + beta * d_xy
                if d < best_d[y, x]:
                    best_d[y, x] = d
                    labels[y, x] = k


@njit(cache=True)
def splat_zbuffer(u, v, z, half_px, h, w, depth_buf, index_buf):
    """Z-buffered square splatting of projected points.

    Nearer depth wins; exact ties keep the earlier point. Buffers are
    updated in place (depth_buf preset to +inf, index_buf to -1).
    """
    n = u.shape[0]
    for i in range(n):
        zi = z[i]
        if zi <= 0.0:
            continue
        uc = int(np.floor(u[i] + 0.5))
        vc = int(np.floor(v[i] + 0.5))
        hp = half_px[i]
        y0 = vc - hp
        y1 = vc + hp
        x0 = uc - hp
        x1 = uc + hp
        if y1 < 0 or x1 < 0 or y0 >= h or x0 >= w:
            continue
        if y0 < 0:
            y0 = 0
        if x0 < 0:
            x0 = 0
        if y1 >= h:
            y1 = h - 1
        if x1 >= w:
            x1 = w - 1
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                if zi < depth_buf[y, x]:
                    depth_buf[y, x] = zi
                    index_buf[y, x] = i


@njit(cache=True)
def blend_deep_entropy(f, e0, gamma0, feats, ents):
    """Sequential per-pixel incremental average of deep feature + entropy.

    For each pixel p (in the given order), with the shared counter g:
        f <- normalize((g f + feats[p]) / (g + 1))
        e <- (g e + ents[p]) / (g + 1)
        g <- g + 1
    A zero blended feature keeps the previous f. Updates ``f`` in place
    and returns (e, g).
    """
    S = f.shape[0]
    e = e0
    gamma = gamma0
    tmp = np.empty(S, np.float64)
    for p in range(feats.shape[0]):
        g = float(gamma)
        nrm = 0.0
        for s in range(S):
            val = (g * f[s] + feats[p, s]) / (g + 1.0)
            tmp[s] = val
            nrm += val * val
        nrm = nrm ** 0.5
        if nrm > 0.0:
            for s in range(S):
                f[s] = tmp[s] / nrm
        e = (g * e + ents[p]) / (g + 1.0)
        gamma += 1
    return e, gamma


@njit(cache=True)
def label_components(labels, comp, stack):
    """4-connected components of equal-label regions (labels >= 0).

    ``comp`` must be preset to -1 and ``stack`` sized h*w x 2. Components
    are numbered in scan order. Returns the component count.
    """
    h, w = labels.shape
    ncomp = 0
    for sy in range(h):
        for sx in range(w):
            if labels[sy, sx] < 0 or comp[sy, sx] >= 0:
                continue
            target = labels[sy, sx]
            comp[sy, sx] = ncomp
            stack[0, 0] = sy
            stack[0, 1] = sx
            sp = 1
            while sp > 0:
                sp -= 1
                y = stack[sp, 0]
                x = stack[sp, 1]
                if y > 0 and comp[y - 1, x] < 0 and labels[y - 1, x] == target:
                    comp[y - 1, x] = ncomp
                    stack[sp, 0] = y - 1
                    stack[sp, 1] = x
                    sp += 1
                if y + 1 < h and comp[y + 1, x] < 0 and labels[y + 1, x] == target:
                    comp[y + 1, x] = ncomp
                    stack[sp, 0] = y + 1
                    stack[sp, 1] = x
                    sp += 1
                if x > 0 and comp[y, x - 1] < 0 and labels[y, x - 1] == target:
                    comp[y, x - 1] = ncomp
                    stack[sp, 0] = y
                    stack[sp, 1] = x - 1
                    sp += 1
                if x + 1 < w and comp[y, x + 1] < 0 and labels[y, x + 1] == target:
                    comp[y, x + 1] = ncomp
                    stack[sp, 0] = y
                    stack[sp, 1] = x + 1
                    sp += 1
            ncomp += 1
    return ncomp
