"""numba-compiled kernels mirroring ``_numpy`` loop for loop."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, k):
    n, ci, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    out = np.empty((ci, k, k, n, ho, wo))
    for c in range(ci):
        for i in range(k):
            for j in range(k):
                for b in range(n):
                    for y in range(ho):
                        for x in range(wo):
                            out[c, i, j, b, y, x] = xp[b, c, y + i, x + j]
    return out.reshape(ci * k * k, n * ho * wo)


@njit(cache=True)
def col2im(dcols, n, ci, hp, wp, k):
    ho, wo = hp - k + 1, wp - k + 1
    d = dcols.reshape(ci, k, k, n, ho, wo)
    out = np.zeros((n, ci, hp, wp))
    for i in range(k):
        for j in range(k):
            for b in range(n):
                for c in range(ci):
                    for y in range(ho):
                        for x in range(wo):
                            out[b, c, y + i, x + j] += d[c, i, j, b, y, x]
    return out


@njit(cache=True)
def maxpool2_forward(x):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2))
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    for b in range(n):
        for ch in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    best = x[b, ch, 2 * y, 2 * xx]
                    arg = 0
                    for t in range(1, 4):
                        v = x[b, ch, 2 * y + t // 2, 2 * xx + t % 2]
                        if v > best:
                            best = v
                            arg = t
                    out[b, ch, y, xx] = best
                    idx[b, ch, y, xx] = arg
    return out, idx


@njit(cache=True)
def maxpool2_backward(g, idx):
    n, c, h2, w2 = g.shape
    out = np.zeros((n, c, 2 * h2, 2 * w2))
    for b in range(n):
        for ch in range(c):
            for y in range(h2):
                for x in range(w2):
                    t = idx[b, ch, y, x]
                    out[b, ch, 2 * y + t // 2, 2 * x + t % 2] = g[b, ch, y, x]
    return out


@njit(cache=True)
def _at(img, r, c):
    if r < 0 or c < 0 or r >= img.shape[0] or c >= img.shape[1]:
        return 0.0
    return img[r, c]


@njit(cache=True)
def bilinear_sample(img, rows, cols):
    out = np.empty(rows.shape)
    fr = rows.ravel()
    fc = cols.ravel()
    fo = out.ravel()
    for p in range(fr.size):
        y0f = math.floor(fr[p])
        x0f = math.floor(fc[p])
        fy = fr[p] - y0f
        fx = fc[p] - x0f
        y0 = int(y0f)
        x0 = int(x0f)
        top = (1.0 - fx) * _at(img, y0, x0) + fx * _at(img, y0, x0 + 1)
        bot = (1.0 - fx) * _at(img, y0 + 1, x0) + fx * _at(img, y0 + 1, x0 + 1)
        fo[p] = (1.0 - fy) * top + fy * bot
    return out


@njit(cache=True)
def nearest_sample(img, rows, cols):
    out = np.zeros(rows.shape, dtype=img.dtype)
    fr = rows.ravel()
    fc = cols.ravel()
    fo = out.ravel()
    h, w = img.shape
    for p in range(fr.size):
        r = int(math.floor(fr[p] + 0.5))
        c = int(math.floor(fc[p] + 0.5))
        if r >= 0 and c >= 0 and r < h and c < w:
            fo[p] = img[r, c]
    return out


@njit(cache=True)
def _reflect(i, n):
    m = i % (2 * n)
    if m >= n:
        m = 2 * n - 1 - m
    return m


@njit(cache=True)
def smooth_reflect(field, kernel):
    h, w = field.shape
    r = kernel.size // 2
    tmp = np.zeros((h, w))
    for t in range(kernel.size):
        for y in range(h):
            src = _reflect(y + t - r, h)
            for x in range(w):
                tmp[y, x] += kernel[t] * field[src, x]
    out = np.zeros((h, w))
    for t in range(kernel.size):
        for x in range(w):
            src = _reflect(x + t - r, w)
            for y in range(h):
                out[y, x] += kernel[t] * tmp[y, src]
    return out


@njit(cache=True)
def nearest_distances(a, b, spacing):
    sr = spacing[0]
    sc = spacing[1]
    out = np.empty(a.shape[0])
    for p in range(a.shape[0]):
        best = np.inf
        for q in range(b.shape[0]):
            dr = (a[p, 0] - b[q, 0]) * sr
            dc = (a[p, 1] - b[q, 1]) * sc
            d2 = dr * dr + dc * dc
            if d2 < best:
                best = d2
        out[p] = math.sqrt(best)
    return out
