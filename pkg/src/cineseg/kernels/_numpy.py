"""Pure-numpy kernels. Same summation order as the numba versions, so both
backends agree bit-for-bit."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k):
    n, ci, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(ci * k * k, n * ho * wo)


def col2im(dcols, n, ci, hp, wp, k):
    ho, wo = hp - k + 1, wp - k + 1
    d = dcols.reshape(ci, k, k, n, ho, wo)
    out = np.zeros((n, ci, hp, wp))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += d[:, i, j].transpose(1, 0, 2, 3)
    return out


def maxpool2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2_backward(g, idx):
    n, c, h2, w2 = g.shape
    win = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(win, idx.astype(np.intp)[..., None], g[..., None], axis=-1)
    return win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def _gather(img, r, c):
    h, w = img.shape
    ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
    vals = np.zeros(r.shape, dtype=img.dtype)
    vals[ok] = img[r[ok], c[ok]]
    return vals


def bilinear_sample(img, rows, cols):
    y0 = np.floor(rows)
    x0 = np.floor(cols)
    fy = rows - y0
    fx = cols - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    v00 = _gather(img, y0, x0)
    v01 = _gather(img, y0, x0 + 1)
    v10 = _gather(img, y0 + 1, x0)
    v11 = _gather(img, y0 + 1, x0 + 1)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot


def nearest_sample(img, rows, cols):
    r = np.floor(rows + 0.5).astype(np.int64)
    c = np.floor(cols + 0.5).astype(np.int64)
    return _gather(img, r, c)


def smooth_reflect(field, kernel):
    r = len(kernel) // 2
    h, w = field.shape
    p = np.pad(field, ((r, r), (0, 0)), mode="symmetric")
    tmp = np.zeros((h, w))
    for t in range(len(kernel)):
        tmp += kernel[t] * p[t:t + h, :]
    p = np.pad(tmp, ((0, 0), (r, r)), mode="symmetric")
    out = np.zeros((h, w))
    for t in range(len(kernel)):
        out += kernel[t] * p[:, t:t + w]
    return out


def nearest_distances(a, b, spacing):
    sr, sc = spacing
    out = np.empty(len(a))
    step = max(1, 2_000_000 // max(len(b), 1))
    for s in range(0, len(a), step):
        chunk = a[s:s + step]
        dr = (chunk[:, None, 0] - b[None, :, 0]) * sr
        dc = (chunk[:, None, 1] - b[None, :, 1]) * sc
        out[s:s + step] = np.sqrt(np.min(dr * dr + dc * dc, axis=1))
    return out
