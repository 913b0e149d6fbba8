"""Numba tile kernels.

Every kernel walks tiles with ``prange``; each tile writes only its own
pixels and its own slice of the entry list, so results do not depend on the
number of worker threads.  Inside a tile, pixels are visited in 4x4 blocks
and each block only walks the entries whose pixel box overlaps it; entries
outside their box are below the cutoff anyway, so this is pure culling.
"""

import math

import numpy as np
from numba import njit, prange

BLOCK = 4


@njit(cache=True)
def bin_tiles(bbox, tiles_x, tiles_y, tile):
    """Bucket depth-sorted Gaussians into tiles.

    ``bbox[k] = (x0, y0, x1, y1)`` is a half-open pixel rectangle.  Entries of a
    tile keep the input (depth) order.
    """
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles, dtype=np.int64)
    for k in range(bbox.shape[0]):
        x0, y0, x1, y1 = bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        for ty in range(y0 // tile, (y1 - 1) // tile + 1):
            for tx in range(x0 // tile, (x1 - 1) // tile + 1):
                counts[ty * tiles_x + tx] += 1
    ptr = np.zeros(n_tiles + 1, dtype=np.int64)
    for t in range(n_tiles):
        ptr[t + 1] = ptr[t] + counts[t]
    ids = np.empty(ptr[n_tiles], dtype=np.int64)
    fill = ptr[:-1].copy()
    for k in range(bbox.shape[0]):
        x0, y0, x1, y1 = bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3]
        if x0 >= x1 or y0 >= y1:
            continue
        for ty in range(y0 // tile, (y1 - 1) // tile + 1):
            for tx in range(x0 // tile, (x1 - 1) // tile + 1):
                t = ty * tiles_x + tx
                ids[fill[t]] = k
                fill[t] += 1
    return ptr, ids


@njit(cache=True)
def _block_entries(ids, bbox, start, end, x0, y0, x1, y1, out):
    """Entries of ``ids[start:end]`` whose pixel box meets ``[x0, x1) x [y0, y1)``."""
    cnt = 0
    for e in range(start, end):
        k = ids[e]
        if bbox[k, 0] < x1 and bbox[k, 2] > x0 and bbox[k, 1] < y1 and bbox[k, 3] > y0:
            out[cnt] = e
            cnt += 1
    return cnt


@njit(cache=True)
def _forward_pixel(wx, wy, means, conic, alpha, feats, ids, block, cnt,
                   cutoff, qlim, early_stop, out, hit):
    d = feats.shape[1]
    trans = 1.0
    for j in range(cnt):
        e = block[j]
        k = ids[e]
        dx = wx - means[k, 0]
        dy = wy - means[k, 1]
        q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
        if q > qlim:
            continue
        g = math.exp(-0.5 * q)
        if g < cutoff:
            continue
        w = alpha[k] * g
        for c in range(d):
            out[c] += trans * w * feats[k, c]
        hit[e] = 1
        trans *= 1.0 - w
        if trans < early_stop:
            break
    return trans


@njit(parallel=True, cache=True)
def forward(width, height, scale, ox, oy, tile, means, conic, alpha, feats,
            background, ptr, ids, bbox, cutoff, qlim, early_stop):
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    n_tiles = ptr.shape[0] - 1
    image = np.zeros((height, width, d))
    final_t = np.ones((height, width))
    hit = np.zeros(ids.shape[0], dtype=np.uint8)
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        start, end = ptr[t], ptr[t + 1]
        block = np.empty(end - start, dtype=np.int64)
        x_end = min((tx + 1) * tile, width)
        y_end = min((ty + 1) * tile, height)
        for by in range(ty * tile, y_end, BLOCK):
            for bx in range(tx * tile, x_end, BLOCK):
                by1 = min(by + BLOCK, y_end)
                bx1 = min(bx + BLOCK, x_end)
                cnt = _block_entries(ids, bbox, start, end, bx, by, bx1, by1, block)
                for py in range(by, by1):
                    wy = (py + 0.5 - oy) / scale
                    for px in range(bx, bx1):
                        wx = (px + 0.5 - ox) / scale
                        trans = _forward_pixel(wx, wy, means, conic, alpha, feats, ids, block,
                                               cnt, cutoff, qlim, early_stop, image[py, px], hit)
                        for c in range(d):
                            image[py, px, c] += trans * background[c]
                        final_t[py, px] = trans
    return image, final_t, hit


@njit(cache=True)
def _backward_pixel(wx, wy, means, conic, alpha, feats, background, ids, block, cnt,
                    cutoff, qlim, early_stop, dpix, grads, s_e, s_g, s_w, s_t, behind):
    d = feats.shape[1]
    trans = 1.0
    n = 0
    for j in range(cnt):
        e = block[j]
        k = ids[e]
        dx = wx - means[k, 0]
        dy = wy - means[k, 1]
        q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
        if q > qlim:
            continue
        g = math.exp(-0.5 * q)
        if g < cutoff:
            continue
        w = alpha[k] * g
        s_e[n] = e
        s_g[n] = g
        s_w[n] = w
        s_t[n] = trans
        n += 1
        trans *= 1.0 - w
        if trans < early_stop:
            break
    # back to front; ``behind`` is the colour composited behind entry j
    for c in range(d):
        behind[c] = background[c]
    for j in range(n - 1, -1, -1):
        e = s_e[j]
        k = ids[e]
        w = s_w[j]
        tw = s_t[j] * w
        fv = 0.0
        for c in range(d):
            v = dpix[c]
            grads[e, 6 + c] += tw * v
            fv += (feats[k, c] - behind[c]) * v
            behind[c] = w * feats[k, c] + (1.0 - w) * behind[c]
        dw = s_t[j] * fv
        g = s_g[j]
        grads[e, 5] += dw * g
        dq = -0.5 * g * dw * alpha[k]
        dx = wx - means[k, 0]
        dy = wy - means[k, 1]
        grads[e, 2] += dq * dx * dx
        grads[e, 3] += dq * 2.0 * dx * dy
        grads[e, 4] += dq * dy * dy
        grads[e, 0] -= 2.0 * dq * (conic[k, 0] * dx + conic[k, 1] * dy)
        grads[e, 1] -= 2.0 * dq * (conic[k, 1] * dx + conic[k, 2] * dy)


@njit(parallel=True, cache=True)
def backward(width, height, scale, ox, oy, tile, means, conic, alpha, feats,
             background, ptr, ids, bbox, cutoff, qlim, early_stop, d_image):
    """Per-entry gradients, columns: d_mean(2), d_conic(3), d_alpha, d_feature(d)."""
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    n_tiles = ptr.shape[0] - 1
    grads = np.zeros((ids.shape[0], 6 + d))
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        start, end = ptr[t], ptr[t + 1]
        n = end - start
        block = np.empty(n, dtype=np.int64)
        s_e = np.empty(n, dtype=np.int64)
        s_g = np.empty(n)
        s_w = np.empty(n)
        s_t = np.empty(n)
        behind = np.empty(d)
        x_end = min((tx + 1) * tile, width)
        y_end = min((ty + 1) * tile, height)
        for by in range(ty * tile, y_end, BLOCK):
            for bx in range(tx * tile, x_end, BLOCK):
                by1 = min(by + BLOCK, y_end)
                bx1 = min(bx + BLOCK, x_end)
                cnt = _block_entries(ids, bbox, start, end, bx, by, bx1, by1, block)
                for py in range(by, by1):
                    wy = (py + 0.5 - oy) / scale
                    for px in range(bx, bx1):
                        wx = (px + 0.5 - ox) / scale
                        _backward_pixel(wx, wy, means, conic, alpha, feats, background, ids,
                                        block, cnt, cutoff, qlim, early_stop, d_image[py, px],
                                        grads, s_e, s_g, s_w, s_t, behind)
    return grads


@njit(cache=True)
def reduce_entries(ids, values, n):
    """Sum per-entry rows into per-Gaussian rows in fixed entry order."""
    out = np.zeros((n, values.shape[1]))
    for e in range(ids.shape[0]):
        k = ids[e]
        for c in range(values.shape[1]):
            out[k, c] += values[e, c]
    return out
