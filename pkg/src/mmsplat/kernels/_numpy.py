"""Pure-numpy tile kernels, vectorized over the pixels of one tile.

Same signatures and semantics as the numba kernels; used when numba is
unavailable or ``MMSPLAT_BACKEND=numpy``.
"""

import numpy as np


def bin_tiles(bbox, tiles_x, tiles_y, tile):
    buckets = [[] for _ in range(tiles_x * tiles_y)]
    for k, (x0, y0, x1, y1) in enumerate(bbox):
        if x0 >= x1 or y0 >= y1:
            continue
        for ty in range(y0 // tile, (y1 - 1) // tile + 1):
            for tx in range(x0 // tile, (x1 - 1) // tile + 1):
                buckets[ty * tiles_x + tx].append(k)
    ptr = np.zeros(len(buckets) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(b) for b in buckets])
    ids = np.array([k for b in buckets for k in b], dtype=np.int64)
    return ptr, ids


def _tile_pixels(t, tiles_x, tile, width, height, scale, ox, oy):
    ty, tx = divmod(t, tiles_x)
    ys = np.arange(ty * tile, min((ty + 1) * tile, height))
    xs = np.arange(tx * tile, min((tx + 1) * tile, width))
    py, px = np.meshgrid(ys, xs, indexing="ij")
    py, px = py.ravel(), px.ravel()
    return py, px, (px + 0.5 - ox) / scale, (py + 0.5 - oy) / scale


def _walk(start, end, ids, wx, wy, means, conic, alpha, cutoff, qlim, early_stop):
    """Front-to-back pass over one tile; yields (entry, mask, dx, dy, g, w, T_before)."""
    trans = np.ones(len(wx))
    live = np.ones(len(wx), dtype=bool)
    steps = []
    for e in range(start, end):
        k = ids[e]
        dx = wx - means[k, 0]
        dy = wy - means[k, 1]
        q = conic[k, 0] * dx * dx + 2.0 * conic[k, 1] * dx * dy + conic[k, 2] * dy * dy
        inside = live & (q <= qlim)
        g = np.exp(-0.5 * np.where(inside, q, 0.0))
        inside &= g >= cutoff
        if not inside.any():
            continue
        w = np.where(inside, alpha[k] * g, 0.0)
        steps.append((e, inside, dx, dy, g, w, trans.copy()))
        trans = np.where(inside, trans * (1.0 - w), trans)
        live &= ~(inside & (trans < early_stop))
    return steps, trans


# ``bbox`` is accepted for signature parity with the numba kernels; the
# vectorized walk tests every tile entry against every pixel of the tile.
def forward(width, height, scale, ox, oy, tile, means, conic, alpha, feats,
            background, ptr, ids, bbox, cutoff, qlim, early_stop):
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    image = np.zeros((height, width, d))
    final_t = np.ones((height, width))
    hit = np.zeros(len(ids), dtype=np.uint8)
    for t in range(len(ptr) - 1):
        py, px, wx, wy = _tile_pixels(t, tiles_x, tile, width, height, scale, ox, oy)
        steps, trans = _walk(ptr[t], ptr[t + 1], ids, wx, wy, means, conic, alpha,
                             cutoff, qlim, early_stop)
        acc = np.zeros((len(wx), d))
        for e, inside, _, _, _, w, t_before in steps:
            acc += np.where(inside[:, None], (t_before * w)[:, None] * feats[ids[e]], 0.0)
            hit[e] = 1
        acc += trans[:, None] * background
        image[py, px] = acc
        final_t[py, px] = trans
    return image, final_t, hit


def backward(width, height, scale, ox, oy, tile, means, conic, alpha, feats,
             background, ptr, ids, bbox, cutoff, qlim, early_stop, d_image):
    d = feats.shape[1]
    tiles_x = (width + tile - 1) // tile
    grads = np.zeros((len(ids), 6 + d))
    for t in range(len(ptr) - 1):
        py, px, wx, wy = _tile_pixels(t, tiles_x, tile, width, height, scale, ox, oy)
        steps, _ = _walk(ptr[t], ptr[t + 1], ids, wx, wy, means, conic, alpha,
                         cutoff, qlim, early_stop)
        v = d_image[py, px]
        behind = np.broadcast_to(background, (len(wx), d)).copy()
        for e, inside, dx, dy, g, w, t_before in reversed(steps):
            k = ids[e]
            f = feats[k]
            grads[e, 6:] += ((t_before * w)[:, None] * v)[inside].sum(axis=0)
            dw = t_before * np.einsum("pc,pc->p", f - behind, v)
            behind = np.where(inside[:, None], w[:, None] * f + (1.0 - w)[:, None] * behind, behind)
            dq = np.where(inside, -0.5 * g * dw * alpha[k], 0.0)
            grads[e, 5] += (dw * g)[inside].sum()
            grads[e, 2] += (dq * dx * dx).sum()
            grads[e, 3] += (dq * 2.0 * dx * dy).sum()
            grads[e, 4] += (dq * dy * dy).sum()
            grads[e, 0] -= (2.0 * dq * (conic[k, 0] * dx + conic[k, 1] * dy)).sum()
            grads[e, 1] -= (2.0 * dq * (conic[k, 1] * dx + conic[k, 2] * dy)).sum()
    return grads


def reduce_entries(ids, values, n):
    out = np.zeros((n, values.shape[1]))
    np.add.at(out, ids, values)
    return out
