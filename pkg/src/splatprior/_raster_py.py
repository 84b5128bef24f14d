"""NumPy fallback for the compositing kernel in ``_raster_ext.pyx``.

Loops over splats in depth order and updates each splat's pixel bounding box
at once, so results match the compiled per-pixel loop up to rounding.
"""
import numpy as np


def _bbox(mx, my, ex, ey, W, H):
    x0 = max(int(np.ceil(mx - ex - 0.5)), 0)
    x1 = min(int(np.floor(mx + ex - 0.5)), W - 1)
    y0 = max(int(np.ceil(my - ey - 0.5)), 0)
    y1 = min(int(np.floor(my + ey - 0.5)), H - 1)
    return x0, x1, y0, y1


def _footprints(mean2d, conic, order, extent, H, W, cutoff):
    """Yield (g, slices, dx, dy, G, mask) for each splat touching the image."""
    for g in order:
        x0, x1, y0, y1 = _bbox(mean2d[g, 0], mean2d[g, 1], extent[g, 0], extent[g, 1], W, H)
        if x0 > x1 or y0 > y1:
            continue
        dx = (np.arange(x0, x1 + 1) + 0.5 - mean2d[g, 0])[None, :]
        dy = (np.arange(y0, y1 + 1) + 0.5 - mean2d[g, 1])[:, None]
        a, b, c = conic[g]
        G = np.exp(-0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy))
        mask = G >= cutoff
        if not mask.any():
            continue
        yield g, (slice(y0, y1 + 1), slice(x0, x1 + 1)), dx, dy, G, mask


def composite_forward(mean2d, conic, opacity, feats, extent, order, H, W, cutoff, num_threads=1):
    F = feats.shape[1]
    out = np.zeros((H, W, F))
    T = np.ones((H, W))
    for g, sl, _, _, G, mask in _footprints(mean2d, conic, order, extent, H, W, cutoff):
        a = np.where(mask, opacity[g] * G, 0.0)
        w = T[sl] * a
        out[sl] += w[..., None] * feats[g]
        T[sl] = T[sl] * (1.0 - a)
    return out, 1.0 - T


def composite_backward(mean2d, conic, opacity, feats, extent, order, H, W, cutoff,
                       grad_out, grad_wsum):
    N, F = feats.shape
    g_mean = np.zeros((N, 2))
    g_conic = np.zeros((N, 3))
    g_opac = np.zeros(N)
    g_feat = np.zeros((N, F))

    T = np.ones((H, W))
    records = []
    for g, sl, dx, dy, G, mask in _footprints(mean2d, conic, order, extent, H, W, cutoff):
        a = np.where(mask, opacity[g] * G, 0.0)
        records.append((g, sl, dx, dy, G, mask, a, T[sl].copy()))
        T[sl] = T[sl] * (1.0 - a)

    # B holds, per pixel, the composite of everything behind the current splat;
    # the last channel composites the constant 1 (for the weight sum).
    B = np.zeros((H, W, F + 1))
    for g, sl, dx, dy, G, mask, a, Tk in reversed(records):
        go = grad_out[sl]
        Bs = B[sl]
        dot = grad_wsum[sl] * (1.0 - Bs[..., F]) + np.einsum("hwc,hwc->hw", go, feats[g] - Bs[..., :F])
        g_feat[g] += np.einsum("hw,hwc->c", Tk * a, go)
        ga = np.where(mask, Tk * dot, 0.0)
        fk = np.append(feats[g], 1.0)
        B[sl] = a[..., None] * fk + (1.0 - a[..., None]) * Bs
        g_opac[g] += np.sum(G * ga)
        gp = G * opacity[g] * ga
        ca, cb, cc = conic[g]
        g_conic[g, 0] += np.sum(-0.5 * dx * dx * gp)
        g_conic[g, 1] += np.sum(-dx * dy * gp)
        g_conic[g, 2] += np.sum(-0.5 * dy * dy * gp)
        g_mean[g, 0] += np.sum((ca * dx + cb * dy) * gp)
        g_mean[g, 1] += np.sum((cb * dx + cc * dy) * gp)
    return g_mean, g_conic, g_opac, g_feat
