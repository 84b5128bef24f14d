# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depth-ordered alpha compositing of screen-space Gaussians.

Mirrors ``_raster_py`` exactly; both expose ``composite_forward`` and
``composite_backward`` with identical signatures.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, ceil, floor
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF TILE = 16


cdef inline void _bbox(double mx, double my, double ex, double ey, int W, int H,
                       int* x0, int* x1, int* y0, int* y1) noexcept nogil:
    # pixel c has center c + 0.5
    x0[0] = <int>ceil(mx - ex - 0.5)
    x1[0] = <int>floor(mx + ex - 0.5)
    y0[0] = <int>ceil(my - ey - 0.5)
    y1[0] = <int>floor(my + ey - 0.5)
    if x0[0] < 0:
        x0[0] = 0
    if y0[0] < 0:
        y0[0] = 0
    if x1[0] > W - 1:
        x1[0] = W - 1
    if y1[0] > H - 1:
        y1[0] = H - 1


def _bin_tiles(const double[:, ::1] mean2d, const double[:, ::1] extent,
               const long long[::1] order, int H, int W):
    cdef int tw = (W + TILE - 1) // TILE
    cdef int th = (H + TILE - 1) // TILE
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, g
    cdef int x0, x1, y0, y1, tx, ty, t
    counts = np.zeros(tw * th + 1, dtype=np.int64)
    cdef long long[::1] c = counts
    for i in range(n):
        g = order[i]
        _bbox(mean2d[g, 0], mean2d[g, 1], extent[g, 0], extent[g, 1], W, H, &x0, &x1, &y0, &y1)
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // TILE, y1 // TILE + 1):
            for tx in range(x0 // TILE, x1 // TILE + 1):
                c[ty * tw + tx + 1] += 1
    offsets = np.cumsum(counts)
    lists = np.empty(offsets[-1], dtype=np.int64)
    cdef long long[::1] off = offsets
    cdef long long[::1] lst = lists
    fill = offsets[:-1].copy()
    cdef long long[::1] f = fill
    for i in range(n):
        g = order[i]
        _bbox(mean2d[g, 0], mean2d[g, 1], extent[g, 0], extent[g, 1], W, H, &x0, &x1, &y0, &y1)
        if x0 > x1 or y0 > y1:
            continue
        for ty in range(y0 // TILE, y1 // TILE + 1):
            for tx in range(x0 // TILE, x1 // TILE + 1):
                t = ty * tw + tx
                lst[f[t]] = g
                f[t] += 1
    return offsets, lists


cdef inline double _footprint(const double[:, ::1] mean2d, const double[:, ::1] conic,
                              long long g, double px, double py) noexcept nogil:
    cdef double dx = px - mean2d[g, 0]
    cdef double dy = py - mean2d[g, 1]
    return exp(-0.5 * (conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy))


def composite_forward(const double[:, ::1] mean2d, const double[:, ::1] conic,
                      const double[::1] opacity, const double[:, ::1] feats,
                      const double[:, ::1] extent, const long long[::1] order,
                      int H, int W, double cutoff, int num_threads=1):
    cdef Py_ssize_t F = feats.shape[1]
    out_np = np.zeros((H, W, F), dtype=np.float64)
    wsum_np = np.zeros((H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef double[:, ::1] wsum = wsum_np
    offsets_np, lists_np = _bin_tiles(mean2d, extent, order, H, W)
    cdef long long[::1] off = offsets_np
    cdef long long[::1] lst = lists_np
    cdef int tw = (W + TILE - 1) // TILE
    cdef int th = (H + TILE - 1) // TILE
    cdef int t, r, c, ch
    cdef long long j, g
    cdef double px, py, G, a, T, w
    for t in prange(tw * th, nogil=True, schedule="static", num_threads=num_threads):
        for r in range((t // tw) * TILE, min((t // tw) * TILE + TILE, H)):
            for c in range((t % tw) * TILE, min((t % tw) * TILE + TILE, W)):
                px = c + 0.5
                py = r + 0.5
                T = 1.0
                for j in range(off[t], off[t + 1]):
                    g = lst[j]
                    G = _footprint(mean2d, conic, g, px, py)
                    if G < cutoff:
                        continue
                    a = opacity[g] * G
                    w = T * a
                    for ch in range(F):
                        out[r, c, ch] += w * feats[g, ch]
                    T = T * (1.0 - a)
                wsum[r, c] = 1.0 - T
    return out_np, wsum_np


def composite_backward(const double[:, ::1] mean2d, const double[:, ::1] conic,
                       const double[::1] opacity, const double[:, ::1] feats,
                       const double[:, ::1] extent, const long long[::1] order,
                       int H, int W, double cutoff,
                       const double[:, :, ::1] grad_out, const double[:, ::1] grad_wsum):
    cdef Py_ssize_t N = mean2d.shape[0]
    cdef Py_ssize_t F = feats.shape[1]
    g_mean_np = np.zeros((N, 2), dtype=np.float64)
    g_conic_np = np.zeros((N, 3), dtype=np.float64)
    g_opac_np = np.zeros(N, dtype=np.float64)
    g_feat_np = np.zeros((N, F), dtype=np.float64)
    cdef double[:, ::1] g_mean = g_mean_np
    cdef double[:, ::1] g_conic = g_conic_np
    cdef double[::1] g_opac = g_opac_np
    cdef double[:, ::1] g_feat = g_feat_np
    offsets_np, lists_np = _bin_tiles(mean2d, extent, order, H, W)
    cdef long long[::1] off = offsets_np
    cdef long long[::1] lst = lists_np
    cdef int tw = (W + TILE - 1) // TILE
    cdef int th = (H + TILE - 1) // TILE
    cdef long long maxlen = 0
    cdef int t
    for t in range(tw * th):
        if off[t + 1] - off[t] > maxlen:
            maxlen = off[t + 1] - off[t]
    cdef long long* ids = <long long*>malloc((maxlen + 1) * sizeof(long long))
    cdef double* alphas = <double*>malloc((maxlen + 1) * sizeof(double))
    cdef double* trans = <double*>malloc((maxlen + 1) * sizeof(double))
    cdef double* foot = <double*>malloc((maxlen + 1) * sizeof(double))
    cdef double* B = <double*>malloc((F + 1) * sizeof(double))
    cdef int r, c, ch, k, K
    cdef long long j, g
    cdef double px, py, G, a, T, ga, gw, dot, gG, gp, dx, dy
    try:
        for t in range(tw * th):
            for r in range((t // tw) * TILE, min((t // tw) * TILE + TILE, H)):
                for c in range((t % tw) * TILE, min((t % tw) * TILE + TILE, W)):
                    px = c + 0.5
                    py = r + 0.5
                    T = 1.0
                    K = 0
                    for j in range(off[t], off[t + 1]):
                        g = lst[j]
                        G = _footprint(mean2d, conic, g, px, py)
                        if G < cutoff:
                            continue
                        a = opacity[g] * G
                        ids[K] = g
                        alphas[K] = a
                        trans[K] = T
                        foot[K] = G
                        K += 1
                        T = T * (1.0 - a)
                    if K == 0:
                        continue
                    gw = grad_wsum[r, c]
                    for ch in range(F + 1):
                        B[ch] = 0.0
                    for k in range(K - 1, -1, -1):
                        g = ids[k]
                        a = alphas[k]
                        T = trans[k]
                        # d out / d a_k = T_k (f_k - B_k), B_k = sum over splats behind
                        dot = gw * (1.0 - B[F])
                        for ch in range(F):
                            dot = dot + grad_out[r, c, ch] * (feats[g, ch] - B[ch])
                            g_feat[g, ch] += T * a * grad_out[r, c, ch]
                        ga = T * dot
                        for ch in range(F):
                            B[ch] = a * feats[g, ch] + (1.0 - a) * B[ch]
                        B[F] = a + (1.0 - a) * B[F]
                        G = foot[k]
                        g_opac[g] += G * ga
                        gG = opacity[g] * ga
                        gp = G * gG
                        dx = px - mean2d[g, 0]
                        dy = py - mean2d[g, 1]
                        g_conic[g, 0] += -0.5 * dx * dx * gp
                        g_conic[g, 1] += -dx * dy * gp
                        g_conic[g, 2] += -0.5 * dy * dy * gp
                        g_mean[g, 0] += (conic[g, 0] * dx + conic[g, 1] * dy) * gp
                        g_mean[g, 1] += (conic[g, 1] * dx + conic[g, 2] * dy) * gp
    finally:
        free(ids)
        free(alphas)
        free(trans)
        free(foot)
        free(B)
    return g_mean_np, g_conic_np, g_opac_np, g_feat_np
