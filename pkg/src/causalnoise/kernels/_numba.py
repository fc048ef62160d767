"""numba ports of the ``_numpy`` kernels, written as explicit loops in the same order."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _row(values, s, node, par, npar, strides):
    r = 0
    for j in range(npar[node]):
        r += values[s, par[node, j]] * strides[node, j]
    return r


@njit(cache=True)
def world_weights(topo, cards, par, npar, strides, offsets, flat, worlds):
    n_worlds = worlds.shape[0]
    w = np.empty(n_worlds, dtype=np.float64)
    for s in range(n_worlds):
        acc = 1.0
        for t in range(topo.shape[0]):
            node = topo[t]
            r = _row(worlds, s, node, par, npar, strides)
            acc = acc * flat[offsets[node] + r * cards[node] + worlds[s, node]]
        w[s] = acc
    return w


@njit(cache=True)
def forward_sample(topo, cards, par, npar, strides, offsets, cdf, uniforms):
    n_samples, n = uniforms.shape
    out = np.zeros((n_samples, n), dtype=np.int64)
    for s in range(n_samples):
        for t in range(topo.shape[0]):
            node = topo[t]
            k = cards[node]
            base = offsets[node] + _row(out, s, node, par, npar, strides) * k
            u = uniforms[s, node]
            v = 0
            for c in range(k):
                if u >= cdf[base + c]:
                    v += 1
            out[s, node] = min(v, k - 1)
    return out


@njit(cache=True)
def twin_step(fact, cf, w, node, cards, par, npar, strides, resp, cw,
              allowed, do_value, drop, radix):
    n_states, n = fact.shape
    n_classes = cw.shape[0]
    cap = n_states * n_classes
    nf = np.zeros((cap, n), dtype=np.int64)
    nc = np.zeros((cap, n), dtype=np.int64)
    nw = np.empty(cap, dtype=np.float64)
    m = 0
    for s in range(n_states):
        rf = _row(fact, s, node, par, npar, strides)
        rc = _row(cf, s, node, par, npar, strides)
        for k in range(n_classes):
            fv = resp[k, rf]
            if not allowed[fv]:
                continue
            cv = do_value if do_value >= 0 else resp[k, rc]
            for j in range(n):
                nf[m, j] = fact[s, j]
                nc[m, j] = cf[s, j]
            nf[m, node] = fv
            nc[m, node] = cv
            for j in range(n):
                if drop[j]:
                    nf[m, j] = 0
                    nc[m, j] = 0
            nw[m] = w[s] * cw[k]
            m += 1
    keys = np.zeros(m, dtype=np.int64)
    for i in range(m):
        key = 0
        for j in range(n):
            key = key * radix[j] + nf[i, j]
            key = key * radix[j] + nc[i, j]
        keys[i] = key
    uniq = np.unique(keys)
    inv = np.searchsorted(uniq, keys)
    merged = np.zeros(uniq.shape[0], dtype=np.float64)
    for i in range(m):
        merged[inv[i]] += nw[i]
    out_f = np.zeros((uniq.shape[0], n), dtype=np.int64)
    out_c = np.zeros((uniq.shape[0], n), dtype=np.int64)
    for i in range(uniq.shape[0]):
        rest = uniq[i]
        for j in range(n - 1, -1, -1):
            out_c[i, j] = rest % radix[j]
            rest //= radix[j]
            out_f[i, j] = rest % radix[j]
            rest //= radix[j]
    return out_f, out_c, merged
