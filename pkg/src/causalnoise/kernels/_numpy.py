"""Vectorised numpy kernels. Must stay operation-for-operation identical to ``_numba``."""

from __future__ import annotations

import numpy as np


def _rows(values, node, par, npar, strides):
    r = np.zeros(values.shape[0], dtype=np.int64)
    for j in range(npar[node]):
        r += values[:, par[node, j]] * strides[node, j]
    return r


def world_weights(topo, cards, par, npar, strides, offsets, flat, worlds):
    w = np.ones(worlds.shape[0], dtype=np.float64)
    for node in topo:
        r = _rows(worlds, node, par, npar, strides)
        w = w * flat[offsets[node] + r * cards[node] + worlds[:, node]]
    return w


def forward_sample(topo, cards, par, npar, strides, offsets, cdf, uniforms):
    n_samples, n = uniforms.shape
    out = np.zeros((n_samples, n), dtype=np.int64)
    for node in topo:
        k = cards[node]
        r = _rows(out, node, par, npar, strides)
        base = offsets[node] + r * k
        cum = cdf[base[:, None] + np.arange(k)[None, :]]
        v = (uniforms[:, node][:, None] >= cum).sum(axis=1)
        out[:, node] = np.minimum(v, k - 1)
    return out


def twin_step(fact, cf, w, node, cards, par, npar, strides, resp, cw,
              allowed, do_value, drop, radix):
    """Propagate factual/counterfactual state pairs through one node's response classes."""
    n_classes = cw.shape[0]
    rf = _rows(fact, node, par, npar, strides)
    rc = _rows(cf, node, par, npar, strides)
    fv = resp[:, rf].T  # (S, K)
    if do_value >= 0:
        cv = np.full_like(fv, do_value)
    else:
        cv = resp[:, rc].T
    nw = (w[:, None] * cw[None, :]).ravel()
    fv = fv.ravel()
    cv = cv.ravel()
    src = np.repeat(np.arange(fact.shape[0]), n_classes)
    keep = allowed[fv]
    src, fv, cv, nw = src[keep], fv[keep], cv[keep], nw[keep]
    nf = fact[src].copy()
    nc = cf[src].copy()
    nf[:, node] = fv
    nc[:, node] = cv
    nf[:, drop] = 0
    nc[:, drop] = 0
    keys = np.zeros(nf.shape[0], dtype=np.int64)
    for j in range(nf.shape[1]):
        keys = keys * radix[j] + nf[:, j]
        keys = keys * radix[j] + nc[:, j]
    uniq = np.unique(keys)
    inv = np.searchsorted(uniq, keys)
    merged = np.bincount(inv, weights=nw, minlength=uniq.shape[0])
    out_f = np.zeros((uniq.shape[0], nf.shape[1]), dtype=np.int64)
    out_c = np.zeros_like(out_f)
    rest = uniq.copy()
    for j in range(nf.shape[1] - 1, -1, -1):
        out_c[:, j] = rest % radix[j]
        rest //= radix[j]
        out_f[:, j] = rest % radix[j]
        rest //= radix[j]
    return out_f, out_c, merged
