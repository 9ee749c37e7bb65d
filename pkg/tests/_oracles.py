"""Independent straight-line numpy references used as test oracles.

These deliberately avoid the package's tensor/attention code paths: plain
numpy, no masking kernels, no autograd.
"""

import numpy as np


def ref_masked_softmax(scores, mask):
    scores = np.asarray(scores, dtype=np.float64)
    out = np.zeros_like(scores)
    for i in range(scores.shape[0]):
        kept = np.flatnonzero(mask[i])
        e = np.exp(scores[i, kept] - scores[i, kept].max())
        out[i, kept] = e / e.sum()
    return out


def ref_dense_attention(q, k, v):
    p = q @ k.T / np.sqrt(q.shape[1])
    mask = np.ones(p.shape, dtype=bool)
    return ref_masked_softmax(p, mask) @ v


def ref_topk_mask(p, kk):
    keep = np.zeros(p.shape, dtype=bool)
    for i in range(p.shape[0]):
        thresh = sorted(p[i], reverse=True)[min(kk, p.shape[1]) - 1]
        keep[i] = p[i] >= thresh
    return keep


def ref_sparse_attention(q, k, v, kk):
    p = q @ k.T / np.sqrt(q.shape[1])
    return ref_masked_softmax(p, ref_topk_mask(p, kk)) @ v


def ref_multi_head(q_in, k_in, v_in, wq, wk, wv, wo, kk=None):
    heads = []
    for i in range(len(wq)):
        q, k, v = q_in @ wq[i], k_in @ wk[i], v_in @ wv[i]
        if kk is None:
            heads.append(ref_dense_attention(q, k, v))
        else:
            heads.append(ref_sparse_attention(q, k, v, kk))
    return np.concatenate(heads, axis=1) @ wo


def ref_layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta
