"""Message/key matching functions, softmax fusion and argmax selection.

Single-pair functions (``match_*``) operate on plain vectors and are what a
normal agent runs when it scores a received request. The ``*_scores``
functions are the batched, differentiable equivalents used in training:
``mu`` is (B, m), ``keys`` is (B, n, k) and the result is (B, n).
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import softmax
from .tensor.params import glorot_uniform

GENERAL = "general"
SCALED_DOT = "scaled_dot"
ADDITIVE = "additive"
VARIANTS = (GENERAL, SCALED_DOT, ADDITIVE)


def check_sizes(variant, m, k):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown attention variant {variant!r}; expected one of {VARIANTS}")
    if m < 1 or k < 1:
        raise ConfigError(f"message and key sizes must be >= 1, got m={m}, k={k}")
    if variant == SCALED_DOT and m != k:
        raise ConfigError(f"scaled_dot requires identical message and key sizes, got m={m}, k={k}")


def match_general(mu, kappa, w_a):
    mu, kappa, w_a = (np.asarray(a, dtype=np.float64) for a in (mu, kappa, w_a))
    if w_a.shape != (mu.size, kappa.size):
        raise DimensionError(f"W_a must be {mu.size}x{kappa.size}, got {w_a.shape}")
    return float(mu @ (w_a @ kappa))


def match_scaled_dot(mu, kappa, d_n=None):
    mu, kappa = np.asarray(mu, dtype=np.float64), np.asarray(kappa, dtype=np.float64)
    if mu.size != kappa.size:
        raise ConfigError(f"scaled_dot requires identical message and key sizes, got m={mu.size}, k={kappa.size}")
    d_n = mu.size if d_n is None else d_n
    if d_n != mu.size:
        raise ConfigError(f"d_n={d_n} must equal the message/key size {mu.size}")
    return float(mu @ (kappa * (1.0 / np.sqrt(d_n))))


def match_additive(mu, kappa, w_a, w_k, w_m):
    mu, kappa, w_a, w_k, w_m = (np.asarray(a, dtype=np.float64) for a in (mu, kappa, w_a, w_k, w_m))
    h = w_a.size
    if w_k.shape != (h, kappa.size) or w_m.shape != (h, mu.size):
        raise DimensionError(f"additive params W_a{w_a.shape} W_k{w_k.shape} W_m{w_m.shape} "
                             f"do not fit m={mu.size}, k={kappa.size}")
    return float(w_a @ np.tanh(w_k @ kappa + w_m @ mu))


def _check_batch(mu, keys):
    if mu.value.ndim != 2 or keys.value.ndim != 3 or mu.shape[0] != keys.shape[0]:
        raise DimensionError(f"scores need mu (B, m) and keys (B, n, k), got {mu.shape}, {keys.shape}")


def general_scores(tape, mu, keys, w_a):
    _check_batch(mu, keys)
    if w_a.shape != (mu.shape[1], keys.shape[2]):
        raise DimensionError(f"W_a must be {mu.shape[1]}x{keys.shape[2]}, got {w_a.shape}")
    m, k = w_a.shape
    proj = keys.value @ w_a.value.T  # (B, n, m)
    s = np.einsum("bnm,bm->bn", proj, mu.value)

    def bw(g):
        dproj = g[..., None] * mu.value[:, None, :]
        dmu = np.einsum("bn,bnm->bm", g, proj)
        dw = dproj.reshape(-1, m).T @ keys.value.reshape(-1, k)
        dkeys = dproj @ w_a.value
        return dmu, dkeys, dw

    return tape.record(s, (mu, keys, w_a), bw)


def scaled_dot_scores(tape, mu, keys):
    _check_batch(mu, keys)
    if mu.shape[1] != keys.shape[2]:
        raise ConfigError(f"scaled_dot requires identical message and key sizes, got m={mu.shape[1]}, k={keys.shape[2]}")
    c = 1.0 / np.sqrt(mu.shape[1])
    s = np.einsum("bnk,bk->bn", keys.value, mu.value) * c

    def bw(g):
        dmu = np.einsum("bn,bnk->bk", g, keys.value) * c
        dkeys = g[..., None] * mu.value[:, None, :] * c
        return dmu, dkeys

    return tape.record(s, (mu, keys), bw)


def additive_scores(tape, mu, keys, w_a, w_k, w_m):
    _check_batch(mu, keys)
    h = w_a.shape[0]
    if w_k.shape != (h, keys.shape[2]) or w_m.shape != (h, mu.shape[1]):
        raise DimensionError(f"additive params W_a{w_a.shape} W_k{w_k.shape} W_m{w_m.shape} "
                             f"do not fit mu{mu.shape}, keys{keys.shape}")
    z = keys.value @ w_k.value.T + (mu.value @ w_m.value.T)[:, None, :]
    t = np.tanh(z)
    s = t @ w_a.value

    def bw(g):
        dz = g[..., None] * w_a.value * (1.0 - t * t)  # (B, n, h)
        dwa = np.einsum("bn,bnh->h", g, t)
        dwk = dz.reshape(-1, h).T @ keys.value.reshape(-1, keys.shape[2])
        dkeys = dz @ w_k.value
        dzm = dz.sum(axis=1)
        dwm = dzm.T @ mu.value
        dmu = dzm @ w_m.value
        return dmu, dkeys, dwa, dwk, dwm

    return tape.record(s, (mu, keys, w_a, w_k, w_m), bw)


def init_attention(store, rng, variant, m, k, hidden=None):
    check_sizes(variant, m, k)
    if variant == GENERAL:
        store.add("attention.W_a", glorot_uniform(rng, (m, k), m, k))
    elif variant == ADDITIVE:
        h = hidden or max(m, k)
        store.add("attention.W_a", glorot_uniform(rng, (h,), h, 1))
        store.add("attention.W_k", glorot_uniform(rng, (h, k), k, h))
        store.add("attention.W_m", glorot_uniform(rng, (h, m), m, h))


def batch_scores(tape, store, variant, mu, keys):
    """Dispatch to the configured variant, pulling its parameters from ``store``."""
    if variant == GENERAL:
        return general_scores(tape, mu, keys, tape.param(store, "attention.W_a"))
    if variant == SCALED_DOT:
        return scaled_dot_scores(tape, mu, keys)
    if variant == ADDITIVE:
        return additive_scores(tape, mu, keys, *(tape.param(store, f"attention.{n}") for n in ("W_a", "W_k", "W_m")))
    raise ConfigError(f"unknown attention variant {variant!r}")


def match(variant, params, mu, kappa):
    """Score one message against one key with parameters from ``params``."""
    if variant == GENERAL:
        return match_general(mu, kappa, params["attention.W_a"])
    if variant == SCALED_DOT:
        return match_scaled_dot(mu, kappa)
    if variant == ADDITIVE:
        return match_additive(mu, kappa, params["attention.W_a"], params["attention.W_k"], params["attention.W_m"])
    raise ConfigError(f"unknown attention variant {variant!r}")


def selection_weights(scores):
    return softmax(np.asarray(scores, dtype=np.float64))


def fuse_softmax(scores, feature_maps):
    """Softmax-weighted sum of one feature map per score."""
    maps = np.asarray(feature_maps, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or maps.shape[0] != scores.size:
        raise DimensionError(f"{scores.size} scores for {maps.shape[0]} feature maps")
    alpha = selection_weights(scores)
    return np.tensordot(alpha, maps, axes=1)


def select_argmax(scores, n=1):
    """Ids of the ``n`` highest scores, descending, ties to the lowest id."""
    scores = [float(s) for s in scores]
    if not 1 <= n <= len(scores):
        raise ConfigError(f"top-n must be in [1, {len(scores)}], got {n}")
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:n]
