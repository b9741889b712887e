"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np


def column(S, i):
    """Column ``i`` of ``S`` or zeros outside the sequence."""
    if 0 <= i < S.shape[1]:
        return S[:, i]
    return np.zeros(S.shape[0])


def loop_standard_conv(S, W, b):
    out = np.zeros((W.shape[0], S.shape[1]))
    for i in range(S.shape[1]):
        window = np.concatenate([column(S, i - 1), column(S, i), column(S, i + 1)])
        for r in range(W.shape[0]):
            acc = b[r]
            for c in range(W.shape[1]):
                acc += W[r, c] * window[c]
            out[r, i] = np.tanh(acc)
    return out


def loop_dynamic_conv(S, alpha, w_minus, w_zero, w_plus, bias):
    d, n = S.shape
    out = np.zeros((w_zero.shape[0], n))
    for i in range(n):
        acc = bias.copy()
        for w, j in ((w_minus, i - 1), (w_zero, i), (w_plus, i + 1)):
            if 0 <= j < n:
                acc = acc + alpha[j] * (w @ S[:, j])
        out[:, i] = np.tanh(acc)
    return out


def loop_pos_attentive_conv(S, Z, aligned, W, b):
    C = np.concatenate([S, Z], axis=0)
    out = np.zeros((W.shape[0], S.shape[1]))
    for i in range(S.shape[1]):
        parts = [column(C, i - 1), column(C, i), column(C, i + 1)]
        if aligned is not None:
            parts.append(aligned[:, i])
        out[:, i] = np.tanh(W @ np.concatenate(parts) + b)
    return out


def loop_vanilla_cnn(S, W, b):
    conv = loop_standard_conv(S, W, b)
    return np.array([max(row) for row in conv])
