"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb

import numpy as np


def exact_two_sided_p(k: int, t: int) -> Fraction:
    """Sum of pmf(i) over every i no more probable than k, in exact rational arithmetic."""
    pk = comb(t, k)
    total, c = 0, 1
    for i in range(t + 1):
        if c <= pk:
            total += c
        c = c * (t - i) // (i + 1)
    return min(Fraction(1), Fraction(total, 2**t))


def exact_abstention(p: Fraction, n: int, alpha: Fraction) -> Fraction:
    """Probability that a binary n-vote split fails the test, exactly."""
    out = Fraction(0)
    for k in range(n + 1):
        if exact_two_sided_p(max(k, n - k), n) > alpha:
            out += comb(n, k) * p**k * (1 - p) ** (n - k)
    return out


def spearman_formula(a, b) -> float:
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid for vectors without ties."""
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    n = len(a)
    return 1.0 - 6.0 * float(np.sum((ra - rb) ** 2)) / (n * (n * n - 1))


def ssim_windows(x: np.ndarray, y: np.ndarray, win: int = 7) -> float:
    """Loop-over-windows SSIM with uniform windows and sample statistics."""
    L = max(x.max(), y.max()) - min(x.min(), y.min()) or 1.0
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            a = x[i : i + win, j : j + win].ravel()
            b = y[i : i + win, j : j + win].ravel()
            ma, mb = a.mean(), b.mean()
            va = a.var(ddof=1)
            vb = b.var(ddof=1)
            cov = np.cov(a, b, ddof=1)[0, 1]
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def brute_boundary_distance(signs: np.ndarray, axes) -> np.ndarray:
    """Distance from each node to the nearest opposite-label node, minus half the smallest cell width."""
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    s = signs.ravel()
    out = np.empty(len(s))
    for idx in range(len(s)):
        other = pts[s != s[idx]]
        out[idx] = np.sqrt(((other - pts[idx]) ** 2).sum(axis=1)).min()
    widths = [ax[1] - ax[0] for ax in axes]
    return np.maximum(out - 0.5 * min(widths), 0.0).reshape(signs.shape)


def logit_fd_gradient(model, x: np.ndarray, target: int, step: float = 1e-5) -> np.ndarray:
    grad = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = step
        grad[j] = (model.logits((x + e)[None])[0, target] - model.logits((x - e)[None])[0, target]) / (2 * step)
    return grad


def all_pairs_disagree(decisions: np.ndarray, ignore_abstain: bool, abstain: int = -1) -> np.ndarray:
    k, T = decisions.shape
    out = np.zeros(T)
    pairs = list(itertools.combinations(range(k), 2))
    for t in range(T):
        c = 0
        for i, j in pairs:
            a, b = decisions[i, t], decisions[j, t]
            if ignore_abstain and (a == abstain or b == abstain):
                continue
            c += a != b
        out[t] = c / len(pairs)
    return out
