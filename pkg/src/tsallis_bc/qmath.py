"""q-deformed logarithm machinery.

The deformed logarithm ln_q(x) = (x^(1-q) - 1)/(1 - q) tends to ln(x) as
q -> 1 and is monotonically increasing in x for every q. Expressed as a
function of u = ln(x) it becomes (exp{(1-q) u} - 1)/(1 - q), whose derivative
exp{(1-q) u} acts as a per-sample gradient weight: for q < 1 it decays to
zero as the log likelihood drops, which is what makes the deformed
behavioral-cloning loss ignore low-likelihood (noisy) samples.

Everything here is a pure function of its arguments; the Monte-Carlo
divergence is pure given its seed.
"""

from __future__ import annotations

import math

import numpy as np

# |q - 1| below this uses the exact-log branch: the generic expression is 0/0
# at q = 1 and catastrophically cancels nearby.
Q_ONE_EPS = 1e-9


def check_loss_q(q: float) -> float:
    """Validate q for loss construction: the robust loss is derived for 0 < q <= 1."""
    q = float(q)
    if not math.isfinite(q) or not 0.0 < q <= 1.0:
        raise ValueError(f"loss requires q in (0, 1], got {q!r}")
    return q


def q_log(x, q: float):
    """ln_q(x) = (x^(1-q) - 1)/(1-q) for x > 0, reducing to ln(x) at q = 1.

    Accepts scalars or arrays; raises on non-positive or non-finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    if not math.isfinite(q):
        raise ValueError(f"q must be finite, got {q!r}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError("q_log requires finite x > 0")
    if abs(q - 1.0) < Q_ONE_EPS:
        out = np.log(x)
    else:
        # expm1((1-q) ln x) is the same quantity as x^(1-q) - 1 without the
        # cancellation near x = 1.
        out = np.expm1((1.0 - q) * np.log(x)) / (1.0 - q)
    return float(out) if out.ndim == 0 else out


def q_log_from_log(log_x, q: float):
    """ln_q evaluated from ln(x) directly: (exp{(1-q) log_x} - 1)/(1-q).

    This is the numerically stable path used by the loss: it stays finite and
    accurate for log_x << 0 where exp(log_x) underflows.
    """
    log_x = np.asarray(log_x, dtype=np.float64)
    if not math.isfinite(q):
        raise ValueError(f"q must be finite, got {q!r}")
    if not np.all(np.isfinite(log_x)):
        raise ValueError("q_log_from_log requires finite log_x")
    if abs(q - 1.0) < Q_ONE_EPS:
        out = log_x.copy()
    else:
        out = np.expm1((1.0 - q) * log_x) / (1.0 - q)
    return float(out) if out.ndim == 0 else out


def gradient_ratio(log_x, q: float):
    """rho = exp{(1-q) log_x}: d ln_q / d ln at ln(x) = log_x.

    Identically 1 at q = 1. For q < 1 it decays to 0 as log_x -> -inf (noisy,
    low-likelihood samples) and exceeds 1 where the density exceeds 1; the
    output is deliberately not clipped.
    """
    log_x = np.asarray(log_x, dtype=np.float64)
    if not math.isfinite(q):
        raise ValueError(f"q must be finite, got {q!r}")
    if not np.all(np.isfinite(log_x)):
        raise ValueError("gradient_ratio requires finite log_x")
    out = np.exp((1.0 - q) * log_x)
    return float(out) if out.ndim == 0 else out


def q_log_ratio_decomposition(x: float, y: float, q: float) -> tuple[float, float]:
    """Both sides of ln_q(y/x) = x^(q-1) (ln_q y - ln_q x), as (lhs, rhs)."""
    x = float(x)
    y = float(y)
    if not (math.isfinite(x) and math.isfinite(y)) or x <= 0.0 or y <= 0.0:
        raise ValueError("decomposition requires finite x, y > 0")
    lhs = q_log(y / x, q)
    rhs = x ** (q - 1.0) * (q_log(y, q) - q_log(x, q))
    return lhs, rhs


def diag_gaussian_log_density(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Log density of N(mean, diag(var)) at x, summed over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    return -0.5 * np.sum(np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var, axis=-1)


def mc_tsallis_divergence(p1, p2, q: float, n_samples: int, seed: int) -> float:
    """Monte-Carlo estimate of the q-deformed KL divergence KL_q(p1 || p2).

    KL_q(p1 || p2) = -E_{x ~ p1}[ln_q(p2(x)/p1(x))], evaluated through log
    densities so the ratio never over/underflows. p1 and p2 need `mean` and
    `var` vectors of equal dimension. Diagnostic only; deterministic per seed.
    """
    m1 = np.asarray(p1.mean, dtype=np.float64)
    v1 = np.asarray(p1.var, dtype=np.float64)
    m2 = np.asarray(p2.mean, dtype=np.float64)
    v2 = np.asarray(p2.var, dtype=np.float64)
    if m1.shape != m2.shape or v1.shape != v2.shape or m1.shape != v1.shape:
        raise ValueError(f"dimension mismatch: {m1.shape} vs {m2.shape}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = m1 + np.sqrt(v1) * rng.standard_normal((int(n_samples), m1.size))
    log_ratio = diag_gaussian_log_density(x, m2, v2) - diag_gaussian_log_density(x, m1, v1)
    return float(-np.mean(q_log_from_log(log_ratio, q)))
