"""Diagonal-Gaussian policy head: densities, losses, per-sample weights.

The behavioral-cloning objective is the mean negative (q-)log likelihood of
expert actions under the policy. The deformed loss only changes how each
sample's log likelihood enters the objective; its parameter gradient is the
plain NLL gradient scaled per sample by rho = exp{(1-q) log_lik}, which the
network consumes as a constant weight (no gradient flows through rho).

Loss and weight computation always run in float64 regardless of the network
dtype: they exponentiate log likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qmath import check_loss_q, gradient_ratio, q_log_from_log

# Variance floor: keeps the density bounded so rho = pi^(1-q) cannot blow up
# for q < 1 as the fit sharpens.
SIGMA_SQ_MIN = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DiagonalGaussian:
    """mean/var arrays of shape (..., A); var must be finite and >= SIGMA_SQ_MIN."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mean.shape != self.var.shape:
            raise ValueError(f"mean/var shape mismatch: {self.mean.shape} vs {self.var.shape}")
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.var)):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(self.var < SIGMA_SQ_MIN * (1.0 - 1e-12)):
            raise ValueError(f"variance below floor {SIGMA_SQ_MIN}")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class LossBatchResult:
    loss: float
    per_sample_log_lik: np.ndarray
    per_sample_weight: np.ndarray


def softplus(v: np.ndarray) -> np.ndarray:
    """log(1 + e^v), computed without overflow for large |v|."""
    v = np.asarray(v, dtype=np.float64)
    return np.logaddexp(0.0, v)


def sigmoid(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def variance_from_raw(raw: np.ndarray) -> np.ndarray:
    """Network raw-variance head output -> variance: softplus(raw) + floor."""
    return softplus(raw) + SIGMA_SQ_MIN


def log_likelihood(g: DiagonalGaussian, action: np.ndarray) -> np.ndarray | float:
    """Sum over dimensions of the univariate normal log density.

    Broadcasts over leading axes, so a (B, A) Gaussian batch against (B, A)
    actions gives a length-B vector.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != g.dim:
        raise ValueError(f"action dim {action.shape[-1]} != gaussian dim {g.dim}")
    ll = -0.5 * np.sum(LOG_2PI + np.log(g.var) + (action - g.mean) ** 2 / g.var, axis=-1)
    return float(ll) if ll.ndim == 0 else ll


def nll_head_gradients(g: DiagonalGaussian, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample d(-log pi)/d(mean) and d(-log pi)/d(var), no batch reduction."""
    actions = np.asarray(actions, dtype=np.float64)
    diff = g.mean - actions
    d_mean = diff / g.var
    d_var = 0.5 * (1.0 / g.var - diff ** 2 / g.var ** 2)
    return d_mean, d_var


def bc_loss(g: DiagonalGaussian, actions: np.ndarray, q: float) -> LossBatchResult:
    """Deformed behavioral-cloning loss: -mean(ln_q pi(a|s)) over the batch.

    per_sample_weight carries rho = exp{(1-q) log_lik}; at q = 1 the loss is
    bit-identical to the plain NLL path and every weight is exactly 1.
    """
    q = check_loss_q(q)
    actions = np.asarray(actions, dtype=np.float64)
    if g.mean.ndim != 2 or actions.shape != g.mean.shape:
        raise ValueError(f"batch mismatch: actions {actions.shape} vs gaussians {g.mean.shape}")
    ll = log_likelihood(g, actions)
    loss = float(-np.mean(q_log_from_log(ll, q)))
    weight = np.atleast_1d(gradient_ratio(ll, q))
    return LossBatchResult(loss=loss, per_sample_log_lik=np.atleast_1d(ll), per_sample_weight=weight)


def nll_loss(g: DiagonalGaussian, actions: np.ndarray) -> LossBatchResult:
    """Standard behavioral cloning: plain mean NLL, all weights 1.

    Kept as a dedicated path (no q anywhere) so the q = 1 reduction of
    bc_loss can be checked against it bit for bit.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if g.mean.ndim != 2 or actions.shape != g.mean.shape:
        raise ValueError(f"batch mismatch: actions {actions.shape} vs gaussians {g.mean.shape}")
    ll = log_likelihood(g, actions)
    loss = float(-np.mean(ll))
    return LossBatchResult(
        loss=loss,
        per_sample_log_lik=np.atleast_1d(ll),
        per_sample_weight=np.ones_like(np.atleast_1d(ll)),
    )


def sample(g: DiagonalGaussian, rng: np.random.Generator) -> np.ndarray:
    """Draw a ~ N(mean, diag(var)); deterministic given the generator state."""
    return g.mean + np.sqrt(g.var) * rng.standard_normal(g.mean.shape)
