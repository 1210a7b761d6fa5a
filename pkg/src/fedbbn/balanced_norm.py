"""Class-balanced normalization layer.

The layer keeps one running (mean, variance) pair per class, updated from
pseudo-labeled batches.  Updates for class k use only the samples currently
pseudo-labeled k; the per-step mean delta is

    dmu_k = eta * sum_i 1(label_i == k) / denom * (z_i - mu_k)

followed by the variance rule

    var_k <- var_k - dmu_k**2
             + eta * sum_i 1(label_i == k) / denom * ((z_i - mu_k)**2 - var_k)

with the squared mean delta applied element-wise and the residuals taken
against the pre-update mean.  ``denom`` is the feature dimension d by default
(``cwan_denominator="feature_dim"``); set it to "class_count" to divide by the
per-class sample count instead.

Normalization never uses raw batch moments: the per-class statistics are
fused with equal class weight into

    mu  = mean_k mu_k
    var = mean_k (var_k + (mu_k - mu)**2)

so a class that floods a batch moves only its own statistics and never gains
more than a 1/K share of the normalizer.

A plain running-moment layer (`StandardNormState`) is provided as the
unbalanced baseline; it follows the same update-then-normalize convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, LabelOutOfRange
from .tensor import Tensor, as_batch

# Variance entries are clamped here after every update and every aggregation;
# the update rule can drive a variance negative when the mean delta is large.
VAR_FLOOR = 1e-6

FEATURE_DIM = "feature_dim"
CLASS_COUNT = "class_count"


@dataclass
class BalancedNormState:
    """Per-class running statistics plus one shared affine pair."""

    class_means: np.ndarray  # (K, d)
    class_vars: np.ndarray   # (K, d), entries >= VAR_FLOOR
    gamma: np.ndarray        # (d,)
    beta: np.ndarray         # (d,)
    eta: float = 0.1
    eps: float = 1e-5

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    def copy(self) -> "BalancedNormState":
        return BalancedNormState(
            class_means=self.class_means.copy(),
            class_vars=self.class_vars.copy(),
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            eta=self.eta,
            eps=self.eps,
        )


@dataclass
class BalancedGlobals:
    mean: np.ndarray
    var: np.ndarray


@dataclass
class StandardNormState:
    """Running batch moments with the same momentum convention."""

    mean: np.ndarray  # (d,)
    var: np.ndarray   # (d,)
    gamma: np.ndarray
    beta: np.ndarray
    eta: float = 0.1
    eps: float = 1e-5

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "StandardNormState":
        return StandardNormState(
            mean=self.mean.copy(),
            var=self.var.copy(),
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            eta=self.eta,
            eps=self.eps,
        )


def init_balanced_state(
    num_classes: int,
    dim: int,
    mean: np.ndarray | None = None,
    var: np.ndarray | None = None,
    gamma: np.ndarray | None = None,
    beta: np.ndarray | None = None,
    eta: float = 0.1,
    eps: float = 1e-5,
) -> BalancedNormState:
    """Fresh state with every class seeded from one (mean, var) pair.

    With identical per-class statistics the balanced globals equal that pair,
    so a converted model reproduces its source normalization exactly.
    """
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
    var = np.ones(dim) if var is None else np.asarray(var, dtype=np.float64)
    return BalancedNormState(
        class_means=np.tile(mean, (num_classes, 1)),
        class_vars=np.maximum(np.tile(var, (num_classes, 1)), VAR_FLOOR),
        gamma=np.ones(dim) if gamma is None else np.asarray(gamma, dtype=np.float64).copy(),
        beta=np.zeros(dim) if beta is None else np.asarray(beta, dtype=np.float64).copy(),
        eta=eta,
        eps=eps,
    )


def update_class_stats(
    state: BalancedNormState,
    features: Tensor,
    pseudo_labels,
    denominator: str = FEATURE_DIM,
    sample_mask=None,
) -> BalancedNormState:
    """One running update of the per-class statistics, in place.

    Classes absent from the batch are untouched.  The mean delta is applied
    first; the variance rule then uses residuals against the pre-update mean.
    ``sample_mask`` (optional bool array) drops samples from the statistic
    sums without affecting anything else.
    """
    z = as_batch(features, width=state.dim, name="features")
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    if labels.shape != (z.shape[0],):
        raise DimMismatch(
            f"got {labels.shape[0] if labels.ndim == 1 else labels.shape} labels "
            f"for batch of {z.shape[0]}"
        )
    k_count = state.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= k_count):
        raise LabelOutOfRange(f"labels must lie in [0, {k_count})")
    if sample_mask is not None:
        keep = np.asarray(sample_mask, dtype=bool)
        z = z[keep]
        labels = labels[keep]

    for k in np.unique(labels):
        sel = z[labels == k]
        if denominator == FEATURE_DIM:
            denom = float(state.dim)
        elif denominator == CLASS_COUNT:
            denom = float(sel.shape[0])
        else:
            raise ValueError(f"unknown denominator mode {denominator!r}")
        resid = sel - state.class_means[k]
        dmu = state.eta * resid.sum(axis=0) / denom
        state.class_means[k] = state.class_means[k] + dmu
        bracket = (resid**2 - state.class_vars[k]).sum(axis=0)
        state.class_vars[k] = (
            state.class_vars[k] - dmu**2 + state.eta * bracket / denom
        )
    np.maximum(state.class_vars, VAR_FLOOR, out=state.class_vars)
    return state


def balanced_globals(state: BalancedNormState) -> BalancedGlobals:
    """Equal-weight fusion of the per-class statistics."""
    mu = state.class_means.mean(axis=0)
    var = (state.class_vars + (state.class_means - mu) ** 2).mean(axis=0)
    return BalancedGlobals(mean=mu, var=var)


def normalize(state: BalancedNormState, features: Tensor) -> Tensor:
    """Affine-normalize features with the balanced global statistics."""
    z = as_batch(features, width=state.dim, name="features")
    g = balanced_globals(state)
    xhat = (z - g.mean) / np.sqrt(g.var + state.eps)
    return state.gamma * xhat + state.beta


def update_standard_stats(
    state: StandardNormState, features: Tensor, sample_mask=None
) -> None:
    """Momentum update of plain running moments from raw batch statistics."""
    z = as_batch(features, width=state.dim, name="features")
    if sample_mask is not None:
        z = z[np.asarray(sample_mask, dtype=bool)]
    if z.shape[0] == 0:
        return
    batch_mean = z.mean(axis=0)
    batch_var = z.var(axis=0)
    state.mean = state.mean + state.eta * (batch_mean - state.mean)
    state.var = state.var + state.eta * (batch_var - state.var)
    np.maximum(state.var, VAR_FLOOR, out=state.var)


def state_debug_dict(state: BalancedNormState) -> dict:
    """JSON-ready dump of one balanced layer for inspection."""
    return {
        "K": state.num_classes,
        "d": state.dim,
        "eta": state.eta,
        "means": state.class_means.tolist(),
        "vars": state.class_vars.tolist(),
        "gamma": state.gamma.tolist(),
        "beta": state.beta.tolist(),
    }
