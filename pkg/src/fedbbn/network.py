"""Feedforward classifier with normalization layers between linear maps.

The network is Linear -> Norm -> ReLU per hidden layer, then a final Linear
to the class logits.  Two norm flavors exist: the class-balanced layer and a
plain running-moment layer.  The backward pass produces gradients only for
the norm layers' affine parameters (gamma, beta); running statistics are
treated as constants of the loss, so the cache only needs the normalized
pre-affine activations and the scale each layer actually used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import balanced_norm as bn
from .errors import (
    MissingPseudoLabels,
    ShapeMismatch,
    StaleCache,
    StructureMismatch,
)
from .tensor import Tensor, as_batch

BALANCED = "balanced"
STANDARD = "standard"

UPDATE_STATS = "update"
FROZEN_STATS = "frozen"

NormState = bn.BalancedNormState | bn.StandardNormState


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    norm_kind: str = BALANCED
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2 or not self.hidden_dims:
            raise ValueError("need input_dim >= 1, num_classes >= 2, one hidden layer")
        if self.norm_kind not in (BALANCED, STANDARD):
            raise ValueError(f"unknown norm_kind {self.norm_kind!r}")
        if self.activation != "relu":
            raise ValueError("only relu is supported")


@dataclass
class LinearLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray    # (out_dim,)

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weight.copy(), self.bias.copy())


@dataclass
class ModelParams:
    spec: NetworkSpec
    linears: list[LinearLayer]   # len(hidden_dims) + 1 in forward order
    norms: list[NormState]       # one per hidden layer

    def copy(self) -> "ModelParams":
        return ModelParams(
            spec=self.spec,
            linears=[l.copy() for l in self.linears],
            norms=[n.copy() for n in self.norms],
        )


@dataclass
class ForwardCache:
    """Backprop context captured during one forward pass.

    Holds per-norm-layer snapshots (normalized activations, the scale and
    gamma in effect) plus ReLU masks, so affine gradients stay correct even
    if statistics or affine parameters change after the forward.  Layer
    inputs are kept only when requested (pretraining needs them for weight
    gradients).
    """

    params: ModelParams
    fingerprint: tuple
    batch_size: int
    norm_xhat: list[np.ndarray] = field(default_factory=list)
    norm_scale: list[np.ndarray] = field(default_factory=list)
    norm_gamma: list[np.ndarray] = field(default_factory=list)
    relu_mask: list[np.ndarray] = field(default_factory=list)
    layer_inputs: list[np.ndarray] | None = None


@dataclass
class AffineGrads:
    """d(loss)/d(gamma), d(loss)/d(beta) per norm layer, forward order."""

    gammas: list[np.ndarray]
    betas: list[np.ndarray]


def structure_fingerprint(params: ModelParams) -> tuple:
    lin = tuple(("lin",) + l.weight.shape + l.bias.shape for l in params.linears)
    norms = []
    for n in params.norms:
        if isinstance(n, bn.BalancedNormState):
            norms.append((BALANCED, n.num_classes, n.dim))
        else:
            norms.append((STANDARD, n.dim))
    return lin + tuple(norms)


def check_congruent(a: ModelParams, b: ModelParams) -> None:
    if structure_fingerprint(a) != structure_fingerprint(b):
        raise StructureMismatch("model parameter structures differ")


def init_params(
    spec: NetworkSpec, rng: np.random.Generator, weight_scale: float | None = None
) -> ModelParams:
    """He-style initialization; norm states start at (0, 1) statistics."""
    dims = [spec.input_dim, *spec.hidden_dims, spec.num_classes]
    linears = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / d_in)
        linears.append(
            LinearLayer(
                weight=rng.normal(0.0, scale, size=(d_in, d_out)),
                bias=np.zeros(d_out),
            )
        )
    norms: list[NormState] = []
    for h in spec.hidden_dims:
        if spec.norm_kind == BALANCED:
            norms.append(bn.init_balanced_state(spec.num_classes, h))
        else:
            norms.append(
                bn.StandardNormState(
                    mean=np.zeros(h), var=np.ones(h),
                    gamma=np.ones(h), beta=np.zeros(h),
                )
            )
    return ModelParams(spec=spec, linears=linears, norms=norms)


def forward(
    params: ModelParams,
    batch: Tensor,
    norm_mode: str = FROZEN_STATS,
    pseudo_labels=None,
    stats_mask=None,
    denominator: str = bn.FEATURE_DIM,
    cache_inputs: bool = False,
) -> tuple[Tensor, ForwardCache]:
    """Run the network, optionally refreshing norm statistics from the batch.

    In update mode, statistics are refreshed first and the refreshed values
    normalize the same batch.  Balanced layers then require one pseudo-label
    per sample.  In frozen mode no state field changes.
    """
    if norm_mode not in (UPDATE_STATS, FROZEN_STATS):
        raise ValueError(f"unknown norm_mode {norm_mode!r}")
    x = as_batch(batch, width=params.spec.input_dim, name="batch")
    if x.shape[0] < 1:
        raise ShapeMismatch("batch must contain at least one row")
    update = norm_mode == UPDATE_STATS
    needs_labels = update and params.spec.norm_kind == BALANCED
    if needs_labels and pseudo_labels is None:
        raise MissingPseudoLabels(
            "balanced statistics update requires pseudo labels"
        )

    cache = ForwardCache(
        params=params,
        fingerprint=structure_fingerprint(params),
        batch_size=x.shape[0],
        layer_inputs=[] if cache_inputs else None,
    )
    a = x
    for i, lin in enumerate(params.linears[:-1]):
        if cache_inputs:
            cache.layer_inputs.append(a)
        z = a @ lin.weight + lin.bias
        norm = params.norms[i]
        if isinstance(norm, bn.BalancedNormState):
            if update:
                bn.update_class_stats(
                    norm, z, pseudo_labels,
                    denominator=denominator, sample_mask=stats_mask,
                )
            g = bn.balanced_globals(norm)
            mean, var = g.mean, g.var
        else:
            if update:
                bn.update_standard_stats(norm, z, sample_mask=stats_mask)
            mean, var = norm.mean, norm.var
        scale = 1.0 / np.sqrt(var + norm.eps)
        xhat = (z - mean) * scale
        y = norm.gamma * xhat + norm.beta
        a = np.maximum(y, 0.0)
        cache.norm_xhat.append(xhat)
        cache.norm_scale.append(scale)
        cache.norm_gamma.append(norm.gamma.copy())
        cache.relu_mask.append(y > 0.0)
    if cache_inputs:
        cache.layer_inputs.append(a)
    out = params.linears[-1]
    logits = a @ out.weight + out.bias
    return logits, cache


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def backward_affine(cache: ForwardCache, loss_grad_logits: Tensor) -> AffineGrads:
    """Backpropagate d(loss)/d(logits) to every norm layer's gamma and beta.

    Only activation Jacobians are applied on the way down; weight and bias
    gradients are never formed.
    """
    params = cache.params
    if structure_fingerprint(params) != cache.fingerprint:
        raise StaleCache("parameters were restructured after the forward pass")
    g = as_batch(loss_grad_logits, name="loss_grad_logits")
    if g.shape != (cache.batch_size, params.spec.num_classes):
        raise ShapeMismatch(
            f"loss gradient shape {g.shape} does not match logits "
            f"({cache.batch_size}, {params.spec.num_classes})"
        )
    n_hidden = len(params.norms)
    d_gammas: list[np.ndarray] = [None] * n_hidden
    d_betas: list[np.ndarray] = [None] * n_hidden
    g = g @ params.linears[-1].weight.T
    for i in range(n_hidden - 1, -1, -1):
        g = g * cache.relu_mask[i]
        d_gammas[i] = (g * cache.norm_xhat[i]).sum(axis=0)
        d_betas[i] = g.sum(axis=0)
        if i > 0:
            g = g * (cache.norm_gamma[i] * cache.norm_scale[i])
            g = g @ params.linears[i].weight.T
    return AffineGrads(gammas=d_gammas, betas=d_betas)


def zeros_like(params: ModelParams) -> ModelParams:
    """Structurally congruent params with every float field zeroed."""
    out = params.copy()
    for lin in out.linears:
        lin.weight.fill(0.0)
        lin.bias.fill(0.0)
    for i, norm in enumerate(out.norms):
        if isinstance(norm, bn.BalancedNormState):
            out.norms[i] = bn.BalancedNormState(
                class_means=np.zeros_like(norm.class_means),
                class_vars=np.zeros_like(norm.class_vars),
                gamma=np.zeros_like(norm.gamma),
                beta=np.zeros_like(norm.beta),
                eta=0.0,
                eps=0.0,
            )
        else:
            out.norms[i] = bn.StandardNormState(
                mean=np.zeros_like(norm.mean),
                var=np.zeros_like(norm.var),
                gamma=np.zeros_like(norm.gamma),
                beta=np.zeros_like(norm.beta),
                eta=0.0,
                eps=0.0,
            )
    return out


def params_axpy(accum: ModelParams, w: float, src: ModelParams) -> ModelParams:
    """Element-wise accum + w * src over every float field, statistics included."""
    check_congruent(accum, src)
    out = ModelParams(spec=accum.spec, linears=[], norms=[])
    for la, ls in zip(accum.linears, src.linears):
        out.linears.append(
            LinearLayer(weight=la.weight + w * ls.weight, bias=la.bias + w * ls.bias)
        )
    for na, ns in zip(accum.norms, src.norms):
        if isinstance(na, bn.BalancedNormState):
            out.norms.append(
                bn.BalancedNormState(
                    class_means=na.class_means + w * ns.class_means,
                    class_vars=na.class_vars + w * ns.class_vars,
                    gamma=na.gamma + w * ns.gamma,
                    beta=na.beta + w * ns.beta,
                    eta=na.eta + w * ns.eta,
                    eps=na.eps + w * ns.eps,
                )
            )
        else:
            out.norms.append(
                bn.StandardNormState(
                    mean=na.mean + w * ns.mean,
                    var=na.var + w * ns.var,
                    gamma=na.gamma + w * ns.gamma,
                    beta=na.beta + w * ns.beta,
                    eta=na.eta + w * ns.eta,
                    eps=na.eps + w * ns.eps,
                )
            )
    return out


def convert_to_balanced(params: ModelParams) -> ModelParams:
    """Replace running-moment layers by balanced layers seeding every class
    with the source statistics, so frozen-stats logits are unchanged."""
    if params.spec.norm_kind == BALANCED:
        return params.copy()
    spec = NetworkSpec(
        input_dim=params.spec.input_dim,
        hidden_dims=params.spec.hidden_dims,
        num_classes=params.spec.num_classes,
        norm_kind=BALANCED,
        activation=params.spec.activation,
    )
    norms: list[NormState] = []
    for norm in params.norms:
        norms.append(
            bn.init_balanced_state(
                spec.num_classes, norm.dim,
                mean=norm.mean, var=norm.var,
                gamma=norm.gamma, beta=norm.beta,
                eta=norm.eta, eps=norm.eps,
            )
        )
    return ModelParams(
        spec=spec, linears=[l.copy() for l in params.linears], norms=norms
    )
