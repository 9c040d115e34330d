"""Fully connected denoiser predicting the clean vector from a noisy one.

The network takes the noisy vector concatenated with a sinusoidal
timestep embedding, applies tanh hidden layers and a linear output head,
and predicts the clean vector directly.  Gradients are exact analytic
backpropagation; there is no autodiff dependency, which keeps checkpoints
byte-reproducible and lets the test suite verify every gradient
coordinate against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .schedule import NoiseSchedule, loss_weights, q_sample


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps.

    t may be a scalar or a 1-D array; returns shape (dim,) or (len(t), dim).
    Distinct steps in [1, max_period) map to distinct rows.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb[0] if scalar else emb


@dataclass
class DenoiserParams:
    """Weights and biases of the denoiser MLP.

    layer_dims runs input width -> hidden widths -> output width, where
    input and output width both equal the length of the vectors being
    denoised.  weights[0] additionally has time_embed_dim extra input rows
    for the timestep embedding.
    """

    layer_dims: tuple[int, ...]
    time_embed_dim: int
    model_tag: str
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(
            layer_dims=self.layer_dims,
            time_embed_dim=self.time_embed_dim,
            model_tag=self.model_tag,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class ParamGrads:
    """Gradient arrays shaped exactly like DenoiserParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_params(
    layer_dims, time_embed_dim: int, seed: int, model_tag: str = "CGD"
) -> DenoiserParams:
    """Initialize weights uniform in +-1/sqrt(fan_in), biases zero.

    Deterministic for a fixed seed; at least one hidden layer required.
    """
    layer_dims = tuple(int(d) for d in layer_dims)
    if len(layer_dims) < 3:
        raise ConfigError("denoiser needs at least one hidden layer")
    if any(d <= 0 for d in layer_dims) or time_embed_dim <= 0:
        raise ConfigError(f"zero-width layer in dims {layer_dims} + temb {time_embed_dim}")
    rng = np.random.default_rng(seed)
    fan_ins = [layer_dims[0] + time_embed_dim] + list(layer_dims[1:-1])
    weights, biases = [], []
    for fan_in, fan_out in zip(fan_ins, layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenoiserParams(
        layer_dims=layer_dims,
        time_embed_dim=time_embed_dim,
        model_tag=model_tag,
        weights=weights,
        biases=biases,
    )


def _forward(params: DenoiserParams, x: np.ndarray, t):
    """Batched forward pass keeping activations for backprop.

    x has shape (B, in_dim); t is a scalar step or a length-B array.
    Returns (prediction, activations) where activations[0] is the
    embedded input and activations[l] the output of hidden layer l.
    """
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(
            f"input width {x.shape[-1] if x.ndim else '?'} != model width {params.in_dim}"
        )
    emb = timestep_embedding(t, params.time_embed_dim)
    if emb.ndim == 1:
        emb = np.broadcast_to(emb, (x.shape[0], params.time_embed_dim))
    h = np.concatenate([x, emb], axis=1)
    acts = [h]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if l != last:
            h = np.tanh(h)
            acts.append(h)
    return h, acts


def predict_x0(params: DenoiserParams, x_t: np.ndarray, t) -> np.ndarray:
    """Denoiser output for a single vector or a batch of rows."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    if single:
        x_t = x_t[None, :]
    out, _ = _forward(params, x_t, t)
    return out[0] if single else out


def loss_and_grad(
    params: DenoiserParams,
    x0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
) -> tuple[float, ParamGrads]:
    """Weighted denoising loss over a batch and its exact gradients.

    Each sample contributes w_t * ||pred - x0||^2 where w_t comes from the
    schedule (1 at t = 1, the SNR-drop weight after); the batch loss is
    the mean, so the learning rate is batch-size invariant.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t)
    eps = np.asarray(eps, dtype=np.float64)
    B = x0.shape[0]
    x_t = q_sample(x0, t, eps, sched)
    pred, acts = _forward(params, x_t, t)

    w = loss_weights(sched)[t - 1]
    diff = pred - x0
    loss = float(np.mean(w * np.sum(diff * diff, axis=1)))
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")

    # Backprop: linear head, tanh hidden layers.
    g = (2.0 / B) * w[:, None] * diff
    grads_w = [np.empty(0)] * len(params.weights)
    grads_b = [np.empty(0)] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ g
        grads_b[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l].T) * (1.0 - acts[l] * acts[l])
    return loss, ParamGrads(weights=grads_w, biases=grads_b)
