"""Time-frequency bidirectional state-space block.

Layout convention: features are (..., M, N, d) with M variables, N positions
and d channels. Every op is written against the tape in
:mod:`wssm.numerics.tensor` and is differentiable in all parameters.
"""

from __future__ import annotations

import math

import numpy as np

from .embedding import ConfigurationError
from .numerics import tensor as tp
from .numerics.tensor import selective_scan  # noqa: F401  re-exported
from .params import uniform_fan_in


def init_mamba_params(rng, d, expand=2, state=16, conv=4):
    inner = expand * d
    rank = math.ceil(d / 16)
    # dt initialised log-uniform in [1e-3, 1e-1]; bias is softplus^-1 of it
    dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=inner))
    return {
        "in_proj": uniform_fan_in(rng, d, (d, 2 * inner)),
        "conv_weight": uniform_fan_in(rng, conv, (inner, conv)),
        "conv_bias": uniform_fan_in(rng, conv, inner),
        "dt_down": uniform_fan_in(rng, inner, (inner, rank)),
        "dt_up": uniform_fan_in(rng, rank, (rank, inner)),
        "dt_bias": dt + np.log(-np.expm1(-dt)),
        "b_proj": uniform_fan_in(rng, inner, (inner, state)),
        "c_proj": uniform_fan_in(rng, inner, (inner, state)),
        "a_log": np.log(np.tile(np.arange(1, state + 1, dtype=np.float64), (inner, 1))),
        "d_skip": np.ones(inner),
        "out_proj": uniform_fan_in(rng, inner, (inner, d)),
    }


def init_block_params(rng, d, n_vars, expand=2, state=16, conv=4, kernel=5):
    hidden = math.ceil(n_vars / 2)
    f_bias = np.zeros(kernel * d)
    f_bias[:d] = 1.2785  # silu(1.2785) ~ 1: filter starts near the identity
    return {
        "norm": {"gain": np.ones(d), "bias": np.zeros(d)},
        "fwd": init_mamba_params(rng, d, expand, state, conv),
        "bwd": init_mamba_params(rng, d, expand, state, conv),
        "filter": {"weight": uniform_fan_in(rng, d, (d, kernel * d)) * 0.1, "bias": f_bias},
        "interact": {
            "w1": uniform_fan_in(rng, n_vars, (n_vars, hidden)),
            "b1": np.zeros(hidden),
            "w2": uniform_fan_in(rng, hidden, (hidden, n_vars)),
            "b2": np.zeros(n_vars),
        },
    }


def mamba_dir(z, theta) -> tp.Tensor:
    """One causal selective-scan pass over the position axis, per variable."""
    z = tp.as_tensor(z)
    inner = theta["d_skip"].shape[-1]
    xz = tp.linear(z, theta["in_proj"])
    stream = tp.getitem(xz, (Ellipsis, slice(0, inner)))
    gate = tp.getitem(xz, (Ellipsis, slice(inner, 2 * inner)))
    stream = tp.silu(tp.causal_conv1d(stream, theta["conv_weight"], theta["conv_bias"]))
    dt_low = tp.linear(stream, theta["dt_down"])
    delta = tp.softplus(tp.linear(dt_low, theta["dt_up"], theta["dt_bias"]))
    b = tp.linear(stream, theta["b_proj"])
    c = tp.linear(stream, theta["c_proj"])
    a = tp.mul(tp.exp(theta["a_log"]), -1.0)
    y = tp.selective_scan(stream, delta, a, b, c, theta["d_skip"])
    y = tp.mul(y, tp.silu(gate))
    return tp.linear(y, theta["out_proj"])


def bi_mamba(z, theta_f, theta_b) -> tp.Tensor:
    z = tp.as_tensor(z)
    fwd = mamba_dir(z, theta_f)
    bwd = mamba_dir(tp.flip(z, -2), theta_b)
    return tp.add(fwd, tp.flip(bwd, -2))


def filter_kernel(z_t, f_params) -> tp.Tensor:
    """Data-dependent kernels (..., M, k, d) from the position-mean of ``z_t``."""
    d = z_t.shape[-1]
    k = f_params["bias"].shape[-1] // d
    g = tp.mean(z_t, axis=-2)
    ker = tp.silu(tp.linear(g, f_params["weight"], f_params["bias"]))
    return tp.reshape(ker, g.shape[:-1] + (k, d))


def freq_filter(z_t, f_params) -> tp.Tensor:
    z_t = tp.as_tensor(z_t)
    n, d = z_t.shape[-2], z_t.shape[-1]
    k = f_params["bias"].shape[-1] // d
    if k > n:
        raise ConfigurationError(f"filter kernel length {k} exceeds sequence length {n}")
    return tp.circular_conv(z_t, filter_kernel(z_t, f_params))


def interaction_gate(z_f, i_params) -> tp.Tensor:
    """Per-channel gate in (0, 1)^M mixing across variables; shape (..., M, 1, d)."""
    g = tp.swapaxes(tp.mean(z_f, axis=-2), -1, -2)  # (..., d, M)
    hid = tp.silu(tp.linear(g, i_params["w1"], i_params["b1"]))
    gate = tp.sigmoid(tp.linear(hid, i_params["w2"], i_params["b2"]))
    gate = tp.swapaxes(gate, -1, -2)
    return tp.reshape(gate, gate.shape[:-1] + (1, gate.shape[-1]))


def interact(z_f, i_params) -> tp.Tensor:
    z_f = tp.as_tensor(z_f)
    return tp.mul(z_f, interaction_gate(z_f, i_params))


def tf_block(z, params) -> tp.Tensor:
    z = tp.as_tensor(z)
    zn = tp.add(tp.mul(tp.layer_norm(z), params["norm"]["gain"]), params["norm"]["bias"])
    z_t = bi_mamba(zn, params["fwd"], params["bwd"])
    z_f = freq_filter(z_t, params["filter"])
    return tp.add(z, interact(z_f, params["interact"]))
