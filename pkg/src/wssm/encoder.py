"""Hierarchical coarse-to-fine encoder sharing one block stack across scales."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import ConfigurationError, ScaleSpec, patchify
from .numerics import tensor as tp
from .ssmblocks import tf_block


@dataclass(frozen=True)
class HierarchySpec:
    """Scales ordered coarsest (largest window) first."""

    scales: tuple[ScaleSpec, ...]

    def counts(self, length: int) -> list[int]:
        return [s.count(length) for s in self.scales]

    def validate(self, length: int, kernel: int = 1) -> list[int]:
        if not self.scales:
            raise ConfigurationError("hierarchy needs at least one scale")
        counts = self.counts(length)
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ConfigurationError(f"patch counts {counts} must increase from coarse to fine")
        for s, n in zip(self.scales, counts):
            if n < kernel:
                raise ConfigurationError(
                    f"scale (window={s.window}, stride={s.stride}) yields {n} patches, "
                    f"fewer than the filter length {kernel}"
                )
        return counts


def encode_scale(s, blocks: Sequence) -> tp.Tensor:
    z = tp.as_tensor(s)
    for block in blocks:
        z = tf_block(z, block)
    return z


def pool_scale(z) -> tp.Tensor:
    return tp.mean(z, axis=-2, keepdims=True)


def wrap_with_boundary(s, hp) -> tp.Tensor:
    s, hp = tp.as_tensor(s), tp.as_tensor(hp)
    if hp.shape[-2] != 1 or hp.shape[:-2] != s.shape[:-2] or hp.shape[-1] != s.shape[-1]:
        raise ValueError(f"boundary token shape {hp.shape} does not match sequence {s.shape}")
    return tp.concat([hp, s, hp], axis=-2)


def strip_boundary(z) -> tp.Tensor:
    z = tp.as_tensor(z)
    if z.shape[-2] < 3:
        raise ValueError(f"cannot strip boundary tokens from length {z.shape[-2]}")
    return tp.getitem(z, (Ellipsis, slice(1, z.shape[-2] - 1), slice(None)))


def interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Endpoint-aligned linear interpolation as an (n_dst, n_src) matrix."""
    if n_src < 1 or n_dst < 1:
        raise ValueError("lengths must be positive")
    if n_src == n_dst:
        return np.eye(n_src)
    w = np.zeros((n_dst, n_src))
    if n_src == 1:
        w[:, 0] = 1.0
        return w
    if n_dst == 1:
        w[0, 0] = 1.0
        return w
    pos = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_src - 2)
    frac = pos - lo
    w[np.arange(n_dst), lo] = 1.0 - frac
    w[np.arange(n_dst), lo + 1] += frac
    return w


def upscale(z, n_dst: int) -> tp.Tensor:
    z = tp.as_tensor(z)
    n_src = z.shape[-2]
    if n_src == n_dst:
        return z
    return tp.matmul(interp_matrix(n_src, n_dst), z)


def hierarchical_encode(h, hierarchy: HierarchySpec, blocks: Sequence, patch_params: Sequence,
                        return_scales=False):
    """Encode each scale coarse to fine, carrying pooled context as boundary tokens.

    ``patch_params[i]`` is the projection for ``hierarchy.scales[i]``. The result
    is the sum of all scale outputs interpolated to the finest patch count.
    """
    h = tp.as_tensor(h)
    kernel = 1
    if blocks:
        d = h.shape[-1]
        kernel = blocks[0]["filter"]["bias"].shape[-1] // d
    counts = hierarchy.validate(h.shape[-2], kernel)
    outputs, prev = [], None
    for scale, proj in zip(hierarchy.scales, patch_params):
        s = patchify(h, scale, proj)
        if prev is None:
            z = encode_scale(s, blocks)
        else:
            z = strip_boundary(encode_scale(wrap_with_boundary(s, pool_scale(prev)), blocks))
        outputs.append(z)
        prev = z
    n_fine = counts[-1]
    total = upscale(outputs[0], n_fine)
    for z in outputs[1:]:
        total = tp.add(total, upscale(z, n_fine))
    return (total, outputs) if return_scales else total
