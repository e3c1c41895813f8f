"""Parameter trees: nested dicts of arrays keyed by component name.

Flattened names join the path with dots (``encoder.0.fwd.in_proj``), which is
the naming used by checkpoints and the optimizer.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics.tensor import leaf


def flatten(tree, prefix=""):
    out = {}
    for key in sorted(tree):
        name = f"{prefix}{key}"
        val = tree[key]
        if isinstance(val, dict):
            out.update(flatten(val, name + "."))
        else:
            out[name] = val
    return out


def unflatten(flat):
    tree = {}
    for name, val in flat.items():
        node = tree
        *path, last = name.split(".")
        for p in path:
            node = node.setdefault(p, {})
        node[last] = val
    return tree


def map_tree(fn, tree):
    return {k: map_tree(fn, v) if isinstance(v, dict) else fn(v) for k, v in tree.items()}


def to_leaves(tree):
    return map_tree(leaf, tree)


def grads_of(leaves):
    """Gradient tree matching ``leaves``; untouched leaves get zeros."""
    return map_tree(lambda t: np.zeros_like(t.data) if t.grad is None else t.grad, leaves)


def zeros_like_tree(tree):
    return map_tree(np.zeros_like, tree)


def uniform_fan_in(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
