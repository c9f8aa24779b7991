"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: int = 512,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is re-evaluated from scratch at every probe and must read the current
    ``.data`` of each tensor in ``inputs``. At most ``max_coords`` coordinates
    per input are probed, chosen by a seeded permutation.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("grad_check requires float64 tensors")
        if not t.requires_grad:
            raise ContractError(f"grad_check input {t!r} does not require grad")

    loss = f()
    base = loss.data.copy()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    again = f().data
    if not np.array_equal(base, again):
        raise ContractError("f is not deterministic across probe evaluations")

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = rng.permutation(flat.size)[:max_coords]
        ga_flat = ga.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = ga_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
