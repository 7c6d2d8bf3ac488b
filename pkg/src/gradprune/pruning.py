"""Magnitude pruning with cumulative boolean masks.

Masks map parameter name -> boolean array (True = keep). Pruning is
cumulative: an entry that is masked once stays masked, and each prune event
only removes however many additional weights are needed to reach the target
quota. The uniform policy rounds each tensor's quota half-up on
target * size; the global policy floors target * total for its single pool.
Ties in magnitude are broken deterministically: lower flat index first
within a tensor, and dict order across tensors for the global policy.

Two policies:

    uniform  every tensor is pruned to the target fraction independently
    global   one pool: the smallest surviving magnitudes anywhere are removed
             until the aggregate quota is met
"""

from __future__ import annotations

import math

import numpy as np

POLICIES = ("uniform", "global")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def fresh_masks(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """All-ones masks matching the given arrays."""
    return {name: np.ones(arr.shape, dtype=bool) for name, arr in weights.items()}


def _check_aligned(weights: dict[str, np.ndarray], masks: dict[str, np.ndarray]) -> None:
    if list(weights.keys()) != list(masks.keys()):
        raise ValueError(
            f"weights and masks disagree on names: {sorted(weights)} vs {sorted(masks)}"
        )
    for name in weights:
        if weights[name].shape != masks[name].shape:
            raise ValueError(
                f"mask {name} has shape {masks[name].shape}, weights have "
                f"shape {weights[name].shape}"
            )


def magnitude_prune(
    weights: dict[str, np.ndarray],
    masks: dict[str, np.ndarray],
    target: float,
    policy: str = "uniform",
) -> dict[str, np.ndarray]:
    """Return new masks meeting the target sparsity; never unmasks anything.

    ``weights`` supplies magnitudes only (values under existing zeros are
    ignored). The input masks are not modified.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target sparsity must be in [0, 1], got {target}")
    if not weights:
        raise ValueError("nothing to prune: empty weight dict")
    _check_aligned(weights, masks)

    if policy == "uniform":
        new_masks = {}
        for name, w in weights.items():
            alive = masks[name].ravel()
            quota = _round_half_up(target * w.size)
            needed = quota - (w.size - int(alive.sum()))
            if needed < 0:
                raise ValueError(
                    f"target {target} asks for {quota} zeros in {name} but "
                    f"{w.size - int(alive.sum())} are already masked; masks "
                    f"never shrink"
                )
            new = alive.copy()
            if needed > 0:
                alive_idx = np.flatnonzero(alive)
                order = np.argsort(np.abs(w.ravel())[alive_idx], kind="stable")
                new[alive_idx[order[:needed]]] = False
            new_masks[name] = new.reshape(w.shape)
        return new_masks

    names = list(weights.keys())
    mags = np.concatenate([np.abs(weights[n].ravel()) for n in names])
    alive = np.concatenate([masks[n].ravel() for n in names])
    total = mags.size
    quota = int(math.floor(target * total))
    needed = quota - (total - int(alive.sum()))
    if needed < 0:
        raise ValueError(
            f"target {target} asks for {quota} zeros but "
            f"{total - int(alive.sum())} are already masked; masks never shrink"
        )
    new = alive.copy()
    if needed > 0:
        alive_idx = np.flatnonzero(alive)
        order = np.argsort(mags[alive_idx], kind="stable")
        new[alive_idx[order[:needed]]] = False
    new_masks = {}
    offset = 0
    for name in names:
        size = weights[name].size
        new_masks[name] = new[offset:offset + size].reshape(weights[name].shape)
        offset += size
    return new_masks


def apply_masks(params, masks: dict[str, np.ndarray]) -> None:
    """Zero out masked entries in place. ``params`` maps name -> Tensor (or
    any object with a float64 ``.data`` ndarray)."""
    for name, mask in masks.items():
        if name not in params:
            raise ValueError(f"mask {name!r} does not match any parameter")
        data = params[name].data
        if data.shape != mask.shape:
            raise ValueError(
                f"mask {name} has shape {mask.shape}, parameter has shape {data.shape}"
            )
        data[~mask] = 0.0


def zero_masked_grads(params, masks: dict[str, np.ndarray]) -> None:
    """Zero gradients of masked entries so the optimizer cannot revive them."""
    for name, mask in masks.items():
        grad = params[name].grad
        if grad is None:
            raise ValueError(f"parameter {name} has no gradient to mask")
        grad[~mask] = 0.0


def mask_sparsity(masks: dict[str, np.ndarray]) -> float:
    """Aggregate fraction of masked (zeroed) entries across all tensors."""
    total = sum(m.size for m in masks.values())
    if total == 0:
        raise ValueError("mask set is empty")
    zeros = sum(int(m.size - m.sum()) for m in masks.values())
    return zeros / total


def sparsity_report(masks: dict[str, np.ndarray]) -> dict:
    """Aggregate and per-tensor sparsity, plus raw counts."""
    per_tensor = {
        name: float((m.size - m.sum()) / m.size) for name, m in masks.items()
    }
    total = sum(m.size for m in masks.values())
    zeros = sum(int(m.size - m.sum()) for m in masks.values())
    return {
        "aggregate": zeros / total,
        "per_tensor": per_tensor,
        "total_prunable": total,
        "total_masked": zeros,
    }


def masks_subset_of(old: dict[str, np.ndarray], new: dict[str, np.ndarray]) -> bool:
    """True when every entry masked in ``old`` is still masked in ``new``."""
    if set(old) != set(new):
        return False
    return all(bool(np.all(new[n] <= old[n])) for n in old)
