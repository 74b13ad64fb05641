"""Training losses and loss weights.

Supervised loss is cross entropy plus soft Dice on probabilities. The
consistency loss first pulls the (detached) teacher prediction toward the
student wherever the teacher is uncertain, then charges cross entropy between
them plus a log penalty on lingering uncertainty. Its weight combines the
Gaussian ramp-up with the inverse feature uncertainty and the negative log of
segmentation uncertainty.

Teacher probabilities and uncertainty maps enter as plain numpy arrays: they
are constants here, gradient reaches only the student tensor (through both of
its appearances in the consistency term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Graph, OpKind, Tensor, scalar


@dataclass
class LossConfig:
    beta: float = 0.001
    eps_u: float = 1e-6
    eps_f: float = 1e-6
    ramp_len: int = 800
    omega_max: float = 0.1
    dice_smooth: float = 1e-5

    def validate(self) -> None:
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 < self.eps_u < 0.5:
            raise ValueError(f"eps_u must lie in (0, 0.5), got {self.eps_u}")
        if self.ramp_len < 1:
            raise ValueError(f"ramp_len must be >= 1, got {self.ramp_len}")


def one_hot(target: np.ndarray, num_classes: int) -> np.ndarray:
    target = np.asarray(target)
    if target.min(initial=0) < 0 or target.max(initial=0) >= num_classes:
        raise ValueError(f"class indices must lie in [0, {num_classes}), got "
                         f"[{target.min()}, {target.max()}]")
    y = np.zeros((num_classes, *target.shape), dtype=np.float32)
    for c in range(num_classes):
        y[c][target == c] = 1.0
    return y


# -- supervised losses ---------------------------------------------------------


def cross_entropy_loss(g: Graph, probs: Tensor, target: np.ndarray, eps: float = 1e-6) -> Tensor:
    """Mean over voxels of -log p[target], probabilities clamped to [eps, 1]."""
    m = probs.data.shape[0]
    if target.shape != probs.data.shape[1:]:
        raise ShapeError(f"target shape {target.shape} does not match probs {probs.data.shape}")
    y = one_hot(target, m)
    return _masked_cross_entropy(g, probs, y, n_voxels=target.size, eps=eps)


def _masked_cross_entropy(g: Graph, probs: Tensor, onehot: np.ndarray, n_voxels: int, eps: float) -> Tensor:
    logp = g.apply(OpKind.LOG, [g.apply(OpKind.CLAMP, [probs], lo=eps, hi=1.0)])
    total = g.apply(OpKind.REDUCE_SUM, [g.apply(OpKind.MUL, [logp, Tensor(onehot)])])
    return g.apply(OpKind.SCALAR_MUL, [total], c=-1.0 / n_voxels)


def dice_loss(g: Graph, probs: Tensor, target: np.ndarray, smooth: float = 1e-5) -> Tensor:
    """1 - mean soft Dice over foreground classes."""
    m = probs.data.shape[0]
    if target.shape != probs.data.shape[1:]:
        raise ShapeError(f"target shape {target.shape} does not match probs {probs.data.shape}")
    y = one_hot(target, m)
    return _dice_from_selectors(
        g, probs, [(y * sel, sel) for sel in _class_selectors(m, probs.data.shape)], smooth
    )


def _class_selectors(m: int, shape: tuple[int, ...]) -> list[np.ndarray]:
    sels = []
    for c in range(1, m):
        sel = np.zeros(shape, dtype=np.float32)
        np.moveaxis(sel, -3, 0)[c] = 1.0
        sels.append(sel)
    return sels


def _dice_from_selectors(g, probs, pairs, smooth) -> Tensor:
    # each pair: (one-hot target restricted to a class/row, class/row selector)
    acc = None
    for ysel, sel in pairs:
        inter = g.apply(OpKind.REDUCE_SUM, [g.apply(OpKind.MUL, [probs, Tensor(ysel)])])
        psum = g.apply(OpKind.REDUCE_SUM, [g.apply(OpKind.MUL, [probs, Tensor(sel)])])
        num = g.apply(OpKind.ADD, [g.apply(OpKind.SCALAR_MUL, [inter], c=2.0), scalar(smooth)])
        den = g.apply(OpKind.ADD, [psum, scalar(float(ysel.sum()) + smooth)])
        ratio = g.apply(OpKind.DIV, [num, den])
        acc = ratio if acc is None else g.apply(OpKind.ADD, [acc, ratio])
    mean = g.apply(OpKind.SCALAR_MUL, [acc], c=1.0 / len(pairs))
    return g.apply(OpKind.SUB, [scalar(1.0), mean])


def supervised_loss(g: Graph, probs: Tensor, target: np.ndarray,
                    eps: float = 1e-6, smooth: float = 1e-5) -> Tensor:
    """Cross entropy plus soft Dice."""
    return g.apply(OpKind.ADD, [
        cross_entropy_loss(g, probs, target, eps=eps),
        dice_loss(g, probs, target, smooth=smooth),
    ])


def supervised_loss_rows(g: Graph, probs: Tensor, targets: dict[int, np.ndarray],
                         eps: float = 1e-6, smooth: float = 1e-5) -> Tensor:
    """Mean supervised loss over the labeled rows of a batched (N,M,H,W) tensor.

    `targets` maps row index to its (H,W) label map; other rows contribute
    nothing. Equals the average of per-row supervised losses.
    """
    if not targets:
        raise ValueError("supervised loss requested with no labeled rows")
    n, m, h, w = probs.data.shape
    y = np.zeros((n, m, h, w), dtype=np.float32)
    pairs = []
    for row, tgt in targets.items():
        y[row] = one_hot(tgt, m)
        for c in range(1, m):
            ysel = np.zeros((n, m, h, w), dtype=np.float32)
            ysel[row, c] = y[row, c]
            sel = np.zeros((n, m, h, w), dtype=np.float32)
            sel[row, c] = 1.0
            pairs.append((ysel, sel))
    ce = _masked_cross_entropy(g, probs, y, n_voxels=len(targets) * h * w, eps=eps)
    dl = _dice_from_selectors(g, probs, pairs, smooth)
    return g.apply(OpKind.ADD, [ce, dl])


# -- consistency ----------------------------------------------------------------


def modify_teacher(g: Graph, teacher_probs: np.ndarray, student_probs: Tensor,
                   u_v_map: np.ndarray) -> Tensor:
    """Per-voxel interpolation (1-u) * teacher + u * student.

    Teacher and uncertainty are detached constants; the output carries the
    student's gradient scaled by u.
    """
    t = np.asarray(teacher_probs, dtype=np.float32)
    if t.shape != student_probs.data.shape:
        raise ShapeError(f"teacher {t.shape} vs student {student_probs.data.shape}")
    u = np.asarray(u_v_map, dtype=np.float32)
    if u.shape != t.shape[:-3] + t.shape[-2:]:
        raise ShapeError(f"uncertainty map {u.shape} does not match {t.shape}")
    if u.size and (u.min() < 0.0 or u.max() > 1.0):
        raise ValueError("u_v must lie in [0, 1]")
    ub = np.broadcast_to(np.expand_dims(u, -3), t.shape).astype(np.float32)
    fixed = Tensor((1.0 - ub) * t)
    return g.apply(OpKind.ADD, [g.apply(OpKind.MUL, [student_probs, Tensor(ub)]), fixed])


def consistency_loss(g: Graph, t_prime: Tensor, student_probs: Tensor,
                     u_v_map: np.ndarray, beta: float, eps_u: float = 1e-6) -> Tensor:
    """Cross entropy of the student against the modified teacher plus the
    beta-weighted log penalty on voxel uncertainty, averaged over voxels."""
    m = student_probs.data.shape[-3]
    n_voxels = student_probs.data.size // m
    logt = g.apply(OpKind.LOG, [g.apply(OpKind.CLAMP, [t_prime], lo=eps_u, hi=1.0)])
    ce_sum = g.apply(OpKind.REDUCE_SUM, [g.apply(OpKind.MUL, [logt, student_probs])])
    u = np.clip(np.asarray(u_v_map, dtype=np.float64), eps_u, 1.0 - eps_u)
    beta_term = float(beta * np.log(1.0 - u).sum())
    total = g.apply(OpKind.ADD, [ce_sum, scalar(beta_term)])
    return g.apply(OpKind.SCALAR_MUL, [total], c=-1.0 / n_voxels)


def mse_consistency(g: Graph, student_probs: Tensor, teacher_probs: np.ndarray) -> Tensor:
    """Plain mean-teacher consistency: mean squared difference of probabilities."""
    d = g.apply(OpKind.SUB, [student_probs, Tensor(np.asarray(teacher_probs, dtype=np.float32))])
    return g.apply(OpKind.REDUCE_MEAN, [g.apply(OpKind.MUL, [d, d])])


# -- weights ---------------------------------------------------------------------


def rampup_weight(step: int, ramp_len: int, omega_max: float = 0.1) -> float:
    """Gaussian ramp omega_max * exp(-5 (1 - S/L)^2), flat after S = L."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if ramp_len < 1:
        raise ValueError(f"ramp_len must be >= 1, got {ramp_len}")
    s = min(step, ramp_len)
    phase = 1.0 - s / ramp_len
    return omega_max * math.exp(-5.0 * phase * phase)


def double_uncertainty_weight(omega: float, u_f: float, u_s: float,
                              eps_f: float = 1e-6, eps_u: float = 1e-6) -> float:
    """lambda = -(omega / U_f) * log(U_s), with both uncertainties floored."""
    u_f = max(float(u_f), eps_f)
    u_s = min(max(float(u_s), eps_u), 1.0 - eps_u)
    return -(omega / u_f) * math.log(u_s)


def total_loss(g: Graph, supervised: Tensor | None, consistency: Tensor | None,
               lam: float) -> Tensor:
    """supervised + lam * consistency; either part may be absent."""
    parts = []
    if supervised is not None:
        parts.append(supervised)
    if consistency is not None and lam != 0.0:
        parts.append(g.apply(OpKind.SCALAR_MUL, [consistency], c=lam))
    if not parts:
        raise ValueError("total_loss needs at least one component")
    out = parts[0]
    for p in parts[1:]:
        out = g.apply(OpKind.ADD, [out, p])
    return out
