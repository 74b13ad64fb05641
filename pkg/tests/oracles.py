"""Independent reference implementations used as test oracles.

Everything here is deliberately written without touching the package's
autodiff path: forward math is reimplemented in float64, gradients come from
central finite differences, and surface distances come from an all-pairs
brute force. Slow and obvious beats fast and shared.
"""

from __future__ import annotations

import numpy as np


# -- float64 forward reference ops ------------------------------------------


def conv2d_ref(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    squeezed = x.ndim == 3
    if squeezed:
        x = x[None]
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, co, h, wd))
    for nn in range(n):
        for o in range(co):
            acc = np.zeros((h, wd))
            for i in range(c):
                for a in range(kh):
                    for bb in range(kw):
                        acc += w[o, i, a, bb] * xp[nn, i, a:a + h, bb:bb + wd]
            out[nn, o] = acc + b[o]
    return out[0] if squeezed else out


def softmax_channel_ref(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=-3, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-3, keepdims=True)


def maxpool2x2_ref(x):
    x = np.asarray(x, dtype=np.float64)
    *lead, h, w = x.shape
    out = np.zeros((*lead, h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            block = x[..., 2 * i:2 * i + 2, 2 * j:2 * j + 2]
            out[..., i, j] = block.reshape(*lead, 4).max(axis=-1)
    return out


def upsample2x_ref(x):
    x = np.asarray(x, dtype=np.float64)
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


# -- central finite differences ---------------------------------------------


def central_fd(f, x, h=1e-3, indices=None):
    """Central finite-difference gradient of scalar f at float64 array x.

    `indices` restricts to a subset of flat coordinates (full gradient when
    None). Returns an array shaped like x with untested entries left at 0.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idxs = range(flat.size) if indices is None else indices
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(analytic, reference, indices=None, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    r = np.asarray(reference, dtype=np.float64).reshape(-1)
    if indices is not None:
        a, r = a[list(indices)], r[list(indices)]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(r)), floor)
    return float(np.max(np.abs(a - r) / denom))


def central_fd_filtered(f_loss_signs, x, indices, h=1e-3):
    """Central FD restricted to coordinates whose perturbation keeps every
    kink sign unchanged; one (loss, signs) evaluation per side.

    Returns (kept indices, fd values aligned with them).
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    keep, vals = [], []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp, sp = f_loss_signs(x)
        flat[i] = orig - h
        fm, sm = f_loss_signs(x)
        flat[i] = orig
        if np.array_equal(sp, sm):
            keep.append(i)
            vals.append((fp - fm) / (2.0 * h))
    return keep, np.array(vals)


def fd_valid_coords(f_signs, x, indices, h=1e-3):
    """Coordinates whose +/-h perturbation leaves every relu sign unchanged.

    FD across a kink measures the wrong one-sided slope; dropping those
    coordinates is the per-coordinate version of resampling away from kinks.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    keep = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        sp = f_signs(x)
        flat[i] = orig - h
        sm = f_signs(x)
        flat[i] = orig
        if np.array_equal(sp, sm):
            keep.append(i)
    return keep


# -- scalar loss recomputations ----------------------------------------------


def cross_entropy_ref(probs, target, eps):
    probs = np.asarray(probs, dtype=np.float64)
    h, w = target.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total -= np.log(min(max(probs[target[i, j], i, j], eps), 1.0))
    return total / (h * w)


def dice_loss_ref(probs, target, smooth, num_classes):
    probs = np.asarray(probs, dtype=np.float64)
    scores = []
    for c in range(1, num_classes):
        y = (target == c).astype(np.float64)
        p = probs[c]
        scores.append((2.0 * (p * y).sum() + smooth) / (p.sum() + y.sum() + smooth))
    return 1.0 - float(np.mean(scores))


def consistency_ref(t_prime, s, u_v, beta, eps):
    t_prime = np.clip(np.asarray(t_prime, dtype=np.float64), eps, 1.0)
    s = np.asarray(s, dtype=np.float64)
    u = np.clip(np.asarray(u_v, dtype=np.float64), eps, 1.0 - eps)
    m, h, w = s.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            ce = sum(np.log(t_prime[k, i, j]) * s[k, i, j] for k in range(m))
            total += ce + beta * np.log(1.0 - u[i, j])
    return -total / (h * w)


# -- float64 replica of the full network + composite loss ---------------------


def _pool_ref_with_idx(x):
    *lead, h, w = x.shape
    blocks = x.reshape(*lead, h // 2, 2, w // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def unet_forward_ref(params, x):
    """Float64 forward of the 2-down/2-up network; returns (logits, kink signs).

    The sign vector captures every relu activation pattern and pooling argmax
    so finite differences can be restricted to coordinates that do not cross
    a kink.
    """
    signs = []

    def conv_relu(prefix, t):
        pre = conv2d_ref(t, params[prefix + ".w"], params[prefix + ".b"])
        signs.append((pre > 0).reshape(-1))
        return np.maximum(pre, 0.0)

    def block(prefix, t):
        return conv_relu(prefix + ".conv2", conv_relu(prefix + ".conv1", t))

    def pool(t):
        out, idx = _pool_ref_with_idx(t)
        signs.append(idx.reshape(-1))
        return out

    e1 = block("enc1", np.asarray(x, dtype=np.float64))
    e2 = block("enc2", pool(e1))
    bott = block("bott", pool(e2))
    d1 = block("dec1", np.concatenate([upsample2x_ref(bott), e2], axis=0))
    d2 = block("dec2", np.concatenate([upsample2x_ref(d1), e1], axis=0))
    logits = conv2d_ref(d2, params["head.w"], params["head.b"])
    return logits, np.concatenate([s.astype(np.float64) for s in signs])


def composite_loss_ref(params, x, target, teacher_probs, u_v, lam, beta, eps, smooth):
    """Supervised plus lam * consistency loss in float64, with kink signs."""
    logits, signs = unet_forward_ref(params, x)
    probs = softmax_channel_ref(logits)
    m = probs.shape[0]
    sup = cross_entropy_ref(probs, target, eps) + dice_loss_ref(probs, target, smooth, m)
    ub = np.asarray(u_v, dtype=np.float64)[None]
    t_prime = (1.0 - ub) * np.asarray(teacher_probs, dtype=np.float64) + ub * probs
    cons = consistency_ref(t_prime, probs, u_v, beta, eps)
    clamp_bits = np.concatenate([
        (probs < eps).reshape(-1), (t_prime < eps).reshape(-1)
    ]).astype(np.float64)
    return sup + lam * cons, np.concatenate([signs, clamp_bits])


# -- brute-force surface distances -------------------------------------------


def boundary_pixels_ref(mask):
    """Foreground pixels with at least one background 4-neighbor; the image
    border counts as background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            nb = []
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ii, jj = i + di, j + dj
                nb.append(mask[ii, jj] if 0 <= ii < h and 0 <= jj < w else False)
            if not all(nb):
                pts.append((i, j))
    return pts


def surface_distances_ref(pred, gt):
    bp = boundary_pixels_ref(pred)
    bg = boundary_pixels_ref(gt)
    if not bp or not bg:
        raise ValueError("empty mask has no surface")
    d_pg = sorted(
        min(((i - a) ** 2 + (j - b) ** 2) ** 0.5 for a, b in bg) for i, j in bp
    )
    d_gp = sorted(
        min(((i - a) ** 2 + (j - b) ** 2) ** 0.5 for a, b in bp) for i, j in bg
    )
    return d_pg, d_gp
