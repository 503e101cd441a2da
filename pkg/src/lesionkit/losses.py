"""Scalar training objectives as pure value-and-gradient functions.

No optimizer lives in this package; the analytic gradients exist so each
objective can be verified against central finite differences.  Every
function returns a :class:`LossValueGrad` whose flat gradient aligns with
the raveled input parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Box3


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("focal gamma must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("focal alpha must be in [0, 1]")


@dataclass(frozen=True)
class NTXentConfig:
    temperature: float = 0.05

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    gradient: np.ndarray

    def __post_init__(self):
        grad = np.asarray(self.gradient, dtype=np.float64).ravel()
        if not math.isfinite(self.value) or not np.all(np.isfinite(grad)):
            raise ConfigError("loss value and gradient must be finite")
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "gradient", grad)


def focal_loss(probs: np.ndarray, targets: np.ndarray, cfg: FocalConfig = FocalConfig()) -> LossValueGrad:
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t) over elements.

    ``p_t`` is ``p`` for positive targets and ``1 - p`` otherwise; with
    gamma=0 and alpha=0.5 this is exactly half the binary cross-entropy.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = np.asarray(targets).ravel().astype(bool)
    if p.shape != t.shape:
        raise ConfigError(f"probs/targets length mismatch: {p.shape} vs {t.shape}")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ConfigError("probabilities must lie strictly inside (0, 1); clamp upstream")
    pt = np.where(t, p, 1.0 - p)
    at = np.where(t, cfg.alpha, 1.0 - cfg.alpha)
    focal = (1.0 - pt) ** cfg.gamma
    value = float(np.mean(-at * focal * np.log(pt)))
    # d/dpt of -a (1-pt)^g log(pt), then dpt/dp = +-1.
    if cfg.gamma == 0.0:
        dpt = -at / pt
    else:
        dpt = at * (cfg.gamma * (1.0 - pt) ** (cfg.gamma - 1.0) * np.log(pt) - focal / pt)
    grad = np.where(t, dpt, -dpt) / p.size
    return LossValueGrad(value=value, gradient=grad)


def dice_loss(probs: np.ndarray, targets: np.ndarray, smooth: float = 1e-5) -> LossValueGrad:
    """Soft Dice loss ``1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)``."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ConfigError(f"probs/targets length mismatch: {p.shape} vs {t.shape}")
    if smooth <= 0:
        raise ConfigError("smooth must be > 0")
    num = 2.0 * float(p @ t) + smooth
    den = float(p.sum() + t.sum()) + smooth
    value = 1.0 - num / den
    grad = -(2.0 * t * den - num) / den**2
    return LossValueGrad(value=value, gradient=grad)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> LossValueGrad:
    """Mean softmax cross-entropy over rows, with max-shifted log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets).ravel().astype(np.int64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ConfigError(f"logits must be (n, k) with k >= 2, got shape {z.shape}")
    n, k = z.shape
    if t.shape != (n,) or np.any(t < 0) or np.any(t >= k):
        raise ConfigError("targets must be class indices < k, one per row")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    value = float(np.mean(lse - shifted[np.arange(n), t]))
    soft = np.exp(shifted) / np.sum(np.exp(shifted), axis=1, keepdims=True)
    soft[np.arange(n), t] -= 1.0
    return LossValueGrad(value=value, gradient=soft / n)


def _prod_others(v: np.ndarray) -> np.ndarray:
    """Leave-one-out products for a length-3 vector."""
    return np.array([v[1] * v[2], v[0] * v[2], v[0] * v[1]])


def giou_loss(pred_params: np.ndarray, target: Box3) -> LossValueGrad:
    """``1 - GIoU`` between a predicted box and a fixed target.

    The prediction is parameterized as [cz, cy, cx, lz, ly, lx] with
    extent = exp(l), so every parameter vector is a valid box.  The
    gradient is piecewise-analytic; at min/max ties the branch containing
    the overlap is taken.
    """
    params = np.asarray(pred_params, dtype=np.float64).ravel()
    if params.shape != (6,):
        raise ConfigError(f"pred parameters must have 6 entries, got shape {params.shape}")
    c, logl = params[:3], params[3:]
    e = np.exp(logl)
    pmin, pmax = c - e / 2, c + e / 2
    tmin, tmax = np.asarray(target.min), np.asarray(target.max)

    o = np.minimum(pmax, tmax) - np.maximum(pmin, tmin)
    h = np.maximum(pmax, tmax) - np.minimum(pmin, tmin)
    overlap = bool(np.all(o > 0))
    inter = float(np.prod(o)) if overlap else 0.0
    vol_p = float(np.prod(e))
    vol_t = target.volume
    union = vol_p + vol_t - inter
    hull = float(np.prod(h))
    value = 2.0 - inter / union - union / hull

    o_others = _prod_others(o) if overlap else np.zeros(3)
    di_dpmax = np.where(pmax <= tmax, 1.0, 0.0) * o_others
    di_dpmin = -np.where(pmin >= tmin, 1.0, 0.0) * o_others
    h_others = _prod_others(h)
    dh_dpmax = np.where(pmax >= tmax, 1.0, 0.0) * h_others
    dh_dpmin = -np.where(pmin <= tmin, 1.0, 0.0) * h_others
    # Chain pmin = c - e/2, pmax = c + e/2, de/dl = e.
    di_dc = di_dpmin + di_dpmax
    di_dl = (di_dpmax - di_dpmin) * e / 2
    dh_dc = dh_dpmin + dh_dpmax
    dh_dl = (dh_dpmax - dh_dpmin) * e / 2
    dvp_dl = np.full(3, vol_p)
    du_dc = -di_dc
    du_dl = dvp_dl - di_dl
    dgiou_dc = (union * di_dc - inter * du_dc) / union**2 + (hull * du_dc - union * dh_dc) / hull**2
    dgiou_dl = (union * di_dl - inter * du_dl) / union**2 + (hull * du_dl - union * dh_dl) / hull**2
    return LossValueGrad(value=value, gradient=-np.concatenate([dgiou_dc, dgiou_dl]))


def ntxent_loss(
    embeddings_a: np.ndarray,
    embeddings_b: np.ndarray,
    cfg: NTXentConfig = NTXentConfig(),
) -> LossValueGrad:
    """Normalized-temperature cross-entropy over n positive pairs.

    Rows are L2-normalized; each of the 2n views treats its paired view as
    the positive and the other 2n - 2 views as negatives.  The gradient is
    taken w.r.t. the raw (pre-normalization) embeddings, flattened as
    [a.ravel(), b.ravel()].
    """
    a = np.asarray(embeddings_a, dtype=np.float64)
    b = np.asarray(embeddings_b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ConfigError(f"embeddings must be equal-shape (n, d) matrices, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ConfigError("contrastive loss needs at least 2 pairs")
    u = np.concatenate([a, b], axis=0)
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms == 0):
        raise ConfigError("embeddings must have nonzero norm")
    z = u / norms[:, None]
    m = 2 * n
    sim = (z @ z.T) / cfg.temperature
    np.fill_diagonal(sim, -np.inf)  # a view is never its own candidate
    pair = (np.arange(m) + n) % m
    shifted = sim - sim.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    soft = exps / exps.sum(axis=1, keepdims=True)
    value = float(np.mean(-np.log(soft[np.arange(m), pair])))

    dsim = soft.copy()
    dsim[np.arange(m), pair] -= 1.0
    dsim /= m  # d(value)/d(sim_ik); diagonal already 0 via softmax of -inf
    gz = (dsim + dsim.T) @ z / cfg.temperature
    gu = (gz - np.sum(gz * z, axis=1, keepdims=True) * z) / norms[:, None]
    return LossValueGrad(value=value, gradient=gu)


def reconstruction_loss(pred: np.ndarray, target: np.ndarray) -> LossValueGrad:
    """Mean absolute error; subgradient 0 at exact ties."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigError(f"pred shape {p.shape} != target shape {t.shape}")
    diff = p - t
    value = float(np.mean(np.abs(diff)))
    return LossValueGrad(value=value, gradient=np.sign(diff) / diff.size)


def ssl_total(l_rec: float, l_con: float, mode: str = "as_written") -> float:
    """Combine reconstruction and contrastive terms.

    ``as_written`` couples them multiplicatively, l_rec * (1 + l_con);
    ``additive`` is the plain sum l_rec + l_con.
    """
    if not (math.isfinite(l_rec) and math.isfinite(l_con)):
        raise ConfigError("loss terms must be finite")
    if mode == "as_written":
        return l_rec + l_con * l_rec
    if mode == "additive":
        return l_rec + l_con
    raise ConfigError(f"unknown mode {mode!r}; expected 'as_written' or 'additive'")


def detection_total(seg_dice: float, seg_ce: float, box_giou: float, box_ce: float) -> float:
    """Unweighted sum of the four detection training terms."""
    terms = (seg_dice, seg_ce, box_giou, box_ce)
    if not all(math.isfinite(v) for v in terms):
        raise ConfigError("loss terms must be finite")
    return float(sum(terms))


def lr_schedule(
    iteration: int,
    total_iters: int,
    warm_iters: int = 4000,
    warm_start: float = 1e-6,
    base: float = 0.01,
    gamma: float = 0.9,
) -> float:
    """Warm polynomial decay: linear warm-up from ``warm_start`` to ``base``
    over ``warm_iters``, then ``base * (1 - progress)^gamma`` down to 0."""
    if not 0 <= iteration <= total_iters:
        raise ConfigError(f"iteration {iteration} outside [0, {total_iters}]")
    if warm_iters >= total_iters:
        raise ConfigError("warm_iters must be < total_iters")
    if iteration <= warm_iters:
        return warm_start + (base - warm_start) * iteration / warm_iters
    progress = (iteration - warm_iters) / (total_iters - warm_iters)
    return base * (1.0 - progress) ** gamma
