"""Loss functions, analytic LUT-fitting gradients, a first-order optimizer,
and finite-difference gradient verification.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FitDivergedError
from .image_core import ImagePlane
from .lut import Lut3D, combine_luts, identity_lut, lattice_coords

SSIM_WEIGHT = 0.4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LossReport:
    mse: float
    ssim: float
    total: float
    n_pixels: int


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    mse: float
    ssim: float
    total: float
    holdout_psnr: float


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 2000
    step_size: float = 1e-4
    bins: int = 33
    smoothness_weight: float = 1e-4
    seed: int = 0
    holdout_fraction: float = 0.0
    optimizer: str = "adam"  # "adam" or "gd"
    batch_mode: str = "full"  # "full" or "single" (one shuffled pair per step)
    literal_ssim_term: bool = False  # add +0.4*ssim instead of +0.4*(1 - ssim)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.batch_mode not in ("full", "single"):
            raise ValueError(f"unknown batch_mode '{self.batch_mode}'")


def _check_same_shape(pred: ImagePlane, target: ImagePlane, op: str):
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"{op}: shape {pred.data.shape} does not match {target.data.shape}"
        )


def mse_loss(pred: ImagePlane, target: ImagePlane) -> float:
    """Mean squared error over every sample, accumulated in float64."""
    _check_same_shape(pred, target, "mse_loss")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    return float(np.mean(d * d))


def _ssim_channel_parts(x: np.ndarray, y: np.ndarray, c1: float, c2: float):
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * cov + c2
    b1 = mx * mx + my * my + c1
    b2 = vx + vy + c2
    return mx, my, a1, a2, b1, b2


def _ssim64(pred: np.ndarray, target: np.ndarray, dynamic_range: float) -> float:
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    vals = []
    for c in range(pred.shape[2]):
        _, _, a1, a2, b1, b2 = _ssim_channel_parts(pred[:, :, c], target[:, :, c], c1, c2)
        vals.append((a1 * a2) / (b1 * b2))
    return float(np.mean(vals))


def ssim(pred: ImagePlane, target: ImagePlane, dynamic_range: float = 1.0) -> float:
    """Whole-image structural similarity: one mean/variance/covariance per
    channel, channel scores averaged. No sliding window."""
    _check_same_shape(pred, target, "ssim")
    if dynamic_range <= 0:
        raise ValueError(f"dynamic_range must be positive, got {dynamic_range}")
    return _ssim64(pred.data.astype(np.float64), target.data.astype(np.float64), dynamic_range)


def _total64(pred: np.ndarray, target: np.ndarray, literal: bool = False):
    m = float(np.mean((pred - target) ** 2))
    s = _ssim64(pred, target, 1.0)
    total = m + SSIM_WEIGHT * (s if literal else 1.0 - s)
    return m, s, total


def total_loss(pred: ImagePlane, target: ImagePlane) -> LossReport:
    """Fitting objective: MSE plus 0.4 times the SSIM shortfall."""
    _check_same_shape(pred, target, "total_loss")
    m, s, total = _total64(pred.data.astype(np.float64), target.data.astype(np.float64))
    return LossReport(mse=m, ssim=s, total=total, n_pixels=pred.data.size)


def _loss_grad_wrt_pred(pred: np.ndarray, target: np.ndarray, literal: bool) -> np.ndarray:
    """d(total)/d(pred) for the whole-image objective, in float64."""
    n = pred.size
    grad = 2.0 * (pred - target) / n
    c1, c2 = (0.01) ** 2, (0.03) ** 2
    channels = pred.shape[2]
    sign = 1.0 if literal else -1.0
    for c in range(channels):
        x = pred[:, :, c]
        y = target[:, :, c]
        mx, my, a1, a2, b1, b2 = _ssim_channel_parts(x, y, c1, c2)
        s = (a1 * a2) / (b1 * b2)
        npix = x.size
        ds = (2.0 / (npix * b1 * b2)) * (
            my * a2 + a1 * (y - my) - s * (mx * b2 + b1 * (x - mx))
        )
        grad[:, :, c] += sign * SSIM_WEIGHT * ds / channels
    return grad


class _PairCache:
    """Precomputed trilinear corners for one training pair."""

    def __init__(self, img: ImagePlane, target: ImagePlane, bins: int):
        _check_same_shape(img, target, "fit_lut pair")
        if img.channels != 3:
            raise DimensionError(f"fit pairs must be 3-channel, got {img.channels}")
        self.target = target.data.astype(np.float64)
        data = img.data.astype(np.float64)
        idx, f = lattice_coords(data, bins)
        ir, ig, ib = idx[..., 0], idx[..., 1], idx[..., 2]
        fr, fg, fb = f[..., 0], f[..., 1], f[..., 2]
        self.flat_idx = []
        self.weights = []
        for dr in (0, 1):
            wr = fr if dr else 1.0 - fr
            for dg in (0, 1):
                wrg = wr * (fg if dg else 1.0 - fg)
                for db in (0, 1):
                    w = wrg * (fb if db else 1.0 - fb)
                    flat = ((ir + dr) * bins + (ig + dg)) * bins + (ib + db)
                    self.flat_idx.append(flat.ravel())
                    self.weights.append(w.ravel())
        self.shape = data.shape
        self.digest = hashlib.sha256(
            img.data.tobytes() + target.data.tobytes()
        ).hexdigest()

    def predict(self, flat_lattice: np.ndarray) -> np.ndarray:
        acc = np.zeros((self.weights[0].size, 3))
        for flat, w in zip(self.flat_idx, self.weights):
            acc += w[:, None] * flat_lattice[flat]
        return acc.reshape(self.shape)

    def scatter(self, grad_pred: np.ndarray, bins: int) -> np.ndarray:
        """Back-distribute d(loss)/d(pred) onto the 8 corners of each pixel."""
        g = grad_pred.reshape(-1, 3)
        out = np.zeros((bins**3, 3))
        for flat, w in zip(self.flat_idx, self.weights):
            for c in range(3):
                out[:, c] += np.bincount(flat, weights=w * g[:, c], minlength=bins**3)
        return out


def _smoothness_value_grad(lattice: np.ndarray, weight: float):
    """Sum of squared adjacent-entry differences along each lattice axis."""
    value = 0.0
    grad = np.zeros_like(lattice)
    for axis in range(3):
        d = np.diff(lattice, axis=axis)
        value += float(np.sum(d * d))
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += 2.0 * weight * d
        grad[tuple(lo)] -= 2.0 * weight * d
    return weight * value, grad


def lut_gradient(
    lut: Lut3D,
    img: ImagePlane,
    target: ImagePlane,
    smoothness_weight: float = 0.0,
    literal_ssim_term: bool = False,
) -> np.ndarray:
    """Analytic d(total_loss)/d(lattice) for one image pair."""
    cache = _PairCache(img, target, lut.bins)
    flat = lut.lattice.reshape(-1, 3)
    pred = cache.predict(flat)
    grad_pred = _loss_grad_wrt_pred(pred, cache.target, literal_ssim_term)
    grad = cache.scatter(grad_pred, lut.bins).reshape(lut.lattice.shape)
    if smoothness_weight > 0:
        _, sg = _smoothness_value_grad(np.asarray(lut.lattice), smoothness_weight)
        grad += sg
    return grad


def combine_weights_gradient(
    basis,
    weights,
    img: ImagePlane,
    target: ImagePlane,
    literal_ssim_term: bool = False,
) -> np.ndarray:
    """Analytic d(total_loss)/d(weights) for a fixed basis-LUT blend.

    Evaluated in float64 throughout so the linearity of the blend is exact.
    """
    basis = list(basis)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    cache = _PairCache(img, target, basis[0].bins)
    pred = cache.predict(combine_luts(basis, w).lattice.reshape(-1, 3))
    grad_pred = _loss_grad_wrt_pred(pred, cache.target, literal_ssim_term)
    per_basis = [cache.predict(b.lattice.reshape(-1, 3)) for b in basis]
    return np.array([float(np.sum(grad_pred * p)) for p in per_basis])


@dataclass(frozen=True)
class GradCheckReport:
    target: str
    max_rel_error: float
    passed: bool
    step: float


def _rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-6)
    return float(np.max(np.abs(analytic - fd) / scale))


def grad_check(target_name: str, seed: int, bins: int = 5, h: float = 1e-4) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences."""
    rng = np.random.default_rng(seed)
    img = ImagePlane.from_array(rng.random((6, 6, 3), dtype=np.float32))
    ref = ImagePlane.from_array(rng.random((6, 6, 3), dtype=np.float32))

    if target_name == "lut_lattice":
        lattice = identity_lut(bins).lattice + 0.2 * (rng.random((bins, bins, bins, 3)) - 0.5)
        cache = _PairCache(img, ref, bins)

        def loss_at(lat):
            return _total64(cache.predict(lat.reshape(-1, 3)), cache.target)[2]

        analytic = lut_gradient(Lut3D(bins, lattice), img, ref)
        fd = np.zeros_like(lattice)
        flat_view = fd.reshape(-1)
        base = lattice.copy()
        flat_base = base.reshape(-1)
        for i in range(flat_base.size):
            orig = flat_base[i]
            flat_base[i] = orig + h
            up = loss_at(base)
            flat_base[i] = orig - h
            down = loss_at(base)
            flat_base[i] = orig
            flat_view[i] = (up - down) / (2.0 * h)
        err = _rel_error(analytic, fd)
    elif target_name == "combine_weights":
        basis = [
            Lut3D(bins, identity_lut(bins).lattice + 0.3 * (rng.random((bins, bins, bins, 3)) - 0.5))
            for _ in range(3)
        ]
        w = rng.random(3)
        analytic = combine_weights_gradient(basis, w, img, ref)
        cache = _PairCache(img, ref, bins)

        def loss_w(wv):
            pred = cache.predict(combine_luts(basis, wv).lattice.reshape(-1, 3))
            return _total64(pred, cache.target)[2]

        fd = np.zeros(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (loss_w(w + e) - loss_w(w - e)) / (2.0 * h)
        err = _rel_error(analytic, fd)
    else:
        raise ValueError(f"unknown gradient-check target '{target_name}'")
    return GradCheckReport(target_name, err, err < 1e-3, h)


def fit_lut(pairs, cfg: FitConfig):
    """Fit a 3D LUT to (input, target) pairs with first-order updates.

    Pairs are processed in a canonical content-digest order, so the result
    does not depend on how the caller sorted them. Returns the fitted LUT
    and the per-iteration trace.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("fit_lut needs at least one image pair")
    caches = [_PairCache(img, tgt, cfg.bins) for img, tgt in pairs]
    caches.sort(key=lambda c: c.digest)
    n_hold = int(len(caches) * cfg.holdout_fraction)
    train = caches[: len(caches) - n_hold] if n_hold else caches
    holdout = caches[len(caches) - n_hold :] if n_hold else []
    if not train:
        raise ValueError("holdout fraction leaves no training pairs")

    lattice = identity_lut(cfg.bins).lattice.copy()
    m_state = np.zeros_like(lattice)
    v_state = np.zeros_like(lattice)
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(train))
    trace = []

    def holdout_psnr(flat):
        if not holdout:
            return math.nan
        vals = []
        for cache in holdout:
            err = float(np.mean((cache.predict(flat) - cache.target) ** 2))
            vals.append(math.inf if err == 0.0 else 10.0 * math.log10(1.0 / err))
        return float(np.mean(vals))

    for it in range(1, cfg.iterations + 1):
        flat = lattice.reshape(-1, 3)
        if cfg.batch_mode == "full":
            batch = train
        else:
            pos = (it - 1) % len(train)
            if pos == 0:
                order = rng.permutation(len(train))
            batch = [train[order[pos]]]

        grad_flat = np.zeros_like(flat)
        mse_sum = ssim_sum = total_sum = 0.0
        for cache in batch:
            pred = cache.predict(flat)
            m, s, total = _total64(pred, cache.target, cfg.literal_ssim_term)
            mse_sum += m
            ssim_sum += s
            total_sum += total
            grad_pred = _loss_grad_wrt_pred(pred, cache.target, cfg.literal_ssim_term)
            grad_flat += cache.scatter(grad_pred, cfg.bins)
        k = len(batch)
        grad = (grad_flat / k).reshape(lattice.shape)
        if cfg.smoothness_weight > 0:
            _, sg = _smoothness_value_grad(lattice, cfg.smoothness_weight)
            grad += sg

        row = TraceRow(
            iteration=it,
            mse=mse_sum / k,
            ssim=ssim_sum / k,
            total=total_sum / k,
            holdout_psnr=holdout_psnr(flat),
        )
        trace.append(row)
        if not (math.isfinite(row.total) and np.isfinite(lattice).all()):
            raise FitDivergedError(f"non-finite loss at iteration {it}", trace)

        if cfg.optimizer == "adam":
            m_state = ADAM_BETA1 * m_state + (1.0 - ADAM_BETA1) * grad
            v_state = ADAM_BETA2 * v_state + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m_state / (1.0 - ADAM_BETA1**it)
            v_hat = v_state / (1.0 - ADAM_BETA2**it)
            lattice = lattice - cfg.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        else:
            lattice = lattice - cfg.step_size * grad

    if not np.isfinite(lattice).all():
        raise FitDivergedError("non-finite lattice after final update", trace)
    return Lut3D(cfg.bins, lattice), trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,mse,ssim,total,holdout_psnr\n")
        for row in trace:
            fh.write(
                f"{row.iteration},{row.mse!r},{row.ssim!r},{row.total!r},{row.holdout_psnr!r}\n"
            )
