"""Stochastic image augmentation: crop, colour jitter, Gaussian blur.

The pipeline runs in a fixed order (crop, then brightness / contrast /
saturation / hue, then blur, then clamp) and is fully vectorized over the
batch.  Every random draw happens up front regardless of which transforms
fire, so two runs with the same generator state produce identical output
even when, say, blur skips half the images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError

# RGB <-> YIQ; hue jitter is a rotation of the IQ chroma plane.
_RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.5959, -0.2746, -0.3213],
    [0.2115, -0.5227, 0.3112],
], dtype=np.float64)
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

_MIN_BLUR_SIGMA = 1e-3  # below this the kernel is numerically an identity


@dataclass(frozen=True)
class AugmentConfig:
    """Strengths and enable flags for each transform.

    Strengths follow the usual jitter convention: brightness 0.4 means a
    multiplicative factor drawn from [0.6, 1.4], hue 0.1 means a rotation
    of up to +-0.1 turns.  ``crop_scale`` bounds the retained area
    fraction of the random resized crop.
    """

    crop: bool = True
    color: bool = True
    blur: bool = True
    crop_scale: tuple[float, float] = (0.5, 1.0)
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)

    def validate(self) -> None:
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        for name, s in (("brightness", self.brightness), ("contrast", self.contrast),
                        ("saturation", self.saturation)):
            if not 0.0 <= s < 1.0:
                raise ConfigError(f"{name} strength must be in [0, 1), got {s}")
        if not 0.0 <= self.hue <= 0.5:
            raise ConfigError(f"hue strength must be in [0, 0.5], got {self.hue}")
        if not 0.0 <= self.blur_prob <= 1.0:
            raise ConfigError(f"blur_prob must be in [0, 1], got {self.blur_prob}")
        if not 0.0 <= self.blur_sigma[0] <= self.blur_sigma[1]:
            raise ConfigError(f"bad blur_sigma interval {self.blur_sigma}")

    def to_dict(self) -> dict:
        return {
            "crop": self.crop,
            "color": self.color,
            "blur": self.blur,
            "crop_scale": list(self.crop_scale),
            "brightness": self.brightness,
            "contrast": self.contrast,
            "saturation": self.saturation,
            "hue": self.hue,
            "blur_prob": self.blur_prob,
            "blur_sigma": list(self.blur_sigma),
        }

    @staticmethod
    def from_dict(d: dict) -> "AugmentConfig":
        return AugmentConfig(
            crop=bool(d["crop"]),
            color=bool(d["color"]),
            blur=bool(d["blur"]),
            crop_scale=(float(d["crop_scale"][0]), float(d["crop_scale"][1])),
            brightness=float(d["brightness"]),
            contrast=float(d["contrast"]),
            saturation=float(d["saturation"]),
            hue=float(d["hue"]),
            blur_prob=float(d["blur_prob"]),
            blur_sigma=(float(d["blur_sigma"][0]), float(d["blur_sigma"][1])),
        )


def _random_resized_crop(images: np.ndarray, scale: tuple[float, float],
                         rng: np.random.Generator) -> np.ndarray:
    """Crop a random area fraction per image and resize back via bilinear sampling."""
    b, c, h, w = images.shape
    area = rng.uniform(scale[0], scale[1], size=b)
    side = np.sqrt(area)
    crop_h = side * h
    crop_w = side * w
    y0 = rng.uniform(0.0, h - crop_h)
    x0 = rng.uniform(0.0, w - crop_w)

    def gather_axis(starts, crops, n, out_n):
        # Source coordinate of each output pixel centre (B, out_n).
        return starts[:, None] + (np.arange(out_n, dtype=np.float64)[None, :] + 0.5) \
            * crops[:, None] / out_n - 0.5

    src_y = gather_axis(y0, crop_h, h, h)
    src_x = gather_axis(x0, crop_w, w, w)
    iy0 = np.clip(np.floor(src_y), 0, h - 1).astype(np.int64)
    ix0 = np.clip(np.floor(src_x), 0, w - 1).astype(np.int64)
    iy1 = np.minimum(iy0 + 1, h - 1)
    ix1 = np.minimum(ix0 + 1, w - 1)
    fy = np.clip(src_y - iy0, 0.0, 1.0)
    fx = np.clip(src_x - ix0, 0.0, 1.0)

    bb = np.arange(b)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    y0i = iy0[:, None, :, None]
    y1i = iy1[:, None, :, None]
    x0i = ix0[:, None, None, :]
    x1i = ix1[:, None, None, :]
    fyb = fy[:, None, :, None]
    fxb = fx[:, None, None, :]

    p00 = images[bb, cc, y0i, x0i]
    p01 = images[bb, cc, y0i, x1i]
    p10 = images[bb, cc, y1i, x0i]
    p11 = images[bb, cc, y1i, x1i]
    top = p00 + (p01 - p00) * fxb
    bot = p10 + (p11 - p10) * fxb
    return top + (bot - top) * fyb


def _color_jitter(images: np.ndarray, cfg: AugmentConfig,
                  rng: np.random.Generator) -> np.ndarray:
    b = images.shape[0]
    br = rng.uniform(max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness, size=b)
    ct = rng.uniform(max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast, size=b)
    sa = rng.uniform(max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation, size=b)
    hu = rng.uniform(-cfg.hue, cfg.hue, size=b)

    out = images * br[:, None, None, None]
    luma = np.einsum("bchw,c->bhw", out, _LUMA)
    mean = luma.mean(axis=(1, 2))
    out = mean[:, None, None, None] + (out - mean[:, None, None, None]) * ct[:, None, None, None]
    luma = np.einsum("bchw,c->bhw", out, _LUMA)
    out = luma[:, None, :, :] + (out - luma[:, None, :, :]) * sa[:, None, None, None]

    ang = 2.0 * np.pi * hu
    cos_a, sin_a = np.cos(ang), np.sin(ang)
    rot = np.zeros((b, 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1.0
    rot[:, 1, 1] = cos_a
    rot[:, 1, 2] = -sin_a
    rot[:, 2, 1] = sin_a
    rot[:, 2, 2] = cos_a
    mat = np.einsum("ij,bjk,kl->bil", _YIQ_TO_RGB, rot, _RGB_TO_YIQ)
    return np.einsum("bij,bjhw->bihw", mat, out)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3 sigma)."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a (C, H, W) image with reflect padding."""
    if sigma < _MIN_BLUR_SIGMA:
        return image.copy()
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2

    def conv_last(arr):
        padded = np.pad(arr, [(0, 0)] * (arr.ndim - 1) + [(r, r)], mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=-1)
        return windows @ k

    blurred = conv_last(image)                       # along W
    blurred = conv_last(blurred.swapaxes(-1, -2))    # along H
    return blurred.swapaxes(-1, -2)


def augment_batch(images: np.ndarray, config: AugmentConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Augment a (B, C, H, W) batch; input is never modified in place."""
    config.validate()
    if images.ndim != 4:
        raise DataError(f"augment_batch expects (B, C, H, W), got shape {images.shape}")
    out = images.astype(np.float64, copy=True)
    if config.crop:
        out = _random_resized_crop(out, config.crop_scale, rng)
    if config.color:
        out = _color_jitter(out, config, rng)
    if config.blur:
        apply = rng.uniform(size=images.shape[0]) < config.blur_prob
        sigmas = rng.uniform(config.blur_sigma[0], config.blur_sigma[1], size=images.shape[0])
        for i in np.flatnonzero(apply):
            out[i] = gaussian_blur(out[i], sigmas[i])
    if config.crop or config.color or config.blur:
        out = np.clip(out, 0.0, 1.0)
    return out


def augment(image: np.ndarray, config: AugmentConfig,
            rng: np.random.Generator, split: str = "train") -> np.ndarray:
    """Augment a single (C, H, W) image.  Blob images are rejected: they are
    raw noise, not renders, and augmenting them would silently clamp them."""
    if split == "blob":
        raise DataError("blob images are not augmentable")
    if image.ndim != 3:
        raise DataError(f"augment expects (C, H, W), got shape {image.shape}")
    return augment_batch(image[None], config, rng)[0]
