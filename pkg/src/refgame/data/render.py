"""Procedural image renderer for the shape world.

Each sample is a single anti-aliased shape on a plain background, drawn
from a signed-distance field on a normalized [-1, 1]^2 canvas.  Position,
size, rotation, hue, saturation, value and the background tint are all
jittered per sample, and a small amount of pixel noise is added at the
end, so no two samples of a category are identical.  Blob images bypass
the renderer entirely: they are raw unit Gaussian noise and deliberately
do not live in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .taxonomy import Category

# Background tint families: (value interval, saturation interval).
BACKGROUND_FAMILIES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "light": ((0.82, 0.96), (0.0, 0.12)),
    "dark": ((0.08, 0.28), (0.0, 0.20)),
}


@dataclass(frozen=True)
class RenderConfig:
    """Knobs shared by every rendered sample.

    ``hue_shift`` rotates every category's hue interval by a fixed number
    of turns and ``background`` picks the tint family; together they define
    the shifted world used for transfer probing without touching the
    taxonomy itself.
    """

    image_size: int = 32
    size_interval: tuple[float, float] = (0.45, 0.80)
    position_jitter: float = 0.18
    saturation_interval: tuple[float, float] = (0.70, 1.00)
    value_interval: tuple[float, float] = (0.55, 0.95)
    background: str = "light"
    hue_shift: float = 0.0
    noise_std: float = 0.015
    antialias_px: float = 1.2
    outline_width: float = 0.16
    cross_arm: float = 0.34
    star_inner: float = 0.45
    ring_inner: float = 0.55

    def validate(self) -> None:
        if self.image_size < 4:
            raise ConfigError(f"image_size must be >= 4, got {self.image_size}")
        if not 0.0 < self.size_interval[0] <= self.size_interval[1] <= 1.0:
            raise ConfigError(f"bad size_interval {self.size_interval}")
        if self.background not in BACKGROUND_FAMILIES:
            raise ConfigError(f"unknown background family {self.background!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "size_interval": list(self.size_interval),
            "position_jitter": self.position_jitter,
            "saturation_interval": list(self.saturation_interval),
            "value_interval": list(self.value_interval),
            "background": self.background,
            "hue_shift": self.hue_shift,
            "noise_std": self.noise_std,
            "antialias_px": self.antialias_px,
            "outline_width": self.outline_width,
            "cross_arm": self.cross_arm,
            "star_inner": self.star_inner,
            "ring_inner": self.ring_inner,
        }

    @staticmethod
    def from_dict(d: dict) -> "RenderConfig":
        return RenderConfig(
            image_size=int(d["image_size"]),
            size_interval=(float(d["size_interval"][0]), float(d["size_interval"][1])),
            position_jitter=float(d["position_jitter"]),
            saturation_interval=(float(d["saturation_interval"][0]), float(d["saturation_interval"][1])),
            value_interval=(float(d["value_interval"][0]), float(d["value_interval"][1])),
            background=str(d["background"]),
            hue_shift=float(d["hue_shift"]),
            noise_std=float(d["noise_std"]),
            antialias_px=float(d["antialias_px"]),
            outline_width=float(d["outline_width"]),
            cross_arm=float(d["cross_arm"]),
            star_inner=float(d["star_inner"]),
            ring_inner=float(d["ring_inner"]),
        )


def _unit_sdf(shape: str, x: np.ndarray, y: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Signed distance to a unit-radius shape, negative inside."""
    if shape == "circle":
        return np.hypot(x, y) - 1.0
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) - 1.0
    if shape == "triangle":
        # Equilateral triangle, circumradius 1, apex up; distance to the
        # farthest of the three edge half-planes (apothem 0.5).
        d = -y
        for ang in (math.pi / 6.0, 5.0 * math.pi / 6.0):
            d = np.maximum(d, x * math.cos(ang) + y * math.sin(ang))
        return d - 0.5
    if shape == "cross":
        arm = cfg.cross_arm
        horiz = np.maximum(np.abs(x) - 1.0, np.abs(y) - arm)
        vert = np.maximum(np.abs(x) - arm, np.abs(y) - 1.0)
        return np.minimum(horiz, vert)
    if shape == "star":
        # Five-pointed star via a polar radius profile: outer radius 1 at the
        # points, cfg.star_inner at the valleys, interpolated in angle.
        r = np.hypot(x, y)
        theta = np.arctan2(y, x) - math.pi / 2.0
        sector = np.mod(theta, 2.0 * math.pi / 5.0)
        w = np.abs(sector - math.pi / 5.0) / (math.pi / 5.0)  # 1 at points, 0 at valleys
        boundary = cfg.star_inner + (1.0 - cfg.star_inner) * w
        return r - boundary
    if shape == "ring":
        r = np.hypot(x, y)
        return np.maximum(r - 1.0, cfg.ring_inner - r)
    raise ConfigError(f"unknown shape kind {shape!r}")


def render_sample(category: Category, rng: np.random.Generator,
                  config: RenderConfig | None = None) -> np.ndarray:
    """Render one (3, S, S) float64 image of a category, pixels in [0, 1].

    All randomness comes from ``rng`` in a fixed draw order, so the same
    generator state always yields the same image.
    """
    cfg = config if config is not None else RenderConfig()
    cfg.validate()
    size = cfg.image_size

    lo, hi = category.hue_interval
    hue = (rng.uniform(lo, hi) + cfg.hue_shift) % 1.0
    sat = rng.uniform(*cfg.saturation_interval)
    val = rng.uniform(*cfg.value_interval)
    (bv_lo, bv_hi), (bs_lo, bs_hi) = BACKGROUND_FAMILIES[cfg.background]
    bg_hue = rng.uniform(0.0, 1.0)
    bg_sat = rng.uniform(bs_lo, bs_hi)
    bg_val = rng.uniform(bv_lo, bv_hi)
    radius = rng.uniform(*cfg.size_interval)
    cx = rng.uniform(-cfg.position_jitter, cfg.position_jitter)
    cy = rng.uniform(-cfg.position_jitter, cfg.position_jitter)
    theta = rng.uniform(0.0, 2.0 * math.pi)

    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    px, py = np.meshgrid(coords, coords, indexing="xy")
    # Rotate into the shape frame and scale to unit radius.
    dx = px - cx
    dy = py - cy
    ct, st = math.cos(theta), math.sin(theta)
    qx = (ct * dx + st * dy) / radius
    qy = (-st * dx + ct * dy) / radius
    dist = _unit_sdf(category.shape, qx, qy, cfg) * radius  # back to canvas units

    aa = cfg.antialias_px * 2.0 / size  # one pixel spans 2/size canvas units
    if category.fill == "solid":
        coverage = np.clip(0.5 - dist / aa, 0.0, 1.0)
    elif category.fill == "outline":
        band = cfg.outline_width * radius
        coverage = np.clip(0.5 - (np.abs(dist) - band) / aa, 0.0, 1.0)
    elif category.fill == "striped":
        solid = np.clip(0.5 - dist / aa, 0.0, 1.0)
        freq = 4.0 * math.pi / radius
        wave = np.cos(qx * radius * freq)
        stripes = np.clip(0.5 + wave / (freq * aa), 0.0, 1.0)
        coverage = solid * stripes
    else:
        raise ConfigError(f"unknown fill style {category.fill!r}")

    fg = _hsv_scalar_rgb(hue, sat, val)
    bg = _hsv_scalar_rgb(bg_hue, bg_sat, bg_val)
    img = bg[:, None, None] + coverage[None, :, :] * (fg - bg)[:, None, None]
    if cfg.noise_std > 0:
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _hsv_scalar_rgb(h: float, s: float, v: float) -> np.ndarray:
    """Scalar HSV (hue in turns) to an RGB triple."""
    h = h % 1.0
    i = int(h * 6.0) % 6
    f = h * 6.0 - math.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    return np.array(table[i], dtype=np.float64)


def gen_blob(rng: np.random.Generator, image_size: int = 32) -> np.ndarray:
    """Unit Gaussian noise image (3, S, S); shares nothing with rendered samples."""
    return rng.standard_normal((3, image_size, image_size))
