"""HQ -> LQ degradation operators and the spec mini-language that chains them.

Images are float arrays with values in [0, 255] and shape ``(H, W)`` or
``(C, H, W)``; every operator returns an array of the same shape, clamped.
Resampling and blurring are separable and use edge replication at the borders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .seeding import stream

CONVOLUTIONAL = "convolutional"
ADDITIVE = "additive"


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 255.0)


def keys_cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation operator along one axis.

    Pixel centres are aligned (``src = (i + 0.5) * n_in / n_out - 0.5``) and taps
    falling outside the signal are folded onto the nearest edge sample.
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = math.floor(src)
        t = src - base
        for k in range(-1, 3):
            m[i, min(max(base + k, 0), n_in - 1)] += keys_cubic(t - k)
    return m


def _separable(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return rows @ np.asarray(img, dtype=np.float64) @ cols.T


def bicubic_resize(img: np.ndarray, target_h: int, target_w: int, clamp: bool = True) -> np.ndarray:
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be positive, got {target_h}x{target_w}")
    h, w = img.shape[-2:]
    if (h, w) == (target_h, target_w):
        out = np.array(img, dtype=np.float64)
    else:
        out = _separable(img, resize_matrix(h, target_h), resize_matrix(w, target_w))
    return _clamp(out) if clamp else out


def degrade_lowres(img: np.ndarray, factor: float, clamp: bool = True) -> np.ndarray:
    """Downsample by ``factor`` (floor of the size) and bicubic-upsample back."""
    h, w = img.shape[-2:]
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    if factor > min(h, w):
        raise ValueError(f"downsampling factor {factor} exceeds image size {h}x{w}")
    sh, sw = int(h // factor), int(w // factor)
    small = bicubic_resize(img, sh, sw, clamp=clamp)
    return bicubic_resize(small, h, w, clamp=clamp)


def make_gaussian_kernel(std: float, ksize: int) -> np.ndarray:
    """Normalized ``ksize x ksize`` Gaussian sampled at integer offsets from the centre."""
    g = _gaussian_1d(std, ksize)
    return np.outer(g, g)


def _gaussian_1d(std: float, ksize: int) -> np.ndarray:
    if std <= 0:
        raise ValueError(f"blur std must be positive, got {std}")
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError(f"blur kernel size must be odd, got {ksize}")
    r = ksize // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(off * off) / (2.0 * std * std))
    return g / g.sum()


def _blur_matrix(n: int, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for k, gk in enumerate(g):
            m[i, min(max(i + k - r, 0), n - 1)] += gk
    return m


def degrade_gaussian_blur(img: np.ndarray, std: float, ksize: int = 9, clamp: bool = True) -> np.ndarray:
    # the sampled 2-D Gaussian is an outer product, so two 1-D passes are exact
    g = _gaussian_1d(std, ksize)
    h, w = img.shape[-2:]
    out = _separable(img, _blur_matrix(h, g), _blur_matrix(w, g))
    return _clamp(out) if clamp else out


def degrade_gaussian_noise(img: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    if std < 0:
        raise ValueError(f"noise std must be non-negative, got {std}")
    if std == 0:
        return np.array(img, dtype=np.float64)
    return _clamp(img + rng.normal(0.0, std, size=np.shape(img)))


def salt_pepper_count(fraction: float, n_pixels: int) -> int:
    # tolerance guards against products like 0.29 * 100 = 28.999...
    return int(math.floor(fraction * n_pixels + 1e-9))


def degrade_salt_pepper(img: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Replace exactly floor(fraction * H * W) distinct pixel positions with 0 or 255.

    For multi-channel images a chosen position is set in every channel.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"salt & pepper fraction must be in [0, 1], got {fraction}")
    out = np.array(img, dtype=np.float64)
    h, w = out.shape[-2:]
    n = salt_pepper_count(fraction, h * w)
    if n == 0:
        return out
    pos = rng.choice(h * w, size=n, replace=False)
    vals = rng.integers(0, 2, size=n) * 255.0
    flat = out.reshape(*out.shape[:-2], h * w)
    flat[..., pos] = vals
    return out


@dataclass(frozen=True)
class Occluder:
    shape: str  # "rect" or "ellipse"
    cy: float
    cx: float
    height: float
    width: float
    value: float

    def mask(self, h: int, w: int) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        dy = (yy - self.cy) / (self.height / 2)
        dx = (xx - self.cx) / (self.width / 2)
        if self.shape == "rect":
            return (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
        return dy * dy + dx * dx <= 1


def sample_occluder(
    eye_box: tuple[float, float, float, float],
    rng: np.random.Generator,
    size_range: tuple[float, float] = (0.25, 0.6),
    value_range: tuple[float, float] = (0.0, 255.0),
) -> Occluder:
    """Draw one occluder; ``eye_box`` is ``(top, left, bottom, right)`` in pixels."""
    top, left, bottom, right = eye_box
    shape = "rect" if rng.random() < 0.5 else "ellipse"
    cy = rng.uniform(top, bottom)
    cx = rng.uniform(left, right)
    height = rng.uniform(*size_range) * (bottom - top)
    width = rng.uniform(*size_range) * (right - left)
    value = rng.uniform(*value_range)
    return Occluder(shape, cy, cx, height, width, value)


def degrade_occlude(
    img: np.ndarray,
    eye_box: tuple[float, float, float, float],
    rng: np.random.Generator,
    size_range: tuple[float, float] = (0.25, 0.6),
    value_range: tuple[float, float] = (0.0, 255.0),
) -> np.ndarray:
    h, w = img.shape[-2:]
    top, left, bottom, right = eye_box
    if not (0 <= top < bottom <= h and 0 <= left < right <= w):
        raise ValueError(f"eye box {eye_box} is not inside a {h}x{w} image")
    occ = sample_occluder(eye_box, rng, size_range, value_range)
    out = np.array(img, dtype=np.float64)
    out[..., occ.mask(h, w)] = occ.value
    return out


def degrade_mixed(img: np.ndarray, specs, rng: np.random.Generator) -> np.ndarray:
    """Apply specs left to right, all drawing from the same generator."""
    if not specs:
        raise ValueError("mixed degradation needs at least one operator")
    out = img
    for spec in specs:
        out = spec.apply(out, rng)
    return out


# --- declarative specs -----------------------------------------------------------


@dataclass(frozen=True)
class LowRes:
    factor: float = 2
    name = "lowres"
    category = CONVOLUTIONAL
    random = False

    def apply(self, img, rng=None):
        return degrade_lowres(img, self.factor)

    def with_factor(self, f):
        return replace(self, factor=f)

    def to_string(self):
        return f"lowres:{_fmt(self.factor)}"


@dataclass(frozen=True)
class SaltPepper:
    fraction: float = 0.5
    name = "salt-pepper"
    category = ADDITIVE
    random = True

    @property
    def factor(self):
        return self.fraction

    def apply(self, img, rng):
        return degrade_salt_pepper(img, self.fraction, rng)

    def with_factor(self, f):
        return replace(self, fraction=f)

    def to_string(self):
        return f"salt-pepper:{_fmt(self.fraction)}"


@dataclass(frozen=True)
class GaussianBlur:
    std: float = 2.0
    ksize: int = 9
    name = "blur"
    category = CONVOLUTIONAL
    random = False

    @property
    def factor(self):
        return self.std

    def apply(self, img, rng=None):
        return degrade_gaussian_blur(img, self.std, self.ksize)

    def with_factor(self, f):
        return replace(self, std=f)

    def to_string(self):
        return f"blur:{_fmt(self.std)},{self.ksize}"


@dataclass(frozen=True)
class GaussianNoise:
    std: float = 25.0
    name = "gauss-noise"
    category = ADDITIVE
    random = True

    @property
    def factor(self):
        return self.std

    def apply(self, img, rng):
        return degrade_gaussian_noise(img, self.std, rng)

    def with_factor(self, f):
        return replace(self, std=f)

    def to_string(self):
        return f"gauss-noise:{_fmt(self.std)}"


@dataclass(frozen=True)
class Occlusion:
    """Random rectangle/ellipse over an eye region given as image fractions."""

    eye_box: tuple[float, float, float, float] = (0.2, 0.15, 0.5, 0.85)
    size_range: tuple[float, float] = (0.25, 0.6)
    value_range: tuple[float, float] = (0.0, 255.0)
    name = "occlude"
    category = ADDITIVE
    random = True

    @property
    def factor(self):
        # severity is the largest allowed occluder size
        return self.size_range[1]

    def pixel_box(self, h, w):
        t, l, b, r = self.eye_box
        return (t * h, l * w, b * h, r * w)

    def apply(self, img, rng):
        h, w = img.shape[-2:]
        return degrade_occlude(img, self.pixel_box(h, w), rng, self.size_range, self.value_range)

    def with_factor(self, f):
        return replace(self, size_range=(min(self.size_range[0], f), f))

    def to_string(self):
        t, l, b, r = self.eye_box
        lo, hi = self.size_range
        return f"occlude:{_fmt(t)},{_fmt(l)},{_fmt(b)},{_fmt(r)},{_fmt(lo)},{_fmt(hi)}"


@dataclass(frozen=True)
class Mixed:
    specs: tuple = field(default_factory=tuple)
    name = "mixed"

    def __post_init__(self):
        if not self.specs:
            raise ValueError("mixed degradation needs at least one operator")

    @property
    def random(self):
        return any(s.random for s in self.specs)

    @property
    def category(self):
        return self.specs[0].category

    def _lead(self):
        # severity of a chain is that of its first resolution change, if any
        for i, s in enumerate(self.specs):
            if isinstance(s, LowRes):
                return i
        return 0

    @property
    def factor(self):
        return self.specs[self._lead()].factor

    def apply(self, img, rng):
        return degrade_mixed(img, self.specs, rng)

    def with_factor(self, f):
        i = self._lead()
        specs = list(self.specs)
        specs[i] = specs[i].with_factor(f)
        return Mixed(tuple(specs))

    def to_string(self):
        return "|".join(s.to_string() for s in self.specs)


def _fmt(v) -> str:
    return f"{v:g}"


def _floats(arg: str) -> list[float]:
    return [float(a) for a in arg.split(",") if a.strip()]


def _parse_one(token: str):
    name, _, arg = token.strip().partition(":")
    name = name.strip().lower()
    vals = _floats(arg) if arg else []
    if name in ("lowres", "lr", "identity"):
        return LowRes(vals[0] if vals else 1)
    if name in ("salt-pepper", "sp", "saltpepper"):
        return SaltPepper(vals[0] if vals else 0.5)
    if name in ("blur", "gauss-blur"):
        return GaussianBlur(vals[0] if vals else 2.0, int(vals[1]) if len(vals) > 1 else 9)
    if name in ("gauss-noise", "noise"):
        return GaussianNoise(vals[0] if vals else 25.0)
    if name in ("occlude", "occlusion"):
        if not vals:
            return Occlusion()
        if len(vals) not in (4, 6):
            raise ValueError(f"occlude takes 4 box fractions and optionally 2 size fractions: {token!r}")
        size = (vals[4], vals[5]) if len(vals) == 6 else (0.25, 0.6)
        return Occlusion(tuple(vals[:4]), size)
    raise ValueError(f"unknown degradation {name!r}")


def parse_spec(text: str):
    """Parse ``name:param|name:param`` into a spec; a single token gives a bare operator."""
    tokens = [t for t in text.split("|") if t.strip()]
    if not tokens:
        raise ValueError("empty degradation spec")
    specs = [_parse_one(t) for t in tokens]
    return specs[0] if len(specs) == 1 else Mixed(tuple(specs))


def degrade_batch(images: np.ndarray, spec, rngs) -> np.ndarray:
    """Degrade an ``(N, C, H, W)`` stack; ``rngs[i]`` is used for image ``i``."""
    if not spec.random:
        return np.stack([spec.apply(img) for img in images]) if len(images) else images.astype(np.float64)
    return np.stack([spec.apply(img, rng) for img, rng in zip(images, rngs)])


def degrade_dataset(images: np.ndarray, spec, seed: int, split: str = "train") -> np.ndarray:
    """Degrade a stored split; image ``i`` draws from its own stream, so order does not matter."""
    rngs = [stream(seed, "degrade", split, i) for i in range(len(images))] if spec.random else None
    return degrade_batch(images, spec, rngs)
