"""Random image mutations for test generation.

Nine transform kinds: translate, rotate, scale, shear, brightness,
contrast, blur, noise and pixel_perturb.  Every transform is deterministic
given (kind, params, image), outputs keep the input dimensions and are
clamped to [0, 1].  Affine transforms use inverse-mapped bilinear sampling
with zero fill outside the source grid; stochastic transforms (noise,
pixel_perturb) carry an explicit sub-seed in their params so a recorded
mutation replays bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

KINDS = ("translate", "rotate", "scale", "shear", "brightness",
         "contrast", "blur", "noise", "pixel_perturb")


class MutationError(ValueError):
    """Unknown kind or structurally invalid parameters."""


@dataclass(frozen=True)
class MutationConfig:
    """Parameter ranges for random draws; all draws are uniform."""

    kinds: tuple[str, ...] = KINDS
    translate_frac: float = 0.1        # +-fraction of each dimension
    rotate_deg: float = 15.0           # +-degrees
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    shear_max: float = 0.15            # +-horizontal shear factor
    brightness_max: float = 0.3        # +-offset
    contrast_lo: float = 0.7
    contrast_hi: float = 1.3
    blur_sigma_lo: float = 0.5
    blur_sigma_hi: float = 1.5
    noise_sigma_lo: float = 0.02
    noise_sigma_hi: float = 0.08
    pixel_frac: float = 0.01           # up to this fraction of pixels perturbed
    pixel_delta: float = 0.2

    def __post_init__(self):
        if not self.kinds:
            raise MutationError("enabled mutation kind set is empty")
        unknown = [k for k in self.kinds if k not in KINDS]
        if unknown:
            raise MutationError(f"unknown mutation kinds: {unknown}")

    def local(self) -> "MutationConfig":
        """Small-magnitude neighborhood variant (noise and pixel flips only).

        Keeps the full pixel fraction so repeated perturbations of one seed
        rarely collide byte-for-byte, but shrinks every magnitude.
        """
        return replace(self, kinds=("noise", "pixel_perturb"),
                       noise_sigma_lo=0.002, noise_sigma_hi=0.01,
                       pixel_delta=0.05)


@dataclass
class MutationRecord:
    """Everything needed to replay one mutation exactly."""

    kind: str
    params: dict
    parent_id: int | None = None
    draw_index: int = 0

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": self.params,
                "parent_id": self.parent_id, "draw_index": self.draw_index}

    @classmethod
    def from_json(cls, obj: dict) -> "MutationRecord":
        return cls(kind=obj["kind"], params=dict(obj["params"]),
                   parent_id=obj.get("parent_id"), draw_index=int(obj.get("draw_index", 0)))


def _bilinear(image: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    """Sample image at fractional (row, col) coordinates; zero outside."""
    h, w = image.shape
    img = image.astype(np.float64)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0
    out = np.zeros(src_r.shape, dtype=np.float64)
    for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                        (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        vals = np.zeros_like(out)
        vals[valid] = img[rr[valid], cc[valid]]
        out += wgt * vals
    return out


def _affine(image: np.ndarray, inv: np.ndarray, shift_r: float, shift_c: float) -> np.ndarray:
    """Inverse-map output pixels through a 2x2 matrix about the image center."""
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    u = rr - cy
    v = cc - cx
    src_r = inv[0, 0] * u + inv[0, 1] * v + cy + shift_r
    src_c = inv[1, 0] * u + inv[1, 1] * v + cx + shift_c
    return _bilinear(image, src_r, src_c)


def _gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(image.astype(np.float64), radius, mode="reflect")
    rows = np.zeros_like(padded)
    for tap, k in enumerate(kernel):
        rows += k * np.roll(padded, tap - radius, axis=1)
    out = np.zeros_like(padded)
    for tap, k in enumerate(kernel):
        out += k * np.roll(rows, tap - radius, axis=0)
    return out[radius:-radius, radius:-radius]


def apply_transform(kind: str, params: dict, image: np.ndarray) -> np.ndarray:
    """Apply one transform; same-shaped output, pixels clamped to [0, 1]."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise MutationError(f"image must be 2-D, got shape {img.shape}")

    if kind == "translate":
        dy, dx = float(params["dy"]), float(params["dx"])
        out = _affine(img, np.eye(2), -dy, -dx)
    elif kind == "rotate":
        # positive angle rotates counterclockwise on screen
        theta = math.radians(float(params["angle_deg"]))
        inv = np.array([[math.cos(theta), math.sin(theta)],
                        [-math.sin(theta), math.cos(theta)]])
        out = _affine(img, inv, 0.0, 0.0)
    elif kind == "scale":
        factor = float(params["factor"])
        if factor <= 0:
            raise MutationError("scale factor must be positive")
        out = _affine(img, np.eye(2) / factor, 0.0, 0.0)
    elif kind == "shear":
        k = float(params["factor"])
        out = _affine(img, np.array([[1.0, 0.0], [-k, 1.0]]), 0.0, 0.0)
    elif kind == "brightness":
        out = img.astype(np.float64) + float(params["offset"])
    elif kind == "contrast":
        factor = float(params["factor"])
        if factor <= 0:
            raise MutationError("contrast factor must be positive")
        out = (img.astype(np.float64) - 0.5) * factor + 0.5
    elif kind == "blur":
        sigma = float(params["sigma"])
        if sigma <= 0:
            raise MutationError("blur sigma must be positive")
        out = _gaussian_blur(img, sigma)
    elif kind == "noise":
        sigma = float(params["sigma"])
        if sigma <= 0:
            raise MutationError("noise sigma must be positive")
        rng = np.random.default_rng(int(params["seed"]))
        out = img.astype(np.float64) + rng.normal(0.0, sigma, img.shape)
    elif kind == "pixel_perturb":
        count = int(params["count"])
        delta = float(params["delta"])
        if count < 1 or count > img.size:
            raise MutationError(f"pixel count {count} outside [1, {img.size}]")
        rng = np.random.default_rng(int(params["seed"]))
        idx = rng.choice(img.size, size=count, replace=False)
        signs = rng.integers(0, 2, size=count) * 2 - 1
        flat = img.astype(np.float64).reshape(-1)
        flat[idx] += signs * delta
        out = flat.reshape(img.shape)
    else:
        raise MutationError(f"unknown mutation kind {kind!r}")

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def random_mutation(seed_image: np.ndarray, rng: np.random.Generator,
                    config: MutationConfig, parent_id: int | None = None,
                    draw_index: int = 0) -> tuple[np.ndarray, MutationRecord]:
    """Pick a kind uniformly from the enabled set, draw its params, apply it.

    The returned record replays the exact output via apply_transform.
    """
    h, w = seed_image.shape
    kind = config.kinds[int(rng.integers(len(config.kinds)))]
    if kind == "translate":
        params = {"dy": float(rng.uniform(-config.translate_frac * h, config.translate_frac * h)),
                  "dx": float(rng.uniform(-config.translate_frac * w, config.translate_frac * w))}
    elif kind == "rotate":
        params = {"angle_deg": float(rng.uniform(-config.rotate_deg, config.rotate_deg))}
    elif kind == "scale":
        params = {"factor": float(rng.uniform(config.scale_lo, config.scale_hi))}
    elif kind == "shear":
        params = {"factor": float(rng.uniform(-config.shear_max, config.shear_max))}
    elif kind == "brightness":
        params = {"offset": float(rng.uniform(-config.brightness_max, config.brightness_max))}
    elif kind == "contrast":
        params = {"factor": float(rng.uniform(config.contrast_lo, config.contrast_hi))}
    elif kind == "blur":
        params = {"sigma": float(rng.uniform(config.blur_sigma_lo, config.blur_sigma_hi))}
    elif kind == "noise":
        params = {"sigma": float(rng.uniform(config.noise_sigma_lo, config.noise_sigma_hi)),
                  "seed": int(rng.integers(2 ** 32))}
    else:  # pixel_perturb
        max_count = max(1, int(round(config.pixel_frac * seed_image.size)))
        params = {"count": int(rng.integers(1, max_count + 1)),
                  "delta": config.pixel_delta,
                  "seed": int(rng.integers(2 ** 32))}
    record = MutationRecord(kind=kind, params=params, parent_id=parent_id,
                            draw_index=draw_index)
    return apply_transform(kind, params, seed_image), record


def random_image(shape: tuple[int, int], seed: int) -> np.ndarray:
    """I.i.d. uniform-[0,1] image used by the no-seed random strategy."""
    rng = np.random.default_rng(int(seed))
    return rng.random(shape, dtype=np.float64).astype(np.float32)
