"""Mosaic texture construction.

A camouflage texture is a 2048x2048 RGB image built from a much smaller
square pattern. Two construction modes are provided:

* enlarge-and-repeat (ER): every pattern pixel becomes a uniform
  2^e x 2^e block, and the enlarged tile is repeated 2^r times along both
  axes. The result is a hard-edged mosaic that keeps exactly the pattern's
  colors.
* bilinear resize: the conventional smooth upsampling baseline, which
  blurs the pattern into continuous gradients.

Sides are always powers of two and the full texture side is fixed at
2048 = 2^11, so a valid ER configuration satisfies p + e + r = 11.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FULL_SIDE = 2048
MAX_EXPONENT = 11  # log2(FULL_SIDE)


class ExponentOverflowError(ValueError):
    """Raised when an enlarge/repeat step would exceed the 2048 texture side."""


class ConfigMismatchError(ValueError):
    """Raised when a pattern's side disagrees with the ER configuration."""


def _as_rgb_grid(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square HxWx3 grid, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not (np.issubdtype(arr.dtype, np.integer) and arr.min() >= 0 and arr.max() <= 255):
            raise ValueError("channel values must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


@dataclass(frozen=True)
class Pattern:
    """A 2^p x 2^p RGB grid, the variable actually being searched.

    ``pixels`` is a read-only uint8 array of shape (side, side, 3).
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = _as_rgb_grid(self.pixels)
        side = arr.shape[0]
        exponent = side.bit_length() - 1
        if side != 1 << exponent or exponent > MAX_EXPONENT:
            raise ValueError(f"pattern side must be a power of two <= {FULL_SIDE}, got {side}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    @property
    def side_exponent(self) -> int:
        return self.side.bit_length() - 1

    def __eq__(self, other):
        if not isinstance(other, Pattern):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.side, self.pixels.tobytes()))


@dataclass(frozen=True)
class Texture:
    """A full 2048x2048 RGB camouflage image."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = _as_rgb_grid(self.pixels)
        if arr.shape[0] != FULL_SIDE:
            raise ValueError(f"texture side must be exactly {FULL_SIDE}, got {arr.shape[0]}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def side(self) -> int:
        return FULL_SIDE


_LABEL_RE = re.compile(r"^E(\d+)-R(\d+)$")


@dataclass(frozen=True)
class ErConfig:
    """Exponent triple (p, e, r) for enlarge-and-repeat construction.

    ``pattern_exponent`` is the log2 side of the searched pattern,
    ``enlarge_exponent`` the per-pixel block scale and ``repeat_exponent``
    the tiling count. They must sum to 11 so the output side is 2048.
    """

    pattern_exponent: int
    enlarge_exponent: int
    repeat_exponent: int

    def __post_init__(self):
        p, e, r = self.pattern_exponent, self.enlarge_exponent, self.repeat_exponent
        if min(p, e, r) < 0:
            raise ValueError("exponents must be non-negative")
        if p + e + r != MAX_EXPONENT:
            raise ValueError(
                f"pattern/enlarge/repeat exponents must sum to {MAX_EXPONENT} "
                f"(side 2^{MAX_EXPONENT} = {FULL_SIDE}), got {p}+{e}+{r}"
            )

    @property
    def label(self) -> str:
        return f"E{self.enlarge_exponent}-R{self.repeat_exponent}"

    @classmethod
    def from_label(cls, label: str) -> "ErConfig":
        """Parse an 'E5-R2'-style label; the pattern exponent is implied."""
        m = _LABEL_RE.match(label.strip())
        if not m:
            raise ValueError(f"bad ER label {label!r}, expected e.g. 'E5-R2'")
        e, r = int(m.group(1)), int(m.group(2))
        return cls(pattern_exponent=MAX_EXPONENT - e - r, enlarge_exponent=e, repeat_exponent=r)


def enlarge(pattern: Pattern, enlarge_exponent: int) -> Pattern:
    """Scale each pixel to a 2^e x 2^e uniform block (no interpolation).

    Output pixel (i, j) equals input pixel (i >> e, j >> e).
    """
    if enlarge_exponent < 0:
        raise ValueError("enlarge exponent must be >= 0")
    if pattern.side_exponent + enlarge_exponent > MAX_EXPONENT:
        raise ExponentOverflowError(
            f"enlarging 2^{pattern.side_exponent} by 2^{enlarge_exponent} exceeds side {FULL_SIDE}"
        )
    if enlarge_exponent == 0:
        return pattern
    block = 1 << enlarge_exponent
    out = np.repeat(np.repeat(pattern.pixels, block, axis=0), block, axis=1)
    return Pattern(out)


def repeat(pattern: Pattern, repeat_exponent: int) -> Pattern:
    """Tile the pattern 2^r times along both axes.

    Output pixel (i, j) equals input pixel (i mod side, j mod side).
    """
    if repeat_exponent < 0:
        raise ValueError("repeat exponent must be >= 0")
    if pattern.side_exponent + repeat_exponent > MAX_EXPONENT:
        raise ExponentOverflowError(
            f"repeating 2^{pattern.side_exponent} by 2^{repeat_exponent} exceeds side {FULL_SIDE}"
        )
    if repeat_exponent == 0:
        return pattern
    times = 1 << repeat_exponent
    return Pattern(np.tile(pattern.pixels, (times, times, 1)))


def enlarge_and_repeat(pattern: Pattern, enlarge_exponent: int, repeat_exponent: int) -> Pattern:
    """The ER composition at any scale: repeat(enlarge(pattern, e), r).

    The order is load-bearing; repeating first and enlarging afterwards
    produces a different image whenever the pattern is non-uniform.
    """
    return repeat(enlarge(pattern, enlarge_exponent), repeat_exponent)


def er_construct(pattern: Pattern, cfg: ErConfig) -> Texture:
    """Build the full 2048x2048 mosaic texture from a pattern.

    The pattern's side exponent must match ``cfg.pattern_exponent``.
    """
    if pattern.side_exponent != cfg.pattern_exponent:
        raise ConfigMismatchError(
            f"pattern side 2^{pattern.side_exponent} does not match "
            f"config pattern exponent {cfg.pattern_exponent}"
        )
    out = enlarge_and_repeat(pattern, cfg.enlarge_exponent, cfg.repeat_exponent)
    return Texture(out.pixels)


def bilinear_resize(pattern: Pattern, out_side: int = FULL_SIDE) -> Texture:
    """Upsample a pattern to the full texture side with bilinear interpolation.

    Uses half-pixel-center alignment: output pixel i samples source
    coordinate (i + 0.5) * side/out_side - 0.5, with edge clamping.
    Channel values are rounded half-up and clamped to [0, 255].
    """
    src = pattern.pixels.astype(np.float64)
    n = pattern.side
    coords = (np.arange(out_side) + 0.5) * (n / out_side) - 0.5
    lo = np.floor(coords).astype(np.int64)
    frac = coords - lo
    i0 = np.clip(lo, 0, n - 1)
    i1 = np.clip(lo + 1, 0, n - 1)

    # separable: interpolate rows, then columns
    rows = src[i0] * (1.0 - frac)[:, None, None] + src[i1] * frac[:, None, None]
    out = (
        rows[:, i0] * (1.0 - frac)[None, :, None]
        + rows[:, i1] * frac[None, :, None]
    )
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return Texture(out)


def save_png(image: Pattern | Texture, path, *, compress_level: int = 6) -> None:
    """Write a pattern or texture as 24-bit RGB PNG (no alpha, no interlace)."""
    Image.fromarray(image.pixels, "RGB").save(
        str(path), format="PNG", compress_level=compress_level
    )


def png_bytes(image: Pattern | Texture, *, compress_level: int = 6) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(image.pixels, "RGB").save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def _load_rgb(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        return np.asarray(im.convert("RGB"))


def load_pattern(path: str | Path) -> Pattern:
    return Pattern(_load_rgb(path))


def load_texture(path: str | Path) -> Texture:
    return Texture(_load_rgb(path))


def texture_from_png_bytes(data: bytes) -> Texture:
    import io

    with Image.open(io.BytesIO(data)) as im:
        return Texture(np.asarray(im.convert("RGB")))
