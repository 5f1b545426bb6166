"""Detection-score oracles.

An oracle stands in for the whole "assign texture, render, detect" loop:
it maps (texture, camera transforms) to one detection score per transform,
each in [0, 1], deterministically. Lower is better for the attacker.

Besides the remote client (see ``remote``), this module ships two
synthetic oracles used for testing and desk-scale experiments:

* ``PlantedWeaknessOracle`` hides a target pattern and scores by L1
  distance to it, so search progress is measurable against ground truth.
* ``FrequencyPreferenceOracle`` rewards mosaics whose block size sits at
  a preferred spatial frequency, mimicking the empirical finding that
  mid-frequency block camouflage attacks detectors best.

Synthetic oracles score straight from the pattern and ER configuration
where possible, so a search run never materializes 2048^2 buffers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .metrics import CameraTransform
from .textures import ErConfig, Pattern, Texture


@dataclass(frozen=True)
class OracleQuery:
    """One scoring request: a texture (or the pattern it derives from) plus views.

    Either ``texture`` or the (``pattern``, ``er``) pair must be present;
    ``pattern`` alone is enough for oracles that ignore the tiling.
    """

    transforms: tuple[CameraTransform, ...]
    pattern: Pattern | None = None
    er: ErConfig | None = None
    texture: Texture | None = None

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not self.transforms:
            raise ValueError("a query needs at least one camera transform")
        if self.texture is None and self.pattern is None:
            raise ValueError("a query needs a texture or a pattern")

    def build_texture(self) -> Texture:
        if self.texture is not None:
            return self.texture
        if self.er is None:
            raise ValueError("cannot build a texture without an ER configuration")
        from .textures import er_construct

        return er_construct(self.pattern, self.er)


@dataclass(frozen=True)
class OracleResponse:
    """Per-transform detection scores, order-aligned with the query."""

    scores: tuple[float, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)


class DetectionOracle:
    """Interface: deterministic (texture, transforms) -> per-transform scores."""

    def evaluate(self, query: OracleQuery) -> OracleResponse:
        raise NotImplementedError

    def close(self) -> None:
        """Release any underlying resources (no-op for synthetic oracles)."""


class ConstantOracle(DetectionOracle):
    """Returns the same score for every texture and transform."""

    def __init__(self, score: float):
        if not 0.0 <= score <= 1.0:
            raise ValueError("constant score must lie in [0, 1]")
        self.score = float(score)

    def evaluate(self, query: OracleQuery) -> OracleResponse:
        return OracleResponse(scores=(self.score,) * len(query.transforms))


def _transform_offset(seed: int, t: CameraTransform, scale: float) -> float:
    """Fixed pseudo-random offset in [-scale, +scale], a pure function of
    (seed, transform). Stable across processes."""
    key = f"{seed}|{t.distance_m!r}|{t.azimuth_deg!r}".encode()
    digest = hashlib.sha256(key).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    return (2.0 * u - 1.0) * scale


class PlantedWeaknessOracle(DetectionOracle):
    """Scores by mean absolute channel distance to a hidden target pattern.

    score_t = clamp01(mean|x - target| / 255 + offset_t), where offset_t is a
    fixed per-transform bias in [-offset_scale, +offset_scale] derived from
    the seed. Strictly increasing in L1 distance from the target, so any
    working minimizer must converge toward it.

    ``target`` may be supplied explicitly (tests); by default it is drawn
    uniformly from the seed.
    """

    def __init__(self, seed: int, pattern_exponent: int, *,
                 offset_scale: float = 0.02, target: Pattern | None = None):
        if not 0 <= pattern_exponent <= 11:
            raise ValueError("pattern exponent must be in [0, 11]")
        if not 0.0 <= offset_scale <= 0.02:
            raise ValueError("offset scale must lie in [0, 0.02]")
        self.seed = int(seed)
        self.offset_scale = float(offset_scale)
        if target is None:
            # salted stream: a search seeded identically must not start on
            # the hidden target by construction
            rng = np.random.default_rng([self.seed, 0x7A46E7])
            side = 1 << pattern_exponent
            target = Pattern(rng.integers(0, 256, size=(side, side, 3), dtype=np.uint8))
        elif target.side_exponent != pattern_exponent:
            raise ValueError("explicit target must match the pattern exponent")
        self.target = target
        self._offsets: dict[CameraTransform, float] = {}

    def _offset(self, t: CameraTransform) -> float:
        off = self._offsets.get(t)
        if off is None:
            off = _transform_offset(self.seed, t, self.offset_scale)
            self._offsets[t] = off
        return off

    def evaluate(self, query: OracleQuery) -> OracleResponse:
        if query.pattern is None:
            raise ValueError("planted oracle requires the query to carry the pattern")
        if query.pattern.side != self.target.side:
            raise ValueError(
                f"pattern side {query.pattern.side} does not match target side {self.target.side}"
            )
        dist = float(
            np.mean(
                np.abs(
                    query.pattern.pixels.astype(np.int16) - self.target.pixels.astype(np.int16)
                )
            )
        ) / 255.0
        scores = tuple(min(1.0, max(0.0, dist + self._offset(t))) for t in query.transforms)
        return OracleResponse(scores=scores)


def dominant_block_side(grid: np.ndarray) -> int:
    """Largest power-of-two b such that the image is constant on every
    aligned b x b block.

    Works on any square 2^k-sided RGB array. Uniform blocks of side b exist
    iff rows only change at indices divisible by b and likewise for columns,
    so only two full-array comparisons are needed.
    """
    side = grid.shape[0]
    best = side
    row_changed = np.any(grid[1:] != grid[:-1], axis=(1, 2))
    col_changed = np.any(grid[:, 1:] != grid[:, :-1], axis=(0, 2))
    for changed in (row_changed, col_changed):
        for idx in (np.flatnonzero(changed) + 1).tolist():
            b = idx & -idx  # largest power of two dividing idx
            if b < best:
                best = b
        if best == 1:
            return 1
    return int(best)


def block_stats(grid: np.ndarray) -> tuple[int, float]:
    """(dominant block side, contrast) of a square RGB array.

    Contrast is the mean absolute color difference between adjacent
    dominant blocks, normalized to [0, 1]; a single-block image has
    contrast 0.
    """
    b = dominant_block_side(grid)
    coarse = grid[::b, ::b].astype(np.int16)
    n = coarse.shape[0]
    if n == 1:
        return b, 0.0
    dh = np.abs(coarse[:, 1:] - coarse[:, :-1])
    dv = np.abs(coarse[1:, :] - coarse[:-1, :])
    total = float(dh.sum()) + float(dv.sum())
    count = dh.size + dv.size
    return b, total / count / 255.0


def frequency_response(block_side: int, preferred_exponent: int) -> float:
    """Bell-shaped sensitivity over log2 block size, peaking at 2^preferred."""
    return math.exp(-0.5 * (math.log2(block_side) - preferred_exponent) ** 2)


class FrequencyPreferenceOracle(DetectionOracle):
    """Scores 1 - g(block_side) * contrast: high-contrast mosaics whose block
    size sits at the preferred spatial frequency get the lowest (best for the
    attacker) scores. Uniform images score 1.0.

    The seed only names the instance; scoring itself is seed-free so the
    closed form stays checkable by hand.
    """

    def __init__(self, seed: int, preferred_exponent: int):
        if not 0 <= preferred_exponent <= 11:
            raise ValueError("preferred exponent must be in [0, 11]")
        self.seed = int(seed)
        self.preferred_exponent = int(preferred_exponent)

    def _texture_block_stats(self, query: OracleQuery) -> tuple[int, float]:
        if query.pattern is not None and query.er is not None:
            # the texture's block grid is the pattern tiled 2^r times, and
            # every grid cell spans 2^e texture pixels
            times = 1 << query.er.repeat_exponent
            grid = np.tile(query.pattern.pixels, (times, times, 1))
            b, contrast = block_stats(grid)
            return b << query.er.enlarge_exponent, contrast
        return block_stats(query.build_texture().pixels)

    def score_query(self, query: OracleQuery) -> float:
        block, contrast = self._texture_block_stats(query)
        g = frequency_response(block, self.preferred_exponent)
        return min(1.0, max(0.0, 1.0 - g * contrast))

    def evaluate(self, query: OracleQuery) -> OracleResponse:
        score = self.score_query(query)
        return OracleResponse(scores=(score,) * len(query.transforms))
