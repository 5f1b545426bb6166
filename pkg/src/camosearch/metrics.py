"""Detection-score metrics and camera-transform grids.

A camouflage is judged by rendering the vehicle under a fixed set of
camera transforms (distance, azimuth) and collecting the highest
car-class detection score per view. Two aggregates are reported:

* ``s_avg``  - mean score over the transforms.
* ``p_05``   - fraction of transforms whose score reaches the detection
  threshold (0.5 by default, inclusive), i.e. the rate at which the
  vehicle still counts as detected.

The training grid (16 views) is used while searching; the denser testing
grid (96 views) is used for final reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DETECTION_THRESHOLD = 0.5

TRAINING_DISTANCES_M = (5.0, 8.0)
TRAINING_AZIMUTH_COUNT = 8
TESTING_DISTANCES_M = (5.0, 8.0, 12.0, 15.0)
TESTING_AZIMUTH_COUNT = 24


@dataclass(frozen=True)
class CameraTransform:
    """A viewpoint: meters from the vehicle and azimuth in [0, 360)."""

    distance_m: float
    azimuth_deg: float

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance must be positive, got {self.distance_m}")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)
        object.__setattr__(self, "distance_m", float(self.distance_m))


@dataclass(frozen=True)
class EvalReport:
    scores: tuple[float, ...]
    s_avg: float
    p_05: float
    threshold: float


def _grid(distances, azimuth_count) -> list[CameraTransform]:
    step = 360.0 / azimuth_count
    return [
        CameraTransform(distance_m=d, azimuth_deg=k * step)
        for d in distances
        for k in range(azimuth_count)
    ]


def training_grid() -> list[CameraTransform]:
    """16 transforms: distances {5, 8} m x 8 uniform azimuths, distance-major."""
    return _grid(TRAINING_DISTANCES_M, TRAINING_AZIMUTH_COUNT)


def testing_grid() -> list[CameraTransform]:
    """96 transforms: distances {5, 8, 12, 15} m x 24 uniform azimuths."""
    return _grid(TESTING_DISTANCES_M, TESTING_AZIMUTH_COUNT)


def compute_report(scores, threshold: float = DETECTION_THRESHOLD) -> EvalReport:
    """Aggregate per-transform scores into s_avg and p_05.

    Scores at exactly the threshold count as detected (>= is inclusive).
    """
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty score list")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("scores must lie in [0, 1]")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return EvalReport(
        scores=tuple(float(s) for s in arr),
        s_avg=float(arr.mean()),
        p_05=float(np.count_nonzero(arr >= threshold) / arr.size),
        threshold=float(threshold),
    )


# Reference results from the original simulator-scale experiments (CARLA with a
# Light-Head RCNN detector).  Reproducing them needs the full simulator stack;
# they are embedded only for side-by-side display in reports.
CLEAN_REFERENCE = {"s_avg": 0.89, "p_05": 0.91}

# per ER label: (random-baseline s_avg, searched s_avg, random p_05, searched p_05)
ER_REFERENCE = {
    "E7-R0": (0.73, 0.64, 0.75, 0.67),
    "E6-R1": (0.68, 0.56, 0.71, 0.51),
    "E5-R2": (0.56, 0.43, 0.57, 0.39),
    "E4-R3": (0.60, 0.49, 0.59, 0.47),
}

# construction-mode ablation: (label, s_avg, p_05)
RENDER_MODE_REFERENCE = (
    ("Clean", 0.89, 0.91),
    ("Bi-linear-Random", 0.85, 0.88),
    ("ER-Random", 0.56, 0.57),
    ("ER-Search", 0.43, 0.39),
)


def render_report(report: EvalReport, er_label: str, title: str = "Evaluation report") -> str:
    """Format an EvalReport as a text document with the reference rows attached."""
    lines = [
        title,
        "=" * len(title),
        f"ER configuration: {er_label}",
        f"transforms evaluated: {len(report.scores)}",
        f"S_avg: {report.s_avg:.6f}",
        f"P_{report.threshold:g}: {report.p_05:.6f}",
        "",
        "per-transform scores:",
    ]
    for i, s in enumerate(report.scores):
        lines.append(f"  [{i:3d}] {s:.6f}")
    lines += [
        "",
        "reference (CARLA + Light-Head RCNN, not reproducible without the simulator):",
        f"  clean vehicle: S_avg {CLEAN_REFERENCE['s_avg']:.2f}, P_0.5 {CLEAN_REFERENCE['p_05']:.2f}",
        "  per-ER results (random / searched):",
    ]
    for label, (rs, ss, rp, sp) in ER_REFERENCE.items():
        marker = "  <-- this configuration" if label == er_label else ""
        lines.append(f"    {label}: S_avg {rs:.2f} / {ss:.2f}, P_0.5 {rp:.2f} / {sp:.2f}{marker}")
    lines.append("  construction-mode ablation:")
    for label, s, p in RENDER_MODE_REFERENCE:
        lines.append(f"    {label}: S_avg {s:.2f}, P_0.5 {p:.2f}")
    lines.append("")
    return "\n".join(lines)
