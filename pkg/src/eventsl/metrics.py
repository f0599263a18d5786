"""Quality metrics for reconstructed frames.

Fill rate is measured against the reference: the percentage of pixels the
reference considers valid that the reconstruction also filled. Error
metrics are computed over the intersection of both validity masks so a
sparse frame is scored on what it claims, not punished twice for holes
(fill rate already captures those).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .recon import ColorFrame, DepthFrame


def fill_rate(frame: DepthFrame, reference: DepthFrame) -> float:
    """Percentage of reference-valid pixels that the frame filled."""
    if frame.data.shape != reference.data.shape:
        raise ValueError("frame and reference shapes differ")
    ref_valid = reference.data > 0
    denom = int(np.count_nonzero(ref_valid))
    if denom == 0:
        raise ValueError("reference frame has no valid pixels")
    both = np.count_nonzero((frame.data > 0) & ref_valid)
    return 100.0 * both / denom


def depth_rmse(
    frame: DepthFrame, reference: DepthFrame, mask: np.ndarray | None = None
) -> float:
    """RMSE in mm over the intersection of valid pixels (or a given mask)."""
    if frame.data.shape != reference.data.shape:
        raise ValueError("frame and reference shapes differ")
    if mask is None:
        mask = (frame.data > 0) & (reference.data > 0)
    if not np.any(mask):
        raise ValueError("no overlapping valid pixels to compare")
    diff = frame.data[mask] - reference.data[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def color_psnr(
    frame: ColorFrame, reference: ColorFrame, mask: np.ndarray | None = None
) -> float:
    """PSNR in dB against 8-bit full scale; +inf for an exact match.

    The mean squared error is pooled across the three channels before the
    log, so one number summarizes the whole image.
    """
    if frame.rgb.shape != reference.rgb.shape:
        raise ValueError("frame and reference shapes differ")
    if mask is None:
        mask = frame.mask & reference.mask
    if not np.any(mask):
        raise ValueError("no overlapping valid pixels to compare")
    diff = frame.rgb[mask].astype(np.float64) - reference.rgb[mask].astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(255.0 / math.sqrt(mse))


def average_ground_truth(frames: list[DepthFrame]) -> DepthFrame:
    """Per-pixel mean over frames, counting only frames with data there.

    Useful as a denoised reference when the per-scan references themselves
    carry quantization wobble.
    """
    if not frames:
        raise ValueError("need at least one frame to average")
    shape = frames[0].data.shape
    total = np.zeros(shape)
    count = np.zeros(shape)
    t_lo = frames[0].window[0]
    t_hi = frames[0].window[1]
    for frame in frames:
        if frame.data.shape != shape:
            raise ValueError("frames have mismatched shapes")
        valid = frame.data > 0
        total[valid] += frame.data[valid]
        count[valid] += 1
        t_lo = min(t_lo, frame.window[0])
        t_hi = max(t_hi, frame.window[1])
    mean = np.divide(total, count, out=np.zeros(shape), where=count > 0)
    return DepthFrame(data=mean, window=(t_lo, t_hi))


@dataclass
class MetricsReport:
    """Named scalar results, serializable for regression tracking."""

    values: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value: float) -> None:
        self.values[name] = float(value)

    def to_json(self, path: str | Path) -> None:
        serializable = {
            key: ("inf" if math.isinf(val) else val) for key, val in self.values.items()
        }
        Path(path).write_text(json.dumps(serializable, indent=2) + "\n")

    def to_text(self) -> str:
        width = max((len(k) for k in self.values), default=0)
        lines = []
        for key, val in self.values.items():
            shown = "inf" if math.isinf(val) else f"{val:.4f}"
            lines.append(f"{key.ljust(width)}  {shown}")
        return "\n".join(lines)

    @classmethod
    def from_json(cls, path: str | Path) -> "MetricsReport":
        raw = json.loads(Path(path).read_text())
        values = {k: (math.inf if v == "inf" else float(v)) for k, v in raw.items()}
        return cls(values=values)
