"""Perceptual measurements: region means, intensity shifts, alignment, PAS, profiles.

The tau-alignment rule is the intent-consistent reading of the threshold
metric: a region expected to darken is aligned when mean_out < tau * mean_in,
a region expected to lighten when mean_out > mean_in / tau. Lowering tau makes
both reads strictly harder. The verbatim mean-absolute shift (delta_intensity)
is always computed and reported alongside.

Measurements operate on whatever domain they are handed; reports in this
package always meter in display01 and say so in their headers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import EmptyRegionError, ImageGrid, RegionMask

TIE_TOL = 1e-9


@dataclass(frozen=True)
class RegionMeasurement:
    region_id: str
    means: tuple       # per-channel mean intensity
    domain: str

    @property
    def luminance(self) -> float:
        """Unweighted channel mean; equals the value itself for grayscale."""
        return float(np.mean(self.means))


@dataclass(frozen=True)
class AlignmentResult:
    region_id: str
    delta_i: tuple            # per-channel mean absolute shift
    in_mean: float            # luminance of the input region
    out_mean: float           # luminance of the output region
    tau: float
    aligned: bool
    direction_expected: str
    direction_observed: str


def _check_mask(img: ImageGrid, r: RegionMask):
    if r.shape != img.shape[:2]:
        raise ValueError(f"mask {r.id!r} shape {r.shape} does not match image {img.shape[:2]}")
    if r.count < 1:
        raise EmptyRegionError(f"region {r.id!r} is empty")


def region_mean_intensity(img: ImageGrid, r: RegionMask) -> RegionMeasurement:
    """Per-channel mean over the masked pixels: (1/M) * sum over region."""
    _check_mask(img, r)
    means = img.data[r.bits].mean(axis=0)
    return RegionMeasurement(region_id=r.id, means=tuple(float(m) for m in means), domain=img.domain)


def delta_intensity(in_img: ImageGrid, out_img: ImageGrid, r: RegionMask) -> tuple:
    """Per-channel mean absolute difference inside the region."""
    if in_img.domain != out_img.domain:
        raise ValueError(f"domain mismatch: {in_img.domain} vs {out_img.domain}")
    if in_img.shape != out_img.shape:
        raise ValueError(f"shape mismatch: {in_img.shape} vs {out_img.shape}")
    _check_mask(in_img, r)
    diff = np.abs(out_img.data[r.bits] - in_img.data[r.bits]).mean(axis=0)
    return tuple(float(d) for d in diff)


def _observed_direction(in_mean: float, out_mean: float) -> str:
    if out_mean < in_mean - TIE_TOL:
        return "darker"
    if out_mean > in_mean + TIE_TOL:
        return "lighter"
    return "none"


def alignment_check(
    in_img: ImageGrid,
    out_img: ImageGrid,
    r: RegionMask,
    tau: float,
    expected: str,
) -> AlignmentResult:
    """Threshold test of the region shift against the expected direction."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if expected not in ("darker", "lighter"):
        raise ValueError(f"expected direction must be darker or lighter, got {expected!r}")
    m_in = region_mean_intensity(in_img, r).luminance
    m_out = region_mean_intensity(out_img, r).luminance
    di = delta_intensity(in_img, out_img, r)
    if expected == "darker":
        aligned = m_out < tau * m_in
    else:
        aligned = m_out > m_in / tau
    return AlignmentResult(
        region_id=r.id,
        delta_i=di,
        in_mean=m_in,
        out_mean=m_out,
        tau=tau,
        aligned=bool(aligned),
        direction_expected=expected,
        direction_observed=_observed_direction(m_in, m_out),
    )


def perception_accuracy_score(results: list, group_ids: list | None = None) -> float:
    """Percentage of images whose checked regions ALL align.

    ``group_ids`` maps each result to its image; without it every result is
    its own image. Counting is exact integer arithmetic.
    """
    if not results:
        raise ValueError("perception_accuracy_score needs a nonempty result list")
    if group_ids is None:
        group_ids = list(range(len(results)))
    if len(group_ids) != len(results):
        raise ValueError("group_ids must parallel results")
    ok: dict = {}
    for gid, res in zip(group_ids, results):
        aligned = res.aligned if isinstance(res, AlignmentResult) else bool(res)
        ok[gid] = ok.get(gid, True) and aligned
    return 100.0 * sum(ok.values()) / len(ok)


def shift_direction(
    in_img: ImageGrid, out_img: ImageGrid, r1: RegionMask, r2: RegionMask
) -> str:
    """Which paired target got darker: 'r1_darker', 'r2_darker', or 'tie'.

    Requires physically identical inputs (paired illusion targets); luminance
    is the unweighted channel mean.
    """
    m1_in = region_mean_intensity(in_img, r1).luminance
    m2_in = region_mean_intensity(in_img, r2).luminance
    if abs(m1_in - m2_in) >= TIE_TOL:
        raise ValueError(
            f"regions {r1.id!r}/{r2.id!r} have unequal input means "
            f"({m1_in} vs {m2_in}); not a paired illusion"
        )
    m1 = region_mean_intensity(out_img, r1).luminance
    m2 = region_mean_intensity(out_img, r2).luminance
    if abs(m1 - m2) < TIE_TOL:
        return "tie"
    return "r1_darker" if m1 < m2 else "r2_darker"


def extract_profile(img: ImageGrid, row: int, col_range: tuple | None = None) -> np.ndarray:
    """Pixel values along a horizontal cross-section, shape (len, channels)."""
    if not 0 <= row < img.height:
        raise IndexError(f"row {row} out of bounds for height {img.height}")
    c0, c1 = (0, img.width) if col_range is None else col_range
    if not (0 <= c0 < c1 <= img.width):
        raise IndexError(f"column range [{c0}, {c1}) out of bounds for width {img.width}")
    return img.data[row, c0:c1, :].copy()
