"""Procedural brightness-illusion stimuli with pixel-exact target masks.

Four kinds: simultaneous_contrast, whites, grating_induction, hermann_grid.
Paired target regions are constructed physically identical (exactly equal
pixel values); expected-direction labels record the human percept per region.
Control variants place both targets on identical surrounds so no illusion is
predicted and every region is labeled "none".

Randomized generation snaps luminances to the 8-bit grid so that writing a
stimulus set to PNG and reloading it round-trips exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imagecore import (
    DISPLAY01,
    EmptyRegionError,
    ImageGrid,
    RegionMask,
    load_image,
    load_mask,
    save_image,
    save_mask,
)

STIMULUS_KINDS = ("simultaneous_contrast", "whites", "grating_induction", "hermann_grid")
EXPECTED_LABELS = ("darker", "lighter", "none")

DARKER = "darker"
LIGHTER = "lighter"
NONE = "none"


class StimulusError(ValueError):
    """Invalid stimulus geometry or parameters."""


@dataclass(frozen=True)
class StimulusRegion:
    mask: RegionMask
    expected: str
    pair_id: str | None = None

    def __post_init__(self):
        if self.expected not in EXPECTED_LABELS:
            raise StimulusError(f"unknown expected label {self.expected!r}")


@dataclass(frozen=True)
class Stimulus:
    id: str
    image: ImageGrid
    regions: tuple
    kind: str
    params: dict
    seed: int


@dataclass(frozen=True)
class StimulusSpec:
    kind: str
    size: int = 64
    params: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STIMULUS_KINDS:
            raise StimulusError(f"unknown stimulus kind {self.kind!r}")
        if self.size < 16:
            raise StimulusError(f"canvas size must be >= 16, got {self.size}")
        object.__setattr__(self, "params", dict(self.params or {}))


def snap8(x: float) -> float:
    """Snap a luminance to the 8-bit display grid."""
    return round(x * 255.0) / 255.0


def _rect_mask(size: int, y0: int, x0: int, h: int, w: int, id: str) -> RegionMask:
    bits = np.zeros((size, size), dtype=bool)
    bits[y0 : y0 + h, x0 : x0 + w] = True
    return RegionMask(id=id, bits=bits)


def _check_regions(img: ImageGrid, regions):
    taken = np.zeros(img.shape[:2], dtype=bool)
    for reg in regions:
        if reg.mask.shape != img.shape[:2]:
            raise StimulusError(f"mask {reg.mask.id!r} shape {reg.mask.shape} != image {img.shape[:2]}")
        if (taken & reg.mask.bits).any():
            raise StimulusError(f"mask {reg.mask.id!r} overlaps another region")
        taken |= reg.mask.bits
    pair_values = {}
    for reg in regions:
        if reg.pair_id is None:
            continue
        vals = img.data[reg.mask.bits]
        ref = pair_values.setdefault(reg.pair_id, vals)
        if vals.shape != ref.shape or np.max(np.abs(vals - ref)) != 0.0:
            raise StimulusError(f"paired targets of {reg.pair_id!r} are not pixel-identical")


def _gen_simultaneous_contrast(spec: StimulusSpec) -> Stimulus:
    p = dict(spec.params)
    size = spec.size
    l_left = p.setdefault("left_luminance", 1.0)
    l_right = p.setdefault("right_luminance", 0.0)
    lt = p.setdefault("target_luminance", 0.5)
    ts = p.setdefault("target_size", max(6, size // 8))
    control = bool(p.setdefault("control", False))
    if control:
        l_right = l_left
        p["right_luminance"] = l_right
    half = size // 2
    if ts + 2 > half or ts + 2 > size:
        raise StimulusError(f"target size {ts} does not fit inside a {half}-wide half with margin")
    if not control:
        lo, hi = min(l_left, l_right), max(l_left, l_right)
        if not (lo < lt < hi):
            raise StimulusError(f"target luminance {lt} must lie strictly between surrounds {lo}, {hi}")
    elif lt == l_left:
        raise StimulusError("control target luminance must differ from the surround")

    img = np.empty((size, size, 1))
    img[:, :half] = l_left
    img[:, half:] = l_right
    y0 = (size - ts) // 2
    xl = (half - ts) // 2
    xr = half + (size - half - ts) // 2
    img[y0 : y0 + ts, xl : xl + ts, 0] = lt
    img[y0 : y0 + ts, xr : xr + ts, 0] = lt

    def label(surround):
        if control:
            return NONE
        return DARKER if surround > lt else LIGHTER

    regions = (
        StimulusRegion(_rect_mask(size, y0, xl, ts, ts, "target_left"), label(l_left), "pair0"),
        StimulusRegion(_rect_mask(size, y0, xr, ts, ts, "target_right"), label(l_right), "pair0"),
    )
    return Stimulus(
        id=f"{spec.kind}-{spec.seed}",
        image=ImageGrid(img, DISPLAY01),
        regions=regions,
        kind=spec.kind,
        params=p,
        seed=spec.seed,
    )


def _gen_whites(spec: StimulusSpec) -> Stimulus:
    p = dict(spec.params)
    size = spec.size
    l_dark = p.setdefault("dark_luminance", 0.0)
    l_light = p.setdefault("light_luminance", 1.0)
    lt = p.setdefault("target_luminance", 0.5)
    bar_w = p.setdefault("bar_width", max(4, size // 8))
    th = p.setdefault("target_height", max(6, size // 4))
    control = bool(p.setdefault("control", False))
    if l_dark >= l_light:
        raise StimulusError("dark bar luminance must be below light bar luminance")
    if not (l_dark < lt < l_light):
        raise StimulusError(f"target luminance {lt} must lie strictly between bar luminances")
    n_bars = size // bar_w
    if n_bars < 4:
        raise StimulusError(f"bar width {bar_w} leaves fewer than 4 bars on a {size} canvas")
    if th + 2 > size:
        raise StimulusError(f"target height {th} does not fit the canvas")

    cols = np.arange(size)
    phase = (cols // bar_w) % 2  # 0 = dark bar, 1 = light bar
    row = np.where(phase == 1, l_light, l_dark)
    img = np.tile(row[None, :, None], (size, 1, 1)).astype(np.float64)

    # one target embedded in a dark-phase bar, one in a light-phase bar
    # (control: both on light-phase bars)
    want = (1, 1) if control else (0, 1)
    bars_left = [b for b in range(1, n_bars // 2) if b % 2 == want[0]]
    bars_right = [b for b in range(n_bars // 2, n_bars - 1) if b % 2 == want[1]]
    if not bars_left or not bars_right:
        raise StimulusError("cannot place targets on the requested bar phases")
    b0, b1 = bars_left[len(bars_left) // 2], bars_right[len(bars_right) // 2]
    y0 = (size - th) // 2
    regions = []
    for name, b in (("target_a", b0), ("target_b", b1)):
        x0 = b * bar_w
        img[y0 : y0 + th, x0 : x0 + bar_w, 0] = lt
        on_light = phase[x0] == 1
        expected = NONE if control else (DARKER if on_light else LIGHTER)
        regions.append(StimulusRegion(_rect_mask(size, y0, x0, th, bar_w, name), expected, "pair0"))
    return Stimulus(
        id=f"{spec.kind}-{spec.seed}",
        image=ImageGrid(img, DISPLAY01),
        regions=tuple(regions),
        kind=spec.kind,
        params=p,
        seed=spec.seed,
    )


def _gen_grating_induction(spec: StimulusSpec) -> Stimulus:
    p = dict(spec.params)
    size = spec.size
    mean = p.setdefault("mean_luminance", 0.5)
    amp = p.setdefault("amplitude", 0.4)
    cycles = p.setdefault("cycles", 4)
    phase0 = p.setdefault("phase", 0.0)
    stripe_h = p.setdefault("stripe_height", max(4, size // 8))
    lt = p.setdefault("target_luminance", mean)
    control = bool(p.setdefault("control", False))
    if control:
        amp = 0.0
        p["amplitude"] = amp
    if amp < 0 or mean - amp < 0.0 or mean + amp > 1.0:
        raise StimulusError(f"grating range [{mean - amp}, {mean + amp}] leaves [0, 1]")
    if stripe_h + 2 > size:
        raise StimulusError("stripe does not fit the canvas")

    x = np.arange(size)
    sinval = np.sin(2.0 * np.pi * cycles * x / size + phase0)
    # snap the continuous sinusoid to the 8-bit grid so PNG round-trips exactly
    col = np.round((mean + amp * sinval) * 255.0) / 255.0
    img = np.tile(col[None, :, None], (size, 1, 1)).astype(np.float64)
    y0 = (size - stripe_h) // 2
    img[y0 : y0 + stripe_h, :, 0] = snap8(lt)

    bright_cols = sinval > 0.5
    dark_cols = sinval < -0.5
    if not control and (not bright_cols.any() or not dark_cols.any()):
        raise StimulusError("grating has no solidly bright/dark columns for masks")
    regions = []
    for name, cols_sel, expected in (
        ("stripe_over_bright", bright_cols, DARKER),
        ("stripe_over_dark", dark_cols, LIGHTER),
    ):
        bits = np.zeros((size, size), dtype=bool)
        bits[y0 : y0 + stripe_h, :] = cols_sel[None, :]
        if control:
            # flat background: keep a single whole-stripe region, no prediction
            continue
        regions.append(StimulusRegion(RegionMask(id=name, bits=bits), expected, "pair0"))
    if control:
        bits = np.zeros((size, size), dtype=bool)
        bits[y0 : y0 + stripe_h, :] = True
        regions.append(StimulusRegion(RegionMask(id="stripe", bits=bits), NONE, None))
    return Stimulus(
        id=f"{spec.kind}-{spec.seed}",
        image=ImageGrid(img, DISPLAY01),
        regions=tuple(regions),
        kind=spec.kind,
        params=p,
        seed=spec.seed,
    )


def _gen_hermann_grid(spec: StimulusSpec) -> Stimulus:
    p = dict(spec.params)
    size = spec.size
    sq = p.setdefault("square_size", max(8, size // 5))
    street = p.setdefault("street_width", max(2, size // 16))
    l_dark = p.setdefault("square_luminance", 0.0)
    l_light = p.setdefault("street_luminance", 1.0)
    max_regions = p.setdefault("max_regions", 4)
    if l_dark >= l_light:
        raise StimulusError("squares must be darker than streets")
    period = sq + street
    if size < 2 * period + street:
        raise StimulusError(f"canvas {size} too small for square {sq} + street {street}")

    ys = np.arange(size)
    street_band = (ys % period) < street
    img = np.full((size, size, 1), l_dark)
    img[street_band, :, 0] = l_light
    img[:, street_band, 0] = l_light

    centers = [k * period for k in range(1, size // period + 1) if k * period + street <= size]
    regions = []
    for cy in centers:
        for cx in centers:
            if len(regions) >= max_regions:
                break
            name = f"intersection_{cy}_{cx}"
            regions.append(
                StimulusRegion(_rect_mask(size, cy, cx, street, street, name), DARKER, None)
            )
    if not regions:
        raise StimulusError("no interior street intersections available for masks")
    return Stimulus(
        id=f"{spec.kind}-{spec.seed}",
        image=ImageGrid(img, DISPLAY01),
        regions=tuple(regions),
        kind=spec.kind,
        params=p,
        seed=spec.seed,
    )


_GENERATORS = {
    "simultaneous_contrast": _gen_simultaneous_contrast,
    "whites": _gen_whites,
    "grating_induction": _gen_grating_induction,
    "hermann_grid": _gen_hermann_grid,
}


def gen_stimulus(spec: StimulusSpec) -> Stimulus:
    """Generate one stimulus; pure in the spec, masks validated disjoint and in-bounds."""
    stim = _GENERATORS[spec.kind](spec)
    _check_regions(stim.image, stim.regions)
    return stim


def random_stimulus_spec(kind: str, size: int, seed: int, control: bool = False) -> StimulusSpec:
    """Randomized generation parameters with luminances snapped to the 8-bit grid."""
    rng = np.random.default_rng(seed)
    if kind == "simultaneous_contrast":
        dark = snap8(rng.uniform(0.0, 0.25))
        light = snap8(rng.uniform(0.75, 1.0))
        left_is_light = bool(rng.integers(2))
        params = {
            "left_luminance": light if left_is_light else dark,
            "right_luminance": dark if left_is_light else light,
            "target_luminance": snap8(rng.uniform(0.4, 0.6)),
            "target_size": int(rng.integers(max(4, size // 10), max(6, size // 6))),
            "control": control,
        }
    elif kind == "whites":
        params = {
            "dark_luminance": snap8(rng.uniform(0.0, 0.2)),
            "light_luminance": snap8(rng.uniform(0.8, 1.0)),
            "target_luminance": snap8(rng.uniform(0.4, 0.6)),
            "bar_width": int(rng.integers(max(3, size // 16), max(5, size // 8))),
            "target_height": int(rng.integers(size // 5, size // 3)),
            "control": control,
        }
    elif kind == "grating_induction":
        params = {
            "mean_luminance": 0.5,
            "amplitude": snap8(rng.uniform(0.25, 0.45)),
            "cycles": int(rng.integers(3, 6)),
            "phase": float(rng.uniform(0.0, 2.0 * np.pi)),
            "stripe_height": int(rng.integers(max(3, size // 12), max(5, size // 6))),
            "target_luminance": 0.5,
            "control": control,
        }
    elif kind == "hermann_grid":
        params = {
            "square_size": int(rng.integers(size // 6, size // 4)),
            "street_width": int(rng.integers(2, max(3, size // 12))),
            "square_luminance": snap8(rng.uniform(0.0, 0.15)),
            "street_luminance": snap8(rng.uniform(0.85, 1.0)),
            "max_regions": 4,
        }
    else:
        raise StimulusError(f"unknown stimulus kind {kind!r}")
    return StimulusSpec(kind=kind, size=size, params=params, seed=seed)


# ---------------------------------------------------------------------------
# manifest I/O

def _jsonify(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    return value


def write_stimulus_set(stimuli: list, directory: str | os.PathLike) -> str:
    """Write PNGs for images and masks plus a canonical JSON manifest."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    entries = []
    seen = set()
    for stim in stimuli:
        if stim.id in seen:
            raise StimulusError(f"duplicate stimulus id {stim.id!r} in set")
        seen.add(stim.id)
        image_name = f"{stim.id}.png"
        save_image(stim.image, os.path.join(directory, image_name))
        regions = []
        for reg in stim.regions:
            mask_name = f"{stim.id}__{reg.mask.id}.png"
            save_mask(reg.mask, os.path.join(directory, mask_name))
            regions.append(
                {"id": reg.mask.id, "mask": mask_name, "expected": reg.expected, "pair": reg.pair_id}
            )
        entries.append(
            {
                "id": stim.id,
                "image": image_name,
                "regions": regions,
                "kind": stim.kind,
                "params": _jsonify(stim.params),
                "seed": stim.seed,
            }
        )
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path: str | os.PathLike) -> list:
    """Load a stimulus set; errors name the offending entry."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise StimulusError(f"no such manifest: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    stimuli = []
    for entry in entries:
        sid = entry.get("id", "<missing id>")
        image = load_image(os.path.join(base, entry["image"]))
        regions = []
        for reg in entry["regions"]:
            if reg["expected"] not in EXPECTED_LABELS:
                raise StimulusError(f"{sid}: unknown expected label {reg['expected']!r}")
            try:
                mask = load_mask(os.path.join(base, reg["mask"]), id=reg["id"])
            except EmptyRegionError as exc:
                raise StimulusError(f"{sid}: region {reg['id']!r}: {exc}") from exc
            if mask.shape != image.shape[:2]:
                raise StimulusError(
                    f"{sid}: mask {reg['id']!r} is {mask.shape}, image is {image.shape[:2]}"
                )
            regions.append(StimulusRegion(mask, reg["expected"], reg.get("pair")))
        stimuli.append(
            Stimulus(
                id=sid,
                image=image,
                regions=tuple(regions),
                kind=entry["kind"],
                params=entry.get("params", {}),
                seed=entry.get("seed", 0),
            )
        )
    return stimuli


def stimuli_equal(a: Stimulus, b: Stimulus) -> bool:
    """Deep equality used by round-trip tests."""
    if (a.id, a.kind, a.seed, a.params) != (b.id, b.kind, b.seed, b.params):
        return False
    if a.image.shape != b.image.shape or not np.array_equal(a.image.data, b.image.data):
        return False
    if len(a.regions) != len(b.regions):
        return False
    for ra, rb in zip(a.regions, b.regions):
        if (ra.mask.id, ra.expected, ra.pair_id) != (rb.mask.id, rb.expected, rb.pair_id):
            return False
        if not np.array_equal(ra.mask.bits, rb.mask.bits):
            return False
    return True
