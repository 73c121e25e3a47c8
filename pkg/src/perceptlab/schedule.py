"""Noise schedule construction and deterministic DDIM stepping in both directions.

The schedule owns every DDIM coefficient: a linear beta ramp, the cumulative
products alpha_bar (with alpha_bar[0] = 1 exactly), and the inference-step
subsequence. Inversion evaluates the noise predictor at the transition's
*target* timestep: analytic backends are singular at t = 0, and evaluating at
the step being moved toward keeps every call at t >= 1 while remaining the
exact algebraic inverse of sampling for any input-independent predictor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imagecore import MODEL11, ImageGrid, save_image, to_display_units

INVERT = "invert"
SAMPLE = "sample"


class ScheduleError(ValueError):
    """Invalid schedule parameters or a step outside the schedule."""


class TrajectoryError(RuntimeError):
    """A backend failed mid-trajectory; message carries the step index."""


@dataclass(frozen=True)
class NoiseSchedule:
    """beta[1..T] ramp plus alpha_bar[0..T] and the inference subsequence."""

    t_train: int
    beta: np.ndarray          # length T_train, beta[i] is the step-(i+1) coefficient
    alpha_bar: np.ndarray     # length T_train + 1, alpha_bar[0] == 1
    inference_steps: tuple    # strictly increasing ints in [1..T_train], ends at T_train

    def __post_init__(self):
        beta = np.ascontiguousarray(np.asarray(self.beta, dtype=np.float64))
        ab = np.ascontiguousarray(np.asarray(self.alpha_bar, dtype=np.float64))
        beta.setflags(write=False)
        ab.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    def ab(self, t: int) -> float:
        """alpha_bar at integer step t, range-checked."""
        if not 0 <= t <= self.t_train:
            raise ScheduleError(f"step {t} outside schedule [0, {self.t_train}]")
        return float(self.alpha_bar[t])

    def params(self) -> dict:
        return {
            "t_train": self.t_train,
            "beta_start": float(self.beta[0]),
            "beta_end": float(self.beta[-1]),
            "n_inference": len(self.inference_steps),
        }


def make_schedule(
    t_train: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    n_inference: int = 10,
) -> NoiseSchedule:
    """Linear beta ramp with an evenly spaced inference subsequence ending at T."""
    if n_inference < 1:
        raise ScheduleError(f"n_inference must be >= 1, got {n_inference}")
    if t_train < n_inference:
        raise ScheduleError(f"t_train ({t_train}) must be >= n_inference ({n_inference})")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alpha_bar = np.empty(t_train + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - beta)
    ideal = t_train * np.arange(1, n_inference + 1) / n_inference
    steps = tuple(int(round(x)) for x in ideal)
    if len(set(steps)) != n_inference or any(b <= a for a, b in zip(steps, steps[1:])):
        raise ScheduleError(f"degenerate inference subsequence for n={n_inference}, T={t_train}")
    return NoiseSchedule(t_train=t_train, beta=beta, alpha_bar=alpha_bar, inference_steps=steps)


def _x0_from_eps(z: np.ndarray, eps: np.ndarray, ab_t: float) -> np.ndarray:
    return (z - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)


def ddim_sample_step(
    z_t: ImageGrid, t: int, t_prev: int, eps_hat: ImageGrid, sched: NoiseSchedule
) -> ImageGrid:
    """One deterministic reverse step t -> t_prev (t_prev <= t)."""
    if t_prev > t or t_prev < 0:
        raise ScheduleError(f"sample step needs t >= t_prev >= 0, got t={t}, t_prev={t_prev}")
    if z_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: z {z_t.shape} vs eps {eps_hat.shape}")
    ab_t, ab_prev = sched.ab(t), sched.ab(t_prev)
    x0 = _x0_from_eps(z_t.data, eps_hat.data, ab_t)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat.data
    return ImageGrid(out, MODEL11)


def ddim_invert_step(
    z_t: ImageGrid, t: int, t_next: int, eps_hat: ImageGrid, sched: NoiseSchedule
) -> ImageGrid:
    """One deterministic inversion step t -> t_next (t_next >= t)."""
    if t_next < t or t < 0:
        raise ScheduleError(f"invert step needs t_next >= t >= 0, got t={t}, t_next={t_next}")
    if z_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: z {z_t.shape} vs eps {eps_hat.shape}")
    ab_t, ab_next = sched.ab(t), sched.ab(t_next)
    x0 = _x0_from_eps(z_t.data, eps_hat.data, ab_t)
    out = np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps_hat.data
    return ImageGrid(out, MODEL11)


@dataclass(frozen=True)
class Trajectory:
    """Ordered (step, state) list; step indices monotone in the declared direction."""

    states: tuple   # of (t, ImageGrid)
    direction: str

    @property
    def endpoint(self) -> ImageGrid:
        return self.states[-1][1]

    @property
    def steps(self) -> tuple:
        return tuple(t for t, _ in self.states)


def _invert_transitions(steps: tuple, steps_to_run: int | None):
    seq = (0,) + tuple(steps)
    pairs = list(zip(seq, seq[1:]))
    return pairs if steps_to_run is None else pairs[:steps_to_run]


def _sample_transitions(steps: tuple, steps_to_run: int | None):
    seq = tuple(reversed(steps)) + (0,)
    pairs = list(zip(seq, seq[1:]))
    return pairs if steps_to_run is None else pairs[:steps_to_run]


def run_trajectory(
    z_start: ImageGrid,
    sched: NoiseSchedule,
    backend,
    direction: str,
    capture: bool = False,
    steps_to_run: int | None = None,
    condition: str | None = None,
    cfg_scale: float = 1.0,
) -> Trajectory:
    """Iterate DDIM steps over the inference subsequence from z_start.

    ``invert`` walks 0 -> ... -> T evaluating eps at the target step of each
    transition; ``sample`` walks T -> ... -> 0 evaluating at the source step.
    ``steps_to_run`` truncates to the first k transitions (k = 0 returns the
    start state only). ``capture`` keeps all intermediates, else endpoints only.
    """
    from .denoiser import predict_noise  # late import: denoiser depends on schedule

    if direction not in (INVERT, SAMPLE):
        raise ValueError(f"unknown direction {direction!r}")
    if z_start.domain != MODEL11:
        raise ValueError("trajectories run in model11 domain")
    if steps_to_run is not None and steps_to_run < 0:
        raise ValueError("steps_to_run must be >= 0")

    if direction == INVERT:
        pairs = _invert_transitions(sched.inference_steps, steps_to_run)
    else:
        pairs = _sample_transitions(sched.inference_steps, steps_to_run)

    t0 = 0 if direction == INVERT else sched.t_train
    states = [(t0, z_start)]
    z = z_start
    for t_from, t_to in pairs:
        t_eval = t_to if direction == INVERT else t_from
        try:
            eps = predict_noise(backend, z, t_eval, condition=condition, cfg_scale=cfg_scale)
        except Exception as exc:
            raise TrajectoryError(f"backend failed at step t={t_eval}: {exc}") from exc
        if direction == INVERT:
            z = ddim_invert_step(z, t_from, t_to, eps, sched)
        else:
            z = ddim_sample_step(z, t_from, t_to, eps, sched)
        if capture:
            states.append((t_to, z))
    if not capture:
        last_t = pairs[-1][1] if pairs else t0
        if pairs:
            states.append((last_t, z))
    return Trajectory(states=tuple(states), direction=direction)


def export_trajectory(traj: Trajectory, sched: NoiseSchedule, directory: str | os.PathLike) -> str:
    """Write numbered display-converted PNGs plus a JSON manifest; returns manifest path."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (t, z) in enumerate(traj.states):
        fname = f"state_{i:03d}_t{t:04d}.png"
        save_image(to_display_units(z), os.path.join(directory, fname))
        entries.append({"index": i, "t": t, "alpha_bar": sched.ab(t), "file": fname})
    manifest = {
        "direction": traj.direction,
        "schedule": sched.params(),
        "states": entries,
    }
    path = os.path.join(directory, "trajectory.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
