"""Guided reverse diffusion that engineers perceived-intensity differences.

The loss L = gamma * L_VI + beta * L_sim is evaluated directly on the noisy
state: L_VI sums per-channel absolute (or squared) deviations of the metered
target means from their desired intensities after the targets are added in,
and L_sim is the per-region mean squared difference between the state and the
target source values. Both touch the state only through region sums, so the
gradient is analytic and exactly zero outside all target regions.

Each diffusion step applies z <- z - alpha_lr * grad N times before the DDIM
step (the alternative order is exposed as a flag). The perceptual term's pull
saturates where gamma * sign balances the similarity pull, at
|z - O| = gamma / (2 * beta) inside a region, which bounds the reachable
desired intensities for flat targets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .imagecore import DISPLAY01, MODEL11, ImageGrid, RegionMask, to_display_units
from .schedule import SAMPLE, NoiseSchedule, Trajectory, ddim_sample_step


class NonFiniteError(RuntimeError):
    """Non-finite values appeared during optimization; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TargetSpec:
    """A target region with source values O and desired per-channel intensity k."""

    region: RegionMask
    o: np.ndarray          # scalar, (C,), or full (H, W, C) gradient field
    k: tuple               # desired per-channel intensity, model11 units

    def __post_init__(self):
        o = np.asarray(self.o, dtype=np.float64)
        o.setflags(write=False)
        object.__setattr__(self, "o", o)
        object.__setattr__(self, "k", tuple(float(v) for v in np.atleast_1d(self.k)))
        if self.region.count < 1:
            raise ValueError(f"target region {self.region.id!r} is empty")
        if any(abs(v) > 1.0 for v in self.k):
            raise ValueError(f"desired intensities must be in model11 [-1, 1], got {self.k}")
        if self.is_flat and np.any(np.abs(o) > 1.0):
            raise ValueError("flat target source values must be in model11 [-1, 1]")

    @property
    def is_flat(self) -> bool:
        return self.o.ndim <= 1

    def o_on_region(self, shape: tuple) -> np.ndarray:
        """Source values at the region's pixels, shape (M, C)."""
        m, c = self.region.count, shape[2]
        if self.o.ndim == 3:
            if self.o.shape != shape:
                raise ValueError(f"target field shape {self.o.shape} != image shape {shape}")
            return self.o[self.region.bits]
        return np.broadcast_to(np.atleast_1d(self.o), (m, c)).astype(np.float64)


@dataclass(frozen=True)
class GuidanceConfig:
    gamma: float = 0.5
    beta: float = 1.0
    n_updates: int = 5
    alpha_lr: float = 0.1
    cfg_scale: float = 10.0
    paste_targets: bool = False
    seed: int = 0
    targets: tuple = ()
    vi_norm: str = "abs"            # abs | square
    condition: str | None = None
    guide_t_range: tuple | None = None   # inclusive (t_min, t_max) step filter
    update_after_step: bool = False      # alternative guidance ordering
    height: int = 64
    width: int = 64
    channels: int = 1

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be >= 0")
        if self.n_updates < 0:
            raise ValueError("n_updates must be >= 0")
        if self.alpha_lr <= 0:
            raise ValueError("alpha_lr must be > 0")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.vi_norm not in ("abs", "square"):
            raise ValueError(f"vi_norm must be abs or square, got {self.vi_norm!r}")
        object.__setattr__(self, "targets", tuple(self.targets))


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    vi: float
    sim: float
    percept: tuple = ()     # per-target tuples of per-channel L_Percept terms
    empty: bool = False     # warning flag: no targets, loss identically zero


def _check_targets(z: ImageGrid, targets):
    taken = np.zeros(z.shape[:2], dtype=bool)
    for tg in targets:
        if tg.region.shape != z.shape[:2]:
            raise ValueError(f"target {tg.region.id!r} mask shape {tg.region.shape} != image {z.shape[:2]}")
        if (taken & tg.region.bits).any():
            raise ValueError(f"target {tg.region.id!r} overlaps another target")
        taken |= tg.region.bits


def apply_targets(z: ImageGrid, targets) -> ImageGrid:
    """Add each target's source values O inside its region, identity elsewhere."""
    _check_targets(z, targets)
    out = z.data.copy()
    for tg in targets:
        out[tg.region.bits] += tg.o_on_region(z.shape)
    return ImageGrid(out, z.domain)


def compute_loss(z: ImageGrid, targets, gamma: float, beta: float, vi_norm: str = "abs") -> LossBreakdown:
    """Loss breakdown at state z; total is exactly gamma * vi + beta * sim."""
    if not targets:
        return LossBreakdown(total=0.0, vi=0.0, sim=0.0, percept=(), empty=True)
    _check_targets(z, targets)
    z_tt = apply_targets(z, targets)
    vi = 0.0
    percept = []
    sim = 0.0
    for tg in targets:
        m = z_tt.data[tg.region.bits].mean(axis=0)
        k = np.asarray(tg.k)
        if len(k) != z.channels:
            raise ValueError(f"target {tg.region.id!r} has {len(k)} desired channels, image has {z.channels}")
        terms = np.abs(m - k) if vi_norm == "abs" else (m - k) ** 2
        percept.append(tuple(float(v) for v in terms))
        vi += float(terms.sum())
        resid = z.data[tg.region.bits] - tg.o_on_region(z.shape)
        sim += float((resid ** 2).sum() / tg.region.count)
    return LossBreakdown(total=gamma * vi + beta * sim, vi=vi, sim=sim, percept=tuple(percept))


def loss_gradient(z: ImageGrid, targets, gamma: float, beta: float, vi_norm: str = "abs") -> ImageGrid:
    """Analytic gradient of the loss wrt z; exact zeros outside all regions."""
    _check_targets(z, targets)
    grad = np.zeros(z.shape)
    for tg in targets:
        bits = tg.region.bits
        m_cnt = tg.region.count
        o_vals = tg.o_on_region(z.shape)
        m = (z.data[bits] + o_vals).mean(axis=0)
        k = np.asarray(tg.k)
        if vi_norm == "abs":
            g_vi = np.sign(m - k) / m_cnt          # subgradient 0 at the kink
        else:
            g_vi = 2.0 * (m - k) / m_cnt
        grad[bits] += gamma * g_vi + beta * (2.0 / m_cnt) * (z.data[bits] - o_vals)
    return ImageGrid(grad, MODEL11)


def guided_update(
    z: ImageGrid,
    targets,
    gamma: float,
    beta: float,
    n_updates: int,
    alpha_lr: float,
    vi_norm: str = "abs",
    step_label: int = -1,
) -> tuple:
    """N gradient steps z <- z - alpha_lr * grad; returns (z', trace of N+1 losses)."""
    trace = [compute_loss(z, targets, gamma, beta, vi_norm)]
    for i in range(n_updates):
        g = loss_gradient(z, targets, gamma, beta, vi_norm)
        z = ImageGrid(z.data - alpha_lr * g.data, z.domain)
        if not np.all(np.isfinite(z.data)):
            raise NonFiniteError(f"non-finite state after inner update {i + 1}", step=step_label)
        trace.append(compute_loss(z, targets, gamma, beta, vi_norm))
    return z, trace


@dataclass(frozen=True)
class GenerationResult:
    image: ImageGrid          # final display01 image (targets pasted if requested)
    z0: ImageGrid             # raw final model11 state, before pasting
    trace: tuple              # rows of (step, inner_iter, total, vi, sim)
    trajectory: Trajectory | None = None


def generate_with_guidance(
    sched: NoiseSchedule,
    backend,
    cfg: GuidanceConfig,
    capture: bool = False,
) -> GenerationResult:
    """Full guided reverse-diffusion pipeline from seeded standard-normal noise."""
    from .denoiser import predict_noise

    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.height, cfg.width, cfg.channels)
    z = ImageGrid(rng.standard_normal(shape), MODEL11)

    seq = tuple(reversed(sched.inference_steps)) + (0,)
    transitions = list(zip(seq, seq[1:]))
    states = [(sched.t_train, z)]
    trace_rows = []

    def guide(zc: ImageGrid, t: int) -> ImageGrid:
        if cfg.guide_t_range is not None:
            lo, hi = cfg.guide_t_range
            if not lo <= t <= hi:
                return zc
        zc, sub = guided_update(
            zc, cfg.targets, cfg.gamma, cfg.beta, cfg.n_updates, cfg.alpha_lr,
            cfg.vi_norm, step_label=t,
        )
        for i, loss in enumerate(sub):
            trace_rows.append((t, i, loss.total, loss.vi, loss.sim))
        return zc

    for t_from, t_to in transitions:
        if not cfg.update_after_step:
            z = guide(z, t_from)
        eps = predict_noise(backend, z, t_from, condition=cfg.condition, cfg_scale=cfg.cfg_scale)
        z = ddim_sample_step(z, t_from, t_to, eps, sched)
        if not np.all(np.isfinite(z.data)):
            raise NonFiniteError(f"non-finite state after DDIM step {t_from}->{t_to}", step=t_from)
        if cfg.update_after_step:
            z = guide(z, t_to)
        if capture:
            states.append((t_to, z))

    image = to_display_units(z)
    if cfg.paste_targets:
        pix = image.data.copy()
        for tg in cfg.targets:
            if tg.is_flat:
                o_disp = np.clip((np.broadcast_to(np.atleast_1d(tg.o), (cfg.channels,)) + 1.0) / 2.0, 0.0, 1.0)
                pix[tg.region.bits] = o_disp
        image = ImageGrid(pix, DISPLAY01)

    traj = Trajectory(states=tuple(states), direction=SAMPLE) if capture else None
    return GenerationResult(image=image, z0=z, trace=tuple(trace_rows), trajectory=traj)


def gamma_sweep(
    sched: NoiseSchedule,
    backend,
    cfg: GuidanceConfig,
    gammas,
) -> list:
    """Run the pipeline once per gamma with a shared seed; returns GenerationResults."""
    return [generate_with_guidance(sched, backend, replace(cfg, gamma=float(g))) for g in gammas]
