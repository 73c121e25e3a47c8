"""Pluggable noise-prediction backends eps_hat(z, t).

Closed-form posterior-mean denoisers (Gaussian and Gaussian-mixture priors),
a least-squares linear convolutional denoiser fit on procedural corpora, a
deterministic surround-contrast reference backend, and classifier-free
guidance mixing over a small categorical condition vocabulary.

All backends are immutable and pure: predict_noise(z, t, condition) always
returns the same field for the same inputs. Analytic backends derive eps from
an x0 estimate via eps = (z - sqrt(ab)*x0) / sqrt(1 - ab) and therefore
require t >= 1 (alpha_bar[0] = 1 makes t = 0 singular).
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate, gaussian_filter, uniform_filter
from scipy.special import logsumexp

from .imagecore import DISPLAY01, MODEL11, ImageGrid, to_model_units
from .schedule import NoiseSchedule


class UnknownConditionError(ValueError):
    """A condition label outside the backend's vocabulary."""


class BackendError(ValueError):
    """Invalid backend parameters or inputs."""


def _require_t_ge_1(t: int, who: str):
    if t < 1:
        raise BackendError(f"{who} needs t >= 1 (alpha_bar[0] = 1 is singular), got t={t}")


def _eps_from_x0(z: np.ndarray, x0: np.ndarray, ab: float) -> np.ndarray:
    return (z - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


# ---------------------------------------------------------------------------
# analytic priors

@dataclass(frozen=True)
class GaussianPrior:
    """Pixelwise Gaussian prior x0 ~ N(mean, variance)."""

    mean: float | np.ndarray = 0.0
    variance: float | np.ndarray = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.variance) <= 0):
            raise BackendError("Gaussian prior variance must be > 0")


@dataclass(frozen=True)
class GMMPrior:
    """Pixelwise scalar Gaussian mixture: weights, means, variances of length K."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if not (w.ndim == m.ndim == v.ndim == 1) or not (len(w) == len(m) == len(v) >= 1):
            raise BackendError("GMM prior needs equal-length 1-D weights/means/variances")
        if np.any(w <= 0):
            raise BackendError("GMM weights must be > 0")
        if np.any(v <= 0):
            raise BackendError("GMM variances must be > 0")
        if abs(w.sum() - 1.0) > 1e-9:
            raise BackendError(f"GMM weights must sum to 1, got {w.sum()}")
        w = w / w.sum()
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return len(self.weights)


def gaussian_posterior_eps(prior: GaussianPrior, z: ImageGrid, t: int, sched: NoiseSchedule) -> ImageGrid:
    """MMSE noise estimate under z = sqrt(ab)*x0 + sqrt(1-ab)*eps, x0 ~ N(mu, s2).

    Posterior mean: x0 = mu + sqrt(ab)*s2 / (ab*s2 + 1 - ab) * (z - sqrt(ab)*mu).
    """
    _require_t_ge_1(t, "gaussian_posterior_eps")
    ab = sched.ab(t)
    mu = np.asarray(prior.mean, dtype=np.float64)
    s2 = np.asarray(prior.variance, dtype=np.float64)
    try:
        np.broadcast_shapes(mu.shape, z.shape)
        np.broadcast_shapes(s2.shape, z.shape)
    except ValueError as exc:
        raise BackendError(f"prior shape does not broadcast to image {z.shape}: {exc}") from exc
    gain = np.sqrt(ab) * s2 / (ab * s2 + (1.0 - ab))
    x0 = mu + gain * (z.data - np.sqrt(ab) * mu)
    return ImageGrid(_eps_from_x0(z.data, x0, ab), MODEL11)


def gmm_posterior_eps(prior: GMMPrior, z: ImageGrid, t: int, sched: NoiseSchedule) -> ImageGrid:
    """Mixture MMSE noise estimate, responsibilities computed in log space."""
    _require_t_ge_1(t, "gmm_posterior_eps")
    ab = sched.ab(t)
    zz = z.data[None, ...]                                   # (1, H, W, C)
    mu = prior.means[:, None, None, None]                    # (K, 1, 1, 1)
    s2 = prior.variances[:, None, None, None]
    var_z = ab * s2 + (1.0 - ab)
    logw = (
        np.log(prior.weights)[:, None, None, None]
        - 0.5 * np.log(2.0 * np.pi * var_z)
        - 0.5 * (zz - np.sqrt(ab) * mu) ** 2 / var_z
    )
    norm = logsumexp(logw, axis=0, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise BackendError("degenerate GMM responsibilities (all components at -inf)")
    w = np.exp(logw - norm)
    x0_k = mu + np.sqrt(ab) * s2 / var_z * (zz - np.sqrt(ab) * mu)
    x0 = np.sum(w * x0_k, axis=0)
    return ImageGrid(_eps_from_x0(z.data, x0, ab), MODEL11)


def unsharp_reference_eps(
    z: ImageGrid,
    t: int,
    sched: NoiseSchedule,
    strength: float = 0.8,
    blur_radius: int = 5,
    pad: str = "reflect",
) -> ImageGrid:
    """Deterministic surround-assimilation reference: x0 = z - strength*(z - boxblur(z)).

    A flat image is a blur fixed point, so x0 = z there. Like any denoiser of
    natural statistics the clean-image estimate pulls a target toward its
    surround mean (lighter on a bright surround, darker on a dark one); DDIM
    inversion steps the raw state away from x0, which is what shifts the
    physically identical targets apart in the human-perceived direction.
    """
    _require_t_ge_1(t, "unsharp_reference_eps")
    if strength < 0:
        raise BackendError(f"unsharp strength must be >= 0, got {strength}")
    if blur_radius < 1:
        raise BackendError(f"blur radius must be >= 1, got {blur_radius}")
    ab = sched.ab(t)
    side = 2 * blur_radius + 1
    blurred = uniform_filter(z.data, size=(side, side, 1), mode=pad)
    x0 = z.data - strength * (z.data - blurred)
    return ImageGrid(_eps_from_x0(z.data, x0, ab), MODEL11)


# ---------------------------------------------------------------------------
# procedural corpora for fitting

perception_corpus_kinds = ("dead_leaves", "pink_noise", "illumination_texture")


@dataclass(frozen=True)
class CorpusSpec:
    kind: str
    size: int = 64
    count: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in perception_corpus_kinds:
            raise BackendError(f"unknown corpus kind {self.kind!r}")
        if self.size < 8:
            raise BackendError(f"corpus image size must be >= 8, got {self.size}")
        if self.count < 1:
            raise BackendError(f"corpus sample count must be >= 1, got {self.count}")


def _dead_leaves(rng: np.random.Generator, size: int) -> np.ndarray:
    r_min = max(2.0, size / 16.0)
    r_max = size / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), rng.uniform(), dtype=np.float64)
    covered = np.zeros((size, size), dtype=bool)
    a, b = r_min ** -2.0, r_max ** -2.0
    for _ in range(4 * size):
        # inverse-CDF draw from density ~ r^-3 on [r_min, r_max]
        r = (a - rng.uniform() * (a - b)) ** -0.5
        cy, cx = rng.uniform(0, size), rng.uniform(0, size)
        gray = rng.uniform()
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        img[disc] = gray
        covered |= disc
        if covered.all():
            break
    return img


def _pink_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    f = np.sqrt(fx * fx + fy * fy)
    amp = np.zeros_like(f)
    amp[f > 0] = 1.0 / f[f > 0]
    spectrum = amp * (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size)))
    field = np.real(np.fft.ifft2(spectrum))
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 0.5)
    return (field - lo) / (hi - lo)


def _illumination_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16.0, mode="wrap")
    tex_lo = rng.uniform(0.2, 0.45)
    tex_hi = rng.uniform(0.55, 0.95)
    texture = np.where(noise > np.median(noise), tex_hi, tex_lo)
    u = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(u, u)
    coeff = rng.normal(size=6)
    poly = (
        coeff[0] + coeff[1] * xx + coeff[2] * yy
        + coeff[3] * xx * xx + coeff[4] * xx * yy + coeff[5] * yy * yy
    )
    lo, hi = poly.min(), poly.max()
    illum = 0.3 + 0.7 * ((poly - lo) / (hi - lo) if hi - lo > 1e-12 else np.full_like(poly, 0.5))
    return np.clip(texture * illum, 0.0, 1.0)


def generate_corpus(spec: CorpusSpec) -> list:
    """Deterministic list of display01 grayscale images for the given spec."""
    rng = np.random.default_rng(spec.seed)
    maker = {
        "dead_leaves": _dead_leaves,
        "pink_noise": _pink_noise,
        "illumination_texture": _illumination_texture,
    }[spec.kind]
    return [ImageGrid(maker(rng, spec.size), DISPLAY01) for _ in range(spec.count)]


# ---------------------------------------------------------------------------
# linear convolutional denoiser (closed-form denoising score matching)

@dataclass(frozen=True)
class LinearConvDenoiser:
    """Per-timestep-bucket depthwise kernel + bias predicting eps from z."""

    kernels: np.ndarray       # (buckets, channels, k, k)
    biases: np.ndarray        # (buckets, channels)
    bucket_bounds: tuple      # ((lo, hi), ...) inclusive integer spans covering [1..T]
    t_train: int
    fit_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = np.ascontiguousarray(np.asarray(self.kernels, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.biases, dtype=np.float64))
        if k.ndim != 4 or k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
            raise BackendError(f"kernels must be (B, C, k, k) with odd k, got {k.shape}")
        k.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "bucket_bounds", tuple(tuple(x) for x in self.bucket_bounds))

    def bucket_of(self, t: int) -> int:
        for i, (lo, hi) in enumerate(self.bucket_bounds):
            if lo <= t <= hi:
                return i
        raise BackendError(f"step t={t} outside fitted buckets {self.bucket_bounds}")


def bucket_spans(t_train: int, buckets: int) -> tuple:
    """Split [1..t_train] into ``buckets`` contiguous near-equal integer spans."""
    if buckets < 1 or buckets > t_train:
        raise BackendError(f"need 1 <= buckets <= t_train, got {buckets}")
    his = [round(t_train * (b + 1) / buckets) for b in range(buckets)]
    los = [1] + [h + 1 for h in his[:-1]]
    return tuple(zip(los, his))


def _patch_features(plane: np.ndarray, k: int) -> np.ndarray:
    """(H*W, k*k + 1) design matrix of symmetric-padded k x k patches plus bias."""
    half = k // 2
    padded = np.pad(plane, half, mode="symmetric")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    feats = win.reshape(-1, k * k)
    return np.concatenate([feats, np.ones((feats.shape[0], 1))], axis=1)


def fit_linear_denoiser(
    corpus: list,
    sched: NoiseSchedule,
    buckets: int = 4,
    kernel_side: int = 3,
    noise_draws: int = 4,
    seed: int = 0,
    ridge: float = 1e-6,
) -> LinearConvDenoiser:
    """Closed-form least squares fit of eps_hat = K * z + b per timestep bucket.

    Pairs are synthesized as z = sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps over every
    corpus image and ``noise_draws`` noise fields, t drawn uniformly inside the
    bucket. Normal equations are accumulated over all pixels; a singular system
    falls back to ridge regularization with the stated lambda.
    """
    if not corpus:
        raise BackendError("corpus must be nonempty")
    if kernel_side < 1 or kernel_side % 2 == 0:
        raise BackendError(f"kernel_side must be odd >= 1, got {kernel_side}")
    if noise_draws < 1:
        raise BackendError(f"noise_draws must be >= 1, got {noise_draws}")
    spans = bucket_spans(sched.t_train, buckets)
    imgs = [to_model_units(im) if im.domain == DISPLAY01 else im for im in corpus]
    channels = imgs[0].channels
    if any(im.shape != imgs[0].shape for im in imgs):
        raise BackendError("corpus images must share one shape")

    rng = np.random.default_rng(seed)
    d = kernel_side * kernel_side + 1
    kernels = np.zeros((buckets, channels, kernel_side, kernel_side))
    biases = np.zeros((buckets, channels))
    residuals = np.zeros((buckets, channels))
    ridge_used = False

    for b, (lo, hi) in enumerate(spans):
        ata = np.zeros((channels, d, d))
        atb = np.zeros((channels, d))
        yy = np.zeros(channels)
        n = 0
        for img in imgs:
            for _ in range(noise_draws):
                t = int(rng.integers(lo, hi + 1))
                ab = sched.ab(t)
                eps = rng.standard_normal(img.shape)
                z = np.sqrt(ab) * img.data + np.sqrt(1.0 - ab) * eps
                for c in range(channels):
                    feats = _patch_features(z[:, :, c], kernel_side)
                    y = eps[:, :, c].ravel()
                    ata[c] += feats.T @ feats
                    atb[c] += feats.T @ y
                    yy[c] += y @ y
                n += img.height * img.width
        for c in range(channels):
            try:
                w = np.linalg.solve(ata[c], atb[c])
                if not np.all(np.isfinite(w)):
                    raise np.linalg.LinAlgError("non-finite solution")
            except np.linalg.LinAlgError:
                w = np.linalg.solve(ata[c] + ridge * np.eye(d), atb[c])
                ridge_used = True
            kernels[b, c] = w[:-1].reshape(kernel_side, kernel_side)
            biases[b, c] = w[-1]
            residuals[b, c] = (yy[c] - 2.0 * w @ atb[c] + w @ ata[c] @ w) / n

    meta = {
        "seed": seed,
        "noise_draws": noise_draws,
        "corpus_size": len(imgs),
        "residuals": residuals.tolist(),
        "ridge_lambda": ridge if ridge_used else None,
    }
    return LinearConvDenoiser(
        kernels=kernels, biases=biases, bucket_bounds=spans, t_train=sched.t_train, fit_meta=meta
    )


# ---------------------------------------------------------------------------
# backend objects

class ZeroBackend:
    kind = "zero"
    vocabulary: tuple = ()

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        return ImageGrid(np.zeros(z.shape), MODEL11)

    def to_config(self) -> dict:
        return {"kind": self.kind}


class ConstantBackend:
    kind = "constant"
    vocabulary: tuple = ()

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.value.setflags(write=False)

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        try:
            out = np.broadcast_to(self.value, z.shape)
        except ValueError as exc:
            raise BackendError(f"constant field {self.value.shape} vs image {z.shape}") from exc
        return ImageGrid(np.array(out), MODEL11)

    def to_config(self) -> dict:
        return {"kind": self.kind, "value": _enc(self.value)}


class GaussianBackend:
    kind = "gaussian"
    vocabulary: tuple = ()

    def __init__(self, prior: GaussianPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        return gaussian_posterior_eps(self.prior, z, t, self.sched)

    def to_config(self) -> dict:
        return {"kind": self.kind, "mean": _enc(self.prior.mean), "variance": _enc(self.prior.variance)}


class GMMBackend:
    kind = "gmm"
    vocabulary: tuple = ()

    def __init__(self, prior: GMMPrior, sched: NoiseSchedule):
        self.prior = prior
        self.sched = sched

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        return gmm_posterior_eps(self.prior, z, t, self.sched)

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "weights": self.prior.weights.tolist(),
            "means": self.prior.means.tolist(),
            "variances": self.prior.variances.tolist(),
        }


class LinearConvBackend:
    kind = "linear_conv"
    vocabulary: tuple = ()

    def __init__(self, denoiser: LinearConvDenoiser, sched: NoiseSchedule):
        if denoiser.t_train != sched.t_train:
            raise BackendError("denoiser was fit for a different t_train")
        self.denoiser = denoiser
        self.sched = sched

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        d = self.denoiser
        b = d.bucket_of(t)
        if z.channels != d.kernels.shape[1]:
            raise BackendError(f"image has {z.channels} channels, denoiser fit for {d.kernels.shape[1]}")
        out = np.empty(z.shape)
        for c in range(z.channels):
            out[:, :, c] = correlate(z.data[:, :, c], d.kernels[b, c], mode="reflect") + d.biases[b, c]
        return ImageGrid(out, MODEL11)

    def to_config(self) -> dict:
        d = self.denoiser
        return {
            "kind": self.kind,
            "kernels": _enc(d.kernels),
            "biases": _enc(d.biases),
            "bucket_bounds": [list(x) for x in d.bucket_bounds],
            "t_train": d.t_train,
            "fit": d.fit_meta,
        }


class UnsharpBackend:
    kind = "unsharp_ref"
    vocabulary: tuple = ()

    def __init__(self, sched: NoiseSchedule, strength: float = 0.8, blur_radius: int = 5, pad: str = "reflect"):
        self.sched = sched
        self.strength = float(strength)
        self.blur_radius = int(blur_radius)
        self.pad = pad

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        _reject_condition(self, condition)
        return unsharp_reference_eps(z, t, self.sched, self.strength, self.blur_radius, self.pad)

    def to_config(self) -> dict:
        return {"kind": self.kind, "strength": self.strength, "blur_radius": self.blur_radius, "pad": self.pad}


class ConditionalBackend:
    """An unconditional backend plus labeled variants for CFG mixing."""

    def __init__(self, uncond, variants: dict):
        if not variants:
            raise BackendError("conditional backend needs at least one labeled variant")
        self.uncond = uncond
        self.variants = dict(variants)
        self.vocabulary = tuple(sorted(self.variants))

    @property
    def kind(self) -> str:
        return self.uncond.kind

    def predict_raw(self, z: ImageGrid, t: int, condition=None) -> ImageGrid:
        if condition is None:
            return self.uncond.predict_raw(z, t)
        if condition not in self.variants:
            raise UnknownConditionError(f"unknown condition {condition!r}, vocabulary {self.vocabulary}")
        return self.variants[condition].predict_raw(z, t)

    def to_config(self) -> dict:
        cfg = self.uncond.to_config()
        cfg["conditional_variants"] = {lab: be.to_config() for lab, be in self.variants.items()}
        return cfg


def _reject_condition(backend, condition):
    if condition is not None:
        raise UnknownConditionError(
            f"backend kind {backend.kind!r} is unconditional, got condition {condition!r}"
        )


def predict_noise(backend, z: ImageGrid, t: int, condition: str | None = None, cfg_scale: float = 1.0) -> ImageGrid:
    """Evaluate a backend, mixing conditional and unconditional branches.

    With a condition: eps = eps_uncond + cfg_scale * (eps_cond - eps_uncond);
    cfg_scale = 1 collapses to the conditional prediction, no condition means
    the plain (unconditional) prediction.
    """
    if z.domain != MODEL11:
        raise ValueError(f"predict_noise expects model11 input, got {z.domain}")
    if cfg_scale < 0:
        raise ValueError(f"cfg_scale must be >= 0, got {cfg_scale}")
    if condition is None:
        return backend.predict_raw(z, t, None)
    eps_cond = backend.predict_raw(z, t, condition)
    if cfg_scale == 1.0:
        return eps_cond
    eps_uncond = backend.predict_raw(z, t, None)
    mixed = eps_uncond.data + cfg_scale * (eps_cond.data - eps_uncond.data)
    return ImageGrid(mixed, MODEL11)


# ---------------------------------------------------------------------------
# serialization (JSON with base64-encoded float64 arrays)

def _enc(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr)
    return {
        "__array__": base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii"),
        "shape": list(arr.shape),
        "dtype": "float64",
    }


def _dec(value):
    if isinstance(value, dict) and "__array__" in value:
        raw = base64.b64decode(value["__array__"])
        return np.frombuffer(raw, dtype=np.float64).reshape(value["shape"]).copy()
    return value


def backend_from_config(cfg: dict, sched: NoiseSchedule):
    """Rebuild a backend (optionally with conditional variants) from its config dict."""
    variants_cfg = cfg.get("conditional_variants")
    base = {k: v for k, v in cfg.items() if k != "conditional_variants"}
    kind = base.get("kind")
    if kind == "zero":
        backend = ZeroBackend()
    elif kind == "constant":
        backend = ConstantBackend(_dec(base["value"]))
    elif kind == "gaussian":
        backend = GaussianBackend(GaussianPrior(_dec(base["mean"]), _dec(base["variance"])), sched)
    elif kind == "gmm":
        backend = GMMBackend(
            GMMPrior(np.asarray(base["weights"]), np.asarray(base["means"]), np.asarray(base["variances"])),
            sched,
        )
    elif kind == "linear_conv":
        den = LinearConvDenoiser(
            kernels=_dec(base["kernels"]),
            biases=_dec(base["biases"]),
            bucket_bounds=tuple(tuple(x) for x in base["bucket_bounds"]),
            t_train=base["t_train"],
            fit_meta=base.get("fit", {}),
        )
        backend = LinearConvBackend(den, sched)
    elif kind == "unsharp_ref":
        backend = UnsharpBackend(
            sched,
            strength=base.get("strength", 0.8),
            blur_radius=base.get("blur_radius", 5),
            pad=base.get("pad", "reflect"),
        )
    else:
        raise BackendError(f"unknown backend kind {kind!r}")
    if variants_cfg:
        variants = {lab: backend_from_config(sub, sched) for lab, sub in variants_cfg.items()}
        return ConditionalBackend(backend, variants)
    return backend


def save_backend(backend, path: str | os.PathLike) -> str:
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(backend.to_config(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_backend(path: str | os.PathLike, sched: NoiseSchedule):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise BackendError(f"no such backend file: {path}")
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    return backend_from_config(cfg, sched)


def backend_id(backend) -> str:
    """Stable short identifier: kind plus a hash of the full config."""
    blob = json.dumps(backend.to_config(), sort_keys=True).encode("utf-8")
    return f"{backend.kind}-{hashlib.sha256(blob).hexdigest()[:12]}"
