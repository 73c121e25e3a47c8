"""Acceptance gate: one test per primary criterion, each at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion. Tolerances are pinned here and nowhere else.
"""

import json
import os
import time

import numpy as np

from perceptlab.cli import main
from perceptlab.denoiser import (
    ConditionalBackend,
    ConstantBackend,
    GaussianBackend,
    GaussianPrior,
    GMMPrior,
    UnsharpBackend,
    gaussian_posterior_eps,
    gmm_posterior_eps,
)
from perceptlab.evalreport import run_replication, summarize_psychophysics
from perceptlab.guidance import (
    GuidanceConfig,
    TargetSpec,
    apply_targets,
    compute_loss,
    generate_with_guidance,
    loss_gradient,
)
from perceptlab.imagecore import MODEL11, ImageGrid, RegionMask, to_display_units, to_model_units
from perceptlab.perception import (
    alignment_check,
    delta_intensity,
    perception_accuracy_score,
    region_mean_intensity,
    shift_direction,
)
from perceptlab.schedule import INVERT, SAMPLE, NoiseSchedule, make_schedule, run_trajectory
from perceptlab.stimuli import gen_stimulus, random_stimulus_spec


def ok(name: str):
    print(f"ACCEPTANCE PASS: {name}")


def rect_mask(shape, y, x, h, w, id):
    bits = np.zeros(shape, dtype=bool)
    bits[y : y + h, x : x + w] = True
    return RegionMask(id=id, bits=bits)


def test_ddim_mutual_inverse_property():
    """Constant-eps backend: invert k then sample k recovers the input < 1e-9, < 1 s."""
    rng = np.random.default_rng(0)
    t0 = time.time()
    for k in (1, 5, 10):
        sched = make_schedule(1000, 1e-4, 0.02, k)
        z = ImageGrid(rng.uniform(-1, 1, (64, 64, 1)), MODEL11)
        backend = ConstantBackend(rng.uniform(-0.5, 0.5))
        up = run_trajectory(z, sched, backend, INVERT)
        back = run_trajectory(up.endpoint, sched, backend, SAMPLE)
        err = np.max(np.abs(back.endpoint.data - z.data))
        assert err < 1e-9, f"k={k}: max abs error {err}"
    elapsed = time.time() - t0
    assert elapsed < 1.0, f"round trips took {elapsed:.2f} s"
    ok(f"DDIM mutual inverse (k=1,5,10; 64x64; {elapsed*1000:.0f} ms)")


def _quadrature_posterior_mean(z, ab, weights, means, varis):
    lo = min(m - 10 * np.sqrt(v) for m, v in zip(means, varis)) - abs(z) - 5
    hi = max(m + 10 * np.sqrt(v) for m, v in zip(means, varis)) + abs(z) + 5
    x = np.linspace(lo, hi, 200001)
    prior = sum(
        w * np.exp(-((x - m) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)
        for w, m, v in zip(weights, means, varis)
    )
    post = prior * np.exp(-((z - np.sqrt(ab) * x) ** 2) / (2 * (1 - ab)))
    return np.trapezoid(x * post, x) / np.trapezoid(post, x)


def test_denoiser_oracle_equivalence():
    """Gaussian and GMM posterior means match 1-D quadrature to 1e-6 across ab levels."""
    sched = NoiseSchedule(
        t_train=3,
        beta=np.array([0.1, 4.0 / 9.0, 0.8]),
        alpha_bar=np.array([1.0, 0.9, 0.5, 0.1]),
        inference_steps=(1, 2, 3),
    )
    g_prior = GaussianPrior(0.2, 0.3)
    m_prior = GMMPrior(np.array([0.5, 0.3, 0.2]), np.array([-0.4, 0.1, 0.6]), np.array([0.05, 0.2, 0.1]))
    probes = np.linspace(-2, 2, 21)
    worst = 0.0
    for t in (1, 2, 3):
        ab = sched.ab(t)
        for z in probes:
            zi = ImageGrid(np.array([[[z]]]), MODEL11)
            eps_g = gaussian_posterior_eps(g_prior, zi, t, sched).data[0, 0, 0]
            x0_g = (z - np.sqrt(1 - ab) * eps_g) / np.sqrt(ab)
            worst = max(worst, abs(x0_g - _quadrature_posterior_mean(z, ab, [1.0], [0.2], [0.3])))
            eps_m = gmm_posterior_eps(m_prior, zi, t, sched).data[0, 0, 0]
            x0_m = (z - np.sqrt(1 - ab) * eps_m) / np.sqrt(ab)
            oracle = _quadrature_posterior_mean(
                z, ab, m_prior.weights.tolist(), m_prior.means.tolist(), m_prior.variances.tolist()
            )
            worst = max(worst, abs(x0_m - oracle))
    assert worst < 1e-6, f"worst posterior-mean deviation {worst}"
    ok(f"denoiser quadrature-oracle equivalence (worst {worst:.2e} over 3 ab x 21 probes x 2 priors)")


def test_gradient_correctness():
    """Analytic gradient vs central differences (h=1e-5) on >= 100 random configs."""
    rng = np.random.default_rng(1)
    h = 1e-5
    checked = 0
    worst = 0.0
    while checked < 100:
        z = rng.uniform(-1, 1, (8, 8, 1))
        o = float(rng.uniform(-0.3, 0.3))
        t1 = TargetSpec(rect_mask((8, 8), 1, 1, 3, 3, "t1"), np.asarray(o), (float(rng.uniform(-0.6, 0.6)),))
        t2 = TargetSpec(rect_mask((8, 8), 4, 4, 3, 3, "t2"), np.asarray(o), (float(rng.uniform(-0.6, 0.6)),))
        targets = (t1, t2)
        gamma, beta = float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2))
        if any(abs((z[tg.region.bits] + o).mean() - tg.k[0]) < 1e-3 for tg in targets):
            continue  # stay away from the L1 kink
        analytic = loss_gradient(ImageGrid(z, MODEL11), targets, gamma, beta).data
        inside = t1.region.bits | t2.region.bits
        assert np.all(analytic[~inside] == 0.0), "nonzero gradient outside target regions"
        for i in range(8):
            for j in range(8):
                if not inside[i, j]:
                    continue
                zp, zm = z.copy(), z.copy()
                zp[i, j, 0] += h
                zm[i, j, 0] -= h
                fd = (
                    compute_loss(ImageGrid(zp, MODEL11), targets, gamma, beta).total
                    - compute_loss(ImageGrid(zm, MODEL11), targets, gamma, beta).total
                ) / (2 * h)
                rel = abs(analytic[i, j, 0] - fd) / max(abs(fd), 1e-8)
                worst = max(worst, rel)
        checked += 1
    assert worst < 1e-5, f"worst relative gradient error {worst}"
    ok(f"loss gradient vs central differences ({checked} configs, worst rel err {worst:.2e})")


def test_metric_oracle_equivalence():
    """m_int, delta-I, alignment, PAS match brute-force recomputation on >= 1000 cases."""
    rng = np.random.default_rng(2)
    cases = 0
    for _ in range(250):
        h, w = int(rng.integers(4, 10)), int(rng.integers(4, 10))
        c = int(rng.choice([1, 3]))
        a = rng.uniform(0, 1, (h, w, c))
        b = rng.uniform(0, 1, (h, w, c))
        bits = rng.uniform(size=(h, w)) > 0.5
        if not bits.any():
            bits[0, 0] = True
        mask = RegionMask("m", bits)
        ia, ib = ImageGrid(a, "display01"), ImageGrid(b, "display01")

        # brute force m_int and delta
        sums = np.zeros(c)
        dsum = np.zeros(c)
        n = 0
        for i in range(h):
            for j in range(w):
                if bits[i, j]:
                    n += 1
                    sums += a[i, j]
                    dsum += np.abs(b[i, j] - a[i, j])
        want_mean = sums / n
        got_mean = np.array(region_mean_intensity(ia, mask).means)
        assert np.max(np.abs(got_mean - want_mean)) < 1e-12
        got_d = np.array(delta_intensity(ia, ib, mask))
        assert np.max(np.abs(got_d - dsum / n)) < 1e-12

        tau = float(rng.choice([0.8, 0.9, 1.0]))
        expected = str(rng.choice(["darker", "lighter"]))
        res = alignment_check(ia, ib, mask, tau, expected)
        m_in, m_out = want_mean.mean(), (np.array(region_mean_intensity(ib, mask).means)).mean()
        want_aligned = m_out < tau * m_in if expected == "darker" else m_out > m_in / tau
        assert res.aligned == want_aligned
        cases += 4
    flags = [bool(v) for v in rng.integers(0, 2, 1000)]
    from perceptlab.perception import AlignmentResult

    fake = [AlignmentResult("r", (0.0,), 0.5, 0.4, 0.9, f, "darker", "darker") for f in flags]
    assert perception_accuracy_score(fake) == 100.0 * sum(flags) / len(flags)
    cases += len(flags)
    assert cases >= 1000
    ok(f"metric oracle equivalence ({cases} randomized checks)")


def test_end_to_end_replication_fixture():
    """Unsharp backend, 50 simultaneous-contrast stimuli, 5 steps: PAS(tau=1) = 100, 50/50 direction."""
    t0 = time.time()
    sched = make_schedule(1000, 1e-4, 0.02, 5)
    backend = UnsharpBackend(sched, strength=0.8, blur_radius=5)
    stimuli = [gen_stimulus(random_stimulus_spec("simultaneous_contrast", 64, 1000 + i)) for i in range(50)]
    report = run_replication(stimuli, sched, backend, steps_to_run=5, tau_levels=(0.8, 0.9, 1.0))
    assert report.n_failed == 0
    assert report.pas_by_tau[1.0] == 100.0, f"PAS(1.0) = {report.pas_by_tau[1.0]}"
    direction_hits = 0
    for stim, res in zip(stimuli, report.results):
        darker = next(r for r in stim.regions if r.expected == "darker")
        other = next(r for r in stim.regions if r.expected == "lighter")
        z = to_model_units(stim.image)
        out = to_display_units(run_trajectory(z, sched, backend, INVERT, steps_to_run=5).endpoint)
        if shift_direction(stim.image, out, darker.mask, other.mask) == "r1_darker":
            direction_hits += 1
    elapsed = time.time() - t0
    assert direction_hits == 50, f"direction matched on {direction_hits}/50"
    assert elapsed < 30.0, f"fixture took {elapsed:.1f} s"
    ok(f"end-to-end replication (PAS 100, direction 50/50, {elapsed:.1f} s)")


def _convergence_targets():
    return (
        TargetSpec(rect_mask((64, 64), 29, 12, 6, 6, "t_left"), np.asarray(0.0), (-0.2,)),
        TargetSpec(rect_mask((64, 64), 29, 46, 6, 6, "t_right"), np.asarray(0.0), (0.2,)),
    )


def test_guidance_convergence_fixture():
    """Paper defaults (s=10, N=5, gamma=0.5, beta=1.0), two 6x6 flat targets, 10 seeds."""
    sched = make_schedule(1000, 1e-4, 0.02, 10)
    prior = GaussianPrior(0.0, 4.0)
    backend = ConditionalBackend(GaussianBackend(prior, sched), {"flat": GaussianBackend(prior, sched)})
    targets = _convergence_targets()
    converged = 0
    for seed in range(10):
        cfg = GuidanceConfig(
            gamma=0.5, beta=1.0, n_updates=5, alpha_lr=2.0, cfg_scale=10.0,
            condition="flat", seed=seed, targets=targets,
        )
        res = generate_with_guidance(sched, backend, cfg)
        assert res.trace[-1][2] < res.trace[0][2], f"seed {seed}: loss did not decrease"
        ztt = apply_targets(res.z0, targets)
        errs = [
            abs(float(ztt.data[tg.region.bits].mean()) - tg.k[0])
            for tg in targets
        ]
        if max(errs) <= 0.05:
            converged += 1
    assert converged >= 9, f"converged on {converged}/10 seeds"
    ok(f"guidance convergence (|m - k| <= 0.05 on {converged}/10 seeds, loss decreased on all)")


def test_gamma_sweep_monotonicity_fixture():
    """Final L_VI is non-increasing over gamma in {0, 0.25, 0.5, 1.0} at fixed seed."""
    sched = make_schedule(1000, 1e-4, 0.02, 10)
    backend = GaussianBackend(GaussianPrior(0.0, 4.0), sched)
    targets = (
        TargetSpec(rect_mask((64, 64), 29, 12, 6, 6, "t1"), np.asarray(0.0), (-0.5,)),
        TargetSpec(rect_mask((64, 64), 29, 46, 6, 6, "t2"), np.asarray(0.0), (0.5,)),
    )
    finals = []
    for g in (0.0, 0.25, 0.5, 1.0):
        cfg = GuidanceConfig(gamma=g, beta=1.0, n_updates=5, alpha_lr=2.0, seed=11, targets=targets)
        res = generate_with_guidance(sched, backend, cfg)
        finals.append(compute_loss(res.z0, targets, g, 1.0).vi)
    assert all(b <= a + 1e-12 for a, b in zip(finals, finals[1:])), f"L_VI not monotone: {finals}"
    ok("gamma-sweep monotonicity (final L_VI " + " >= ".join(f"{v:.3f}" for v in finals) + ")")


def test_command_determinism(tmp_path):
    """cmd_replicate and cmd_generate reruns produce byte-identical outputs."""

    def tree(root):
        out = {}
        for dirpath, _, files in os.walk(root):
            for name in files:
                if name == "run_manifest.json":  # carries wall-clock duration
                    continue
                p = os.path.join(dirpath, name)
                out[os.path.relpath(p, root)] = open(p, "rb").read()
        return out

    stim_dir = tmp_path / "stimuli"
    assert main(["make-stimuli", "--out", str(stim_dir), "--kinds", "simultaneous_contrast",
                 "--count", "5", "--seed", "17"]) == 0
    backend_path = tmp_path / "unsharp.json"
    backend_path.write_text(json.dumps({"kind": "unsharp_ref", "strength": 0.8, "blur_radius": 5}))
    rep_args = ["replicate", "--stimuli", str(stim_dir / "manifest.json"), "--backend",
                str(backend_path), "--steps", "5", "--n-inference", "5"]
    assert main(rep_args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(rep_args + ["--out", str(tmp_path / "r2")]) == 0
    assert tree(tmp_path / "r1") == tree(tmp_path / "r2")

    cfg_path = tmp_path / "gen.json"
    assert main(["generate", "--write-defaults", str(cfg_path)]) == 0
    gen_args = ["generate", "--config", str(cfg_path), "--seed", "23"]
    assert main(gen_args + ["--out", str(tmp_path / "g1")]) == 0
    assert main(gen_args + ["--out", str(tmp_path / "g2")]) == 0
    assert tree(tmp_path / "g1") == tree(tmp_path / "g2")
    ok("command determinism (replicate + generate reruns byte-identical)")


def test_psychophysics_statistics():
    """Rates 50/60/70 -> mean 60, median 60, std 10 exactly; schema carries six stats."""
    from dataclasses import dataclass

    @dataclass
    class R:
        trial_index: int
        judgment: str

    @dataclass
    class S:
        observer_id: str
        trial_order: tuple
        responses: list

    labels = ["illusion"] * 10
    sessions = [
        S(obs, tuple(range(10)), [R(i, "different" if i < n else "same") for i in range(10)])
        for obs, n in (("a", 5), ("b", 6), ("c", 7))
    ]
    summary = summarize_psychophysics(sessions, labels)
    assert f"{summary.illusion_mean:.6f}" == "60.000000"
    assert f"{summary.illusion_median:.6f}" == "60.000000"
    assert f"{summary.illusion_std:.6f}" == "10.000000"

    from perceptlab.evalreport import PsychSummary, psych_summary_payload

    reference = PsychSummary(
        per_observer=(),
        illusion_mean=64.0, illusion_median=67.0, illusion_std=16.0,
        control_mean=13.0, control_median=7.0, control_std=14.0,
    )
    payload = psych_summary_payload(reference)
    assert payload["illusion"] == {"mean": 64.0, "median": 67.0, "std": 16.0}
    assert payload["control"] == {"mean": 13.0, "median": 7.0, "std": 14.0}
    ok("psychophysics statistics (50/60/70 -> 60/60/10 exact; six-stat schema)")
