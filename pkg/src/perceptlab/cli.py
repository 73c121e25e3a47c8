"""Command-line front door for all pipelines.

Subcommands: make-stimuli, fit-denoiser, invert, sample, replicate, generate,
serve, report, make-study, rerun. Every command writes exactly one
run_manifest.json alongside its outputs recording the resolved configuration,
derived seeds, and wall-clock duration; `rerun --manifest` replays the stored
argv. Exit codes: 0 success, 1 fatal, 2 partial failures, 3 numeric abort,
64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .denoiser import (
    BackendError,
    CorpusSpec,
    backend_from_config,
    backend_id,
    fit_linear_denoiser,
    generate_corpus,
    LinearConvBackend,
    load_backend,
    save_backend,
)
from .evalreport import (
    DEFAULT_TAU_LEVELS,
    emit_report,
    psych_summary_payload,
    run_replication,
    summarize_psychophysics,
)
from .guidance import GuidanceConfig, NonFiniteError, TargetSpec, generate_with_guidance
from .imagecore import ImageGrid, RegionMask, load_image, load_mask, save_image, to_display_units, to_model_units
from .perception import region_mean_intensity
from .schedule import INVERT, SAMPLE, export_trajectory, make_schedule, run_trajectory
from .stimuli import (
    STIMULUS_KINDS,
    gen_stimulus,
    load_manifest,
    random_stimulus_spec,
    write_stimulus_set,
)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; our contract is 64
        raise UsageError(message)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get("PERCEPTLAB_SEED", "0"))


def derive_seeds(seed: int, n: int) -> list:
    """Counter-based split of a root seed into n child seeds."""
    return [int(np.random.SeedSequence((seed, i)).generate_state(1)[0]) for i in range(n)]


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def write_run_manifest(out_dir: str, command: str, argv: list, config: dict, seeds, outputs, t0: float) -> str:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": seeds,
        "tool_version": __version__,
        "outputs": sorted(os.path.relpath(p, out_dir) for p in outputs),
        "duration_s": round(time.time() - t0, 3),
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require_file(path: str, what: str):
    if not path or not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _schedule_from_args(args):
    return make_schedule(args.t_train, args.beta_start, args.beta_end, args.n_inference)


def _add_schedule_args(p, n_inference_default=10):
    p.add_argument("--t-train", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--n-inference", type=int, default=n_inference_default)


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_stimuli(args, argv) -> int:
    t0 = time.time()
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for kind in kinds:
        if kind not in STIMULUS_KINDS:
            raise UsageError(f"unknown stimulus kind {kind!r}; choose from {STIMULUS_KINDS}")
    seed = _resolve_seed(args.seed)
    seeds = derive_seeds(seed, len(kinds) * args.count)
    stimuli = []
    i = 0
    for kind in kinds:
        for _ in range(args.count):
            spec = random_stimulus_spec(kind, args.size, seeds[i], control=args.control)
            stim = gen_stimulus(spec)
            stimuli.append(stim)
            i += 1
    os.makedirs(args.out, exist_ok=True)
    manifest = write_stimulus_set(stimuli, args.out)
    write_run_manifest(args.out, "make-stimuli", argv, _args_dict(args), seeds, [manifest], t0)
    print(f"wrote {len(stimuli)} stimuli to {manifest}")
    return EXIT_OK


def cmd_fit_denoiser(args, argv) -> int:
    t0 = time.time()
    seed = _resolve_seed(args.seed)
    sched = _schedule_from_args(args)
    spec = CorpusSpec(kind=args.corpus, size=args.corpus_size, count=args.corpus_count, seed=seed)
    corpus = generate_corpus(spec)
    den = fit_linear_denoiser(
        corpus, sched, buckets=args.buckets, kernel_side=args.kernel_side,
        noise_draws=args.noise_draws, seed=seed,
    )
    den.fit_meta["corpus"] = {"kind": spec.kind, "size": spec.size, "count": spec.count, "seed": spec.seed}
    backend = LinearConvBackend(den, sched)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    save_backend(backend, args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_run_manifest(out_dir, "fit-denoiser", argv, _args_dict(args), [seed], [args.out], t0)
    print(f"fitted {backend_id(backend)} -> {args.out}")
    return EXIT_OK


def _load_regions_file(path: str) -> list:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    return [load_mask(os.path.join(base, e["mask"]), id=e["id"]) for e in entries]


def cmd_invert(args, argv) -> int:
    t0 = time.time()
    _require_file(args.image, "input image")
    _require_file(args.backend, "backend file")
    sched = _schedule_from_args(args)
    backend = load_backend(args.backend, sched)
    img = load_image(args.image)
    z0 = to_model_units(img)
    traj = run_trajectory(
        z0, sched, backend, INVERT, capture=args.capture, steps_to_run=args.steps,
        condition=args.condition, cfg_scale=args.cfg_scale,
    )
    os.makedirs(args.out, exist_ok=True)
    outputs = [export_trajectory(traj, sched, args.out)]
    if args.regions:
        _require_file(args.regions, "regions file")
        masks = _load_regions_file(args.regions)
        csv_path = os.path.join(args.out, "region_means.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state_index", "t", "region_id", "channel", "mean"])
            for i, (t, z) in enumerate(traj.states):
                disp = to_display_units(z)
                for mask in masks:
                    meas = region_mean_intensity(disp, mask)
                    for c, m in enumerate(meas.means):
                        writer.writerow([i, t, mask.id, c, f"{m:.6f}"])
        outputs.append(csv_path)
    write_run_manifest(args.out, "invert", argv, _args_dict(args), [], outputs, t0)
    print(f"inverted {args.steps} steps -> {args.out} ({len(traj.states)} states)")
    return EXIT_OK


def cmd_sample(args, argv) -> int:
    t0 = time.time()
    _require_file(args.backend, "backend file")
    seed = _resolve_seed(args.seed)
    sched = _schedule_from_args(args)
    backend = load_backend(args.backend, sched)
    rng = np.random.default_rng(seed)
    z = ImageGrid(rng.standard_normal((args.size, args.size, args.channels)), "model11")
    traj = run_trajectory(
        z, sched, backend, SAMPLE, capture=args.capture,
        condition=args.condition, cfg_scale=args.cfg_scale,
    )
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    if args.capture:
        outputs.append(export_trajectory(traj, sched, args.out))
    final = os.path.join(args.out, "sample.png")
    save_image(to_display_units(traj.endpoint), final)
    outputs.append(final)
    write_run_manifest(args.out, "sample", argv, _args_dict(args), [seed], outputs, t0)
    print(f"sampled -> {final}")
    return EXIT_OK


def cmd_replicate(args, argv) -> int:
    t0 = time.time()
    _require_file(args.stimuli, "stimulus manifest")
    _require_file(args.backend, "backend file")
    taus = tuple(float(v) for v in args.tau.split(","))
    sched = _schedule_from_args(args)
    backend = load_backend(args.backend, sched)
    stimuli = load_manifest(args.stimuli)
    report = run_replication(
        stimuli, sched, backend, steps_to_run=args.steps, tau_levels=taus,
        dataset_id=os.path.basename(args.stimuli), backend_id=backend_id(backend),
        jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    outputs = emit_report(report, args.out)
    write_run_manifest(args.out, "replicate", argv, _args_dict(args), [], outputs, t0)
    pas = ", ".join(
        f"tau={t:g}: {('%.2f' % v) if v is not None else 'n/a'}" for t, v in report.pas_by_tau.items()
    )
    print(f"PAS over {len(stimuli)} stimuli ({args.steps} steps): {pas}")
    if report.n_failed:
        print(f"{report.n_failed} stimuli failed; see report.json", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


DEFAULT_GENERATE_CONFIG = {
    "height": 64,
    "width": 64,
    "channels": 1,
    "schedule": {"t_train": 1000, "beta_start": 1e-4, "beta_end": 0.02, "n_inference": 10},
    "backend": {"kind": "gaussian", "mean": 0.0, "variance": 4.0},
    "gamma": 0.5,
    "beta": 1.0,
    "n_updates": 5,
    "alpha_lr": 0.1,
    "cfg_scale": 10.0,
    "paste_targets": False,
    "seed": 0,
    "vi_norm": "abs",
    "condition": None,
    "targets": [
        {"rect": [29, 12, 6, 6], "o": 0.0, "k": [-0.2]},
        {"rect": [29, 46, 6, 6], "o": 0.0, "k": [0.2]},
    ],
}


def _targets_from_config(cfg: dict, base_dir: str) -> tuple:
    targets = []
    h, w = cfg["height"], cfg["width"]
    for i, spec in enumerate(cfg.get("targets", [])):
        if "rect" in spec:
            y, x, rh, rw = spec["rect"]
            bits = np.zeros((h, w), dtype=bool)
            bits[y : y + rh, x : x + rw] = True
            mask = RegionMask(id=spec.get("id", f"target_{i}"), bits=bits)
        elif "mask" in spec:
            mask = load_mask(os.path.join(base_dir, spec["mask"]), id=spec.get("id", f"target_{i}"))
        else:
            raise UsageError(f"target {i} needs a 'rect' or a 'mask'")
        targets.append(TargetSpec(region=mask, o=np.asarray(spec.get("o", 0.0)), k=tuple(spec["k"])))
    return tuple(targets)


def _write_trace(path: str, trace) -> str:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "inner_iter", "L", "L_VI", "L_sim"])
        for step, it, total, vi, sim in trace:
            writer.writerow([step, it, f"{total:.6f}", f"{vi:.6f}", f"{sim:.6f}"])
    return path


def cmd_generate(args, argv) -> int:
    t0 = time.time()
    if args.write_defaults:
        with open(args.write_defaults, "w", encoding="utf-8") as fh:
            json.dump(DEFAULT_GENERATE_CONFIG, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote defaults to {args.write_defaults}")
        return EXIT_OK
    _require_file(args.config, "guidance config")
    base_dir = os.path.dirname(os.path.abspath(args.config))
    with open(args.config, encoding="utf-8") as fh:
        cfg = {**DEFAULT_GENERATE_CONFIG, **json.load(fh)}
    sp = cfg["schedule"]
    sched = make_schedule(sp["t_train"], sp["beta_start"], sp["beta_end"], sp["n_inference"])
    if "backend_path" in cfg:
        backend = load_backend(os.path.join(base_dir, cfg["backend_path"]), sched)
    else:
        backend = backend_from_config(cfg["backend"], sched)
    seed = _resolve_seed(args.seed) if args.seed is not None else int(cfg["seed"])
    gcfg = GuidanceConfig(
        gamma=float(cfg["gamma"]),
        beta=float(cfg["beta"]),
        n_updates=int(cfg["n_updates"]),
        alpha_lr=float(cfg["alpha_lr"]),
        cfg_scale=float(cfg["cfg_scale"]),
        paste_targets=bool(cfg["paste_targets"]) or args.paste_targets,
        seed=seed,
        targets=_targets_from_config(cfg, base_dir),
        vi_norm=cfg.get("vi_norm", "abs"),
        condition=cfg.get("condition"),
        height=int(cfg["height"]),
        width=int(cfg["width"]),
        channels=int(cfg["channels"]),
    )
    gammas = [float(g) for g in args.gamma.split(",")] if args.gamma else [gcfg.gamma]

    os.makedirs(args.out, exist_ok=True)
    outputs = []
    for g in gammas:
        result = generate_with_guidance(sched, backend, replace(gcfg, gamma=g))
        sub = args.out if len(gammas) == 1 else os.path.join(args.out, f"gamma_{g:.6f}")
        os.makedirs(sub, exist_ok=True)
        img_path = os.path.join(sub, "output.png")
        save_image(result.image, img_path)
        outputs.append(img_path)
        outputs.append(_write_trace(os.path.join(sub, "loss_trace.csv"), result.trace))
    write_run_manifest(
        args.out, "generate", argv,
        {"config_file": args.config, "resolved": {**cfg, "seed": seed}, "gammas": gammas},
        [seed], outputs, t0,
    )
    print(f"generated {len(gammas)} image(s) -> {args.out}")
    return EXIT_OK


def cmd_make_study(args, argv) -> int:
    from .psyserve import StudyStore

    t0 = time.time()
    seed = _resolve_seed(args.seed)
    n = args.n_illusion + args.n_control
    seeds = derive_seeds(seed, n)
    store = StudyStore(args.data_dir)
    set_dir = os.path.join(store.sets_dir, args.set_id)
    os.makedirs(set_dir, exist_ok=True)
    kinds = ("simultaneous_contrast", "whites")
    entries = []
    for i in range(n):
        control = i >= args.n_illusion
        kind = kinds[i % len(kinds)]
        stim = gen_stimulus(random_stimulus_spec(kind, args.size, seeds[i], control=control))
        fname = f"stim_{i:03d}.png"
        save_image(stim.image, os.path.join(set_dir, fname))
        entries.append((fname, "control" if control else "illusion"))
    store.install_set(args.set_id, entries)
    write_run_manifest(
        set_dir, "make-study", argv, _args_dict(args), seeds,
        [os.path.join(set_dir, "set.json")], t0,
    )
    print(f"installed study set {args.set_id!r} with {n} stimuli in {set_dir}")
    return EXIT_OK


def cmd_serve(args, argv) -> int:
    import uvicorn

    from .psyserve import StudyStore, create_app

    store = StudyStore(args.data_dir)
    app = create_app(store, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_report(args, argv) -> int:
    from .psyserve import StudyStore

    t0 = time.time()
    store = StudyStore(args.data_dir)
    sset = store.get_set(args.set_id)
    sessions = store.sessions_for_set(args.set_id)
    if not sessions:
        raise UsageError(f"no sessions recorded for set {args.set_id!r}")
    summary = summarize_psychophysics(sessions, sset.labels)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "psych_summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(psych_summary_payload(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(args.out, "report", argv, _args_dict(args), [], [path], t0)
    print(f"psychophysics summary -> {path}")
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    _require_file(args.manifest, "run manifest")
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    stored = manifest.get("argv")
    if not stored:
        raise UsageError(f"manifest {args.manifest} records no argv to replay")
    return main(stored)


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="perceptlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-stimuli", help="generate a randomized stimulus set")
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default="simultaneous_contrast")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--control", action="store_true")
    p.set_defaults(func=cmd_make_stimuli)

    p = sub.add_parser("fit-denoiser", help="fit the linear convolutional denoiser")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", default="dead_leaves")
    p.add_argument("--corpus-size", type=int, default=64)
    p.add_argument("--corpus-count", type=int, default=32)
    p.add_argument("--buckets", type=int, default=4)
    p.add_argument("--kernel-side", type=int, default=3)
    p.add_argument("--noise-draws", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    _add_schedule_args(p)
    p.set_defaults(func=cmd_fit_denoiser)

    p = sub.add_parser("invert", help="DDIM-invert an image and export the trajectory")
    p.add_argument("--image", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--capture", action="store_true")
    p.add_argument("--regions", default=None)
    p.add_argument("--condition", default=None)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _add_schedule_args(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("sample", help="unguided DDIM sampling from seeded noise")
    p.add_argument("--backend", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--capture", action="store_true")
    p.add_argument("--condition", default=None)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _add_schedule_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("replicate", help="tau-alignment replication over a stimulus set")
    p.add_argument("--stimuli", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--tau", default=",".join(str(t) for t in DEFAULT_TAU_LEVELS))
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_schedule_args(p)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("generate", help="guided illusion generation")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="generate-out")
    p.add_argument("--gamma", default=None, help="comma list for a gamma sweep")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paste-targets", action="store_true")
    p.add_argument("--write-defaults", default=None, metavar="PATH")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("make-study", help="build a 40+40 style illusion/control study set")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--set-id", default="study")
    p.add_argument("--n-illusion", type=int, default=40)
    p.add_argument("--n-control", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_make_study)

    p = sub.add_parser("serve", help="host the psychophysics service and observer UI")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="summarize recorded psychophysics sessions")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--set-id", default="study")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", help="replay a command from its run manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numeric abort at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
