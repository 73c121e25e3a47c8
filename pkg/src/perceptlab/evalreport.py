"""Batch evaluation pipelines and report emission.

Replication runs invert every stimulus a fixed number of DDIM steps, meter the
display-converted endpoint against each labeled region at every tau level, and
aggregate an image-level PAS (an image counts only when all its checked
regions align). Reports are emitted as flat CSV plus nested JSON with stable
field ordering and fixed 6-decimal float formatting so reruns are
byte-identical.

All metering happens in display01 units; every report header says so.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .imagecore import to_display_units, to_model_units
from .perception import alignment_check, perception_accuracy_score, shift_direction
from .schedule import INVERT, NoiseSchedule, run_trajectory

SCHEMA_VERSION = "1"
METERING_DOMAIN = "display01"

DEFAULT_TAU_LEVELS = (0.8, 0.9, 1.0)   # emitted in this order


def _f6(x: float) -> float:
    return round(float(x), 6)


@dataclass(frozen=True)
class PairDirection:
    pair_id: str
    region_a: str
    region_b: str
    direction: str            # a_darker | b_darker | tie
    expected_darker: str | None


@dataclass(frozen=True)
class StimulusResult:
    stimulus_id: str
    alignments: tuple         # AlignmentResult per (region, tau)
    pair_directions: tuple
    error: str | None = None
    skipped: bool = False     # no directional regions to check


@dataclass(frozen=True)
class ReplicationReport:
    dataset_id: str
    backend_id: str
    schedule_params: dict
    steps_used: int
    tau_levels: tuple
    metering_domain: str
    results: tuple
    pas_by_tau: dict
    n_failed: int
    n_skipped: int


def _evaluate_stimulus(stim, sched, backend, steps_to_run, tau_levels) -> StimulusResult:
    directional = [r for r in stim.regions if r.expected in ("darker", "lighter")]
    if not directional:
        return StimulusResult(stim.id, (), (), skipped=True)
    try:
        z0 = to_model_units(stim.image)
        traj = run_trajectory(z0, sched, backend, INVERT, capture=False, steps_to_run=steps_to_run)
        out_img = to_display_units(traj.endpoint)
        alignments = tuple(
            alignment_check(stim.image, out_img, reg.mask, tau, reg.expected)
            for reg in directional
            for tau in tau_levels
        )
        pairs: dict = {}
        for reg in directional:
            if reg.pair_id is not None:
                pairs.setdefault(reg.pair_id, []).append(reg)
        pair_dirs = []
        for pid, regs in sorted(pairs.items()):
            if len(regs) != 2:
                continue
            a, b = regs
            d = shift_direction(stim.image, out_img, a.mask, b.mask)
            direction = {"r1_darker": "a_darker", "r2_darker": "b_darker", "tie": "tie"}[d]
            expected_darker = next((r.mask.id for r in regs if r.expected == "darker"), None)
            pair_dirs.append(PairDirection(pid, a.mask.id, b.mask.id, direction, expected_darker))
        return StimulusResult(stim.id, alignments, tuple(pair_dirs))
    except Exception as exc:  # per-stimulus failures are recorded, not fatal
        return StimulusResult(stim.id, (), (), error=f"{type(exc).__name__}: {exc}")


def run_replication(
    stimuli: list,
    sched: NoiseSchedule,
    backend,
    steps_to_run: int,
    tau_levels=DEFAULT_TAU_LEVELS,
    dataset_id: str = "stimuli",
    backend_id: str = "backend",
    jobs: int | None = None,
) -> ReplicationReport:
    """Invert every stimulus and score tau alignment; failures flagged, not fatal."""
    if not stimuli:
        raise ValueError("run_replication needs a nonempty stimulus list")
    tau_levels = tuple(tau_levels)
    jobs = jobs or min(len(stimuli), os.cpu_count() or 1)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(lambda s: _evaluate_stimulus(s, sched, backend, steps_to_run, tau_levels), stimuli)
            )
    else:
        results = [_evaluate_stimulus(s, sched, backend, steps_to_run, tau_levels) for s in stimuli]

    pas_by_tau = {}
    for tau in tau_levels:
        flags, gids = [], []
        for res in results:
            if res.error or res.skipped:
                continue
            for al in res.alignments:
                if al.tau == tau:
                    flags.append(al)
                    gids.append(res.stimulus_id)
        pas_by_tau[tau] = perception_accuracy_score(flags, gids) if flags else None

    return ReplicationReport(
        dataset_id=dataset_id,
        backend_id=backend_id,
        schedule_params=sched.params(),
        steps_used=steps_to_run,
        tau_levels=tau_levels,
        metering_domain=METERING_DOMAIN,
        results=tuple(results),
        pas_by_tau=pas_by_tau,
        n_failed=sum(1 for r in results if r.error),
        n_skipped=sum(1 for r in results if r.skipped),
    )


# ---------------------------------------------------------------------------
# psychophysics summaries

@dataclass(frozen=True)
class ObserverRates:
    observer_id: str
    illusion_rate: float | None
    control_rate: float | None
    n_illusion: int
    n_control: int


@dataclass(frozen=True)
class PsychSummary:
    per_observer: tuple
    illusion_mean: float | None
    illusion_median: float | None
    illusion_std: float | None
    control_mean: float | None
    control_median: float | None
    control_std: float | None
    warnings: tuple = ()


def _stats(values):
    if not values:
        return None, None, None
    mean = statistics.fmean(values)
    median = statistics.median(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, median, std


def summarize_psychophysics(sessions: list, labels) -> PsychSummary:
    """Per-observer different-rates on illusion vs control trials plus sample stats.

    ``labels`` is the study set's per-stimulus label list ("illusion" or
    "control"); a session's trial_order maps trial indices to stimulus indices.
    Observers with zero responses are excluded with a warning. Standard
    deviation is the sample (n-1) statistic.
    """
    labels = list(labels)
    by_observer: dict = {}
    for rec in sessions:
        counts = by_observer.setdefault(rec.observer_id, {"ill_diff": 0, "ill_n": 0, "ctl_diff": 0, "ctl_n": 0})
        for resp in rec.responses:
            stim_idx = rec.trial_order[resp.trial_index]
            label = labels[stim_idx]
            if label == "illusion":
                counts["ill_n"] += 1
                counts["ill_diff"] += resp.judgment == "different"
            elif label == "control":
                counts["ctl_n"] += 1
                counts["ctl_diff"] += resp.judgment == "different"
            else:
                raise ValueError(f"unknown stimulus label {label!r}")

    warnings = []
    per_observer = []
    for obs in sorted(by_observer):
        c = by_observer[obs]
        if c["ill_n"] + c["ctl_n"] == 0:
            warnings.append(f"observer {obs!r} has no completed trials; excluded")
            continue
        per_observer.append(
            ObserverRates(
                observer_id=obs,
                illusion_rate=100.0 * c["ill_diff"] / c["ill_n"] if c["ill_n"] else None,
                control_rate=100.0 * c["ctl_diff"] / c["ctl_n"] if c["ctl_n"] else None,
                n_illusion=c["ill_n"],
                n_control=c["ctl_n"],
            )
        )
    ill_mean, ill_median, ill_std = _stats([o.illusion_rate for o in per_observer if o.illusion_rate is not None])
    ctl_mean, ctl_median, ctl_std = _stats([o.control_rate for o in per_observer if o.control_rate is not None])
    return PsychSummary(
        per_observer=tuple(per_observer),
        illusion_mean=ill_mean,
        illusion_median=ill_median,
        illusion_std=ill_std,
        control_mean=ctl_mean,
        control_median=ctl_median,
        control_std=ctl_std,
        warnings=tuple(warnings),
    )


def psych_summary_payload(summary: PsychSummary) -> dict:
    """JSON-ready nested dict carrying the six headline statistics."""
    fmt = lambda v: None if v is None else _f6(v)
    return {
        "schema_version": SCHEMA_VERSION,
        "illusion": {"mean": fmt(summary.illusion_mean), "median": fmt(summary.illusion_median), "std": fmt(summary.illusion_std)},
        "control": {"mean": fmt(summary.control_mean), "median": fmt(summary.control_median), "std": fmt(summary.control_std)},
        "per_observer": [
            {
                "observer": o.observer_id,
                "illusion_rate": fmt(o.illusion_rate),
                "control_rate": fmt(o.control_rate),
                "n_illusion": o.n_illusion,
                "n_control": o.n_control,
            }
            for o in summary.per_observer
        ],
        "aggregation": "observer-level rates (per-image aggregation noted as the alternative)",
        "warnings": list(summary.warnings),
    }


# ---------------------------------------------------------------------------
# emission

def report_payload(report: ReplicationReport) -> dict:
    results = []
    for res in report.results:
        alignments = []
        for al in res.alignments:
            d = asdict(al)
            d["delta_i"] = [_f6(v) for v in d["delta_i"]]
            d["in_mean"] = _f6(d["in_mean"])
            d["out_mean"] = _f6(d["out_mean"])
            d["tau"] = _f6(d["tau"])
            alignments.append(d)
        results.append(
            {
                "stimulus_id": res.stimulus_id,
                "alignments": alignments,
                "pair_directions": [asdict(p) for p in res.pair_directions],
                "error": res.error,
                "skipped": res.skipped,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset_id": report.dataset_id,
        "backend_id": report.backend_id,
        "schedule": report.schedule_params,
        "steps_used": report.steps_used,
        "tau_levels": [_f6(t) for t in report.tau_levels],
        "metering_domain": report.metering_domain,
        "pas_by_tau": {f"{t:.6f}": (None if v is None else _f6(v)) for t, v in report.pas_by_tau.items()},
        "n_failed": report.n_failed,
        "n_skipped": report.n_skipped,
        "results": results,
    }


CSV_FIELDS = (
    "stimulus_id", "region_id", "channel", "in_mean", "out_mean",
    "delta_i", "tau", "aligned", "expected", "observed",
)


def emit_report(report: ReplicationReport, directory: str | os.PathLike, formats=("csv", "json")) -> list:
    """Write report files; returns the paths written."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(directory, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_payload(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if "csv" in formats:
        path = os.path.join(directory, "alignments.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_FIELDS)
            for res in report.results:
                for al in res.alignments:
                    for c, di in enumerate(al.delta_i):
                        writer.writerow(
                            [
                                res.stimulus_id,
                                al.region_id,
                                c,
                                f"{al.in_mean:.6f}",
                                f"{al.out_mean:.6f}",
                                f"{di:.6f}",
                                f"{al.tau:.6f}",
                                int(al.aligned),
                                al.direction_expected,
                                al.direction_observed,
                            ]
                        )
        written.append(path)
    return written


def export_profiles(img, rows, directory: str | os.PathLike, name: str = "profiles") -> str:
    """Optional cross-section data file: one CSV row per (row, column, channel)."""
    from .perception import extract_profile

    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{name}.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "channel", "value"])
        for row in rows:
            prof = extract_profile(img, row)
            for col in range(prof.shape[0]):
                for c in range(prof.shape[1]):
                    writer.writerow([row, col, c, f"{prof[col, c]:.6f}"])
    return path
