"""Experiment engines behind the HTTP service and the CLI.

Each experiment protocol lives here as a pure function of its config:

* run_benchmark — many registration trials of both methods on identical
  inputs, emitting TrialRecords.
* run_timing — wall-clock scaling of both methods over cloud sizes, with
  fixed iteration counts so per-iteration complexity is what gets measured.
* run_cost_sweep — evaluates (never optimizes) both methods' objectives
  while rotating a source cloud about an axis through its centroid.
* make_data — manufactures replayable template/source fixture pairs plus a
  JSON manifest carrying the generating transform and every knob.

Determinism: all randomness is derived from the config seed via named
sub-streams (data.derive_seed), so a config reproduces its output exactly.
Timing is the one intentional exception; benchmark rows carry wall_time_s
only when measure_time is switched on, keeping the default output stable
down to the byte.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import se3
from .data import (
    PerturbationSpec,
    TriangleMesh,
    add_gaussian_noise,
    blob_mesh,
    derive_seed,
    format_xyz,
    normalize_unit_box,
    random_transform,
    sample_surface,
    visible_subset,
    VISIBILITY_MODES,
)
from .encoder import EncoderWeights, mlp_encoder, moment_encoder, random_weights
from .errors import PointregError
from .icp import IcpConfig, icp_register, icp_register_partial, nearest_neighbors
from .metrics import TrialRecord, frobenius_loss
from .solver import SolverConfig, register, register_partial

EXPERIMENT_KINDS = ("clean", "noise", "partial")

METHOD_FEATURE = "iclk"
METHOD_ICP = "icp"

# Layer widths of the stand-in encoder used by the timing study when no
# trained weights are supplied: wide enough that encoding cost scales with
# the cloud size rather than with Python overhead, small enough to finish
# the full size grid in seconds.
TIMING_ENCODER_DIMS = (3, 64, 128)

TIMING_CSV_COLUMNS = ("method", "n", "mean_seconds")
COST_SWEEP_CSV_COLUMNS = ("angle_deg", "iclk_cost", "icp_cost")

_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}

# Sub-stream tags for derive_seed, so each random role is independent.
_STREAM_SAMPLE = 0
_STREAM_PERTURB = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of a benchmark run (one experiment kind, many trials)."""

    kind: str = "clean"
    n_points: int = 1000
    trials: int = 10
    seed: int = 0
    rot_range: tuple[float, float] = (0.0, 90.0)
    trans_range: tuple[float, float] = (0.0, 0.3)
    noise_sd: float = 0.04
    visibility: str = "depth"
    solver: SolverConfig = field(default_factory=SolverConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    weights: EncoderWeights | None = None
    measure_time: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if self.n_points < 1:
            raise ValueError(f"n_points must be at least 1, got {self.n_points}")
        if self.noise_sd < 0.0:
            raise ValueError(f"noise_sd must be non-negative, got {self.noise_sd}")
        if self.visibility not in VISIBILITY_MODES:
            raise ValueError(f"visibility must be one of {VISIBILITY_MODES}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        # Validate ranges by constructing a throwaway spec.
        PerturbationSpec(rot_range=self.rot_range, trans_range=self.trans_range)


def _encoder_for(config: ExperimentConfig):
    if config.weights is not None:
        return mlp_encoder(config.weights)
    return moment_encoder()


def _trial_inputs(config: ExperimentConfig, mesh: TriangleMesh, trial: int):
    """Template, source, and generating transform for one trial.

    Pure function of (config, mesh, trial): the sample, the perturbation,
    and the noise each draw from their own sub-stream of the config seed.
    """
    template = normalize_unit_box(
        sample_surface(mesh, config.n_points, derive_seed(config.seed, trial, _STREAM_SAMPLE))
    )
    spec = PerturbationSpec(
        rot_range=config.rot_range,
        trans_range=config.trans_range,
        rng_seed=derive_seed(config.seed, trial, _STREAM_PERTURB),
    )
    g_gt = random_transform(spec)
    source = se3.apply_transform(g_gt, template)
    if config.kind == "noise":
        source = add_gaussian_noise(
            source, config.noise_sd, derive_seed(config.seed, trial, _STREAM_NOISE)
        )
    return template, source, g_gt


def _failed_record(method: str, config: ExperimentConfig, trial_seed: int, g_gt) -> TrialRecord:
    rot_deg, trans = _initial_magnitudes(g_gt)
    return TrialRecord(
        method=method,
        n_points=config.n_points,
        seed=trial_seed,
        init_rot_deg=rot_deg,
        init_trans=trans,
        rot_err_deg=math.nan,
        trans_err=math.nan,
        iters=0,
        converged=False,
        wall_time_s=0.0,
        loss=math.nan,
        gt=g_gt,
    )


def _initial_magnitudes(g_gt) -> tuple[float, float]:
    return math.degrees(se3.rotation_angle(g_gt)), float(np.linalg.norm(g_gt[:3, 3]))


def _run_one_trial(config: ExperimentConfig, mesh: TriangleMesh, trial: int) -> list[TrialRecord]:
    trial_seed = derive_seed(config.seed, trial)
    encode_fn = _encoder_for(config)
    template, source, g_gt = _trial_inputs(config, mesh, trial)
    init_rot_deg, init_trans = _initial_magnitudes(g_gt)

    def run(method: str) -> TrialRecord:
        start = time.perf_counter()
        try:
            if method == METHOD_FEATURE:
                if config.kind == "partial":
                    result = register_partial(
                        encode_fn, template, source, config.solver, visibility=config.visibility
                    )
                else:
                    result = register(encode_fn, template, source, config.solver)
            else:
                if config.kind == "partial":
                    result = icp_register_partial(
                        template, source, config.icp, visibility=config.visibility
                    )
                else:
                    result = icp_register(template, source, config.icp)
        except PointregError:
            return _failed_record(method, config, trial_seed, g_gt)
        elapsed = time.perf_counter() - start

        rot_err_deg, trans_err = se3.pose_error(result.estimate, g_gt)
        return TrialRecord(
            method=method,
            n_points=config.n_points,
            seed=trial_seed,
            init_rot_deg=init_rot_deg,
            init_trans=init_trans,
            rot_err_deg=rot_err_deg,
            trans_err=trans_err,
            iters=result.iterations_used,
            converged=result.converged,
            wall_time_s=elapsed if config.measure_time else 0.0,
            loss=frobenius_loss(result.estimate, g_gt),
            gt=g_gt,
            est=result.estimate,
        )

    # Both methods see bit-identical inputs and the same generating transform.
    return [run(METHOD_FEATURE), run(METHOD_ICP)]


def run_benchmark(config: ExperimentConfig, mesh: TriangleMesh | None = None) -> list[TrialRecord]:
    """Run all trials of a benchmark; two records (one per method) per trial.

    Samples from ``mesh`` (the built-in blob shape when omitted). Trials
    execute in a small worker pool but records are assembled in trial order,
    so the output is a deterministic function of (config, mesh).
    """
    mesh = mesh if mesh is not None else blob_mesh()
    if config.workers == 1:
        batches = [_run_one_trial(config, mesh, trial) for trial in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            batches = list(
                pool.map(lambda t: _run_one_trial(config, mesh, t), range(config.trials))
            )
    return [record for batch in batches for record in batch]


@dataclass(frozen=True)
class TimingConfig:
    """Knobs of the wall-clock scaling study."""

    sizes: tuple[int, ...] = (256, 512, 1024, 2048, 4096, 8192)
    reps: int = 5
    iters: int = 10
    seed: int = 0
    weights: EncoderWeights | None = None

    def __post_init__(self):
        if len(self.sizes) == 0 or any(n < 8 for n in self.sizes):
            raise ValueError("sizes must be a non-empty list of counts >= 8")
        if list(self.sizes) != sorted(self.sizes):
            raise ValueError("sizes must be ascending")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if self.iters < 1:
            raise ValueError(f"iters must be at least 1, got {self.iters}")


def run_timing(config: TimingConfig, mesh: TriangleMesh | None = None) -> list[tuple[str, int, float]]:
    """Median wall time of both methods at each cloud size.

    Both methods run a fixed number of iterations (stop thresholds disabled)
    so the measurement reflects per-iteration complexity, not convergence
    luck. One warm-up run per (method, size) is discarded; the median over
    ``reps`` timed runs is reported. When no weights are given, a fixed
    random MLP encoder (TIMING_ENCODER_DIMS) stands in for a trained one —
    its cost scales with cloud size the same way.
    """
    mesh = mesh if mesh is not None else blob_mesh()
    weights = config.weights if config.weights is not None else random_weights(
        TIMING_ENCODER_DIMS, pooling="max", seed=derive_seed(config.seed, 0xE)
    )
    encode_fn = mlp_encoder(weights)
    solver_cfg = SolverConfig(max_iters=config.iters, stop_threshold=0.0)
    icp_cfg = IcpConfig(max_iters=config.iters, stop_mse_delta=0.0)

    rows: list[tuple[str, int, float]] = []
    for size in config.sizes:
        template = normalize_unit_box(
            sample_surface(mesh, size, derive_seed(config.seed, size, _STREAM_SAMPLE))
        )
        spec = PerturbationSpec(
            rot_range=(15.0, 15.0),
            trans_range=(0.1, 0.1),
            rng_seed=derive_seed(config.seed, size, _STREAM_PERTURB),
        )
        source = se3.apply_transform(random_transform(spec), template)

        def time_feature() -> None:
            register(encode_fn, template, source, solver_cfg)

        def time_icp() -> None:
            icp_register(template, source, icp_cfg)

        for method, fn in ((METHOD_FEATURE, time_feature), (METHOD_ICP, time_icp)):
            fn()  # warm-up, excluded
            samples = []
            for _ in range(config.reps):
                start = time.perf_counter()
                fn()
                samples.append(time.perf_counter() - start)
            rows.append((method, size, float(np.median(samples))))
    return rows


def format_timing_csv(rows: list[tuple[str, int, float]]) -> str:
    out = [",".join(TIMING_CSV_COLUMNS)]
    out += [f"{method},{n},{seconds!r}" for method, n, seconds in rows]
    return "\n".join(out) + "\n"


def run_cost_sweep(
    template,
    source,
    angles_deg,
    axis: str = "z",
    encode_fn=None,
) -> list[tuple[float, float, float]]:
    """Objective values of both methods while spinning the source about an axis.

    The source is first translated so its centroid coincides with the
    template's; each grid angle then rotates it about ``axis`` through that
    common centroid. No optimization runs: for every angle the row holds the
    feature-space residual norm and the mean nearest-neighbor distance.
    """
    template = np.asarray(template, dtype=float)
    source = np.asarray(source, dtype=float)
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    if encode_fn is None:
        encode_fn = moment_encoder()

    centroid = template.mean(axis=0)
    aligned = source - source.mean(axis=0) + centroid
    f_tmpl = np.asarray(encode_fn(template), dtype=float)

    rows = []
    for angle in np.asarray(angles_deg, dtype=float):
        w = _AXES[axis] * math.radians(angle)
        rot = se3.exp_map(np.concatenate([w, np.zeros(3)]))[:3, :3]
        spun = (aligned - centroid) @ rot.T + centroid
        feature_cost = float(np.linalg.norm(np.asarray(encode_fn(spun), dtype=float) - f_tmpl))
        icp_cost = float(np.sqrt(nearest_neighbors(spun, template).sq_dists).mean())
        rows.append((float(angle), feature_cost, icp_cost))
    return rows


def format_cost_sweep_csv(rows: list[tuple[float, float, float]]) -> str:
    out = [",".join(COST_SWEEP_CSV_COLUMNS)]
    out += [f"{angle!r},{fc!r},{ic!r}" for angle, fc, ic in rows]
    return "\n".join(out) + "\n"


def make_data(
    mesh: TriangleMesh,
    kind: str = "clean",
    n_points: int = 1000,
    seed: int = 0,
    rot_range: tuple[float, float] = (0.0, 90.0),
    trans_range: tuple[float, float] = (0.0, 0.3),
    noise_sd: float = 0.04,
    visibility: str = "depth",
) -> dict[str, str]:
    """Manufacture a replayable fixture set; returns {filename: content}.

    Always writes template.xyz, source.xyz and manifest.json; kind "partial"
    additionally writes the two initial visible subsets. The manifest echoes
    every input plus the generating transform (row-major), so any trial can
    be reproduced or verified offline.
    """
    if kind not in EXPERIMENT_KINDS:
        raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")

    template = normalize_unit_box(sample_surface(mesh, n_points, derive_seed(seed, 0, _STREAM_SAMPLE)))
    spec = PerturbationSpec(
        rot_range=rot_range, trans_range=trans_range, rng_seed=derive_seed(seed, 0, _STREAM_PERTURB)
    )
    g_gt = random_transform(spec)
    source = se3.apply_transform(g_gt, template)
    if kind == "noise":
        source = add_gaussian_noise(source, noise_sd, derive_seed(seed, 0, _STREAM_NOISE))

    files = {
        "template.xyz": format_xyz(template),
        "source.xyz": format_xyz(source),
    }
    if kind == "partial":
        files["template_visible.xyz"] = format_xyz(visible_subset(template, visibility))
        files["source_visible.xyz"] = format_xyz(visible_subset(source, visibility))

    manifest = {
        "kind": kind,
        "n_points": n_points,
        "seed": seed,
        "rot_range": list(rot_range),
        "trans_range": list(trans_range),
        "noise_sd": noise_sd if kind == "noise" else 0.0,
        "visibility": visibility if kind == "partial" else None,
        "g_gt": [float(x) for x in g_gt.reshape(-1)],
        "files": sorted(files),
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return files
