"""Feature-space inverse-compositional registration.

The solver aligns a source cloud to a template cloud by Gauss-Newton in the
feature space of an encoder. The encoder's Jacobian with respect to a rigid
warp of the input is estimated once, on the template only, by finite
differences; each iteration then solves a 6-dof linear least-squares problem
against the current feature residual and warps the source by the resulting
small motion. Because the Jacobian never has to be recomputed, iterations
cost one encoder evaluation each.

Conventions:

* ``encode_fn`` is any callable mapping an (N, 3) cloud to a fixed-length
  feature vector (see encoder.mlp_encoder / encoder.moment_encoder).
* The returned ``estimate`` maps the template onto the source: if the source
  was produced as ``apply_transform(g, template)`` then ``estimate`` recovers
  ``g``. Internally the loop accumulates the opposite (aligning) motion and
  inverts it at the end, together with the centroid shifts when
  ``subtract_means`` is on, so callers only ever see original-frame poses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import se3
from .data import subtract_mean, visible_mask
from .errors import DegenerateCloud, NumericalFailure


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs of the iterative solver.

    step: finite-difference perturbation per twist coordinate.
    max_iters: iteration cap.
    stop_threshold: converged once every |twist coordinate| falls below this.
    pinv_rcond: relative singular-value cutoff of the pseudo-inverse.
    subtract_means: center both clouds before solving (recommended).
    """

    step: float = 1e-2
    max_iters: int = 10
    stop_threshold: float = 1e-7
    pinv_rcond: float = 1e-6
    subtract_means: bool = True

    def __post_init__(self):
        if not self.step > 0.0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.stop_threshold < 0.0:
            raise ValueError(f"stop_threshold must be non-negative, got {self.stop_threshold}")
        if not 0.0 < self.pinv_rcond < 1.0:
            raise ValueError(f"pinv_rcond must be in (0, 1), got {self.pinv_rcond}")


@dataclass
class RegistrationResult:
    """Outcome of a registration run (shared by the feature solver and ICP).

    estimate: template-to-source transform.
    iterations_used: iterations actually run (including the converging one).
    converged: whether the stop criterion fired before the iteration cap.
    residual_norm: solver-specific residual at exit — feature-space distance
        for the feature solver, RMS correspondence distance for ICP.
    per_iteration_twist_norms: magnitude of each iteration's motion update.
    correspondence_mse: ICP only — mean squared correspondence distance per
        iteration (None for the feature solver).
    """

    estimate: np.ndarray
    iterations_used: int
    converged: bool
    residual_norm: float
    per_iteration_twist_norms: list[float] = field(default_factory=list)
    correspondence_mse: list[float] | None = None


def _as_cloud(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise DegenerateCloud(
            f"expected a non-empty (N, 3) point array, got shape {points.shape}"
        )
    return points


def compute_jacobian(encode_fn, template, step: float, base_feature=None) -> np.ndarray:
    """(K, 6) finite-difference feature Jacobian of warping the template.

    Column i is [encode(exp(-step * e_i) . template) - encode(template)] / step:
    a forward difference along the i-th negative basis twist. Pass
    ``base_feature`` to reuse an existing encode(template) evaluation.
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    template = _as_cloud(template)
    if base_feature is None:
        base_feature = encode_fn(template)
    base_feature = np.asarray(base_feature, dtype=float).reshape(-1)

    jac = np.empty((base_feature.shape[0], 6))
    twist = np.zeros(6)
    for i in range(6):
        twist[:] = 0.0
        twist[i] = -step
        warped = se3.apply_transform(se3.exp_map(twist), template)
        jac[:, i] = (np.asarray(encode_fn(warped), dtype=float) - base_feature) / step
    return jac


def solve_twist(jacobian, f_src, f_tmpl, rcond: float = 1e-6) -> np.ndarray:
    """Least-squares twist for one iteration: pinv(J) @ (f_src - f_tmpl)."""
    jacobian = np.asarray(jacobian, dtype=float)
    residual = np.asarray(f_src, dtype=float) - np.asarray(f_tmpl, dtype=float)
    try:
        return np.linalg.pinv(jacobian, rcond=rcond) @ residual
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed on the {jacobian.shape} Jacobian: {exc}") from exc


def _finish_estimate(accum, mean_src, mean_tmpl) -> np.ndarray:
    """Turn the accumulated centered-frame aligning motion into the estimate.

    ``accum`` maps the centered source onto the centered template; the
    template-to-source estimate in original frames is then
    translate(mean_src) . accum^-1 . translate(-mean_tmpl).
    """
    return se3.compose(
        se3.translation(mean_src),
        se3.compose(se3.inverse(accum), se3.translation(-mean_tmpl)),
    )


def register(encode_fn, template, source, config: SolverConfig | None = None) -> RegistrationResult:
    """Align source to template in feature space; return the recovered pose.

    The Jacobian and its pseudo-inverse are built once from the template.
    Each iteration encodes the current source, solves for a twist, warps the
    source by exp(twist), and accumulates the motion; the loop stops early
    once every twist coordinate is below config.stop_threshold.
    """
    cfg = config if config is not None else SolverConfig()
    template = _as_cloud(template)
    source = _as_cloud(source)

    if cfg.subtract_means:
        tmpl_centered, mean_tmpl = subtract_mean(template)
        src_centered, mean_src = subtract_mean(source)
    else:
        tmpl_centered, mean_tmpl = template, np.zeros(3)
        src_centered, mean_src = source, np.zeros(3)

    f_tmpl = np.asarray(encode_fn(tmpl_centered), dtype=float).reshape(-1)
    jacobian = compute_jacobian(encode_fn, tmpl_centered, cfg.step, base_feature=f_tmpl)
    try:
        jac_pinv = np.linalg.pinv(jacobian, rcond=cfg.pinv_rcond)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed on the {jacobian.shape} Jacobian: {exc}") from exc

    current = src_centered
    accum = np.eye(4)
    f_src = np.asarray(encode_fn(current), dtype=float).reshape(-1)

    twist_norms: list[float] = []
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        twist = jac_pinv @ (f_src - f_tmpl)
        twist_norms.append(float(np.linalg.norm(twist)))
        delta = se3.exp_map(twist)
        current = se3.apply_transform(delta, current)
        accum = se3.compose(delta, accum)
        f_src = np.asarray(encode_fn(current), dtype=float).reshape(-1)
        iterations += 1
        if float(np.max(np.abs(twist))) < cfg.stop_threshold:
            converged = True
            break

    return RegistrationResult(
        estimate=_finish_estimate(accum, mean_src, mean_tmpl),
        iterations_used=iterations,
        converged=converged,
        residual_norm=float(np.linalg.norm(f_src - f_tmpl)),
        per_iteration_twist_norms=twist_norms,
    )


def register_partial(
    encode_fn,
    template,
    source,
    config: SolverConfig | None = None,
    visibility: str = "depth",
) -> RegistrationResult:
    """Registration under simulated partial visibility.

    The template's visible subset (and its Jacobian) is fixed up front — the
    template and the sensor never move. Each outer iteration re-derives the
    source's visible subset from the current warped FULL source, runs one
    feature-space update between the two visible sets, and warps the full
    source, so points can enter and leave view as the alignment improves.

    Centering happens once up front, using the centroids of the two initial
    visible subsets; the depth-based visibility selection is unaffected by a
    constant shift, so running the loop in these centered frames changes
    nothing but the conditioning.
    """
    cfg = config if config is not None else SolverConfig()
    template = _as_cloud(template)
    source = _as_cloud(source)

    tmpl_visible = template[visible_mask(template, visibility)]
    src_visible0 = source[visible_mask(source, visibility)]

    if cfg.subtract_means:
        mean_tmpl = tmpl_visible.mean(axis=0)
        mean_src = src_visible0.mean(axis=0)
    else:
        mean_tmpl = np.zeros(3)
        mean_src = np.zeros(3)

    tmpl_centered = tmpl_visible - mean_tmpl
    f_tmpl = np.asarray(encode_fn(tmpl_centered), dtype=float).reshape(-1)
    jacobian = compute_jacobian(encode_fn, tmpl_centered, cfg.step, base_feature=f_tmpl)
    try:
        jac_pinv = np.linalg.pinv(jacobian, rcond=cfg.pinv_rcond)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed on the {jacobian.shape} Jacobian: {exc}") from exc

    current_full = source - mean_src
    accum = np.eye(4)
    f_src = np.asarray(
        encode_fn(current_full[visible_mask(current_full, visibility)]), dtype=float
    ).reshape(-1)

    twist_norms: list[float] = []
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        twist = jac_pinv @ (f_src - f_tmpl)
        twist_norms.append(float(np.linalg.norm(twist)))
        delta = se3.exp_map(twist)
        current_full = se3.apply_transform(delta, current_full)
        accum = se3.compose(delta, accum)
        f_src = np.asarray(
            encode_fn(current_full[visible_mask(current_full, visibility)]), dtype=float
        ).reshape(-1)
        iterations += 1
        if float(np.max(np.abs(twist))) < cfg.stop_threshold:
            converged = True
            break

    return RegistrationResult(
        estimate=_finish_estimate(accum, mean_src, mean_tmpl),
        iterations_used=iterations,
        converged=converged,
        residual_norm=float(np.linalg.norm(f_src - f_tmpl)),
        per_iteration_twist_norms=twist_norms,
    )
