"""Classical point-to-point ICP baseline.

Deliberately simple: exact brute-force nearest neighbors (no spatial index,
so the per-iteration cost is O(N*M) by construction) and the closed-form
SVD solution of the rigid least-squares problem. Results are reported in
the same RegistrationResult shape as the feature-space solver so the
benchmark harness can treat both uniformly, including the same estimate
convention (template-to-source).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import se3
from .errors import DegenerateConfiguration
from .solver import RegistrationResult, _as_cloud
from .data import visible_mask

# Source points are processed in chunks of this many rows so the pairwise
# distance buffer stays modest regardless of cloud size.
_NN_CHUNK = 512

# best_rigid_fit treats the pairing as degenerate when the second singular
# value of the cross-covariance falls below this fraction of the first.
_DEGENERACY_RATIO = 1e-12


@dataclass(frozen=True)
class IcpConfig:
    """ICP loop controls.

    max_iters: iteration cap.
    stop_mse_delta: converged when the mean squared correspondence distance
        either falls below this or changes by less than this between
        consecutive iterations.
    use_brute_force: kept for config completeness; only brute force exists.
    """

    max_iters: int = 10
    stop_mse_delta: float = 1e-9
    use_brute_force: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.stop_mse_delta < 0.0:
            raise ValueError(f"stop_mse_delta must be non-negative, got {self.stop_mse_delta}")
        if not self.use_brute_force:
            raise ValueError("only brute-force correspondence search is implemented")


@dataclass(frozen=True)
class Correspondences:
    """Per source point: index of its nearest template point + squared distance."""

    indices: np.ndarray  # (N,) int64
    sq_dists: np.ndarray  # (N,) float64


def nearest_neighbors(source, template) -> Correspondences:
    """Exact nearest template point for every source point (brute force).

    Distances are expanded as |s|^2 + |t|^2 - 2 s.t for speed, then the
    winning distance is recomputed exactly from the coordinate differences
    so the reported values carry no cancellation error. Ties go to the
    lowest template index.
    """
    source = _as_cloud(source)
    template = _as_cloud(template)

    tmpl_sq = np.einsum("ij,ij->i", template, template)
    indices = np.empty(len(source), dtype=np.int64)
    for start in range(0, len(source), _NN_CHUNK):
        chunk = source[start : start + _NN_CHUNK]
        d2 = np.einsum("ij,ij->i", chunk, chunk)[:, None] + tmpl_sq - 2.0 * (chunk @ template.T)
        indices[start : start + len(chunk)] = np.argmin(d2, axis=1)

    diff = source - template[indices]
    sq_dists = np.einsum("ij,ij->i", diff, diff)
    return Correspondences(indices=indices, sq_dists=sq_dists)


def best_rigid_fit(source, matched_template) -> np.ndarray:
    """Rigid transform minimizing sum |G.s_i - t_i|^2 over paired points.

    Kabsch: SVD of the centered cross-covariance, with the smallest singular
    direction sign-flipped when needed so the rotation is proper (det +1).
    Raises DegenerateConfiguration for under-determined pairings (< 3 pairs,
    or collinear/coincident points, detected via the singular spectrum).
    """
    source = _as_cloud(source)
    matched_template = _as_cloud(matched_template)
    if len(source) != len(matched_template):
        raise ValueError(
            f"pairings must have equal lengths, got {len(source)} and {len(matched_template)}"
        )
    if len(source) < 3:
        raise DegenerateConfiguration(f"{len(source)} pairs cannot determine a rigid motion")

    src_mean = source.mean(axis=0)
    tmpl_mean = matched_template.mean(axis=0)
    cross_cov = (source - src_mean).T @ (matched_template - tmpl_mean)

    u, sing, vt = np.linalg.svd(cross_cov)
    if sing[0] <= 0.0 or sing[1] <= _DEGENERACY_RATIO * sing[0]:
        raise DegenerateConfiguration(
            "paired points are coincident or collinear; rotation is undetermined"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        raise DegenerateConfiguration("cross-covariance is rank deficient")
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T

    g = np.eye(4)
    g[:3, :3] = rot
    g[:3, 3] = tmpl_mean - rot @ src_mean
    return g


def icp_register(template, source, config: IcpConfig | None = None) -> RegistrationResult:
    """Point-to-point ICP from identity initialization.

    Each iteration matches every current source point to its nearest
    template point, solves the rigid fit in closed form, and warps the
    source. The mean squared correspondence distance of point-to-point ICP
    with exact matches never increases, which doubles as a built-in sanity
    check (exposed via correspondence_mse).
    """
    cfg = config if config is not None else IcpConfig()
    template = _as_cloud(template)
    source = _as_cloud(source)
    return _icp_loop(template, source, cfg, visible=None)


def icp_register_partial(
    template, source, config: IcpConfig | None = None, visibility: str = "depth"
) -> RegistrationResult:
    """ICP under the same simulated partial visibility as the feature solver.

    The template's visible subset is fixed; the source's visible subset is
    re-derived from the warped full source every iteration, and each
    iteration fits only the visible pairs while warping the full source.
    """
    cfg = config if config is not None else IcpConfig()
    template = _as_cloud(template)
    source = _as_cloud(source)
    return _icp_loop(template, source, cfg, visible=visibility)


def _icp_loop(template, source, cfg: IcpConfig, visible: str | None) -> RegistrationResult:
    tmpl_work = template if visible is None else template[visible_mask(template, visible)]

    current = source.copy()
    accum = np.eye(4)
    mse_history: list[float] = []
    increments: list[float] = []
    converged = False
    iterations = 0

    for _ in range(cfg.max_iters):
        active = current if visible is None else current[visible_mask(current, visible)]
        corr = nearest_neighbors(active, tmpl_work)
        mse = float(corr.sq_dists.mean())
        mse_history.append(mse)
        iterations += 1

        done = mse < cfg.stop_mse_delta or (
            len(mse_history) >= 2 and abs(mse_history[-2] - mse) < cfg.stop_mse_delta
        )
        if done:
            converged = True
            break

        delta = best_rigid_fit(active, tmpl_work[corr.indices])
        increments.append(se3.increment_magnitude(delta))
        current = se3.apply_transform(delta, current)
        accum = se3.compose(delta, accum)

    return RegistrationResult(
        estimate=se3.inverse(accum),
        iterations_used=iterations,
        converged=converged,
        residual_norm=float(np.sqrt(mse_history[-1])),
        per_iteration_twist_norms=increments,
        correspondence_mse=mse_history,
    )
