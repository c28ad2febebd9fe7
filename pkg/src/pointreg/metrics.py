"""Evaluation metrics, success criteria, and the benchmark record format.

The CSV schema written here is a stable external interface consumed by
plotting scripts and the external trainer; columns are fixed as
``method,n_points,seed,init_rot_deg,init_trans,rot_err_deg,trans_err,iters,
converged,wall_time_s,loss`` in exactly that order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import se3
from .errors import ParseError

# A trial counts as a success only when BOTH errors are strictly below these.
SUCCESS_ROT_DEG = 5.0
SUCCESS_TRANS = 0.01

CSV_COLUMNS = (
    "method",
    "n_points",
    "seed",
    "init_rot_deg",
    "init_trans",
    "rot_err_deg",
    "trans_err",
    "iters",
    "converged",
    "wall_time_s",
    "loss",
)


def frobenius_loss(estimate, truth) -> float:
    """Frobenius distance of inverse(estimate) @ truth from the identity.

    Zero exactly when the estimate equals the ground truth; well defined and
    smooth everywhere, including at 180-degree rotation errors where angular
    metrics have a branch cut. For pure rotations the value is
    2*sqrt(2)*|sin(angle/2)| ~ sqrt(2)*angle at small angles.
    """
    rel = se3.inverse(estimate) @ np.asarray(truth, dtype=float)
    return float(np.linalg.norm(rel - np.eye(4)))


@dataclass
class TrialRecord:
    """One registration trial of one method, as written to the results CSV.

    ``gt`` and ``est`` carry the full transforms for in-process consumers;
    they are not serialized. Failed trials (solver raised) carry NaN errors
    and converged = False so downstream statistics can count them.
    """

    method: str
    n_points: int
    seed: int
    init_rot_deg: float
    init_trans: float
    rot_err_deg: float
    trans_err: float
    iters: int
    converged: bool
    wall_time_s: float
    loss: float
    gt: np.ndarray | None = field(default=None, repr=False, compare=False)
    est: np.ndarray | None = field(default=None, repr=False, compare=False)


def is_success(record: TrialRecord) -> bool:
    """Strict success test: rotation AND translation error below threshold.

    NaN errors (failed trials) compare false, so failures never count.
    """
    return record.rot_err_deg < SUCCESS_ROT_DEG and record.trans_err < SUCCESS_TRANS


def success_curve(
    records: list[TrialRecord], bin_width_deg: float = 10.0
) -> list[tuple[tuple[float, float], float]]:
    """Success ratio per initial-rotation bin.

    Returns ((lo, hi), ratio) for each bin of width bin_width_deg that
    contains at least one trial; empty bins are simply absent. Bins are
    left-inclusive: a trial at exactly a bin edge falls into the upper bin.
    """
    if bin_width_deg <= 0.0:
        raise ValueError("bin width must be positive")
    buckets: dict[int, list[bool]] = {}
    for rec in records:
        idx = int(math.floor(rec.init_rot_deg / bin_width_deg))
        buckets.setdefault(idx, []).append(is_success(rec))
    curve = []
    for idx in sorted(buckets):
        hits = buckets[idx]
        lo = idx * bin_width_deg
        curve.append(((lo, lo + bin_width_deg), sum(hits) / len(hits)))
    return curve


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def format_records_csv(records: list[TrialRecord]) -> str:
    """Render trial records as CSV text (header + one row per record)."""
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for rec in records:
        row = [_format_value(getattr(rec, col)) for col in CSV_COLUMNS]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def parse_records_csv(text: str) -> list[TrialRecord]:
    """Parse CSV text produced by format_records_csv back into records."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty CSV")
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ParseError(f"unexpected CSV header {header!r}", line=1)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise ParseError(
                f"expected {len(CSV_COLUMNS)} fields, got {len(parts)}", line=lineno
            )
        try:
            records.append(
                TrialRecord(
                    method=parts[0],
                    n_points=int(parts[1]),
                    seed=int(parts[2]),
                    init_rot_deg=float(parts[3]),
                    init_trans=float(parts[4]),
                    rot_err_deg=float(parts[5]),
                    trans_err=float(parts[6]),
                    iters=int(parts[7]),
                    converged={"true": True, "false": False}[parts[8]],
                    wall_time_s=float(parts[9]),
                    loss=float(parts[10]),
                )
            )
        except (ValueError, KeyError) as exc:
            raise ParseError(f"bad field: {exc}", line=lineno) from None
    return records


def save_records_csv(path, records: list[TrialRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_records_csv(records))


def load_records_csv(path) -> list[TrialRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records_csv(fh.read())
