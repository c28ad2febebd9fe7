"""Request/response models of the HTTP service.

Clouds travel as JSON arrays of [x, y, z] triples; meshes as OFF text;
encoder weights as base64-encoded PNLKW1 blobs. Every experiment endpoint
returns its CSV as a string so the client owns all file I/O.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

Point = tuple[float, float, float]


class SolverOptions(BaseModel):
    """Mirror of solver.SolverConfig."""

    step: float = 1e-2
    max_iters: int = 10
    stop_threshold: float = 1e-7
    pinv_rcond: float = 1e-6
    subtract_means: bool = True


class IcpOptions(BaseModel):
    """Mirror of icp.IcpConfig."""

    max_iters: int = 10
    stop_mse_delta: float = 1e-9


class RegisterRequest(BaseModel):
    template: list[Point] = Field(min_length=1)
    source: list[Point] = Field(min_length=1)
    options: SolverOptions = Field(default_factory=SolverOptions)
    weights_b64: str | None = None  # PNLKW1 blob; None selects the moment encoder
    pooling: str | None = None  # override the pooling stored in the weights
    partial: bool = False
    visibility: str = "depth"


class IcpRequest(BaseModel):
    template: list[Point] = Field(min_length=1)
    source: list[Point] = Field(min_length=1)
    options: IcpOptions = Field(default_factory=IcpOptions)
    partial: bool = False
    visibility: str = "depth"


class RegistrationResponse(BaseModel):
    estimate: list[list[float]]  # 4x4, row-major rows
    iterations_used: int
    converged: bool
    residual_norm: float
    per_iteration_twist_norms: list[float]
    correspondence_mse: list[float] | None = None


class BenchmarkRequest(BaseModel):
    kind: str = "clean"
    mesh_off: str | None = None  # OFF text; None uses the built-in blob shape
    n_points: int = 1000
    trials: int = 10
    seed: int = 0
    rot_range: tuple[float, float] = (0.0, 90.0)
    trans_range: tuple[float, float] = (0.0, 0.3)
    noise_sd: float = 0.04
    visibility: str = "depth"
    solver: SolverOptions = Field(default_factory=SolverOptions)
    icp: IcpOptions = Field(default_factory=IcpOptions)
    weights_b64: str | None = None
    pooling: str | None = None
    measure_time: bool = False
    workers: int = 1


class TimingRequest(BaseModel):
    mesh_off: str | None = None
    sizes: list[int] = Field(default=[256, 512, 1024, 2048, 4096, 8192])
    reps: int = 5
    iters: int = 10
    seed: int = 0
    weights_b64: str | None = None
    pooling: str | None = None


class CostSweepRequest(BaseModel):
    template: list[Point] = Field(min_length=1)
    source: list[Point] = Field(min_length=1)
    axis: str = "z"
    angle_start: float = 0.0
    angle_stop: float = 360.0
    angle_step: float = 5.0
    weights_b64: str | None = None
    pooling: str | None = None


class MakeDataRequest(BaseModel):
    mesh_off: str | None = None
    kind: str = "clean"
    n_points: int = 1000
    seed: int = 0
    rot_range: tuple[float, float] = (0.0, 90.0)
    trans_range: tuple[float, float] = (0.0, 0.3)
    noise_sd: float = 0.04
    visibility: str = "depth"


class CsvResponse(BaseModel):
    csv: str


class FilesResponse(BaseModel):
    files: dict[str, str]


class HealthResponse(BaseModel):
    status: str
    version: str
