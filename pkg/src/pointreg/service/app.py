"""FastAPI application exposing the registration toolkit.

All endpoints are stateless wrappers over the core package: requests carry
every input (clouds inline, meshes as OFF text, weights as base64), and
responses carry every output, so the server touches no files. Domain errors
(parse failures, degenerate inputs, bad configs) map to HTTP 400 with the
error message; request-shape problems are FastAPI's usual 422.
"""

from __future__ import annotations

import base64
import binascii
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

import pointreg
from .. import bench, metrics
from ..data import parse_off
from ..encoder import mlp_encoder, moment_encoder, parse_weights
from ..errors import FormatError, PointregError
from ..icp import IcpConfig, icp_register, icp_register_partial
from ..solver import SolverConfig, register, register_partial
from . import schemas


def _encode_fn_from(weights_b64: str | None, pooling: str | None):
    if weights_b64 is None:
        return moment_encoder()
    return mlp_encoder(_weights_from(weights_b64, pooling))


def _weights_from(weights_b64: str | None, pooling: str | None):
    if weights_b64 is None:
        return None
    try:
        blob = base64.b64decode(weights_b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise FormatError(f"weights_b64 is not valid base64: {exc}") from exc
    weights = parse_weights(blob)
    if pooling is not None:
        weights = replace(weights, pooling=pooling)
    return weights


def _solver_config(options: schemas.SolverOptions) -> SolverConfig:
    return SolverConfig(
        step=options.step,
        max_iters=options.max_iters,
        stop_threshold=options.stop_threshold,
        pinv_rcond=options.pinv_rcond,
        subtract_means=options.subtract_means,
    )


def _icp_config(options: schemas.IcpOptions) -> IcpConfig:
    return IcpConfig(max_iters=options.max_iters, stop_mse_delta=options.stop_mse_delta)


def _registration_response(result) -> schemas.RegistrationResponse:
    return schemas.RegistrationResponse(
        estimate=[[float(v) for v in row] for row in result.estimate],
        iterations_used=result.iterations_used,
        converged=result.converged,
        residual_norm=result.residual_norm,
        per_iteration_twist_norms=result.per_iteration_twist_norms,
        correspondence_mse=result.correspondence_mse,
    )


def _mesh_from(mesh_off: str | None):
    return parse_off(mesh_off) if mesh_off is not None else None


def create_app() -> FastAPI:
    app = FastAPI(title="pointreg service", version=pointreg.__version__)

    @app.exception_handler(PointregError)
    async def domain_error(request: Request, exc: PointregError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=pointreg.__version__)

    @app.post("/register", response_model=schemas.RegistrationResponse)
    def register_endpoint(req: schemas.RegisterRequest) -> schemas.RegistrationResponse:
        encode_fn = _encode_fn_from(req.weights_b64, req.pooling)
        cfg = _solver_config(req.options)
        template = np.asarray(req.template, dtype=float)
        source = np.asarray(req.source, dtype=float)
        if req.partial:
            result = register_partial(encode_fn, template, source, cfg, visibility=req.visibility)
        else:
            result = register(encode_fn, template, source, cfg)
        return _registration_response(result)

    @app.post("/icp", response_model=schemas.RegistrationResponse)
    def icp_endpoint(req: schemas.IcpRequest) -> schemas.RegistrationResponse:
        cfg = _icp_config(req.options)
        template = np.asarray(req.template, dtype=float)
        source = np.asarray(req.source, dtype=float)
        if req.partial:
            result = icp_register_partial(template, source, cfg, visibility=req.visibility)
        else:
            result = icp_register(template, source, cfg)
        return _registration_response(result)

    @app.post("/benchmark", response_model=schemas.CsvResponse)
    def benchmark_endpoint(req: schemas.BenchmarkRequest) -> schemas.CsvResponse:
        config = bench.ExperimentConfig(
            kind=req.kind,
            n_points=req.n_points,
            trials=req.trials,
            seed=req.seed,
            rot_range=tuple(req.rot_range),
            trans_range=tuple(req.trans_range),
            noise_sd=req.noise_sd,
            visibility=req.visibility,
            solver=_solver_config(req.solver),
            icp=_icp_config(req.icp),
            weights=_weights_from(req.weights_b64, req.pooling),
            measure_time=req.measure_time,
            workers=req.workers,
        )
        records = bench.run_benchmark(config, _mesh_from(req.mesh_off))
        return schemas.CsvResponse(csv=metrics.format_records_csv(records))

    @app.post("/timing", response_model=schemas.CsvResponse)
    def timing_endpoint(req: schemas.TimingRequest) -> schemas.CsvResponse:
        config = bench.TimingConfig(
            sizes=tuple(req.sizes),
            reps=req.reps,
            iters=req.iters,
            seed=req.seed,
            weights=_weights_from(req.weights_b64, req.pooling),
        )
        rows = bench.run_timing(config, _mesh_from(req.mesh_off))
        return schemas.CsvResponse(csv=bench.format_timing_csv(rows))

    @app.post("/cost-sweep", response_model=schemas.CsvResponse)
    def cost_sweep_endpoint(req: schemas.CostSweepRequest) -> schemas.CsvResponse:
        if req.angle_step <= 0.0:
            raise ValueError("angle_step must be positive")
        if req.angle_stop < req.angle_start:
            raise ValueError("angle_stop must be at least angle_start")
        angles = np.arange(req.angle_start, req.angle_stop + req.angle_step * 1e-9, req.angle_step)
        rows = bench.run_cost_sweep(
            np.asarray(req.template, dtype=float),
            np.asarray(req.source, dtype=float),
            angles,
            axis=req.axis,
            encode_fn=_encode_fn_from(req.weights_b64, req.pooling),
        )
        return schemas.CsvResponse(csv=bench.format_cost_sweep_csv(rows))

    @app.post("/make-data", response_model=schemas.FilesResponse)
    def make_data_endpoint(req: schemas.MakeDataRequest) -> schemas.FilesResponse:
        mesh = _mesh_from(req.mesh_off)
        if mesh is None:
            from ..data import blob_mesh

            mesh = blob_mesh()
        files = bench.make_data(
            mesh,
            kind=req.kind,
            n_points=req.n_points,
            seed=req.seed,
            rot_range=tuple(req.rot_range),
            trans_range=tuple(req.trans_range),
            noise_sd=req.noise_sd,
            visibility=req.visibility,
        )
        return schemas.FilesResponse(files=files)

    return app


app = create_app()
