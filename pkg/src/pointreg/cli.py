"""Command-line client of the registration service.

Every command is a thin client: it reads local files, posts one request to
the HTTP service, and writes the response where asked. By default the
service runs in-process (no network, no setup); pass --server to talk to a
remote instance started with ``pointreg serve`` instead. Either way the
computation happens behind the same API, so results are identical.
"""

from __future__ import annotations

import asyncio
import base64
import os

import click
import httpx

from .data import load_off, load_xyz, normalize_unit_box, sample_surface
from .errors import PointregError

_REMOTE_TIMEOUT_S = 600.0


def _post(server: str | None, path: str, payload: dict) -> dict:
    """POST to the service (in-process unless a server URL is given)."""
    try:
        if server is None:
            from .service.app import app

            async def go():
                transport = httpx.ASGITransport(app=app)
                async with httpx.AsyncClient(
                    transport=transport, base_url="http://pointreg.internal", timeout=None
                ) as client:
                    return await client.post(path, json=payload)

            response = asyncio.run(go())
        else:
            with httpx.Client(base_url=server, timeout=_REMOTE_TIMEOUT_S) as client:
                response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"service request failed: {exc}") from exc

    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(f"service error ({response.status_code}): {detail}")
    return response.json()


def _load_cloud(path: str, points: int, seed: int):
    """Read a cloud: XYZ directly, OFF by sampling its surface."""
    try:
        if path.lower().endswith(".off"):
            return normalize_unit_box(sample_surface(load_off(path), points, seed))
        return load_xyz(path)
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}") from exc
    except PointregError as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


def _read_mesh_text(path: str | None) -> str | None:
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}") from exc


def _weights_b64(path: str | None) -> str | None:
    if path is None:
        return None
    try:
        with open(path, "rb") as fh:
            return base64.b64encode(fh.read()).decode("ascii")
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}") from exc


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise click.ClickException(f"expected LO:HI, got {text!r}") from None


def _write_text(out: str | None, content: str) -> None:
    if out is None:
        click.echo(content, nl=False)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        click.echo(f"wrote {out}")


def _print_registration(result: dict) -> None:
    click.echo("estimate:")
    for row in result["estimate"]:
        click.echo("  " + " ".join(repr(float(v)) for v in row))
    click.echo(f"iterations_used: {result['iterations_used']}")
    click.echo(f"converged: {'true' if result['converged'] else 'false'}")
    click.echo(f"residual_norm: {result['residual_norm']!r}")
    norms = " ".join(repr(float(v)) for v in result["per_iteration_twist_norms"])
    click.echo(f"per_iteration_twist_norms: {norms}")


_cloud_arg = click.argument("cloud_path", type=click.Path(exists=True, dir_okay=False))


def _common(*options):
    def wrap(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return wrap


_server = click.option("--server", default=None, metavar="URL", help="Remote service URL (default: run in-process).")
_seed = click.option("--seed", default=0, show_default=True, help="Master random seed.")
_points = click.option("--points", default=1000, show_default=True, help="Points sampled from OFF meshes.")
_trials = click.option("--trials", default=10, show_default=True, help="Number of benchmark trials.")
_rot_range = click.option("--rot-range", default="0:90", show_default=True, metavar="LO:HI", help="Rotation angle range, degrees.")
_trans_range = click.option("--trans-range", default="0:0.3", show_default=True, metavar="LO:HI", help="Translation magnitude range.")
_noise_sd = click.option("--noise-sd", default=0.04, show_default=True, help="Gaussian noise sd (noise kind).")
_weights = click.option("--weights", default=None, type=click.Path(exists=True, dir_okay=False), help="PNLKW1 weights file (default: moment encoder).")
_pooling = click.option("--pooling", default=None, type=click.Choice(["max", "avg"]), help="Override the pooling stored in the weights.")
_max_iters = click.option("--max-iters", default=10, show_default=True, help="Iteration cap.")
_step = click.option("--step", default=1e-2, show_default=True, help="Finite-difference step of the feature solver.")
_stop_thresh = click.option("--stop-thresh", default=1e-7, show_default=True, help="Convergence threshold on twist coordinates.")
_out = click.option("--out", default=None, type=click.Path(dir_okay=False), help="Output path (default: stdout).")
_visibility = click.option("--visibility", default="depth", show_default=True, type=click.Choice(["depth", "componentwise"]), help="Visibility filter variant.")
_partial = click.option("--partial", is_flag=True, help="Register under simulated partial visibility.")


@click.group()
@click.version_option(package_name="pointreg")
def main() -> None:
    """Point cloud registration toolkit (feature-space solver + ICP baseline)."""


@main.command()
@click.argument("template_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_path", type=click.Path(exists=True, dir_okay=False))
@_common(_weights, _pooling, _max_iters, _step, _stop_thresh, _partial, _visibility, _points, _seed, _server)
def register(template_path, source_path, weights, pooling, max_iters, step, stop_thresh, partial, visibility, points, seed, server):
    """Align SOURCE to TEMPLATE with the feature-space solver."""
    payload = {
        "template": _load_cloud(template_path, points, seed).tolist(),
        "source": _load_cloud(source_path, points, seed).tolist(),
        "options": {"step": step, "max_iters": max_iters, "stop_threshold": stop_thresh},
        "weights_b64": _weights_b64(weights),
        "pooling": pooling,
        "partial": partial,
        "visibility": visibility,
    }
    _print_registration(_post(server, "/register", payload))


@main.command()
@click.argument("template_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_path", type=click.Path(exists=True, dir_okay=False))
@_common(_max_iters, _partial, _visibility, _points, _seed, _server)
def icp(template_path, source_path, max_iters, partial, visibility, points, seed, server):
    """Align SOURCE to TEMPLATE with the ICP baseline."""
    payload = {
        "template": _load_cloud(template_path, points, seed).tolist(),
        "source": _load_cloud(source_path, points, seed).tolist(),
        "options": {"max_iters": max_iters},
        "partial": partial,
        "visibility": visibility,
    }
    _print_registration(_post(server, "/icp", payload))


@main.command()
@click.argument("mesh_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", default="clean", show_default=True, type=click.Choice(["clean", "noise", "partial"]))
@click.option("--measure-time", is_flag=True, help="Record wall times (makes output nondeterministic).")
@_common(_trials, _points, _seed, _rot_range, _trans_range, _noise_sd, _weights, _pooling, _max_iters, _step, _stop_thresh, _visibility, _out, _server)
def benchmark(mesh_path, kind, measure_time, trials, points, seed, rot_range, trans_range, noise_sd, weights, pooling, max_iters, step, stop_thresh, visibility, out, server):
    """Run both methods over many random trials; emit the results CSV."""
    payload = {
        "kind": kind,
        "mesh_off": _read_mesh_text(mesh_path),
        "n_points": points,
        "trials": trials,
        "seed": seed,
        "rot_range": _parse_range(rot_range),
        "trans_range": _parse_range(trans_range),
        "noise_sd": noise_sd,
        "visibility": visibility,
        "solver": {"step": step, "max_iters": max_iters, "stop_threshold": stop_thresh},
        "icp": {"max_iters": max_iters},
        "weights_b64": _weights_b64(weights),
        "pooling": pooling,
        "measure_time": measure_time,
    }
    _write_text(out, _post(server, "/benchmark", payload)["csv"])


@main.command()
@click.argument("mesh_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--sizes", default="256,512,1024,2048,4096,8192", show_default=True, help="Comma-separated cloud sizes.")
@click.option("--reps", default=5, show_default=True, help="Timed repetitions per size (median reported).")
@click.option("--iters", default=10, show_default=True, help="Fixed iteration count for both methods.")
@_common(_seed, _weights, _pooling, _out, _server)
def timing(mesh_path, sizes, reps, iters, seed, weights, pooling, out, server):
    """Measure wall-clock scaling of both methods over cloud sizes."""
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError:
        raise click.ClickException(f"bad --sizes {sizes!r}; expected comma-separated integers") from None
    payload = {
        "mesh_off": _read_mesh_text(mesh_path),
        "sizes": size_list,
        "reps": reps,
        "iters": iters,
        "seed": seed,
        "weights_b64": _weights_b64(weights),
        "pooling": pooling,
    }
    _write_text(out, _post(server, "/timing", payload)["csv"])


@main.command("cost-sweep")
@click.argument("template_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("source_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", default="z", show_default=True, type=click.Choice(["x", "y", "z"]))
@click.option("--angle-start", default=0.0, show_default=True)
@click.option("--angle-stop", default=360.0, show_default=True)
@click.option("--angle-step", default=5.0, show_default=True)
@_common(_weights, _pooling, _points, _seed, _out, _server)
def cost_sweep(template_path, source_path, axis, angle_start, angle_stop, angle_step, weights, pooling, points, seed, out, server):
    """Evaluate both objectives while spinning SOURCE about an axis."""
    payload = {
        "template": _load_cloud(template_path, points, seed).tolist(),
        "source": _load_cloud(source_path, points, seed).tolist(),
        "axis": axis,
        "angle_start": angle_start,
        "angle_stop": angle_stop,
        "angle_step": angle_step,
        "weights_b64": _weights_b64(weights),
        "pooling": pooling,
    }
    _write_text(out, _post(server, "/cost-sweep", payload)["csv"])


@main.command("make-data")
@click.argument("mesh_path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", default="clean", show_default=True, type=click.Choice(["clean", "noise", "partial"]))
@click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False), help="Directory receiving the fixture files.")
@_common(_points, _seed, _rot_range, _trans_range, _noise_sd, _visibility, _server)
def make_data(mesh_path, kind, out_dir, points, seed, rot_range, trans_range, noise_sd, visibility, server):
    """Manufacture a replayable template/source fixture pair + manifest."""
    payload = {
        "mesh_off": _read_mesh_text(mesh_path),
        "kind": kind,
        "n_points": points,
        "seed": seed,
        "rot_range": _parse_range(rot_range),
        "trans_range": _parse_range(trans_range),
        "noise_sd": noise_sd,
        "visibility": visibility,
    }
    files = _post(server, "/make-data", payload)["files"]
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(files):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(files[name])
        click.echo(f"wrote {path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service (what every other command talks to)."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
