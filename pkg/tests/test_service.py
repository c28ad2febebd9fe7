"""HTTP service: endpoint behavior, error mapping, schema round trips."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from pointreg import data, encoder, metrics, se3
from pointreg.service import create_app

from conftest import asymmetric_cloud


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def _points(cloud):
    return [[float(x), float(y), float(z)] for x, y, z in cloud]


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["version"]


class TestRegisterEndpoint:
    def test_identity(self, client):
        cloud = _points(asymmetric_cloud(150, seed=1))
        resp = client.post("/register", json={"template": cloud, "source": cloud})
        assert resp.status_code == 200
        body = resp.json()
        assert body["converged"] is True
        assert body["iterations_used"] == 1
        np.testing.assert_allclose(np.array(body["estimate"]), np.eye(4), atol=1e-9)

    def test_known_transform(self, client):
        template = asymmetric_cloud(300, seed=2)
        g_true = se3.exp_map(np.array([0.05, -0.1, 0.08, 0.1, 0.05, -0.02]))
        source = se3.apply_transform(g_true, template)
        resp = client.post(
            "/register", json={"template": _points(template), "source": _points(source)}
        )
        assert resp.status_code == 200
        est = np.array(resp.json()["estimate"])
        rot_err, trans_err = se3.pose_error(est, g_true)
        assert rot_err < 0.01 and trans_err < 1e-4

    def test_learned_weights_accepted(self, client):
        weights = encoder.random_weights((3, 8, 16), seed=3)
        blob = encoder.format_weights(weights)
        cloud = _points(asymmetric_cloud(80, seed=4))
        resp = client.post(
            "/register",
            json={
                "template": cloud, "source": cloud,
                "weights_b64": base64.b64encode(blob).decode("ascii"),
            },
        )
        assert resp.status_code == 200
        assert resp.json()["converged"] is True

    def test_corrupt_weights_400(self, client):
        cloud = _points(asymmetric_cloud(10, seed=5))
        resp = client.post(
            "/register",
            json={
                "template": cloud, "source": cloud,
                "weights_b64": base64.b64encode(b"garbage").decode("ascii"),
            },
        )
        assert resp.status_code == 400
        assert "detail" in resp.json()

    def test_partial_mode(self, client):
        cloud = _points(data.sample_surface(data.blob_mesh(), 800, seed=6))
        resp = client.post(
            "/register", json={"template": cloud, "source": cloud, "partial": True}
        )
        assert resp.status_code == 200
        est = np.array(resp.json()["estimate"])
        rot_err, trans_err = se3.pose_error(est, np.eye(4))
        assert rot_err < 1e-6 and trans_err < 1e-6

    def test_empty_cloud_422(self, client):
        resp = client.post("/register", json={"template": [], "source": [[0, 0, 0]]})
        assert resp.status_code == 422

    def test_bad_visibility_400(self, client):
        cloud = _points(asymmetric_cloud(20, seed=7))
        resp = client.post(
            "/register",
            json={"template": cloud, "source": cloud, "partial": True,
                  "visibility": "sideways"},
        )
        assert resp.status_code == 400


class TestIcpEndpoint:
    def test_identity(self, client):
        cloud = _points(asymmetric_cloud(200, seed=8))
        resp = client.post("/icp", json={"template": cloud, "source": cloud})
        assert resp.status_code == 200
        body = resp.json()
        np.testing.assert_allclose(np.array(body["estimate"]), np.eye(4), atol=1e-6)
        assert body["correspondence_mse"] is not None
        assert len(body["correspondence_mse"]) >= 1

    def test_degenerate_cloud_400(self, client):
        # Two points cannot determine a rigid fit.
        resp = client.post(
            "/icp",
            json={"template": [[0, 0, 0], [1, 0, 0]], "source": [[0, 0, 1], [1, 0, 1]]},
        )
        assert resp.status_code == 400


class TestBenchmarkEndpoint:
    def test_deterministic_csv(self, client):
        req = {"kind": "clean", "n_points": 100, "trials": 2, "seed": 5,
               "rot_range": [0.0, 10.0], "trans_range": [0.0, 0.05]}
        a = client.post("/benchmark", json=req)
        b = client.post("/benchmark", json=req)
        assert a.status_code == 200
        assert a.json()["csv"] == b.json()["csv"]
        records = metrics.parse_records_csv(a.json()["csv"])
        assert len(records) == 4

    def test_custom_mesh(self, client):
        mesh_off = data.format_off(data.box_mesh())
        resp = client.post(
            "/benchmark",
            json={"kind": "clean", "n_points": 60, "trials": 1, "seed": 1,
                  "mesh_off": mesh_off, "rot_range": [0.0, 5.0],
                  "trans_range": [0.0, 0.01]},
        )
        assert resp.status_code == 200

    def test_malformed_mesh_400(self, client):
        resp = client.post(
            "/benchmark",
            json={"kind": "clean", "n_points": 60, "trials": 1, "mesh_off": "not OFF"},
        )
        assert resp.status_code == 400

    def test_bad_kind_400(self, client):
        resp = client.post("/benchmark", json={"kind": "bogus", "trials": 1})
        assert resp.status_code == 400


class TestTimingEndpoint:
    def test_small_grid(self, client):
        resp = client.post("/timing", json={"sizes": [32, 64], "reps": 1, "iters": 1})
        assert resp.status_code == 200
        lines = resp.json()["csv"].splitlines()
        assert lines[0] == "method,n,mean_seconds"
        assert len(lines) == 5  # header + 2 methods x 2 sizes


class TestCostSweepEndpoint:
    def test_sweep(self, client):
        cloud = _points(asymmetric_cloud(120, seed=9))
        resp = client.post(
            "/cost-sweep",
            json={"template": cloud, "source": cloud,
                  "angle_start": 0.0, "angle_stop": 90.0, "angle_step": 45.0},
        )
        assert resp.status_code == 200
        lines = resp.json()["csv"].splitlines()
        assert lines[0] == "angle_deg,iclk_cost,icp_cost"
        assert len(lines) == 4  # header + angles {0, 45, 90}

    def test_bad_step_400(self, client):
        cloud = _points(asymmetric_cloud(10, seed=10))
        resp = client.post(
            "/cost-sweep",
            json={"template": cloud, "source": cloud, "angle_step": 0.0},
        )
        assert resp.status_code == 400


class TestMakeDataEndpoint:
    def test_files_round_trip(self, client):
        resp = client.post("/make-data", json={"kind": "clean", "n_points": 50, "seed": 2})
        assert resp.status_code == 200
        files = resp.json()["files"]
        assert set(files) == {"template.xyz", "source.xyz", "manifest.json"}
        assert len(data.parse_xyz(files["template.xyz"])) == 50

    def test_partial_files(self, client):
        resp = client.post("/make-data", json={"kind": "partial", "n_points": 200, "seed": 3})
        assert resp.status_code == 200
        assert "template_visible.xyz" in resp.json()["files"]
