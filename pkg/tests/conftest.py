"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pointreg import data


def random_twist(rng: np.random.Generator, max_angle: float = np.pi - 1e-3, trans_scale: float = 1.0) -> np.ndarray:
    """Random twist with rotation angle uniform in (0, max_angle)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return np.concatenate([axis * angle, rng.normal(scale=trans_scale, size=3)])


def asymmetric_cloud(n: int, seed: int) -> np.ndarray:
    """Sampled surface cloud with no rotational symmetry, inside [0, 1]^3."""
    return data.normalize_unit_box(data.sample_surface(data.blob_mesh(), n, seed))


@pytest.fixture(scope="session")
def blob() -> data.TriangleMesh:
    return data.blob_mesh()


@pytest.fixture(scope="session")
def unit_box() -> data.TriangleMesh:
    return data.box_mesh((1.0, 1.0, 1.0))
