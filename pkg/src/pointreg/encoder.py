"""Point cloud feature encoders.

Two encoder families share one calling convention — a callable mapping an
(N, 3) cloud to a fixed-length feature vector:

* An MLP encoder: a shared per-point multilayer perceptron followed by a
  symmetric pooling (max or avg) over points, making the feature invariant
  to point order. Layer = linear -> per-channel affine -> ReLU, with no
  ReLU after the last layer. Weights travel in a small binary format (see
  save_weights) so they can be produced by external training code.
* A moment encoder: the 12 first and second raw moments of the cloud,
  computed in closed form. It needs no weights and its derivative with
  respect to a rigid perturbation of the cloud is known analytically
  (moment_jacobian), which makes it the reference point for validating
  numerically differentiated solvers.

An optional boolean mask restricts pooling to a subset of points without
changing the array shape, which is how partially visible clouds are encoded.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, FormatError
from .se3 import skew

WEIGHTS_MAGIC = b"PNLKW1\x00\x00"

POOLINGS = ("max", "avg")
_POOLING_CODE = {"max": 0, "avg": 1}
_POOLING_NAME = {code: name for name, code in _POOLING_CODE.items()}

# Feature layout of the moment encoder: mean (3) + raw second moment (9).
MOMENT_DIM = 12


@dataclass(frozen=True)
class LayerParams:
    """One MLP layer: y = relu(scale * (W x + b) + shift), scale/shift per channel."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    scale: np.ndarray   # (out,)
    shift: np.ndarray   # (out,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        if w.ndim != 2:
            raise DimensionMismatch(f"layer weight must be 2-D, got shape {w.shape}")
        out_dim = w.shape[0]
        vectors = {}
        for name in ("bias", "scale", "shift"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (out_dim,):
                raise DimensionMismatch(
                    f"layer {name} has {v.shape[0]} entries for {out_dim} channels"
                )
            vectors[name] = v
        object.__setattr__(self, "weight", w)
        for name, v in vectors.items():
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class EncoderWeights:
    """Full parameter set of an MLP encoder plus its pooling choice."""

    layers: tuple[LayerParams, ...]
    pooling: str = "max"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatch("encoder needs at least one layer")
        if layers[0].weight.shape[1] != 3:
            raise DimensionMismatch(
                f"first layer must take 3 inputs, takes {layers[0].weight.shape[1]}"
            )
        for i in range(1, len(layers)):
            prev_out = layers[i - 1].weight.shape[0]
            cur_in = layers[i].weight.shape[1]
            if prev_out != cur_in:
                raise DimensionMismatch(
                    f"layer {i} expects {cur_in} inputs but layer {i - 1} emits {prev_out}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return (3,) + tuple(layer.weight.shape[0] for layer in self.layers)


def random_weights(
    dims=(3, 64, 64, 64, 128, 1024), pooling: str = "max", seed: int = 0
) -> EncoderWeights:
    """Random untrained encoder with the given layer widths.

    Linear weights use scaled-Gaussian initialization; the per-channel affine
    starts at identity (scale 1, shift 0). Deterministic in the seed.
    """
    from .data import make_rng  # local import: data depends on se3 only

    if len(dims) < 2 or dims[0] != 3:
        raise DimensionMismatch(f"dims must start at 3 with at least one layer, got {dims}")
    rng = make_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weight = rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append(
            LayerParams(
                weight=weight,
                bias=np.zeros(fan_out),
                scale=np.ones(fan_out),
                shift=np.zeros(fan_out),
            )
        )
    return EncoderWeights(layers=tuple(layers), pooling=pooling)


def encode(weights: EncoderWeights, cloud, mask=None) -> np.ndarray:
    """Pooled MLP feature of a cloud; optional mask limits pooling to a subset.

    The mask is boolean per point. Masked-out points still flow through the
    per-point layers (cheap, and keeps shapes static) but are excluded from
    the pool: for max pooling their channels are set to -inf before the max,
    for avg pooling the sum is divided by the number of unmasked points.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {cloud.shape}")
    if len(cloud) == 0:
        raise ValueError("cannot encode an empty cloud")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape[0] != cloud.shape[0]:
            raise DimensionMismatch(
                f"mask has {mask.shape[0]} entries for {cloud.shape[0]} points"
            )
        if not mask.any():
            raise ValueError("mask excludes every point; nothing to pool")

    x = cloud
    last = len(weights.layers) - 1
    for i, layer in enumerate(weights.layers):
        x = x @ layer.weight.T + layer.bias
        x = x * layer.scale + layer.shift
        if i != last:
            x = np.maximum(x, 0.0)

    if weights.pooling == "max":
        if mask is not None:
            x = np.where(mask[:, None], x, -np.inf)
        return x.max(axis=0)
    if mask is not None:
        return x[mask].mean(axis=0)
    return x.mean(axis=0)


def mlp_encoder(weights: EncoderWeights):
    """Bind weights into a ``cloud -> feature`` callable (the solver interface)."""

    def encode_fn(cloud, mask=None):
        return encode(weights, cloud, mask=mask)

    return encode_fn


def encode_moments(cloud, mask=None) -> np.ndarray:
    """First and raw second moments of a cloud as a 12-vector.

    Layout: [mean (3), row-major mean of p p^T (9)]. Permutation-invariant
    by construction and sensitive to all six degrees of freedom of a rigid
    motion for any cloud that is not rotationally symmetric.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {cloud.shape}")
    if mask is not None:
        cloud = cloud[np.asarray(mask, dtype=bool).reshape(-1)]
    if len(cloud) == 0:
        raise ValueError("cannot encode an empty cloud")
    mean = cloud.mean(axis=0)
    second = cloud.T @ cloud / len(cloud)
    return np.concatenate([mean, second.ravel()])


def moment_encoder():
    """The moment feature as a ``cloud -> feature`` callable."""

    def encode_fn(cloud, mask=None):
        return encode_moments(cloud, mask=mask)

    return encode_fn


def moment_jacobian(cloud) -> np.ndarray:
    """Closed-form (12, 6) derivative of encode_moments under warps of the cloud.

    Column i is the derivative of the feature along warping the cloud by
    exp(-t * e_i) at t = 0, matching the finite-difference convention of
    the solver's Jacobian. For a point p the warp derivative is
    dp = -(w x p + v), which gives, with M the raw second moment and
    E_k = skew(e_k):

    * mean rows:   d(mean)/dw = skew(mean),      d(mean)/dv = -I
    * moment rows: dM/dw_k = M E_k - E_k M,      dM/dv_k = -(e_k mean^T + mean e_k^T)
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise ValueError(f"expected a non-empty (N, 3) point array, got shape {cloud.shape}")
    mean = cloud.mean(axis=0)
    second = cloud.T @ cloud / len(cloud)

    jac = np.zeros((MOMENT_DIM, 6))
    jac[0:3, 0:3] = skew(mean)
    jac[0:3, 3:6] = -np.eye(3)
    for k in range(3):
        basis = np.zeros(3)
        basis[k] = 1.0
        gen = skew(basis)
        jac[3:12, k] = (second @ gen - gen @ second).ravel()
        jac[3:12, 3 + k] = -(np.outer(basis, mean) + np.outer(mean, basis)).ravel()
    return jac


def format_weights(weights: EncoderWeights) -> bytes:
    """Serialize encoder weights to the PNLKW1 binary format.

    Layout (all little-endian): 8-byte magic, pooling byte (0 max / 1 avg),
    u32 layer count, then per layer u32 in, u32 out, followed by float32
    arrays: weight (out x in, row-major), bias, scale, shift (out each).
    A CRC-32 of all preceding bytes closes the blob.
    """
    parts = [WEIGHTS_MAGIC, struct.pack("<BI", _POOLING_CODE[weights.pooling], len(weights.layers))]
    for layer in weights.layers:
        out_dim, in_dim = layer.weight.shape
        parts.append(struct.pack("<II", in_dim, out_dim))
        for arr in (layer.weight, layer.bias, layer.scale, layer.shift):
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_weights(path, weights: EncoderWeights) -> None:
    """Write encoder weights in the PNLKW1 binary format (see format_weights)."""
    with open(path, "wb") as fh:
        fh.write(format_weights(weights))


def load_weights(path) -> EncoderWeights:
    """Read a PNLKW1 weight file written by save_weights (or compatible tools)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_weights(blob)


def parse_weights(blob: bytes) -> EncoderWeights:
    if len(blob) < len(WEIGHTS_MAGIC) + 5 + 4:
        raise FormatError("weight file too short to be valid")
    if blob[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise FormatError("bad magic; not a PNLKW1 weight file")

    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"checksum mismatch: file says {stored_crc:#010x}, content is {actual_crc:#010x}"
        )

    offset = len(WEIGHTS_MAGIC)
    pooling_code, n_layers = struct.unpack_from("<BI", body, offset)
    offset += 5
    if pooling_code not in _POOLING_NAME:
        raise FormatError(f"unknown pooling code {pooling_code}")

    def take(count: int, what: str) -> np.ndarray:
        nonlocal offset
        nbytes = 4 * count
        if offset + nbytes > len(body):
            raise FormatError(f"truncated while reading {what}")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        offset += nbytes
        return arr.astype(float)

    layers = []
    for i in range(n_layers):
        if offset + 8 > len(body):
            raise FormatError(f"truncated while reading header of layer {i}")
        in_dim, out_dim = struct.unpack_from("<II", body, offset)
        offset += 8
        if in_dim == 0 or out_dim == 0:
            raise FormatError(f"layer {i} has zero-sized dimension ({in_dim} -> {out_dim})")
        layers.append(
            LayerParams(
                weight=take(out_dim * in_dim, f"weights of layer {i}").reshape(out_dim, in_dim),
                bias=take(out_dim, f"biases of layer {i}"),
                scale=take(out_dim, f"scales of layer {i}"),
                shift=take(out_dim, f"shifts of layer {i}"),
            )
        )
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} unexpected trailing bytes before checksum")

    try:
        return EncoderWeights(layers=tuple(layers), pooling=_POOLING_NAME[pooling_code])
    except DimensionMismatch as exc:
        raise FormatError(f"inconsistent layer sizes: {exc}") from exc
