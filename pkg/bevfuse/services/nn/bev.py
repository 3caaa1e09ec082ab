"""Image-column to polar to orthographic BEV transforms"""

import logging
import math
from typing import Tuple

import numpy as np
from scipy import sparse

from bevfuse.errors import FisheyeError, NNError
from bevfuse.models.camera import CameraExtrinsics, DepthBand, FisheyeIntrinsics
from bevfuse.models.geometry import GridSpec
from bevfuse.services.fisheye_service import fisheye_service
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.nn import functional as F
from bevfuse.services.nn.layers import Module
from bevfuse.services.nn.tensor import Tensor

logger = logging.getLogger(__name__)


class PolarHead(Module):
    """Dense map from the cropped image rows of a column to polar range bins.

    The same (bins*C, rows*C) map is applied to every column, so the
    output keeps the column axis: (N, C, rows, W) -> (N, C, bins, W).
    """

    def __init__(self, rng: np.random.Generator, channels: int, rows: int, bins: int):
        super().__init__()
        self.channels, self.rows, self.bins = channels, rows, bins
        fan_in = channels * rows
        bound = math.sqrt(6.0 / fan_in)
        self.weight = Tensor.param(rng.uniform(-bound, bound, (fan_in, channels * bins)))
        self.bias = Tensor.param(np.zeros(channels * bins))

    def __call__(self, x: Tensor) -> Tensor:
        n, c, r, w = x.shape
        if c != self.channels or r != self.rows:
            raise NNError(f"polar head expects ({self.channels}, {self.rows}, W), got ({c}, {r}, {w})")
        columns = x.transpose(0, 3, 1, 2).reshape(n, w, c * r)
        polar = columns.matmul(self.weight) + self.bias
        return polar.reshape(n, w, self.channels, self.bins).transpose(0, 2, 3, 1)


def feature_column_centers(width: int, stride: float) -> np.ndarray:
    """Image column under each feature column of a stride-`stride` map"""
    return (np.arange(width) + 0.5) * stride - 0.5


def valid_column_azimuths(
    intrinsics: FisheyeIntrinsics, extrinsics: CameraExtrinsics, columns: np.ndarray
) -> np.ndarray:
    """Rear azimuth per column; NaN where the column leaves the valid image radius"""
    out = np.full(len(columns), np.nan)
    for i, u in enumerate(columns):
        u = float(np.clip(u, 0.0, intrinsics.width - 1))
        try:
            out[i] = fisheye_service.column_azimuths(intrinsics, extrinsics, np.array([u]))[0]
        except FisheyeError:
            continue
    return out


def polar_to_ortho_matrix(
    intrinsics: FisheyeIntrinsics,
    extrinsics: CameraExtrinsics,
    band: DepthBand,
    bins: int,
    width: int,
    stride: float,
    spec: GridSpec,
) -> sparse.csr_matrix:
    """Bilinear resampling of a (bins, width) polar map onto `spec`.

    Row index of the result is the flattened BEV cell, column index is
    bin * width + polar column. Cells outside the band's annulus, or at
    azimuths no column sees, get an all-zero row; every other row sums
    to one.
    """
    az = valid_column_azimuths(intrinsics, extrinsics, feature_column_centers(width, stride))
    known = np.flatnonzero(~np.isnan(az))
    if len(known) < 2:
        raise NNError("fewer than two feature columns see the ground plane")
    az_known = az[known]
    if np.any(np.diff(az_known) <= 0):
        # np.interp needs ascending azimuths
        order = np.argsort(az_known)
        az_known, known = az_known[order], known[order]

    centers = geometry_service.cell_centers(spec).reshape(-1, 2)
    dx = centers[:, 0] - extrinsics.x
    dy = centers[:, 1] - extrinsics.y
    rho = np.hypot(dx, dy)
    phi = np.arctan2(dy, -dx)

    inside = (rho >= band.z_min) & (rho < band.z_max) & (phi >= az_known[0]) & (phi <= az_known[-1])
    cells = np.flatnonzero(inside)
    col = np.interp(phi[cells], az_known, known.astype(np.float64))
    b = np.clip((rho[cells] - band.z_min) / (band.z_max - band.z_min) * bins - 0.5, 0.0, bins - 1)

    rows, cols, vals = [], [], []
    c0 = np.floor(col).astype(int)
    b0 = np.floor(b).astype(int)
    fc, fb = col - c0, b - b0
    c1 = np.minimum(c0 + 1, width - 1)
    b1 = np.minimum(b0 + 1, bins - 1)
    for bi, wb in ((b0, 1.0 - fb), (b1, fb)):
        for ci, wc in ((c0, 1.0 - fc), (c1, fc)):
            rows.append(cells)
            cols.append(bi * width + ci)
            vals.append(wb * wc)
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(spec.rows * spec.cols, bins * width),
    ).tocsr()
    logger.debug("🗺️  band %.1f-%.1f m covers %d of %d cells", band.z_min, band.z_max, len(cells), spec.rows * spec.cols)
    return matrix


def polar_to_ortho(polar: Tensor, matrix: sparse.spmatrix, spec: GridSpec) -> Tensor:
    """(N, C, bins, W) -> (N, C, rows, cols)"""
    n, c, b, w = polar.shape
    flat = polar.reshape(n, c, b * w)
    return F.sparse_linear(flat, matrix).reshape(n, c, spec.rows, spec.cols)


def polar_to_ortho_reference(
    polar: np.ndarray,
    intrinsics: FisheyeIntrinsics,
    extrinsics: CameraExtrinsics,
    band: DepthBand,
    stride: float,
    spec: GridSpec,
) -> np.ndarray:
    """Cell-by-cell resampler used to check the sparse map, (C, bins, W) -> (C, rows, cols)"""
    c, bins, width = polar.shape
    az = valid_column_azimuths(intrinsics, extrinsics, feature_column_centers(width, stride))
    known = [i for i in range(width) if not math.isnan(az[i])]
    pairs = sorted((az[i], i) for i in known)
    out = np.zeros((c, spec.rows, spec.cols))
    for r in range(spec.rows):
        for q in range(spec.cols):
            x, y = geometry_service.cell_center(spec, (r, q))
            rho = math.hypot(x - extrinsics.x, y - extrinsics.y)
            phi = math.atan2(y - extrinsics.y, -(x - extrinsics.x))
            if not (band.z_min <= rho < band.z_max and pairs[0][0] <= phi <= pairs[-1][0]):
                continue
            col = _interp_sorted(phi, pairs)
            b = min(max((rho - band.z_min) / (band.z_max - band.z_min) * bins - 0.5, 0.0), bins - 1)
            out[:, r, q] = _bilinear(polar, b, col)
    return out


def _interp_sorted(phi: float, pairs) -> float:
    for (a0, i0), (a1, i1) in zip(pairs[:-1], pairs[1:]):
        if a0 <= phi <= a1:
            t = 0.0 if a1 == a0 else (phi - a0) / (a1 - a0)
            return i0 + t * (i1 - i0)
    return float(pairs[-1][1])


def _bilinear(polar: np.ndarray, b: float, col: float) -> np.ndarray:
    bins, width = polar.shape[1], polar.shape[2]
    b0, c0 = int(math.floor(b)), int(math.floor(col))
    fb, fc = b - b0, col - c0
    b1, c1 = min(b0 + 1, bins - 1), min(c0 + 1, width - 1)
    return (
        (1 - fb) * (1 - fc) * polar[:, b0, c0]
        + (1 - fb) * fc * polar[:, b0, c1]
        + fb * (1 - fc) * polar[:, b1, c0]
        + fb * fc * polar[:, b1, c1]
    )


def crop_rows_for_stride(
    intrinsics: FisheyeIntrinsics, extrinsics: CameraExtrinsics, band: DepthBand, stride: float, height: int
) -> Tuple[int, int]:
    """Feature-map rows [start, stop) covering the band's image rows"""
    v_min, v_max = fisheye_service.crop_bounds(intrinsics, extrinsics, band)
    start = int(math.floor((v_min + 0.5) / stride))
    stop = int(math.ceil((v_max + 0.5) / stride))
    start = min(max(start, 0), height - 1)
    stop = min(max(stop, start + 1), height)
    return start, stop
