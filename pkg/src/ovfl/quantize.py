"""Embedding and head-model quantizers with exact bit accounting.

Two schemes are provided besides the identity:

* ``uniform_scalar``: per-tensor dynamic range ``[min, max]`` split into
  ``2**b`` equal cells, reconstruction at cell centres. ``b == 32`` is an
  exact passthrough.
* ``hex_lattice``: components are paired and each pair is mapped to the
  nearest of the ``2**(2b)`` hexagonal-lattice points closest to the origin,
  after scaling the codebook so its bounding radius equals the largest pair
  norm in the tensor.

Codebook order (used for tie-breaking) is by squared norm, then by polar
angle in ``[0, 2*pi)``. Lattice points ``i*(1, 0) + j*(1/2, sqrt(3)/2)`` have
integer squared norm ``i*i + i*j + j*j``, which keeps shell membership exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .errors import ConfigError

FLOAT_BITS = 32
KINDS = ("identity", "uniform_scalar", "hex_lattice")
_SQRT3_2 = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class QuantizerSpec:
    kind: str = "identity"
    bits_per_component: int = 32

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown quantizer kind {self.kind!r}; expected one of {KINDS}",
                              field="quantizer.kind")
        b = self.bits_per_component
        if isinstance(b, bool) or not isinstance(b, (int, np.integer)) or not 1 <= b <= 32:
            raise ConfigError(f"must be an integer in [1, 32], got {b!r}", field="quantizer.bits_per_component")
        if self.kind == "hex_lattice" and b > 16:
            raise ConfigError(f"hex lattice supports at most 16 bits per component, got {b}",
                              field="quantizer.bits_per_component")

    @property
    def lossless(self) -> bool:
        return self.kind == "identity" or (self.kind == "uniform_scalar" and self.bits_per_component == 32)


@dataclass
class QuantizedTensor:
    reconstructed: np.ndarray
    payload_bits: int
    side_info_bits: int

    @property
    def bits(self) -> int:
        return bits_cost(self)


def bits_cost(q: QuantizedTensor) -> int:
    return int(q.payload_bits) + int(q.side_info_bits)


def quantize_identity(x: np.ndarray) -> QuantizedTensor:
    x = np.asarray(x, dtype=np.float64)
    return QuantizedTensor(x.copy(), x.size * FLOAT_BITS, 0)


def quantize_uniform(x: np.ndarray, b: int) -> QuantizedTensor:
    """Uniform scalar quantizer over the tensor's own [min, max] range."""
    if not 1 <= b <= 32:
        raise ConfigError(f"bits per component must be in [1, 32], got {b}", field="quantizer.bits_per_component")
    x = np.asarray(x, dtype=np.float64)
    if b == 32:
        # Raw float passthrough; no range needs to be sent.
        return QuantizedTensor(x.copy(), x.size * FLOAT_BITS, 0)
    side = 2 * FLOAT_BITS
    if x.size == 0:
        return QuantizedTensor(x.copy(), 0, side)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return QuantizedTensor(x.copy(), x.size * b, side)
    levels = 2 ** b
    width = (hi - lo) / levels
    idx = np.clip(np.floor((x - lo) / width), 0, levels - 1)
    recon = np.clip(lo + (idx + 0.5) * width, lo, hi)
    return QuantizedTensor(recon, x.size * b, side)


def uniform_cell_width(x: np.ndarray, b: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    if b == 32 or x.size == 0:
        return 0.0
    return (float(x.max()) - float(x.min())) / 2 ** b


# -- hexagonal lattice -------------------------------------------------------

def _isqrt_array(n: np.ndarray) -> np.ndarray:
    """Exact floor(sqrt(n)) for a non-negative int64 array."""
    r = np.floor(np.sqrt(n.astype(np.float64))).astype(np.int64)
    r = np.where(r * r > n, r - 1, r)
    r = np.where((r + 1) * (r + 1) <= n, r + 1, r)
    return r


def _count_within(n: int) -> int:
    """Number of lattice points with squared norm <= n."""
    if n < 0:
        return 0
    # i^2 + i j + j^2 <= n  <=>  (2i + j)^2 <= 4n - 3j^2 ; u = 2i + j has the parity of j
    jmax = math.isqrt(4 * n // 3)
    j = np.arange(-jmax, jmax + 1, dtype=np.int64)
    m = _isqrt_array(4 * n - 3 * j * j)
    odd = (j & 1).astype(bool)
    # count u in [-m, m] with u = j (mod 2)
    even_count = 2 * (m // 2) + 1
    odd_count = 2 * ((m + 1) // 2)
    return int(np.where(odd, odd_count, even_count).sum())


def _shell_points(n: int) -> np.ndarray:
    """All lattice integer coords (i, j) with squared norm exactly n, sorted by angle."""
    if n == 0:
        return np.zeros((1, 2), dtype=np.int64)
    pts = []
    jmax = math.isqrt(4 * n // 3)
    for j in range(-jmax, jmax + 1):
        rest = 4 * n - 3 * j * j
        m = math.isqrt(rest)
        if m * m != rest:
            continue
        for u in {m, -m}:
            if (u - j) % 2 == 0:
                pts.append(((u - j) // 2, j))
    arr = np.array(pts, dtype=np.int64)
    return arr[np.argsort(_angle(arr), kind="stable")]


def _angle(ij: np.ndarray) -> np.ndarray:
    x = ij[..., 0] + 0.5 * ij[..., 1]
    y = _SQRT3_2 * ij[..., 1]
    return np.mod(np.arctan2(y, x), 2 * np.pi)


@dataclass(frozen=True)
class HexCodebookLayout:
    """Codebook of size 2**(2b): every point with squared norm < ``outer``
    plus the first ``len(partial)`` points (by angle) of the shell at ``outer``."""

    size: int
    outer: int
    partial: Tuple[Tuple[int, int], ...]

    @property
    def radius(self) -> float:
        return math.sqrt(self.outer)


@lru_cache(maxsize=None)
def hex_layout(b: int) -> HexCodebookLayout:
    if not 1 <= b <= 16:
        raise ConfigError(f"hex lattice bits must be in [1, 16], got {b}", field="quantizer.bits_per_component")
    size = 2 ** (2 * b)
    lo, hi = 0, 1
    while _count_within(hi) < size:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if _count_within(mid) >= size:
            hi = mid
        else:
            lo = mid + 1
    outer = lo
    inner = _count_within(outer - 1)
    shell = _shell_points(outer)
    take = size - inner
    return HexCodebookLayout(size, outer, tuple(map(tuple, shell[:take].tolist())))


def hex_codebook(b: int) -> np.ndarray:
    """Unit-scale codebook points in index order, shape (2**(2b), 2). Enumerates; small b only."""
    layout = hex_layout(b)
    r = math.isqrt(layout.outer) + 2
    i, j = np.meshgrid(np.arange(-2 * r, 2 * r + 1), np.arange(-2 * r, 2 * r + 1), indexing="ij")
    ij = np.stack([i.ravel(), j.ravel()], axis=1).astype(np.int64)
    n2 = ij[:, 0] ** 2 + ij[:, 0] * ij[:, 1] + ij[:, 1] ** 2
    inside = ij[n2 < layout.outer]
    inside = inside[np.lexsort((_angle(inside), inside[:, 0] ** 2 + inside[:, 0] * inside[:, 1] + inside[:, 1] ** 2))]
    partial = np.array(layout.partial, dtype=np.int64).reshape(-1, 2)
    return _to_xy(np.concatenate([inside, partial], axis=0))


def _to_xy(ij: np.ndarray) -> np.ndarray:
    ij = np.asarray(ij, dtype=np.float64)
    return np.stack([ij[..., 0] + 0.5 * ij[..., 1], _SQRT3_2 * ij[..., 1]], axis=-1)


_WINDOW = np.array([(di, dj) for di in range(-4, 5) for dj in range(-4, 5)], dtype=np.int64)


def hex_nearest(points: np.ndarray, b: int) -> np.ndarray:
    """Nearest unit-scale codeword for each row of ``points`` (shape (P, 2)).

    Valid for points inside the codebook's bounding disk. Equidistant
    codewords resolve to the lower codebook index.
    """
    layout = hex_layout(b)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if p.shape[0] == 0:
        return p.copy()
    j0 = np.rint(p[:, 1] / _SQRT3_2).astype(np.int64)
    i0 = np.rint(p[:, 0] - 0.5 * j0 * 1.0).astype(np.int64)
    cand = np.stack([i0[:, None] + _WINDOW[None, :, 0], j0[:, None] + _WINDOW[None, :, 1]], axis=-1)
    n2 = cand[..., 0] ** 2 + cand[..., 0] * cand[..., 1] + cand[..., 1] ** 2
    member = n2 < layout.outer
    angle = _angle(cand)
    # index-order key within a shell: position among angle-sorted points
    shell_rank = np.zeros(n2.shape, dtype=np.float64)
    if layout.partial:
        part = np.array(layout.partial, dtype=np.int64)
        on_shell = n2 == layout.outer
        for rank, (pi, pj) in enumerate(part):
            hit = on_shell & (cand[..., 0] == pi) & (cand[..., 1] == pj)
            member |= hit
            shell_rank[hit] = rank
    xy = _to_xy(cand)
    d2 = np.sum((xy - p[:, None, :]) ** 2, axis=-1)
    d2 = np.where(member, d2, np.inf)
    best = d2.min(axis=1, keepdims=True)
    tied = d2 <= best
    # lexicographic (norm2, angle) among ties; angle keys are distinct within a shell
    key = np.where(tied, n2 * 8.0 + angle, np.inf)
    choice = np.argmin(key, axis=1)
    return xy[np.arange(p.shape[0]), choice]


def quantize_hex(x: np.ndarray, b: int) -> QuantizedTensor:
    """Pairwise hexagonal-lattice quantization of a tensor (row-major pairing)."""
    layout = hex_layout(b)
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    n = flat.size
    padded = np.concatenate([flat, np.zeros(n % 2)])
    pairs = padded.reshape(-1, 2)
    side = FLOAT_BITS
    payload = n * b  # 2b per pair; a zero pad component is not charged
    if pairs.shape[0] == 0:
        return QuantizedTensor(x.copy(), 0, side)
    max_norm = float(np.max(np.hypot(pairs[:, 0], pairs[:, 1])))
    if max_norm == 0.0:
        return QuantizedTensor(np.zeros_like(x), payload, side)
    scale = max_norm / layout.radius
    code = hex_nearest(pairs / scale, b) * scale
    return QuantizedTensor(code.ravel()[:n].reshape(x.shape), payload, side)


def quantize(x: np.ndarray, spec: QuantizerSpec) -> QuantizedTensor:
    if spec.kind == "identity":
        return quantize_identity(x)
    if spec.kind == "uniform_scalar":
        return quantize_uniform(x, spec.bits_per_component)
    return quantize_hex(x, spec.bits_per_component)
