"""Simulated cooperative-sensing world: PUs, mobile SUs, path loss and shadowing.

Each global round yields one :class:`RoundDataset`: ``slots_per_round`` slots,
each with a fresh draw of every PU's transmit level. In every slot each SU
records ``rss_per_slot`` received-power values at its (round-fixed) position,
so its feature row is ``[x, y, rss_1, ..., rss_R]``.

Received power follows the additive log-distance form, summed over PUs in
the dB domain as written::

    P_re = sum_n (P_tr[n] - 10 * phi * log10(d[n]) - X_se[n])

with ``X_se ~ Normal(shadow_mean(position), noise_std)`` drawn fresh for every
(measurement, PU).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import uniform_filter

from .errors import ConfigError, ShapeError

LOCATION_DIMS = 2


def default_pu_positions(num_pus: int, area: float) -> List[Tuple[float, float]]:
    """Seed-independent layout: centre for one PU, otherwise a circle of radius area/4."""
    c = area / 2.0
    if num_pus == 1:
        return [(c, c)]
    r = area / 4.0
    return [(c + r * math.cos(2 * math.pi * n / num_pus), c + r * math.sin(2 * math.pi * n / num_pus))
            for n in range(num_pus)]


@dataclass
class WorldConfig:
    area: float = 500.0
    num_pus: int = 2
    num_sus: int = 4
    pu_positions: Optional[List[Tuple[float, float]]] = None
    power_levels: Tuple[int, ...] = (1, 2, 3, 4)
    pathloss_exponent: float = 4.0
    slots_per_round: int = 40
    rss_per_slot: int = 100
    n_train: int = 20
    n_test: int = 20
    mobility_rate: float = 1.0
    shadow_grid: int = 10
    shadow_noise_std: float = 1.0
    d_min: float = 1.0
    trace_speeds: Optional[List[float]] = None

    def __post_init__(self):
        if self.pu_positions is None:
            self.pu_positions = default_pu_positions(self.num_pus, self.area)
        self.pu_positions = [tuple(float(c) for c in p) for p in self.pu_positions]
        self.power_levels = tuple(int(p) for p in self.power_levels)
        self.validate()

    def validate(self):
        if self.area <= 0:
            raise ConfigError("must be positive", field="world.area")
        if self.num_pus < 1:
            raise ConfigError("must be >= 1", field="world.num_pus")
        if self.num_sus < 1:
            raise ConfigError("must be >= 1", field="world.num_sus")
        if len(self.pu_positions) != self.num_pus:
            raise ConfigError(f"{len(self.pu_positions)} positions for {self.num_pus} PUs", field="world.pu_positions")
        for p in self.pu_positions:
            if len(p) != 2 or not all(0.0 <= c <= self.area for c in p):
                raise ConfigError(f"position {p} outside [0, {self.area}]^2", field="world.pu_positions")
        if not self.power_levels:
            raise ConfigError("must be non-empty", field="world.power_levels")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("train and test counts must be >= 1", field="world.n_train")
        if self.slots_per_round != self.n_train + self.n_test:
            raise ConfigError(f"slots_per_round {self.slots_per_round} != n_train + n_test "
                              f"({self.n_train} + {self.n_test})", field="world.slots_per_round")
        if self.rss_per_slot < 1:
            raise ConfigError("must be >= 1", field="world.rss_per_slot")
        if self.mobility_rate < 0:
            raise ConfigError("must be >= 0", field="v")
        if self.shadow_grid < 2:
            raise ConfigError("must be >= 2", field="world.shadow_grid")
        if self.shadow_noise_std < 0:
            raise ConfigError("must be >= 0", field="world.shadow_noise_std")
        if self.d_min <= 0:
            raise ConfigError("must be positive", field="world.d_min")

    @property
    def feature_dim(self) -> int:
        return LOCATION_DIMS + self.rss_per_slot


# -- shadowing ---------------------------------------------------------------

@dataclass
class ShadowingMap:
    grid_means: np.ndarray
    noise_std: float
    seed: int
    area: float = 500.0

    def __post_init__(self):
        g = self.grid_means.shape[0]
        axis = np.linspace(0.0, self.area, g)
        self._interp = RegularGridInterpolator((axis, axis), self.grid_means, method="linear")

    @property
    def grid_size(self) -> int:
        return self.grid_means.shape[0]

    def mean_at(self, points) -> np.ndarray:
        """Bilinear interpolation of the grid means. ``grid_means[i, j]`` sits at (x_i, y_j)."""
        pts = np.clip(np.atleast_2d(np.asarray(points, dtype=np.float64)), 0.0, self.area)
        return self._interp(pts)


def build_shadowing_map(seed: int, grid_size: int = 10, area: float = 500.0, noise_std: float = 1.0,
                        mean_range: Tuple[float, float] = (0.0, 10.0)) -> ShadowingMap:
    """Uniform grid means in ``mean_range`` dB, smoothed by one 3x3 box blur."""
    if grid_size < 2:
        raise ConfigError(f"grid size must be >= 2, got {grid_size}", field="world.shadow_grid")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(mean_range[0], mean_range[1], size=(grid_size, grid_size))
    smoothed = uniform_filter(raw, size=3, mode="nearest")
    smoothed = np.clip(smoothed, mean_range[0], mean_range[1])  # guard float round-off only
    return ShadowingMap(smoothed, float(noise_std), int(seed), float(area))


# -- path loss ---------------------------------------------------------------

def received_power(pu_powers, su_pos, pu_positions, phi: float, shadow, d_min: float = 1.0):
    """Per-PU received-power terms and their sum.

    ``shadow`` holds the sampled ``X_se`` values with trailing axis N (one per
    PU); any leading axes are treated as independent measurements. Returns
    ``(terms, total)`` with ``terms.shape == shadow.shape`` and ``total``
    summed over the PU axis.
    """
    pu_powers = np.asarray(pu_powers, dtype=np.float64)
    pu_positions = np.asarray(pu_positions, dtype=np.float64).reshape(-1, 2)
    shadow = np.asarray(shadow, dtype=np.float64)
    if shadow.shape[-1] != pu_positions.shape[0]:
        raise ShapeError(f"shadow trailing axis {shadow.shape[-1]} != number of PUs {pu_positions.shape[0]}")
    d = np.maximum(np.hypot(*(pu_positions - np.asarray(su_pos, dtype=np.float64)).T), d_min)
    terms = pu_powers - 10.0 * phi * np.log10(d) - shadow
    return terms, terms.sum(axis=-1)


# -- mobility ----------------------------------------------------------------

@dataclass
class SuState:
    positions: np.ndarray
    traces: Optional[List[np.ndarray]] = None
    speeds: Optional[np.ndarray] = None
    progress: Optional[np.ndarray] = None  # arc length travelled along each trace

    def copy(self) -> "SuState":
        return SuState(self.positions.copy(),
                       None if self.traces is None else [t.copy() for t in self.traces],
                       None if self.speeds is None else self.speeds.copy(),
                       None if self.progress is None else self.progress.copy())


def _reflect(x: np.ndarray, area: float) -> np.ndarray:
    period = 2.0 * area
    x = np.mod(x, period)
    return np.where(x > area, period - x, x)


def point_along(trace: np.ndarray, s: float) -> np.ndarray:
    """Position after travelling arc length ``s`` from the first waypoint; stops at the last."""
    seg = np.diff(trace, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if seg_len.size == 0:
        return trace[0].copy()
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    if s >= cum[-1]:
        return trace[-1].copy()
    i = int(np.searchsorted(cum, s, side="right") - 1)
    frac = 0.0 if seg_len[i] == 0 else (s - cum[i]) / seg_len[i]
    return trace[i] + frac * seg[i]


def initial_state(world: WorldConfig, rng: np.random.Generator,
                  traces: Optional[Sequence[np.ndarray]] = None) -> SuState:
    if traces is not None:
        if len(traces) != world.num_sus:
            raise ConfigError(f"{len(traces)} traces for {world.num_sus} SUs", field="trace_dir")
        traces = [np.asarray(t, dtype=np.float64) for t in traces]
        speeds = world.trace_speeds if world.trace_speeds is not None else [world.mobility_rate] * world.num_sus
        if len(speeds) != world.num_sus:
            raise ConfigError(f"{len(speeds)} speeds for {world.num_sus} SUs", field="world.trace_speeds")
        return SuState(np.array([t[0] for t in traces]), traces, np.asarray(speeds, dtype=np.float64),
                       np.zeros(world.num_sus))
    return SuState(rng.uniform(0.0, world.area, size=(world.num_sus, 2)))


def step_mobility(state: SuState, v: float, rng: np.random.Generator, area: float = 500.0) -> SuState:
    """One round of movement: replayed trace if loaded, else a reflected random walk of length ``v``."""
    if v < 0:
        raise ConfigError(f"mobility rate must be >= 0, got {v}", field="v")
    new = state.copy()
    if state.traces is not None:
        new.progress = state.progress + state.speeds
        new.positions = np.array([point_along(t, s) for t, s in zip(state.traces, new.progress)])
        return new
    heading = rng.uniform(0.0, 2.0 * np.pi, size=state.positions.shape[0])
    moved = state.positions + v * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    new.positions = _reflect(moved, area)
    return new


def load_trace(path) -> np.ndarray:
    """Read ``x_meters,y_meters`` waypoint rows; a non-numeric first row is taken as a header."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if lineno == 1 and not rows:
                    continue
                raise ConfigError(f"{path}:{lineno}: expected 'x,y' floats, got {row!r}", field="trace_dir")
    if not rows:
        raise ConfigError(f"{path}: no waypoints", field="trace_dir")
    return np.array(rows)


def load_trace_dir(path, num_sus: int) -> List[np.ndarray]:
    """One trace file per SU, taken in sorted filename order."""
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"trace directory {path} does not exist", field="trace_dir")
    files = sorted(p for p in path.iterdir() if p.suffix in (".csv", ".txt"))
    if len(files) < num_sus:
        raise ConfigError(f"{path} has {len(files)} trace files, need {num_sus}", field="trace_dir")
    return [load_trace(f) for f in files[:num_sus]]


# -- data --------------------------------------------------------------------

@dataclass
class RoundDataset:
    round_index: int
    features: List[np.ndarray]
    labels: np.ndarray
    n_train: int

    @property
    def num_sus(self) -> int:
        return len(self.features)

    @property
    def train_features(self) -> List[np.ndarray]:
        return [f[:self.n_train] for f in self.features]

    @property
    def test_features(self) -> List[np.ndarray]:
        return [f[self.n_train:] for f in self.features]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[:self.n_train]

    @property
    def test_labels(self) -> np.ndarray:
        return self.labels[self.n_train:]


def sample_round(world: WorldConfig, shadow: ShadowingMap, state: SuState, t: int,
                 rng: np.random.Generator) -> RoundDataset:
    S, R, N = world.slots_per_round, world.rss_per_slot, world.num_pus
    levels = np.asarray(world.power_levels)[rng.integers(0, len(world.power_levels), size=(S, N))]
    means = shadow.mean_at(state.positions)
    features = []
    for k in range(world.num_sus):
        pos = state.positions[k]
        x_se = rng.normal(means[k], shadow.noise_std, size=(S, R, N)) if shadow.noise_std > 0 \
            else np.full((S, R, N), means[k])
        _, rss = received_power(levels[:, None, :], pos, world.pu_positions, world.pathloss_exponent, x_se,
                                world.d_min)
        loc = np.broadcast_to(pos, (S, LOCATION_DIMS))
        features.append(np.concatenate([loc, rss], axis=1))
    return RoundDataset(t, features, levels.astype(np.float64), world.n_train)


@dataclass
class FeatureScaler:
    """Per-SU, per-dimension affine standardisation.

    RSS dimensions use statistics of the first round's training rows. The
    location dimensions are constant within a round, so they are centred on
    the area midpoint and scaled by the std of a uniform coordinate instead.
    """

    mean: List[np.ndarray]
    scale: List[np.ndarray]

    @classmethod
    def fit(cls, data: RoundDataset, area: float) -> "FeatureScaler":
        means, scales = [], []
        for f in data.train_features:
            mu = f.mean(axis=0)
            sd = f.std(axis=0)
            sd = np.where(sd > 1e-12, sd, 1.0)
            mu[:LOCATION_DIMS] = area / 2.0
            sd[:LOCATION_DIMS] = area / math.sqrt(12.0)
            means.append(mu)
            scales.append(sd)
        return cls(means, scales)

    def transform(self, data: RoundDataset) -> RoundDataset:
        feats = [(f - m) / s for f, m, s in zip(data.features, self.mean, self.scale)]
        return replace(data, features=feats)


class SensingEnvironment:
    """Deterministic stream of rounds for one (world, seed) pair.

    Independent child streams drive the shadowing map, initial placement and
    mobility, and the per-round measurements.
    """

    def __init__(self, world: WorldConfig, seed: int, traces: Optional[Sequence[np.ndarray]] = None):
        self.world = world
        self.seed = int(seed)
        ss_shadow, ss_move, ss_data = np.random.SeedSequence(self.seed).spawn(3)
        self.shadow = build_shadowing_map(int(ss_shadow.generate_state(1)[0]), world.shadow_grid, world.area,
                                          world.shadow_noise_std)
        self._move_rng = np.random.default_rng(ss_move)
        self._data_rng = np.random.default_rng(ss_data)
        self.state = initial_state(world, self._move_rng, traces)
        self.t = 0

    def next_round(self) -> RoundDataset:
        if self.t > 0:
            self.state = step_mobility(self.state, self.world.mobility_rate, self._move_rng, self.world.area)
        self.t += 1
        return sample_round(self.world, self.shadow, self.state, self.t, self._data_rng)

    def rounds(self, T: int) -> Iterator[RoundDataset]:
        for _ in range(T):
            yield self.next_round()


def generate_stream(world: WorldConfig, seed: int, T: int, traces=None, normalize: bool = True) -> List[RoundDataset]:
    """All T rounds for a seed, standardised with a scaler fitted on the first round."""
    env = SensingEnvironment(world, seed, traces)
    rounds = list(env.rounds(T))
    if normalize and rounds:
        scaler = FeatureScaler.fit(rounds[0], world.area)
        rounds = [scaler.transform(r) for r in rounds]
    return rounds
