"""Multi-node thermal time series: CSV I/O, splitting, windowing, scaling."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateNode, MalformedCsv, NonMonotonicTime, TooShort

_UNIFORM_RTOL = 1e-6


class Quantity(str, enum.Enum):
    TEMPERATURE = "temperature"
    HEAT_FLUX = "heatflux"


@dataclass(frozen=True)
class InitialConditions:
    """Boundary/initial conditions of one simulated run (kelvin, W/m², W/(m²K))."""

    ambient_temp: float
    ground_temp: float
    initial_system_temp: float
    heat_flux_magnitudes: tuple[float, ...]
    film_coefficient: float

    def __post_init__(self):
        for name in ("ambient_temp", "ground_temp", "initial_system_temp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0 K")
        if self.film_coefficient < 0:
            raise ValueError("film_coefficient must be >= 0")
        object.__setattr__(self, "heat_flux_magnitudes", tuple(float(q) for q in self.heat_flux_magnitudes))

    def to_dict(self) -> dict:
        return {
            "ambient_temp": self.ambient_temp,
            "ground_temp": self.ground_temp,
            "initial_system_temp": self.initial_system_temp,
            "heat_flux_magnitudes": list(self.heat_flux_magnitudes),
            "film_coefficient": self.film_coefficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InitialConditions":
        return cls(
            ambient_temp=float(d["ambient_temp"]),
            ground_temp=float(d["ground_temp"]),
            initial_system_temp=float(d["initial_system_temp"]),
            heat_flux_magnitudes=tuple(d["heat_flux_magnitudes"]),
            film_coefficient=float(d["film_coefficient"]),
        )


@dataclass(frozen=True, eq=False)
class NodeTimeSeries:
    """One run: ``T`` time steps by ``d`` nodes.

    ``values`` is copied and made read-only on construction.
    """

    run_id: str
    quantity: Quantity
    timestamps: np.ndarray
    values: np.ndarray
    node_ids: tuple[str, ...]
    initial_conditions: Optional[InitialConditions] = None

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=np.float64)
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise ValueError(f"values {v.shape} and timestamps {t.shape} are inconsistent")
        if len(self.node_ids) != v.shape[1]:
            raise ValueError("node_ids length does not match number of columns")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(t)):
            raise ValueError("series contains NaN or Inf")
        _check_time(t)
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "node_ids", tuple(str(n) for n in self.node_ids))
        object.__setattr__(self, "quantity", Quantity(self.quantity))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def segment(self, start: int, stop: int) -> "NodeTimeSeries":
        return replace(self, timestamps=self.timestamps[start:stop], values=self.values[start:stop])

    def with_values(self, values: np.ndarray, node_ids: Optional[Sequence[str]] = None) -> "NodeTimeSeries":
        return replace(self, values=values, node_ids=tuple(node_ids) if node_ids is not None else self.node_ids)


def _check_time(t: np.ndarray) -> None:
    if t.size < 2:
        return
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise NonMonotonicTime(f"timestamps not strictly increasing at index {int(np.argmax(dt <= 0)) + 1}")
    if np.max(np.abs(dt - dt[0])) > _UNIFORM_RTOL * dt[0]:
        raise NonMonotonicTime("timestamps are not uniformly spaced")


def load_csv(
    path: str | Path,
    quantity: Quantity | str = Quantity.TEMPERATURE,
    run_id: Optional[str] = None,
    initial_conditions: Optional[InitialConditions] = None,
) -> NodeTimeSeries:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedCsv(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) < 2:
        raise MalformedCsv(f"{path}: header needs a time column and at least one node column")
    data = np.empty((len(body), len(header)), dtype=np.float64)
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}:{i}: expected {len(header)} cells, got {len(row)}")
        try:
            data[i - 2] = [float(c) for c in row]
        except ValueError as exc:
            raise MalformedCsv(f"{path}:{i}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise MalformedCsv(f"{path}: non-finite cell")
    return NodeTimeSeries(
        run_id=run_id or path.stem,
        quantity=Quantity(quantity),
        timestamps=data[:, 0],
        values=data[:, 1:],
        node_ids=tuple(h.strip() for h in header[1:]),
        initial_conditions=initial_conditions,
    )


def save_csv(series: NodeTimeSeries, path: str | Path) -> None:
    # repr() of a Python float round-trips exactly
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *series.node_ids])
        for t, row in zip(series.timestamps.tolist(), series.values.tolist()):
            w.writerow([repr(t), *map(repr, row)])


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0 < f < 1 for f in fracs):
            raise ValueError("split fractions must lie in (0, 1)")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def lengths(self, n: int) -> tuple[int, int, int]:
        """Floor allocation for val/test; the remainder goes to train."""
        n_val = math.floor(n * self.val_frac + 1e-9)
        n_test = math.floor(n * self.test_frac + 1e-9)
        return n - n_val - n_test, n_val, n_test


def split(series: NodeTimeSeries, spec: SplitSpec = SplitSpec()) -> tuple[NodeTimeSeries, NodeTimeSeries, NodeTimeSeries]:
    n_train, n_val, n_test = spec.lengths(series.n_steps)
    if min(n_train, n_val, n_test) < 1:
        raise TooShort(f"{series.n_steps} steps cannot be split into {spec}")
    a, b = n_train, n_train + n_val
    return series.segment(0, a), series.segment(a, b), series.segment(b, series.n_steps)


def make_windows(series: NodeTimeSeries | np.ndarray, seq_len: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 one-step-ahead windows.

    Returns ``inputs`` of shape (T - seq_len, seq_len, d) and ``targets`` of
    shape (T - seq_len, d); window ``i`` covers rows ``[i, i + seq_len)`` and
    targets row ``i + seq_len``.
    """
    values = series.values if isinstance(series, NodeTimeSeries) else np.asarray(series, dtype=np.float64)
    n = values.shape[0] - seq_len
    if seq_len < 1 or n < 1:
        raise TooShort(f"need at least {seq_len + 1} steps, got {values.shape[0]}")
    idx = np.arange(n)[:, None] + np.arange(seq_len)[None, :]
    return values[idx], values[seq_len:].copy()


def concat_windows(parts: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows built per run, so no window crosses a run boundary."""
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


class NormMode(str, enum.Enum):
    MINMAX = "minmax"
    ZSCORE = "zscore"


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-node affine scaling; ``offset`` is min (MinMax) or mean (ZScore)."""

    mode: NormMode
    offset: np.ndarray
    scale: np.ndarray = field(repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.offset

    def select(self, columns: Sequence[int]) -> "Normalizer":
        cols = list(columns)
        return Normalizer(self.mode, self.offset[cols], self.scale[cols])

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "offset": self.offset.tolist(), "scale": self.scale.tolist()}


def fit_normalizer(train: NodeTimeSeries | np.ndarray, mode: NormMode | str = NormMode.MINMAX) -> Normalizer:
    mode = NormMode(mode)
    values = train.values if isinstance(train, NodeTimeSeries) else np.asarray(train, dtype=np.float64)
    if mode is NormMode.MINMAX:
        lo, hi = values.min(axis=0), values.max(axis=0)
        offset, scale = lo, hi - lo
    else:
        offset, scale = values.mean(axis=0), values.std(axis=0)
    bad = np.flatnonzero(~(scale > 0))
    if bad.size:
        raise DegenerateNode(f"constant node(s) at column(s) {bad.tolist()}")
    return Normalizer(mode, offset.copy(), scale.copy())
