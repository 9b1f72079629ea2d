"""From predicted node temperatures to TCP drift and compensation offsets.

Thermo-elastic deformation is reduced to a series chain of structural
elements along the machine axes. Each element takes the arithmetic mean
temperature of its assigned nodes; its free expansion is
``length * alpha * (T_mean - T_ref)`` and element expansions add along each
axis. Positive drift points along the positive axis direction. The offset
is the negated drift.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .dataset import NodeTimeSeries
from .errors import ConfigError, UnmappedNode

T_REF = 293.15  # 20 °C


class Axis(str, enum.Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


AXES = (Axis.X, Axis.Y, Axis.Z)


def thermal_strain(alpha, delta_t):
    return np.multiply(alpha, delta_t)


def thermal_stress(youngs_modulus, alpha, delta_t):
    return np.multiply(youngs_modulus, np.multiply(alpha, delta_t))


@dataclass(frozen=True)
class StructuralElement:
    name: str
    axis: Axis
    length: float  # m
    alpha: float  # 1/K
    nodes: tuple[str, ...]
    alpha_uncertainty: float = 0.0  # 1/K
    youngs_modulus: float = 210e9  # Pa
    t_ref: float = T_REF
    in_chain: bool = True  # False: only used for orientation pairs
    geometric_error: Callable[[float], float] = field(default=lambda x: 0.0, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.length > 0 or not self.alpha > 0 or self.alpha_uncertainty < 0:
            raise ConfigError(f"element {self.name}: need length > 0, alpha > 0, u(alpha) >= 0")
        if not self.nodes:
            raise ConfigError(f"element {self.name} has no nodes")


def axis_position(element: StructuralElement, temperature, include_uncertainty: bool = True):
    """Axis-wise nominal position with thermal expansion and CTE uncertainty.

    ``-[x (1 + (alpha + u(alpha)) (T - T_ref))] + delta(x)``; the uncertainty
    enters with its nominal sign, so ``u > 0`` gives the worst-case bound.
    """
    x = element.length
    a = element.alpha + (element.alpha_uncertainty if include_uncertainty else 0.0)
    dt = np.asarray(temperature, dtype=np.float64) - element.t_ref
    return -(x * (1.0 + a * dt)) + element.geometric_error(x)


@dataclass(frozen=True)
class Chain:
    elements: tuple[StructuralElement, ...]
    orientation_pairs: tuple[tuple[str, str, float], ...] = ()  # (top, bottom, separation m)

    def nodes(self) -> set[str]:
        return {n for e in self.elements for n in e.nodes}

    def lipschitz(self) -> dict[Axis, float]:
        """Per-axis bound on |d drift| / max_node |d T|."""
        out = {a: 0.0 for a in AXES}
        for e in self.elements:
            if e.in_chain:
                out[e.axis] += e.length * e.alpha
        return out


@dataclass
class DriftEstimate:
    """Per-axis TCP drift (m) and per-element strain/stress; arrays carry a leading time axis for series."""

    drift: np.ndarray  # (..., 3) in X, Y, Z order
    thermal_strain: dict[str, np.ndarray]
    thermal_stress: dict[str, np.ndarray]
    orientation: dict[str, np.ndarray] = field(default_factory=dict)  # rad

    def axis(self, a: Axis | str) -> np.ndarray:
        return self.drift[..., AXES.index(Axis(a))]


def element_temperatures(chain: Chain, field_: Mapping[str, np.ndarray] | NodeTimeSeries) -> dict[str, np.ndarray]:
    if isinstance(field_, NodeTimeSeries):
        field_ = {nid: field_.values[:, j] for j, nid in enumerate(field_.node_ids)}
    out = {}
    for e in chain.elements:
        missing = [n for n in e.nodes if n not in field_]
        if missing:
            raise UnmappedNode(f"element {e.name}: no prediction for node(s) {missing}")
        out[e.name] = np.mean([np.asarray(field_[n], dtype=np.float64) for n in e.nodes], axis=0)
    return out


def tcp_drift(field_: Mapping[str, np.ndarray] | NodeTimeSeries, chain: Chain,
              include_uncertainty: bool = False) -> DriftEstimate:
    """Sum element expansions per axis for a node-temperature snapshot or series."""
    temps = element_temperatures(chain, field_)
    shape = np.shape(next(iter(temps.values()))) if temps else ()
    drift = np.zeros(shape + (3,))
    strain, stress = {}, {}
    by_name = {e.name: e for e in chain.elements}
    for e in chain.elements:
        dT = temps[e.name] - e.t_ref
        a = e.alpha + (e.alpha_uncertainty if include_uncertainty else 0.0)
        strain[e.name] = thermal_strain(a, dT)
        stress[e.name] = thermal_stress(e.youngs_modulus, a, dT)
        if e.in_chain:
            drift[..., AXES.index(e.axis)] += e.length * strain[e.name]
    orient = {}
    for top, bottom, sep in chain.orientation_pairs:
        t, b = by_name[top], by_name[bottom]
        orient[f"{top}/{bottom}"] = orientation_error(t.length * strain[top], b.length * strain[bottom], sep)
    return DriftEstimate(drift, strain, stress, orient)


def orientation_error(expansion_top, expansion_bottom, separation: float):
    """Small-angle tilt (rad) from differential expansion of two parallel elements."""
    return (np.asarray(expansion_top) - np.asarray(expansion_bottom)) / separation


def compensation_offset(drift: DriftEstimate | np.ndarray) -> np.ndarray:
    """Position offsets that cancel the drift (negation policy)."""
    d = drift.drift if isinstance(drift, DriftEstimate) else np.asarray(drift, dtype=np.float64)
    return -d


def residual_after_offset(drift: DriftEstimate | np.ndarray, offset: np.ndarray) -> np.ndarray:
    d = drift.drift if isinstance(drift, DriftEstimate) else np.asarray(drift, dtype=np.float64)
    return d + offset


COMPENSATION_POLICY = "negate"


def chain_from_dict(cfg: dict) -> Chain:
    try:
        elems = []
        for e in cfg["elements"]:
            delta = float(e.get("geometric_error", 0.0))
            elems.append(StructuralElement(
                name=str(e["name"]),
                axis=Axis(e["axis"]),
                length=float(e["length"]),
                alpha=float(e["alpha"]),
                nodes=tuple(e["nodes"]),
                alpha_uncertainty=float(e.get("alpha_uncertainty", 0.0)),
                youngs_modulus=float(e.get("youngs_modulus", 210e9)),
                t_ref=float(e.get("t_ref", T_REF)),
                in_chain=bool(e.get("in_chain", True)),
                geometric_error=(lambda x, d=delta: d),
            ))
        pairs = tuple((p["top"], p["bottom"], float(p["separation"])) for p in cfg.get("orientation_pairs", []))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad chain config: {exc}") from None
    names = {e.name for e in elems}
    for top, bottom, _ in pairs:
        if top not in names or bottom not in names:
            raise ConfigError(f"orientation pair refers to unknown element {top!r}/{bottom!r}")
    return Chain(tuple(elems), pairs)


def load_chain(path: Optional[str | Path] = None) -> Chain:
    if path is None:
        from importlib import resources
        text = resources.files("thermosurrogate.configs").joinpath("default_chain.json").read_text()
        source = "<default_chain.json>"
    else:
        text, source = Path(path).read_text(encoding="utf-8"), str(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return chain_from_dict(cfg)


def write_offsets_csv(times: Sequence[float], est: DriftEstimate, offset: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *(f"drift_{a.value}" for a in AXES), *(f"offset_{a.value}" for a in AXES)])
        for t, d, o in zip(times, est.drift, offset):
            w.writerow([repr(float(t)), *map(repr, d.tolist()), *map(repr, o.tolist())])
