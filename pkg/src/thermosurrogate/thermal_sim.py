"""Lumped thermal-network generator for synthetic machine-tool runs.

Each node ``i`` carries a heat capacity ``C_i`` and exchanges heat with its
neighbours through conductances ``G_ij = k A / L``, with ambient air by
convection ``h A_i (T_i - T_inf)``, with the surroundings by radiation
``eps_i * SIGMA * A_i (T_i^4 - T_surr^4)``, and optionally with the foundation
through a ground conductance. Internal sources deliver ``q'' * A_src`` watts.
Integration is explicit Euler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import InitialConditions, NodeTimeSeries, Quantity
from .errors import ConfigError, NonFinite, Unstable

STEFAN_BOLTZMANN = 5.67e-8
SANITY_BOUND_K = 1e4


@dataclass(frozen=True, eq=False)
class ThermalNetwork:
    node_ids: tuple[str, ...]
    capacitance: np.ndarray  # J/K
    conductance: np.ndarray  # W/K, dense symmetric n x n
    surface_area: np.ndarray  # m², exposed to air (convection + radiation)
    emissivity: np.ndarray
    ground_conductance: np.ndarray  # W/K to the foundation
    source_nodes: tuple[int, ...] = ()
    source_areas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sensor_nodes: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.node_ids)
        arrays = {}
        for name in ("capacitance", "surface_area", "emissivity", "ground_conductance"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != (n,):
                raise ConfigError(f"{name} must have shape ({n},), got {a.shape}")
            arrays[name] = a
        g = np.array(self.conductance, dtype=np.float64)
        if g.shape != (n, n):
            raise ConfigError(f"conductance must be {n}x{n}")
        if not np.array_equal(g, g.T):
            raise ConfigError("conductance matrix must be symmetric")
        if np.any(g < 0) or np.any(np.diag(g) != 0):
            raise ConfigError("conductances must be non-negative with a zero diagonal")
        if np.any(arrays["capacitance"] <= 0):
            raise ConfigError("every capacitance must be > 0")
        eps = arrays["emissivity"]
        if np.any(eps < 0) or np.any(eps > 1):
            raise ConfigError("emissivity must lie in [0, 1]")
        if np.any(arrays["surface_area"] < 0) or np.any(arrays["ground_conductance"] < 0):
            raise ConfigError("areas and ground conductances must be non-negative")
        src_areas = np.array(self.source_areas, dtype=np.float64).reshape(-1)
        if src_areas.shape[0] != len(self.source_nodes):
            raise ConfigError("one source area per source node required")
        for i in (*self.source_nodes, *self.sensor_nodes):
            if not 0 <= i < n:
                raise ConfigError(f"node index {i} out of range")
        for name, a in arrays.items():
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        g.flags.writeable = False
        object.__setattr__(self, "conductance", g)
        object.__setattr__(self, "source_areas", src_areas)
        object.__setattr__(self, "source_nodes", tuple(int(i) for i in self.source_nodes))
        sensors = tuple(int(i) for i in self.sensor_nodes) or tuple(range(n))
        object.__setattr__(self, "sensor_nodes", sensors)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_sources(self) -> int:
        return len(self.source_nodes)

    def source_power(self, conditions: InitialConditions) -> np.ndarray:
        """Per-node internal heat generation in watts."""
        q = np.zeros(self.n_nodes)
        mags = conditions.heat_flux_magnitudes
        if len(mags) != self.n_sources:
            raise ConfigError(f"network has {self.n_sources} sources, conditions give {len(mags)} magnitudes")
        for node, area, mag in zip(self.source_nodes, self.source_areas, mags):
            q[node] += mag * area
        return q

    def sensor_ids(self) -> tuple[str, ...]:
        return tuple(self.node_ids[i] for i in self.sensor_nodes)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    steps: int
    initial_conditions: InitialConditions
    rng_seed: int = 0
    substeps: int = 1
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.steps < 1 or self.substeps < 1:
            raise ConfigError("steps and substeps must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")


def _dissipation(net: ThermalNetwork, T: np.ndarray, cond: InitialConditions) -> np.ndarray:
    """Per-node heat leaving to air, surroundings and ground (W)."""
    t_inf = cond.ambient_temp
    conv = cond.film_coefficient * net.surface_area * (T - t_inf)
    rad = net.emissivity * STEFAN_BOLTZMANN * net.surface_area * (T**4 - t_inf**4)
    ground = net.ground_conductance * (T - cond.ground_temp)
    return conv + rad + ground


def net_heat_flow(net: ThermalNetwork, T: np.ndarray, cond: InitialConditions) -> np.ndarray:
    """Per-node net heat flow into each node, ``C_i dT_i/dt`` in watts."""
    T = np.asarray(T, dtype=np.float64)
    conduction = (net.conductance * (T[None, :] - T[:, None])).sum(axis=1)
    return conduction - _dissipation(net, T, cond) + net.source_power(cond)


def step(net: ThermalNetwork, T: np.ndarray, dt: float, cond: InitialConditions) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if not np.all(np.isfinite(T)):
        raise NonFinite("state contains NaN or Inf")
    nxt = T + dt * net_heat_flow(net, T, cond) / net.capacitance
    if not np.all(np.isfinite(nxt)):
        raise NonFinite("update produced NaN or Inf")
    if np.max(np.abs(nxt)) > SANITY_BOUND_K:
        raise Unstable(f"temperature exceeded {SANITY_BOUND_K} K; reduce dt")
    return nxt


def heat_balance(net: ThermalNetwork, T: np.ndarray, cond: InitialConditions) -> float:
    """Total generation minus total dissipation at this instant (W)."""
    T = np.asarray(T, dtype=np.float64)
    return float(net.source_power(cond).sum() - _dissipation(net, T, cond).sum())


def stable_dt(net: ThermalNetwork, cond: InitialConditions, t_max: float) -> float:
    """Explicit-Euler bound ``min_i C_i / (sum_j G_ij + linearised boundary conductance)``.

    Radiation is linearised as ``4 eps SIGMA A t_max^3``.
    """
    boundary = (
        cond.film_coefficient * net.surface_area
        + 4.0 * net.emissivity * STEFAN_BOLTZMANN * net.surface_area * t_max**3
        + net.ground_conductance
    )
    total = net.conductance.sum(axis=1) + boundary
    with np.errstate(divide="ignore"):
        bound = np.where(total > 0, net.capacitance / total, np.inf)
    return float(bound.min())


def initial_state(net: ThermalNetwork, cond: InitialConditions) -> np.ndarray:
    return np.full(net.n_nodes, cond.initial_system_temp, dtype=np.float64)


def simulate_run(
    net: ThermalNetwork,
    config: SimConfig,
    run_id: str = "RUN1",
    state0: Optional[np.ndarray] = None,
) -> tuple[NodeTimeSeries, NodeTimeSeries]:
    """Integrate one run; returns paired temperature and heat-flux series.

    Row ``r`` holds the state after ``r * substeps`` Euler steps. The heat-flux
    series is the net heat flow into each sensor node divided by its surface
    area (W/m²), evaluated at the recorded state.
    """
    cond = config.initial_conditions
    T = initial_state(net, cond) if state0 is None else np.array(state0, dtype=np.float64)
    t_ref = max(float(T.max()), cond.ambient_temp, cond.ground_temp) + 100.0
    bound = stable_dt(net, cond, t_ref)
    if config.dt >= bound:
        raise Unstable(f"dt={config.dt} violates the explicit stability bound {bound:.6g}")
    sensors = list(net.sensor_nodes)
    area = net.surface_area[sensors]
    if np.any(area <= 0):
        raise ConfigError("every sensor node needs a positive surface area for heat-flux export")
    temps = np.empty((config.steps, len(sensors)))
    fluxes = np.empty_like(temps)
    for r in range(config.steps):
        temps[r] = T[sensors]
        fluxes[r] = net_heat_flow(net, T, cond)[sensors] / area
        if r + 1 < config.steps:
            for _ in range(config.substeps):
                T = step(net, T, config.dt, cond)
    if config.noise_std > 0:
        rng = np.random.default_rng(config.rng_seed)
        temps = temps + rng.normal(0.0, config.noise_std, temps.shape)
    times = np.arange(config.steps) * config.dt * config.substeps
    ids = net.sensor_ids()
    temp_series = NodeTimeSeries(run_id, Quantity.TEMPERATURE, times, temps, ids, cond)
    flux_series = NodeTimeSeries(run_id, Quantity.HEAT_FLUX, times, fluxes, ids, cond)
    return temp_series, flux_series


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform ranges from which run initial conditions are drawn."""

    ambient_temp: tuple[float, float] = (288.15, 298.15)
    ground_temp: tuple[float, float] = (290.15, 295.15)
    initial_offset: tuple[float, float] = (-1.0, 1.0)  # K, relative to ambient
    heat_flux: tuple[float, float] = (500.0, 3000.0)  # W/m² per source
    film_coefficient: tuple[float, float] = (4.0, 12.0)

    def sample(self, rng: np.random.Generator, n_sources: int) -> InitialConditions:
        ambient = rng.uniform(*self.ambient_temp)
        return InitialConditions(
            ambient_temp=float(ambient),
            ground_temp=float(rng.uniform(*self.ground_temp)),
            initial_system_temp=float(ambient + rng.uniform(*self.initial_offset)),
            heat_flux_magnitudes=tuple(float(q) for q in rng.uniform(*self.heat_flux, size=n_sources)),
            film_coefficient=float(rng.uniform(*self.film_coefficient)),
        )


def make_run_suite(
    n_runs: int,
    net: ThermalNetwork,
    rng_seed: int,
    dt: float = 60.0,
    steps: int = 600,
    substeps: int = 10,
    ranges: SamplingRanges = SamplingRanges(),
) -> list[tuple[NodeTimeSeries, NodeTimeSeries]]:
    """Simulate ``n_runs`` runs named RUN1..RUNn that differ only in sampled conditions."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    rng = np.random.default_rng(rng_seed)
    conditions = [ranges.sample(rng, net.n_sources) for _ in range(n_runs)]
    suite = []
    for i, cond in enumerate(conditions, start=1):
        cfg = SimConfig(dt=dt, steps=steps, initial_conditions=cond, rng_seed=rng_seed + i, substeps=substeps)
        suite.append(simulate_run(net, cfg, run_id=f"RUN{i}"))
    return suite


# --- config files -----------------------------------------------------------

def network_from_dict(cfg: dict) -> ThermalNetwork:
    """Build a network from the declarative form (node list + adjacency list).

    Edges give either ``conductance`` (W/K) or ``k``, ``area`` and ``length``
    (``G = k A / L``).
    """
    try:
        nodes = cfg["nodes"]
        ids = [str(n["id"]) for n in nodes]
        index = {nid: i for i, nid in enumerate(ids)}
        if len(index) != len(ids):
            raise ConfigError("duplicate node id")
        n = len(ids)
        g = np.zeros((n, n))
        for e in cfg.get("edges", []):
            a, b = index[e["from"]], index[e["to"]]
            if a == b:
                raise ConfigError(f"self-loop on node {e['from']}")
            val = float(e["conductance"]) if "conductance" in e else float(e["k"]) * float(e["area"]) / float(e["length"])
            g[a, b] += val
            g[b, a] += val
        sources = cfg.get("sources", [])
        return ThermalNetwork(
            node_ids=tuple(ids),
            capacitance=np.array([float(nd["capacitance"]) for nd in nodes]),
            conductance=g,
            surface_area=np.array([float(nd.get("surface_area", 0.0)) for nd in nodes]),
            emissivity=np.array([float(nd.get("emissivity", 0.0)) for nd in nodes]),
            ground_conductance=np.array([float(nd.get("ground_conductance", 0.0)) for nd in nodes]),
            source_nodes=tuple(index[s["node"]] for s in sources),
            source_areas=np.array([float(s["area"]) for s in sources]),
            sensor_nodes=tuple(i for i, nd in enumerate(nodes) if nd.get("sensor", True)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing or unknown key {exc}") from None


def load_network_config(path: Optional[str | Path] = None) -> tuple[ThermalNetwork, dict]:
    """Read a network JSON file (the packaged default when ``path`` is None).

    Returns the network and the raw dict (simulation defaults live under
    ``"simulation"`` and ``"ranges"``).
    """
    if path is None:
        text = resources.files("thermosurrogate.configs").joinpath("default_network.json").read_text()
        source = "<default_network.json>"
    else:
        text = Path(path).read_text(encoding="utf-8")
        source = str(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return network_from_dict(cfg), cfg
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def ranges_from_dict(d: Optional[dict]) -> SamplingRanges:
    if not d:
        return SamplingRanges()
    return SamplingRanges(**{k: tuple(float(x) for x in v) for k, v in d.items()})


def insulated_copy(net: ThermalNetwork, sources: Sequence[int] = ()) -> ThermalNetwork:
    """Same conduction graph with every boundary exchange and source removed."""
    n = net.n_nodes
    return ThermalNetwork(
        node_ids=net.node_ids,
        capacitance=net.capacitance,
        conductance=net.conductance,
        surface_area=net.surface_area,
        emissivity=np.zeros(n),
        ground_conductance=np.zeros(n),
        source_nodes=tuple(sources),
        source_areas=np.zeros(len(sources)),
        sensor_nodes=net.sensor_nodes,
    )
