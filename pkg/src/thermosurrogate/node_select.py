"""Correlation-based node reduction and affine reconstruction of dropped nodes.

Nodes are swept in ascending index. A node is kept unless an already kept
node correlates with it above ``tau`` in absolute value; a dropped node is
assigned the kept node it correlates with most strongly as its parent and is
later rebuilt as ``m * parent + b`` with ``m = rho * sigma_k / sigma_parent``
and ``b = mu_k - m * mu_parent``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import NodeTimeSeries
from .errors import AllDegenerate, DimensionMismatch

DEFAULT_TAU = 0.95


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    rho: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # bool per node, std == 0

    @property
    def n_nodes(self) -> int:
        return self.rho.shape[0]


def pearson_matrix(data: NodeTimeSeries | np.ndarray) -> CorrelationMatrix:
    """Pearson correlations with population (1/T) moments.

    Constant nodes get zero correlation with every other node and a unit
    diagonal entry; they are flagged in ``degenerate``.
    """
    x = data.values if isinstance(data, NodeTimeSeries) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a T x d matrix with T >= 2")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    std = np.sqrt(np.diag(cov))
    degenerate = std == 0
    safe = np.where(degenerate, 1.0, std)
    rho = cov / np.outer(safe, safe)
    rho[degenerate, :] = 0.0
    rho[:, degenerate] = 0.0
    np.fill_diagonal(rho, 1.0)
    rho = np.clip((rho + rho.T) / 2, -1.0, 1.0)
    return CorrelationMatrix(rho=rho, mean=mean, std=std, degenerate=degenerate)


@dataclass(frozen=True, eq=False)
class SelectionPlan:
    """Kept node indices, parent map of dropped nodes, and their affine maps."""

    n_nodes: int
    retained: tuple[int, ...]
    parent: dict[int, int]
    slope: dict[int, float]
    intercept: dict[int, float]
    correlation: dict[int, float]
    tau: float
    node_ids: Optional[tuple[str, ...]] = None
    degenerate: tuple[int, ...] = ()
    metadata: dict = field(default_factory=dict)

    @property
    def discarded(self) -> tuple[int, ...]:
        return tuple(sorted(self.parent))

    def retained_ids(self) -> tuple[str, ...]:
        if self.node_ids is None:
            return tuple(str(i) for i in self.retained)
        return tuple(self.node_ids[i] for i in self.retained)

    def select(self, values: np.ndarray) -> np.ndarray:
        """Keep only the retained columns of a ``... x d`` array."""
        values = np.asarray(values)
        if values.shape[-1] != self.n_nodes:
            raise DimensionMismatch(f"expected {self.n_nodes} nodes, got {values.shape[-1]}")
        return values[..., list(self.retained)]

    def reconstruct(self, retained_values: np.ndarray) -> np.ndarray:
        """Rebuild all ``d`` nodes from a J-vector or ``T x J`` matrix of kept nodes."""
        r = np.asarray(retained_values, dtype=np.float64)
        if r.shape[-1] != len(self.retained):
            raise DimensionMismatch(f"expected {len(self.retained)} retained values, got {r.shape[-1]}")
        out = np.empty(r.shape[:-1] + (self.n_nodes,))
        col = {node: j for j, node in enumerate(self.retained)}
        for node, j in col.items():
            out[..., node] = r[..., j]
        for k, p in self.parent.items():
            out[..., k] = self.slope[k] * r[..., col[p]] + self.intercept[k]
        return out

    def to_dict(self) -> dict:
        # floats go through repr() via json, which round-trips exactly
        return {
            "tau": self.tau,
            "n_nodes": self.n_nodes,
            "node_ids": list(self.node_ids) if self.node_ids is not None else None,
            "retained": list(self.retained),
            "degenerate": list(self.degenerate),
            "discarded": [
                {
                    "node": k,
                    "parent": self.parent[k],
                    "slope": self.slope[k],
                    "intercept": self.intercept[k],
                    "correlation": self.correlation[k],
                }
                for k in self.discarded
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionPlan":
        disc = d["discarded"]
        return cls(
            n_nodes=int(d["n_nodes"]),
            retained=tuple(int(i) for i in d["retained"]),
            parent={int(e["node"]): int(e["parent"]) for e in disc},
            slope={int(e["node"]): float(e["slope"]) for e in disc},
            intercept={int(e["node"]): float(e["intercept"]) for e in disc},
            correlation={int(e["node"]): float(e["correlation"]) for e in disc},
            tau=float(d["tau"]),
            node_ids=tuple(d["node_ids"]) if d.get("node_ids") is not None else None,
            degenerate=tuple(int(i) for i in d.get("degenerate", [])),
            metadata=dict(d.get("metadata", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SelectionPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_plan(
    corr: CorrelationMatrix,
    tau: float = DEFAULT_TAU,
    node_ids: Optional[Sequence[str]] = None,
    metadata: Optional[dict] = None,
) -> SelectionPlan:
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    d = corr.n_nodes
    if d and np.all(corr.degenerate):
        raise AllDegenerate("every node is constant; nothing informative to keep")
    absr = np.abs(corr.rho)
    retained: list[int] = []
    parent, slope, intercept, rcorr = {}, {}, {}, {}
    for k in range(d):
        if corr.degenerate[k] or not retained:
            retained.append(k)
            continue
        cand = absr[k, retained]
        best = int(np.argmax(cand))  # first maximum -> lowest index among ties
        if cand[best] > tau:
            p = retained[best]
            rho = float(corr.rho[k, p])
            m = rho * corr.std[k] / corr.std[p]
            parent[k] = p
            slope[k] = float(m)
            intercept[k] = float(corr.mean[k] - m * corr.mean[p])
            rcorr[k] = rho
        else:
            retained.append(k)
    return SelectionPlan(
        n_nodes=d,
        retained=tuple(retained),
        parent=parent,
        slope=slope,
        intercept=intercept,
        correlation=rcorr,
        tau=float(tau),
        node_ids=tuple(node_ids) if node_ids is not None else None,
        degenerate=tuple(int(i) for i in np.flatnonzero(corr.degenerate)),
        metadata=dict(metadata or {}),
    )


def fit_plan(
    data: NodeTimeSeries | Sequence[NodeTimeSeries],
    tau: float = DEFAULT_TAU,
) -> SelectionPlan:
    """Correlate and plan on one segment or on the row-union of several runs."""
    if isinstance(data, NodeTimeSeries):
        parts = [data]
    else:
        parts = list(data)
    values = np.concatenate([p.values for p in parts])
    meta = {"fitted_on": [p.run_id for p in parts], "rows": int(values.shape[0])}
    return build_plan(pearson_matrix(values), tau, node_ids=parts[0].node_ids, metadata=meta)


def identity_plan(n_nodes: int, node_ids: Optional[Sequence[str]] = None) -> SelectionPlan:
    return SelectionPlan(n_nodes, tuple(range(n_nodes)), {}, {}, {}, {}, tau=1.0,
                         node_ids=tuple(node_ids) if node_ids is not None else None)
