"""AdamW, the training loop, random hyperparameter search and the two protocols.

Specialised protocol: one run split 60/20/20 in time. Generalised protocol:
leave-one-run-out, training on the remaining runs. In both, node reduction
and scaling are fitted on training data only, models learn the retained
nodes, and test MSE is measured on all nodes after affine reconstruction.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .dataset import (NodeTimeSeries, Normalizer, NormMode, SplitSpec, concat_windows,
                      fit_normalizer, make_windows, split)
from .errors import Diverged, HeadsDivisibility, NonFiniteGradient
from .models import ModelKind, ModelSpec, Parameters, forward, init_parameters, predict
from .node_select import DEFAULT_TAU, SelectionPlan, fit_plan

log = logging.getLogger(__name__)

REPEAT_SEEDS = (1, 2, 3)
MSE_SCALE = 1e-5


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    seq_len: int = 10


# AdamW ------------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_update(theta, grad, m, v, t: int, cfg: OptimConfig):
    """One bias-corrected AdamW update; returns ``(theta, m, v)``.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``
    """
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    theta = theta - cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
    return theta, m, v


def adamw_step(params: Parameters, state: AdamState, cfg: OptimConfig) -> AdamState:
    """Apply one step in place using each parameter's ``.grad`` (missing grads count as zero)."""
    state.t += 1
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        p.data, state.m[name], state.v[name] = adamw_update(p.data, g, m, state.v[name], state.t, cfg)
    return state


# training ---------------------------------------------------------------------------

Windows = tuple[np.ndarray, np.ndarray]


@dataclass
class TrainResult:
    params: Parameters
    spec: ModelSpec
    train_curve: list[float]
    val_curve: list[float]
    wall_time: float


def evaluate_mse(spec: ModelSpec, params: Parameters, windows: Windows) -> float:
    x, y = windows
    return float(np.mean((predict(spec, params, x) - y) ** 2))


def train_model(
    spec: ModelSpec,
    optim: OptimConfig,
    train_windows: Windows,
    val_windows: Optional[Windows],
    seed: int,
) -> TrainResult:
    """Mini-batch AdamW on one-step MSE for a fixed number of epochs.

    ``seed`` drives parameter init, batch shuffling and dropout masks. The
    parameters after the final epoch are returned.
    """
    x, y = train_windows
    if len(x) == 0:
        raise ValueError("no training windows")
    spec = spec.with_(rng_seed=seed)
    params = init_parameters(spec)
    rng = np.random.default_rng(seed + 1_000_003)
    state = AdamState()
    train_curve, val_curve = [], []
    t0 = time.perf_counter()
    for epoch in range(optim.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), optim.batch_size):
            idx = order[start:start + optim.batch_size]
            for p in params.values():
                p.grad = None
            loss = ad.mse_loss(forward(spec, params, x[idx], training=True, rng=rng), y[idx])
            if not math.isfinite(loss.item()):
                raise Diverged(f"training loss is {loss.item()} at epoch {epoch}")
            loss.backward()
            try:
                adamw_step(params, state, optim)
            except NonFiniteGradient as exc:
                raise Diverged(str(exc)) from None
            total += loss.item() * len(idx)
        train_curve.append(total / len(x))
        if val_windows is not None and len(val_windows[0]):
            v = evaluate_mse(spec, params, val_windows)
            if not math.isfinite(v):
                raise Diverged(f"validation MSE is {v} at epoch {epoch}")
            val_curve.append(v)
    return TrainResult(params, spec, train_curve, val_curve, time.perf_counter() - t0)


# random search ----------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    learning_rate: tuple[float, float] = (1e-5, 1e-2)
    weight_decay: tuple[float, float] = (1e-6, 1e-3)
    dropout: tuple[float, float] = (0.1, 0.5)
    layers: tuple[int, int] = (1, 12)
    hidden: tuple[int, ...] = (32, 64, 128, 256)
    heads: tuple[int, int] = (2, 4)
    trials: int = 20

    def sample(self, rng: np.random.Generator, kind: ModelKind | str) -> dict:
        """Log-uniform rates, uniform dropout, uniform integer layers/heads."""
        kind = ModelKind(kind)
        lo, hi = self.learning_rate
        cfg = {
            "learning_rate": float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            "weight_decay": float(math.exp(rng.uniform(*map(math.log, self.weight_decay)))),
            "dropout": float(rng.uniform(*self.dropout)),
            "layers": int(rng.integers(self.layers[0], self.layers[1] + 1)),
            "hidden": int(self.hidden[rng.integers(len(self.hidden))]),
        }
        if kind is ModelKind.TRANSFORMER:
            cfg["heads"] = int(rng.integers(self.heads[0], self.heads[1] + 1))
        return cfg


@dataclass
class Trial:
    number: int
    config: dict
    value: float
    status: str  # "ok", "diverged", "invalid"


def random_search(
    space: SearchSpace,
    objective: Callable[[dict], float],
    trials: Optional[int] = None,
    seed: int = 0,
    kind: ModelKind | str = ModelKind.GRU,
) -> tuple[dict, list[Trial]]:
    """Seeded uniform random search; returns the config with the smallest objective.

    Diverged trials and head counts that do not divide the hidden size are
    logged with an infinite objective instead of aborting the sweep.
    """
    n = space.trials if trials is None else trials
    if n < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    configs = [space.sample(rng, kind) for _ in range(n)]
    log_: list[Trial] = []
    for i, cfg in enumerate(configs):
        try:
            value, status = float(objective(cfg)), "ok"
            if not math.isfinite(value):
                value, status = math.inf, "diverged"
        except Diverged:
            value, status = math.inf, "diverged"
        except HeadsDivisibility:
            value, status = math.inf, "invalid"
        log_.append(Trial(i, cfg, value, status))
        log.info("trial %d %s -> %.6g (%s)", i, cfg, value, status)
    best = min(log_, key=lambda t: (t.value, t.number))
    return best.config, log_


def apply_config(spec: ModelSpec, optim: OptimConfig, cfg: dict) -> tuple[ModelSpec, OptimConfig]:
    spec_keys = {k: cfg[k] for k in ("hidden", "layers", "dropout", "heads") if k in cfg}
    optim_keys = {k: cfg[k] for k in ("learning_rate", "weight_decay") if k in cfg}
    return spec.with_(**spec_keys), OptimConfig(**{**asdict(optim), **optim_keys})


def write_trial_log(trials: Sequence[Trial], path: str | Path, extra: Optional[dict] = None) -> None:
    extra = extra or {}
    keys = ["learning_rate", "weight_decay", "dropout", "hidden", "layers", "heads"]
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow([*extra, "trial", *keys, "value", "status"])
        for t in trials:
            w.writerow([*extra.values(), t.number, *(t.config.get(k, "") for k in keys), repr(t.value), t.status])


# protocols --------------------------------------------------------------------------

@dataclass
class RunMetrics:
    run_id: str
    kind: str
    mse_mean: float
    mse_std: float
    retained_mse_mean: float
    retained_mse_std: float
    n_repeats: int
    wall_time: float
    seeds: tuple[int, ...] = REPEAT_SEEDS
    per_seed: tuple[float, ...] = ()
    in_distribution_mse: Optional[float] = None
    normalization: str = NormMode.MINMAX.value
    n_retained: int = 0


@dataclass
class PreparedData:
    """Windows in normalised space plus everything needed to map back."""

    plan: SelectionPlan
    normalizer: Normalizer  # over all d nodes, fitted on training rows only
    train: Windows  # retained nodes
    val: Windows
    test_inputs: np.ndarray  # retained nodes
    test_targets_full: np.ndarray  # all nodes


def _windows_retained(parts: Sequence[np.ndarray], norm: Normalizer, plan: SelectionPlan, seq_len: int) -> Windows:
    return concat_windows([make_windows(plan.select(norm.apply(v)), seq_len) for v in parts])


PARENT_SOURCES = ("predicted", "measured")


def full_node_mse(pred_retained: np.ndarray, targets_full: np.ndarray, prep: PreparedData,
                  parents: str = "predicted") -> tuple[float, float]:
    """(all-node MSE after reconstruction, retained-node MSE), both normalised.

    With ``parents="measured"`` discarded nodes are rebuilt from the true
    values of their parents; retained nodes always come from the model.
    """
    if parents not in PARENT_SOURCES:
        raise ValueError(f"parents must be one of {PARENT_SOURCES}, got {parents!r}")
    retained_norm = prep.normalizer.select(prep.plan.retained)
    source = pred_retained if parents == "predicted" else prep.plan.select(targets_full)
    raw = prep.plan.reconstruct(retained_norm.invert(source))
    full = prep.normalizer.apply(raw)
    if parents == "measured":
        full[..., list(prep.plan.retained)] = pred_retained
    full_mse = float(np.mean((full - targets_full) ** 2))
    ret_mse = float(np.mean((pred_retained - prep.plan.select(targets_full)) ** 2))
    return full_mse, ret_mse


def prepare_specialised(run: NodeTimeSeries, tau: float, seq_len: int,
                        norm_mode: NormMode | str = NormMode.MINMAX,
                        split_spec: SplitSpec = SplitSpec()) -> PreparedData:
    tr, va, te = split(run, split_spec)
    plan = fit_plan(tr, tau)
    norm = fit_normalizer(tr, norm_mode)
    x_te, y_te = make_windows(norm.apply(te.values), seq_len)
    return PreparedData(
        plan=plan,
        normalizer=norm,
        train=_windows_retained([tr.values], norm, plan, seq_len),
        val=_windows_retained([va.values], norm, plan, seq_len),
        test_inputs=plan.select(x_te),
        test_targets_full=y_te,
    )


def _summarise(run_id: str, kind: ModelKind, fulls: list[float], rets: list[float], seeds, wall: float,
               norm_mode, n_retained: int, in_dist: Optional[float] = None) -> RunMetrics:
    return RunMetrics(
        run_id=run_id,
        kind=kind.value,
        mse_mean=float(np.mean(fulls)),
        mse_std=float(np.std(fulls)),
        retained_mse_mean=float(np.mean(rets)),
        retained_mse_std=float(np.std(rets)),
        n_repeats=len(fulls),
        wall_time=wall,
        seeds=tuple(seeds),
        per_seed=tuple(fulls),
        in_distribution_mse=in_dist,
        normalization=NormMode(norm_mode).value,
        n_retained=n_retained,
    )


def specialised_protocol(
    run: NodeTimeSeries,
    spec: ModelSpec,
    tau: float = DEFAULT_TAU,
    optim: OptimConfig = OptimConfig(),
    seeds: Sequence[int] = REPEAT_SEEDS,
    norm_mode: NormMode | str = NormMode.MINMAX,
    prepared: Optional[PreparedData] = None,
    parents: str = "predicted",
) -> RunMetrics:
    """Train on one run's first 60 %, report all-node test MSE over ``seeds``.

    ``spec.d_in``/``d_out`` are overwritten with the retained-node count.
    """
    t0 = time.perf_counter()
    prep = prepared or prepare_specialised(run, tau, optim.seq_len, norm_mode)
    J = len(prep.plan.retained)
    spec = spec.with_(d_in=J, d_out=J)
    fulls, rets = [], []
    for s in seeds:
        res = train_model(spec, optim, prep.train, prep.val, s)
        pred = predict(res.spec, res.params, prep.test_inputs)
        f, r = full_node_mse(pred, prep.test_targets_full, prep, parents)
        fulls.append(f)
        rets.append(r)
    return _summarise(run.run_id, spec.kind, fulls, rets, seeds, time.perf_counter() - t0, norm_mode, J)


def tune_specialised(
    train_seg: NodeTimeSeries,
    val_seg: NodeTimeSeries,
    spec: ModelSpec,
    optim: OptimConfig,
    space: SearchSpace,
    trials: int,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    norm_mode: NormMode | str = NormMode.MINMAX,
) -> tuple[dict, list[Trial]]:
    """Search on train/validation segments only; the test segment is never passed in."""
    plan = fit_plan(train_seg, tau)
    norm = fit_normalizer(train_seg, norm_mode)
    tr = _windows_retained([train_seg.values], norm, plan, optim.seq_len)
    va = _windows_retained([val_seg.values], norm, plan, optim.seq_len)
    J = len(plan.retained)
    base = spec.with_(d_in=J, d_out=J)

    def objective(cfg: dict) -> float:
        s, o = apply_config(base, optim, cfg)
        res = train_model(s, o, tr, va, seed)
        return res.val_curve[-1]

    return random_search(space, objective, trials, seed, spec.kind)


@dataclass
class FoldData:
    held_out: NodeTimeSeries
    prep: PreparedData
    in_dist_inputs: np.ndarray  # every window of every training run, retained nodes
    in_dist_targets_full: np.ndarray


def prepare_fold(runs: Sequence[NodeTimeSeries], held_out: int, tau: float, seq_len: int,
                 norm_mode: NormMode | str = NormMode.MINMAX, val_frac: float = 0.2) -> FoldData:
    """Fit plan and scaling on the union of training runs.

    Each training run contributes its first ``1 - val_frac`` rows to training
    windows and its tail to validation windows; windows never span runs.
    """
    train_runs = [r for i, r in enumerate(runs) if i != held_out]
    plan = fit_plan(train_runs, tau)
    norm = fit_normalizer(np.concatenate([r.values for r in train_runs]), norm_mode)
    heads, tails = [], []
    for r in train_runs:
        cut = r.n_steps - math.floor(r.n_steps * val_frac + 1e-9)
        heads.append(r.values[:cut])
        tails.append(r.values[cut:])
    test = runs[held_out]
    x_te, y_te = make_windows(norm.apply(test.values), seq_len)
    ind = concat_windows([make_windows(norm.apply(r.values), seq_len) for r in train_runs])
    prep = PreparedData(
        plan=plan,
        normalizer=norm,
        train=_windows_retained(heads, norm, plan, seq_len),
        val=_windows_retained(tails, norm, plan, seq_len),
        test_inputs=plan.select(x_te),
        test_targets_full=y_te,
    )
    return FoldData(test, prep, plan.select(ind[0]), ind[1])


def generalised_protocol(
    runs: Sequence[NodeTimeSeries],
    spec: ModelSpec,
    tau: float = DEFAULT_TAU,
    optim: OptimConfig = OptimConfig(),
    seeds: Sequence[int] = REPEAT_SEEDS,
    norm_mode: NormMode | str = NormMode.MINMAX,
    configure: Optional[Callable[[FoldData, ModelSpec, OptimConfig], tuple[ModelSpec, OptimConfig]]] = None,
    parents: str = "predicted",
) -> list[RunMetrics]:
    """Leave-one-run-out: one :class:`RunMetrics` per held-out run.

    ``in_distribution_mse`` holds the mean all-node MSE over the training
    runs' windows for the same models. ``configure`` may tune the spec per fold.
    """
    if len(runs) < 2:
        raise ValueError("leave-one-out needs at least two runs")
    out = []
    for k in range(len(runs)):
        t0 = time.perf_counter()
        fold = prepare_fold(runs, k, tau, optim.seq_len, norm_mode)
        J = len(fold.prep.plan.retained)
        s, o = spec.with_(d_in=J, d_out=J), optim
        if configure is not None:
            s, o = configure(fold, s, o)
        fulls, rets, ind = [], [], []
        for seed in seeds:
            res = train_model(s, o, fold.prep.train, fold.prep.val, seed)
            f, r = full_node_mse(predict(res.spec, res.params, fold.prep.test_inputs), fold.prep.test_targets_full,
                                 fold.prep, parents)
            fi, _ = full_node_mse(predict(res.spec, res.params, fold.in_dist_inputs), fold.in_dist_targets_full,
                                  fold.prep, parents)
            fulls.append(f)
            rets.append(r)
            ind.append(fi)
        out.append(_summarise(runs[k].run_id, s.kind, fulls, rets, seeds, time.perf_counter() - t0,
                              norm_mode, J, in_dist=float(np.mean(ind))))
    return out


METRIC_FIELDS = ["protocol", "quantity", "run_id", "kind", "mse_mean", "mse_std", "retained_mse_mean",
                 "retained_mse_std", "in_distribution_mse", "n_repeats", "seeds", "wall_time",
                 "normalization", "n_retained"]


def write_metrics(rows: Sequence[RunMetrics], path: str | Path, protocol: str, quantity: str) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRIC_FIELDS)
        for m in rows:
            w.writerow([protocol, quantity, m.run_id, m.kind, repr(m.mse_mean), repr(m.mse_std),
                        repr(m.retained_mse_mean), repr(m.retained_mse_std),
                        "" if m.in_distribution_mse is None else repr(m.in_distribution_mse),
                        m.n_repeats, " ".join(map(str, m.seeds)), f"{m.wall_time:.3f}",
                        m.normalization, m.n_retained])


def read_metrics(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
