"""Continual-learning baselines over the hierarchical BC backbone.

SC1/SCN train from scratch on every task, FT1/FTN fine-tune one policy,
FZ freezes the task-1 policy, L2 and EWC fine-tune with a quadratic pull
toward earlier parameters, and PNN grows one column per task with lateral
connections from the frozen earlier columns.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

from pathlib import Path

import numpy as np

from . import nnet
from .envs import splitmix64
from .gcrl import (HierActor, HierPolicy, TrainConfig, default_shapes, epoch_row_batches,
                   flat_batch_rows, high_batch_rows, low_batch_rows, policy_from_json,
                   policy_to_json, table_for, train_hbc)
from .metrics import EvalReport, SuccessMatrix, compute_metrics
from .nnet import AdamState, NetShape
from .streams import (EvalConfig, StreamSpec, evaluate_lower_triangle, reference_success,
                      resolve_dataset)

LAMBDA_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


class StrategyKind(str, enum.Enum):
    SC1 = "SC1"
    SCN = "SCN"
    FT1 = "FT1"
    FTN = "FTN"
    FZ = "FZ"
    L2 = "L2"
    EWC = "EWC"
    PNN = "PNN"

    @classmethod
    def parse(cls, name) -> "StrategyKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown strategy {name!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


PER_TASK = {StrategyKind.SCN, StrategyKind.FTN, StrategyKind.PNN}


@dataclass
class StrategyConfig:
    lam: float = 1.0
    fisher_samples: int = 256

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.fisher_samples < 1:
            raise ValueError("fisher_samples must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------- policy stores

@dataclass
class PolicyStore:
    """Either one policy for every task ("single") or a checkpoint per task ("per-task")."""

    mode: str
    checkpoints: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("single", "per-task"):
            raise ValueError(f"unknown store mode {self.mode!r}")

    def put(self, task: int, policy):
        if self.mode == "single":
            self.checkpoints = {0: policy}
        else:
            self.checkpoints[task] = policy

    def policy_for(self, task: int):
        if self.mode == "single":
            return self.checkpoints[0]
        return self.checkpoints[task]

    def n_params(self) -> int:
        return sum(p.n_params() for p in self.checkpoints.values())


# --------------------------------------------------------------------------- regularizers

@dataclass
class RegState:
    lam: float
    theta_old: np.ndarray
    fisher: np.ndarray | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.fisher is not None:
            if self.fisher.shape != self.theta_old.shape:
                raise ValueError("fisher and theta_old differ in shape")
            if np.any(self.fisher < 0):
                raise ValueError("fisher entries must be >= 0")


def reg_penalty(kind, params, states) -> tuple[float, np.ndarray]:
    """Quadratic penalty and gradient, summed over one or more RegStates.

    L2:  lam * ||theta - theta_old||^2
    EWC: lam / 2 * sum F * (theta - theta_old)^2
    """
    kind = StrategyKind.parse(kind)
    if isinstance(states, RegState):
        states = [states]
    params = np.asarray(params, dtype=float)
    loss, g = 0.0, np.zeros_like(params)
    for st in states:
        if st.theta_old.shape != params.shape:
            raise ValueError("params and theta_old differ in shape")
        d = params - st.theta_old
        if kind is StrategyKind.L2:
            loss += st.lam * float(d @ d)
            g += 2.0 * st.lam * d
        elif kind is StrategyKind.EWC:
            if st.fisher is None:
                raise ValueError("EWC penalty needs a fisher estimate")
            loss += 0.5 * st.lam * float(st.fisher @ (d * d))
            g += st.lam * st.fisher * d
        else:
            raise ValueError(f"{kind.value} has no regularizer")
    return loss, g


def _per_sample_sq_grads(shape, theta, inputs, targets) -> np.ndarray:
    total = np.zeros_like(theta)
    for x, y in zip(inputs, targets):
        _, g = nnet.loss_and_grad(shape, theta, x[None], y[None])
        total += g * g
    return total / len(inputs)


def estimate_fisher(policy: HierPolicy, dataset, n_samples: int, rng=None) -> np.ndarray:
    """Diagonal empirical Fisher of the policy's NLL, ``[F_high, F_low]`` concatenated.

    Mean squared per-transition gradient over ``n_samples`` transitions drawn
    without replacement (all of them if the dataset is smaller). Original goals,
    eval mode.
    """
    table = table_for(dataset)
    rng = np.random.default_rng(rng)
    n = min(n_samples, table.n_rows)
    rows = np.sort(rng.choice(table.n_rows, size=n, replace=False))
    parts = []
    if policy.flat:
        b = flat_batch_rows(table, rows)
        return _per_sample_sq_grads(policy.shape_l, policy.theta_l, b.inputs, b.targets)
    b = high_batch_rows(table, rows, policy.k)
    parts.append(_per_sample_sq_grads(policy.shape_h, policy.theta_h, b.inputs, b.targets))
    b = low_batch_rows(table, rows, policy.k)
    parts.append(_per_sample_sq_grads(policy.shape_l, policy.theta_l, b.inputs, b.targets))
    return np.concatenate(parts)


def _split_hl(policy: HierPolicy, vec):
    nh = policy.theta_h.size
    return vec[:nh], vec[nh:]


def _penalties(kind, states_h, states_l):
    if not states_h:
        return None, None
    return (lambda th: reg_penalty(kind, th, states_h)), (lambda th: reg_penalty(kind, th, states_l))


# --------------------------------------------------------------------------- progressive networks

@dataclass
class PnnColumn:
    """One column: its own MLP parameters plus lateral maps from every earlier column.

    ``laterals[i][j]`` maps column ``j``'s input to layer ``i`` (its layer
    ``i - 1`` output) into this column's layer ``i`` pre-activation, for
    ``i >= 1``.
    """

    theta: np.ndarray
    laterals: list[list[np.ndarray]]

    def n_params(self) -> int:
        return int(self.theta.size + sum(u.size for layer in self.laterals for u in layer))


@dataclass
class PnnNet:
    shape: NetShape
    columns: list[PnnColumn] = field(default_factory=list)

    def n_params(self, upto: int | None = None) -> int:
        cols = self.columns if upto is None else self.columns[:upto + 1]
        return sum(c.n_params() for c in cols)


def pnn_add_column(net: PnnNet, seed) -> PnnNet:
    """Append a freshly initialized column (laterals start at zero)."""
    rng = np.random.default_rng(seed)
    slots = nnet.layer_slots(net.shape)
    k = len(net.columns)
    laterals = [[np.zeros((slots[i].fan_in, slots[i].fan_out)) for _ in range(k)]
                for i in range(1, len(slots))]
    net.columns.append(PnnColumn(nnet.init_params(net.shape, rng), laterals))
    return net


def pnn_param_count(shape: NetShape, n_columns: int) -> int:
    """Closed-form parameter count of a PNN with ``n_columns`` columns."""
    slots = nnet.layer_slots(shape)
    lateral = sum(s.fan_in * s.fan_out for s in slots[1:])
    return n_columns * nnet.param_count(shape) + lateral * n_columns * (n_columns - 1) // 2


def _column_extra(column: PnnColumn, feats, n_layers):
    """Per-layer lateral pre-activation terms from earlier columns' layer inputs."""
    extra = [None] * n_layers
    for i in range(1, n_layers):
        terms = [feats[j][i] @ u for j, u in enumerate(column.laterals[i - 1])]
        if terms:
            extra[i] = np.sum(terms, axis=0)
    return extra


def _frozen_features(net: PnnNet, x, upto: int):
    """Layer inputs of columns 0..upto-1, in eval mode."""
    n_layers = len(nnet.layer_slots(net.shape))
    feats = []
    for col in net.columns[:upto]:
        extra = _column_extra(col, feats, n_layers)
        _, cache = nnet._forward(net.shape, col.theta, x, False, None, True, extra)
        feats.append([c[0] for c in cache])
    return feats


def pnn_forward(net: PnnNet, x, upto: int | None = None) -> np.ndarray:
    """Output of column ``upto`` (default: newest) given the frozen earlier columns."""
    if not net.columns:
        raise ValueError("PNN has no columns")
    upto = len(net.columns) - 1 if upto is None else upto
    x = np.atleast_2d(np.asarray(x, dtype=float))
    feats = _frozen_features(net, x, upto)
    col = net.columns[upto]
    extra = _column_extra(col, feats, len(nnet.layer_slots(net.shape)))
    y, _ = nnet._forward(net.shape, col.theta, x, False, None, False, extra)
    return y


def _pnn_loss_and_grad(net: PnnNet, inputs, targets, rng, train=True):
    """Loss and gradients of the newest column: (loss, d_theta, d_laterals)."""
    upto = len(net.columns) - 1
    feats = _frozen_features(net, inputs, upto)
    col = net.columns[upto]
    n_layers = len(nnet.layer_slots(net.shape))
    extra = _column_extra(col, feats, n_layers)
    y, cache = nnet._forward(net.shape, col.theta, inputs, train, rng, True, extra)
    n = len(inputs)
    resid = y - targets
    pre = []
    g, _ = nnet.backward(net.shape, col.theta, cache, resid / n, pre)
    d_lat = [[feats[j][i].T @ pre[i] for j in range(upto)] for i in range(1, n_layers)]
    return float(0.5 * np.sum(resid**2) / n), g, d_lat


def train_pnn_column(net: PnnNet, batch_fn, n_rows: int, cfg: TrainConfig, rng) -> PnnNet:
    """Adam on the newest column and its laterals; earlier columns untouched."""
    col = net.columns[-1]
    flat = np.concatenate([col.theta] + [u.ravel() for layer in col.laterals for u in layer])
    state = AdamState.zeros(flat.size)
    n_theta = col.theta.size

    def unpack(v):
        col.theta = v[:n_theta]
        pos = n_theta
        for layer in col.laterals:
            for j, u in enumerate(layer):
                size = u.size
                layer[j] = v[pos:pos + size].reshape(u.shape)
                pos += size

    for _ in range(cfg.epochs):
        for rows in epoch_row_batches(n_rows, cfg.batch_size, rng):
            b = batch_fn(rows)
            _, g, d_lat = _pnn_loss_and_grad(net, b.inputs, b.targets, rng)
            grad = np.concatenate([g] + [u.ravel() for layer in d_lat for u in layer])
            state, flat = nnet.adam_step(state, flat, grad, cfg.lr)
            unpack(flat)
    return net


@dataclass
class PnnPolicy:
    """Hierarchical policy reading column ``column`` of a high and a low PNN."""

    high: PnnNet
    low: PnnNet
    column: int
    k: int

    flat = False

    def n_params(self) -> int:
        return self.high.n_params(self.column) + self.low.n_params(self.column)

    def subgoal(self, obs, goal):
        return pnn_forward(self.high, np.hstack([obs, goal]), self.column)

    def low_action(self, obs, subgoal):
        return np.clip(pnn_forward(self.low, np.hstack([obs, subgoal]), self.column), -1.0, 1.0)


# --------------------------------------------------------------------------- strategies

def _task_cfg(cfg: TrainConfig, seed: int, task: int) -> TrainConfig:
    return TrainConfig(**{**cfg.to_dict(), "seed": splitmix64(seed, task) % 2**31})


def run_strategy(kind, stream: StreamSpec, train_cfg: TrainConfig, strategy_cfg: StrategyConfig | None = None,
                 shapes=None, ev: EvalConfig | None = None, seed: int = 0, datasets=None):
    """Learn the stream with a baseline strategy. Returns ``(PolicyStore, EvalReport)``."""
    kind = StrategyKind.parse(kind)
    scfg = strategy_cfg or StrategyConfig()
    shapes = tuple(shapes or default_shapes())
    ev = ev or EvalConfig()
    store = PolicyStore("per-task" if kind in PER_TASK else "single")
    matrix = SuccessMatrix(len(stream))
    current = None
    reg_h, reg_l = [], []
    pnn_h, pnn_l = PnnNet(shapes[0]), PnnNet(shapes[1])

    for i, task in enumerate(stream.tasks):
        dataset = datasets[i] if datasets is not None else resolve_dataset(task)
        cfg = _task_cfg(train_cfg, seed, i)
        try:
            if kind in (StrategyKind.SC1, StrategyKind.SCN):
                current = train_hbc(dataset, shapes, cfg)
            elif kind is StrategyKind.FZ:
                if current is None:
                    current = train_hbc(dataset, shapes, cfg)
            elif kind in (StrategyKind.FT1, StrategyKind.FTN):
                current = train_hbc(dataset, shapes, cfg, init=current)
            elif kind in (StrategyKind.L2, StrategyKind.EWC):
                pen_h, pen_l = _penalties(kind, reg_h, reg_l)
                current = train_hbc(dataset, shapes, cfg, init=current, penalty_h=pen_h,
                                    penalty_l=pen_l)
                if kind is StrategyKind.L2:
                    reg_h[:] = [RegState(scfg.lam, current.theta_h.copy())]
                    reg_l[:] = [RegState(scfg.lam, current.theta_l.copy())]
                else:
                    fisher = estimate_fisher(current, dataset, scfg.fisher_samples, cfg.seed)
                    f_h, f_l = _split_hl(current, fisher)
                    reg_h.append(RegState(scfg.lam, current.theta_h.copy(), f_h))
                    reg_l.append(RegState(scfg.lam, current.theta_l.copy(), f_l))
            elif kind is StrategyKind.PNN:
                current = _pnn_task(pnn_h, pnn_l, dataset, cfg, i)
        except Exception as e:
            raise RuntimeError(f"{kind.value}, task {i}: {e}") from e
        store.put(i, current)
        evaluate_lower_triangle(matrix, i, lambda j: HierActor(store.policy_for(j)), stream, ev)

    if ev.fwt_reference:
        matrix.ref_sigma = reference_success(stream, shapes, train_cfg, ev, seed)
    single = sum(nnet.param_count(s) for s in shapes)
    # PNN checkpoints share their columns, so count the two networks once
    stored = pnn_h.n_params() + pnn_l.n_params() if kind is StrategyKind.PNN else store.n_params()
    metrics = compute_metrics(matrix, stored, single)
    extra = {"strategy_cfg": scfg.to_dict()} if kind in (StrategyKind.L2, StrategyKind.EWC) else {}
    return store, EvalReport(kind.value, stream.name, seed, matrix, metrics, extra)


def _pnn_task(pnn_h: PnnNet, pnn_l: PnnNet, dataset, cfg: TrainConfig, task: int) -> PnnPolicy:
    rng = np.random.default_rng(cfg.seed)
    k = cfg.k_for(dataset.meta.get("layout", "U"))
    table = table_for(dataset)
    pnn_add_column(pnn_h, rng)
    pnn_add_column(pnn_l, rng)
    train_pnn_column(pnn_h, lambda rows: high_batch_rows(table, rows, k, rng, cfg.her_temperature,
                                                         cfg.her_fraction), table.n_rows, cfg, rng)
    train_pnn_column(pnn_l, lambda rows: low_batch_rows(table, rows, k), table.n_rows, cfg, rng)
    return PnnPolicy(pnn_h, pnn_l, task, k)


def sweep_lambda(kind, stream: StreamSpec, train_cfg: TrainConfig, shapes=None, ev=None, seed: int = 0,
                 grid=LAMBDA_GRID, fisher_samples: int = 256):
    """Run L2 or EWC for every lambda in ``grid``; return the best-PER ``(lam, store, report)``."""
    kind = StrategyKind.parse(kind)
    if kind not in (StrategyKind.L2, StrategyKind.EWC):
        raise ValueError("lambda sweep applies to L2 and EWC only")
    best = None
    for lam in grid:
        store, report = run_strategy(kind, stream, train_cfg, StrategyConfig(lam, fisher_samples),
                                     shapes, ev, seed)
        if best is None or report.metrics.per > best[2].metrics.per:
            best = (lam, store, report)
    return best



# --------------------------------------------------------------------------- persistence

STORE_VERSION = 1


def _pnn_to_json(net: PnnNet) -> dict:
    return {"shape": net.shape.to_dict(),
            "columns": [{"theta": c.theta.tolist(),
                         "laterals": [[u.tolist() for u in layer] for layer in c.laterals]}
                        for c in net.columns]}


def _pnn_from_json(d: dict) -> PnnNet:
    shape = NetShape.from_dict(d["shape"])
    slots = nnet.layer_slots(shape)
    cols = []
    for c in d["columns"]:
        laterals = [[np.array(u, dtype=float).reshape(slots[i + 1].fan_in, slots[i + 1].fan_out)
                     for u in layer] for i, layer in enumerate(c["laterals"])]
        cols.append(PnnColumn(np.array(c["theta"], dtype=float), laterals))
    return PnnNet(shape, cols)


def store_to_json(store: PolicyStore) -> dict:
    head = {"format_version": STORE_VERSION, "mode": store.mode, "tasks": sorted(store.checkpoints)}
    policies = list(store.checkpoints.values())
    if policies and isinstance(policies[0], PnnPolicy):
        last = policies[-1]
        return {"header": {**head, "kind": "pnn"},
                "high": _pnn_to_json(last.high), "low": _pnn_to_json(last.low),
                "waysteps": {str(t): p.k for t, p in store.checkpoints.items()}}
    return {"header": {**head, "kind": "hbc"},
            "checkpoints": {str(t): policy_to_json(p) for t, p in store.checkpoints.items()}}


def store_from_json(doc: dict) -> PolicyStore:
    head = doc["header"]
    if head.get("format_version") != STORE_VERSION:
        raise ValueError(f"unsupported policy store version {head.get('format_version')}")
    store = PolicyStore(head["mode"])
    if head["kind"] == "pnn":
        high, low = _pnn_from_json(doc["high"]), _pnn_from_json(doc["low"])
        for t, k in doc["waysteps"].items():
            store.checkpoints[int(t)] = PnnPolicy(high, low, int(t), int(k))
    else:
        for t, p in doc["checkpoints"].items():
            store.checkpoints[int(t)] = policy_from_json(p)
    return store


def save_store(store: PolicyStore, path) -> None:
    Path(path).write_text(json.dumps(store_to_json(store)), encoding="utf-8")


def load_store(path) -> PolicyStore:
    return store_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
