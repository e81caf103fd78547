"""Growing subspaces of policies.

A subspace is a list of anchors in parameter space; every task stores a
point of the simplex over them, and its policy parameters are the convex
combination of the anchors under those weights. New tasks first train a
candidate anchor (jointly with softmax anchor scores), then compare the
extended subspace against the best of a Dirichlet sweep over the previous
one, and either keep or prune the candidate. HiSPO runs this separately for
the high-level and the low-level policy; CSPO runs it once over both
networks concatenated; HiLOW stores anchors 2.. as low-rank factor pairs.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .envs import Dataset
from .gcrl import (Batch, HierActor, HierPolicy, TrainConfig, epoch_row_batches,
                   high_batch_rows, low_batch_rows, table_for)
from .metrics import CrlMetrics, EvalReport, SuccessMatrix, compute_metrics
from .nnet import AdamState, NetShape
from .streams import (EvalConfig, StreamSpec, evaluate_lower_triangle, reference_success,
                      resolve_dataset, stream_rng)

log = logging.getLogger(__name__)

MODEL_VERSION = 1
SIMPLEX_TOL = 1e-9


# --------------------------------------------------------------------------- parameter spaces

@dataclass(frozen=True)
class ParamSpace:
    """Flat parameter layout of one or more concatenated networks."""

    shapes: tuple[NetShape, ...]

    @property
    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 0
        for s in self.shapes:
            out.append(pos)
            pos += nnet.param_count(s)
        return tuple(out)

    @property
    def size(self) -> int:
        return sum(nnet.param_count(s) for s in self.shapes)

    def weight_slots(self) -> list[tuple[int, int, int]]:
        """(start, fan_in, fan_out) of every weight matrix."""
        slots = []
        for off, shape in zip(self.offsets, self.shapes):
            for s in nnet.layer_slots(shape):
                slots.append((off + s.w.start, s.fan_in, s.fan_out))
        return slots


# --------------------------------------------------------------------------- anchors

@dataclass
class Anchor:
    """A subspace vertex: a full parameter vector or per-weight-matrix factors (A, B)."""

    kind: str
    vector: np.ndarray | None = None
    factors: list[tuple[np.ndarray, np.ndarray]] | None = None

    def __post_init__(self):
        if self.kind not in ("full", "lora"):
            raise ValueError(f"unknown anchor kind {self.kind!r}")
        if self.kind == "full" and self.vector is None:
            raise ValueError("full anchor needs a vector")
        if self.kind == "lora" and not self.factors:
            raise ValueError("lora anchor needs factors")

    @property
    def rank(self) -> int | None:
        return None if self.kind == "full" else max(a.shape[1] for a, _ in self.factors)

    def n_params(self) -> int:
        if self.kind == "full":
            return int(self.vector.size)
        return int(sum(a.size + b.size for a, b in self.factors))

    def materialize(self, space: ParamSpace) -> np.ndarray:
        if self.kind == "full":
            return self.vector
        theta = np.zeros(space.size)
        for (start, n, m), (a, b) in zip(space.weight_slots(), self.factors):
            theta[start:start + n * m] = (a @ b).ravel()
        return theta

    def copy(self) -> "Anchor":
        if self.kind == "full":
            return Anchor("full", self.vector.copy())
        return Anchor("lora", factors=[(a.copy(), b.copy()) for a, b in self.factors])


def init_lora_anchor(space: ParamSpace, rank: int, rng) -> Anchor:
    """Gaussian ``A`` (std 1/sqrt(n)) and zero ``B``, per weight matrix."""
    factors = []
    for _, n, m in space.weight_slots():
        factors.append((rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, rank)), np.zeros((rank, m))))
    return Anchor("lora", factors=factors)


def lora_param_count(space: ParamSpace, rank: int) -> int:
    return sum(rank * (n + m) for _, n, m in space.weight_slots())


# --------------------------------------------------------------------------- simplex weights

def check_simplex(alpha, tol: float = SIMPLEX_TOL) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("simplex weights must be a non-empty vector")
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > tol:
        raise ValueError(f"not a simplex point: {alpha}")
    return alpha


def sample_simplex(n: int, rng, size: int | None = None) -> np.ndarray:
    """Symmetric Dirichlet(1, ..., 1) draws by stick breaking.

    Stick ``i`` (0-based) breaks off a ``Beta(1, n - 1 - i)`` fraction of
    what is left; the last coordinate takes the remainder.
    """
    if n < 1:
        raise ValueError("simplex dimension must be >= 1")
    m = 1 if size is None else size
    out = np.empty((m, n))
    remaining = np.ones(m)
    for i in range(n - 1):
        v = rng.beta(1.0, n - 1 - i, size=m)
        out[:, i] = remaining * v
        remaining = remaining - out[:, i]
    out[:, n - 1] = np.maximum(remaining, 0.0)
    out /= out.sum(axis=1, keepdims=True)
    return out[0] if size is None else out


def softmax(x) -> np.ndarray:
    z = np.exp(np.asarray(x, dtype=float) - np.max(x))
    return z / z.sum()


def jitter_weights(p: np.ndarray, std: float, rng):
    """Gaussian jitter around ``p``, clipped at 0 and renormalized.

    Returns the jittered weights and the vector-Jacobian product closure
    mapping dL/dalpha to dL/dp.
    """
    c = p + rng.normal(0.0, std, size=p.shape) if std > 0 else p.copy()
    active = c > 0
    if not active.any():
        c, active = p.copy(), p > 0
    c = np.where(active, c, 0.0)
    total = c.sum()
    alpha = c / total

    def vjp(d_alpha):
        return np.where(active, (d_alpha - alpha @ d_alpha) / total, 0.0)

    return alpha, vjp


# --------------------------------------------------------------------------- subspaces

@dataclass
class PolicySubspace:
    space: ParamSpace
    anchors: list[Anchor] = field(default_factory=list)
    task_weights: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.anchors and self.anchors[0].kind != "full":
            raise ValueError("the first anchor must be a full parameter vector")
        self._cache: list[np.ndarray] = []

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    def materialized(self) -> np.ndarray:
        """(n_anchors, size) matrix of materialized anchors; anchors are immutable once added."""
        while len(self._cache) < len(self.anchors):
            self._cache.append(self.anchors[len(self._cache)].materialize(self.space))
        return np.vstack(self._cache[:len(self.anchors)])

    def add_anchor(self, anchor: Anchor):
        """Append an anchor and zero-pad every stored task weight vector."""
        if not self.anchors and anchor.kind != "full":
            raise ValueError("the first anchor must be a full parameter vector")
        self.anchors.append(anchor)
        for t, w in self.task_weights.items():
            self.task_weights[t] = np.append(w, 0.0)

    def set_task_weights(self, task: int, alpha):
        alpha = check_simplex(alpha)
        if alpha.size != self.n_anchors:
            raise ValueError(f"{alpha.size} weights for {self.n_anchors} anchors")
        self.task_weights[task] = alpha.copy()

    def params_for_task(self, task: int) -> np.ndarray:
        return combine(self, self.task_weights[task])

    def anchor_params(self) -> int:
        return sum(a.n_params() for a in self.anchors)

    def n_params(self) -> int:
        """Stored numbers: anchors plus every task's weight vector."""
        return self.anchor_params() + sum(w.size for w in self.task_weights.values())


def combine(subspace: PolicySubspace, alpha) -> np.ndarray:
    """theta = sum_i alpha_i * materialize(anchor_i)."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (subspace.n_anchors,):
        raise ValueError(f"{alpha.size} weights for {subspace.n_anchors} anchors")
    return alpha @ subspace.materialized()


# --------------------------------------------------------------------------- objectives

class LevelObjective:
    """Imitation loss of one policy level on one task dataset.

    ``level`` is "high" (subgoal prediction, HER-relabeled goals during
    training) or "low" (action prediction). Full-dataset losses use the
    original goals and eval mode.
    """

    def __init__(self, level: str, shape: NetShape, dataset: Dataset, k: int, cfg: TrainConfig):
        if level not in ("high", "low"):
            raise ValueError(f"unknown level {level!r}")
        self.level = level
        self.shape = shape
        self.space = ParamSpace((shape,))
        self.table = table_for(dataset)
        self.k = k
        self.cfg = cfg
        self._full = None

    def batch(self, rows, rng) -> Batch:
        if self.level == "high":
            return high_batch_rows(self.table, rows, self.k, rng, self.cfg.her_temperature,
                                   self.cfg.her_fraction)
        return low_batch_rows(self.table, rows, self.k)

    def epoch(self, rng):
        for rows in epoch_row_batches(self.table.n_rows, self.cfg.batch_size, rng):
            yield self.batch(rows, rng)

    def full_batch(self) -> Batch:
        if self._full is None:
            rows = np.arange(self.table.n_rows)
            if self.level == "high":
                self._full = high_batch_rows(self.table, rows, self.k)
            else:
                self._full = low_batch_rows(self.table, rows, self.k)
        return self._full

    def loss(self, theta, batch=None) -> float:
        b = batch or self.full_batch()
        return nnet.nll_loss(self.shape, theta, b.inputs, b.targets)

    def loss_and_grad(self, theta, batch, rng):
        return nnet.loss_and_grad(self.shape, theta, batch.inputs, batch.targets, "train", rng)

    def distances(self, theta) -> np.ndarray:
        """Per-row Euclidean distance between prediction and dataset target."""
        b = self.full_batch()
        pred = nnet.forward(self.shape, theta, b.inputs)
        return np.linalg.norm(pred - b.targets, axis=1)

    def init_params(self, rng) -> np.ndarray:
        return nnet.init_params(self.shape, rng)


class JointObjective:
    """Sum of several level objectives over their concatenated parameters (CSPO)."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.space = ParamSpace(tuple(p.shape for p in self.parts))
        self._bounds = [(o, o + nnet.param_count(p.shape))
                        for o, p in zip(self.space.offsets, self.parts)]

    def _split(self, theta):
        return [theta[a:b] for a, b in self._bounds]

    def epoch(self, rng):
        n = self.parts[0].table.n_rows
        for rows in epoch_row_batches(n, self.parts[0].cfg.batch_size, rng):
            yield tuple(p.batch(rows, rng) for p in self.parts)

    def full_batch(self):
        return tuple(p.full_batch() for p in self.parts)

    def loss(self, theta, batch=None) -> float:
        batch = batch or self.full_batch()
        return float(sum(p.loss(t, b) for p, t, b in zip(self.parts, self._split(theta), batch)))

    def loss_and_grad(self, theta, batch, rng):
        total, grads = 0.0, []
        for p, t, b in zip(self.parts, self._split(theta), batch):
            l, g = p.loss_and_grad(t, b, rng)
            total += l
            grads.append(g)
        return total, np.concatenate(grads)

    def distances(self, theta) -> np.ndarray:
        return np.max([p.distances(t) for p, t in zip(self.parts, self._split(theta))], axis=0)

    def init_params(self, rng) -> np.ndarray:
        return np.concatenate([p.init_params(rng) for p in self.parts])


# --------------------------------------------------------------------------- configuration

@dataclass
class PacConfig:
    d_epsilon: float = 0.2
    delta: float = 0.1


@dataclass
class SubspaceConfig:
    epsilon: float = 0.1
    samples: int = 64
    weight_jitter_std: float = 0.1
    lora_rank: int | None = None
    pac: PacConfig | None = None
    mode: str = "hispo"  # "hispo" (two subspaces) or "cspo" (one joint subspace)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.lora_rank is not None and self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if self.mode not in ("hispo", "cspo"):
            raise ValueError(f"unknown subspace mode {self.mode!r}")
        if isinstance(self.pac, dict):
            self.pac = PacConfig(**self.pac)

    def to_dict(self) -> dict:
        return asdict(self)


class Decision(str, enum.Enum):
    PRUNE = "prune"
    EXTEND = "extend"
    ZERO_SHOT = "zero-shot"
    INITIAL = "initial"


# --------------------------------------------------------------------------- algorithm steps

@dataclass
class Candidate:
    anchor: Anchor
    scores: np.ndarray
    alpha: np.ndarray
    loss: float


def train_new_anchor(subspace: PolicySubspace, objective, cfg: SubspaceConfig, train_cfg: TrainConfig,
                     rng) -> Candidate:
    """Train a candidate anchor and softmax scores against frozen previous anchors.

    Each minibatch uses weights jittered around softmax(scores); the
    gradient reaches both the new anchor and the scores through the convex
    combination. Returns softmax(final scores) and the full-dataset loss at
    those weights.
    """
    space = subspace.space
    prev = subspace.materialized()  # frozen
    n = subspace.n_anchors
    lora = cfg.lora_rank is not None
    if lora:
        anchor = init_lora_anchor(space, cfg.lora_rank, rng)
        flat = np.concatenate([np.concatenate([a.ravel(), b.ravel()]) for a, b in anchor.factors])
    else:
        anchor = Anchor("full", objective.init_params(rng))
        flat = anchor.vector.copy()
    scores = np.zeros(n + 1)
    opt_anchor = AdamState.zeros(flat.size)
    opt_scores = AdamState.zeros(n + 1)
    slots = space.weight_slots()

    def unpack(v):
        factors, pos = [], 0
        for (_, nn_, m), (a, b) in zip(slots, anchor.factors):
            r = a.shape[1]
            fa = v[pos:pos + nn_ * r].reshape(nn_, r)
            pos += nn_ * r
            fb = v[pos:pos + r * m].reshape(r, m)
            pos += r * m
            factors.append((fa, fb))
        return factors

    def materialize(v):
        if not lora:
            return v
        return Anchor("lora", factors=unpack(v)).materialize(space)

    for _ in range(train_cfg.epochs):
        for batch in objective.epoch(rng):
            p = softmax(scores)
            alpha, vjp = jitter_weights(p, cfg.weight_jitter_std, rng)
            new_theta = materialize(flat)
            theta = alpha[:n] @ prev + alpha[n] * new_theta
            _, g = objective.loss_and_grad(theta, batch, rng)
            d_alpha = np.append(prev @ g, new_theta @ g)
            d_p = vjp(d_alpha)
            d_scores = p * (d_p - p @ d_p)
            if lora:
                parts = []
                for (start, nn_, m), (a, b) in zip(slots, unpack(flat)):
                    d_w = alpha[n] * g[start:start + nn_ * m].reshape(nn_, m)
                    parts.append((d_w @ b.T).ravel())
                    parts.append((a.T @ d_w).ravel())
                d_flat = np.concatenate(parts)
            else:
                d_flat = alpha[n] * g
            opt_anchor, flat = nnet.adam_step(opt_anchor, flat, d_flat, train_cfg.lr)
            opt_scores, scores = nnet.adam_step(opt_scores, scores, d_scores, train_cfg.lr)

    anchor = Anchor("lora", factors=unpack(flat)) if lora else Anchor("full", flat)
    alpha_curr = softmax(scores)
    theta = alpha_curr[:n] @ prev + alpha_curr[n] * anchor.materialize(space)
    return Candidate(anchor, scores, alpha_curr, objective.loss(theta))


def explore_previous(subspace: PolicySubspace, objective, samples: int, rng,
                     include_task_weights: bool = True) -> tuple[np.ndarray, float]:
    """Best of ``samples`` Dirichlet draws (plus every stored task's weights) by full-dataset loss."""
    n = subspace.n_anchors
    if n < 1:
        raise ValueError("empty subspace")
    if n == 1:
        alpha = np.ones(1)
        return alpha, objective.loss(combine(subspace, alpha))
    cands = list(sample_simplex(n, rng, size=samples))
    if include_task_weights:
        cands += [subspace.task_weights[t] for t in sorted(subspace.task_weights)]
    mats = subspace.materialized()
    best_alpha, best_loss = None, np.inf
    for alpha in cands:
        loss = objective.loss(alpha @ mats)
        if loss < best_loss:
            best_alpha, best_loss = np.array(alpha, dtype=float), loss
    return best_alpha, float(best_loss)


def adapt_decision(l_prev: float, l_curr: float, epsilon: float) -> Decision:
    """Prune iff the previous subspace is within (1 + epsilon) of the extended one."""
    if not (np.isfinite(l_prev) and np.isfinite(l_curr)):
        raise ValueError("losses must be finite")
    if l_prev < 0 or l_curr < 0:
        raise ValueError("losses must be non-negative")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return Decision.PRUNE if l_prev <= (1.0 + epsilon) * l_curr else Decision.EXTEND


@dataclass
class PacResult:
    passed: bool
    alpha: np.ndarray
    fraction: float


def pac_gate(subspace: PolicySubspace, objective, d_epsilon: float, delta: float, samples: int,
             rng) -> PacResult:
    """Zero-shot test: the best previous point must match at least 1 - delta of the dataset within d_epsilon."""
    alpha, _ = explore_previous(subspace, objective, samples, rng)
    dist = objective.distances(combine(subspace, alpha))
    fraction = float(np.mean(dist <= d_epsilon))
    return PacResult(fraction >= 1.0 - delta, alpha, fraction)


# --------------------------------------------------------------------------- the stream learner

@dataclass
class TaskRecord:
    task: int
    level: str
    decision: Decision
    l_prev: float | None = None
    l_curr: float | None = None
    pac_fraction: float | None = None
    added_params: int = 0


@dataclass
class HiSPOModel:
    """Two subspaces (high, low), or one joint subspace under "cspo"."""

    mode: str
    shapes: tuple[NetShape, NetShape]
    subspaces: dict[str, PolicySubspace]
    waysteps: dict[int, int] = field(default_factory=dict)
    records: list[TaskRecord] = field(default_factory=list)

    @property
    def n_tasks(self) -> int:
        return len(self.waysteps)

    def anchor_counts(self) -> dict[str, int]:
        return {name: s.n_anchors for name, s in self.subspaces.items()}

    def n_params(self) -> int:
        return sum(s.n_params() for s in self.subspaces.values())

    def anchor_params(self) -> int:
        return sum(s.anchor_params() for s in self.subspaces.values())

    def single_policy_params(self) -> int:
        return sum(nnet.param_count(s) for s in self.shapes)

    def policy(self, task: int) -> HierPolicy:
        shape_h, shape_l = self.shapes
        if self.mode == "cspo":
            theta = self.subspaces["joint"].params_for_task(task)
            nh = nnet.param_count(shape_h)
            theta_h, theta_l = theta[:nh], theta[nh:]
        else:
            theta_h = self.subspaces["high"].params_for_task(task)
            theta_l = self.subspaces["low"].params_for_task(task)
        return HierPolicy(shape_h, theta_h, shape_l, theta_l, self.waysteps[task])


def _objectives(mode, shapes, dataset, k, train_cfg):
    high = LevelObjective("high", shapes[0], dataset, k, train_cfg)
    low = LevelObjective("low", shapes[1], dataset, k, train_cfg)
    if mode == "cspo":
        return {"joint": JointObjective([high, low])}
    return {"high": high, "low": low}


def _train_initial(objective, train_cfg: TrainConfig, rng) -> np.ndarray:
    theta = objective.init_params(rng)
    state = AdamState.zeros(theta.size)
    for _ in range(train_cfg.epochs):
        for batch in objective.epoch(rng):
            _, g = objective.loss_and_grad(theta, batch, rng)
            state, theta = nnet.adam_step(state, theta, g, train_cfg.lr)
    return theta


def learn_task(model: HiSPOModel, task: int, dataset: Dataset, k: int, cfg: SubspaceConfig,
               train_cfg: TrainConfig, seed: int) -> list[TaskRecord]:
    """Algorithm steps for one task, run independently for every subspace of the model."""
    model.waysteps[task] = k
    objectives = _objectives(model.mode, model.shapes, dataset, k, train_cfg)
    records = []
    for tag, (name, objective) in enumerate(objectives.items()):
        sub = model.subspaces[name]
        rng = stream_rng(seed, task, tag)
        try:
            if sub.n_anchors == 0:
                sub.add_anchor(Anchor("full", _train_initial(objective, train_cfg, rng)))
                sub.set_task_weights(task, np.ones(1))
                records.append(TaskRecord(task, name, Decision.INITIAL,
                                          added_params=sub.anchors[0].n_params()))
                continue
            if cfg.pac is not None:
                res = pac_gate(sub, objective, cfg.pac.d_epsilon, cfg.pac.delta, cfg.samples, rng)
                if res.passed:
                    sub.set_task_weights(task, res.alpha)
                    records.append(TaskRecord(task, name, Decision.ZERO_SHOT,
                                              pac_fraction=res.fraction))
                    continue
                pac_fraction = res.fraction
            else:
                pac_fraction = None
            cand = train_new_anchor(sub, objective, cfg, train_cfg, rng)
            alpha_prev, l_prev = explore_previous(sub, objective, cfg.samples, rng)
            decision = adapt_decision(l_prev, cand.loss, cfg.epsilon)
            before = sub.anchor_params()
            if decision is Decision.PRUNE:
                sub.set_task_weights(task, alpha_prev)
            else:
                sub.add_anchor(cand.anchor)
                sub.set_task_weights(task, cand.alpha)
            records.append(TaskRecord(task, name, decision, l_prev, cand.loss, pac_fraction,
                                      sub.anchor_params() - before))
            log.info("task %d %s: %s (L_prev=%.5f, L_curr=%.5f)", task, name, decision.value,
                     l_prev, cand.loss)
        except Exception as e:
            raise RuntimeError(f"task {task}, subspace {name!r}: {e}") from e
    model.records.extend(records)
    return records


def new_model(shapes, cfg: SubspaceConfig) -> HiSPOModel:
    shapes = tuple(shapes)
    if cfg.mode == "cspo":
        subs = {"joint": PolicySubspace(ParamSpace(shapes))}
    else:
        subs = {"high": PolicySubspace(ParamSpace((shapes[0],))),
                "low": PolicySubspace(ParamSpace((shapes[1],)))}
    return HiSPOModel(cfg.mode, shapes, subs)


def strategy_name(cfg: SubspaceConfig) -> str:
    if cfg.mode == "cspo":
        return "CSPO"
    return "HiLOW" if cfg.lora_rank is not None else "HiSPO"


def learn_stream(stream: StreamSpec, cfg: SubspaceConfig, train_cfg: TrainConfig, shapes,
                 ev: EvalConfig | None = None, seed: int = 0, datasets=None):
    """Run the subspace learner over a stream and evaluate after every task.

    Returns ``(model, report)``; ``report.extra`` carries anchor counts and
    the per-task prune/extend log.
    """
    ev = ev or EvalConfig()
    model = new_model(shapes, cfg)
    matrix = SuccessMatrix(len(stream))
    for i, task in enumerate(stream.tasks):
        dataset = datasets[i] if datasets is not None else resolve_dataset(task)
        k = train_cfg.k_for(task.layout)
        learn_task(model, i, dataset, k, cfg, train_cfg, seed)
        evaluate_lower_triangle(matrix, i, lambda j: HierActor(model.policy(j)), stream, ev)
    if ev.fwt_reference:
        matrix.ref_sigma = reference_success(stream, tuple(shapes), train_cfg, ev, seed)
    metrics = compute_metrics(matrix, model.n_params(), model.single_policy_params())
    extra = {"anchors": model.anchor_counts(),
             "decisions": [{"task": r.task, "level": r.level, "decision": r.decision.value,
                            "l_prev": r.l_prev, "l_curr": r.l_curr,
                            "pac_fraction": r.pac_fraction, "added_params": r.added_params}
                           for r in model.records]}
    report = EvalReport(strategy_name(cfg), stream.name, seed, matrix, metrics, extra)
    return model, report


# --------------------------------------------------------------------------- persistence

def _anchor_to_json(a: Anchor) -> dict:
    if a.kind == "full":
        return {"kind": "full", "vector": a.vector.tolist()}
    return {"kind": "lora", "rank": a.rank,
            "factors": [{"A": fa.tolist(), "B": fb.tolist()} for fa, fb in a.factors]}


def _anchor_from_json(d: dict) -> Anchor:
    if d["kind"] == "full":
        return Anchor("full", np.array(d["vector"], dtype=float))
    return Anchor("lora", factors=[(np.array(f["A"], dtype=float).reshape(len(f["A"]), -1),
                                    np.array(f["B"], dtype=float).reshape(len(f["B"]), -1))
                                   for f in d["factors"]])


def model_to_json(model: HiSPOModel) -> dict:
    return {
        "header": {
            "format_version": MODEL_VERSION,
            "mode": model.mode,
            "shapes": [s.to_dict() for s in model.shapes],
            "anchors": {name: [{"kind": a.kind, "rank": a.rank} for a in sub.anchors]
                        for name, sub in model.subspaces.items()},
            "task_count": model.n_tasks,
            "waysteps": {str(t): k for t, k in model.waysteps.items()},
        },
        "subspaces": {
            name: {"anchors": [_anchor_to_json(a) for a in sub.anchors],
                   "task_weights": {str(t): w.tolist() for t, w in sub.task_weights.items()}}
            for name, sub in model.subspaces.items()
        },
    }


def model_from_json(doc: dict) -> HiSPOModel:
    head = doc["header"]
    if head.get("format_version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {head.get('format_version')}")
    shapes = tuple(NetShape.from_dict(s) for s in head["shapes"])
    model = new_model(shapes, SubspaceConfig(mode=head["mode"]))
    for name, body in doc["subspaces"].items():
        sub = model.subspaces[name]
        sub.anchors = [_anchor_from_json(a) for a in body["anchors"]]
        sub.task_weights = {int(t): np.array(w, dtype=float) for t, w in body["task_weights"].items()}
    model.waysteps = {int(t): int(k) for t, k in head["waysteps"].items()}
    return model


def save_model(model: HiSPOModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)), encoding="utf-8")


def load_model(path) -> HiSPOModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
