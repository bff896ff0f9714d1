"""Alternating training: project the model output onto the constraints, then
take an SGD-with-momentum step on the cross entropy toward that projection.
"""

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    ConstraintConfig,
    ConstraintRow,
    RowTag,
    assemble,
    background_rows,
    foreground_rows,
    size_rows,
    suppression_rows,
)
from .distributions import softmax
from .dual_solver import SolverConfig, solve
from .loss import cross_entropy, kl_divergence, score_gradient
from .scorer import linear_scorer
from .synthdata import mean_iou

METRIC_FIELDS = ("step", "loss", "kl", "violation", "iou_train", "iou_val")


class Mode(str, enum.Enum):
    CCNN_FULL = "ccnn_full"
    EM_ADAPT_LIKE = "em_adapt_like"
    TAGS_ONLY_MIL = "tags_only_mil"
    FULLY_SUPERVISED = "fully_supervised"


class TrainingError(RuntimeError):
    """Non-finite loss; ``state`` holds the model as it was before the step."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 2000
    max_steps: int = 6000
    solver: SolverConfig = field(default_factory=SolverConfig)
    constraint_cfg: ConstraintConfig = field(default_factory=ConstraintConfig)
    mode: Mode = Mode.CCNN_FULL
    supervised_fraction: float = 0.0
    seed: int = 0
    eval_every: int = 0  # 0: evaluate IoU only after the last step

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.0 <= self.supervised_fraction <= 1.0:
            raise ValueError("supervised_fraction must lie in [0, 1]")
        if self.lr_decay_every < 1 or self.max_steps < 0:
            raise ValueError("lr_decay_every must be >= 1 and max_steps >= 0")

    def lr_at(self, step):
        return self.learning_rate * self.lr_decay_factor ** (step // self.lr_decay_every)


@dataclass
class TrainState:
    scorer: object
    step: int = 0
    velocity: np.ndarray = None
    metrics: list = field(default_factory=list)
    lam_cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros(self.scorer.num_params)
        if self.velocity.shape != (self.scorer.num_params,):
            raise ValueError("velocity must match the parameter vector")

    @property
    def parameters(self):
        return self.scorer.get_params()


def build_constraints(example, mode, cfg):
    """Constraint set for one image under the given training mode."""
    mode = Mode(mode)
    n = example.n
    m = example.features.shape[-1]
    tags = example.tags
    if mode is Mode.FULLY_SUPERVISED:
        return assemble([], n, m)
    if mode is Mode.TAGS_ONLY_MIL:
        rows = suppression_rows(tags, n, m, cfg) + [
            ConstraintRow(np.arange(n), np.full(n, l), np.ones(n), 1.0, cfg.beta_fg, RowTag.FOREGROUND)
            for l in sorted(tags)
        ]
        return assemble(rows, n, m)
    if mode is Mode.EM_ADAPT_LIKE:
        return assemble(suppression_rows(tags, n, m, cfg) + foreground_rows(tags, cfg, n, m), n, m)

    warnings = []
    bits = example.size_bits or {}
    missing = sorted(set(tags) - set(bits))
    if missing:
        warnings.append(f"size bits missing for labels {missing}; size rows omitted")
    large = [l for l in tags if bits.get(l) is True]
    small = [l for l in tags if bits.get(l) is False]
    rows = (
        suppression_rows(tags, n, m, cfg)
        + foreground_rows(tags, cfg, n, m, large=large)
        + background_rows(cfg, n, m)
        + size_rows(small, cfg, n, m, large=large)
    )
    return assemble(rows, n, m, warnings)


def ground_truth_distribution(example):
    m = example.features.shape[-1]
    return np.eye(m)[example.mask.ravel()]


def train_step(state, example, config, supervised=False):
    """One latent-inference plus SGD step on a single image (batch size 1).

    The score gradient is averaged over pixels before backpropagation, so
    the learning rate does not scale with image size.
    """
    scorer = state.scorer
    scores = scorer.forward(example.features)
    q = softmax(scores)
    n = q.shape[0]
    violation = 0.0
    if supervised or config.mode is Mode.FULLY_SUPERVISED:
        p = ground_truth_distribution(example)
    else:
        cs = build_constraints(example, config.mode, config.constraint_cfg)
        p, dual = solve(scores, cs, config.solver, lam0=state.lam_cache.get(example.id))
        state.lam_cache[example.id] = dual.lam
        if cs.k:
            violation = float(np.mean(np.maximum(cs.violations(q), 0.0))) / n

    loss = cross_entropy(p, q)
    kl = kl_divergence(p, q)
    if not (math.isfinite(loss) and math.isfinite(kl)):
        raise TrainingError(f"non-finite loss at step {state.step} (image {example.id})", state)

    grad = scorer.backward(score_gradient(p, q) / n)
    state.velocity = config.momentum * state.velocity - config.lr_at(state.step) * grad
    scorer.set_params(scorer.get_params() + state.velocity)
    state.step += 1
    state.metrics.append({"step": state.step, "loss": loss, "kl": kl, "violation": violation})
    return state


def predict(scorer, examples):
    return np.stack([np.argmax(scorer.forward(ex.features), axis=1).reshape(ex.mask.shape) for ex in examples])


def evaluate_iou(scorer, examples):
    if not examples:
        return float("nan")
    m = examples[0].features.shape[-1]
    return mean_iou(predict(scorer, examples), np.stack([ex.mask for ex in examples]), m)[1]


def supervised_ids(dataset, fraction, seed):
    """Ids of the images trained with their ground-truth masks."""
    count = int(round(fraction * len(dataset)))
    rng = np.random.default_rng([seed, 1])
    chosen = rng.permutation(len(dataset))[:count]
    return frozenset(dataset[i].id for i in chosen)


def train(dataset, config, scorer=None, val=None):
    """Run ``config.max_steps`` single-image steps over seeded shuffles of ``dataset``.

    Returns the final :class:`TrainState`; ``state.metrics`` has one row per
    step with IoU columns filled at evaluation steps.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if scorer is None:
        scorer = linear_scorer(dataset[0].features.shape[-1], dataset[0].features.shape[-1], config.seed)
    state = TrainState(scorer)
    sup = supervised_ids(dataset, config.supervised_fraction, config.seed)
    rng = np.random.default_rng([config.seed, 0])
    order = []
    while state.step < config.max_steps:
        if not order:
            order = list(rng.permutation(len(dataset)))
        ex = dataset[order.pop(0)]
        train_step(state, ex, config, supervised=ex.id in sup)
        last = state.step == config.max_steps
        if last or (config.eval_every and state.step % config.eval_every == 0):
            state.metrics[-1]["iou_train"] = evaluate_iou(scorer, dataset)
            if val:
                state.metrics[-1]["iou_val"] = evaluate_iou(scorer, val)
    return state


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def metrics_csv(metrics):
    """Render metric rows as CSV text with a fixed header."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for row in metrics:
        writer.writerow([_fmt(row.get(k)) for k in METRIC_FIELDS])
    return buf.getvalue()
