"""Distillation training loop: anchored batch assembly, weighted multi-loss
objective, SGD with momentum, step learning-rate schedule, teacher freezing."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses as aux
from . import metrics as metrics_mod
from . import network as net
from . import ranking
from .dataio import LabeledDataset, SynthSpec, generate, load
from .exceptions import (ConfigError, InputError, NumericalError,
                         TrainingDivergedError)
from .losses import KDParams, MarginParams
from .ranking import ScoreParams
from .types import LogitsBatch

TRANSFER_COMPONENTS = ("soft", "hard", "direct_match", "fitnet", "kd")


def parse_variant(variant: str) -> tuple:
    """Split a transfer variant like ``"kd+soft"`` into its components."""
    v = variant.strip().lower()
    if v == "none":
        return ()
    parts = tuple(p.strip() for p in v.split("+"))
    seen = []
    for p in parts:
        if p not in TRANSFER_COMPONENTS:
            raise ConfigError(
                f"unknown transfer variant {p!r}; expected 'none', one of "
                f"{TRANSFER_COMPONENTS}, or a '+' combination")
        if p in seen:
            raise ConfigError(f"transfer component {p!r} repeated in variant")
        seen.append(p)
    return parts


@dataclass(frozen=True)
class LossWeights:
    classification: float = 1.0
    verification: float = 5.0
    triplet: float = 0.1
    transfer: float = 2.0  # weight of the rank/embedding transfer term

    def __post_init__(self):
        for name in ("classification", "verification", "triplet", "transfer"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {name} must be >= 0, got {v}")


@dataclass(frozen=True)
class OptimizerParams:
    # 1e-3 keeps every transfer variant stable on from-scratch MLPs; the
    # 1e-2 used for fine-tuning pretrained CNNs blows up the classifier head
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


@dataclass(frozen=True)
class Schedule:
    epochs: int = 100
    decay_epochs: tuple = (50, 75)
    decay_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must lie in (0, 1]")
        for e in self.decay_epochs:
            if not 0 < e < self.epochs:
                raise ConfigError(f"decay epoch {e} outside (0, {self.epochs})")

    def lr_at(self, base_lr: float, epoch: int) -> float:
        n_decays = sum(1 for d in self.decay_epochs if epoch >= d)
        return base_lr * self.decay_factor**n_decays


@dataclass(frozen=True)
class ExperimentConfig:
    """Full declarative description of one training / distillation run."""

    dataset: object = None  # path string or SynthSpec; may be None if passed to train()
    variant: str = "none"
    teacher_hidden: tuple = (128, 128)
    student_hidden: tuple = (32,)
    embed_dim: int = 32
    teacher_embed_dim: int | None = None
    activation: str = "relu"
    weights: LossWeights = LossWeights()
    score: ScoreParams = ScoreParams()
    kd: KDParams = KDParams()
    margin: MarginParams = MarginParams()
    optimizer: OptimizerParams = OptimizerParams()
    schedule: Schedule = Schedule()
    batch_size: int = 8
    positives_per_batch: int = 1
    enumeration_cap: int = ranking.DEFAULT_ENUMERATION_CAP
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "teacher_hidden", tuple(int(w) for w in self.teacher_hidden))
        object.__setattr__(self, "student_hidden", tuple(int(w) for w in self.student_hidden))
        parse_variant(self.variant)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not 1 <= self.positives_per_batch <= self.batch_size - 2:
            raise ConfigError("positives_per_batch must lie in [1, batch_size - 2]")
        if self.enumeration_cap < 1:
            raise ConfigError("enumeration_cap must be >= 1")

    @property
    def resolved_teacher_embed_dim(self) -> int:
        return self.embed_dim if self.teacher_embed_dim is None else self.teacher_embed_dim

    def component_weights(self) -> dict:
        """Weight applied to each raw loss component in the total."""
        weights = {
            "classification": self.weights.classification,
            "verification": self.weights.verification,
            "triplet": self.weights.triplet,
        }
        for comp in parse_variant(self.variant):
            weights[comp] = self.kd.weight if comp == "kd" else self.weights.transfer
        return weights

    def to_dict(self) -> dict:
        dataset = self.dataset
        if isinstance(dataset, SynthSpec):
            dataset = {
                "num_identities": dataset.num_identities,
                "samples_per_identity": dataset.samples_per_identity,
                "feature_dim": dataset.feature_dim,
                "intra_class_stddev": dataset.intra_class_stddev,
                "inter_class_separation": dataset.inter_class_separation,
                "heldout_fraction": dataset.heldout_fraction,
                "seed": dataset.seed,
            }
        return {
            "version": 1,
            "dataset": dataset,
            "variant": self.variant,
            "teacher_hidden": list(self.teacher_hidden),
            "student_hidden": list(self.student_hidden),
            "embed_dim": self.embed_dim,
            "teacher_embed_dim": self.teacher_embed_dim,
            "activation": self.activation,
            "weights": {
                "classification": self.weights.classification,
                "verification": self.weights.verification,
                "triplet": self.weights.triplet,
                "transfer": self.weights.transfer,
            },
            "score": {"alpha": self.score.alpha, "beta": self.score.beta},
            "kd": {"temperature": self.kd.temperature, "weight": self.kd.weight},
            "margin": self.margin.margin,
            "optimizer": {
                "lr": self.optimizer.lr,
                "momentum": self.optimizer.momentum,
                "weight_decay": self.optimizer.weight_decay,
            },
            "schedule": {
                "epochs": self.schedule.epochs,
                "decay_epochs": list(self.schedule.decay_epochs),
                "decay_factor": self.schedule.decay_factor,
            },
            "batch_size": self.batch_size,
            "positives_per_batch": self.positives_per_batch,
            "enumeration_cap": self.enumeration_cap,
            "seed": self.seed,
        }


@dataclass
class Batch:
    """One assembled training batch; row 0 is the anchor query."""

    indices: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray          # remapped class labels
    positive_pairs: np.ndarray  # (P, 2) same-identity row pairs
    negative_pairs: np.ndarray  # (N, 2) cross-identity row pairs
    triplets: np.ndarray        # (T, 3) anchor-centric (0, pos, neg) rows


def assemble_batch(features, labels, anchor: int, batch_size: int,
                   positives_per_batch: int, rng) -> Batch:
    """Anchor + positives + negatives, with all pair and triplet index lists."""
    same = np.flatnonzero(labels == labels[anchor])
    same = same[same != anchor]
    others = np.flatnonzero(labels != labels[anchor])
    if same.size == 0 or others.size == 0:
        raise InputError("dataset too small: anchor needs a positive and negatives")
    k_pos = min(positives_per_batch, same.size, batch_size - 2)
    k_neg = batch_size - 1 - k_pos
    if others.size < k_neg:
        raise InputError(
            f"dataset too small: need {k_neg} negatives, only {others.size} available")
    positives = rng.choice(same, size=k_pos, replace=False)
    negatives = rng.choice(others, size=k_neg, replace=False)
    rows = np.concatenate([[anchor], positives, negatives])
    batch_labels = labels[rows]

    same_mat = batch_labels[:, None] == batch_labels[None, :]
    iu = np.triu_indices(batch_size, k=1)
    flags = same_mat[iu]
    pairs = np.column_stack(iu)
    pos_rows = np.flatnonzero(same_mat[0][1:]) + 1
    neg_rows = np.flatnonzero(~same_mat[0][1:]) + 1
    pp, nn = np.meshgrid(pos_rows, neg_rows, indexing="ij")
    triplets = np.column_stack([np.zeros(pp.size, dtype=np.intp), pp.ravel(), nn.ravel()])
    return Batch(
        indices=rows,
        inputs=features[rows],
        labels=batch_labels,
        positive_pairs=pairs[flags],
        negative_pairs=pairs[~flags],
        triplets=triplets,
    )


def contrastive_pairs(embeddings, pairs, same_flags, margin: float):
    """Mean verification loss over a pair list plus the embedding gradient.

    Vectorized equivalent of averaging ``losses.contrastive_loss`` over pairs.
    """
    grad = np.zeros_like(embeddings)
    n_pairs = len(pairs)
    if n_pairs == 0:
        return 0.0, grad
    diff = embeddings[pairs[:, 0]] - embeddings[pairs[:, 1]]
    d2 = (diff**2).sum(axis=1)
    dist = np.sqrt(d2)
    gap = margin - dist
    pos = same_flags
    neg_active = (~same_flags) & (gap > 0)
    values = np.where(pos, d2, np.where(neg_active, gap**2, 0.0))
    coef = np.zeros(n_pairs)
    coef[pos] = 2.0
    safe = neg_active & (dist > 1e-12)
    coef[safe] = -2.0 * gap[safe] / dist[safe]
    per_pair = coef[:, None] * diff / n_pairs
    np.add.at(grad, pairs[:, 0], per_pair)
    np.add.at(grad, pairs[:, 1], -per_pair)
    return float(values.mean()), grad


def triplet_rows(embeddings, triplets, margin: float):
    """Mean triplet loss over a triplet list plus the embedding gradient."""
    grad = np.zeros_like(embeddings)
    n_tri = len(triplets)
    if n_tri == 0:
        return 0.0, grad
    a = embeddings[triplets[:, 0]]
    p = embeddings[triplets[:, 1]]
    n = embeddings[triplets[:, 2]]
    ap = a - p
    an = a - n
    values = (ap**2).sum(axis=1) - (an**2).sum(axis=1) + margin
    active = values > 0
    loss = float(np.where(active, values, 0.0).mean())
    scale = active[:, None] * (2.0 / n_tri)
    np.add.at(grad, triplets[:, 0], scale * (ap - an))
    np.add.at(grad, triplets[:, 1], -scale * ap)
    np.add.at(grad, triplets[:, 2], scale * an)
    return loss, grad


@dataclass
class TrainReport:
    config: dict
    seed: int
    component_weights: dict
    epochs: list = field(default_factory=list)  # {"epoch", "lr", "components", "total"}
    final_metrics: dict = field(default_factory=dict)
    num_steps: int = 0
    wall_time_sec: float = 0.0

    def deterministic_dict(self) -> dict:
        """Everything except wall time; byte-stable across identical runs."""
        return {
            "config": self.config,
            "seed": self.seed,
            "component_weights": self.component_weights,
            "epochs": self.epochs,
            "final_metrics": self.final_metrics,
            "num_steps": self.num_steps,
        }


class SGD:
    """SGD with momentum; weight decay enters as an L2 gradient term."""

    def __init__(self, params, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr: float):
        for p, g, v in zip(params, grads, self.velocity):
            g_eff = g + self.weight_decay * p
            v *= self.momentum
            v += g_eff
            p -= lr * v


def resolve_dataset(config: ExperimentConfig, dataset=None) -> LabeledDataset:
    if dataset is not None:
        return dataset
    src = config.dataset
    if isinstance(src, LabeledDataset):
        return src
    if isinstance(src, SynthSpec):
        return generate(src)
    if isinstance(src, str):
        return load(src)
    raise ConfigError("no dataset: config.dataset is unset and none was passed in")


def _remap_labels(identities):
    classes = np.unique(identities)
    lookup = {int(c): i for i, c in enumerate(classes)}
    return np.array([lookup[int(v)] for v in identities], dtype=np.intp), classes.size


class StepObjective:
    """Computes the weighted multi-loss objective and its head gradients for one
    batch. Shared between the training loop and the gradient-check suite so the
    checked composition is exactly what training optimizes."""

    def __init__(self, config: ExperimentConfig, teacher: net.NetworkState | None):
        self.config = config
        self.components = parse_variant(config.variant)
        self.teacher = teacher
        self.weights = config.component_weights()

    def teacher_forward(self, batch: Batch):
        if self.teacher is None:
            return None
        return net.forward(self.teacher, batch.inputs)

    def __call__(self, student: net.NetworkState, batch: Batch, teacher_fwd=None):
        """Returns (component values, total, parameter gradients)."""
        cfg = self.config
        fwd = net.forward(student, batch.inputs)
        u = fwd.embeddings
        if not np.all(np.isfinite(fwd.logits)):
            raise TrainingDivergedError("student logits became non-finite")
        if not np.all(np.isfinite(u)):
            raise TrainingDivergedError("student embeddings became non-finite")
        if teacher_fwd is None:
            teacher_fwd = self.teacher_forward(batch)

        values = {}
        d_embed = np.zeros_like(u)
        d_logits = np.zeros_like(fwd.logits)
        d_proj = None if fwd.projected is None else np.zeros_like(fwd.projected)

        ce = aux.softmax_ce_loss(LogitsBatch(fwd.logits, batch.labels))
        values["classification"] = ce.value
        d_logits += self.weights["classification"] * ce.grad

        all_pairs = np.concatenate([batch.positive_pairs, batch.negative_pairs])
        flags = np.concatenate([
            np.ones(len(batch.positive_pairs), dtype=bool),
            np.zeros(len(batch.negative_pairs), dtype=bool),
        ])
        ver_value, ver_grad = contrastive_pairs(u, all_pairs, flags, cfg.margin.margin)
        values["verification"] = ver_value
        d_embed += self.weights["verification"] * ver_grad

        tri_value, tri_grad = triplet_rows(u, batch.triplets, cfg.margin.margin)
        values["triplet"] = tri_value
        d_embed += self.weights["triplet"] * tri_grad

        if self.components:
            ut = teacher_fwd.embeddings
            if "soft" in self.components or "hard" in self.components:
                sb_t = ranking.batch_scores(ut, cfg.score)
                sb_s = ranking.batch_scores(u, cfg.score)
            if "soft" in self.components:
                res = ranking.soft_darkrank_loss(sb_t.scores, sb_s.scores,
                                                 cap=cfg.enumeration_cap)
                values["soft"] = res.value
                d_embed += self.weights["soft"] * sb_s.backprop(res.grad)
            if "hard" in self.components:
                res = ranking.hard_darkrank_loss(sb_t.scores, sb_s.scores)
                values["hard"] = res.value
                d_embed += self.weights["hard"] * sb_s.backprop(res.grad)
            if "direct_match" in self.components:
                res = aux.direct_match_loss(ut, u)
                values["direct_match"] = res.value
                d_embed += self.weights["direct_match"] * res.grad
            if "fitnet" in self.components:
                student_side = u if fwd.projected is None else fwd.projected
                res = aux.fitnet_loss(ut, student_side)
                values["fitnet"] = res.value
                if fwd.projected is None:
                    d_embed += self.weights["fitnet"] * res.grad
                else:
                    d_proj = d_proj + self.weights["fitnet"] * res.grad
            if "kd" in self.components:
                res = aux.kd_loss(teacher_fwd.logits, fwd.logits, cfg.kd)
                values["kd"] = res.value
                d_logits += self.weights["kd"] * res.grad

        total = sum(self.weights[name] * values[name] for name in values)
        grads = net.backward(student, fwd.tape, d_embed, d_logits, d_proj)
        return values, total, grads


def _check_finite(values: dict, epoch: int, step: int):
    for name, v in values.items():
        if not math.isfinite(v):
            raise TrainingDivergedError(
                f"loss component '{name}' is non-finite ({v}) at epoch {epoch} step {step}")


def train(config: ExperimentConfig, teacher: net.NetworkState | None = None,
          dataset: LabeledDataset | None = None):
    """Train a student network under ``config``; returns (state, report).

    ``teacher`` is required (and frozen) whenever the variant enables any
    transfer component.
    """
    data = resolve_dataset(config, dataset)
    components = parse_variant(config.variant)
    if components and teacher is None:
        raise ConfigError(f"variant {config.variant!r} needs a teacher checkpoint")

    feats, ids = data.subset("train")
    labels, num_classes = _remap_labels(ids)
    n_train = feats.shape[0]
    steps_per_epoch = n_train // config.batch_size
    if steps_per_epoch < 1:
        raise InputError("dataset too small for one batch per epoch")

    if teacher is not None:
        if teacher.spec.input_dim != feats.shape[1]:
            raise ConfigError("teacher input dimension does not match the dataset")
        if "kd" in components and teacher.spec.num_classes != num_classes:
            raise ConfigError("kd transfer needs matching teacher/student class counts")

    rng = np.random.default_rng(config.seed)
    init_seed = int(rng.integers(2**31 - 1))
    proj_dim = None
    if "fitnet" in components and teacher.spec.embed_dim != config.embed_dim:
        proj_dim = teacher.spec.embed_dim
    spec = net.NetworkSpec(
        input_dim=feats.shape[1],
        hidden_layers=config.student_hidden,
        embed_dim=config.embed_dim,
        num_classes=num_classes,
        activation=config.activation,
        seed=init_seed,
        proj_dim=proj_dim,
    )
    student = net.init(spec)
    return _run_loop(config, student, teacher, data, feats, labels, rng)


def train_teacher(config: ExperimentConfig, dataset: LabeledDataset | None = None):
    """Train the teacher-capacity network with the ground-truth losses only."""
    if parse_variant(config.variant):
        raise ConfigError("train_teacher requires variant='none' (transfer disabled)")
    data = resolve_dataset(config, dataset)
    feats, ids = data.subset("train")
    labels, num_classes = _remap_labels(ids)
    if feats.shape[0] // config.batch_size < 1:
        raise InputError("dataset too small for one batch per epoch")
    rng = np.random.default_rng(config.seed)
    init_seed = int(rng.integers(2**31 - 1))
    spec = net.NetworkSpec(
        input_dim=feats.shape[1],
        hidden_layers=config.teacher_hidden,
        embed_dim=config.resolved_teacher_embed_dim,
        num_classes=num_classes,
        activation=config.activation,
        seed=init_seed,
    )
    state = net.init(spec)
    return _run_loop(config, state, None, data, feats, labels, rng)


def _run_loop(config, state, teacher, data, feats, labels, rng):
    start = time.perf_counter()
    objective = StepObjective(config, teacher)
    params = state.parameters()
    sgd = SGD(params, config.optimizer.momentum, config.optimizer.weight_decay)
    steps_per_epoch = feats.shape[0] // config.batch_size
    report = TrainReport(
        config=config.to_dict(),
        seed=config.seed,
        component_weights=objective.weights,
    )
    for epoch in range(config.schedule.epochs):
        lr = config.schedule.lr_at(config.optimizer.lr, epoch)
        order = rng.permutation(feats.shape[0])
        sums = {}
        for step in range(steps_per_epoch):
            batch = assemble_batch(feats, labels, int(order[step]), config.batch_size,
                                   config.positives_per_batch, rng)
            try:
                values, _, grads = objective(state, batch)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch} step {step}") from None
            except NumericalError as exc:
                raise TrainingDivergedError(
                    f"{exc} at epoch {epoch} step {step}") from None
            _check_finite(values, epoch, step)
            sgd.step(params, grads, lr)
            for name, v in values.items():
                sums[name] = sums.get(name, 0.0) + v
        means = {name: v / steps_per_epoch for name, v in sums.items()}
        total = sum(objective.weights[name] * means[name] for name in means)
        report.epochs.append(
            {"epoch": epoch, "lr": lr, "components": means, "total": total})
        report.num_steps += steps_per_epoch
    report.final_metrics = evaluate_network(state, data, seed=config.seed)
    report.wall_time_sec = time.perf_counter() - start
    return state, report


def evaluate_network(state: net.NetworkState, data: LabeledDataset,
                     seed: int = 0) -> dict:
    """Embed the heldout split and compute every retrieval/clustering metric."""
    feats, ids = data.subset("heldout")
    if feats.shape[0] == 0:
        raise InputError("dataset has no heldout split")
    fwd = net.forward(state, feats)
    return metrics_mod.evaluate_embeddings(fwd.embeddings, ids, seed=seed)
