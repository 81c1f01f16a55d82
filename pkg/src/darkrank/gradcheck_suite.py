"""Standard gradient-check suite: every loss in the package plus the full
network composition, checked against central finite differences.

Each entry is a factory ``f(rng) -> (point, loss_fn, grad_fn)``. Hinge losses
are sampled off their boundaries so the finite-difference window never
straddles a kink.
"""

import numpy as np

from . import losses as aux
from . import network as net
from . import ranking
from .losses import KDParams, MarginParams
from .trainer import ExperimentConfig, Schedule, StepObjective, assemble_batch
from .types import LogitsBatch

HINGE_GAP = 1e-3


def _rand_scores(rng, n):
    return rng.normal(0.0, 1.5, size=n)


def _perm_log_prob(rng):
    n = int(rng.integers(2, 7))
    point = _rand_scores(rng, n)
    perm = rng.permutation(n)
    return (point,
            lambda x: ranking.perm_log_prob(x, perm),
            lambda x: ranking.perm_log_prob_grad(x, perm))


def _soft(rng):
    n = int(rng.integers(2, 7))
    teacher = _rand_scores(rng, n)
    point = _rand_scores(rng, n)
    return (point,
            lambda x: ranking.soft_darkrank_loss(teacher, x).value,
            lambda x: ranking.soft_darkrank_loss(teacher, x).grad)


def _hard(rng):
    n = int(rng.integers(2, 12))
    teacher = _rand_scores(rng, n)
    point = _rand_scores(rng, n)
    return (point,
            lambda x: ranking.hard_darkrank_loss(teacher, x).value,
            lambda x: ranking.hard_darkrank_loss(teacher, x).grad)


def _listnet(rng):
    n = int(rng.integers(2, 7))
    truth = _rand_scores(rng, n)
    point = _rand_scores(rng, n)
    return (point,
            lambda x: ranking.listnet_loss(truth, x).value,
            lambda x: ranking.listnet_loss(truth, x).grad)


def _listmle(rng):
    n = int(rng.integers(2, 10))
    target = rng.permutation(n)
    point = _rand_scores(rng, n)
    return (point,
            lambda x: ranking.listmle_loss(target, x).value,
            lambda x: ranking.listmle_loss(target, x).grad)


def _score_chain(rng):
    """Jacobian of batch scores with respect to the embedding rows."""
    n, d = int(rng.integers(3, 7)), 6
    rows = rng.normal(size=(n, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    upstream = rng.normal(size=n - 1)
    params = ranking.ScoreParams(alpha=3.0, beta=3.0)
    return (rows,
            lambda x: float(upstream @ ranking.batch_scores(x, params).scores),
            lambda x: ranking.batch_scores(x, params).backprop(upstream))


def _kd(rng):
    n, c = int(rng.integers(2, 5)), int(rng.integers(2, 6))
    teacher = rng.normal(0.0, 2.0, size=(n, c))
    point = rng.normal(0.0, 2.0, size=(n, c))
    params = KDParams(temperature=float(rng.uniform(0.5, 5.0)))
    return (point,
            lambda x: aux.kd_loss(teacher, x, params).value,
            lambda x: aux.kd_loss(teacher, x, params).grad)


def _direct_match(rng):
    n, dt, ds = int(rng.integers(3, 6)), 5, 4
    teacher = rng.normal(size=(n, dt))
    point = rng.normal(size=(n, ds))
    return (point,
            lambda x: aux.direct_match_loss(teacher, x).value,
            lambda x: aux.direct_match_loss(teacher, x).grad)


def _fitnet(rng):
    n, d = int(rng.integers(2, 6)), 5
    teacher = rng.normal(size=(n, d))
    point = rng.normal(size=(n, d))
    return (point,
            lambda x: aux.fitnet_loss(teacher, x).value,
            lambda x: aux.fitnet_loss(teacher, x).grad)


def _triplet(rng):
    d = 5
    params = MarginParams(margin=0.9)
    while True:
        point = rng.normal(size=(3, d))
        hinge = ((point[0] - point[1]) ** 2).sum() - ((point[0] - point[2]) ** 2).sum() \
            + params.margin
        if abs(hinge) > HINGE_GAP:
            break
    return (point,
            lambda x: aux.triplet_loss(x[0], x[1], x[2], params).value,
            lambda x: aux.triplet_loss(x[0], x[1], x[2], params).grad)


def _contrastive_positive(rng):
    d = 5
    params = MarginParams(margin=0.9)
    point = rng.normal(size=(2, d))
    return (point,
            lambda x: aux.contrastive_loss(x[0], x[1], True, params).value,
            lambda x: aux.contrastive_loss(x[0], x[1], True, params).grad)


def _contrastive_negative(rng):
    d = 5
    params = MarginParams(margin=0.9)
    while True:
        point = rng.normal(scale=0.5, size=(2, d))
        dist = np.linalg.norm(point[0] - point[1])
        if abs(params.margin - dist) > HINGE_GAP and dist > HINGE_GAP:
            break
    return (point,
            lambda x: aux.contrastive_loss(x[0], x[1], False, params).value,
            lambda x: aux.contrastive_loss(x[0], x[1], False, params).grad)


def _softmax_ce(rng):
    n, c = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    labels = rng.integers(0, c, size=n)
    point = rng.normal(0.0, 2.0, size=(n, c))
    return (point,
            lambda x: aux.softmax_ce_loss(LogitsBatch(x, labels)).value,
            lambda x: aux.softmax_ce_loss(LogitsBatch(x, labels)).grad)


def _flatten(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def _set_params(state, vec):
    offset = 0
    for p in state.parameters():
        p[...] = vec[offset:offset + p.size].reshape(p.shape)
        offset += p.size


def _composition_batch(rng, d_in):
    features = rng.normal(size=(8, d_in))
    labels = np.array([0, 0, 1, 1, 2, 2, 1, 0])
    return assemble_batch(features, labels, anchor=0, batch_size=5,
                          positives_per_batch=1, rng=rng)


def _hinges_off_boundary(student, batch, margin):
    fwd = net.forward(student, batch.inputs)
    u = fwd.embeddings
    tri = batch.triplets
    if len(tri):
        vals = ((u[tri[:, 0]] - u[tri[:, 1]]) ** 2).sum(axis=1) \
            - ((u[tri[:, 0]] - u[tri[:, 2]]) ** 2).sum(axis=1) + margin
        if np.any(np.abs(vals) <= HINGE_GAP):
            return False
    neg = batch.negative_pairs
    if len(neg):
        dists = np.linalg.norm(u[neg[:, 0]] - u[neg[:, 1]], axis=1)
        if np.any(np.abs(margin - dists) <= HINGE_GAP) or np.any(dists <= HINGE_GAP):
            return False
    return True


def _network_composition_factory(proj: bool):
    """Full training objective (all transfer components at once) through a
    small tanh network; gradient taken over every student parameter."""

    def factory(rng):
        d_in, embed, classes = 4, 5, 3
        teacher_embed = 7 if proj else embed
        config = ExperimentConfig(
            variant="soft+hard+direct_match+fitnet+kd",
            student_hidden=(5,),
            embed_dim=embed,
            teacher_embed_dim=teacher_embed,
            activation="tanh",
            batch_size=5,
            schedule=Schedule(epochs=1, decay_epochs=(), decay_factor=1.0),
        )
        while True:
            teacher = net.init(net.NetworkSpec(
                input_dim=d_in, hidden_layers=(6,), embed_dim=teacher_embed,
                num_classes=classes, activation="tanh",
                seed=int(rng.integers(2**31 - 1))))
            student = net.init(net.NetworkSpec(
                input_dim=d_in, hidden_layers=(5,), embed_dim=embed,
                num_classes=classes, activation="tanh",
                seed=int(rng.integers(2**31 - 1)),
                proj_dim=teacher_embed if proj else None))
            batch = _composition_batch(rng, d_in)
            objective = StepObjective(config, teacher)
            if _hinges_off_boundary(student, batch, config.margin.margin):
                break
        teacher_fwd = objective.teacher_forward(batch)
        point = _flatten(student.parameters())

        def loss_fn(vec):
            trial = student.copy()
            _set_params(trial, vec)
            _, total, _ = objective(trial, batch, teacher_fwd)
            return total

        def grad_fn(vec):
            trial = student.copy()
            _set_params(trial, vec)
            _, _, grads = objective(trial, batch, teacher_fwd)
            return _flatten(grads)

        return point, loss_fn, grad_fn

    return factory


def standard_checks() -> dict:
    return {
        "perm_log_prob": _perm_log_prob,
        "soft_darkrank": _soft,
        "hard_darkrank": _hard,
        "listnet": _listnet,
        "listmle": _listmle,
        "score_chain": _score_chain,
        "kd": _kd,
        "direct_match": _direct_match,
        "fitnet": _fitnet,
        "triplet": _triplet,
        "contrastive_positive": _contrastive_positive,
        "contrastive_negative": _contrastive_negative,
        "softmax_ce": _softmax_ce,
        "network_composition": _network_composition_factory(proj=False),
        "network_composition_projection": _network_composition_factory(proj=True),
    }
