"""Minimal feed-forward embedding networks with exact reverse-mode gradients.

Layout: input -> hidden layers (relu/tanh) -> linear embedding layer. The
embedding head L2-normalizes each row; the classification head reads the
pre-normalization features. An optional linear projection head (used when a
teacher has a different embedding width) hangs off the normalized embeddings.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericalError

CHECKPOINT_MAGIC = "DRKNET1"

# pre-normalization rows shorter than this indicate embedding collapse
COLLAPSE_NORM = 1e-12

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple
    embed_dim: int
    num_classes: int
    activation: str = "relu"
    seed: int = 0
    proj_dim: int | None = None  # extra embedding-regression head, None = absent

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        dims = (self.input_dim, self.embed_dim, self.num_classes) + self.hidden_layers
        if any(d < 1 for d in dims):
            raise InputError("all network dimensions must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise InputError(f"activation must be one of {_ACTIVATIONS}")
        if self.proj_dim is not None and self.proj_dim < 1:
            raise InputError("proj_dim must be >= 1 when set")

    def layer_dims(self):
        """Widths of the linear chain: input, hiddens, embedding."""
        return (self.input_dim,) + self.hidden_layers + (self.embed_dim,)


@dataclass
class NetworkState:
    spec: NetworkSpec
    weights: list          # per linear layer, (fan_in, fan_out)
    biases: list
    cls_weight: np.ndarray  # (embed_dim, num_classes), reads pre-norm features
    cls_bias: np.ndarray
    proj_weight: np.ndarray | None = None
    proj_bias: np.ndarray | None = None

    def parameters(self) -> list:
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        params += [self.cls_weight, self.cls_bias]
        if self.proj_weight is not None:
            params += [self.proj_weight, self.proj_bias]
        return params

    def copy(self) -> "NetworkState":
        return NetworkState(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            cls_weight=self.cls_weight.copy(),
            cls_bias=self.cls_bias.copy(),
            proj_weight=None if self.proj_weight is None else self.proj_weight.copy(),
            proj_bias=None if self.proj_bias is None else self.proj_bias.copy(),
        )


def init(spec: NetworkSpec) -> NetworkState:
    """Deterministic initialization: N(0, 1/fan_in) weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims()
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    cls_w = rng.normal(0.0, 1.0 / np.sqrt(spec.embed_dim), size=(spec.embed_dim, spec.num_classes))
    cls_b = np.zeros(spec.num_classes)
    proj_w = proj_b = None
    if spec.proj_dim is not None:
        proj_w = rng.normal(0.0, 1.0 / np.sqrt(spec.embed_dim), size=(spec.embed_dim, spec.proj_dim))
        proj_b = np.zeros(spec.proj_dim)
    return NetworkState(spec=spec, weights=weights, biases=biases,
                        cls_weight=cls_w, cls_bias=cls_b,
                        proj_weight=proj_w, proj_bias=proj_b)


@dataclass
class Tape:
    """Intermediates recorded by forward for the backward pass."""

    inputs: np.ndarray
    pre_acts: list = field(default_factory=list)   # hidden pre-activations
    acts: list = field(default_factory=list)       # hidden activations (inputs to next layer)
    pre_norm: np.ndarray | None = None             # embedding-layer output Z
    norms: np.ndarray | None = None                # per-row ||Z||
    unit: np.ndarray | None = None                 # Z / ||Z||


@dataclass
class ForwardPass:
    embeddings: np.ndarray        # (n, embed_dim), unit rows
    logits: np.ndarray            # (n, num_classes)
    tape: Tape
    projected: np.ndarray | None = None


def forward(state: NetworkState, inputs) -> ForwardPass:
    """Run the network; raises NumericalError if an embedding row collapses."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != state.spec.input_dim:
        raise InputError(f"inputs must be (n, {state.spec.input_dim})")
    tape = Tape(inputs=x)
    a = x
    n_hidden = len(state.spec.hidden_layers)
    for i in range(n_hidden):
        h = a @ state.weights[i] + state.biases[i]
        a = np.maximum(h, 0.0) if state.spec.activation == "relu" else np.tanh(h)
        tape.pre_acts.append(h)
        tape.acts.append(a)
    z = a @ state.weights[-1] + state.biases[-1]
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms < COLLAPSE_NORM):
        row = int(np.argmin(norms))
        raise NumericalError(f"embedding row {row} collapsed (norm {float(norms[row, 0]):.3g})")
    unit = z / norms
    logits = z @ state.cls_weight + state.cls_bias
    tape.pre_norm, tape.norms, tape.unit = z, norms, unit
    projected = None
    if state.proj_weight is not None:
        projected = unit @ state.proj_weight + state.proj_bias
    return ForwardPass(embeddings=unit, logits=logits, tape=tape, projected=projected)


def backward(state: NetworkState, tape: Tape, embedding_grads, logit_grads,
             proj_grads=None) -> list:
    """Exact parameter gradients given upstream gradients on the heads.

    Returns arrays aligned with ``state.parameters()``. The normalization
    Jacobian is (I - u u^T)/||z|| per row, which annihilates the radial
    direction of the upstream gradient.
    """
    d_unit = np.zeros_like(tape.unit) if embedding_grads is None \
        else np.asarray(embedding_grads, dtype=np.float64)
    if d_unit.shape != tape.unit.shape:
        raise InputError("embedding_grads shape mismatch")

    grads = []
    proj_param_grads = []
    if state.proj_weight is not None:
        d_proj = np.zeros((tape.unit.shape[0], state.proj_weight.shape[1])) \
            if proj_grads is None else np.asarray(proj_grads, dtype=np.float64)
        proj_param_grads = [tape.unit.T @ d_proj, d_proj.sum(axis=0)]
        d_unit = d_unit + d_proj @ state.proj_weight.T
    elif proj_grads is not None:
        raise InputError("proj_grads given but the network has no projection head")

    # through L2 normalization: dZ = (dU - (dU . u) u) / ||z||
    radial = (d_unit * tape.unit).sum(axis=1, keepdims=True)
    dz = (d_unit - radial * tape.unit) / tape.norms

    cls_w_grad = np.zeros_like(state.cls_weight)
    cls_b_grad = np.zeros_like(state.cls_bias)
    if logit_grads is not None:
        d_logits = np.asarray(logit_grads, dtype=np.float64)
        if d_logits.shape != (tape.pre_norm.shape[0], state.spec.num_classes):
            raise InputError("logit_grads shape mismatch")
        cls_w_grad = tape.pre_norm.T @ d_logits
        cls_b_grad = d_logits.sum(axis=0)
        dz = dz + d_logits @ state.cls_weight.T

    n_hidden = len(state.spec.hidden_layers)
    d_out = dz
    layer_grads = []
    for i in range(n_hidden, -1, -1):
        layer_in = tape.inputs if i == 0 else tape.acts[i - 1]
        layer_grads.append((layer_in.T @ d_out, d_out.sum(axis=0)))
        if i == 0:
            break
        d_act = d_out @ state.weights[i].T
        if state.spec.activation == "relu":
            d_out = d_act * (tape.pre_acts[i - 1] > 0.0)
        else:
            d_out = d_act * (1.0 - tape.acts[i - 1] ** 2)
    for w_grad, b_grad in reversed(layer_grads):
        grads += [w_grad, b_grad]
    grads += [cls_w_grad, cls_b_grad]
    grads += proj_param_grads
    return grads


def save_checkpoint(state: NetworkState, path) -> None:
    """Write a DRKNET1 checkpoint: JSON with the spec and exact parameters."""
    spec = state.spec
    doc = {
        "format": CHECKPOINT_MAGIC,
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_layers": list(spec.hidden_layers),
            "embed_dim": spec.embed_dim,
            "num_classes": spec.num_classes,
            "activation": spec.activation,
            "seed": spec.seed,
            "proj_dim": spec.proj_dim,
        },
        "params": {
            "weights": [w.tolist() for w in state.weights],
            "biases": [b.tolist() for b in state.biases],
            "cls_weight": state.cls_weight.tolist(),
            "cls_bias": state.cls_bias.tolist(),
            "proj_weight": None if state.proj_weight is None else state.proj_weight.tolist(),
            "proj_bias": None if state.proj_bias is None else state.proj_bias.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> NetworkState:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"not a valid checkpoint file: {exc}") from exc
    if doc.get("format") != CHECKPOINT_MAGIC:
        raise InputError(f"bad checkpoint magic: expected {CHECKPOINT_MAGIC!r}")
    spec = NetworkSpec(
        input_dim=doc["spec"]["input_dim"],
        hidden_layers=tuple(doc["spec"]["hidden_layers"]),
        embed_dim=doc["spec"]["embed_dim"],
        num_classes=doc["spec"]["num_classes"],
        activation=doc["spec"]["activation"],
        seed=doc["spec"]["seed"],
        proj_dim=doc["spec"]["proj_dim"],
    )
    params = doc["params"]
    state = NetworkState(
        spec=spec,
        weights=[np.asarray(w, dtype=np.float64) for w in params["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in params["biases"]],
        cls_weight=np.asarray(params["cls_weight"], dtype=np.float64),
        cls_bias=np.asarray(params["cls_bias"], dtype=np.float64),
        proj_weight=None if params["proj_weight"] is None
        else np.asarray(params["proj_weight"], dtype=np.float64),
        proj_bias=None if params["proj_bias"] is None
        else np.asarray(params["proj_bias"], dtype=np.float64),
    )
    dims = spec.layer_dims()
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if state.weights[i].shape != (fan_in, fan_out) or state.biases[i].shape != (fan_out,):
            raise InputError(f"checkpoint layer {i} shape inconsistent with its spec")
    return state
