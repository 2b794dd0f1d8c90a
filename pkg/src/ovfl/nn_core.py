"""Dense MLP forward/backward, MSE loss and plain gradient steps.

Matrices are plain 2-D ``float64`` numpy arrays (rows = samples). Weight
matrices are stored ``out x in`` so a layer computes ``z = a @ W.T + b``.
Hidden layers use ReLU; the last layer of every MLP is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericDivergenceError, ShapeError


@dataclass
class MlpParams:
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ShapeError(f"expected {n} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for i in range(n):
            want = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if self.weights[i].shape != want:
                raise ShapeError(f"layer {i}: weight shape {self.weights[i].shape} != {want}")
            if self.biases[i].shape != (want[0],):
                raise ShapeError(f"layer {i}: bias shape {self.biases[i].shape} != {(want[0],)}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def in_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    @classmethod
    def from_flat(cls, layer_sizes: Sequence[int], flat: np.ndarray) -> "MlpParams":
        flat = np.asarray(flat, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(flat[pos:pos + n_out * n_in].reshape(n_out, n_in).copy())
            pos += n_out * n_in
            biases.append(flat[pos:pos + n_out].copy())
            pos += n_out
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, layout needs {pos}")
        return cls(tuple(layer_sizes), weights, biases)


@dataclass
class ActivationTape:
    """Per-layer pre-activations ``z`` and post-activations ``a``.

    ``activations[0]`` is the input; ``activations[-1]`` is the network output.
    """

    pre: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


@dataclass
class SplitModel:
    """Head (fusion-centre) MLP plus one feature extractor per SU.

    The flattened parameter vector orders the head first, then extractors by
    SU index; inside each MLP, layer by layer, weights (row-major) then biases.
    """

    head: MlpParams
    extractors: List[MlpParams]

    def __post_init__(self):
        total = sum(e.out_size for e in self.extractors)
        if total != self.head.in_size:
            raise ShapeError(f"head input {self.head.in_size} != sum of embedding sizes {total}")

    @property
    def num_sus(self) -> int:
        return len(self.extractors)

    def parties(self) -> List[MlpParams]:
        """Index 0 is the head, k >= 1 is SU k's extractor."""
        return [self.head, *self.extractors]

    def copy(self) -> "SplitModel":
        return SplitModel(self.head.copy(), [e.copy() for e in self.extractors])

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.flatten() for p in self.parties()])

    @property
    def size(self) -> int:
        return sum(p.size for p in self.parties())

    def from_flat(self, flat: np.ndarray) -> "SplitModel":
        """Model with this model's architecture and the given flat parameters."""
        parts, pos = [], 0
        for p in self.parties():
            parts.append(MlpParams.from_flat(p.layer_sizes, flat[pos:pos + p.size]))
            pos += p.size
        if pos != len(flat):
            raise ShapeError(f"flat vector has {len(flat)} entries, model needs {pos}")
        return SplitModel(parts[0], parts[1:])


def init_mlp(layer_sizes: Sequence[int], rng_seed: int) -> MlpParams:
    """Glorot-uniform weights in +-sqrt(6/(in+out)), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"layer sizes must have length >= 2 and entries >= 1, got {list(layer_sizes)}",
                          field="layer_sizes")
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(sizes, weights, biases)


def init_split_model(extractor_sizes: Sequence[int], head_hidden: Sequence[int], num_sus: int,
                     num_outputs: int, rng_seed: int) -> SplitModel:
    """Build a split model; each party gets its own child seed."""
    seeds = np.random.SeedSequence(rng_seed).spawn(num_sus + 1)
    extractors = [init_mlp(extractor_sizes, int(s.generate_state(1)[0])) for s in seeds[1:]]
    head_sizes = (extractor_sizes[-1] * num_sus, *head_hidden, num_outputs)
    head = init_mlp(head_sizes, int(seeds[0].generate_state(1)[0]))
    return SplitModel(head, extractors)


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def forward(params: MlpParams, x: np.ndarray) -> ActivationTape:
    x = _as_matrix(x)
    if x.shape[1] != params.in_size:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {params.in_size}")
    tape = ActivationTape(pre=[], activations=[x])
    a = x
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = z if i == last else np.maximum(z, 0.0)
        tape.pre.append(z)
        tape.activations.append(a)
    return tape


def predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x).output


def mse_loss(pred: np.ndarray, labels: np.ndarray) -> float:
    pred, labels = _as_matrix(pred), _as_matrix(labels)
    if pred.shape != labels.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {labels.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean((pred - labels) ** 2))
    if not np.isfinite(loss):
        raise NumericDivergenceError("non-finite MSE loss")
    return loss


def mse_grad(pred: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mse)/d(pred) = 2 (pred - labels) / (M d)."""
    pred, labels = _as_matrix(pred), _as_matrix(labels)
    if pred.shape != labels.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {labels.shape}")
    return 2.0 * (pred - labels) / pred.size


def backward(params: MlpParams, tape: ActivationTape, output_grad: np.ndarray) -> Tuple[MlpParams, np.ndarray]:
    """Reverse-mode pass. Returns (parameter gradients, gradient w.r.t. the input)."""
    if len(tape.pre) != params.num_layers or len(tape.activations) != params.num_layers + 1:
        raise ShapeError("activation tape does not match network depth")
    g = _as_matrix(output_grad)
    if g.shape != tape.output.shape:
        raise ShapeError(f"output gradient shape {g.shape} != forward output shape {tape.output.shape}")
    n = params.num_layers
    gw: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: List[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (tape.pre[i] > 0.0)
        gw[i] = g.T @ tape.activations[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return MlpParams(params.layer_sizes, gw, gb), g


def sgd_step(params: MlpParams, grads: MlpParams, eta: float) -> MlpParams:
    if eta < 0:
        raise ConfigError(f"learning rate must be non-negative, got {eta}", field="eta")
    if grads.layer_sizes != params.layer_sizes:
        raise ShapeError(f"gradient layout {grads.layer_sizes} != parameter layout {params.layer_sizes}")
    weights = [w - eta * gw for w, gw in zip(params.weights, grads.weights)]
    biases = [b - eta * gb for b, gb in zip(params.biases, grads.biases)]
    for a in (*weights, *biases):
        if not np.all(np.isfinite(a)):
            raise NumericDivergenceError("non-finite parameters after gradient step")
    return MlpParams(params.layer_sizes, weights, biases)


def grad_norm(grads: MlpParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays())))
