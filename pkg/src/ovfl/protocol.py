"""Online vertical federated training rounds and the CC / LC baselines.

One OVFL round:

1. every SU embeds its fresh training rows with its round-start extractor and
   quantizes the embedding (uplink);
2. the fusion centre quantizes its round-start head and broadcasts the head
   plus all quantized embeddings (the round's *representation*, downlink);
3. for ``E`` local iterations each party takes a gradient step on its own
   parameters. The head uses the stale quantized embeddings; SU ``k`` swaps
   its own fresh embedding into slot ``k`` and backpropagates through the
   quantized head. The representation never changes inside the round, so
   parties are independent and simulating them one after another is exact.

Party index 0 is the fusion centre (head), ``k >= 1`` is SU ``k``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .environment import RoundDataset
from .errors import ConfigError, NumericDivergenceError, ProtocolError, ShapeError
from .nn_core import MlpParams, SplitModel, backward, forward, mse_grad, mse_loss, predict, sgd_step
from .quantize import FLOAT_BITS, QuantizerSpec, quantize

ALGORITHMS = ("ovfl", "cc", "lc")
EVAL_MODES = ("full_precision", "quantized")


@dataclass(frozen=True)
class ProtocolConfig:
    E: int = 1
    eta: float = 1e-4
    quantizer: QuantizerSpec = QuantizerSpec()
    eval_mode: str = "full_precision"
    weight_clip: Optional[float] = None  # project every parameter into [-c, c] after each step

    def __post_init__(self):
        if self.E < 1:
            raise ConfigError(f"must be >= 1, got {self.E}", field="E")
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ConfigError(f"must be finite and >= 0, got {self.eta}", field="eta")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"must be one of {EVAL_MODES}, got {self.eval_mode!r}", field="eval_mode")
        if self.weight_clip is not None and not self.weight_clip > 0:
            raise ConfigError(f"must be positive, got {self.weight_clip}", field="weight_clip")


@dataclass
class TrainerState:
    model: SplitModel
    config: ProtocolConfig
    t: int = 0  # completed rounds


@dataclass
class ModelRepresentation:
    head_q: MlpParams
    embeddings_q: List[np.ndarray]
    bits_up: List[int]
    bits_down: int

    @property
    def num_rows(self) -> int:
        return self.embeddings_q[0].shape[0]


@dataclass
class RoundMetrics:
    round: int
    train_loss_pre: float
    test_loss: float
    bits_uplink: int
    bits_downlink: int
    wall_time: float = 0.0


@dataclass
class IterationProbe:
    """Per local iteration: applied vs. unquantized gradient summaries."""

    round: int
    tau: int
    grad_norms: List[float]  # ||G_k|| without quantization, one per party
    max_gap: float  # max_d |G_hat_d - G_d|
    theta_max_abs: float


@dataclass
class GradientTrace:
    """Per-iteration gradient summaries collected when tracing is enabled."""

    iterations: List[IterationProbe] = field(default_factory=list)
    # ||G_k^{tau'} - G_k^{tau}|| / ||theta_k^{tau'} - theta_k^{tau}|| samples
    smoothness_ratios: List[float] = field(default_factory=list)
    num_params: int = 0
    max_pairs_per_round: int = 100
    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)


# -- representation and gradients --------------------------------------------

def quantize_params(params: MlpParams, spec: QuantizerSpec):
    """Quantize every weight matrix and bias vector as its own tensor."""
    ws, bs, bits = [], [], 0
    for w, b in zip(params.weights, params.biases):
        qw, qb = quantize(w, spec), quantize(b, spec)
        ws.append(qw.reconstructed)
        bs.append(qb.reconstructed)
        bits += qw.bits + qb.bits
    return MlpParams(params.layer_sizes, ws, bs), bits


def build_representation(model: SplitModel, features: Sequence[np.ndarray], spec: QuantizerSpec) -> ModelRepresentation:
    if len(features) != model.num_sus:
        raise ShapeError(f"{len(features)} feature blocks for {model.num_sus} SUs")
    embeddings, bits_up = [], []
    for ext, x in zip(model.extractors, features):
        q = quantize(predict(ext, x), spec)
        embeddings.append(q.reconstructed)
        bits_up.append(q.bits)
    head_q, head_bits = quantize_params(model.head, spec)
    per_su = head_bits + sum(bits_up)
    return ModelRepresentation(head_q, embeddings, bits_up, model.num_sus * per_su)


def _slot_bounds(embeddings: Sequence[np.ndarray], k: int):
    start = sum(e.shape[1] for e in embeddings[:k - 1])
    return start, start + embeddings[k - 1].shape[1]


def partial_gradient(k: int, rep: ModelRepresentation, own_params: MlpParams,
                     own_features: Optional[np.ndarray], labels: np.ndarray) -> MlpParams:
    """Gradient of the round loss w.r.t. party ``k``'s parameters.

    ``k == 0``: the head's own (current) parameters against the stale
    quantized embeddings. ``k >= 1``: SU k's fresh embedding replaces slot k,
    the rest of the representation (including the quantized head) is frozen.
    """
    if rep is None:
        raise ProtocolError("no model representation for this round")
    if k == 0:
        tape = forward(own_params, np.concatenate(rep.embeddings_q, axis=1))
        grads, _ = backward(own_params, tape, mse_grad(tape.output, labels))
        return grads
    if not 1 <= k <= len(rep.embeddings_q):
        raise ProtocolError(f"party index {k} out of range for {len(rep.embeddings_q)} SUs")
    if own_features is None:
        raise ProtocolError(f"SU {k} needs its own features")
    ext_tape = forward(own_params, own_features)
    slots = list(rep.embeddings_q)
    slots[k - 1] = ext_tape.output
    head_tape = forward(rep.head_q, np.concatenate(slots, axis=1))
    _, z_grad = backward(rep.head_q, head_tape, mse_grad(head_tape.output, labels))
    lo, hi = _slot_bounds(slots, k)
    grads, _ = backward(own_params, ext_tape, z_grad[:, lo:hi])
    return grads


def model_output(model: SplitModel, features: Sequence[np.ndarray], spec: Optional[QuantizerSpec] = None) -> np.ndarray:
    embs = [predict(e, x) for e, x in zip(model.extractors, features)]
    if spec is not None:
        embs = [quantize(h, spec).reconstructed for h in embs]
    return predict(model.head, np.concatenate(embs, axis=1))


def round_loss(model: SplitModel, features: Sequence[np.ndarray], labels: np.ndarray) -> float:
    """Full-precision split-model MSE on the given rows."""
    return mse_loss(model_output(model, features), labels)


def joint_gradients(model: SplitModel, features: Sequence[np.ndarray], labels: np.ndarray):
    """Loss and exact gradients of the composite network for every party (head first)."""
    tapes = [forward(e, x) for e, x in zip(model.extractors, features)]
    embs = [tp.output for tp in tapes]
    head_tape = forward(model.head, np.concatenate(embs, axis=1))
    loss = mse_loss(head_tape.output, labels)
    head_grads, z_grad = backward(model.head, head_tape, mse_grad(head_tape.output, labels))
    grads = [head_grads]
    for k, (ext, tp) in enumerate(zip(model.extractors, tapes), start=1):
        lo, hi = _slot_bounds(embs, k)
        g, _ = backward(ext, tp, z_grad[:, lo:hi])
        grads.append(g)
    return loss, grads


def evaluate(model: SplitModel, data: RoundDataset, mode: str = "full_precision",
             spec: Optional[QuantizerSpec] = None) -> float:
    """Test-row MSE; ``mode='quantized'`` passes embeddings through ``spec`` first."""
    if mode not in EVAL_MODES:
        raise ConfigError(f"must be one of {EVAL_MODES}, got {mode!r}", field="eval_mode")
    if data.labels.shape[0] - data.n_train < 1:
        raise ShapeError("round has no test rows")
    q = spec if mode == "quantized" else None
    return mse_loss(model_output(model, data.test_features, q), data.test_labels)


def _check_dims(model: SplitModel, data: RoundDataset):
    if data.num_sus != model.num_sus:
        raise ShapeError(f"data has {data.num_sus} SUs, model has {model.num_sus}")
    for k, (ext, f) in enumerate(zip(model.extractors, data.features), start=1):
        if f.shape[1] != ext.in_size:
            raise ShapeError(f"SU {k}: feature dim {f.shape[1]} != extractor input {ext.in_size}")
    if data.labels.shape[1] != model.head.out_size:
        raise ShapeError(f"label dim {data.labels.shape[1]} != head output {model.head.out_size}")


def _finite_or_raise(value: float, t: int, what: str) -> float:
    if not np.isfinite(value):
        raise NumericDivergenceError(f"non-finite {what}", round_index=t)
    return value


# -- rounds ------------------------------------------------------------------

def ovfl_round(state: TrainerState, data: RoundDataset, trace: Optional[GradientTrace] = None,
               party_order: Optional[Sequence[int]] = None):
    """Run one global round. Returns ``(new_state, metrics)``; ``state`` is not mutated."""
    _check_dims(state.model, data)
    cfg = state.config
    t = state.t + 1
    start = time.perf_counter()
    feats, labels = data.train_features, data.train_labels
    try:
        start_model = _clip_model(state.model, cfg.weight_clip)
        pre = _finite_or_raise(round_loss(start_model, feats, labels), t, "training loss")
        rep = build_representation(start_model, feats, cfg.quantizer)
        clean_rep = None
        if trace is not None:
            clean_rep = rep if cfg.quantizer.lossless else build_representation(start_model, feats, QuantizerSpec())
        parties = start_model.parties()
        order = list(range(len(parties))) if party_order is None else list(party_order)
        if sorted(order) != list(range(len(parties))):
            raise ProtocolError(f"party order {order} is not a permutation of 0..{len(parties) - 1}")
        history = []
        for tau in range(cfg.E):
            grads: List[Optional[MlpParams]] = [None] * len(parties)
            for k in order:
                x = feats[k - 1] if k >= 1 else None
                grads[k] = partial_gradient(k, rep, parties[k], x, labels)
            if trace is not None:
                history.append(_trace_iteration(trace, t, tau, rep, clean_rep, parties, grads, feats, labels))
            parties = [_step(p, g, cfg) for p, g in zip(parties, grads)]
        if trace is not None:
            _sample_smoothness(trace, history)
        model = SplitModel(parties[0], parties[1:])
        test = _finite_or_raise(_evaluate_cfg(model, data, cfg), t, "test loss")
    except NumericDivergenceError as exc:
        if exc.round_index is None:
            raise NumericDivergenceError(str(exc), round_index=t) from exc
        raise
    metrics = RoundMetrics(t, pre, test, int(sum(rep.bits_up)), int(rep.bits_down), time.perf_counter() - start)
    return replace(state, model=model, t=t), metrics


def _evaluate_cfg(model, data, cfg: ProtocolConfig) -> float:
    return evaluate(model, data, cfg.eval_mode, cfg.quantizer)


def _trace_iteration(trace, t, tau, rep, clean_rep, parties, grads, feats, labels):
    clean = grads if clean_rep is rep else [
        partial_gradient(k, clean_rep, p, feats[k - 1] if k >= 1 else None, labels) for k, p in enumerate(parties)]
    gap = 0.0
    if clean is not grads:
        gap = max(float(np.max(np.abs(a - b))) for g, c in zip(grads, clean)
                  for a, b in zip(g.arrays(), c.arrays()))
    norms = [float(np.linalg.norm(c.flatten())) for c in clean]
    theta_max = max(float(np.max(np.abs(a))) for p in parties for a in p.arrays())
    trace.num_params = sum(p.size for p in parties)
    trace.iterations.append(IterationProbe(t, tau, norms, gap, theta_max))
    return [p.flatten() for p in parties], [c.flatten() for c in clean]


def _sample_smoothness(trace: GradientTrace, history):
    E = len(history)
    pairs = [(a, b) for a in range(E) for b in range(a + 1, E)]
    if len(pairs) > trace.max_pairs_per_round:
        pick = trace._rng.choice(len(pairs), size=trace.max_pairs_per_round, replace=False)
        pairs = [pairs[i] for i in sorted(pick)]
    for a, b in pairs:
        thetas_a, grads_a = history[a]
        thetas_b, grads_b = history[b]
        for k in range(len(thetas_a)):
            dtheta = float(np.linalg.norm(thetas_b[k] - thetas_a[k]))
            if dtheta > 0:
                trace.smoothness_ratios.append(float(np.linalg.norm(grads_b[k] - grads_a[k])) / dtheta)


def _step(params: MlpParams, grads: MlpParams, cfg: ProtocolConfig) -> MlpParams:
    return _clip(sgd_step(params, grads, cfg.eta), cfg.weight_clip)


def _clip(params: MlpParams, bound: Optional[float]) -> MlpParams:
    if bound is None:
        return params
    return MlpParams(params.layer_sizes, [np.clip(w, -bound, bound) for w in params.weights],
                     [np.clip(b, -bound, bound) for b in params.biases])


def _clip_model(model: SplitModel, bound: Optional[float]) -> SplitModel:
    if bound is None:
        return model
    parties = [_clip(p, bound) for p in model.parties()]
    return SplitModel(parties[0], parties[1:])


def raw_uplink_bits(data: RoundDataset) -> int:
    """Bits to ship every SU's raw training rows as 32-bit floats."""
    return int(sum(f.shape[0] * f.shape[1] for f in data.train_features) * FLOAT_BITS)


def cc_round(state: TrainerState, data: RoundDataset):
    """Centralised baseline: E joint full-batch steps on the raw features at the FC."""
    _check_dims(state.model, data)
    cfg = state.config
    t = state.t + 1
    start = time.perf_counter()
    feats, labels = data.train_features, data.train_labels
    try:
        model = _clip_model(state.model, cfg.weight_clip)
        pre = None
        for _ in range(cfg.E):
            loss, grads = joint_gradients(model, feats, labels)
            if pre is None:
                pre = _finite_or_raise(loss, t, "training loss")
            parties = [_step(p, g, cfg) for p, g in zip(model.parties(), grads)]
            model = SplitModel(parties[0], parties[1:])
        test = _finite_or_raise(evaluate(model, data, "full_precision"), t, "test loss")
    except NumericDivergenceError as exc:
        if exc.round_index is None:
            raise NumericDivergenceError(str(exc), round_index=t) from exc
        raise
    metrics = RoundMetrics(t, pre, test, raw_uplink_bits(data), 0, time.perf_counter() - start)
    return replace(state, model=model, t=t), metrics


def lc_round(state: TrainerState, data: RoundDataset, freeze_after: int, trace: Optional[GradientTrace] = None):
    """OVFL until round ``freeze_after``; afterwards evaluate only, with no communication."""
    if freeze_after < 1:
        raise ConfigError(f"must be >= 1, got {freeze_after}", field="lc_freeze")
    t = state.t + 1
    if t <= freeze_after:
        return ovfl_round(state, data, trace=trace)
    _check_dims(state.model, data)
    start = time.perf_counter()
    pre = _finite_or_raise(round_loss(state.model, data.train_features, data.train_labels), t, "training loss")
    test = _finite_or_raise(_evaluate_cfg(state.model, data, state.config), t, "test loss")
    return replace(state, t=t), RoundMetrics(t, pre, test, 0, 0, time.perf_counter() - start)


def run_rounds(state: TrainerState, rounds: Sequence[RoundDataset], algorithm: str = "ovfl", lc_freeze: int = 50,
               trace: Optional[GradientTrace] = None,
               on_round_start: Optional[Callable[[TrainerState, RoundDataset], None]] = None):
    """Drive a whole run. Returns ``(final_state, [RoundMetrics, ...])``."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"must be one of {ALGORITHMS}, got {algorithm!r}", field="algorithm")
    metrics = []
    for data in rounds:
        if on_round_start is not None:
            on_round_start(state, data)
        if algorithm == "ovfl":
            state, m = ovfl_round(state, data, trace=trace)
        elif algorithm == "cc":
            state, m = cc_round(state, data)
        else:
            state, m = lc_round(state, data, lc_freeze, trace=trace)
        metrics.append(m)
    return state, metrics
