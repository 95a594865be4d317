"""Data encoders (MLP and residual) plus the scoring head and losses.

The encoder output E_X is the representation feeding the head; its width h
is the last hidden width for the MLP and the main stream width for the
residual variant.  Training-mode dropout masks derive from a counter-based
seed so a run is reproducible from its single seed; eval mode is
deterministic with dropout off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamSet, Tape
from .errors import NumericError, ShapeError

DEVIATION_MARGIN = 5.0
DEVIATION_PRIOR_SIZE = 5000


@dataclass
class EncoderSpec:
    kind: str  # "mlp" | "resnet"
    input_dim: int
    hidden: tuple[int, ...] = (32, 16)
    blocks: int = 2
    main_dim: int = 32
    dropout_first: float = 0.0
    dropout_second: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mlp", "resnet"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.input_dim <= 0 or any(w <= 0 for w in self.hidden):
            raise ValueError("widths must be positive")
        if self.kind == "resnet" and (self.blocks <= 0 or self.main_dim <= 0):
            raise ValueError("resnet needs positive block count and main width")
        for p in (self.dropout_first, self.dropout_second):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def embed_dim(self) -> int:
        return self.hidden[-1] if self.kind == "mlp" else self.main_dim


@dataclass
class HeadSpec:
    embed_dim: int
    hidden: tuple[int, ...] = ()
    transform: str = "sigmoid"  # "sigmoid" -> probabilities, "raw" -> scores

    def __post_init__(self):
        if self.transform not in ("sigmoid", "raw"):
            raise ValueError(f"unknown head transform {self.transform!r}")

    def widths(self) -> list[int]:
        return [self.embed_dim, *self.hidden, 1]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))


def init_encoder(spec: EncoderSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    if spec.kind == "mlp":
        widths = [spec.input_dim, *spec.hidden]
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            values[f"enc/w{i}"] = _glorot(rng, fi, fo)
            values[f"enc/b{i}"] = np.zeros((1, fo))
        return values
    values["enc/stem_w"] = _glorot(rng, spec.input_dim, spec.main_dim)
    values["enc/stem_b"] = np.zeros((1, spec.main_dim))
    width = spec.hidden[-1]
    for i in range(spec.blocks):
        values[f"enc/block{i}/w1"] = _glorot(rng, spec.main_dim, width)
        values[f"enc/block{i}/b1"] = np.zeros((1, width))
        values[f"enc/block{i}/w2"] = _glorot(rng, width, spec.main_dim)
        values[f"enc/block{i}/b2"] = np.zeros((1, spec.main_dim))
    return values


def init_head(spec: HeadSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    widths = spec.widths()
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        values[f"head/w{i}"] = _glorot(rng, fi, fo)
        values[f"head/b{i}"] = np.zeros((1, fo))
    return values


def _linear_named(tape: Tape, x: int, ids, w_name: str, b_name: str, rows: int) -> int:
    return tape.add(tape.matmul(x, ids[w_name]), tape.broadcast_row(ids[b_name], rows))


def _dropout(tape: Tape, x: int, rate: float, seed_parts: tuple[int, ...]) -> int:
    if rate <= 0.0:
        return x
    shape = tape.value(x).shape
    rng = np.random.default_rng(seed_parts)
    mask = (rng.random(shape) >= rate) / (1.0 - rate)
    return tape.hadamard(x, tape.leaf(mask))


def encode_tape(
    tape: Tape,
    x_id: int,
    spec: EncoderSpec,
    ids: dict[str, int],
    train: bool = False,
    dropout_seed: int | tuple[int, ...] = 0,
) -> int:
    """E_X for a batch node: hidden ReLU layers, identity on the output layer."""
    rows, cols = tape.value(x_id).shape
    if cols != spec.input_dim:
        raise ShapeError(f"input width {cols} != encoder width {spec.input_dim}")
    if spec.kind == "mlp":
        z = x_id
        n_layers = len(spec.hidden)
        for i in range(n_layers):
            z = _linear_named(tape, z, ids, f"enc/w{i}", f"enc/b{i}", rows)
            if i < n_layers - 1:
                z = tape.relu(z)
        return z
    seed = dropout_seed if isinstance(dropout_seed, tuple) else (dropout_seed,)
    z = _linear_named(tape, x_id, ids, "enc/stem_w", "enc/stem_b", rows)
    for i in range(spec.blocks):
        h = _linear_named(tape, z, ids, f"enc/block{i}/w1", f"enc/block{i}/b1", rows)
        h = tape.relu(h)
        if train:
            h = _dropout(tape, h, spec.dropout_first, (*seed, i, 0))
        h = _linear_named(tape, h, ids, f"enc/block{i}/w2", f"enc/block{i}/b2", rows)
        if train:
            h = _dropout(tape, h, spec.dropout_second, (*seed, i, 1))
        z = tape.add(z, h)
    return z


def score_tape(tape: Tape, e_id: int, spec: HeadSpec, ids: dict[str, int]) -> int:
    """One score per row of E_X."""
    rows, cols = tape.value(e_id).shape
    if cols != spec.embed_dim:
        raise ShapeError(f"embedding width {cols} != head width {spec.embed_dim}")
    z = e_id
    n_layers = len(spec.widths()) - 1
    for i in range(n_layers):
        z = _linear_named(tape, z, ids, f"head/w{i}", f"head/b{i}", rows)
        if i < n_layers - 1:
            z = tape.relu(z)
    if spec.transform == "sigmoid":
        z = tape.sigmoid(z)
    return z


def bce_loss_tape(tape: Tape, scores_id: int, labels: np.ndarray) -> int:
    """Mean binary cross-entropy for probability scores in (0, 1)."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    m = tape.value(scores_id).shape[0]
    if y.shape[0] != m:
        raise ShapeError(f"{y.shape[0]} labels for {m} scores")
    y_id = tape.leaf(y)
    one = tape.leaf(np.ones((m, 1)))
    pos = tape.hadamard(y_id, tape.log(scores_id))
    neg = tape.hadamard(tape.sub(one, y_id), tape.log(tape.sub(one, scores_id)))
    return tape.smul(tape.reduce_mean(tape.add(pos, neg)), -1.0)


def deviation_prior(seed: int, step: int, size: int = DEVIATION_PRIOR_SIZE) -> tuple[float, float]:
    """Mean/std of the standard-normal reference scores, fixed seed per step."""
    draws = np.random.default_rng((seed, step, 0xDE7)).standard_normal(size)
    mean = float(draws.mean())
    std = float(draws.std())
    if std == 0.0:
        raise NumericError("degenerate deviation prior: zero standard deviation")
    return mean, std


def deviation_loss_tape(
    tape: Tape,
    scores_id: int,
    labels: np.ndarray,
    prior_mean: float,
    prior_std: float,
    margin: float = DEVIATION_MARGIN,
) -> int:
    """Deviation loss on raw scores: inliers shrink |dev|, outliers are pushed
    past the margin: mean[(1-y)|dev| + y max(0, margin - dev)]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    m = tape.value(scores_id).shape[0]
    if y.shape[0] != m:
        raise ShapeError(f"{y.shape[0]} labels for {m} scores")
    mean_const = tape.leaf(np.full((m, 1), prior_mean))
    dev = tape.smul(tape.sub(scores_id, mean_const), 1.0 / prior_std)
    abs_dev = tape.add(tape.relu(dev), tape.relu(tape.smul(dev, -1.0)))
    margin_term = tape.relu(tape.sub(tape.leaf(np.full((m, 1), margin)), dev))
    y_id = tape.leaf(y)
    one = tape.leaf(np.ones((m, 1)))
    inlier = tape.hadamard(tape.sub(one, y_id), abs_dev)
    outlier = tape.hadamard(y_id, margin_term)
    return tape.reduce_mean(tape.add(inlier, outlier))


def forward_scores(
    X: np.ndarray,
    enc_spec: EncoderSpec,
    head_spec: HeadSpec,
    params: ParamSet,
    train: bool = False,
    dropout_seed: int | tuple[int, ...] = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-style forward returning (E_X, scores) as plain arrays."""
    from .autodiff import bind_params

    tape = Tape()
    ids = bind_params(tape, params)
    x_id = tape.leaf(np.asarray(X, dtype=np.float64))
    e_id = encode_tape(tape, x_id, enc_spec, ids, train=train, dropout_seed=dropout_seed)
    s_id = score_tape(tape, e_id, head_spec, ids)
    return tape.value(e_id), tape.value(s_id).reshape(-1)
