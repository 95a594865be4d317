"""Joint training: prediction loss plus weighted OT distance, then inference.

Every batch contains all labeled anomalies with unlabeled rows filled in by
the seeded sampler.  The OT term aligns the batch's embeddings against the
frozen knowledge embeddings E_F; its gradient reaches the encoder through
the cost matrix while the plan stays detached (an unrolled differentiable
mode exists for gradient checking).  With rule weight 0 (or OT disabled) the
step reduces bit-exactly to the prediction loss.  The best-validation-AUPRC
checkpoint is returned.

Checkpoint container layout (little-endian): magic "KDAL", version u32,
metadata length u64 + JSON metadata, then one entry per tensor:
name length u16 + name, rows u64, cols u64, row-major float64 data.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamSet, Tape, accumulate_grads, bind_params
from .encoders import (
    EncoderSpec,
    HeadSpec,
    bce_loss_tape,
    deviation_loss_tape,
    deviation_prior,
    encode_tape,
    forward_scores,
    init_encoder,
    init_head,
    score_tape,
)
from .errors import ConfigError, DataError, NumericError
from .evaluate import SplitDataset, auprc
from .gcn import KnowEncoderSpec
from .ot import cost_matrix_tape, ot_loss_tape, sinkhorn, sinkhorn_tape

MAGIC = b"KDAL"
VERSION = 1


@dataclass
class TrainConfig:
    rule_weight: float = 1.0
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0
    loss: str = "bce"  # "bce" | "deviation"
    patience: int = 10
    ot_enabled: bool = True
    ot_metric: str = "sqeuclidean"
    sinkhorn_epsilon_scale: float = 0.1
    sinkhorn_max_iter: int = 500
    sinkhorn_tol: float = 1e-6
    anomaly_mass_boost: float = 1.0
    unrolled_ot: bool = False
    unrolled_iters: int = 50
    standardize: bool = True

    def __post_init__(self):
        if self.rule_weight < 0:
            raise ConfigError("rule_weight must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.loss not in ("bce", "deviation"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class EpochRecord:
    epoch: int
    l_p: float
    l_ot: float
    total: float
    val_auprc: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "L_P": self.l_p,
                "L_OT": self.l_ot,
                "total": self.total,
                "val_auprc": self.val_auprc,
            }
        )


class Adam:
    """Gradient descent with Adam-style moment estimates and constant rate."""

    def __init__(self, params: ParamSet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self, params: ParamSet) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in params.grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            params.values[name] = params.values[name] - self.lr * update


@dataclass
class ModelCheckpoint:
    params: dict[str, np.ndarray]
    seed: int
    encoder_spec: EncoderSpec | None = None
    head_spec: HeadSpec | None = None
    know_spec: KnowEncoderSpec | None = None
    e_f: np.ndarray | None = None

    def equal(self, other: "ModelCheckpoint") -> bool:
        if set(self.params) != set(other.params):
            return False
        for name, arr in self.params.items():
            o = other.params[name]
            if arr.shape != o.shape or not (arr == o).all():
                return False
        if (self.e_f is None) != (other.e_f is None):
            return False
        if self.e_f is not None and not (self.e_f == other.e_f).all():
            return False
        return (
            self.seed == other.seed
            and self.encoder_spec == other.encoder_spec
            and self.head_spec == other.head_spec
            and self.know_spec == other.know_spec
        )


def _spec_to_dict(spec) -> dict | None:
    if spec is None:
        return None
    out = dict(spec.__dict__)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    return out


def save_checkpoint(ck: ModelCheckpoint, path) -> None:
    tensors: list[tuple[str, np.ndarray]] = [
        (name, np.asarray(v, dtype=np.float64)) for name, v in sorted(ck.params.items())
    ]
    if ck.e_f is not None:
        tensors.append(("E_F", np.asarray(ck.e_f, dtype=np.float64)))
    meta = {
        "seed": ck.seed,
        "encoder": _spec_to_dict(ck.encoder_spec),
        "head": _spec_to_dict(ck.head_spec),
        "know_encoder": _spec_to_dict(ck.know_spec),
        "tensors": [
            {"name": n, "rows": int(a.shape[0]), "cols": int(a.shape[1])}
            for n, a in tensors
        ],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        for name, arr in tensors:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f8").tobytes(order="C"))
    os.replace(tmp, path)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise DataError("not a KDAL checkpoint: bad magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in meta["tensors"]:
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            rows, cols = struct.unpack("<QQ", _read_exact(fh, 16, "tensor shape"))
            if name != entry["name"] or rows != entry["rows"] or cols != entry["cols"]:
                raise DataError(
                    f"tensor {name!r} ({rows}x{cols}) does not match metadata entry {entry}"
                )
            data = _read_exact(fh, rows * cols * 8, f"tensor {name!r} data")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()
        if fh.read(1):
            raise DataError("trailing bytes after tensor table")

    def spec_from(key, cls, tuple_fields=()):
        obj = meta.get(key)
        if obj is None:
            return None
        for f_name in tuple_fields:
            if f_name in obj and isinstance(obj[f_name], list):
                obj[f_name] = tuple(obj[f_name])
        return cls(**obj)

    e_f = tensors.pop("E_F", None)
    return ModelCheckpoint(
        params=tensors,
        seed=int(meta["seed"]),
        encoder_spec=spec_from("encoder", EncoderSpec, ("hidden",)),
        head_spec=spec_from("head", HeadSpec, ("hidden",)),
        know_spec=spec_from("know_encoder", KnowEncoderSpec),
        e_f=e_f,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _standardizer(X_train: np.ndarray, enabled: bool):
    if not enabled:
        return np.zeros((1, X_train.shape[1])), np.ones((1, X_train.shape[1]))
    mean = X_train.mean(axis=0, keepdims=True)
    std = X_train.std(axis=0, keepdims=True)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def train(
    split: SplitDataset,
    enc_spec: EncoderSpec,
    head_spec: HeadSpec,
    config: TrainConfig,
    e_f: np.ndarray | None = None,
    know_spec: KnowEncoderSpec | None = None,
    know_params: dict[str, np.ndarray] | None = None,
    dump_dir=None,
) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Run weakly-supervised training and return the best checkpoint + log."""
    if config.loss == "bce" and head_spec.transform != "sigmoid":
        raise ConfigError("bce loss needs the sigmoid head transform")
    if config.loss == "deviation" and head_spec.transform != "raw":
        raise ConfigError("deviation loss needs the raw head transform")
    use_ot = config.ot_enabled and config.rule_weight > 0.0 and e_f is not None
    if use_ot and e_f.shape[1] != enc_spec.embed_dim:
        raise ConfigError(
            f"knowledge embedding width {e_f.shape[1]} != encoder width {enc_spec.embed_dim}"
        )

    rng = np.random.default_rng(config.seed)
    values = init_encoder(enc_spec, rng)
    values.update(init_head(head_spec, rng))
    params = ParamSet(values)
    opt = Adam(params, config.learning_rate)

    X_train = split.train_features()
    mean, std = _standardizer(X_train, config.standardize)
    X_train = (X_train - mean) / std
    y_train = split.train_labels
    X_val = (split.data.X[split.val_idx] - mean) / std
    y_val = split.data.y[split.val_idx]

    anom_pos = np.flatnonzero(y_train == 1)
    pool = np.flatnonzero(y_train == 0)
    n_train = X_train.shape[0]
    batch_size = min(config.batch_size, n_train)
    steps_per_epoch = max(1, math.ceil(n_train / batch_size))

    best_val = -np.inf
    best_params = params.copy()
    best_epoch = 0
    log: list[EpochRecord] = []
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        lp_sum = lot_sum = 0.0
        failures = 0
        for _ in range(steps_per_epoch):
            need = batch_size - anom_pos.size
            if need <= 0:
                batch_idx = anom_pos[:batch_size]
            elif pool.size <= need:
                batch_idx = np.concatenate([anom_pos, pool])
            else:
                fill = rng.choice(pool, size=need, replace=False)
                batch_idx = np.concatenate([anom_pos, fill])
            xb = X_train[batch_idx]
            yb = y_train[batch_idx]

            tape = Tape()
            ids = bind_params(tape, params)
            x_id = tape.leaf(xb)
            e_id = encode_tape(
                tape, x_id, enc_spec, ids, train=True, dropout_seed=(config.seed, global_step)
            )
            s_id = score_tape(tape, e_id, head_spec, ids)
            if config.loss == "bce":
                l_p = bce_loss_tape(tape, s_id, yb)
            else:
                prior_mean, prior_std = deviation_prior(config.seed, global_step)
                l_p = deviation_loss_tape(tape, s_id, yb, prior_mean, prior_std)

            l_ot_value = 0.0
            if use_ot:
                c_id = cost_matrix_tape(tape, e_f, e_id, metric=config.ot_metric)
                c_value = tape.value(c_id)
                epsilon = config.sinkhorn_epsilon_scale * float(c_value.mean())
                if epsilon <= 0.0:
                    epsilon = config.sinkhorn_epsilon_scale
                mu = np.full(e_f.shape[0], 1.0 / e_f.shape[0])
                nu = np.where(yb == 1, config.anomaly_mass_boost, 1.0).astype(np.float64)
                nu /= nu.sum()
                if config.unrolled_ot:
                    s_plan = sinkhorn_tape(tape, c_id, mu, nu, epsilon, config.unrolled_iters)
                    l_ot = tape.full_sum(tape.hadamard(c_id, s_plan))
                else:
                    plan = sinkhorn(
                        c_value,
                        mu,
                        nu,
                        epsilon,
                        max_iter=config.sinkhorn_max_iter,
                        tol=config.sinkhorn_tol,
                    )
                    if not plan.converged:
                        failures += 1
                    if dump_dir is not None:
                        _dump_plan(dump_dir, epoch, global_step, plan)
                    l_ot = ot_loss_tape(tape, c_id, plan.plan)
                l_ot_value = float(tape.value(l_ot)[0, 0])
                total = tape.add(l_p, tape.smul(l_ot, config.rule_weight))
            else:
                total = l_p

            total_value = float(tape.value(total)[0, 0])
            if not np.isfinite(total_value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            lp_sum += float(tape.value(l_p)[0, 0])
            lot_sum += l_ot_value

            params.zero_grads()
            accumulate_grads(params, ids, tape.backward(total))
            opt.step(params)
            global_step += 1

        if use_ot and not config.unrolled_ot and failures * 2 > steps_per_epoch:
            raise NumericError(
                f"Sinkhorn failed to converge in {failures}/{steps_per_epoch} batches"
            )

        _, val_scores = forward_scores(X_val, enc_spec, head_spec, params)
        val_auprc = auprc(val_scores, y_val)
        record = EpochRecord(
            epoch,
            lp_sum / steps_per_epoch,
            lot_sum / steps_per_epoch,
            (lp_sum + config.rule_weight * lot_sum) / steps_per_epoch,
            val_auprc,
        )
        log.append(record)
        if val_auprc > best_val:
            best_val = val_auprc
            best_params = params.copy()
            best_epoch = epoch
        elif epoch - best_epoch >= config.patience:
            break

    tensors = {k: v.copy() for k, v in best_params.values.items()}
    tensors["norm/mean"] = mean
    tensors["norm/std"] = std
    if know_params:
        tensors.update({k: v.copy() for k, v in know_params.items()})
    ck = ModelCheckpoint(
        params=tensors,
        seed=config.seed,
        encoder_spec=enc_spec,
        head_spec=head_spec,
        know_spec=know_spec,
        e_f=None if e_f is None else e_f.copy(),
    )
    return ck, log


def _dump_plan(dump_dir, epoch: int, step: int, plan) -> None:
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"ot_epoch{epoch:03d}_step{step:06d}.json")
    payload = {
        "epoch": epoch,
        "step": step,
        "iterations": plan.iterations,
        "epsilon": plan.epsilon,
        "residual_row": plan.residual_row,
        "residual_col": plan.residual_col,
        "converged": plan.converged,
        "plan": plan.plan.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def infer(ck: ModelCheckpoint, X: np.ndarray) -> np.ndarray:
    """Scores for a test matrix: the trained encoder and head only."""
    if ck.encoder_spec is None or ck.head_spec is None:
        raise DataError("checkpoint has no detector (knowledge-encoder-only container)")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ck.encoder_spec.input_dim:
        raise DataError(
            f"input width {X.shape[1] if X.ndim == 2 else X.shape} != "
            f"encoder width {ck.encoder_spec.input_dim}"
        )
    if X.shape[0] == 0:
        return np.zeros(0)
    mean = ck.params["norm/mean"]
    std = ck.params["norm/std"]
    model = ParamSet(
        {
            k: v
            for k, v in ck.params.items()
            if k.startswith("enc/") or k.startswith("head/")
        }
    )
    _, scores = forward_scores((X - mean) / std, ck.encoder_spec, ck.head_spec, model)
    return scores


def write_training_log(log: list[EpochRecord], path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(record.to_json() + "\n")
    os.replace(tmp, path)
