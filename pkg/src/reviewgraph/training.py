"""Adam optimization, early stopping on validation macro-F1, classification
metrics, Welch's t-test, and binary checkpoint persistence."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ParamStore, scale as ad_scale
from .graph import DECISION_LABELS, DebateGraph
from .model import GraphIndex, ModelConfig, build_graph_index, forward_loss, predict


class TrainingError(Exception):
    pass


class EmptySplit(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    pass


class NonFiniteGradient(TrainingError):
    pass


class LengthMismatch(TrainingError):
    pass


class DegenerateSample(TrainingError):
    pass


class CheckpointError(TrainingError):
    pass


class IoError(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptPayload(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise TrainingError("learning rate, batch size, and max epochs must be positive")
        if self.early_stop_patience > self.max_epochs:
            raise TrainingError("patience must not exceed max_epochs")


@dataclass(frozen=True)
class GraphExample:
    graph: DebateGraph
    embeddings: Mapping[int, np.ndarray]
    label: str

    @property
    def label_index(self) -> int:
        return DECISION_LABELS.index(self.label)


@dataclass
class EvalReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, dict[str, int]]
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "n": self.n,
        }


def evaluate(preds: Sequence[int], golds: Sequence[int]) -> EvalReport:
    """Accuracy and macro precision/recall/F1 with the 0/0 -> 0 convention."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise LengthMismatch("empty prediction list")
    n = len(preds)
    correct = sum(1 for p, y in zip(preds, golds) if p == y)

    per_class: dict[str, dict[str, int]] = {}
    precisions, recalls, f1s = [], [], []
    for c, name in enumerate(DECISION_LABELS):
        tp = sum(1 for p, y in zip(preds, golds) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, golds) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, golds) if p != c and y == c)
        per_class[name] = {"tp": tp, "fp": fp, "fn": fn}
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)

    return EvalReport(
        accuracy=correct / n,
        macro_precision=sum(precisions) / len(precisions),
        macro_recall=sum(recalls) / len(recalls),
        macro_f1=sum(f1s) / len(f1s),
        per_class=per_class,
        n=n,
    )


def adam_step(params: ParamStore, state: dict, t: int, config: TrainConfig) -> None:
    """One in-place Adam update with bias correction; grads read from the store."""
    if t < 1:
        raise TrainingError("Adam step counter must start at 1")
    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
        if name not in state:
            state[name] = {"m": np.zeros_like(tensor.value), "v": np.zeros_like(tensor.value)}
        s = state[name]
        s["m"] = config.beta1 * s["m"] + (1 - config.beta1) * g
        s["v"] = config.beta2 * s["v"] + (1 - config.beta2) * g * g
        m_hat = s["m"] / (1 - config.beta1**t)
        v_hat = s["v"] / (1 - config.beta2**t)
        tensor.value -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    best_val_macro_f1: float
    params: ParamStore


def predict_label_index(example: GraphExample, params: ParamStore,
                        model_config: ModelConfig, index: GraphIndex | None = None) -> int:
    probs, _ = predict(example.graph, example.embeddings, params, model_config, index)
    return int(np.argmax(probs))


def train(
    train_set: Sequence[GraphExample],
    val_set: Sequence[GraphExample],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[Checkpoint, list[dict]]:
    """Adam training with seeded shuffling and early stopping on validation macro-F1.

    Loss per batch is the mean cross-entropy over the batch's graphs. The best
    (earliest, on ties) validation epoch's parameters are returned.
    """
    if not train_set:
        raise EmptySplit("empty training split")
    if not val_set:
        raise EmptySplit("empty validation split")

    from .model import init_params

    params = init_params(model_config, model_config.seed)
    rng = np.random.default_rng(train_config.seed)
    adam_state: dict = {}
    t = 0

    train_indexed = [(ex, build_graph_index(ex.graph, model_config)) for ex in train_set]
    val_indexed = [(ex, build_graph_index(ex.graph, model_config)) for ex in val_set]
    val_golds = [ex.label_index for ex in val_set]

    history: list[dict] = []
    best_f1 = -1.0
    best_epoch = -1
    best_params: ParamStore | None = None
    no_improve = 0

    for epoch in range(1, train_config.max_epochs + 1):
        order = np.arange(len(train_indexed))
        if train_config.shuffle:
            rng.shuffle(order)

        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            params.zero_grad()
            batch_loss = 0.0
            for i in batch:
                ex, index = train_indexed[i]
                loss = forward_loss(
                    ex.graph, ex.embeddings, params, model_config, ex.label_index, index
                )
                value = float(loss.value)
                if not math.isfinite(value):
                    raise NonFiniteLoss(
                        f"non-finite loss at epoch {epoch}, graph {ex.graph.graph_id}"
                    )
                ad_scale(loss, 1.0 / len(batch)).backward()
                batch_loss += value
            t += 1
            adam_step(params, adam_state, t, train_config)
            epoch_loss += batch_loss

        train_loss = epoch_loss / len(train_indexed)
        val_preds = [
            predict_label_index(ex, params, model_config, index) for ex, index in val_indexed
        ]
        report = evaluate(val_preds, val_golds)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_accuracy": report.accuracy,
                "val_macro_f1": report.macro_f1,
            }
        )

        if report.macro_f1 > best_f1:
            best_f1 = report.macro_f1
            best_epoch = epoch
            best_params = params.copy()
            no_improve = 0
        else:
            no_improve += 1
            if no_improve > train_config.early_stop_patience:
                break

    assert best_params is not None
    checkpoint = Checkpoint(
        version=1,
        model_config=model_config,
        train_config=train_config,
        epoch=best_epoch,
        best_val_macro_f1=best_f1,
        params=best_params,
    )
    return checkpoint, history


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float, float]:
    """Welch's two-sample t-test: (t statistic, degrees of freedom, two-sided p)."""
    na, nb = len(sample_a), len(sample_b)
    if na < 2 or nb < 2:
        raise DegenerateSample("each sample needs at least two observations")
    mean_a = sum(sample_a) / na
    mean_b = sum(sample_b) / nb
    var_a = sum((x - mean_a) ** 2 for x in sample_a) / (na - 1)
    var_b = sum((x - mean_b) ** 2 for x in sample_b) / (nb - 1)
    if var_a == 0.0 and var_b == 0.0:
        if mean_a == mean_b:
            return 0.0, float(na + nb - 2), 1.0
        raise DegenerateSample("both samples have zero variance with unequal means")
    sa, sb = var_a / na, var_b / nb
    se = math.sqrt(sa + sb)
    t = (mean_a - mean_b) / se
    df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    p = student_t_two_sided_p(t, df)
    return t, df, p


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value from the t distribution via the regularized
    incomplete beta function (continued-fraction evaluation)."""
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return _betainc_reg(df / 2.0, 0.5, x)


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), |error| well below 1e-8."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-14) -> float:
    # modified Lentz continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


_MAGIC = b"RVGC"
_CHECKPOINT_VERSION = 1


def save_checkpoint(cp: Checkpoint, path: str | Path) -> None:
    """Binary format: magic, u32 manifest length, JSON manifest, fp32 LE payload."""
    tensors = []
    payload = bytearray()
    for name, tensor in cp.params.items():
        data = tensor.value.astype("<f4").tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(tensor.value.shape),
                "offset": len(payload),
                "length": len(data),
            }
        )
        payload.extend(data)
    manifest = {
        "version": cp.version,
        "model_config": asdict(cp.model_config),
        "train_config": asdict(cp.train_config),
        "epoch": cp.epoch,
        "best_val_macro_f1": cp.best_val_macro_f1,
        "tensors": tensors,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(mbytes)))
            fh.write(mbytes)
            fh.write(bytes(payload))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint from {path}: {exc}") from exc
    if len(blob) < 8 or blob[:4] != _MAGIC:
        raise CorruptPayload("bad magic header")
    (mlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + mlen:
        raise CorruptPayload("truncated manifest")
    try:
        manifest = json.loads(blob[8:8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"unreadable manifest: {exc}") from exc
    if manifest.get("version") != _CHECKPOINT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {manifest.get('version')}")
    payload = blob[8 + mlen:]

    params = ParamStore()
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        offset, length = entry["offset"], entry["length"]
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if length != expected or offset + length > len(payload):
            raise CorruptPayload(f"tensor {entry['name']!r} payload length/offset mismatch")
        arr = np.frombuffer(payload[offset:offset + length], dtype="<f4").reshape(shape)
        params.add(entry["name"], arr.astype(np.float64))

    return Checkpoint(
        version=manifest["version"],
        model_config=ModelConfig(**manifest["model_config"]),
        train_config=TrainConfig(**manifest["train_config"]),
        epoch=manifest["epoch"],
        best_val_macro_f1=manifest["best_val_macro_f1"],
        params=params,
    )
