"""Minibatch Adam training and per-node accuracy."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from gpinet.errors import ContractError, NumericError, TrainingDiverged
from gpinet.gpi import stack_graphs
from gpinet.numerics.optim import Adam
from gpinet.numerics.tensor import Tape, Tensor, cross_entropy

log = logging.getLogger(__name__)

DEFAULT_SIZES = (200, 500, 1000, 2000, 5000, 10000)


@dataclass
class TrainConfig:
    """Everything that determines a trial; written verbatim into result metadata."""

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 150
    seed: int = 0
    model: str = "gpi"
    width: int = 64
    sizes: tuple = DEFAULT_SIZES
    eval_size: int = 2000
    n: int = 10
    K: int = 4
    p_edge: float = 0.5
    early_stop: bool = True
    rho_sees_s_i: bool = True
    dtype: str = "float64"
    eval_batch: int = 500

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        for name in ("batch_size", "epochs", "width", "eval_size", "n", "K", "eval_batch"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.lr <= 0 or any(s < 1 for s in self.sizes):
            raise ContractError("lr and sizes must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ContractError("dtype must be float64 or float32")

    def to_dict(self):
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d


@dataclass
class TrialResult:
    model: str
    size: int
    seed: int
    train_acc: float
    eval_acc: float
    params: int
    seconds: float
    epochs_run: int = 0
    status: str = "ok"
    error: str = ""
    trace: list = field(default_factory=list, repr=False)


@dataclass
class Arrays:
    node: np.ndarray
    pair: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_graphs(cls, graphs, dtype=np.float64):
        node, pair, mask = stack_graphs(graphs)
        if any(g.labels is None for g in graphs):
            raise ContractError("training data must be labelled")
        labels = np.stack([g.labels for g in graphs])
        return cls(node.astype(dtype), pair.astype(dtype), mask.astype(dtype), labels)

    def take(self, idx):
        return Arrays(self.node[idx], self.pair[idx], self.mask[idx], self.labels[idx])


def _tensor(a):
    return Tensor(a, dtype=a.dtype)


def predict(model, data, batch=500):
    """Argmax class per node, shape ``(N, n)``."""
    out = []
    for start in range(0, len(data), batch):
        part = data.take(slice(start, start + batch))
        logits = model.forward_batch(_tensor(part.node), _tensor(part.pair), part.mask)
        out.append(logits.data.argmax(axis=-1))
    return np.concatenate(out) if out else np.zeros((0, data.labels.shape[1]), dtype=np.int64)


def accuracy(model, data, batch=500):
    """Fraction of nodes whose predicted count is exactly right."""
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(model, data, batch) == data.labels))


def train(model, train_set, cfg, eval_set=None):
    """Train ``model`` in place; returns a :class:`TrialResult` with the loss trace.

    Deterministic given ``cfg.seed`` and the model's initial state. Stops
    early once training accuracy reaches 1 when ``cfg.early_stop`` is set.
    """
    dtype = np.dtype(cfg.dtype).type
    data = train_set if isinstance(train_set, Arrays) else Arrays.from_graphs(train_set, dtype)
    if eval_set is not None and not isinstance(eval_set, Arrays):
        eval_set = Arrays.from_graphs(eval_set, dtype)
    if len(data) == 0:
        raise ContractError("empty training set")
    rng = np.random.default_rng([cfg.seed, 3])
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    trace = []
    started = time.perf_counter()
    train_acc = eval_acc = 0.0
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        total, batches, correct = 0.0, 0, 0
        for start in range(0, len(data), cfg.batch_size):
            batch = data.take(order[start:start + cfg.batch_size])
            try:
                with Tape() as tape:
                    logits = model.forward_batch(_tensor(batch.node), _tensor(batch.pair), batch.mask)
                    loss = cross_entropy(logits, batch.labels)
                grads = tape.backward(loss, params)
            except NumericError as exc:
                raise TrainingDiverged(
                    f"{getattr(model, 'kind', 'model')} diverged at epoch {epoch}, "
                    f"batch {batches}: {exc}") from exc
            opt.step(grads)
            correct += int((logits.data.argmax(axis=-1) == batch.labels).sum())
            total += float(loss.data)
            batches += 1
        # running accuracy over the epoch's minibatches, confirmed by a full pass
        train_acc = correct / data.labels.size
        try:
            if cfg.early_stop and train_acc >= 1.0:
                train_acc = accuracy(model, data, cfg.eval_batch)
            eval_acc = (accuracy(model, eval_set, cfg.eval_batch) if eval_set is not None
                        else float("nan"))
        except NumericError as exc:
            raise TrainingDiverged(f"{getattr(model, 'kind', 'model')} diverged after epoch "
                                   f"{epoch}: {exc}") from exc
        trace.append({"epoch": epoch, "loss": total / batches, "train_acc": train_acc,
                      "eval_acc": eval_acc})
        log.debug("epoch %d loss %.4f train %.4f eval %.4f", epoch, total / batches,
                  train_acc, eval_acc)
        if cfg.early_stop and train_acc >= 1.0:
            break
    try:
        train_acc = accuracy(model, data, cfg.eval_batch)
    except NumericError as exc:
        raise TrainingDiverged(f"{getattr(model, 'kind', 'model')} diverged: {exc}") from exc
    return TrialResult(
        model=getattr(model, "kind", "model"), size=len(data), seed=cfg.seed,
        train_acc=train_acc, eval_acc=eval_acc, params=model.param_count(),
        seconds=time.perf_counter() - started, epochs_run=epoch, trace=trace)
