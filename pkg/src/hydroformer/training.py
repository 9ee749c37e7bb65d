"""Mini-batch Adam training with teacher forcing, early stopping on
validation loss, and per-epoch loss-curve logging."""

from dataclasses import dataclass, field

import numpy as np

from .data import WindowedDataset
from .errors import ConfigError, NumericError
from .metrics import MetricReport
from .model import TransformerModel
from .tensor import backward, mse, Tensor


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    max_epochs: int = 50
    early_stop_patience: int = 5
    min_delta: float = 0.0
    seed: int = 0
    shuffle_train: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("batch_size, max_epochs, and patience must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")


class Adam:
    """Standard bias-corrected Adam over a name->Tensor parameter map."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class LossCurve:
    epochs: list = field(default_factory=list)   # (train_loss, val_loss)
    best_epoch: int = -1

    @property
    def train_losses(self):
        return [e[0] for e in self.epochs]

    @property
    def val_losses(self):
        return [e[1] for e in self.epochs]

    def to_text(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for i, (tr, va) in enumerate(self.epochs):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


class EarlyStopper:
    """Stop once the count of consecutive epochs without an improvement of
    more than min_delta exceeds the patience budget (patience=1 tolerates one
    bad epoch and stops on the second)."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs > self.patience


def teacher_forced_input(window: np.ndarray, targets: np.ndarray,
                         target_index: int) -> np.ndarray:
    """Decoder input for training: start token (last observed target in the
    window) followed by the ground-truth targets shifted right."""
    return np.concatenate(([window[-1, target_index]], targets[:-1]))[:, None]


def _split_loss(model, samples, target_index) -> float:
    total = 0.0
    for w, tgt in zip(samples.windows, samples.targets):
        out = model.forward(w, teacher_forced_input(w, tgt, target_index))
        total += float(np.mean((out.data.ravel() - tgt) ** 2))
    return total / len(samples.windows)


def fit(model: TransformerModel, dataset: WindowedDataset,
        cfg: TrainConfig) -> LossCurve:
    """Train in place; returns the loss curve. Weights from the epoch with
    the best validation loss are restored on exit."""
    from .data import TARGET_INDEX
    train = dataset.split("train")
    val = dataset.split("val")
    if len(train.windows) == 0 or len(val.windows) == 0:
        raise ConfigError("fit requires non-empty train and val splits")
    if dataset.horizon != model.config.horizon:
        raise ConfigError(f"dataset horizon {dataset.horizon} != model horizon "
                          f"{model.config.horizon}")

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.params)
    stopper = EarlyStopper(cfg.early_stop_patience, cfg.min_delta)
    curve = LossCurve()
    best_state = model.state_arrays()

    n = len(train.windows)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n) if cfg.shuffle_train else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            model.zero_grads()
            for idx in batch:
                w = train.windows[idx]
                tgt = train.targets[idx]
                out = model.forward(w, teacher_forced_input(w, tgt, TARGET_INDEX))
                loss = mse(out, Tensor(tgt[:, None]))
                epoch_loss += float(loss.data)
                try:
                    backward(loss * (1.0 / len(batch)))
                except NumericError as e:
                    raise NumericError(f"epoch {epoch}, sample {idx}: {e}") from e
            optimizer.step(cfg.learning_rate)
        train_loss = epoch_loss / n
        val_loss = _split_loss(model, val, TARGET_INDEX)
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise NumericError(f"non-finite loss at epoch {epoch}: "
                               f"train={train_loss}, val={val_loss}")
        curve.epochs.append((train_loss, val_loss))
        if val_loss < stopper.best - cfg.min_delta:
            best_state = model.state_arrays()
        if stopper.update(epoch, val_loss):
            break
    curve.best_epoch = stopper.best_epoch
    model.load_state_arrays(best_state)
    return curve


def evaluate_split(model, dataset: WindowedDataset, split: str, leads,
                   r2_mode: str = "paper"):
    """Autoregressive evaluation at each requested lead time on denormalized
    values. Returns (MetricReport, per-lead prediction series) where each
    series is a list of (anchor_date, actual, predicted) rows."""
    leads = sorted(set(int(x) for x in leads))
    horizon = model.config.horizon
    if any(lead < 1 or lead > horizon for lead in leads):
        raise ConfigError(f"leads {leads} must lie in [1, horizon={horizon}]")
    samples = dataset.split(split)
    norm = dataset.normalizer
    preds = np.empty((len(samples.windows), max(leads)))
    for i, w in enumerate(samples.windows):
        preds[i] = model.predict(w, max(leads)).ravel()
    report = MetricReport()
    series = {}
    for lead in leads:
        yhat = norm.invert_target(preds[:, lead - 1])
        y = norm.invert_target(samples.targets[:, lead - 1])
        report.add(lead, y, yhat, r2_mode=r2_mode)
        series[lead] = list(zip(samples.anchors, y.tolist(), yhat.tolist()))
    return report, series
