"""Feature assembly and the fully connected decoder trained on top of the embeddings.

The network is a plain NumPy MLP with hand-written backpropagation and an
Adam optimizer. Hidden layers use Leaky ReLU and optional dropout; the output
unit is a sigmoid for binary targets and a ReLU for regression targets.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import (BINARY_TARGETS, CATEGORICAL_FIELDS, LabeledInstance, SplitSpec,
                   feature_exclusions, split)
from .factorization import KruskalFactors

logger = logging.getLogger(__name__)

HIDDEN_SIZES = (256, 128, 64, 32, 16, 8, 4, 2)
CONTINUOUS_FIELDS = ("duration", "timestamp")
PERFORMANCE_FIELDS = ("kills", "deaths", "assists", "kda")


class TrainingError(RuntimeError):
    pass


def task_for(target: str) -> str:
    feature_exclusions(target)  # validates the name
    return "binary" if target in BINARY_TARGETS else "regression"


def fuse_individual_context(x_f, F) -> np.ndarray:
    """Collapse an individual-context weighting over champions into an R-vector.

    Row ``k`` of ``F`` is scaled by ``x_f[k]`` and the scaled rows are summed.
    ``x_f`` may also be a (n, K) batch, giving an (n, R) result.
    """
    x_f = np.asarray(x_f, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if x_f.shape[-1] != F.shape[0]:
        raise ValueError(f"context vector has length {x_f.shape[-1]}, F has {F.shape[0]} rows")
    if np.any(x_f < 0):
        raise ValueError("individual-context weights must be non-negative")
    if x_f.ndim == 1:
        return (x_f[:, None] * F).sum(axis=0)
    return x_f @ F


# ---------------------------------------------------------------------------
# feature assembly


class FeatureEncoder:
    """Builds decoder inputs ``[u | f | t | x_m]`` (or the one-hot baseline layout).

    Categorical dictionaries and z-score statistics come from the training
    instances passed to :meth:`fit`; they are frozen afterwards.
    """

    def __init__(self, target: str, exclusions: set[str] | None = None, baseline: bool = False):
        self.target = target
        self.exclusions = set(feature_exclusions(target) if exclusions is None else exclusions)
        self.baseline = baseline
        self.categories: dict[str, list[str]] = {}
        self.continuous: list[str] = []
        self.stats: dict[str, tuple[float, float]] = {}
        self.rank = 0
        self.user_ids: list[str] = []
        self.n_champions = 0
        self._warned: set[str] = set()

    def _continuous_fields(self) -> list[str]:
        fields = list(CONTINUOUS_FIELDS)
        for name in PERFORMANCE_FIELDS:
            if name not in self.exclusions and name != self.target:
                fields.append(name)
        if self.baseline:
            fields.append("version_index")
        return fields

    @staticmethod
    def _raw(inst: LabeledInstance, name: str) -> float:
        if name == "kda":
            return inst.kda
        return float(getattr(inst.record, name))

    def fit(self, instances: Sequence[LabeledInstance], factors: KruskalFactors | None = None,
            user_ids: Sequence[str] | None = None, n_champions: int | None = None) -> "FeatureEncoder":
        if not instances:
            raise ValueError("cannot fit an encoder on zero instances")
        self.categories = {
            name: sorted({getattr(inst.record, name) for inst in instances})
            for name in CATEGORICAL_FIELDS
        }
        self.continuous = self._continuous_fields()
        for name in self.continuous:
            col = np.array([self._raw(inst, name) for inst in instances])
            self.stats[name] = (float(col.mean()), float(col.std()))
        if self.baseline:
            if user_ids is None:
                user_ids = sorted({inst.record.user_id for inst in instances})
            self.user_ids = [str(u) for u in user_ids]
            if n_champions is None:
                n_champions = 1 + max(inst.record.champion_id for inst in instances)
            self.n_champions = int(n_champions)
        else:
            if factors is None:
                raise ValueError("embedding features need fitted factors")
            self.rank = factors.rank
        return self

    def feature_names(self) -> list[str]:
        if self.baseline:
            names = [f"user={u}" for u in self.user_ids]
            names += [f"champion={k}" for k in range(self.n_champions)]
        else:
            names = [f"{block}{r}" for block in "uft" for r in range(self.rank)]
        for name in CATEGORICAL_FIELDS:
            names += [f"{name}={v}" for v in self.categories[name]]
        names += list(self.continuous)
        return names

    @property
    def width(self) -> int:
        return len(self.feature_names())

    def _warn_unseen(self, name: str, value) -> None:
        if name not in self._warned:
            warnings.warn(f"unseen {name} value {value!r}; encoded as all zeros", stacklevel=3)
            self._warned.add(name)

    def transform(self, instances: Sequence[LabeledInstance],
                  factors: KruskalFactors | None = None) -> np.ndarray:
        n = len(instances)
        blocks = []
        if self.baseline:
            uidx = {u: i for i, u in enumerate(self.user_ids)}
            onehot = np.zeros((n, len(self.user_ids) + self.n_champions))
            for row, inst in enumerate(instances):
                i = uidx.get(inst.record.user_id)
                if i is None:
                    self._warn_unseen("user_id", inst.record.user_id)
                else:
                    onehot[row, i] = 1.0
                k = inst.record.champion_id
                if 0 <= k < self.n_champions:
                    onehot[row, len(self.user_ids) + k] = 1.0
                else:
                    self._warn_unseen("champion_id", k)
            blocks.append(onehot)
        else:
            if factors is None or factors.rank != self.rank:
                raise ValueError(f"encoder expects rank-{self.rank} factors")
            uidx = factors.user_index()
            try:
                rows = np.array([uidx[inst.record.user_id] for inst in instances], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"user {exc.args[0]!r} has no embedding") from None
            versions = np.array([inst.record.version_index for inst in instances], dtype=np.int64)
            champs = np.array([inst.record.champion_id for inst in instances], dtype=np.int64)
            if n and (versions.max() >= len(factors.T) or champs.max() >= len(factors.F)):
                raise ValueError("version or champion index has no embedding")
            x_f = np.zeros((n, len(factors.F)))
            x_f[np.arange(n), champs] = 1.0
            blocks += [factors.U[rows], fuse_individual_context(x_f, factors.F), factors.T[versions]]

        for name in CATEGORICAL_FIELDS:
            values = self.categories[name]
            index = {v: c for c, v in enumerate(values)}
            onehot = np.zeros((n, len(values)))
            for row, inst in enumerate(instances):
                c = index.get(getattr(inst.record, name))
                if c is None:
                    self._warn_unseen(name, getattr(inst.record, name))
                else:
                    onehot[row, c] = 1.0
            blocks.append(onehot)

        cont = np.zeros((n, len(self.continuous)))
        for c, name in enumerate(self.continuous):
            mean, std = self.stats[name]
            if std > 0:
                col = np.array([self._raw(inst, name) for inst in instances])
                cont[:, c] = (col - mean) / std
        blocks.append(cont)
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def assemble(self, instance: LabeledInstance, factors: KruskalFactors | None = None) -> np.ndarray:
        """Feature vector of a single instance."""
        return self.transform([instance], factors)[0]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "exclusions": sorted(self.exclusions),
            "baseline": self.baseline,
            "categories": self.categories,
            "continuous": self.continuous,
            "stats": {k: list(v) for k, v in self.stats.items()},
            "rank": self.rank,
            "user_ids": self.user_ids,
            "n_champions": self.n_champions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        enc = cls(d["target"], set(d["exclusions"]), d["baseline"])
        enc.categories = {k: list(v) for k, v in d["categories"].items()}
        enc.continuous = list(d["continuous"])
        enc.stats = {k: (float(v[0]), float(v[1])) for k, v in d["stats"].items()}
        enc.rank = int(d["rank"])
        enc.user_ids = list(d["user_ids"])
        enc.n_champions = int(d["n_champions"])
        return enc


# ---------------------------------------------------------------------------
# network


class MLP:
    """Fully connected network with explicit forward and backward passes.

    ``hidden_activation`` is ``"leaky_relu"`` or ``"identity"``;
    ``output_activation`` is ``"sigmoid"``, ``"relu"`` or ``"identity"``.
    The binary loss is cross-entropy on the sigmoid output; otherwise the
    loss is mean squared error on the activated output.
    """

    def __init__(self, layer_sizes: Sequence[int], output_activation: str = "sigmoid",
                 hidden_activation: str = "leaky_relu", negative_slope: float = 0.01,
                 seed: int | None = 0, zero: bool = False):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        self.output_activation = output_activation
        self.hidden_activation = hidden_activation
        self.negative_slope = negative_slope
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            if zero:
                W = np.zeros((fan_in, fan_out))
            else:
                W = rng.normal(0.0, math.sqrt(2.0 / max(fan_in, 1)), size=(fan_in, fan_out))
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))

    @property
    def binary(self) -> bool:
        return self.output_activation == "sigmoid"

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def _act(self, z):
        if self.hidden_activation == "identity":
            return z
        return np.where(z > 0, z, self.negative_slope * z)

    def _act_grad(self, z):
        if self.hidden_activation == "identity":
            return np.ones_like(z)
        return np.where(z > 0, 1.0, self.negative_slope)

    def logits(self, X, dropout: float = 0.0, rng: np.random.Generator | None = None):
        """Output pre-activation and the per-layer cache for backprop."""
        a = np.asarray(X, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"expected inputs of width {self.layer_sizes[0]}, got {a.shape}")
        cache = []
        last = len(self.weights) - 1
        for n, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if n == last:
                cache.append((a, z, None))
                return z[:, 0], cache
            h = self._act(z)
            mask = None
            if dropout > 0:
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * mask
            cache.append((a, z, mask))
            a = h
        raise AssertionError("unreachable")

    def output(self, z):
        if self.output_activation == "sigmoid":
            p = 0.5 * (1.0 + np.tanh(0.5 * z))
            return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        if self.output_activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def forward(self, X) -> np.ndarray:
        return self.output(self.logits(X)[0])

    def data_loss(self, z, y) -> float:
        if len(y) == 0:
            return 0.0
        if self.binary:
            return float(np.mean(np.maximum(z, 0) - y * z + np.log1p(np.exp(-np.abs(z)))))
        return float(np.mean((self.output(z) - y) ** 2))

    def penalty(self, l2_beta: float) -> float:
        return l2_beta * sum(float(np.sum(W * W)) for W in self.weights)

    def loss_and_grads(self, X, y, l2_beta: float = 0.0, dropout: float = 0.0,
                       rng: np.random.Generator | None = None):
        """Objective ``data_loss + l2_beta * sum ||W||^2`` and its parameter gradients.

        Gradients are returned in :meth:`params` order.
        """
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        grads_W = [2.0 * l2_beta * W for W in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]
        if n == 0:
            return self.penalty(l2_beta), [g for pair in zip(grads_W, grads_b) for g in pair]

        z, cache = self.logits(X, dropout, rng)
        loss = self.data_loss(z, y) + self.penalty(l2_beta)
        if self.binary:
            delta = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / n
        elif self.output_activation == "relu":
            delta = 2.0 * (np.maximum(z, 0.0) - y) / n * (z > 0)
        else:
            delta = 2.0 * (z - y) / n
        delta = delta[:, None]
        for n_layer in range(len(self.weights) - 1, -1, -1):
            a, zl, mask = cache[n_layer]
            if n_layer != len(self.weights) - 1:
                if mask is not None:
                    delta = delta * mask
                delta = delta * self._act_grad(zl)
            grads_W[n_layer] += a.T @ delta
            grads_b[n_layer] += delta.sum(axis=0)
            if n_layer > 0:
                delta = delta @ self.weights[n_layer].T
        return loss, [g for pair in zip(grads_W, grads_b) for g in pair]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "output_activation": self.output_activation,
            "hidden_activation": self.hidden_activation,
            "negative_slope": self.negative_slope,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        net = cls(d["layer_sizes"], d["output_activation"], d["hidden_activation"],
                  d["negative_slope"], zero=True)
        net.weights = [np.array(W, dtype=np.float64).reshape(a, b) for W, a, b in
                       zip(d["weights"], net.layer_sizes[:-1], net.layer_sizes[1:])]
        net.biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return net


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training


@dataclass
class DecoderConfig:
    hidden_sizes: tuple[int, ...] = HIDDEN_SIZES
    batch_size: int = 2048
    learning_rate: float = 1e-3
    l2_beta: float = 1e-7
    dropout: float = 0.1
    negative_slope: float = 0.01
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    baseline: bool = False
    exclude_performance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)


@dataclass
class DecoderModel:
    network: MLP
    encoder: FeatureEncoder
    target: str
    task: str
    config: DecoderConfig
    factor_run_id: str | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def baseline(self) -> bool:
        return self.encoder.baseline

    def features(self, instances: Sequence[LabeledInstance],
                 factors: KruskalFactors | None = None) -> np.ndarray:
        if not self.baseline and factors is not None and self.factor_run_id is not None \
                and factors.run_id() != self.factor_run_id:
            raise ValueError("factors differ from the ones this model was trained against")
        return self.encoder.transform(instances, factors)

    def predict_instances(self, instances, factors=None) -> np.ndarray:
        return predict(self, self.features(instances, factors))

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
        return {
            "format": "nice-decoder/1",
            "target": self.target,
            "task": self.task,
            "factor_run_id": self.factor_run_id,
            "config": cfg,
            "encoder": self.encoder.to_dict(),
            "network": self.network.to_dict(),
            "history": self.history,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DecoderModel":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format") != "nice-decoder/1":
            raise ValueError(f"{path}: not a decoder model file")
        cfg = dict(d["config"])
        cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
        return cls(MLP.from_dict(d["network"]), FeatureEncoder.from_dict(d["encoder"]),
                   d["target"], d["task"], DecoderConfig(**cfg), d["factor_run_id"], d["history"])


def predict(model: DecoderModel | MLP, feature_vectors) -> np.ndarray:
    """Dropout-free forward pass: probabilities for binary tasks, values >= 0 otherwise."""
    net = model.network if isinstance(model, DecoderModel) else model
    X = np.atleast_2d(np.asarray(feature_vectors, dtype=np.float64))
    if X.shape[1] != net.layer_sizes[0]:
        raise ValueError(f"feature vectors have length {X.shape[1]}, model expects {net.layer_sizes[0]}")
    return net.forward(X)


def _batched_loss(net: MLP, X, y, batch: int = 8192) -> float:
    total = 0.0
    for lo in range(0, len(y), batch):
        z, _ = net.logits(X[lo: lo + batch])
        total += net.data_loss(z, y[lo: lo + batch]) * len(y[lo: lo + batch])
    return total / max(len(y), 1)


def fit_network(X, y, task: str, config: DecoderConfig, X_val=None, y_val=None) -> tuple[MLP, list[dict]]:
    """Train an MLP on a prepared design matrix with Adam and early stopping."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise TrainingError("empty training set")
    if task == "binary" and len(np.unique(y)) < 2:
        raise TrainingError("binary training set contains a single class")
    rng = np.random.default_rng(config.seed)
    sizes = [X.shape[1], *config.hidden_sizes, 1]
    net = MLP(sizes, "sigmoid" if task == "binary" else "relu",
              negative_slope=config.negative_slope, seed=int(rng.integers(2**31)))
    net.weights[-1] *= 0.1
    if task == "binary":
        prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        net.biases[-1][:] = math.log(prior / (1 - prior))
    else:
        net.biases[-1][:] = float(y.mean())

    params = net.params()
    opt = Adam(params, lr=config.learning_rate)
    monitor_X, monitor_y = (X_val, y_val) if X_val is not None and len(y_val) else (X, y)
    best_loss, best_params, wait = math.inf, [p.copy() for p in params], 0
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(y))
        epoch_loss = 0.0
        for lo in range(0, len(y), config.batch_size):
            idx = order[lo: lo + config.batch_size]
            loss, grads = net.loss_and_grads(X[idx], y[idx], config.l2_beta, config.dropout, rng)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting {lo}")
            opt.step(params, grads)
            epoch_loss += loss * len(idx)
        monitor = _batched_loss(net, monitor_X, monitor_y)
        if not math.isfinite(monitor):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(y), "val_loss": monitor})
        if monitor < best_loss - 1e-12:
            best_loss, best_params, wait = monitor, [p.copy() for p in params], 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    for p, b in zip(params, best_params):
        p[...] = b
    logger.info("trained %d epochs, best monitored loss %.6g", len(history), best_loss)
    return net, history


def train(train_instances: Sequence[LabeledInstance], factors: KruskalFactors | None,
          target: str, config: DecoderConfig | None = None) -> DecoderModel:
    """Fit the decoder for ``target`` on ``train_instances``.

    A user-stratified ``validation_fraction`` of the instances is carved out
    for early stopping. In baseline mode ``factors`` may be ``None``; user ids
    are then one-hot encoded.
    """
    config = config or DecoderConfig()
    task = task_for(target)
    if not train_instances:
        raise TrainingError("empty training set")
    exclusions = feature_exclusions(target, config.exclude_performance)
    encoder = FeatureEncoder(target, exclusions, config.baseline)
    user_ids = None
    n_champions = None
    if factors is not None:
        user_ids = list(factors.user_ids) if factors.user_ids is not None else None
        n_champions = len(factors.F)
    encoder.fit(train_instances, factors, user_ids=user_ids, n_champions=n_champions)

    fit_part, val_part = list(train_instances), []
    if config.validation_fraction > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_part, val_part = split(train_instances, SplitSpec(config.validation_fraction, config.seed))
        if not fit_part:
            fit_part, val_part = list(train_instances), []

    X = encoder.transform(fit_part, factors)
    y = np.array([inst.target_value(target) for inst in fit_part])
    X_val = encoder.transform(val_part, factors) if val_part else None
    y_val = np.array([inst.target_value(target) for inst in val_part]) if val_part else None
    net, history = fit_network(X, y, task, config, X_val, y_val)
    run_id = factors.run_id() if factors is not None and not config.baseline else None
    return DecoderModel(net, encoder, target, task, config, run_id, history)


def gradient_check(model: DecoderModel | MLP, X, y, l2_beta: float | None = None,
                   step: float = 1e-5, n_samples: int | None = 200, seed: int = 0) -> float:
    """Largest relative gap between backprop and central finite differences.

    Checks ``n_samples`` randomly chosen parameters (all when ``None``), with
    dropout disabled. Relative error is ``|a - b| / max(|a|, |b|, 1e-6)``; the floor
    keeps finite-difference roundoff on near-zero entries from dominating.
    """
    if isinstance(model, DecoderModel):
        net, beta = model.network, model.config.l2_beta
    else:
        net, beta = model, 0.0
    if l2_beta is not None:
        beta = l2_beta
    X = np.asarray(X, dtype=np.float64).reshape(-1, net.layer_sizes[0])
    y = np.asarray(y, dtype=np.float64)
    _, grads = net.loss_and_grads(X, y, beta)
    params = net.params()
    coords = [(n, idx) for n, p in enumerate(params) for idx in np.ndindex(p.shape)]
    rng = np.random.default_rng(seed)
    if n_samples is not None and n_samples < len(coords):
        coords = [coords[c] for c in rng.choice(len(coords), n_samples, replace=False)]

    def objective():
        if len(y) == 0:
            return net.penalty(beta)
        z, _ = net.logits(X)
        return net.data_loss(z, y) + net.penalty(beta)

    worst = 0.0
    for n, idx in coords:
        p = params[n]
        saved = p[idx]
        p[idx] = saved + step
        up = objective()
        p[idx] = saved - step
        down = objective()
        p[idx] = saved
        numeric = (up - down) / (2 * step)
        analytic = grads[n][idx]
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return worst
