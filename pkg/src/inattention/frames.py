"""Deep embedded clustering of framing feature vectors into discrete frames.

A small denoising autoencoder (numpy, hand-written gradients) is pretrained on
the feature vectors, cluster centers are seeded by k-means in the latent
space, and encoder weights and centers are then trained jointly against
reconstruction error plus KL(P || Q), where Q is a Student-t soft assignment
and P its sharpened self-training target.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

ACTIVATIONS = ("tanh", "linear")


class TrainingDivergedError(RuntimeError):
    pass


class ClusteringError(ValueError):
    pass


# ---------------------------------------------------------------------------
# autoencoder


class Autoencoder:
    """Fully connected encoder ``d_in -> hidden -> d_z`` with a mirrored decoder.

    Hidden layers use ``activation``; the latent layer and the output layer are
    linear. ``noise`` is the standard deviation of the Gaussian corruption added
    to inputs during pretraining.
    """

    def __init__(
        self,
        d_in: int,
        latent_dim: int = 8,
        hidden: Sequence[int] = (64,),
        activation: str = "tanh",
        noise: float = 0.1,
        seed: int = 0,
    ) -> None:
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if d_in < 1 or latent_dim < 1 or any(h < 1 for h in hidden):
            raise ValueError("layer sizes must be positive")
        if noise < 0:
            raise ValueError("noise must be non-negative")
        self.d_in = int(d_in)
        self.latent_dim = int(latent_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.noise = float(noise)
        sizes = [self.d_in, *self.hidden, self.latent_dim, *reversed(self.hidden), self.d_in]
        self.sizes = sizes
        # index of the layer whose (linear) output is the latent code
        self.latent_layer = len(self.hidden)
        rng = np.random.default_rng(seed)
        self.params: list[Array] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def _is_linear(self, layer: int) -> bool:
        return (
            self.activation == "linear"
            or layer == self.latent_layer
            or layer == self.n_layers - 1
        )

    def forward(self, X: Array) -> list[Array]:
        """All layer outputs, starting with the input itself."""
        acts = [X]
        for layer in range(self.n_layers):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            pre = acts[-1] @ W + b
            acts.append(pre if self._is_linear(layer) else np.tanh(pre))
        return acts

    def backward(
        self, acts: list[Array], grad_out: Array, grad_z: Array | None = None
    ) -> list[Array]:
        """Parameter gradients given dL/d(output) and an optional extra dL/dz."""
        grads: list[Array] = [np.empty(0)] * len(self.params)
        delta = grad_out
        for layer in reversed(range(self.n_layers)):
            if layer == self.latent_layer and grad_z is not None:
                # acts[layer + 1] is z; the decoder gradient has already arrived
                delta = delta + grad_z
            if not self._is_linear(layer):
                delta = delta * (1.0 - acts[layer + 1] ** 2)
            grads[2 * layer] = acts[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer > 0:
                delta = delta @ self.params[2 * layer].T
        return grads

    def encode(self, X: Array) -> Array:
        return self.forward(np.asarray(X, dtype=float))[self.latent_layer + 1]

    def reconstruct(self, X: Array) -> Array:
        return self.forward(np.asarray(X, dtype=float))[-1]

    def reconstruction_loss(self, X: Array, noisy: Array | None = None) -> float:
        """Mean over records of ``||x - g(r(x_in))||^2`` with ``x_in = noisy or x``."""
        X = np.asarray(X, dtype=float)
        out = self.reconstruct(X if noisy is None else noisy)
        return float(np.mean(np.sum((X - out) ** 2, axis=1)))

    def copy(self) -> "Autoencoder":
        other = object.__new__(Autoencoder)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def to_dict(self) -> dict[str, Any]:
        return {
            "d_in": self.d_in,
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "noise": self.noise,
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Autoencoder":
        ae = cls(
            data["d_in"], data["latent_dim"], data["hidden"], data["activation"], data["noise"]
        )
        ae.params = [np.asarray(p, dtype=float) for p in data["params"]]
        return ae


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    pretrain_epochs: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be positive and momentum in [0, 1)")
        if self.batch_size < 1 or self.pretrain_epochs < 0:
            raise ValueError("batch_size must be >= 1 and pretrain_epochs >= 0")


def _check_finite(loss: float, lr: float, phase: str) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"{phase} diverged (loss={loss}); lower the learning_rate setting "
            f"(currently {lr:g})"
        )


class _Momentum:
    def __init__(self, params: list[Array], lr: float, momentum: float) -> None:
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params: list[Array], grads: list[Array]) -> None:
        for p, v, g in zip(params, self.velocity, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v


def pretrain(
    X: Array,
    ae: Autoencoder | None = None,
    config: TrainingConfig | None = None,
    n_clusters: int = 1,
    **ae_kwargs: Any,
) -> tuple[Autoencoder, list[float]]:
    """Denoising pretraining by mini-batch SGD with momentum.

    Returns the trained autoencoder and the per-epoch history of the denoising
    loss evaluated on the whole training set under one fixed noise draw (entry
    0 is the loss before training).
    """
    X = np.asarray(X, dtype=float)
    cfg = config or TrainingConfig()
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("features must be a finite 2-D array")
    if X.shape[0] < 2 * n_clusters:
        raise ClusteringError(
            f"pretraining needs at least 2N = {2 * n_clusters} records, got {X.shape[0]}"
        )
    if ae is None:
        ae = Autoencoder(X.shape[1], seed=cfg.seed, **ae_kwargs)
    elif ae.d_in != X.shape[1]:
        raise ValueError(f"autoencoder expects {ae.d_in} features, got {X.shape[1]}")
    rng = np.random.default_rng(cfg.seed)
    eval_noisy = X + ae.noise * np.random.default_rng(cfg.seed + 1).standard_normal(X.shape)
    history = [ae.reconstruction_loss(X, eval_noisy)]
    _check_finite(history[0], cfg.learning_rate, "pretraining")
    opt = _Momentum(ae.params, cfg.learning_rate, cfg.momentum)
    T = X.shape[0]
    for _ in range(cfg.pretrain_epochs):
        order = rng.permutation(T)
        for start in range(0, T, cfg.batch_size):
            batch = X[order[start : start + cfg.batch_size]]
            noisy = batch + ae.noise * rng.standard_normal(batch.shape)
            acts = ae.forward(noisy)
            grad_out = 2.0 * (acts[-1] - batch) / batch.shape[0]
            opt.step(ae.params, ae.backward(acts, grad_out))
        history.append(ae.reconstruction_loss(X, eval_noisy))
        _check_finite(history[-1], cfg.learning_rate, "pretraining")
    return ae, history


# ---------------------------------------------------------------------------
# clustering primitives


def init_centers(
    Z: Array, n_clusters: int, n_init: int = 10, seed: int = 0
) -> Array:
    """Lloyd k-means in the latent space, best of ``n_init`` seeded restarts."""
    Z = np.asarray(Z, dtype=float)
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    distinct = np.unique(Z, axis=0).shape[0]
    if n_clusters > distinct:
        raise ClusteringError(
            f"N={n_clusters} exceeds the number of distinct latent points ({distinct})"
        )
    if n_clusters == 1:
        return Z.mean(axis=0, keepdims=True)
    km = KMeans(n_clusters=n_clusters, n_init=n_init, random_state=seed, algorithm="lloyd")
    km.fit(Z)
    return np.asarray(km.cluster_centers_, dtype=float)


def _kernel(Z: Array, centers: Array) -> Array:
    d2 = np.sum((Z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return 1.0 / (1.0 + d2)


def soft_assign(Z: Array, centers: Array) -> Array:
    """Student-t (one degree of freedom) soft assignment ``q[t, n]``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if Z.shape[1] != centers.shape[1]:
        raise ValueError(f"latent dimension {Z.shape[1]} != center dimension {centers.shape[1]}")
    k = _kernel(Z, centers)
    return k / k.sum(axis=1, keepdims=True)


def target_distribution(q: Array) -> Array:
    """Sharpened target ``p[t, n]`` proportional to ``q[t, n]^2 / F_n``."""
    q = np.asarray(q, dtype=float)
    F = q.sum(axis=0)
    # a cluster with F_n = 0 has q_tn = 0 for every t and contributes nothing
    weight = np.divide(q**2, F, out=np.zeros_like(q), where=F > 0)
    return weight / weight.sum(axis=1, keepdims=True)


def kl_divergence(p: Array, q: Array) -> float:
    """Mean over records of ``sum_n p log(p / q)``; zero entries of p contribute 0."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    mask = p > 0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * np.log(p[mask] / q[mask])
    return float(np.sum(terms) / p.shape[0])


def dec_objective(
    ae: Autoencoder, centers: Array, X: Array, P: Array, grad: bool = True
) -> tuple[float, list[Array], Array]:
    """Mean reconstruction error plus mean KL(P || Q) on clean inputs.

    Returns ``(loss, parameter gradients, center gradient)``; gradients are
    empty when ``grad`` is false. P is treated as a constant.
    """
    B = X.shape[0]
    acts = ae.forward(X)
    Z = acts[ae.latent_layer + 1]
    k = _kernel(Z, centers)
    q = k / k.sum(axis=1, keepdims=True)
    resid = acts[-1] - X
    loss = float(np.sum(resid**2) / B) + kl_divergence(P, q)
    if not grad:
        return loss, [], np.empty(0)
    # d KL / d z_t = 2 sum_n k_tn (p_tn - q_tn)(z_t - c_n); opposite sign for c_n
    coef = 2.0 * k * (P - q) / B
    diff = Z[:, None, :] - centers[None, :, :]
    grad_z = np.einsum("tn,tnd->td", coef, diff)
    grad_c = -np.einsum("tn,tnd->nd", coef, diff)
    grads = ae.backward(acts, 2.0 * resid / B, grad_z)
    return loss, grads, grad_c


# ---------------------------------------------------------------------------
# joint training


@dataclass
class FrameClustering:
    """Result of joint training.

    ``labels`` holds the frame index (0-based) for records whose maximum soft
    assignment exceeds ``confidence``, and -1 for discarded records.
    ``assignments`` is the unfiltered argmax. ``interval_losses`` has one list
    per frozen-target interval with the full-data loss before the interval and
    after every full-batch step (empty lists in mini-batch mode).
    """

    centers: Array
    latent: Array
    q: Array
    p: Array
    assignments: NDArray[np.int64]
    labels: NDArray[np.int64]
    tol: float
    confidence: float
    update_interval: int
    converged: bool
    iterations: int
    refreshes: int
    changed_history: list[float] = field(default_factory=list)
    interval_losses: list[list[float]] = field(default_factory=list)

    @property
    def frequencies(self) -> Array:
        return self.q.sum(axis=0)

    @property
    def max_confidence(self) -> Array:
        return self.q.max(axis=1)

    @property
    def discarded(self) -> int:
        return int(np.sum(self.labels < 0))


def dec_train(
    ae: Autoencoder,
    X: Array,
    centers: Array,
    tol: float = 1e-3,
    confidence: float = 0.9,
    update_interval: int = 140,
    max_iter: int = 20000,
    full_batch: bool = False,
    config: TrainingConfig | None = None,
) -> FrameClustering:
    """Joint training of encoder, decoder and centers with periodic target refresh.

    Iteration ``i`` refreshes Q, P and the hard labels when
    ``i % update_interval == 0`` and otherwise takes one gradient step against
    the frozen P. Training stops at a refresh whose fraction of changed labels
    (relative to the previous refresh) is below ``tol``. The refresh at i = 0
    compares against the k-means labels of ``centers``. The autoencoder is
    updated in place; noise is not used here.

    In ``full_batch`` mode every step is a gradient step on the whole dataset
    with a backtracking step size, so the loss is non-increasing within each
    interval. On hitting ``max_iter`` the state of the most stable refresh is
    returned with ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    cfg = config or TrainingConfig()
    if not 0 < tol < 1 or not 0 < confidence < 1 or update_interval < 1:
        raise ValueError("tol and confidence must lie in (0, 1), update_interval >= 1")
    centers = np.array(centers, dtype=float)
    T = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = _Momentum([*ae.params, centers], cfg.learning_rate, cfg.momentum)
    step = cfg.learning_rate

    prev = np.argmax(soft_assign(ae.encode(X), centers), axis=1)
    changed_history: list[float] = []
    interval_losses: list[list[float]] = []
    best: tuple[float, list[Array], Array] | None = None
    P = np.empty((T, centers.shape[0]))
    order = rng.permutation(T)
    cursor = 0
    converged = False
    refreshes = 0
    i = 0
    while i < max_iter:
        if i % update_interval == 0:
            q = soft_assign(ae.encode(X), centers)
            P = target_distribution(q)
            current = np.argmax(q, axis=1)
            changed = float(np.mean(current != prev))
            changed_history.append(changed)
            refreshes += 1
            prev = current
            if best is None or changed < best[0]:
                best = (changed, [p.copy() for p in ae.params], centers.copy())
            if changed < tol and i > 0:
                converged = True
                break
            if full_batch:
                interval_losses.append([dec_objective(ae, centers, X, P, grad=False)[0]])
        elif full_batch:
            step = _backtracking_step(ae, centers, X, P, step, interval_losses[-1])
            _check_finite(interval_losses[-1][-1], cfg.learning_rate, "clustering")
        else:
            if cursor + cfg.batch_size > T:
                order, cursor = rng.permutation(T), 0
            idx = order[cursor : cursor + cfg.batch_size]
            cursor += cfg.batch_size
            loss, grads, grad_c = dec_objective(ae, centers, X[idx], P[idx])
            _check_finite(loss, cfg.learning_rate, "clustering")
            opt.step([*ae.params, centers], [*grads, grad_c])
        i += 1

    if not converged:
        assert best is not None
        logger.warning("clustering hit max_iter=%d before label stability", max_iter)
        for dst, src in zip(ae.params, best[1]):
            dst[...] = src
        centers = best[2]
    Z = ae.encode(X)
    q = soft_assign(Z, centers)
    assignments = np.argmax(q, axis=1)
    labels = np.where(q.max(axis=1) > confidence, assignments, -1)
    return FrameClustering(
        centers=centers,
        latent=Z,
        q=q,
        p=target_distribution(q),
        assignments=assignments,
        labels=labels,
        tol=tol,
        confidence=confidence,
        update_interval=update_interval,
        converged=converged,
        iterations=i,
        refreshes=refreshes,
        changed_history=changed_history,
        interval_losses=interval_losses,
    )


def _backtracking_step(
    ae: Autoencoder,
    centers: Array,
    X: Array,
    P: Array,
    step: float,
    losses: list[float],
    max_halvings: int = 40,
) -> float:
    """One full-batch gradient step, halving until the loss does not increase."""
    loss, grads, grad_c = dec_objective(ae, centers, X, P)
    params = [*ae.params, centers]
    saved = [p.copy() for p in params]
    for _ in range(max_halvings):
        for p, s, g in zip(params, saved, [*grads, grad_c]):
            p[...] = s - step * g
        new = dec_objective(ae, centers, X, P, grad=False)[0]
        if np.isfinite(new) and new <= loss:
            losses.append(new)
            return step * 2.0
        step *= 0.5
    for p, s in zip(params, saved):
        p[...] = s
    losses.append(loss)
    return step


# ---------------------------------------------------------------------------
# estimator and file formats


class DeepEmbeddedClustering(ClusterMixin, TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` pretrains, initializes and jointly trains.

    ``labels_`` uses -1 for records below the confidence threshold;
    ``transform`` returns latent vectors; ``predict`` applies the trained
    encoder, centers and confidence filter to new records.
    """

    def __init__(
        self,
        n_clusters: int = 4,
        latent_dim: int = 8,
        hidden: tuple[int, ...] = (64,),
        activation: str = "tanh",
        noise: float = 0.1,
        learning_rate: float = 1e-3,
        momentum: float = 0.9,
        batch_size: int = 32,
        pretrain_epochs: int = 100,
        n_init: int = 10,
        tol: float = 1e-3,
        confidence: float = 0.9,
        update_interval: int = 140,
        max_iter: int = 20000,
        full_batch: bool = False,
        random_state: int = 0,
    ) -> None:
        self.n_clusters = n_clusters
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.activation = activation
        self.noise = noise
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.pretrain_epochs = pretrain_epochs
        self.n_init = n_init
        self.tol = tol
        self.confidence = confidence
        self.update_interval = update_interval
        self.max_iter = max_iter
        self.full_batch = full_batch
        self.random_state = random_state

    def fit(self, X: Any, y: Any = None) -> "DeepEmbeddedClustering":
        X = check_array(X, dtype=np.float64)
        cfg = TrainingConfig(
            self.learning_rate, self.momentum, self.batch_size, self.pretrain_epochs,
            self.random_state,
        )
        ae = Autoencoder(
            X.shape[1], self.latent_dim, self.hidden, self.activation, self.noise,
            seed=self.random_state,
        )
        ae, self.pretrain_history_ = pretrain(X, ae, cfg, n_clusters=self.n_clusters)
        centers = init_centers(ae.encode(X), self.n_clusters, self.n_init, self.random_state)
        self.clustering_ = dec_train(
            ae, X, centers, self.tol, self.confidence, self.update_interval,
            self.max_iter, self.full_batch, cfg,
        )
        self.autoencoder_ = ae
        self.cluster_centers_ = self.clustering_.centers
        self.labels_ = self.clustering_.labels
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X: Any) -> Array:
        check_is_fitted(self, "autoencoder_")
        X = check_array(X, dtype=np.float64)
        return self.autoencoder_.encode(X)

    def predict_proba(self, X: Any) -> Array:
        return soft_assign(self.transform(X), self.cluster_centers_)

    def predict(self, X: Any) -> NDArray[np.int64]:
        q = self.predict_proba(X)
        return np.where(q.max(axis=1) > self.confidence, np.argmax(q, axis=1), -1)


def read_features(path: str) -> tuple[NDArray[np.int64], Array]:
    """Feature CSV ``t,v1,...,vd`` (header required) -> (t, features)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != "t" or len(rows[0]) < 2:
        raise ValueError(f"{path}: expected header 't,v1,...,vd'")
    width = len(rows[0])
    ts, feats = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            ts.append(int(row[0]))
            feats.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    X = np.asarray(feats, dtype=float).reshape(len(ts), width - 1)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite feature value")
    return np.asarray(ts, dtype=np.int64), X


def write_assignments(path: str, t: Sequence[int], result: FrameClustering) -> None:
    """Output CSV ``t,frame,confidence`` with 1-based frames and -1 for discards."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "frame", "confidence"])
        for tt, lab, conf in zip(t, result.labels, result.max_confidence):
            w.writerow([int(tt), int(lab) + 1 if lab >= 0 else -1, repr(float(conf))])


def write_latent(path: str, t: Sequence[int], Z: Array) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"z{i + 1}" for i in range(Z.shape[1])]])
        for tt, z in zip(t, Z):
            w.writerow([int(tt), *[repr(float(v)) for v in z]])
