"""Desk-scale federated learning: data, models, AdaGrad local training and aggregation."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from ._abc import Base
from ._exceptions import DimensionMismatch, NonFiniteGradient, TooFewSamples
from ._normalize import as_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled samples.

    Attributes
    ----------
    features : (n, p) array
    labels : (n,) int array
        Class indices in ``[0, num_classes)``.
    name : str
    num_classes : int
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    num_classes: int = None

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype="float64"))
        labels = np.asarray(self.labels).astype(np.int64).ravel()
        if features.shape[0] != labels.size:
            raise DimensionMismatch(f"{features.shape[0]} feature rows but {labels.size} labels")
        num_classes = self.num_classes
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(num_classes))

    def __len__(self):
        return self.labels.size

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, indices, name=None):
        return Dataset(self.features[indices], self.labels[indices], name or self.name, self.num_classes)


@dataclass(frozen=True, eq=False)
class Shards:
    """Disjoint per-user index arrays and the data fractions ``rho``."""

    indices: tuple
    rho: np.ndarray


def make_blobs(n_samples, n_features, n_classes, separation=0.5, seed=None, name="synthetic"):
    """Gaussian-blob classification data with balanced classes.

    Class centres are drawn from ``N(0, separation**2 I)`` and samples add unit
    Gaussian noise to their centre.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=separation, size=(n_classes, n_features))
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = centres[labels] + rng.normal(size=(n_samples, n_features))
    return Dataset(features, labels, name, n_classes)


def make_topics(n_samples, n_features, n_classes, separation=0.5, seed=None, name="topics"):
    """Sparse classification data where every class owns a block of features.

    The features are cut into ``n_classes`` contiguous blocks. A sample of
    class ``c`` is a Gaussian blob on block ``c`` and exactly zero elsewhere,
    so gradients of a linear model vanish on the blocks of classes a user
    never sees.

    Raises
    ------
    ValueError
        If there are fewer features than classes.
    """
    if n_features < n_classes:
        raise ValueError(f"{n_features} features cannot hold {n_classes} class blocks")
    rng = np.random.default_rng(seed)
    blocks = np.array_split(np.arange(n_features), n_classes)
    mask = np.zeros((n_classes, n_features))
    for c, block in enumerate(blocks):
        mask[c, block] = 1.0
    centres = rng.normal(scale=separation, size=(n_classes, n_features))
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = mask[labels] * (centres[labels] + rng.normal(size=(n_samples, n_features)))
    return Dataset(features, labels, name, n_classes)


def train_test_split(dataset, n_test):
    """Split off the last ``n_test`` samples as the test set."""
    n_train = len(dataset) - n_test
    if n_train < 1 or n_test < 1:
        raise TooFewSamples(f"cannot split {len(dataset)} samples into train and {n_test} test samples")
    train = dataset.subset(np.arange(n_train), f"{dataset.name}-train")
    test = dataset.subset(np.arange(n_train, len(dataset)), f"{dataset.name}-test")
    return train, test


def load_csv(path, num_classes=None):
    """Read a dataset CSV: a header row, a ``label`` column and float features."""
    path = Path(path)
    table = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    names = table.dtype.names or ()
    if "label" not in names:
        raise ValueError(f"{path}: no 'label' column")
    feature_names = [name for name in names if name != "label"]
    if not feature_names:
        raise ValueError(f"{path}: no feature columns")
    features = np.column_stack([table[name] for name in feature_names])
    labels = table["label"]
    if np.any(np.isnan(features)) or np.any(labels != np.round(labels)):
        raise ValueError(f"{path}: features must be numeric and labels integral")
    return Dataset(features, labels, path.stem, num_classes)


def save_csv(dataset, path):
    """Write a dataset in the format read by :func:`load_csv`."""
    header = ",".join([f"x{i}" for i in range(dataset.n_features)] + ["label"])
    table = np.column_stack([dataset.features, dataset.labels])
    fmt = ["%.17g"] * dataset.n_features + ["%d"]
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def partition(dataset, K, mode="iid", seed=None):
    """Split a dataset among ``K`` users.

    ``"iid"`` deals a random permutation into ``K`` near-equal parts.
    ``"noniid"`` sorts a random permutation by label, cuts it into ``2K``
    shards and gives user ``j`` shards ``2j`` and ``2j + 1``.

    Returns
    -------
    shards : Shards

    Raises
    ------
    TooFewSamples
        If there are fewer samples than users, or fewer than ``2K`` for
        ``"noniid"``, so that no user ends up with an empty shard.
    """
    n = len(dataset)
    if n < K:
        raise TooFewSamples(f"{n} samples cannot be split among {K} users")
    if mode == "noniid" and n < 2 * K:
        raise TooFewSamples(f"{n} samples cannot be cut into {2 * K} non-empty label-sorted shards")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)

    if mode == "iid":
        parts = np.array_split(order, K)
    elif mode == "noniid":
        order = order[np.argsort(dataset.labels[order], kind="stable")]
        pieces = np.array_split(order, 2 * K)
        parts = [np.concatenate(pieces[2 * j : 2 * j + 2]) for j in range(K)]
    else:
        raise ValueError(f"unknown partition mode {mode!r}")

    sizes = np.array([part.size for part in parts], dtype="float64")
    rho = sizes / n
    rho[-1] = 1.0 - rho[:-1].sum()
    return Shards(tuple(parts), rho)


class LogisticRegression:
    """Multinomial logistic regression with ``d = p C + C`` parameters."""

    name = "logreg"

    def __init__(self, n_features, n_classes):
        self.n_features = n_features
        self.n_classes = n_classes

    @property
    def size(self):
        return self.n_features * self.n_classes + self.n_classes

    def init(self, rng):
        scale = 1.0 / np.sqrt(self.n_features)
        return rng.uniform(-scale, scale, size=self.size)

    def _unpack(self, w):
        split = self.n_features * self.n_classes
        return w[:split].reshape(self.n_features, self.n_classes), w[split:]

    def logits(self, w, X):
        W, b = self._unpack(w)
        return X @ W + b

    def loss_and_grad(self, w, X, y):
        """Mean cross-entropy over the batch and its gradient."""
        W, b = self._unpack(w)
        z = X @ W + b
        loss = _cross_entropy(z, y)
        dz = _softmax_residual(z, y)
        return loss, np.concatenate([(X.T @ dz).ravel(), dz.sum(axis=0)])


class MLP:
    """One hidden ``tanh`` layer of width ``hidden``."""

    name = "mlp"

    def __init__(self, n_features, n_classes, hidden=16):
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden

    @property
    def size(self):
        p, h, C = self.n_features, self.hidden, self.n_classes
        return p * h + h + h * C + C

    def init(self, rng):
        p, h, C = self.n_features, self.hidden, self.n_classes
        first = rng.uniform(-1, 1, size=p * h) / np.sqrt(p)
        second = rng.uniform(-1, 1, size=h * C) / np.sqrt(h)
        return np.concatenate([first, np.zeros(h), second, np.zeros(C)])

    def _unpack(self, w):
        p, h, C = self.n_features, self.hidden, self.n_classes
        sizes = np.cumsum([p * h, h, h * C])
        W1, b1, W2, b2 = np.split(w, sizes)
        return W1.reshape(p, h), b1, W2.reshape(h, C), b2

    def logits(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        return np.tanh(X @ W1 + b1) @ W2 + b2

    def loss_and_grad(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        H = np.tanh(X @ W1 + b1)
        z = H @ W2 + b2
        loss = _cross_entropy(z, y)
        dz = _softmax_residual(z, y)
        dH = (dz @ W2.T) * (1.0 - H ** 2)
        grad = np.concatenate([(X.T @ dH).ravel(), dH.sum(axis=0), (H.T @ dz).ravel(), dz.sum(axis=0)])
        return loss, grad


def _cross_entropy(z, y):
    log_prob = z - special.logsumexp(z, axis=1, keepdims=True)
    return float(-np.mean(log_prob[np.arange(y.size), y]))


def _softmax_residual(z, y):
    residual = special.softmax(z, axis=1)
    residual[np.arange(y.size), y] -= 1.0
    return residual / y.size


def make_model(name, n_features, n_classes, hidden=16):
    if name == "logreg":
        return LogisticRegression(n_features, n_classes)
    if name == "mlp":
        return MLP(n_features, n_classes, hidden)
    raise ValueError(f"unknown model {name!r}")


@dataclass(eq=False)
class ModelState:
    """Flat parameter vector and the architecture that interprets it."""

    w: np.ndarray
    architecture: object

    @property
    def d(self):
        return self.w.size


class LocalAdaGrad(Base):
    """AdaGrad on one user's shard; one iterate per local step.

    The squared-gradient accumulator starts at zero. With
    ``order="standard"`` it is updated before the parameter step; with
    ``order="lagged"`` the step uses the accumulator from before the current
    gradient, so the first step divides by ``sqrt(eps_a)``.

    Parameters
    ----------
    model : object
        Has ``loss_and_grad(w, X, y) -> (loss, grad)``.
    features : (n, p) array
    labels : (n,) array
    w0 : (d,) array_like
        Incoming global model.
    L : int
        Number of local steps.
    alpha : float
        Step size.
    eps_a : float
        Added to the accumulator under the square root.
    batch_size : int
        Mini-batch size, drawn without replacement at every step. The full
        shard is used once it is at least the shard size.
    order : {"standard", "lagged"}
    rng : numpy.random.Generator, optional
    """

    def __init__(
        self,
        model,
        features,
        labels,
        w0,
        L=5,
        alpha=0.05,
        eps_a=1e-2,
        batch_size=32,
        order="standard",
        rng=None,
        callback=None,
    ):
        if L < 1:
            raise ValueError("L must be >= 1")
        if order not in ("standard", "lagged"):
            raise ValueError(f"unknown AdaGrad order {order!r}")
        super().__init__(w0, maxiter=L, callback=callback)
        self._model = model
        self._features = features
        self._labels = labels
        self._alpha = alpha
        self._eps_a = eps_a
        self._batch_size = min(batch_size, len(labels))
        self._order = order
        self._rng = np.random.default_rng() if rng is None else rng
        self._g = np.zeros_like(self._x0)

    @property
    def g_accum(self):
        """(d,) array: Sum of squared gradients so far."""
        return self._g.copy()

    def _batch(self):
        n = len(self._labels)
        if self._batch_size >= n:
            return np.arange(n)
        return self._rng.choice(n, size=self._batch_size, replace=False)

    def _update_iterate(self, wk):
        batch = self._batch()
        _, grad = self._model.loss_and_grad(wk, self._features[batch], self._labels[batch])
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient at local step {self.k}")
        if self._order == "standard":
            self._g = self._g + grad ** 2
            return wk - self._alpha * grad / np.sqrt(self._g + self._eps_a)
        wkp1 = wk - self._alpha * grad / np.sqrt(self._g + self._eps_a)
        self._g = self._g + grad ** 2
        return wkp1


def local_train_adagrad(state, shard, L=5, batch_size=32, alpha=0.05, eps_a=1e-2, order="standard", rng=None):
    """Run ``L`` AdaGrad steps from the global model and return ``w_L - w_0``.

    Parameters
    ----------
    state : ModelState
        Global model; not modified.
    shard : Dataset
        The user's local data.

    Returns
    -------
    delta_w : (d,) array
    """
    w_L = LocalAdaGrad.solve(
        state.architecture,
        shard.features,
        shard.labels,
        state.w,
        L=L,
        alpha=alpha,
        eps_a=eps_a,
        batch_size=batch_size,
        order=order,
        rng=rng,
    )
    return w_L - state.w


def aggregate(global_w, updates, rho):
    """Weighted global update ``w + sum_j rho_j u_j``.

    Examples
    --------
    >>> aggregate([0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]], [0.5, 0.5])
    array([1., 1.])
    """
    global_w = as_vector(global_w, "global_w")
    rho = as_vector(rho, "rho")
    updates = np.asarray(updates, dtype="float64")
    if updates.ndim != 2 or updates.shape != (rho.size, global_w.size):
        raise DimensionMismatch(f"updates have shape {updates.shape}, expected {(rho.size, global_w.size)}")
    return global_w + rho @ updates


def evaluate(state, dataset):
    """Mean cross-entropy and top-1 accuracy of a model on a dataset.

    Returns
    -------
    metrics : dict
        ``{"loss": float, "accuracy": float}``.
    """
    z = state.architecture.logits(state.w, dataset.features)
    accuracy = float(np.mean(np.argmax(z, axis=1) == dataset.labels))
    return {"loss": _cross_entropy(z, dataset.labels), "accuracy": accuracy}
