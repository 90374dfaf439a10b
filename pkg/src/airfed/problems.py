"""Learning tasks: regularized logistic regression with per-sample oracles.

Per-sample loss for feature a, label b in {+1,-1}:

    f(theta) = log(1 + exp(-(a.theta) b)) + (lam/2) ||theta||^2

The global objective is the device-mean of per-device sample means, so the
regularizer appears exactly once.  With unit-norm features the objective is
lam-strongly convex and (1/4 + lam)-smooth.

Also provides IDX image ingestion (binary pair of classes), synthetic data
generation, contiguous partitioning, and a high-precision full-batch solver
whose output anchors every optimality-gap measurement.
"""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from ._rng import REALM_DATA, substream

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass(frozen=True)
class LocalDataset:
    """One device's samples: unit-norm feature rows and +/-1 labels."""

    features: np.ndarray  # (m, d) float64
    labels: np.ndarray    # (m,) float64, entries +1 or -1

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.float64)
        if feats.ndim != 2 or labs.ndim != 1 or feats.shape[0] != labs.shape[0]:
            raise ValueError("features must be (m, d) with m matching labels")
        if feats.shape[0] == 0:
            raise ValueError("empty dataset")
        norms = np.linalg.norm(feats, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("features must be normalized to unit l2 norm")
        if not np.all(np.isin(labs, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class LogisticProblem:
    """Per-device datasets plus the shared regularizer."""

    datasets: list
    lam: float
    dim: int
    holdout: LocalDataset = None
    _pooled: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("need at least one device dataset")
        if self.lam <= 0.0:
            raise ValueError("regularizer must be positive")
        for ds in self.datasets:
            if ds.dim != self.dim:
                raise ValueError("all datasets must share the model dimension")
        feats = np.concatenate([ds.features for ds in self.datasets], axis=0)
        labs = np.concatenate([ds.labels for ds in self.datasets])
        n = len(self.datasets)
        weights = np.concatenate(
            [np.full(ds.n_samples, 1.0 / (n * ds.n_samples)) for ds in self.datasets]
        )
        self._pooled = (feats, labs, weights)

    @property
    def n_devices(self):
        return len(self.datasets)

    def device_sizes(self):
        return [ds.n_samples for ds in self.datasets]

    def sample_grad_into(self, device, sample, theta, out):
        """Hot-path per-sample gradient; returns the logit a.theta."""
        ds = self.datasets[device]
        if not 0 <= sample < ds.n_samples:
            raise IndexError(f"sample {sample} out of range for device {device}")
        return kernels.sample_grad(ds.features[sample], ds.labels[sample], self.lam, theta, out)

    def sample_loss_grad(self, device, sample, theta):
        """(loss, gradient) for one sample; stable for margins up to ~700."""
        ds = self.datasets[device]
        if not 0 <= sample < ds.n_samples:
            raise IndexError(f"sample {sample} out of range for device {device}")
        grad = np.empty(self.dim)
        z = kernels.sample_grad(ds.features[sample], ds.labels[sample], self.lam, theta, grad)
        b = ds.labels[sample]
        loss = float(np.logaddexp(0.0, -b * z) + 0.5 * self.lam * (theta @ theta))
        return loss, grad

    def full_local_grad(self, device, theta):
        """Mean of the device's per-sample gradients."""
        ds = self.datasets[device]
        z = ds.features @ theta
        coef = -ds.labels * _sigmoid(-ds.labels * z)
        return ds.features.T @ (coef / ds.n_samples) + self.lam * theta

    def global_loss(self, theta):
        return float(self.global_loss_stack(np.asarray(theta)[None, :])[0])

    def global_loss_stack(self, thetas):
        """Global loss F evaluated at each row of `thetas`, one matmul."""
        feats, labs, weights = self._pooled
        z = feats @ thetas.T
        losses = weights @ np.logaddexp(0.0, -labs[:, None] * z)
        return losses + 0.5 * self.lam * np.einsum("kd,kd->k", thetas, thetas)

    def global_grad(self, theta):
        feats, labs, weights = self._pooled
        z = feats @ theta
        coef = -labs * _sigmoid(-labs * z)
        return feats.T @ (weights * coef) + self.lam * theta

    def test_accuracy(self, theta):
        """Accuracy of sign(a.theta) on the holdout set; nan if there is none."""
        if self.holdout is None:
            return float("nan")
        logits = self.holdout.features @ theta
        return float(np.mean((logits > 0.0) == (self.holdout.labels > 0.0)))

    def smoothness(self):
        """Analytic smoothness constant for unit-norm features."""
        return 0.25 + self.lam

    def strong_convexity(self):
        return self.lam


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def make_problem(datasets, lam=None, holdout=None):
    """Problem from per-device datasets; default lam = 1/(total samples)."""
    total = sum(ds.n_samples for ds in datasets)
    if lam is None:
        lam = 1.0 / total
    return LogisticProblem(datasets=list(datasets), lam=lam, dim=datasets[0].dim, holdout=holdout)


def solve_centralized(problem, tolerance=1e-13, max_iter=100_000):
    """Full-batch gradient descent with Armijo backtracking.

    Runs until the global gradient norm drops below `tolerance`; this is the
    oracle behind all optimality-gap metrics, so the default is near the
    float64 noise floor.  Raises on non-convergence or a stalled line search.
    """
    theta = np.zeros(problem.dim)
    fval = problem.global_loss(theta)
    grad = problem.global_grad(theta)
    step = 1.0 / problem.smoothness()
    for it in range(max_iter):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) < tolerance:
            return theta, fval
        step = min(step * 2.0, 1e8)
        while True:
            cand = theta - step * grad
            fc = problem.global_loss(cand)
            if fc <= fval - 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                raise RuntimeError(
                    f"line search stalled at iteration {it}: "
                    f"grad norm {np.sqrt(gnorm2):.3e} > tolerance {tolerance:.3e}"
                )
        theta = cand
        fval = fc
        grad = problem.global_grad(theta)
    raise RuntimeError(
        f"no convergence in {max_iter} iterations: "
        f"grad norm {np.linalg.norm(grad):.3e} > tolerance {tolerance:.3e}"
    )


def load_idx_binary_pair(images_path, labels_path, class_a=3, class_b=5,
                         train_count=1000, test_count=1968):
    """Two-class train/test split from one IDX image/label file pair.

    Keeps samples labeled class_a (+1) or class_b (-1) in file order; the
    first `train_count` matches become the training set and the following
    `test_count` the test set.  Pixels are scaled to [0,1] and every feature
    is normalized to unit l2 norm.
    """
    images = _read_idx(images_path, IDX_MAGIC_IMAGES)
    labels = _read_idx(labels_path, IDX_MAGIC_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}"
        )
    mask = (labels == class_a) | (labels == class_b)
    need = train_count + test_count
    have = int(mask.sum())
    if have < need:
        raise ValueError(f"only {have} samples of classes {class_a}/{class_b}, need {need}")
    feats = images[mask][:need].reshape(need, -1).astype(np.float64) / 255.0
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm feature encountered; cannot normalize")
    feats /= norms[:, None]
    signs = np.where(labels[mask][:need] == class_a, 1.0, -1.0)
    train = LocalDataset(feats[:train_count], signs[:train_count])
    test = LocalDataset(feats[train_count:need], signs[train_count:need])
    return train, test


def _read_idx(path, expected_magic):
    """Big-endian IDX payload as a numpy uint8 array of the declared shape."""
    opener = gzip.open if _is_gzip(path) else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) != header + count:
        raise ValueError(f"{path}: payload is {len(raw) - header} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _is_gzip(path):
    with open(path, "rb") as f:
        return f.read(2) == b"\x1f\x8b"


def synthesize(n_devices, samples_per_device, dimension, seed, flip_rate=0.1, test_count=0):
    """Deterministic synthetic binary task partitioned evenly across devices.

    Ground-truth direction, unit-norm Gaussian features, labels sign(a.theta*)
    with `flip_rate` of them flipped.  When test_count > 0 a holdout drawn from
    the same distribution is attached to the returned problem.
    """
    if n_devices < 1 or samples_per_device < 1 or dimension < 1:
        raise ValueError("n_devices, samples_per_device and dimension must be positive")
    rng = substream(seed, REALM_DATA)
    total = n_devices * samples_per_device + test_count
    truth = rng.standard_normal(dimension)
    feats = rng.standard_normal((total, dimension))
    feats /= np.linalg.norm(feats, axis=1)[:, None]
    labs = np.where(feats @ truth >= 0.0, 1.0, -1.0)
    flips = rng.random(total) < flip_rate
    labs[flips] *= -1.0
    n_train = n_devices * samples_per_device
    train = LocalDataset(feats[:n_train], labs[:n_train])
    holdout = LocalDataset(feats[n_train:], labs[n_train:]) if test_count > 0 else None
    return make_problem(partition(train, n_devices), holdout=holdout)


def partition(dataset, n_devices, per_device=None):
    """Contiguous even split; per_device forces an exact count per device."""
    m = dataset.n_samples
    if per_device is not None:
        if n_devices * per_device > m:
            raise ValueError(f"need {n_devices * per_device} samples, have {m}")
        sizes = [per_device] * n_devices
    else:
        if m < n_devices:
            raise ValueError(f"cannot split {m} samples across {n_devices} devices")
        base, extra = divmod(m, n_devices)
        sizes = [base + (1 if i < extra else 0) for i in range(n_devices)]
    out = []
    start = 0
    for s in sizes:
        out.append(LocalDataset(dataset.features[start:start + s], dataset.labels[start:start + s]))
        start += s
    return out


def dataset_to_text(dataset, path):
    """Text matrix export for cross-implementation comparison."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"n_samples={dataset.n_samples} dim={dataset.dim}\n")
        for row, lab in zip(dataset.features, dataset.labels):
            f.write(" ".join(repr(float(v)) for v in row))
            f.write(f" {int(lab)}\n")


def dataset_from_text(path):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        m = int(header[0].split("=")[1])
        d = int(header[1].split("=")[1])
        feats = np.empty((m, d))
        labs = np.empty(m)
        for k in range(m):
            parts = f.readline().split()
            feats[k] = [float(v) for v in parts[:d]]
            labs[k] = float(parts[d])
    return LocalDataset(feats, labs)
