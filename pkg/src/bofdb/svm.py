"""One-vs-rest support vector machines trained with SMO.

The binary solver follows the LIBSVM decomposition scheme: the working pair
is the maximal violating ``i`` plus the second-order choice of ``j`` (Fan,
Chen and Lin, 2005), and each pair sub-problem is solved analytically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SingleClassData
from .vocab import SplitMix64

logger = logging.getLogger(__name__)

TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    c: float = 10.0
    kernel: str = "linear"
    gamma: float = 1.0
    tolerance: float = 1e-3
    max_passes: int = 1000

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")

    @classmethod
    def parse_kernel(cls, text: str, **kwargs) -> "SvmConfig":
        """Build from a ``linear`` or ``rbf:<gamma>`` kernel string."""
        if text == "linear":
            return cls(kernel="linear", **kwargs)
        if text.startswith("rbf:"):
            return cls(kernel="rbf", gamma=float(text[4:]), **kwargs)
        raise ValueError(f"kernel must be 'linear' or 'rbf:<gamma>', got {text!r}")

    def kernel_matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kernel == "linear":
            return a @ b.T
        aa = np.einsum("ij,ij->i", a, a)
        bb = np.einsum("ij,ij->i", b, b)
        d2 = np.maximum(aa[:, None] + bb[None, :] - 2.0 * (a @ b.T), 0.0)
        return np.exp(-self.gamma * d2)


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    alphas: np.ndarray  # alpha_i * y_i
    bias: float
    config: SvmConfig
    class_label: object = None
    support_indices: np.ndarray | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.support_vectors = np.asarray(self.support_vectors, dtype=np.float64)
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.config.kernel == "linear" and self.weights is None:
            self.weights = self.alphas @ self.support_vectors

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"input dim {x.shape[1]}, machine dim {self.dim}")
        if self.weights is not None:
            return x @ self.weights + self.bias
        return self.config.kernel_matrix(x, self.support_vectors) @ self.alphas + self.bias

    def kkt_residuals(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per training point violation of the KKT conditions.

        ``x``/``y`` must be the training set; ``support_indices`` maps the
        stored alphas back onto it.
        """
        y = np.asarray(y, dtype=np.float64)
        alpha = np.zeros(len(y))
        alpha[self.support_indices] = np.abs(self.alphas)
        margin = y * self.decision_values(x) - 1.0
        c = self.config.c
        at_lower = alpha <= 0.0
        at_upper = alpha >= c
        free = ~at_lower & ~at_upper
        res = np.zeros(len(y))
        res[at_lower] = np.maximum(0.0, -margin[at_lower])
        res[at_upper] = np.maximum(0.0, margin[at_upper])
        res[free] = np.abs(margin[free])
        return res


def decision_value(m: BinarySvm, x) -> float:
    return float(m.decision_values(np.asarray(x, dtype=np.float64))[0])


def _permutation(n: int, seed: int) -> np.ndarray:
    rng = SplitMix64(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def dual_objective(alpha: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> float:
    """sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij"""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ kernel @ ay)


def smo_solve(
    kernel: np.ndarray,
    y: np.ndarray,
    c: float,
    tolerance: float,
    max_iter: int,
    objective_trace: list | None = None,
) -> tuple[np.ndarray, float, float]:
    """Solve the SVM dual for a precomputed kernel matrix.

    Returns (alpha, bias, final violating-pair gap). Ties in working-set
    selection go to the lowest index, so callers permute rows to seed them.
    """
    n = len(y)
    q = (y[:, None] * y[None, :]) * kernel
    diag = np.diag(kernel).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    # stopping at half the tolerance leaves room for rounding in the post-hoc check
    eps = 0.5 * tolerance
    pos = y > 0
    gap = np.inf
    for _ in range(max_iter):
        score = -y * grad
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        if not up.any() or not low.any():
            gap = 0.0
            break
        score_up = np.where(up, score, -np.inf)
        i = int(np.argmax(score_up))
        m_up = score_up[i]
        m_low = np.min(np.where(low, score, np.inf))
        gap = m_up - m_low
        if gap < eps:
            break
        b = m_up - score
        a = diag[i] + diag - 2.0 * kernel[i]
        a = np.where(a > 0, a, TAU)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * q[i, j], TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            new_i, new_j = ai + delta, aj + delta
            if diff > 0:
                if new_j < 0:
                    new_j, new_i = 0.0, diff
            elif new_i < 0:
                new_i, new_j = 0.0, -diff
            if diff > 0:
                if new_i > c:
                    new_i, new_j = c, c - diff
            elif new_j > c:
                new_j, new_i = c, c + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * q[i, j], TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            new_i, new_j = ai - delta, aj + delta
            if total > c:
                if new_i > c:
                    new_i, new_j = c, total - c
            elif new_j < 0:
                new_j, new_i = 0.0, total
            if total > c:
                if new_j > c:
                    new_j, new_i = c, total - c
            elif new_i < 0:
                new_i, new_j = 0.0, total
        alpha[i], alpha[j] = new_i, new_j
        grad += q[i] * (new_i - ai) + q[j] * (new_j - aj)
        if objective_trace is not None:
            objective_trace.append(dual_objective(alpha, y, kernel))
    else:
        logger.warning("SMO hit the iteration cap (%d) with gap %.3g", max_iter, gap)

    score = -y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        bias = float(score[free].mean())
    else:
        up = np.where(pos, alpha < c, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < c)
        hi = score[up].max() if up.any() else score[low].min()
        lo = score[low].min() if low.any() else hi
        bias = float(0.5 * (hi + lo))
    return alpha, bias, float(gap)


def _check_xy(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionMismatch("inputs must be an (n, d) array with one label each")
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")


def train_binary(
    x, y, cfg: SvmConfig = SvmConfig(), seed: int = 0, class_label=None,
    objective_trace: list | None = None,
) -> BinarySvm:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_xy(x, y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassData("binary training needs both +1 and -1 labels")

    perm = _permutation(len(y), seed)
    xp, yp = x[perm], y[perm]
    kernel = cfg.kernel_matrix(xp, xp)
    alpha_p, bias, gap = smo_solve(
        kernel, yp, cfg.c, cfg.tolerance, cfg.max_passes * len(y), objective_trace
    )
    alpha = np.empty_like(alpha_p)
    alpha[perm] = alpha_p
    sv = np.flatnonzero(alpha > 0)
    machine = BinarySvm(
        support_vectors=x[sv],
        alphas=alpha[sv] * y[sv],
        bias=bias,
        config=cfg,
        class_label=class_label,
        support_indices=sv,
    )
    worst = float(machine.kkt_residuals(x, y).max())
    if worst > cfg.tolerance:
        logger.warning("KKT residual %.3g exceeds tolerance %.3g", worst, cfg.tolerance)
    return machine


@dataclass
class SvmModel:
    machines: list[BinarySvm]
    class_labels: list
    dictionary_id: object = None

    def __post_init__(self):
        if not self.machines:
            raise ValueError("model needs at least one machine")
        dims = {m.dim for m in self.machines}
        if len(dims) != 1:
            raise DimensionMismatch(f"machines disagree on input dim: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.machines[0].dim

    @property
    def config(self) -> SvmConfig:
        return self.machines[0].config

    def decision_matrix(self, x) -> np.ndarray:
        """(n_inputs, n_classes) decision values."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.stack([m.decision_values(x) for m in self.machines], axis=1)

    def predict(self, x) -> list:
        return [self.class_labels[i] for i in np.argmax(self.decision_matrix(x), axis=1)]

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "dictionary_id": self.dictionary_id,
            "class_labels": list(self.class_labels),
            "config": {
                "c": cfg.c, "kernel": cfg.kernel, "gamma": cfg.gamma,
                "tolerance": cfg.tolerance, "max_passes": cfg.max_passes,
            },
            "machines": [
                {
                    "class_label": m.class_label,
                    "bias": m.bias,
                    "alphas": m.alphas.tolist(),
                    "support_vectors": m.support_vectors.tolist(),
                    "weights": None if m.weights is None else m.weights.tolist(),
                }
                for m in self.machines
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SvmModel":
        cfg = SvmConfig(**data["config"])
        machines = []
        for m in data["machines"]:
            dim = len(m["weights"]) if m["weights"] is not None else None
            svs = np.asarray(m["support_vectors"], dtype=np.float64)
            if dim is not None:
                svs = svs.reshape(-1, dim)
            machines.append(
                BinarySvm(
                    support_vectors=svs,
                    alphas=np.asarray(m["alphas"], dtype=np.float64),
                    bias=m["bias"],
                    config=cfg,
                    class_label=m["class_label"],
                    weights=None if m["weights"] is None else np.asarray(m["weights"], dtype=np.float64),
                )
            )
        return cls(machines, data["class_labels"], data["dictionary_id"])


def train_one_vs_rest(
    x, labels, cfg: SvmConfig = SvmConfig(), seed: int = 0, dictionary_id=None
) -> SvmModel:
    """One machine per class (class = +1, rest = -1), classes in sorted order."""
    x = np.asarray(x, dtype=np.float64)
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SingleClassData(f"need at least 2 classes, got {classes}")
    machines = []
    for cls_label in classes:
        y = np.array([1.0 if lab == cls_label else -1.0 for lab in labels])
        machines.append(train_binary(x, y, cfg, seed, class_label=cls_label))
    return SvmModel(machines, classes, dictionary_id)


def predict_class(model: SvmModel, x):
    """Class whose machine scores highest; ties go to the earliest class label."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise DimensionMismatch(f"input shape {x.shape}, model dim {model.dim}")
    scores = model.decision_matrix(x)[0]
    return model.class_labels[int(np.argmax(scores))]
