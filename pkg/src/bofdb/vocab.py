"""Visual vocabulary: seeded k-means++ / Lloyd clustering and word assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidK, TooFewDistinctPoints

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea, Flood 2014).

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)          (all arithmetic mod 2**64)
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.random() * n)


@dataclass
class Dictionary:
    values: np.ndarray
    dictionary_id: int | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise InvalidK("dictionary needs at least one center")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dictionary centers must be finite")

    @property
    def words_count(self) -> int:
        return self.values.shape[0]

    @property
    def single_word_size(self) -> int:
        return self.values.shape[1]

    def same_values(self, other: "Dictionary") -> bool:
        return self.values.shape == other.values.shape and self.values.tobytes() == other.values.tobytes()


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = centers - x
    return np.einsum("ij,ij->i", diff, diff)


def nearest_centers(data: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest center per row, ties to the lowest index.

    Candidates are screened with the fast ||x||^2 - 2x.c + ||c||^2 expansion,
    then every row with more than one near-minimal candidate is resolved with
    direct squared differences, so the answer matches a naive scan.
    Returns (indices, squared distances).
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    xx = np.einsum("ij,ij->i", data, data)
    cc = np.einsum("ij,ij->i", centers, centers)
    approx = xx[:, None] - 2.0 * (data @ centers.T) + cc[None, :]
    best = approx.min(axis=1)
    slack = 1e-9 * (xx + cc.max()) + 1e-12
    candidates = approx <= (best + slack)[:, None]
    idx = candidates.argmax(axis=1)
    ambiguous = np.flatnonzero(candidates.sum(axis=1) > 1)
    for i in ambiguous:
        cand = np.flatnonzero(candidates[i])
        d = _sq_dist(data[i], centers[cand])
        idx[i] = cand[int(np.argmin(d))]
    diff = data - centers[idx]
    dist = np.einsum("ij,ij->i", diff, diff)
    return idx, dist


def assign_word(d: Dictionary, v) -> int:
    """Index of the closest center (squared Euclidean); ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (d.single_word_size,):
        raise DimensionMismatch(f"vector shape {v.shape}, dictionary word size {d.single_word_size}")
    return int(np.argmin(_sq_dist(v, d.values)))


def assign_words(d: Dictionary, data) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        return np.zeros(0, dtype=np.int64)
    if data.ndim != 2 or data.shape[1] != d.single_word_size:
        raise DimensionMismatch(f"data shape {data.shape}, dictionary word size {d.single_word_size}")
    return nearest_centers(data, d.values)[0]


def sse(d: Dictionary, data) -> float:
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        return 0.0
    if data.ndim != 2 or data.shape[1] != d.single_word_size:
        raise DimensionMismatch(f"data shape {data.shape}, dictionary word size {d.single_word_size}")
    return float(nearest_centers(data, d.values)[1].sum())


def _kmeanspp(data: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = data.shape[0]
    chosen = [rng.below(n)]
    closest = _sq_dist(data[chosen[0]], data)
    for _ in range(1, k):
        total = float(closest.sum())
        target = rng.random() * total
        cum = np.cumsum(closest)
        i = int(np.searchsorted(cum, target, side="right"))
        i = min(i, n - 1)
        while closest[i] == 0.0:
            # float edge at the top of the cumulative sum
            i -= 1
        chosen.append(i)
        np.minimum(closest, _sq_dist(data[i], data), out=closest)
    return data[chosen].copy()


def lloyd(
    data: np.ndarray, centers: np.ndarray, max_iter: int, history: list | None = None
) -> tuple[np.ndarray, float]:
    """Run Lloyd iterations from ``centers`` until no assignment changes.

    ``history`` (if given) receives the SSE after every assignment step.
    """
    centers = centers.copy()
    k = centers.shape[0]
    assign, dist = nearest_centers(data, centers)
    if history is not None:
        history.append(float(dist.sum()))
    for _ in range(max_iter):
        counts = np.bincount(assign, minlength=k)
        nonempty = counts > 0
        order = np.argsort(assign, kind="stable")
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))[nonempty]
        sums = np.add.reduceat(data[order], starts, axis=0)
        centers[nonempty] = sums / counts[nonempty, None]
        if not nonempty.all():
            # reseed each empty cluster at the point currently farthest from its center
            diff = data - centers[assign]
            far = np.einsum("ij,ij->i", diff, diff)
            for j in np.flatnonzero(~nonempty):
                p = int(np.argmax(far))
                centers[j] = data[p]
                far[p] = -1.0
        new_assign, dist = nearest_centers(data, centers)
        if history is not None:
            history.append(float(dist.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centers, float(dist.sum())


def kmeans_train(
    data,
    k: int,
    seed: int = 0,
    restarts: int = 3,
    max_iter: int = 100,
    dictionary_id: int | None = None,
) -> Dictionary:
    """Cluster ``data`` into ``k`` words; keep the restart with the lowest SSE."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise TooFewDistinctPoints("no training vectors")
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    if restarts < 1 or max_iter < 1:
        raise ValueError("restarts and max_iter must be >= 1")
    distinct = np.unique(data, axis=0).shape[0]
    if k > distinct:
        raise TooFewDistinctPoints(f"k={k} exceeds {distinct} distinct points")

    rng = SplitMix64(seed)
    best_centers, best_sse = None, np.inf
    for _ in range(restarts):
        centers, err = lloyd(data, _kmeanspp(data, k, rng), max_iter)
        if err < best_sse:
            best_centers, best_sse = centers, err
    return Dictionary(best_centers, dictionary_id)
