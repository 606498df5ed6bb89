"""Parameter and observation types for the Gaussian noisy stochastic block model.

Edges are stored once per unordered pair ``i < j`` in a flat vector, ordered
lexicographically (the order of ``numpy.triu_indices(n, 1)``). Node labels are
0-based in the Python API and 1-based in every file format.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

LOG_2PI = np.log(2.0 * np.pi)


class InvalidParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


class EdgeListError(ValueError):
    """Raised when an edge-list file is malformed or incomplete."""


# ---------------------------------------------------------------------------
# edge indexing

def n_edges(n: int) -> int:
    return n * (n - 1) // 2


def n_nodes(m: int) -> int:
    """Inverse of :func:`n_edges`."""
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if n_edges(n) != m:
        raise ValueError(f"{m} is not a triangular edge count")
    return n


def edge_index(i, j, n: int):
    """Flat index of the unordered pair ``{i, j}`` (0-based nodes, i != j)."""
    i = np.asarray(i)
    j = np.asarray(j)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    return lo * n - lo * (lo + 1) // 2 + (hi - lo - 1)


def edge_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column node of every edge, in flat-index order."""
    rows, cols = np.triu_indices(n, 1)
    return rows.astype(np.intp), cols.astype(np.intp)


@dataclass(frozen=True)
class EdgeIndexMap:
    """Bijection between pairs ``i < j`` of ``n`` nodes and ``0..m-1``."""

    n: int

    @property
    def m(self) -> int:
        return n_edges(self.n)

    def index(self, i, j):
        return edge_index(i, j, self.n)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return edge_pairs(self.n)


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class ModelParams:
    """Gaussian NSBM parameter ``(pi, w, sigma0, mu, sigma)``.

    ``w``, ``mu`` and ``sigma`` are full symmetric ``Q x Q`` arrays.
    """

    pi: np.ndarray
    w: np.ndarray
    sigma0: float
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.atleast_1d(np.asarray(self.pi, dtype=float)))
        for name in ("w", "mu", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 0:
                arr = arr.reshape(1, 1)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma0", float(self.sigma0))

    @property
    def Q(self) -> int:
        return self.pi.shape[0]

    def permuted(self, perm) -> "ModelParams":
        """Relabel groups: new group ``k`` is old group ``perm[k]``."""
        perm = np.asarray(perm)
        ix = np.ix_(perm, perm)
        return ModelParams(self.pi[perm], self.w[ix], self.sigma0, self.mu[ix], self.sigma[ix])

    def flat(self) -> np.ndarray:
        """All free parameters as one vector (upper triangles for the tables)."""
        iu = np.triu_indices(self.Q)
        return np.concatenate([self.pi, self.w[iu], [self.sigma0], self.mu[iu], self.sigma[iu]])

    def to_dict(self) -> dict:
        return {
            "Q": self.Q,
            "pi": self.pi.tolist(),
            "w": self.w.tolist(),
            "sigma0": self.sigma0,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        Q = len(d["pi"])
        def table(v):
            a = np.asarray(v, dtype=float)
            return np.full((Q, Q), float(a)) if a.ndim == 0 else a
        return cls(d["pi"], table(d["w"]), d["sigma0"], table(d["mu"]), table(d["sigma"]))


def scenario1_theta(c_w: float = 1.0, mu=2.0, sigma: float = 1.0, sigma0: float = 1.0) -> ModelParams:
    """Two equal groups, ``w = c_w * [[.8, .2], [.2, .8]]``."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 0:
        mu = np.full((2, 2), float(mu))
    elif mu.ndim == 1:
        mu = mu.reshape(2, 2)
    return ModelParams(
        pi=[0.5, 0.5],
        w=c_w * np.array([[0.8, 0.2], [0.2, 0.8]]),
        sigma0=sigma0,
        mu=mu,
        sigma=np.full((2, 2), sigma),
    )


def validate_theta(theta: ModelParams, check_distinct: bool = True) -> ModelParams:
    """Return ``theta`` unchanged or raise naming the first violated invariant.

    With ``Q == 1`` the single group probability is 1; every other entry of
    ``pi`` must lie strictly inside ``(0, 1)``.
    """
    pi, w, mu, sigma = theta.pi, theta.w, theta.mu, theta.sigma
    Q = theta.Q
    if pi.ndim != 1 or Q < 1:
        raise InvalidParameterError("pi not a probability vector")
    if not np.all(np.isfinite(pi)) or abs(pi.sum() - 1.0) > 1e-12 or np.any(pi <= 0) \
            or (Q > 1 and np.any(pi >= 1)):
        raise InvalidParameterError("pi not a probability vector")
    for name, arr in (("w", w), ("mu", mu), ("sigma", sigma)):
        if arr.shape != (Q, Q):
            raise InvalidParameterError(f"{name} must have shape ({Q}, {Q})")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError(f"{name} has non-finite entries")
        if not np.array_equal(arr, arr.T):
            raise InvalidParameterError(f"{name} not symmetric")
    if np.any(w <= 0) or np.any(w >= 1):
        raise InvalidParameterError("w entries must lie in (0,1)")
    if not np.isfinite(theta.sigma0) or theta.sigma0 <= 0:
        raise InvalidParameterError("sigma0 must be positive")
    if np.any(sigma <= 0):
        raise InvalidParameterError("sigma must be positive")
    if check_distinct:
        same = (mu == 0) & (sigma == theta.sigma0)
        if np.any(same):
            q, l = np.argwhere(same)[0]
            raise InvalidParameterError(f"null equals alternative at ({q + 1},{l + 1})")
    return theta


# ---------------------------------------------------------------------------
# densities and derived quantities

def log_null_density(x, sigma0):
    x = np.asarray(x, dtype=float)
    return -0.5 * (x / sigma0) ** 2 - np.log(sigma0) - 0.5 * LOG_2PI


def log_alt_density(x, mu, sigma):
    x = np.asarray(x, dtype=float)
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI


def null_density(x, sigma0):
    """Centered Gaussian pdf with standard deviation ``sigma0``."""
    return np.exp(log_null_density(x, sigma0))


def alt_density(x, mu, sigma):
    return np.exp(log_alt_density(x, mu, sigma))


def log_odds_edge(x, q, l, theta: ModelParams):
    """``log(w g_nu(x)) - log((1 - w) g_0(x))`` for the cell ``(q, l)``."""
    w = theta.w[q, l]
    return (np.log(w) + log_alt_density(x, theta.mu[q, l], theta.sigma[q, l])
            - np.log1p(-w) - log_null_density(x, theta.sigma0))


def l_value(x, q, l, theta: ModelParams):
    """Posterior probability of no edge given ``x`` and labels ``q, l`` (0-based)."""
    return expit(-log_odds_edge(x, q, l, theta))


def pi0_pi1(theta: ModelParams) -> tuple[float, float]:
    """Expected proportions of absent and present edges."""
    pp = np.outer(theta.pi, theta.pi)
    pi1 = float(np.sum(pp * theta.w))
    pi0 = float(np.sum(pp * (1.0 - theta.w)))
    return pi0, pi1


def p_value(x, sigma0):
    """Two-sided p-value ``2 (1 - Phi(|x| / sigma0))``."""
    return 2.0 * ndtr(-np.abs(np.asarray(x, dtype=float)) / sigma0)


# ---------------------------------------------------------------------------
# observations

@dataclass
class ObservationMatrix:
    """Symmetric real observations on the ``m = n(n-1)/2`` node pairs."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_edges(self.n),):
            raise ValueError(f"expected {n_edges(self.n)} values for n={self.n}, got {self.values.shape}")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __call__(self, i: int, j: int) -> float:
        if i == j:
            raise IndexError("diagonal is undefined")
        return float(self.values[edge_index(i, j, self.n)])

    def dense(self) -> np.ndarray:
        """Symmetric ``n x n`` matrix with zero diagonal."""
        out = np.zeros((self.n, self.n))
        rows, cols = edge_pairs(self.n)
        out[rows, cols] = self.values
        out[cols, rows] = self.values
        return out


@dataclass
class LatentState:
    """Node labels ``Z`` (0-based) and the edge indicator vector ``A``."""

    Z: np.ndarray | None
    A: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.Z is not None:
            self.Z = np.asarray(self.Z, dtype=np.intp)
        self.A = np.asarray(self.A, dtype=np.int8)


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise EdgeListError(f"{path}: empty file") from None
        if [h.strip() for h in first] != header:
            raise EdgeListError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EdgeListError(f"{path}:{lineno}: expected {len(header)} fields")
            yield lineno, row


def _parse_pair(path, lineno, row):
    try:
        i, j = int(row[0]), int(row[1])
    except ValueError:
        raise EdgeListError(f"{path}:{lineno}: node ids must be integers") from None
    if not 1 <= i < j:
        raise EdgeListError(f"{path}:{lineno}: need 1 <= i < j, got ({i},{j})")
    return i - 1, j - 1


def read_observations(path, n: int | None = None) -> ObservationMatrix:
    """Parse an ``i,j,x`` edge list (1-based, ``i < j``, every pair exactly once)."""
    pairs, vals = [], []
    for lineno, row in _read_rows(path, ["i", "j", "x"]):
        i, j = _parse_pair(path, lineno, row)
        try:
            vals.append(float(row[2]))
        except ValueError:
            raise EdgeListError(f"{path}:{lineno}: x is not a number") from None
        pairs.append((i, j, lineno))
    if not pairs:
        raise EdgeListError(f"{path}: no edges")
    if n is None:
        n = max(j for _, j, _ in pairs) + 1
    m = n_edges(n)
    values = np.full(m, np.nan)
    seen = np.zeros(m, dtype=bool)
    for (i, j, lineno), v in zip(pairs, vals):
        if j >= n:
            raise EdgeListError(f"{path}:{lineno}: node {j + 1} exceeds n={n}")
        k = edge_index(i, j, n)
        if seen[k]:
            raise EdgeListError(f"{path}:{lineno}: duplicate pair ({i + 1},{j + 1})")
        seen[k] = True
        values[k] = v
    if not seen.all():
        k = int(np.argmin(seen))
        rows, cols = edge_pairs(n)
        raise EdgeListError(f"{path}: missing pair ({rows[k] + 1},{cols[k] + 1}); all {m} pairs required")
    return ObservationMatrix(n, values)


def write_observations(path, X: ObservationMatrix) -> None:
    rows, cols = edge_pairs(X.n)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "j", "x"])
        for i, j, v in zip(rows, cols, X.values):
            out.writerow([i + 1, j + 1, repr(float(v))])


def write_adjacency(path, A: np.ndarray, n: int) -> None:
    """Write the present edges of ``A`` as an ``i,j`` CSV."""
    rows, cols = edge_pairs(n)
    on = np.flatnonzero(np.asarray(A))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "j"])
        for k in on:
            out.writerow([rows[k] + 1, cols[k] + 1])


def read_adjacency(path, n: int) -> np.ndarray:
    A = np.zeros(n_edges(n), dtype=np.int8)
    for lineno, row in _read_rows(path, ["i", "j"]):
        i, j = _parse_pair(path, lineno, row)
        if j >= n:
            raise EdgeListError(f"{path}:{lineno}: node {j + 1} exceeds n={n}")
        k = edge_index(i, j, n)
        if A[k]:
            raise EdgeListError(f"{path}:{lineno}: duplicate pair ({i + 1},{j + 1})")
        A[k] = 1
    return A


def write_labels(path, Z: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "z"])
        for i, z in enumerate(np.asarray(Z)):
            out.writerow([i + 1, int(z) + 1])


def read_labels(path) -> np.ndarray:
    labels = {}
    for lineno, row in _read_rows(path, ["i", "z"]):
        try:
            i, z = int(row[0]), int(row[1])
        except ValueError:
            raise EdgeListError(f"{path}:{lineno}: labels must be integers") from None
        if i < 1 or z < 1 or i in labels:
            raise EdgeListError(f"{path}:{lineno}: bad or duplicate row")
        labels[i] = z - 1
    n = len(labels)
    if sorted(labels) != list(range(1, n + 1)):
        raise EdgeListError(f"{path}: node ids must be 1..{n}")
    return np.array([labels[i] for i in range(1, n + 1)], dtype=np.intp)
