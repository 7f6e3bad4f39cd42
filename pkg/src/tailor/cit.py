"""Conditional inference trees for a categorical response.

Covariate selection and stopping rely on permutation tests of independence
between each covariate and the one-hot encoded response. The conditional
expectation and covariance of the linear statistic under the permutation null
have closed forms, so p-values are available either asymptotically (chi-square
for the quadratic form, a Bonferroni-normal bound for the maximum form) or by
Monte-Carlo resampling of the response.

Covariates are held in an encoded float matrix: nominal covariates as level
codes (0..L-1, ``-1`` for a level unseen at training time), numeric covariates
as raw values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .survey import ELEMENTS, N_ELEMENTS, Observation, element_index

PINV_TOL = 1e-10
UNSEEN = -1
POLICIES = ("error", "majority-branch")


class UnseenLevelError(ValueError):
    def __init__(self, covariate: str, value):
        self.covariate = covariate
        self.value = value
        super().__init__(f"unseen level {value!r} for covariate {covariate!r}")


class MissingCovariateError(KeyError):
    def __init__(self, covariate: str):
        self.covariate = covariate
        super().__init__(covariate)

    def __str__(self):
        return f"missing covariate {self.covariate!r}"


# -- schema -------------------------------------------------------------------


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str  # "nominal" | "numeric"
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("nominal", "numeric"):
            raise ValueError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "nominal":
            if not self.levels:
                raise ValueError(f"nominal covariate {self.name!r} needs levels")
            object.__setattr__(self, "levels", tuple(self.levels))
            if len(set(self.levels)) != len(self.levels):
                raise ValueError(f"covariate {self.name!r}: duplicate levels")
        elif self.levels is not None:
            raise ValueError(f"numeric covariate {self.name!r} cannot have levels")

    @property
    def nominal(self) -> bool:
        return self.kind == "nominal"

    def code(self, value, policy: str = "error") -> float:
        """Encode a single raw value."""
        if value is None:
            raise MissingCovariateError(self.name)
        if not self.nominal:
            if isinstance(value, bool):
                raise ValueError(f"covariate {self.name!r}: expected a number, got {value!r}")
            try:
                x = float(value)
            except (TypeError, ValueError):
                raise ValueError(f"covariate {self.name!r}: expected a number, got {value!r}") from None
            if not math.isfinite(x):
                raise ValueError(f"covariate {self.name!r}: non-finite value {value!r}")
            return x
        key = str(value).strip().casefold()
        for i, level in enumerate(self.levels):
            if level.casefold() == key:
                return float(i)
        if policy == "majority-branch":
            return float(UNSEEN)
        raise UnseenLevelError(self.name, value)

    def canonical(self, value, policy: str = "error"):
        """Raw value normalised to the schema spelling (unseen levels pass through)."""
        code = self.code(value, policy)
        if not self.nominal:
            return code
        return str(value).strip() if code == UNSEEN else self.levels[int(code)]


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")

    def __len__(self):
        return len(self.covariates)

    def __iter__(self):
        return iter(self.covariates)

    def __getitem__(self, j: int) -> Covariate:
        return self.covariates[j]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate {name!r}") from None

    def encode_one(self, values: Mapping[str, object], policy: str = "error") -> np.ndarray:
        out = np.empty(len(self.covariates))
        for j, cov in enumerate(self.covariates):
            if cov.name not in values:
                raise MissingCovariateError(cov.name)
            out[j] = cov.code(values[cov.name], policy)
        return out

    def encode(self, rows: Iterable[Mapping[str, object]], policy: str = "error") -> np.ndarray:
        rows = list(rows)
        if not rows:
            return np.empty((0, len(self.covariates)))
        return np.vstack([self.encode_one(r, policy) for r in rows])


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class CitConfig:
    alpha: float = 0.05
    test_statistic: str = "quadratic"  # "quadratic" | "maximum"
    p_value_method: str = "asymptotic"  # "asymptotic" | "monte_carlo"
    n_permutations: int = 9999
    multiplicity: str = "bonferroni"  # "bonferroni" | "none"
    min_split: int = 20
    min_bucket: int = 7
    max_depth: int | None = None
    max_exhaustive_levels: int = 10
    rank_numeric: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.test_statistic not in ("quadratic", "maximum"):
            raise ValueError(f"unknown test statistic {self.test_statistic!r}")
        if self.p_value_method not in ("asymptotic", "monte_carlo"):
            raise ValueError(f"unknown p-value method {self.p_value_method!r}")
        if self.multiplicity not in ("bonferroni", "none"):
            raise ValueError(f"unknown multiplicity adjustment {self.multiplicity!r}")
        if self.min_bucket < 1:
            raise ValueError("min_bucket must be >= 1")
        if self.min_split < 2 * self.min_bucket:
            raise ValueError("min_split must be >= 2 * min_bucket")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be positive")
        if self.max_exhaustive_levels < 2:
            raise ValueError("max_exhaustive_levels must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CitConfig":
        return cls(**data)


# -- tree nodes ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitRule:
    """Binary split: numeric ``x <= threshold`` or nominal ``x in left_levels`` go left."""

    covariate: int
    threshold: float | None = None
    left_levels: tuple[int, ...] | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.left_levels is None):
            raise ValueError("split needs exactly one of threshold / left_levels")
        if self.left_levels is not None:
            object.__setattr__(self, "left_levels", tuple(sorted(int(v) for v in self.left_levels)))

    @property
    def nominal(self) -> bool:
        return self.left_levels is not None

    def goes_left(self, value: float) -> bool:
        if self.threshold is not None:
            return value <= self.threshold
        return int(value) in self.left_levels

    def describe(self, schema: CovariateSchema) -> str:
        cov = schema[self.covariate]
        if self.threshold is not None:
            return f"{cov.name} <= {self.threshold!r}"
        return f"{cov.name} in {{{', '.join(cov.levels[i] for i in self.left_levels)}}}"


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, ...]
    total: int
    depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) != N_ELEMENTS:
            raise ValueError(f"leaf needs {N_ELEMENTS} counts")
        if any(c < 0 for c in self.counts) or sum(self.counts) != self.total or self.total <= 0:
            raise ValueError("leaf counts must be non-negative and sum to a positive total")

    def distribution(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.total


@dataclass(frozen=True)
class Decision:
    split: SplitRule
    p_adjusted: float
    statistic: float
    left: "TreeNode"
    right: "TreeNode"

    @cached_property
    def total(self) -> int:
        return self.left.total + self.right.total

    def majority_goes_left(self) -> bool:
        return self.left.total >= self.right.total


TreeNode = Leaf | Decision


def iter_leaves(node: TreeNode):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from iter_leaves(node.left)
        yield from iter_leaves(node.right)


def iter_decisions(node: TreeNode, depth: int = 0):
    """Yield ``(decision, depth)`` pairs in depth-first, left-to-right order."""
    if isinstance(node, Decision):
        yield node, depth
        yield from iter_decisions(node.left, depth + 1)
        yield from iter_decisions(node.right, depth + 1)


def n_leaves(node: TreeNode) -> int:
    return sum(1 for _ in iter_leaves(node))


# -- data preparation ---------------------------------------------------------


def influence_matrix(responses: Iterable) -> np.ndarray:
    """One-hot encode responses (element names, zero-based codes, or Observations)."""
    codes = []
    for r in responses:
        if isinstance(r, Observation):
            r = r.response
        if isinstance(r, (int, np.integer)):
            if not 0 <= r < N_ELEMENTS:
                raise ValueError(f"response code {r} out of range")
            codes.append(int(r))
        else:
            codes.append(element_index(r))
    H = np.zeros((len(codes), N_ELEMENTS))
    H[np.arange(len(codes)), codes] = 1.0
    return H


def encode_observations(observations: Sequence[Observation], schema: CovariateSchema):
    """Return ``(X, y, w)``: encoded covariates, response codes, weights."""
    X = schema.encode(o.covariates for o in observations)
    y = np.array([element_index(o.response) for o in observations], dtype=np.intp)
    w = np.array([o.weight for o in observations], dtype=float)
    return X, y, w


def covariate_transform(schema: CovariateSchema, j: int, data, rank_numeric: bool = False) -> np.ndarray:
    """Transformation matrix for covariate ``j``: one-hot for nominal, raw or midranks for numeric.

    ``data`` is either an encoded matrix or a sequence of covariate mappings/Observations.
    """
    cov = schema[j]
    if isinstance(data, np.ndarray):
        column = data[:, j] if data.ndim == 2 else data
    else:
        rows = [d.covariates if isinstance(d, Observation) else d for d in data]
        column = np.array([cov.code(r.get(cov.name)) for r in rows])
    if cov.nominal:
        codes = column.astype(int)
        if np.any((codes < 0) | (codes >= len(cov.levels))):
            raise UnseenLevelError(cov.name, "<code outside frozen levels>")
        G = np.zeros((len(codes), len(cov.levels)))
        G[np.arange(len(codes)), codes] = 1.0
        return G
    if rank_numeric:
        return stats.rankdata(column, method="average").reshape(-1, 1)
    return np.asarray(column, dtype=float).reshape(-1, 1)


# -- linear statistic and its null moments ------------------------------------


def linear_statistic(G: np.ndarray, H: np.ndarray, weights: np.ndarray | None = None):
    """Linear statistic ``T = vec(sum_i w_i g_i h_i^T)`` with its permutation-null mean and covariance.

    ``T`` is flattened row-major over (g-component, h-component), which makes the
    covariance ``kron(A, V)`` with ``A`` the g-side and ``V`` the h-side factor.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if G.shape[0] != H.shape[0]:
        raise ValueError("G and H must have the same number of rows")
    w = np.ones(G.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    G, H, w = G[keep], H[keep], w[keep]
    wdot = w.sum()
    if wdot < 2:
        raise ValueError(f"sum of weights must be at least 2, got {wdot}")
    hbar = (w @ H) / wdot
    Hc = H - hbar
    V = (Hc.T * w) @ Hc / wdot
    gsum = w @ G
    A = (wdot / (wdot - 1)) * ((G.T * w) @ G) - np.outer(gsum, gsum) / (wdot - 1)
    T = ((G.T * w) @ H).ravel()
    mu = np.outer(gsum, hbar).ravel()
    sigma = np.kron(A, V)
    sigma = (sigma + sigma.T) / 2
    return T, mu, sigma


def _eigen_psd(M: np.ndarray):
    M = (M + M.T) / 2
    return np.linalg.eigh(M)


def _pinv_parts(sigma: np.ndarray, tol: float = PINV_TOL):
    lam, U = _eigen_psd(sigma)
    top = lam.max() if lam.size else 0.0
    keep = lam > tol * top if top > 0 else np.zeros_like(lam, dtype=bool)
    return lam[keep], U[:, keep]


def covariance_rank(sigma: np.ndarray, tol: float = PINV_TOL) -> int:
    return len(_pinv_parts(sigma, tol)[0])


def _diag_support(diag: np.ndarray) -> np.ndarray:
    top = diag.max() if diag.size else 0.0
    return diag > PINV_TOL * top if top > 0 else np.zeros_like(diag, dtype=bool)


def standardized_statistic(T, mu, sigma, kind: str = "quadratic") -> float:
    """Quadratic form with eigen pseudo-inverse, or maximum of standardized components."""
    d = np.asarray(T, dtype=float) - np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if kind == "quadratic":
        lam, U = _pinv_parts(sigma)
        if lam.size == 0:
            return 0.0
        z = U.T @ d
        return float(np.sum(z * z / lam))
    if kind == "maximum":
        diag = np.diag(sigma)
        ok = _diag_support(diag)
        if not ok.any():
            return 0.0
        return float(np.max(np.abs(d[ok]) / np.sqrt(diag[ok])))
    raise ValueError(f"unknown statistic kind {kind!r}")


def _asymptotic_logp(statistic: float, df_or_k: int, kind: str) -> float:
    if df_or_k <= 0:
        return 0.0
    if kind == "quadratic":
        return min(0.0, float(stats.chi2.logsf(statistic, df_or_k)))
    return min(0.0, math.log(2 * df_or_k) + float(stats.norm.logsf(statistic)))


def _count_at_least(perm_stats: np.ndarray, observed: float) -> int:
    # relative slack so permutations reproducing the observed table count as ties
    return int(np.count_nonzero(perm_stats >= observed - 1e-10 * max(1.0, abs(observed))))


def p_value(
    statistic: float,
    sigma,
    kind: str = "quadratic",
    method: str = "asymptotic",
    *,
    data=None,
    n_permutations: int = 9999,
    rng: np.random.Generator | int | None = None,
) -> float:
    """p-value of a standardized statistic.

    For ``method="monte_carlo"`` pass ``data=(G, H, weights)``; response rows are
    permuted ``n_permutations`` times using ``rng``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if method == "asymptotic":
        if kind == "quadratic":
            df = covariance_rank(sigma)
        else:
            df = int(_diag_support(np.diag(sigma)).sum())
        return math.exp(_asymptotic_logp(statistic, df, kind))
    if method != "monte_carlo":
        raise ValueError(f"unknown p-value method {method!r}")
    if data is None:
        raise ValueError("monte_carlo p-values need data=(G, H, weights)")
    G, H, w = data
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    w = np.ones(G.shape[0]) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    G, H, w = G[keep], H[keep], w[keep]
    _, mu, _ = linear_statistic(G, H, w)
    rng = np.random.default_rng(rng)
    n = G.shape[0]
    Gw = G * w[:, None]
    exceed = 0
    if kind == "quadratic":
        lam, U = _pinv_parts(sigma)
        if lam.size == 0:
            return 1.0
    else:
        diag = np.diag(sigma)
        ok = _diag_support(diag)
        if not ok.any():
            return 1.0
    chunk = max(1, 2_000_000 // max(1, n * H.shape[1]))
    done = 0
    while done < n_permutations:
        b = min(chunk, n_permutations - done)
        perms = rng.permuted(np.tile(np.arange(n), (b, 1)), axis=1)
        T = np.einsum("ip,biq->bpq", Gw, H[perms]).reshape(b, -1)
        D = T - mu
        if kind == "quadratic":
            Z = D @ U
            s = np.sum(Z * Z / lam, axis=1)
        else:
            s = np.max(np.abs(D[:, ok]) / np.sqrt(diag[ok]), axis=1)
        exceed += _count_at_least(s, statistic)
        done += b
    return (1 + exceed) / (n_permutations + 1)


# -- node-level machinery -----------------------------------------------------


class _ResponseSide:
    """Per-node quantities of the response that every covariate test shares."""

    def __init__(self, y: np.ndarray, w: np.ndarray):
        self.y = y
        self.w = w
        self.counts = np.bincount(y, weights=w, minlength=N_ELEMENTS)
        self.wdot = float(self.counts.sum())
        self.hbar = self.counts / self.wdot
        V = np.diag(self.hbar) - np.outer(self.hbar, self.hbar)
        self.lam, self.U = _eigen_psd(V)
        self.lam = np.clip(self.lam, 0.0, None)
        self.diag = np.diag(V).copy()

    @property
    def pure(self) -> bool:
        return np.count_nonzero(self.counts) <= 1

    def v_pinv(self) -> np.ndarray:
        top = self.lam.max()
        keep = self.lam > PINV_TOL * top if top > 0 else np.zeros_like(self.lam, dtype=bool)
        U = self.U[:, keep]
        return (U / self.lam[keep]) @ U.T


@dataclass
class _CovariateTest:
    """Kronecker-factored form of one covariate's independence test at a node."""

    resp: _ResponseSide
    table: np.ndarray  # p x q linear statistic
    gsum: np.ndarray  # length p
    A: np.ndarray  # p x p covariate-side covariance factor
    codes: np.ndarray | None = None  # nominal level codes, for resampling
    g: np.ndarray | None = None  # numeric scores, for resampling
    _eig: tuple = field(default=None, init=False, repr=False)

    @property
    def centered(self) -> np.ndarray:
        return self.table - np.outer(self.gsum, self.resp.hbar)

    def _factors(self):
        if self._eig is None:
            la, Ua = _eigen_psd(self.A)
            la = np.clip(la, 0.0, None)
            lam = np.outer(la, self.resp.lam)
            top = lam.max()
            keep = lam > PINV_TOL * top if top > 0 else np.zeros_like(lam, dtype=bool)
            self._eig = (Ua, lam, keep)
        return self._eig

    def _diag(self):
        diag = np.outer(np.diag(self.A), self.resp.diag)
        return diag, _diag_support(diag.ravel()).reshape(diag.shape)

    def statistic(self, kind: str, D: np.ndarray | None = None):
        """Return ``(statistic, df_or_k)``; ``D`` may be a batch ``(b, p, q)``."""
        D = self.centered if D is None else D
        if kind == "quadratic":
            Ua, lam, keep = self._factors()
            df = int(keep.sum())
            if df == 0:
                return (np.zeros(D.shape[0]) if D.ndim == 3 else 0.0), 0
            Z = np.einsum("ai,...ab,bj->...ij", Ua, D, self.resp.U)
            s = np.sum(np.where(keep, Z * Z / np.where(keep, lam, 1.0), 0.0), axis=(-2, -1))
            return s, df
        diag, ok = self._diag()
        k = int(ok.sum())
        if k == 0:
            return (np.zeros(D.shape[0]) if D.ndim == 3 else 0.0), 0
        z = np.where(ok, np.abs(D) / np.sqrt(np.where(ok, diag, 1.0)), 0.0)
        return z.reshape(z.shape[:-2] + (-1,)).max(axis=-1), k

    def log_p(self, config: CitConfig, rng: np.random.Generator) -> tuple[float, float]:
        kind = config.test_statistic
        stat, dof = self.statistic(kind)
        stat = float(stat)
        if dof == 0:
            return 0.0, stat
        if config.p_value_method == "asymptotic":
            return _asymptotic_logp(stat, dof, kind), stat
        resp = self.resp
        n = len(resp.y)
        p = self.table.shape[0]
        B = config.n_permutations
        chunk = max(1, 2_000_000 // max(1, n))
        mu = np.outer(self.gsum, resp.hbar)
        exceed = 0
        done = 0
        while done < B:
            b = min(chunk, B - done)
            yp = rng.permuted(np.tile(resp.y, (b, 1)), axis=1)
            offs = (np.arange(b) * p * N_ELEMENTS)[:, None]
            if self.codes is not None:
                idx = offs + self.codes[None, :] * N_ELEMENTS + yp
                tw = np.broadcast_to(resp.w, yp.shape)
            else:
                idx = offs + yp
                tw = np.broadcast_to(resp.w * self.g, yp.shape)
            T = np.bincount(idx.ravel(), weights=tw.ravel(), minlength=b * p * N_ELEMENTS)
            D = T.reshape(b, p, N_ELEMENTS) - mu
            s, _ = self.statistic(kind, D)
            exceed += _count_at_least(s, stat)
            done += b
        return math.log((1 + exceed) / (B + 1)), stat


def _covariate_test(x: np.ndarray, cov: Covariate, resp: _ResponseSide, rank_numeric: bool):
    """Build the test for one covariate, or None when it is constant at the node."""
    w, wdot = resp.w, resp.wdot
    if cov.nominal:
        codes = x.astype(np.intp)
        L = len(cov.levels)
        table = np.bincount(codes * N_ELEMENTS + resp.y, weights=w, minlength=L * N_ELEMENTS)
        table = table.reshape(L, N_ELEMENTS)
        gsum = table.sum(axis=1)
        if np.count_nonzero(gsum) < 2:
            return None
        A = (wdot / (wdot - 1)) * np.diag(gsum) - np.outer(gsum, gsum) / (wdot - 1)
        return _CovariateTest(resp, table, gsum, A, codes=codes)
    if np.ptp(x) == 0:
        return None
    g = stats.rankdata(x, method="average") if rank_numeric else np.asarray(x, dtype=float)
    table = np.bincount(resp.y, weights=w * g, minlength=N_ELEMENTS).reshape(1, -1)
    gsum = np.array([float(w @ g)])
    gbar = gsum[0] / wdot
    A = np.array([[(wdot / (wdot - 1)) * float(w @ (g - gbar) ** 2)]])
    return _CovariateTest(resp, table, gsum, A, g=g)


@dataclass(frozen=True)
class Selection:
    covariate: int
    p_adjusted: float
    statistic: float

    def __iter__(self):
        return iter((self.covariate, self.p_adjusted))


def _node_pvalues(X, y, w, schema: CovariateSchema, config: CitConfig):
    """Per-covariate ``(log p, statistic)``; constant covariates get ``(0, 0)``."""
    resp = _ResponseSide(y, w)
    out = []
    for j, cov in enumerate(schema):
        if resp.pure or resp.wdot < 2:
            out.append((0.0, 0.0))
            continue
        test = _covariate_test(X[:, j], cov, resp, config.rank_numeric)
        if test is None:
            out.append((0.0, 0.0))
            continue
        rng = np.random.default_rng(config.rng_seed)
        out.append(test.log_p(config, rng))
    return out


def select_covariate(X, y, w, schema: CovariateSchema, config: CitConfig) -> Selection | None:
    """Pick the covariate with the smallest adjusted p-value, or None if none is significant."""
    X, y, w = _drop_zero_weights(X, y, w)
    if w.sum() < 2:
        return None
    results = _node_pvalues(X, y, w, schema, config)
    m = len(schema)
    log_m = math.log(m) if config.multiplicity == "bonferroni" else 0.0
    best = None
    for j, (logp, stat) in enumerate(results):
        log_adj = min(0.0, logp + log_m)
        if best is None or log_adj < best[1]:
            best = (j, log_adj, stat)
    j, log_adj, stat = best
    p_adj = math.exp(log_adj)
    if p_adj > config.alpha:
        return None
    return Selection(j, p_adj, float(stat))


# -- split search -------------------------------------------------------------


def _split_stats(left: np.ndarray, wl: np.ndarray, resp: _ResponseSide, v_pinv: np.ndarray) -> np.ndarray:
    """Two-sample quadratic statistics of candidate left-child class tables ``left`` (c x q)."""
    wdot = resp.wdot
    d = left - wl[:, None] * resp.hbar
    quad = np.einsum("ci,ij,cj->c", d, v_pinv, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = quad * (wdot - 1) / (wl * (wdot - wl))
    return np.where((wl > 0) & (wl < wdot), s, -np.inf)


def _nominal_rule(j: int, left_present: Iterable[int], present: np.ndarray, level_w: np.ndarray) -> SplitRule:
    """Canonical nominal rule: the side holding the highest present level goes right;
    levels absent at the node follow the heavier child."""
    left = set(int(v) for v in left_present)
    if int(present[-1]) in left:
        left = set(int(v) for v in present) - left
    wl = level_w[sorted(left)].sum()
    wr = level_w[present].sum() - wl
    if wl >= wr:
        absent = set(range(len(level_w))) - set(int(v) for v in present)
        left |= absent
    return SplitRule(j, left_levels=tuple(sorted(left)))


def _first_pc_order(table: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Present levels ordered by the first principal coordinate of their class distributions."""
    counts = table[present]
    totals = counts.sum(axis=1)
    props = counts / totals[:, None]
    center = totals @ props / totals.sum()
    C = ((props - center).T * totals) @ (props - center) / totals.sum()
    lam, U = _eigen_psd(C)
    v = U[:, -1]
    pivot = np.argmax(np.abs(v))
    if v[pivot] < 0:
        v = -v
    score = np.round((props - center) @ v, 12)
    return present[np.lexsort((present, score))]


def best_split(X, y, w, j: int, schema: CovariateSchema, config: CitConfig) -> SplitRule | None:
    """Best binary split of covariate ``j`` by the two-sample quadratic statistic."""
    X, y, w = _drop_zero_weights(X, y, w)
    resp = _ResponseSide(y, w)
    if resp.wdot < 2:
        return None
    v_pinv = resp.v_pinv()
    x = X[:, j]
    cov = schema[j]
    mb = config.min_bucket
    if not cov.nominal:
        values, inverse = np.unique(x, return_inverse=True)
        if len(values) < 2:
            return None
        table = np.bincount(inverse * N_ELEMENTS + y, weights=w, minlength=len(values) * N_ELEMENTS)
        cum = np.cumsum(table.reshape(len(values), N_ELEMENTS), axis=0)[:-1]
        wl = cum.sum(axis=1)
        s = _split_stats(cum, wl, resp, v_pinv)
        s[(wl < mb) | (resp.wdot - wl < mb)] = -np.inf
        if not np.isfinite(s).any():
            return None
        k = int(np.argmax(s))
        return SplitRule(j, threshold=float((values[k] + values[k + 1]) / 2))

    codes = x.astype(np.intp)
    L = len(cov.levels)
    table = np.bincount(codes * N_ELEMENTS + y, weights=w, minlength=L * N_ELEMENTS).reshape(L, N_ELEMENTS)
    level_w = table.sum(axis=1)
    present = np.flatnonzero(level_w > 0)
    P = len(present)
    if P < 2:
        return None
    if P <= config.max_exhaustive_levels:
        masks = np.arange(1, 2 ** (P - 1))
        member = ((masks[:, None] >> np.arange(P - 1)) & 1).astype(float)  # c x (P-1)
        left = member @ table[present[:-1]]
        candidates = [present[:-1][m.astype(bool)] for m in member]
    else:
        order = _first_pc_order(table, present)
        cum = np.cumsum(table[order], axis=0)[:-1]
        left = cum
        candidates = [order[: k + 1] for k in range(P - 1)]
    wl = left.sum(axis=1)
    s = _split_stats(left, wl, resp, v_pinv)
    s[(wl < mb) | (resp.wdot - wl < mb)] = -np.inf
    if not np.isfinite(s).any():
        return None
    k = int(np.argmax(s))
    return _nominal_rule(j, candidates[k], present, level_w)


# -- growing ------------------------------------------------------------------


def _drop_zero_weights(X, y, w):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    if keep.all():
        return X, y, w
    return X[keep], y[keep], w[keep]


def _canonical_order(X, y, w):
    keys = [w, y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    order = np.lexsort(keys)
    return X[order], y[order], w[order]


def grow_tree_arrays(X, y, schema: CovariateSchema, config: CitConfig = CitConfig(), weights=None) -> TreeNode:
    """Grow a tree from encoded covariates ``X`` and zero-based response codes ``y``.

    Weights are case weights and must be integer-valued so that leaf counts stay integral.
    Rows are put into a canonical order first, making the tree independent of input order.
    """
    X, y, w = _drop_zero_weights(X, y, weights)
    if len(y) == 0:
        raise ValueError("cannot grow a tree from empty data")
    if X.shape[1] != len(schema):
        raise ValueError("X columns do not match the schema")
    if not np.allclose(w, np.rint(w), rtol=0, atol=1e-9):
        raise ValueError("case weights must be integer-valued")
    if np.any((y < 0) | (y >= N_ELEMENTS)):
        raise ValueError("response code out of range")
    for j, cov in enumerate(schema):
        if cov.nominal and np.any((X[:, j] < 0) | (X[:, j] >= len(cov.levels))):
            raise UnseenLevelError(cov.name, "<code outside frozen levels>")
    X, y, w = _canonical_order(X, y, np.rint(w))
    return _grow(X, y, w, schema, config, 0)


def _leaf(y, w, depth) -> Leaf:
    counts = np.rint(np.bincount(y, weights=w, minlength=N_ELEMENTS)).astype(int)
    return Leaf(tuple(counts.tolist()), int(counts.sum()), depth)


def _grow(X, y, w, schema, config, depth) -> TreeNode:
    if w.sum() < config.min_split or (config.max_depth is not None and depth >= config.max_depth):
        return _leaf(y, w, depth)
    selection = select_covariate(X, y, w, schema, config)
    if selection is None:
        return _leaf(y, w, depth)
    rule = best_split(X, y, w, selection.covariate, schema, config)
    if rule is None:
        return _leaf(y, w, depth)
    x = X[:, rule.covariate]
    if rule.nominal:
        go_left = np.isin(x.astype(np.intp), rule.left_levels)
    else:
        go_left = x <= rule.threshold
    return Decision(
        rule,
        selection.p_adjusted,
        selection.statistic,
        _grow(X[go_left], y[go_left], w[go_left], schema, config, depth + 1),
        _grow(X[~go_left], y[~go_left], w[~go_left], schema, config, depth + 1),
    )


def grow_tree(observations: Sequence[Observation], schema: CovariateSchema, config: CitConfig = CitConfig()) -> TreeNode:
    if not observations:
        raise ValueError("cannot grow a tree from empty data")
    X, y, w = encode_observations(observations, schema)
    return grow_tree_arrays(X, y, schema, config, w)


# -- prediction ---------------------------------------------------------------


def route(tree: TreeNode, codes: np.ndarray) -> Leaf:
    """Follow an encoded covariate vector to its leaf; unseen codes take the heavier branch."""
    node = tree
    while isinstance(node, Decision):
        value = codes[node.split.covariate]
        if node.split.nominal and value == UNSEEN:
            node = node.left if node.majority_goes_left() else node.right
        else:
            node = node.left if node.split.goes_left(value) else node.right
    return node


def predict_distribution(tree: TreeNode, covariates, schema: CovariateSchema, policy: str = "error") -> np.ndarray:
    """Selection frequencies (length 21) at the leaf reached by ``covariates``."""
    if policy not in POLICIES:
        raise ValueError(f"unknown unseen-level policy {policy!r}")
    if isinstance(covariates, np.ndarray):
        codes = covariates
    else:
        codes = schema.encode_one(covariates, policy)
    return route(tree, codes).distribution()


def format_tree(tree: TreeNode, schema: CovariateSchema, indent: str = "  ") -> str:
    """Indented text rendering: split rules with adjusted p-values, leaf majority classes."""
    lines = []

    def walk(node, depth, label):
        pad = indent * depth
        if isinstance(node, Leaf):
            top = int(np.argmax(node.counts))
            lines.append(f"{pad}{label}leaf n={node.total} -> {ELEMENTS[top]} ({node.counts[top] / node.total:.3f})")
            return
        lines.append(f"{pad}{label}[{node.split.describe(schema)}] p={node.p_adjusted:.3g}")
        walk(node.left, depth + 1, "yes: ")
        walk(node.right, depth + 1, "no:  ")

    walk(tree, 0, "")
    return "\n".join(lines)
