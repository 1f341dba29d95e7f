"""Forward sampler for the dynamic edge-exchangeable network model.

Each slice draws ``N_t`` i.i.d. edges from a mixture of ``M`` edge
distributions. The mixture weights are a softmax of a community chain
``k_t``; within community ``m`` both endpoints are drawn from a softmax over
the ``m``-th coordinate of the vertex latent states. Vertex states follow
either a random walk (RW) or an attention-weighted walk (ATTAS) whose mean
pulls each vertex toward the neighbours it interacted with. New vertices
arrive through a Poisson pool whose log-rate is an AR(1) chain; pool members
that take part in no edge are discarded.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .temporal_graph import EdgeSlice, TemporalNetwork

__all__ = [
    "Dynamics",
    "ModelParams",
    "LatentRecord",
    "community_probs",
    "vertex_probs",
    "attention_weights",
    "attas_mean",
    "attas_means",
    "step_states",
    "sample_birth",
    "sample_edge",
    "sample_edges",
    "simulate",
    "sparsity_experiment",
    "sparsity_slope",
    "default_checkpoints",
]

# numpy's Poisson sampler rejects larger rates
_MAX_POISSON_RATE = 1e18


class Dynamics(str, enum.Enum):
    ATTAS = "attas"
    RW = "rw"


def _lower_chol(x, name, m):
    x = np.array(x, dtype=float)
    if x.shape != (m, m):
        raise DomainError(f"{name} must be {m}x{m}, got shape {x.shape}")
    if np.any(np.triu(x, 1) != 0):
        raise DomainError(f"{name} must be lower triangular")
    if np.any(np.diag(x) < 0):
        raise DomainError(f"{name} must have a non-negative diagonal")
    return x


@dataclass
class ModelParams:
    """Generative parameters.

    ``B_chol`` and ``Bk_chol`` are lower-triangular Cholesky factors of the
    vertex and community noise covariances. A zero diagonal is accepted so
    that noiseless chains can be simulated; inference requires a strictly
    positive one.
    """

    M: int
    mu_lambda: float
    sigma_lambda: float
    a_lambda: float
    mu: np.ndarray
    B_chol: np.ndarray
    mu_k: np.ndarray
    A_k: np.ndarray
    Bk_chol: np.ndarray
    dynamics: Dynamics = Dynamics.ATTAS

    def __post_init__(self):
        m = int(self.M)
        if m < 1:
            raise DomainError(f"M must be >= 1, got {self.M}")
        self.M = m
        if not self.sigma_lambda > 0:
            raise DomainError(f"sigma_lambda must be > 0, got {self.sigma_lambda}")
        self.mu_lambda = float(self.mu_lambda)
        self.sigma_lambda = float(self.sigma_lambda)
        self.a_lambda = float(self.a_lambda)
        self.mu = np.array(self.mu, dtype=float).reshape(m)
        self.mu_k = np.array(self.mu_k, dtype=float).reshape(m)
        self.A_k = np.array(self.A_k, dtype=float).reshape(m, m)
        self.B_chol = _lower_chol(self.B_chol, "B_chol", m)
        self.Bk_chol = _lower_chol(self.Bk_chol, "Bk_chol", m)
        self.dynamics = Dynamics(self.dynamics)

    @classmethod
    def default(cls, M: int, **overrides) -> "ModelParams":
        base = dict(
            M=M,
            mu_lambda=math.log(100.0),
            sigma_lambda=0.5,
            a_lambda=0.5,
            mu=np.zeros(M),
            B_chol=np.eye(M),
            mu_k=np.zeros(M),
            A_k=0.9 * np.eye(M),
            Bk_chol=0.3 * np.eye(M),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "mu_lambda": self.mu_lambda,
            "sigma_lambda": self.sigma_lambda,
            "a_lambda": self.a_lambda,
            "mu": self.mu.tolist(),
            "B_chol": self.B_chol.tolist(),
            "mu_k": self.mu_k.tolist(),
            "A_k": self.A_k.tolist(),
            "Bk_chol": self.Bk_chol.tolist(),
            "dynamics": self.dynamics.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**d)


@dataclass
class LatentRecord:
    """Ground-truth latent variables of one simulation."""

    k: np.ndarray  # [T, M]
    h: dict  # vertex id -> [T - tau_v + 1, M]
    c: list  # per slice, labels in 1..M aligned with edges
    lam: np.ndarray  # [T]
    L: np.ndarray  # [T]
    discarded: np.ndarray  # [T]
    extra: dict = field(default_factory=dict)

    def write_csv(self, directory, labels=None) -> None:
        """Write ``k.csv``, ``h.csv``, ``c.csv`` and ``birth.csv``."""
        import os

        os.makedirs(directory, exist_ok=True)
        T, M = self.k.shape
        with open(os.path.join(directory, "k.csv"), "w", encoding="utf-8") as fh:
            fh.write("t,m,value\n")
            for t in range(T):
                for m in range(M):
                    fh.write(f"{t + 1},{m + 1},{self.k[t, m]!r}\n")
        with open(os.path.join(directory, "h.csv"), "w", encoding="utf-8") as fh:
            fh.write("v,t,m,value\n")
            for v in sorted(self.h):
                traj = self.h[v]
                start = T - traj.shape[0] + 1
                name = labels[v] if labels is not None else v
                for j in range(traj.shape[0]):
                    for m in range(M):
                        fh.write(f"{name},{start + j},{m + 1},{traj[j, m]!r}\n")
        with open(os.path.join(directory, "c.csv"), "w", encoding="utf-8") as fh:
            fh.write("t,i,label\n")
            for t, labs in enumerate(self.c, start=1):
                for i, lab in enumerate(labs, start=1):
                    fh.write(f"{t},{i},{int(lab)}\n")
        with open(os.path.join(directory, "birth.csv"), "w", encoding="utf-8") as fh:
            fh.write("t,lambda,L,discarded\n")
            for t in range(T):
                fh.write(f"{t + 1},{self.lam[t]!r},{int(self.L[t])},{int(self.discarded[t])}\n")


# -- probability vectors ------------------------------------------------


def _softmax(x, axis=-1):
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def community_probs(k) -> np.ndarray:
    """Mixture weights ``P(c = m | k)`` as a max-shifted softmax."""
    k = np.asarray(k, dtype=float)
    if not np.all(np.isfinite(k)):
        raise DomainError("community logits must be finite")
    return _softmax(k)


def vertex_probs(states, m: int, participants) -> np.ndarray:
    """Vertex distribution of community ``m`` (0-based) over ``participants``.

    ``states`` is indexable by vertex id and yields length-M vectors.
    """
    participants = np.asarray(participants, dtype=np.int64)
    if participants.size == 0:
        raise DomainError("vertex distribution over an empty participant list")
    logits = np.asarray(states, dtype=float)[participants, m]
    if not np.all(np.isfinite(logits)):
        raise DomainError("vertex states must be finite")
    return _softmax(logits)


def attention_weights(h_v, neighbor_states):
    """Self weight and neighbour weights from dot-product similarity.

    Returns:
        ``(w_self, w)`` with ``w_self + w.sum() == 1``.
    """
    h_v = np.asarray(h_v, dtype=float)
    nb = np.asarray(neighbor_states, dtype=float).reshape(-1, h_v.size)
    if not (np.all(np.isfinite(h_v)) and np.all(np.isfinite(nb))):
        raise DomainError("states must be finite")
    dots = np.concatenate([[h_v @ h_v], nb @ h_v])
    w = _softmax(dots)
    return float(w[0]), w[1:]


def attas_mean(v: int, slice_: EdgeSlice, states) -> np.ndarray:
    """Attention-weighted mean of ``v``'s own state and its slice neighbours."""
    states = np.asarray(states, dtype=float)
    nb = sorted(_slice_neighbors(slice_, v) - {v})
    if not nb:
        return states[v].copy()
    w_self, w = attention_weights(states[v], states[nb])
    return w_self * states[v] + w @ states[nb]


def _slice_neighbors(slice_: EdgeSlice, v):
    out = set(slice_.v[slice_.u == v].tolist())
    out.update(slice_.u[slice_.v == v].tolist())
    return out


def _neighbor_pairs(slice_: EdgeSlice):
    """Directed, de-duplicated (src, dst) neighbour pairs without self pairs."""
    keep = slice_.u != slice_.v
    pairs = np.unique(np.stack([slice_.u[keep], slice_.v[keep]], axis=1), axis=0)
    if pairs.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return src, dst


def attas_means(states, slice_: EdgeSlice) -> np.ndarray:
    """`attas_mean` for every row of ``states`` at once."""
    states = np.asarray(states, dtype=float)
    src, dst = _neighbor_pairs(slice_)
    out = states.copy()
    if src.size == 0:
        return out
    self_dot = np.einsum("vm,vm->v", states, states)
    dots = np.einsum("em,em->e", states[src], states[dst])
    shift = self_dot.copy()
    np.maximum.at(shift, src, dots)
    e_self = np.exp(self_dot - shift)
    e_nb = np.exp(dots - shift[src])
    denom = e_self.copy()
    np.add.at(denom, src, e_nb)
    num = e_self[:, None] * states
    np.add.at(num, src, e_nb[:, None] * states[dst])
    return num / denom[:, None]


def step_states(states, slice_: EdgeSlice, params: ModelParams, rng) -> np.ndarray:
    """Draw next-slice states ``h' = mean + B_chol @ z``."""
    states = np.asarray(states, dtype=float)
    if params.dynamics is Dynamics.ATTAS:
        mean = attas_means(states, slice_)
    else:
        mean = states
    z = rng.standard_normal(states.shape)
    return mean + z @ params.B_chol.T


# -- births and edges ---------------------------------------------------


def sample_birth(prev_lambda, params: ModelParams, rng):
    """Draw the log-rate ``lambda_t`` and the pool size ``L_t``."""
    loc = params.mu_lambda if prev_lambda is None else params.a_lambda * prev_lambda
    lam = loc + params.sigma_lambda * rng.standard_normal()
    return lam, _poisson_from_log_rate(lam, rng)


def _poisson_from_log_rate(lam, rng):
    with np.errstate(over="ignore"):
        rate = math.exp(lam) if lam < 710 else math.inf
    if not rate <= _MAX_POISSON_RATE:
        raise DomainError(f"birth log-rate {lam!r} is too large to sample")
    return int(rng.poisson(rate))


def _draw_distinct_pairs(p, n, rng):
    """``n`` unordered pairs from i.i.d. draws of ``p``, rejecting equal pairs."""
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    a = np.empty(n, np.int64)
    b = np.empty(n, np.int64)
    todo = np.arange(n)
    while todo.size:
        x = np.searchsorted(cdf, rng.random(todo.size), side="right")
        y = np.searchsorted(cdf, rng.random(todo.size), side="right")
        a[todo] = x
        b[todo] = y
        todo = todo[x == y]
    return a, b


def sample_edges(k_t, states, participants, n: int, rng):
    """Draw ``n`` edges of one slice.

    Returns:
        ``(c, u, v)`` with ``c`` 1-based community labels and ``(u, v)``
        vertex ids taken from ``participants``.
    """
    participants = np.asarray(participants, dtype=np.int64)
    if participants.size < 2:
        raise DomainError("sampling an edge needs at least two participants")
    w = community_probs(k_t)
    c = rng.choice(w.size, size=n, p=w)
    u = np.empty(n, np.int64)
    v = np.empty(n, np.int64)
    for m in range(w.size):
        idx = np.flatnonzero(c == m)
        if idx.size == 0:
            continue
        p = vertex_probs(states, m, participants)
        a, b = _draw_distinct_pairs(p, idx.size, rng)
        u[idx] = participants[a]
        v[idx] = participants[b]
    return c + 1, np.minimum(u, v), np.maximum(u, v)


def sample_edge(k_t, states, participants, rng):
    """Draw a single edge; returns ``(c, (u, v))`` with ``c`` in 1..M."""
    c, u, v = sample_edges(k_t, states, participants, 1, rng)
    return int(c[0]), (int(u[0]), int(v[0]))


def _mvn(mean, chol, rng, size=None):
    mean = np.asarray(mean, dtype=float)
    if size is None:
        return mean + chol @ rng.standard_normal(mean.size)
    return mean + rng.standard_normal((size, mean.size)) @ chol.T


def simulate(params: ModelParams, T: int, N, rng):
    """Sample a temporal network and its latent variables.

    Args:
        params: generative parameters (including the dynamics).
        T: number of slices.
        N: edges to draw per slice, length ``T``.
        rng: a numpy Generator.

    Returns:
        ``(net, latents)``. Vertex ids follow order of first appearance, and
        labels are those ids as strings.
    """
    N = np.asarray(N, dtype=np.int64).reshape(-1)
    if T < 1:
        raise DomainError("T must be >= 1")
    if N.size != T:
        raise DomainError(f"need {T} edge counts, got {N.size}")
    if np.any(N < 1):
        raise DomainError("every slice needs at least one edge")
    M = params.M
    k = np.zeros((T, M))
    lam = np.zeros(T)
    L = np.zeros(T, np.int64)
    discarded = np.zeros(T, np.int64)
    states = np.zeros((0, M))
    traj: list[list[np.ndarray]] = []
    c_all, slices = [], []
    prev_lam = None
    for t in range(T):
        lam[t], L[t] = sample_birth(prev_lam, params, rng)
        prev_lam = lam[t]
        if t == 0:
            k[t] = _mvn(params.mu_k, params.Bk_chol, rng)
        else:
            k[t] = _mvn(params.A_k @ k[t - 1], params.Bk_chol, rng)
        pool = _mvn(params.mu, params.B_chol, rng, size=int(L[t]))
        if t > 0 and states.shape[0]:
            states = step_states(states, slices[-1], params, rng)
            for v in range(states.shape[0]):
                traj[v].append(states[v].copy())
        n_old = states.shape[0]
        everyone = np.concatenate([states, pool]) if L[t] else states
        if everyone.shape[0] < 2:
            raise DomainError(f"slice {t + 1}: fewer than two vertices available for {N[t]} edges")
        c, u, v = sample_edges(k[t], everyone, np.arange(everyone.shape[0]), int(N[t]), rng)
        # participating pool members get ids by order of first appearance
        ends = np.stack([u, v], 1).reshape(-1)
        ends = ends[ends >= n_old]
        _, first_pos = np.unique(ends, return_index=True)
        fresh = ends[np.sort(first_pos)]
        discarded[t] = L[t] - fresh.size
        mapping = np.full(everyone.shape[0], -1, np.int64)
        mapping[:n_old] = np.arange(n_old)
        mapping[fresh] = n_old + np.arange(fresh.size)
        if fresh.size:
            states = np.concatenate([states, everyone[fresh]])
            for x in fresh:
                traj.append([everyone[x].copy()])
        slices.append(EdgeSlice(mapping[u], mapping[v]))
        c_all.append(c)
    net = TemporalNetwork([str(i) for i in range(states.shape[0])], slices)
    h = {v: np.array(traj[v]) for v in range(len(traj))}
    rec = LatentRecord(k=k, h=h, c=c_all, lam=lam, L=L, discarded=discarded)
    return net, rec


# -- sparsity -------------------------------------------------------------


def sparsity_experiment(sigma: float, pool_rate: float, edge_checkpoints, seeds, rng_factory=None):
    """Active-vertex counts of single-slice, single-community networks.

    For each seed: draw ``L ~ Poisson(pool_rate)`` latent vertices with
    scalar states ``h_i ~ N(0, sigma^2)``, then sample edges i.i.d. with
    endpoint probabilities ``softmax(h)`` (self-loops redrawn), recording
    the number of distinct vertices after each checkpoint.

    Returns:
        list of ``(seed, edges, vertices)`` rows.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    cps = np.asarray(edge_checkpoints, dtype=np.int64).reshape(-1)
    if cps.size == 0 or np.any(cps < 1) or np.any(np.diff(cps) <= 0):
        raise DomainError("edge checkpoints must be positive and increasing")
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed) if rng_factory is None else rng_factory(seed)
        L = int(rng.poisson(pool_rate))
        if L < 2:
            raise DomainError(f"seed {seed}: latent pool of {L} vertices is too small")
        h = sigma * rng.standard_normal(L)
        p = _softmax(h)
        n = int(cps[-1])
        a, b = _draw_distinct_pairs(p, n, rng)
        first = np.full(L, n, np.int64)
        idx = np.arange(n)
        np.minimum.at(first, a, idx)
        np.minimum.at(first, b, idx)
        arrivals = np.sort(first[first < n])
        active = np.searchsorted(arrivals, cps, side="left")
        full = np.flatnonzero(active >= L)
        if full.size:
            cut = full[0] + 1
            warnings.warn(
                f"seed {seed}: all {L} pool vertices active by {cps[full[0]]} edges; truncating",
                stacklevel=2,
            )
        else:
            cut = cps.size
        rows.extend((int(seed), int(e), int(v)) for e, v in zip(cps[:cut], active[:cut]))
    return rows


def sparsity_slope(rows, min_edges: int = 100) -> float:
    """Mean over seeds of the OLS slope of ``log|E|`` on ``log|V|``.

    Only checkpoints with at least ``min_edges`` edges enter the fit.
    """
    by_seed: dict[int, list[tuple[int, int]]] = {}
    for seed, e, v in rows:
        if e >= min_edges:
            by_seed.setdefault(seed, []).append((e, v))
    slopes = []
    for pts in by_seed.values():
        if len(pts) < 2:
            continue
        e, v = np.array(pts, dtype=float).T
        slopes.append(np.polyfit(np.log(v), np.log(e), 1)[0])
    if not slopes:
        raise DomainError("not enough checkpoints to fit a slope")
    return float(np.mean(slopes))


def default_checkpoints(max_edges: int, per_decade: int = 8) -> np.ndarray:
    """Log-spaced integer checkpoints from 10 to ``max_edges``."""
    n = max(2, int(round(per_decade * math.log10(max_edges))) + 1)
    return np.unique(np.round(np.logspace(1, math.log10(max_edges), n)).astype(np.int64))
