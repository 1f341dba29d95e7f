"""Variational state, unconstrained parameter packing and initialisation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import jax.numpy as jnp
import numpy as np

from ..errors import DomainError
from ..generative import Dynamics, ModelParams
from ..temporal_graph import TemporalNetwork
from .chains import GaussChainQ

__all__ = [
    "NetData",
    "VariationalState",
    "AdamState",
    "GROUPS",
    "net_data",
    "theta_to_arrays",
    "arrays_to_theta",
    "chol_from_raw",
    "init_state",
]

# parameter groups that can be switched on or off for gradient updates
GROUPS = {
    "h": ("h_coef", "h_loc", "h_logscale"),
    "k": ("k_coef", "k_loc", "k_logscale"),
    "lambda": ("lam_coef", "lam_loc", "lam_logscale"),
    "eta": ("log_eta",),
    "theta_birth": ("mu_lambda", "log_sigma_lambda", "a_lambda"),
    "theta_vertex": ("mu", "B_raw"),
    "theta_community": ("mu_k", "A_k", "Bk_raw"),
}
VARIATIONAL_KEYS = GROUPS["h"] + GROUPS["k"] + GROUPS["lambda"] + GROUPS["eta"]
THETA_KEYS = GROUPS["theta_birth"] + GROUPS["theta_vertex"] + GROUPS["theta_community"]


class NetData(NamedTuple):
    """Index arrays describing a network, in the layout the objective uses."""

    start: jnp.ndarray  # [V] 0-based arrival slice
    exists: jnp.ndarray  # [V, T] 1.0 where t >= start
    trans: jnp.ndarray  # [V, T] 1.0 where a transition t -> t+1 is modelled
    edge_t: jnp.ndarray  # [E]
    edge_u: jnp.ndarray  # [E]
    edge_w: jnp.ndarray  # [E]
    delta: jnp.ndarray  # [T] newcomers per slice
    nb_t: jnp.ndarray  # [P] directed neighbour pairs of slices 0..T-2
    nb_src: jnp.ndarray
    nb_dst: jnp.ndarray


def net_data(net: TemporalNetwork) -> NetData:
    T = net.T
    start = net.arrival - 1
    t = np.arange(T)
    exists = (t[None, :] >= start[:, None]).astype(float)
    trans = exists * (t[None, :] < T - 1)
    et, eu, ew = net.edge_arrays()
    nb_t, nb_src, nb_dst = [], [], []
    for ti, s in enumerate(net.slices[:-1]):
        keep = s.u != s.v
        if not keep.any():
            continue
        pairs = np.unique(np.stack([s.u[keep], s.v[keep]], 1), axis=0)
        nb_t.append(np.full(2 * len(pairs), ti))
        nb_src.append(np.concatenate([pairs[:, 0], pairs[:, 1]]))
        nb_dst.append(np.concatenate([pairs[:, 1], pairs[:, 0]]))

    def cat(xs):
        return jnp.asarray(np.concatenate(xs) if xs else np.empty(0, np.int64), dtype=jnp.int64)

    return NetData(
        start=jnp.asarray(start, dtype=jnp.int64),
        exists=jnp.asarray(exists),
        trans=jnp.asarray(trans),
        edge_t=jnp.asarray(et - 1, dtype=jnp.int64),
        edge_u=jnp.asarray(eu, dtype=jnp.int64),
        edge_w=jnp.asarray(ew, dtype=jnp.int64),
        delta=jnp.asarray(net.newcomers(), dtype=float),
        nb_t=cat(nb_t),
        nb_src=cat(nb_src),
        nb_dst=cat(nb_dst),
    )


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls(
            0,
            {k: np.zeros_like(np.asarray(x)) for k, x in params.items()},
            {k: np.zeros_like(np.asarray(x)) for k, x in params.items()},
        )


@dataclass
class VariationalState:
    """All variational parameters of a fit.

    ``pi`` holds one row per edge in the order of
    `TemporalNetwork.edge_arrays`; ``pi_slices`` splits it per slice.
    Unobserved pool vertices keep the prior as their factor, so nothing is
    stored for them.
    """

    pi: np.ndarray
    h_q: GaussChainQ
    k_q: GaussChainQ
    lambda_q: GaussChainQ
    eta: np.ndarray
    zeta_vm: np.ndarray
    zeta_c: np.ndarray
    adam: AdamState | None = None
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(1, np.int64))
    skipped_steps: int = 0

    @property
    def M(self) -> int:
        return self.pi.shape[1]

    def pi_slices(self) -> list[np.ndarray]:
        o = self.offsets
        return [self.pi[o[i] : o[i + 1]] for i in range(len(o) - 1)]

    def arrays(self) -> dict:
        """Unconstrained continuous parameters (the gradient-trained ones)."""
        return {
            "h_coef": self.h_q.coef,
            "h_loc": self.h_q.loc,
            "h_logscale": self.h_q.log_scale,
            "k_coef": self.k_q.coef,
            "k_loc": self.k_q.loc,
            "k_logscale": self.k_q.log_scale,
            "lam_coef": self.lambda_q.coef,
            "lam_loc": self.lambda_q.loc,
            "lam_logscale": self.lambda_q.log_scale,
            "log_eta": np.log(self.eta),
        }

    def with_arrays(self, a: dict) -> "VariationalState":
        a = {k: np.asarray(v) for k, v in a.items()}
        return replace(
            self,
            h_q=GaussChainQ(a["h_coef"], a["h_loc"], a["h_logscale"], self.h_q.start),
            k_q=GaussChainQ(a["k_coef"], a["k_loc"], a["k_logscale"], 0),
            lambda_q=GaussChainQ(a["lam_coef"], a["lam_loc"], a["lam_logscale"], 0),
            eta=np.exp(a["log_eta"]),
        )

    def copy(self) -> "VariationalState":
        adam = None
        if self.adam is not None:
            adam = AdamState(
                self.adam.step,
                {k: np.array(x) for k, x in self.adam.m.items()},
                {k: np.array(x) for k, x in self.adam.v.items()},
            )
        return replace(
            self,
            pi=np.array(self.pi),
            h_q=self.h_q.copy(),
            k_q=self.k_q.copy(),
            lambda_q=self.lambda_q.copy(),
            eta=np.array(self.eta),
            zeta_vm=np.array(self.zeta_vm),
            zeta_c=np.array(self.zeta_c),
            adam=adam,
            offsets=np.array(self.offsets),
        )


def chol_from_raw(raw):
    """Lower-triangular factor with an exponentiated diagonal."""
    return jnp.tril(raw, -1) + jnp.diag(jnp.exp(jnp.diag(raw)))


def _raw_from_chol(chol, name):
    chol = np.asarray(chol, dtype=float)
    d = np.diag(chol)
    if np.any(d <= 0):
        raise DomainError(f"{name} needs a strictly positive diagonal for inference")
    return np.tril(chol, -1) + np.diag(np.log(d))


def theta_to_arrays(params: ModelParams) -> dict:
    return {
        "mu_lambda": np.asarray(params.mu_lambda, dtype=float),
        "log_sigma_lambda": np.asarray(math.log(params.sigma_lambda)),
        "a_lambda": np.asarray(params.a_lambda, dtype=float),
        "mu": np.array(params.mu),
        "B_raw": _raw_from_chol(params.B_chol, "B_chol"),
        "mu_k": np.array(params.mu_k),
        "A_k": np.array(params.A_k),
        "Bk_raw": _raw_from_chol(params.Bk_chol, "Bk_chol"),
    }


def arrays_to_theta(a: dict, dynamics) -> ModelParams:
    M = np.asarray(a["mu"]).size
    return ModelParams(
        M=M,
        mu_lambda=float(a["mu_lambda"]),
        sigma_lambda=float(np.exp(a["log_sigma_lambda"])),
        a_lambda=float(a["a_lambda"]),
        mu=np.asarray(a["mu"]),
        B_chol=np.asarray(chol_from_raw(jnp.asarray(a["B_raw"]))),
        mu_k=np.asarray(a["mu_k"]),
        A_k=np.asarray(a["A_k"]),
        Bk_chol=np.asarray(chol_from_raw(jnp.asarray(a["Bk_raw"]))),
        dynamics=dynamics,
    )


def init_state(net: TemporalNetwork, M: int, rng, dynamics=Dynamics.ATTAS):
    """Near-prior starting point for a fit.

    Chain means start at ``0.1 * N(0, 1)`` draws held constant in time
    (``a = 1``, ``b = 0``), log stds at ``ln 0.5``, ``pi`` uniform and
    ``eta = max(newcomers, 1)``. The birth chain instead starts at the log
    of the expected pool size so that its first gradients are moderate.
    """
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    T, V = net.T, net.n_vertices
    delta = net.newcomers().astype(float)
    eta = np.maximum(delta, 1.0)
    start = np.asarray(net.arrival - 1)

    h_loc = np.zeros((V, T, M))
    h_loc[np.arange(V), start] = 0.1 * rng.standard_normal((V, M))
    h_q = GaussChainQ(np.ones((V, T, M)), h_loc, np.full((V, T, M), math.log(0.5)), start)

    k_loc = np.zeros((T, M))
    k_loc[0] = 0.1 * rng.standard_normal(M)
    k_q = GaussChainQ(np.ones((T, M)), k_loc, np.full((T, M), math.log(0.5)), 0)

    target = np.log(np.maximum(delta + eta, 1.0))
    lam_loc = np.diff(np.concatenate([[0.0], target]))[:, None]
    lambda_q = GaussChainQ(np.ones((T, 1)), lam_loc, np.full((T, 1), math.log(0.5)), 0)

    E = net.n_edges
    state = VariationalState(
        pi=np.full((E, M), 1.0 / M),
        h_q=h_q,
        k_q=k_q,
        lambda_q=lambda_q,
        eta=eta,
        zeta_vm=np.ones((T, M)),
        zeta_c=np.ones(T),
        offsets=net.slice_offsets(),
    )
    params = ModelParams(
        M=M,
        mu_lambda=math.log(max(delta[0], 1.0)),
        sigma_lambda=1.0,
        a_lambda=0.5,
        mu=np.zeros(M),
        B_chol=0.1 * np.eye(M),
        mu_k=np.zeros(M),
        A_k=0.9 * np.eye(M),
        Bk_chol=0.1 * np.eye(M),
        dynamics=dynamics,
    )
    return state, params
