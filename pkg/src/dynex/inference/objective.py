"""The bounded evidence lower bound and its closed-form coordinate updates.

The two intractable expected log-normalisers (of the community softmax and
of each community's vertex softmax) are replaced by the linear bound

    -ln Z >= -Z / zeta - ln zeta + 1,

which is tight at ``zeta = Z``. Everything except the attention transition
term then has a closed form under the Gaussian chain factors; that term is
estimated with reparameterised samples of the vertex chains.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import solve_triangular
from jax.scipy.special import gammaln, xlogy

from ..errors import DomainError
from ..generative import Dynamics, ModelParams
from ..temporal_graph import TemporalNetwork
from .chains import LOG_2PI, _marginals, _sample
from .state import (
    NetData,
    VariationalState,
    chol_from_raw,
    net_data,
    theta_to_arrays,
)

__all__ = [
    "ChainSample",
    "PART_NAMES",
    "cached_net_data",
    "elbo",
    "update_zeta",
    "update_pi",
    "sample_chains",
    "bound_sums",
    "expected_log_factorial",
    "poisson_window",
    "flat_parameters",
    "flat_elbo",
    "flat_elbo_grad",
]

PART_NAMES = (
    "edges",
    "pi_entropy",
    "h_init",
    "h_transition",
    "h_entropy",
    "k_prior",
    "k_entropy",
    "lambda_prior",
    "lambda_entropy",
    "births",
    "L_entropy",
)


def cached_net_data(net: TemporalNetwork) -> NetData:
    cache = net.__dict__.setdefault("_derived", {})
    if "net_data" not in cache:
        cache["net_data"] = net_data(net)
    return cache["net_data"]


# -- shifted-Poisson expectations ---------------------------------------


def expected_log_factorial(delta, eta, tol=1e-10, cap=1_000_000):
    """``E[ln (delta + J)!]`` for ``J ~ Poisson(eta)`` by direct summation.

    Terms are added until the accumulated pmf mass reaches ``1 - tol`` or
    ``cap`` terms have been used.
    """
    from scipy.special import gammaln as sgammaln

    delta = float(delta)
    eta = float(eta)
    if eta <= 0:
        return float(sgammaln(delta + 1))
    total = mass = 0.0
    log_eta = np.log(eta)
    chunk = 1024
    j0 = 0
    while mass < 1 - tol and j0 < cap:
        j = np.arange(j0, min(j0 + chunk, cap), dtype=float)
        pmf = np.exp(j * log_eta - eta - sgammaln(j + 1))
        csum = mass + np.cumsum(pmf)
        stop = np.searchsorted(csum, 1 - tol, side="left")
        n = min(stop + 1, j.size)
        total += float(pmf[:n] @ sgammaln(delta + j[:n] + 1))
        mass = float(csum[n - 1])
        j0 += chunk
    return total


def poisson_window(eta_max: float) -> int:
    """Static window length covering Poisson(eta) mass to far beyond 1e-10."""
    need = 20.0 * np.sqrt(max(float(eta_max), 0.0)) + 16.0
    return int(max(32, 2 ** int(np.ceil(np.log2(need)))))


def _poisson_expectations(eta, delta, window):
    """``E[ln (delta+J)!]`` and ``E[ln J!]`` over a window around the mean."""
    sd = jnp.sqrt(eta)
    j0 = jax.lax.stop_gradient(jnp.floor(jnp.maximum(eta - 10.0 * sd - 5.0, 0.0)))
    j = j0[:, None] + jnp.arange(window, dtype=eta.dtype)[None, :]
    pmf = jnp.exp(j * jnp.log(eta)[:, None] - eta[:, None] - gammaln(j + 1.0))
    shifted = (pmf * gammaln(delta[:, None] + j + 1.0)).sum(-1)
    plain = (pmf * gammaln(j + 1.0)).sum(-1)
    return shifted, plain


# -- Gaussian helpers ----------------------------------------------------


def _precision(raw):
    L = chol_from_raw(raw)
    Linv = solve_triangular(L, jnp.eye(L.shape[0], dtype=L.dtype), lower=True)
    return Linv.T @ Linv, jnp.sum(jnp.diag(raw))


def _expected_logpdf(quad, trace, half_logdet, dim):
    return -0.5 * dim * LOG_2PI - half_logdet - 0.5 * (quad + trace)


def _attention_means(X, data: NetData):
    """Attention-weighted means of every (vertex, slice) state in ``X``."""
    V, T, M = X.shape
    n = V * T
    flat = X.reshape(n, M)
    self_dot = jnp.einsum("nm,nm->n", flat, flat)
    if data.nb_src.shape[0] == 0:
        return X
    seg = data.nb_src * T + data.nb_t
    xd = X[data.nb_dst, data.nb_t]
    dots = jnp.einsum("pm,pm->p", flat[seg], xd)
    mx = jax.ops.segment_max(dots, seg, num_segments=n)
    shift = jax.lax.stop_gradient(jnp.maximum(self_dot, mx))
    e_self = jnp.exp(self_dot - shift)
    e_nb = jnp.exp(dots - shift[seg])
    den = e_self + jax.ops.segment_sum(e_nb, seg, num_segments=n)
    num = e_self[:, None] * flat + jax.ops.segment_sum(e_nb[:, None] * xd, seg, num_segments=n)
    return (num / den[:, None]).reshape(V, T, M)


def _lognormal(mean, var):
    return jnp.exp(mean + 0.5 * var)


# -- the objective -------------------------------------------------------


def _bound_sums(p, data: NetData):
    """Per-(t, m) vertex sums ``S`` and per-t community sums ``C``."""
    mh, vh, _ = _marginals(p["h_coef"], p["h_loc"], p["h_logscale"], data.start)
    mk, vk, _ = _marginals(p["k_coef"], p["k_loc"], p["k_logscale"], 0)
    B = chol_from_raw(p["B_raw"])
    z_mass = _lognormal(p["mu"], jnp.sum(B * B, axis=1))
    eta = jnp.exp(p["log_eta"])
    S = jnp.einsum("vt,vtm->tm", data.exists, _lognormal(mh, vh)) + eta[:, None] * z_mass[None, :]
    C = _lognormal(mk, vk).sum(-1)
    return S, C, mh, mk


def _h_transition_attas(p, data, P, half_logdet, z):
    X = _sample(p["h_coef"], p["h_loc"], p["h_logscale"], data.start, z)
    f = _attention_means(X, data)
    r = X[:, 1:] - f[:, :-1]
    quad = jnp.einsum("vtm,mn,vtn->vt", r, P, r)
    M = X.shape[-1]
    return jnp.sum(data.trans[:, :-1] * _expected_logpdf(quad, 0.0, half_logdet, M))


def _parts(p, pi, zeta_vm, zeta_c, data: NetData, z_h, dynamics: str, window: int):
    V, T = data.exists.shape
    M = p["mu"].shape[0]
    mh, vh, ch = _marginals(p["h_coef"], p["h_loc"], p["h_logscale"], data.start)
    mk, vk, ck = _marginals(p["k_coef"], p["k_loc"], p["k_logscale"], 0)
    ml, vl, cl = (x[:, 0] for x in _marginals(p["lam_coef"], p["lam_loc"], p["lam_logscale"], 0))
    eta = jnp.exp(p["log_eta"])
    S, C, _, _ = _bound_sums(p, data)

    out = {}
    # edges, with both log-normalisers linearised
    g_vm = -S / zeta_vm - jnp.log(zeta_vm) + 1.0
    g_c = -C / zeta_c - jnp.log(zeta_c) + 1.0
    et, eu, ew = data.edge_t, data.edge_u, data.edge_w
    per_edge = mh[eu, et] + mh[ew, et] + 2.0 * g_vm[et] + mk[et] + g_c[et][:, None]
    out["edges"] = jnp.sum(pi * per_edge)
    out["pi_entropy"] = -jnp.sum(xlogy(pi, pi))

    # vertex chains
    P, half_logdet = _precision(p["B_raw"])
    idx = jnp.arange(V)
    m0 = mh[idx, data.start]
    v0 = vh[idx, data.start]
    d0 = m0 - p["mu"]
    quad0 = jnp.einsum("vm,mn,vn->v", d0, P, d0)
    out["h_init"] = jnp.sum(_expected_logpdf(quad0, v0 @ jnp.diag(P), half_logdet, M))
    if dynamics == Dynamics.RW.value:
        d = mh[:, 1:] - mh[:, :-1]
        var_d = vh[:, 1:] + vh[:, :-1] - 2.0 * ch[:, 1:]
        quad = jnp.einsum("vtm,mn,vtn->vt", d, P, d)
        tr = var_d @ jnp.diag(P)
        out["h_transition"] = jnp.sum(data.trans[:, :-1] * _expected_logpdf(quad, tr, half_logdet, M))
    else:
        if z_h.ndim == 3:
            z_h = z_h[None]
        terms = jax.vmap(lambda z: _h_transition_attas(p, data, P, half_logdet, z))(z_h)
        out["h_transition"] = jnp.mean(terms)
    out["h_entropy"] = jnp.sum(data.exists[..., None] * (0.5 * (LOG_2PI + 1.0) + p["h_logscale"]))

    # community chain
    Pk, half_logdet_k = _precision(p["Bk_raw"])
    A = p["A_k"]
    dk0 = mk[0] - p["mu_k"]
    k_init = _expected_logpdf(dk0 @ Pk @ dk0, vk[0] @ jnp.diag(Pk), half_logdet_k, M)
    dk = mk[1:] - mk[:-1] @ A.T
    eye = jnp.eye(M, dtype=mk.dtype)
    cov = (
        vk[1:, :, None] * eye
        + jnp.einsum("ij,tj,kj->tik", A, vk[:-1], A)
        - ck[1:, :, None] * A.T[None]
        - A[None] * ck[1:, None, :]
    )
    quad_k = jnp.einsum("tm,mn,tn->t", dk, Pk, dk)
    tr_k = jnp.einsum("ij,tji->t", Pk, cov)
    out["k_prior"] = k_init + jnp.sum(_expected_logpdf(quad_k, tr_k, half_logdet_k, M))
    out["k_entropy"] = jnp.sum(0.5 * (LOG_2PI + 1.0) + p["k_logscale"])

    # birth log-rate chain
    log_sig = p["log_sigma_lambda"]
    prec = jnp.exp(-2.0 * log_sig)
    a = p["a_lambda"]
    l_init = -0.5 * LOG_2PI - log_sig - 0.5 * prec * ((ml[0] - p["mu_lambda"]) ** 2 + vl[0])
    dl = ml[1:] - a * ml[:-1]
    var_dl = vl[1:] + a * a * vl[:-1] - 2.0 * a * cl[1:]
    l_rest = -0.5 * LOG_2PI - log_sig - 0.5 * prec * (dl * dl + var_dl)
    out["lambda_prior"] = l_init + jnp.sum(l_rest)
    out["lambda_entropy"] = jnp.sum(0.5 * (LOG_2PI + 1.0) + p["lam_logscale"])

    # births: L = delta + J with J ~ Poisson(eta)
    e_logfact, e_logfact_j = _poisson_expectations(eta, data.delta, window)
    out["births"] = jnp.sum((data.delta + eta) * ml - _lognormal(ml, vl) - e_logfact)
    out["L_entropy"] = jnp.sum(eta - xlogy(eta, eta) + e_logfact_j)
    return out


_parts_jit = jax.jit(_parts, static_argnames=("dynamics", "window"))
_bound_sums_jit = jax.jit(_bound_sums)


def _all_arrays(state: VariationalState, params: ModelParams) -> dict:
    a = dict(state.arrays())
    a.update(theta_to_arrays(params))
    return {k: jnp.asarray(v) for k, v in a.items()}


class ChainSample(NamedTuple):
    """One joint draw of every variational chain plus its driving noise."""

    h: np.ndarray  # [..., V, T, M]
    k: np.ndarray  # [..., T, M]
    lam: np.ndarray  # [..., T, 1]
    z_h: np.ndarray
    z_k: np.ndarray
    z_lam: np.ndarray


def sample_chains(state: VariationalState, net: TemporalNetwork, rng, n: int | None = None, z=None):
    """Reparameterised draws ``x_t = a_t x_{t-1} + b_t + s_t z_t``.

    Args:
        n: number of draws stacked on a leading axis; None for a single one.
        z: optional ``(z_h, z_k, z_lam)`` to replay instead of fresh noise.
    """
    lead = () if n is None else (n,)
    if z is None:
        z_h = rng.standard_normal(lead + state.h_q.loc.shape)
        z_k = rng.standard_normal(lead + state.k_q.loc.shape)
        z_lam = rng.standard_normal(lead + state.lambda_q.loc.shape)
    else:
        z_h, z_k, z_lam = (np.asarray(x, dtype=float) for x in z)

    def run(q, zz):
        return np.asarray(
            _sample_jit(
                jnp.asarray(q.coef), jnp.asarray(q.loc), jnp.asarray(q.log_scale),
                jnp.asarray(q.start), jnp.asarray(zz),
            )
        )

    return ChainSample(
        run(state.h_q, z_h), run(state.k_q, z_k), run(state.lambda_q, z_lam), z_h, z_k, z_lam
    )


_sample_jit = jax.jit(_sample)


def elbo(state: VariationalState, params: ModelParams, net: TemporalNetwork, sample=None):
    """Bounded ELBO and its named parts.

    Under ATTAS dynamics the vertex transition term is estimated from the
    vertex-chain noise in ``sample`` (a `ChainSample`, or a raw ``z_h``
    array with optional leading sample axis). Under RW every term is exact
    and ``sample`` is ignored.

    Returns:
        ``(value, parts)`` where ``parts`` maps each name in `PART_NAMES` to
        a float.
    """
    data = cached_net_data(net)
    dyn = Dynamics(params.dynamics).value
    if dyn == Dynamics.ATTAS.value:
        if sample is None:
            raise DomainError("the attention transition term needs a chain sample")
        z_h = sample.z_h if isinstance(sample, ChainSample) else sample
    else:
        z_h = np.zeros((1,) + state.h_q.loc.shape)
    window = poisson_window(float(np.max(state.eta)) * 1.5 + 10.0)
    raw = _parts_jit(
        _all_arrays(state, params),
        jnp.asarray(state.pi),
        jnp.asarray(state.zeta_vm),
        jnp.asarray(state.zeta_c),
        data,
        jnp.asarray(z_h),
        dyn,
        window,
    )
    parts = {k: float(raw[k]) for k in PART_NAMES}
    for k, v in parts.items():
        if not np.isfinite(v):
            raise DomainError(f"ELBO term {k!r} is not finite ({v!r})")
    return float(sum(parts.values())), parts


def bound_sums(state: VariationalState, params: ModelParams, net: TemporalNetwork):
    """The shared sums ``S[t, m]`` and ``C[t]`` (numpy arrays)."""
    S, C, _, _ = _bound_sums_jit(_all_arrays(state, params), cached_net_data(net))
    return np.asarray(S), np.asarray(C)


def update_zeta(state: VariationalState, net: TemporalNetwork, params: ModelParams) -> VariationalState:
    """Set every bound parameter to its tight value."""
    S, C = bound_sums(state, params, net)
    out = state.copy()
    out.zeta_vm = S
    out.zeta_c = C
    return out


@jax.jit
def _pi_logits(p, zeta_vm, zeta_c, data: NetData):
    S, C, mh, mk = _bound_sums(p, data)
    et, eu, ew = data.edge_t, data.edge_u, data.edge_w
    vertex = mh[eu, et] + mh[ew, et] - 2.0 * S[et] / zeta_vm[et] - 2.0 * jnp.log(zeta_vm[et]) + 2.0
    community = mk[et] - (C[et] / zeta_c[et] + jnp.log(zeta_c[et]))[:, None]
    return vertex + community


def update_pi(state: VariationalState, net: TemporalNetwork, params: ModelParams) -> VariationalState:
    """Closed-form responsibilities given the current chains and bounds."""
    logits = np.asarray(
        _pi_logits(
            _all_arrays(state, params),
            jnp.asarray(state.zeta_vm),
            jnp.asarray(state.zeta_c),
            cached_net_data(net),
        )
    )
    logits = logits - logits.max(axis=1, keepdims=True)
    pi = np.exp(logits)
    pi /= pi.sum(axis=1, keepdims=True)
    out = state.copy()
    out.pi = pi
    return out


def objective_fn(flat: dict, pi, zeta_vm, zeta_c, data, z_h, dynamics: str, window: int):
    """Scalar bounded ELBO of a flat parameter dict (for autodiff)."""
    return sum(_parts(flat, pi, zeta_vm, zeta_c, data, z_h, dynamics, window).values())


_value_and_grad_jit = jax.jit(jax.value_and_grad(objective_fn), static_argnames=("dynamics", "window"))
_objective_jit = jax.jit(objective_fn, static_argnames=("dynamics", "window"))


def flat_parameters(state: VariationalState, params: ModelParams) -> dict:
    """Every gradient-trained quantity as unconstrained numpy arrays.

    Keys are those of `GROUPS`; Cholesky factors appear with a log diagonal
    and ``eta`` as ``log_eta``.
    """
    return {k: np.array(v) for k, v in _all_arrays(state, params).items()}


def _flat_call(fn, flat, state, net, z_h, dynamics, eta_max):
    dyn = Dynamics(dynamics).value
    if z_h is None:
        if dyn == Dynamics.ATTAS.value:
            raise DomainError("the attention transition term needs a chain sample")
        z_h = np.zeros((1,) + state.h_q.loc.shape)
    eta_max = float(np.max(np.exp(flat["log_eta"]))) if eta_max is None else eta_max
    return fn(
        {k: jnp.asarray(v) for k, v in flat.items()},
        jnp.asarray(state.pi),
        jnp.asarray(state.zeta_vm),
        jnp.asarray(state.zeta_c),
        cached_net_data(net),
        jnp.asarray(z_h),
        dynamics=dyn,
        window=poisson_window(eta_max * 1.5 + 10.0),
    )


def flat_elbo(flat: dict, state: VariationalState, net: TemporalNetwork, dynamics, z_h=None,
              eta_max=None) -> float:
    """Bounded ELBO at the flat parameters ``flat``, with ``pi``, ``zeta``
    taken from ``state`` and the vertex-chain noise ``z_h`` held fixed.

    ``eta_max`` pins the Poisson summation window so that nearby parameter
    values are summed over identical supports.
    """
    return float(_flat_call(_objective_jit, flat, state, net, z_h, dynamics, eta_max))


def flat_elbo_grad(flat: dict, state: VariationalState, net: TemporalNetwork, dynamics, z_h=None,
                   eta_max=None):
    """`flat_elbo` and its gradient with respect to every entry of ``flat``."""
    v, g = _flat_call(_value_and_grad_jit, flat, state, net, z_h, dynamics, eta_max)
    return float(v), {k: np.asarray(x) for k, x in g.items()}
