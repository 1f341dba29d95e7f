"""Conditional-Gaussian Markov chains used as variational factors.

A chain over slices ``start..T`` (0-based ``start``) is

    x_start = b_start + s_start * z_start
    x_t     = a_t * x_{t-1} + b_t + s_t * z_t          (t > start)

independently in each of its ``D`` dimensions, with ``s_t = exp(log_s_t)``.
Parameters are stored as dense ``[..., T, D]`` arrays aligned with absolute
time; entries before ``start`` (and ``a`` at ``start``) are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from ..errors import DomainError

__all__ = ["GaussChainQ", "chain_marginals", "lognormal_mean", "chain_sample"]


@dataclass
class GaussChainQ:
    """Batched conditional-Gaussian chains.

    Attributes:
        coef: transition coefficients ``a_t``, shape ``[..., T, D]``.
        loc: offsets ``b_t``; the entry at ``start`` is the initial mean.
        log_scale: ``log s_t``; the entry at ``start`` is the initial log std.
        start: first slice of each chain (0-based), shape ``[...]`` or scalar.
    """

    coef: np.ndarray
    loc: np.ndarray
    log_scale: np.ndarray
    start: np.ndarray | int = 0

    @property
    def T(self) -> int:
        return self.loc.shape[-2]

    def _at_start(self, x):
        x = np.asarray(x)
        s = np.broadcast_to(np.asarray(self.start), x.shape[:-2])
        return np.take_along_axis(x, s[..., None, None], axis=-2)[..., 0, :]

    @property
    def init_mean(self):
        return self._at_start(self.loc)

    @property
    def init_logstd(self):
        return self._at_start(self.log_scale)

    def copy(self) -> "GaussChainQ":
        return GaussChainQ(
            np.array(self.coef), np.array(self.loc), np.array(self.log_scale), np.array(self.start)
        )


def _continues(start, T, batch_shape):
    """Boolean ``[..., T, 1]`` mask of slots that follow an earlier slot."""
    t = jnp.arange(T)
    s = jnp.broadcast_to(jnp.asarray(start), batch_shape)
    return (t > s[..., None])[..., None]


def _marginals(coef, loc, log_scale, start):
    batch = loc.shape[:-2]
    a = jnp.where(_continues(start, loc.shape[-2], batch), coef, 0.0)
    s2 = jnp.exp(2.0 * log_scale)

    def step(carry, xs):
        mean, var = carry
        a_t, b_t, s2_t = xs
        cov = a_t * var
        mean = a_t * mean + b_t
        var = a_t * a_t * var + s2_t
        return (mean, var), (mean, var, cov)

    xs = tuple(jnp.moveaxis(x, -2, 0) for x in (a, loc, s2))
    zero = jnp.zeros(loc.shape[:-2] + loc.shape[-1:], loc.dtype)
    _, (means, vars_, covs) = jax.lax.scan(step, (zero, zero), xs)
    return tuple(jnp.moveaxis(x, 0, -2) for x in (means, vars_, covs))


def chain_marginals(q: GaussChainQ):
    """Per-slot marginal means, variances and lag-1 covariances.

    ``lag1_cov[t] = Cov(x_t, x_{t-1}) = a_t var_{t-1}``; it is 0 at ``start``.
    """
    out = _marginals(
        jnp.asarray(q.coef), jnp.asarray(q.loc), jnp.asarray(q.log_scale), jnp.asarray(q.start)
    )
    return tuple(np.asarray(x) for x in out)


def _sample(coef, loc, log_scale, start, z):
    batch = loc.shape[:-2]
    a = jnp.where(_continues(start, loc.shape[-2], batch), coef, 0.0)
    s = jnp.exp(log_scale)

    def step(x, xs):
        a_t, b_t, s_t, z_t = xs
        x = a_t * x + b_t + s_t * z_t
        return x, x

    # z may carry extra leading sample axes
    xs = tuple(jnp.moveaxis(jnp.broadcast_to(v, z.shape), -2, 0) for v in (a, loc, s, z))
    zero = jnp.zeros(z.shape[:-2] + z.shape[-1:], loc.dtype)
    _, x = jax.lax.scan(step, zero, xs)
    return jnp.moveaxis(x, 0, -2)


def chain_sample(q: GaussChainQ, z):
    """Ancestral sample driven by the standard normals ``z`` (same shape)."""
    return np.asarray(
        _sample(
            jnp.asarray(q.coef),
            jnp.asarray(q.loc),
            jnp.asarray(q.log_scale),
            jnp.asarray(q.start),
            jnp.asarray(z),
        )
    )


def lognormal_mean(mean, var):
    """``E[exp(x)]`` for ``x ~ N(mean, var)``."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0):
        raise DomainError("variance must be non-negative")
    arg = mean + 0.5 * var
    with np.errstate(over="ignore"):
        out = np.exp(arg)
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(out)))[0]
        m = float(np.broadcast_to(mean, out.shape).reshape(-1)[bad])
        v = float(np.broadcast_to(var, out.shape).reshape(-1)[bad])
        raise DomainError(f"lognormal mean overflows at mean={m:g}, var={v:g}")
    return out if out.ndim else float(out)


LOG_2PI = math.log(2.0 * math.pi)
