"""Stochastic-gradient (ADAM) steps and the alternating fitting loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from ..errors import DomainError
from ..generative import Dynamics, ModelParams
from ..temporal_graph import TemporalNetwork
from .objective import cached_net_data, elbo, objective_fn, poisson_window, update_pi, update_zeta
from .state import GROUPS, THETA_KEYS, AdamState, VariationalState, arrays_to_theta, init_state, theta_to_arrays

log = logging.getLogger(__name__)

__all__ = ["FitOptions", "FitResult", "Trace", "grad_step", "fit", "fit_once"]


@dataclass
class FitOptions:
    """Settings for `fit` and `grad_step`.

    ``steps_per_cycle`` gradient steps follow each (zeta, pi) update; with
    ``steps_per_cycle = 0`` only the conjugate updates run, for
    ``max_cycles`` cycles. ``trainable`` lists the parameter groups of
    `GROUPS` that receive gradient updates. During the first
    ``warmup_cycles`` cycles the groups in ``warmup_frozen`` are held fixed:
    the community chain otherwise tends to hand every edge to one community
    before the vertex states have separated.
    """

    dynamics: Dynamics = Dynamics.ATTAS
    iterations: int = 50_000
    steps_per_cycle: int = 10
    learning_rate: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    restarts: int = 5
    mc_samples: int = 1
    trainable: tuple = tuple(GROUPS)
    tol: float | None = None
    patience: int = 100
    ema: float = 0.99
    max_cycles: int | None = None
    warmup_cycles: int = 100
    warmup_frozen: tuple = ("k", "theta_community")
    seed: int = 0

    def __post_init__(self):
        self.dynamics = Dynamics(self.dynamics)
        unknown = (set(self.trainable) | set(self.warmup_frozen)) - set(GROUPS)
        if unknown:
            raise DomainError(f"unknown parameter groups: {sorted(unknown)}")
        if self.iterations < 0 or self.steps_per_cycle < 0:
            raise DomainError("iterations and steps_per_cycle must be non-negative")
        if self.restarts < 1 or self.mc_samples < 1:
            raise DomainError("restarts and mc_samples must be >= 1")
        if self.learning_rate < 0:
            raise DomainError("learning_rate must be non-negative")
        if self.warmup_cycles < 0:
            raise DomainError("warmup_cycles must be non-negative")
        if not 0 <= self.ema < 1:
            raise DomainError("ema must lie in [0, 1)")


@dataclass
class Trace:
    """ELBO history of the selected restart plus a summary of all restarts."""

    rows: list = field(default_factory=list)  # (cycle, step, elbo_smoothed, elbo_sample)
    restart_elbos: list = field(default_factory=list)
    best_restart: int = 0
    skipped_steps: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("cycle,step,elbo_smoothed,elbo_sample\n")
            for c, s, sm, x in self.rows:
                fh.write(f"{c},{s},{sm!r},{x!r}\n")


class FitResult(NamedTuple):
    state: VariationalState
    params: ModelParams
    trace: Trace


def _run_steps(flat, m, v, step, mask, fixed, data, noise, lr, b1, b2, eps, dynamics, window):
    pi, zeta_vm, zeta_c = fixed
    vg = jax.value_and_grad(objective_fn)

    def body(carry, z_h):
        flat, m, v, step, skipped = carry
        val, g = vg(flat, pi, zeta_vm, zeta_c, data, z_h, dynamics, window)
        g = {k: g[k] * mask[k] for k in g}
        ok = jnp.isfinite(val)
        for x in g.values():
            ok = ok & jnp.all(jnp.isfinite(x))
        n = step + 1
        m1 = {k: b1 * m[k] + (1 - b1) * g[k] for k in g}
        v1 = {k: b2 * v[k] + (1 - b2) * g[k] * g[k] for k in g}
        c1 = 1 - b1 ** n
        c2 = 1 - b2 ** n
        new = {k: flat[k] + lr * (m1[k] / c1) / (jnp.sqrt(v1[k] / c2) + eps) for k in g}
        pick = lambda a, b: jax.tree_util.tree_map(lambda x, y: jnp.where(ok, x, y), a, b)  # noqa: E731
        carry = (
            pick(new, flat),
            pick(m1, m),
            pick(v1, v),
            jnp.where(ok, n, step),
            skipped + jnp.where(ok, 0, 1),
        )
        return carry, val

    init = (flat, m, v, step, jnp.zeros((), jnp.int64))
    (flat, m, v, step, skipped), vals = jax.lax.scan(body, init, noise)
    return flat, m, v, step, skipped, vals


_run_steps_jit = jax.jit(_run_steps, static_argnames=("dynamics", "window", "b1", "b2", "eps"))


def _mask(opts: FitOptions, flat: dict, frozen=()) -> dict:
    on = {k for g in opts.trainable if g not in frozen for k in GROUPS[g]}
    return {k: jnp.asarray(1.0 if k in on else 0.0) for k in flat}


def _draw_noise(rng, n_steps, opts, state, dynamics):
    if dynamics is Dynamics.RW:
        # the RW objective ignores the noise; keep the scanned array tiny
        return np.zeros((n_steps, 1, 1, 1, 1))
    return rng.standard_normal((n_steps, opts.mc_samples) + state.h_q.loc.shape)


def _steps(state, params, net, rng, opts, n_steps, noise=None, frozen=()):
    """Run ``n_steps`` ADAM ascent steps; returns (state, params, elbo values)."""
    dynamics = Dynamics(params.dynamics)
    data = cached_net_data(net)
    flat = dict(state.arrays())
    flat.update(theta_to_arrays(params))
    adam = state.adam if state.adam is not None else AdamState.zeros(flat)
    if noise is None or dynamics is Dynamics.RW:
        noise = _draw_noise(rng, n_steps, opts, state, dynamics)
    eta_cap = float(np.max(state.eta)) * 1.5 + 10.0
    window = poisson_window(eta_cap)
    b1, b2 = (float(b) for b in opts.betas)
    out = _run_steps_jit(
        {k: jnp.asarray(x) for k, x in flat.items()},
        {k: jnp.asarray(x) for k, x in adam.m.items()},
        {k: jnp.asarray(x) for k, x in adam.v.items()},
        jnp.asarray(adam.step, jnp.int64),
        _mask(opts, flat, frozen),
        (jnp.asarray(state.pi), jnp.asarray(state.zeta_vm), jnp.asarray(state.zeta_c)),
        data,
        jnp.asarray(noise),
        float(opts.learning_rate),
        b1,
        b2,
        float(opts.eps),
        dynamics.value,
        window,
    )
    new_flat, m, v, step, skipped, vals = out
    new_flat = {k: np.asarray(x) for k, x in new_flat.items()}
    skipped = int(skipped)
    if skipped:
        log.warning("skipped %d gradient steps with non-finite values", skipped)
    new_state = state.with_arrays({k: new_flat[k] for k in new_flat if k not in THETA_KEYS})
    new_state.adam = AdamState(int(step), {k: np.asarray(x) for k, x in m.items()},
                               {k: np.asarray(x) for k, x in v.items()})
    new_state.skipped_steps = state.skipped_steps + skipped
    new_params = arrays_to_theta({k: new_flat[k] for k in THETA_KEYS}, dynamics)
    return new_state, new_params, np.asarray(vals)


def grad_step(state: VariationalState, params: ModelParams, net: TemporalNetwork, rng, opts: FitOptions,
              noise=None):
    """One reparameterised ADAM ascent step on the continuous parameters.

    ``pi`` and the bound parameters stay fixed. ``noise`` optionally replays
    the vertex-chain standard normals (shape ``[mc_samples, V, T, M]``).

    Returns:
        ``(state, params, elbo_estimate)``, the estimate being the bounded
        ELBO at the parameters before the step.
    """
    if noise is not None:
        noise = np.asarray(noise, dtype=float)[None]
        if noise.ndim == 4:
            noise = noise[:, None]
    s, p, vals = _steps(state, params, net, rng, opts, 1, noise=noise)
    return s, p, float(vals[0])


def _check_net(net: TemporalNetwork):
    for t in range(1, net.T + 1):
        if net.slice(t).N and net.vertex_count_at(t) < 2:
            raise DomainError(f"slice {t} has edges but fewer than two vertices")
    if net.n_edges == 0:
        raise DomainError("cannot fit a network without edges")


def fit_once(net: TemporalNetwork, M: int, opts: FitOptions, rng, init=None):
    """A single restart of the alternating scheme."""
    _check_net(net)
    if init is None:
        state, params = init_state(net, M, rng, opts.dynamics)
    else:
        state, params = init
    K = opts.steps_per_cycle
    if K == 0:
        if opts.max_cycles is None:
            raise DomainError("max_cycles is required when gradient steps are disabled")
        n_cycles = opts.max_cycles
    else:
        n_cycles = math.ceil(opts.iterations / K) if opts.iterations else 0
        if opts.max_cycles is not None:
            n_cycles = min(n_cycles, opts.max_cycles)
    rows = []
    smoothed = None
    best_seen = -np.inf
    since_best = 0
    step_count = 0
    for cycle in range(1, n_cycles + 1):
        state = update_zeta(state, net, params)
        state = update_pi(state, net, params)
        if K:
            n = min(K, opts.iterations - step_count)
            frozen = opts.warmup_frozen if cycle <= opts.warmup_cycles else ()
            state, params, vals = _steps(state, params, net, rng, opts, n, frozen=frozen)
            step_count += n
        else:
            vals = np.array([_cycle_elbo(state, params, net, rng)])
        for x in vals:
            smoothed = x if smoothed is None else opts.ema * smoothed + (1 - opts.ema) * x
        rows.append((cycle, step_count, float(smoothed), float(vals[-1])))
        if opts.tol is not None:
            if smoothed > best_seen + opts.tol:
                best_seen = smoothed
                since_best = 0
            else:
                since_best += 1
                if since_best >= opts.patience:
                    log.info("early stop at cycle %d", cycle)
                    break
    state = update_zeta(state, net, params)
    state = update_pi(state, net, params)
    return state, params, rows, (smoothed if smoothed is not None else -np.inf)


def _cycle_elbo(state, params, net, rng):
    if Dynamics(params.dynamics) is Dynamics.RW:
        return elbo(state, params, net)[0]
    return elbo(state, params, net, rng.standard_normal(state.h_q.loc.shape))[0]


def fit(net: TemporalNetwork, M: int, opts: FitOptions | None = None) -> FitResult:
    """Fit the variational posterior and model parameters to ``net``.

    Alternates closed-form (zeta, pi) updates with ``steps_per_cycle``
    ADAM steps until ``iterations`` gradient steps have been taken (or the
    smoothed ELBO stalls, when ``tol`` is set), over ``restarts`` random
    restarts. The restart with the best final smoothed ELBO is returned.
    """
    opts = opts or FitOptions()
    seeds = np.random.SeedSequence(opts.seed).spawn(opts.restarts)
    best = None
    trace = Trace()
    for r, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        state, params, rows, score = fit_once(net, M, opts, rng)
        trace.restart_elbos.append(float(score))
        log.info("restart %d: smoothed ELBO %.6g", r, score)
        if best is None or score > best[3]:
            best = (state, params, rows, score, r)
    state, params, rows, _, r = best
    trace.rows = rows
    trace.best_restart = r
    trace.skipped_steps = state.skipped_steps
    return FitResult(state, params, trace)
