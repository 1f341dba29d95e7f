"""Save and restore fits (variational state, point parameters, network)."""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import DomainError
from ..generative import Dynamics, ModelParams
from ..temporal_graph import EdgeSlice, TemporalNetwork
from .chains import GaussChainQ
from .state import AdamState, VariationalState

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

FORMAT_VERSION = 1
_CHAINS = ("h_q", "k_q", "lambda_q")
_THETA = ("mu", "B_chol", "mu_k", "A_k", "Bk_chol")


def save_checkpoint(path, state: VariationalState, params: ModelParams, net: TemporalNetwork,
                    meta: dict | None = None) -> None:
    """Write everything needed to resume or query a fit to one ``.npz`` file.

    ``meta`` holds extra JSON-serialisable information (seed, options, ...).
    """
    arrays = {
        "pi": state.pi,
        "eta": state.eta,
        "zeta_vm": state.zeta_vm,
        "zeta_c": state.zeta_c,
        "offsets": state.offsets,
    }
    for name in _CHAINS:
        q = getattr(state, name)
        arrays[f"{name}.coef"] = q.coef
        arrays[f"{name}.loc"] = q.loc
        arrays[f"{name}.log_scale"] = q.log_scale
        arrays[f"{name}.start"] = np.asarray(q.start)
    for name in _THETA:
        arrays[f"theta.{name}"] = getattr(params, name)
    if state.adam is not None:
        for k, x in state.adam.m.items():
            arrays[f"adam.m.{k}"] = x
        for k, x in state.adam.v.items():
            arrays[f"adam.v.{k}"] = x
    t, u, v = net.edge_arrays()
    arrays["net.t"], arrays["net.u"], arrays["net.v"] = t, u, v

    header = {
        "format_version": FORMAT_VERSION,
        "M": params.M,
        "T": net.T,
        "dynamics": Dynamics(params.dynamics).value,
        "mu_lambda": params.mu_lambda,
        "sigma_lambda": params.sigma_lambda,
        "a_lambda": params.a_lambda,
        "labels": list(net.labels),
        "adam_step": None if state.adam is None else state.adam.step,
        "skipped_steps": state.skipped_steps,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    _write_npz(Path(path), arrays)


def _write_npz(path: Path, arrays: dict) -> None:
    # np.savez stamps entries with the wall clock; a fixed stamp keeps
    # checkpoints byte-identical across identical runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arrays[name]), allow_pickle=False)


def load_checkpoint(path):
    """Inverse of `save_checkpoint`.

    Returns:
        ``(state, params, net, meta)``.
    """
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DomainError(f"cannot read checkpoint {path}: {e}") from None
    with z:
        a = {k: z[k] for k in z.files}
    if "header" not in a:
        raise DomainError(f"{path} is not a checkpoint")
    h = json.loads(a.pop("header").tobytes().decode("utf-8"))
    if h.get("format_version") != FORMAT_VERSION:
        raise DomainError(f"unsupported checkpoint version {h.get('format_version')!r}")

    chains = {}
    for name in _CHAINS:
        start = a[f"{name}.start"]
        chains[name] = GaussChainQ(
            a[f"{name}.coef"], a[f"{name}.loc"], a[f"{name}.log_scale"],
            start if start.ndim else int(start),
        )
    adam = None
    if h["adam_step"] is not None:
        m = {k[len("adam.m."):]: x for k, x in a.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v."):]: x for k, x in a.items() if k.startswith("adam.v.")}
        adam = AdamState(int(h["adam_step"]), m, v)
    state = VariationalState(
        pi=a["pi"],
        eta=a["eta"],
        zeta_vm=a["zeta_vm"],
        zeta_c=a["zeta_c"],
        adam=adam,
        offsets=a["offsets"],
        skipped_steps=int(h["skipped_steps"]),
        **chains,
    )
    params = ModelParams(
        M=int(h["M"]),
        mu_lambda=float(h["mu_lambda"]),
        sigma_lambda=float(h["sigma_lambda"]),
        a_lambda=float(h["a_lambda"]),
        dynamics=Dynamics(h["dynamics"]),
        **{name: a[f"theta.{name}"] for name in _THETA},
    )
    t, u, v = a["net.t"], a["net.u"], a["net.v"]
    slices = [EdgeSlice(u[t == s], v[t == s]) for s in range(1, int(h["T"]) + 1)]
    net = TemporalNetwork(h["labels"], slices)
    return state, params, net, h["meta"]
