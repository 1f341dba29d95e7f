"""Command-line entry point: simulate, sparsity, fit, predict, evaluate.

Every option can come from a flat ``key = value`` file given with
``--config``; command-line flags override file values. The resolved
configuration is written to ``config.txt`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

log = logging.getLogger("dynex")

_SENTINEL = object()


def _int(x) -> int:
    return int(str(x).strip())


def _float(x) -> float:
    v = float(str(x).strip())
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _opt_float(x):
    s = str(x).strip().lower()
    return None if s in ("", "none") else _float(s)


def _int_list(x) -> list[int]:
    return [int(p) for p in str(x).replace(" ", "").split(",") if p]


def _float_list(x) -> list[float]:
    return [_float(p) for p in str(x).replace(" ", "").split(",") if p]


def _bool(x) -> bool:
    s = str(x).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _choice(*options):
    def conv(x):
        s = str(x).strip().lower()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    return conv


def _text(x) -> str:
    return str(x).strip()


@dataclass(frozen=True)
class Field:
    name: str  # snake_case; the flag is its kebab-case form
    conv: object
    default: object
    help: str
    check: object = None  # predicate on the converted value
    domain: str = ""


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_FIT_FIELDS = [
    Field("m", _int, 2, "number of communities", lambda v: v >= 1, ">= 1"),
    Field("dynamics", _choice("attas", "rw"), "attas", "vertex-state dynamics"),
    Field("iterations", _int, 50_000, "total gradient steps per restart", _nonneg, ">= 0"),
    Field("k", _int, 10, "gradient steps per conjugate cycle", _nonneg, ">= 0"),
    Field("learning_rate", _float, 0.01, "ADAM learning rate", _nonneg, ">= 0"),
    Field("restarts", _int, 5, "random restarts", lambda v: v >= 1, ">= 1"),
    Field("mc_samples", _int, 1, "Monte-Carlo samples per gradient step", lambda v: v >= 1, ">= 1"),
    Field("tol", _opt_float, None, "early-stop tolerance on the smoothed ELBO"),
    Field("patience", _int, 100, "cycles without improvement before stopping", lambda v: v >= 1, ">= 1"),
    Field("warmup_cycles", _int, 100, "cycles with the community chain held fixed", _nonneg, ">= 0"),
]

FIELDS = {
    "simulate": [
        Field("m", _int, 2, "number of communities", lambda v: v >= 1, ">= 1"),
        Field("t", _int, 3, "number of slices", lambda v: v >= 1, ">= 1"),
        Field("n", _int_list, [200], "edges per slice (one value or one per slice)",
              lambda v: len(v) > 0 and min(v) >= 1, "positive integers"),
        Field("dynamics", _choice("attas", "rw"), "attas", "vertex-state dynamics"),
        Field("mu_lambda", _float, math.log(100.0), "mean of the initial birth log-rate"),
        Field("sigma_lambda", _float, 0.5, "birth log-rate noise std", _positive, "> 0"),
        Field("a_lambda", _float, 0.5, "birth log-rate autoregression"),
        Field("vertex_scale", _float, 1.0, "vertex-state noise std", _nonneg, ">= 0"),
        Field("vertex_corr", _float, 0.0, "correlation between state dimensions",
              lambda v: -1 < v < 1, "in (-1, 1)"),
        Field("community_scale", _float, 0.3, "community-chain noise std", _nonneg, ">= 0"),
        Field("community_ar", _float, 0.9, "community-chain autoregression"),
        Field("params", _text, "", "JSON file of generative parameters (overrides the above)"),
        Field("collapse", _bool, False, "also write the collapsed network and labels"),
    ],
    "sparsity": [
        Field("sigma", _float_list, [4.0, 5.0, 10.0], "state std(s), comma separated",
              lambda v: len(v) > 0 and min(v) > 0, "positive reals"),
        Field("rate", _float, 1e5, "pool rate", _positive, "> 0"),
        Field("max_edges", _int, 10_000, "largest edge checkpoint", lambda v: v >= 100, ">= 100"),
        Field("seeds", _int_list, [1, 2, 3], "simulation seeds, comma separated", lambda v: len(v) > 0,
              "at least one seed"),
    ],
    "fit": [
        Field("input", _text, "", "temporal edge list", lambda v: bool(v), "a path"),
        Field("sep", _text, "", "field separator (default: whitespace)"),
        *_FIT_FIELDS,
        Field("truth", _text, "", "optional t,u,v,label CSV of true edge labels"),
    ],
    "predict": [
        Field("checkpoint", _text, "", "checkpoint written by fit", lambda v: bool(v), "a path"),
        Field("pairs", _text, "", "optional file of 'u v [label]' lines; default all distinct pairs"),
        Field("samples", _int, 500, "Monte-Carlo samples", lambda v: v >= 1, ">= 1"),
    ],
    "evaluate": [
        Field("input", _text, "", "temporal edge list", lambda v: bool(v), "a path"),
        Field("sep", _text, "", "field separator (default: whitespace)"),
        *_FIT_FIELDS,
        Field("folds", _int, 3, "cross-validation folds", lambda v: v >= 2, ">= 2"),
        Field("samples", _int, 500, "Monte-Carlo samples for prediction", lambda v: v >= 1, ">= 1"),
        Field("alpha", _float, 1.0, "Dirichlet-multinomial smoothing", _positive, "> 0"),
    ],
}


def _kebab(name: str) -> str:
    return name.replace("_", "-")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value file")
    common.add_argument("--seed", default=_SENTINEL, help="root random seed (default 0)")
    common.add_argument("--out", default=_SENTINEL, help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="dynex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, fields in FIELDS.items():
        p = sub.add_parser(cmd, parents=[common])
        for f in fields:
            p.add_argument(f"--{_kebab(f.name)}", dest=f.name, default=_SENTINEL, help=f.help)
    return parser


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DomainError(f"cannot read config {path}: {e.strerror}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; convert and validate every field."""
    fields = {f.name: f for f in FIELDS[command]}
    raw = read_config(args.config) if args.config else {}
    if raw.get("command", command) != command:
        raise DomainError(f"config is for '{raw['command']}', not '{command}'")
    raw.pop("command", None)
    known = set(fields) | {"seed", "out"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise DomainError(f"unknown config key '{unknown[0]}'")
    for name in known:
        v = getattr(args, name, _SENTINEL)
        if v is not _SENTINEL:
            raw[name] = v
    cfg = {"command": command}
    try:
        cfg["seed"] = _int(raw.get("seed", 0))
    except ValueError:
        raise DomainError(f"invalid value for seed: {raw['seed']!r}") from None
    if cfg["seed"] < 0:
        raise DomainError("invalid value for seed: must be >= 0")
    cfg["out"] = str(raw.get("out", "."))
    for name, f in fields.items():
        value = raw.get(name, f.default)
        if value is not f.default:
            try:
                value = f.conv(value)
            except ValueError as e:
                raise DomainError(f"invalid value for {_kebab(name)}: {raw[name]!r} ({e})") from None
        if f.check is not None and not f.check(value):
            raise DomainError(f"invalid value for {_kebab(name)}: {value!r} (must be {f.domain})")
        cfg[name] = value
    return cfg


def _format_value(v) -> str:
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def write_config(cfg: dict, out: Path) -> None:
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items()) if k != "out"]
    (out / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- subcommands -----------------------------------------------------------


def _sim_params(cfg):
    from .generative import ModelParams

    if cfg["params"]:
        try:
            d = json.loads(Path(cfg["params"]).read_text(encoding="utf-8"))
        except OSError as e:
            raise DomainError(f"cannot read params {cfg['params']}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise DomainError(f"params {cfg['params']} is not valid JSON: {e.msg}") from None
        d.setdefault("dynamics", cfg["dynamics"])
        return ModelParams.from_dict(d)
    M, r = cfg["m"], cfg["vertex_corr"]
    if M > 1 and r <= -1.0 / (M - 1):
        raise DomainError(f"invalid value for vertex-corr: {r} (must exceed {-1.0 / (M - 1):.4g} for M={M})")
    cov = cfg["vertex_scale"] ** 2 * ((1 - r) * np.eye(M) + r * np.ones((M, M)))
    B = np.linalg.cholesky(cov) if cfg["vertex_scale"] > 0 else np.zeros((M, M))
    return ModelParams(
        M=M,
        mu_lambda=cfg["mu_lambda"],
        sigma_lambda=cfg["sigma_lambda"],
        a_lambda=cfg["a_lambda"],
        mu=np.zeros(M),
        B_chol=B,
        mu_k=np.zeros(M),
        A_k=cfg["community_ar"] * np.eye(M),
        Bk_chol=cfg["community_scale"] * np.eye(M),
        dynamics=cfg["dynamics"],
    )


def cmd_simulate(cfg, out: Path, rng) -> None:
    from .generative import simulate
    from .temporal_graph import collapse_parallel, write_temporal_edgelist

    T = cfg["t"]
    N = cfg["n"] * T if len(cfg["n"]) == 1 else cfg["n"]
    if len(N) != T:
        raise DomainError(f"invalid value for n: need 1 or {T} counts, got {len(N)}")
    params = _sim_params(cfg)
    net, rec = simulate(params, T, N, rng)
    write_temporal_edgelist(net, out / "edges.txt")
    _write_edge_labels(out / "labels.csv", net, rec.c)
    rec.write_csv(out / "latent", labels=net.labels)
    (out / "params.json").write_text(json.dumps(params.to_dict(), indent=2) + "\n", encoding="utf-8")
    if cfg["collapse"]:
        cnet, clab = collapse_parallel(net, rec.c, seed=cfg["seed"])
        write_temporal_edgelist(cnet, out / "collapsed_edges.txt")
        _write_edge_labels(out / "collapsed_labels.csv", cnet, clab)
    print(f"simulated {net.n_edges} edges over {net.n_vertices} vertices")


def _write_edge_labels(path, net, labels):
    """``t,u,v,label`` rows in the serialised edge order."""
    rows = []
    for t, (s, lab) in enumerate(zip(net.slices, labels), start=1):
        for a, b, c in zip(s.u.tolist(), s.v.tolist(), np.asarray(lab).tolist()):
            rows.append((t, a, b, int(c)))
    rows.sort()
    names = net.labels
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,u,v,label\n")
        for t, a, b, c in rows:
            fh.write(f"{t},{names[a]},{names[b]},{c}\n")


def cmd_sparsity(cfg, out: Path, rng) -> None:
    from .generative import default_checkpoints, sparsity_experiment, sparsity_slope

    checkpoints = default_checkpoints(cfg["max_edges"])
    with open(out / "slopes.csv", "w", encoding="utf-8") as fs:
        fs.write("sigma,slope\n")
        for sigma in cfg["sigma"]:
            rows = sparsity_experiment(sigma, cfg["rate"], checkpoints, cfg["seeds"])
            with open(out / f"sparsity_sigma{sigma:g}.csv", "w", encoding="utf-8") as fh:
                fh.write("seed,edges,vertices\n")
                for seed, e, v in rows:
                    fh.write(f"{seed},{e},{v}\n")
            slope = sparsity_slope(rows)
            fs.write(f"{sigma!r},{slope!r}\n")
            print(f"sigma={sigma:g}: slope {slope:.3f}")


def _fit_options(cfg, seed):
    from .inference import FitOptions

    return FitOptions(
        dynamics=cfg["dynamics"],
        iterations=cfg["iterations"],
        steps_per_cycle=cfg["k"],
        learning_rate=cfg["learning_rate"],
        restarts=cfg["restarts"],
        mc_samples=cfg["mc_samples"],
        tol=cfg["tol"],
        patience=cfg["patience"],
        warmup_cycles=cfg["warmup_cycles"],
        max_cycles=None if cfg["k"] else max(1, cfg["iterations"]),
        seed=seed,
    )


def _load_net(cfg):
    from .temporal_graph import load_temporal_edgelist

    return load_temporal_edgelist(cfg["input"], sep=cfg["sep"] or None)


def _read_truth(path, net):
    """Edge labels from a ``t,u,v,label`` CSV, aligned with ``net``'s edges."""
    from collections import defaultdict

    table = defaultdict(list)
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DomainError(f"cannot read truth {path}: {e.strerror}") from None
    for n, line in enumerate(lines[1:], start=2):
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise DomainError(f"truth line {n}: expected t,u,v,label")
        t, a, b, c = parts
        table[(int(t),) + tuple(sorted((a, b)))].append(int(c))
    out = []
    names = net.labels
    for t, s in enumerate(net.slices, start=1):
        for a, b in s.pairs():
            key = (t,) + tuple(sorted((names[a], names[b])))
            if not table.get(key):
                raise DomainError(f"truth has no label for edge {key}")
            out.append(table[key].pop(0))
    return np.asarray(out)


def cmd_fit(cfg, out: Path, rng) -> None:
    from .evaluation import map_communities, nmi, permutation_accuracy, write_communities_csv
    from .inference import fit, save_checkpoint

    net = _load_net(cfg)
    truth = _read_truth(cfg["truth"], net) if cfg["truth"] else None
    result = fit(net, cfg["m"], _fit_options(cfg, cfg["seed"]))
    save_checkpoint(out / "checkpoint.npz", result.state, result.params, net,
                    meta={"seed": cfg["seed"], "command": "fit"})
    result.trace.write_csv(out / "trace.csv")
    labels = map_communities(result.state)
    write_communities_csv(out / "communities.csv", net, labels)
    summary = {
        "restart_elbos": result.trace.restart_elbos,
        "best_restart": result.trace.best_restart,
        "final_elbo_smoothed": result.trace.rows[-1][2] if result.trace.rows else None,
        "skipped_steps": result.trace.skipped_steps,
    }
    if truth is not None:
        summary["nmi"] = nmi(labels, truth)
        summary["accuracy"] = permutation_accuracy(labels, truth)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    print(f"fitted {net.n_edges} edges; best smoothed ELBO {max(result.trace.restart_elbos):.6g}")
    if truth is not None:
        print(f"NMI {summary['nmi']:.4f}, accuracy {summary['accuracy']:.4f}")


def _read_pairs(path, net):
    pairs, labels = [], []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DomainError(f"cannot read pairs {path}: {e.strerror}") from None
    for n, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (2, 3):
            raise DomainError(f"pairs line {n}: expected 'u v [label]'")
        pairs.append((net.vertex_id(parts[0]), net.vertex_id(parts[1])))
        labels.append(int(parts[2]) if len(parts) == 3 else 0)
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2), np.asarray(labels)


def cmd_predict(cfg, out: Path, rng) -> None:
    from .evaluation import predict_edge_prob, write_scores_csv
    from .inference import load_checkpoint

    state, params, net, _ = load_checkpoint(cfg["checkpoint"])
    if cfg["pairs"]:
        pairs, labels = _read_pairs(cfg["pairs"], net)
    else:
        iu, iv = np.triu_indices(net.n_vertices, k=1)
        pairs = np.stack([iu, iv], 1)
        last = net.slice(net.T)
        seen = set(zip(last.u.tolist(), last.v.tolist()))
        labels = np.array([(a, b) in seen for a, b in pairs.tolist()], dtype=int)
    scores = predict_edge_prob(state, params, net, pairs, S=cfg["samples"], rng=rng)
    write_scores_csv(out / "scores.csv", net, pairs, scores, labels)
    print(f"scored {len(pairs)} pairs")


def cmd_evaluate(cfg, out: Path, rng) -> None:
    from .evaluation import EvalOptions, cross_validate, write_communities_csv, write_scores_csv

    net = _load_net(cfg)
    opts = EvalOptions(samples=cfg["samples"], alpha=cfg["alpha"], seed=cfg["seed"])
    report, _ = cross_validate(net, cfg["m"], cfg["folds"], _fit_options(cfg, cfg["seed"]), opts,
                                  seed=cfg["seed"])
    for f in report.folds:
        write_scores_csv(out / f"scores_fold{f.fold}.csv", f.train, f.pairs, f.scores["model"], f.is_positive)
        write_communities_csv(out / f"communities_fold{f.fold}.csv", f.train, f.communities)
    report.write_json(out / "report.json")
    for m in ("model", "dirichlet", "equiprobable"):
        print(f"{m}: mean AUC {report.mean_auc(m):.4f} (s.e. {report.stderr_auc(m):.4f})")


COMMANDS = {
    "simulate": cmd_simulate,
    "sparsity": cmd_sparsity,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args)
        out = Path(cfg["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DomainError(f"cannot create output directory {out}: {e.strerror}") from None
        write_config(cfg, out)
        rng = np.random.default_rng(cfg["seed"])
        COMMANDS[args.command](cfg, out, rng)
    except DomainError as e:
        print(f"error: {str(e).splitlines()[0]}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
