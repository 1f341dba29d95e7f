"""Held-out link prediction, ROC/AUC, community labels and NMI."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .errors import DomainError
from .inference import FitOptions, chain_marginals, fit
from .inference.state import VariationalState
from .generative import ModelParams
from .temporal_graph import TemporalNetwork, holdout_split

__all__ = [
    "predict_edge_prob",
    "roc_auc",
    "map_communities",
    "nmi",
    "permutation_accuracy",
    "dirichlet_multinomial_score",
    "equiprobable_score",
    "EvalOptions",
    "FoldReport",
    "EvalReport",
    "negative_pairs",
    "evaluate_fold",
    "cross_validate",
    "write_scores_csv",
    "write_communities_csv",
]

METHODS = ("model", "dirichlet", "equiprobable")


def _pairs_array(pairs, n_vertices: int) -> np.ndarray:
    p = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    p = p.reshape(-1, 2)
    if p.size and (p.min() < 0 or p.max() >= n_vertices):
        bad = p[(p < 0).any(1) | (p >= n_vertices).any(1)][0]
        raise DomainError(f"unknown vertex in pair {tuple(bad.tolist())}")
    return p


def _softmax(x, axis=-1):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def predict_edge_prob(state: VariationalState, params: ModelParams, net: TemporalNetwork, pairs,
                      S: int = 500, rng=None, chunk: int = 2_000_000) -> np.ndarray:
    """Monte-Carlo posterior predictive probability of each pair at slice T.

    Each of the ``S`` draws samples the slice-T community and vertex states
    from their variational marginals and scores ``(i, j)`` as
    ``sum_m w_m p_m(i) p_m(j)``, doubled when ``i != j``; ``p_m`` is the
    softmax over all fitted vertices.
    """
    if S < 1:
        raise DomainError(f"S must be >= 1, got {S}")
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = np.sort(_pairs_array(pairs, net.n_vertices), axis=1)  # exact symmetry
    mh, vh, _ = chain_marginals(state.h_q)
    mk, vk, _ = chain_marginals(state.k_q)
    mh, vh = mh[:, -1], vh[:, -1]  # [V, M]
    mk, vk = mk[-1], vk[-1]  # [M]
    V, M = mh.shape
    k = mk + np.sqrt(vk) * rng.standard_normal((S, M))
    h = mh + np.sqrt(vh) * rng.standard_normal((S, V, M))
    w = _softmax(k, axis=1)  # [S, M]
    p = _softmax(h, axis=1)  # [S, V, M], normalised over vertices
    out = np.empty(len(pairs))
    step = max(1, chunk // (S * M))
    for lo in range(0, len(pairs), step):
        i, j = pairs[lo : lo + step, 0], pairs[lo : lo + step, 1]
        out[lo : lo + step] = np.einsum("sm,spm,spm->p", w, p[:, i], p[:, j]) / S
    out *= np.where(pairs[:, 0] != pairs[:, 1], 2.0, 1.0)
    return out


def roc_auc(scores, labels):
    """ROC curve over the distinct score thresholds and the rank-statistic AUC.

    Tied scores count one half.

    Returns:
        ``((fpr, tpr), auc)``; both curve arrays start at 0 and end at 1.
    """
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise DomainError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("roc_auc needs both positive and negative items")
    ranks = rankdata(scores)  # average ranks for ties
    auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    return (fpr, tpr), float(auc)


def map_communities(state: VariationalState) -> np.ndarray:
    """Most probable community of every edge, 1-based (ties to the lower index)."""
    return np.argmax(state.pi, axis=1) + 1


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """Normalised mutual information ``I(a; b) / sqrt(H(a) H(b))``.

    Two single-cluster labelings score 1; otherwise a zero entropy on either
    side scores 0.
    """
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.size != b.size:
        raise DomainError(f"label sequences differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise DomainError("nmi needs at least one item")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    joint = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(joint, (ia, ib), 1.0)
    ha, hb = _entropy(joint.sum(1)), _entropy(joint.sum(0))
    if ha == 0.0 or hb == 0.0:
        return 1.0 if joint.shape == (1, 1) else 0.0
    mi = ha + hb - _entropy(joint.reshape(-1))
    return float(min(max(mi / math.sqrt(ha * hb), 0.0), 1.0))


def permutation_accuracy(pred, truth) -> float:
    """Fraction of agreeing labels under the best one-to-one relabelling."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.size != truth.size or pred.size == 0:
        raise DomainError("label sequences must be non-empty and of equal length")
    _, ip = np.unique(pred, return_inverse=True)
    _, it = np.unique(truth, return_inverse=True)
    conf = np.zeros((ip.max() + 1, it.max() + 1))
    np.add.at(conf, (ip, it), 1.0)
    r, c = linear_sum_assignment(-conf)
    return float(conf[r, c].sum() / pred.size)


def dirichlet_multinomial_score(train: TemporalNetwork, pairs, alpha: float = 1.0) -> np.ndarray:
    """Posterior predictive of a symmetric Dirichlet-multinomial over pairs.

    ``(n_ij + alpha) / (N + alpha P)`` with ``n_ij`` the training count of the
    pair over all slices, ``N`` the training edge total and ``P`` the number
    of distinct unordered pairs over the final vertex set.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    V = train.n_vertices
    pairs = _pairs_array(pairs, V)
    P = V * (V - 1) / 2.0
    _, u, v = train.edge_arrays()
    # append a sentinel key so searchsorted never runs off the end
    keys, counts = np.unique(u * V + v, return_counts=True)
    keys, counts = np.r_[keys, -1], np.r_[counts, 0]
    q = pairs.min(1) * V + pairs.max(1)
    pos = np.searchsorted(keys[:-1], q)
    n = np.where(keys[pos] == q, counts[pos], 0)
    return (n + alpha) / (train.n_edges + alpha * P)


def equiprobable_score(vertex_count: int) -> float:
    """Uniform probability ``1 / (N (N - 1))`` of an edge between two vertices."""
    if vertex_count < 2:
        raise DomainError(f"vertex_count must be >= 2, got {vertex_count}")
    return 1.0 / (vertex_count * (vertex_count - 1))


@dataclass
class EvalOptions:
    samples: int = 500
    alpha: float = 1.0
    methods: tuple = METHODS
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise DomainError(f"samples must be >= 1, got {self.samples}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise DomainError(f"unknown scoring methods: {sorted(unknown)}")


@dataclass
class FoldReport:
    fold: int
    n_positive: int
    n_negative: int
    auc: dict = field(default_factory=dict)
    roc: dict = field(default_factory=dict)  # method -> (fpr, tpr)
    pairs: np.ndarray | None = None
    is_positive: np.ndarray | None = None
    scores: dict = field(default_factory=dict)
    communities: np.ndarray | None = None
    nmi: float | None = None
    train: TemporalNetwork | None = None


@dataclass
class EvalReport:
    folds: list = field(default_factory=list)

    def aucs(self, method: str) -> np.ndarray:
        return np.array([f.auc[method] for f in self.folds if method in f.auc])

    def mean_auc(self, method: str) -> float:
        return float(self.aucs(method).mean())

    def stderr_auc(self, method: str) -> float:
        a = self.aucs(method)
        return float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0

    def to_dict(self) -> dict:
        methods = sorted({m for f in self.folds for m in f.auc})
        out = {
            "folds": [
                {
                    "fold": f.fold,
                    "n_positive": f.n_positive,
                    "n_negative": f.n_negative,
                    "auc": f.auc,
                    "roc": {m: {"fpr": r[0].tolist(), "tpr": r[1].tolist()} for m, r in f.roc.items()},
                    **({"nmi": f.nmi} if f.nmi is not None else {}),
                }
                for f in self.folds
            ],
            "mean_auc": {m: self.mean_auc(m) for m in methods},
            "stderr_auc": {m: self.stderr_auc(m) for m in methods},
        }
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def negative_pairs(train: TemporalNetwork, heldout) -> np.ndarray:
    """Distinct pairs over the final vertex set that are neither slice-T
    training edges nor held out."""
    V = train.n_vertices
    iu, iv = np.triu_indices(V, k=1)
    last = train.slice(train.T)
    exclude = {(int(a), int(b)) for a, b in zip(last.u, last.v)} | {tuple(p) for p in heldout}
    ex = np.array([a * V + b for a, b in exclude if a != b], dtype=np.int64)
    keep = ~np.isin(iu * V + iv, ex)
    return np.stack([iu[keep], iv[keep]], 1)


def evaluate_fold(train: TemporalNetwork, heldout, fitted=None, options: EvalOptions | None = None,
                  fold: int = 0) -> FoldReport:
    """Score held-out positives against the negative pairs of one fold.

    ``fitted`` is a `FitResult` or ``(state, params)`` pair on ``train``; it
    may be None when only the baselines are requested.
    """
    options = options or EvalOptions()
    pos = np.array(sorted(heldout), dtype=np.int64).reshape(-1, 2)
    neg = negative_pairs(train, heldout)
    if len(neg) == 0:
        raise DomainError("the negative pair set is empty")
    if len(pos) == 0:
        raise DomainError("the held-out set is empty")
    pairs = np.concatenate([pos, neg])
    y = np.r_[np.ones(len(pos), bool), np.zeros(len(neg), bool)]
    rep = FoldReport(fold, len(pos), len(neg), pairs=pairs, is_positive=y, train=train)
    for method in options.methods:
        if method == "model":
            if fitted is None:
                raise DomainError("model scoring needs a fitted state")
            state, params = fitted[0], fitted[1]
            rng = np.random.default_rng(options.seed)
            s = predict_edge_prob(state, params, train, pairs, S=options.samples, rng=rng)
            rep.communities = map_communities(state)
        elif method == "dirichlet":
            s = dirichlet_multinomial_score(train, pairs, options.alpha)
        else:
            s = np.full(len(pairs), equiprobable_score(train.vertex_count_at(train.T)))
        rep.scores[method] = s
        rep.roc[method], rep.auc[method] = roc_auc(s, y)
    return rep


def cross_validate(net: TemporalNetwork, M: int, folds: int = 3, fit_options: FitOptions | None = None,
                   options: EvalOptions | None = None, seed: int = 0):
    """Hold out each part of the last slice in turn, fit, and score it.

    Returns:
        ``(report, fits)`` with one `FitResult` per fold (None entries when
        the model method is not requested).
    """
    options = options or EvalOptions()
    fit_options = fit_options or FitOptions()
    report = EvalReport()
    fits = []
    for f, (train, held) in enumerate(holdout_split(net, folds, seed)):
        fitted = fit(train, M, fit_options) if "model" in options.methods else None
        fits.append(fitted)
        report.folds.append(evaluate_fold(train, held, fitted, options, fold=f + 1))
    return report, fits


def write_scores_csv(path, net: TemporalNetwork, pairs, scores, is_positive) -> None:
    lab = net.labels
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "score", "label"])
        for (a, b), s, y in zip(np.asarray(pairs).tolist(), np.asarray(scores).tolist(), np.asarray(is_positive).tolist()):
            w.writerow([lab[a], lab[b], repr(float(s)), int(y)])


def write_communities_csv(path, net: TemporalNetwork, labels) -> None:
    lab = net.labels
    labels = np.asarray(labels)
    offsets = net.slice_offsets()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "u", "v", "label"])
        for t, s in enumerate(net.slices, start=1):
            for i, (a, b) in enumerate(s.pairs()):
                w.writerow([t, i + 1, lab[a], lab[b], int(labels[offsets[t - 1] + i])])
