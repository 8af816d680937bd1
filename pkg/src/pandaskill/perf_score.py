"""Per-role win-probability models and the PScore percentile transform."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .features import FEATURE_NAMES, SIGN_CONSTRAINTS, FeatureTable
from .ingest import ROLES

logger = logging.getLogger(__name__)

MODEL_FORMAT = "pandaskill.win_model"
MODEL_VERSION = 1
PSCORE_HEADER = "# pandaskill-pscores v1"


class FitError(ValueError):
    def __init__(self, message: str, role: str | None = None, fold: int | None = None):
        self.role = role
        self.fold = fold
        where = []
        if role is not None:
            where.append(f"role {role}")
        if fold is not None:
            where.append(f"fold {fold}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


# --------------------------------------------------------------------------
# standardizer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[str, ...] = ()
    input_names: tuple[str, ...] = FEATURE_NAMES  # column layout seen at fit time

    def apply(self, X: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
        """Select the retained columns of ``X`` (laid out as ``names``) and scale them."""
        X = np.asarray(X, dtype=np.float64)
        index = {n: i for i, n in enumerate(self.input_names if names is None else names)}
        cols = [index[n] for n in self.feature_names]
        return (X[..., cols] - self.mean) / self.std


def fit_standardizer(X: np.ndarray, names: Sequence[str] = FEATURE_NAMES) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 rows to standardize")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    dropped = tuple(n for n, k in zip(names, keep) if not k)
    if dropped:
        logger.warning("dropping zero-variance features: %s", ", ".join(dropped))
    return Standardizer(
        feature_names=tuple(n for n, k in zip(names, keep) if k),
        mean=mean[keep],
        std=std[keep],
        dropped=dropped,
        input_names=tuple(names),
    )


def apply_standardizer(std: Standardizer, X: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
    return std.apply(X, names)


# --------------------------------------------------------------------------
# win-probability model
# --------------------------------------------------------------------------

class WinProbabilityModel(Protocol):
    """Anything that maps raw feature rows to a win probability.

    PScore only needs ``predict_proba``; a boosted-tree backend can plug in here.
    """

    role: str

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FitConfig:
    l2: float = 1e-4
    max_iter: int = 10_000
    tol: float = 1e-8
    min_rows: int = 50


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class LogisticWinModel:
    role: str
    weights: np.ndarray
    bias: float
    sign_constraints: tuple[int, ...]
    standardizer: Standardizer
    train_mean: np.ndarray  # mean of the standardized training columns
    converged: bool = True
    n_iter: int = 0
    loss: float = float("nan")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.standardizer.feature_names

    def logit(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.apply(X) @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logit(X))

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "sign_constraints": list(self.sign_constraints),
            "standardizer": {
                "mean": self.standardizer.mean.tolist(),
                "std": self.standardizer.std.tolist(),
                "dropped": list(self.standardizer.dropped),
                "input_names": list(self.standardizer.input_names),
            },
            "train_mean": self.train_mean.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LogisticWinModel":
        s = d["standardizer"]
        return cls(
            role=d["role"],
            weights=np.array(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            sign_constraints=tuple(int(v) for v in d["sign_constraints"]),
            standardizer=Standardizer(
                tuple(d["feature_names"]),
                np.array(s["mean"], dtype=np.float64),
                np.array(s["std"], dtype=np.float64),
                tuple(s["dropped"]),
                tuple(s.get("input_names", FEATURE_NAMES)),
            ),
            train_mean=np.array(d["train_mean"], dtype=np.float64),
            converged=bool(d["converged"]),
            n_iter=int(d["n_iter"]),
            loss=float(d["loss"]),
        )


def fit_win_model(
    role: str,
    X: np.ndarray,
    y: np.ndarray,
    sign_constraints: Sequence[int] = SIGN_CONSTRAINTS,
    config: FitConfig = FitConfig(),
    names: Sequence[str] = FEATURE_NAMES,
) -> LogisticWinModel:
    """Fit an L2-regularized logistic model by projected gradient descent.

    Every step clamps weights that leave their allowed half-line to 0, so the
    returned weights always respect ``sign_constraints`` (+1, -1, or 0 for free).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < config.min_rows:
        raise FitError(f"need at least {config.min_rows} rows, got {X.shape[0]}", role)
    if not np.all((y == 0) | (y == 1)):
        raise FitError("labels must be 0/1", role)
    if y.min() == y.max():
        raise FitError("all labels belong to one class", role)
    std = fit_standardizer(X, names)
    Z = std.apply(X, names)
    signs = np.array([sign_constraints[list(names).index(n)] for n in std.feature_names], dtype=np.int64)
    n, d = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    lipschitz = 0.25 * float(np.linalg.eigvalsh(A.T @ A / n)[-1]) + config.l2
    w, b, loss, n_iter, converged = kernels.logistic_pgd(
        np.ascontiguousarray(Z), y, signs, np.zeros(d), 0.0,
        config.l2, 1.0 / lipschitz, config.max_iter, config.tol,
    )
    if not converged:
        logger.warning("role %s: no convergence after %d iterations", role, n_iter)
    return LogisticWinModel(
        role=role,
        weights=np.asarray(w, dtype=np.float64),
        bias=float(b),
        sign_constraints=tuple(int(s) for s in signs),
        standardizer=std,
        train_mean=Z.mean(axis=0),
        converged=bool(converged),
        n_iter=int(n_iter),
        loss=float(loss),
    )


def predict_win_prob(model: LogisticWinModel, row: Mapping[str, float]) -> float:
    missing = [n for n in model.feature_names if n not in row]
    if missing:
        raise KeyError(f"row is missing feature(s): {', '.join(missing)}")
    x = np.array([row[n] for n in model.feature_names], dtype=np.float64)
    return float(_sigmoid(model.standardizer.apply(x, model.feature_names) @ model.weights + model.bias))


def attribute(model: LogisticWinModel, row: Mapping[str, float]) -> list[tuple[str, float]]:
    """Exact linear Shapley contributions of each feature to the logit.

    Contributions are centred on the training mean, so they sum to the row's
    logit minus the mean training logit. Sorted by magnitude, largest first.
    """
    x = np.array([row[n] for n in model.feature_names], dtype=np.float64)
    z = model.standardizer.apply(x, model.feature_names)
    contrib = model.weights * (z - model.train_mean)
    pairs = list(zip(model.feature_names, contrib.tolist()))
    return sorted(pairs, key=lambda p: -abs(p[1]))


# --------------------------------------------------------------------------
# percentile transform
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PercentileTransform:
    values: np.ndarray  # sorted training probabilities

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("percentile transform needs at least one value")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be sorted ascending")
        object.__setattr__(self, "values", v)
        # midpoint rank of each distinct value; tied blocks share the block midpoint
        u, first, counts = np.unique(v, return_index=True, return_counts=True)
        object.__setattr__(self, "_knots", u)
        object.__setattr__(self, "_ranks", (first + 0.5 * counts) / v.size)

    def __call__(self, prob):
        return pscore(self, prob)


def fit_percentile_transform(train_probs) -> PercentileTransform:
    return PercentileTransform(np.sort(np.asarray(train_probs, dtype=np.float64).ravel()))


def pscore(transform: PercentileTransform, prob):
    """Map probabilities to [0, 100] through the training ECDF (midpoint ranks).

    Linear interpolation between adjacent sorted training values; 0 below the
    training minimum and 100 above the maximum.
    """
    p = np.asarray(prob, dtype=np.float64)
    knots, ranks = transform._knots, transform._ranks
    out = 100.0 * np.interp(p, knots, ranks)
    out = np.where(p < knots[0], 0.0, out)
    out = np.where(p > knots[-1], 100.0, out)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PScoreRecord:
    game_id: str
    player_id: str
    role: str
    win_prob: float
    pscore: float
    fold_index: int


def fold_of(game_id: str, seed: int, k: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{game_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % k


@dataclass
class ModelSet:
    """One fitted model and transform per (role, fold)."""

    k: int
    seed: int
    models: dict = field(default_factory=dict)       # (role, fold) -> LogisticWinModel
    transforms: dict = field(default_factory=dict)   # (role, fold) -> PercentileTransform
    pooled: bool = False

    def score(self, table: FeatureTable) -> list[PScoreRecord]:
        probs = np.empty(len(table))
        scores = np.empty(len(table))
        folds = np.array([fold_of(g, self.seed, self.k) for g in table.game_id], dtype=np.int64)
        roles = np.array(table.role)
        for (role, fold), model in self.models.items():
            idx = np.flatnonzero((roles == role) & (folds == fold))
            if idx.size == 0:
                continue
            probs[idx] = model.predict_proba(table.X[idx])
            scores[idx] = pscore(self.transforms[(role, fold)], probs[idx])
        known = {r for r, _ in self.models}
        for r in set(table.role) - known:
            raise KeyError(f"no model for role {r!r}")
        return [
            PScoreRecord(table.game_id[i], table.player_id[i], table.role[i], float(probs[i]), float(scores[i]), int(folds[i]))
            for i in range(len(table))
        ]


def train_models(
    table: FeatureTable,
    k: int = 5,
    seed: int = 0,
    config: FitConfig = FitConfig(),
    pooled: bool = False,
) -> ModelSet:
    if k < 2:
        raise ValueError("k must be at least 2")
    folds = np.array([fold_of(g, seed, k) for g in table.game_id], dtype=np.int64)
    roles = np.array(table.role)
    out = ModelSet(k=k, seed=seed, pooled=pooled)
    for role in (r.value for r in ROLES):
        in_role = roles == role
        if not in_role.any():
            continue
        train_probs = {}
        for fold in range(k):
            train = in_role & (folds != fold)
            try:
                model = fit_win_model(role, table.X[train], table.win[train], SIGN_CONSTRAINTS, config)
            except FitError as exc:
                raise FitError(str(exc).split("] ", 1)[-1], role, fold) from None
            out.models[(role, fold)] = model
            train_probs[fold] = model.predict_proba(table.X[train])
        if pooled:
            shared = fit_percentile_transform(np.concatenate([train_probs[f] for f in range(k)]))
            for fold in range(k):
                out.transforms[(role, fold)] = shared
        else:
            for fold in range(k):
                out.transforms[(role, fold)] = fit_percentile_transform(train_probs[fold])
    return out


def cross_val_pscores(
    table: FeatureTable,
    k: int = 5,
    seed: int = 0,
    config: FitConfig = FitConfig(),
    pooled: bool = False,
) -> list[PScoreRecord]:
    """Out-of-fold PScores for every row; a game's rows always share a fold."""
    return train_models(table, k, seed, config, pooled).score(table)


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------

def expected_calibration_error(probs, labels, n_bins: int = 10) -> float:
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if probs.size == 0:
        raise ValueError("ECE of an empty sample is undefined")
    if probs.size != labels.size:
        raise ValueError("probs and labels differ in length")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    bins = np.minimum((probs * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    p_sum = np.bincount(bins, weights=probs, minlength=n_bins)
    y_sum = np.bincount(bins, weights=labels, minlength=n_bins)
    nz = counts > 0
    gaps = np.abs(p_sum[nz] - y_sum[nz]) / counts[nz]
    return float(np.sum(counts[nz] / probs.size * gaps))


def reliability_curve(probs, labels, n_bins: int = 10):
    """Per-bin (mean predicted, empirical rate, count); empty bins are NaN."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    bins = np.minimum((probs * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.bincount(bins, weights=probs, minlength=n_bins) / counts
        acc = np.bincount(bins, weights=labels, minlength=n_bins) / counts
    return conf, acc, counts


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_models(model_dir, models: ModelSet) -> list[str]:
    os.makedirs(model_dir, exist_ok=True)
    written = []
    for (role, fold), model in sorted(models.models.items()):
        path = os.path.join(model_dir, f"win_model_{role}_fold{fold}.json")
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "fold": fold,
            "model": model.to_dict(),
            "transform": models.transforms[(role, fold)].values.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        written.append(path)
    index = os.path.join(model_dir, "index.json")
    with open(index, "w", encoding="utf-8") as fh:
        json.dump(
            {"format": MODEL_FORMAT + ".index", "version": MODEL_VERSION, "k": models.k,
             "seed": models.seed, "pooled": models.pooled,
             "files": [os.path.basename(p) for p in written]},
            fh, indent=1,
        )
        fh.write("\n")
    return [index] + written


def load_models(model_dir) -> ModelSet:
    with open(os.path.join(model_dir, "index.json"), encoding="utf-8") as fh:
        index = json.load(fh)
    if index.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model index version {index.get('version')}")
    out = ModelSet(k=int(index["k"]), seed=int(index["seed"]), pooled=bool(index["pooled"]))
    for name in index["files"]:
        with open(os.path.join(model_dir, name), encoding="utf-8") as fh:
            doc = json.load(fh)
        model = LogisticWinModel.from_dict(doc["model"])
        out.models[(model.role, int(doc["fold"]))] = model
        out.transforms[(model.role, int(doc["fold"]))] = PercentileTransform(np.array(doc["transform"]))
    return out


def write_pscores(path, records: Sequence[PScoreRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PSCORE_HEADER + "\n")
        fh.write("game_id\tplayer_id\trole\twin_prob\tpscore\tfold_index\n")
        for r in records:
            fh.write(f"{r.game_id}\t{r.player_id}\t{r.role}\t{r.win_prob!r}\t{r.pscore!r}\t{r.fold_index}\n")


def read_pscores(path) -> list[PScoreRecord]:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != PSCORE_HEADER:
            raise ValueError(f"{path}: not a pscore file")
        fh.readline()
        out = []
        for line in fh:
            g, p, role, prob, score, fold = line.rstrip("\n").split("\t")
            out.append(PScoreRecord(g, p, role, float(prob), float(score), int(fold)))
    return out
