"""Downstream analyses on fitted topic models.

Basket labelling, calendar prevalence indices, customer-level topic
features and demographic prediction by L2-regularised logistic regression
with stratified cross-validation.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logsumexp, softmax
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold

from .inference import infer_mixtures

MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun",
          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

AGE_BANDS = ("18-29", "30-44", "45-59", "60+")
TASKS = {
    "age": ("age_band", AGE_BANDS),
    "region": ("region", ("england", "regional")),
    "gender": ("gender", ("f", "m")),
}
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


# -- basket labels and prevalence ----------------------------------------------

@dataclass
class BasketLabeling:
    labels: np.ndarray
    theta: np.ndarray
    dates: list
    customer_ids: list
    K: int


def label_baskets(model, corpus):
    """Label each basket with the argmax of its fold-in mixture (ties to the lower topic)."""
    theta, valid = infer_mixtures(model, corpus)
    if not valid.all():
        bad = corpus.baskets[int(np.flatnonzero(~valid)[0])].basket_id
        raise ValueError(f"basket {bad!r} has no in-vocabulary items")
    labels = np.argmax(theta, axis=1)
    return BasketLabeling(labels, theta, [b.date for b in corpus.baskets],
                          [b.customer_id for b in corpus.baskets], model.K)


@dataclass
class PrevalenceIndex:
    """Topic share of basket labels per calendar period, relative to the cross-topic mean.

    ``proportion`` and ``index`` are K x P arrays; columns of empty periods
    are NaN.
    """

    period_type: str
    periods: tuple
    proportion: np.ndarray
    index: np.ndarray
    counts: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["topic", "period", "proportion", "index"])
            K, P = self.index.shape
            for k in range(K):
                for p in range(P):
                    if self.counts[p] == 0:
                        writer.writerow([k, self.periods[p], "", ""])
                    else:
                        writer.writerow([k, self.periods[p], repr(float(self.proportion[k, p])),
                                         repr(float(self.index[k, p]))])


def prevalence_index(labeling, period="month"):
    """Per-period topic prevalence.

    ``prop(t, p)`` is the share of period-``p`` baskets labelled ``t``; the
    index divides it by the mean share over topics, which is ``1/K``, so
    1.0 means average prevalence. Months are pooled by calendar month.
    """
    if period == "month":
        names = MONTHS
        key = lambda d: d.month - 1  # noqa: E731
    elif period == "weekday":
        names = WEEKDAYS
        key = lambda d: d.weekday()  # noqa: E731
    else:
        raise ValueError(f"unknown period {period!r} (expected 'month' or 'weekday')")
    if any(d is None for d in labeling.dates):
        raise ValueError("every basket needs a date for prevalence analysis")
    K, P = labeling.K, len(names)
    table = np.zeros((K, P))
    cols = np.fromiter((key(d) for d in labeling.dates), dtype=np.int64, count=len(labeling.dates))
    np.add.at(table, (labeling.labels, cols), 1.0)
    counts = table.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prop = np.where(counts > 0, table / counts, np.nan)
    index = prop / prop.mean(axis=0, keepdims=True)
    return PrevalenceIndex(period, names, prop, index, counts.astype(np.int64))


# -- customer features ----------------------------------------------------------

@dataclass
class CustomerFeatures:
    customer_ids: list
    features: np.ndarray
    basket_counts: np.ndarray

    def __len__(self):
        return len(self.customer_ids)

    def row(self, customer_id):
        return self.features[self.customer_ids.index(customer_id)]


def customer_features(model, corpus, labeling=None):
    """Unweighted mean of basket mixtures per customer, customers sorted by id.

    Baskets without a customer id are ignored. ``labeling`` may be passed to
    reuse mixtures from :func:`label_baskets`.
    """
    if not corpus.has_customers():
        raise ValueError("corpus lacks customer identifiers")
    theta = labeling.theta if labeling is not None else label_baskets(model, corpus).theta
    owners = [b.customer_id for b in corpus.baskets]
    ids = sorted({c for c in owners if c is not None})
    pos = {c: i for i, c in enumerate(ids)}
    sums = np.zeros((len(ids), theta.shape[1]))
    counts = np.zeros(len(ids), dtype=np.int64)
    for d, c in enumerate(owners):
        if c is None:
            continue
        sums[pos[c]] += theta[d]
        counts[pos[c]] += 1
    return CustomerFeatures(ids, sums / counts[:, None], counts)


# -- logistic regression ------------------------------------------------------------

def logistic_objective(params, X, y, lam, n_classes):
    """Mean negative log-likelihood plus ``lam/2 * ||W||^2`` and its gradient.

    For two classes ``params`` is ``[w (K), b]`` and the model is a sigmoid
    on ``X @ w + b``; otherwise it is ``[W (C x K) row-major, b (C)]`` with
    a softmax. Intercepts are not penalised.
    """
    n, K = X.shape
    if n_classes == 2:
        w, b = params[:K], params[K]
        z = X @ w + b
        loss = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z)) + 0.5 * lam * w @ w
        r = (expit(z) - y) / n
        grad = np.concatenate([X.T @ r + lam * w, [r.sum()]])
        return loss, grad
    W = params[:n_classes * K].reshape(n_classes, K)
    b = params[n_classes * K:]
    Z = X @ W.T + b
    lse = logsumexp(Z, axis=1)
    loss = np.mean(lse - Z[np.arange(n), y]) + 0.5 * lam * np.sum(W * W)
    R = np.exp(Z - lse[:, None])
    R[np.arange(n), y] -= 1.0
    R /= n
    grad = np.concatenate([(R.T @ X + lam * W).ravel(), R.sum(axis=0)])
    return loss, grad


def fit_logistic(X, y, n_classes, lam, gtol=1e-6):
    """Minimise :func:`logistic_objective` by L-BFGS; returns the flat parameter vector."""
    K = X.shape[1]
    size = K + 1 if n_classes == 2 else n_classes * (K + 1)
    res = minimize(logistic_objective, np.zeros(size), args=(X, y, lam, n_classes),
                   jac=True, method="L-BFGS-B",
                   options={"gtol": gtol * 1e-2, "ftol": 0.0, "maxiter": 10_000})
    return res.x


def logistic_proba(params, X, n_classes):
    K = X.shape[1]
    if n_classes == 2:
        p1 = expit(X @ params[:K] + params[K])
        return np.column_stack([1.0 - p1, p1])
    W = params[:n_classes * K].reshape(n_classes, K)
    return softmax(X @ W.T + params[n_classes * K:], axis=1)


# -- demographic models --------------------------------------------------------------

def read_demographics(path, task):
    """Labels for one task from a demographics CSV, unlabelled rows dropped.

    Reads the task's column (``age_band``, ``region`` or ``gender``), or a
    generic ``group_label`` column when the task column is absent.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r} (expected one of {sorted(TASKS)})")
    column = TASKS[task][0]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "customer_id" not in fields:
            raise ValueError(f"{path}: missing customer_id column")
        if column not in fields:
            if "group_label" not in fields:
                raise ValueError(f"{path}: missing {column} column")
            column = "group_label"
        out = {}
        for row in reader:
            value = (row.get(column) or "").strip()
            if value:
                out[row["customer_id"].strip()] = value
    return out


@dataclass
class DemographicModel:
    task: str
    classes: tuple
    params: np.ndarray
    lambda_reg: float
    cv: dict = field(default_factory=dict)

    @property
    def n_features(self):
        n = len(self.classes)
        return self.params.size - 1 if n == 2 else self.params.size // n - 1

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.cv, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _metric_name(task):
    return "accuracy" if task == "age" else "auc"


def fit_demographic_model(features, labels, task, grid=DEFAULT_GRID, folds=5, seed=0):
    """Grid-search the L2 strength by stratified k-fold CV and refit on all customers.

    Age is scored by accuracy, region and gender by AUC (accuracy is
    reported too). Each fold's baseline is the share of its most frequent
    class. Ties in the selection metric go to the smaller ``lambda``.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r} (expected one of {sorted(TASKS)})")
    allowed = TASKS[task][1]
    rows, ys = [], []
    for i, cid in enumerate(features.customer_ids):
        lab = labels.get(cid)
        if lab is None:
            continue
        rows.append(i)
        ys.append(lab)
    unknown = sorted(set(ys) - set(allowed))
    if unknown:
        raise ValueError(f"labels {unknown} are not valid for task {task!r} (allowed {allowed})")
    classes = tuple(c for c in allowed if c in set(ys))
    if len(classes) < 2:
        raise ValueError(f"task {task!r} needs at least two classes, found {classes}")
    if task != "age" and len(classes) != 2:
        raise ValueError(f"task {task!r} is binary")
    X = features.features[rows]
    y = np.array([classes.index(v) for v in ys], dtype=np.int64)
    per_class = np.bincount(y, minlength=len(classes))
    if per_class.min() < folds:
        diag = ", ".join(f"{c}={n}" for c, n in zip(classes, per_class))
        raise ValueError(f"stratification impossible with {folds} folds: class counts {diag}")
    grid = sorted(set(float(g) for g in grid))
    if not grid or min(grid) < 0:
        raise ValueError("grid must hold nonnegative regularisation strengths")

    C = len(classes)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    splits = list(splitter.split(X, y))
    for f, (_, test) in enumerate(splits):
        fold_of[test] = f
    baselines = []
    for _, test in splits:
        counts = np.bincount(y[test], minlength=C)
        if np.any(counts == 0):
            raise ValueError("a class is absent from a test fold; use fewer folds")
        baselines.append(counts.max() / test.size)

    metric = _metric_name(task)
    results = []
    for lam in grid:
        fold_rows = []
        for f, (train, test) in enumerate(splits):
            params = fit_logistic(X[train], y[train], C, lam)
            proba = logistic_proba(params, X[test], C)
            pred = np.argmax(proba, axis=1)
            row = {"fold": f, "n_test": int(test.size),
                   "accuracy": float(np.mean(pred == y[test])),
                   "baseline": float(baselines[f])}
            if C == 2:
                row["auc"] = float(roc_auc_score(y[test], proba[:, 1]))
            fold_rows.append(row)
        means = {m: float(np.mean([r[m] for r in fold_rows]))
                 for m in ("accuracy", "auc") if m in fold_rows[0]}
        results.append({"lambda": lam, "folds": fold_rows, "mean": means})
    best = max(results, key=lambda r: (r["mean"][metric], -r["lambda"]))
    params = fit_logistic(X, y, C, best["lambda"])
    report = {
        "task": task,
        "metric": metric,
        "classes": list(classes),
        "n_customers": int(len(y)),
        "folds": folds,
        "seed": seed,
        "grid": grid,
        "chosen_lambda": best["lambda"],
        "cv": best["folds"],
        "mean": best["mean"],
        "baseline": {"per_fold": [float(b) for b in baselines],
                     "mean": float(np.mean(baselines))},
        "grid_results": [{"lambda": r["lambda"], "mean": r["mean"]} for r in results],
        "fold_assignment": {features.customer_ids[i]: int(fold_of[j])
                            for j, i in enumerate(rows)},
    }
    return DemographicModel(task, classes, params, best["lambda"], report)


@dataclass
class DemographicPrediction:
    customer_ids: list
    labels: list
    proba: np.ndarray


def predict_demographics(model, features):
    """Most probable class per customer (ties to the first class) and class probabilities."""
    if features.features.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension {features.features.shape[1]} does not match the model's {model.n_features}")
    proba = logistic_proba(model.params, features.features, len(model.classes))
    pred = np.argmax(proba, axis=1)
    return DemographicPrediction(list(features.customer_ids),
                                 [model.classes[i] for i in pred], proba)
