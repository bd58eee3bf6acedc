"""Linear probing of frozen model embeddings for sensitive labels.

The probe is a from-scratch logistic regression trained with full-batch
gradient descent. A linear probe is deliberately the weakest adversary: if
it can read a sensitive attribute out of the embeddings, anything stronger
can too, so positive findings are robust. Standardization statistics come
only from the probe's training split; evaluation reuses them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SensitiveCategory, Trajectory, contains_category
from .errors import DegenerateLabelsError
from .metrics import ScoredLabels, accuracy, auprc, auroc, threshold_metrics
from .models import EmbedRequest, ModelHandle, embed

PROBA_CLIP = 1e-12


@dataclass
class ProbeDataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be n x d with one label per row")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features contain NaN or inf")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be binary")


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: float
    l2: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    train_log: dict = field(default_factory=dict)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _loss(Xs, y, w, b, l2):
    p = _sigmoid(Xs @ w + b)
    p = np.clip(p, PROBA_CLIP, 1 - PROBA_CLIP)
    data = -float(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    return data + 0.5 * l2 * float(w @ w)


def train_probe(
    data: ProbeDataset,
    l2: float = 3e-3,
    lr: float = 1.0,
    epochs: int = 300,
    seed: int = 0,
) -> ProbeModel:
    """Fit logistic regression by full-batch gradient descent.

    The learning rate halves whenever a step would increase the regularized
    loss, so the training loss is nonincreasing across epochs. Deterministic
    for a fixed seed (the seed only perturbs the initial weights).
    """
    if data.y.min() == data.y.max():
        raise DegenerateLabelsError("probe training needs both classes present")
    mean = data.X.mean(axis=0)
    scale = data.X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xs = (data.X - mean) / scale
    n = len(data.y)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1e-6, Xs.shape[1])
    b = 0.0
    loss = _loss(Xs, data.y, w, b, l2)
    for _ in range(epochs):
        p = _sigmoid(Xs @ w + b)
        gw = Xs.T @ (p - data.y) / n + l2 * w
        gb = float(np.mean(p - data.y))
        while True:
            w_new = w - lr * gw
            b_new = b - lr * gb
            new_loss = _loss(Xs, data.y, w_new, b_new, l2)
            if new_loss <= loss or lr < 1e-12:
                break
            lr *= 0.5
        if new_loss > loss:
            break
        w, b, loss = w_new, b_new, new_loss
    return ProbeModel(
        weights=w,
        bias=b,
        l2=l2,
        feature_mean=mean,
        feature_scale=scale,
        train_log={"epochs": epochs, "final_loss": loss, "final_lr": lr},
    )


def predict_proba(m: ProbeModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(m.weights):
        raise ValueError(
            f"feature arity mismatch: model has {len(m.weights)}, got {X.shape}"
        )
    Xs = (X - m.feature_mean) / m.feature_scale
    p = _sigmoid(Xs @ m.weights + m.bias)
    return np.clip(p, PROBA_CLIP, 1 - PROBA_CLIP)


@dataclass
class SweepCell:
    attribute: str
    prefix_len: int
    fraction: object  # float, or the string "test"
    available: bool
    n_train: int = 0
    n_pos: int = 0
    n_total: int = 0
    auroc: float = float("nan")
    auprc: float = float("nan")
    f1: float = float("nan")
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    note: str = ""


def _embed_patients(model, patients, prefix_len):
    vecs = []
    for t in patients:
        plen = min(prefix_len, len(t.events))
        vecs.append(embed(model, EmbedRequest(tuple(t.events), plen)))
    return np.asarray(vecs)


def probe_sweep(
    model: ModelHandle,
    cohort: list[Trajectory],
    category: SensitiveCategory,
    prefix_lens=(10, 20, 50),
    fractions=("test", 0.001, 0.10, 0.20),
    seed: int = 0,
    l2: float = 3e-3,
    lr: float = 1.0,
    epochs: int = 300,
    repeats: int = 3,
    eval_share: float = 0.5,
) -> list[SweepCell]:
    """Probe metrics per (prefix_len, fraction) cell.

    Train-cohort patients are shuffled once (seeded) and split into a fixed
    evaluation set (``eval_share``) and a training pool. A float fraction f
    trains on round(f * |train cohort|) pool patients; each cell averages
    ``repeats`` staggered pool draws to damp subset luck. The "test" fraction
    trains on the test-tagged cohort instead; patients shorter than a prefix
    length are embedded over their full length.
    """
    train_pat = [t for t in cohort if t.cohort_tag == "train"]
    test_pat = [t for t in cohort if t.cohort_tag == "test"]
    if not train_pat:
        raise ValueError("cohort has no train-tagged patients")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_pat))
    n_eval = max(1, int(round(eval_share * len(train_pat))))
    eval_pat = [train_pat[i] for i in order[:n_eval]]
    pool_pat = [train_pat[i] for i in order[n_eval:]]
    labels = {
        t.patient_id: int(contains_category(t.events, category)) for t in cohort
    }
    y_eval = np.array([labels[t.patient_id] for t in eval_pat])
    y_pool = np.array([labels[t.patient_id] for t in pool_pat])
    y_test = np.array([labels[t.patient_id] for t in test_pat])

    cells = []
    for prefix_len in prefix_lens:
        X_eval = _embed_patients(model, eval_pat, prefix_len)
        X_pool = _embed_patients(model, pool_pat, prefix_len)
        X_test = _embed_patients(model, test_pat, prefix_len) if test_pat else None
        for fraction in fractions:
            cell = SweepCell(
                attribute=category.name,
                prefix_len=prefix_len,
                fraction=fraction,
                available=False,
                n_pos=int(y_eval.sum()),
                n_total=len(y_eval),
            )
            if len(y_eval) == 0 or y_eval.min() == y_eval.max():
                cell.note = "evaluation split lacks both classes"
                cells.append(cell)
                continue
            if fraction == "test":
                draws = [(X_test, y_test)] if test_pat else []
                if not draws:
                    cell.note = "no test-tagged patients"
            else:
                k = int(round(float(fraction) * len(train_pat)))
                if k < 2 or k > len(pool_pat):
                    draws = []
                    cell.note = f"fraction {fraction} yields unusable size {k}"
                else:
                    draws = []
                    stride = max(1, (len(pool_pat) - k) // max(1, repeats - 1)) if repeats > 1 else 1
                    for r in range(repeats):
                        lo = min(r * stride, len(pool_pat) - k)
                        draws.append((X_pool[lo : lo + k], y_pool[lo : lo + k]))
            results = []
            for X_tr, y_tr in draws:
                if y_tr.min() == y_tr.max():
                    continue
                probe = train_probe(
                    ProbeDataset(X_tr, y_tr), l2=l2, lr=lr, epochs=epochs, seed=seed
                )
                scores = predict_proba(probe, X_eval)
                cell.n_train = len(y_tr)
                scored = ScoredLabels(scores, y_eval)
                thr = threshold_metrics(scored, 0.5)
                results.append(
                    {
                        "auroc": auroc(scored),
                        "auprc": auprc(scored),
                        "f1": thr["f1"],
                        "precision": thr["precision"],
                        "recall": thr["recall"],
                        "accuracy": accuracy(scored),
                    }
                )
            if not results:
                if not cell.note:
                    cell.note = "no usable training draw (single-class subsets)"
                cells.append(cell)
                continue
            cell.available = True
            for name in ("auroc", "auprc", "f1", "precision", "recall", "accuracy"):
                setattr(cell, name, float(np.mean([r[name] for r in results])))
            cells.append(cell)
    return cells


def sweep_to_csv(cells: list[SweepCell]) -> str:
    """CSV export with the documented column set."""
    lines = ["attribute,prefix_len,fraction,auroc,auprc,f1,n_pos,n_total"]
    for c in cells:
        frac = c.fraction if isinstance(c.fraction, str) else f"{c.fraction:g}"
        if c.available:
            lines.append(
                f"{c.attribute},{c.prefix_len},{frac},"
                f"{c.auroc:.6g},{c.auprc:.6g},{c.f1:.6g},{c.n_pos},{c.n_total}"
            )
        else:
            lines.append(f"{c.attribute},{c.prefix_len},{frac},,,,{c.n_pos},{c.n_total}")
    return "\n".join(lines) + "\n"
