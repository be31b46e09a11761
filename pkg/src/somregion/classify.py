"""Text classification: a shallow embedding-average softmax model trained
from scratch, and a linear-SVM baseline with C grid search.

Documents are represented by word n-grams (1..6 words, joined with "_").
The embedding model averages the n-gram vectors of a document, feeds the
mean through a single softmax layer, and is trained by per-document SGD
on the negative log-likelihood. The baseline is a hinge-loss linear
model; its C is chosen by stratified k-fold mean F1.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from sklearn.metrics import f1_score
from sklearn.model_selection import StratifiedKFold
from sklearn.svm import LinearSVC

from .errors import InputFormatError, MissingInputError, ValidationError

NGRAM_MAX = 6
_WORD_RE = re.compile(r"[^\W_]+(?:['’][^\W_]+)*")

MODEL_FORMAT_VERSION = 1


def tokenize(text: str, n_max: int = NGRAM_MAX) -> list[str]:
    """Lowercased word n-grams for n = 1..n_max, joined with "_".

    Words are maximal runs of letters/digits; apostrophes are kept inside
    words, punctuation and whitespace split.
    """
    words = _WORD_RE.findall(text.lower())
    grams = []
    for n in range(1, n_max + 1):
        for i in range(len(words) - n + 1):
            grams.append("_".join(words[i : i + n]))
    return grams


@dataclass
class Vocab:
    """n-gram -> dense index map; every entry occurs >= min_freq times in
    the corpus it was built from."""

    entries: dict[str, int]
    min_freq: int
    n_range: tuple[int, int] = (1, NGRAM_MAX)

    @property
    def size(self) -> int:
        return len(self.entries)

    def indices(self, text: str) -> list[int]:
        """In-vocab n-gram indices of a document, with multiplicity."""
        return [self.entries[g] for g in tokenize(text, self.n_range[1]) if g in self.entries]


def build_vocab(texts: Iterable[str], min_freq: int = 2, n_max: int = NGRAM_MAX) -> Vocab:
    counts: dict[str, int] = {}
    for text in texts:
        for g in tokenize(text, n_max):
            counts[g] = counts.get(g, 0) + 1
    kept = sorted(g for g, c in counts.items() if c >= min_freq)
    return Vocab(entries={g: i for i, g in enumerate(kept)}, min_freq=min_freq, n_range=(1, n_max))


def _as_labeled(corpus) -> tuple[list[str], list[str]]:
    texts, labels = [], []
    for item in corpus:
        if isinstance(item, tuple):
            text, label = item
        else:
            text, label = item.text, item.label
        if label not in ("positive", "negative"):
            raise ValidationError(f"corpus item has label {label!r}; every item must be labeled")
        texts.append(text)
        labels.append(label)
    return texts, labels


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class EmbeddingModel:
    """Embedding-average softmax classifier.

    Class order is (negative, positive): output column 1 is the positive
    logit. Documents with no in-vocab n-grams use the zero vector.
    """

    vocab: Vocab
    embedding: np.ndarray    # (N, D)
    output_w: np.ndarray     # (D, 2)
    output_b: np.ndarray     # (2,)
    meta: dict = dc_field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def representation(self, text: str) -> np.ndarray:
        idxs = self.vocab.indices(text)
        if not idxs:
            return np.zeros(self.dim)
        return self.embedding[idxs].mean(axis=0)

    def predict_proba(self, text: str) -> np.ndarray:
        z = self.representation(text) @ self.output_w + self.output_b
        return _softmax(z)


def predict(model, text: str) -> float:
    """Probability of the positive class in [0, 1]."""
    return float(model.predict_proba(text)[1])


def classify(model, text: str, threshold: float = 0.5) -> str:
    """positive iff predict >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    return "positive" if predict(model, text) >= threshold else "negative"


def loss(model: EmbeddingModel, corpus) -> float:
    """Mean negative log-likelihood of the labeled corpus."""
    texts, labels = _as_labeled(corpus)
    total = 0.0
    for text, label in zip(texts, labels):
        p = model.predict_proba(text)
        total += -math.log(max(p[1 if label == "positive" else 0], 1e-300))
    return total / len(texts)


def loss_gradients(model: EmbeddingModel, corpus):
    """Analytic gradient of loss() w.r.t. (embedding, output_w, output_b)."""
    texts, labels = _as_labeled(corpus)
    g_emb = np.zeros_like(model.embedding)
    g_w = np.zeros_like(model.output_w)
    g_b = np.zeros_like(model.output_b)
    n = len(texts)
    for text, label in zip(texts, labels):
        idxs = model.vocab.indices(text)
        x = model.embedding[idxs].mean(axis=0) if idxs else np.zeros(model.dim)
        p = _softmax(x @ model.output_w + model.output_b)
        delta = p.copy()
        delta[1 if label == "positive" else 0] -= 1.0
        g_w += np.outer(x, delta) / n
        g_b += delta / n
        if idxs:
            gx = (model.output_w @ delta) / (n * len(idxs))
            np.add.at(g_emb, idxs, gx)
    return g_emb, g_w, g_b


def train_embedding(
    corpus,
    dim: int = 100,
    epochs: int = 20,
    step: float = 0.05,
    seed: int = 0,
    min_freq: int = 2,
) -> EmbeddingModel:
    """Train the embedding classifier by seeded per-document SGD.

    Raises if the corpus has a single class or yields an empty vocabulary.
    """
    texts, labels = _as_labeled(corpus)
    classes = set(labels)
    if classes != {"positive", "negative"}:
        raise ValidationError(f"corpus must contain both classes, found {sorted(classes)}")
    vocab = build_vocab(texts, min_freq=min_freq)
    if vocab.size == 0:
        raise ValidationError(f"empty vocabulary: no n-gram occurs >= {min_freq} times")

    docs = [np.array(vocab.indices(t), dtype=np.intp) for t in texts]
    y = np.array([1 if lb == "positive" else 0 for lb in labels])

    rng = np.random.default_rng(seed)
    # 1/sqrt(dim) scale keeps mean-pooled document vectors large enough for
    # the plain-SGD softmax layer to learn at step sizes around 0.05
    embedding = (rng.random((vocab.size, dim)) - 0.5) / math.sqrt(dim)
    output_w = np.zeros((dim, 2))
    output_b = np.zeros(2)
    model = EmbeddingModel(vocab=vocab, embedding=embedding, output_w=output_w, output_b=output_b)

    initial_loss = loss(model, corpus)
    n = len(texts)
    for _epoch in range(epochs):
        for i in rng.permutation(n):
            idxs = docs[i]
            x = embedding[idxs].mean(axis=0) if len(idxs) else np.zeros(dim)
            p = _softmax(x @ output_w + output_b)
            delta = p.copy()
            delta[y[i]] -= 1.0
            gx = output_w @ delta
            output_w -= step * np.outer(x, delta)
            output_b -= step * delta
            if len(idxs):
                np.subtract.at(embedding, idxs, (step / len(idxs)) * gx)
    final_loss = loss(model, corpus)

    model.meta = {
        "kind": "embedding",
        "dim": dim,
        "epochs": epochs,
        "step": step,
        "seed": seed,
        "min_freq": min_freq,
        "n_docs": n,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
    }
    return model


# --------------------------------------------------------------------------
# linear baseline

C_GRID = (1, 10, 100, 1000)


@dataclass
class LinearModel:
    """Hinge-loss linear model over n-gram counts, with L2 penalty.

    predict_proba squashes the decision margin through a logistic; the
    value orders documents by margin but is not a calibrated probability.
    """

    vocab: Vocab
    weights: np.ndarray      # (N,)
    bias: float
    C: float
    meta: dict = dc_field(default_factory=dict)

    def margin(self, text: str) -> float:
        idxs = self.vocab.indices(text)
        return float(self.weights[idxs].sum() + self.bias)

    def predict_proba(self, text: str) -> np.ndarray:
        p = 1.0 / (1.0 + math.exp(-self.margin(text)))
        return np.array([1.0 - p, p])


def _count_matrix(vocab: Vocab, texts: Sequence[str]) -> csr_matrix:
    data, indices, indptr = [], [], [0]
    for text in texts:
        row: dict[int, int] = {}
        for idx in vocab.indices(text):
            row[idx] = row.get(idx, 0) + 1
        for idx in sorted(row):
            indices.append(idx)
            data.append(row[idx])
        indptr.append(len(indices))
    return csr_matrix((data, indices, indptr), shape=(len(texts), vocab.size), dtype=float)


def train_linear(corpus, c_grid: Sequence[float] = C_GRID, folds: int = 5, seed: int = 0) -> LinearModel:
    """Grid-search C by stratified k-fold mean F1 (ties -> smaller C),
    then refit on the full corpus."""
    texts, labels = _as_labeled(corpus)
    classes = set(labels)
    if classes != {"positive", "negative"}:
        raise ValidationError(f"corpus must contain both classes, found {sorted(classes)}")
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    vocab = build_vocab(texts, min_freq=1)
    if vocab.size == 0:
        raise ValidationError("empty vocabulary")
    X = _count_matrix(vocab, texts)
    y = np.array([1 if lb == "positive" else 0 for lb in labels])
    if min(np.bincount(y)) < folds:
        raise ValidationError(
            f"stratification impossible: smallest class has {min(np.bincount(y))} items "
            f"but folds={folds}"
        )

    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(skf.split(X, y))
    cv_scores: dict[float, float] = {}
    best_c = None
    best_f1 = -1.0
    for c in sorted(c_grid):
        scores = []
        for train_idx, test_idx in splits:
            clf = LinearSVC(C=c, loss="hinge", max_iter=100000, random_state=seed)
            clf.fit(X[train_idx], y[train_idx])
            scores.append(f1_score(y[test_idx], clf.predict(X[test_idx]), zero_division=0))
        mean_f1 = float(np.mean(scores))
        cv_scores[c] = mean_f1
        if mean_f1 > best_f1:
            best_f1 = mean_f1
            best_c = c

    clf = LinearSVC(C=best_c, loss="hinge", max_iter=100000, random_state=seed)
    clf.fit(X, y)
    return LinearModel(
        vocab=vocab,
        weights=np.asarray(clf.coef_[0], dtype=float),
        bias=float(clf.intercept_[0]),
        C=float(best_c),
        meta={
            "kind": "linear",
            "folds": folds,
            "seed": seed,
            "cv_mean_f1": {str(k): v for k, v in cv_scores.items()},
        },
    )


# --------------------------------------------------------------------------
# iterative-labeling support

def select_edge_cases(model, texts: Sequence[str], fraction: float = 0.05) -> list[str]:
    """The ceil(fraction * n) texts whose prediction is closest to 0.5,
    closest first; ties keep earlier input order."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    if not texts:
        return []
    k = math.ceil(fraction * len(texts))
    scored = [(abs(predict(model, t) - 0.5), i) for i, t in enumerate(texts)]
    scored.sort()
    return [texts[i] for _score, i in scored[:k]]


def top_features(model, k: int) -> list[tuple[str, float]]:
    """The k n-grams most indicative of the positive class, best first.

    For the linear model this is the weight itself; for the embedding
    model, the projection of each n-gram vector onto the direction
    (positive logit - negative logit)."""
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    if isinstance(model, LinearModel):
        scores = model.weights
    else:
        scores = model.embedding @ (model.output_w[:, 1] - model.output_w[:, 0])
    by_index = sorted(model.vocab.entries.items(), key=lambda kv: kv[1])
    ranked = sorted(
        ((gram, float(scores[idx])) for gram, idx in by_index),
        key=lambda gs: (-gs[1], gs[0]),
    )
    return ranked[: min(k, len(ranked))]


# --------------------------------------------------------------------------
# persistence (single-file npz container, bit-exact round trip)

def save_model(model: Union[EmbeddingModel, LinearModel], path) -> None:
    grams = [g for g, _i in sorted(model.vocab.entries.items(), key=lambda kv: kv[1])]
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.meta.get("kind", "embedding" if isinstance(model, EmbeddingModel) else "linear"),
        "vocab": {"min_freq": model.vocab.min_freq, "n_range": list(model.vocab.n_range)},
        "meta": model.meta,
    }
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "grams": np.array(grams, dtype=object),
    }
    if isinstance(model, EmbeddingModel):
        arrays.update(embedding=model.embedding, output_w=model.output_w, output_b=model.output_b)
    else:
        arrays.update(weights=model.weights, bias=np.array([model.bias]), c=np.array([model.C]))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> Union[EmbeddingModel, LinearModel]:
    if not os.path.exists(path):
        raise MissingInputError(f"model file not found: {path}")
    with np.load(path, allow_pickle=True) as data:
        header = json.loads(str(data["header"][()]))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise InputFormatError(
                f"{path}: unsupported model format version {header.get('format_version')}"
            )
        grams = [str(g) for g in data["grams"]]
        vocab = Vocab(
            entries={g: i for i, g in enumerate(grams)},
            min_freq=int(header["vocab"]["min_freq"]),
            n_range=tuple(header["vocab"]["n_range"]),
        )
        if header["kind"] == "embedding":
            return EmbeddingModel(
                vocab=vocab,
                embedding=data["embedding"].copy(),
                output_w=data["output_w"].copy(),
                output_b=data["output_b"].copy(),
                meta=header["meta"],
            )
        return LinearModel(
            vocab=vocab,
            weights=data["weights"].copy(),
            bias=float(data["bias"][0]),
            C=float(data["c"][0]),
            meta=header["meta"],
        )
