"""Reference baselines: majority class, skip-gram overlap, single-sentence CNNs."""

from collections import Counter
from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np

from .errors import ContractError
from .model import (
    EvalResult,
    TrainConfig,
    TrainResult,
    build_model,
    evaluate,
    score_predictions,
    seeded_generators,
    train,
)

GAPS = (1, 2)


def skip_ngrams(tokens, order: int) -> Counter:
    """Multiset of n-grams whose consecutive picks are 1 or 2 positions apart.

    >>> sorted(skip_ngrams(["a", "b", "c"], 2))
    [('a', 'b'), ('a', 'c'), ('b', 'c')]
    """
    if order not in (1, 2, 3):
        raise ContractError(f"order must be 1, 2 or 3, not {order}")
    n = len(tokens)
    grams = Counter()
    for start in range(n):
        for gaps in product(GAPS, repeat=order - 1):
            pos = [start]
            for gap in gaps:
                pos.append(pos[-1] + gap)
            if pos[-1] < n:
                grams[tuple(tokens[p] for p in pos)] += 1
    return grams


@dataclass(frozen=True)
class NgramFeatureVector:
    unigram: float
    bigram: float
    trigram: float

    def as_array(self):
        return np.array([self.unigram, self.bigram, self.trigram])


def _coverage(hyp: Counter, prem: Counter) -> float:
    total = sum(hyp.values())
    if total == 0:
        return 0.0
    return sum(min(c, prem[g]) for g, c in hyp.items()) / total


def overlap_features(premise, hypothesis) -> NgramFeatureVector:
    """Share of the hypothesis' skip n-grams (orders 1-3) also found in the premise."""
    return NgramFeatureVector(*(_coverage(skip_ngrams(hypothesis, k), skip_ngrams(premise, k)) for k in (1, 2, 3)))


def feature_matrix(examples) -> np.ndarray:
    return np.array([overlap_features(ex.premise, ex.hypothesis).as_array() for ex in examples]).reshape(-1, 3)


class OverlapClassifier:
    """Logistic regression over standardised overlap features."""

    def __init__(self, weights, bias, mean, std, constant: Optional[int] = None):
        self.weights = weights
        self.bias = bias
        self.mean = mean
        self.std = std
        self.constant = constant

    def predict_proba(self, examples) -> np.ndarray:
        if self.constant is not None:
            return np.full(len(examples), float(self.constant))
        z = (feature_matrix(examples) - self.mean) / self.std
        return 1.0 / (1.0 + np.exp(-(z @ self.weights + self.bias)))

    def evaluate(self, examples) -> EvalResult:
        if not examples:
            raise ContractError("cannot evaluate on an empty dataset")
        pred = (self.predict_proba(examples) >= 0.5).astype(np.int64)
        return score_predictions(pred, [ex.label for ex in examples])


def train_overlap_classifier(train_set, epochs=20, lr=0.1, batch_size=50, eps=1e-6, seed=0) -> OverlapClassifier:
    """Mini-batch AdaGrad on the mean logistic loss."""
    if not train_set:
        raise ContractError("training set is empty")
    y = np.array([ex.label for ex in train_set], dtype=np.float64)
    x = feature_matrix(train_set)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-12] = 1.0
    if np.all(y == y[0]):
        return OverlapClassifier(np.zeros(3), 0.0, mean, std, constant=int(y[0]))
    z = (x - mean) / std
    theta = np.zeros(4)
    acc = np.zeros(4)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start : start + batch_size]
            zb = z[idx]
            p = 1.0 / (1.0 + np.exp(-(zb @ theta[:3] + theta[3])))
            err = p - y[idx]
            grad = np.concatenate([zb.T @ err, [err.sum()]]) / len(idx)
            acc += grad * grad
            theta -= lr * grad / (np.sqrt(acc) + eps)
    return OverlapClassifier(theta[:3], theta[3], mean, std)


def majority_label(examples) -> int:
    """Most frequent label; ties go to 0 (neutral)."""
    if not examples:
        raise ContractError("cannot take the majority of an empty dataset")
    ones = sum(ex.label for ex in examples)
    return 1 if ones > len(examples) - ones else 0


def majority_baseline(eval_set, train_set=None) -> EvalResult:
    """Accuracy of always predicting the majority label.

    The label comes from ``train_set`` when given, else from ``eval_set``.
    """
    label = majority_label(train_set if train_set else eval_set)
    return score_predictions([label] * len(eval_set), [ex.label for ex in eval_set])


def single_sentence_baseline(side, train_set, dev_set, config: TrainConfig, embeddings_path=None, on_epoch=None) -> TrainResult:
    """Vanilla CNN over one side of the pair, trained exactly like the full model."""
    if not train_set:
        raise ContractError("training set is empty")
    init_rng, _ = seeded_generators(config.seed)
    model = build_model(train_set, dev_set, config, embeddings_path, kind="sentence-only", side=side, rng=init_rng)
    return train(train_set, dev_set, config, model=model, on_epoch=on_epoch)


def run_all(train_set, dev_set, test_set, config: TrainConfig, embeddings_path=None, which=("majority", "ngram", "premise-only", "hypothesis-only"), on_epoch=None) -> dict:
    """Test accuracy of each requested baseline."""
    out = {}
    for name in which:
        if name == "majority":
            out[name] = majority_baseline(test_set, train_set)
        elif name == "ngram":
            out[name] = train_overlap_classifier(train_set, seed=config.seed).evaluate(test_set)
        elif name in ("premise-only", "hypothesis-only"):
            res = single_sentence_baseline(name.split("-")[0], train_set, dev_set, config, embeddings_path, on_epoch)
            out[name] = evaluate(res.model, test_set)
        else:
            raise ContractError(f"unknown baseline {name!r}")
    return out
