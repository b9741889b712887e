"""Seeded tiny instances for end-to-end gradient checking, and synthetic data."""

from dataclasses import dataclass

import numpy as np

from .data import PairExample
from .model import DeisteModel, TrainConfig, build_vocab, make_batch
from .numerics import grad_check_report
from .text import PAD_INDEX, EmbeddingStore

TOLERANCE = 1e-4

# cycled across configurations so every ablation gets checked
VARIANTS = (
    {},
    {"no_dyn_conv": True},
    {"no_representation": True},
    {"no_position": True},
    {"no_dyn_conv": True, "no_representation": True, "no_position": True},
    {"single_direction": True},
)


@dataclass
class GradCheckCase:
    seed: int
    dim: int
    lengths: list
    flags: dict
    max_rel_error: float = float("nan")
    entries: int = 0
    kinked: int = 0

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE

    def describe(self):
        flags = ",".join(k for k, v in self.flags.items() if v) or "full"
        lens = " ".join(f"{p}x{h}" for p, h in self.lengths)
        return f"seed={self.seed} d={self.dim} lengths=[{lens}] variant={flags}"

    def summary(self):
        return f"{self.describe()} max_rel_error={self.max_rel_error:.3e} kinked={self.kinked}/{self.entries}"


def tiny_instance(seed, dim=4, d_m=2, lengths=((3, 4),), flags=None, vocab_size=8):
    """A randomly initialised model and a padded batch of random pairs.

    Embeddings are drawn from [-1, 1] instead of the usual small range so
    cosines are well conditioned under finite differences.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    examples = []
    for k, (n_p, n_h) in enumerate(lengths):
        examples.append(
            PairExample(
                [words[i] for i in rng.integers(0, vocab_size, n_p)],
                [words[i] for i in rng.integers(0, vocab_size, n_h)],
                k % 2,
            )
        )
    config = TrainConfig(hidden=dim, d_m=d_m, max_positions=4, seed=seed, **(flags or {}))
    vocab = build_vocab(examples)
    store = EmbeddingStore.random(len(vocab), dim, rng)
    store.matrix.data[...] = rng.uniform(-1.0, 1.0, size=store.matrix.shape)
    store.matrix.data[PAD_INDEX] = 0.0
    model = DeisteModel(vocab, store, config, rng)
    model.positions.matrix.data[...] = rng.uniform(-1.0, 1.0, size=model.positions.matrix.shape)
    return model, make_batch(examples, vocab)


def check_case(case: GradCheckCase, eps=1e-5) -> GradCheckCase:
    model, batch = tiny_instance(case.seed, case.dim, 2, case.lengths, case.flags)

    def loss(g):
        return g.bce(model.forward(g, batch), batch.labels)

    report = grad_check_report(loss, model.parameters(), eps)
    case.max_rel_error = report.max_rel_error
    case.entries = report.entries
    case.kinked = report.kinked
    return case


def gradcheck_cases(seed=7, count=20) -> list:
    """``count`` seeded configurations: d in {3, 4}, d_m = 2, sentence lengths 2-5,
    two pairs per batch so padding and masks are exercised."""
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(count):
        lengths = [tuple(int(x) for x in rng.integers(2, 6, size=2)) for _ in range(2)]
        cases.append(GradCheckCase(int(rng.integers(0, 2**31)), 3 + k % 2, lengths, dict(VARIANTS[k % len(VARIANTS)])))
    return cases


def run_gradcheck(seed=7, count=20, eps=1e-5, on_case=None) -> list:
    done = []
    for case in gradcheck_cases(seed, count):
        check_case(case, eps)
        if on_case is not None:
            on_case(case)
        done.append(case)
    return done


def synthetic_pairs(n, seed=0, vocab_size=40, premise_len=(5, 9), hyp_len=(2, 4)):
    """Separable toy entailment data.

    Entailing hypotheses are ordered subsequences of their premise; neutral
    hypotheses use only words absent from the premise. Labels alternate.
    """
    rng = np.random.default_rng(seed)
    words = [f"tok{i}" for i in range(vocab_size)]
    out = []
    for k in range(n):
        n_p = int(rng.integers(premise_len[0], premise_len[1] + 1))
        n_h = int(rng.integers(hyp_len[0], hyp_len[1] + 1))
        prem_ids = rng.choice(vocab_size, size=n_p, replace=False)
        label = 1 - k % 2
        if label:
            keep = np.sort(rng.choice(n_p, size=min(n_h, n_p), replace=False))
            hyp_ids = prem_ids[keep]
        else:
            rest = np.setdiff1d(np.arange(vocab_size), prem_ids)
            hyp_ids = rng.choice(rest, size=n_h, replace=False)
        out.append(PairExample([words[i] for i in prem_ids], [words[i] for i in hyp_ids], label))
    return out
