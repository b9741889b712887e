"""The DeIsTe pair classifier, its loss, AdaGrad, training and evaluation."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .encoders import DynConvParams, PosConvParams, dynamic_conv, pos_attentive_conv, vanilla_cnn
from .errors import ContractError, DegenerateInputError, FormatError
from .interaction import DEFAULT_MAX_POSITIONS, PositionTable, interact, position_embed
from .numerics import Graph, Tensor, parameter
from .text import PAD_INDEX, EmbeddingStore, Vocabulary, load_word2vec_text

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ABLATIONS = ("none", "no-dyn-conv", "no-representation", "no-position")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 50
    d_m: int = 50
    hidden: int = 300
    filter_width: int = 3
    epochs: int = 10
    seed: int = 0
    no_dyn_conv: bool = False
    no_representation: bool = False
    no_position: bool = False
    single_direction: bool = False
    adagrad_eps: float = 1e-6
    max_positions: int = DEFAULT_MAX_POSITIONS

    def __post_init__(self):
        if self.filter_width != 3:
            raise ContractError("only filter width 3 is supported")
        for name in ("learning_rate", "batch_size", "d_m", "hidden", "max_positions", "adagrad_eps"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.epochs < 0 or self.seed < 0:
            raise ContractError("epochs and seed must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def with_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ContractError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        flags = dict(no_dyn_conv=False, no_representation=False, no_position=False)
        if name != "none":
            flags[name.replace("-", "_")] = True
        return TrainConfig.from_dict({**asdict(self), **flags})


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    premise: np.ndarray
    hypothesis: np.ndarray
    mask_p: np.ndarray
    mask_h: np.ndarray
    labels: Optional[np.ndarray]

    def __len__(self):
        return self.premise.shape[0]


def _pad(seqs):
    n = max(len(s) for s in seqs)
    idx = np.full((len(seqs), n), PAD_INDEX, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for r, s in enumerate(seqs):
        idx[r, : len(s)] = s
        mask[r, : len(s)] = True
    return idx, mask


def make_batch(examples, vocab: Vocabulary) -> Batch:
    """Index and pad a list of examples to the longest sentence per side."""
    if not examples:
        raise ContractError("empty batch")
    for ex in examples:
        if not ex.premise or not ex.hypothesis:
            raise DegenerateInputError("empty premise or hypothesis")
    p, mp = _pad([vocab.indices(ex.premise) for ex in examples])
    h, mh = _pad([vocab.indices(ex.hypothesis) for ex in examples])
    labels = None
    if all(ex.label is not None for ex in examples):
        labels = np.array([ex.label for ex in examples], dtype=np.float64)
    return Batch(p, h, mp, mh, labels)


def batches(examples, size):
    for start in range(0, len(examples), size):
        yield examples[start : start + size]


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class PairClassifier:
    """Common plumbing: a vocabulary, an embedding table and a logistic head."""

    kind = ""

    def __init__(self, vocab: Vocabulary, embeddings: EmbeddingStore, config: TrainConfig):
        self.vocab = vocab
        self.embeddings = embeddings
        self.config = config

    def parameters(self) -> list:
        raise NotImplementedError

    def forward(self, g: Graph, batch: Batch) -> Tensor:
        """Entailment probabilities, shape ``(B,)``."""
        raise NotImplementedError

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def frozen_rows(self) -> dict:
        return {self.embeddings.matrix.name: [PAD_INDEX]}

    def _embed(self, g, idx, mask):
        s = g.gather_columns(self.embeddings.matrix, idx)
        return g.scale_columns(s, mask.astype(np.float64))

    def _logistic(self, g, feats, w, b):
        n = feats.shape[0]
        logits = g.add_bias(g.matmul(w, g.transpose(feats)), b)
        return g.reshape(g.sigmoid(logits), (n,))

    def predict_proba(self, examples, batch_size=None) -> np.ndarray:
        size = batch_size or self.config.batch_size
        out = []
        for chunk in batches(list(examples), size):
            g = Graph(record=False)
            out.append(self.forward(g, make_batch(chunk, self.vocab)).data)
        return np.concatenate(out) if out else np.zeros(0)


def _classifier(rng, n_in, prefix="cls"):
    limit = math.sqrt(6.0 / (n_in + 1))
    w = parameter(rng.uniform(-limit, limit, size=(1, n_in)), f"{prefix}.w")
    return w, parameter(np.zeros(1), f"{prefix}.b")


class DeisteModel(PairClassifier):
    """Dynamic convolution plus position-aware attentive convolution.

    Both encoders run over the premise (attending to the hypothesis) and,
    unless ``single_direction`` is set, over the hypothesis (attending to
    the premise). The max-pooled outputs are concatenated and fed to a
    logistic regression.
    """

    kind = "deiste"

    def __init__(self, vocab, embeddings, config, rng: np.random.Generator):
        super().__init__(vocab, embeddings, config)
        d = embeddings.dim
        if d != config.hidden:
            raise ContractError(f"embedding dimension {d} != hidden size {config.hidden}")
        self.dyn = DynConvParams.init(d, rng)
        self.pos = PosConvParams.init(d, config.d_m, rng, with_aligned=not config.no_representation)
        self.positions = PositionTable.random(config.max_positions, config.d_m, rng)
        self.positions.matrix.name = "positions"
        dirs = 1 if config.single_direction else 2
        blocks = dirs * (1 if config.no_dyn_conv else 2)
        self.cls_w, self.cls_b = _classifier(rng, blocks * d)

    def parameters(self):
        ps = [self.embeddings.matrix]
        if not self.config.no_dyn_conv:
            ps += self.dyn.tensors()
        ps += self.pos.tensors()
        if not self.config.no_position:
            ps.append(self.positions.matrix)
        return ps + [self.cls_w, self.cls_b]

    def forward(self, g, batch):
        cfg = self.config
        P = self._embed(g, batch.premise, batch.mask_p)
        H = self._embed(g, batch.hypothesis, batch.mask_h)
        inter = interact(g, P, H, batch.mask_p, batch.mask_h, with_alignment=not cfg.no_representation)
        sides = [(P, inter.alpha_p, inter.argmax_p, inter.aligned_p, inter.mask_p)]
        if not cfg.single_direction:
            sides.append((H, inter.alpha_h, inter.argmax_h, inter.aligned_h, inter.mask_h))

        feats = []
        if not cfg.no_dyn_conv:
            for S, alpha, _, _, mask in sides:
                pooled, _ = g.max_pool_rows(dynamic_conv(g, S, alpha, self.dyn), mask)
                feats.append(pooled)
        for S, _, best, aligned, mask in sides:
            if cfg.no_position:
                Z = Tensor(np.zeros(S.shape[:-2] + (cfg.d_m, S.shape[-1])))
            else:
                Z = position_embed(g, best, self.positions, mask)
            pooled, _ = g.max_pool_rows(pos_attentive_conv(g, S, Z, aligned, self.pos), mask)
            feats.append(pooled)
        return self._logistic(g, g.concat(feats, axis=-1), self.cls_w, self.cls_b)


class SentenceOnlyModel(PairClassifier):
    """Vanilla CNN over just the premise or just the hypothesis."""

    kind = "sentence-only"

    def __init__(self, vocab, embeddings, config, rng, side="premise"):
        super().__init__(vocab, embeddings, config)
        if side not in ("premise", "hypothesis"):
            raise ContractError(f"side must be premise or hypothesis, not {side!r}")
        self.side = side
        d = embeddings.dim
        limit = math.sqrt(6.0 / (4 * d))
        self.conv_w = parameter(rng.uniform(-limit, limit, size=(d, 3 * d)), "cnn.w")
        self.conv_b = parameter(np.zeros(d), "cnn.b")
        self.cls_w, self.cls_b = _classifier(rng, d)

    def parameters(self):
        return [self.embeddings.matrix, self.conv_w, self.conv_b, self.cls_w, self.cls_b]

    def forward(self, g, batch):
        if self.side == "premise":
            idx, mask = batch.premise, batch.mask_p
        else:
            idx, mask = batch.hypothesis, batch.mask_h
        S = self._embed(g, idx, mask)
        pooled = vanilla_cnn(g, S, self.conv_w, self.conv_b, mask)
        return self._logistic(g, pooled, self.cls_w, self.cls_b)


def forward(pair, model: PairClassifier) -> float:
    """Entailment probability of a single example."""
    return float(model.predict_proba([pair], batch_size=1)[0])


def binary_cross_entropy(prob: float, label: int, clip=1e-12) -> float:
    p = min(max(prob, clip), 1.0 - clip)
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adagrad:
    """Per-entry AdaGrad: ``acc += g^2; x -= lr * g / (sqrt(acc) + eps)``.

    Row-sparse tensors (embedding tables) update only the rows that received
    gradient this step, which is exact since a zero gradient leaves both the
    accumulator and the entry unchanged. Rows listed in ``frozen_rows`` are
    never touched.
    """

    def __init__(self, params, lr=0.01, eps=1e-6, frozen_rows=None):
        self.params = list(params)
        self.lr = lr
        self.eps = eps
        self.frozen = {k: np.asarray(v, dtype=np.int64) for k, v in (frozen_rows or {}).items()}
        self.accumulators = {id(p): np.zeros_like(p.data) for p in self.params}

    def accumulator(self, p: Tensor) -> np.ndarray:
        return self.accumulators[id(p)]

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            acc = self.accumulators[id(p)]
            frozen = self.frozen.get(p.name)
            if p.row_sparse or frozen is not None:
                if p.row_sparse and p.touched_rows:
                    rows = np.unique(np.concatenate(p.touched_rows))
                else:
                    rows = np.arange(p.shape[0])
                if frozen is not None:
                    rows = rows[~np.isin(rows, frozen)]
                _kernels.adagrad_update_rows(p.data, p.grad, acc, np.ascontiguousarray(rows), self.lr, self.eps)
            else:
                _kernels.adagrad_update(p.data.reshape(-1), p.grad.reshape(-1), acc.reshape(-1), self.lr, self.eps)


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    correct: int
    total: int
    true_pos: int
    true_neg: int
    false_pos: int
    false_neg: int

    def confusion(self) -> dict:
        return {"tp": self.true_pos, "tn": self.true_neg, "fp": self.false_pos, "fn": self.false_neg}


def score_predictions(predicted, gold) -> EvalResult:
    predicted = np.asarray(predicted, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if gold.size == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if predicted.shape != gold.shape:
        raise ContractError(f"{predicted.size} predictions for {gold.size} gold labels")
    tp = int(((predicted == 1) & (gold == 1)).sum())
    tn = int(((predicted == 0) & (gold == 0)).sum())
    fp = int(((predicted == 1) & (gold == 0)).sum())
    fn = int(((predicted == 0) & (gold == 1)).sum())
    correct = tp + tn
    return EvalResult(correct / gold.size, correct, int(gold.size), tp, tn, fp, fn)


def evaluate(model: PairClassifier, dataset) -> EvalResult:
    """Accuracy at threshold 0.5, plus confusion counts (positive = entails)."""
    if not dataset:
        raise ContractError("cannot evaluate on an empty dataset")
    probs = model.predict_proba(dataset)
    return score_predictions((probs >= 0.5).astype(np.int64), [ex.label for ex in dataset])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: Optional[float]
    train_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    model: PairClassifier
    optimizer: Adagrad
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: Optional[float] = None


def build_vocab(*datasets) -> Vocabulary:
    sentences = []
    for ds in datasets:
        for ex in ds or ():
            sentences.append(ex.premise)
            sentences.append(ex.hypothesis)
    return Vocabulary.build(sentences)


def seeded_generators(seed):
    """Independent generators for parameter init and for data shuffling."""
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


def build_model(train_set, dev_set, config: TrainConfig, embeddings_path=None, kind="deiste", side="premise", rng=None):
    """Vocabulary from train+dev, embedding table, then a freshly initialised model."""
    if rng is None:
        rng, _ = seeded_generators(config.seed)
    vocab = build_vocab(train_set, dev_set)
    if embeddings_path:
        store = load_word2vec_text(embeddings_path, vocab, config.hidden, rng)
    else:
        store = EmbeddingStore.random(len(vocab), config.hidden, rng)
    if kind == "deiste":
        return DeisteModel(vocab, store, config, rng)
    if kind == "sentence-only":
        return SentenceOnlyModel(vocab, store, config, rng, side=side)
    raise ContractError(f"unknown model kind {kind!r}")


def _snapshot(model, opt):
    return [(p.data.copy(), opt.accumulator(p).copy()) for p in model.parameters()]


def _restore(model, opt, snap):
    for p, (data, acc) in zip(model.parameters(), snap):
        p.data[...] = data
        opt.accumulator(p)[...] = acc


def train_step(model: PairClassifier, opt: Adagrad, batch: Batch) -> float:
    g = Graph()
    prob = model.forward(g, batch)
    loss = g.bce(prob, batch.labels)
    model.zero_grad()
    g.backward(loss)
    opt.step()
    return loss.item()


def train(
    train_set,
    dev_set,
    config: TrainConfig,
    model: Optional[PairClassifier] = None,
    embeddings_path=None,
    track_train_accuracy=False,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Mini-batch AdaGrad with per-epoch shuffling and best-dev model selection.

    The returned model holds the parameters of the epoch with the highest
    dev accuracy (the first such epoch on ties); without a dev set it holds
    the final parameters.
    """
    if not train_set:
        raise ContractError("training set is empty")
    init_rng, shuffle_rng = seeded_generators(config.seed)
    if model is None:
        model = build_model(train_set, dev_set, config, embeddings_path, rng=init_rng)
    opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
    result = TrainResult(model, opt)
    best = None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for chunk in batches([train_set[i] for i in order], config.batch_size):
            total += train_step(model, opt, make_batch(chunk, model.vocab)) * len(chunk)
        dev_acc = evaluate(model, dev_set).accuracy if dev_set else None
        train_acc = evaluate(model, train_set).accuracy if track_train_accuracy else None
        rec = EpochRecord(epoch, total / len(train_set), dev_acc, train_acc)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if dev_acc is not None and (result.best_dev_accuracy is None or dev_acc > result.best_dev_accuracy):
            result.best_dev_accuracy = dev_acc
            result.best_epoch = epoch
            best = _snapshot(model, opt)
    if best is not None:
        _restore(model, opt, best)
    elif result.history:
        result.best_epoch = len(result.history)
    model.zero_grad()
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _tensor_file(name):
    return name.replace("/", "_") + ".f64"


def save_checkpoint(path, model: PairClassifier, optimizer: Optional[Adagrad] = None, extra: Optional[dict] = None):
    """Directory with ``manifest.json``, ``vocab.tsv`` and one little-endian float64 file per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    named = [(p.name, p.data) for p in model.parameters()]
    if optimizer is not None:
        named += [(f"adagrad.{p.name}", optimizer.accumulator(p)) for p in model.parameters()]
    for name, arr in named:
        fname = _tensor_file(name)
        (path / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    model.vocab.save(path / "vocab.tsv")
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "model": model.kind,
        "side": getattr(model, "side", None),
        "dtype": "float64-le",
        "seed": model.config.seed,
        "config": asdict(model.config),
        "vocab_file": "vocab.tsv",
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Rebuild a model (and its AdaGrad state) from :func:`save_checkpoint` output."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError("missing manifest.json", path=path) from None
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')!r}", path=path)
    if manifest.get("dtype") != "float64-le":
        raise FormatError(f"unsupported dtype {manifest.get('dtype')!r}", path=path)
    config = TrainConfig.from_dict(manifest["config"])
    vocab = Vocabulary.load(path / manifest["vocab_file"])
    rng = np.random.default_rng(0)
    store = EmbeddingStore.random(len(vocab), config.hidden, rng)
    if manifest["model"] == "deiste":
        model = DeisteModel(vocab, store, config, rng)
    elif manifest["model"] == "sentence-only":
        model = SentenceOnlyModel(vocab, store, config, rng, side=manifest.get("side") or "premise")
    else:
        raise FormatError(f"unknown model kind {manifest['model']!r}", path=path)
    opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
    targets = {p.name: p.data for p in model.parameters()}
    targets.update({f"adagrad.{p.name}": opt.accumulator(p) for p in model.parameters()})
    seen = set()
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in targets:
            raise FormatError(f"unexpected tensor {name!r}", path=path)
        if targets[name].shape != shape:
            raise FormatError(f"tensor {name!r}: manifest shape {shape} != model shape {targets[name].shape}", path=path)
        raw = (path / entry["file"]).read_bytes()
        if len(raw) != 8 * int(np.prod(shape)):
            raise FormatError(f"tensor {name!r}: file holds {len(raw)} bytes, expected {8 * int(np.prod(shape))}", path=path)
        targets[name][...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        seen.add(name)
    missing = {p.name for p in model.parameters()} - seen
    if missing:
        raise FormatError(f"checkpoint lacks tensors {sorted(missing)}", path=path)
    return model, opt, manifest
