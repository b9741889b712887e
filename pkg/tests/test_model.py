import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deiste.checks import synthetic_pairs, tiny_instance
from deiste.data import PairExample
from deiste.errors import ContractError, DegenerateInputError, FormatError
from deiste.interaction import interact
from deiste.model import (
    Adagrad,
    DeisteModel,
    TrainConfig,
    binary_cross_entropy,
    build_model,
    evaluate,
    forward,
    load_checkpoint,
    make_batch,
    save_checkpoint,
    score_predictions,
    seeded_generators,
    train,
    train_step,
)
from deiste.numerics import Graph, Tensor, parameter
from deiste.text import PAD_INDEX

SMALL = dict(hidden=8, d_m=3, batch_size=4, max_positions=10)


def small_model(examples, seed=0, **flags):
    config = TrainConfig(seed=seed, **{**SMALL, **flags})
    return build_model(examples, None, config), config


def test_zero_classifier_gives_half():
    data = synthetic_pairs(6, seed=1)
    model, _ = small_model(data)
    model.cls_w.data[...] = 0.0
    model.cls_b.data[...] = 0.0
    for ex in data:
        assert forward(ex, model) == 0.5


def test_identical_sentences_diagonal_and_importance():
    ex = PairExample.from_text("the earth rotates daily", "the earth rotates daily", 1)
    model, _ = small_model([ex])
    g = Graph()
    batch = make_batch([ex], model.vocab)
    P = model._embed(g, batch.premise, batch.mask_p)
    H = model._embed(g, batch.hypothesis, batch.mask_h)
    r = interact(g, P, H, batch.mask_p, batch.mask_h)
    np.testing.assert_allclose(np.diagonal(r.matrix.data[0]), 1.0, atol=1e-12)
    np.testing.assert_allclose(r.alpha_p.data, 0.5, atol=1e-12)
    np.testing.assert_allclose(r.alpha_h.data, 0.5, atol=1e-12)


def test_empty_sentence_is_degenerate():
    data = synthetic_pairs(4, seed=1)
    model, _ = small_model(data)
    with pytest.raises(DegenerateInputError):
        forward(PairExample([], ["tok1"], 1), model)


@pytest.mark.parametrize(
    "prob, label, expected",
    [(0.5, 0, math.log(2)), (0.5, 1, math.log(2)), (1 - 1e-12, 1, 1e-12), (0.25, 1, math.log(4))],
)
def test_binary_cross_entropy(prob, label, expected):
    assert binary_cross_entropy(prob, label) == pytest.approx(expected, rel=1e-3, abs=1e-15)
    g = Graph()
    assert g.bce(Tensor([prob]), [label]).item() == pytest.approx(expected, rel=1e-3, abs=1e-15)


def test_bce_is_mean_over_batch():
    g = Graph()
    loss = g.bce(Tensor([0.5, 0.25]), [1, 1]).item()
    assert loss == pytest.approx((math.log(2) + math.log(4)) / 2)


def test_adagrad_zero_gradient_leaves_parameter():
    p = parameter(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    Adagrad([p]).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adagrad_first_step_is_about_lr(mag, sign):
    p = parameter(np.array([0.0]))
    p.grad = np.array([sign * mag])
    Adagrad([p], lr=0.01, eps=1e-6).step()
    assert -sign * p.data[0] == pytest.approx(0.01 * mag / (mag + 1e-6), rel=1e-12)
    assert abs(p.data[0]) == pytest.approx(0.01, rel=1e-3)


def test_adagrad_second_step():
    p = parameter(np.array([0.0]))
    opt = Adagrad([p], lr=0.01, eps=1e-6)
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
    assert p.data[0] == pytest.approx(-(0.01 / (1 + 1e-6) + 0.01 / (math.sqrt(2) + 1e-6)), rel=1e-12)
    assert opt.accumulator(p)[0] == 2.0


def test_training_keeps_pad_row_zero_and_accumulators_monotone():
    data = synthetic_pairs(12, seed=2)
    model, config = small_model(data)
    opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
    before = {id(p): opt.accumulator(p).copy() for p in model.parameters()}
    for start in range(0, 12, 4):
        train_step(model, opt, make_batch(data[start : start + 4], model.vocab))
        for p in model.parameters():
            acc = opt.accumulator(p)
            assert np.all(acc >= before[id(p)])
            before[id(p)] = acc.copy()
        assert not model.embeddings.matrix.data[PAD_INDEX].any()
    assert not opt.accumulator(model.embeddings.matrix)[PAD_INDEX].any()


def test_sparse_rows_match_dense_update():
    data = synthetic_pairs(8, seed=3)
    model, config = small_model(data)
    emb = model.embeddings.matrix
    start = emb.data.copy()
    opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
    train_step(model, opt, make_batch(data[:4], model.vocab))
    grad = emb.grad.copy()
    grad[PAD_INDEX] = 0.0
    dense = start - config.learning_rate * grad / (np.sqrt(grad * grad) + config.adagrad_eps)
    np.testing.assert_allclose(emb.data, dense, atol=1e-15)


def test_loss_decreases_over_first_steps():
    data = synthetic_pairs(8, seed=4)
    model, config = small_model(data, seed=3)
    opt = Adagrad(model.parameters(), 0.05, config.adagrad_eps, model.frozen_rows())
    batch = make_batch(data, model.vocab)
    losses = [train_step(model, opt, batch) for _ in range(6)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_history_and_best_epoch():
    data = synthetic_pairs(16, seed=5)
    dev = synthetic_pairs(8, seed=6)
    config = TrainConfig(epochs=4, seed=1, **SMALL)
    res = train(data, dev, config)
    assert [r.epoch for r in res.history] == [1, 2, 3, 4]
    best = max(r.dev_accuracy for r in res.history)
    assert res.best_dev_accuracy == best
    assert res.history[res.best_epoch - 1].dev_accuracy == best
    assert min(r.epoch for r in res.history if r.dev_accuracy == best) == res.best_epoch
    assert evaluate(res.model, dev).accuracy == best


def test_train_empty_set():
    with pytest.raises(ContractError):
        train([], None, TrainConfig(**SMALL))


def test_evaluate_examples():
    gold = [1, 0, 1, 1, 0]
    assert score_predictions(gold, gold).accuracy == 1.0
    assert score_predictions([1 - y for y in gold], gold).accuracy == 0.0
    scitail_like = [1] * 842 + [0] * 1284
    res = score_predictions([0] * len(scitail_like), scitail_like)
    assert round(100 * res.accuracy, 1) == 60.4
    assert res.confusion() == {"tp": 0, "tn": 1284, "fp": 0, "fn": 842}
    with pytest.raises(ContractError):
        score_predictions([], [])


def test_evaluate_empty_dataset():
    data = synthetic_pairs(4, seed=1)
    model, _ = small_model(data)
    with pytest.raises(ContractError):
        evaluate(model, [])


def test_batched_predictions_match_single_examples():
    data = synthetic_pairs(10, seed=7)
    model, _ = small_model(data, seed=2)
    batched = model.predict_proba(data, batch_size=10)
    single = np.array([forward(ex, model) for ex in data])
    np.testing.assert_allclose(batched, single, atol=1e-12)


@pytest.mark.parametrize(
    "flags",
    [
        {},
        {"no_dyn_conv": True},
        {"no_representation": True},
        {"no_position": True},
        {"no_dyn_conv": True, "no_representation": True, "no_position": True},
        {"single_direction": True},
    ],
)
def test_every_variant_runs_and_checkpoints(tmp_path, flags):
    data = synthetic_pairs(6, seed=8)
    model, config = small_model(data, **flags)
    opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
    train_step(model, opt, make_batch(data, model.vocab))
    probs = model.predict_proba(data)
    assert probs.shape == (6,) and np.all((probs > 0) & (probs < 1))
    save_checkpoint(tmp_path / "ck", model, opt)
    loaded, lopt, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["config"] == config.__dict__
    np.testing.assert_array_equal(loaded.predict_proba(data), probs)
    for p, q in zip(model.parameters(), loaded.parameters()):
        assert p.name == q.name
        np.testing.assert_array_equal(opt.accumulator(p), lopt.accumulator(q))


def test_no_representation_filter_has_no_aligned_block():
    data = synthetic_pairs(4, seed=1)
    model, config = small_model(data, no_representation=True)
    assert model.pos.w.shape == (config.hidden, 3 * (config.hidden + config.d_m))


def test_checkpoint_rejects_truncated_tensor(tmp_path):
    data = synthetic_pairs(4, seed=1)
    model, _ = small_model(data)
    save_checkpoint(tmp_path / "ck", model)
    f = tmp_path / "ck" / "cls.w.f64"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(FormatError, match="bytes"):
        load_checkpoint(tmp_path / "ck")


def test_checkpoint_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path)


def test_config_validation_and_ablations():
    with pytest.raises(ContractError):
        TrainConfig(filter_width=5)
    with pytest.raises(ContractError):
        TrainConfig(learning_rate=0)
    cfg = TrainConfig(no_position=True).with_ablation("no-dyn-conv")
    assert cfg.no_dyn_conv and not cfg.no_position
    with pytest.raises(ContractError):
        cfg.with_ablation("no-everything")


def test_seeded_generators_are_reproducible_and_independent():
    a1, b1 = seeded_generators(5)
    a2, b2 = seeded_generators(5)
    assert a1.random() == a2.random() and b1.random() == b2.random()
    a3, b3 = seeded_generators(5)
    assert a3.random() != b3.random()


def test_tiny_instance_model_is_deiste():
    model, batch = tiny_instance(3)
    assert isinstance(model, DeisteModel)
    assert len(batch) == 1
