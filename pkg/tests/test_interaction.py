import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deiste.errors import ContractError, DegenerateInputError, DimensionError
from deiste.interaction import (
    PositionTable,
    best_match_indices,
    importance_scores,
    interact,
    interaction_matrix,
    position_embed,
    soft_align,
)
from deiste.numerics import Graph, Tensor, grad_check, parameter


def T(x):
    return Tensor(np.array(x, dtype=float))


def test_interaction_matrix_examples():
    g = Graph()
    eye = T(np.eye(3))
    np.testing.assert_allclose(np.diag(interaction_matrix(g, eye, eye).data), 1.0)
    np.testing.assert_allclose(interaction_matrix(g, T([[1], [0]]), T([[0], [1]])).data, [[0.0]])
    I = interaction_matrix(g, T([[1, 1], [1, 0]]), T([[1], [0]])).data
    np.testing.assert_allclose(I, [[1 / math.sqrt(2)], [1.0]], atol=1e-15)


def test_interaction_matrix_dimension_mismatch():
    with pytest.raises(DimensionError):
        interaction_matrix(Graph(), T(np.ones((3, 2))), T(np.ones((4, 2))))


def test_interaction_matrix_matches_loop_and_masks(rng):
    P = rng.normal(size=(2, 3, 4))
    H = rng.normal(size=(2, 3, 5))
    mp = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=bool)
    mh = np.array([[1, 1, 0, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    I = interaction_matrix(Graph(), T(P), T(H), mp, mh).data
    for b in range(2):
        for i in range(4):
            for j in range(5):
                if mp[b, i] and mh[b, j]:
                    u, v = P[b, :, i], H[b, :, j]
                    assert I[b, i, j] == pytest.approx(u @ v / np.linalg.norm(u) / np.linalg.norm(v), abs=1e-14)
                else:
                    assert I[b, i, j] == -1.0


def test_interaction_matrix_is_symmetric_under_swap(rng):
    P, H = rng.normal(size=(4, 3)), rng.normal(size=(4, 5))
    g = Graph()
    np.testing.assert_allclose(interaction_matrix(g, T(P), T(H)).data, interaction_matrix(g, T(H), T(P)).data.T, atol=1e-15)


@pytest.mark.parametrize("row_max, alpha", [(1.0, 0.5), (0.0, 1.0), (-1.0, 10.0)])
def test_importance_score_examples(row_max, alpha):
    I = T([[row_max, min(row_max, -0.5)]])
    assert importance_scores(Graph(), I).data[0] == pytest.approx(alpha)


def test_importance_scores_by_hypothesis_axis():
    I = T([[0.0, 1.0], [-1.0, 0.5]])
    np.testing.assert_allclose(importance_scores(Graph(), I, "hypothesis").data, [1.0, 0.5])
    with pytest.raises(ContractError):
        importance_scores(Graph(), I, "both")


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_importance_is_non_increasing_in_best_match(a, b):
    lo, hi = sorted([a, b])
    s = importance_scores(Graph(), T([[lo], [hi]])).data
    assert s[0] >= s[1]


def test_importance_zero_at_padded_positions():
    I = T([[[0.2, -1.0], [-1.0, -1.0]]])
    alpha = importance_scores(Graph(), I, mask_self=[[True, False]], mask_other=[[True, False]]).data
    assert alpha[0, 1] == 0.0
    assert alpha[0, 0] == pytest.approx(1 / 1.2)


def test_soft_align_examples():
    H = T([[1, 0], [0, 1]])
    g = Graph()
    np.testing.assert_allclose(soft_align(g, T([[0.3, 0.3]]), H).data[:, 0], [0.5, 0.5])
    np.testing.assert_allclose(soft_align(g, T([[20.0, -20.0]]), H).data[:, 0], [1.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(soft_align(g, T([[math.log(2), 0.0]]), H).data[:, 0], [2 / 3, 1 / 3], atol=1e-15)


def test_soft_align_all_masked_is_degenerate():
    with pytest.raises(DegenerateInputError):
        soft_align(Graph(), T([[[0.1, 0.2]]]), T([[[1, 0], [0, 1]]]), mask_other=[[False, False]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1, 1)), arrays(np.float64, (2, 4), elements=st.floats(-5, 5)))
def test_soft_align_stays_in_convex_hull(I, H):
    aligned = soft_align(Graph(), T(I), T(H)).data
    lo = H.min(axis=1, keepdims=True) - 1e-12
    hi = H.max(axis=1, keepdims=True) + 1e-12
    assert np.all(aligned >= lo) and np.all(aligned <= hi)


@pytest.mark.parametrize(
    "row, mask, expected",
    [([0.2, 0.9, 0.1], None, 1), ([0.5, 0.5], None, 0), ([0.3, 0.9, 0.1], [True, False, True], 0)],
)
def test_best_match_examples(row, mask, expected):
    assert best_match_indices(np.array([row]), mask)[0] == expected


def test_best_match_all_masked():
    with pytest.raises(DegenerateInputError):
        best_match_indices(np.array([[0.1, 0.2]]), [False, False])


def test_position_embed_examples(rng):
    table = PositionTable.random(4, 3, rng)
    g = Graph()
    np.testing.assert_array_equal(position_embed(g, [0], table).data[:, 0], table.matrix.data[0])
    np.testing.assert_array_equal(position_embed(g, [4 + 5], table).data[:, 0], table.matrix.data[-1])
    with pytest.raises(ContractError):
        position_embed(g, [-1], table)


def test_position_embed_repeated_index_gradient(rng):
    table = PositionTable.random(4, 3, rng)
    w = rng.normal(size=(3, 5))
    f = lambda g: g.sum(g.mul(g.tanh(position_embed(g, [1, 1, 3, 1, 9], table)), T(w)))  # noqa: E731
    assert grad_check(f, [table.matrix]) < 1e-6
    table.matrix.zero_grad()
    g = Graph()
    g.backward(g.sum(position_embed(g, [1, 1, 2], table)))
    np.testing.assert_array_equal(table.matrix.grad[1], [2, 2, 2])


def test_position_table_init_range(rng):
    m = PositionTable.random(60, 50, rng).matrix.data
    assert m.shape == (60, 50) and np.abs(m).max() <= 0.05


def test_interact_rejects_empty_side(rng):
    P = T(rng.normal(size=(1, 3, 2)))
    with pytest.raises(DegenerateInputError):
        interact(Graph(), P, P, [[True, True]], [[False, False]])


def test_interact_gradient_through_every_output(rng):
    P = parameter(rng.uniform(-1, 1, size=(2, 3, 4)))
    H = parameter(rng.uniform(-1, 1, size=(2, 3, 3)))
    mp = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    mh = np.array([[1, 1, 1], [1, 0, 0]], dtype=bool)
    wp, wh = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 3))

    def f(g):
        r = interact(g, P, H, mp, mh)
        parts = [g.sum(r.alpha_p), g.sum(r.alpha_h), g.sum(g.mul(r.aligned_p, T(wp))), g.sum(g.mul(r.aligned_h, T(wh)))]
        out = parts[0]
        for p in parts[1:]:
            out = g.add(out, p)
        return out

    assert grad_check(f, [P, H]) < 1e-5


def test_interact_identical_sentences_give_half_importance(rng):
    S = T(rng.normal(size=(4, 5)))
    r = interact(Graph(), S, S)
    np.testing.assert_allclose(np.diag(r.matrix.data), 1.0, atol=1e-12)
    np.testing.assert_allclose(r.alpha_p.data, 0.5, atol=1e-12)
    np.testing.assert_allclose(r.alpha_h.data, 0.5, atol=1e-12)
