"""Selection tests: brute-force ordering oracles and gradient locality.

hard_select is checked against an independent sort over hundreds of
random score vectors, including ties; the gradient tests pin down the
property the whole model depends on, that unselected history rows
receive exactly zero gradient.
"""

import numpy as np
import pytest

from newsrec import autodiff as ad
from newsrec import selector as sel
from newsrec.autodiff import Graph, Tensor, backward

from helpers import fd_grad, rel_err, sample_safe


def brute_force_top_k(scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[: min(k, len(scores))])


# ------------------------------------------------------------ ordering


def test_hard_select_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(300):
        m = int(rng.integers(1, 40))
        k = int(rng.integers(1, 12))
        # coarse rounding forces frequent ties
        scores = Tensor(np.round(rng.uniform(-1, 1, size=m), 1))
        fine = Tensor(rng.normal(size=(m, 2)))
        sf, ss, idx = sel.hard_select(scores, fine, k)
        kept = min(k, m)
        expect = brute_force_top_k(list(scores.data), k)
        assert list(idx[:kept]) == expect
        assert np.array_equal(ss.data[:kept], scores.data[expect])
        assert np.array_equal(sf.data[:kept], fine.data[expect])
        assert idx.shape == (k,) and ss.shape == (k,)
        if k > m:
            assert np.all(idx[m:] == -1)
            assert np.all(ss.data[m:] == sel.INVALID_SCORE)
            assert np.all(sf.data[m:] == 0.0)


def test_worked_selection_example():
    scores = Tensor([0.9, 0.1, 0.8, 0.2, 0.7])
    fine = Tensor(np.arange(10.0).reshape(5, 2))
    _, ss, idx = sel.hard_select(scores, fine, 3)
    assert list(idx) == [0, 2, 4]
    assert np.array_equal(ss.data, [0.9, 0.8, 0.7])


def test_ties_break_toward_recent():
    scores = Tensor([0.5, 0.7, 0.5, 0.5])
    fine = Tensor(np.zeros((4, 1)))
    _, _, idx = sel.hard_select(scores, fine, 2)
    assert list(idx) == [0, 1]


def test_monotone_transform_keeps_selection():
    rng = np.random.default_rng(2)
    for _ in range(50):
        raw = rng.normal(size=12)
        fine = Tensor(np.zeros((12, 1)))
        _, _, a = sel.hard_select(Tensor(raw), fine, 4)
        _, _, b = sel.hard_select(Tensor(0.4 * raw + 0.1), fine, 4)
        assert np.array_equal(a, b)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    raw = rng.normal(size=10)
    fine = Tensor(np.zeros((10, 1)))
    _, _, base = sel.hard_select(Tensor(raw), fine, 4)
    perm = rng.permutation(10)
    _, _, moved = sel.hard_select(Tensor(raw[perm]), fine, 4)
    assert set(perm[moved]) == set(base)


# -------------------------------------------------------------- gating


def test_gate_zeroes_subthreshold_rows_exactly():
    scores = Tensor([0.5, 0.15, 0.25])
    fine = Tensor(np.ones((3, 2, 2)))
    gated, weights = sel.soft_select(fine, scores, threshold=0.2)
    assert np.array_equal(weights.data, [0.5, 0.0, 0.25])
    assert np.array_equal(gated.data[0], np.full((2, 2), 0.5))
    assert np.array_equal(gated.data[1], np.zeros((2, 2)))
    assert np.array_equal(gated.data[2], np.full((2, 2), 0.25))


def test_threshold_one_blanks_everything():
    rng = np.random.default_rng(4)
    scores = Tensor(rng.uniform(-1, 1, size=6))
    fine = Tensor(rng.normal(size=(6, 3)))
    gated, weights = sel.soft_select(fine, scores, threshold=1.0 + 1e-12)
    assert np.array_equal(weights.data, np.zeros(6))
    assert np.array_equal(gated.data, np.zeros((6, 3)))


# ------------------------------------------------------------ validity


def test_invalid_slots_lose_to_any_valid_row():
    rng = np.random.default_rng(5)
    proj = Tensor(rng.normal(size=(6, 3)))
    cand = Tensor(rng.normal(size=3))
    validity = np.array([True, False, True, False, True, True])
    scores = sel.informativeness(proj, cand, validity)
    assert np.all(scores.data[~validity] == sel.INVALID_SCORE)
    assert np.all(scores.data[validity] >= -1.0 - 1e-12)
    fine = Tensor(rng.normal(size=(6, 2)))
    _, _, idx = sel.hard_select(scores, fine, 4)
    assert set(idx) == {0, 2, 4, 5}


def test_all_invalid_history_gates_to_zero():
    rng = np.random.default_rng(6)
    proj = Tensor(rng.normal(size=(4, 3)))
    cand = Tensor(rng.normal(size=3))
    fine = Tensor(rng.normal(size=(4, 2, 2, 3)))
    chosen = sel.select_history(fine, proj, cand,
                                np.zeros(4, dtype=bool), 3, threshold=0.2)
    assert np.array_equal(chosen.weights.data, np.zeros(3))
    assert np.array_equal(chosen.fine.data, np.zeros((3, 2, 2, 3)))
    assert np.array_equal(chosen.scores.data, np.full(3, sel.INVALID_SCORE))


def test_recent_select_takes_first_valid():
    rng = np.random.default_rng(7)
    fine = Tensor(rng.normal(size=(6, 2, 2, 3)))
    validity = np.array([True, False, True, True, False, True])
    chosen = sel.recent_select(fine, validity, 3)
    assert list(chosen.indices) == [0, 2, 3]
    assert np.array_equal(chosen.weights.data, np.ones(3))
    assert np.array_equal(chosen.fine.data, fine.data[[0, 2, 3]])


def test_recent_select_pads_short_history():
    fine = Tensor(np.ones((2, 1, 1, 2)))
    chosen = sel.recent_select(fine, np.array([True, True]), 5)
    assert list(chosen.indices) == [0, 1, -1, -1, -1]
    assert np.array_equal(chosen.weights.data, [1, 1, 0, 0, 0])
    assert np.array_equal(chosen.fine.data[2:], np.zeros((3, 1, 1, 2)))


def test_project_single_matches_matrix_row():
    rng = np.random.default_rng(8)
    params = sel.SelectorParams(
        weight=Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        bias=Tensor(rng.normal(size=3), requires_grad=True),
    )
    mat = Tensor(rng.normal(size=(5, 4)))
    rows = sel.project(mat, params)
    one = sel.project(ad.index0(mat, 2), params)
    np.testing.assert_allclose(one.data, rows.data[2], atol=1e-12)


# ------------------------------------------------------------ gradients


def test_gradient_flows_only_through_selected_rows():
    rng = np.random.default_rng(9)
    m, k, f, dsel = 8, 3, 4, 3
    params = sel.SelectorParams(
        weight=Tensor(rng.normal(size=(dsel, f)), requires_grad=True),
        bias=Tensor(rng.normal(size=dsel), requires_grad=True),
    )
    coarse = Tensor(rng.normal(size=(m, f)), requires_grad=True)
    cand = Tensor(rng.normal(size=f), requires_grad=True)
    hist_fine = Tensor(rng.normal(size=(m, 2, 5, f)), requires_grad=True)
    with Graph():
        hp = sel.project(coarse, params)
        cp = sel.project(cand, params)
        chosen = sel.select_history(hist_fine, hp, cp,
                                    np.ones(m, dtype=bool), k, threshold=-2.0)
        backward(ad.sum_(chosen.fine))
    picked = set(chosen.indices.tolist())
    assert len(picked) == k
    for i in range(m):
        row = hist_fine.grad[i]
        if i in picked:
            assert np.any(row != 0.0)
        else:
            assert np.array_equal(row, np.zeros_like(row))
            assert np.array_equal(coarse.grad[i], np.zeros(f))
    assert np.any(params.weight.grad != 0.0)
    assert np.any(params.bias.grad != 0.0)
    assert np.any(cand.grad != 0.0)


def test_dropped_gate_blocks_score_gradient():
    # a selected row whose score sits under the threshold contributes
    # nothing, and its score must get zero gradient through the gate
    scores = Tensor([0.9, 0.05, 0.6], requires_grad=True)
    fine = Tensor(np.ones((3, 2)), requires_grad=True)
    with Graph():
        gated, _ = sel.soft_select(fine, scores, threshold=0.2)
        backward(ad.sum_(gated))
    assert scores.grad[1] == 0.0
    assert np.array_equal(fine.grad[1], np.zeros(2))
    assert scores.grad[0] == 2.0 and scores.grad[2] == 2.0


def test_fd_grads_through_selection():
    rng = np.random.default_rng(23)
    m, k, f, dsel = 7, 3, 4, 3
    validity = np.array([True] * 6 + [False])

    def make():
        return dict(
            w=Tensor(rng.normal(size=(dsel, f)), requires_grad=True),
            b=Tensor(rng.normal(scale=0.3, size=dsel), requires_grad=True),
            coarse=Tensor(rng.normal(size=(m, f)), requires_grad=True),
            cand=Tensor(rng.normal(size=f), requires_grad=True),
            fine=Tensor(rng.normal(size=(m, 2, 3, f)), requires_grad=True),
            rv=Tensor(rng.normal(size=(k, 2, 3, f))),
            rw=Tensor(rng.normal(size=k)),
        )

    def forward(xs):
        params = sel.SelectorParams(weight=xs["w"], bias=xs["b"])
        hp = sel.project(xs["coarse"], params)
        cp = sel.project(xs["cand"], params)
        chosen = sel.select_history(xs["fine"], hp, cp, validity, k,
                                    threshold=0.1)
        return ad.add(ad.sum_(ad.mul(chosen.fine, xs["rv"])),
                      ad.sum_(ad.mul(chosen.weights, xs["rw"])))

    xs = sample_safe(make, forward)

    def build():
        return forward(xs)

    with Graph():
        backward(build())
    for name in ("w", "b", "coarse", "cand", "fine"):
        p = xs[name]
        fd = fd_grad(lambda: float(build().data), p.data)
        assert rel_err(p.grad, fd) < 1e-4, name
