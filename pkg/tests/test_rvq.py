"""Quantization against brute-force oracles; EMA arithmetic; ablation routes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invgraph import autodiff as ad
from invgraph import rvq
from invgraph.errors import ContractError


def _book(codes, eta=0.99):
    codes = np.asarray(codes, dtype=np.float64)
    return rvq.Codebook(
        codes=codes.copy(),
        counts=np.ones(len(codes)),
        sums=codes.copy(),
        eta=eta,
        usage=np.zeros(len(codes), dtype=np.int64),
    )


def _scan_oracle(codes, rows):
    """Exhaustive nearest-neighbor scan, strict < so ties keep the lowest index."""
    out = []
    for r in rows:
        best, best_d = 0, np.sum((r - codes[0]) ** 2)
        for k in range(1, len(codes)):
            d = np.sum((r - codes[k]) ** 2)
            if d < best_d:
                best, best_d = k, d
        out.append(best)
    return np.array(out, dtype=np.int64)


def test_two_code_example():
    book = _book([[0.0, 0.0], [1.0, 1.0]])
    res = rvq.quantize(book, ad.Tensor(np.array([[0.9, 0.8]])))
    assert res.assignments.tolist() == [1]
    np.testing.assert_allclose(res.h_prime.data, [[1.9, 1.8]], rtol=0, atol=0)
    # distances behind the pick: 0.224 < 1.204
    assert np.sqrt(0.1**2 + 0.2**2) < np.sqrt(0.9**2 + 0.8**2)


def test_exact_code_hit_doubles_row_and_zero_commitment():
    book = _book([[0.5, -0.25], [2.0, 4.0]])
    res = rvq.quantize(book, ad.Tensor(np.array([[0.5, -0.25]])))
    np.testing.assert_array_equal(res.h_prime.data, [[1.0, -0.5]])
    assert res.commitment.item() == 0.0


def test_tie_resolves_to_lowest_index():
    # codes 0 and 3 equidistant from h by construction
    book = _book([[2.0, 1.0], [9.0, 9.0], [-9.0, 9.0], [0.0, 1.0]])
    res = rvq.quantize(book, ad.Tensor(np.array([[1.0, 1.0]])))
    assert res.assignments.tolist() == [0]


@given(st.integers(0, 1000))
@settings(max_examples=30)
def test_assignments_match_scan_oracle(seed):
    rng = np.random.default_rng(seed)
    codes = rng.normal(size=(32, 8))
    rows = rng.normal(size=(100, 8))
    got = rvq.nearest_codes(codes, rows)
    np.testing.assert_array_equal(got, _scan_oracle(codes, rows))


def test_ema_count_update_arithmetic():
    book = _book([[0.0], [5.0]], eta=0.9)
    rows = np.array([[1.0], [2.0]])
    rvq.ema_update(book, rows, np.array([0, 0]))
    np.testing.assert_allclose(book.counts[0], 1 * 0.9 + 2 * 0.1, rtol=1e-15)


def test_ema_sum_update_arithmetic():
    book = _book([[0.0, 0.0], [5.0, 5.0]], eta=0.9)
    book.sums = np.zeros((2, 2))
    rows = np.array([[1.0, 0.0], [0.0, 1.0]])
    rvq.ema_update(book, rows, np.array([0, 0]))
    np.testing.assert_allclose(book.sums[0], [0.1, 0.1], rtol=1e-15)
    np.testing.assert_array_equal(book.codes[0], book.sums[0] / max(book.counts[0], rvq.EPS_DEN))


def test_unassigned_codes_decay_geometrically():
    # eta = 0.5 keeps every intermediate value exactly representable
    book = _book([[1.0], [3.0]], eta=0.5)
    book.counts = np.array([4.0, 8.0])
    for _ in range(5):
        rvq.ema_update(book, np.zeros((0, 1)), np.zeros(0, dtype=np.int64))
    np.testing.assert_array_equal(book.counts, [4.0 * 0.5**5, 8.0 * 0.5**5])


def test_codebook_invariant_after_every_step():
    rng = np.random.default_rng(3)
    book = rvq.init_codebook(rng.normal(size=(6, 4)), size=10, eta=0.97)
    for step in range(20):
        rows = rng.normal(size=(17, 4))
        res = rvq.quantize(book, ad.Tensor(rows))
        rvq.ema_update(book, rows, res.assignments)
        np.testing.assert_array_equal(book.codes, book.sums / np.maximum(book.counts, rvq.EPS_DEN)[:, None])
    assert book.usage.sum() == 20 * 17


def test_init_cycles_first_rows():
    rows = np.arange(6.0).reshape(3, 2)
    book = rvq.init_codebook(rows, size=5, eta=0.99)
    np.testing.assert_array_equal(book.codes, rows[[0, 1, 2, 0, 1]])
    np.testing.assert_array_equal(book.counts, np.ones(5))
    np.testing.assert_array_equal(book.sums, book.codes)


def test_quantize_contract_errors():
    book = _book([[0.0, 0.0]])
    with pytest.raises(ContractError, match="codebook"):
        rvq.quantize(rvq.Codebook(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), 0.9, np.zeros(0, np.int64)), ad.Tensor(np.ones((1, 2))))
    with pytest.raises(ContractError, match="shape"):
        rvq.quantize(book, ad.Tensor(np.ones((1, 3))))
    with pytest.raises(ContractError):
        rvq.init_codebook(np.ones((2, 2)), size=0, eta=0.9)
    with pytest.raises(ContractError):
        rvq.apply_rvq(book, ad.Tensor(np.ones((1, 2))), mode="vq_lite")


def test_no_vq_is_bitwise_identity_and_leaves_book_alone():
    book = _book([[1.0, 2.0]])
    before = book.codes.copy()
    h = ad.Tensor(np.random.default_rng(0).normal(size=(4, 2)))
    res = rvq.apply_rvq(book, h, mode="no_vq")
    assert res.h_prime is h
    assert res.assignments is None
    assert res.commitment.item() == 0.0
    np.testing.assert_array_equal(book.codes, before)


def test_no_residual_forward_is_the_code_rows():
    book = _book([[0.25, 0.5], [1.5, -0.75]])
    h = ad.Tensor(np.array([[0.25, 0.5], [1.25, -0.5]]), requires_grad=True)
    res = rvq.apply_rvq(book, h, mode="no_residual")
    np.testing.assert_array_equal(res.h_prime.data, book.codes[[0, 1]])
    with ad.Tape():
        res = rvq.apply_rvq(book, h, mode="no_residual")
        grads = ad.backward(ad.sum_all(res.h_prime))
    np.testing.assert_array_equal(grads[h], np.ones((2, 2)))


def test_full_minus_no_residual_recovers_h_exactly():
    # dyadic values make every addition exact, so the decomposition is bitwise
    book = _book([[0.75, -1.25], [2.5, 0.5]])
    h = ad.Tensor(np.array([[1.25, 0.25], [-0.5, 1.75]]))
    full = rvq.apply_rvq(book, h, mode="full")
    st = rvq.apply_rvq(book, h, mode="no_residual")
    np.testing.assert_array_equal(full.h_prime.data - st.h_prime.data, h.data)


def test_residual_gradient_carries_commitment_term():
    book = _book([[1.0, 1.0], [-2.0, 3.0]])
    h_val = np.array([[0.9, 1.2], [-1.7, 2.8]])
    w = np.array([[0.3, -0.7], [1.1, 0.4]])
    lam = 0.25
    h = ad.Tensor(h_val, requires_grad=True)
    with ad.Tape():
        res = rvq.quantize(book, h)
        loss = ad.sum_all(ad.mul(res.h_prime, ad.Tensor(w))) + res.commitment * lam
        grads = ad.backward(loss)
    expected = w + 2.0 * lam * (h_val - book.codes[res.assignments])
    np.testing.assert_allclose(grads[h], expected, rtol=1e-14)

    def f(x):
        r = rvq.quantize(book, x)
        return ad.sum_all(ad.mul(r.h_prime, ad.Tensor(w))) + r.commitment * lam

    assert ad.grad_check(f, h_val) < 1e-6  # rows sit far from cell boundaries


def test_quantize_is_pure_given_frozen_book():
    rng = np.random.default_rng(5)
    book = rvq.init_codebook(rng.normal(size=(4, 3)), size=4, eta=0.9)
    frozen = rvq.copy_codebook(book)
    rows = rng.normal(size=(50, 3))
    first = rvq.quantize(frozen, ad.Tensor(rows)).assignments
    rvq.ema_update(book, rows, first)
    second = rvq.quantize(frozen, ad.Tensor(rows)).assignments
    np.testing.assert_array_equal(first, second)
