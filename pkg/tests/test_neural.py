import itertools
import math

import numpy as np
import pytest
import torch

from neural import (AttentionParams, CTCInadmissibleError, Linear, NonDeterministicLossError,
                    NonFiniteGradientError, OptimizerState, ParamStore, ShapeError, adam_step, conv1d, ctc_loss,
                    grad_check, linear, min_ctc_length, multihead_attention, sinusoidal_pe)
from neural.layers import EncoderStack


def _attention_params(f, seed=0):
    g = torch.Generator().manual_seed(seed)
    mats = [torch.randn(f, f, generator=g, dtype=torch.float64) for _ in range(4)]
    biases = [torch.randn(f, generator=g, dtype=torch.float64) for _ in range(4)]
    return AttentionParams(mats[0], biases[0], mats[1], biases[1], mats[2], biases[2], mats[3], biases[3])


def _attention_oracle(query, kv, heads, p):
    n_q, f = query.shape
    hd = f // heads
    q = (query @ p.w_q + p.b_q).numpy()
    k = (kv @ p.w_k + p.b_k).numpy()
    v = (kv @ p.w_v + p.b_v).numpy()
    context = np.zeros((n_q, f))
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        for i in range(n_q):
            scores = np.array([q[i, cols] @ k[j, cols] / math.sqrt(hd) for j in range(kv.shape[0])])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            context[i, cols] = sum(w[j] * v[j, cols] for j in range(kv.shape[0]))
    return context @ p.w_o.numpy() + p.b_o.numpy()


def test_linear_matches_matmul():
    x = torch.arange(6, dtype=torch.float64).reshape(2, 3)
    w = torch.ones(3, 2, dtype=torch.float64)
    b = torch.tensor([1.0, -1.0], dtype=torch.float64)
    np.testing.assert_allclose(linear(x, w, b).numpy(), [[4.0, 2.0], [13.0, 11.0]])


def test_linear_shape_mismatch():
    with pytest.raises(ShapeError):
        linear(torch.zeros(2, 3), torch.zeros(4, 2))


def test_attention_matches_loop_oracle():
    g = torch.Generator().manual_seed(1)
    query = torch.randn(4, 8, generator=g, dtype=torch.float64)
    kv = torch.randn(5, 8, generator=g, dtype=torch.float64)
    p = _attention_params(8)
    out, weights = multihead_attention(query, kv, 2, p, return_weights=True)
    np.testing.assert_allclose(out.numpy(), _attention_oracle(query, kv, 2, p), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(weights.sum(dim=-1).numpy(), np.ones((2, 4)))


def test_attention_single_memory_row():
    g = torch.Generator().manual_seed(2)
    query = torch.randn(3, 4, generator=g, dtype=torch.float64)
    kv = torch.randn(1, 4, generator=g, dtype=torch.float64)
    p = _attention_params(4, seed=3)
    out = multihead_attention(query, kv, 2, p)
    expected = (kv @ p.w_v + p.b_v) @ p.w_o + p.b_o
    np.testing.assert_allclose(out.numpy(), expected.expand(3, 4).numpy(), rtol=1e-12)


def test_attention_head_divisibility():
    p = _attention_params(6)
    with pytest.raises(ShapeError):
        multihead_attention(torch.zeros(2, 6, dtype=torch.float64), torch.zeros(2, 6, dtype=torch.float64), 4, p)


def test_positional_encoding_at_zero():
    pe = sinusoidal_pe([0], 8, dtype=torch.float64)
    np.testing.assert_allclose(pe[0].numpy(), [0, 1, 0, 1, 0, 1, 0, 1])


def test_positional_encoding_odd_dim():
    with pytest.raises(ShapeError):
        sinusoidal_pe([0, 1], 7)


def test_positional_encoding_values():
    pe = sinusoidal_pe([3], 4, dtype=torch.float64)[0].numpy()
    np.testing.assert_allclose(pe, [math.sin(3), math.cos(3), math.sin(3 / 100), math.cos(3 / 100)], rtol=1e-12)


def test_conv1d_identity_and_zero():
    x = torch.randn(6, 3, dtype=torch.float64)
    kernel = torch.zeros(3, 3, 3, dtype=torch.float64)
    kernel[1] = torch.eye(3, dtype=torch.float64)
    np.testing.assert_allclose(conv1d(x, kernel).numpy(), x.numpy())
    np.testing.assert_array_equal(conv1d(x, torch.zeros(3, 3, 2, dtype=torch.float64)).numpy(), np.zeros((6, 2)))


def test_conv1d_matches_loop_oracle():
    g = torch.Generator().manual_seed(4)
    x = torch.randn(5, 2, generator=g, dtype=torch.float64)
    kernel = torch.randn(3, 2, 4, generator=g, dtype=torch.float64)
    bias = torch.randn(4, generator=g, dtype=torch.float64)
    xs, ks = x.numpy(), kernel.numpy()
    expected = np.tile(bias.numpy(), (5, 1))
    for t in range(5):
        for k in range(3):
            src = t + k - 1
            if 0 <= src < 5:
                expected[t] += xs[src] @ ks[k]
    np.testing.assert_allclose(conv1d(x, kernel, bias).numpy(), expected, rtol=1e-12)


def test_conv1d_even_width():
    with pytest.raises(ShapeError):
        conv1d(torch.zeros(4, 2), torch.zeros(2, 2, 2))


def _collapse(path, blank):
    out, previous = [], None
    for s in path:
        if s != previous and s != blank:
            out.append(s)
        previous = s
    return out


def test_ctc_matches_path_enumeration():
    g = torch.Generator().manual_seed(5)
    logits = torch.randn(3, 3, generator=g, dtype=torch.float64)
    probs = torch.softmax(logits, dim=-1).numpy()
    for target in ([0, 1], [1], [0, 0], []):
        total = sum(np.prod([probs[t, s] for t, s in enumerate(path)])
                    for path in itertools.product(range(3), repeat=3) if _collapse(path, 2) == target)
        assert ctc_loss(logits, target).item() == pytest.approx(-math.log(total), rel=1e-9)


def test_ctc_zero_loss_for_certain_alignment():
    logits = torch.full((3, 3), -1e4, dtype=torch.float64)
    logits[0, 0] = logits[1, 2] = logits[2, 1] = 0.0
    assert ctc_loss(logits, [0, 1]).item() == pytest.approx(0.0, abs=1e-9)
    blanks = torch.full((2, 3), -1e4, dtype=torch.float64)
    blanks[:, 2] = 0.0
    assert ctc_loss(blanks, []).item() == pytest.approx(0.0, abs=1e-9)


def test_ctc_inadmissible():
    assert min_ctc_length([1, 1, 2]) == 4
    with pytest.raises(CTCInadmissibleError):
        ctc_loss(torch.zeros(3, 3), [1, 1, 0])


def _single_param_store(value=0.0):
    layer = Linear(1, 1, bias=False)
    with torch.no_grad():
        layer.weight.fill_(value)
    return ParamStore(layer)


def test_adam_first_step():
    store = _single_param_store()
    state = OptimizerState(store, lr=0.1)
    adam_step(store, {'weight': torch.ones(1, 1)}, state)
    assert store['weight'].item() == pytest.approx(-0.1, rel=1e-6)
    assert state.step_count == 1


def test_adam_zero_grad_and_zero_lr():
    store = _single_param_store(0.5)
    adam_step(store, {}, OptimizerState(store, lr=0.1))
    assert store['weight'].item() == pytest.approx(0.5)
    frozen = OptimizerState(store, lr=0.0)
    adam_step(store, {'weight': torch.ones(1, 1)}, frozen)
    assert store['weight'].item() == pytest.approx(0.5)


def test_adam_matches_reference_updates():
    store = _single_param_store(1.0)
    state = OptimizerState(store, lr=0.01)
    grads = [0.5, -1.0, 2.0, 0.1, -0.3]
    p, m, v = 1.0, 0.0, 0.0
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t, g in enumerate(grads, start=1):
        adam_step(store, {'weight': torch.full((1, 1), g)}, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= 0.01 * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert store['weight'].item() == pytest.approx(p, rel=1e-5)


def test_adam_rejects_non_finite():
    store = _single_param_store(0.5)
    with pytest.raises(NonFiniteGradientError):
        adam_step(store, {'weight': torch.full((1, 1), float('nan'))}, OptimizerState(store, lr=0.1))
    assert store['weight'].item() == pytest.approx(0.5)


def test_grad_check_sum_of_squares():
    x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64, requires_grad=True)
    assert grad_check(lambda: (x ** 2).sum(), [x]) < 1e-6


def test_grad_check_constant_loss():
    x = torch.ones(3, dtype=torch.float64, requires_grad=True)
    assert grad_check(lambda: (x * 0).sum() + 1.0, [x]) == 0.0


def test_grad_check_detects_nondeterminism():
    x = torch.ones(2, dtype=torch.float64, requires_grad=True)
    calls = iter(range(100))
    with pytest.raises(NonDeterministicLossError):
        grad_check(lambda: x.sum() + next(calls), [x])


def test_param_store_seeded_init():
    a, b = EncoderStack(8, 2, 1), EncoderStack(8, 2, 1)
    ParamStore(a, 7).initialize()
    ParamStore(b, 7).initialize()
    assert ParamStore(a).equals(ParamStore(b))
    ParamStore(b, 8).initialize()
    assert not ParamStore(a).equals(ParamStore(b))


def test_param_store_snapshot_restore():
    store = ParamStore(EncoderStack(8, 2, 1), 1).initialize()
    snapshot = store.snapshot()
    with torch.no_grad():
        for _, p in store.named():
            p.add_(1.0)
    store.restore(snapshot)
    assert all(torch.equal(p, snapshot[name]) for name, p in store.named())
