import numpy as np
import pytest

from qmem.autodiff import ParamStore, Tensor, gradcheck, sum_, square
from qmem.hopfield import HopfieldSpec, attention_weights, hopfield_assoc, hopfield_stack, init_hopfield, \
    take_last


def brute_retrieve(R, Y, beta):
    """Loop oracle: each state pattern returns the softmax(beta * similarity)-weighted sum of stored rows."""
    out = np.zeros_like(R)
    for b in range(R.shape[0]):
        for i in range(R.shape[1]):
            sims = [beta * float(np.dot(R[b, i], Y[b, j])) for j in range(Y.shape[1])]
            m = max(sims)
            w = [np.exp(s - m) for s in sims]
            z = sum(w)
            for j in range(Y.shape[1]):
                out[b, i] += (w[j] / z) * Y[b, j]
    return out


def bare_spec(**kw):
    """Projection-free single-head retrieval: softmax(beta R Y^T) Y."""
    return HopfieldSpec(identity_projections=True, n_heads=1, **kw)


def full_params(spec, seed=0, prefix="hopfield"):
    p = ParamStore(seed)
    init_hopfield(spec, p, prefix)
    return p


def test_bare_matches_brute_force():
    rng = np.random.default_rng(0)
    R, Y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4))
    spec = bare_spec(hidden_size=4, beta=0.7)
    np.testing.assert_allclose(hopfield_assoc(spec, None, R, Y).data, brute_retrieve(R, Y, 0.7), atol=1e-13)


def test_large_beta_retrieves_stored_pattern():
    Y = np.eye(4)[None]
    R = np.eye(4)[None, 1:2]
    spec = bare_spec(hidden_size=4, beta=50.0)
    out = hopfield_assoc(spec, None, R, Y).data[0, 0]
    oracle = brute_retrieve(R, Y, 50.0)[0, 0]
    np.testing.assert_allclose(out, oracle, atol=1e-14)
    assert out @ Y[0, 1] / np.linalg.norm(out) > 0.999


def test_beta_zero_returns_mean():
    rng = np.random.default_rng(1)
    R, Y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 6, 4))
    out = hopfield_assoc(bare_spec(hidden_size=4, beta=0.0), None, R, Y).data
    np.testing.assert_allclose(out, np.broadcast_to(Y.mean(axis=1, keepdims=True), out.shape), atol=1e-9)


def test_identity_projections_equal_simplified_form():
    rng = np.random.default_rng(2)
    R, Y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4))
    full = HopfieldSpec(hidden_size=4, n_heads=1, beta=0.9)
    p = full_params(full)
    for _, t in p.items():
        t.data[...] = np.eye(4)
    a = hopfield_assoc(full, p, R, Y).data
    b = hopfield_assoc(bare_spec(hidden_size=4, beta=0.9), None, R, Y).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_rows_stochastic(heads):
    rng = np.random.default_rng(heads)
    spec = HopfieldSpec(hidden_size=8, n_heads=heads)
    p = full_params(spec, heads)
    A = attention_weights(spec, p, rng.normal(size=(3, 2, 8)), rng.normal(size=(3, 5, 8)))
    assert A.shape == (3, heads, 2, 5)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(-1), 1.0, atol=1e-9)


def test_multihead_matches_per_head_oracle():
    rng = np.random.default_rng(7)
    spec = HopfieldSpec(hidden_size=6, n_heads=2, beta=0.6)
    p = full_params(spec, 7)
    R, Y = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 4, 6))
    W = {k: p[f"hopfield.0.{k}.weight"].data for k in ("w_q", "w_k", "w_v", "w_o")}
    q, k, v = R @ W["w_q"], Y @ W["w_k"], Y @ W["w_v"]
    heads = [brute_weighted(q[..., s], k[..., s], v[..., s], 0.6) for s in (slice(0, 3), slice(3, 6))]
    oracle = np.concatenate(heads, axis=-1) @ W["w_o"]
    np.testing.assert_allclose(hopfield_assoc(spec, p, R, Y).data, oracle, atol=1e-12)


def brute_weighted(q, k, v, beta):
    out = np.zeros(q.shape[:-1] + (v.shape[-1],))
    for b in range(q.shape[0]):
        for i in range(q.shape[1]):
            s = beta * k[b] @ q[b, i]
            w = np.exp(s - s.max())
            out[b, i] = (w / w.sum()) @ v[b]
    return out


def test_retrieval_sharpens_with_beta():
    rng = np.random.default_rng(3)
    Y = np.linalg.qr(rng.normal(size=(6, 6)))[0][:4][None]  # 4 orthonormal rows
    for j in range(4):
        noise = rng.normal(size=6)
        noise *= 0.1 / np.linalg.norm(noise) * rng.uniform()
        R = (Y[0, j] + noise)[None, None]
        w = [attention_weights(bare_spec(hidden_size=6, beta=b), None, R, Y)[0, 0, 0, j] for b in (1, 4, 16)]
        assert w[0] < w[1] < w[2]


def test_convex_hull_bound():
    rng = np.random.default_rng(4)
    for beta in (0.1, 1.0, 10.0):
        R, Y = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 6, 5))
        out = hopfield_assoc(bare_spec(hidden_size=5, beta=beta), None, R, Y).data
        lo, hi = Y.min(axis=1, keepdims=True), Y.max(axis=1, keepdims=True)
        assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


def test_width_and_empty_errors():
    spec = bare_spec(hidden_size=4)
    with pytest.raises(ValueError):
        hopfield_assoc(spec, None, np.ones((1, 2, 3)), np.ones((1, 2, 3)))
    with pytest.raises(ValueError):
        hopfield_assoc(spec, None, np.ones((1, 2, 4)), np.ones((1, 0, 4)))
    with pytest.raises(ValueError):
        HopfieldSpec(hidden_size=6, n_heads=4)


def test_default_beta_is_scaled_dot():
    assert HopfieldSpec(hidden_size=64, n_heads=2).effective_beta == pytest.approx(1 / np.sqrt(32))


# ---------------------------------------------------------------- stack / take_last

def test_stack_one_layer_is_one_assoc():
    spec = HopfieldSpec(hidden_size=4, n_heads=2, n_layers=1)
    p = full_params(spec, 1, "h")
    X = np.random.default_rng(1).normal(size=(2, 3, 4))
    np.testing.assert_array_equal(hopfield_stack(spec, p, X, "h").data,
                                  hopfield_assoc(spec, p, X, X, "h").data)


def test_stack_layers_have_own_parameters():
    spec = HopfieldSpec(hidden_size=4, n_heads=1, n_layers=3)
    p = full_params(spec, 2, "h")
    assert len(p) == 12
    X = np.random.default_rng(2).normal(size=(1, 3, 4))
    h = X
    for layer in range(3):
        h = hopfield_assoc(spec, p, h, h, "h", layer).data
    np.testing.assert_allclose(hopfield_stack(spec, p, X, "h").data, h, atol=0)


def test_single_pattern_retrieval_is_identity():
    X = np.random.default_rng(5).normal(size=(3, 1, 4))
    spec = bare_spec(hidden_size=4)
    np.testing.assert_allclose(hopfield_stack(spec, None, X).data, X, atol=1e-15)
    full = HopfieldSpec(hidden_size=4, n_heads=2)
    p = full_params(full)
    vo = X @ p["hopfield.0.w_v.weight"].data @ p["hopfield.0.w_o.weight"].data
    np.testing.assert_allclose(hopfield_stack(full, p, X).data, vo, atol=1e-14)


def test_bare_permutation_equivariant():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(1, 3, 4))
    perm = rng.permutation(3)
    spec = HopfieldSpec(hidden_size=4, n_heads=1, n_layers=2, identity_projections=True)
    a = hopfield_stack(spec, None, X).data
    b = hopfield_stack(spec, None, X[:, perm]).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_take_last():
    X = np.arange(18.0).reshape(2, 3, 3)
    np.testing.assert_array_equal(take_last(X).data, X[:, 2])
    np.testing.assert_array_equal(take_last(X[:, :1]).data, X[:, 0])
    with pytest.raises(ValueError):
        take_last(np.zeros((2, 0, 3)))


def test_take_last_gradient():
    x0 = np.random.default_rng(0).normal(size=(2, 3, 2))
    X = Tensor(x0, requires_grad=True)
    sum_(take_last(X)).backward()
    eps, fd = 1e-4, np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        e = np.zeros_like(x0)
        e[idx] = eps
        fd[idx] = ((x0 + e)[:, -1].sum() - (x0 - e)[:, -1].sum()) / (2 * eps)
    np.testing.assert_allclose(X.grad, fd, atol=1e-10)
    assert np.all(X.grad[:, :-1] == 0) and np.all(X.grad[:, -1] == 1)


@pytest.mark.parametrize("seed", range(20))
def test_module_gradcheck(seed):
    rng = np.random.default_rng(seed)
    spec = HopfieldSpec(hidden_size=4, n_heads=2, n_layers=2)
    p = full_params(spec, seed, "h")
    p.add("x", rng.normal(size=(1, 3, 4)))
    rep = gradcheck(lambda s: sum_(square(take_last(hopfield_stack(spec, s, s["x"], "h")))), p)
    assert rep.passed, rep
