import numpy as np
import pytest

from kdsm.errors import InvalidInputError, StateError
from kdsm.neural import (AdamState, Architecture, ScoreNetwork, adam_step, ema_update, forward,
                         init_network, load_checkpoint, loss_and_grad, save_checkpoint)


def tiny(dropout=False, d=3, blocks=1, width=8, seed=0):
    rates = (0.2, 0.1) if dropout else (0.0, 0.0)
    arch = Architecture(input_dim=d, n_blocks=blocks, main_width=width, hidden_width=width,
                        dropout1=rates[0], dropout2=rates[1])
    net = init_network(arch, seed)
    # non-zero head so every layer receives gradient
    net.params[:] = np.random.default_rng(seed + 100).normal(0.0, 0.5, net.params.size)
    return net


def numeric_grad(net, x, eps, h=1e-6, rng_seed=None):
    g = np.zeros_like(net.params)
    for i in range(net.params.size):
        old = net.params[i]
        net.params[i] = old + h
        up, _ = loss_and_grad(net, x, eps, train=rng_seed is not None, rng=rng_seed)
        net.params[i] = old - h
        down, _ = loss_and_grad(net, x, eps, train=rng_seed is not None, rng=rng_seed)
        net.params[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def test_param_count_default_architecture():
    arch = Architecture(input_dim=4)
    assert arch.n_params() == 3_156_484
    assert arch.n_params() == sum(int(np.prod(s)) for _, s in arch.layer_shapes())


def test_architecture_validation():
    with pytest.raises(InvalidInputError):
        Architecture(input_dim=0)
    with pytest.raises(InvalidInputError):
        Architecture(input_dim=2, dropout1=1.0)


def test_init_deterministic_and_finite_output():
    arch = Architecture(input_dim=5, n_blocks=2, main_width=32, hidden_width=16)
    a, b = init_network(arch, 7), init_network(arch, 7)
    np.testing.assert_array_equal(a.params, b.params)
    assert not np.array_equal(a.params, init_network(arch, 8).params)
    out = forward(a, np.random.default_rng(0).standard_normal((10, 5)))
    assert np.all(np.isfinite(out))
    # zero head: the initial output is exactly zero
    np.testing.assert_array_equal(out, 0.0)


def test_forward_modes():
    net = tiny(dropout=True, blocks=2)
    x = np.random.default_rng(1).standard_normal((6, 3))
    np.testing.assert_array_equal(forward(net, x), forward(net, x))
    assert not np.array_equal(forward(net, x, train=True, rng=0), forward(net, x))
    with pytest.raises(InvalidInputError):
        forward(net, x, train=True)
    no_drop = tiny(dropout=False, blocks=2)
    np.testing.assert_array_equal(forward(no_drop, x, train=True, rng=3), forward(no_drop, x))


def test_forward_batch_equals_rows():
    net = tiny(blocks=2, width=16)
    x = np.random.default_rng(2).standard_normal((9, 3))
    rows = np.vstack([forward(net, x[i:i + 1]) for i in range(9)])
    np.testing.assert_allclose(forward(net, x), rows, rtol=1e-13, atol=1e-14)


def test_forward_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        forward(tiny(), np.zeros((2, 4)))


@pytest.mark.parametrize("draw", range(5))
def test_gradient_matches_finite_differences(draw):
    net = tiny(seed=draw)
    rng = np.random.default_rng(50 + draw)
    x = rng.standard_normal((7, 3))
    eps = rng.standard_normal((7, 3))
    _, g = loss_and_grad(net, x, eps, train=False)
    assert rel_err(g, numeric_grad(net, x, eps)) < 1e-4


def test_gradient_with_fixed_dropout_mask():
    net = tiny(dropout=True, blocks=2, seed=3)
    rng = np.random.default_rng(9)
    x, eps = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    # an integer seed reproduces the same masks on every call
    _, g = loss_and_grad(net, x, eps, train=True, rng=11)
    assert rel_err(g, numeric_grad(net, x, eps, rng_seed=11)) < 1e-4


def test_loss_zero_when_output_is_minus_eps():
    net = tiny()
    x = np.random.default_rng(4).standard_normal((5, 3))
    eps = -forward(net, x)
    loss, g = loss_and_grad(net, x, eps, train=False)
    assert loss == 0.0
    np.testing.assert_array_equal(g, 0.0)


def test_loss_non_negative_and_initial_value():
    arch = Architecture(input_dim=4, n_blocks=1, main_width=8, hidden_width=8)
    net = init_network(arch, 0)
    eps = np.random.default_rng(5).standard_normal((4000, 4))
    loss, _ = loss_and_grad(net, eps, eps, train=False)
    assert loss >= 0.0
    # zero head: loss = sum ||eps||^2 / (2B), whose mean is d/2
    np.testing.assert_allclose(loss, 0.5 * np.sum(eps ** 2) / 4000)
    assert abs(loss - 2.0) < 0.1


def test_loss_shape_mismatch():
    with pytest.raises(InvalidInputError):
        loss_and_grad(tiny(), np.zeros((3, 3)), np.zeros((2, 3)))


def test_adam_zero_grad_and_determinism():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3)
    adam_step(state, p, np.zeros(3))
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])
    assert state.t == 1

    def run():
        q = np.ones(4)
        s = AdamState.zeros(4, lr=0.01)
        path = []
        for _ in range(200):
            adam_step(s, q, q.copy())
            path.append(0.5 * float(q @ q))
        return np.array(path)

    a, b = run(), run()
    np.testing.assert_array_equal(a, b)
    assert np.all(np.diff(a) < 0)


def test_adam_matches_reference_update():
    rng = np.random.default_rng(6)
    p = rng.standard_normal(5)
    ref = p.copy()
    state = AdamState.zeros(5, lr=1e-3)
    m = v = np.zeros(5)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        adam_step(state, p, g)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-13)


def test_ema_update_limits():
    net = tiny()
    with pytest.raises(StateError):
        ema_update(net, 0.5)
    net.init_ema()
    start = net.ema_params.copy()
    net.params += 1.0
    ema_update(net, 1.0)
    np.testing.assert_array_equal(net.ema_params, start)
    ema_update(net, 0.0)
    np.testing.assert_array_equal(net.ema_params, net.params)


def test_ema_geometric_contraction():
    net = tiny()
    net.init_ema()
    net.params += 2.0
    gap0 = np.linalg.norm(net.ema_params - net.params)
    for _ in range(10):
        ema_update(net, 0.9)
    gap = np.linalg.norm(net.ema_params - net.params)
    np.testing.assert_allclose(gap, gap0 * 0.9 ** 10, rtol=1e-10)
    assert net.ema_params.shape == net.params.shape


def test_checkpoint_round_trip(tmp_path):
    net = tiny(blocks=2)
    net.init_ema()
    net.ema_params *= 0.5
    path = tmp_path / "ckpt.bin"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.arch == net.arch
    assert back.checksum() == net.checksum()
    save_checkpoint(back, tmp_path / "again.bin")
    assert path.read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(InvalidInputError):
        load_checkpoint(path)


def test_network_rejects_wrong_lengths():
    arch = Architecture(input_dim=2, n_blocks=1, main_width=4, hidden_width=4)
    with pytest.raises(InvalidInputError):
        ScoreNetwork(arch, np.zeros(3))
    with pytest.raises(InvalidInputError):
        ScoreNetwork(arch, np.zeros(arch.n_params()), np.zeros(2))
