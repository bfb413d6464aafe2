import math

import numpy as np
import pytest

from fdiloc.exceptions import DataError, TrainingError
from fdiloc.freqresp import FitConfig, fit_filter
from fdiloc.gnn.checkpoint import load_checkpoint, save_checkpoint
from fdiloc.gnn.layers import (
    Arma1Params,
    ArmaKParams,
    ArmaLayer,
    ChebLayer,
    ChebParams,
    arma1_forward,
    armaK_forward,
    cheb_basis,
    cheb_forward,
)
from fdiloc.gnn.model import bce_grad, bce_loss, build_gnn, build_mlp, model_forward
from fdiloc.gnn.training import TrainConfig, Trainer, train
from fdiloc.grid import build_topology, case_topology
from fdiloc.spectral import IdealFilter, arma_response, spectral_filter, symmetric_eig


def random_graph(n, seed):
    rng = np.random.default_rng(seed)
    w = np.zeros((n, n))
    for i in range(1, n):
        j = rng.integers(0, i)
        w[i, j] = w[j, i] = rng.uniform(0.5, 2.0)
    for _ in range(n):
        i, j = rng.integers(0, n, 2)
        if i != j:
            w[i, j] = w[j, i] = rng.uniform(0.5, 2.0)
    return build_topology(w)


@pytest.fixture(scope="module")
def topo5():
    return random_graph(5, 0)


def scalar_arma(a, b, theta=0.0, T=1):
    return Arma1Params(np.array([[a]]), np.array([[b]]), np.array([theta]), T)


class TestArmaForward:
    def test_zero_alpha(self, topo5, rng):
        x = rng.standard_normal((3, 5, 2))
        p = Arma1Params(np.zeros((4, 4)), rng.standard_normal((2, 4)), rng.standard_normal(4), 7)
        y, _ = arma1_forward(p, topo5.l_modified, x)
        np.testing.assert_allclose(y, x @ p.beta + p.theta, atol=1e-14)

    def test_one_iteration_closed_form(self, topo5, rng):
        x = rng.standard_normal((2, 5, 3))
        p = Arma1Params(rng.standard_normal((2, 2)), rng.standard_normal((3, 2)), rng.standard_normal(2), 1)
        y, _ = arma1_forward(p, topo5.l_modified, x)
        d = x @ p.beta + p.theta
        np.testing.assert_allclose(y, d + (topo5.l_modified @ d) @ p.alpha, atol=1e-12)

    @pytest.mark.parametrize("a", [0.7, -0.6, 0.3])
    def test_geometric_series_oracle(self, topo5, a):
        s = symmetric_eig(topo5.l_modified)
        b = 1.7
        p = scalar_arma(a, b, T=50)
        for i in range(5):
            assert abs(a * s.lam[i]) < 1
            y, _ = arma1_forward(p, topo5.l_modified, s.u[None, :, i : i + 1])
            expected = b / (1 - a * s.lam[i]) * s.u[:, i]
            assert np.abs(y[0, :, 0] - expected).max() <= 1e-6

    def test_linear_in_x(self, topo5, rng):
        p = Arma1Params(0.2 * rng.standard_normal((3, 3)), rng.standard_normal((2, 3)), np.zeros(3), 4)
        x1, x2 = rng.standard_normal((2, 1, 5, 2))
        f = lambda x: arma1_forward(p, topo5.l_modified, x)[0]
        np.testing.assert_allclose(f(2 * x1 - 3 * x2), 2 * f(x1) - 3 * f(x2), atol=1e-12)

    def test_bad_shape(self, topo5):
        with pytest.raises(ValueError):
            arma1_forward(scalar_arma(0.1, 1.0), topo5.l_modified, np.zeros((1, 4, 1)))
        with pytest.raises(ValueError):
            scalar_arma(0.1, 1.0, T=0)

    def test_stack_mean(self, topo5, rng):
        x = rng.standard_normal((2, 5, 2))
        stacks = [
            Arma1Params(0.3 * rng.standard_normal((3, 3)), rng.standard_normal((2, 3)), rng.standard_normal(3), 3)
            for _ in range(3)
        ]
        one = [arma1_forward(s, topo5.l_modified, x)[0] for s in stacks]
        np.testing.assert_allclose(armaK_forward(ArmaKParams(stacks[:1]), topo5.l_modified, x)[0], one[0], atol=0)
        twin = armaK_forward(ArmaKParams([stacks[0], stacks[0]]), topo5.l_modified, x)[0]
        np.testing.assert_allclose(twin, one[0], atol=1e-12)
        np.testing.assert_allclose(armaK_forward(ArmaKParams(stacks), topo5.l_modified, x)[0], sum(one) / 3, atol=1e-12)

    def test_mismatched_stacks(self):
        with pytest.raises(ValueError):
            ArmaKParams([scalar_arma(0.1, 1.0, T=2), scalar_arma(0.1, 1.0, T=3)])


class TestChebForward:
    def test_order_zero(self, topo5, rng):
        x = rng.standard_normal((2, 5, 2))
        p = ChebParams(rng.standard_normal((1, 2, 3)))
        np.testing.assert_allclose(cheb_forward(p, topo5.l_scaled, x)[0], x @ p.coeffs[0], atol=1e-14)

    def test_spectral_oracle(self, topo5, rng):
        s = symmetric_eig(topo5.l)
        a = rng.standard_normal(3)
        p = ChebParams(a.reshape(3, 1, 1))
        x = rng.standard_normal(5)
        y, _ = cheb_forward(p, topo5.l_scaled, x[None, :, None])
        h = lambda lam: np.polynomial.chebyshev.chebval(2 * lam / topo5.lambda_max - 1, a)
        assert np.abs(y[0, :, 0] - spectral_filter(s, h, x)).max() <= 1e-8

    def test_second_term(self, topo5, rng):
        x = rng.standard_normal((1, 5, 2))
        terms = cheb_basis(topo5.l_scaled, x, 3)
        ls = topo5.l_scaled
        np.testing.assert_allclose(terms[2][0], 2 * ls @ (ls @ x[0]) - x[0], atol=1e-12)


class TestEquivariance:
    def test_permutation(self, topo5, rng):
        perm = rng.permutation(5)
        pm = np.eye(5)[perm]
        x = rng.standard_normal((2, 5, 2))
        xp = x[:, perm]
        arma = ArmaKParams(
            [Arma1Params(0.3 * rng.standard_normal((3, 3)), rng.standard_normal((2, 3)), rng.standard_normal(3), 4)]
            * 2
        )
        lm = topo5.l_modified
        y, _ = armaK_forward(arma, lm, x)
        yp, _ = armaK_forward(arma, pm @ lm @ pm.T, xp)
        assert np.abs(yp - y[:, perm]).max() <= 1e-10
        cheb = ChebParams(rng.standard_normal((4, 2, 3)), rng.standard_normal(3))
        ls = topo5.l_scaled
        y, _ = cheb_forward(cheb, ls, x)
        yp, _ = cheb_forward(cheb, pm @ ls @ pm.T, xp)
        assert np.abs(yp - y[:, perm]).max() <= 1e-10


# -- gradients ------------------------------------------------------------


def fd_check(model, x, y, h=1e-5):
    model.loss_and_grad(x, y)
    grads = {k: g.copy() for k, g in model.named_grads().items()}
    worst = 0.0
    for name, arr in model.named_params().items():
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            lp = bce_loss(model.forward(x), y)
            arr[i] = old - h
            lm = bce_loss(model.forward(x), y)
            arr[i] = old
            num[i] = (lp - lm) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, np.abs(num - grads[name]).max() / scale)
    return worst


def fd_batch(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, n, 2))
    y = rng.integers(0, 2, (4, n + 1)).astype(float)
    y[:, -1] = y[:, :-1].max(axis=1)
    return x, y


@pytest.mark.parametrize(
    "kind",
    ["arma", "arma-unshared", "arma-iter", "cheb", "mlp"],
)
def test_finite_difference_gradients(topo5, kind):
    if kind == "mlp":
        model = build_mlp(5, layers=2, units=6, seed=1)
    elif kind == "cheb":
        model = build_gnn("cheb", topo5.l_scaled, 5, layers=2, units=4, K=3, seed=1)
    else:
        model = build_gnn(
            "arma", topo5.l_modified, 5, layers=2, units=4, K=2, T=3, seed=1,
            share_weights=kind != "arma-unshared", iter_activation=kind == "arma-iter",
        )
        # larger alpha so the recursion path carries real weight
        for layer in model.layers:
            if isinstance(layer, ArmaLayer):
                layer.alpha *= 4
                layer.theta[...] = 0.1
    x, y = fd_batch(5, 2)
    assert fd_check(model, x, y) <= 1e-4


def test_zero_loss_batch_has_zero_gradients(topo5):
    model = build_gnn("arma", topo5.l_modified, 5, layers=2, units=4, seed=0)
    model.layers[-1].bias[...] = 40.0  # every probability saturates at 1
    x, _ = fd_batch(5, 0)
    y = np.ones((4, 6))
    loss = model.loss_and_grad(x, y)
    assert loss <= 1e-6
    assert all(np.abs(g).max() <= 1e-8 for g in model.named_grads().values())


def test_dead_relu_blocks_first_layer(topo5):
    model = build_gnn("cheb", topo5.l_scaled, 5, layers=2, units=4, seed=0)
    model.layers[0].bias[...] = -1e3
    x, y = fd_batch(5, 1)
    model.loss_and_grad(x, y)
    g = model.named_grads()
    assert np.all(g["0.cheb.coeffs"] == 0) and np.all(g["0.cheb.bias"] == 0)


def test_max_tie_goes_to_first_node(topo5):
    model = build_gnn("arma", topo5.l_modified, 5, layers=2, units=4, seed=0)
    for v in model.named_params().values():
        v[...] = 0
    p = model.forward(np.zeros((1, 5, 2)))
    d = np.zeros((1, 6))
    d[0, -1] = 1.0
    model.backward(d)
    g = model.named_grads()["4.node_dense.bias"]
    np.testing.assert_array_equal(g, [0.25, 0, 0, 0, 0])
    np.testing.assert_array_equal(p, 0.5)


# -- model output and loss --------------------------------------------------


class TestModelOutput:
    def test_zero_weights(self, topo5):
        for model in (build_gnn("cheb", topo5.l_scaled, 5, seed=3), build_mlp(5, seed=3)):
            for v in model.named_params().values():
                v[...] = 0
            nodes, s = model_forward(model, np.ones((5, 2)))
            np.testing.assert_array_equal(nodes, 0.5)
            assert s == 0.5

    def test_grid_score_is_max(self, topo5, rng):
        model = build_gnn("arma", topo5.l_modified, 5, seed=4)
        p = model.predict_proba(rng.standard_normal((20, 5, 2)))
        np.testing.assert_array_equal(p[:, -1], p[:, :-1].max(axis=1))

    def test_last_graph_layer_has_one_channel(self, topo5):
        model = build_gnn("arma", topo5.l_modified, 5, layers=3, units=16, K=2, T=4)
        graph = [l for l in model.layers if isinstance(l, (ArmaLayer, ChebLayer))]
        assert [l.c_out for l in graph] == [16, 16, 1]

    def test_unknown_family(self, topo5):
        with pytest.raises(ValueError):
            build_gnn("gcn", topo5.l, 5)


class TestBce:
    def test_exact_labels(self):
        y = np.array([[0, 1, 1, 0.0]])
        assert bce_loss(y, y) <= 1e-6

    def test_half(self):
        assert bce_loss(np.full((3, 4), 0.5), np.eye(3, 4)) == pytest.approx(math.log(2))

    def test_monotone(self):
        y = np.array([[1.0, 0.0, 1.0]])
        p = np.array([[0.2, 0.3, 0.9]])
        q = p.copy()
        q[0, 0] = 0.6
        assert bce_loss(q, y) < bce_loss(p, y)

    def test_gradient_matches_loss(self, rng):
        p = rng.uniform(0.05, 0.95, (3, 4))
        y = rng.integers(0, 2, (3, 4)).astype(float)
        h = 1e-7
        e = np.zeros_like(p)
        e[1, 2] = h
        num = (bce_loss(p + e, y) - bce_loss(p - e, y)) / (2 * h)
        assert bce_grad(p, y)[1, 2] == pytest.approx(num, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros((1, 3)), np.zeros((1, 4)))


# -- training -----------------------------------------------------------------


def separable(n_samples=10, seed=0):
    topo = build_topology(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, 3, 2))
    y = np.zeros((n_samples, 4))
    y[:, :3] = x[:, :, 0] > 0.3
    y[:, 3] = y[:, :3].max(axis=1)
    return topo, x, y


class TestTraining:
    @pytest.mark.parametrize("family", ["arma", "cheb"])
    def test_overfits_tiny_set(self, family):
        topo, x, y = separable()
        op = topo.l_modified if family == "arma" else topo.l_scaled
        model = build_gnn(family, op, 3, layers=2, units=8, seed=0)
        cfg = TrainConfig(lr=1e-2, batch_size=10, max_epochs=200, patience=200)
        _, state = train(model, (x, y), config=cfg)
        assert state.history[-1].train_loss < 0.01
        assert state.epoch <= 200

    def test_patience_restores_best(self):
        topo, x, y = separable(40)
        _, xv, yv = separable(40, seed=9)
        yv = 1 - yv  # unlearnable validation target
        model = build_gnn("cheb", topo.l_scaled, 3, layers=2, units=8, seed=0)
        cfg = TrainConfig(lr=1e-2, batch_size=8, max_epochs=256, patience=16)
        model, state = train(model, (x, y), (xv, yv), cfg)
        assert state.stopped and state.epoch < 256
        assert state.epoch - state.best_epoch == 16
        for k, v in model.named_params().items():
            np.testing.assert_array_equal(v, state.best_params[k])

    def test_deterministic(self):
        topo, x, y = separable(30)
        runs = []
        for _ in range(2):
            model = build_gnn("arma", topo.l_modified, 3, layers=2, units=4, seed=2)
            train(model, (x, y), config=TrainConfig(batch_size=8, max_epochs=15, seed=5))
            runs.append(model.copy_params())
        for k in runs[0]:
            assert np.array_equal(runs[0][k], runs[1][k])

    def test_resume_matches_uninterrupted(self, tmp_path):
        topo, x, y = separable(30)
        _, xv, yv = separable(12, seed=3)
        cfg = TrainConfig(batch_size=8, max_epochs=12, seed=1)
        full = build_gnn("arma", topo.l_modified, 3, layers=2, units=4, seed=2)
        tr = Trainer(full, cfg)
        tr.run(x, y, xv, yv)
        tr.finish()

        part = build_gnn("arma", topo.l_modified, 3, layers=2, units=4, seed=2)
        t1 = Trainer(part, cfg)
        t1.run(x, y, xv, yv, epochs=5)
        t1.finish()
        save_checkpoint(tmp_path / "m", part, t1)
        resumed, t2 = load_checkpoint(tmp_path / "m", with_trainer=True)
        t2.run(x, y, xv, yv)
        t2.finish()
        assert [r.val_loss for r in t2.state.history] == [r.val_loss for r in tr.state.history]
        for k, v in full.named_params().items():
            assert np.array_equal(v, resumed.named_params()[k])

    def test_nan_aborts(self):
        topo, x, y = separable()
        x = x.copy()
        x[0, 0, 0] = np.nan
        model = build_gnn("cheb", topo.l_scaled, 3, seed=0)
        with pytest.raises(TrainingError, match="epoch 1"):
            train(model, (x, y), config=TrainConfig(max_epochs=2))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(lr=0).validate()


class TestCheckpoint:
    @pytest.mark.parametrize("family", ["arma", "cheb", "mlp"])
    def test_round_trip(self, topo5, tmp_path, rng, family):
        if family == "mlp":
            model = build_mlp(5, seed=1)
        else:
            op = topo5.l_modified if family == "arma" else topo5.l_scaled
            model = build_gnn(family, op, 5, seed=1, share_weights=False) if family == "arma" else build_gnn(family, op, 5, seed=1)
        save_checkpoint(tmp_path / "m", model)
        back = load_checkpoint(tmp_path / "m.ckpt")
        x = rng.standard_normal((6, 5, 2))
        assert np.array_equal(back.predict_proba(x), model.predict_proba(x))
        assert back.descriptor() == model.descriptor()

    def test_corrupt(self, topo5, tmp_path):
        model = build_gnn("cheb", topo5.l_scaled, 5)
        path = save_checkpoint(tmp_path / "m", model)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "m")

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "nope")

    def test_no_trainer_state(self, topo5, tmp_path):
        save_checkpoint(tmp_path / "m", build_mlp(5))
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "m", with_trainer=True)


def test_trained_arma1_matches_rational_response(case14):
    topo = case_topology(case14)
    s = symmetric_eig(topo.l)
    cfg = FitConfig(inputs=256, restarts=1, arma_T=50, max_epochs=300)
    res = fit_filter("arma1", topo, s, IdealFilter.make("lowpass_half", s), cfg)
    a, b = res.params["a"][0], res.params["b"][0]
    assert np.abs(a * (1 - s.lam)).max() < 0.75
    rational = arma_response([a], [b], s.lam)
    assert np.nanmax(np.abs(res.response - rational)) <= 1e-3
