import numpy as np
import pytest

from cqajoint import nn
from cqajoint.nn import (
    InteractionBlock,
    RmspropConfig,
    ShapeError,
    TaskDataset,
    TaskNetwork,
    TaskNetworkSpec,
    TrainConfig,
    default_train_config,
    extract_task_embedding,
    forward,
    init_network,
    load_network,
    loss_and_grads,
    predict_proba,
    rmsprop_step,
    save_network,
    simple_spec,
    standard_spec,
    train_dnn,
)


def tiny_a_spec():
    return standard_spec(
        "A",
        input_widths={"z_qi": 1, "z_c": 1},
        pairwise_widths={"phi_a": 1},
        interaction_dims={"h1_a": 1},
        task_layer_dim=1,
    )


def zeroed(net):
    for name, (W, b) in net.interaction_weights.items():
        net.interaction_weights[name] = (np.zeros_like(W), np.zeros_like(b))
    V, b2 = net.task_weights
    net.task_weights = (np.zeros_like(V), np.zeros_like(b2))
    w, _ = net.output_weights
    net.output_weights = (np.zeros_like(w), 0.0)
    return net


class TestSpecs:
    def test_standard_structure(self):
        widths = {"z_q": 4, "z_qi": 4, "z_c": 4}
        phi = {"phi_a": 3, "phi_b": 3, "phi_c": 3}
        a = standard_spec("A", widths, phi)
        b = standard_spec("B", widths, phi)
        c = standard_spec("C", widths, phi)
        assert len(a.interactions) == 1 and len(a.pairwise_slots) == 1
        assert len(b.interactions) == 1 and len(b.pairwise_slots) == 1
        assert len(c.interactions) == 3 and len(c.pairwise_slots) == 3

    def test_default_widths(self):
        widths = {"z_q": 4, "z_qi": 4, "z_c": 4}
        phi = {"phi_a": 3, "phi_b": 3, "phi_c": 3}
        assert standard_spec("A", widths, phi).interactions[0].width == 10
        assert standard_spec("B", widths, phi).interactions[0].width == 5
        c = standard_spec("C", widths, phi)
        assert [blk.width for blk in c.interactions] == [10, 5, 15]
        assert standard_spec("A", widths, phi).task_layer_dim == 125
        assert standard_spec("B", widths, phi).task_layer_dim == 75
        assert c.task_layer_dim == 50

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ValueError):
            TaskNetworkSpec("A", (("z", 2),),
                            (InteractionBlock("h1", ("z",), 0),),
                            (("phi", 1),), 4)

    def test_per_task_train_defaults(self):
        assert default_train_config("A").batch_size == 16
        assert default_train_config("B").dropout_rate == 0.2
        assert default_train_config("C").l2_strength == 0.0001
        assert default_train_config("A").max_epochs == 100
        assert default_train_config("A").patience == 25


class TestForward:
    def test_zero_weights_give_half(self):
        net = zeroed(init_network(tiny_a_spec(), seed=0))
        prob, h2 = forward(net, {"z_qi": [0.7], "z_c": [-1.2]}, {"phi_a": [3.0]})
        assert prob == 0.5
        assert np.array_equal(h2, np.zeros(1))

    def test_hand_forward_pass(self):
        # U=[[1,1]], V=[[1,0]], w=[1,0], inputs 1 -> h1=2, h2=2, sigmoid(2)
        net = zeroed(init_network(tiny_a_spec(), seed=0))
        net.interaction_weights["h1_a"] = (np.array([[1.0, 1.0]]), np.zeros(1))
        net.task_weights = (np.array([[1.0, 0.0]]), np.zeros(1))
        net.output_weights = (np.array([1.0, 0.0]), 0.0)
        prob, h2 = forward(net, {"z_qi": [1.0], "z_c": [1.0]}, {"phi_a": [0.0]})
        assert h2[0] == pytest.approx(2.0)
        assert prob == pytest.approx(0.8807970779778823)

    def test_infer_deterministic_bit_for_bit(self):
        net = init_network(tiny_a_spec(), seed=3)
        inputs = {"z_qi": [0.3], "z_c": [0.9]}
        phi = {"phi_a": [0.1]}
        first = forward(net, inputs, phi)
        second = forward(net, inputs, phi)
        assert first[0] == second[0]
        assert np.array_equal(first[1], second[1])

    def test_shape_error_names_block(self):
        net = init_network(tiny_a_spec(), seed=0)
        with pytest.raises(ShapeError, match="z_c"):
            forward(net, {"z_qi": [1.0], "z_c": [1.0, 2.0]}, {"phi_a": [0.0]})
        with pytest.raises(ShapeError, match="phi_a"):
            forward(net, {"z_qi": [1.0], "z_c": [1.0]}, {"phi_a": [0.0, 1.0]})

    def test_probability_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(0)
        spec = simple_spec("C", input_dim=3)
        net = init_network(spec, seed=1)
        for _ in range(100):
            vec = rng.normal(scale=50.0, size=3)
            prob, _ = forward(net, {"z": vec}, {"phi": vec})
            assert 0.0 < prob < 1.0


class TestRmsprop:
    def test_zero_gradient_fixed_point(self):
        hyper = RmspropConfig()
        param = np.array([1.0, -2.0])
        cache = np.array([0.5, 0.5])
        new_param, new_cache = rmsprop_step(param, np.zeros(2), cache, hyper)
        assert np.array_equal(new_param, param)
        assert np.allclose(new_cache, 0.9 * cache)

    def test_first_step_closed_form(self):
        hyper = RmspropConfig(learning_rate=0.001, decay_rho=0.9, epsilon=1e-8)
        new_param, new_cache = rmsprop_step(np.array([0.0]), np.array([2.0]),
                                            np.array([0.0]), hyper)
        assert new_cache[0] == pytest.approx(0.4)
        assert new_param[0] == pytest.approx(-0.001 * 2.0 / np.sqrt(0.4), rel=1e-6)

    def test_sign_symmetry(self):
        hyper = RmspropConfig()
        g = np.array([0.7, -1.3])
        up, _ = rmsprop_step(np.zeros(2), g, np.zeros(2), hyper)
        down, _ = rmsprop_step(np.zeros(2), -g, np.zeros(2), hyper)
        assert np.allclose(up, -down)

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(ValueError):
            rmsprop_step(np.zeros(1), np.array([np.nan]), np.zeros(1), RmspropConfig())


def random_dataset(spec, n, seed):
    rng = np.random.default_rng(seed)
    return TaskDataset(
        inputs={name: rng.normal(size=(n, w)) for name, w in spec.input_blocks},
        pairwise={name: rng.normal(size=(n, w)) for name, w in spec.pairwise_slots},
        labels=rng.integers(0, 2, size=n).astype(float),
    )


def flatten_params(net):
    items = list(nn._param_items(net))
    return items


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_finite_differences(self, seed):
        spec = standard_spec(
            "C",
            input_widths={"z_q": 2, "z_qi": 3, "z_c": 2},
            pairwise_widths={"phi_a": 2, "phi_b": 1, "phi_c": 2},
            interaction_dims={"h1_a": 3, "h1_b": 2, "h1_c": 3},
            task_layer_dim=4,
        )
        net = init_network(spec, seed=seed)
        data = random_dataset(spec, n=6, seed=seed + 100)
        l2 = 0.01
        _, grads = loss_and_grads(net, data, l2)
        h = 1e-5
        for key, param in flatten_params(net):
            param = np.atleast_1d(np.asarray(param, dtype=float))
            analytic = np.atleast_1d(np.asarray(grads[key], dtype=float))
            for idx in np.ndindex(param.shape):
                probe = net.copy()
                plus = param.copy()
                plus[idx] += h
                nn._set_param(probe, key, plus if key != ("out", "b") else float(plus[0]))
                loss_plus, _ = loss_and_grads(probe, data, l2)
                minus = param.copy()
                minus[idx] -= h
                nn._set_param(probe, key, minus if key != ("out", "b") else float(minus[0]))
                loss_minus, _ = loss_and_grads(probe, data, l2)
                fd = (loss_plus - loss_minus) / (2 * h)
                a = analytic[idx]
                scale = max(abs(a), abs(fd))
                if scale > 1e-4:
                    assert abs(a - fd) / scale <= 1e-4, f"{key}{idx}: {a} vs {fd}"
                else:
                    assert abs(a - fd) <= 1e-8


class TestTraining:
    def test_and_dataset_learnable(self):
        # Frozen from an independent reference loop: a 4-hidden-unit net
        # with RMSprop lr 0.05, dropout 0.3, l2 1e-4 drives training
        # cross-entropy below 0.1 within 500 epochs on every seed tried
        # (max observed 0.073). The 100-epoch horizon at the default
        # learning rate recorded 0.61..0.73 and is not asserted.
        spec = simple_spec("C", input_dim=2, hidden=4, task_layer_dim=4)
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 0.0, 0.0, 1.0])
        data = TaskDataset(inputs={"z": x}, pairwise={"phi": x}, labels=y)
        hits = 0
        for seed in range(5):
            cfg = TrainConfig(batch_size=32, dropout_rate=0.3, l2_strength=1e-4,
                              max_epochs=500, patience=500,
                              rmsprop=RmspropConfig(learning_rate=0.05), seed=seed)
            net, trace = train_dnn(data, spec, cfg)
            ce = min(r.train_loss for r in trace.epochs)
            if ce < 0.1:
                hits += 1
        assert hits >= 4

    def test_patience_zero_stops_at_first_stall(self):
        spec = simple_spec("A", input_dim=2, hidden=2, task_layer_dim=2)
        data = random_dataset(spec, n=30, seed=0)
        cfg = TrainConfig(batch_size=8, dropout_rate=0.0, l2_strength=0.0,
                          max_epochs=50, patience=0,
                          rmsprop=RmspropConfig(learning_rate=0.0), seed=0)
        # zero learning rate: the first epoch cannot improve on itself
        net, trace = train_dnn(data, spec, cfg)
        assert trace.stopped_early
        assert len(trace.epochs) == 2  # epoch 0 sets the best, epoch 1 stalls

    def test_huge_l2_shrinks_weights(self):
        spec = simple_spec("B", input_dim=2, hidden=2, task_layer_dim=2)
        data = random_dataset(spec, n=40, seed=1)

        def total_norm(network):
            total = 0.0
            for _, param in nn._param_items(network):
                total += float(np.sum(np.square(param)))
            return total

        init = init_network(spec, seed=5)
        cfg = TrainConfig(batch_size=8, dropout_rate=0.0, l2_strength=1e6,
                          max_epochs=30, patience=30, seed=5)
        trained, _ = train_dnn(data, spec, cfg)
        assert total_norm(trained) < total_norm(init)

    def test_seeded_determinism(self):
        spec = simple_spec("A", input_dim=3, hidden=3, task_layer_dim=3)
        data = random_dataset(spec, n=50, seed=2)
        cfg = default_train_config("A", seed=9, max_epochs=5)
        net1, _ = train_dnn(data, spec, cfg)
        net2, _ = train_dnn(data, spec, cfg)
        for (k1, p1), (k2, p2) in zip(nn._param_items(net1), nn._param_items(net2)):
            assert k1 == k2
            assert np.array_equal(np.asarray(p1), np.asarray(p2))

    def test_plain_gd_loss_nonincreasing(self):
        spec = simple_spec("C", input_dim=2, hidden=3, task_layer_dim=3)
        data = random_dataset(spec, n=20, seed=3)
        net = init_network(spec, seed=4)
        step = 1e-3
        losses = []
        for _ in range(50):
            loss, grads = loss_and_grads(net, data, l2=0.001)
            losses.append(loss)
            for key, param in list(nn._param_items(net)):
                update = np.asarray(param, dtype=float) - step * np.asarray(grads[key])
                nn._set_param(net, key, update if key != ("out", "b") else float(update))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_empty_dataset_rejected(self):
        spec = simple_spec("A", input_dim=2)
        empty = TaskDataset(inputs={"z": np.zeros((0, 2))},
                            pairwise={"phi": np.zeros((0, 2))},
                            labels=np.zeros(0))
        with pytest.raises(ValueError):
            train_dnn(empty, spec, TrainConfig())

    def test_non_binary_labels_rejected(self):
        spec = simple_spec("A", input_dim=2)
        data = random_dataset(spec, 10, 0)
        data.labels[0] = 0.5
        with pytest.raises(ValueError):
            train_dnn(data, spec, TrainConfig())


class TestEmbeddings:
    def test_length_is_task_dim_plus_pairwise(self):
        spec = standard_spec(
            "C",
            input_widths={"z_q": 2, "z_qi": 2, "z_c": 2},
            pairwise_widths={"phi_a": 30, "phi_b": 28, "phi_c": 30},
            task_layer_dim=50,
        )
        net = init_network(spec, seed=0)
        rng = np.random.default_rng(0)
        emb = extract_task_embedding(
            net,
            {name: rng.normal(size=w) for name, w in spec.input_blocks},
            {name: rng.normal(size=w) for name, w in spec.pairwise_slots},
        )
        assert emb.shape == (138,)

    def test_zero_net_embeds_phi_only(self):
        net = zeroed(init_network(tiny_a_spec(), seed=0))
        emb = extract_task_embedding(net, {"z_qi": [1.0], "z_c": [1.0]},
                                     {"phi_a": [7.0]})
        assert np.array_equal(emb, [0.0, 7.0])

    def test_inference_ignores_training_dropout(self):
        spec = simple_spec("B", input_dim=2, hidden=2, task_layer_dim=2)
        data = random_dataset(spec, n=30, seed=7)
        cfg = TrainConfig(batch_size=8, dropout_rate=0.5, l2_strength=0.0,
                          max_epochs=3, patience=3, seed=7)
        net, _ = train_dnn(data, spec, cfg)
        one = extract_task_embedding(net, {"z": [0.5, 0.5]}, {"phi": [0.5, 0.5]})
        two = extract_task_embedding(net, {"z": [0.5, 0.5]}, {"phi": [0.5, 0.5]})
        assert np.array_equal(one, two)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = standard_spec(
            "C",
            input_widths={"z_q": 3, "z_qi": 2, "z_c": 3},
            pairwise_widths={"phi_a": 2, "phi_b": 2, "phi_c": 2},
            interaction_dims={"h1_a": 2, "h1_b": 2, "h1_c": 2},
            task_layer_dim=3,
        )
        data = random_dataset(spec, n=20, seed=0)
        net, _ = train_dnn(data, spec, default_train_config("C", seed=0, max_epochs=3))
        path = tmp_path / "net.json"
        save_network(net, str(path))
        loaded = load_network(str(path))
        for (k1, p1), (k2, p2) in zip(nn._param_items(net), nn._param_items(loaded)):
            assert k1 == k2
            assert np.array_equal(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float))
        assert loaded.spec == net.spec
        assert loaded.train_config == net.train_config
        # saved twice -> identical bytes
        path2 = tmp_path / "net2.json"
        save_network(loaded, str(path2))
        assert path.read_bytes() == path2.read_bytes()

    def test_predict_proba_matches_forward(self):
        spec = simple_spec("A", input_dim=2, hidden=2, task_layer_dim=2)
        net = init_network(spec, seed=1)
        data = random_dataset(spec, n=5, seed=1)
        probs = predict_proba(net, data)
        for row in range(5):
            single, _ = forward(net, {"z": data.inputs["z"][row]},
                                {"phi": data.pairwise["phi"][row]})
            assert probs[row] == pytest.approx(single, abs=0)
