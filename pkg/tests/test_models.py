import numpy as np
import pytest

from spatialsim import gradengine as ge
from spatialsim import models as md
from spatialsim.datagen import GenConfig, gen_identification, sample_reference
from spatialsim.dataset import CompSample, IdentSample
from spatialsim.geometry import Configuration
from spatialsim.graphcore import batch_configs, batch_graphs, build_graph
from spatialsim.trainer import evaluate
from oracles import fd_check_store

KINDS = ("mpgnn", "rds", "deepset")


def make_model(kind, task="identification", seed=0, **kw):
    if kind == "mlp":
        kw.setdefault("mlp_n_max", 6)
    return md.Model(md.ModelConfig(kind, task, **kw), seed)


def random_inputs(rng, n=5, batch=4):
    return [sample_reference(n, rng).features for _ in range(batch)]


def perturb_biases(model, rng):
    # Zero-initialised biases leave many ReLUs exactly at their kinks; move them off.
    for name, p in model.store.items():
        if name.endswith(".b"):
            p.data[:] = rng.normal(scale=0.1, size=p.shape)


# -- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("task", ["identification", "comparison"])
@pytest.mark.parametrize("kind", KINDS + ("mlp",))
def test_finite_difference_gradients(kind, task, rng):
    model = make_model(kind, task, seed=3)
    perturb_biases(model, rng)
    c1 = random_inputs(rng)
    c2 = random_inputs(rng) if task == "comparison" else None
    labels = np.array([1, 0, 1, 0])
    inputs = model.prepare(c1, c2)

    def loss():
        return ge.softmax_cross_entropy(model.forward(inputs), md.target_index(labels))

    model.store.zero_grad()
    ge.backward(loss())
    worst = fd_check_store(lambda: float(loss().data), model.store, 100, rng)
    assert worst <= 1e-5


# -- invariance ----------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_permutation_invariance(kind, rng):
    model = make_model(kind, seed=1)
    perturb_biases(model, rng)
    c = sample_reference(7, rng).features
    base = model.logits([c])[0]
    for _ in range(100):
        out = model.logits([c[rng.permutation(7)]])[0]
        assert np.max(np.abs(out - base)) <= 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_dual_model_permutation_invariance(kind, rng):
    model = make_model(kind, "comparison", seed=2)
    perturb_biases(model, rng)
    a, b = sample_reference(5, rng).features, sample_reference(6, rng).features
    base = md.dim_forward(a, b, model)
    for _ in range(20):
        out = md.dim_forward(a[rng.permutation(5)], b[rng.permutation(6)], model)
        assert np.max(np.abs(out - base)) <= 1e-9


def test_towers_are_not_shared(rng):
    model = make_model("mpgnn", "comparison", seed=4)
    a, b = sample_reference(5, rng).features, sample_reference(5, rng).features
    assert not np.allclose(md.dim_forward(a, b, model), md.dim_forward(b, a, model))
    assert "g1.p0.edge.0.W" in model.store and "g2.p0.edge.0.W" in model.store


def test_mpgnn_node_update_is_equivariant(rng):
    model = make_model("mpgnn", seed=5)
    perturb_biases(model, rng)
    c = sample_reference(6, rng).features
    perm = rng.permutation(6)
    X, _, U = md.mpgnn_pass(build_graph(c), model.store, "g.p0")
    Xp, _, Up = md.mpgnn_pass(build_graph(c[perm]), model.store, "g.p0")
    np.testing.assert_allclose(Xp.data, X.data[perm], atol=1e-12, rtol=0)
    np.testing.assert_allclose(Up.data, U.data, atol=1e-9, rtol=0)


def test_single_node_graph_uses_zero_messages(rng):
    model = make_model("mpgnn", seed=6)
    perturb_biases(model, rng)
    c = sample_reference(1, rng).features
    g = build_graph(c)
    X_new, E_new, U_new = md.mpgnn_pass(g, model.store, "g.p0")
    assert E_new.shape == (0, 20)
    node_in = np.concatenate([c, np.zeros((1, 20)), g.u[None]], axis=1)
    expected_x = md.mlp(node_in, model.store, "g.p0.node").data
    np.testing.assert_array_equal(X_new.data, expected_x)
    expected_u = md.mlp(np.concatenate([expected_x, g.u[None]], axis=1), model.store, "g.p0.glob")
    np.testing.assert_array_equal(U_new.data, expected_u.data)
    assert md.classify(Configuration(c), model).shape == (2,)


# -- forward oracles -------------------------------------------------------------

def _dense(x, W, b, relu):
    out = [sum(x[i] * W[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]
    return [max(v, 0.0) for v in out] if relu else out


def _loop_mlp(x, store, prefix):
    k = 0
    while f"{prefix}.{k + 1}.W" in store:
        x = _dense(x, store[f"{prefix}.{k}.W"].data.tolist(), store[f"{prefix}.{k}.b"].data, True)
        k += 1
    return _dense(x, store[f"{prefix}.{k}.W"].data.tolist(), store[f"{prefix}.{k}.b"].data, False)


def test_two_node_mpgnn_matches_hand_computation(rng):
    model = make_model("mpgnn", seed=7)
    perturb_biases(model, rng)
    f = sample_reference(2, rng).features.tolist()
    u = [(a + b) / 2 for a, b in zip(*f)]
    # Edge 0 is 0->1, edge 1 is 1->0; each node receives exactly one message.
    e01 = _loop_mlp(f[0] + f[1] + f[0] + f[1] + u, model.store, "g.p0.edge")
    e10 = _loop_mlp(f[1] + f[0] + f[1] + f[0] + u, model.store, "g.p0.edge")
    x0 = _loop_mlp(f[0] + e10 + u, model.store, "g.p0.node")
    x1 = _loop_mlp(f[1] + e01 + u, model.store, "g.p0.node")
    pooled = [a + b for a, b in zip(x0, x1)]
    u_new = _loop_mlp(pooled + u, model.store, "g.p0.glob")
    expected = _loop_mlp(u_new, model.store, "out")
    got = md.classify(build_graph(np.array(f)), model)
    np.testing.assert_allclose(got, expected, atol=1e-12, rtol=0)


def test_rds_and_deepset_match_loop_oracle(rng):
    f = sample_reference(3, rng).features.tolist()
    u = [sum(col) / 3 for col in zip(*f)]
    rds = make_model("rds", seed=8)
    perturb_biases(rds, rng)
    xs = [_loop_mlp(row + u, rds.store, "g.p0.node") for row in f]
    u_new = _loop_mlp([sum(c) for c in zip(*xs)] + u, rds.store, "g.p0.glob")
    np.testing.assert_allclose(md.classify(np.array(f), rds), _loop_mlp(u_new, rds.store, "out"),
                               atol=1e-12, rtol=0)
    ds = make_model("deepset", seed=9)
    perturb_biases(ds, rng)
    pooled = [sum(c) for c in zip(*[_loop_mlp(row, ds.store, "g.p0.node") for row in f])]
    np.testing.assert_allclose(md.classify(np.array(f), ds), _loop_mlp(pooled, ds.store, "out"),
                               atol=1e-12, rtol=0)


def test_deepset_duplicate_node_adds_its_image(rng):
    model = make_model("deepset", seed=10)
    perturb_biases(model, rng)
    c = sample_reference(4, rng).features
    u = md.ds_pass(build_graph(c), model.store).data
    dup = md.ds_pass(build_graph(np.vstack([c, c[2:3]])), model.store).data
    image = md.mlp(c[2:3], model.store, "g.p0.node").data
    np.testing.assert_allclose(dup, u + image, atol=1e-12, rtol=0)
    again = md.ds_pass(build_graph(c), model.store).data
    assert again.tobytes() == u.tobytes()


def test_rds_single_node_depends_only_on_it(rng):
    model = make_model("rds", seed=11)
    a = sample_reference(1, rng).features
    b = sample_reference(1, rng).features
    la, lb = md.classify(a, model), md.classify(b, model)
    assert np.array_equal(md.classify(a.copy(), model), la) and not np.array_equal(la, lb)


@pytest.mark.parametrize("kind", KINDS)
def test_output_shape_for_all_sizes(kind, rng):
    model = make_model(kind, seed=12)
    for n in (1, 2, 8, 30):
        out = md.classify(sample_reference(n, rng), model)
        assert out.shape == (2,) and np.all(np.isfinite(out))


def test_batched_forward_matches_single(rng):
    model = make_model("mpgnn", seed=13)
    configs = [sample_reference(int(n), rng).features for n in rng.integers(1, 9, size=6)]
    batched = model.forward(batch_configs(configs)).data
    for row, c in zip(batched, configs):
        np.testing.assert_allclose(row, md.classify(c, model), atol=1e-12, rtol=0)
    b = batch_graphs([build_graph(c) for c in configs])
    np.testing.assert_allclose(model.forward(b).data, batched, atol=1e-12, rtol=0)


# -- MLP baseline ------------------------------------------------------------------

def test_mlp_hidden_width():
    assert md.ModelConfig("mlp", mlp_n_max=5).mlp_hidden == 80
    assert md.ModelConfig("mlp", "comparison", mlp_n_max=8, mlp_n_mean=5.5).mlp_hidden == 176
    store = make_model("mlp", mlp_n_max=5).store
    assert store["mlp.0.W"].shape == (50, 80) and store["mlp.2.W"].shape == (80, 2)


def test_mlp_is_order_sensitive(rng):
    model = make_model("mlp", mlp_n_max=5, seed=1)
    c = Configuration(sample_reference(5, rng).features)
    a = md.mlp_baseline_forward(IdentSample(1, c), 5, model.store)
    b = md.mlp_baseline_forward(IdentSample(1, Configuration(c.features[::-1])), 5, model.store)
    assert not np.allclose(a, b)


def test_mlp_padding_is_inert(rng):
    model = make_model("mlp", mlp_n_max=6, seed=2)
    c = sample_reference(4, rng).features
    got = md.mlp_baseline_forward(IdentSample(1, Configuration(c)), 6, model.store)
    W0 = model.store["mlp.0.W"].data[:40]
    h = np.maximum(c.ravel() @ W0 + model.store["mlp.0.b"].data, 0)
    h = np.maximum(h @ model.store["mlp.1.W"].data + model.store["mlp.1.b"].data, 0)
    expected = h @ model.store["mlp.2.W"].data + model.store["mlp.2.b"].data
    np.testing.assert_allclose(got, expected, atol=1e-12, rtol=0)


def test_mlp_rejects_oversized_input(rng):
    model = make_model("mlp", mlp_n_max=3)
    with pytest.raises(ValueError, match="padded width"):
        md.mlp_baseline_forward(IdentSample(1, sample_reference(4, rng)), 3, model.store)


def test_mlp_comparison_concatenates(rng):
    model = make_model("mlp", "comparison", mlp_n_max=4, seed=3)
    a, b = sample_reference(3, rng), sample_reference(4, rng)
    out = md.mlp_baseline_forward(CompSample(1, a, b), 4, model.store)
    np.testing.assert_allclose(out, md.dim_forward(a, b, model), atol=1e-12, rtol=0)


# -- parameter counts --------------------------------------------------------------

def linear(a, b):
    return a * b + b


def test_count_single_linear_layer():
    store = ge.ParamStore()
    ge.init_linear(store, "l", 2, 3, np.random.default_rng(0))
    assert md.count_params(store) == 9


def test_count_params_summation_oracle():
    h, dx, de, du = 16, 10, 20, 16
    mpgnn = (linear(2 * dx + de + dx, h) + linear(h, de)
             + linear(dx + de + dx, h) + linear(h, dx)
             + linear(dx + dx, h) + linear(h, du))
    rds = (linear(dx + dx, h) + linear(h, h) + linear(h, dx)
           + linear(dx + dx, h) + linear(h, h) + linear(h, du))
    ds = linear(dx, h) + 3 * linear(h, h) + linear(h, du)
    heads = {"mpgnn": linear(du, h) + linear(h, 2),
             "rds": linear(du, h) + linear(h, h) + linear(h, 2),
             "deepset": linear(du, h) + 3 * linear(h, h) + linear(h, 2)}
    comp_heads = {"mpgnn": linear(2 * du, h) + linear(h, 2),
                  "rds": linear(2 * du, h) + linear(h, h) + linear(h, 2),
                  "deepset": linear(2 * du, h) + 3 * linear(h, h) + linear(h, 2)}
    towers = {"mpgnn": mpgnn, "rds": rds, "deepset": ds}
    for kind in KINDS:
        assert md.count_params(make_model(kind)) == towers[kind] + heads[kind]
        assert md.count_params(make_model(kind, "comparison")) == 2 * towers[kind] + comp_heads[kind]


def test_count_params_near_published_values():
    published = {"mpgnn": 2208, "rds": 2038, "deepset": 2386}
    for kind, ref in published.items():
        c = md.count_params(make_model(kind))
        assert 1000 <= c <= 6000 and ref / 2 <= c <= ref * 2


def test_second_pass_shares_parameters():
    one = make_model("mpgnn", n_passes=1)
    three = make_model("mpgnn", n_passes=3)
    assert "g.p1.edge.0.W" in three.store and "g.p2.edge.0.W" not in three.store
    assert three.store["g.p1.edge.0.W"].shape[0] == 2 * 10 + 20 + 16
    assert md.count_params(three) > md.count_params(one)


# -- misc -----------------------------------------------------------------------

def test_predict_labels_ties_go_positive():
    logits = np.array([[1.0, 1.0], [2.0, 1.0], [0.0, 3.0]])
    assert md.predict_labels(logits).tolist() == [1, 1, 0]
    assert md.target_index(np.array([1, 0])).tolist() == [0, 1]


def test_config_validation():
    with pytest.raises(ValueError):
        md.ModelConfig("transformer")
    with pytest.raises(ValueError):
        md.ModelConfig("mpgnn", h=0)
    with pytest.raises(ValueError):
        md.ModelConfig("mlp")
    cfg = md.ModelConfig("rds", "comparison")
    assert cfg.d == 2 and md.ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_wrong_task_entry_points(rng):
    with pytest.raises(ValueError):
        md.classify(sample_reference(3, rng), make_model("mpgnn", "comparison"))
    with pytest.raises(ValueError):
        md.dim_forward(sample_reference(3, rng), sample_reference(3, rng), make_model("mpgnn"))


@pytest.mark.parametrize("kind", KINDS)
def test_untrained_model_is_at_chance(kind):
    # A single random network is a fixed function and can sit well off 0.5;
    # chance holds in expectation over initialisations.
    data = gen_identification(5, GenConfig(n_train=2, n_eval=5000, seed=21))
    accs = [evaluate(make_model(kind, seed=s), data["test"]) for s in range(10)]
    assert abs(np.mean(accs) - 0.5) <= 0.03
