# tests/test_model.py

import numpy as np
import pytest

from src.common.binary_format import read_container
from src.common.errors import ContractViolation
from src.controller.controller import apply_gates
from src.core.gradcheck import finite_diff_check
from src.core.ops import bce_loss
from src.data.schema import Batch
from src.model.recommender import ModelConfig, RecommendationModel, adapt_architecture


def _batch(config, rng, size=8):
    indices = np.column_stack([rng.integers(0, c, size=size) for c in config.field_cardinalities])
    labels = (rng.random(size) > 0.5).astype(float)
    return Batch(indices=indices, labels=labels, split="train")


def test_gather_is_the_column_of_the_table(tiny_model_config):
    model = RecommendationModel(tiny_model_config, seed=0)
    model.params.set("embedding.0", np.zeros((2, 5)))
    model.params["embedding.0"][:, 3] = [0.5, -0.5]
    embeddings, _ = model.embed_indices(np.array([[3, 0, 0]]))
    np.testing.assert_array_equal(embeddings[0, :2], [0.5, -0.5])


def test_gather_equals_one_hot_product(rng):
    config = ModelConfig(num_fields=1, field_cardinalities=(7,), embedding_dim=5)
    model = RecommendationModel(config, seed=1)
    table = model.params["embedding.0"]
    for index in range(7):
        one_hot = np.zeros(7)
        one_hot[index] = 1.0
        embeddings, _ = model.embed_indices(np.array([[index]]))
        np.testing.assert_allclose(embeddings[0], table @ one_hot)


def test_input_width_follows_the_mask():
    config = ModelConfig(num_fields=22, field_cardinalities=(4,) * 22, embedding_dim=16)
    assert config.input_width == 352
    adapted = adapt_architecture(config, list(range(0, 22, 2)))
    assert adapted.config.input_width == 176
    assert adapted.params["mlp.0.weight"].shape == (176, 16)
    assert adapt_architecture(config, range(22)).config.input_width == 352


def test_index_out_of_bounds(tiny_model_config):
    model = RecommendationModel(tiny_model_config)
    with pytest.raises(ContractViolation):
        model.embed_indices(np.array([[5, 0, 0]]))


def test_zero_weights_predict_one_half(tiny_model_config, rng):
    model = RecommendationModel(tiny_model_config)
    for name, value in model.params.items():
        model.params.set(name, np.zeros_like(value))
    embeddings, _ = model.embed_batch(_batch(tiny_model_config, rng))
    predictions, _ = model.forward(embeddings)
    np.testing.assert_array_equal(predictions, 0.5)


def test_evaluation_forward_is_pure(tiny_model_config, rng):
    model = RecommendationModel(tiny_model_config, seed=4)
    embeddings, _ = model.embed_batch(_batch(tiny_model_config, rng))
    first, _ = model.forward(embeddings, training=False)
    second, _ = model.forward(embeddings, training=False)
    np.testing.assert_array_equal(first, second)


def test_width_mismatch(tiny_model_config):
    model = RecommendationModel(tiny_model_config)
    with pytest.raises(ContractViolation):
        model.forward(np.zeros((2, 5)))


def _controlled_model(config, rng):
    """Random weights with hidden biases pushed away from the ReLU kink."""
    model = RecommendationModel(config, seed=2)
    for name, value in model.params.items():
        if name.startswith("embedding."):
            model.params.set(name, rng.normal(0.0, 0.5, size=value.shape))
        elif name.startswith("mlp.") and name.endswith(".bias"):
            model.params.set(name, rng.choice([-1.0, 1.0], size=value.shape) * rng.uniform(0.5, 1.0, size=value.shape))
        else:
            model.params.set(name, rng.normal(0.0, 0.7, size=value.shape))
    return model


def test_full_model_gradients_match_finite_differences(tiny_model_config, rng):
    model = _controlled_model(tiny_model_config, rng)
    batch = _batch(tiny_model_config, rng, size=6)

    def run(compute_grads=False):
        embeddings, embedding_record = model.embed_batch(batch)
        # fresh generator each call freezes the dropout masks
        predictions, record = model.forward(embeddings, training=True, generator=np.random.default_rng(99))
        loss, grad_predictions = bce_loss(predictions, batch.labels)
        if compute_grads:
            model.params.zero_grad()
            grad_embeddings = model.backward(record, grad_predictions)
            model.embedding_backward(embedding_record, grad_embeddings)
        return loss

    run(compute_grads=True)
    analytic = {name: model.params.grad(name).copy() for name in model.params}
    params = {name: value for name, value in model.params.items()}
    report = finite_diff_check(run, params, analytic, h=1e-5, coordinates=100, floor=1e-6)
    assert report.passed(1e-4), report


def test_gradient_wrt_gated_embeddings(tiny_model_config, rng):
    model = _controlled_model(tiny_model_config, rng)
    batch = _batch(tiny_model_config, rng, size=5)
    embeddings, _ = model.embed_batch(batch)
    embeddings = embeddings.copy()

    def loss():
        predictions, _ = model.forward(embeddings, training=True, generator=np.random.default_rng(5))
        return bce_loss(predictions, batch.labels)[0]

    predictions, record = model.forward(embeddings, training=True, generator=np.random.default_rng(5))
    grad = model.backward(record, bce_loss(predictions, batch.labels)[1])
    report = finite_diff_check(loss, {"E": embeddings}, {"E": grad}, h=1e-5, floor=1e-6)
    assert report.passed(1e-4), report


def test_zero_upstream_gradient_gives_zero_gradients(tiny_model_config, rng):
    model = RecommendationModel(tiny_model_config)
    embeddings, embedding_record = model.embed_batch(_batch(tiny_model_config, rng))
    predictions, record = model.forward(embeddings, training=True, generator=rng)
    model.params.zero_grad()
    grad = model.backward(record, np.zeros_like(predictions))
    model.embedding_backward(embedding_record, grad)
    for name in model.params:
        assert not np.any(model.params.grad(name)), name


def test_stale_record_is_refused(tiny_model_config, rng):
    model = RecommendationModel(tiny_model_config)
    embeddings, _ = model.embed_batch(_batch(tiny_model_config, rng))
    predictions, record = model.forward(embeddings)
    model.backward(record, np.ones_like(predictions))
    with pytest.raises(ContractViolation):
        model.backward(record, np.ones_like(predictions))
    other = RecommendationModel(tiny_model_config)
    _, fresh = model.forward(embeddings)
    with pytest.raises(ContractViolation):
        other.backward(fresh, np.ones_like(predictions))


def test_zero_gates_make_predictions_constant(tiny_model_config, rng):
    model = _controlled_model(tiny_model_config, rng)
    embeddings, _ = model.embed_batch(_batch(tiny_model_config, rng, size=10))
    predictions, _ = model.forward(apply_gates(embeddings, np.zeros(3)))
    np.testing.assert_allclose(predictions, predictions[0])


def test_permuting_fields_and_weights_leaves_predictions_unchanged(rng):
    config = ModelConfig(num_fields=3, field_cardinalities=(5, 4, 6), embedding_dim=2, hidden_sizes=(4, 3), dropout=0.0)
    model = _controlled_model(config, rng)
    permutation = [2, 0, 1]
    permuted_config = ModelConfig(
        num_fields=3, field_cardinalities=tuple(config.field_cardinalities[p] for p in permutation),
        embedding_dim=2, hidden_sizes=(4, 3), dropout=0.0,
    )
    permuted = RecommendationModel(permuted_config)
    d = config.embedding_dim
    first_layer = model.params["mlp.0.weight"]
    for name, value in model.params.items():
        if not name.startswith("embedding.") and name != "mlp.0.weight":
            permuted.params.set(name, value)
    for new, old in enumerate(permutation):
        permuted.params.set(f"embedding.{new}", model.params[f"embedding.{old}"])
    permuted.params.set("mlp.0.weight", np.concatenate([first_layer[old * d:(old + 1) * d] for old in permutation]))

    indices = _batch(config, rng, size=12).indices
    np.testing.assert_allclose(permuted.predict(indices[:, permutation]), model.predict(indices), rtol=1e-12)


def test_inactive_fields_get_no_gradient_and_no_table(tmp_path, rng):
    config = ModelConfig(num_fields=4, field_cardinalities=(3, 3, 3, 3), embedding_dim=2, hidden_sizes=(3,))
    model = adapt_architecture(config, [3, 1], seed=0)
    assert model.config.active_fields == (1, 3)
    assert "embedding.0" not in model.params and "embedding.2" not in model.params

    indices = np.array([[0, 1, 2, 2], [1, 2, 0, 1]])
    embeddings, embedding_record = model.embed_indices(indices)
    assert embeddings.shape == (2, 4)
    predictions, record = model.forward(embeddings)
    model.embedding_backward(embedding_record, model.backward(record, np.ones_like(predictions)))

    path = tmp_path / "model.ckpt"
    model.save(str(path))
    _, arrays = read_container(str(path), expected_kind="checkpoint")
    assert not any(name.startswith("model/param/embedding.0") or name.startswith("model/param/embedding.2") for name in arrays)
    loaded, metadata = RecommendationModel.load(str(path))
    assert loaded.config == model.config
    np.testing.assert_array_equal(loaded.predict(indices), model.predict(indices))


def test_adapt_rejects_bad_selections(tiny_model_config):
    with pytest.raises(ContractViolation):
        adapt_architecture(tiny_model_config, [0, 0])
    with pytest.raises(ContractViolation):
        adapt_architecture(tiny_model_config, [3])
    with pytest.raises(ContractViolation):
        adapt_architecture(tiny_model_config, [])


def test_retraining_starts_from_fresh_weights(tiny_model_config):
    model = RecommendationModel(tiny_model_config, seed=0)
    model.params.set("output.bias", np.array([5.0]))
    adapted = model.adapt_architecture([0, 1, 2])
    assert adapted.params["output.bias"][0] != 5.0
