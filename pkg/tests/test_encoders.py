import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slip.autodiff import Tensor, grad_check_params, masked_sum
from slip.encoders import (
    EmbeddingTableEncoder,
    EncoderParams,
    FeatureStore,
    LinearEncoder,
    MissingFeatureError,
    encode_batch,
    read_features,
    write_features,
)
from slip.graph import FormatError


def store(rows, modality="image"):
    rows = np.asarray(rows, dtype=float)
    return FeatureStore(modality, rows.shape[1], {f"k{i}": r for i, r in enumerate(rows)})


def test_identity_projection_keeps_unit_rows():
    x = np.eye(3)[[2, 0, 1]]
    params = EncoderParams(Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
    out = encode_batch(store(x), params, ["k0", "k1", "k2"])
    assert np.allclose(out.data, x)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(-50, 50)), st.integers(0, 2**32 - 1))
def test_rows_have_unit_norm(x, seed):
    enc = LinearEncoder.init("text", 6, 4, np.random.default_rng(seed), depth=2)
    out = enc.encode_matrix(x).data
    pre = x
    for layer in enc.layers:
        pre = pre @ layer.weight.data + layer.bias.data
    big = np.linalg.norm(pre, axis=1) > 1e-6
    assert np.all(np.abs(np.linalg.norm(out[big], axis=1) - 1) < 1e-10)


def test_missing_feature_names_the_node():
    with pytest.raises(MissingFeatureError, match="k9"):
        encode_batch(store(np.ones((2, 3))), EncoderParams.init(3, 2, np.random.default_rng(0)), ["k0", "k9"])


def test_bias_shape_checked():
    with pytest.raises(ValueError):
        EncoderParams(Tensor(np.ones((3, 2))), Tensor(np.zeros((1, 3))))


def test_frozen_layer_excluded_from_groups():
    rng = np.random.default_rng(0)
    enc = LinearEncoder("image", [EncoderParams.init(4, 4, rng, trainable=False), EncoderParams.init(4, 2, rng)])
    assert [d for d, _ in enc.depth_groups()] == [0]
    assert not enc.layers[0].weight.requires_grad


def test_depth_index_counts_from_output():
    enc = LinearEncoder.init("image", 5, 3, np.random.default_rng(0), depth=3)
    assert [d for d, _ in enc.depth_groups()] == [2, 1, 0]
    assert enc.depth_groups()[-1][1][0] is enc.layers[-1].weight


@pytest.mark.parametrize("seed", range(5))
def test_weight_gradient_through_loss(seed):
    rng = np.random.default_rng(seed)
    enc = LinearEncoder.init("image", 6, 4, rng, depth=2)
    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(5, 4))
    params = [t for layer in enc.layers for t in layer.tensors()]
    assert grad_check_params(lambda: masked_sum(enc.encode_matrix(x), w), params) <= 1e-6


def test_embedding_table_encoder():
    enc = EmbeddingTableEncoder("text", ["a", "b"], 3, np.random.default_rng(0))
    out = enc.encode(None, ["b", "a", "b"]).data
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)
    assert np.array_equal(out[0], out[2])
    with pytest.raises(MissingFeatureError):
        enc.encode(None, ["zz"])


def test_feature_file_round_trip(tmp_path):
    s = store(np.random.default_rng(0).normal(size=(4, 3)), "text")
    path = tmp_path / "text.tsv"
    write_features(s, path)
    assert path.read_text().splitlines()[0] == "dim=3 modality=text"
    assert read_features(path) == s


@pytest.mark.parametrize(
    "body, lineno",
    [
        ("dim=2 modality=image\na\t1,2\nb\t1\n", 3),
        ("dim=2 modality=image\na\t1,x\n", 2),
        ("dim=2 modality=image\na\t1,2\na\t3,4\n", 3),
        ("dim=2 modality=smell\n", 1),
        ("garbage\n", 1),
    ],
)
def test_feature_file_errors(tmp_path, body, lineno):
    path = tmp_path / "f.tsv"
    path.write_text(body)
    with pytest.raises(FormatError) as info:
        read_features(path)
    assert info.value.lineno == lineno


def test_feature_store_validation():
    with pytest.raises(ValueError):
        FeatureStore("audio", 2)
    with pytest.raises(ValueError):
        FeatureStore("image", 2, {"a": [1.0, 2.0, 3.0]})
    with pytest.raises(ValueError):
        FeatureStore("image", 1, {"a": [np.nan]})
