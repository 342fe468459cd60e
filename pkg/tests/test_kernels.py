import numpy as np
import pytest

from unlearn_forge import _kernels as K


@pytest.fixture
def data(rng):
    return {
        "a": rng.normal(size=(37, 11)),
        "w": rng.normal(size=(11, 7)),
        "b": rng.normal(size=(1, 7)),
        "gz": rng.normal(size=(37, 7)),
        "labels": rng.integers(0, 4, size=37),
    }


def test_affine_backends_agree(data):
    np.testing.assert_allclose(K.affine_numba(data["a"], data["w"], data["b"]),
                               K.affine_numpy(data["a"], data["w"], data["b"]), rtol=1e-12)


def test_affine_backward_backends_agree(data):
    for x, y in zip(K.affine_backward_numba(data["a"], data["w"], data["gz"]),
                    K.affine_backward_numpy(data["a"], data["w"], data["gz"])):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


def test_softmax_backends_agree(data):
    z = data["a"] * 30
    np.testing.assert_allclose(K.softmax_numba(z), K.softmax_numpy(z), rtol=1e-12, atol=1e-300)


def test_pairwise_and_silhouette_backends_agree(data):
    d1, d2 = K.pairwise_dists_numba(data["a"]), K.pairwise_dists_numpy(data["a"])
    np.testing.assert_allclose(d1, d2, rtol=1e-9, atol=1e-9)
    s1 = K.silhouette_values_numba(d2, data["labels"], 4)
    s2 = K.silhouette_values_numpy(d2, data["labels"], 4)
    np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-12)


def test_kde_backends_agree(rng):
    pts = rng.normal(size=50)
    grid = np.linspace(-4, 4, 101)
    np.testing.assert_allclose(K.kde_grid_numba(pts, 0.3, grid), K.kde_grid_numpy(pts, 0.3, grid),
                               rtol=1e-12, atol=1e-15)


def test_get_respects_backend_override():
    assert K.get("softmax", "numpy") is K.softmax_numpy
    assert K.get("softmax", "numba") is K.softmax_numba
    with pytest.raises(KeyError):
        K.get("nope")
