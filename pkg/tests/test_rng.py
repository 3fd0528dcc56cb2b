import numpy as np

from imcmc.rng import (
    UniformBlocks,
    categorical,
    categorical_many,
    categorical_rows,
    stream,
)


def test_streams_are_keyed():
    a = stream(5, 1, 2).random(4)
    assert np.array_equal(a, stream(5, 1, 2).random(4))
    assert not np.array_equal(a, stream(5, 2, 1).random(4))


def test_blocks_do_not_change_values():
    small = UniformBlocks(3, 0, [0, 7], 2, block=3)
    large = UniformBlocks(3, 0, [7], 2, block=1000)
    for _ in range(10):
        assert np.array_equal(small.next()[1], large.next()[0])


def test_categorical_inverse_cdf():
    probs = np.array([[0.2, 0.0, 0.8]] * 5)
    u = np.array([0.0, 0.19, 0.2, 0.5, 1 - 1e-16])
    assert categorical(probs, u).tolist() == [0, 0, 2, 2, 2]
    assert categorical(np.array([[2.0, 0.0, 0.0]]), np.array([0.99]))[0] == 0


def test_categorical_variants_agree():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(6), 4)
    u = rng.random((4, 3))
    many = categorical_many(probs, u)
    for j in range(3):
        assert np.array_equal(many[:, j], categorical(probs, u[:, j]))
        assert np.array_equal(categorical_rows(probs, u[:, j]), categorical(probs, u[:, j]))


def test_categorical_frequencies():
    p = np.array([0.1, 0.6, 0.3])
    u = stream(1, 0).random(200000)
    counts = np.bincount(categorical(np.broadcast_to(p, (len(u), 3)), u), minlength=3) / len(u)
    assert np.abs(counts - p).max() < 0.005
