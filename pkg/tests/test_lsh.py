from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import angle, hamming_bitloop
from wpfed.errors import InvalidInputError
from wpfed.lsh import LshCode, encode, encode_vector, hamming, make_basis
from wpfed.model import ModelParams

codes64 = st.integers(0, 2**64 - 1).map(lambda v: LshCode(v, 64))


def test_basis_shape_and_determinism():
    a = make_basis(20, 64, network_seed=3)
    assert a.hyperplanes.shape == (64, 20)
    assert np.allclose(np.linalg.norm(a.hyperplanes, axis=1), 1.0)
    b = make_basis(20, 64, network_seed=3)
    assert np.array_equal(a.hyperplanes, b.hyperplanes)
    assert not np.array_equal(a.hyperplanes, make_basis(20, 64, network_seed=4).hyperplanes)


def test_encode_identical_and_negated():
    rng = np.random.default_rng(0)
    basis = make_basis(33, 64, network_seed=1)
    params = ModelParams(rng.normal(size=(3, 10)), rng.normal(size=3))
    assert np.all(basis.hyperplanes @ params.flatten() != 0)
    a = encode(params, basis)
    assert a == encode(params, basis)
    neg = ModelParams(-params.weights, -params.bias)
    assert hamming(a, encode(neg, basis)) == 64


def test_zero_projection_is_bit_one():
    basis = make_basis(4, 8, network_seed=0)
    assert encode_vector(np.zeros(4), basis).bits == (1,) * 8


def test_small_perturbation_rarely_flips_bits():
    rng = np.random.default_rng(2)
    basis = make_basis(55, 64, network_seed=9)
    dists = []
    for _ in range(100):
        theta = rng.normal(size=55)
        eps = rng.normal(size=55)
        eps *= 1e-6 * np.linalg.norm(theta) / np.linalg.norm(eps)
        dists.append(hamming(encode_vector(theta, basis), encode_vector(theta + eps, basis)))
    assert np.mean(dists) < 2


def test_scale_invariance():
    rng = np.random.default_rng(3)
    basis = make_basis(40, 64, network_seed=2)
    for _ in range(50):
        theta = rng.normal(size=40)
        c = float(np.exp(rng.uniform(-20, 20)))
        assert encode_vector(c * theta, basis) == encode_vector(theta, basis)


def test_bit_agreement_tracks_angle():
    rng = np.random.default_rng(4)
    dim = 30
    agree, expect = [], []
    for trial in range(200):
        basis = make_basis(dim, 64, network_seed=1000 + trial)
        u = rng.normal(size=dim)
        v = rng.normal(size=dim)
        a, b = encode_vector(u, basis), encode_vector(v, basis)
        agree.append(1 - hamming(a, b) / 64)
        expect.append(1 - angle(u, v) / np.pi)
    assert abs(np.mean(agree) - np.mean(expect)) < 0.05


def test_hamming_examples():
    assert hamming(LshCode.from_bits([1, 0, 1, 0]), LshCode.from_bits([0, 1, 0, 1])) == 4
    c = LshCode(0xDEADBEEF, 32)
    assert hamming(c, c) == 0
    with pytest.raises(InvalidInputError):
        hamming(LshCode(1, 8), LshCode(1, 16))


def test_hamming_matches_bitloop():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = LshCode.from_bits(rng.integers(0, 2, 64))
        b = LshCode.from_bits(rng.integers(0, 2, 64))
        assert hamming(a, b) == hamming_bitloop(a.bits, b.bits)


@settings(max_examples=200)
@given(a=codes64, b=codes64, c=codes64)
def test_hamming_is_a_metric(a, b, c):
    assert hamming(a, b) == hamming(b, a)
    assert hamming(a, a) == 0
    assert 0 <= hamming(a, b) <= 64
    assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


@given(bits=st.lists(st.integers(0, 1), min_size=1, max_size=100))
def test_code_serialisation(bits):
    code = LshCode.from_bits(bits)
    assert list(code.bits) == bits
    assert LshCode.from_hex(code.hex(), len(bits)) == code
    assert code.hex() == code.hex().lower()


def test_hex_is_msb_first():
    assert LshCode.from_bits([1, 0, 0, 0, 0, 0, 0, 1]).hex() == "81"
    assert LshCode.from_bits([0, 0, 0, 1]).hex() == "1"


def test_encode_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        encode(ModelParams.zeros(2, 2), make_basis(7, 8))
