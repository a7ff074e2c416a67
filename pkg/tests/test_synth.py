import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdehaze import synth


def test_beta_zero_is_identity():
    J, d = synth.generate_scene(0, 64)
    I = synth.synthesize_haze(J, d, A=0.9, beta=0.0)
    assert np.array_equal(I, J)


def test_uniform_scene_half_transmission():
    # beta * d_scale * d = ln 2 everywhere -> T = 0.5 -> I = 0.5*J + 0.5*A
    J = np.full((16, 16, 3), 0.8)
    d = np.full((16, 16), 1.0)
    I = synth.synthesize_haze(J, d, A=1.0, beta=np.log(2.0), d_scale=1.0)
    assert np.allclose(I, 0.9, atol=1e-12)


def test_dense_haze_approaches_airlight():
    J, d = synth.generate_scene(1, 64)
    I = synth.synthesize_haze(J, np.ones_like(d), A=0.85, beta=200.0)
    assert np.max(np.abs(I - 0.85)) < 1e-12


def test_scene_determinism():
    a = synth.generate_scene(42, 64)
    b = synth.generate_scene(42, 64)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_objects_are_foreground_with_multiple_levels():
    for seed in range(20):
        _, d = synth.generate_scene(seed, 64)
        levels = np.unique(d)
        assert levels.size >= 2
        assert levels.max() == 1.0          # background plane
        assert np.all(levels[:-1] < 1.0)    # every object in front of it


def test_scene_size_validation():
    with pytest.raises(ValueError):
        synth.generate_scene(0, 63)
    with pytest.raises(ValueError):
        synth.generate_scene(0, 24)


def test_negative_beta_rejected():
    J, d = synth.generate_scene(0, 32)
    with pytest.raises(ValueError):
        synth.synthesize_haze(J, d, A=0.9, beta=-0.1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.floats(0.1, 3.0), A=st.floats(0.7, 1.0))
def test_round_trip_inversion_property(seed, beta, A):
    J, d = synth.generate_scene(seed, 32)
    I = synth.synthesize_haze(J, d, A=A, beta=beta)
    t = synth.transmission(d, beta)
    J2 = synth.invert_haze(I, d, A, beta)
    ok = t >= 0.05
    assert np.max(np.abs(J2[ok] - J[ok])) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.floats(0.0, 4.0), A=st.floats(0.7, 1.0))
def test_outputs_in_unit_range(seed, beta, A):
    J, d = synth.generate_scene(seed, 32)
    I = synth.synthesize_haze(J, d, A=A, beta=beta)
    assert I.min() >= 0.0 and I.max() <= 1.0


def test_monotone_approach_to_airlight():
    J, d = synth.generate_scene(5, 64)
    prev = None
    for beta in np.linspace(0.0, 4.0, 9):
        I = synth.synthesize_haze(J, d, A=1.0, beta=beta)
        gap = np.abs(I - 1.0)
        if prev is not None:
            assert np.all(gap <= prev + 1e-12)
        prev = gap


def test_make_dataset_reproducible_bytes(tmp_path):
    def build(sub):
        root = os.path.join(tmp_path, sub)
        m = synth.make_dataset(root, n=4, seed=7, size=32)
        blobs = {}
        for e in m.entries:
            for name in (e.hazy, e.clear, e.depth):
                with open(os.path.join(root, name), "rb") as f:
                    blobs[name] = f.read()
        with open(synth.manifest_path(root, "train"), encoding="utf-8") as f:
            blobs["manifest"] = f.read()
        return blobs

    b1, b2 = build("a"), build("b")
    assert b1 == b2


def test_make_dataset_manifest_roundtrip(tmp_path):
    root = str(tmp_path / "ds")
    made = synth.make_dataset(root, n=5, seed=3, size=32, split="test")
    loaded = synth.load_manifest(root, split="test")
    assert loaded.count == 5 and len(loaded.entries) == 5
    assert loaded.beta_range == made.beta_range
    s = synth.load_sample(loaded, 2)
    assert s.I.shape == (32, 32, 3) and s.d.shape == (32, 32)
    assert s.I.min() >= 0 and s.I.max() <= 1


def test_make_dataset_zero_beta_copies_clear(tmp_path):
    root = str(tmp_path / "ds0")
    m = synth.make_dataset(root, n=3, seed=1, size=32, beta_range=(0.0, 0.0))
    for i in range(3):
        s = synth.load_sample(m, i)
        assert np.array_equal(s.I, s.J)


def test_make_dataset_validates_n(tmp_path):
    with pytest.raises(ValueError):
        synth.make_dataset(str(tmp_path / "x"), n=0, seed=0)
