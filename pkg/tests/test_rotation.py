import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seppmix.errors import InputDomainError
from seppmix.mixkit import MixedSample, Provenance, make_rng
from seppmix.rotation import ROTATIONS, Rotation, expand_with_rotations, rotate

from oracles import rotate90_oracle


def sample_image(seed, h=5, w=5):
    return make_rng(seed).random((3, h, w))


def test_targets_and_degrees():
    assert [int(r) for r in ROTATIONS] == [0, 1, 2, 3]
    assert [r.degrees for r in ROTATIONS] == [0, 90, 180, 270]
    assert Rotation.from_degrees(450) is Rotation.R90
    with pytest.raises(InputDomainError):
        Rotation.from_degrees(45)


def test_identity():
    x = sample_image(0)
    np.testing.assert_array_equal(rotate(x, Rotation.R0), x)


def test_four_quarter_turns():
    x = sample_image(1)
    y = x
    for _ in range(4):
        y = rotate(y, Rotation.R90)
    np.testing.assert_array_equal(y, x)


def test_two_by_two_index_map():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    got = rotate(np.array([[[a, b], [c, d]]]), Rotation.R90)
    np.testing.assert_array_equal(got[0], [[b, d], [a, c]])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(1, 7), w=st.integers(1, 7))
def test_quarter_turn_matches_index_oracle(seed, h, w):
    x = sample_image(seed, h, w)
    np.testing.assert_array_equal(rotate(x, Rotation.R90), rotate90_oracle(x))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.sampled_from(ROTATIONS), b=st.sampled_from(ROTATIONS))
def test_cyclic_group(seed, a, b):
    x = sample_image(seed)
    np.testing.assert_array_equal(rotate(rotate(x, a), b),
                                  rotate(x, Rotation.from_degrees(a.degrees + b.degrees)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.sampled_from(ROTATIONS))
def test_pixel_multiset_preserved(seed, r):
    x = sample_image(seed, 4, 6)
    np.testing.assert_array_equal(np.sort(rotate(x, r), axis=None), np.sort(x, axis=None))


def test_expand_with_rotations():
    x = sample_image(3)
    label = np.array([0.25, 0.75])
    s = MixedSample(x, label, Provenance("patchmix", 0, 1, 0.25, 0.75))
    out = expand_with_rotations(s)
    assert [o.rotation for o in out] == list(ROTATIONS)
    np.testing.assert_array_equal(out[0].image, x)
    np.testing.assert_array_equal(rotate(out[2].image, Rotation.R180), x)
    for o in out:
        np.testing.assert_array_equal(o.label, label)
