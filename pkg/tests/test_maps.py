from decimal import Decimal, getcontext

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from taskgrasp.maps import (
    MAP_MAX,
    ContactMap,
    MapError,
    compute_contact_map,
    compute_distance_map,
    contact_map_torch,
    rescale_distance,
)


def closed_form(d_norm, alpha):
    """1 - 2*sigmoid(alpha*d - 0.5) evaluated with 50-digit decimals."""
    getcontext().prec = 50
    x = Decimal(alpha) * Decimal(d_norm) - Decimal("0.5")
    return float(1 - 2 / (1 + (-x).exp()))


def test_zero_distance_value():
    assert MAP_MAX == pytest.approx(closed_form(0, 30), abs=1e-15)
    assert round(MAP_MAX, 6) == 0.244919


@pytest.mark.parametrize("alpha", [30.0, 100.0])
def test_rescale_special_points(alpha):
    assert rescale_distance(0.0, alpha) == pytest.approx(closed_form(0, alpha), abs=1e-9)
    assert abs(rescale_distance(0.5 / alpha, alpha)) <= 1e-12


def test_rescale_far_end():
    assert rescale_distance(1.0, 30.0) == pytest.approx(-1.0, abs=1e-12)
    assert rescale_distance(1.0, 30.0) == pytest.approx(closed_form(1, 30), abs=1e-15)


def test_rescale_domain():
    with pytest.raises(MapError):
        rescale_distance(1.5, 30.0)
    with pytest.raises(MapError):
        rescale_distance(-0.1, 30.0)
    with pytest.raises(MapError):
        rescale_distance(0.1, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from([30.0, 100.0]))
def test_rescale_monotone(a, b, alpha):
    lo, hi = min(a, b), max(a, b)
    assert rescale_distance(hi, alpha) <= rescale_distance(lo, alpha)


def test_distance_map_coincident_and_far():
    scene = np.array([[0.0, 0.0, 0.0]])
    dm = compute_distance_map(np.array([[0.0, 0.0, 0.0]]), scene, alpha=30, saturation=0.2)
    assert dm.values[0] == pytest.approx(0.244919, abs=1e-6)
    far = compute_distance_map(np.array([[1.0, 0, 0], [0, 2.0, 0]]), scene, alpha=30, saturation=0.2)
    np.testing.assert_allclose(far.values, -1.0, atol=1e-12)


def test_distance_map_monotone_in_distance():
    scene = np.zeros((1, 3))
    obj = np.array([[0.1, 0, 0], [0.2, 0, 0]])
    v = compute_distance_map(obj, scene, alpha=30, saturation=0.2).values
    assert v[0] > v[1]


def test_distance_map_empty_scene():
    with pytest.raises(MapError):
        compute_distance_map(np.zeros((2, 3)), np.zeros((0, 3)))


def test_contact_map_values():
    hand = np.array([[0.0, 0.0, 0.0]])
    obj = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
    cm = compute_contact_map(obj, hand)
    assert cm.values[0] == pytest.approx(0.244919, abs=1e-6)
    assert cm.values[1] == 0.0
    with pytest.raises(MapError):
        compute_contact_map(obj, np.zeros((0, 3)))


def test_contact_map_permutation_invariant(rng):
    obj = rng.normal(scale=0.02, size=(64, 3))
    hand = rng.normal(scale=0.02, size=(100, 3))
    a = compute_contact_map(obj, hand).values
    b = compute_contact_map(obj, hand[rng.permutation(100)]).values
    np.testing.assert_array_equal(a, b)


def test_contact_map_range_guard():
    with pytest.raises(MapError):
        ContactMap(np.array([0.5, 1.2]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_maps_rigid_invariance_and_range(seed):
    g = np.random.default_rng(seed)
    obj, ref = g.normal(scale=0.05, size=(50, 3)), g.normal(scale=0.05, size=(80, 3))
    rot = Rotation.random(random_state=seed).as_matrix()
    t = g.normal(size=3)
    moved = lambda p: p @ rot.T + t  # noqa: E731
    for fn in (compute_distance_map, compute_contact_map):
        a = fn(obj, ref).values
        np.testing.assert_allclose(fn(moved(obj), moved(ref)).values, a, atol=1e-9)
    dm = compute_distance_map(obj, ref).values
    assert np.all((dm >= -1.0) & (dm <= 0.2450))
    cm = compute_contact_map(obj, ref).values
    assert np.all((cm >= 0.0) & (cm <= 1.0))


def test_torch_contact_map_matches_numpy(rng):
    obj = rng.normal(scale=0.01, size=(40, 3))
    hand = rng.normal(scale=0.01, size=(60, 3))
    ref = compute_contact_map(obj, hand).values
    got = contact_map_torch(torch.as_tensor(obj)[None], torch.as_tensor(hand)[None])[0].numpy()
    np.testing.assert_allclose(got, ref, atol=1e-12)
