import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lczkit.errors import UsageError
from lczkit.io import PointCloud
from lczkit.rasterizer import (
    CHANNEL_NAMES,
    GridSpec,
    NormStats,
    compute_norm_stats,
    denormalize,
    load_stack,
    normalize,
    rasterize,
    save_stack,
)

SPEC = GridSpec(0.0, 0.0, 1.0, 4, 4)


def _cloud(rows):
    if not rows:
        return PointCloud()
    cols = list(zip(*rows))
    return PointCloud.from_arrays(*cols)


def test_empty_cloud_all_fill():
    stack = rasterize(PointCloud(), SPEC)
    assert not stack.channels.any()
    assert stack.channel("point_count").sum() == 0


def test_two_points_one_cell_statistics():
    cloud = _cloud([(0.5, 0.5, 10.0, 100.0, 1, 1), (0.7, 0.3, 14.0, 200.0, 1, 1)])
    stack = rasterize(cloud, SPEC, ground_reference=False)
    assert stack.channel("z_min")[0, 0] == 10.0
    assert stack.channel("z_max")[0, 0] == 14.0
    assert stack.channel("z_mean")[0, 0] == 12.0
    assert stack.channel("z_range")[0, 0] == 4.0
    assert stack.channel("point_count")[0, 0] == 2.0
    assert stack.channel("i_mean")[0, 0] == 150.0
    assert stack.channel("i_min")[0, 0] == 100.0
    assert stack.channel("i_max")[0, 0] == 200.0


def test_ground_referencing_shifts_elevation():
    cloud = _cloud([(0.5, 0.5, 100.0, 10.0, 1, 1), (2.5, 2.5, 104.0, 10.0, 1, 1)])
    stack = rasterize(cloud, SPEC)
    # 2nd percentile of {100, 104} sits slightly above 100
    assert stack.channel("z_mean")[0, 0] == pytest.approx(-0.08)
    assert stack.channel("z_mean")[2, 2] == pytest.approx(3.92)


def test_out_of_extent_points_counted_and_ignored():
    cloud = _cloud([(0.5, 0.5, 1.0, 10.0, 1, 1), (99.0, 99.0, 1.0, 10.0, 1, 1),
                    (-1.0, 0.5, 1.0, 10.0, 1, 1)])
    stack = rasterize(cloud, SPEC)
    assert stack.n_outside == 2
    assert stack.channel("point_count").sum() == 1


@st.composite
def clouds(draw):
    n = draw(st.integers(0, 60))
    rows = [(
        draw(st.floats(-1.0, 5.0)), draw(st.floats(-1.0, 5.0)),
        draw(st.floats(0.0, 20.0)), draw(st.floats(0.0, 1000.0)),
    ) for _ in range(n)]
    nrs = [draw(st.integers(1, 3)) for _ in range(n)]
    rns = [draw(st.integers(1, nr)) for nr in nrs]
    return _cloud([r + (rn, nr) for r, rn, nr in zip(rows, rns, nrs)])


@given(clouds(), st.randoms(use_true_random=False))
@settings(max_examples=40, deadline=None)
def test_permutation_invariance_bit_exact(cloud, rand):
    perm = list(range(len(cloud)))
    rand.shuffle(perm)
    shuffled = PointCloud.from_arrays(
        cloud.x[perm], cloud.y[perm], cloud.z[perm],
        cloud.intensity[perm], cloud.return_number[perm], cloud.num_returns[perm],
    )
    a = rasterize(cloud, SPEC)
    b = rasterize(shuffled, SPEC)
    assert a.channels.tobytes() == b.channels.tobytes()


@given(clouds())
@settings(max_examples=40, deadline=None)
def test_stack_invariants(cloud):
    stack = rasterize(cloud, SPEC)
    count = stack.channel("point_count")
    in_extent = int(len(cloud) - stack.n_outside)
    assert count.sum() == in_extent
    occupied = count >= 1
    assert np.all(stack.channel("z_min")[occupied] <= stack.channel("z_mean")[occupied] + 1e-12)
    assert np.all(stack.channel("z_mean")[occupied] <= stack.channel("z_max")[occupied] + 1e-12)
    for name in ("multi_return_fraction", "last_return_fraction"):
        assert np.all((stack.channel(name) >= 0) & (stack.channel(name) <= 1))
    assert np.all(np.isfinite(stack.channels))


def _raw_stack(channels):
    from lczkit.rasterizer import RasterStack

    return RasterStack(GridSpec(0, 0, 1.0, 2, 2), channels)


def test_norm_stats_constant_channel_clamped():
    channels = np.zeros((len(CHANNEL_NAMES), 2, 2))
    channels[0] = 5.0
    stats = compute_norm_stats([_raw_stack(channels)])
    assert stats.mean[0] == 5.0
    assert stats.std[0] == 1e-6


def test_norm_stats_hand_computation():
    channels = np.zeros((len(CHANNEL_NAMES), 2, 2))
    channels[0] = [[0.0, 2.0], [0.0, 2.0]]
    stats = compute_norm_stats([_raw_stack(channels)])
    assert stats.mean[0] == 1.0
    assert stats.std[0] == 1.0


def test_norm_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(3)
    stacks = [_raw_stack(rng.standard_normal((len(CHANNEL_NAMES), 2, 2)) * 10) for _ in range(5)]
    stats = compute_norm_stats(stacks)
    for ci in range(len(CHANNEL_NAMES)):
        cells = [float(v) for s in stacks for v in s.channels[ci].ravel()]
        mean = sum(cells) / len(cells)
        var = sum((v - mean) ** 2 for v in cells) / len(cells)
        assert stats.mean[ci] == pytest.approx(mean, rel=1e-12)
        assert stats.std[ci] == pytest.approx(max(var ** 0.5, 1e-6), rel=1e-12)


def test_norm_stats_empty_collection():
    with pytest.raises(UsageError):
        compute_norm_stats([])


def test_normalize_examples_and_round_trip():
    rng = np.random.default_rng(5)
    stack = _raw_stack(rng.standard_normal((len(CHANNEL_NAMES), 2, 2)))
    stats = compute_norm_stats([stack])
    normed = normalize(stack, stats)
    # value == mean -> 0; mean + std -> 1
    probe = _raw_stack(np.broadcast_to(stats.mean[:, None, None], stack.channels.shape).copy())
    assert np.allclose(normalize(probe, stats).channels, 0.0)
    probe2 = _raw_stack(np.broadcast_to((stats.mean + stats.std)[:, None, None],
                                        stack.channels.shape).copy())
    assert np.allclose(normalize(probe2, stats).channels, 1.0)
    back = denormalize(normed, stats)
    assert np.allclose(back.channels, stack.channels, rtol=1e-6, atol=1e-12)


def test_normalize_channel_count_mismatch():
    stack = _raw_stack(np.zeros((len(CHANNEL_NAMES), 2, 2)))
    with pytest.raises(UsageError):
        normalize(stack, NormStats(np.zeros(3), np.ones(3)))


def test_stack_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    cloud = _cloud([(rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 10),
                     rng.uniform(0, 100), 1, 2) for _ in range(40)])
    stack = rasterize(cloud, SPEC)
    path = tmp_path / "s.lczm"
    save_stack(stack, path)
    back = load_stack(path)
    assert back.spec == stack.spec
    # payload is float32; compare at that precision
    assert np.allclose(back.channels, stack.channels, rtol=1e-6, atol=1e-5)
