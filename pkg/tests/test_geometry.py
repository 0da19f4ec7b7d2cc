import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itocap import config, geometry
from itocap.errors import DomainError
from itocap.geometry import AnnularSector, Ball, Box, Ellipsoid, Segment, SetSpec, Sheet


def ball_set(center, r):
    return SetSpec(len(center), (Ball(center, r),))


# -- membership and distance --------------------------------------------------


def test_interior_point_of_ball():
    s = ball_set((0, 0, 0), 1)
    x = np.array([0.5, 0, 0])
    assert geometry.contains(s, x)
    assert geometry.distance(s, x) == 0


def test_radial_distance_to_ball():
    assert geometry.distance(ball_set((0, 0, 0), 1), np.array([2.0, 0, 0])) == pytest.approx(1.0, abs=1e-15)


def test_face_distance_to_box():
    s = SetSpec(3, (Box((0, 0, 0), (4, 1, 1)),))
    assert geometry.distance(s, np.array([5, 0.5, 0.5])) == pytest.approx(1.0, abs=1e-15)


def test_dimension_mismatch_is_an_error():
    with pytest.raises(DomainError):
        geometry.distance(ball_set((0, 0, 0), 1), np.zeros(2))
    with pytest.raises(DomainError):
        SetSpec(2, (Ball((0, 0, 0), 1),))


def _brute_distance(prim, P, n=400_000, seed=0):
    """Oracle: minimum distance to a dense random sample of the primitive."""
    S = prim.sample(n, np.random.default_rng(seed))
    return np.array([np.min(np.linalg.norm(S - p, axis=1)) for p in P])


@pytest.mark.parametrize("prim", [
    Box((0, 0, 0), ((2, 0.3, 0), (0, 1, 0.2), (0.1, 0, 1.5))),
    Ellipsoid((1, 0, 0), ((1.5, 0.2, 0), (0, 0.5, 0), (0, 0.1, 0.8))),
    Sheet((0, 0, 0), (0, 2, 0), (0, 0, 1)),
    AnnularSector(2, 3, 0.2, 1.4),
    Segment((0, 0), (1, 2)),
])
def test_distance_against_sampling_oracle(prim):
    rng = np.random.default_rng(5)
    P = rng.uniform(-4, 4, size=(25, prim.dim))
    exact = prim.distance(P)
    approx = _brute_distance(prim, P)
    # sampling only over-estimates; the gap is bounded by the sample spacing
    assert np.all(exact <= approx + 1e-12)
    assert np.all(approx - exact <= 0.05)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_zero_distance_iff_member(x):
    s = SetSpec(3, (Ball((0, 0, 0), 1), Box((1, -1, -1), (2, 1, 1)), Sheet((-2, -1, -1), (0, 2, 0), (0, 0, 2))))
    x = np.array(x)
    dist = geometry.distance(s, x)
    assert (dist <= 1e-12) == bool(geometry.contains(s, x))


def test_accelerated_distance_matches_brute_force():
    s = geometry.gen_annular_example([8])
    assert len(s) > SetSpec._accel_threshold
    rng = np.random.default_rng(3)
    P = rng.uniform(-150, 150, size=(300, 2))
    brute = np.min(np.stack([p.distance(P) for p in s.primitives]), axis=0)
    assert np.allclose(s.distance(P), brute, rtol=0, atol=1e-9)
    assert np.all(s.lower_distance(P) <= brute + 1e-9)


def test_segment_crossing_detected():
    s = SetSpec(2, (Segment((1, -1), (0, 2)),))
    P0 = np.array([[0.0, 0.0], [0.0, 5.0]])
    P1 = np.array([[2.0, 0.0], [2.0, 5.0]])
    assert s.crossing(P0, P1).tolist() == [True, False]


# -- contraction ---------------------------------------------------------------


def test_contraction_by_one_is_identity():
    s = geometry.gen_fractal_ET(3, d=3)
    assert geometry.contract(s, 1.0) is s


def test_contraction_of_box():
    s = SetSpec(3, (Box((0, 0, 0), (1, 2, 2)),))
    c = geometry.contract(s, 0.5).primitives[0]
    assert np.allclose(c.edges, np.diag([1.0, 1.0, 1.0]))
    assert np.allclose(c.corner, 0)


def test_contraction_of_ball_is_ellipsoid():
    c = geometry.contract(ball_set((3, 1, 0), 1), 0.5).primitives[0]
    assert isinstance(c, Ellipsoid)
    assert np.allclose(c.center, (3, 0.5, 0))
    assert sorted(c.semi_axes) == pytest.approx([0.5, 0.5, 1.0])


def test_contraction_factor_range():
    with pytest.raises(DomainError):
        geometry.contract(ball_set((0, 0, 0), 1), 1.5)
    with pytest.raises(DomainError):
        geometry.contract(ball_set((0, 0, 0), 1), 0.0)


@pytest.mark.parametrize("f", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("s", [
    SetSpec(3, (Box((0, 0, 0), (4, 2, 1)),)),
    SetSpec(3, (Ball((3, 1, 0), 1), Ball((5, -2, 1), 0.5))),
    SetSpec(3, (Sheet((2, 0, 0), (0, 2, 0), (0, 0, 1)),)),
])
def test_projection_area_scales_under_contraction(s, f):
    before = geometry.project(s).area
    after = geometry.project(geometry.contract(s, f)).area
    assert after == pytest.approx(f**2 * before, rel=0.02)


# -- projection ----------------------------------------------------------------


def test_projection_of_slab():
    T = 4
    p = geometry.project(geometry.full_slab(T, 3))
    assert p.area == pytest.approx(16, rel=1e-12)
    lo, hi = p.d_tilde
    assert lo == pytest.approx(2 * math.sqrt(16 / math.pi), rel=1e-12)
    assert hi == pytest.approx(4 * math.sqrt(2), rel=1e-12)


def test_projection_of_ball():
    p = geometry.project(ball_set((0, 0, 0), 1))
    assert p.area == pytest.approx(math.pi, rel=1e-3)
    assert p.d_tilde[0] == pytest.approx(2, rel=1e-3)
    assert p.d_tilde[1] == pytest.approx(2, rel=1e-3)


def test_coincident_sheets_project_once():
    s = SetSpec(3, (Sheet((0, 0, 0), (0, 1, 0), (0, 0, 1)), Sheet((9, 0, 0), (0, 1, 0), (0, 0, 1))))
    assert geometry.project(s).area == pytest.approx(1.0, rel=1e-12)


def test_planar_projection_is_a_length():
    p = geometry.project(geometry.gen_fractal_ET(4))
    assert p.area == pytest.approx(16.0)


# -- generators ----------------------------------------------------------------


def test_fractal_first_generation():
    s = geometry.gen_fractal_ET(1)
    bases = sorted(tuple(p.base) for p in s.primitives)
    assert bases == [(0.0, 1.0), (3.0, 0.0)]


def test_fractal_second_generation_tiles_the_side():
    s = geometry.gen_fractal_ET(2)
    assert len(s) == 4
    ys = sorted(p.base[1] for p in s.primitives)
    assert ys == [0.0, 1.0, 2.0, 3.0]
    assert all(p.direction == (0.0, 1.0) for p in s.primitives)
    assert all(0 <= p.base[0] < 16 for p in s.primitives)


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_fractal_leaf_count_and_bounds(N):
    T = 2**N
    s = geometry.gen_fractal_ET(N)
    assert len(s) == T
    lo, hi = s.bbox()
    assert lo[0] >= 0 and hi[0] <= T * T
    assert geometry.project(s).area == pytest.approx(T)


def test_fractal_in_three_dimensions_uses_sheets():
    s = geometry.gen_fractal_ET(3, d=3)
    assert len(s) == 8
    assert all(isinstance(p, Sheet) for p in s.primitives)
    assert geometry.project(s).area == pytest.approx(64.0)


def test_degenerate_and_oversized_fractals():
    with pytest.raises(DomainError):
        geometry.gen_fractal_ET(0)
    assert len(geometry.gen_fractal_ET(0, allow_degenerate=True)) == 1
    with pytest.raises(DomainError):
        geometry.gen_fractal_ET(21)


def test_annular_example_has_rotated_copies():
    s = geometry.gen_annular_example([8])
    assert len(s) == 8 * 8
    radii = [p.r_min for p in s.primitives]
    assert min(radii) >= 64 and max(p.r_max for p in s.primitives) <= 128
    # each copy is the first one rotated by a multiple of 2 pi / 8
    first = sorted((p.r_min, round(p.theta_min, 12)) for p in s.primitives[:8])
    for j in range(1, 8):
        copy = sorted((p.r_min, round(p.theta_min - 2 * math.pi * j / 8, 12)) for p in s.primitives[8 * j:8 * j + 8])
        assert copy == first


def test_empty_annular_example():
    assert geometry.gen_annular_example([]).empty


def test_every_ray_meets_both_annuli():
    s = geometry.gen_annular_example([8, 32])
    for ang in np.deg2rad(np.arange(360) + 0.5):
        u = np.array([math.cos(ang), math.sin(ang)])
        for T in (8, 32):
            r = np.arange(T * T, 2 * T * T + 1, 0.25)
            assert s.contains(r[:, None] * u).any()


def test_overlapping_annuli_rejected():
    with pytest.raises(DomainError):
        geometry.gen_annular_example([8, 8])
    with pytest.raises(DomainError):
        geometry.gen_annular_example([12])


# -- Hausdorff content ------------------------------------------------------------


def test_content_of_characteristic_box():
    h = 4
    rep = geometry.hausdorff_content(geometry.characteristic_set(h, 3), np.eye(3)[0])
    assert rep.content == pytest.approx(h * h)
    assert len(rep.pieces) == 1


def test_content_of_small_ball():
    rep = geometry.hausdorff_content(ball_set((0, 0, 0), 0.25))
    assert rep.content <= geometry.measure_function(0.5, 3) + 1e-12
    assert len(rep.pieces) == 1


def test_content_of_planar_fractal_is_best_of_two_covers():
    s = geometry.gen_fractal_ET(3)
    rep = geometry.hausdorff_content(s, np.eye(2)[0])
    per_leaf = 8 * geometry.measure_function(1, 2)
    single = geometry.measure_function(8, 2)
    assert rep.content <= min(per_leaf, single) + 1e-9
    assert rep.content > 0


@pytest.mark.parametrize("s", [
    geometry.gen_fractal_ET(3),
    geometry.gen_fractal_ET(2, d=3),
    SetSpec(3, (Ball((2, 1, 0), 0.7), Box((5, 0, 0), (3, 0.5, 2)))),
    SetSpec(2, (AnnularSector(3, 5, 0.1, 0.9),)),
])
def test_cover_contains_samples(s):
    rep = geometry.hausdorff_content(s)
    P = s.sample(1000, np.random.default_rng(1))
    assert rep.covers(P).all()
    assert rep.content > 0


def test_rotated_cover_contains_samples():
    s = SetSpec(2, (AnnularSector(16, 20, 0.3, 0.7),))
    theta = np.array([math.cos(0.5), math.sin(0.5)])
    rep = geometry.hausdorff_content(s, theta)
    assert rep.covers(s.sample(1000, np.random.default_rng(2))).all()


def test_content_monotone_under_inclusion():
    full = geometry.gen_fractal_ET(4)
    for k in (1, 3, 8, 12):
        part = SetSpec(2, full.primitives[:k])
        assert geometry.hausdorff_content(part).content <= geometry.hausdorff_content(full).content + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.55, 3.0))
def test_content_monotone_for_nested_balls(r_small, r_big):
    inner = ball_set((4, 0, 0), r_small)
    outer = ball_set((4, 0, 0), r_big)
    assert geometry.hausdorff_content(inner).content <= geometry.hausdorff_content(outer).content + 1e-12


def test_measure_function_values():
    assert geometry.measure_function(0.5, 3) == 0.5
    assert geometry.measure_function(4, 3) == 16
    assert geometry.measure_function(0.25, 2) == pytest.approx(1 / math.log(4))
    with pytest.raises(DomainError):
        geometry.measure_function(0, 3)


def test_polar_cells_and_decomposition():
    cell = geometry.polar_cell(2, 1)
    assert cell.r_min == 16 and cell.r_max == 64
    assert cell.theta_min == pytest.approx(math.pi / 2)
    s = geometry.gen_annular_example([8])
    family = geometry.decompose_polar(s)
    assert sum(len(v) for v in family.values()) == len(s)
    for (n, j), piece in family.items():
        for p in piece.primitives:
            c, _ = p.bounding_sphere()
            assert 4**n <= np.linalg.norm(c) < 4 ** (n + 1)


def test_rotated_content_comparison_helper():
    assert geometry.rotated_content_bound(2.0, 3, 0.0) == 2.0
    assert geometry.rotated_content_bound(2.0, 3, math.pi / 2) == pytest.approx(2.0 * 9)


# -- serialization -------------------------------------------------------------------


@pytest.mark.parametrize("s", [
    geometry.gen_fractal_ET(3, d=3),
    geometry.gen_annular_example([8]),
    SetSpec(3, (Ball((1, 2, 3), 0.5), Box((0, 0, 0), ((1, 1, 0), (0, 1, 0), (0, 0, 2))),
                Ellipsoid((0, 0, 0), ((1, 0, 0), (0, 2, 0), (0, 0, 3)))), "mixed"),
    SetSpec(2, (Segment((0, 0), (1, 0)), AnnularSector(1, 2, 0, 1, (3, 4)))),
])
def test_json_round_trip(s):
    again = config.set_from_json(s.to_json())
    assert again == s
    assert again.label == s.label
