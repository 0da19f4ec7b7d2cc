import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from itocap import capacity, geometry
from itocap.capacity import DiscreteMeasure, KernelSpec
from itocap.errors import DomainError
from itocap.geometry import Ball, Box, SetSpec, Segment
from suites import SPLIT_SETS, STANDARD_SETS, union

RES = 300
SLACK = 0.02  # discretization slack on the order properties


def lp(set_, spec=None, resolution=RES, **kw):
    spec = spec or KernelSpec(set_.dimension)
    return capacity.capacity_lp(set_, spec, resolution, second=False, **kw)


# -- kernel ----------------------------------------------------------------------


def test_upstream_kernel_reduces_to_newtonian():
    xi = np.array([1.0, 2.0, -1.0])
    spec = KernelSpec(3)
    assert capacity.kernel(xi - 2 * np.eye(3)[0], xi, spec) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    for s in (0.5, 1.0, 2.0):
        assert capacity.kernel(xi - s * np.eye(3)[0], xi, spec) == pytest.approx(1 / (2 * math.pi * s), rel=1e-12)


def test_downstream_kernel_decays():
    xi = np.zeros(3)
    assert capacity.kernel(xi + np.eye(3)[0], xi, KernelSpec(3)) == pytest.approx(math.exp(-2) / (2 * math.pi), rel=1e-14)


def test_planar_kernel_uses_macdonald_function():
    from scipy.special import k0
    z, xi = np.array([0.3, 1.2]), np.array([-0.5, 0.1])
    r = np.linalg.norm(z - xi)
    expected = k0(r) * math.exp(-(z - xi)[0]) / math.pi
    assert capacity.kernel(z, xi, KernelSpec(2)) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("d", [2, 3])
def test_reflection_identity(d):
    rng = np.random.default_rng(11)
    z, xi = rng.normal(size=(2, 1000, d)) * 3
    theta = rng.normal(size=d)
    minus = capacity.kernel(z, xi, KernelSpec(d, theta, "-", 1.3))
    plus = capacity.kernel(xi, z, KernelSpec(d, theta, "+", 1.3))
    assert np.max(np.abs(minus - plus) / plus) <= 1e-15


def test_kernel_singular_at_coincident_points():
    with pytest.raises(DomainError):
        capacity.kernel(np.ones(3), np.ones(3), KernelSpec(3))


def test_kernel_spec_validation():
    assert np.linalg.norm(KernelSpec(3, (3, 4, 0)).theta) == pytest.approx(1, abs=1e-12)
    with pytest.raises(DomainError):
        KernelSpec(3, k=0)
    with pytest.raises(DomainError):
        KernelSpec(3, sign="x")
    with pytest.raises(DomainError):
        KernelSpec(3, (1, 0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.2, 3), st.floats(0.2, 3))
def test_kernel_grows_with_speed_upstream(r, k1, k2):
    # upstream of the pole the exponent cancels and only the Bessel factor depends on k
    lo, hi = sorted((k1, k2))
    z, xi = np.array([-r, 0, 0]), np.zeros(3)
    assert capacity.kernel(z, xi, KernelSpec(3, k=lo)) == pytest.approx(capacity.kernel(z, xi, KernelSpec(3, k=hi)))
    zp, xp = np.array([-r, 0.0]), np.zeros(2)
    assert capacity.kernel(zp, xp, KernelSpec(2, k=lo)) >= capacity.kernel(zp, xp, KernelSpec(2, k=hi)) * (1 - 1e-12) or lo == hi


# -- potential ---------------------------------------------------------------------


def test_point_mass_potential():
    m = DiscreteMeasure.point_masses([[0, 0, 0]], [1.0])
    assert capacity.potential(m, np.array([-2.0, 0, 0]), KernelSpec(3)) == pytest.approx(1 / (4 * math.pi))


def test_empty_measure_potential_is_zero():
    assert capacity.potential(DiscreteMeasure.empty(3), np.array([1.0, 0, 0]), KernelSpec(3)) == 0


def _sphere_potential_oracle(z, radius, spec):
    """Potential of the uniform probability on a sphere, by adaptive quadrature.

    Polar angles are measured from the direction of ``z`` so the singularity
    sits at the end of the range.
    """
    basis = np.linalg.qr(np.column_stack([z, np.eye(3)[:, 1:]]))[0]
    basis[:, 0] *= np.sign(basis[:, 0] @ z)

    def integrand(phi, theta):
        xi = radius * basis @ [math.cos(theta), math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi)]
        diff = z - xi
        r = np.linalg.norm(diff)
        return math.exp(-(r + diff[0])) / (2 * math.pi * r) * math.sin(theta) / (4 * math.pi)
    val, _ = integrate.dblquad(integrand, 0, math.pi, 0, 2 * math.pi, epsabs=1e-10, epsrel=1e-8)
    return val


@pytest.mark.parametrize("z", [(-0.05, 0, 0), (0.05, 0, 0), (0, 0.05, 0)])
def test_uniform_sphere_potential_matches_quadrature(z):
    radius = 0.05
    spec = KernelSpec(3)
    m = capacity.discretize(SetSpec(3, (Ball((0, 0, 0), radius),)), 400)
    z = np.array(z, dtype=float)
    assert capacity.potential(m, z, spec) == pytest.approx(_sphere_potential_oracle(z, radius, spec), rel=0.02)


def test_uniform_sphere_potential_near_newtonian_value():
    radius = 0.05
    m = capacity.discretize(SetSpec(3, (Ball((0, 0, 0), radius),)), 400)
    newton = 1 / (2 * math.pi * radius)
    # the upstream pole sees almost no exponential damping
    assert capacity.potential(m, np.array([-radius, 0, 0]), KernelSpec(3)) == pytest.approx(newton, rel=0.05)
    # downstream the damping is of the order of the diameter
    assert capacity.potential(m, np.array([radius, 0, 0]), KernelSpec(3)) == pytest.approx(newton, rel=0.10)


# -- discretization ------------------------------------------------------------------


def test_sphere_cells_are_uniform():
    m = capacity.discretize(SetSpec(3, (Ball((0, 0, 0), 1),)), 200)
    assert 180 <= len(m) <= 220
    assert np.ptp(m.sizes) / np.mean(m.sizes) <= 0.10
    assert np.allclose(np.linalg.norm(m.nodes, axis=1), 1, atol=1e-12)


def test_segment_cells():
    m = capacity.discretize(SetSpec(2, (Segment((0, 0), (1, 0)),)), 5)
    assert np.allclose(m.nodes[:, 0], [0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.allclose(m.sizes, 0.2)
    assert m.mass == pytest.approx(1.0)


def test_fractal_cells_split_evenly():
    s = geometry.gen_fractal_ET(3)
    m = capacity.discretize(s, 40)
    assert len(m) == 40
    leaf = np.array([int(np.argmin([p.distance(x[None])[0] for p in s.primitives])) for x in m.nodes])
    assert np.bincount(leaf).tolist() == [5] * 8


@pytest.mark.parametrize("name", list(STANDARD_SETS))
def test_nodes_lie_on_the_set(name):
    s = STANDARD_SETS[name]
    m = capacity.discretize(s, RES)
    assert np.all(m.weights >= 0)
    assert m.mass == pytest.approx(1.0, abs=1e-12)
    tol = np.sqrt(m.sizes) if m.cell_dim == 2 else m.sizes
    assert np.all(s.distance(m.nodes) <= tol)


def test_discretize_errors():
    with pytest.raises(DomainError):
        capacity.discretize(SetSpec(3, ()), 10)
    with pytest.raises(DomainError):
        capacity.discretize(geometry.gen_fractal_ET(3), 4)


def test_fixed_spacing_gives_nested_nodes():
    a, b = SPLIT_SETS["two-balls"]
    part = capacity.discretize(a, spacing=0.1)
    whole = capacity.discretize(union(a, b), spacing=0.1)
    assert {tuple(x) for x in part.nodes} <= {tuple(x) for x in whole.nodes}


# -- linear program ------------------------------------------------------------------


def test_small_ball_capacity_near_newtonian():
    r = lp(SetSpec(3, (Ball((0, 0, 0), 0.05),)), resolution=400)
    assert r.capacity == pytest.approx(2 * math.pi * 0.05, rel=0.15)


@pytest.mark.parametrize("name", list(STANDARD_SETS))
def test_lp_invariants(name):
    s = STANDARD_SETS[name]
    spec = KernelSpec(s.dimension)
    r = lp(s, spec)
    assert r.capacity == pytest.approx(r.measure.mass, rel=1e-12)
    assert r.capacity * r.sup_potential == pytest.approx(1, abs=1e-9)
    A = capacity.assemble(capacity.discretize(s, RES), spec)
    assert np.max(A @ r.measure.weights) <= 1 + 1e-9
    plus = lp(s, spec.flipped())
    assert abs(plus.capacity - r.capacity) / r.capacity <= 0.02


def test_lp_rejects_dimension_mismatch():
    with pytest.raises(DomainError):
        lp(STANDARD_SETS["ball"], KernelSpec(2))


def test_fallback_solver_agrees_with_certificate():
    s = STANDARD_SETS["two-balls"]
    A = capacity.assemble(capacity.discretize(s, 120), KernelSpec(3))
    nu_cert, method, _ = capacity.solve_lp(A)
    assert method == "certificate"
    res = capacity.optimize.linprog(-np.ones(len(A)), A_ub=A, b_ub=np.ones(len(A)), bounds=(0, None), method="highs")
    assert nu_cert.sum() == pytest.approx(-res.fun, rel=1e-7)
    # a non-square system always goes through the general solver
    nu, method, _ = capacity.solve_lp(A[:, :80])
    assert method == "highs" and np.max(A[:, :80] @ nu) <= 1 + 1e-7


def test_two_resolutions_reported():
    r = capacity.capacity_lp(STANDARD_SETS["ball"], KernelSpec(3), 400)
    assert r.coarse_capacity is not None
    assert r.agreement == pytest.approx(abs(r.capacity - r.coarse_capacity) / r.capacity)
    assert r.refined
    js = r.to_json(include_measure=False)
    assert js["resolution"][1] == r.coarse_resolution and "equilibrium" not in js


# the planar fractal reaches 64 units downstream, so its far field needs a larger radius
@pytest.mark.parametrize("name, radius", [("ball", 1e3), ("sheets", 1e3), ("two-balls", 1e3), ("segments", 1e4)])
def test_far_field_recovers_mass(name, radius):
    s = STANDARD_SETS[name]
    spec = KernelSpec(s.dimension)
    r = lp(s, spec)
    assert capacity.far_field_mass(r.measure, spec, radius) == pytest.approx(r.capacity, rel=0.02)


@pytest.mark.parametrize("name", list(STANDARD_SETS))
def test_equilibrium_potential_is_one_off_grid(name):
    s = STANDARD_SETS[name]
    spec = KernelSpec(s.dimension)
    r = lp(s, spec, resolution=800)
    probes = capacity.off_grid_probes(s, r.measure)
    assert len(probes) > 20
    u = capacity.potential(r.measure, probes, spec)
    # probes next to the free edge of a sheet see the edge singularity of the density
    assert np.mean(np.abs(u - 1) <= 0.05) >= 0.95
    assert np.all(np.abs(u - 1) <= 0.1)


# -- order properties -----------------------------------------------------------------


@pytest.mark.parametrize("name", list(SPLIT_SETS))
def test_monotone_and_subadditive(name):
    a, b = SPLIT_SETS[name]
    both = union(a, b)
    spacing = 0.15
    ca, cb, cab = (lp(s, spacing=spacing).capacity for s in (a, b, both))
    assert max(ca, cb) <= cab + 1e-9
    assert cab <= ca + cb + 1e-9


@pytest.mark.parametrize("factor", [0.5, 0.8])
@pytest.mark.parametrize("name", ["ball", "box", "sheet", "sheets", "two-balls", "segments"])
def test_contraction_does_not_increase_capacity(name, factor):
    s = STANDARD_SETS[name]
    assert lp(geometry.contract(s, factor)).capacity <= lp(s).capacity * (1 + SLACK)


@pytest.mark.parametrize("name", list(STANDARD_SETS))
def test_capacity_grows_with_speed(name):
    s = STANDARD_SETS[name]
    caps = [lp(s, KernelSpec(s.dimension, k=k)).capacity for k in (0.5, 1.0, 2.0)]
    assert caps[0] <= caps[1] * (1 + SLACK) and caps[1] <= caps[2] * (1 + SLACK)


def test_almost_additivity_constant_reported():
    pieces = [SetSpec(3, (Box((16 * j, 4 * j, 0), (4, 1, 1)),)) for j in range(3)]
    total = lp(SetSpec(3, tuple(p.primitives[0] for p in pieces))).capacity
    ratio = total / sum(lp(p).capacity for p in pieces)
    assert 0.3 < ratio <= 1 + 1e-9


def test_capacity_of_characteristic_boxes_scales_quadratically():
    ratios = [lp(geometry.characteristic_set(h, 3), resolution=400).capacity / h**2 for h in (1, 2, 4)]
    assert max(ratios) / min(ratios) <= 3


# -- bounds ----------------------------------------------------------------------------


def test_bounds_sandwich_small_ball():
    s = SetSpec(3, (Ball((0, 0, 0), 0.05),))
    b = capacity.capacity_bounds(s, KernelSpec(3), 400)
    assert b.lower <= b.lp_capacity <= b.upper
    assert b.calibration == pytest.approx(capacity.calibration_constant(3))
    assert "calibration_constant" in b.to_json()


def test_bounds_of_empty_set():
    b = capacity.capacity_bounds(SetSpec(3, ()), KernelSpec(3))
    assert (b.lower, b.upper) == (0.0, 0.0)


def test_fractal_upper_bound_below_slab():
    spec = KernelSpec(2)
    fractal = capacity.capacity_bounds(geometry.gen_fractal_ET(5), spec, 200)
    slab = capacity.capacity_bounds(geometry.full_slab(32, 2), spec, 200)
    assert fractal.upper <= slab.upper


@pytest.mark.parametrize("name", list(STANDARD_SETS))
def test_bounds_bracket_lp_capacity(name):
    s = STANDARD_SETS[name]
    b = capacity.capacity_bounds(s, KernelSpec(s.dimension), RES)
    assert b.lower <= b.lp_capacity * (1 + 1e-12)
    assert b.lp_capacity <= b.upper
