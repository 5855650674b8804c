import numpy as np
import pytest
from scipy.integrate import quad

from radonlab.core import DilationSpec, PreconditionError
from radonlab.kernels import (
    BumpParams,
    GridKernel,
    Profile,
    axis_quadrature,
    cell_grid,
    dilated_integrals,
    drift,
    dump_kernel,
    kernel_quadrature,
    kernel_sum,
    load_kernel,
    make_bump_family,
    synth_kernel,
    tensor_family,
    validate_product_bounds,
)

E1 = DilationSpec.single(1)


def fam1(kind="generic", fixed=False, J=4, seed=0, a=0.5):
    return make_bump_family(BumpParams(a=a, kind=kind, fixed=fixed, seed=seed), J, E1)


# ---------------------------------------------------------------------------
# profiles


@pytest.mark.parametrize("p,k", [((1,), 4), ((1, 0.5, -0.25), 6), ((0, 1), 3)])
def test_profile_integral_matches_quad(p, k):
    pr = Profile.bump(p, k, 0.3)
    num, _ = quad(lambda s: float(pr(np.array([s]))[0]), -0.3, 0.3, epsabs=1e-13)
    assert abs(pr.integral() - num) < 1e-11


def test_profile_derivative_matches_finite_difference():
    pr = Profile.bump((1, 0.5), 6, 0.4)
    s = np.linspace(-0.39, 0.39, 4001)
    fd = np.gradient(pr(s), s)
    assert np.max(np.abs(pr.derivative(1)(s) - fd)[5:-5]) < 1e-3 * np.max(np.abs(fd))


def test_profile_support():
    pr = Profile.bump((1,), 4, 0.25)
    assert pr(np.array([0.25, 0.3, -0.26])).tolist() == [0.0, 0.0, 0.0]


# ---------------------------------------------------------------------------
# families


def test_zero_index_member_is_uncancelled():
    fam = fam1(fixed=True)
    assert abs(fam.members[(0,)].integral()) > 1e-3
    for j in [(1,), (2,)]:
        assert abs(fam.members[j].integral()) < 1e-12


def test_odd_profile_projection_is_zero():
    fam = fam1(kind="odd", fixed=True)
    ax = [cell_grid(fam.half_side, 64)]
    base = fam.members[(0,)].on_axes(ax)
    for j in fam.members:
        assert np.array_equal(fam.members[j].on_axes(ax), base)


@pytest.mark.parametrize("e", [E1, DilationSpec.coordinate(2), DilationSpec.single(2)])
def test_cancellation_below_tolerance(e):
    fam = make_bump_family(BumpParams(kind="generic", seed=5), 2, e)
    errs = fam.cancellation_errors()
    assert errs and max(errs.values()) <= 1e-10


def test_family_bound_recorded():
    fam = fam1()
    assert fam.bound > 0 and fam.norms_checked == (0, 1, 2, 3, 4)
    assert set(fam.norm_table) == set(fam.members)


# ---------------------------------------------------------------------------
# truncated sums


def test_J0_is_single_bump():
    fam = fam1()
    K = synth_kernel(fam, 0, 64)
    assert np.array_equal(K.values, fam.members[(0,)].on_axes(K.axes))


def test_grid_matches_pointwise_sum():
    fam = fam1(J=3)
    K = synth_kernel(fam, 3, 256)
    pts = K.axes[0][:, None]
    assert np.allclose(K.values, kernel_sum(fam, 3, pts), atol=1e-12)
    assert np.allclose(K.evaluate(pts), K.values, atol=1e-12)


def test_resolution_guard():
    with pytest.raises(PreconditionError):
        synth_kernel(fam1(J=4), 4, 128)  # needs 16 * 2^4 = 256


def test_tensor_sum_is_product_of_sums():
    f = fam1(kind="odd", fixed=True, J=3)
    g = fam1(kind="generic", seed=2, J=3)
    t = tensor_family(f, g)
    K = synth_kernel(t, 3, 128)
    K1, K2 = synth_kernel(f, 3, 128), synth_kernel(g, 3, 128)
    want = np.outer(K1.values, K2.values)
    assert np.max(np.abs(K.values - want)) <= 1e-8 * np.max(np.abs(want))
    with pytest.raises(PreconditionError):
        tensor_family(f, fam1(a=0.3))


def test_dilation_covariance():
    # fixed family: sigma_{j+1} = sigma_j for j >= 1, so the (j+1)-term is the j-term at 2t, times 2
    fam = fam1(kind="odd", fixed=True, J=4)
    ax = cell_grid(fam.half_side, 512)
    for j in (1, 2):
        lhs = fam.members[(j + 1,)].on_axes([ax], fam.scales((j + 1,)))
        rhs = 2 * fam.members[(j,)].on_axes([2 * ax], fam.scales((j,)))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_integral_preservation():
    fam = fam1(J=3, seed=1)
    for j, (num, exact) in dilated_integrals(fam, 3, 4096).items():
        assert abs(num - exact) < 1e-6


def test_product_bounds_zero_kernel():
    K = GridKernel([cell_grid(0.5, 32)], np.zeros(32), 0, E1, 0.5)
    pb = validate_product_bounds(K)
    assert all(v == 0 for v in pb.constants.values()) and pb.passed


def test_product_bounds_stable_in_J():
    fam = fam1(kind="odd", fixed=True, J=7)
    c = [validate_product_bounds(synth_kernel(fam, J, 2048)).constants[(0,)] for J in (5, 6, 7)]
    assert drift(c) <= 0.10


def test_drift():
    assert drift([1.0, 1.0]) == 0.0
    assert abs(drift([0.9, 1.0]) - 0.1) < 1e-12
    assert drift([0.0, 0.0]) == 0.0


# ---------------------------------------------------------------------------
# quadrature and dumps


def test_axis_quadrature_exact_for_piecewise_polynomials():
    b = 0.5
    x, w = axis_quadrature(b, [1, 3], n=8)
    assert abs(w.sum() - 2 * b) < 1e-14
    # t^4 cut off at |t| = b/2 is piecewise polynomial with breakpoints the rule knows about
    f = np.where(np.abs(x) < b / 2, x ** 4, 0.0)
    assert abs(np.dot(w, f) - 2 * (b / 2) ** 5 / 5) < 1e-15


def test_kernel_quadrature_integrates_members():
    fam = fam1(J=3)
    nodes, w = kernel_quadrature(fam, 3, 16)
    for j in fam.members:
        val = float(np.dot(w, fam.dilated(j)(nodes)))
        assert abs(val - fam.members[j].integral()) < 1e-12


def test_dump_load_round_trip(tmp_path):
    fam = make_bump_family(BumpParams(kind="generic"), 1, DilationSpec.coordinate(2))
    K = synth_kernel(fam, 1, 32)
    p = tmp_path / "k.txt"
    dump_kernel(K, p)
    L = load_kernel(p)
    assert np.array_equal(L.values, K.values)
    assert L.J == K.J and L.e == K.e and L.a == K.a
    assert all(np.allclose(a, b) for a, b in zip(L.axes, K.axes))
