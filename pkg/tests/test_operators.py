import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from radonlab import corpus
from radonlab.core import DilationSpec, Poly, PreconditionError, TruncationPolicy
from radonlab.kernels import BumpParams, GridKernel, make_bump_family, synth_kernel
from radonlab.operators import (
    Cutoff,
    DomainEscapeError,
    OperatorConfig,
    XGrid,
    build_T,
    build_Wj,
    compare_reduction,
    dump_function,
    estimate_opnorm,
    eval_maximal,
    eval_T,
    eval_T_mapcoords,
    family_condition_violations,
    hardy_littlewood,
    hl_constant,
    load_function,
    reduce_maximal_pipeline,
    sigma_integral,
    wj_taylor_identity,
)
from radonlab.surface import Surface, gamma_to_w

INF = math.inf
CFG = OperatorConfig(psi1=Cutoff(0.4, 0.2), a=0.5, t_nodes=8)


def kernel_for(gamma, J=3, kind="odd", fixed=True, seed=0):
    fam = make_bump_family(BumpParams(a=0.5, kind=kind, fixed=fixed, seed=seed), J, gamma.dilations)
    return synth_kernel(fam, J, 16 * 2 ** (J * max(sum(r) for r in gamma.dilations.e)))


def grid1(points=513):
    return XGrid.cube(1, -1.0, 1.0, points)


def grid_for(gamma, points=129):
    return XGrid.cube(gamma.nx, -1.0, 1.0, points if gamma.nx == 1 else 33)


class ZeroKernel(GridKernel):
    def evaluate(self, pts):
        return np.zeros(len(pts))


# ---------------------------------------------------------------------------
# T


@pytest.mark.parametrize("gamma", [corpus.translation(), corpus.product_counterexample()], ids=lambda g: g.name)
def test_T_is_linear(gamma):
    grid = grid1()
    T = build_T(gamma, kernel_for(gamma, 2, kind="generic"), CFG, grid)
    rng = np.random.default_rng(0)
    f, g = rng.standard_normal((2, grid.size))
    lhs = T(2.5 * f - 0.75 * g)
    rhs = 2.5 * T(f) - 0.75 * T(g)
    assert np.allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_T_routes_agree():
    gamma = corpus.translation()
    grid = grid1(1025)
    K = kernel_for(gamma, 3, kind="generic")
    f = np.random.default_rng(1).standard_normal(grid.size)
    fast = eval_T(gamma, K, CFG, f, grid, path="fast")
    gen = eval_T(gamma, K, CFG, f, grid, path="generic")
    mc = eval_T_mapcoords(gamma, K, CFG, f.reshape(grid.shape), grid)
    assert np.allclose(fast, gen, atol=1e-11) and np.allclose(gen, mc, atol=1e-11)


def test_T_generic_matches_mapcoords_two_parameter():
    gamma = corpus.product_counterexample()
    grid = grid1(257)
    K = kernel_for(gamma, 2)
    f = np.random.default_rng(2).standard_normal(grid.size)
    assert np.allclose(eval_T(gamma, K, CFG, f, grid), eval_T_mapcoords(gamma, K, CFG, f, grid), atol=1e-11)


def test_T_adjoint_consistent():
    gamma = corpus.translation()
    grid = grid1(257)
    op = build_T(gamma, kernel_for(gamma, 2), CFG, grid, path="fast").op
    rng = np.random.default_rng(3)
    f, g = rng.standard_normal((2, grid.size))
    assert abs(np.dot(op.matvec(f), g) - np.dot(f, op.rmatvec(g))) < 1e-10


@pytest.mark.parametrize("gamma", [corpus.translation(), corpus.product_counterexample()], ids=lambda g: g.name)
def test_T_of_constant_is_psi_times_kernel_integral(gamma):
    grid = grid1(257)
    K = kernel_for(gamma, 3, kind="generic", fixed=False, seed=4)
    got = eval_T(gamma, K, CFG, np.ones(grid.size), grid)
    # every member with j != 0 integrates to zero, so int K_J = int of the j = 0 member
    integral = K.family.members[(0,) * gamma.nt].integral()
    want = CFG.psi1(grid.points()) * integral
    assert np.max(np.abs(got - want)) <= 1e-8


def test_T_of_zero_kernel_vanishes():
    gamma = corpus.translation()
    K0 = kernel_for(gamma, 2)
    Z = ZeroKernel(K0.axes, np.zeros_like(K0.values), K0.J, K0.e, K0.a, family=K0.family)
    grid = grid1(257)
    f = np.random.default_rng(5).standard_normal(grid.size)
    for path in ("fast", "generic"):
        assert not np.any(eval_T(gamma, Z, CFG, f, grid, path=path))


def test_T_matches_convolution_oracle():
    # x + t: T f(x) = psi1(x) int f(x + t) K_J(t) dt, integrated adaptively with the exact f
    gamma = corpus.translation()
    J = 3
    K = kernel_for(gamma, J, kind="generic", fixed=False, seed=6)
    grid = grid1(16385)
    fn = lambda x: np.exp(-4 * x ** 2) * np.cos(3 * x)
    Tf = eval_T(gamma, K, CFG, fn(grid.axes[0]), grid)
    b = K.family.half_side
    brk = sorted({s * b * 2.0 ** -m for m in range(J + 1) for s in (-1, 1)} | {0.0})
    idx = np.linspace(0, grid.size - 1, 41).astype(int)
    idx = idx[CFG.psi1(grid.axes[0][idx][:, None]) > 0]
    errs, scale = [], 0.0
    for i in idx:
        x = grid.axes[0][i]
        kern = lambda t: float(K.evaluate(np.array([[t]]))[0]) * fn(x + t)
        val, _ = quad(kern, -b, b, points=brk[1:-1], limit=400, epsabs=1e-13, epsrel=1e-12)
        want = float(CFG.psi1(np.array([[x]]))[0]) * val
        errs.append(abs(Tf[i] - want))
        scale = max(scale, abs(want))
    assert max(errs) <= 1e-6 * scale


def test_domain_escape_reported():
    gamma = corpus.translation()
    K = kernel_for(gamma, 2)
    small = XGrid.cube(1, -0.5, 0.5, 257)
    for path in ("fast", "generic"):
        with pytest.raises(DomainEscapeError) as ei:
            build_T(gamma, K, CFG, small, path=path)(np.ones(small.size))
        assert ei.value.pairs


def test_fast_path_preconditions():
    gamma = corpus.translation()
    cfg = OperatorConfig(psi1=Cutoff(0.4, 0.2), psi2=Cutoff(0.9, 0.6), a=0.5, t_nodes=8)
    with pytest.raises(PreconditionError):
        build_T(gamma, kernel_for(gamma, 2), cfg, grid1(), path="fast")
    assert build_T(gamma, kernel_for(gamma, 2), cfg, grid1()).path == "generic"


# ---------------------------------------------------------------------------
# norms


def test_opnorm_identity_and_averaging():
    assert abs(estimate_opnorm(np.eye(64)).estimate - 1) <= 1e-6
    avg = np.kron(np.eye(16), np.full((4, 4), 0.25))
    est = estimate_opnorm(avg, seed=1)
    assert est.converged and est.estimate <= 1 + 1e-6
    lb = estimate_opnorm(avg, p=3, trials=6)
    assert lb.kind == "lower bound" and lb.estimate <= 1 + 1e-12


def test_opnorm_matches_svd():
    A = np.random.default_rng(7).standard_normal((30, 30))
    est = estimate_opnorm(A)
    assert abs(est.estimate - np.linalg.norm(A, 2)) <= 1e-4 * est.estimate


def test_opnorm_non_convergence_reported():
    A = np.diag([1.0, 0.5, 0.25])
    est = estimate_opnorm(A, max_iter=2, method="power")
    assert not est.converged and est.iterations == 2 and est.estimate > 0


@pytest.mark.parametrize("method", ["lanczos", "power"])
def test_opnorm_methods_agree_on_T(method):
    gamma = corpus.translation()
    T = build_T(gamma, kernel_for(gamma, 3), CFG, grid1())
    A = T.op @ np.eye(grid1().size)
    est = estimate_opnorm(T, method=method)
    assert est.converged and abs(est.estimate - np.linalg.norm(A, 2)) <= 1e-6 * est.estimate


def test_opnorm_of_zero():
    for method in ("lanczos", "power"):
        assert estimate_opnorm(np.zeros((5, 5)), method=method).estimate == 0.0


# ---------------------------------------------------------------------------
# dyadic families


def test_reduce_examples():
    s = reduce_maximal_pipeline(corpus.translation())
    assert s.r == 1 and s.nu == 2 and s.fields[0].X == (Poly.const(1, 1),) and s.fields[0].d == (0, 1)
    # c(t, s, x) = s
    assert s.coeffs[0] == Poly.var(3, 1)
    s = reduce_maximal_pipeline(corpus.product_counterexample())
    assert s.r == 1 and s.nu == 3 and s.fields[0].X == (Poly.const(1, -2),) and s.alphas == [(1, 1)]
    ident = Surface.identity(DilationSpec.single(1), 1, TruncationPolicy(3, 3))
    s = reduce_maximal_pipeline(ident)
    assert s.r == 0 and s.fields == []


@pytest.mark.parametrize("g", corpus.corpus(n_random=6), ids=lambda g: g.name)
def test_W0_is_W_and_identity_holds(g):
    spec = reduce_maximal_pipeline(g)
    assert build_Wj(spec, (0,) * spec.nu).W == gamma_to_w(g).W
    assert not family_condition_violations(spec)
    for j in [(1,) * spec.nu, (2,) + (0,) * (spec.nu - 1), (INF,) * spec.nu, (0,) * (spec.nu - 1) + (INF,)]:
        assert wj_taylor_identity(spec, j)


def test_Wj_at_infinity_vanishes():
    for g in (corpus.translation(), corpus.product_counterexample()):
        spec = reduce_maximal_pipeline(g)
        assert build_Wj(spec, (INF,) * spec.nu).W.is_zero()


def test_Wj_scaling_example():
    spec = reduce_maximal_pipeline(corpus.product_counterexample())
    # c(t, s, x) = s1 s2, so W_j = -2 t1 t2 2^-j3 whatever j1, j2
    W = build_Wj(spec, (1, 0, 2)).W
    assert W.comps[0] == Poly.monomial((1, 1, 0), Fraction(-1, 2))
    assert build_Wj(spec, (INF, 3, 0)).W == build_Wj(spec, (0, 0, 0)).W


def test_condition_violations_detected():
    spec = reduce_maximal_pipeline(corpus.translation())
    spec.coeffs[0] = spec.coeffs[0].scale(2)
    assert family_condition_violations(spec)


# ---------------------------------------------------------------------------
# maximal operators


MCFG = OperatorConfig(psi1=Cutoff(0.3, 0.1), a=0.1, t_nodes=6)


@pytest.mark.parametrize("gamma", [corpus.translation(), corpus.product_counterexample(), corpus.parabola()],
                         ids=lambda g: g.name)
def test_maximal_of_constant(gamma):
    grid = grid_for(gamma)
    got = eval_maximal(gamma, MCFG, np.ones(grid.shape), grid, "M", J=2)
    want = MCFG.psi1(grid.points()).reshape(grid.shape) * (2 * MCFG.a) ** gamma.nt
    assert np.max(np.abs(got - want)) <= 1e-8


def test_maximal_tilde_of_constant():
    spec = reduce_maximal_pipeline(corpus.product_counterexample())
    grid = grid1(129)
    got = eval_maximal(spec, MCFG, np.ones(grid.shape), grid, "Mtilde", J=1, flow="series")
    assert np.max(np.abs(got - MCFG.psi1(grid.points()) * (2 * MCFG.a) ** 2)) <= 1e-8


@pytest.mark.parametrize("gamma", [corpus.translation(), corpus.product_counterexample()], ids=lambda g: g.name)
def test_maximal_monotone_and_sublinear(gamma):
    grid = grid1(129)
    rng = np.random.default_rng(8)
    f = rng.random(grid.shape)
    g = f + rng.random(grid.shape)
    h = rng.standard_normal(grid.shape)
    M = lambda u: eval_maximal(gamma, MCFG, u, grid, "M", J=2)
    assert np.all(M(f) <= M(g) + 1e-14)
    assert np.all(M(f + h) <= M(f) + M(h) + 1e-14)


def test_maximal_dominated_by_hardy_littlewood():
    gamma = corpus.translation()
    grid = grid1(257)
    scales = [(k,) for k in range(4)]
    C = hl_constant(gamma, MCFG, grid, scales)
    rng = np.random.default_rng(9)
    for _ in range(5):
        f = rng.standard_normal(grid.shape)
        Mf = eval_maximal(gamma, MCFG, f, grid, "M", scales=scales)
        bound = C * MCFG.psi1(grid.points()) * hardy_littlewood(f)
        assert np.all(Mf <= bound + 1e-12)


def test_hardy_littlewood_examples():
    assert np.allclose(hardy_littlewood(np.ones(5)), 1.0)
    d = np.zeros(5)
    d[2] = 3.0
    assert np.allclose(hardy_littlewood(d), [0.6, 1.0, 3.0, 1.0, 0.6])


def test_base_case_single_scale():
    # all j = inf: the flow is the identity and M_j f = (int sigma) psi0^2 f
    spec = reduce_maximal_pipeline(corpus.product_counterexample())
    cfg = OperatorConfig(psi0=Cutoff(0.3, 0.1), a=0.2, t_nodes=8)
    grid = grid1(65)
    f = np.random.default_rng(10).standard_normal(grid.shape)
    got = eval_maximal(spec, cfg, f, grid, "Mj", scales=[(INF,) * spec.nu], flow="series")
    psi0 = cfg.psi0(grid.points())
    assert np.allclose(got, sigma_integral(cfg, 2) * psi0 ** 2 * f, atol=1e-13)


@pytest.mark.parametrize("g", [corpus.translation(), corpus.product_counterexample(), corpus.parabola()],
                         ids=lambda g: g.name)
def test_reduction_comparison(g):
    grid = grid_for(g)
    f = np.random.default_rng(11).random(grid.shape)
    cmp = compare_reduction(g, MCFG, f, grid, J=1, extra=2)
    assert cmp.max_violation() <= 1e-12


def test_function_dump_round_trip(tmp_path):
    grid = XGrid((-1.0, 0.0), (1.0, 2.0), (5, 7))
    f = np.arange(35.0).reshape(5, 7) / 7
    p = tmp_path / "f.txt"
    dump_function(f, grid, p, name="ramp")
    g, grid2 = load_function(p)
    assert grid2 == grid and np.array_equal(g, f)
