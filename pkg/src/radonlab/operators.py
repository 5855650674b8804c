"""Discretized singular Radon transforms, maximal operators and norm estimates.

Grid functions live on a node-centred tensor grid (:class:`XGrid`).  Values of
``f`` at moved points ``gamma_t(x)`` are multilinear interpolants.  The
t-integrals use Gauss-Legendre rules: matched to the dyadic breakpoints of
``K_J`` for ``T``, plain tensor rules on ``|t|_inf < a`` for the maximal
averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, aslinearoperator, eigsh

from .core import DilationSpec, JetSeries, Poly, PreconditionError, TruncationPolicy
from .kernels import GridKernel, dump_grid, kernel_quadrature, load_grid
from .lie import WeightedField, field_is_zero, lie_closure
from .prep import SaturationError, check_normalization, taylor_prepare
from .surface import Surface, WField, flow_w_numeric, gamma_to_w, w_to_gamma


class DomainEscapeError(RuntimeError):
    """Moved points left the grid where they carry nonzero weight."""

    def __init__(self, pairs):
        self.pairs = pairs
        shown = ", ".join(f"(x={np.round(x, 4).tolist()}, t={np.round(t, 4).tolist()})" for x, t in pairs[:5])
        super().__init__(f"{len(pairs)} moved points leave the grid, e.g. {shown}")


# ---------------------------------------------------------------------------
# cutoffs, grids, interpolation


def _smooth_step(u):
    """C^inf step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class Cutoff:
    """Product cutoff: 1 on ``|x_i| <= plateau``, smoothly 0 at ``|x_i| >= radius``."""

    radius: float
    plateau: float = 0.0

    def __post_init__(self):
        if not 0 <= self.plateau < self.radius:
            raise PreconditionError("need 0 <= plateau < radius")

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        u = (self.radius - np.abs(pts)) / (self.radius - self.plateau)
        return np.prod(_smooth_step(u), axis=-1)


@dataclass
class OperatorConfig:
    psi1: Cutoff = field(default_factory=lambda: Cutoff(0.4, 0.2))
    psi2: Cutoff | None = None  # None means 1
    psi0: Cutoff = field(default_factory=lambda: Cutoff(0.4))
    sigma: Cutoff | None = None  # defaults to a cutoff inside B^N(a)
    kappa: Callable | None = None  # kappa(t, x) with t (M, N), x (M, n)
    a: float = 0.5
    t_nodes: int = 16  # Gauss-Legendre nodes per axis (maximal averages) or per shell (T)
    p: float = 2.0

    def sigma_for(self, N: int) -> Cutoff:
        if self.sigma is not None:
            return self.sigma
        b = self.a / math.sqrt(N)
        return Cutoff(b, b / 2)


@dataclass(frozen=True)
class XGrid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]

    @classmethod
    def cube(cls, n: int, lo: float = -1.0, hi: float = 1.0, points: int = 4096) -> "XGrid":
        return cls((lo,) * n, (hi,) * n, (points,) * n)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, s) for l, h, s in zip(self.lo, self.hi, self.shape)]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(h - l) / (s - 1) for l, h, s in zip(self.lo, self.hi, self.shape)])

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, fn: Callable) -> np.ndarray:
        return np.asarray(fn(self.points()), dtype=float).reshape(self.shape)


def interp_weights(grid: XGrid, pts: np.ndarray):
    """Multilinear stencil: flat indices ``(M, 2^n)``, weights ``(M, 2^n)`` and an inside mask."""
    pts = np.asarray(pts, dtype=float)
    u = (pts - np.array(grid.lo)) / grid.spacing
    shape = np.array(grid.shape)
    inside = np.all((u >= -1e-9) & (u <= shape - 1 + 1e-9), axis=-1)
    u = np.clip(u, 0, shape - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), shape - 2)
    th = u - i0
    strides = np.array([math.prod(grid.shape[k + 1:]) for k in range(grid.n)])
    idx, wts = [], []
    for corner in product((0, 1), repeat=grid.n):
        c = np.array(corner)
        idx.append(((i0 + c) * strides).sum(axis=-1))
        wts.append(np.prod(np.where(c == 1, th, 1 - th), axis=-1))
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1), inside


def interpolate(grid: XGrid, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
    idx, w, _ = interp_weights(grid, pts)
    return (np.asarray(f).ravel()[idx] * w).sum(axis=-1)


def _check_escape(inside, active, xs, ts):
    bad = np.nonzero(active & ~inside)[0]
    if bad.size:
        raise DomainEscapeError([(xs[i], ts[i]) for i in bad[:20]])


def _moved(gamma_series: JetSeries, T: np.ndarray, X: np.ndarray) -> np.ndarray:
    t = [T[..., i] for i in range(T.shape[-1])]
    x = [X[..., i] for i in range(X.shape[-1])]
    vals = gamma_series.eval_numeric(t, x)
    return np.stack([np.broadcast_to(v, X.shape[:-1]) for v in vals], axis=-1)


# ---------------------------------------------------------------------------
# T


def translation_part(gamma: Surface) -> list[Poly] | None:
    """``tau`` with ``gamma_t(x) = x + tau(t)``, or None when gamma is not a pure translation."""
    g = gamma.gamma()
    nt = g.nt
    out = []
    for i, p in enumerate(g.comps):
        q = p - Poly.var(p.nvars, nt + i)
        if any(any(m[nt:]) for m in q.terms):
            return None
        out.append(q)
    return out


@dataclass
class TOperator:
    """Discretized ``T`` as a linear map on flattened grid functions."""

    grid: XGrid
    op: LinearOperator
    path: str
    nodes: int

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.op.matvec(np.asarray(f, dtype=float).ravel()).reshape(self.grid.shape)


def build_T(gamma: Surface, K: GridKernel, cfg: OperatorConfig, grid: XGrid, path: str = "auto") -> TOperator:
    """``T f(x) = psi1(x) int f(gamma_t(x)) psi2(gamma_t(x)) kappa(t, x) K_J(t) dt``."""
    if grid.n != gamma.nx:
        raise PreconditionError("grid dimension differs from the surface's x-dimension")
    if K.family is None:
        raise PreconditionError("T needs the kernel family to evaluate K_J at quadrature nodes")
    nodes, w = kernel_quadrature(K.family, K.J, cfg.t_nodes)
    kw = w * K.evaluate(nodes)
    keep = kw != 0
    nodes, kw = nodes[keep], kw[keep]
    tau = translation_part(gamma)
    fast_ok = tau is not None and grid.n == 1 and cfg.psi2 is None and cfg.kappa is None
    if path == "fast" and not fast_ok:
        raise PreconditionError("fast path needs n = 1, gamma = x + tau(t), psi2 and kappa unset")
    if not kw.size:
        M = grid.size
        zero = LinearOperator((M, M), matvec=lambda f: np.zeros(M), rmatvec=lambda g: np.zeros(M), dtype=float)
        return TOperator(grid, zero, "fast" if path == "fast" else "generic", 0)
    if path == "fast" or (path == "auto" and fast_ok):
        return TOperator(grid, _fast_T(tau[0], gamma.nt, nodes, kw, cfg, grid), "fast", len(kw))
    return TOperator(grid, aslinearoperator(assemble_T(gamma, nodes, kw, cfg, grid)), "generic", len(kw))


def _fast_T(tau: Poly, nt: int, nodes: np.ndarray, kw: np.ndarray, cfg: OperatorConfig, grid: XGrid):
    """Translation surfaces: ``T f = psi1 (h * f)`` with a hat-interpolated stencil ``h``."""
    dx = grid.spacing[0]
    shift = tau.eval_numeric([nodes[:, i] for i in range(nt)] + [0.0]) / dx
    shift = np.broadcast_to(shift, kw.shape)
    m0 = np.floor(shift).astype(np.int64)
    th = shift - m0
    lo, hi = int(m0.min()), int(m0.max()) + 1
    stencil = np.zeros(hi - lo + 1)
    np.add.at(stencil, m0 - lo, kw * (1 - th))
    np.add.at(stencil, m0 + 1 - lo, kw * th)
    x = grid.axes[0]
    psi = cfg.psi1(x[:, None])
    M = len(x)
    active = np.nonzero(psi)[0]
    if active.size and (active[0] + lo < 0 or active[-1] + hi >= M):
        bad = []
        for k in active:
            out = (k + m0 < 0) | (k + m0 + 1 >= M)
            if out.any():
                bad.append((np.array([x[k]]), nodes[np.argmax(out)]))
        raise DomainEscapeError(bad)
    rev = stencil[::-1]

    def mv(f):
        f = np.asarray(f, dtype=float).ravel()
        # (h * f)_k = sum_m stencil[m - lo] f[k + m]
        full = fftconvolve(f, rev, mode="full")
        out = np.zeros(M)
        ks = np.arange(M)
        pos = ks + hi
        ok = (pos >= 0) & (pos < full.size)
        out[ok] = full[pos[ok]]
        return psi * out

    def rmv(g):
        g = psi * np.asarray(g, dtype=float).ravel()
        full = fftconvolve(g, stencil, mode="full")
        out = np.zeros(M)
        ks = np.arange(M)
        pos = ks - lo
        ok = (pos >= 0) & (pos < full.size)
        out[ok] = full[pos[ok]]
        return out

    return LinearOperator((M, M), matvec=mv, rmatvec=rmv, dtype=float)


def assemble_T(gamma: Surface, nodes: np.ndarray, kw: np.ndarray, cfg: OperatorConfig, grid: XGrid,
               chunk: int = 200_000) -> sp.csr_matrix:
    """Sparse matrix of the discretized ``T`` (rows: grid points, cols: grid points)."""
    X = grid.points()
    psi = cfg.psi1(X)
    rows_active = np.nonzero(psi)[0]
    g = gamma.gamma()
    R, C, V = [], [], []
    per = max(1, chunk // max(1, len(kw)))
    for s in range(0, rows_active.size, per):
        rs = rows_active[s:s + per]
        Xr = np.repeat(X[rs], len(kw), axis=0)
        Tr = np.tile(nodes, (len(rs), 1))
        P = _moved(g, Tr, Xr)
        wt = np.tile(kw, len(rs)) * np.repeat(psi[rs], len(kw))
        if cfg.psi2 is not None:
            wt = wt * cfg.psi2(P)
        if cfg.kappa is not None:
            wt = wt * cfg.kappa(Tr, Xr)
        idx, w, inside = interp_weights(grid, P)
        _check_escape(inside, wt != 0, Xr, Tr)
        R.append(np.repeat(np.repeat(rs, len(kw)), w.shape[1]))
        C.append(idx.ravel())
        V.append((w * wt[:, None]).ravel())
    if not R:
        return sp.csr_matrix((grid.size, grid.size))
    return sp.csr_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))),
                         shape=(grid.size, grid.size))


def eval_T(gamma: Surface, K: GridKernel, cfg: OperatorConfig, f: np.ndarray, grid: XGrid,
           path: str = "auto") -> np.ndarray:
    return build_T(gamma, K, cfg, grid, path)(f)


def eval_T_mapcoords(gamma: Surface, K: GridKernel, cfg: OperatorConfig, f: np.ndarray, grid: XGrid) -> np.ndarray:
    """Independent route for ``T`` via ``scipy.ndimage.map_coordinates`` (linear order)."""
    from scipy.ndimage import map_coordinates

    nodes, w = kernel_quadrature(K.family, K.J, cfg.t_nodes)
    kw = w * K.evaluate(nodes)
    X = grid.points()
    out = np.zeros(len(X))
    g = gamma.gamma()
    psi = cfg.psi1(X)
    for q in np.nonzero(kw)[0]:
        P = _moved(g, np.broadcast_to(nodes[q], (len(X), gamma.nt)), X)
        coords = ((P - np.array(grid.lo)) / grid.spacing).T
        vals = map_coordinates(np.asarray(f, dtype=float), coords, order=1, mode="nearest")
        if cfg.psi2 is not None:
            vals = vals * cfg.psi2(P)
        out += kw[q] * vals
    return (psi * out).reshape(grid.shape)


# ---------------------------------------------------------------------------
# operator norms


@dataclass
class NormEstimate:
    estimate: float
    p: float
    iterations: int
    residual: float
    converged: bool
    kind: str  # "power iteration" or "lower bound"

    def row(self, **extra) -> dict:
        return {**extra, "p": self.p, "estimate": self.estimate, "iterations": self.iterations,
                "residual": self.residual, "converged": self.converged, "kind": self.kind}


def _as_op(op) -> LinearOperator:
    if isinstance(op, TOperator):
        return op.op
    if callable(op) and not hasattr(op, "shape"):
        raise PreconditionError("pass a matrix, LinearOperator or TOperator")
    return aslinearoperator(op)


def _power_iteration(A: LinearOperator, v: np.ndarray, tol: float, max_iter: int, p: float) -> NormEstimate:
    lam, prev, it, res = 0.0, -1.0, 0, np.inf
    for it in range(1, max_iter + 1):
        u = A.rmatvec(A.matvec(v))
        lam = float(np.linalg.norm(u))
        if lam == 0:
            return NormEstimate(0.0, p, it, 0.0, True, "power iteration")
        v = u / lam
        res = abs(lam - prev) / lam
        if res < tol:
            return NormEstimate(math.sqrt(lam), p, it, res, True, "power iteration")
        prev = lam
    return NormEstimate(math.sqrt(lam), p, it, res, False, "power iteration")


def _lanczos(A: LinearOperator, v: np.ndarray, tol: float, max_iter: int, p: float) -> NormEstimate:
    """Largest eigenvalue of ``A^T A`` by implicitly restarted Lanczos (ARPACK)."""
    n = A.shape[1]
    count = [0]

    def mv(x):
        count[0] += 1
        return A.rmatvec(A.matvec(x))

    B = LinearOperator((n, n), matvec=mv, dtype=float)
    if not np.any(mv(v)):
        return NormEstimate(0.0, p, 1, 0.0, True, "lanczos")
    try:
        w, V = eigsh(B, k=1, which="LA", tol=tol, v0=v, maxiter=max_iter)
    except ArpackNoConvergence:
        est = _power_iteration(A, v, tol, max_iter, p)
        est.kind = "power iteration (lanczos did not converge)"
        return est
    lam = max(float(w[0]), 0.0)
    if lam == 0:
        return NormEstimate(0.0, p, count[0], 0.0, True, "lanczos")
    # residual of the Ritz pair, the same relative scale as the requested tolerance
    x = V[:, 0]
    res = float(np.linalg.norm(A.rmatvec(A.matvec(x)) - lam * x) / lam)
    return NormEstimate(math.sqrt(lam), p, count[0], res, res <= max(tol, 1e3 * np.finfo(float).eps), "lanczos")


def estimate_opnorm(op, p: float = 2.0, trials: int = 16, tol: float = 1e-9, max_iter: int = 5000,
                    seed: int = 0, method: str = "lanczos") -> NormEstimate:
    """``p = 2``: top singular value from ``A^T A`` (Lanczos, or plain power iteration).

    Otherwise a labelled lower bound from test functions.
    """
    A = _as_op(op)
    rng = np.random.default_rng(seed)
    n = A.shape[1]
    if p == 2:
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        if method == "lanczos" and n > 2:
            return _lanczos(A, v, tol, max_iter, p)
        if method not in ("lanczos", "power"):
            raise ValueError(f"unknown method {method!r}")
        return _power_iteration(A, v, tol, max_iter, p)
    best = 0.0
    for k in range(trials):
        if k % 2 == 0:
            f = rng.standard_normal(n)
        else:
            f = np.sign(rng.standard_normal(n)) * (rng.random(n) < 0.5)
        nf = np.sum(np.abs(f) ** p) ** (1 / p)
        if nf == 0:
            continue
        g = A.matvec(f)
        best = max(best, float(np.sum(np.abs(g) ** p) ** (1 / p) / nf))
    return NormEstimate(best, p, trials, float("nan"), True, "lower bound")


# ---------------------------------------------------------------------------
# dyadic families of W fields


@dataclass
class DyadicFamilySpec:
    """Fields ``(X_l, d_l)`` with coefficients ``c_l(t, s, x)`` (variables ``t``, ``s``, ``x``)."""

    fields: list[WeightedField]
    coeffs: list[Poly]
    alphas: list[tuple[int, ...]]
    dilations: DilationSpec  # on t, graded by nu = N + r
    base_dilations: DilationSpec
    r: int
    nx: int
    policy: TruncationPolicy
    name: str = ""

    @property
    def q(self) -> int:
        return len(self.fields)

    @property
    def N(self) -> int:
        return self.dilations.N

    @property
    def nu(self) -> int:
        return self.dilations.nu


def _pow2(j: Sequence, v: Sequence[int]) -> Fraction:
    """``2^{-j . v}`` with ``2^{-inf} = 0`` and ``inf * 0 = 0``."""
    k = 0
    for ji, vi in zip(j, v):
        if vi == 0:
            continue
        if ji == math.inf:
            return Fraction(0)
        k += int(ji) * vi
    return Fraction(1, 2 ** k)


def build_Wj(spec: DyadicFamilySpec, j: Sequence) -> WField:
    """``W_j(t, x) = sum_l c_l(2^{-j} t, t, x) 2^{-j . d_l} X_l``."""
    if len(j) != spec.nu:
        raise PreconditionError(f"j needs {spec.nu} entries")
    N, nx = spec.N, spec.nx
    nv = N + nx
    tf = [_pow2(j, e_i) for e_i in spec.dilations.e]
    subs = ([Poly.var(nv, i).scale(tf[i]) for i in range(N)]
            + [Poly.var(nv, i) for i in range(N)]
            + [Poly.var(nv, N + i) for i in range(nx)])
    comps = [Poly.zero(nv) for _ in range(nx)]
    xpos = list(range(N, nv))
    for fld, c in zip(spec.fields, spec.coeffs):
        sc = _pow2(j, fld.d)
        if sc == 0 or not c:
            continue
        cc = c.substitute(subs).scale(sc)
        for i, Xi in enumerate(fld.X):
            if Xi:
                comps[i] = comps[i] + cc * Xi.embed(nv, xpos)
    return WField(JetSeries(N, nx, spec.policy, tuple(comps)), spec.base_dilations)


def wj_taylor_identity(spec: DyadicFamilySpec, j: Sequence) -> bool:
    """``(1/alpha_l!) d_t^{alpha_l} W_j |_{t=0} = 2^{-j . d_l} X_l`` for ``l <= r``, exactly."""
    W = build_Wj(spec, j).W
    for l in range(spec.r):
        got = W.coefficient(spec.alphas[l])
        sc = _pow2(j, spec.fields[l].d)
        want = tuple(Xi.scale(sc) for Xi in spec.fields[l].X)
        if tuple(got) != want:
            return False
    return True


def family_condition_violations(spec: DyadicFamilySpec) -> list[str]:
    """Symbolic check of the normalization and vanishing conditions on ``c_l``.

    The Taylor coefficient of ``t^b1 s^b2`` is ``d_t^b1 d_s^b2 c / (b1! b2!)`` at 0, so
    both conditions are statements about coefficients.
    """
    N, nx = spec.N, spec.nx
    out = []
    for l in range(spec.r):
        al = spec.alphas[l]
        for k, c in enumerate(spec.coeffs):
            parts = c.split(list(range(2 * N)))
            for b1 in product(*[range(x + 1) for x in al]):
                b2 = tuple(x - y for x, y in zip(al, b1))
                got = parts.get(tuple(b1) + b2, Poly.zero(nx))
                if k == l and not any(b1):
                    if got != Poly.const(nx, 1):
                        out.append(f"c_{l + 1}: s^alpha coefficient is {got.to_str()} not 1")
                elif got:
                    out.append(f"c_{k + 1}: t^{list(b1)} s^{list(b2)} coefficient {got.to_str()} "
                               f"should vanish (l={l + 1})")
    return out


def reduce_maximal_pipeline(gamma: Surface, seed: int = 0, cutoff: int = 2) -> DyadicFamilySpec:
    """Prepare ``W``, lift to the ``(j1, j2)`` grading and validate the coefficient conditions."""
    Wf = gamma_to_w(gamma)
    N, nx, pol = gamma.nt, gamma.nx, gamma.policy
    if Wf.W.is_zero():
        return DyadicFamilySpec([], [], [], DilationSpec.coordinate(N), gamma.dilations, 0, nx, pol, gamma.name)
    prep = taylor_prepare(Wf.W, seed=seed)
    if prep.reconstruct() != Wf.W or not check_normalization(prep):
        raise SaturationError("preparation of W is not exact at this truncation")
    r = len(prep.alphas)
    nu = N + r
    e = DilationSpec(tuple(tuple(int(m == i) for m in range(nu)) for i in range(N)))
    nv = 2 * N + nx
    fields, coeffs = [], []
    for l, (al, c, v) in enumerate(zip(prep.alphas, prep.coeffs, prep.fields)):
        d = tuple(int(m == N + l) for m in range(nu))
        fields.append(WeightedField(tuple(v), d, f"F{l + 1}"))
        cl = c.comps[0].embed(nv, list(range(N)) + list(range(2 * N, nv)))
        coeffs.append(cl * Poly.monomial((0,) * N + tuple(al) + (0,) * nx))
    if cutoff > 1:
        clos = lie_closure(fields, cutoff, "L0", pol.budget)
        for el in clos.elements:
            neg = WeightedField(tuple(-p for p in el.X), el.d, el.tag)
            if field_is_zero(el.X) or el in fields or neg in fields:
                continue
            fields.append(el)
            coeffs.append(Poly.zero(nv))
    spec = DyadicFamilySpec(fields, coeffs, list(prep.alphas), e, gamma.dilations, r, nx, pol, gamma.name)
    bad = family_condition_violations(spec)
    if bad:
        raise PreconditionError("; ".join(bad))
    return spec


# ---------------------------------------------------------------------------
# maximal operators


def _box_rule(a: float, N: int, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = a * x, a * w
    mesh = np.meshgrid(*([x] * N), indexing="ij")
    wm = np.meshgrid(*([w] * N), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), np.prod(np.stack([m.ravel() for m in wm], -1), -1)


def _average(grid: XGrid, f: np.ndarray, mover, nodes, w, outer: Cutoff, inner: Cutoff | None,
             absolute: bool = True, chunk: int = 400_000) -> np.ndarray:
    """``outer(x) int |f(P(t, x))| inner(P) w(t) dt`` on the grid, only where ``outer != 0``."""
    X = grid.points()
    psi = outer(X)
    act = np.nonzero(psi)[0]
    out = np.zeros(len(X))
    fv = np.abs(f) if absolute else f
    fv = np.asarray(fv, dtype=float).ravel()
    per = max(1, chunk // len(w))
    for s in range(0, act.size, per):
        rs = act[s:s + per]
        Xr = np.repeat(X[rs], len(w), axis=0)
        Tr = np.tile(nodes, (len(rs), 1))
        P = mover(Tr, Xr)
        wt = np.tile(w, len(rs))
        if inner is not None:
            wt = wt * inner(P)
        idx, iw, inside = interp_weights(grid, P)
        _check_escape(inside, wt != 0, Xr, Tr)
        vals = (fv[idx] * iw).sum(-1)
        if absolute:
            vals = np.abs(vals)
        out[rs] = (vals * wt).reshape(len(rs), len(w)).sum(-1)
    return (psi * out).reshape(grid.shape)


def default_scales(nu: int, J: int) -> list[tuple[int, ...]]:
    return list(product(range(J + 1), repeat=nu))


def flows_for(spec: DyadicFamilySpec, j, flow: str):
    """``(T, X) -> gamma^j_T(X)`` using the ODE flow of ``W_j`` or its series solution."""
    Wj = build_Wj(spec, j)
    if flow == "ode":
        return lambda T, X: flow_w_numeric(Wj, T, X)
    if flow == "series":
        g = w_to_gamma(Wj).gamma()
        return lambda T, X: _moved(g, T, X)
    raise ValueError(f"unknown flow mode {flow!r}")


def eval_maximal(target, cfg: OperatorConfig, f: np.ndarray, grid: XGrid, mode: str = "M",
                 scales: Sequence[Sequence] | None = None, J: int = 3, flow: str = "ode") -> np.ndarray:
    """Pointwise sup of the averages over a finite dyadic scale grid.

    ``M``: ``target`` is a Surface, scales are ``k`` with ``delta_i = 2^{-k_i}``.
    ``Mtilde``: ``target`` is a DyadicFamilySpec, scales are ``j`` in N^nu.
    ``Mj``: single-scale ``psi0(x) int f(gamma^j) psi0(gamma^j) sigma(t) dt`` (no sup, no modulus).
    """
    f = np.asarray(f, dtype=float).reshape(grid.shape)
    if mode == "M":
        if not isinstance(target, Surface):
            raise PreconditionError("mode M needs a Surface")
        g = target.gamma()
        N = target.nt
        nodes, w = _box_rule(cfg.a, N, cfg.t_nodes)
        out = np.zeros(grid.shape)
        for k in scales if scales is not None else default_scales(N, J):
            d = np.array([2.0 ** (-ki) for ki in k])
            mover = lambda T, X, d=d: _moved(g, T * d, X)
            out = np.maximum(out, _average(grid, f, mover, nodes, w, cfg.psi1, cfg.psi2))
        return out
    if not isinstance(target, DyadicFamilySpec):
        raise PreconditionError(f"mode {mode} needs a DyadicFamilySpec")
    N = target.N
    if mode == "Mtilde":
        nodes, w = _box_rule(cfg.a, N, cfg.t_nodes)
        out = np.zeros(grid.shape)
        for j in scales if scales is not None else default_scales(target.nu, J):
            mover = flows_for(target, j, flow)
            out = np.maximum(out, _average(grid, f, mover, nodes, w, cfg.psi1, cfg.psi2))
        return out
    if mode == "Mj":
        if scales is None or len(scales) != 1:
            raise PreconditionError("mode Mj takes exactly one scale")
        sig = cfg.sigma_for(N)
        nodes, w = _box_rule(cfg.a, N, cfg.t_nodes)
        w = w * sig(nodes)
        mover = flows_for(target, scales[0], flow)
        return _average(grid, f, mover, nodes, w, cfg.psi0, cfg.psi0, absolute=False)
    raise ValueError(f"unknown mode {mode!r}")


def sigma_integral(cfg: OperatorConfig, N: int) -> float:
    nodes, w = _box_rule(cfg.a, N, cfg.t_nodes)
    return float(np.sum(w * cfg.sigma_for(N)(nodes)))


def comparison_scales(spec: DyadicFamilySpec, J: int) -> list[tuple[int, ...]]:
    """``(j, j . alpha_1, ..., j . alpha_r)`` for ``j in {0..J}^N``: the scales realizing ``M0`` inside ``M1``."""
    out = []
    for j in product(range(J + 1), repeat=spec.N):
        out.append(tuple(j) + tuple(sum(a * b for a, b in zip(j, al)) for al in spec.alphas))
    return out


@dataclass
class ReductionComparison:
    M0: np.ndarray
    M1: np.ndarray
    scales0: list
    scales1: list

    def max_violation(self) -> float:
        return float(np.max(self.M0 - self.M1))


def compare_reduction(gamma: Surface, cfg: OperatorConfig, f: np.ndarray, grid: XGrid, J: int = 2,
                      extra: int = 4, seed: int = 0, flow: str = "series") -> ReductionComparison:
    """``M0`` over ``j in {0..J}^N`` against ``M1`` over the lifted scales plus random extra ones."""
    spec = reduce_maximal_pipeline(gamma, seed=seed)
    s0 = default_scales(gamma.nt, J)
    M0 = eval_maximal(gamma, cfg, f, grid, "M", scales=s0)
    if spec.r == 0:
        # W = 0: gamma is the identity and both sides are the same average
        M1 = eval_maximal(gamma, cfg, f, grid, "M", scales=[(0,) * gamma.nt])
        return ReductionComparison(M0, M1, s0, [])
    s1 = comparison_scales(spec, J)
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        s1.append(tuple(int(v) for v in rng.integers(0, J + 1, spec.nu)))
    M1 = eval_maximal(spec, cfg, f, grid, "Mtilde", scales=s1, flow=flow)
    return ReductionComparison(M0, M1, s0, s1)


# ---------------------------------------------------------------------------
# Hardy-Littlewood comparison (one dimension)


def hardy_littlewood(f: np.ndarray) -> np.ndarray:
    """Discrete centred maximal function ``max_m (2m+1)^{-1} sum_{|l|<=m} |f_{i+l}|`` (zero outside)."""
    f = np.abs(np.asarray(f, dtype=float).ravel())
    n = f.size
    cs = np.concatenate([[0.0], np.cumsum(f)])
    out = np.zeros(n)
    i = np.arange(n)
    for m in range(n):
        lo = np.clip(i - m, 0, n)
        hi = np.clip(i + m + 1, 0, n)
        out = np.maximum(out, (cs[hi] - cs[lo]) / (2 * m + 1))
    return out


def hl_constant(gamma: Surface, cfg: OperatorConfig, grid: XGrid, scales) -> float:
    """``C`` with ``M f <= C psi1 HL f``; from the quadrature-interpolation weights per scale.

    Only for ``gamma = x + tau(t)`` in one dimension, where the weights do
    not depend on the grid point.
    """
    tau = translation_part(gamma)
    if tau is None or grid.n != 1:
        raise PreconditionError("HL comparison needs a one-dimensional translation surface")
    dx = grid.spacing[0]
    nodes, w = _box_rule(cfg.a, gamma.nt, cfg.t_nodes)
    best = 0.0
    for k in scales:
        d = np.array([2.0 ** (-ki) for ki in k])
        u = np.broadcast_to(tau[0].eval_numeric([(nodes * d)[:, i] for i in range(gamma.nt)] + [0.0]), w.shape) / dx
        m0 = np.floor(u).astype(np.int64)
        th = u - m0
        lo = int(m0.min())
        om = np.zeros(int(m0.max()) - lo + 2)
        np.add.at(om, m0 - lo, w * (1 - th))
        np.add.at(om, m0 + 1 - lo, w * th)
        reach = max(abs(lo), abs(int(m0.max()) + 1))
        best = max(best, float(om.max()) * (2 * reach + 1))
    return best


# ---------------------------------------------------------------------------
# grid function dumps


def dump_function(f: np.ndarray, grid: XGrid, path, **meta) -> None:
    header = {"kind": "function", "n": grid.n, "lo": list(grid.lo), "hi": list(grid.hi),
              "resolution": list(grid.shape), **meta}
    dump_grid(path, np.asarray(f).reshape(grid.shape), header)


def load_function(path) -> tuple[np.ndarray, XGrid]:
    vals, h = load_grid(path)
    grid = XGrid(tuple(float(v) for v in h["lo"].split()), tuple(float(v) for v in h["hi"].split()),
                 tuple(int(v) for v in h["resolution"].split()))
    return vals, grid
