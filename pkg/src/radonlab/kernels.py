"""Dyadic kernel families, truncated kernel sums on grids and size bounds.

A family member ``sigma_j`` is a finite sum of separable terms
``c * prod_i phi_i(t_i)`` where every ``phi_i`` is a 1D polynomial bump
``q(t/b)`` on ``[-b, b]`` with ``q(s) = p(s) (1 - s^2)^k``.  Coefficients are
exact rationals, so integrals of profiles are exact and the cancellation
projections can be checked for exact vanishing.

The support box has half-side ``b = a / sqrt(N)`` so that it sits inside the
Euclidean ball of radius ``a``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DilationSpec, PreconditionError, multi_indices

MIN_POINTS_PER_SCALE = 16


# ---------------------------------------------------------------------------
# 1D profiles


def _polymul(a: Sequence[Fraction], b: Sequence[Fraction]) -> tuple[Fraction, ...]:
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return tuple(out)


def _ref_integral(coeffs: Sequence[Fraction]) -> Fraction:
    """``int_{-1}^{1} q(s) ds`` for ``q = sum c_m s^m``."""
    return sum((Fraction(2, m + 1) * c for m, c in enumerate(coeffs) if m % 2 == 0), Fraction(0))


@dataclass(frozen=True)
class Profile:
    """``phi(t) = q(t / radius)`` for ``|t| < radius``, zero outside."""

    coeffs: tuple[Fraction, ...]  # q in ascending powers of s
    radius: float
    scale: float = 1.0  # chain-rule factor carried by derivatives

    @classmethod
    def bump(cls, p: Sequence, k: int, radius: float) -> "Profile":
        base = (Fraction(1),)
        for _ in range(k):
            base = _polymul(base, (Fraction(1), Fraction(0), Fraction(-1)))
        return cls(_polymul(tuple(Fraction(c) for c in p), base), float(radius))

    @property
    def ref_integral(self) -> Fraction:
        return _ref_integral(self.coeffs)

    def integral(self) -> float:
        return float(self.ref_integral) * self.radius * self.scale

    def derivative(self, m: int = 1) -> "Profile":
        c = list(self.coeffs)
        scale = self.scale
        for _ in range(m):
            c = [k * c[k] for k in range(1, len(c))] or [Fraction(0)]
            scale /= self.radius
        return Profile(tuple(c), self.radius, scale)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = t / self.radius
        inside = np.abs(s) < 1.0
        c = np.array([float(x) for x in self.coeffs[::-1]])
        return np.where(inside, np.polyval(c, np.where(inside, s, 0.0)), 0.0) * self.scale


@dataclass(frozen=True)
class Term:
    coef: Fraction
    profiles: tuple[Profile, ...]


@dataclass(frozen=True)
class Bump:
    """A finite sum of separable terms on ``R^N``."""

    terms: tuple[Term, ...]
    N: int

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for tm in self.terms:
            v = np.full(pts.shape[:-1], float(tm.coef))
            for i, ph in enumerate(tm.profiles):
                v = v * ph(pts[..., i])
            out += v
        return out

    def on_axes(self, axes: Sequence[np.ndarray], scales: Sequence[float] | None = None) -> np.ndarray:
        """Tensor-grid samples of ``prod(scales) * sigma(scales * t)``."""
        sc = [1.0] * self.N if scales is None else list(scales)
        out = np.zeros(tuple(len(ax) for ax in axes))
        for tm in self.terms:
            v = np.array(float(tm.coef) * math.prod(sc))
            for i, ph in enumerate(tm.profiles):
                v = np.multiply.outer(v, ph(sc[i] * axes[i]))
            out += v
        return out

    def marginal_exact(self, G: Sequence[int]) -> list[tuple[Fraction, tuple]]:
        """``int sigma dt_G`` as exact (coef, remaining profiles) pairs, dropping zero terms."""
        out = []
        for tm in self.terms:
            c = tm.coef
            for i in G:
                c *= tm.profiles[i].ref_integral
            if c:
                out.append((c, tuple(p for i, p in enumerate(tm.profiles) if i not in G)))
        return out

    def integral(self) -> float:
        return sum(float(tm.coef) * math.prod(p.integral() for p in tm.profiles) for tm in self.terms)

    def derivative(self, alpha: Sequence[int]) -> "Bump":
        terms = []
        for tm in self.terms:
            profs = tuple(p.derivative(m) if m else p for p, m in zip(tm.profiles, alpha))
            terms.append(Term(tm.coef, profs))
        return Bump(tuple(terms), self.N)


def project_out(bump: Bump, G: Sequence[int], beta: Profile) -> Bump:
    """``f - (int f dt_G) (x) betahat_G`` with ``betahat = beta / int beta`` on each axis of ``G``."""
    G = list(G)
    Ib = beta.ref_integral
    terms = list(bump.terms)
    for tm in bump.terms:
        c = tm.coef
        for i in G:
            c *= tm.profiles[i].ref_integral / Ib
        if c == 0:
            continue
        profs = tuple(beta if i in G else p for i, p in enumerate(tm.profiles))
        terms.append(Term(-c, profs))
    return Bump(tuple(_merge(terms)), bump.N)


def _merge(terms: list[Term]) -> list[Term]:
    acc: dict[tuple, Fraction] = {}
    for tm in terms:
        acc[tm.profiles] = acc.get(tm.profiles, Fraction(0)) + tm.coef
    return [Term(c, p) for p, c in acc.items() if c]


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class BumpParams:
    a: float = 0.5
    k: int = 6
    kind: str = "generic"  # "generic" | "odd"
    seed: int = 0
    fixed: bool = False  # reuse one base bump for every j


@dataclass
class BumpFamily:
    params: BumpParams
    e: DilationSpec
    J: int
    members: dict[tuple[int, ...], Bump]
    bound: float = 0.0
    norms_checked: tuple[int, ...] = ()
    norm_table: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.e.N

    @property
    def nu(self) -> int:
        return self.e.nu

    @property
    def half_side(self) -> float:
        return self.params.a / math.sqrt(self.N)

    def scales(self, j: Sequence[int]) -> list[float]:
        """``2^{j . e_i}`` per coordinate."""
        return [2.0 ** sum(ji * ei for ji, ei in zip(j, e_i)) for e_i in self.e.e]

    def dilated(self, j: Sequence[int]):
        """``t -> 2^{sum_i j.e_i} sigma_j(2^{j.e_1} t_1, ...)`` as a callable on points."""
        sc = np.array(self.scales(j))
        b = self.members[tuple(j)]
        return lambda pts: float(np.prod(sc)) * b(np.asarray(pts, dtype=float) * sc)

    def cancellation_errors(self, nodes: int = 24) -> dict:
        """Max over ``t_{G^c}`` samples of ``|int sigma_j dt_{G_mu}|`` by Gauss-Legendre quadrature."""
        b = self.half_side
        out = {}
        groups = self.e.groups()
        x, w = np.polynomial.legendre.leggauss(nodes)
        x, w = x * b, w * b
        probe = np.linspace(-b, b, 7)
        for j, bump in self.members.items():
            for mu, G in enumerate(groups):
                if j[mu] == 0:
                    continue
                rest = [i for i in range(self.N) if i not in G]
                worst = 0.0
                for tr in product(probe, repeat=len(rest)):
                    val = 0.0
                    for tg, wg in zip(product(x, repeat=len(G)), product(w, repeat=len(G))):
                        pt = np.zeros(self.N)
                        pt[G] = tg
                        pt[rest] = tr
                        val += math.prod(wg) * bump(pt[None, :])[0]
                    worst = max(worst, abs(val))
                out[(j, mu)] = worst
        return out


def _base_bump(params: BumpParams, N: int, rng: random.Random) -> Bump:
    b = params.a / math.sqrt(N)
    profs = []
    for _ in range(N):
        if params.kind == "odd":
            p = (0, 1)
        elif params.kind == "generic":
            p = (1, Fraction(rng.randint(-4, 4), 8), Fraction(rng.randint(-4, 4), 8))
        else:
            raise ValueError(f"unknown bump kind {params.kind!r}")
        profs.append(Profile.bump(p, params.k, b))
    return Bump((Term(Fraction(1), tuple(profs)),), N)


def make_bump_family(params: BumpParams, J: int, e: DilationSpec, norm_order: int = 4) -> BumpFamily:
    """Family ``{sigma_j : |j|_inf <= J}`` with the cancellation required by ``j_mu != 0``."""
    if params.a <= 0 or J < 0:
        raise PreconditionError("need a > 0 and J >= 0")
    N = e.N
    rng = random.Random(params.seed)
    beta = Profile.bump((1,), params.k, params.a / math.sqrt(N))
    groups = e.groups()
    fixed = _base_bump(params, N, rng) if params.fixed else None
    members = {}
    for j in product(range(J + 1), repeat=e.nu):
        bump = fixed if fixed is not None else _base_bump(params, N, rng)
        for mu, G in enumerate(groups):
            if j[mu] != 0:
                bump = project_out(bump, G, beta)
        members[j] = bump
    fam = BumpFamily(params, e, J, members)
    _measure_bound(fam, norm_order)
    return fam


def _measure_bound(fam: BumpFamily, m: int, samples: int = 33) -> None:
    """Sampled ``sup |d^alpha sigma_j|`` for ``|alpha| <= m``; the family bound is the max."""
    b = fam.half_side
    ax = np.linspace(-b, b, samples)
    alphas = [(0,) * fam.N] + multi_indices(fam.N, m, 1)
    table = {}
    for j, bump in fam.members.items():
        best = 0.0
        for al in alphas:
            vals = bump.derivative(al).on_axes([ax] * fam.N)
            best = max(best, float(np.max(np.abs(vals))))
        table[j] = best
    fam.norm_table = table
    fam.bound = max(table.values()) if table else 0.0
    fam.norms_checked = tuple(range(m + 1))


def tensor_family(f1: BumpFamily, f2: BumpFamily) -> BumpFamily:
    """``sigma_{(j1, j2)} = sigma_{j1} (x) sigma_{j2}`` on ``R^{N1 + N2}`` with concatenated dilations."""
    if not math.isclose(f1.half_side, f2.half_side):
        raise PreconditionError("tensor factors need the same box half-side")
    J = min(f1.J, f2.J)
    e = f1.e.concat(f2.e)
    members = {}
    for j1, b1 in f1.members.items():
        for j2, b2 in f2.members.items():
            if max(j1 + j2) > J:
                continue
            terms = [Term(t1.coef * t2.coef, t1.profiles + t2.profiles) for t1 in b1.terms for t2 in b2.terms]
            members[j1 + j2] = Bump(tuple(terms), e.N)
    # the product box keeps the factors' half-side b, so a = b sqrt(N1 + N2)
    params = replace(f1.params, a=f1.half_side * math.sqrt(e.N))
    fam = BumpFamily(params, e, J, members)
    fam.bound = f1.bound * f2.bound
    fam.norms_checked = tuple(sorted(set(f1.norms_checked) & set(f2.norms_checked)))
    return fam


# ---------------------------------------------------------------------------
# truncated sums on grids


def cell_grid(half_side: float, resolution: int) -> np.ndarray:
    """Cell-centred samples of ``[-h, h]``; an even resolution never hits 0."""
    h = 2 * half_side / resolution
    return -half_side + h * (np.arange(resolution) + 0.5)


@dataclass
class GridKernel:
    axes: list[np.ndarray]
    values: np.ndarray
    J: int
    e: DilationSpec
    a: float
    family: BumpFamily | None = None

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    def evaluate(self, pts) -> np.ndarray:
        """Exact truncated sum ``K_J`` at arbitrary points (needs the family)."""
        if self.family is None:
            raise PreconditionError("kernel was loaded without its family")
        return kernel_sum(self.family, self.J, pts)

    def integral(self) -> float:
        cell = math.prod(ax[1] - ax[0] for ax in self.axes)
        return float(self.values.sum() * cell)


def _check_resolution(fam: BumpFamily, J: int, resolution: Sequence[int]) -> None:
    for i, e_i in enumerate(fam.e.e):
        finest = 2 ** (J * sum(e_i))
        if resolution[i] < MIN_POINTS_PER_SCALE * finest:
            raise PreconditionError(
                f"grid axis {i} has {resolution[i]} points; scale 2^-{J * sum(e_i)} "
                f"needs at least {MIN_POINTS_PER_SCALE * finest}")


def _indices(fam: BumpFamily, J: int):
    return [j for j in fam.members if max(j, default=0) <= J]


def synth_kernel(fam: BumpFamily, J: int, resolution: int | Sequence[int]) -> GridKernel:
    """``K_J = sum_{|j|_inf <= J} sigma_j^{(2^j)}`` sampled on a cell-centred box grid."""
    if J > fam.J:
        raise PreconditionError(f"family only has members up to J={fam.J}")
    res = [resolution] * fam.N if isinstance(resolution, int) else list(resolution)
    _check_resolution(fam, J, res)
    axes = [cell_grid(fam.half_side, r) for r in res]
    vals = np.zeros(tuple(res))
    for j in _indices(fam, J):
        vals += fam.members[j].on_axes(axes, fam.scales(j))
    return GridKernel(axes, vals, J, fam.e, fam.params.a, fam)


def truncated_kernel(fam: BumpFamily, J: int) -> GridKernel:
    """``K_J`` for pointwise evaluation only: no grid samples are stored."""
    if J > fam.J:
        raise PreconditionError(f"family only has members up to J={fam.J}")
    return GridKernel([np.empty(0) for _ in range(fam.N)], np.empty((0,) * fam.N), J, fam.e, fam.params.a, fam)


def kernel_sum(fam: BumpFamily, J: int, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    out = np.zeros(pts.shape[:-1])
    for j in _indices(fam, J):
        out += fam.dilated(j)(pts)
    return out


def dilated_integrals(fam: BumpFamily, J: int, resolution: int) -> dict:
    """Grid-quadrature integrals of ``sigma_j^{(2^j)}`` next to the exact ``int sigma_j``."""
    axes = [cell_grid(fam.half_side, resolution)] * fam.N
    cell = (axes[0][1] - axes[0][0]) ** fam.N
    out = {}
    for j in _indices(fam, J):
        bump = fam.members[j]
        num = float(bump.on_axes(axes, fam.scales(j)).sum() * cell)
        out[j] = (num, bump.integral())
    return out


# ---------------------------------------------------------------------------
# size bounds


@dataclass
class ProductBounds:
    J: int
    constants: dict[tuple[int, ...], float]
    groups: list[list[int]]

    @property
    def passed(self) -> bool:
        return all(np.isfinite(v) for v in self.constants.values())


def validate_product_bounds(K: GridKernel, alphas: Sequence[Sequence[int]] | None = None) -> ProductBounds:
    """``sup |d^alpha K| prod_mu |t_mu|^{N_mu + |alpha_mu|}`` over the grid.

    Derivatives are centred finite differences.  The cell-centred grid keeps
    every ``t_mu`` away from 0.
    """
    N = len(K.axes)
    if alphas is None:
        alphas = [(0,) * N] + [tuple(int(i == k) for i in range(N)) for k in range(N)]
    groups = K.e.groups()
    mesh = np.meshgrid(*K.axes, indexing="ij")
    weights = []
    for G in groups:
        weights.append(np.sqrt(sum(mesh[i] ** 2 for i in G)))
    out = {}
    for al in alphas:
        D = K.values
        for i, m in enumerate(al):
            for _ in range(m):
                D = np.gradient(D, K.axes[i], axis=i)
        w = np.ones_like(D)
        for G, r in zip(groups, weights):
            w = w * r ** (len(G) + sum(al[i] for i in G))
        out[tuple(al)] = float(np.max(np.abs(D) * w)) if D.size else 0.0
    return ProductBounds(K.J, out, groups)


def drift(values: Sequence[float]) -> float:
    """Relative spread ``(max - min) / max`` of a J-sequence of constants."""
    v = np.asarray(values, dtype=float)
    top = np.max(np.abs(v))
    return 0.0 if top == 0 else float((v.max() - v.min()) / top)


# ---------------------------------------------------------------------------
# quadrature adapted to the dyadic breakpoints


def axis_quadrature(b: float, levels: Sequence[int], n: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on ``[-b, b]`` split at ``+-b 2^{-m}`` for every ``m`` in ``levels``.

    Exact for piecewise polynomials of degree ``< 2n`` with those breakpoints.
    """
    ms = sorted(set(int(m) for m in levels))
    cuts = sorted({b * 2.0 ** (-m) for m in ms} | {b})
    edges = sorted({-c for c in cuts} | set(cuts))
    x0, w0 = np.polynomial.legendre.leggauss(n)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append((hi - lo) / 2 * x0 + (hi + lo) / 2)
        ws.append((hi - lo) / 2 * w0)
    return np.concatenate(xs), np.concatenate(ws)


def kernel_quadrature(fam: BumpFamily, J: int, n: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule (nodes ``(M, N)``, weights ``(M,)``) matched to ``K_J``'s breakpoints."""
    xs, ws = [], []
    for e_i in fam.e.e:
        levels = {sum(ji * ei for ji, ei in zip(j, e_i)) for j in _indices(fam, J)}
        x, w = axis_quadrature(fam.half_side, levels, n)
        xs.append(x)
        ws.append(w)
    mesh = np.meshgrid(*xs, indexing="ij")
    wmesh = np.meshgrid(*ws, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=-1), axis=-1)
    return nodes, weights


# ---------------------------------------------------------------------------
# dumps


def dump_grid(path, values: np.ndarray, header: dict) -> None:
    """Text dump: ``key value...`` header lines, a ``values`` line, then row-major values."""
    lines = ["# radonlab grid dump v1"]
    for k, v in header.items():
        if isinstance(v, (list, tuple)):
            v = " ".join(_flat(v))
        lines.append(f"{k} {v}")
    lines.append(f"shape {' '.join(str(s) for s in values.shape)}")
    lines.append("values")
    body = "\n".join(repr(float(x)) for x in np.asarray(values).ravel())
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def _flat(v) -> list[str]:
    out = []
    for x in v:
        if isinstance(x, (list, tuple)):
            out.append(",".join(str(y) for y in x))
        else:
            out.append(str(x))
    return out


def load_grid(path) -> tuple[np.ndarray, dict]:
    text = Path(path).read_text().splitlines()
    header: dict[str, str] = {}
    i = 0
    while i < len(text) and text[i] != "values":
        line = text[i]
        i += 1
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition(" ")
        header[key] = val
    shape = tuple(int(s) for s in header["shape"].split())
    vals = np.array([float(x) for x in text[i + 1:] if x.strip()]).reshape(shape)
    return vals, header


def dump_kernel(K: GridKernel, path) -> None:
    header = {
        "kind": "kernel",
        "N": len(K.axes),
        "nu": K.e.nu,
        "e": [list(x) for x in K.e.e],
        "a": repr(K.a),
        "J": K.J,
        "resolution": list(K.resolution),
    }
    dump_grid(path, K.values, header)


def load_kernel(path) -> GridKernel:
    vals, h = load_grid(path)
    e = DilationSpec(tuple(tuple(int(y) for y in x.split(",")) for x in h["e"].split()))
    a = float(h["a"])
    res = [int(r) for r in h["resolution"].split()]
    b = a / math.sqrt(len(res))
    axes = [cell_grid(b, r) for r in res]
    return GridKernel(axes, vals, int(h["J"]), e, a, None)
