"""Carnot-Caratheodory ball sampling and the control checker.

``control_check`` is one-sided on both ends:

* exact tier (sufficient): ``X0 = sum c_j X_j`` with ``d_j <= d0`` solved over
  truncated polynomial coefficients; then ``delta^{d0} X0 = sum
  (delta^{d0 - d_j} c_j) delta^{d_j} X_j`` with coefficients bounded on
  ``[0, 1]^nu``.
* refutation tier (necessary): at ``x = 0`` and ``delta`` with some
  components sent to 0, the target must lie in the pointwise span of the
  fields that survive.  Only used when the candidate set is known to be
  complete.
* numeric tier: least-squares coefficient growth over a dyadic delta grid,
  reported and never used for a verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np

from .core import Poly
from .lie import WeightedField, field_eval_exact, field_truncate, span_of_vectors
from .prep import solve_module

# ---------------------------------------------------------------------------
# control


@dataclass
class ControlCertificate:
    status: str  # "Proved" | "Refuted" | "Unknown"
    target: WeightedField
    candidates: list = field(default_factory=list)  # WeightedFields with d_j <= d0
    coefficients: dict = field(default_factory=dict)  # candidate index -> Poly
    delta_exponents: dict = field(default_factory=dict)  # candidate index -> d0 - d_j
    cap: int | None = None  # identity holds modulo x-degree > cap (None: exactly)
    witness: dict | None = None
    bounds: dict = field(default_factory=dict)
    route: str = ""
    notes: list = field(default_factory=list)

    def replay(self) -> bool:
        """Re-substitute the coefficients; True iff the target is reproduced."""
        if self.status != "Proved":
            return False
        return replay_control(self.target, self.candidates, self.coefficients, self.cap)


def replay_control(target: WeightedField, candidates: Sequence[WeightedField],
                   coefficients: dict, cap: int | None) -> bool:
    n = target.n
    out = [Poly.zero(n) for _ in range(n)]
    for j, c in coefficients.items():
        w = candidates[j]
        if not all(a <= b for a, b in zip(w.d, target.d)):
            return False
        for i, p in enumerate(w.X):
            out[i] = out[i] + c.mul(p)
    return field_truncate(out, cap) == field_truncate(target.X, cap)


def replay_symbolic_delta(cert: ControlCertificate) -> bool:
    """Check ``delta^{d0} X0 = sum c^delta_j delta^{d_j} X_j`` with ``delta`` symbolic.

    The delta variables are appended to the x-variables and the identity is
    compared exactly (modulo the certificate's x-degree cap).
    """
    tgt = cert.target
    n, nu = tgt.n, tgt.nu
    nv = n + nu
    pos = list(range(n))

    def dmono(d):
        return Poly.monomial((0,) * n + tuple(d))

    lhs = [dmono(tgt.d).mul(p.embed(nv, pos)) for p in tgt.X]
    rhs = [Poly.zero(nv) for _ in range(n)]
    for j, c in cert.coefficients.items():
        w = cert.candidates[j]
        e = tuple(a - b for a, b in zip(tgt.d, w.d))
        if any(v < 0 for v in e):
            return False
        cdelta = dmono(e).mul(c.embed(nv, pos))
        for i, p in enumerate(w.X):
            rhs[i] = rhs[i] + cdelta.mul(dmono(w.d)).mul(p.embed(nv, pos))
    cap = cert.cap
    keep = (lambda m: sum(m[:n]) <= cap) if cap is not None else (lambda m: True)
    return [p.filter(keep) for p in lhs] == [p.filter(keep) for p in rhs]


def _elements(S):
    if hasattr(S, "elements"):
        return list(S.elements), bool(getattr(S, "complete", True))
    return list(S), True


def zero_patterns(nu: int):
    for k in range(nu + 1):
        for Z in combinations(range(nu), k):
            yield Z


def refute_at_origin(target: WeightedField, S: Sequence[WeightedField]) -> dict | None:
    """A pointwise infeasibility witness at ``x = 0``, or None.

    For a zero pattern ``Z`` with ``d0`` vanishing on ``Z``, sending
    ``delta_mu -> 0`` for ``mu in Z`` kills every field whose degree is
    nonzero on ``Z``; bounded coefficients then force ``X0(0)`` into the span
    of the survivors.
    """
    n = target.n
    origin = (Fraction(0),) * n
    t0 = field_eval_exact(target.X, origin)
    if not any(t0):
        return None
    for Z in zero_patterns(target.nu):
        if any(target.d[mu] for mu in Z):
            continue
        survivors = [w for w in S if not any(w.d[mu] for mu in Z)]
        vecs = [w.X for w in survivors]
        before = span_of_vectors(vecs, origin)
        after = span_of_vectors(vecs + [target.X], origin)
        if after.rank > before.rank:
            delta = tuple(0 if mu in Z else 1 for mu in range(target.nu))
            return {
                "x": tuple(0 for _ in range(n)),
                "zero_components": list(Z),
                "delta": delta,
                "target_value": [str(v) for v in t0],
                "survivor_values": [[str(v) for v in field_eval_exact(w.X, origin)] for w in survivors],
                "rank_without_target": before.rank,
                "rank_with_target": after.rank,
            }
    return None


def control_check(target: WeightedField, S, budget: int | None = None, numeric: bool = False,
                  refute: bool = True, refute_set=None, x_samples: int = 3,
                  seed: int = 0) -> ControlCertificate:
    """Decide whether ``S`` controls ``target`` at truncation.

    ``budget`` is the weighted truncation budget ``L_t + L_x``; a target of
    degree ``d0`` is compared modulo x-degree ``> budget - |d0|_1``.  Without a
    budget the inputs are exact polynomials and the identity must be exact.
    """
    elems, complete = _elements(S)
    d0 = target.d
    cap = None if budget is None else budget - sum(d0)
    cands = [w for w in elems if all(a <= b for a, b in zip(w.d, d0))]
    cert = ControlCertificate("Unknown", target, cands, cap=cap)
    if target.is_zero():
        cert.status, cert.route = "Proved", "zero target"
        return cert
    if cap is not None and cap < 0:
        cert.notes.append("target degree exceeds the truncation budget")
        return cert
    sol = solve_module(target.X, [w.X for w in cands], cap)
    if sol is not None:
        cert.status = "Proved"
        cert.route = "exact"
        cert.coefficients = {j: c for j, c in enumerate(sol) if c}
        cert.delta_exponents = {j: tuple(a - b for a, b in zip(d0, cands[j].d)) for j in cert.coefficients}
    elif refute:
        rset, rcomplete = (elems, complete) if refute_set is None else _elements(refute_set)
        if rcomplete:
            w = refute_at_origin(target, rset)
            if w is not None:
                cert.status = "Refuted"
                cert.witness = w
                cert.route = "pointwise"
        else:
            cert.notes.append("candidate closure incomplete at cutoff; refutation skipped")
    if numeric:
        cert.bounds = coefficient_growth(target, elems, x_samples=x_samples, seed=seed)
    return cert


def coefficient_growth(target: WeightedField, S: Sequence[WeightedField], kmax: int = 10,
                       x_samples: int = 3, radius: float = 0.05, seed: int = 0) -> dict:
    """Least-squares coefficients of ``delta^{d0} X0`` over ``{delta^{d_j} X_j}``.

    Reports the largest coefficient norm and residual over a dyadic grid
    ``delta_mu = 2^{-k}``, ``k <= kmax``, at a few small sample points.
    """
    rng = np.random.default_rng(seed)
    n, nu = target.n, target.nu
    pts = [np.zeros(n)] + [rng.uniform(-radius, radius, n) for _ in range(x_samples)]
    ks = np.arange(kmax + 1)
    grids = np.meshgrid(*([ks] * nu), indexing="ij")
    kgrid = np.stack([g.ravel() for g in grids], axis=-1)
    if len(kgrid) > 2000:
        kgrid = kgrid[rng.choice(len(kgrid), 2000, replace=False)]
    worst_c, worst_r = 0.0, 0.0
    d0 = np.array(target.d)
    D = np.array([w.d for w in S]) if S else np.zeros((0, nu))
    for x in pts:
        X0 = np.array([p.eval_numeric(list(x)) for p in target.X], dtype=float)
        Y = np.array([[p.eval_numeric(list(x)) for p in w.X] for w in S], dtype=float).reshape(len(S), n)
        for k in kgrid:
            delta = 2.0 ** (-k)
            b = np.prod(delta ** d0) * X0
            A = (Y * np.prod(delta[None, :] ** D, axis=1)[:, None]).T if len(S) else np.zeros((n, 0))
            if A.shape[1]:
                c, *_ = np.linalg.lstsq(A, b, rcond=None)
                res = np.linalg.norm(A @ c - b)
                worst_c = max(worst_c, float(np.linalg.norm(c)))
            else:
                res = np.linalg.norm(b)
            worst_r = max(worst_r, float(res))
    return {"max_coefficient_norm": worst_c, "max_residual": worst_r, "kmax": kmax,
            "samples": len(pts)}


def control_check_w(W, S, budget: int | None = None, numeric: bool = False,
                    refute: bool = True, refute_set=None) -> ControlCertificate:
    """Control of a W field: preparation route, then coefficient by coefficient."""
    from .prep import taylor_prepare
    from .core import deg

    e = W.dilations
    elems, _ = _elements(S)
    taylor = W.taylor
    n = W.W.nx
    anchor = WeightedField(tuple(Poly.zero(n) for _ in range(n)), (1,) * e.nu, "W")
    if not taylor:
        c = ControlCertificate("Proved", anchor, route="zero W")
        return c
    prep = taylor_prepare(W.W)
    sub = []
    for a, X in zip(prep.alphas, prep.fields):
        if not any(a):
            continue
        tgt = WeightedField(X, deg(a, e), f"Xh{list(a)}")
        sub.append(control_check(tgt, elems, budget, refute=False))
    if sub and all(c.status == "Proved" for c in sub):
        return ControlCertificate("Proved", anchor, route="preparation",
                                  witness={"alphas": prep.alphas, "parts": sub})
    per = [control_check(w, S, budget, numeric=numeric, refute=refute, refute_set=refute_set)
           for w in taylor.values()]
    status = "Refuted" if any(c.status == "Refuted" for c in per) else (
        "Proved" if all(c.status == "Proved" for c in per) else "Unknown")
    out = ControlCertificate(status, anchor, route="coefficients", witness={"parts": per})
    if status == "Refuted":
        bad = next(c for c in per if c.status == "Refuted")
        out.witness = {"coefficient": bad.target, "pointwise": bad.witness, "parts": per}
    return out


# ---------------------------------------------------------------------------
# Carnot-Caratheodory balls


@dataclass
class BallSample:
    center: np.ndarray
    delta: np.ndarray
    points: np.ndarray
    controls: np.ndarray  # (paths, segments, q)
    extents: np.ndarray  # per-axis max |p - x0|
    escaped: int = 0

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def _sample_controls(rng, paths: int, segments: int, q: int, speed: float) -> np.ndarray:
    """A mixture of constant-direction, bang-bang axis and random-segment controls."""
    a = np.zeros((paths, segments, q))
    k1 = paths // 3
    k2 = paths // 3
    # constant direction at full speed
    u = rng.normal(size=(k1, q))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    a[:k1] = speed * u[:, None, :]
    # bang-bang along coordinate axes, switching at random segments
    axes = rng.integers(0, q, size=(k2, segments))
    sign = rng.choice([-1.0, 1.0], size=(k2, segments))
    blocks = rng.integers(1, 5, size=k2)
    for i in range(k2):
        b = blocks[i]
        ax = np.repeat(axes[i, ::b][: (segments + b - 1) // b], b)[:segments]
        sg = np.repeat(sign[i, ::b][: (segments + b - 1) // b], b)[:segments]
        a[k1 + i, np.arange(segments), ax] = speed * sg
    # random directions and speeds per segment
    k3 = paths - k1 - k2
    v = rng.normal(size=(k3, segments, q))
    v /= np.linalg.norm(v, axis=2, keepdims=True)
    r = speed * rng.uniform(0.5, 1.0, size=(k3, segments, 1))
    a[k1 + k2:] = v * r
    return a


def cc_ball_sample(X: Sequence[WeightedField], x0, delta, paths: int = 2000, segments: int = 32,
                   steps: int = 4, horizon: float = 1.0, speed: float = 0.999, seed: int = 0,
                   domain: float = 10.0) -> BallSample:
    """Endpoints of unit-time paths ``x' = sum a_j delta^{d_j} X_j(x)`` with ``|a| < 1``."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    delta = np.asarray(delta, dtype=float)
    n, q = len(x0), len(X)
    scale = np.array([np.prod(delta ** np.array(w.d, dtype=float)) for w in X])
    ctrl = _sample_controls(rng, paths, segments, q, speed)
    comps = [[p for p in w.X] for w in X]

    def vel(x, a):
        cols = [x[:, i] for i in range(n)]
        v = np.zeros_like(x)
        for j in range(q):
            if scale[j] == 0:
                continue
            coef = a[:, j] * scale[j]
            for i, p in enumerate(comps[j]):
                if p:
                    v[:, i] += coef * p.eval_numeric(cols)
        return v

    x = np.tile(x0, (paths, 1))
    h = horizon / (segments * steps)
    for s in range(segments):
        a = ctrl[:, s, :]
        for _ in range(steps):
            k1 = vel(x, a)
            k2 = vel(x + h / 2 * k1, a)
            k3 = vel(x + h / 2 * k2, a)
            k4 = vel(x + h * k3, a)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    ok = np.all(np.abs(x) <= domain, axis=1) & np.all(np.isfinite(x), axis=1)
    pts = x[ok]
    ext = np.max(np.abs(pts - x0), axis=0) if len(pts) else np.zeros(n)
    return BallSample(x0, delta, pts, ctrl[ok], ext, int((~ok).sum()))


def write_point_cloud(sample: BallSample, path) -> None:
    """One point per line, whitespace separated, with a commented header."""
    header = f"center {' '.join(map(str, sample.center))}; delta {' '.join(map(str, sample.delta))}"
    np.savetxt(path, sample.points, header=header)


def loglog_slope(deltas: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(deltas)``."""
    lx, ly = np.log(np.asarray(deltas, float)), np.log(np.asarray(values, float))
    return float(np.polyfit(lx, ly, 1)[0])
