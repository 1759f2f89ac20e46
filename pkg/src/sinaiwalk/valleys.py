"""Valleys of the random potential and the Gamma_t-extrema cover of supp(f)(log t)^2.

All positions are lattice indices.  The potential is piecewise linear between
integer nodes, so every extremum the construction needs sits on a node.

Tie rule used throughout: among tied coordinates the one with the smallest
absolute value wins, and the positive one wins a +/- tie.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numba as nb
import numpy as np

from .environment import Potential, compute_potential, extend_environment

TIE_TOL = 1e-9


class ScanIncomplete(RuntimeError):
    """The Gamma-extrema scan could not commit the markers it needs.

    ``partial`` holds whatever was committed before the scan gave up.
    """

    def __init__(self, message: str, partial=None, diagnostics: dict | None = None):
        super().__init__(message)
        self.partial = partial
        self.diagnostics = diagnostics or {}


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Valley:
    M_left: int
    m: int
    M_right: int


@dataclass(frozen=True)
class GammaParams:
    t: float
    gamma: float = 0.0

    def __post_init__(self):
        if not (self.t > math.e and math.isfinite(self.t)):
            raise ValueError(f"t = {self.t} too small: need log log t > 0")
        if math.log(math.log(self.t)) < 1.0:
            raise ValueError(f"t = {self.t} too small: (log log t)^2 must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @classmethod
    def from_gamma_t(cls, gamma_t: float) -> "GammaParams":
        """Parameters with gamma = 0 and Gamma_t = ``gamma_t`` (t = exp(gamma_t))."""
        return cls(t=math.exp(gamma_t), gamma=0.0)

    @property
    def log_t(self) -> float:
        return math.log(self.t)

    @property
    def log2_t(self) -> float:
        return math.log(self.log_t)

    @property
    def scale(self) -> float:
        """(log t)^2, the spatial scale of the walk at time t."""
        return self.log_t ** 2

    @property
    def Gamma_t(self) -> float:
        return self.log_t + self.gamma * self.log2_t

    @property
    def u_radius(self) -> int:
        return int(math.floor(self.log2_t ** 2))


class MarkerKind(str, Enum):
    TAU_PLUS = "tau_plus"
    M_PLUS_MIN = "m_plus"
    SIGMA_PLUS = "sigma_plus"
    M_PLUS = "M_plus"
    TAU_MINUS = "tau_minus"
    M_MINUS_MIN = "m_minus"
    SIGMA_MINUS = "sigma_minus"
    M_MINUS = "M_minus"
    M_ZERO = "M_zero"


@dataclass(frozen=True)
class Marker:
    kind: MarkerKind
    rank: int
    position: int
    value: float


@dataclass
class ExtremaScan:
    """Markers committed by one directional scan, in discovery order."""

    direction: str
    Gamma: float
    markers: list[Marker]
    closed: bool

    def of_kind(self, kind: MarkerKind) -> list[Marker]:
        return [mk for mk in self.markers if mk.kind == kind]

    @property
    def minima(self) -> list[int]:
        k = MarkerKind.M_PLUS_MIN if self.direction == "right" else MarkerKind.M_MINUS_MIN
        return [mk.position for mk in self.of_kind(k)]

    @property
    def maxima(self) -> list[int]:
        k = MarkerKind.M_PLUS if self.direction == "right" else MarkerKind.M_MINUS
        return [mk.position for mk in self.of_kind(k)]


# ---------------------------------------------------------------------------
# kernels (array indices; ``origin`` is the array index of lattice site 0)

@nb.njit(cache=True)
def _pick(S, a, b, want_max, origin, tol):
    lo = min(a, b)
    hi = max(a, b)
    best = lo
    for i in range(lo + 1, hi + 1):
        v = S[i]
        bv = S[best]
        if want_max:
            better = v > bv + tol
        else:
            better = v < bv - tol
        if better:
            best = i
        elif abs(v - bv) <= tol:
            di = abs(i - origin)
            db = abs(best - origin)
            if di < db or (di == db and i > best):
                best = i
    return best


@nb.njit(cache=True)
def _alternating_scan(S, start, step, G, tol, origin, reach, stop_on_max_only):
    """Commit alternating Gamma-extrema walking from ``start`` in direction ``step``.

    The first commit is a minimum: it happens at the first index where the rise
    above the running minimum reaches G.  Returns (trigger, position, kind,
    complete) where kind 0 = min, 1 = max.
    """
    n = S.size
    trig = np.empty(n, np.int64)
    pos = np.empty(n, np.int64)
    kind = np.empty(n, np.int64)
    k = 0
    anchor = start
    seek_min = True
    ext = S[start]
    n_max = 0
    complete = False
    i = start
    while True:
        i += step
        if i < 0 or i >= n:
            break
        v = S[i]
        if seek_min:
            if v < ext:
                ext = v
            if v - ext >= G - tol:
                p = _pick(S, anchor, i, False, origin, tol)
                trig[k] = i
                pos[k] = p
                kind[k] = 0
                k += 1
                anchor = p
                seek_min = False
                ext = S[p]
                j = p
                while j != i:
                    j += step
                    if S[j] > ext:
                        ext = S[j]
                if not stop_on_max_only and n_max >= 1 and (p - origin) * step >= reach:
                    complete = True
                    break
        else:
            if v > ext:
                ext = v
            if ext - v >= G - tol:
                p = _pick(S, anchor, i, True, origin, tol)
                trig[k] = i
                pos[k] = p
                kind[k] = 1
                k += 1
                n_max += 1
                anchor = p
                seek_min = True
                ext = S[p]
                j = p
                while j != i:
                    j += step
                    if S[j] < ext:
                        ext = S[j]
                if (p - origin) * step >= reach:
                    complete = True
                    break
    return trig[:k], pos[:k], kind[:k], complete


@nb.njit(cache=True)
def _brute_force(S, a, b, G, tol):
    """Gamma-min / Gamma-max flags on array indices [a, b] straight from the definition."""
    m = b - a + 1
    is_min = np.zeros(m, np.bool_)
    is_max = np.zeros(m, np.bool_)
    for x in range(a, b + 1):
        sx = S[x]
        # minimum: both sides reach sx + G before going strictly below sx
        left = False
        u = x - 1
        while u >= a:
            if S[u] < sx - tol:
                break
            if S[u] >= sx + G - tol:
                left = True
                break
            u -= 1
        if left:
            right = False
            v = x + 1
            while v <= b:
                if S[v] < sx - tol:
                    break
                if S[v] >= sx + G - tol:
                    right = True
                    break
                v += 1
            is_min[x - a] = right
        left = False
        u = x - 1
        while u >= a:
            if S[u] > sx + tol:
                break
            if S[u] <= sx - G + tol:
                left = True
                break
            u -= 1
        if left:
            right = False
            v = x + 1
            while v <= b:
                if S[v] > sx + tol:
                    break
                if S[v] <= sx - G + tol:
                    right = True
                    break
                v += 1
            is_max[x - a] = right
    return is_min, is_max


# ---------------------------------------------------------------------------
# elementary valley operations

def depth(P: Potential, M_left: int, m: int, M_right: int) -> float:
    P.check_range(M_left, m, M_right)
    if not (M_left <= m <= M_right):
        raise ContractError("depth needs M_left <= m <= M_right")
    s = P(m)
    return float(min(P(M_left) - s, P(M_right) - s))


def is_valley(P: Potential, M_left: int, m: int, M_right: int) -> bool:
    P.check_range(M_left, m, M_right)
    if not (M_left <= m <= M_right):
        return False
    S = P.S
    a, c, b = M_left - P.lo, m - P.lo, M_right - P.lo
    tol = TIE_TOL
    return bool(S[a] >= S[a:c + 1].max() - tol
                and S[b] >= S[c:b + 1].max() - tol
                and S[c] <= S[a:b + 1].min() + tol)


def _better_pair(cand, best):
    # larger drop first, then smallest |m1|, then smallest |M1|, positive on +/- ties
    if best is None:
        return True
    d, m1, M1 = cand
    bd, bm1, bM1 = best
    if d > bd + TIE_TOL:
        return True
    if d < bd - TIE_TOL:
        return False
    key = (abs(m1), -m1, abs(M1), -M1)
    return key < (abs(bm1), -bm1, abs(bM1), -bM1)


def _refine(P: Potential, a: int, b: int, forward: bool) -> dict:
    """Deepest descent t' -> t'' (t' before t'' in the walking direction) on [a, b]."""
    S = P.S
    order = range(a, b + 1) if forward else range(b, a - 1, -1)
    run_val = -math.inf
    run_pos = None
    best = None
    for x in order:
        v = S[x - P.lo]
        if v > run_val + TIE_TOL:
            run_val, run_pos = v, x
        elif abs(v - run_val) <= TIE_TOL and (abs(x), -x) < (abs(run_pos), -run_pos):
            run_pos = x
        cand = (float(run_val - v), x, run_pos)
        if _better_pair(cand, best):
            best = cand
    drop, m1, M1 = best
    return {"m1": int(m1), "M1": int(M1), "drop": max(drop, 0.0)}


def _require_valley(P: Potential, v: Valley) -> None:
    P.check_range(v.M_left, v.m, v.M_right)
    if not is_valley(P, v.M_left, v.m, v.M_right):
        raise ContractError(f"{v} is not a valley of the potential")


def refine_right(P: Potential, v: Valley) -> dict:
    """Right refinement: the deepest sub-valley drop inside [m, M_right]."""
    _require_valley(P, v)
    return _refine(P, v.m, v.M_right, forward=True)


def refine_left(P: Potential, v: Valley) -> dict:
    """Left refinement: mirror image of :func:`refine_right` on [M_left, m]."""
    _require_valley(P, v)
    return _refine(P, v.M_left, v.m, forward=False)


# ---------------------------------------------------------------------------
# scans

def _scan_markers(P: Potential, Gamma: float, direction: str, reach: float):
    step = 1 if direction == "right" else -1
    origin = -P.lo
    trig, pos, kind, complete = _alternating_scan(
        P.S, origin, step, float(Gamma), TIE_TOL, origin, float(reach), False)
    plus = direction == "right"
    kinds = ((MarkerKind.TAU_PLUS, MarkerKind.M_PLUS_MIN, MarkerKind.SIGMA_PLUS, MarkerKind.M_PLUS)
             if plus else
             (MarkerKind.TAU_MINUS, MarkerKind.M_MINUS_MIN, MarkerKind.SIGMA_MINUS, MarkerKind.M_MINUS))
    markers = []
    n_min = n_max = 0
    S = P.S
    for tr, p, kd in zip(trig.tolist(), pos.tolist(), kind.tolist()):
        if kd == 0:
            markers.append(Marker(kinds[0], n_min, tr + P.lo, float(S[tr])))
            markers.append(Marker(kinds[1], n_min, p + P.lo, float(S[p])))
            n_min += 1
        else:
            markers.append(Marker(kinds[2], n_max, tr + P.lo, float(S[tr])))
            n_max += 1
            markers.append(Marker(kinds[3], n_max, p + P.lo, float(S[p])))
    return ExtremaScan(direction, float(Gamma), markers, bool(complete)), n_max


def _chunk(params_scale: float, factor: float) -> int:
    return max(16, int(math.ceil(factor * params_scale)))


def _scan_with_extension(P: Potential, Gamma: float, direction: str, reach: float,
                         scale: float, chunk_factor: float, cap_factor: float):
    """Scan, widening the environment on demand.  Returns (scan, P)."""
    while True:
        scan, n_max = _scan_markers(P, Gamma, direction, reach)
        if scan.closed:
            return scan, P
        env = P.env
        side = P.hi if direction == "right" else -P.lo
        cap = int(math.ceil(cap_factor * scale))
        if env is None or side >= cap:
            if n_max == 0:
                raise ScanIncomplete(
                    f"{direction} scan found no Gamma-maximum within [{P.lo}, {P.hi}]",
                    partial=scan, diagnostics={"window": [P.lo, P.hi], "Gamma": Gamma})
            if env is None:
                return scan, P
            raise ScanIncomplete(
                f"{direction} scan did not reach {reach:.1f} within the cap of {cap} sites",
                partial=scan, diagnostics={"window": [P.lo, P.hi], "Gamma": Gamma, "cap": cap})
        grow = min(_chunk(scale, chunk_factor), cap - side)
        if direction == "right":
            env = extend_environment(env, env.lo, env.hi + grow)
        else:
            env = extend_environment(env, env.lo - grow, env.hi)
        P = compute_potential(env)


def gamma_extrema_scan(P: Potential, params: GammaParams, direction: str, *,
                       reach: float = 0.0, chunk_factor: float = 4.0,
                       cap_factor: float = 512.0) -> ExtremaScan:
    """Alternating Gamma_t-extrema markers on one side of the origin.

    Stops once M_1 is committed and a committed extremum lies at distance
    ``reach`` or more from the origin.  Potentials built by
    :func:`compute_potential` are widened on demand; fixed potentials are treated as
    the whole world and the scan simply ends at the window edge.
    """
    if direction not in ("right", "left"):
        raise ValueError("direction must be 'right' or 'left'")
    scan, _ = _scan_with_extension(P, params.Gamma_t, direction, reach, params.scale,
                                   chunk_factor, cap_factor)
    return scan


# ---------------------------------------------------------------------------
# the cover

@dataclass
class ValleyDecomposition:
    M: list[int]
    m: list[int]
    n_f: int
    case_At: bool
    U: list[tuple[int, int]]
    params: GammaParams
    K: float
    potential: Potential = field(repr=False)
    n_plus: int = 0
    n_minus: int = 0
    case_At_literal: bool = False
    extrema: list[tuple[int, int]] = field(default_factory=list, repr=False)
    scans: dict = field(default_factory=dict, repr=False)
    truncated: bool = False

    @property
    def V_f(self) -> tuple[int, int] | None:
        if self.n_f == 0:
            return None
        return (self.M[0], self.M[-1])

    @property
    def valleys(self) -> list[Valley]:
        return [Valley(self.M[i], self.m[i], self.M[i + 1]) for i in range(self.n_f)]

    @property
    def support_edge(self) -> float:
        return self.K * self.params.scale

    def to_json_dict(self) -> dict:
        return {
            "t": self.params.t,
            "gamma": self.params.gamma,
            "K": self.K,
            "n_f": self.n_f,
            "case_At": self.case_At,
            "M": list(self.M),
            "m": list(self.m),
            "U": [list(u) for u in self.U],
        }


def _resolved_extrema(P: Potential, Gamma: float, left: ExtremaScan, right: ExtremaScan):
    """Two-sided alternating extrema with the central pair of valleys resolved.

    The directional scans certify M_1^- and M_1^+ as Gamma-maxima.  Between
    them a fresh scan started from M_1^- decides whether a separating maximum
    exists (case A_t) or whether the two central valleys merge.
    """
    A, B = left.maxima[0], right.maxima[0]
    origin = -P.lo
    trig, pos, kind, complete = _alternating_scan(
        P.S, A - P.lo, 1, float(Gamma), TIE_TOL, origin, float(B - P.lo - origin), True)
    central = [(int(p) + P.lo, int(kd)) for p, kd in zip(pos.tolist(), kind.tolist())]
    if not complete or central[-1] != (B, 1):
        raise RuntimeError(f"central re-scan from {A} did not close at {B}: {central}")
    seq = []
    left_ext = _branch(left)[1:]
    seq.extend(reversed(left_ext))
    seq.append((A, 1))
    seq.extend(central)
    seq.extend(_branch(right)[1:])
    n_central_min = sum(1 for _, kd in central if kd == 0)
    return seq, n_central_min


def _branch(scan: ExtremaScan) -> list[tuple[int, int]]:
    """Extrema of a directional scan from M_1 outward, as (position, kind)."""
    out = []
    for mk in scan.markers:
        if mk.kind in (MarkerKind.M_PLUS, MarkerKind.M_MINUS):
            out.append((mk.position, 1))
        elif mk.kind in (MarkerKind.M_PLUS_MIN, MarkerKind.M_MINUS_MIN) and mk.rank >= 1:
            out.append((mk.position, 0))
    return out


def _interval_depth(P: Potential, a: int, b: int) -> float:
    seg = P.S[a - P.lo:b - P.lo + 1]
    return float(min(seg[0], seg[-1]) - seg.min())


def _literal_case_At(P: Potential, Gamma: float, left: ExtremaScan, right: ExtremaScan) -> bool:
    # the construction as written: M_0 = argmax over [m_0^-, m_0^+]
    m0m, m0p = left.minima[0], right.minima[0]
    origin = -P.lo
    M0 = int(_pick(P.S, m0m - P.lo, m0p - P.lo, True, origin, TIE_TOL)) + P.lo
    d1 = _interval_depth(P, left.maxima[0], M0)
    d2 = _interval_depth(P, M0, right.maxima[0])
    return min(d1, d2) >= Gamma - TIE_TOL


def resolved_extrema(P: Potential, Gamma: float) -> list[tuple[int, int]]:
    """Every Gamma-extremum the scans certify inside P's window, as (position, kind).

    kind 0 = minimum, 1 = maximum.  The window is treated as the whole world:
    nothing is extended.
    """
    right, _ = _scan_markers(P, Gamma, "right", math.inf)
    left, _ = _scan_markers(P, Gamma, "left", math.inf)
    if not right.maxima or not left.maxima:
        raise ScanIncomplete("no Gamma-maximum on one side of the origin",
                             partial=(left, right))
    seq, _ = _resolved_extrema(P, Gamma, left, right)
    return seq


def construct_cover(P: Potential, params: GammaParams, K: float, *,
                    chunk_factor: float = 4.0, cap_factor: float = 512.0) -> ValleyDecomposition:
    """Random cover of [-K(log t)^2, K(log t)^2] by Gamma_t-valleys."""
    if not K > 0:
        raise ValueError("K must be positive")
    Gamma = params.Gamma_t
    edge = K * params.scale
    right, P = _scan_with_extension(P, Gamma, "right", edge, params.scale, chunk_factor, cap_factor)
    left, P = _scan_with_extension(P, Gamma, "left", edge, params.scale, chunk_factor, cap_factor)
    if P.env is not None:
        # the left pass may have widened the window; redo the right scan on it
        right, _ = _scan_markers(P, Gamma, "right", edge)
    seq, n_central_min = _resolved_extrema(P, Gamma, left, right)
    case_At = n_central_min == 2
    truncated = not (left.closed and right.closed)

    # valleys are consecutive max-min-max triples; keep those whose bottom is inside
    maxima_idx = [j for j, (_, kd) in enumerate(seq) if kd == 1]
    M, m = [], []
    for a, b in zip(maxima_idx, maxima_idx[1:]):
        bottom = seq[a + 1][0]
        if -edge < bottom < edge:
            if not M:
                M.append(seq[a][0])
            m.append(bottom)
            M.append(seq[b][0])
    n_f = len(m)

    # one-sided counts; the merged central bottom belongs to both sides
    j_A = seq.index((left.maxima[0], 1))
    j_B = seq.index((right.maxima[0], 1))
    central_mins = [p for p, kd in seq[j_A:j_B + 1] if kd == 0]
    right_mins = central_mins[-1:] + [p for p, kd in seq[j_B:] if kd == 0]
    left_mins = central_mins[:1] + [p for p, kd in seq[:j_A] if kd == 0]
    n_plus = sum(1 for p in right_mins if p < edge)
    n_minus = sum(1 for p in left_mins if p > -edge)

    r = params.u_radius
    U = [(Ml - r, Ml + r) for Ml in M]
    return ValleyDecomposition(
        M=M, m=m, n_f=n_f, case_At=case_At, U=U, params=params, K=float(K), potential=P,
        n_plus=n_plus, n_minus=n_minus,
        case_At_literal=_literal_case_At(P, Gamma, left, right),
        extrema=seq, scans={"left": left, "right": right}, truncated=truncated)


def indeterminate_sets(d: ValleyDecomposition) -> list[tuple[int, int]]:
    r = d.params.u_radius
    return [(Ml - r, Ml + r) for Ml in d.M]


def brute_force_extrema(P: Potential, interval: tuple[int, int], Gamma: float) -> list[tuple[int, int]]:
    """Gamma-extrema of S on ``interval`` by direct application of the definition.

    x is a Gamma-minimum iff some u < x < v in the interval has S[x] = min S[u..v]
    and S[u], S[v] >= S[x] + Gamma; maxima symmetrically.  Tied candidates with
    no opposite extremum between them collapse to the smallest |x|.
    """
    a, b = interval
    P.check_range(a, b)
    if not Gamma > 0:
        raise ValueError("Gamma must be positive")
    is_min, is_max = _brute_force(P.S, a - P.lo, b - P.lo, float(Gamma), TIE_TOL)
    cand = sorted([(int(x) + a, 0) for x in np.flatnonzero(is_min)]
                  + [(int(x) + a, 1) for x in np.flatnonzero(is_max)])
    out: list[tuple[int, int]] = []
    for x, kd in cand:
        if out and out[-1][1] == kd:
            y = out[-1][0]
            if (abs(x), -x) < (abs(y), -y):
                out[-1] = (x, kd)
        else:
            out.append((x, kd))
    return out


@dataclass
class GoodEnvReport:
    n_f: int
    finite: bool
    V_f_size: int
    V_f_ok: bool
    widths: list[int]
    spacing_ok: bool
    refinement_drops: list[float]
    refinement_ok: bool

    @property
    def ok(self) -> bool:
        return self.finite and self.V_f_ok and self.spacing_ok and self.refinement_ok


def check_good_environment(d: ValleyDecomposition, c1: float, c2_low: float,
                           c2_high: float) -> GoodEnvReport:
    """Checkable parts of the good-environment event (finiteness, size, spacing, cleanliness)."""
    scale = d.params.scale
    P = d.potential
    size = 0 if d.V_f is None else d.V_f[1] - d.V_f[0] + 1
    widths = [abs(d.M[i + 1] - d.M[i]) for i in range(d.n_f)]
    drops = []
    for v in d.valleys:
        drops.append(max(refine_right(P, v)["drop"], refine_left(P, v)["drop"]))
    Gamma = d.params.Gamma_t
    return GoodEnvReport(
        n_f=d.n_f,
        finite=True,
        V_f_size=size,
        V_f_ok=size <= c1 * scale,
        widths=widths,
        spacing_ok=all(c2_low * scale <= w <= c2_high * scale for w in widths),
        refinement_drops=drops,
        refinement_ok=all(x < Gamma for x in drops),
    )


def write_decomposition_json(d: ValleyDecomposition, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(d.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def write_decomposition_csv(d: ValleyDecomposition, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    P = d.potential
    rows = sorted([(x, "M") for x in d.M] + [(x, "m") for x in d.m])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["kind", "index", "S"])
        for x, kd in rows:
            w.writerow([kd, x, format(float(P(x)), ".17g")])
    return path
