"""Normal-form analytics: regret, SumRegret, max-entropy symmetric Nash via
a mixed-integer program solved by support enumeration, and the meta-game
statistics (NE-regret, uniform score, NE-NBS, best-response graphs).

The entropy objective -sum sigma log sigma is handled through a piecewise
linear upper envelope of f(x) = x log x with K chords: minimizing
sum_pi gamma_pi with gamma_pi >= l_k(sigma_pi) for every chord reproduces
the interpolant of f (chords of a convex function dominate it on their own
segment), so -sum gamma is a certified entropy lower bound within
n_strategies/(e K) of the truth. K = floor(n / (e eps)) + 1 makes the
solution eps-optimal. Binary support indicators are enumerated explicitly
(ordered by decreasing support size, pruned by the log|support| entropy
bound), which is exact and fast for the <= 20-strategy games handled here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .rngtools import entropy_nats

E = math.e


class SolverError(Exception):
    pass


@dataclass
class SymmetricGame:
    """Symmetric 2-player normal form: u[i, j] is the row player's payoff
    when playing strategy i against an opponent playing j."""

    names: list[str]
    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        n = len(self.names)
        if self.u.shape != (n, n):
            raise ValueError(f"payoff matrix {self.u.shape} does not match {n} strategies")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("payoff matrix must be finite")

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def span(self) -> float:
        return float(self.u.max() - self.u.min())


def _check_mixed(sigma: Sequence[float], n: int, what: str) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n,):
        raise ValueError(f"{what}: expected {n} components, got {sigma.shape}")
    if np.any(sigma < -1e-9) or abs(sigma.sum() - 1.0) > 1e-9:
        raise ValueError(f"{what}: not a probability vector: {sigma}")
    return np.clip(sigma, 0.0, None)


def regret(sigma_prime: Sequence[float], sigma: Sequence[float], game: SymmetricGame) -> float:
    """Payoff shortfall of sigma_prime versus the best pure response to sigma."""
    sp = _check_mixed(sigma_prime, game.n, "sigma_prime")
    sg = _check_mixed(sigma, game.n, "sigma")
    vs = game.u @ sg
    return float(vs.max() - sp @ vs)


def sum_regret(game: SymmetricGame, sigma1: Sequence[float],
               sigma2: Sequence[float] | None = None) -> float:
    """Sum of both players' regrets; with a symmetric profile this equals
    2 * regret(sigma, sigma)."""
    if sigma2 is None:
        return 2.0 * regret(sigma1, sigma1, game)
    return regret(sigma1, sigma2, game) + regret(sigma2, sigma1, game)


# ---------------------------------------------------------------------------
# Piecewise-linear entropy machinery


def theorem_segment_count(n_strategies: int, eps: float) -> int:
    """Chord count guaranteeing an eps-optimal entropy objective."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return int(n_strategies / (E * eps)) + 1


def _f(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


@lru_cache(maxsize=64)
def entropy_segments(k_segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Chord intercepts a_k and slopes b_k of f(x) = x log x over the K
    segments [k/K, (k+1)/K]; each chord's line is a_k + b_k * x."""
    k = np.arange(k_segments)
    x0 = k / k_segments
    x1 = (k + 1) / k_segments
    y0 = _f(x0)
    y1 = _f(x1)
    slopes = (y1 - y0) * k_segments
    intercepts = y0 - slopes * x0
    return intercepts, slopes


def piecewise_envelope(x: np.ndarray, k_segments: int) -> np.ndarray:
    """The piecewise-linear interpolant l(x) = max_k chord_k(x) on [0, 1]."""
    a, b = entropy_segments(k_segments)
    return np.max(a[None, :] + np.outer(x, b), axis=1)


def piecewise_bound_check(k_segments: int, n_samples: int = 200_001) -> float:
    """Measured sup-deviation |f - l| on [0, 1] by dense sampling; bounded
    by 1/(e K), attained on the first segment."""
    x = np.linspace(0.0, 1.0, n_samples)
    return float(np.max(np.abs(piecewise_envelope(x, k_segments) - _f(x))))


def segment_peak_location(k: int, k_segments: int) -> float:
    """Location of the maximum chord deviation inside segment k >= 1."""
    if k < 1:
        raise ValueError("closed form applies to k >= 1; segment 0 peaks at 1/(eK)")
    return (k + 1) / (E * k_segments) * (1.0 + 1.0 / k) ** k


# ---------------------------------------------------------------------------
# Max-entropy symmetric Nash


@dataclass
class SolveResult:
    sigma: np.ndarray
    entropy: float               # true Shannon entropy of sigma, nats
    pl_entropy: float            # certified piecewise-linear lower bound
    support: list[int]
    support_indicators: list[bool]   # b_pi = True iff sigma[pi] == 0
    strategy_payoffs: np.ndarray
    u_star: float
    gap: float
    k_segments: int
    relaxed: bool = False        # numerical tolerance forced certificate slack

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma": [float(x) for x in self.sigma],
                "entropy": self.entropy,
                "support": self.support,
                "u_star": self.u_star,
                "gap": self.gap,
            }
        )


def _support_lp(u: np.ndarray, support: tuple[int, ...], k_segments: int,
                bounds_hint: tuple[float, float]):
    """LP for one support pattern: maximize piecewise entropy over the Nash
    constraints with off-support strategies pinned to zero."""
    n = u.shape[0]
    s = list(support)
    off = [i for i in range(n) if i not in set(s)]
    ns = len(s)
    a_seg, b_seg = entropy_segments(k_segments)
    nvar = ns + 1 + ns  # sigma_S, u*, gamma_S
    c = np.zeros(nvar)
    c[ns + 1:] = 1.0

    a_eq = np.zeros((1 + ns, nvar))
    b_eq = np.zeros(1 + ns)
    a_eq[0, :ns] = 1.0
    b_eq[0] = 1.0
    for row, i in enumerate(s, start=1):
        a_eq[row, :ns] = u[i, s]
        a_eq[row, ns] = -1.0

    n_ub = len(off) + ns * k_segments
    a_ub = np.zeros((n_ub, nvar))
    b_ub = np.zeros(n_ub)
    for row, j in enumerate(off):
        a_ub[row, :ns] = u[j, s]
        a_ub[row, ns] = -1.0
    row = len(off)
    for col in range(ns):
        a_ub[row : row + k_segments, col] = b_seg
        a_ub[row : row + k_segments, ns + 1 + col] = -1.0
        b_ub[row : row + k_segments] = -a_seg
        row += k_segments

    lo, hi = bounds_hint
    bounds = [(0.0, 1.0)] * ns + [(lo, hi)] + [(-1.0, 0.0)] * ns
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": 1e-9,
                 "dual_feasibility_tolerance": 1e-9},
    )
    if not res.success:
        return None
    sigma = np.zeros(n)
    sigma[s] = np.clip(res.x[:ns], 0.0, None)
    sigma /= sigma.sum()
    return sigma, -float(res.fun)


def _support_patterns(n: int) -> Iterable[tuple[int, ...]]:
    # decreasing size for early high-entropy incumbents, lexicographic within
    from itertools import combinations

    for size in range(n, 0, -1):
        yield from combinations(range(n), size)


def max_entropy_ne(game: SymmetricGame, eps_ent: float = 0.05,
                   k_segments: int | None = None) -> SolveResult:
    """An eps_ent-optimal max-entropy symmetric Nash equilibrium.

    Enumerates support patterns, solving a piecewise-linear entropy LP per
    feasible pattern, keeping the best certified objective; patterns whose
    entropy cap log|support| cannot beat the incumbent are pruned. A
    symmetric NE always exists, so the search cannot come back empty.
    """
    n = game.n
    if n == 1:
        return SolveResult(
            sigma=np.array([1.0]), entropy=0.0, pl_entropy=0.0, support=[0],
            support_indicators=[False], strategy_payoffs=game.u[:, 0].copy(),
            u_star=float(game.u[0, 0]), gap=eps_ent,
            k_segments=k_segments or theorem_segment_count(1, eps_ent),
        )
    k = k_segments or theorem_segment_count(n, eps_ent)
    span = game.span
    cert_tol = max(1e-6 * span, 1e-9)
    bounds_hint = (float(game.u.min()), float(game.u.max()))

    best: tuple[float, np.ndarray] | None = None
    relaxed_seen = False
    for pattern in _support_patterns(n):
        if best is not None and math.log(len(pattern)) <= best[0] + 1e-12:
            continue
        got = _support_lp(game.u, pattern, k, bounds_hint)
        if got is None:
            continue
        sigma, pl_h = got
        vs = game.u @ sigma
        if float(vs.max() - sigma @ vs) > cert_tol:
            # LP numerics produced a non-equilibrium point; skip but note it
            relaxed_seen = True
            continue
        if best is None or pl_h > best[0] + 1e-12:
            best = (pl_h, sigma)
    if best is None:
        raise SolverError(
            "no support pattern yielded an equilibrium within certificate "
            f"tolerance {cert_tol:g}; payoff span {span:g}"
        )
    pl_h, sigma = best
    vs = game.u @ sigma
    u_star = float(sigma @ vs)
    support = [i for i in range(n) if sigma[i] > 1e-9]
    return SolveResult(
        sigma=sigma,
        entropy=entropy_nats(sigma),
        pl_entropy=pl_h,
        support=support,
        support_indicators=[sigma[i] <= 1e-9 for i in range(n)],
        strategy_payoffs=vs,
        u_star=u_star,
        gap=eps_ent,
        k_segments=k,
        relaxed=relaxed_seen,
    )


# ---------------------------------------------------------------------------
# Two-population (bimatrix) variant, used when roles are not symmetrized


def max_entropy_ne_bimatrix(a: np.ndarray, b: np.ndarray, eps_ent: float = 0.05
                            ) -> tuple[np.ndarray, np.ndarray, float]:
    """eps_ent-optimal Nash of a bimatrix game maximizing the summed entropy
    of both mixtures; same support-enumeration scheme with a joint LP."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("payoff matrices must share a shape")
    n1, n2 = a.shape
    k = theorem_segment_count(n1 + n2, eps_ent)
    a_seg, b_seg = entropy_segments(k)
    tol1 = max(1e-6 * float(a.max() - a.min()), 1e-9)
    tol2 = max(1e-6 * float(b.max() - b.min()), 1e-9)

    from itertools import combinations

    def patterns(n):
        for size in range(n, 0, -1):
            yield from combinations(range(n), size)

    best = None
    for s1 in patterns(n1):
        if best is not None and math.log(len(s1)) + math.log(n2) <= best[0] + 1e-12:
            continue
        for s2 in patterns(n2):
            if best is not None and (
                math.log(len(s1)) + math.log(len(s2)) <= best[0] + 1e-12
            ):
                continue
            m1, m2 = len(s1), len(s2)
            # vars: sigma1_S1, sigma2_S2, u1*, u2*, gamma1_S1, gamma2_S2
            nvar = m1 + m2 + 2 + m1 + m2
            c = np.zeros(nvar)
            c[m1 + m2 + 2:] = 1.0
            rows_eq, rhs_eq = [], []
            r = np.zeros(nvar); r[:m1] = 1.0
            rows_eq.append(r); rhs_eq.append(1.0)
            r = np.zeros(nvar); r[m1:m1 + m2] = 1.0
            rows_eq.append(r); rhs_eq.append(1.0)
            for i in s1:  # row payoffs on-support: A[i, S2] sigma2 = u1*
                r = np.zeros(nvar)
                r[m1:m1 + m2] = a[i, list(s2)]
                r[m1 + m2] = -1.0
                rows_eq.append(r); rhs_eq.append(0.0)
            for j in s2:
                r = np.zeros(nvar)
                r[:m1] = b[list(s1), j]
                r[m1 + m2 + 1] = -1.0
                rows_eq.append(r); rhs_eq.append(0.0)
            rows_ub, rhs_ub = [], []
            for i in range(n1):
                if i in s1:
                    continue
                r = np.zeros(nvar)
                r[m1:m1 + m2] = a[i, list(s2)]
                r[m1 + m2] = -1.0
                rows_ub.append(r); rhs_ub.append(0.0)
            for j in range(n2):
                if j in s2:
                    continue
                r = np.zeros(nvar)
                r[:m1] = b[list(s1), j]
                r[m1 + m2 + 1] = -1.0
                rows_ub.append(r); rhs_ub.append(0.0)
            for col in range(m1 + m2):
                for seg in range(k):
                    r = np.zeros(nvar)
                    r[col] = b_seg[seg]
                    r[m1 + m2 + 2 + col] = -1.0
                    rows_ub.append(r); rhs_ub.append(-a_seg[seg])
            bounds = (
                [(0.0, 1.0)] * (m1 + m2)
                + [(float(a.min()), float(a.max())), (float(b.min()), float(b.max()))]
                + [(-1.0, 0.0)] * (m1 + m2)
            )
            res = linprog(
                c, A_ub=np.array(rows_ub), b_ub=np.array(rhs_ub),
                A_eq=np.array(rows_eq), b_eq=np.array(rhs_eq), bounds=bounds,
                method="highs",
                options={"primal_feasibility_tolerance": 1e-9,
                         "dual_feasibility_tolerance": 1e-9},
            )
            if not res.success:
                continue
            sig1 = np.zeros(n1)
            sig1[list(s1)] = np.clip(res.x[:m1], 0.0, None)
            sig1 /= sig1.sum()
            sig2 = np.zeros(n2)
            sig2[list(s2)] = np.clip(res.x[m1:m1 + m2], 0.0, None)
            sig2 /= sig2.sum()
            r1 = float((a @ sig2).max() - sig1 @ a @ sig2)
            r2 = float((sig1 @ b).max() - sig1 @ b @ sig2)
            if r1 > tol1 or r2 > tol2:
                continue
            pl_h = -float(res.fun)
            if best is None or pl_h > best[0] + 1e-12:
                best = (pl_h, sig1, sig2)
    if best is None:
        raise SolverError("bimatrix enumeration found no equilibrium")
    pl_h, sig1, sig2 = best
    return sig1, sig2, entropy_nats(sig1) + entropy_nats(sig2)


# ---------------------------------------------------------------------------
# Meta-game statistics


def ne_regret_score(game: SymmetricGame, pi_index: int, result: SolveResult) -> float:
    """Regret of the pure meta-strategy against the solved equilibrium."""
    if result.sigma.shape != (game.n,):
        raise ValueError("solution does not match game size")
    vs = game.u @ result.sigma
    return float(vs.max() - vs[pi_index])


def uniform_score(game: SymmetricGame, pi_index: int) -> float:
    """Mean payoff against the uniform opponent mixture, self included."""
    return float(game.u[pi_index].mean())


def ne_nbs(game: SymmetricGame, pi_index: int, result: SolveResult) -> float:
    """Utility product with the equilibrium opponent: welfare and fairness."""
    mine = float(game.u[pi_index] @ result.sigma)
    theirs = float(result.sigma @ game.u[:, pi_index])
    return mine * theirs


def best_response_weights(u: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Per-column best-response indicator weights: w[m1, m2] is the weight
    of edge m1 -> m2, with argmax ties split evenly."""
    n = u.shape[0]
    w = np.zeros((n, n))
    for m1 in range(n):
        col = u[:, m1]
        top = col.max()
        ties = np.flatnonzero(col >= top - rel_tol * max(1.0, abs(top)))
        w[m1, ties] = 1.0 / len(ties)
    return w


class BRGraph:
    """Aggregated empirical best-response digraph over sampled games."""

    def __init__(self, names: list[str]):
        self.names = names
        self.weights = np.zeros((len(names), len(names)))
        self.n_games = 0

    def add(self, game: SymmetricGame) -> None:
        if game.names != self.names:
            raise ValueError("game strategy index mismatch")
        self.weights += best_response_weights(game.u)
        self.n_games += 1

    def edge_weights(self) -> np.ndarray:
        if self.n_games == 0:
            return self.weights
        return self.weights / self.n_games

    def to_dot(self, decimals: int = 3) -> str:
        w = self.edge_weights()
        lines = ["digraph best_response {"]
        for name in self.names:
            lines.append(f'  "{name}";')
        for i, src in enumerate(self.names):
            for j, dst in enumerate(self.names):
                if w[i, j] > 0:
                    lines.append(f'  "{src}" -> "{dst}" [label="{w[i, j]:.{decimals}f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def br_graph(games: Iterable[SymmetricGame], names: list[str] | None = None) -> BRGraph:
    """Aggregate best-response edge frequencies over a stream of games."""
    graph = None
    for g in games:
        if graph is None:
            graph = BRGraph(names or g.names)
        graph.add(g)
    if graph is None:
        raise ValueError("empty game stream")
    return graph
