"""Exact game-tree enumeration: expected payoffs, infostate values, and
best responses for desk-scale instances.

Everything here walks the full tree with explicit chance branching, so it is
exact (no simulation) but only tractable for toy round caps and pools. Used
for self-play training curves and as an independent reference for the
sampling-based machinery.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .belief import posterior
from .game import (
    GameParams,
    History,
    InfoState,
    Instance,
    InstanceDB,
    initial_history,
    legal_actions,
    returns,
    successors,
)
from .policies import PolicyProvider


def history_value(
    h: History,
    pol1: PolicyProvider,
    pol2: PolicyProvider,
    memo: dict | None = None,
) -> tuple[float, float]:
    """Exact expected payoffs from ``h`` onward under the given policies."""
    if memo is None:
        memo = {}
    got = memo.get(h)
    if got is not None:
        return got
    if h.terminal:
        out = returns(h).payoffs
        memo[h] = out
        return out
    s = h.infostate()
    probs = (pol1 if h.actor == 1 else pol2).probs(s)
    u1 = u2 = 0.0
    for a, pa in zip(legal_actions(s), probs):
        if pa <= 0.0:
            continue
        for h2, pc in successors(h, a):
            v1, v2 = history_value(h2, pol1, pol2, memo)
            u1 += pa * pc * v1
            u2 += pa * pc * v2
    memo[h] = (u1, u2)
    return (u1, u2)


def exact_policy_payoff(
    pol1: PolicyProvider,
    pol2: PolicyProvider,
    db: InstanceDB,
    params: GameParams,
) -> tuple[float, float]:
    """Expected payoffs with the instance drawn uniformly from ``db``."""
    memo: dict = {}
    u1 = u2 = 0.0
    for inst in db:
        v1, v2 = history_value(initial_history(inst, params), pol1, pol2, memo)
        u1 += v1
        u2 += v2
    n = len(db)
    return u1 / n, u2 / n


def exact_action_values(
    s: InfoState,
    policy: PolicyProvider,
    db: InstanceDB,
) -> np.ndarray:
    """Acting player's exact value of each legal action at ``s``: hidden
    valuation from the Bayes posterior (opponent modeled by ``policy``),
    both players following ``policy`` afterwards."""
    bel = posterior(s, policy, db)
    acts = legal_actions(s)
    out = np.zeros(len(acts))
    memo: dict = {}
    for w_opp, pw in zip(bel.support, bel.probs):
        if s.player_role == 1:
            inst = Instance(s.pool, s.own_valuation, w_opp)
        else:
            inst = Instance(s.pool, w_opp, s.own_valuation)
        h = History(instance=inst, params=s.params, offers=s.offers)
        for i, a in enumerate(acts):
            for h2, pc in successors(h, a):
                v = history_value(h2, policy, policy, memo)
                out[i] += pw * pc * v[s.player_role - 1]
    return out


class ExactValueProvider:
    """Value function from full enumeration: v(s) is the posterior-weighted
    expected payoff pair when both players follow ``policy`` from ``s`` on."""

    def __init__(self, policy: PolicyProvider, db: InstanceDB):
        self.policy = policy
        self.db = db
        self._memo: dict = {}
        self._by_key: dict[str, tuple[float, float]] = {}

    def value(self, s: InfoState) -> tuple[float, float]:
        got = self._by_key.get(s.key())
        if got is not None:
            return got
        bel = posterior(s, self.policy, self.db)
        v1 = v2 = 0.0
        for w_opp, pw in zip(bel.support, bel.probs):
            if s.player_role == 1:
                inst = Instance(s.pool, s.own_valuation, w_opp)
            else:
                inst = Instance(s.pool, w_opp, s.own_valuation)
            h = History(instance=inst, params=s.params, offers=s.offers)
            u1, u2 = history_value(h, self.policy, self.policy, self._memo)
            v1 += pw * u1
            v2 += pw * u2
        self._by_key[s.key()] = (v1, v2)
        return (v1, v2)


def exact_best_response_value(
    opp_policy: PolicyProvider,
    db: InstanceDB,
    params: GameParams,
    br_role: int,
) -> float:
    """Value of the exact best response for ``br_role`` against a fixed
    opponent policy, instances uniform over ``db``.

    Standard imperfect-information best response: reach weights carry
    chance and opponent probabilities only, and maximization happens per
    infostate of the responder (valid under perfect recall).
    """

    def expand(h: History, w: float, groups: dict) -> float:
        # advance to the responder's next decision (or terminal), collecting
        # terminal payoff contributions along the way
        if w <= 0.0:
            return 0.0
        if h.terminal:
            return w * returns(h).payoffs[br_role - 1]
        if h.actor == br_role:
            groups[h.infostate().key()].append((h, w))
            return 0.0
        s = h.infostate()
        probs = opp_policy.probs(s)
        total = 0.0
        for a, pa in zip(legal_actions(s), probs):
            if pa <= 0.0:
                continue
            for h2, pc in successors(h, a):
                total += expand(h2, w * pa * pc, groups)
        return total

    def infostate_value(group: list[tuple[History, float]]) -> float:
        s = group[0][0].infostate()
        best = -math.inf
        for a in legal_actions(s):
            groups: dict = defaultdict(list)
            val = 0.0
            for h, w in group:
                for h2, pc in successors(h, a):
                    val += expand(h2, w * pc, groups)
            for g in groups.values():
                val += infostate_value(g)
            best = max(best, val)
        return best

    top: dict = defaultdict(list)
    total = 0.0
    w0 = 1.0 / len(db)
    for inst in db:
        total += expand(initial_history(inst, params), w0, top)
    for g in top.values():
        total += infostate_value(g)
    return total


def exact_sum_regret(
    policy: PolicyProvider, db: InstanceDB, params: GameParams
) -> float:
    """SumRegret of the symmetric profile where both players use ``policy``,
    with exact best responses from enumeration."""
    u1, u2 = exact_policy_payoff(policy, policy, db, params)
    br1 = exact_best_response_value(policy, db, params, br_role=1)
    br2 = exact_best_response_value(policy, db, params, br_role=2)
    return max(br1 - u1, 0.0) + max(br2 - u2, 0.0)


def restricted_sum_regret(
    policy: PolicyProvider,
    candidates: list[PolicyProvider],
    db: InstanceDB,
    params: GameParams,
) -> float:
    """SumRegret with best responses restricted to an enumerated candidate
    set (exact payoffs; a lower bound on the unrestricted SumRegret)."""
    u1, u2 = exact_policy_payoff(policy, policy, db, params)
    br1 = max(exact_policy_payoff(c, policy, db, params)[0] for c in candidates)
    br2 = max(exact_policy_payoff(policy, c, db, params)[1] for c in candidates)
    return max(br1 - u1, 0.0) + max(br2 - u2, 0.0)
