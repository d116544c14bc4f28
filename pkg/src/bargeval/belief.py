"""Exact posterior over the opponent's hidden valuation.

Conditioning on an infostate s and an assumed opponent policy: the prior is
uniform over database valuations jointly consistent with (pool, own
valuation); the likelihood of each candidate multiplies the opponent
policy's probability of every opponent action observed in s's offer
history. Chance events are common to all candidates and cancel. Likelihoods
accumulate in log space (round caps up to 30 multiply many small terms).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .game import History, InfoState, InstanceDB, Instance, Vec3, legal_actions
from .policies import PolicyProvider
from .rngtools import sample_index


class BeliefCollapseError(Exception):
    """Observed actions have (near-)zero likelihood under every candidate."""


@dataclass(frozen=True)
class Belief:
    """Distribution over opponent valuations consistent with an infostate."""

    support: tuple[Vec3, ...]
    probs: tuple[float, ...]
    infostate_key: str
    opponent_policy: str
    smoothed: bool = False

    def __post_init__(self):
        if abs(sum(self.probs) - 1.0) > 1e-9 or any(p < 0 for p in self.probs):
            raise ValueError("belief probabilities must be a distribution")

    def to_json(self) -> str:
        return json.dumps(
            [{"valuation": list(v), "prob": p} for v, p in zip(self.support, self.probs)]
        )


def _log_likelihood(
    s: InfoState, opp_valuation: Vec3, opp_policy: PolicyProvider
) -> float:
    """Log-probability of the observed opponent offers under one candidate."""
    opp_role = 3 - s.player_role
    total = 0.0
    for k, offer in enumerate(s.offers):
        proposer = 1 if k % 2 == 0 else 2  # offer index k is round k+1
        if proposer != opp_role:
            continue
        opp_state = InfoState(
            player_role=opp_role,
            pool=s.pool,
            own_valuation=opp_valuation,
            offers=s.offers[:k],
            params=s.params,
        )
        acts = legal_actions(opp_state)
        p = float(opp_policy.probs(opp_state)[acts.index(offer)])
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def _smoothed(opp_policy: PolicyProvider, weight: float) -> PolicyProvider:
    class _Smoothed(PolicyProvider):
        name = f"{opp_policy.name}+u{weight:g}"

        def probs(self, s: InfoState) -> np.ndarray:
            p = opp_policy.probs(s)
            return (1.0 - weight) * p + weight / len(p)

    return _Smoothed()


def posterior(
    s: InfoState,
    opp_policy: PolicyProvider,
    db: InstanceDB,
    smoothing: float | None = 1e-3,
) -> Belief:
    """Exact Bayes posterior over the opponent's valuation given ``s``.

    On belief collapse (total likelihood below 1e-12, i.e. the opponent
    played off-policy everywhere), the opponent model is mixed with uniform
    at ``smoothing`` weight and the posterior recomputed; pass
    smoothing=None to raise BeliefCollapseError instead.
    """
    support = db.opponent_valuations(s.pool, s.player_role, s.own_valuation)
    if not support:
        raise BeliefCollapseError(
            f"no database valuation consistent with infostate {s.key()}"
        )
    logs = np.array([_log_likelihood(s, w, opp_policy) for w in support])
    if np.all(np.isneginf(logs)):
        total = 0.0
    else:
        top = float(np.max(logs))
        total = math.exp(top) * float(np.sum(np.exp(logs - top)))
    if total < 1e-12:
        if smoothing is None:
            raise BeliefCollapseError(
                f"zero likelihood for all {len(support)} candidates at {s.key()} "
                f"under policy {opp_policy.name}"
            )
        smooth = posterior(s, _smoothed(opp_policy, smoothing), db, smoothing=None)
        return Belief(
            support=smooth.support,
            probs=smooth.probs,
            infostate_key=s.key(),
            opponent_policy=opp_policy.name,
            smoothed=True,
        )
    top = float(np.max(logs))
    weights = np.exp(logs - top)
    weights /= weights.sum()
    return Belief(
        support=tuple(support),
        probs=tuple(float(x) for x in weights),
        infostate_key=s.key(),
        opponent_policy=opp_policy.name,
    )


def sample_world_state(
    s: InfoState, belief: Belief, rng: np.random.Generator
) -> History:
    """A full History consistent with ``s``, hidden valuation drawn from
    ``belief``; all public components match ``s`` exactly."""
    idx = sample_index(rng, belief.probs)
    opp_val = belief.support[idx]
    if s.player_role == 1:
        inst = Instance(s.pool, s.own_valuation, opp_val)
    else:
        inst = Instance(s.pool, opp_val, s.own_valuation)
    return History(instance=inst, params=s.params, offers=s.offers)
