"""Run-time search over infostates: Gumbel IS-MCTS with sequential halving,
a vanilla AlphaZero-style IS-MCTS, and the tabular self-play training loop.

Each search call samples determinized world states from a posterior belief
at the root, descends a tree keyed by infostates (every node is a decision
node for its acting player), and backs up both players' returns in one
pass. Chance (round termination) is folded into the engine's apply_action,
drawn from the search's rng stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .belief import Belief, posterior, sample_world_state
from .game import (
    Action,
    GameParams,
    History,
    InfoState,
    InstanceDB,
    apply_action,
    initial_history,
    legal_actions,
    returns,
)
from .policies import PolicyProvider, TabularPolicy
from .rngtools import gumbel, log_clamped, sample_index

ValueFn = Callable[[InfoState], tuple[float, float]]
PolicyFn = Callable[[InfoState], np.ndarray]


class SearchError(Exception):
    """Provider failure during search; carries the descent prefix so the
    offending query can be reproduced."""

    def __init__(self, message: str, trajectory: list[str]):
        self.trajectory = trajectory
        super().__init__(f"{message} (descent prefix: {' -> '.join(trajectory) or '<root>'})")


@dataclass(frozen=True)
class SearchConfig:
    num_sim: int = 200
    top_k: int = 16
    c1: float = 50.0
    c2: float = 0.1
    c_puct: float = 20.0
    epsilon_mix: float = 0.25
    dirichlet_alpha: float | str = "1/|A|"
    mode: str = "gumbel"

    def __post_init__(self):
        if self.mode not in ("gumbel", "vanilla"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.mode == "gumbel":
            if not self.num_sim >= self.top_k >= 2:
                raise ValueError("gumbel mode requires num_sim >= top_k >= 2")
            if self.top_k & (self.top_k - 1):
                raise ValueError("top_k must be a power of two")
        if self.num_sim < 1:
            raise ValueError("num_sim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "num_sim": self.num_sim, "top_k": self.top_k, "c1": self.c1,
            "c2": self.c2, "c_puct": self.c_puct, "epsilon_mix": self.epsilon_mix,
            "dirichlet_alpha": self.dirichlet_alpha, "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        return cls(**d)


class Node:
    """Per-infostate statistics: visit counts C, return sums R (for the
    acting player), cached priors/logits, and the leaf value pair."""

    __slots__ = ("actions", "prior", "logits", "C", "R", "value", "actor")

    def __init__(self, actions: list[Action], prior: np.ndarray,
                 value: tuple[float, float], actor: int):
        self.actions = actions
        self.prior = prior
        self.logits = log_clamped(prior)
        self.C = np.zeros(len(actions), dtype=np.int64)
        self.R = np.zeros(len(actions), dtype=float)
        self.value = value
        self.actor = actor

    @property
    def total_visits(self) -> int:
        return int(self.C.sum())


def q_hat(node: Node) -> np.ndarray:
    """Completed action-value estimates for every arm of ``node``.

    Visited arms use the empirical mean R/C. Unvisited arms mix the node's
    leaf value with the prior-weighted mean of visited arms' values,
    shrunk by 1/(1 + total visits).
    """
    total = node.total_visits
    visited = node.C > 0
    q = np.zeros(len(node.actions))
    q[visited] = node.R[visited] / node.C[visited]
    if not np.all(visited):
        v_node = node.value[node.actor - 1]
        if total == 0:
            fill = v_node
        else:
            p_vis = float(node.prior[visited].sum())
            mix = float(np.sum(q[visited] * node.prior[visited]))
            fill = (v_node + (total / p_vis) * mix) / (1.0 + total)
        q[~visited] = fill
    return q


def value_transform(node: Node, q: np.ndarray, cfg: SearchConfig) -> np.ndarray:
    """Monotone scaling of q-values: c2 * (c1 + max visit count) * q."""
    return cfg.c2 * (cfg.c1 + float(node.C.max())) * q


def gumbel_scores(node: Node, g: np.ndarray, cfg: SearchConfig) -> np.ndarray:
    """Root ranking score: g(a) + logit p(s,a) + transformed q_hat."""
    return g + node.logits + value_transform(node, q_hat(node), cfg)


def improved_policy(node: Node, cfg: SearchConfig) -> np.ndarray:
    """SoftMax(logit p + transformed q_hat): the one-step improved policy."""
    z = node.logits + value_transform(node, q_hat(node), cfg)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def non_root_select(node: Node, cfg: SearchConfig) -> int:
    """Pick the action whose incremented visit profile tracks the improved
    policy most closely.

    Minimizing sum_b (Imp(p)_b - (C_b + 1[a=b]) / (1 + sum C))^2 over a is
    algebraically the argmax of Imp(p)_a - C_a / (1 + sum C); ties go to
    the lowest canonical action index.
    """
    imp = improved_policy(node, cfg)
    gap = imp - node.C / (1.0 + node.total_visits)
    return int(np.argmax(gap))


# ---------------------------------------------------------------------------
# Sequential halving at the root


def halving_quota(num_sim: int, top_k: int, epoch: int) -> int:
    """Per-action visit quota for the given 1-based halving epoch."""
    width = top_k / (2 ** (epoch - 1))
    return int(num_sim // (width * math.log2(top_k)))


def halving_schedule(num_sim: int, top_k: int) -> list[tuple[int, int]]:
    """Nominal (surviving actions, per-action quota) per epoch, assuming at
    least top_k legal actions."""
    epochs = int(math.log2(top_k))
    return [
        (top_k // (2 ** (e - 1)), halving_quota(num_sim, top_k, e))
        for e in range(1, epochs + 1)
    ]


@dataclass
class HalvingState:
    """Mutable state of the root's sequential-halving pass."""

    num_sim: int
    top_k: int
    epoch: int = 0
    surviving: list[int] = field(default_factory=list)
    epoch_visits: dict[int, int] = field(default_factory=dict)

    @property
    def final_epoch(self) -> int:
        return int(math.log2(self.top_k))


def _top_by_score(indices: list[int], scores: np.ndarray, keep: int) -> list[int]:
    # ties at the boundary: lower canonical action index survives
    ranked = sorted(indices, key=lambda i: (-scores[i], i))
    return sorted(ranked[:keep])


def sequential_halving_step(
    hs: HalvingState, node: Node, g: np.ndarray, cfg: SearchConfig
) -> int:
    """One root action selection.

    Epoch 0 initializes the surviving set to the top-k actions by
    g + logit p. Each later epoch gives every survivor a visit quota; once
    all survivors meet it, the set is halved by full Gumbel score. Budget
    left over after the schedule is spent round-robin on the survivors.
    """
    if hs.epoch == 0:
        base = g + node.logits
        hs.surviving = _top_by_score(list(range(len(node.actions))), base, cfg.top_k)
        hs.epoch = 1
        hs.epoch_visits = {}
    while hs.epoch <= hs.final_epoch:
        quota = halving_quota(hs.num_sim, hs.top_k, hs.epoch)
        under = [i for i in hs.surviving if hs.epoch_visits.get(i, 0) < quota]
        if under:
            hs.epoch_visits[under[0]] = hs.epoch_visits.get(under[0], 0) + 1
            return under[0]
        keep = max(1, hs.top_k // (2**hs.epoch))
        if keep < len(hs.surviving):
            hs.surviving = _top_by_score(hs.surviving, gumbel_scores(node, g, cfg), keep)
        hs.epoch += 1
        hs.epoch_visits = {}
    # schedule complete: leftover budget round-robin on the surviving set
    pick = min(hs.surviving, key=lambda i: (hs.epoch_visits.get(i, 0), i))
    hs.epoch_visits[pick] = hs.epoch_visits.get(pick, 0) + 1
    return pick


# ---------------------------------------------------------------------------
# The search proper


@dataclass
class SearchResult:
    action: Action
    root_visit_freq: np.ndarray
    root_actions: list[Action]
    tree: dict[str, Node]
    n_descents: int


def _call_provider(fn, s: InfoState, what: str, trajectory: list[str]):
    try:
        return fn(s)
    except SearchError:
        raise
    except Exception as e:
        raise SearchError(f"{what} provider failed at {s.key()}: {e}", list(trajectory)) from e


def _expand(tree, s, v_fn, p_fn, trajectory) -> Node:
    prior = np.asarray(_call_provider(p_fn, s, "policy", trajectory), dtype=float)
    value = _call_provider(v_fn, s, "value", trajectory)
    node = Node(legal_actions(s), prior, (float(value[0]), float(value[1])), s.player_role)
    tree[s.key()] = node
    return node


def run_search(
    s: InfoState,
    v,
    p,
    cfg: SearchConfig,
    belief: Belief,
    rng: np.random.Generator,
) -> SearchResult:
    """Shared driver for both search modes. Runs exactly cfg.num_sim
    descents and returns the recommended action plus root visit statistics."""
    v_fn: ValueFn = v.value if isinstance(v, PolicyProvider) else v
    p_fn: PolicyFn = p.probs if isinstance(p, PolicyProvider) else p
    tree: dict[str, Node] = {}
    root_key = s.key()
    # the root is expanded up front; its stats start at zero and the first
    # simulation already runs root action selection
    root = _expand(tree, s, v_fn, p_fn, [])
    n_root = len(root.actions)

    if cfg.mode == "gumbel":
        g = gumbel(rng, n_root)
        hs = HalvingState(num_sim=cfg.num_sim, top_k=cfg.top_k)
        noise = None
    else:
        g = None
        hs = None
        alpha = cfg.dirichlet_alpha
        if isinstance(alpha, str):
            alpha = 1.0 / n_root
        noise = rng.dirichlet(np.full(n_root, float(alpha)))
        root_prior = (1.0 - cfg.epsilon_mix) * root.prior + cfg.epsilon_mix * noise

    def puct_pick(node: Node, prior: np.ndarray) -> int:
        # original AlphaZero PUCT: exploration decays with the arm's own
        # visits and grows with the node total, so starved arms recover
        unvisited = np.flatnonzero(node.C == 0)
        if unvisited.size:
            return int(unvisited[0])
        q = node.R / node.C
        bonus = prior * np.sqrt(node.total_visits) / (1.0 + node.C)
        return int(np.argmax(q + cfg.c_puct * bonus))

    for _ in range(cfg.num_sim):
        h = sample_world_state(s, belief, rng)
        trajectory: list[tuple[Node, int]] = []
        keys: list[str] = []
        while True:
            if h.terminal:
                r = returns(h).payoffs
                break
            si = h.infostate()
            node = tree.get(si.key())
            if node is None:
                node = _expand(tree, si, v_fn, p_fn, keys)
                r = node.value
                break
            if si.key() == root_key:
                if cfg.mode == "gumbel":
                    idx = sequential_halving_step(hs, node, g, cfg)
                else:
                    idx = puct_pick(node, root_prior)
            else:
                if cfg.mode == "gumbel":
                    idx = non_root_select(node, cfg)
                else:
                    idx = puct_pick(node, node.prior)
            trajectory.append((node, idx))
            keys.append(si.key())
            h = apply_action(h, node.actions[idx], rng)
        for node, idx in trajectory:
            node.R[idx] += r[node.actor - 1]
            node.C[idx] += 1

    if cfg.mode == "gumbel":
        chosen = hs.surviving[0] if len(hs.surviving) == 1 else _top_by_score(
            hs.surviving, gumbel_scores(root, g, cfg), 1)[0]
    else:
        chosen = int(np.argmax(root.C))
    total = max(root.total_visits, 1)
    return SearchResult(
        action=root.actions[chosen],
        root_visit_freq=root.C / total,
        root_actions=root.actions,
        tree=tree,
        n_descents=cfg.num_sim,
    )


def gumbel_search(s: InfoState, v, p, cfg: SearchConfig, belief: Belief,
                  rng: np.random.Generator) -> Action:
    """Gumbel IS-MCTS: returns the action surviving sequential halving."""
    if cfg.mode != "gumbel":
        raise ValueError("gumbel_search requires cfg.mode == 'gumbel'")
    return run_search(s, v, p, cfg, belief, rng).action


def va_search(s: InfoState, v, p, cfg: SearchConfig, belief: Belief,
              rng: np.random.Generator) -> tuple[Action, np.ndarray]:
    """AlphaZero-style IS-MCTS: PUCT with root Dirichlet noise; returns the
    argmax-visit action and the normalized root visit distribution."""
    if cfg.mode != "vanilla":
        raise ValueError("va_search requires cfg.mode == 'vanilla'")
    res = run_search(s, v, p, cfg, belief, rng)
    return res.action, res.root_visit_freq


class SearchPolicy(PolicyProvider):
    """Meta-strategy operator: wraps a base provider with run-time search.

    The base provider supplies the policy prior, the opponent model for the
    exact root belief, and (when it supports value queries) the leaf value
    function; otherwise leaves evaluate to (0, 0).
    """

    def __init__(self, inner: PolicyProvider, cfg: SearchConfig, db: InstanceDB,
                 value_fn: ValueFn | None = None, name: str | None = None):
        self.inner = inner
        self.cfg = cfg
        self.db = db
        self.name = name or f"search({inner.name})"
        if value_fn is not None:
            self._value = value_fn
        elif type(inner).value is not PolicyProvider.value:
            self._value = inner.value
        else:
            # base provider has no value head; leaves evaluate neutrally
            self._value = lambda s: (0.0, 0.0)
        self._rng: np.random.Generator | None = None

    def begin_episode(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self.inner.begin_episode(rng)

    def probs(self, s: InfoState) -> np.ndarray:
        if self._rng is None:
            raise RuntimeError("SearchPolicy.begin_episode must be called first")
        bel = posterior(s, self.inner, self.db)
        res = run_search(s, self._value, self.inner, self.cfg, bel, self._rng)
        out = np.zeros(len(res.root_actions))
        out[res.root_actions.index(res.action)] = 1.0
        return out

    def value(self, s: InfoState) -> tuple[float, float]:
        return self._value(s)

    def close(self) -> None:
        self.inner.close()


# ---------------------------------------------------------------------------
# Self-play training (tabular learner at desk scale)


class TabularLearner:
    """Running-average tables for values (per-infostate payoff pair) and
    policies (per-infostate root visit distribution)."""

    def __init__(self):
        self._vsum: dict[str, np.ndarray] = {}
        self._vn: dict[str, int] = {}
        self._psum: dict[str, np.ndarray] = {}
        self._pn: dict[str, int] = {}

    def update(self, d_v: list[tuple[str, tuple[float, float]]],
               d_p: list[tuple[str, np.ndarray]]) -> None:
        for key, r in d_v:
            if key in self._vsum:
                self._vsum[key] += np.asarray(r)
                self._vn[key] += 1
            else:
                self._vsum[key] = np.asarray(r, dtype=float).copy()
                self._vn[key] = 1
        for key, dist in d_p:
            if key in self._psum:
                self._psum[key] += dist
                self._pn[key] += 1
            else:
                self._psum[key] = np.asarray(dist, dtype=float).copy()
                self._pn[key] = 1

    def value_table(self) -> dict[str, np.ndarray]:
        return {k: self._vsum[k] / self._vn[k] for k in self._vsum}

    def policy_table(self) -> dict[str, np.ndarray]:
        return {k: self._psum[k] / self._pn[k] for k in self._psum}


class TabularValueFn:
    """Value provider over a key -> payoff-pair table; (0, 0) for unseen."""

    def __init__(self, table: dict[str, np.ndarray] | None = None):
        self.table = table or {}

    def __call__(self, s: InfoState) -> tuple[float, float]:
        got = self.table.get(s.key())
        return (float(got[0]), float(got[1])) if got is not None else (0.0, 0.0)

    def save(self, path) -> None:
        import json
        from pathlib import Path

        doc = {k: [float(x) for x in v] for k, v in sorted(self.table.items())}
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TabularValueFn":
        import json
        from pathlib import Path

        doc = json.loads(Path(path).read_text())
        return cls({k: np.asarray(v, dtype=float) for k, v in doc.items()})


def self_play_train(
    params: GameParams,
    db: InstanceDB,
    learner: TabularLearner,
    cfg: SearchConfig,
    epochs: int,
    rng: np.random.Generator,
    delayed_period: int = 1000,
    checkpoint_every: int | None = None,
    checkpoint_hook: Callable[[int, TabularValueFn, TabularPolicy], None] | None = None,
) -> tuple[TabularValueFn, TabularPolicy]:
    """Self-play episodes driven by search against delayed targets.

    Each episode plays one full game where every decision runs the
    configured search using the delayed providers (v', p'), collects the
    root visit distribution as the policy target and the realized payoff
    pair as the value target, then updates the learner. Delayed providers
    refresh every ``delayed_period`` updates (one update per episode).
    Returns the trained value/policy providers.
    """

    def snapshot() -> tuple[TabularValueFn, TabularPolicy]:
        return (
            TabularValueFn(learner.value_table()),
            TabularPolicy(learner.policy_table(), params=params, name="selfplay"),
        )

    v_delayed, p_delayed = snapshot()
    for episode in range(epochs):
        h = initial_history(db.sample(rng), params)
        d_p: list[tuple[str, np.ndarray]] = []
        visited: list[str] = []
        while not h.terminal:
            s = h.infostate()
            bel = posterior(s, p_delayed, db)
            res = run_search(s, v_delayed, p_delayed, cfg, bel, rng)
            d_p.append((s.key(), res.root_visit_freq))
            visited.append(s.key())
            h = apply_action(h, res.action, rng)
        r = returns(h).payoffs
        learner.update([(key, r) for key in visited], d_p)
        if (episode + 1) % delayed_period == 0:
            v_delayed, p_delayed = snapshot()
        if checkpoint_every and checkpoint_hook and (episode + 1) % checkpoint_every == 0:
            checkpoint_hook(episode + 1, *snapshot())
    return snapshot()
