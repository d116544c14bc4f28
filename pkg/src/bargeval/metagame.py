"""Empirical meta-game machinery: Monte Carlo payoff tables over
(strategy, seed) policy pairs, player-permutation symmetrization, and the
seed-resampling bootstrap over sampled meta-games.

The payoff table is the only place simulation happens; every bootstrap
replicate builds its meta-game in closed form from memoized entries
(mixture payoffs are linear in component payoffs), so reruns with the same
master seed are bit-identical and no game is ever re-simulated.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .game import GameParams, InstanceDB, apply_action, initial_history, legal_actions, returns
from .policies import PolicyProvider
from .rngtools import child_rng, sample_index
from .solver import (
    BRGraph,
    SolverError,
    SymmetricGame,
    max_entropy_ne,
    ne_nbs,
    ne_regret_score,
    uniform_score,
)

# rng-stream derivation tags
_TAG_ENTRY = 1
_TAG_REPLICATE = 2

# global count of simulated games; lets tests assert that analysis performs
# zero simulation after table construction
SIMULATION_CALLS = 0


def simulation_call_count() -> int:
    return SIMULATION_CALLS


@dataclass
class Transcript:
    instance: dict
    offers: list[list[int]]
    agreed: bool
    chance_terminated: bool
    payoffs: tuple[float, float]


def play_game(
    params: GameParams,
    db: InstanceDB,
    pol1: PolicyProvider,
    pol2: PolicyProvider,
    rng: np.random.Generator,
    record: bool = False,
) -> tuple[float, float] | Transcript:
    """Simulate one complete game with the instance drawn uniformly."""
    global SIMULATION_CALLS
    SIMULATION_CALLS += 1
    inst = db.sample(rng)
    pol1.begin_episode(rng)
    pol2.begin_episode(rng)
    h = initial_history(inst, params)
    while not h.terminal:
        s = h.infostate()
        probs = (pol1 if h.actor == 1 else pol2).probs(s)
        a = legal_actions(s)[sample_index(rng, probs)]
        h = apply_action(h, a, rng)
    out = returns(h)
    if record:
        return Transcript(
            instance=inst.to_dict(),
            offers=[list(o) for o in h.offers],
            agreed=out.agreed,
            chance_terminated=h.chance_terminated,
            payoffs=out.payoffs,
        )
    return out.payoffs


# ---------------------------------------------------------------------------
# Payoff table

EntryKey = tuple[str, str, str, str]  # (strategy1, seed1, strategy2, seed2)


@dataclass
class PayoffEntry:
    mean: tuple[float, float]
    var: tuple[float, float]
    n: int


@dataclass
class PayoffTable:
    """Memoized expected payoffs for every ordered (strategy, seed) pair."""

    strategies: list[str]
    seeds: dict[str, list[str]]
    entries: dict[EntryKey, PayoffEntry]
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self._matrix_cache: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}

    def entry_keys(self) -> list[EntryKey]:
        return [
            (m1, s1, m2, s2)
            for m1 in self.strategies
            for s1 in self.seeds[m1]
            for m2 in self.strategies
            for s2 in self.seeds[m2]
        ]

    def missing(self) -> list[EntryKey]:
        return [k for k in self.entry_keys() if k not in self.entries]

    def require_complete(self) -> None:
        miss = self.missing()
        if miss:
            raise IncompleteTableError(
                f"payoff table is missing {len(miss)} entries, e.g. {miss[:3]}"
            )

    def seed_payoffs(self, m1: str, m2: str) -> tuple[np.ndarray, np.ndarray]:
        """(u1, u2) arrays with shape (len(seeds[m1]), len(seeds[m2])) for m1
        as player 1 versus m2 as player 2."""
        got = self._matrix_cache.get((m1, m2))
        if got is not None:
            return got
        s1s, s2s = self.seeds[m1], self.seeds[m2]
        u1 = np.empty((len(s1s), len(s2s)))
        u2 = np.empty_like(u1)
        for i, s1 in enumerate(s1s):
            for j, s2 in enumerate(s2s):
                ent = self.entries[(m1, s1, m2, s2)]
                u1[i, j], u2[i, j] = ent.mean
        self._matrix_cache[(m1, m2)] = (u1, u2)
        return u1, u2

    def save(self, path: str | Path) -> None:
        rows = [
            [m1, s1, m2, s2, ent.mean[0], ent.mean[1], ent.var[0], ent.var[1], ent.n]
            for (m1, s1, m2, s2), ent in sorted(self.entries.items())
        ]
        doc = {
            "header": self.header,
            "strategies": self.strategies,
            "seeds": self.seeds,
            "columns": ["strategy1", "seed1", "strategy2", "seed2",
                        "mean1", "mean2", "var1", "var2", "n"],
            "rows": rows,
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PayoffTable":
        doc = json.loads(Path(path).read_text())
        entries = {}
        for m1, s1, m2, s2, u1, u2, v1, v2, n in doc["rows"]:
            entries[(m1, s1, m2, s2)] = PayoffEntry((u1, u2), (v1, v2), n)
        return cls(
            strategies=doc["strategies"],
            seeds={k: list(v) for k, v in doc["seeds"].items()},
            entries=entries,
            header=doc.get("header", {}),
        )


class IncompleteTableError(Exception):
    pass


class EntryFailure(Exception):
    def __init__(self, key: EntryKey, cause: Exception):
        self.key = key
        self.cause = cause
        super().__init__(f"entry {key} failed: {cause}")


def simulate_entry(
    pol1: PolicyProvider,
    pol2: PolicyProvider,
    db: InstanceDB,
    params: GameParams,
    n_sims: int,
    rng: np.random.Generator,
) -> PayoffEntry:
    """Mean and variance of both players' payoffs over n_sims games."""
    acc = np.zeros(2)
    acc2 = np.zeros(2)
    for _ in range(n_sims):
        u = play_game(params, db, pol1, pol2, rng)
        acc += u
        acc2 += np.square(u)
    mean = acc / n_sims
    var = np.maximum(acc2 / n_sims - mean**2, 0.0)
    return PayoffEntry(mean=(float(mean[0]), float(mean[1])),
                       var=(float(var[0]), float(var[1])), n=n_sims)


RosterFactory = Callable[[], dict[str, dict[str, PolicyProvider]]]


def _entry_worker(args) -> tuple[EntryKey, PayoffEntry | None, str]:
    roster_factory, db, params, n_sims, master_seed, idx, key = args
    roster = roster_factory()
    m1, s1, m2, s2 = key
    rng = child_rng(master_seed, _TAG_ENTRY, idx)
    try:
        ent = simulate_entry(roster[m1][s1], roster[m2][s2], db, params, n_sims, rng)
        return key, ent, ""
    except Exception as e:  # recorded as missing; analysis will refuse
        return key, None, f"{type(e).__name__}: {e}"
    finally:
        for seeds in roster.values():
            for pol in seeds.values():
                pol.close()


def estimate_payoff_table(
    roster_factory: RosterFactory,
    db: InstanceDB,
    params: GameParams,
    n_sims_per_entry: int,
    master_seed: int,
    workers: int = 1,
    checkpoint_path: str | Path | None = None,
    header: dict | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> PayoffTable:
    """Estimate every ordered (strategy, seed) pair's expected payoffs.

    Each entry runs on its own rng stream derived from (master_seed, entry
    index), so the table is identical for any worker count or interleaving.
    With a checkpoint path, finished entries are appended as JSON lines and
    skipped on resume.
    """
    if n_sims_per_entry < 1:
        raise ValueError("n_sims_per_entry must be >= 1")
    roster = roster_factory()
    strategies = sorted(roster)
    seeds = {m: sorted(roster[m]) for m in strategies}
    for m in strategies:
        for pol in roster[m].values():
            pol.close()
    table = PayoffTable(strategies=strategies, seeds=seeds, entries={},
                        header=header or {})
    table.header.setdefault("n_sims_per_entry", n_sims_per_entry)
    table.header.setdefault("master_seed", master_seed)

    done: dict[EntryKey, PayoffEntry] = {}
    ckpt = Path(checkpoint_path) if checkpoint_path else None
    if ckpt and ckpt.exists():
        for line in ckpt.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            done[tuple(rec["key"])] = PayoffEntry(
                tuple(rec["mean"]), tuple(rec["var"]), rec["n"])

    keys = table.entry_keys()
    jobs = [
        (roster_factory, db, params, n_sims_per_entry, master_seed, idx, key)
        for idx, key in enumerate(keys)
        if key not in done
    ]
    failures: list[tuple[EntryKey, str]] = []

    def record(key: EntryKey, ent: PayoffEntry | None, err: str) -> None:
        if ent is None:
            failures.append((key, err))
            return
        done[key] = ent
        if ckpt:
            with ckpt.open("a") as fh:
                fh.write(json.dumps({"key": list(key), "mean": list(ent.mean),
                                     "var": list(ent.var), "n": ent.n}) + "\n")
        if progress:
            progress(len(done), len(keys))

    if workers > 1 and jobs:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, ent, err in pool.map(_entry_worker, jobs):
                record(key, ent, err)
    else:
        for job in jobs:
            key, ent, err = _entry_worker(job)
            record(key, ent, err)

    if failures:
        raise EntryFailure(failures[0][0], RuntimeError(
            f"{len(failures)} entries failed; first: {failures[0][1]}"))
    table.entries = done
    return table


# ---------------------------------------------------------------------------
# Seed resampling and meta-game construction


@dataclass(frozen=True)
class ResamplePlan:
    """Per strategy, a uniform-with-replacement multiset of its seeds."""

    multisets: dict[str, tuple[str, ...]]
    replicate_index: int = 0


def resample_seeds(seed_sets: dict[str, list[str]], rng: np.random.Generator,
                   replicate_index: int = 0) -> ResamplePlan:
    plan = {}
    for m, seeds in seed_sets.items():
        if not seeds:
            raise ValueError(f"strategy {m!r} has no seeds")
        draws = rng.integers(len(seeds), size=len(seeds))
        plan[m] = tuple(seeds[int(i)] for i in draws)
    return ResamplePlan(multisets=plan, replicate_index=replicate_index)


@dataclass
class SymmetricEmpiricalGame(SymmetricGame):
    """Meta-game induced by one resample plan; u is symmetrized over both
    player assignments by construction."""

    plan: ResamplePlan | None = None


def _plan_weights(table: PayoffTable, plan: ResamplePlan, m: str) -> np.ndarray:
    seeds = table.seeds[m]
    idx = {s: i for i, s in enumerate(seeds)}
    w = np.zeros(len(seeds))
    for s in plan.multisets[m]:
        w[idx[s]] += 1.0
    return w / w.sum()


def build_meta_game(table: PayoffTable, plan: ResamplePlan) -> SymmetricEmpiricalGame:
    """Closed-form meta-game from memoized payoffs: entry (m, m') averages
    the seed-mixture payoff over both player assignments."""
    table.require_complete()
    names = table.strategies
    n = len(names)
    weights = {m: _plan_weights(table, plan, m) for m in names}
    u = np.zeros((n, n))
    for i, m in enumerate(names):
        for j, mp in enumerate(names):
            u1_ij, _ = table.seed_payoffs(m, mp)      # m as P1 vs mp as P2
            _, u2_ji = table.seed_payoffs(mp, m)      # mp as P1 vs m as P2
            as_p1 = weights[m] @ u1_ij @ weights[mp]
            as_p2 = weights[mp] @ u2_ji @ weights[m]
            u[i, j] = 0.5 * (as_p1 + as_p2)
    return SymmetricEmpiricalGame(names=list(names), u=u, plan=plan)


# ---------------------------------------------------------------------------
# Bootstrap over sampled meta-games


STATISTICS = ("ne_regret", "uniform_score", "ne_nbs")


@dataclass
class BootstrapReport:
    statistics: dict[str, dict[str, dict[str, float]]]
    n_replicates: int
    failures: int
    br_graph: BRGraph | None = None
    histograms: dict[str, dict[str, tuple[list[float], list[int]]]] = field(default_factory=dict)
    master_seed: int = 0
    eps_ent: float = 0.05

    def to_dict(self) -> dict:
        return {
            "statistics": self.statistics,
            "n_replicates": self.n_replicates,
            "failures": self.failures,
            "master_seed": self.master_seed,
            "eps_ent": self.eps_ent,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _bootstrap_chunk(args) -> tuple:
    from array import array

    (table, statistic_set, master_seed, lo, hi, eps_ent) = args
    names = table.strategies
    needs_solve = bool({"ne_regret", "ne_nbs"} & set(statistic_set))
    # array('d') keeps per-replicate values at 8 bytes each so exact
    # percentiles stay affordable at 1e6 replicates
    series = {stat: {m: array("d") for m in names}
              for stat in statistic_set if stat in STATISTICS}
    br = BRGraph(names) if "br_graph" in statistic_set else None
    failures = 0
    for r in range(lo, hi):
        rng = child_rng(master_seed, _TAG_REPLICATE, r)
        plan = resample_seeds(table.seeds, rng, replicate_index=r)
        game = build_meta_game(table, plan)
        if br is not None:
            br.add(game)
        result = None
        if needs_solve:
            try:
                result = max_entropy_ne(game, eps_ent=eps_ent)
            except SolverError:
                failures += 1
                continue
        for i, m in enumerate(names):
            if "ne_regret" in series:
                series["ne_regret"][m].append(ne_regret_score(game, i, result))
            if "uniform_score" in series:
                series["uniform_score"][m].append(uniform_score(game, i))
            if "ne_nbs" in series:
                series["ne_nbs"][m].append(ne_nbs(game, i, result))
    return series, br, failures


def bootstrap_run(
    table: PayoffTable,
    n_replicates: int,
    statistic_set: Iterable[str],
    master_seed: int,
    eps_ent: float = 0.05,
    workers: int = 1,
    histogram_bins: int = 0,
) -> BootstrapReport:
    """Sample ``n_replicates`` empirical meta-games by seed resampling and
    accumulate the requested statistics' bootstrap distributions.

    Replicate r derives its rng stream from (master_seed, r): reports are
    bit-identical across reruns and worker counts. No simulation happens
    here; everything reads the memoized table.
    """
    table.require_complete()
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    statistic_set = list(statistic_set)
    unknown = set(statistic_set) - set(STATISTICS) - {"br_graph"}
    if unknown:
        raise ValueError(f"unknown statistics {sorted(unknown)}")
    names = table.strategies

    bounds = np.linspace(0, n_replicates, (workers if workers > 1 else 1) + 1).astype(int)
    chunks = [
        (table, statistic_set, master_seed, int(lo), int(hi), eps_ent)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_bootstrap_chunk, chunks))
    else:
        parts = [_bootstrap_chunk(c) for c in chunks]

    # canonical merge in replicate order
    from array import array

    failures = sum(p[2] for p in parts)
    br_total = None
    series: dict[str, dict[str, array]] = {}
    for part_series, part_br, _ in parts:
        for stat, per_strat in part_series.items():
            dst = series.setdefault(stat, {m: array("d") for m in names})
            for m in names:
                dst[m].extend(per_strat[m])
        if part_br is not None:
            if br_total is None:
                br_total = BRGraph(names)
            br_total.weights += part_br.weights
            br_total.n_games += part_br.n_games

    stats_out: dict[str, dict[str, dict[str, float]]] = {}
    histograms: dict[str, dict[str, tuple[list[float], list[int]]]] = {}
    for stat, per_strat in series.items():
        stats_out[stat] = {}
        for m in names:
            vals = np.array(per_strat[m])
            lo, hi = (np.percentile(vals, [2.5, 97.5]) if vals.size else (0.0, 0.0))
            stats_out[stat][m] = {
                "mean": float(vals.mean()) if vals.size else float("nan"),
                "ci_lo": float(lo),
                "ci_hi": float(hi),
                "halfwidth": float((hi - lo) / 2.0),
                "n": int(vals.size),
            }
            if histogram_bins and vals.size:
                counts, edges = np.histogram(vals, bins=histogram_bins)
                histograms.setdefault(stat, {})[m] = (
                    [float(e) for e in edges], [int(c) for c in counts])
    return BootstrapReport(
        statistics=stats_out,
        n_replicates=n_replicates,
        failures=failures,
        br_graph=br_total,
        histograms=histograms,
        master_seed=master_seed,
        eps_ent=eps_ent,
    )
