"""Command-line pipeline: instance generation, payoff simulation, bootstrap
analysis, tabular self-play training, and manual matchups.

One config file defines an experiment; a hash of its simulation-relevant
fields is stamped into every output so stages refuse mismatched inputs.
Exit codes: 0 success, 2 config error, 3 incomplete inputs, 4
provider/protocol failure.
"""

from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import metagame, oracle
from .game import (
    GameParams,
    InstanceConstraints,
    InstanceDB,
    enumerate_instances,
    offers_for_pool,
)
from .metagame import (
    EntryFailure,
    IncompleteTableError,
    PayoffTable,
    bootstrap_run,
    estimate_payoff_table,
    play_game,
)
from .policies import (
    ExternalPolicy,
    PolicyError,
    PolicyProvider,
    ProtocolError,
    TabularPolicy,
    make_heuristic,
)
from .rngtools import child_rng
from .search import SearchConfig, SearchError, SearchPolicy, TabularLearner, self_play_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
EXIT_PROVIDER = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".toml":
        import tomllib

        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"bad TOML in {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad JSON in {path}: {e}") from e


def validate_config(cfg: dict) -> dict:
    if "master_seed" not in cfg:
        raise ConfigError("master_seed is mandatory")
    if not cfg.get("roster"):
        raise ConfigError("roster must be nonempty")
    game = cfg.get("game", {})
    try:
        params = GameParams(
            int(game.get("max_rounds", 10)),
            float(game.get("terminate_prob", 0.0)),
            float(game.get("discount", 1.0)),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad game params: {e}") from e
    for name, spec in cfg["roster"].items():
        kind = spec.get("kind")
        if kind not in ("heuristic", "tabular", "external", "search"):
            raise ConfigError(f"roster entry {name!r}: unknown kind {kind!r}")
        if kind == "tabular":
            for seed in seed_labels(cfg, name):
                p = Path(spec["path"].format(seed=seed))
                if not p.exists():
                    raise ConfigError(f"roster entry {name!r}: missing file {p}")
    cfg["_params"] = params
    return cfg


def seed_labels(cfg: dict, strategy: str) -> list[str]:
    spec = cfg.get("seeds_per_strategy", 1)
    if isinstance(spec, dict):
        got = spec.get(strategy, 1)
    else:
        got = spec
    if isinstance(got, int):
        return [f"s{i}" for i in range(got)]
    return [str(x) for x in got]


def config_hash(cfg: dict) -> str:
    """Hash of the fields that determine the payoff table's content."""
    ident = {
        "game": cfg.get("game", {}),
        "db": cfg.get("db", {}),
        "roster": cfg.get("roster", {}),
        "seeds_per_strategy": cfg.get("seeds_per_strategy", 1),
        "n_sims_per_entry": cfg.get("n_sims_per_entry", 20000),
        "master_seed": cfg.get("master_seed"),
    }
    payload = json.dumps(ident, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def resolve_db(cfg: dict) -> InstanceDB:
    spec = cfg.get("db", {})
    if "path" in spec:
        p = Path(spec["path"])
        if not p.exists():
            raise ConfigError(f"instance DB not found: {p}")
        return InstanceDB.load(p)
    if "instances" in spec:  # inline toy databases for small experiments
        from .game import Instance

        return InstanceDB(
            instances=[
                Instance(tuple(d["pool"]), tuple(d["w1"]), tuple(d["w2"]))
                for d in spec["instances"]
            ],
            note="inline",
        )
    cons = (
        InstanceConstraints.from_dict(spec["constraints"])
        if "constraints" in spec
        else InstanceConstraints()
    )
    return enumerate_instances(cons)


def _build_provider(spec: dict, seed: str, params: GameParams, db: InstanceDB,
                    name: str) -> PolicyProvider:
    kind = spec["kind"]
    if kind == "heuristic":
        pol = make_heuristic(spec["which"])
        pol.name = f"{name}[{seed}]"
        return pol
    if kind == "tabular":
        return TabularPolicy.load(spec["path"].format(seed=seed), name=f"{name}[{seed}]")
    if kind == "external":
        command = [str(c).format(seed=seed) for c in spec["command"]]
        return ExternalPolicy(command, params, timeout=float(spec.get("timeout", 10.0)),
                              name=f"{name}[{seed}]")
    if kind == "search":
        inner = _build_provider(spec["inner"], seed, params, db, f"{name}.inner")
        scfg = SearchConfig.from_dict({**SearchConfig().to_dict(), **spec.get("search", {})})
        return SearchPolicy(inner, scfg, db, name=f"{name}[{seed}]")
    raise ConfigError(f"unknown provider kind {kind!r}")


def build_roster(cfg: dict, db: InstanceDB) -> dict[str, dict[str, PolicyProvider]]:
    params = cfg["_params"]
    out: dict[str, dict[str, PolicyProvider]] = {}
    for name, spec in cfg["roster"].items():
        out[name] = {
            seed: _build_provider(spec, seed, params, db, name)
            for seed in seed_labels(cfg, name)
        }
    return out


def _roster_factory(cfg: dict, db: InstanceDB):
    return functools.partial(build_roster, cfg, db)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_instances(cfg: dict, out_dir: Path) -> int:
    db = resolve_db(cfg)
    out = out_dir / "instances.json"
    db.save(out)
    hdr = db.header()
    print(f"wrote {out}")
    print(f"instances: {hdr['count']} (published reference: {hdr['reference_count']})")
    print(f"distinct valuation vectors: player1={hdr['distinct_valuations_p1']} "
          f"player2={hdr['distinct_valuations_p2']}")
    if hdr["note"]:
        print(f"note: {hdr['note']}")
    return EXIT_OK


def cmd_simulate(cfg: dict, out_dir: Path, workers: int, resume: bool) -> int:
    db = resolve_db(cfg)
    params = cfg["_params"]
    ckpt = out_dir / "payoff_checkpoint.jsonl"
    if not resume and ckpt.exists():
        ckpt.unlink()
    header = {
        "config_hash": config_hash(cfg),
        "game_params": params.to_dict(),
        "db_hash": db.content_hash(),
        "n_sims": int(cfg.get("n_sims_per_entry", 20000)),
    }
    table = estimate_payoff_table(
        _roster_factory(cfg, db),
        db,
        params,
        int(cfg.get("n_sims_per_entry", 20000)),
        int(cfg["master_seed"]),
        workers=workers,
        checkpoint_path=ckpt,
        header=header,
        progress=lambda d, t: print(f"\r{d}/{t} entries", end="", flush=True),
    )
    print()
    out = out_dir / "payoff_table.json"
    table.save(out)
    print(f"wrote {out} ({len(table.entries)} entries)")
    return EXIT_OK


def cmd_analyze(cfg: dict, out_dir: Path, workers: int, table_path: Path | None) -> int:
    table_path = table_path or out_dir / "payoff_table.json"
    if not table_path.exists():
        raise IncompleteTableError(f"payoff table not found: {table_path}")
    table = PayoffTable.load(table_path)
    want = config_hash(cfg)
    got = table.header.get("config_hash")
    if got != want:
        raise IncompleteTableError(
            f"table {table_path} was built from config hash {got}, current is {want}"
        )
    table.require_complete()
    stats = list(cfg.get("statistics", ["ne_regret", "uniform_score", "ne_nbs", "br_graph"]))
    report = bootstrap_run(
        table,
        int(cfg.get("n_replicates", 1_000_000)),
        stats,
        int(cfg["master_seed"]),
        eps_ent=float(cfg.get("eps_ent", 0.05)),
        workers=workers,
        histogram_bins=int(cfg.get("histogram_bins", 0)),
    )
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    with (out_dir / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "strategy", "mean", "ci_lo", "ci_hi",
                    "halfwidth", "presentation"])
        for stat in sorted(report.statistics):
            for strat in table.strategies:
                row = report.statistics[stat][strat]
                w.writerow([stat, strat, row["mean"], row["ci_lo"], row["ci_hi"],
                            row["halfwidth"],
                            f"{row['mean']:.3f}±{row['halfwidth']:.3f}"])
    for stat, per_strat in report.histograms.items():
        for strat, (edges, counts) in per_strat.items():
            with (out_dir / f"hist_{stat}_{strat}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["bin_lo", "bin_hi", "count"])
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    w.writerow([lo, hi, c])
    if report.br_graph is not None:
        (out_dir / "br_graph.dot").write_text(report.br_graph.to_dot())
    print(f"wrote {out_dir / 'report.json'} "
          f"({report.n_replicates} replicates, {report.failures} solver failures)")
    for stat in sorted(report.statistics):
        for strat in table.strategies:
            row = report.statistics[stat][strat]
            print(f"  {stat:15s} {strat:20s} {row['mean']:.3f}±{row['halfwidth']:.3f}")
    return EXIT_OK


def _tabular_state_bound(db: InstanceDB, params: GameParams) -> float:
    firsts = len({(i.pool, i.w1) for i in db} | {(i.pool, i.w2) for i in db})
    b = max(len(offers_for_pool(i.pool)) + 1 for i in db)
    total = 0.0
    for depth in range(params.max_rounds):
        total += float(b) ** depth
        if total > 1e18:
            break
    return firsts * total


def cmd_selfplay_train(cfg: dict, out_dir: Path) -> int:
    db = resolve_db(cfg)
    params = cfg["_params"]
    sp = cfg.get("selfplay", {})
    guard = float(sp.get("size_guard", 200_000))
    bound = _tabular_state_bound(db, params)
    if bound > guard:
        raise ConfigError(
            f"game too large for the tabular learner: ~{bound:.3g} reachable "
            f"infostates exceeds the size guard {guard:.3g} (raise "
            "selfplay.size_guard to override)"
        )
    scfg = SearchConfig.from_dict({**SearchConfig().to_dict(), **sp.get("search", {})})
    rng = child_rng(int(cfg["master_seed"]), 3)
    curve: list[tuple[int, float]] = []

    def checkpoint(episode: int, v_fn, p_pol) -> None:
        sr = oracle.exact_sum_regret(p_pol, db, params)
        curve.append((episode, sr))
        print(f"episode {episode}: restricted SumRegret {sr:.4f}")

    learner = TabularLearner()
    v_fn, p_pol = self_play_train(
        params, db, learner, scfg,
        epochs=int(sp.get("epochs", 2000)),
        rng=rng,
        delayed_period=int(sp.get("delayed_period", 1000)),
        checkpoint_every=int(sp.get("checkpoint_every", 0)) or None,
        checkpoint_hook=checkpoint,
    )
    v_fn.save(out_dir / "value_table.json")
    p_pol.params = params
    p_pol.save(out_dir / "policy_table.json")
    with (out_dir / "training_curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "sum_regret"])
        w.writerows(curve)
    print(f"wrote {out_dir / 'value_table.json'}, {out_dir / 'policy_table.json'}")
    return EXIT_OK


def cmd_play(cfg: dict, out_dir: Path, name_a: str, name_b: str, n_games: int) -> int:
    db = resolve_db(cfg)
    params = cfg["_params"]
    roster = build_roster(cfg, db)
    for name in (name_a, name_b):
        if name not in roster:
            raise ConfigError(f"unknown strategy {name!r}; roster: {sorted(roster)}")
    pol_a = roster[name_a][seed_labels(cfg, name_a)[0]]
    pol_b = roster[name_b][seed_labels(cfg, name_b)[0]]
    rng = child_rng(int(cfg["master_seed"]), 4)
    totals = np.zeros(2)
    for g in range(n_games):
        tr = play_game(params, db, pol_a, pol_b, rng, record=True)
        totals += tr.payoffs
        end = "agreed" if tr.agreed else ("chance" if tr.chance_terminated else "round cap")
        print(f"game {g}: pool={tr.instance['pool']} offers={tr.offers} "
              f"end={end} payoffs={tr.payoffs}")
    if n_games:
        print(f"mean payoffs over {n_games} games: "
              f"{name_a}={totals[0] / n_games:.3f} {name_b}={totals[1] / n_games:.3f}")
    else:
        print("no games requested")
    for pols in roster.values():
        for pol in pols.values():
            pol.close()
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bargeval", description=__doc__)
    ap.add_argument("--config", required=True, help="experiment config (JSON or TOML)")
    ap.add_argument("--seed", type=int, default=None, help="override master_seed")
    ap.add_argument("--workers", type=int, default=None, help="worker process count")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--resume", action="store_true", help="reuse simulation checkpoints")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-instances", help="enumerate and write the instance DB")
    sub.add_parser("simulate", help="estimate the payoff table")
    p = sub.add_parser("analyze", help="bootstrap statistics from a payoff table")
    p.add_argument("--table", default=None, help="payoff table path")
    sub.add_parser("selfplay-train", help="tabular self-play training (toy scale)")
    p = sub.add_parser("play", help="play games between two roster strategies")
    p.add_argument("strategy_a")
    p.add_argument("strategy_b")
    p.add_argument("--games", type=int, default=10)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = validate_config(load_config(args.config))
        if args.seed is not None:
            cfg["master_seed"] = args.seed
        workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
        out_dir = Path(args.out or cfg.get("out_dir", "out"))
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-instances":
            return cmd_gen_instances(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir, workers, args.resume)
        if args.command == "analyze":
            return cmd_analyze(cfg, out_dir, workers,
                               Path(args.table) if args.table else None)
        if args.command == "selfplay-train":
            return cmd_selfplay_train(cfg, out_dir)
        if args.command == "play":
            return cmd_play(cfg, out_dir, args.strategy_a, args.strategy_b, args.games)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IncompleteTableError, FileNotFoundError) as e:
        print(f"incomplete inputs: {e}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (EntryFailure, ProtocolError, PolicyError, SearchError) as e:
        print(f"provider failure: {e}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
