"""Policy providers: heuristics, tabular policies, seed mixtures, and a
subprocess adapter for externally trained agents.

A provider maps an infostate to a probability vector aligned with the
canonical legal-action order (lexicographic offers, then AGREE). Providers
are stateless between episodes, except that a MixturePolicy commits to one
component per episode via begin_episode().
"""

from __future__ import annotations

import json
import subprocess
import threading
from pathlib import Path

import numpy as np

from .game import (
    AGREE,
    GameParams,
    InfoState,
    ObservationEncoder,
    dot,
    legal_actions,
    offers_for_pool,
)

DIST_ATOL = 1e-6


class PolicyError(Exception):
    pass


class DistributionError(PolicyError):
    """A provider emitted an invalid action distribution."""


class ProtocolError(PolicyError):
    """An external agent violated the wire protocol."""


def validate_distribution(probs: np.ndarray, n_actions: int, context: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (n_actions,):
        raise DistributionError(
            f"{context}: expected {n_actions} probabilities, got shape {probs.shape}"
        )
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise DistributionError(f"{context}: negative or non-finite probability")
    total = float(probs.sum())
    if abs(total - 1.0) > DIST_ATOL:
        raise DistributionError(f"{context}: probabilities sum to {total}, expected 1")
    return probs / total


class PolicyProvider:
    """Base provider. Subclasses implement probs(); value() is optional."""

    name = "policy"

    def begin_episode(self, rng: np.random.Generator) -> None:
        """Per-episode setup hook (selection for mixtures, rng for search)."""

    def probs(self, s: InfoState) -> np.ndarray:
        raise NotImplementedError

    def value(self, s: InfoState) -> tuple[float, float]:
        """Estimated expected payoffs (player 1, player 2) at ``s``."""
        raise NotImplementedError(f"{self.name} does not support value queries")

    def close(self) -> None:
        """Release external resources, if any."""


class UniformPolicy(PolicyProvider):
    """Uniform over all legal actions."""

    name = "uniform"

    def probs(self, s: InfoState) -> np.ndarray:
        n = len(legal_actions(s))
        return np.full(n, 1.0 / n)


class ToughPolicy(PolicyProvider):
    """Never agrees; proposes uniformly among own-payoff-maximizing offers."""

    name = "tough"

    def __init__(self):
        self._cache: dict[tuple, np.ndarray] = {}

    def probs(self, s: InfoState) -> np.ndarray:
        key = (s.pool, s.own_valuation, bool(s.offers))
        got = self._cache.get(key)
        if got is not None:
            return got
        offers = offers_for_pool(s.pool)
        vals = [dot(s.own_valuation, o) for o in offers]
        best = max(vals)
        mask = np.array([v == best for v in vals], dtype=float)
        p = np.zeros(len(offers) + (1 if s.offers else 0))
        p[: len(offers)] = mask / mask.sum()
        self._cache[key] = p
        return p


class SoftPolicy(PolicyProvider):
    """Accepts any standing offer; as first mover, proposes uniformly."""

    name = "soft"

    def probs(self, s: InfoState) -> np.ndarray:
        acts = legal_actions(s)
        p = np.zeros(len(acts))
        if s.offers:
            p[-1] = 1.0  # AGREE is canonically last
        else:
            p[:] = 1.0 / len(acts)
        return p


class TabularPolicy(PolicyProvider):
    """Infostate-key -> distribution map with a uniform fallback for unseen
    keys, keeping the policy a total behavioral strategy."""

    name = "tabular"

    def __init__(self, table: dict[str, np.ndarray] | None = None,
                 params: GameParams | None = None, name: str = "tabular"):
        self.table = {k: np.asarray(v, dtype=float) for k, v in (table or {}).items()}
        self.params = params
        self.name = name

    def probs(self, s: InfoState) -> np.ndarray:
        n = len(legal_actions(s))
        stored = self.table.get(s.key())
        if stored is None:
            return np.full(n, 1.0 / n)
        return validate_distribution(stored, n, f"tabular[{s.key()}]")

    def save(self, path: str | Path) -> None:
        doc = {
            "header": {"game_params": self.params.to_dict() if self.params else None},
            "table": {k: [float(x) for x in v] for k, v in sorted(self.table.items())},
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path, name: str = "tabular") -> "TabularPolicy":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise PolicyError(f"cannot parse tabular policy {path}: {e}") from e
        hdr = doc.get("header", {})
        params = GameParams.from_dict(hdr["game_params"]) if hdr.get("game_params") else None
        return cls(table=doc["table"], params=params, name=name)


class MixturePolicy(PolicyProvider):
    """Uniform per-episode mixture over component providers.

    The component is drawn once per episode in begin_episode, never per
    move, making the mixture payoff-equivalent to the arithmetic mean of
    its components against any fixed opponent.
    """

    def __init__(self, components: list[PolicyProvider], name: str = "mixture"):
        if not components:
            raise ValueError("mixture needs at least one component")
        self.components = components
        self.name = name
        self._active = components[0]

    def begin_episode(self, rng: np.random.Generator) -> None:
        self._active = self.components[int(rng.integers(len(self.components)))]
        self._active.begin_episode(rng)

    def probs(self, s: InfoState) -> np.ndarray:
        return self._active.probs(s)

    def value(self, s: InfoState) -> tuple[float, float]:
        return self._active.value(s)

    def close(self) -> None:
        for c in self.components:
            c.close()


# ---------------------------------------------------------------------------
# External subprocess agents (JSON lines over stdin/stdout)

ENCODING_VERSION = 1


class ExternalPolicy(PolicyProvider):
    """Adapter for an agent running as a subprocess.

    Wire protocol, one JSON object per line on the child's stdin/stdout:

      -> {"kind": "hello", "game": "dond", "encoding_version": 1}
      <- {"kind": "hello", "game": "dond", "encoding_version": 1}
      -> {"kind": "act", "obs": [...], "legal": [0, 1, ...]}
      <- {"probs": [...]}                  # aligned with "legal"
      -> {"kind": "value", "obs": [...]}
      <- {"values": [v1, v2]}

    "legal" carries indices into the canonical legal-action order, which the
    agent can reconstruct from the pool counts inside obs. Access is
    serialized per subprocess; run one subprocess per worker for parallelism.
    """

    def __init__(self, command: list[str], params: GameParams,
                 pool_caps=(7, 7, 7), timeout: float = 10.0, name: str = "external"):
        self.name = name
        self.command = list(command)
        self.timeout = timeout
        self.encoder = ObservationEncoder(params, pool_caps)
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        reply = self._roundtrip(
            {"kind": "hello", "game": "dond", "encoding_version": ENCODING_VERSION}
        )
        if reply.get("kind") != "hello" or reply.get("game") != "dond":
            raise ProtocolError(f"{name}: bad handshake reply {reply!r}")
        if reply.get("encoding_version") != ENCODING_VERSION:
            raise ProtocolError(
                f"{name}: encoding_version mismatch: {reply.get('encoding_version')}"
            )

    def _roundtrip(self, msg: dict) -> dict:
        with self._lock:
            if self._proc.poll() is not None:
                raise ProtocolError(f"{self.name}: subprocess exited "
                                    f"(code {self._proc.returncode})")
            line = json.dumps(msg)
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise ProtocolError(f"{self.name}: write failed on {line!r}: {e}") from e
            timer = threading.Timer(self.timeout, self._proc.kill)
            timer.start()
            try:
                reply = self._proc.stdout.readline()
            finally:
                timed_out = not timer.is_alive()
                timer.cancel()
            if timed_out or not reply:
                raise ProtocolError(f"{self.name}: timeout or EOF replying to {line!r}")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as e:
            raise ProtocolError(
                f"{self.name}: malformed JSON reply {reply!r} to {line!r}"
            ) from e

    def probs(self, s: InfoState) -> np.ndarray:
        n = len(legal_actions(s))
        reply = self._roundtrip(
            {
                "kind": "act",
                "obs": [float(x) for x in self.encoder.encode(s)],
                "legal": list(range(n)),
            }
        )
        if "probs" not in reply:
            raise ProtocolError(f"{self.name}: reply missing 'probs': {reply!r}")
        return validate_distribution(
            np.asarray(reply["probs"], dtype=float), n, f"{self.name} at {s.key()}"
        )

    def value(self, s: InfoState) -> tuple[float, float]:
        reply = self._roundtrip(
            {"kind": "value", "obs": [float(x) for x in self.encoder.encode(s)]}
        )
        vals = reply.get("values")
        if not isinstance(vals, list) or len(vals) != 2:
            raise ProtocolError(f"{self.name}: bad 'values' reply {reply!r}")
        return float(vals[0]), float(vals[1])

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


HEURISTICS = {
    "uniform": UniformPolicy,
    "tough": ToughPolicy,
    "soft": SoftPolicy,
}


def make_heuristic(which: str) -> PolicyProvider:
    try:
        return HEURISTICS[which]()
    except KeyError:
        raise PolicyError(f"unknown heuristic {which!r}; choose from {sorted(HEURISTICS)}")
