"""Reference external agent speaking the JSON-lines policy protocol.

Plays uniformly over the legal actions it is given; doubles as executable
protocol documentation and as the test fixture for the subprocess adapter.

Run with:  python -m bargeval.external_ref [--bias-first] [--bad-sum]
The flags inject protocol faults for error-path testing.
"""

from __future__ import annotations

import argparse
import json
import sys


def serve(bias_first: bool = False, bad_sum: bool = False, garbage: bool = False) -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        kind = msg.get("kind")
        if kind == "hello":
            reply = {"kind": "hello", "game": msg.get("game"),
                     "encoding_version": msg.get("encoding_version")}
        elif kind == "act":
            if garbage:
                sys.stdout.write("not json\n")
                sys.stdout.flush()
                continue
            n = len(msg["legal"])
            probs = [1.0 / n] * n
            if bias_first and n > 1:
                probs = [0.0] * n
                probs[0] = 1.0
            if bad_sum:
                probs = [0.9 / n] * n
            reply = {"probs": probs}
        elif kind == "value":
            reply = {"values": [0.0, 0.0]}
        else:
            reply = {"error": f"unknown kind {kind!r}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bias-first", action="store_true")
    ap.add_argument("--bad-sum", action="store_true")
    ap.add_argument("--garbage", action="store_true")
    args = ap.parse_args()
    serve(bias_first=args.bias_first, bad_sum=args.bad_sum, garbage=args.garbage)


if __name__ == "__main__":
    main()
