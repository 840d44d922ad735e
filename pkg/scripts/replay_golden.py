#!/usr/bin/env python3
"""Replay the golden two-developer scenario and narrate the trace."""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from crtc.protocol import decode  # noqa: E402
from crtc.sim import parse_scenario, run, sequential_replay_oracle  # noqa: E402


def main() -> int:
    scenario = parse_scenario((ROOT / "scenarios" / "usecase_bob_john.crtcs").read_text())
    trace = run(scenario, 0)
    for rec in trace.records():
        if rec["ev"] == "client" and rec["kind"] == "edit":
            who, what = rec["client"], rec["result"]
            extra = f" (locked by {rec['holder']})" if what == "denied" else ""
            print(f"tick {rec['tick']:2d}  {who:5s} edit {what}{extra}")
        elif rec["ev"] == "msg":
            msg = decode(rec["line"] + "\n")
            if msg.type == "propagate":
                print(f"tick {rec['tick']:2d}  -> {rec['to']}: v{msg.body['version']} "
                      f"by {msg.body['author']}: {msg.body['text'][:60]}...")
            elif msg.type == "commit_reject":
                print(f"tick {rec['tick']:2d}  {rec['to']} commit rejected: "
                      f"{msg.body['reason']}")
        elif rec["ev"] == "assert" and not rec["ok"]:
            print(f"tick {rec['tick']:2d}  ASSERT FAILED: {rec['detail']}")
    final = sequential_replay_oracle(trace)
    print("\nfinal canonical text:")
    for name, text in sorted(final.items()):
        print(f"  {name}: {text}")
    print("\nassertions:", "all passed" if trace.ok else trace.failures)
    return 0 if trace.ok else 1


if __name__ == "__main__":
    sys.exit(main())
