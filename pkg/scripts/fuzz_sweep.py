#!/usr/bin/env python3
"""Randomized sweep with per-seed stats: denials, commits, reconcile
conflicts, oracle verdicts. Slower and chattier than `crtc sim --fuzz`."""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from crtc.sim import (  # noqa: E402
    check_buildable_propagation,
    check_convergence,
    check_lock_safety,
    generate_random_scenario,
    run,
)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--first-seed", type=int, default=1)
    ap.add_argument("--clients", type=int, default=0, help="0 = alternate 2/3")
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args()

    started = time.monotonic()
    totals = {"denies": 0, "acks": 0, "conflicts": 0, "events": 0}
    failures = 0
    for i in range(args.seeds):
        seed = args.first_seed + i
        clients = args.clients or (2 + seed % 2)
        scenario = generate_random_scenario(seed, clients, args.steps)
        trace = run(scenario, seed)
        problems = (trace.failures
                    + check_buildable_propagation(trace)
                    + check_lock_safety(trace)
                    + check_convergence(trace))
        denies = sum(1 for l in trace.lines if '"result":"denied"' in l)
        acks = sum(1 for l in trace.lines if '"kind":"ack"' in l)
        conflicts = sum(l.count('"kind":"both_changed"')
                        + l.count('"kind":"deleted_upstream"')
                        for l in trace.lines if '"reconcile"' in l)
        totals["denies"] += denies
        totals["acks"] += acks
        totals["conflicts"] += conflicts
        totals["events"] += len(scenario.actions)
        flag = "ok" if not problems else "FAIL " + "; ".join(problems[:2])
        print(f"seed {seed:4d}  clients={clients}  actions={len(scenario.actions):3d}  "
              f"denies={denies:3d}  acks={acks:3d}  conflicts={conflicts}  {flag}")
        failures += bool(problems)
    elapsed = time.monotonic() - started
    print(f"\n{args.seeds} scenarios in {elapsed:.1f}s: "
          f"{totals['events']} actions, {totals['acks']} commits, "
          f"{totals['denies']} denials, {totals['conflicts']} reconcile conflicts, "
          f"{failures} failing seeds")
    return 0 if failures == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
