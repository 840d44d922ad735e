"""Command line entry points.

stdout carries machine-readable results, stderr carries logs. Exit codes:
0 success, 1 an assertion or conflict was found, 2 usage or I/O errors.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from pathlib import Path

from . import semantics
from .server import CorpusUnbuildable, ServerCore
from .sim import (
    Scenario,
    ScenarioSyntaxError,
    check_buildable_propagation,
    check_convergence,
    check_lock_safety,
    generate_random_scenario,
    parse_scenario,
    run,
)
from .toylang import SourceText, check_buildable


def load_corpus(directory: str) -> dict[str, str]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"{directory!r} is not a directory")
    return {p.name: p.read_text(encoding="utf-8")
            for p in sorted(root.glob("*.toy"))}


def _collect_sources(paths: list[str]) -> list[SourceText]:
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(SourceText(q.name, q.read_text(encoding="utf-8"))
                       for q in sorted(p.glob("*.toy")))
        else:
            out.append(SourceText(p.name, p.read_text(encoding="utf-8")))
    return out


def run_serve(args) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        corpus = load_corpus(args.corpus)
        core = ServerCore(corpus)
    except CorpusUnbuildable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    from .net import RelayServer
    static = Path(args.static) if args.static else _default_static()
    relay = RelayServer(core, args.host, args.port, args.ui_port, static)
    try:
        asyncio.run(relay.serve())
    except KeyboardInterrupt:
        return 0
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _default_static() -> Path | None:
    here = Path(__file__).resolve()
    for base in [here.parent.parent.parent, *here.parents]:
        candidate = base / "frontend" / "dist"
        if candidate.is_dir():
            return candidate
    return None


def run_client(args) -> int:
    try:
        host, port_text = args.server.rsplit(":", 1)
        port = int(port_text)
    except ValueError:
        print("error: --server takes HOST:PORT", file=sys.stderr)
        return 2
    try:
        scenario = parse_scenario(Path(args.script).read_text(encoding="utf-8"))
    except (OSError, ScenarioSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    async def go() -> int:
        from .net import TcpClient
        client = TcpClient(args.name, host, port)
        try:
            await client.connect()
        except OSError as exc:
            print(f"error: cannot reach {args.server}: {exc}", file=sys.stderr)
            return 2
        try:
            from .net import run_script
            failures = await run_script(client, scenario.events)
        finally:
            await client.close()
        return 0 if failures == 0 else 1

    return asyncio.run(go())


def run_sim(args) -> int:
    if args.scenario:
        try:
            scenario = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except ScenarioSyntaxError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return _run_one(scenario, args.seed, args.trace)
    # fuzz mode
    failures = 0
    for i in range(args.fuzz):
        seed = args.seed + i
        scenario = generate_random_scenario(seed, args.clients, args.steps)
        trace = run(scenario, seed)
        problems = (trace.failures
                    + check_buildable_propagation(trace)
                    + check_lock_safety(trace)
                    + check_convergence(trace))
        if problems:
            failures += 1
            print(f"seed {seed}: FAILED")
            for problem in problems:
                print(f"  {problem}")
        else:
            print(f"seed {seed}: ok")
    return 0 if failures == 0 else 1


def _run_one(scenario: Scenario, seed: int, show_trace: bool) -> int:
    try:
        trace = run(scenario, seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if show_trace:
        sys.stdout.write(trace.as_bytes().decode("utf-8"))
    for failure in trace.failures:
        print(f"assertion failed: {failure}")
    return 0 if trace.ok else 1


def run_check(args) -> int:
    try:
        sources = _collect_sources(args.paths)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    statuses = check_buildable(sources)
    all_ok = True
    for name in sorted(statuses):
        status = statuses[name]
        if status.buildable:
            print(f"{name}: buildable")
        else:
            all_ok = False
            print(f"{name}: unbuildable")
            for diag in status.diagnostics:
                print(f"  [{diag.code.value}] {diag.span.start}..{diag.span.end}: {diag.message}")
    return 0 if all_ok else 1


def run_deps(args) -> int:
    try:
        corpus = load_corpus(args.corpus)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    statuses = check_buildable([SourceText(n, t) for n, t in corpus.items()])
    bad = {n for n, s in statuses.items() if not s.buildable}
    if bad:
        print(f"error: corpus is not buildable: {sorted(bad)}", file=sys.stderr)
        return 2
    table = semantics.assign_element_ids(
        semantics.ElementTable.empty(),
        {n: s.ast for n, s in statuses.items()},
        semantics.IdAllocator())
    graph = semantics.build_reference_graph(
        table, {n: s.bindings for n, s in statuses.items()})
    paths = sorted(table.by_path)
    if args.element:
        if args.element not in table.by_path:
            print(f"error: no element {args.element!r}", file=sys.stderr)
            return 2
        paths = [args.element]
    for path in paths:
        members = semantics.breakable_set(graph, table, table.by_path[path])
        inner = ",".join(sorted(table.by_id[m].path for m in members))
        print(f"{path} -> {{{inner}}}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crtc",
        description="collaborative real-time coding engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the central relay server")
    p.add_argument("--corpus", required=True, help="directory of .toy files")
    p.add_argument("--port", type=int, default=7740)
    p.add_argument("--ui-port", type=int, default=7741)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory with the web UI bundle")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=run_serve)

    p = sub.add_parser("client", help="scripted client against a live server")
    p.add_argument("--server", required=True, help="HOST:PORT")
    p.add_argument("--name", required=True)
    p.add_argument("--script", required=True)
    p.set_defaults(fn=run_client)

    p = sub.add_parser("sim", help="run a scenario or fuzz deterministically")
    p.add_argument("--scenario")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--fuzz", type=int, default=0, help="number of random scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clients", type=int, default=2)
    p.add_argument("--steps", type=int, default=50)
    p.set_defaults(fn=run_sim)

    p = sub.add_parser("check", help="buildability verdicts for files")
    p.add_argument("paths", nargs="+", metavar="PATH")
    p.set_defaults(fn=run_check)

    p = sub.add_parser("deps", help="dump breakable sets")
    p.add_argument("--corpus", required=True)
    p.add_argument("element", nargs="?", metavar="ELEMENT_PATH")
    p.set_defaults(fn=run_deps)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sim" and not args.scenario and not args.fuzz:
        parser.error("sim needs --scenario or --fuzz")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
