"""Network transports.

The relay accepts the newline-delimited protocol over TCP and the same
messages one-per-frame over WebSocket for browsers; the WebSocket port
also serves the static web UI. Connections read concurrently, but every
decoded message goes through one ordered queue and a single dispatch
task, so the core state machine runs strictly sequentially.
"""

from __future__ import annotations

import asyncio
import logging
from pathlib import Path

from .client import Applied, ClientCore, Denied, EditCommand
from .protocol import MalformedFrame, Message, SchemaViolation, UnsupportedVersion, decode, encode
from .server import ServerCore

log = logging.getLogger("crtc")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
}


class RelayServer:
    def __init__(self, core: ServerCore, host: str = "127.0.0.1",
                 port: int = 7740, ui_port: int = 7741,
                 static_dir: Path | None = None):
        self.core = core
        self.host = host
        self.port = port
        self.ui_port = ui_port
        self.static_dir = static_dir
        self.queue: asyncio.Queue = asyncio.Queue()
        self.writers: dict[str, object] = {}  # conn_id -> send callable
        self._next_conn = 1
        self.started = asyncio.Event()

    def _conn_id(self, prefix: str) -> str:
        cid = f"{prefix}{self._next_conn}"
        self._next_conn += 1
        return cid

    async def _dispatch_loop(self):
        while True:
            kind, conn_id, payload = await self.queue.get()
            if kind == "msg":
                log.debug("recv %s: %s", conn_id, payload)
                try:
                    replies = self.core.handle(conn_id, payload)
                except Exception:
                    log.exception("handler failed for %s", conn_id)
                    continue
            else:
                replies = self.core.disconnect(conn_id)
            for to_conn, msg in replies:
                send = self.writers.get(to_conn)
                if send is None:
                    continue
                log.debug("send %s: %s", to_conn, msg)
                try:
                    await send(encode(msg))
                except Exception:
                    log.warning("send to %s failed", to_conn)

    async def _handle_tcp(self, reader: asyncio.StreamReader,
                          writer: asyncio.StreamWriter):
        conn_id = self._conn_id("t")

        async def send(line: bytes):
            writer.write(line)
            await writer.drain()

        self.writers[conn_id] = send
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    msg = decode(line)
                except (MalformedFrame, SchemaViolation, UnsupportedVersion) as exc:
                    await send(encode(Message("error", 1, "", {
                        "code": "bad_frame", "message": str(exc)})))
                    continue
                await self.queue.put(("msg", conn_id, msg))
        finally:
            self.writers.pop(conn_id, None)
            await self.queue.put(("close", conn_id, None))
            writer.close()

    async def _handle_ws(self, connection):
        conn_id = self._conn_id("w")

        async def send(line: bytes):
            await connection.send(line.decode("utf-8").rstrip("\n"))

        self.writers[conn_id] = send
        try:
            async for frame in connection:
                if isinstance(frame, bytes):
                    frame = frame.decode("utf-8", errors="replace")
                try:
                    msg = decode(frame + "\n")
                except (MalformedFrame, SchemaViolation, UnsupportedVersion) as exc:
                    await send(encode(Message("error", 1, "", {
                        "code": "bad_frame", "message": str(exc)})))
                    continue
                await self.queue.put(("msg", conn_id, msg))
        finally:
            self.writers.pop(conn_id, None)
            await self.queue.put(("close", conn_id, None))

    def _serve_static(self, connection, request):
        from websockets.datastructures import Headers
        from websockets.http11 import Response

        if "Upgrade" in request.headers.get("Connection", "") or \
                request.headers.get("Upgrade", "").lower() == "websocket":
            return None  # proceed with the WebSocket handshake
        path = request.path.split("?", 1)[0]
        if path in ("", "/"):
            path = "/index.html"
        if self.static_dir is None:
            return Response(404, "Not Found", Headers(), b"no ui bundled\n")
        target = (self.static_dir / path.lstrip("/")).resolve()
        try:
            target.relative_to(self.static_dir.resolve())
        except ValueError:
            return Response(403, "Forbidden", Headers(), b"")
        if not target.is_file():
            return Response(404, "Not Found", Headers(), b"not found\n")
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        body = target.read_bytes()
        headers = Headers([("Content-Type", ctype),
                           ("Content-Length", str(len(body)))])
        return Response(200, "OK", headers, body)

    async def serve(self):
        from websockets.asyncio.server import serve as ws_serve

        tcp = await asyncio.start_server(self._handle_tcp, self.host, self.port)
        dispatcher = asyncio.create_task(self._dispatch_loop())
        async with ws_serve(self._handle_ws, self.host, self.ui_port,
                            process_request=self._serve_static):
            self.started.set()
            log.info("relay on tcp://%s:%d, ui on http://%s:%d",
                     self.host, self.port, self.host, self.ui_port)
            try:
                async with tcp:
                    await asyncio.Future()
            finally:
                dispatcher.cancel()


class TcpClient:
    """Asyncio driver around ClientCore for the scriptable CLI client."""

    def __init__(self, name: str, host: str, port: int):
        self.core = ClientCore(name)
        self.host = host
        self.port = port
        self.reader: asyncio.StreamReader | None = None
        self.writer: asyncio.StreamWriter | None = None

    async def connect(self):
        self.reader, self.writer = await asyncio.open_connection(self.host, self.port)
        self.core.connect()
        await self._flush()
        await self._read_until(lambda: self.core.connected)

    async def _flush(self):
        for msg in self.core.outbox:
            self.writer.write(encode(msg))
        self.core.outbox.clear()
        await self.writer.drain()

    async def _read_one(self, timeout: float = 5.0) -> bool:
        try:
            line = await asyncio.wait_for(self.reader.readline(), timeout)
        except asyncio.TimeoutError:
            return False
        if not line:
            raise ConnectionError("server closed the connection")
        self.core.on_server_message(decode(line))
        await self._flush()
        return True

    async def _read_until(self, done, timeout: float = 5.0):
        while not done():
            if not await self._read_one(timeout):
                raise TimeoutError("no reply from server")

    async def drain_quiet(self, idle: float = 0.15):
        """Consume inbound traffic until the line stays quiet briefly."""
        while True:
            try:
                line = await asyncio.wait_for(self.reader.readline(), idle)
            except asyncio.TimeoutError:
                return
            if not line:
                raise ConnectionError("server closed the connection")
            self.core.on_server_message(decode(line))
            await self._flush()

    async def act(self, fn):
        fn(self.core)
        await self._flush()
        while not self.core.idle:
            await self._read_one()
        await self.drain_quiet()
        return self.core.last_result

    async def close(self):
        if self.writer is not None:
            self.core._send("bye", {})
            await self._flush()
            self.writer.close()


async def run_script(client: TcpClient, events, out=print) -> int:
    """Execute the single-client subset of a scenario against a live
    server. Returns the number of expectation/assert failures."""
    failures = 0
    for ev in events:
        if ev.kind == "assert":
            what = ev.args[0]
            if what == "buildable":
                _, who, file_name, expected = ev.args
                if who != client.core.name:
                    continue
                await client.drain_quiet()
                actual = client.core.buildable(file_name)
                ok = actual == expected
            elif what == "text":
                _, who, file_name, expected = ev.args
                if who != client.core.name:
                    continue
                await client.drain_quiet()
                ok = client.core.buffers[file_name].text() == expected
            else:
                out(f"assert {what} is not available in client mode")
                failures += 1
                continue
            out(f"assert {what} @tick {ev.tick}: {'ok' if ok else 'FAILED'}")
            failures += 0 if ok else 1
            continue
        if ev.client != client.core.name:
            continue
        if ev.kind == "insert":
            file_name, offset, text, expect = ev.args
            result = await client.act(lambda c: c.submit_edit(
                EditCommand(file_name, offset, insert=text)))
        elif ev.kind == "delete":
            file_name, offset, length, expect = ev.args
            result = await client.act(lambda c: c.submit_edit(
                EditCommand(file_name, offset, delete=length)))
        elif ev.kind == "revert":
            await client.act(lambda c: c.submit_revert(ev.args[0]))
            continue
        elif ev.kind == "offrecord":
            await client.act(lambda c: c.submit_record_mode(False))
            continue
        elif ev.kind == "onrecord":
            await client.act(lambda c: c.submit_record_mode(True))
            continue
        else:
            continue
        outcome = ("apply" if isinstance(result, Applied)
                   else "deny" if isinstance(result, Denied) else "blocked")
        out(f"{ev.kind} {ev.args[0]}@{ev.args[1]}: {outcome}")
        if expect is not None and outcome != expect:
            out(f"  expected {expect}")
            failures += 1
    return failures
