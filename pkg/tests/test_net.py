"""Live transports: TCP line protocol and the WebSocket/static UI port."""

import asyncio
import json

import pytest

from crtc.client import Applied, EditCommand
from crtc.net import RelayServer, TcpClient
from crtc.server import ServerCore

CORPUS = {
    "f1.toy": "class Alpha { int Foo(int x) { return x; } int Helper() { return 1; } }",
    "f2.toy": "class Beta { int UsingFoo(int y) { return Foo(y); } }",
}


def free_ports(n=2):
    import socket
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        ports.append(s.getsockname()[1])
        socks.append(s)
    for s in socks:
        s.close()
    return ports


async def start_relay():
    port, ui_port = free_ports()
    relay = RelayServer(ServerCore(dict(CORPUS)), "127.0.0.1", port, ui_port)
    task = asyncio.create_task(relay.serve())
    await asyncio.wait_for(relay.started.wait(), 5)
    return relay, task, port, ui_port


def test_tcp_two_clients_lock_and_propagate():
    async def go():
        relay, task, port, _ = await start_relay()
        try:
            bob = TcpClient("bob", "127.0.0.1", port)
            john = TcpClient("john", "127.0.0.1", port)
            await bob.connect()
            await john.connect()
            # bob starts a rename; the broken caller keeps it uncommitted
            r = await bob.act(lambda c: c.submit_edit(
                EditCommand("f1.toy", 21, insert="1")))
            assert isinstance(r, Applied)
            assert not bob.core.buildable()
            await john.drain_quiet()
            r = await john.act(lambda c: c.submit_edit(
                EditCommand("f1.toy", 21, insert="2")))
            assert r.holder == "bob"
            # bob reverts; john applies a body edit that commits; bob sees it
            await bob.act(lambda c: c.submit_revert("f1.toy"))
            await john.drain_quiet()
            r = await john.act(lambda c: c.submit_edit(
                EditCommand("f1.toy", 66, insert=" + 5")))
            assert isinstance(r, Applied)
            await bob.drain_quiet()
            assert "return 1 + 5;" in bob.core.buffers["f1.toy"].text()
            await bob.close()
            await john.close()
        finally:
            task.cancel()

    asyncio.run(go())


def test_websocket_speaks_protocol_and_serves_static(tmp_path):
    websockets = pytest.importorskip("websockets")

    async def go():
        from websockets.asyncio.client import connect

        (tmp_path / "index.html").write_text("<html>crtc</html>")
        port, ui_port = free_ports()
        relay = RelayServer(ServerCore(dict(CORPUS)), "127.0.0.1", port, ui_port,
                            static_dir=tmp_path)
        task = asyncio.create_task(relay.serve())
        await asyncio.wait_for(relay.started.wait(), 5)
        try:
            async with connect(f"ws://127.0.0.1:{ui_port}/") as ws:
                await ws.send(json.dumps({
                    "body": {"name": "webby"}, "seq": 1, "session": "",
                    "type": "hello", "v": 1}))
                reply = json.loads(await asyncio.wait_for(ws.recv(), 5))
                assert reply["type"] == "welcome"
                assert reply["body"]["files"][0]["file_name"] == "f1.toy"
                # malformed frames answer with a typed error, not a crash
                await ws.send("{nope")
                reply = json.loads(await asyncio.wait_for(ws.recv(), 5))
                assert reply["type"] == "error"

            import urllib.error
            import urllib.request

            def fetch(path):
                return urllib.request.urlopen(
                    f"http://127.0.0.1:{ui_port}{path}", timeout=5).read()

            body = await asyncio.to_thread(fetch, "/")
            assert b"crtc" in body
            with pytest.raises(urllib.error.HTTPError) as err:
                await asyncio.to_thread(fetch, "/nope.js")
            assert err.value.code == 404
        finally:
            task.cancel()

    asyncio.run(go())
