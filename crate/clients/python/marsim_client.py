"""Minimal trainer client for the marsim episode server.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON object.
Standard library only.

    from marsim_client import Client
    with Client("127.0.0.1", 7300) as c:
        spec = c.spec()
        obs = c.reset(seeds=[1, 2])
        out = c.step([[20.0, 0.0, 0.0]] * spec["n_envs"])
"""

import json
import socket
import struct


class ServerError(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(f"env {e.get('env')}: {e['code']}: {e['message']}" for e in errors))
        self.errors = errors


class Client:
    def __init__(self, host="127.0.0.1", port=7300, timeout=30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        try:
            self.close()
        except OSError:
            pass

    def _recv_exact(self, n):
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("server closed the connection")
            buf.extend(chunk)
        return bytes(buf)

    def request(self, message):
        body = json.dumps(message).encode("utf-8")
        self._sock.sendall(struct.pack(">I", len(body)) + body)
        (length,) = struct.unpack(">I", self._recv_exact(4))
        reply = json.loads(self._recv_exact(length).decode("utf-8"))
        if not reply.get("ok"):
            raise ServerError(reply.get("errors", []))
        return reply

    def spec(self):
        return self.request({"op": "spec"})

    def reset(self, seeds=None, seed=None):
        msg = {"op": "reset"}
        if seeds is not None:
            msg["seeds"] = list(seeds)
        if seed is not None:
            msg["seed"] = seed
        return self.request(msg)["obs"]

    def step(self, actions):
        return self.request({"op": "step", "actions": actions})

    def close(self):
        if self._sock is None:
            return
        try:
            self.request({"op": "close"})
        finally:
            self._sock.close()
            self._sock = None
