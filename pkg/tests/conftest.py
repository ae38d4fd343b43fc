from __future__ import annotations

import json
import random
import threading
import time
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from nbest_slu.lattice import Arc, Lattice


def enumerate_paths(lat: Lattice):
    """All start->final paths by plain DFS, as (exact_cost, words, arc_indices)."""
    out_arcs = {}
    for i, a in enumerate(lat.arcs):
        out_arcs.setdefault(a.src, []).append(i)
    found = []

    def walk(node, path):
        if node in lat.finals:
            found.append(tuple(path))
        for ai in out_arcs.get(node, []):
            path.append(ai)
            walk(lat.arcs[ai].dst, path)
            path.pop()

    walk(lat.start, [])
    rows = []
    for p in found:
        cost = sum((Fraction(lat.arcs[i].am_cost) + Fraction(lat.arcs[i].lm_cost) for i in p), Fraction(0))
        words = tuple(lat.arcs[i].word for i in p if lat.arcs[i].word)
        rows.append((cost, words, p))
    return rows


def brute_nbest(lat: Lattice, n: int):
    return sorted(enumerate_paths(lat))[:n]


def random_dag(rng: np.random.Generator, max_nodes: int = 8, max_arcs: int = 20, uid: str = "rand") -> Lattice:
    k = int(rng.integers(2, max_nodes + 1))
    vocab = ["a", "b", "c", "yes", "no", ""]
    arcs = set()
    for v in range(1, k):
        arcs.add((int(rng.integers(0, v)), v))
    for v in range(k - 1):
        arcs.add((v, int(rng.integers(v + 1, k))))
    arcs = [list(a) for a in sorted(arcs)]
    while len(arcs) < max_arcs and rng.random() < 0.8:
        u = int(rng.integers(0, k - 1))
        arcs.append([u, int(rng.integers(u + 1, k))])
    out = []
    for u, v in arcs:
        if rng.random() < 0.5:
            am = float(rng.integers(-8, 3)) / 2
            lm = float(rng.integers(-4, 2)) / 2
        else:
            am = round(float(rng.normal(-3, 2)), 1)
            lm = round(float(rng.normal(-1, 1)), 1)
        out.append(Arc(u, v, str(rng.choice(vocab)), am, lm))
    finals = {k - 1}
    if k > 2 and rng.random() < 0.3:
        finals.add(int(rng.integers(1, k - 1)))
    return Lattice(uid, 0, frozenset(finals), tuple(out))


@pytest.fixture
def diamond() -> Lattice:
    """6 nodes, 8 arcs, 6 paths (two share the words "play some jazz")."""
    arcs = [
        Arc(0, 1, "play", -3.0, -1.0),
        Arc(0, 2, "pay", -2.5, -1.0),
        Arc(1, 3, "some", -2.0, -0.5),
        Arc(2, 3, "some", -2.0, -0.5),
        Arc(1, 2, "", -0.25, -0.125),
        Arc(3, 4, "jazz", -4.0, -1.0),
        Arc(3, 5, "jess", -3.0, -1.5),
        Arc(4, 5, "", -0.5, 0.0),
    ]
    return Lattice("diamond", 0, frozenset({5}), tuple(arcs))


@pytest.fixture
def small_diamond() -> Lattice:
    """Three paths with costs -10, -8 and -3."""
    arcs = [
        Arc(0, 1, "yes", -5.0, -1.0),
        Arc(1, 3, "please", -3.0, -1.0),
        Arc(0, 2, "yet", -4.0, -1.0),
        Arc(2, 3, "please", -2.0, -1.0),
        Arc(0, 3, "yeah", -2.0, -1.0),
    ]
    return Lattice("small", 0, frozenset({3}), tuple(arcs))


class _Stub:
    def __init__(self, limit=8, latency=(0.0, 0.02), seed=0):
        self.limit = limit
        self.latency = latency
        self.rng = random.Random(seed)
        self.lock = threading.Lock()
        self.bodies: list[dict] = []
        self.headers: list[dict] = []
        self.inflight = 0
        self.max_inflight = 0
        self.violations = 0


def _handler(stub: _Stub):
    class H(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with stub.lock:
                stub.inflight += 1
                stub.max_inflight = max(stub.max_inflight, stub.inflight)
                if stub.inflight > stub.limit:
                    stub.violations += 1
                stub.bodies.append(body)
                stub.headers.append(dict(self.headers))
                pause = stub.rng.uniform(*stub.latency)
            time.sleep(pause)
            out = json.dumps({"text": "echo:" + body["prompt"]}).encode()
            with stub.lock:
                stub.inflight -= 1
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, *args):
            pass

    return H


@pytest.fixture
def stub_server():
    """Local completion endpoint echoing the prompt; counts concurrent requests."""
    stub = _Stub()
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _handler(stub))
    srv.daemon_threads = True
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    stub.url = f"http://127.0.0.1:{srv.server_address[1]}"
    yield stub
    srv.shutdown()
    srv.server_close()
