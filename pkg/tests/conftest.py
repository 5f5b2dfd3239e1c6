import hashlib
import json
import re
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from navcot.env import CaptionTable, NavGraph, Viewpoint  # noqa: E402
from navcot.gt_labels import ExactMatchSimilarity, LandmarkCache, label_dataset  # noqa: E402
from navcot.synthetic import gen_synthetic_world  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def world():
    """Seed-1 synthetic suite: 12 viewpoints, branching 3, 50 episodes."""
    return gen_synthetic_world(1, 12, 3, 50)


@pytest.fixture(scope="session")
def graphs(world):
    return {world.scan: world.graph}


@pytest.fixture(scope="session")
def landmarks(world):
    return LandmarkCache({ep.id: world.planted_landmarks(ep) for ep in world.episodes})


@pytest.fixture(scope="session")
def labels(world, graphs, landmarks):
    return label_dataset(world.episodes, graphs, world.captions, landmarks, ExactMatchSimilarity())


@pytest.fixture
def line_graph():
    """A - B - C along +y with edge weights 2 and 3."""
    vps = [Viewpoint("A", (0, 0, 0)), Viewpoint("B", (0, 2, 0)), Viewpoint("C", (0, 5, 0))]
    return NavGraph(vps, [("A", "B"), ("B", "C")], scan="line")


@pytest.fixture
def line_captions():
    t = CaptionTable()
    for a, b, cap in [("A", "B", "a wall with a mirror"), ("B", "A", "a kitchen"),
                      ("B", "C", "an open door leading to a hallway"), ("C", "B", "a wall with a mirror")]:
        t.add("line", a, b, cap)
    return t


# --- mock chat-completion endpoint --------------------------------------------

_OBS_RE = re.compile(r"Observation: \[(.*?)\]\. History:", re.DOTALL)


def hashed_choice(prompt: str) -> str:
    """Deterministic completion derived from the query part of the prompt."""
    query = prompt.rsplit("\n\nInput:", 1)[-1]
    m = _OBS_RE.search(query)
    letters = re.findall(r"(?:^|, )([A-Z])\. ", m.group(1)) if m else ["A"]
    k = int(hashlib.sha256(prompt.encode()).hexdigest(), 16) % len(letters)
    a = letters[k]
    return f"Imagination: something. Filtered observation: {a} matches the imagination. Action: {a}."


class MockServer:
    """Scriptable local endpoint.

    ``statuses`` is a queue of HTTP statuses to return before normal service;
    ``reply`` maps the request payload to completion text; ``token`` (if set)
    is the only accepted bearer token.
    """

    def __init__(self):
        self.statuses = []
        self.reply = lambda payload: hashed_choice(payload["messages"][0]["content"])
        self.similarity = None
        self.token = None
        self.requests = []
        self.lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with server.lock:
                    server.requests.append({"path": self.path, "body": body,
                                            "auth": self.headers.get("Authorization")})
                    status = server.statuses.pop(0) if server.statuses else 200
                if server.token and self.headers.get("Authorization") != f"Bearer {server.token}":
                    status = 401
                if status != 200:
                    self._send(status, {"error": "nope"})
                elif self.path.endswith("/similarity"):
                    self._send(200, server.similarity(body))
                else:
                    self._send(200, {"choices": [{"message": {"role": "assistant",
                                                              "content": server.reply(body)}}]})

            def _send(self, status, obj):
                data = json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    s = MockServer()
    yield s
    s.close()
