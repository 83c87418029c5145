from __future__ import annotations

import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from tiara.embeddings import EmbeddingTable
from tiara.env import Corpus, ItemRecord, make_synthetic_env
from tiara.harness import Environment


@pytest.fixture(scope="session")
def tiny_table() -> EmbeddingTable:
    return EmbeddingTable(
        {"cat": np.array([1.0, 0.0]), "dog": np.array([0.0, 1.0]), "fish": np.array([1.0, 1.0])}, 2
    )


@pytest.fixture
def trace_corpus() -> Corpus:
    """The 3-tag, 5-item corpus used for the hand-traced Tiara run."""
    return Corpus.from_items(
        [
            ItemRecord("i1", ("fish",), score=1.0),
            ItemRecord("i2", ("cat", "fish"), score=5.0),
            ItemRecord("i3", ("dog",), score=2.0),
            ItemRecord("i4", ("cat",), score=4.0),
            ItemRecord("i5", ("cat", "dog"), score=3.0),
        ]
    )


class FifoOracle:
    """Deterministic oracle returning each tag's items in corpus order."""

    def __init__(self, corpus: Corpus) -> None:
        self.corpus = corpus
        self.call_count = 0
        self._next: dict[str, int] = {}

    def query(self, tag: str) -> ItemRecord | None:
        self.call_count += 1
        idx = self.corpus.tag_index.get(tag, ())
        k = self._next.get(tag, 0)
        if k >= len(idx):
            return None
        self._next[tag] = k + 1
        return self.corpus.items[idx[k]]


@pytest.fixture(scope="session")
def small_syn():
    return make_synthetic_env(300, 60, 8, seed=11)


@pytest.fixture(scope="session")
def small_env(small_syn) -> Environment:
    return Environment(small_syn.scorer, small_syn.table, small_syn.corpus)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class LiveServer:
    """Runs a FastAPI app under uvicorn on a loopback port in a thread."""

    def __init__(self, app) -> None:
        import uvicorn

        self.port = free_port()
        self.url = f"http://127.0.0.1:{self.port}"
        self.server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="warning"))
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> LiveServer:
        self.thread.start()
        deadline = time.time() + 10
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10)


def write_lines(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter) -> None:
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            detail = props.get("detail", "")
            rows.append((props["criterion"], "PASS" if rep.passed else "FAIL", detail))
    if rows:
        terminalreporter.section("acceptance criteria")
        for crit, status, detail in sorted(rows):
            terminalreporter.write_line(f"{status}  {crit}  {detail}")
