from __future__ import annotations

import json
import shutil
import socket
from pathlib import Path

import pytest

from threatsva.gateway import GatewayConfig, LlmGateway
from threatsva.knowledge import load_knowledge_base
from threatsva.rtl_context import load_design

FIXTURES = Path(__file__).parent / "fixtures"
DESIGNS = FIXTURES / "designs"
LISTINGS = FIXTURES / "listings"
MOCK = FIXTURES / "mock"
GOLDENS = FIXTURES / "goldens"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def kb():
    return load_knowledge_base()


@pytest.fixture
def dmi_ctx():
    return load_design(DESIGNS / "dmi_jtag.sv")


@pytest.fixture
def uart_ctx():
    return load_design(DESIGNS / "uart_dbg.sv")


def listing(n: int) -> str:
    return (LISTINGS / f"listing_{n}.sva").read_text()


def listing_hints(n: int) -> tuple[str | None, str | None]:
    man = json.loads((LISTINGS / "manifest.json").read_text())[f"listing_{n}"]
    return man["clock"], man["reset"]


def write_mock(root: Path, stage: str, replies: dict[str, str]) -> Path:
    """Create ``root/stage/<key>.txt`` files and return ``root``."""
    d = root / stage
    d.mkdir(parents=True, exist_ok=True)
    for key, text in replies.items():
        (d / f"{key}.txt").write_text(text, encoding="utf-8")
    return root


def mock_gateway(root: Path, **cfg) -> LlmGateway:
    return LlmGateway(GatewayConfig(mock_dir=root, **cfg))


def e2e_with_polish(tmp_path: Path, variant: str) -> Path:
    """Copy the end-to-end fixtures and overlay one refine-stage reply."""
    root = tmp_path / f"mock_{variant}"
    shutil.copytree(MOCK / "e2e", root)
    shutil.copytree(MOCK / "polish" / variant / "refine", root / "refine")
    return root


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly if anything tries to open a socket."""
    attempts = []

    def guard(*args, **kwargs):
        attempts.append(args)
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
    return attempts
