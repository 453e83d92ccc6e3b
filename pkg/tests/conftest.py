import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
WORKER_SCRIPT = TESTS_DIR / "workers" / "refworker.py"
CONFORMANCE_DIR = TESTS_DIR / "data" / "conformance"

# Built by `npm run build` inside worker-ts/; most tests never need it.
NODE_WORKER = TESTS_DIR.parent / "worker-ts" / "dist" / "worker.js"


def worker_command(profile: str = "identity") -> str:
    return f"{sys.executable} {WORKER_SCRIPT} --profile {profile}"


@pytest.fixture
def identity_worker_cmd():
    return worker_command("identity")


@pytest.fixture
def count_worker_cmd():
    return worker_command("count")


def node_worker_command(profile: str = "identity") -> str:
    return f"node {NODE_WORKER} --profile {profile}"


requires_node_worker = pytest.mark.skipif(
    not NODE_WORKER.exists(),
    reason="node reference worker not built (run npm install && npm run build in worker-ts/)",
)
