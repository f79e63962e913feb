from __future__ import annotations

from importlib import resources

import pytest

from cdgl import syntax as S
from cdgl.prover import check, parse_proofs

ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Remember one acceptance criterion's outcome for the summary."""
    ACCEPTANCE[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def corpus_text(name: str) -> str:
    return resources.files("cdgl").joinpath("corpus", name).read_text()


@pytest.fixture(scope="session")
def driving_module():
    return S.parse_module(corpus_text("driving.cdgl"))


@pytest.fixture(scope="session")
def driving_proof(driving_module):
    (p,) = parse_proofs(corpus_text("driving.cdglp"), driving_module.env)
    return p


@pytest.fixture(scope="session")
def driving_checked(driving_proof):
    p = driving_proof
    return check(p.ctx, p.proof, p.goal)
