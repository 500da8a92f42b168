import numpy as np
import pytest

from gpagraph import AttractivenessSpec, DensitySpec, DomainSpec, ModelSpec

# criterion label -> list of (ok, detail), filled by test_acceptance
ACCEPTANCE = {}


def record(criterion: str, ok: bool, detail: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    def key(c):
        num = "".join(ch for ch in c if ch.isdigit())
        return (int(num) if num else 0, c)
    for crit in sorted(ACCEPTANCE, key=key):
        rows = ACCEPTANCE[crit]
        ok = all(r[0] for r in rows)
        details = "; ".join(d for _, d in rows if d)
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {crit}  {details}")


@pytest.fixture
def torus2():
    return DomainSpec("torus", 2)


@pytest.fixture
def uniform():
    return DensitySpec()


def gpa(text):
    return ModelSpec("GPA", AttractivenessSpec.parse(text))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
