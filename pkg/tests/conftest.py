import itertools

import numpy as np
import pytest

from ttamem.memory import MemoryEntry

_ids = itertools.count()


def make_entry(rep, label=None, uncertainty=0.0, age=0, features=None, group=None):
    """Hand-built entry; features default to the representation."""
    rep = np.asarray(rep, dtype=np.float64)
    sid = next(_ids)
    return MemoryEntry(
        sample_id=sid,
        features=rep.copy() if features is None else np.asarray(features, dtype=np.float64),
        pseudo_label=int(np.argmax(rep)) if label is None else label,
        uncertainty=uncertainty,
        representation=rep,
        age=age,
        group_id=sid if group is None else group,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, description, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
