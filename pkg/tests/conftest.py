from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from dpefb.game_tree import compute_profiles, load_tree, parse_tree
from dpefb.harness import generate_random_tree

FIXTURES = Path(__file__).parent / "fixtures"

# T4 ids
R, A1, A2, L1, L2, V2, B1, B2 = 0, 1, 2, 3, 4, 5, 6, 7
MU1 = {A1: L1, A2: V2, B1: 8, B2: 9}
MU2 = {A1: L2, A2: V2, B1: 8, B2: 9}


@pytest.fixture(scope="session")
def t4():
    return load_tree(FIXTURES / "t4.tree")


@pytest.fixture(scope="session")
def t4_profiles(t4):
    return compute_profiles(t4)


@pytest.fixture
def mu1():
    return dict(MU1)


@pytest.fixture
def mu2():
    return dict(MU2)


def random_tree(seed: int, depth: int = 3, branch: int = 3, p_infoset: float = 0.4, law: str = "uniform"):
    return parse_tree(generate_random_tree(depth, branch, law, np.random.default_rng(seed), p_infoset=p_infoset))


def small_corpus(count: int, seed: int, *, max_depth: int = 4, max_branch: int = 4,
                 max_strategies: int = 20_000, p_infoset: float = 0.3):
    """Random trees with depth <= max_depth and branch <= max_branch.

    Trees whose strategy count exceeds ``max_strategies`` are redrawn so the
    brute-force oracles stay fast.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        depth = int(rng.integers(1, max_depth + 1))
        branch = int(rng.integers(2, max_branch + 1))
        tree = parse_tree(generate_random_tree(depth, branch, "uniform", rng, p_infoset=p_infoset))
        if compute_profiles(tree).num_strategies <= max_strategies:
            out.append(tree)
    return out


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE: list[dict] = []


@contextmanager
def criterion(number: int, title: str):
    rec = {"number": number, "title": title, "ok": False, "detail": ""}
    ACCEPTANCE.append(rec)
    try:
        yield rec
        rec["ok"] = True
    finally:
        status = "PASS" if rec["ok"] else "FAIL"
        print(f"\n[{status}] criterion {number}: {title} {rec['detail']}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for rec in sorted(ACCEPTANCE, key=lambda r: r["number"]):
        status = "PASS" if rec["ok"] else "FAIL"
        terminalreporter.write_line(f"{status}  {rec['number']:>2}. {rec['title']}  {rec['detail']}")
