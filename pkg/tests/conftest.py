import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cdcert.problems import SyntheticSpec, generate  # noqa: E402


@pytest.fixture(scope="session")
def seeded_problem():
    problem, x_star = generate(SyntheticSpec(n=100, p=400, sparsity=10, seed=42))
    return problem, x_star


@pytest.fixture(scope="session")
def small_problem():
    problem, x_star = generate(SyntheticSpec(n=30, p=12, sparsity=3, correlation=0.5, seed=7))
    return problem, x_star
