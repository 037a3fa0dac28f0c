import numpy as np
import pytest

from nice.data import MatchRecord
from nice.tensor import SparseMaskedTensor

BASE = dict(
    user_id="a", match_id="m0", timestamp=1_400_000_000.0, duration=1800.0, version_index=0,
    season="S2014", queue_type="ranked_solo", map_id="11", champion_id=0, champion_type="Controller",
    role="support", lane="bottom", kills=2, deaths=3, assists=10, gold_earned=9000.0,
    gold_spent=8000.0, champion_level=14.0, win=True,
)


def make_record(**overrides) -> MatchRecord:
    return MatchRecord(**{**BASE, **overrides})


def planted_tensor(dims, rank, observed, seed, dense_slices=True):
    """Exact rank-``rank`` non-negative tensor observed on a random fraction of slices."""
    rng = np.random.default_rng(seed)
    I, J, K = dims
    U, T, F = rng.random((I, rank)), rng.random((J, rank)), rng.random((K, rank))
    full = np.einsum("ir,jr,kr->ijk", U, T, F)
    mask = rng.random((I, J)) < observed
    if not mask.any():
        mask[0, 0] = True
    return SparseMaskedTensor.from_dense(full, mask), (U, T, F)


@pytest.fixture
def record():
    return make_record


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
