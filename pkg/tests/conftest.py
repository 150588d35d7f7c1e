import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.circuits import build_circuit, sample_parameters  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_circuit():
    def _make(family="hea", n=4, depth=2, seed=0, cnot_wrap=True):
        r = np.random.default_rng(seed)
        return build_circuit(family, n, depth, sample_parameters(family, n, depth, r), cnot_wrap=cnot_wrap)
    return _make


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return str(path)
