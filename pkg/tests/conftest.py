from __future__ import annotations

import numpy as np
import pytest

from bca.core import AdapterConfig, init_state


def unit_rows(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((m, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_state(
    m=4,
    k=2,
    d=8,
    tau=0.3,
    n1=100,
    n2=10,
    temperature=100.0,
    seed=0,
):
    rng = np.random.default_rng(np.random.Philox(key=seed))
    config = AdapterConfig(
        num_class_embeddings=m,
        num_classes=k,
        embedding_dim=d,
        tau=tau,
        init_count_embedding=n1,
        init_count_prior=n2,
        temperature=temperature,
    )
    return init_state(unit_rows(rng, m, d), config)


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.Philox(key=1234))
