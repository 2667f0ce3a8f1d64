"""Shared fixtures.  BLAS thread pinning happens before numpy's first
import so runtime assertions reflect a single CPU core."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from switchtext import RunConfig, generate_synthetic_corpus  # noqa: E402
from switchtext.training import train  # noqa: E402


@pytest.fixture(scope="session")
def clean_corpus():
    """Small noise-free corpus: labels fully recoverable from keywords."""
    return generate_synthetic_corpus(240, positive_fraction=0.4, noise=0.0, seed=11)


@pytest.fixture(scope="session")
def toy_run(clean_corpus, tmp_path_factory):
    """A quick switch-variant training run shared by interpret/eval tests."""
    out = tmp_path_factory.mktemp("toy_run")
    config = RunConfig(
        variant="switch", num_layers=2, num_heads=2, num_experts=2,
        d_model=32, d_ff=64, max_len=64, dropout=0.1, seed=5,
        epochs=14, batch_size=16, grad_accumulation=1, peak_lr=2e-3,
        early_stopping=False, min_frequency=1, output_dir=str(out),
    )
    return train(config, clean_corpus, out_dir=str(out), quiet=True)


@pytest.fixture(scope="session")
def smooth_toy_run(tmp_path_factory):
    """Dense 1-layer model on short notes: a smooth target for attribution
    completeness checks (top-1 routing makes the switch logit discontinuous
    along the interpolation path)."""
    corpus = generate_synthetic_corpus(200, positive_fraction=0.4, noise=0.0,
                                       seed=11, min_tokens=6, max_tokens=14)
    config = RunConfig(
        variant="dense", num_layers=1, num_heads=2, d_model=16, d_ff=32,
        max_len=16, dropout=0.0, seed=5, epochs=12, batch_size=16,
        grad_accumulation=1, peak_lr=2e-3, early_stopping=False, min_frequency=1,
    )
    return train(config, corpus, out_dir=None, quiet=True)
