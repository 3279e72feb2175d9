import numpy as np
import pytest

from jointnets.core import TraceArchive, edge_pairs


def archive_from_matrices(omega_draws, delta_draws=None, weight_draws=None,
                          labels=None, concentration=None):
    """Build a TraceArchive from dense per-draw matrices.

    omega_draws: (S, G, p, p); delta defaults to |omega| > 0, weights to 0.5.
    """
    omega_draws = np.asarray(omega_draws, dtype=float)
    S, G, p, _ = omega_draws.shape
    k, l = edge_pairs(p)
    if labels is None:
        labels = [f"cond{g + 1}" for g in range(G)]
    off = np.transpose(omega_draws[:, :, k, l], (1, 2, 0))
    diag = np.transpose(omega_draws[:, :, np.arange(p), np.arange(p)], (1, 2, 0))
    if delta_draws is None:
        delta = (np.abs(off) > 0).astype(np.uint8)
    else:
        delta_draws = np.asarray(delta_draws)
        delta = np.transpose(delta_draws[:, :, k, l], (1, 2, 0)).astype(np.uint8)
    if weight_draws is None:
        weights = np.full_like(off, 0.5)
    else:
        weight_draws = np.asarray(weight_draws, dtype=float)
        weights = np.transpose(weight_draws[:, :, k, l], (1, 2, 0))
    if concentration is None:
        concentration = np.ones(S)
    return TraceArchive(
        p=p,
        labels=list(labels),
        omega_offdiag=off,
        omega_diag=diag,
        delta=delta,
        weights=weights,
        concentration=np.asarray(concentration, dtype=float),
        iterations=np.arange(1, S + 1, dtype=np.int64),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
