"""Shared domain types, density evaluations, and deterministic transforms.

Everything here is a pure function of its inputs (safe to call concurrently);
the dataclasses are plain containers with validation helpers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    """Invalid configuration: bad scenario/manifest keys, mismatched inputs."""


class IngestionError(ValueError):
    """Malformed input file (carries row/column location where known)."""


class NumericalDegeneracyError(RuntimeError):
    """A Cholesky factorization failed inside the sampler."""

    def __init__(self, message, condition=None, column=None, iteration=None):
        super().__init__(message)
        self.condition = condition
        self.column = column
        self.iteration = iteration


class DivergenceError(RuntimeError):
    """Runaway stick extension in a mixture component (mis-set M or base variance)."""


# ---------------------------------------------------------------------------
# RNG substreams
# ---------------------------------------------------------------------------

def substream(seed, *tags):
    """Independent, reproducible generator derived from a master seed.

    The stream is keyed by the string tags (e.g. ``("precision", label)``), so
    per-condition and per-component updates can run in any order, or in
    parallel, without changing results. Key derivation: the SHA-256 digest of
    the joined tags is appended to the seed as extra entropy words for
    ``numpy.random.SeedSequence``.
    """
    digest = hashlib.sha256("\x1f".join(str(t) for t in tags).encode()).digest()
    words = np.frombuffer(digest, dtype=np.uint32).tolist()
    ss = np.random.SeedSequence([int(seed) & (2**63 - 1)] + words)
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# Edge indexing helpers (canonical order: upper triangle, row-major, k < l)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def edge_pairs(p):
    """(k, l) index arrays for the p(p-1)/2 upper-triangle edges."""
    k, l = np.triu_indices(p, k=1)
    k.setflags(write=False)
    l.setflags(write=False)
    return k, l


def n_edges(p):
    return p * (p - 1) // 2


def upper_values(mat):
    """Flatten a symmetric matrix to the canonical edge vector."""
    p = mat.shape[-1]
    k, l = edge_pairs(p)
    return mat[..., k, l]


def symmetric_from_upper(p, values, diag=0.0):
    """Build a symmetric p x p matrix from a canonical edge vector."""
    k, l = edge_pairs(p)
    out = np.zeros(values.shape[:-1] + (p, p), dtype=float)
    out[..., k, l] = values
    out[..., l, k] = values
    idx = np.arange(p)
    out[..., idx, idx] = diag
    return out


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hyperparams:
    """Fixed constants of the model plus chain controls.

    lambda0      rate of the double-exponential spike (large -> sharp spike)
    alpha        exponential rate on precision diagonals
    a_tau, b_tau Gamma shape/rate on slab precisions (ratio < 1 -> thick tails)
    a_m, b_m     Gamma shape/rate on the mixture concentration M
    sigma_eta_sq base-measure variance for the edge-effect atoms
    phi          degrees of freedom of the t approximation to the logistic link
    link         "logit" (t-approximated logistic) or "probit" (exact)
    """

    lambda0: float = 100.0
    alpha: float = 1.0
    a_tau: float = 0.1
    b_tau: float = 1.0
    a_m: float = 1.0
    b_m: float = 1.0
    sigma_eta_sq: float = 1.0
    phi: float = 7.3
    edge_threshold: float = 0.1
    n_burnin: int = 1000
    n_iter: int = 5000
    thin: int = 1
    seed: int = 0
    link: str = "logit"

    def __post_init__(self):
        positive = {
            "lambda0": self.lambda0, "alpha": self.alpha, "a_tau": self.a_tau,
            "b_tau": self.b_tau, "a_m": self.a_m, "b_m": self.b_m,
            "sigma_eta_sq": self.sigma_eta_sq,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not self.phi > 2:
            raise ValueError(f"phi must exceed 2 for a positive link scale, got {self.phi}")
        if self.edge_threshold < 0:
            raise ValueError("edge_threshold must be nonnegative")
        if self.n_burnin < 0 or self.n_iter <= 0 or self.thin <= 0:
            raise ValueError("n_burnin must be >= 0; n_iter and thin must be positive")
        if self.link not in ("logit", "probit"):
            raise ValueError(f"link must be 'logit' or 'probit', got {self.link!r}")

    @property
    def link_base_variance(self):
        """Base variance of the latent link scale: pi^2(phi-2)/(3 phi) under
        the t approximation, 1 under the exact probit."""
        if self.link == "probit":
            return 1.0
        return np.pi**2 * (self.phi - 2.0) / (3.0 * self.phi)

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ConditionData:
    """Sufficient statistics of one condition's pooled, prewhitened series."""

    scatter: np.ndarray
    n_obs: int
    p: int
    label: str = ""

    def __post_init__(self):
        scatter = np.asarray(self.scatter, dtype=float)
        object.__setattr__(self, "scatter", scatter)
        if scatter.shape != (self.p, self.p):
            raise ValueError(f"scatter must be {self.p} x {self.p}, got {scatter.shape}")
        if not np.allclose(scatter, scatter.T, atol=1e-8 * max(1.0, np.abs(scatter).max())):
            raise ValueError("scatter must be symmetric")
        if self.n_obs < 0:
            raise ValueError("n_obs must be nonnegative")
        scale = max(1.0, float(np.abs(scatter).max()))
        if np.linalg.eigvalsh((scatter + scatter.T) / 2.0).min() < -1e-8 * scale:
            raise ValueError("scatter must be nonnegative definite")


@dataclass(eq=False)
class PrecisionState:
    """Per-condition precision matrix with edge indicators and latent scales.

    tau_slab holds the slab precisions, tau_spike_var the spike variance
    latents; both are defined off the diagonal only (diagonal kept at NaN so
    accidental use is loud).
    """

    omega: np.ndarray
    delta: np.ndarray
    tau_slab: np.ndarray
    tau_spike_var: np.ndarray

    def validate(self):
        p = self.omega.shape[0]
        np.linalg.cholesky(self.omega)  # raises LinAlgError if not SPD
        if not np.array_equal(self.delta, self.delta.T) or np.any(np.diag(self.delta) != 0):
            raise ValueError("delta must be symmetric with zero diagonal")
        if not np.isin(self.delta, (0, 1)).all():
            raise ValueError("delta must be binary")
        k, l = edge_pairs(p)
        for name, mat in (("tau_slab", self.tau_slab), ("tau_spike_var", self.tau_spike_var)):
            if not (mat[k, l] > 0).all():
                raise ValueError(f"{name} off-diagonals must be strictly positive")
            if not np.array_equal(mat[k, l], mat[l, k]):
                raise ValueError(f"{name} must be symmetric")


@dataclass(eq=False)
class DPComponentState:
    """One stick-breaking mixture component over the edges.

    assignments/slice_vars follow the canonical edge order of edge_pairs(p);
    entry e belongs to atom assignments[e].
    """

    atoms: np.ndarray
    sticks: np.ndarray
    assignments: np.ndarray
    slice_vars: np.ndarray

    def weights(self):
        """Mixture weights nu_h = v_h * prod_{l<h} (1 - v_l)."""
        v = self.sticks
        log_surv = np.concatenate(([0.0], np.cumsum(np.log1p(-v))[:-1]))
        return v * np.exp(log_surv)

    def validate(self):
        if not ((self.sticks > 0) & (self.sticks < 1)).all():
            raise ValueError("sticks must lie in (0, 1)")
        nu = self.weights()
        if not (nu > 0).all() or nu.sum() >= 1.0 + 1e-12:
            raise ValueError("mixture weights must be positive with partial sums < 1")
        if self.assignments.min() < 0 or self.assignments.max() >= len(self.atoms):
            raise ValueError("assignments must point at existing atoms")
        if len(self.assignments) != len(self.slice_vars):
            raise ValueError("every edge needs an assignment and a slice variable")


@dataclass(eq=False)
class AugmentationState:
    """Per-condition latent Gaussians (u) and t scale-mixture latents."""

    u: np.ndarray             # (G, p, p), sign matches delta
    sigma_phi_sq: np.ndarray  # (G, p, p), strictly positive off-diagonal

    def validate(self, deltas):
        for g, delta in enumerate(deltas):
            p = delta.shape[0]
            k, l = edge_pairs(p)
            if not np.array_equal(self.u[g, k, l] > 0, delta[k, l] == 1):
                raise ValueError(f"sign of u inconsistent with delta in condition {g}")
            if not (self.sigma_phi_sq[g, k, l] > 0).all():
                raise ValueError("sigma_phi_sq must be strictly positive")


@dataclass(eq=False)
class TraceArchive:
    """Post-burn-in draws, stored edge-major so per-edge traces are contiguous.

    Shapes: omega_offdiag/delta/weights are (G, E, S); omega_diag is (G, p, S);
    concentration and iterations are (S,).
    """

    p: int
    labels: list
    omega_offdiag: np.ndarray
    omega_diag: np.ndarray
    delta: np.ndarray
    weights: np.ndarray
    concentration: np.ndarray
    iterations: np.ndarray

    @property
    def n_conditions(self):
        return len(self.labels)

    @property
    def n_draws(self):
        return int(self.iterations.shape[0])

    def omega_matrix(self, g, s):
        """Reconstruct the full precision matrix of draw s, condition g."""
        mat = symmetric_from_upper(self.p, self.omega_offdiag[g, :, s])
        mat[np.arange(self.p), np.arange(self.p)] = self.omega_diag[g, :, s]
        return mat

    def mean_precision(self, g):
        mat = symmetric_from_upper(self.p, self.omega_offdiag[g].mean(axis=1))
        mat[np.arange(self.p), np.arange(self.p)] = self.omega_diag[g].mean(axis=1)
        return mat

    def partial_corr_draws(self, g):
        """(E, S) partial-correlation draws for condition g."""
        k, l = edge_pairs(self.p)
        d = self.omega_diag[g]  # (p, S)
        denom = np.sqrt(d[k, :] * d[l, :])
        return -self.omega_offdiag[g] / denom

    def validate(self):
        lengths = {self.omega_offdiag.shape[2], self.omega_diag.shape[2],
                   self.delta.shape[2], self.weights.shape[2],
                   self.concentration.shape[0], self.iterations.shape[0]}
        if len(lengths) != 1:
            raise ValueError("all draw sequences must have equal length")
        if not ((self.weights >= 0) & (self.weights <= 1)).all():
            raise ValueError("stored weights must lie in [0, 1]")
        for g in range(self.n_conditions):
            for s in range(self.n_draws):
                np.linalg.cholesky(self.omega_matrix(g, s))

    def save(self, path):
        np.savez_compressed(
            path,
            format_version=np.array(FORMAT_VERSION),
            p=np.array(self.p),
            labels=np.array(self.labels, dtype=object).astype(str),
            omega_offdiag=self.omega_offdiag,
            omega_diag=self.omega_diag,
            delta=self.delta,
            weights=self.weights,
            concentration=self.concentration,
            iterations=self.iterations,
        )

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as f:
            version = int(f["format_version"])
            if version > FORMAT_VERSION:
                raise IngestionError(f"archive format version {version} is newer than supported")
            return cls(
                p=int(f["p"]),
                labels=[str(x) for x in f["labels"]],
                omega_offdiag=f["omega_offdiag"],
                omega_diag=f["omega_diag"],
                delta=f["delta"],
                weights=f["weights"],
                concentration=f["concentration"],
                iterations=f["iterations"],
            )


# ---------------------------------------------------------------------------
# Densities and transforms
# ---------------------------------------------------------------------------

def logistic_link(eta0, etag):
    """Edge probability exp(s)/(1+exp(s)) at s = eta0 + etag, overflow-safe.

    Invariant under the shift (eta0 + c, etag - c); s is the log odds of the
    edge being present.
    """
    s = np.asarray(eta0, dtype=float) + np.asarray(etag, dtype=float)
    out = expit(s)
    if out.ndim == 0:
        return float(out)
    return out


def log_spike_density(omega, lambda0):
    """Log double-exponential density log(lambda0/2) - lambda0 |omega|."""
    if not lambda0 > 0:
        raise ValueError(f"lambda0 must be strictly positive, got {lambda0}")
    omega = np.asarray(omega, dtype=float)
    out = np.log(lambda0 / 2.0) - lambda0 * np.abs(omega)
    if out.ndim == 0:
        return float(out)
    return out


def log_slab_density(omega, tau):
    """Log Normal(0, 1/tau) density at omega; tau is a precision."""
    tau = np.asarray(tau, dtype=float)
    if not (tau > 0).all():
        raise ValueError("tau must be strictly positive")
    omega = np.asarray(omega, dtype=float)
    out = 0.5 * (np.log(tau) - np.log(2.0 * np.pi)) - 0.5 * tau * omega**2
    if out.ndim == 0:
        return float(out)
    return out


def partial_correlations(omega):
    """Partial correlations rho_kl = -omega_kl / sqrt(omega_kk omega_ll).

    The diagonal is set to 1. Raises ValueError if omega is not symmetric
    positive definite.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError("omega must be a square matrix")
    if not np.allclose(omega, omega.T, atol=1e-10 * max(1.0, np.abs(omega).max())):
        raise ValueError("omega must be symmetric")
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ValueError("omega must be positive definite") from None
    d = np.sqrt(np.diag(omega))
    rho = -omega / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return rho


def fisher_z(rho):
    """Variance-stabilizing transform 0.5 log((1+rho)/(1-rho))."""
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho_arr) >= 1):
        raise ValueError("fisher_z requires |rho| < 1")
    out = np.arctanh(rho_arr)
    if out.ndim == 0:
        return float(out)
    return out
