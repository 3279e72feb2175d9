"""Block Gibbs sampler for joint estimation of multiple precision matrices.

One sweep updates, in order: each condition's precision columns and edge
indicators, the truncated-Gaussian link latents, the stick-breaking mixture
components (one shared, one per condition), the concentration parameter, and
finally the edge-probability matrices consumed by the next sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotrf, dtrtrs
from scipy.special import expit, ndtr, ndtri

from .core import (
    AugmentationState,
    ConfigurationError,
    DivergenceError,
    DPComponentState,
    NumericalDegeneracyError,
    PrecisionState,
    TraceArchive,
    edge_pairs,
    n_edges,
    substream,
    symmetric_from_upper,
)

_MAX_COMPONENTS = 10_000
_TAU_FLOOR = 1e-300
_WALD_GUARD = 1e-100  # below this |omega| the inverse-Gaussian mean would overflow


@dataclass(eq=False)
class ChainState:
    """Mutable state of one chain; owned exclusively by that chain."""

    labels: list
    p: int
    precisions: list
    dp_components: list  # index 0 = shared component, 1..G per condition
    augmentation: AugmentationState
    concentration: float
    iteration: int
    streams: dict
    label_order: tuple  # condition indices sorted by label; fixes reduction order

    @property
    def n_conditions(self):
        return len(self.labels)


def _dp_tag(state_labels, comp_index):
    return "shared" if comp_index == 0 else state_labels[comp_index - 1]


@lru_cache(maxsize=64)
def _col_complements(p):
    return tuple(np.delete(np.arange(p), j) for j in range(p))


@lru_cache(maxsize=64)
def _col_meshes(p):
    """Open index meshes selecting the (p-1) x (p-1) block without row/col j."""
    out = []
    for ind in _col_complements(p):
        out.append((ind[:, None], ind[None, :]))
    return tuple(out)


def init_chain(data, hp, seed=None):
    """Deterministic initial state: identity precisions, empty edge sets,
    prior-mean scales, one atom per mixture component."""
    if len(data) == 0:
        raise ConfigurationError("at least one condition is required")
    p = data[0].p
    if p < 2:
        raise ConfigurationError(f"need at least 2 nodes, got p={p}")
    for d in data:
        if d.p != p:
            raise ConfigurationError(
                f"all conditions must share the same node count; got {d.p} and {p}")
    labels = [d.label for d in data]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"condition labels must be distinct, got {labels}")
    if seed is None:
        seed = hp.seed

    G = len(data)
    E = n_edges(p)
    streams = {}
    for label in labels:
        for role in ("precision", "indicators", "augmentation"):
            streams[(role, label)] = substream(seed, role, label)
    for m in range(G + 1):
        tag = _dp_tag(labels, m)
        streams[("dp", tag)] = substream(seed, "dp", tag)
    streams[("concentration",)] = substream(seed, "concentration")

    concentration = float(streams[("concentration",)].gamma(hp.a_m, 1.0 / hp.b_m))

    precisions = []
    for _ in range(G):
        tau_slab = np.full((p, p), hp.a_tau / hp.b_tau)
        tau_spike = np.full((p, p), 2.0 / hp.lambda0**2)
        np.fill_diagonal(tau_slab, np.nan)
        np.fill_diagonal(tau_spike, np.nan)
        precisions.append(PrecisionState(
            omega=np.eye(p),
            delta=np.zeros((p, p), dtype=np.int8),
            tau_slab=tau_slab,
            tau_spike_var=tau_spike,
        ))

    components = []
    for m in range(G + 1):
        rng = streams[("dp", _dp_tag(labels, m))]
        atom = rng.normal(0.0, np.sqrt(hp.sigma_eta_sq), size=1)
        stick = np.clip(rng.beta(1.0, concentration, size=1), 1e-15, 1 - 1e-15)
        slice_vars = stick[0] * _open_unit_uniform(rng, E)
        components.append(DPComponentState(
            atoms=atom,
            sticks=stick,
            assignments=np.zeros(E, dtype=np.int64),
            slice_vars=slice_vars,
        ))

    augmentation = AugmentationState(
        u=np.zeros((G, p, p)),
        sigma_phi_sq=np.ones((G, p, p)),
    )

    return ChainState(
        labels=labels,
        p=p,
        precisions=precisions,
        dp_components=components,
        augmentation=augmentation,
        concentration=concentration,
        iteration=0,
        streams=streams,
        label_order=tuple(int(i) for i in np.argsort(labels, kind="stable")),
    )


# ---------------------------------------------------------------------------
# Precision update (column-wise block Gibbs)
# ---------------------------------------------------------------------------

def update_precision(g, state, data_g, hp):
    """Resample condition g's precision matrix column by column.

    For column j with the j-th row/column moved last: gamma ~ Gamma(n/2 + 1,
    rate (S_jj + alpha)/2) and beta ~ N(-C s_12, C) with
    C = ((S_jj + alpha) Omega11^{-1} + D_v^{-1})^{-1}; the rebuilt matrix is
    positive definite by construction. The running inverse of omega is kept
    updated through rank-one block identities so each column costs one small
    Cholesky factorization.
    """
    ps = state.precisions[g]
    p = state.p
    omega = ps.omega
    S = data_g.scatter
    n = data_g.n_obs
    rng = state.streams[("precision", state.labels[g])]

    with np.errstate(divide="ignore"):
        V = np.where(ps.delta == 1, 1.0 / ps.tau_slab, ps.tau_spike_var)

    try:
        cho = cho_factor(omega, lower=True, check_finite=False)
        sigma = cho_solve(cho, np.eye(p), check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalDegeneracyError(
            f"precision matrix for condition {state.labels[g]!r} lost positive definiteness",
            condition=g) from None
    sigma = (sigma + sigma.T) / 2.0

    complements = _col_complements(p)
    meshes = _col_meshes(p)
    diag_idx = np.arange(p - 1)
    z_all = rng.standard_normal((p, p - 1))
    gam_all = rng.standard_gamma(n / 2.0 + 1.0, size=p)
    for j in range(p):
        ind = complements[j]
        mesh = meshes[j]
        s12 = S[ind, j]
        v = V[ind, j]

        sig12 = sigma[ind, j]
        inv11 = sigma[mesh]
        inv11 -= sig12[:, None] * (sig12 / sigma[j, j])[None, :]

        prec = (S[j, j] + hp.alpha) * inv11
        prec[diag_idx, diag_idx] += 1.0 / v
        L, info = dpotrf(prec, lower=1, overwrite_a=1)
        if info != 0:
            raise NumericalDegeneracyError(
                f"conditional covariance degenerate at condition "
                f"{state.labels[g]!r}, column {j}",
                condition=g, column=j)
        half, _ = dtrtrs(L, -s12, lower=1)
        beta, _ = dtrtrs(L, half + z_all[j], lower=1, trans=1)
        gam = gam_all[j] * 2.0 / (S[j, j] + hp.alpha)

        w = inv11 @ beta
        omega[ind, j] = beta
        omega[j, ind] = beta
        omega[j, j] = gam + beta @ w

        sigma[mesh] = inv11 + w[:, None] * (w / gam)[None, :]
        wg = w / gam
        sigma[ind, j] = -wg
        sigma[j, ind] = -wg
        sigma[j, j] = 1.0 / gam
    return ps


# ---------------------------------------------------------------------------
# Indicator and latent-scale update
# ---------------------------------------------------------------------------

def update_indicators(g, state, hp, weights_g):
    """Resample edge indicators and redraw the spike/slab scale latents.

    The spike side is collapsed over its variance latent (marginal double
    exponential), which mixes better and leaves the stationary distribution
    unchanged; the latent is then redrawn from its exact conditional.
    """
    ps = state.precisions[g]
    p = state.p
    k, l = edge_pairs(p)
    rng = state.streams[("indicators", state.labels[g])]

    w = np.asarray(weights_g, dtype=float)[k, l]
    om = ps.omega[k, l]
    tau = ps.tau_slab[k, l]

    with np.errstate(divide="ignore"):
        logp1 = np.log(w) + 0.5 * (np.log(tau) - np.log(2 * np.pi)) - 0.5 * tau * om**2
        logp0 = np.log1p(-w) + np.log(hp.lambda0 / 2.0) - hp.lambda0 * np.abs(om)
    prob1 = expit(logp1 - logp0)
    delta = (rng.random(om.shape) < prob1).astype(np.int8)

    # Slab precisions: conjugate Gamma(a + delta/2, b + delta omega^2/2); for
    # spike edges this reduces to a fresh prior draw.
    tau_new = rng.gamma(hp.a_tau + 0.5 * delta, 1.0 / (hp.b_tau + 0.5 * delta * om**2))
    tau_new = np.maximum(tau_new, _TAU_FLOOR)

    # Spike variances: reciprocal inverse-Gaussian for spike edges, prior
    # exponential otherwise (and at omega exactly 0).
    absom = np.abs(om)
    prior_scale = 2.0 / hp.lambda0**2
    tstar = rng.exponential(prior_scale, size=om.shape)
    spike = delta == 0
    regular = spike & (absom >= _WALD_GUARD)
    if regular.any():
        draws = rng.wald(hp.lambda0 / absom[regular], hp.lambda0**2)
        tstar[regular] = 1.0 / draws
    denormal = spike & (absom > 0) & (absom < _WALD_GUARD)
    if denormal.any():
        # limiting conditional as |omega| -> 0 (Levy regime of the Wald draw)
        tstar[denormal] = rng.chisquare(1.0, size=int(denormal.sum())) / hp.lambda0**2
    tstar = np.maximum(tstar, _TAU_FLOOR)

    ps.delta[k, l] = delta
    ps.delta[l, k] = delta
    ps.tau_slab[k, l] = tau_new
    ps.tau_slab[l, k] = tau_new
    ps.tau_spike_var[k, l] = tstar
    ps.tau_spike_var[l, k] = tstar
    return ps


# ---------------------------------------------------------------------------
# Truncated-normal link latents
# ---------------------------------------------------------------------------

def _open_unit_uniform(rng, size):
    """Uniform draws in the open interval (0, 1)."""
    u = rng.random(size)
    bad = u == 0.0
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u

def _tail_exponential(a, rng):
    """Standard normal conditioned on Z >= a via exponential proposals."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    z = np.empty_like(a)
    todo = np.ones(a.shape, dtype=bool)
    while todo.any():
        idx = np.flatnonzero(todo)
        cand = a[idx] + rng.exponential(1.0, size=idx.size) / lam[idx]
        accept = rng.random(idx.size) <= np.exp(-0.5 * (cand - lam[idx]) ** 2)
        z[idx[accept]] = cand[accept]
        todo[idx[accept]] = False
    return z


def _std_normal_lower_trunc(a, rng):
    """Draws of Z | Z >= a, elementwise; strictly above a."""
    a = np.asarray(a, dtype=float)
    z = np.empty_like(a)
    easy = a < 6.0
    if easy.any():
        ae = a[easy]
        tail = ndtr(-ae)
        t = np.maximum(rng.random(ae.shape) * tail, np.finfo(float).tiny)
        ze = -ndtri(t)
        bad = ze <= ae  # rounding collapsed onto the boundary; never return it
        if bad.any():
            ze[bad] = _tail_exponential(ae[bad], rng)
        z[easy] = ze
    hard = ~easy
    if hard.any():
        z[hard] = _tail_exponential(a[hard], rng)
    return z


def truncated_normal_signed(mu, sigma, positive, rng):
    """Sample N(mu, sigma^2) restricted to (0, inf) where positive, else
    (-inf, 0]; the magnitude is computed shift-free so the sign is exact."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    a = np.where(positive, -mu, mu) / sigma
    y = _std_normal_lower_trunc(a, rng)
    mag = sigma * (y - a)
    return np.where(positive, mag, -mag)


def update_augmentation(state, hp):
    """Resample the latent Gaussians u (sign-locked to the indicators) and,
    under the logistic approximation, the per-edge t scale latents."""
    p = state.p
    k, l = edge_pairs(p)
    base_var = hp.link_base_variance
    shared = state.dp_components[0]
    eta0 = shared.atoms[shared.assignments]

    for g in range(state.n_conditions):
        rng = state.streams[("augmentation", state.labels[g])]
        comp = state.dp_components[g + 1]
        mu = eta0 + comp.atoms[comp.assignments]
        sphi = state.augmentation.sigma_phi_sq[g, k, l]
        sd = np.sqrt(base_var * sphi)
        positive = state.precisions[g].delta[k, l] == 1
        u = truncated_normal_signed(mu, sd, positive, rng)
        state.augmentation.u[g, k, l] = u
        state.augmentation.u[g, l, k] = u
        if hp.link == "logit":
            resid_sq = (u - mu) ** 2 / base_var
            draw = rng.gamma((hp.phi + 1.0) / 2.0, 2.0 / (hp.phi + resid_sq))
            sphi_new = 1.0 / np.maximum(draw, _TAU_FLOOR)
            state.augmentation.sigma_phi_sq[g, k, l] = sphi_new
            state.augmentation.sigma_phi_sq[g, l, k] = sphi_new
    return state.augmentation


# ---------------------------------------------------------------------------
# Mixture component updates (slice sampler)
# ---------------------------------------------------------------------------

def _component_observations(m, state, hp):
    """Per-edge Gaussian pseudo-observations for component m, summarized as
    precision sums A and precision-weighted residual sums B.

    The shared component sees one residual per condition per edge; reductions
    run in label-sorted order so condition permutations cannot perturb
    floating-point sums.
    """
    p = state.p
    k, l = edge_pairs(p)
    base_var = hp.link_base_variance
    shared = state.dp_components[0]
    eta0 = shared.atoms[shared.assignments]

    if m == 0:
        A = np.zeros(len(eta0))
        B = np.zeros(len(eta0))
        for g in state.label_order:
            comp = state.dp_components[g + 1]
            eta_g = comp.atoms[comp.assignments]
            var = base_var * state.augmentation.sigma_phi_sq[g, k, l]
            A += 1.0 / var
            B += (state.augmentation.u[g, k, l] - eta_g) / var
        return A, B
    g = m - 1
    var = base_var * state.augmentation.sigma_phi_sq[g, k, l]
    return 1.0 / var, (state.augmentation.u[g, k, l] - eta0) / var


def update_dp_component(m, state, hp):
    """One slice-sampling pass over component m: slice variables, stick
    extension, reassignment, stick updates, atom updates."""
    comp = state.dp_components[m]
    rng = state.streams[("dp", _dp_tag(state.labels, m))]
    M = state.concentration
    A, B = _component_observations(m, state, hp)

    # (a) slice variables, strictly inside (0, nu_assigned)
    nu = comp.weights()
    slices = nu[comp.assignments] * _open_unit_uniform(rng, comp.assignments.shape)

    # (b) lazily extend sticks/atoms until the leftover mass is below the
    # smallest slice, so every eligible component is instantiated
    s_min = slices.min()
    sticks = list(comp.sticks)
    atoms = list(comp.atoms)
    remaining = float(np.exp(np.sum(np.log1p(-comp.sticks))))
    while remaining >= s_min:
        if len(sticks) > _MAX_COMPONENTS:
            raise DivergenceError(
                f"mixture component {m} exceeded {_MAX_COMPONENTS} sticks; "
                "check the concentration prior and base variance")
        v_new = float(np.clip(rng.beta(1.0, M), 1e-15, 1 - 1e-15))
        sticks.append(v_new)
        atoms.append(float(rng.normal(0.0, np.sqrt(hp.sigma_eta_sq))))
        remaining *= 1.0 - v_new
    sticks = np.asarray(sticks)
    atoms = np.asarray(atoms)
    log_surv = np.concatenate(([0.0], np.cumsum(np.log1p(-sticks))[:-1]))
    nu = sticks * np.exp(log_surv)

    # (c) reassign edges among eligible components, proportional to the
    # Gaussian likelihood of their residuals
    loglik = -0.5 * np.outer(atoms**2, A) + np.outer(atoms, B)
    loglik[nu[:, None] <= slices[None, :]] = -np.inf
    gumbel = rng.gumbel(size=loglik.shape)
    assignments = np.argmax(loglik + gumbel, axis=0)

    # (d) conjugate stick updates from the new cluster sizes
    K = len(atoms)
    counts = np.bincount(assignments, minlength=K)
    tail = counts[::-1].cumsum()[::-1] - counts
    sticks = np.clip(rng.beta(1.0 + counts, M + tail), 1e-15, 1 - 1e-15)

    # (e) conjugate atom updates for occupied clusters
    sum_A = np.bincount(assignments, weights=A, minlength=K)
    sum_B = np.bincount(assignments, weights=B, minlength=K)
    post_var = 1.0 / (1.0 / hp.sigma_eta_sq + sum_A)
    post_mean = post_var * sum_B
    occupied = counts > 0
    n_occ = int(occupied.sum())
    atoms = atoms.copy()
    atoms[occupied] = post_mean[occupied] + np.sqrt(post_var[occupied]) * \
        rng.standard_normal(n_occ)

    # drop unoccupied trailing components; they are plain prior draws and are
    # re-instantiated lazily when a slice demands them
    keep = int(np.max(np.flatnonzero(occupied))) + 1
    comp.atoms = atoms[:keep]
    comp.sticks = sticks[:keep]
    comp.assignments = assignments
    comp.slice_vars = slices
    return comp


def update_concentration(state, hp):
    """Conjugate Gamma update of the shared concentration M from every
    instantiated stick across all components."""
    # label-sorted order keeps the floating sum invariant to permutations of
    # the input conditions
    comps = [state.dp_components[0]] + \
        [state.dp_components[g + 1] for g in state.label_order]
    sticks = np.concatenate([c.sticks for c in comps])
    H = sticks.size
    rate = hp.b_m - float(np.sum(np.log1p(-sticks)))
    assert rate > 0, "stick log-survival terms must keep the rate positive"
    rng = state.streams[("concentration",)]
    state.concentration = float(rng.gamma(hp.a_m + H, 1.0 / rate))
    return state.concentration


def _weights_flat(state, hp):
    """(G, E) edge probabilities from the current atoms."""
    shared = state.dp_components[0]
    eta0 = shared.atoms[shared.assignments]
    out = np.empty((state.n_conditions, eta0.shape[0]))
    for g in range(state.n_conditions):
        comp = state.dp_components[g + 1]
        mu = eta0 + comp.atoms[comp.assignments]
        out[g] = ndtr(mu) if hp.link == "probit" else expit(mu)
    return out


def compute_weights(state, hp):
    """Per-condition p x p edge-probability matrices (diagonal unused)."""
    flat = _weights_flat(state, hp)
    return symmetric_from_upper(state.p, flat)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

def run_chain(data, hp, seed=None, check_pd=False, progress=None):
    """Run n_burnin + n_iter sweeps and archive every thin-th post-burn-in
    draw. Fully reproducible from the seed; on numerical failure the partial
    trace is discarded and the error reports the failing iteration.

    check_pd re-verifies positive definiteness of every precision matrix by
    Cholesky after each sweep (used by the validation suite).
    """
    state = init_chain(data, hp, seed)
    G = state.n_conditions
    p = state.p
    E = n_edges(p)
    k, l = edge_pairs(p)
    diag = np.arange(p)
    weights = compute_weights(state, hp)

    n_store = hp.n_iter // hp.thin
    omega_off = np.empty((G, E, n_store))
    omega_diag = np.empty((G, p, n_store))
    delta = np.empty((G, E, n_store), dtype=np.uint8)
    wdraws = np.empty((G, E, n_store))
    conc = np.empty(n_store)
    iters = np.empty(n_store, dtype=np.int64)

    total = hp.n_burnin + hp.n_iter
    for it in range(1, total + 1):
        try:
            for g in range(G):
                update_precision(g, state, data[g], hp)
                update_indicators(g, state, hp, weights[g])
            update_augmentation(state, hp)
            for m in range(G + 1):
                update_dp_component(m, state, hp)
            update_concentration(state, hp)
            weights = compute_weights(state, hp)
            if check_pd:
                for g in range(G):
                    np.linalg.cholesky(state.precisions[g].omega)
        except (NumericalDegeneracyError, np.linalg.LinAlgError) as err:
            if isinstance(err, NumericalDegeneracyError):
                err.iteration = it
                raise
            raise NumericalDegeneracyError(
                f"positive definiteness lost at iteration {it}",
                iteration=it) from err
        state.iteration = it

        offset = it - hp.n_burnin
        if offset > 0 and offset % hp.thin == 0:
            s = offset // hp.thin - 1
            for g in range(G):
                omega_off[g, :, s] = state.precisions[g].omega[k, l]
                omega_diag[g, :, s] = state.precisions[g].omega[diag, diag]
                delta[g, :, s] = state.precisions[g].delta[k, l]
            wdraws[:, :, s] = _weights_flat(state, hp)
            conc[s] = state.concentration
            iters[s] = it
        if progress is not None and it % progress == 0:
            print(f"  sweep {it}/{total}")

    return TraceArchive(
        p=p,
        labels=list(state.labels),
        omega_offdiag=omega_off,
        omega_diag=omega_diag,
        delta=delta,
        weights=wdraws,
        concentration=conc,
        iterations=iters,
    )
