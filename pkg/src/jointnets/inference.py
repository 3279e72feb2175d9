"""Posterior summarization: edge selection with FDR control, differential
edges, Fisher-Z strength tests, and convergence diagnostics."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as t_dist

from .core import FORMAT_VERSION, edge_pairs, fisher_z, n_edges


@dataclass(eq=False)
class NetworkEstimate:
    """Point estimate plus uncertainty summaries for one condition."""

    label: str
    adjacency: np.ndarray        # p x p binary
    inclusion_prob: np.ndarray   # p x p in [0, 1]
    mean_precision: np.ndarray
    mean_partial_corr: np.ndarray
    ci_lower: np.ndarray         # partial-correlation interval bounds
    ci_upper: np.ndarray
    ci_level: float = 0.95

    @property
    def p(self):
        return self.adjacency.shape[0]


@dataclass(eq=False)
class SelectionResult:
    """Edge selection across all conditions at one common threshold."""

    estimates: list
    mode: str                    # "strength" or "probability"
    strength_threshold: float
    probability_threshold: float = None
    estimated_fdr: float = None
    fdr_target: float = None
    warning: str = None


@dataclass(eq=False)
class DifferentialEdge:
    k: int
    l: int
    mean_z_diff: float
    t_stat: float
    p_raw: float
    p_adj: float
    significant: bool


@dataclass(eq=False)
class DifferentialReport:
    """Strength tests plus set-difference edges for one condition pair."""

    pair: tuple
    labels: tuple
    level: float
    edges: list
    set_difference: list = field(default_factory=list)
    n_draws: int = 0
    ess_corrected: bool = False


@dataclass(frozen=True)
class DickeyFullerResult:
    statistic: float
    stationary: bool
    constant: bool = False


def inclusion_probabilities(archive):
    """Per-condition p x p posterior edge-inclusion probabilities."""
    if archive.n_draws == 0:
        raise ValueError("archive holds no draws")
    p = archive.p
    k, l = edge_pairs(p)
    out = np.zeros((archive.n_conditions, p, p))
    means = archive.delta.mean(axis=2)  # (G, E)
    out[:, k, l] = means
    out[:, l, k] = means
    return out


def fdr_for_threshold(zeta, statistic, kappa, mode="probability"):
    """Estimated false discovery rate of one selection rule.

    probability mode selects edges with exclusion probability zeta < kappa;
    strength mode selects |statistic| > kappa. Returns the mean exclusion
    probability over the selected set, or None when nothing is selected.
    """
    zeta = np.asarray(zeta, dtype=float)
    if np.any((zeta < 0) | (zeta > 1)):
        raise ValueError("exclusion probabilities must lie in [0, 1]")
    if mode == "probability":
        selected = zeta < kappa
    elif mode == "strength":
        if statistic is None:
            raise ValueError("strength mode needs the edge statistics")
        selected = np.abs(np.asarray(statistic, dtype=float)) > kappa
    else:
        raise ValueError(f"mode must be 'probability' or 'strength', got {mode!r}")
    if not selected.any():
        return None
    return float(zeta[selected].mean())


def _matching_probability_threshold(zeta, target_fdr):
    """Largest probability-mode threshold whose realized FDR stays at or
    below target_fdr (None if even the tightest selection exceeds it)."""
    zs = np.sort(np.asarray(zeta, dtype=float))
    cummean = np.cumsum(zs) / np.arange(1, zs.size + 1)
    # only cuts at tie-group boundaries are realizable with {zeta < kappa}
    boundary = np.flatnonzero(np.diff(zs, append=np.inf) != 0)
    ok = boundary[cummean[boundary] <= target_fdr + 1e-12]
    if ok.size == 0:
        return None
    return float(np.nextafter(zs[ok.max()], np.inf))


def select_edges(archive, hp, fdr_target=None, ci_level=0.95):
    """Estimate all networks with a common selection rule.

    Default rule: include edge (k, l) when |posterior mean omega_kl| exceeds
    hp.edge_threshold. With fdr_target, the strength threshold is instead the
    smallest one (largest selection) whose estimated FDR stays at or below the
    target; the matching probability-mode threshold is reported alongside.
    """
    if archive.n_draws == 0:
        raise ValueError("archive holds no draws")
    G = archive.n_conditions
    p = archive.p
    k, l = edge_pairs(p)

    mean_off = archive.omega_offdiag.mean(axis=2)          # (G, E)
    strength = np.abs(mean_off).ravel()
    zeta = (1.0 - archive.delta.mean(axis=2)).ravel()

    warning = None
    if fdr_target is None:
        threshold = float(hp.edge_threshold)
        estimated = fdr_for_threshold(zeta, strength, threshold, mode="strength")
        mode = "strength"
    else:
        mode = "strength"
        order = np.argsort(-strength, kind="stable")
        st = strength[order]
        cummean = np.cumsum(zeta[order]) / np.arange(1, st.size + 1)
        # only cuts at tie-group boundaries are realizable with |.| > kappa
        boundary = np.flatnonzero(np.diff(st, append=-np.inf) != 0)
        feasible = boundary[cummean[boundary] <= fdr_target + 1e-12]
        if feasible.size == 0:
            threshold = float(strength.max()) if strength.size else 0.0
            estimated = None
            warning = "no edges selected at the requested FDR target"
            warnings.warn(warning)
        else:
            j = int(feasible.max())  # largest selection meeting the target
            threshold = float(st[j + 1]) if j + 1 < st.size else \
                float(np.nextafter(st[j], -np.inf))
            estimated = float(cummean[j])
    prob_threshold = None
    if estimated is not None:
        prob_threshold = _matching_probability_threshold(zeta, estimated)

    incl = inclusion_probabilities(archive)
    lo_q = (1.0 - ci_level) / 2.0
    estimates = []
    for g in range(G):
        selected = (np.abs(mean_off[g]) > threshold) if warning is None else \
            np.zeros(mean_off[g].shape, dtype=bool)
        adjacency = np.zeros((p, p), dtype=np.int8)
        adjacency[k[selected], l[selected]] = 1
        adjacency[l[selected], k[selected]] = 1

        rho = archive.partial_corr_draws(g)                # (E, S)
        rho_mean = rho.mean(axis=1)
        lo = np.quantile(rho, lo_q, axis=1)
        hi = np.quantile(rho, 1.0 - lo_q, axis=1)
        mean_pc = np.eye(p)
        mean_pc[k, l] = rho_mean
        mean_pc[l, k] = rho_mean
        ci_lower = np.eye(p)
        ci_lower[k, l] = lo
        ci_lower[l, k] = lo
        ci_upper = np.eye(p)
        ci_upper[k, l] = hi
        ci_upper[l, k] = hi

        estimates.append(NetworkEstimate(
            label=archive.labels[g],
            adjacency=adjacency,
            inclusion_prob=incl[g],
            mean_precision=archive.mean_precision(g),
            mean_partial_corr=mean_pc,
            ci_lower=ci_lower,
            ci_upper=ci_upper,
            ci_level=ci_level,
        ))
    return SelectionResult(
        estimates=estimates,
        mode=mode,
        strength_threshold=threshold,
        probability_threshold=prob_threshold,
        estimated_fdr=estimated,
        fdr_target=fdr_target,
        warning=warning,
    )


def differential_by_set_difference(estimates):
    """Edges whose adjacency status differs between any pair of estimated
    networks, annotated with the pair and where the edge is present."""
    if len(estimates) < 2:
        raise ValueError("need at least two estimates to compare")
    p = estimates[0].p
    if any(e.p != p for e in estimates):
        raise ValueError("all estimates must share the same node count")
    k, l = edge_pairs(p)
    records = []
    for i in range(len(estimates)):
        for j in range(i + 1, len(estimates)):
            a = estimates[i].adjacency[k, l]
            b = estimates[j].adjacency[k, l]
            for e in np.flatnonzero(a != b):
                records.append({
                    "k": int(k[e]), "l": int(l[e]),
                    "pair": (i, j),
                    "labels": (estimates[i].label, estimates[j].label),
                    "present_in": estimates[i].label if a[e] else estimates[j].label,
                })
    return records


def benjamini_hochberg(p_values):
    """Step-up adjusted p-values (monotone in the raw ordering)."""
    p_values = np.asarray(p_values, dtype=float)
    n = p_values.size
    order = np.argsort(p_values, kind="stable")
    scaled = p_values[order] * n / np.arange(1, n + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(n)
    out[order] = np.minimum(adjusted, 1.0)
    return out


def effective_sample_size(x):
    """Initial-positive-sequence estimate of the effective sample size."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    rho_sum = 0.0
    for lag in range(1, n // 2):
        rho = (x[lag:] @ x[:-lag]) / (n * var)
        if rho <= 0:
            break
        rho_sum += rho
    return float(n / (1.0 + 2.0 * rho_sum))


def differential_strength_test(archive, pair, level=0.01, ess_correction=False,
                               selection=None):
    """Edgewise tests of partial-correlation differences between a condition
    pair, using the post-burn-in draws as the sample.

    Per edge: the draw-wise Fisher-Z transformed partial correlations are
    differenced, a one-sample t statistic against zero is formed, and the
    two-sided p-values are Benjamini-Hochberg adjusted across all edges.
    ess_correction replaces the nominal draw count with an autocorrelation-
    adjusted effective sample size in the t statistic.
    """
    g, h = pair
    G = archive.n_conditions
    if not (0 <= g < G and 0 <= h < G) or g == h:
        raise ValueError(f"invalid condition pair {pair} for {G} conditions")
    S = archive.n_draws
    if S < 2:
        raise ValueError("need at least 2 stored draws")

    z_g = fisher_z(archive.partial_corr_draws(g))
    z_h = fisher_z(archive.partial_corr_draws(h))
    d = z_g - z_h                                        # (E, S)
    mean_d = d.mean(axis=1)
    sd_d = d.std(axis=1, ddof=1)

    if ess_correction:
        n_eff = np.array([max(effective_sample_size(row), 2.0) for row in d])
    else:
        n_eff = np.full(mean_d.shape, float(S))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat = mean_d / (sd_d / np.sqrt(n_eff))
    # degenerate draws: zero variance forces a verdict by the mean alone
    zero_sd = sd_d == 0
    t_stat[zero_sd & (mean_d != 0)] = np.inf * np.sign(mean_d[zero_sd & (mean_d != 0)])
    t_stat[zero_sd & (mean_d == 0)] = 0.0
    p_raw = np.where(
        np.isinf(t_stat), 0.0,
        2.0 * t_dist.sf(np.abs(t_stat), df=np.maximum(n_eff - 1, 1)))
    p_raw[zero_sd & (mean_d == 0)] = 1.0
    p_adj = benjamini_hochberg(p_raw)

    k, l = edge_pairs(archive.p)
    edges = [DifferentialEdge(
        k=int(k[e]), l=int(l[e]),
        mean_z_diff=float(mean_d[e]), t_stat=float(t_stat[e]),
        p_raw=float(p_raw[e]), p_adj=float(p_adj[e]),
        significant=bool(p_adj[e] < level),
    ) for e in range(n_edges(archive.p))]

    set_diff = []
    if selection is not None:
        pair_est = [selection.estimates[g], selection.estimates[h]]
        set_diff = differential_by_set_difference(pair_est)
    return DifferentialReport(
        pair=(g, h),
        labels=(archive.labels[g], archive.labels[h]),
        level=level,
        edges=edges,
        set_difference=set_diff,
        n_draws=S,
        ess_corrected=ess_correction,
    )


def dickey_fuller(trace, critical=-2.86):
    """Unit-root check of an MCMC scalar trace (constant, no-trend form).

    Regresses the first difference on an intercept and the lagged level; the
    trace is flagged stationary when coefficient/stderr falls below the
    large-sample 5% critical value.
    """
    x = np.asarray(trace, dtype=float)
    if x.size < 25:
        raise ValueError(f"need at least 25 points, got {x.size}")
    if np.ptp(x) == 0:
        return DickeyFullerResult(statistic=-np.inf, stationary=True, constant=True)
    dx = np.diff(x)
    lag = x[:-1]
    lag_c = lag - lag.mean()
    ssx = lag_c @ lag_c
    if ssx == 0:
        return DickeyFullerResult(statistic=np.nan, stationary=False, constant=False)
    slope = (lag_c @ dx) / ssx
    resid = dx - dx.mean() - slope * lag_c
    dof = x.size - 1 - 2
    sigma_sq = (resid @ resid) / dof
    se = np.sqrt(sigma_sq / ssx)
    if se == 0:
        return DickeyFullerResult(statistic=-np.inf, stationary=True, constant=False)
    stat = float(slope / se)
    return DickeyFullerResult(statistic=stat, stationary=stat < critical)


# ---------------------------------------------------------------------------
# Serialization (delimited text + JSON schema, 0-based node indices)
# ---------------------------------------------------------------------------

def estimate_records(estimate):
    """Per-edge records of one NetworkEstimate (canonical edge order)."""
    p = estimate.p
    k, l = edge_pairs(p)
    rows = []
    for e in range(k.size):
        a, b = int(k[e]), int(l[e])
        rows.append({
            "k": a, "l": b,
            "selected": int(estimate.adjacency[a, b]),
            "inclusion_prob": float(estimate.inclusion_prob[a, b]),
            "mean_precision": float(estimate.mean_precision[a, b]),
            "mean_partial_corr": float(estimate.mean_partial_corr[a, b]),
            "ci_lower": float(estimate.ci_lower[a, b]),
            "ci_upper": float(estimate.ci_upper[a, b]),
        })
    return rows


def write_estimate_json(estimate, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "label": estimate.label,
        "p": estimate.p,
        "ci_level": estimate.ci_level,
        "edges": estimate_records(estimate),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def write_estimate_csv(estimate, path):
    rows = estimate_records(estimate)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), delimiter="\t")
        writer.writeheader()
        writer.writerows(rows)


def differential_records(report):
    rows = []
    for e in report.edges:
        rows.append({
            "k": e.k, "l": e.l,
            "pair": f"{report.labels[0]}|{report.labels[1]}",
            "mean_z_diff": e.mean_z_diff, "t_stat": e.t_stat,
            "p_raw": e.p_raw, "p_adj": e.p_adj,
            "significant": int(e.significant),
        })
    return rows


def write_differential_json(report, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "pair": list(report.pair),
        "labels": list(report.labels),
        "level": report.level,
        "n_draws": report.n_draws,
        "ess_corrected": report.ess_corrected,
        "edges": differential_records(report),
        "set_difference": [
            {"k": r["k"], "l": r["l"], "present_in": r["present_in"]}
            for r in report.set_difference
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def write_differential_csv(report, path):
    rows = differential_records(report)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), delimiter="\t")
        writer.writeheader()
        writer.writerows(rows)
