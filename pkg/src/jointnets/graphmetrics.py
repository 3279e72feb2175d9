"""Binary-graph topology metrics and their posterior distributions over
stored precision draws."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp
from scipy.stats import t as t_dist

from .core import edge_pairs

METRIC_NAMES = ("global_efficiency", "local_efficiency",
                "clustering_coefficient", "characteristic_path_length")


def _check_adjacency(adj):
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.isin(adj, (0, 1)).all():
        raise ValueError("adjacency must be binary")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    return adj.astype(float)


def shortest_paths(adj):
    """Unweighted shortest-path distances by breadth-first level expansion;
    unreachable pairs are infinite."""
    A = _check_adjacency(adj)
    p = A.shape[0]
    dist = np.full((p, p), np.inf)
    np.fill_diagonal(dist, 0.0)
    reach = np.eye(p, dtype=bool)
    d = 0
    while True:
        d += 1
        new = ((reach @ A) > 0) & ~reach
        if not new.any():
            return dist
        dist[new] = d
        reach |= new


def global_efficiency(adj):
    """Mean inverse shortest path length over ordered node pairs (1/inf = 0)."""
    adj = np.asarray(adj)
    p = adj.shape[0]
    if p < 2:
        raise ValueError("global efficiency needs at least 2 nodes")
    dist = shortest_paths(adj)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dist
    np.fill_diagonal(inv, 0.0)
    return float(inv.sum() / (p * (p - 1)))


def local_efficiency(adj):
    """Per-node efficiency of the neighbor-induced subgraph and its mean.

    Nodes with fewer than two neighbors contribute 0.
    """
    A = _check_adjacency(adj)
    p = A.shape[0]
    values = np.zeros(p)
    for v in range(p):
        nbrs = np.flatnonzero(A[v])
        if nbrs.size < 2:
            continue
        sub = A[np.ix_(nbrs, nbrs)]
        values[v] = global_efficiency(sub)
    return values, float(values.mean())


def clustering_coefficient(adj):
    """Per-node fraction of neighbor pairs that are connected and its mean."""
    A = _check_adjacency(adj)
    deg = A.sum(axis=1)
    closed = np.diag(A @ A @ A)  # closed 3-walks = 2 * triangles through node
    denom = deg * (deg - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(denom > 0, closed / denom, 0.0)
    return values, float(values.mean())


def characteristic_path_length(adj):
    """Mean shortest path length over reachable pairs.

    Returns (value, disconnected); value is None when no pair is reachable,
    disconnected is True whenever some pair is unreachable.
    """
    adj = np.asarray(adj)
    p = adj.shape[0]
    dist = shortest_paths(adj)
    off = ~np.eye(p, dtype=bool)
    finite = np.isfinite(dist) & off
    disconnected = bool((~np.isfinite(dist) & off).any())
    if not finite.any():
        return None, disconnected
    return float(dist[finite].mean()), disconnected


def _metric_value(name, adj):
    if name == "global_efficiency":
        return global_efficiency(adj)
    if name == "local_efficiency":
        return local_efficiency(adj)[1]
    if name == "clustering_coefficient":
        return clustering_coefficient(adj)[1]
    if name == "characteristic_path_length":
        value, _ = characteristic_path_length(adj)
        return np.nan if value is None else value
    raise ValueError(f"unknown metric {name!r}")


@dataclass(eq=False)
class PairTest:
    pair: tuple
    labels: tuple
    t_stat: float = None
    t_pvalue: float = None
    ks_stat: float = None
    ks_pvalue: float = None
    mean_difference: float = None
    n_excluded: int = 0
    insufficient: bool = False


@dataclass(eq=False)
class MetricPosterior:
    """Draw-wise values of one metric per condition plus pairwise tests."""

    name: str
    labels: list
    values: np.ndarray            # (G, S), NaN where undefined
    differences: dict = field(default_factory=dict)   # (g, h) -> (S,) array
    tests: list = field(default_factory=list)


def metric_posteriors(archive, hp, metrics=METRIC_NAMES):
    """Binarize every stored precision draw with the default edge rule and
    track the chosen metrics across draws, with paired t and two-sample KS
    tests for every condition pair.

    Draws with an undefined path length are excluded from that metric's
    tests; the exclusion count is reported.
    """
    if archive.n_draws == 0:
        raise ValueError("archive holds no draws")
    G = archive.n_conditions
    S = archive.n_draws
    p = archive.p
    k, l = edge_pairs(p)
    out = []
    values = {name: np.full((G, S), np.nan) for name in metrics}
    for g in range(G):
        selected = np.abs(archive.omega_offdiag[g]) > hp.edge_threshold  # (E, S)
        for s in range(S):
            adj = np.zeros((p, p), dtype=np.int8)
            hit = selected[:, s]
            adj[k[hit], l[hit]] = 1
            adj[l[hit], k[hit]] = 1
            for name in metrics:
                values[name][g, s] = _metric_value(name, adj)

    for name in metrics:
        vals = values[name]
        posterior = MetricPosterior(name=name, labels=list(archive.labels), values=vals)
        for g in range(G):
            for h in range(g + 1, G):
                diff = vals[g] - vals[h]
                keep = ~np.isnan(diff)
                n_excluded = int((~keep).sum())
                posterior.differences[(g, h)] = diff
                test = PairTest(pair=(g, h),
                                labels=(archive.labels[g], archive.labels[h]),
                                n_excluded=n_excluded)
                d = diff[keep]
                a = vals[g][~np.isnan(vals[g])]
                b = vals[h][~np.isnan(vals[h])]
                if d.size < 2 or a.size < 2 or b.size < 2:
                    test.insufficient = True
                else:
                    test.mean_difference = float(d.mean())
                    sd = d.std(ddof=1)
                    if sd == 0:
                        test.t_stat = 0.0 if d.mean() == 0 else np.inf * np.sign(d.mean())
                        test.t_pvalue = 1.0 if d.mean() == 0 else 0.0
                    else:
                        t = d.mean() / (sd / np.sqrt(d.size))
                        test.t_stat = float(t)
                        test.t_pvalue = float(2 * t_dist.sf(abs(t), df=d.size - 1))
                    ks = ks_2samp(a, b, method="asymp")
                    test.ks_stat = float(ks.statistic)
                    test.ks_pvalue = float(ks.pvalue)
                posterior.tests.append(test)
        out.append(posterior)
    return out


def write_metric_histograms(posteriors, out_dir, bins=40):
    """Histogram tables (CSV) of each metric posterior per condition, plus a
    summary table of the pairwise tests."""
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for post in posteriors:
        for g, label in enumerate(post.labels):
            vals = post.values[g]
            vals = vals[~np.isnan(vals)]
            path = out_dir / f"hist_{post.name}_{label}.csv"
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["bin_left", "bin_right", "count", "density"])
                if vals.size:
                    counts, edges = np.histogram(vals, bins=bins)
                    dens = counts / max(vals.size, 1) / np.maximum(np.diff(edges), 1e-300)
                    for i in range(counts.size):
                        writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                                         int(counts[i]), repr(float(dens[i]))])
            written.append(path)
    path = out_dir / "metric_tests.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "label_a", "label_b", "mean_difference",
                         "t_stat", "t_pvalue", "ks_stat", "ks_pvalue",
                         "n_excluded", "insufficient"])
        for post in posteriors:
            for test in post.tests:
                writer.writerow([
                    post.name, test.labels[0], test.labels[1],
                    _fmt(test.mean_difference), _fmt(test.t_stat),
                    _fmt(test.t_pvalue), _fmt(test.ks_stat), _fmt(test.ks_pvalue),
                    test.n_excluded, int(test.insufficient),
                ])
    written.append(path)
    return written


def _fmt(x):
    return "" if x is None else repr(float(x))
