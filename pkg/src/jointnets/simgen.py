"""Benchmark harness: random networks, controlled cross-condition
discordance, precision construction, Gaussian sampling, and scoring."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from scipy.stats import rankdata

from .core import ConditionData, ConfigurationError, edge_pairs, substream

FAMILIES = ("erdos_renyi", "small_world", "scale_free")


@dataclass(frozen=True)
class SimScenario:
    """Knobs of one benchmark scenario (two conditions: base and flipped)."""

    family: str = "erdos_renyi"
    p: int = 40
    flip_fraction: float = 0.5
    n_subjects: int = 10
    t_points: int = 100
    edge_prob: float = 0.1      # erdos_renyi
    ring_degree: int = 4        # small_world
    rewire_prob: float = 0.1    # small_world
    attach_count: int = 2       # scale_free
    precision_eps: float = 0.1
    seed: int = 0
    labels: tuple = ("cond1", "cond2")

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.p < 2:
            raise ConfigurationError("p must be at least 2")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ConfigurationError("flip_fraction must lie in [0, 1]")
        if self.n_subjects <= 0 or self.t_points <= 0:
            raise ConfigurationError("n_subjects and t_points must be positive")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ConfigurationError("edge_prob must lie in [0, 1]")
        if not 0.0 <= self.rewire_prob <= 1.0:
            raise ConfigurationError("rewire_prob must lie in [0, 1]")
        if len(self.labels) != 2 or self.labels[0] == self.labels[1]:
            raise ConfigurationError("labels must be two distinct strings")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a parsed scenario file, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {', '.join(unknown)}")
        kwargs = dict(mapping)
        if "labels" in kwargs:
            kwargs["labels"] = tuple(kwargs["labels"])
        return cls(**kwargs)

    def to_dict(self):
        return {
            "family": self.family, "p": self.p, "flip_fraction": self.flip_fraction,
            "n_subjects": self.n_subjects, "t_points": self.t_points,
            "edge_prob": self.edge_prob, "ring_degree": self.ring_degree,
            "rewire_prob": self.rewire_prob, "attach_count": self.attach_count,
            "precision_eps": self.precision_eps, "seed": self.seed,
            "labels": list(self.labels),
        }


@dataclass(eq=False)
class GroundTruth:
    """True structure behind one simulated scenario instance."""

    adjacencies: list       # per-condition p x p binary
    precisions: list        # per-condition SPD
    differential: np.ndarray  # symmetric XOR of the adjacencies
    flip_record: dict = field(default_factory=dict)


def gen_network(family, p, params, rng):
    """Random adjacency matrix of one of the three supported families."""
    if family == "erdos_renyi":
        return _erdos_renyi(p, params["edge_prob"], rng)
    if family == "small_world":
        return _watts_strogatz(p, params["ring_degree"], params["rewire_prob"], rng)
    if family == "scale_free":
        return _barabasi_albert(p, params["attach_count"], rng)
    raise ConfigurationError(f"unknown network family {family!r}")


def _erdos_renyi(p, q, rng):
    k, l = edge_pairs(p)
    adj = np.zeros((p, p), dtype=np.int8)
    hit = rng.random(k.shape) < q
    adj[k[hit], l[hit]] = 1
    adj[l[hit], k[hit]] = 1
    return adj


def _watts_strogatz(p, k_ring, beta, rng):
    if k_ring % 2 != 0 or k_ring <= 0 or k_ring >= p:
        raise ConfigurationError(
            f"ring degree must be even and in (0, p); got k={k_ring}, p={p}")
    adj = np.zeros((p, p), dtype=np.int8)
    for offset in range(1, k_ring // 2 + 1):
        for i in range(p):
            j = (i + offset) % p
            adj[i, j] = adj[j, i] = 1
    # rewire each clockwise lattice edge with probability beta, avoiding
    # self-loops and duplicate edges
    for offset in range(1, k_ring // 2 + 1):
        for i in range(p):
            j = (i + offset) % p
            if adj[i, j] == 0:  # already rewired away
                continue
            if rng.random() >= beta:
                continue
            candidates = np.flatnonzero(adj[i] == 0)
            candidates = candidates[candidates != i]
            if candidates.size == 0:
                continue
            new_j = int(rng.choice(candidates))
            adj[i, j] = adj[j, i] = 0
            adj[i, new_j] = adj[new_j, i] = 1
    return adj


def _barabasi_albert(p, m, rng):
    if m <= 0 or m >= p:
        raise ConfigurationError(f"attachment count must be in (0, p); got m={m}, p={p}")
    adj = np.zeros((p, p), dtype=np.int8)
    # seed clique on the first m nodes, then degree-proportional growth
    adj[:m, :m] = 1
    np.fill_diagonal(adj, 0)
    endpoints = [i for i in range(m) for _ in range(m - 1)]
    for new in range(m, p):
        targets = set()
        while len(targets) < m:
            if endpoints:
                cand = int(endpoints[rng.integers(len(endpoints))])
            else:  # m = 1 start: no edges yet, attach uniformly
                cand = int(rng.integers(new))
            targets.add(cand)
        for t in targets:
            adj[new, t] = adj[t, new] = 1
            endpoints.append(t)
            endpoints.append(new)
    return adj


def flip_edges(adj, fraction, rng):
    """Remove round(fraction * |E|) random edges and add as many random
    non-edges; returns the new adjacency and the flip record."""
    adj = np.asarray(adj)
    p = adj.shape[0]
    k, l = edge_pairs(p)
    flat = adj[k, l]
    present = np.flatnonzero(flat == 1)
    absent = np.flatnonzero(flat == 0)
    if present.size == 0 or absent.size == 0:
        raise ConfigurationError("flip_edges needs at least one edge and one non-edge")
    r = int(np.round(fraction * present.size))
    if r > absent.size:
        raise ConfigurationError(
            f"cannot flip {r} edges: only {absent.size} non-edges available")
    removed = rng.choice(present, size=r, replace=False) if r else np.empty(0, dtype=int)
    added = rng.choice(absent, size=r, replace=False) if r else np.empty(0, dtype=int)
    new_flat = flat.copy()
    new_flat[removed] = 0
    new_flat[added] = 1
    out = np.zeros_like(adj)
    out[k, l] = new_flat
    out[l, k] = new_flat
    record = {
        "removed": [(int(k[e]), int(l[e])) for e in np.sort(removed)],
        "added": [(int(k[e]), int(l[e])) for e in np.sort(added)],
    }
    return out, record


def build_precision(adj, rng, eps=0.1):
    """Uniform(-1, 1) weights on the edges, unit diagonal, then a diagonal
    shift keeping the smallest eigenvalue at or above eps."""
    adj = np.asarray(adj)
    p = adj.shape[0]
    k, l = edge_pairs(p)
    omega = np.zeros((p, p))
    vals = rng.uniform(-1.0, 1.0, size=k.shape) * (adj[k, l] != 0)
    omega[k, l] = vals
    omega[l, k] = vals
    np.fill_diagonal(omega, 1.0)
    lam_min = float(np.linalg.eigvalsh(omega).min())
    if lam_min < eps:
        omega[np.arange(p), np.arange(p)] += eps - lam_min
    return omega


def sample_data(precisions, n_subjects, t_points, rng, labels=None):
    """Draw n_subjects * t_points i.i.d. N(0, Omega^{-1}) rows per condition
    and reduce them to scatter matrices."""
    out = []
    for g, omega in enumerate(precisions):
        p = omega.shape[0]
        label = labels[g] if labels is not None else f"cond{g + 1}"
        n = n_subjects * t_points
        if n == 0:
            out.append(ConditionData(scatter=np.zeros((p, p)), n_obs=0, p=p, label=label))
            continue
        L = np.linalg.cholesky(omega)
        z = rng.standard_normal((n, p))
        # solve L^T x = z row-wise: x ~ N(0, Omega^{-1})
        x = np.linalg.solve(L.T, z.T).T
        out.append(ConditionData(scatter=x.T @ x, n_obs=n, p=p, label=label))
    return out


def simulate_scenario(scenario):
    """Full harness for one scenario draw: network, flip, precisions, data."""
    rng_net = substream(scenario.seed, "simgen", "network")
    rng_prec = substream(scenario.seed, "simgen", "precision")
    rng_data = substream(scenario.seed, "simgen", "data")
    params = {"edge_prob": scenario.edge_prob, "ring_degree": scenario.ring_degree,
              "rewire_prob": scenario.rewire_prob, "attach_count": scenario.attach_count}
    adj1 = gen_network(scenario.family, scenario.p, params, rng_net)
    adj2, record = flip_edges(adj1, scenario.flip_fraction, rng_net)
    prec1 = build_precision(adj1, rng_prec, scenario.precision_eps)
    prec2 = build_precision(adj2, rng_prec, scenario.precision_eps)
    truth = GroundTruth(
        adjacencies=[adj1, adj2],
        precisions=[prec1, prec2],
        differential=np.bitwise_xor(adj1, adj2),
        flip_record=record,
    )
    data = sample_data([prec1, prec2], scenario.n_subjects, scenario.t_points,
                       rng_data, labels=list(scenario.labels))
    return truth, data


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def roc_auc(scores, truth):
    """Rank-based AUC (ties count 1/2); None when truth has a single class."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    n1 = int(truth.sum())
    n0 = truth.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[truth].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc_points(scores, truth):
    """(threshold, fpr, tpr) rows for the full ROC curve."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    n1 = max(int(t.sum()), 1)
    n0 = max(int((~t).sum()), 1)
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last = np.flatnonzero(np.diff(s, append=-np.inf) != 0)  # one point per threshold
    rows = [(np.inf, 0.0, 0.0)]
    rows += [(float(s[i]), float(fp[i] / n0), float(tp[i] / n1)) for i in last]
    return rows


def l1_error(omega_hat, omega_true):
    """Mean absolute elementwise difference over all p^2 entries."""
    omega_hat = np.asarray(omega_hat, dtype=float)
    omega_true = np.asarray(omega_true, dtype=float)
    if omega_hat.shape != omega_true.shape:
        raise ValueError(f"shape mismatch: {omega_hat.shape} vs {omega_true.shape}")
    return float(np.abs(omega_hat - omega_true).mean())


def differential_tpr_fpr(estimated_diff, true_diff, all_edges):
    """Sensitivity and 1-specificity of differential-edge detection over a
    universe of all_edges candidate edges. TPR is None when no true
    differential edges exist."""
    est = set(estimated_diff)
    true = set(true_diff)
    fpr = len(est - true) / (all_edges - len(true)) if all_edges > len(true) else 0.0
    if not true:
        return None, float(fpr)
    tpr = len(est & true) / len(true)
    return float(tpr), float(fpr)


def edge_set(adj):
    """Canonical (k, l) tuple set of an adjacency matrix."""
    adj = np.asarray(adj)
    k, l = edge_pairs(adj.shape[0])
    hit = adj[k, l] != 0
    return {(int(a), int(b)) for a, b in zip(k[hit], l[hit])}
