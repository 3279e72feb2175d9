"""Command-line surface: simulate, fit, eval, metrics, diagnose.

Every subcommand is deterministic given its inputs, config, and seed. Exit
codes: 0 success, 1 usage/configuration error, 2 numerical failure; nonzero
exits leave a machine-readable error.json in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .core import (
    FORMAT_VERSION,
    ConfigurationError,
    DivergenceError,
    Hyperparams,
    IngestionError,
    NumericalDegeneracyError,
    TraceArchive,
    edge_pairs,
    substream,
)
from . import graphmetrics, inference, ingest, simgen
from .sampler import run_chain

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


def _read_structured(path):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such file: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            return tomllib.load(f)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path}: invalid JSON ({err})") from None


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _load_hyperparams(config_path, seed=None):
    """Built-in defaults, overlaid by the config file, overlaid by CLI flags."""
    values = {}
    if config_path is not None:
        doc = _read_structured(config_path)
        known = {f.name for f in fields(Hyperparams)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        values.update(doc)
    if seed is not None:
        values["seed"] = seed
    try:
        return Hyperparams(**values)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"invalid hyperparameters: {err}") from None


def _hp_dict(hp):
    return {f.name: getattr(hp, f.name) for f in fields(hp)}


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(scenario_file, out_dir, seed=None, replicates=1, threads=1):
    doc = _read_structured(scenario_file)
    if seed is not None:
        doc["seed"] = seed
    scenario = simgen.SimScenario.from_mapping(doc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(rep, rep_dir, rep_seed):
        scn = simgen.SimScenario.from_mapping({**scenario.to_dict(), "seed": rep_seed})
        truth, data = simgen.simulate_scenario(scn)
        rep_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for g, label in enumerate(scn.labels):
            ingest.save_matrix(rep_dir / f"adjacency_{label}.csv", truth.adjacencies[g])
            ingest.save_matrix(rep_dir / f"precision_{label}.npy", truth.precisions[g])
            ingest.save_condition_data(rep_dir / f"data_{label}.npz", data[g])
            entries.append({"label": label, "data": f"data_{label}.npz",
                            "adjacency": f"adjacency_{label}.csv",
                            "precision": f"precision_{label}.npy"})
        ingest.save_matrix(rep_dir / "differential.csv", truth.differential)
        _write_json(rep_dir / "manifest.json", {
            "format_version": FORMAT_VERSION,
            "seed": rep_seed,
            "scenario": scn.to_dict(),
            "conditions": entries,
            "flip_record": truth.flip_record,
        })

    if replicates == 1:
        one(0, out_dir, scenario.seed)
    else:
        rep_seeds = [int(s.generate_state(1)[0])
                     for s in np.random.SeedSequence(scenario.seed).spawn(replicates)]
        jobs = [(r, out_dir / f"rep_{r:03d}", rep_seeds[r]) for r in range(replicates)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda args: one(*args), jobs))
        else:
            for args in jobs:
                one(*args)
    print(f"simulated scenario written to {out_dir} (seed {scenario.seed})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(data_manifest, out_dir, hp_config=None, seed=None, fdr_target=None,
            threads=1, progress=None):
    data = ingest.load_manifest(data_manifest)
    hp = _load_hyperparams(hp_config, seed=seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    archive = run_chain(data, hp, progress=progress)
    wall = time.time() - t0

    archive.save(out_dir / "trace.npz")
    selection = inference.select_edges(archive, hp, fdr_target=fdr_target)
    for est in selection.estimates:
        inference.write_estimate_json(est, out_dir / f"estimate_{est.label}.json")
        inference.write_estimate_csv(est, out_dir / f"estimate_{est.label}.tsv")
    _write_json(out_dir / "fdr_report.json", {
        "format_version": FORMAT_VERSION,
        "mode": selection.mode,
        "strength_threshold": selection.strength_threshold,
        "probability_threshold": selection.probability_threshold,
        "estimated_fdr": selection.estimated_fdr,
        "fdr_target": selection.fdr_target,
        "warning": selection.warning,
    })
    for g in range(archive.n_conditions):
        for h in range(g + 1, archive.n_conditions):
            report = inference.differential_strength_test(
                archive, (g, h), selection=selection)
            stem = f"differential_{archive.labels[g]}_{archive.labels[h]}"
            inference.write_differential_json(report, out_dir / f"{stem}.json")
            inference.write_differential_csv(report, out_dir / f"{stem}.tsv")
    _write_json(out_dir / "run_metadata.json", {
        "format_version": FORMAT_VERSION,
        "hyperparams": _hp_dict(hp),
        "seed": hp.seed,
        "conditions": archive.labels,
        "n_obs": [d.n_obs for d in data],
        "p": archive.p,
        "iterations": hp.n_burnin + hp.n_iter,
        "stored_draws": archive.n_draws,
        "fdr_target": fdr_target,
        "wall_time_s": wall,
        "threads": threads,
    })
    print(f"fit complete: {archive.n_draws} stored draws, "
          f"{wall:.1f}s, outputs in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _truth_from_dir(truth_dir):
    manifest = _read_structured(Path(truth_dir) / "manifest.json")
    labels = [c["label"] for c in manifest["conditions"]]
    adjacencies = [ingest.load_matrix(Path(truth_dir) / c["adjacency"]).astype(int)
                   for c in manifest["conditions"]]
    precisions = [ingest.load_matrix(Path(truth_dir) / c["precision"])
                  for c in manifest["conditions"]]
    return labels, adjacencies, precisions


def cmd_eval(fit_dir, truth_dir, out_dir=None, external=None, threshold=None):
    """Score a fit (or externally supplied precision matrices) against the
    simulation ground truth: AUC, L1 error, differential TPR/FPR, ROC points.
    """
    labels, adjacencies, precisions = _truth_from_dir(truth_dir)
    p = adjacencies[0].shape[0]
    k, l = edge_pairs(p)
    out_dir = Path(out_dir if out_dir is not None else fit_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if external:
        if len(external) != len(labels):
            raise ConfigurationError(
                f"expected {len(labels)} external matrices, got {len(external)}")
        estimates = [ingest.load_matrix(path) for path in external]
        method = "external"
        thr = threshold if threshold is not None else Hyperparams().edge_threshold
    else:
        fit_dir = Path(fit_dir)
        archive = TraceArchive.load(fit_dir / "trace.npz")
        if archive.p != p:
            raise ConfigurationError(
                f"fit has p={archive.p} but truth has p={p}")
        meta = json.loads((fit_dir / "run_metadata.json").read_text())
        estimates = [archive.mean_precision(g) for g in range(archive.n_conditions)]
        method = "fit"
        thr = threshold if threshold is not None else \
            meta["hyperparams"]["edge_threshold"]
    for est in estimates:
        if est.shape != (p, p):
            raise ConfigurationError(f"estimate shape {est.shape} does not match p={p}")

    rows = []
    selected = []
    for g, label in enumerate(labels):
        scores = np.abs(estimates[g][k, l])
        truth_flat = adjacencies[g][k, l]
        auc = simgen.roc_auc(scores, truth_flat)
        rows.append((label, "auc", auc))
        rows.append((label, "l1_error_x100", 100.0 * simgen.l1_error(estimates[g], precisions[g])))
        pts = simgen.roc_points(scores, truth_flat)
        with open(out_dir / f"roc_{label}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "fpr", "tpr"])
            for row in pts:
                writer.writerow([repr(v) for v in row])
        selected.append(scores > thr)

    for g in range(len(labels)):
        for h in range(g + 1, len(labels)):
            est_diff = {(int(k[e]), int(l[e]))
                        for e in np.flatnonzero(selected[g] != selected[h])}
            true_diff = simgen.edge_set(
                np.bitwise_xor(adjacencies[g], adjacencies[h]))
            tpr, fpr = simgen.differential_tpr_fpr(est_diff, true_diff, k.size)
            pair = f"{labels[g]}|{labels[h]}"
            rows.append((pair, "differential_tpr", tpr))
            rows.append((pair, "differential_fpr", fpr))

    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["target", "metric", "value", "method"])
        for target, metric, value in rows:
            writer.writerow([target, metric, "" if value is None else repr(float(value)),
                             method])
    for target, metric, value in rows:
        print(f"{target:>24s}  {metric:<18s} "
              f"{'undefined' if value is None else f'{value:.4f}'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def cmd_metrics(fit_dir, out_dir=None, threads=1):
    fit_dir = Path(fit_dir)
    archive_path = fit_dir / "trace.npz"
    if not archive_path.exists():
        raise ConfigurationError(f"no trace archive in {fit_dir}")
    archive = TraceArchive.load(archive_path)
    meta = json.loads((fit_dir / "run_metadata.json").read_text())
    hp = Hyperparams(**meta["hyperparams"])
    posteriors = graphmetrics.metric_posteriors(archive, hp)
    out_dir = Path(out_dir if out_dir is not None else fit_dir) / "metric_posteriors"
    written = graphmetrics.write_metric_histograms(posteriors, out_dir)
    print(f"wrote {len(written)} metric tables to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def cmd_diagnose(fit_dir, out_dir=None, n_edge_traces=50, seed=0):
    fit_dir = Path(fit_dir)
    archive_path = fit_dir / "trace.npz"
    if not archive_path.exists():
        raise ConfigurationError(f"no trace archive in {fit_dir}")
    archive = TraceArchive.load(archive_path)
    if archive.n_draws < 25:
        raise ConfigurationError(
            f"archive too short for stationarity checks ({archive.n_draws} draws < 25)")
    out_dir = Path(out_dir if out_dir is not None else fit_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    traces = {}
    for g in range(archive.n_conditions):
        logdets = np.empty(archive.n_draws)
        for s in range(archive.n_draws):
            sign, logdet = np.linalg.slogdet(archive.omega_matrix(g, s))
            logdets[s] = logdet
        traces[f"logdet_{archive.labels[g]}"] = logdets
    rng = substream(seed, "diagnose", "edges")
    n_edge = archive.omega_offdiag.shape[1]
    chosen = rng.choice(n_edge, size=min(n_edge_traces, n_edge), replace=False)
    k, l = edge_pairs(archive.p)
    for g in range(archive.n_conditions):
        rho = archive.partial_corr_draws(g)
        for e in np.sort(chosen):
            traces[f"rho_{archive.labels[g]}_{k[e]}_{l[e]}"] = rho[e]
    traces["concentration"] = archive.concentration

    results = {}
    n_pass = 0
    for name, trace in traces.items():
        res = inference.dickey_fuller(trace)
        results[name] = {"statistic": None if np.isnan(res.statistic) else float(res.statistic),
                         "stationary": bool(res.stationary),
                         "constant": bool(res.constant)}
        n_pass += bool(res.stationary)
    doc = {
        "format_version": FORMAT_VERSION,
        "n_traces": len(traces),
        "n_stationary": n_pass,
        "n_nonstationary": len(traces) - n_pass,
        "traces": results,
    }
    _write_json(out_dir / "diagnostics.json", doc)
    print(f"stationarity: {n_pass}/{len(traces)} traces pass "
          f"(report in {out_dir / 'diagnostics.json'})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="jointnets",
        description="Joint Bayesian estimation of multiple sparse Gaussian "
                    "graphical networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a benchmark scenario")
    sim.add_argument("--scenario", required=True, help="scenario file (TOML or JSON)")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--threads", type=int, default=1)

    fit = sub.add_parser("fit", help="run the sampler on a data manifest")
    fit.add_argument("--manifest", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--config", default=None, help="hyperparameter file (TOML or JSON)")
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--fdr-target", type=float, default=None)
    fit.add_argument("--threads", type=int, default=1)
    fit.add_argument("--progress", type=int, default=None,
                     help="print a line every N sweeps")

    ev = sub.add_parser("eval", help="score a fit against simulation truth")
    ev.add_argument("--fit", default=None, help="fit output directory")
    ev.add_argument("--truth", required=True, help="simulate output directory")
    ev.add_argument("--out", default=None)
    ev.add_argument("--external", nargs="*", default=None,
                    help="score externally estimated precision matrix files instead")
    ev.add_argument("--threshold", type=float, default=None)

    met = sub.add_parser("metrics", help="graph-metric posteriors of a fit")
    met.add_argument("--fit", required=True)
    met.add_argument("--out", default=None)
    met.add_argument("--threads", type=int, default=1)

    diag = sub.add_parser("diagnose", help="stationarity diagnostics of a fit")
    diag.add_argument("--fit", required=True)
    diag.add_argument("--out", default=None)
    diag.add_argument("--seed", type=int, default=0)
    return parser


def _error_record(out_dir, code, err):
    if out_dir is None:
        return
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", {
            "format_version": FORMAT_VERSION,
            "exit_code": code,
            "error_type": type(err).__name__,
            "message": str(err),
            "condition": getattr(err, "condition", None),
            "column": getattr(err, "column", None),
            "iteration": getattr(err, "iteration", None),
        })
    except OSError:
        pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = getattr(args, "out", None)
    if out_dir is None:
        out_dir = getattr(args, "fit", None)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.scenario, args.out, seed=args.seed,
                                replicates=args.replicates, threads=args.threads)
        if args.command == "fit":
            return cmd_fit(args.manifest, args.out, hp_config=args.config,
                           seed=args.seed, fdr_target=args.fdr_target,
                           threads=args.threads, progress=args.progress)
        if args.command == "eval":
            if args.fit is None and not args.external:
                raise ConfigurationError("eval needs --fit or --external")
            return cmd_eval(args.fit, args.truth, out_dir=args.out,
                            external=args.external, threshold=args.threshold)
        if args.command == "metrics":
            return cmd_metrics(args.fit, out_dir=args.out, threads=args.threads)
        if args.command == "diagnose":
            return cmd_diagnose(args.fit, out_dir=args.out, seed=args.seed)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, IngestionError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        _error_record(out_dir, EXIT_USAGE, err)
        return EXIT_USAGE
    except (NumericalDegeneracyError, DivergenceError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        _error_record(out_dir, EXIT_NUMERICAL, err)
        # discard partial outputs so a failed fit leaves only the error record
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
