"""Experiment orchestration: seeded sweeps over grids, CSV/JSON artifacts.

A JSON config document (schema_version 1) names one experiment and its
parameters.  Unknown fields are rejected so a config always reproduces the
same run.  The master seed expands into per-point seeds through the numpy
SeedSequence counter stream (`expand_seeds`); single-threaded re-runs of the
same config produce bit-identical data files (the manifest additionally
records wall time, which naturally varies).
"""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import psd_Q, sample_bits, transmit
from .detector import BPParams, bp_detect, exact_marginals, hard_decisions, overlap_ber
from .ensemble import BPSK, EnsembleSpec, UNMODULATED, sample_code
from .errors import ConfigError, DomainError
from .landscape import (DENSE, SPARSE_BPSK, SPARSE_UNMODULATED,
                        empirical_field_moments, naesat_ground_states,
                        predicted_field_moments)
from .popdyn import (INFORMED, PDParams, RANDOM, metastability_scan, onset_Q,
                     run_to_convergence)

EXPERIMENTS = ("DetectSweep", "PopdynScan", "MomentCheck", "NaesatCensus",
               "EquivalenceCheck")

SCAN_COLUMNS = ["sigma0", "Q", "init", "ber", "ber_se", "free_energy",
                "fe_se", "converged", "multivalued"]

_TOP_FIELDS = {"schema_version", "experiment", "spec", "sigma0_grid", "trials",
               "detector", "popdyn", "seed", "output_dir"}
_SPEC_FIELDS = {"K", "N", "C", "L", "modulation", "regularity"}
_DETECTOR_FIELDS = {"max_iterations", "tolerance", "damping", "schedule", "init"}
_POPDYN_FIELDS = {"population_size", "max_sweeps", "window", "tolerance",
                  "field_cap", "ber_samples", "fe_samples", "se_scale",
                  "se_offset"}


def expand_seeds(master_seed: int, count: int) -> list[int]:
    """Deterministic counter-based expansion of one master seed.

    Words are drawn from the numpy SeedSequence stream of the master seed;
    the expansion is stable across runs and collision-free in practice
    (64-bit words).
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    words = np.random.SeedSequence(int(master_seed)).generate_state(count, np.uint64)
    return [int(w) for w in words]


@dataclass
class ExperimentConfig:
    experiment: str
    spec: EnsembleSpec
    sigma0_grid: list = dc_field(default_factory=list)
    trials: int = 1
    detector: dict = dc_field(default_factory=dict)
    popdyn: dict = dc_field(default_factory=dict)
    seed: int = 0
    output_dir: str | None = None
    schema_version: int = 1

    def popdyn_params(self, seed: int) -> PDParams:
        return PDParams(seed=seed, **self.popdyn)

    def detector_params(self) -> BPParams:
        return BPParams(**self.detector)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "spec": self.spec.to_dict(),
            "sigma0_grid": list(self.sigma0_grid),
            "trials": self.trials,
            "detector": dict(self.detector),
            "popdyn": dict(self.popdyn),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


def _reject_unknown(doc: dict, allowed: set, where: str):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}",
                          fields=unknown)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; fail closed on anything unexpected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(doc, _TOP_FIELDS, "config")
    bad = []
    if doc.get("schema_version") != 1:
        bad.append("schema_version")
    if doc.get("experiment") not in EXPERIMENTS:
        bad.append("experiment")
    if "spec" not in doc or not isinstance(doc.get("spec"), dict):
        bad.append("spec")
    if bad:
        raise ConfigError(f"invalid field(s): {', '.join(bad)}", fields=bad)
    _reject_unknown(doc["spec"], _SPEC_FIELDS, "spec")
    _reject_unknown(doc.get("detector", {}), _DETECTOR_FIELDS, "detector")
    _reject_unknown(doc.get("popdyn", {}), _POPDYN_FIELDS, "popdyn")
    try:
        spec = EnsembleSpec.from_dict(doc["spec"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid spec: {exc}", fields=["spec"]) from exc
    grid = doc.get("sigma0_grid", [])
    if isinstance(grid, dict):
        _reject_unknown(grid, {"start", "stop", "steps"}, "sigma0_grid")
        try:
            grid = np.linspace(grid["start"], grid["stop"],
                               int(grid["steps"])).tolist()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sigma0_grid: {exc}",
                              fields=["sigma0_grid"]) from exc
    try:
        grid = [float(s) for s in grid]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sigma0_grid: {exc}",
                          fields=["sigma0_grid"]) from exc
    needs_grid = doc["experiment"] in ("DetectSweep", "PopdynScan", "MomentCheck",
                                       "EquivalenceCheck")
    if needs_grid and not grid:
        raise ConfigError("sigma0_grid must be non-empty", fields=["sigma0_grid"])
    if any(s <= 0 for s in grid):
        raise ConfigError("sigma0 values must be positive", fields=["sigma0_grid"])
    trials = int(doc.get("trials", 1))
    if trials < 1:
        raise ConfigError("trials must be >= 1", fields=["trials"])
    return ExperimentConfig(
        experiment=doc["experiment"], spec=spec, sigma0_grid=grid,
        trials=trials, detector=dict(doc.get("detector", {})),
        popdyn=dict(doc.get("popdyn", {})), seed=int(doc.get("seed", 0)),
        output_dir=doc.get("output_dir"))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


@dataclass
class ExperimentResult:
    experiment: str
    status: str            # ok | partial
    summary: dict
    files: list
    point_status: list


def _write_csv(path: Path, columns: list, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c]
                        for c in columns])


# --- per-point workers (top-level for process-pool picklability) -----------

def _detect_point(args):
    spec_d, sigma0, trials, detector_d, seed = args
    spec = EnsembleSpec.from_dict(spec_d)
    params = BPParams(**detector_d)
    Q = psd_Q(sigma0)
    child_seeds = expand_seeds(seed, trials)
    ber_e, ber_b, conv = [], [], []
    for s in child_seeds:
        rng = np.random.default_rng(s)
        code = sample_code(spec, rng)
        bits = sample_bits(spec.K, rng)
        record = transmit(code, bits, sigma0, rng)
        dec_e, tie_e = hard_decisions(exact_marginals(code, record, Q))
        _, be = overlap_ber(dec_e, bits, tie_e)
        res = bp_detect(code, record, Q, params)
        dec_b, tie_b = hard_decisions(res)
        _, bb = overlap_ber(dec_b, bits, tie_b)
        ber_e.append(be)
        ber_b.append(bb)
        conv.append(res.converged)
    ber_e = np.array(ber_e)
    ber_b = np.array(ber_b)
    return {
        "sigma0": sigma0, "Q": Q,
        "ber_exact": float(ber_e.mean()), "ber_bp": float(ber_b.mean()),
        "se_exact": float(ber_e.std(ddof=1) / np.sqrt(trials)),
        "se_bp": float(ber_b.std(ddof=1) / np.sqrt(trials)),
        "bp_convergence_rate": float(np.mean(conv)),
    }


def _scan_point(args):
    spec_d, sigma0, popdyn_d, seed = args
    spec = EnsembleSpec.from_dict(spec_d)
    params = PDParams(seed=seed, **popdyn_d)
    return metastability_scan(spec, [sigma0], params)


def _equivalence_point(args):
    spec_d, sigma0, popdyn_d, seed = args
    spec_mod = EnsembleSpec.from_dict(dict(spec_d, modulation=BPSK))
    spec_unm = EnsembleSpec.from_dict(dict(spec_d, modulation=UNMODULATED))
    Q = psd_Q(sigma0)
    out = []
    for j, init_mode in enumerate((RANDOM, INFORMED)):
        row = {"sigma0": sigma0, "Q": Q, "init": init_mode}
        for tag, spc in (("mod", spec_mod), ("unmod", spec_unm)):
            params = PDParams(seed=seed, **popdyn_d)
            rng = np.random.default_rng(np.random.SeedSequence((seed, j, tag == "mod")))
            sol = run_to_convergence(spc, Q, params, init_mode, rng=rng)
            row[f"ber_{tag}"] = sol.ber
            row[f"ber_{tag}_se"] = sol.ber_se
            row[f"fe_{tag}"] = sol.free_energy
            row[f"fe_{tag}_se"] = sol.free_energy_se
        se_b = np.sqrt(row["ber_mod_se"] ** 2 + row["ber_unmod_se"] ** 2)
        se_f = np.sqrt(row["fe_mod_se"] ** 2 + row["fe_unmod_se"] ** 2)
        row["ber_consistent"] = bool(
            abs(row["ber_mod"] - row["ber_unmod"])
            <= max(3.0 * se_b, 1e-2 * max(row["ber_mod"], row["ber_unmod"])))
        row["fe_consistent"] = bool(abs(row["fe_mod"] - row["fe_unmod"]) <= 3.0 * se_f)
        out.append(row)
    return out


def _map_points(worker, arglist, threads):
    if threads > 1 and len(arglist) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, arglist))
    return [worker(a) for a in arglist]


def run_experiment(config: ExperimentConfig, out_dir=None, threads: int = 1) -> ExperimentResult:
    """Execute the configured experiment, writing CSV/JSON plus a manifest.

    Grid points that raise are recorded in the manifest and result as
    failed; the run then completes with status 'partial'.
    """
    t0 = time.time()
    out = Path(out_dir or config.output_dir or
               os.environ.get("CDMALAB_OUT", "cdmalab_out"))
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    point_status: list[dict] = []
    summary: dict = {"experiment": config.experiment}
    grid = config.sigma0_grid
    seeds = expand_seeds(config.seed, max(len(grid), config.trials, 1))

    def record_points(results, labels):
        ok_rows = []
        for res, label in zip(results, labels):
            if isinstance(res, Exception):
                point_status.append({"point": label, "status": f"failed: {res}"})
            else:
                point_status.append({"point": label, "status": "ok"})
                ok_rows.append(res)
        return ok_rows

    def safe_map(worker, arglist, labels):
        if threads > 1 and len(arglist) > 1:
            try:
                return record_points(_map_points(worker, arglist, threads), labels)
            except Exception:
                pass  # fall back to serial to isolate the failing point
        results = []
        for a in arglist:
            try:
                results.append(worker(a))
            except Exception as exc:
                results.append(exc)
        return record_points(results, labels)

    if config.experiment == "DetectSweep":
        args = [(config.spec.to_dict(), s, config.trials, config.detector, seeds[i])
                for i, s in enumerate(grid)]
        rows = safe_map(_detect_point, args, [f"sigma0={s}" for s in grid])
        cols = ["sigma0", "Q", "ber_exact", "ber_bp", "se_exact", "se_bp",
                "bp_convergence_rate"]
        _write_csv(out / "detect_sweep.csv", cols, rows)
        files.append("detect_sweep.csv")
        summary["points"] = rows

    elif config.experiment == "PopdynScan":
        args = [(config.spec.to_dict(), s, config.popdyn, seeds[i])
                for i, s in enumerate(grid)]
        chunks = safe_map(_scan_point, args, [f"sigma0={s}" for s in grid])
        rows = [r for chunk in chunks for r in chunk]
        _write_csv(out / "scan.csv", SCAN_COLUMNS, rows)
        files.append("scan.csv")
        summary["points"] = rows
        summary["onset_Q"] = onset_Q(rows)

    elif config.experiment == "MomentCheck":
        rows = []
        sparse_kind = SPARSE_BPSK if config.spec.modulation == BPSK else SPARSE_UNMODULATED
        for i, sigma0 in enumerate(grid):
            label = f"sigma0={sigma0}"
            try:
                Q = psd_Q(sigma0)
                pred = predicted_field_moments(config.spec, Q, sparse_kind)
                dense = predicted_field_moments(config.spec, Q, DENSE)
                emp = empirical_field_moments(config.spec, Q, config.trials,
                                              np.random.default_rng(seeds[i]),
                                              keep_samples=True)
                rows.append({
                    "sigma0": sigma0, "Q": Q,
                    "pred_mean": pred.mean, "pred_var": pred.variance,
                    "dense_var": dense.variance,
                    "dense_var_truncated": dense.variance_truncated,
                    "emp_mean": emp.mean, "emp_mean_se": emp.mean_se,
                    "emp_var": emp.variance, "emp_var_se": emp.variance_se,
                    "n_samples": emp.n_samples,
                })
                hist, edges = np.histogram(emp.samples, bins=60)
                hpath = out / f"hist_h_{i}.csv"
                _write_csv(hpath, ["bin_left", "bin_right", "count"],
                           [{"bin_left": float(edges[j]), "bin_right": float(edges[j + 1]),
                             "count": int(hist[j])} for j in range(len(hist))])
                files.append(hpath.name)
                point_status.append({"point": label, "status": "ok"})
            except Exception as exc:
                point_status.append({"point": label, "status": f"failed: {exc}"})
        _write_csv(out / "moments.csv",
                   ["sigma0", "Q", "pred_mean", "pred_var", "dense_var",
                    "dense_var_truncated", "emp_mean", "emp_mean_se",
                    "emp_var", "emp_var_se", "n_samples"], rows)
        files.append("moments.csv")
        summary["points"] = rows

    elif config.experiment == "NaesatCensus":
        rows = []
        for i in range(config.trials):
            label = f"instance={i}"
            try:
                rng = np.random.default_rng(seeds[i])
                code = sample_code(config.spec, rng)
                res = naesat_ground_states(code)
                rows.append({
                    "instance": i, "seed": seeds[i], "K": config.spec.K,
                    "N": config.spec.N, "min_all_equal": res.min_all_equal,
                    "n_ground_states": res.n_ground_states,
                    "n_cliques": res.n_cliques,
                })
                point_status.append({"point": label, "status": "ok"})
            except Exception as exc:
                point_status.append({"point": label, "status": f"failed: {exc}"})
        _write_csv(out / "naesat.csv",
                   ["instance", "seed", "K", "N", "min_all_equal",
                    "n_ground_states", "n_cliques"], rows)
        files.append("naesat.csv")
        summary["points"] = rows

    elif config.experiment == "EquivalenceCheck":
        args = [(config.spec.to_dict(), s, config.popdyn, seeds[i])
                for i, s in enumerate(grid)]
        chunks = safe_map(_equivalence_point, args, [f"sigma0={s}" for s in grid])
        rows = [r for chunk in chunks for r in chunk]
        cols = ["sigma0", "Q", "init", "ber_mod", "ber_mod_se", "ber_unmod",
                "ber_unmod_se", "fe_mod", "fe_mod_se", "fe_unmod", "fe_unmod_se",
                "ber_consistent", "fe_consistent"]
        _write_csv(out / "equivalence.csv", cols, rows)
        files.append("equivalence.csv")
        summary["points"] = rows
    else:
        raise ConfigError(f"unknown experiment {config.experiment!r}",
                          fields=["experiment"])

    failed = [p for p in point_status if p["status"] != "ok"]
    status = "partial" if failed else "ok"
    summary["status"] = status
    result_path = out / "result.json"
    with open(result_path, "w") as fh:
        json.dump({"experiment": config.experiment, "status": status,
                   "summary": summary, "files": files}, fh, indent=1, default=str)
    files.append("result.json")

    manifest = [
        f"cdmalab {__version__}",
        f"experiment: {config.experiment}",
        f"config: {json.dumps(config.to_dict(), sort_keys=True)}",
        f"master_seed: {config.seed}",
        f"point_seeds: {seeds}",
        "files:",
    ]
    manifest += [f"  {f}" for f in files]
    manifest.append("points:")
    manifest += [f"  {p['point']}: {p['status']}" for p in point_status]
    manifest.append(f"wall_time_s: {time.time() - t0:.3f}")
    with open(out / "manifest.txt", "w") as fh:
        fh.write("\n".join(manifest) + "\n")
    files.append("manifest.txt")

    return ExperimentResult(experiment=config.experiment, status=status,
                            summary=summary, files=files,
                            point_status=point_status)
