"""Command-line interface.

Subcommands: detect, popdyn, scan, landscape, experiment.  Exit codes:
0 success, 2 validation error, 3 partial failure.  CDMALAB_OUT sets the
default output directory when --out is omitted.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .channel import load_record, psd_Q
from .detector import BPParams, bp_detect, exact_marginals, hard_decisions, overlap_ber
from .ensemble import (BPSK, EnsembleSpec, FULLY_REGULAR, MODULATIONS,
                       REGULARITIES, UNMODULATED, load_code)
from .errors import (CapacityError, ConfigError, DomainError,
                     InfeasibleSpecError, SamplingFailureError)
from .harness import SCAN_COLUMNS, load_config, run_experiment
from .landscape import (coupling_field_decomposition, empirical_field_moments,
                        naesat_ground_states, predicted_field_moments,
                        SPARSE_BPSK, SPARSE_UNMODULATED)
from .popdyn import PDParams, metastability_scan, onset_Q, run_to_convergence


def _default_out(explicit):
    if explicit:
        return Path(explicit)
    env = os.environ.get("CDMALAB_OUT")
    return Path(env) if env else None


def _emit_json(doc, out_path):
    text = json.dumps(doc, indent=1)
    if out_path:
        Path(out_path).write_text(text + "\n")
    else:
        print(text)


def _min_spec(C: int, L: int, modulation: str) -> EnsembleSpec:
    # smallest fully regular shape with these degrees (K=L, N=C); the
    # population equations depend only on (C, L, modulation)
    return EnsembleSpec(K=L, N=C, C=C, L=L, modulation=modulation,
                        regularity=FULLY_REGULAR)


def _parse_grid(text: str) -> list[float]:
    try:
        start, stop, steps = text.split(":")
        grid = np.linspace(float(start), float(stop), int(steps))
    except Exception as exc:
        raise DomainError(f"bad grid spec {text!r}, expected start:stop:steps") from exc
    if np.any(grid <= 0):
        raise DomainError("sigma0 grid must be positive")
    return [float(g) for g in grid]


def cmd_detect(args) -> int:
    code = load_code(args.code)
    record = load_record(args.record)
    Q = args.q if args.q is not None else record.Q
    if not math.isfinite(Q):
        raise DomainError("record is noiseless; pass --q explicitly")
    if args.method == "exact":
        marg = exact_marginals(code, record, Q)
    else:
        params = BPParams(max_iterations=args.max_iter, tolerance=args.tol,
                          damping=args.damping, init=args.init)
        marg = bp_detect(code, record, Q, params)
    decided, ties = hard_decisions(marg)
    m, ber = overlap_ber(decided, record.bits, ties)
    _emit_json({
        "method": marg.method,
        "prob_plus": marg.prob_plus.tolist(),
        "iterations": marg.iterations,
        "converged": marg.converged,
        "residual": marg.residual,
        "decisions": decided.astype(int).tolist(),
        "ties": ties.astype(bool).tolist(),
        "overlap": m,
        "ber": ber,
    }, args.out)
    return 0


def cmd_popdyn(args) -> int:
    spec = _min_spec(args.C, args.L, BPSK if args.ensemble == "bpsk" else UNMODULATED)
    params = PDParams(population_size=args.pop_size, max_sweeps=args.max_sweeps,
                      window=args.window, tolerance=args.tol, seed=args.seed)
    sol = run_to_convergence(spec, psd_Q(args.sigma0), params, args.init)
    doc = sol.to_dict()
    doc.update({"C": args.C, "L": args.L, "sigma0": args.sigma0,
                "Q": psd_Q(args.sigma0), "ensemble": args.ensemble,
                "seed": args.seed})
    out_dir = _default_out(args.out)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        _emit_json(doc, out_dir / "solution.json")
        with open(out_dir / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "ber", "mean_tanh_h"])
            for i, (b, th) in enumerate(sol.history, start=1):
                w.writerow([i, repr(float(b)), repr(float(th))])
        print(f"wrote {out_dir}/solution.json and history.csv")
    else:
        _emit_json(doc, None)
    return 0


def cmd_scan(args) -> int:
    spec = _min_spec(args.C, args.L, BPSK if args.ensemble == "bpsk" else UNMODULATED)
    params = PDParams(population_size=args.pop_size, max_sweeps=args.max_sweeps,
                      seed=args.seed)
    rows = metastability_scan(spec, _parse_grid(args.sigma0_grid), params)
    out_dir = _default_out(args.out) or Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "scan.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCAN_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c]
                        for c in SCAN_COLUMNS])
    print(f"wrote {path} ({len(rows)} rows); onset_Q={onset_Q(rows)}")
    return 0


def _require(args, names):
    missing = [n for n in names if getattr(args, n.lstrip("-").replace("-", "_"),
                                           None) is None]
    if missing:
        raise DomainError(f"--{args.mode} mode requires {', '.join(missing)}")


def cmd_landscape(args) -> int:
    if args.mode == "decompose":
        _require(args, ["code", "record"])
        code = load_code(args.code)
        record = load_record(args.record)
        Q = args.q if args.q is not None else record.Q
        if not math.isfinite(Q):
            raise DomainError("record is noiseless; pass --q explicitly")
        cf = coupling_field_decomposition(code, record, Q)
        doc = {
            "Q": Q,
            "couplings": [[int(a), int(b), float(j)] for a, b, j in
                          zip(cf.pair_a, cf.pair_b, cf.couplings)],
            "fields": cf.fields.tolist(),
            "constant_offset": cf.constant_offset,
        }
        _emit_json(doc, args.out)
        if args.hist_out:
            _write_hist(args.hist_out, {"h": cf.fields, "J": cf.couplings})
    elif args.mode == "moments":
        _require(args, ["K", "N", "C", "L", "q"])
        spec = EnsembleSpec(K=args.K, N=args.N, C=args.C, L=args.L,
                            modulation=args.modulation, regularity=args.regularity)
        kind = SPARSE_BPSK if spec.modulation == BPSK else SPARSE_UNMODULATED
        pred = predicted_field_moments(spec, args.q, kind)
        emp = empirical_field_moments(spec, args.q, args.trials,
                                      np.random.default_rng(args.seed),
                                      keep_samples=bool(args.hist_out))
        _emit_json({
            "predicted": {"mean": pred.mean, "variance": pred.variance},
            "empirical": {"mean": emp.mean, "mean_se": emp.mean_se,
                          "variance": emp.variance, "variance_se": emp.variance_se,
                          "n_samples": emp.n_samples, "n_codes": emp.n_codes},
        }, args.out)
        if args.hist_out:
            _write_hist(args.hist_out, {"h": emp.samples})
    else:  # naesat
        _require(args, ["code"])
        code = load_code(args.code)
        res = naesat_ground_states(code)
        _emit_json({
            "min_all_equal": res.min_all_equal,
            "n_ground_states": res.n_ground_states,
            "n_cliques": res.n_cliques,
            "representatives": [s.astype(int).tolist() for s in res.ground_states[:8]],
        }, args.out)
    return 0


def _write_hist(prefix, arrays: dict):
    for name, data in arrays.items():
        counts, edges = np.histogram(np.asarray(data, dtype=float), bins=60)
        path = Path(f"{prefix}_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for i, c in enumerate(counts):
                w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])


def cmd_experiment(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = _default_out(args.out) or config.output_dir
    result = run_experiment(config, out_dir=out_dir, threads=args.threads)
    print(f"experiment {result.experiment}: {result.status}; "
          f"files: {', '.join(result.files)}")
    return 0 if result.status == "ok" else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdmalab",
                                description="sparse-CDMA detection laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="run a detector on a code + record")
    d.add_argument("--code", required=True)
    d.add_argument("--record", required=True)
    d.add_argument("--method", choices=["exact", "bp"], default="bp")
    d.add_argument("--q", type=float, default=None)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--max-iter", type=int, default=1000)
    d.add_argument("--tol", type=float, default=1e-8)
    d.add_argument("--damping", type=float, default=0.0)
    d.add_argument("--init", choices=["uninformed", "informed"], default="uninformed")
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_detect)

    pd = sub.add_parser("popdyn", help="population dynamics at one noise level")
    pd.add_argument("--C", type=int, required=True)
    pd.add_argument("--L", type=int, required=True)
    pd.add_argument("--sigma0", type=float, required=True)
    pd.add_argument("--pop-size", type=int, default=10_000)
    pd.add_argument("--init", choices=["random", "informed", "zero"], default="random")
    pd.add_argument("--max-sweeps", type=int, default=600)
    pd.add_argument("--window", type=int, default=50)
    pd.add_argument("--tol", type=float, default=1e-3)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--ensemble", choices=["bpsk", "unmod"], default="bpsk")
    pd.add_argument("--out", default=None)
    pd.set_defaults(func=cmd_popdyn)

    sc = sub.add_parser("scan", help="branch scan over a sigma0 grid")
    sc.add_argument("--C", type=int, required=True)
    sc.add_argument("--L", type=int, required=True)
    sc.add_argument("--sigma0-grid", required=True, help="start:stop:steps")
    sc.add_argument("--pop-size", type=int, default=10_000)
    sc.add_argument("--max-sweeps", type=int, default=600)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--ensemble", choices=["bpsk", "unmod"], default="bpsk")
    sc.add_argument("--out", default=None)
    sc.set_defaults(func=cmd_scan)

    ls = sub.add_parser("landscape", help="coupling/field and NAE-SAT analysis")
    ls.add_argument("--mode", choices=["decompose", "moments", "naesat"], required=True)
    ls.add_argument("--code", default=None)
    ls.add_argument("--record", default=None)
    ls.add_argument("--q", type=float, default=None)
    ls.add_argument("--K", type=int, default=None)
    ls.add_argument("--N", type=int, default=None)
    ls.add_argument("--C", type=int, default=None)
    ls.add_argument("--L", type=int, default=None)
    ls.add_argument("--modulation", choices=list(MODULATIONS), default=BPSK)
    ls.add_argument("--regularity", choices=list(REGULARITIES), default=FULLY_REGULAR)
    ls.add_argument("--trials", type=int, default=10_000)
    ls.add_argument("--seed", type=int, default=0)
    ls.add_argument("--out", default=None)
    ls.add_argument("--hist-out", default=None,
                    help="prefix for CSV histograms of h (and J)")
    ls.set_defaults(func=cmd_landscape)

    ex = sub.add_parser("experiment", help="run a configured experiment")
    ex.add_argument("--config", required=True)
    ex.add_argument("--seed", type=int, default=None)
    ex.add_argument("--threads", type=int, default=1)
    ex.add_argument("--out", default=None)
    ex.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, CapacityError, InfeasibleSpecError,
            SamplingFailureError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
