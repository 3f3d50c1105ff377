"""Command-line pipeline: synth, fit, loo, predict, report.

Every command is deterministic given its flags and inputs: all randomness
derives from the single --seed flag through named stream derivations
(run -> subject -> generation -> slot), outputs carry no timestamps, and
every output file gets a sidecar `<name>.meta.json` naming the producing
configuration. Exit code 0 on success; on failure a single line
``error: <message>`` goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import behavior as bh
from . import curriculum, evolution, fitness, generalization, presets
from .connectome import (Cohort, load_cohort, save_matrix,
                         save_parcellation, synth_cohort)
from .dmf import default_ranges, mode_of_length
from .rng import RngStream, hash_label

_LBL_SHUFFLE = 0x53485546  # "SHUF"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), precision=17, trim="-",
                                      unique=True)


def _write_csv(path: Path, header: list, rows: list, meta: dict) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(c) if isinstance(c, float) else c for c in row])
    _write_meta(path, meta)


def _write_json(path: Path, obj, meta: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    _write_meta(path, meta)


def _write_meta(path: Path, meta: dict) -> None:
    side = path.with_name(path.name + ".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str | None) -> dict:
    """Flat `key = value` file; later flags override these values."""
    if path is None:
        return {}
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln + 1}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config_defaults(args: argparse.Namespace, parser: argparse.ArgumentParser,
                           config: dict, argv: list) -> None:
    """Config-file values fill in flags the user did not pass."""
    given = {a.lstrip("-").replace("-", "_").split("=")[0]
             for a in argv if a.startswith("--")}
    for key, raw in config.items():
        if key in given or not hasattr(args, key):
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(raw))
        elif isinstance(current, float):
            setattr(args, key, float(raw))
        else:
            setattr(args, key, raw)


def _shuffle_seed_for(run_seed: int, subject_id: str) -> int:
    return (RngStream.from_seed(run_seed).derive(_LBL_SHUFFLE)
            .derive(hash_label(subject_id)).state)


def _schedule_for(strategy: str, generations: int, run_seed: int,
                  subject_id: str) -> curriculum.Schedule:
    shuffle_seed = None
    if strategy == curriculum.STRATEGY_SHUFFLED:
        shuffle_seed = _shuffle_seed_for(run_seed, subject_id)
    return curriculum.build_schedule(strategy, generations, shuffle_seed)


def _fit_paths(out: Path, subject_id: str, strategy: str) -> tuple[Path, Path]:
    stem = f"{subject_id}_{strategy}"
    return out / f"{stem}_best_genome.json", out / f"{stem}_generations.csv"


def _in_sample_permutation(X, y, lam, n_perm, stream):
    """Naive (in-sample) R2 with a permutation null of the same statistic."""
    r2 = bh.in_sample_r2(X, y, lam)
    y = np.asarray(y, dtype=float)
    null_ge = 0
    pstream = stream.derive(0x5045524D)
    for i in range(n_perm):
        y_perm = y[pstream.derive(i).permutation(len(y))]
        if bh.in_sample_r2(X, y_perm, lam) >= r2:
            null_ge += 1
    return r2, (1.0 + null_ge) / (1.0 + n_perm)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = presets.truth_by_name(args.truth)
    cohort = synth_cohort(args.regions, args.per_rsn, args.subjects,
                          truth, args.noise, args.seed)
    meta = {"command": "synth", "seed": args.seed, "regions": args.regions,
            "per_rsn": args.per_rsn, "subjects": args.subjects,
            "noise": args.noise, "truth": args.truth}

    parc_path = out / "parcellation.csv"
    save_parcellation(cohort.parcellation, parc_path)
    _write_meta(parc_path, meta)

    entries = []
    for s in cohort.subjects:
        sc_path = out / f"{s.id}_sc.csv"
        fc_path = out / f"{s.id}_fc.csv"
        save_matrix(s.sc.weights, sc_path)
        _write_meta(sc_path, meta)
        save_matrix(s.fc_empirical, fc_path)
        _write_meta(fc_path, meta)
        entries.append({"id": s.id, "sc_path": sc_path.name,
                        "fc_path": fc_path.name,
                        "behavior": {k: float(v) for k, v in
                                     sorted(s.behavior.items())}})
    manifest = {"parcellation_path": parc_path.name, "subjects": entries}
    _write_json(out / "manifest.json", manifest, meta)

    if hasattr(truth, "to_vector"):
        truth_obj = {"mode": "heterogeneous",
                     "values": [float(v) for v in truth.to_vector()]}
    else:
        truth_obj = {"mode": "homogeneous",
                     "values": [float(v) for v in truth.to_array()]}
    _write_json(out / "truth.json", truth_obj, meta)
    print(f"wrote cohort of {args.subjects} subjects to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _fit_one_subject(subject, parcellation, args) -> tuple[str, float]:
    ranges = default_ranges()
    schedule = _schedule_for(args.strategy, args.generations, args.seed,
                             subject.id)
    config = evolution.GaConfig(
        pop_size=args.pop_size, elite_count=args.elite_count,
        tournament_k=args.tournament_k, p_mut=args.p_mut,
        total_generations=args.generations,
        seed=RngStream.from_seed(args.seed).derive(hash_label(subject.id)).state)
    if args.backend == fitness.MOMENTS:
        evaluator = fitness.MomentsEvaluator(subject, ranges, parcellation)
    else:
        sim = fitness.SimConfig(duration_ms=args.sim_duration_ms,
                                seed=config.seed)

        def evaluator(genome):
            return fitness.simulation_fitness(
                genome, ranges, mode_of_length(len(genome)), parcellation,
                subject, sim)

    best, records = evolution.evolve(config, schedule, evaluator)

    out = Path(args.out)
    genome_path, gen_path = _fit_paths(out, subject.id, args.strategy)
    meta = {"command": "fit", "seed": args.seed, "strategy": args.strategy,
            "backend": args.backend, "subject": subject.id,
            "generations": args.generations, "pop_size": args.pop_size}
    _write_json(genome_path, [int(g) for g in best], meta)
    _write_csv(gen_path, ["generation", "best_score", "mean_score",
                          "phase_index"],
               evolution.records_to_rows(records), meta)
    return subject.id, records[-1].best_score


def cmd_fit(args) -> int:
    cohort = load_cohort(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    subjects = list(cohort.subjects)
    if args.subject is not None:
        subjects = [cohort.subject(args.subject)]

    results: dict[str, float | None] = {}
    failures: dict[str, str] = {}

    def run(subject):
        try:
            return _fit_one_subject(subject, cohort.parcellation, args)
        except Exception as exc:  # keep fitting the other subjects
            return subject.id, exc

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            outcomes = list(pool.map(run, subjects))
    else:
        outcomes = [run(s) for s in subjects]

    for sid, outcome in outcomes:
        if isinstance(outcome, Exception):
            failures[sid] = str(outcome)
        else:
            results[sid] = outcome

    for sid in sorted(results):
        print(f"{sid} {args.strategy} best_fitness={results[sid]:.6f}")
    for sid in sorted(failures):
        print(f"error: subject {sid} failed: {failures[sid]}",
              file=sys.stderr)
    return 0 if not failures else 3


# ---------------------------------------------------------------------------
# loo
# ---------------------------------------------------------------------------

def _load_fitted_vectors(cohort: Cohort, fit_dir: Path, strategy: str) -> dict:
    """Decoded physical parameter vectors (20 or 140) per subject id."""
    from .dmf import genes_to_values
    ranges = default_ranges()
    fitted = {}
    missing = []
    for s in cohort.subjects:
        genome_path, _ = _fit_paths(fit_dir, s.id, strategy)
        if not genome_path.exists():
            missing.append(str(genome_path))
            continue
        genes = np.asarray(json.loads(genome_path.read_text()), dtype=np.int64)
        mode_of_length(len(genes))  # validates the length
        fitted[s.id] = np.concatenate(
            [genes_to_values(genes[i:i + 20], ranges)
             for i in range(0, len(genes), 20)])
    if missing:
        raise FileNotFoundError("missing fit outputs: " + ", ".join(missing))
    return fitted


def cmd_loo(args) -> int:
    cohort = load_cohort(args.manifest)
    fitted = _load_fitted_vectors(cohort, Path(args.fit_dir), args.strategy)
    results = generalization.loo_evaluate(cohort, fitted, p=args.trim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"command": "loo", "strategy": args.strategy, "trim": args.trim,
            "backend": fitness.MOMENTS, "fit_dir": str(args.fit_dir)}
    rows = [(r.subject_id, args.strategy, r.loo_score, r.stable)
            for r in results]
    _write_csv(out / f"loo_{args.strategy}.csv",
               ["subject_id", "strategy", "loo_score", "stable"], rows, meta)
    print(f"wrote {len(rows)} leave-one-out rows for {args.strategy}")
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def cmd_predict(args) -> int:
    cohort = load_cohort(args.manifest)
    fit_dir = Path(args.fit_dir)
    fitted = _load_fitted_vectors(cohort, fit_dir, args.strategy)

    with_behavior = [s for s in cohort.subjects if s.behavior]
    skipped = [s.id for s in cohort.subjects if not s.behavior]
    for sid in skipped:
        print(f"warning: subject {sid} has no behavior values; excluded",
              file=sys.stderr)
    if len(with_behavior) < 5:
        print("error: need at least 5 subjects with behavior", file=sys.stderr)
        return 2
    targets = sorted({name for s in with_behavior for name in s.behavior})
    vectors = np.stack([fitted[s.id] for s in with_behavior])

    heterogeneous = vectors.shape[1] == 140
    if args.feature_mode == bh.FEATURE_PER_RSN and heterogeneous:
        rsn_list = list(bh.RSN_LABELS)
    else:
        rsn_list = [None]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    stream = RngStream.from_seed(args.seed)
    for target in targets:
        have = [i for i, s in enumerate(with_behavior) if target in s.behavior]
        for i, s in enumerate(with_behavior):
            if i not in have:
                print(f"warning: subject {s.id} has no value for "
                      f"{target}; excluded", file=sys.stderr)
        if len(have) < 5:
            print(f"warning: target {target} has fewer than 5 subjects; "
                  f"skipped", file=sys.stderr)
            continue
        y = np.array([float(with_behavior[i].behavior[target]) for i in have])
        pvals = []
        r2s = []
        for rsn in rsn_list:
            X = bh.extract_features(vectors[have], args.feature_mode, rsn)
            tstream = stream.derive(hash_label(target)).derive(
                hash_label(rsn or "all"))
            if args.in_sample:
                r2, p = _in_sample_permutation(X, y, args.ridge_lambda,
                                               args.n_perm, tstream)
            else:
                r2, p, _ = bh.permutation_test(X, y, args.ridge_lambda,
                                               args.n_perm, tstream,
                                               k_folds=args.k_folds)
            pvals.append(p)
            r2s.append(r2)
        qvals = bh.bh_fdr(pvals)
        for rsn, r2, p, q in zip(rsn_list, r2s, pvals, qvals):
            rows.append((target, args.strategy, rsn or "all", float(r2),
                         float(p), float(q), args.n_perm, args.ridge_lambda,
                         args.feature_mode))
    meta = {"command": "predict", "seed": args.seed,
            "strategy": args.strategy, "lambda": args.ridge_lambda,
            "n_perm": args.n_perm, "feature_mode": args.feature_mode,
            "k_folds": args.k_folds, "in_sample": bool(args.in_sample)}
    _write_csv(out / f"predict_{args.strategy}.csv",
               ["target", "strategy", "rsn", "r2", "p", "q", "n_perm",
                "lambda", "feature_mode"], rows, meta)
    print(f"wrote {len(rows)} prediction rows for {args.strategy}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    cohort = load_cohort(args.manifest)
    fit_dir = Path(args.fit_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    meta = {"command": "report", "strategies": strategies,
            "fit_dir": str(fit_dir)}

    fit_rows = []
    for strategy in strategies:
        for s in cohort.subjects:
            _, gen_path = _fit_paths(fit_dir, s.id, strategy)
            if not gen_path.exists():
                print(f"error: missing {gen_path}", file=sys.stderr)
                return 2
            with gen_path.open() as fh:
                last = list(csv.DictReader(fh))[-1]
            fit_rows.append((s.id, strategy, float(last["best_score"])))
    _write_csv(out / "fitness_by_strategy.csv",
               ["subject_id", "strategy", "best_fitness"], fit_rows, meta)

    loo_rows = []
    for strategy in strategies:
        loo_path = Path(args.loo_dir) / f"loo_{strategy}.csv" \
            if args.loo_dir else None
        if loo_path and loo_path.exists():
            with loo_path.open() as fh:
                for row in csv.DictReader(fh):
                    loo_rows.append((row["subject_id"], strategy,
                                     float(row["loo_score"]), row["stable"]))
    if loo_rows:
        _write_csv(out / "loo_by_strategy.csv",
                   ["subject_id", "strategy", "loo_score", "stable"],
                   loo_rows, meta)

    # decoded parameter vectors for external embedding tools
    ranges = default_ranges()
    param_rows = []
    for strategy in strategies:
        fitted = _load_fitted_vectors(cohort, fit_dir, strategy)
        for sid in sorted(fitted):
            vec = fitted[sid]
            if len(vec) == 20:
                vec = np.tile(vec, 7)
            param_rows.append((sid, strategy) + tuple(float(v) for v in vec))
    from .dmf import PARAM_NAMES
    cols = ["subject_id", "strategy"] + [
        f"{rsn}_{p}" for rsn in bh.RSN_LABELS for p in PARAM_NAMES]
    _write_csv(out / "parameter_vectors.csv", cols, param_rows, meta)
    print(f"wrote report tables for {len(strategies)} strategies")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmfevo",
        description="Whole-brain mean-field models fitted with "
                    "curriculum-driven genetic algorithms")
    parser.add_argument("--config", default=None,
                        help="flat key = value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--regions", type=int, default=28)
    p.add_argument("--per-rsn", type=int, default=4)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", default="rsn-varying",
                   choices=["homogeneous", "rsn-varying"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit each subject with one strategy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", required=True,
                   choices=list(curriculum.STRATEGIES))
    p.add_argument("--backend", default=fitness.MOMENTS,
                   choices=[fitness.MOMENTS, fitness.SIMULATION])
    p.add_argument("--generations", type=int, default=120)
    p.add_argument("--pop-size", type=int, default=100)
    p.add_argument("--elite-count", type=int, default=20)
    p.add_argument("--tournament-k", type=int, default=3)
    p.add_argument("--p-mut", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subject", default=None,
                   help="fit a single subject instead of the whole cohort")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sim-duration-ms", type=float, default=300_000.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("loo", help="leave-one-out generalization scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", required=True,
                   choices=list(curriculum.STRATEGIES))
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--trim", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("predict", help="behavioral prediction statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", required=True,
                   choices=list(curriculum.STRATEGIES))
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--feature-mode", default=bh.FEATURE_PER_RSN,
                   choices=[bh.FEATURE_PER_RSN, bh.FEATURE_RSN_AVERAGE])
    p.add_argument("--ridge-lambda", type=float, default=1.0)
    p.add_argument("--n-perm", type=int, default=1000)
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--in-sample", action="store_true",
                   help="report in-sample R2 instead of cross-validated")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="summary tables across strategies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--loo-dir", default=None)
    p.add_argument("--strategies", required=True,
                   help="comma-separated strategy names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config_file(args.config)
        _apply_config_defaults(args, parser, config, argv)
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
