"""Command line interface: ingest, rank, path, simulate.

Exit codes: 0 on success, 2 on input or configuration errors, 3 when a
numerical procedure fails.  Every run writes ``manifest.json`` into the
output directory recording the command, a hash of its resolved
configuration, the seed, the package version and digests of the inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .comparisons import (
    ComparisonDataset,
    connected_components,
    dataset_from_match_csv,
    from_citation_matrix,
    read_citation_csv,
)
from .exceptions import PairRankError
from .fusedlasso import default_lambda_grid, solve_path
from .npmle import PosteriorSummary
from .scores import METHODS, RankingTable
from .simlab import SimConfig, compute_method_scores, run_grid

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    raise TypeError(f"not JSON serializable: {type(value)}")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, params: dict, inputs, seed) -> None:
    canonical = json.dumps(params, sort_keys=True, default=_json_default)
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "version": __version__,
        "input_digests": {str(p): _sha256_file(Path(p)) for p in inputs},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_table(frame: pd.DataFrame, out_dir: Path, name: str, fmt: str) -> Path:
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
    else:
        path = out_dir / f"{name}.json"
        records = frame.to_dict(orient="records")
        path.write_text(json.dumps(records, indent=2, default=_json_default) + "\n")
    return path


def _prepare_out_dir(args) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _load_dataset(path) -> ComparisonDataset:
    payload = json.loads(Path(path).read_text())
    return ComparisonDataset.from_dict(payload)


def _parse_methods(spec: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in spec.split(",") if m.strip())
    if not methods:
        raise ValueError("no methods requested")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    return methods


def _cmd_ingest(args) -> int:
    out_dir = _prepare_out_dir(args)
    input_path = Path(args.input)
    if args.kind == "citations":
        if args.labels is not None:
            raise ValueError("--labels only applies to --kind matches")
        dataset = from_citation_matrix(read_citation_csv(input_path))
    else:
        labels = None
        if args.labels is not None:
            labels = [cell.strip() for cell in args.labels.split(",") if cell.strip()]
        dataset = dataset_from_match_csv(input_path, labels=labels)
    components = connected_components(dataset)
    summary = {
        "players": dataset.n_players,
        "pairs": dataset.n_pairs,
        "total_matches": dataset.total_matches,
        "connected": len(components) == 1,
        "n_components": len(components),
        "component_sizes": [len(c) for c in components],
    }
    (out_dir / "dataset.json").write_text(
        json.dumps(dataset.to_dict(), indent=2) + "\n"
    )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not summary["connected"]:
        print(
            f"warning: comparison graph has {len(components)} components; "
            "ratings are only identified within a component",
            file=sys.stderr,
        )
    _write_manifest(
        out_dir, "ingest",
        {"input": str(input_path), "kind": args.kind, "labels": args.labels,
         "format": args.format},
        [input_path], args.seed,
    )
    print(f"wrote dataset.json and summary.json to {out_dir}")
    return EXIT_OK


def _posterior_frames(posterior: PosteriorSummary):
    rows = list(posterior.rows())
    summary = pd.DataFrame(
        rows,
        columns=["label", "theta_hat", "se", "post_mean",
                 "post_mean_smoothed", "post_rank"],
    )
    mixing = pd.DataFrame({
        "atom": posterior.mixing.atoms,
        "weight": posterior.mixing.weights,
    })
    return summary, mixing


def _cmd_rank(args) -> int:
    out_dir = _prepare_out_dir(args)
    dataset = _load_dataset(args.dataset)
    methods = _parse_methods(args.methods)
    outcome = compute_method_scores(
        dataset, methods, rank_ties=args.ties, bandwidth=args.bandwidth
    )
    labels = tuple(dataset.label_of(k) for k in range(dataset.n_players))
    rows = []
    for method in methods:
        if method not in outcome.scores:
            continue
        table = RankingTable.from_scores(method, outcome.scores[method], labels)
        rows.extend(table.rows())
    for method, message in sorted(outcome.errors.items()):
        print(f"warning: {method} failed: {message}", file=sys.stderr)
    written = []
    if rows:
        rankings = pd.DataFrame(rows, columns=["method", "label", "score", "rank"])
        written.append(_write_table(rankings, out_dir, "rankings", args.format))
    if outcome.posterior is not None:
        post, mixing = _posterior_frames(outcome.posterior)
        written.append(_write_table(post, out_dir, "posterior_summary", args.format))
        written.append(_write_table(mixing, out_dir, "mixing", args.format))
    _write_manifest(
        out_dir, "rank",
        {"dataset": str(args.dataset), "methods": list(methods),
         "ties": args.ties, "bandwidth": args.bandwidth, "format": args.format,
         "failures": dict(sorted(outcome.errors.items()))},
        [args.dataset], args.seed,
    )
    if not outcome.scores:
        print("error: every requested method failed", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {', '.join(p.name for p in written)} to {out_dir}")
    return EXIT_OK


def _cmd_path(args) -> int:
    out_dir = _prepare_out_dir(args)
    dataset = _load_dataset(args.dataset)
    if args.lambdas is not None:
        lambdas = np.array([float(x) for x in args.lambdas.split(",") if x.strip()])
    else:
        lambdas = default_lambda_grid(dataset, n_points=args.n_lambdas)
    path = solve_path(dataset, lambdas)
    selected = path.select()
    labels = tuple(dataset.label_of(k) for k in range(dataset.n_players))
    trajectory_rows = []
    summary_rows = []
    for sol in path:
        group_of = {}
        for gid, grp in enumerate(sol.groups):
            for player in grp:
                group_of[player] = gid
        for player in range(dataset.n_players):
            trajectory_rows.append({
                "lambda": sol.lam,
                "player_label": labels[player],
                "alpha": sol.alpha[player],
                "group_id": group_of[player],
            })
        summary_rows.append({
            "lambda": sol.lam, "k": sol.k, "loglik": sol.loglik,
            "bic": sol.bic, "selected": int(sol.lam == selected.lam),
        })
    written = [
        _write_table(pd.DataFrame(trajectory_rows), out_dir, "path_trajectories",
                     args.format),
        _write_table(pd.DataFrame(summary_rows), out_dir, "path_summary", args.format),
    ]
    _write_manifest(
        out_dir, "path",
        {"dataset": str(args.dataset), "lambdas": [float(x) for x in lambdas],
         "format": args.format},
        [args.dataset], args.seed,
    )
    print(
        f"wrote {', '.join(p.name for p in written)} to {out_dir} "
        f"(selected lambda={selected.lam:g}, k={selected.k})"
    )
    return EXIT_OK


def _load_sim_payload(args) -> tuple[dict, list]:
    if args.preset is not None:
        ref = resources.files("pairrank").joinpath("presets", f"{args.preset}.json")
        if not ref.is_file():
            available = sorted(
                p.name[:-5]
                for p in resources.files("pairrank").joinpath("presets").iterdir()
                if p.name.endswith(".json")
            )
            raise ValueError(
                f"unknown preset {args.preset!r}; available: {', '.join(available)}"
            )
        return json.loads(ref.read_text()), []
    payload = json.loads(Path(args.config).read_text())
    return payload, [args.config]


def _cmd_simulate(args) -> int:
    out_dir = _prepare_out_dir(args)
    payload, inputs = _load_sim_payload(args)
    config = SimConfig.from_dict(payload)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = run_grid(config, n_jobs=args.threads)
    written = [
        _write_table(result.results, out_dir, "results", args.format),
        _write_table(result.summary, out_dir, "summary", args.format),
    ]
    _write_manifest(
        out_dir, "simulate",
        {"config": config.to_dict(), "format": args.format},
        inputs, config.seed,
    )
    n_failed = int((result.results["status"] == "failed").sum())
    if n_failed:
        print(f"warning: {n_failed} failed method-replications", file=sys.stderr)
    dead_cells = []
    for (law, design, n), block in result.results.groupby(["law", "design", "n"]):
        if (block["status"] == "failed").all():
            dead_cells.append((law, design, int(n), len(block)))
    if dead_cells:
        for law, design, n, count in dead_cells:
            print(
                f"error: cell law={law} design={design} n={n}: "
                f"all {count} method-replications failed",
                file=sys.stderr,
            )
        return EXIT_NUMERICAL
    print(f"wrote {', '.join(p.name for p in written)} to {out_dir}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the run seed (simulate) / recorded seed")
    common.add_argument("--threads", type=int, default=1,
                        help="parallel workers for replications")
    common.add_argument("--out-dir", default="pairrank-out",
                        help="output directory (created if missing)")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="serialization for result tables")

    parser = argparse.ArgumentParser(
        prog="pairrank",
        description="Rating and ranking from paired comparisons",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser(
        "ingest", parents=[common],
        help="read a citation matrix or match log into a dataset",
    )
    ingest.add_argument("input", help="CSV file to ingest")
    ingest.add_argument("--kind", choices=("citations", "matches"), required=True)
    ingest.add_argument(
        "--labels", default=None,
        help="comma-separated label universe for match logs; rows naming "
             "anything else are rejected",
    )
    ingest.set_defaults(func=_cmd_ingest)

    rank = sub.add_parser(
        "rank", parents=[common], help="score and rank players in a dataset",
    )
    rank.add_argument("dataset", help="dataset.json produced by ingest")
    rank.add_argument("--methods", default=",".join(METHODS),
                      help="comma-separated subset of " + ",".join(METHODS))
    rank.add_argument("--ties", choices=("weak", "half"), default="weak",
                      help="tie handling for posterior rank scores")
    rank.add_argument("--bandwidth", type=float, default=None,
                      help="smoothing bandwidth (default: normal reference rule)")
    rank.set_defaults(func=_cmd_rank)

    path = sub.add_parser(
        "path", parents=[common], help="trace the grouped-rating path",
    )
    path.add_argument("dataset", help="dataset.json produced by ingest")
    path.add_argument("--lambdas", default=None,
                      help="comma-separated penalty grid (default: automatic)")
    path.add_argument("--n-lambdas", type=int, default=51,
                      help="size of the automatic grid")
    path.set_defaults(func=_cmd_path)

    simulate = sub.add_parser(
        "simulate", parents=[common], help="run a Monte Carlo estimator comparison",
    )
    source = simulate.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", default=None, help="simulation config JSON")
    source.add_argument("--preset", default=None, help="name of a shipped preset")
    simulate.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PairRankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
