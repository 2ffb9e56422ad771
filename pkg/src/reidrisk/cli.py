"""Batch command-line front end: gen, train, threshold, attack, sweep, report.

Every subcommand writes its outputs under --out with fixed filenames and a
config.json echoing the fully resolved parameters, so any run can be
reproduced from its own artifacts. All randomness derives from --seed.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    SplitError,
    SplitSpec,
    count_outcomes,
    parse_variant,
    run_attack,
    run_sweep,
    sample_split,
)
from .dataio import (
    DatasetError,
    EmbeddingFormatError,
    ManifestError,
    Task,
    load_dataset,
    write_embeddings,
    write_manifest,
)
from .metrics import aggregate, emit_report, load_runs_csv
from .plda import (
    apply_preprocess_batch,
    fit_preprocess,
    load_model,
    save_model,
    train_plda,
)
from .synth import WorldParams, sample_world
from .thresholding import (
    CalibrationError,
    DcfConfig,
    ThresholdProtocol,
    averaged_threshold,
)

_VALIDATION_ERRORS = (
    ValueError,
    ManifestError,
    EmbeddingFormatError,
    DatasetError,
    SplitError,
    FileNotFoundError,
)


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through our own
    # error handling so validation problems consistently exit 1
    def error(self, message):
        raise _CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reidrisk", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="sample a synthetic embedding dataset")
    p_gen.add_argument("--world", required=True, help="WorldParams JSON file")
    p_gen.add_argument("--seed", type=int, default=None, help="override the world's seed")
    p_gen.add_argument("--out", required=True)

    p_train = sub.add_parser("train", help="fit preprocessing + PLDA on a dataset")
    _add_data_args(p_train)
    p_train.add_argument("--known-task", action="append", default=None, metavar="TASK")
    p_train.add_argument("--max-iters", type=int, default=20)
    p_train.add_argument("--min-speakers", type=int, default=10)
    p_train.add_argument("--no-length-normalize", action="store_true")
    p_train.add_argument("--out", required=True)

    p_thr = sub.add_parser("threshold", help="calibrate the acceptance threshold")
    _add_data_args(p_thr)
    p_thr.add_argument("--model", required=True)
    _add_dcf_args(p_thr)
    _add_protocol_args(p_thr)
    p_thr.add_argument("--seed", type=int, default=0)
    p_thr.add_argument("--out", required=True)

    p_att = sub.add_parser("attack", help="run one marketer attack on a sampled split")
    _add_data_args(p_att)
    p_att.add_argument("--model", required=True)
    p_att.add_argument("--threshold-file", required=True)
    _add_split_args(p_att)
    p_att.add_argument("--variant", default="all", help="all | rank1 | topn:N")
    p_att.add_argument("--seed", type=int, default=0)
    p_att.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="per-split pipeline over a grid of set sizes")
    _add_data_args(p_sweep)
    _add_split_args(p_sweep)
    p_sweep.add_argument("--axis", choices=("known", "unknown", "both"), required=True)
    p_sweep.add_argument(
        "--points",
        required=True,
        help="comma-separated sizes (axis known/unknown) or KNOWNxUNKNOWN pairs (axis both)",
    )
    p_sweep.add_argument("--splits", type=int, required=True, help="splits per point")
    _add_dcf_args(p_sweep)
    _add_protocol_args(p_sweep)
    p_sweep.add_argument("--variant", default="all")
    p_sweep.add_argument("--max-iters", type=int, default=20)
    p_sweep.add_argument("--min-speakers", type=int, default=10)
    p_sweep.add_argument("--no-length-normalize", action="store_true")
    p_sweep.add_argument("--group-by", default="n_comparisons")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out", required=True)

    p_rep = sub.add_parser("report", help="aggregate existing run CSVs")
    p_rep.add_argument("--runs", required=True, help="runs.csv from a sweep")
    p_rep.add_argument("--group-by", default="n_comparisons")
    p_rep.add_argument("--out", required=True)
    return parser


def _add_data_args(p) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)


def _add_dcf_args(p) -> None:
    p.add_argument("--config", choices=("default", "strict"), default=None)
    p.add_argument("--c-fa", type=float, default=None)
    p.add_argument("--c-fr", type=float, default=None)
    p.add_argument("--prior", type=float, default=None)


def _add_protocol_args(p) -> None:
    p.add_argument("--subset-size", type=int, default=100)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--max-attempts", type=int, default=None)


def _add_split_args(p) -> None:
    p.add_argument("--n-known", type=int, default=None)
    p.add_argument("--n-unknown", type=int, default=None)
    p.add_argument("--n-overlap", type=int, default=0)
    p.add_argument("--known-task", action="append", default=None, metavar="TASK")
    p.add_argument("--unknown-task", action="append", default=None, metavar="TASK")
    p.add_argument("--pool", action="store_true", help="pool unknown-task recordings per speaker")
    p.add_argument(
        "--fixed-unknown-pool",
        default=None,
        metavar="FILE",
        help="file with one unknown-only speaker_id per line (supplementary mode)",
    )


def _resolve_dcf(args) -> DcfConfig:
    base = DcfConfig.preset(args.config) if args.config else DcfConfig.default()
    return DcfConfig(
        c_fa=args.c_fa if args.c_fa is not None else base.c_fa,
        c_fr=args.c_fr if args.c_fr is not None else base.c_fr,
        prior_target=args.prior if args.prior is not None else base.prior_target,
    )


def _resolve_protocol(args) -> ThresholdProtocol:
    return ThresholdProtocol(
        subset_size=args.subset_size, n_runs=args.runs, max_attempts=args.max_attempts
    )


def _resolve_tasks(values: list[str] | None) -> frozenset[Task] | None:
    return None if values is None else frozenset(Task(v) for v in values)


def _resolve_split_spec(args) -> SplitSpec:
    fixed = None
    if args.fixed_unknown_pool:
        text = Path(args.fixed_unknown_pool).read_text(encoding="utf-8")
        fixed = tuple(line.strip() for line in text.splitlines() if line.strip())
    if args.n_known is None:
        raise _CliError("--n-known is required")
    if args.n_unknown is None and fixed is None:
        raise _CliError("--n-unknown is required unless --fixed-unknown-pool is given")
    return SplitSpec(
        n_known=args.n_known,
        n_unknown=args.n_unknown,
        n_overlap=args.n_overlap,
        known_task_filter=_resolve_tasks(args.known_task),
        unknown_task_filter=_resolve_tasks(args.unknown_task),
        pool_unknown_tasks=args.pool,
        fixed_unknown_pool=fixed,
        seed=args.seed,
    )


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _echo_config(out_dir: Path, command: str, args, extra: dict | None = None) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    config = {"command": command, "version": __version__, "arguments": resolved}
    if extra:
        config.update(extra)
    _write_json(out_dir / "config.json", config)
    return config


def _cmd_gen(args) -> int:
    params = WorldParams.from_json_file(args.world)
    if args.seed is not None:
        params.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = sample_world(params)
    write_manifest(out / "manifest.csv", world.dataset.manifest)
    write_embeddings(out / "embeddings.vemb", world.dataset.matrix)
    _echo_config(out, "gen", args, {"world": json.loads(params.to_json())})
    print(
        f"wrote {world.dataset.n_recordings} recordings / {world.dataset.n_speakers} speakers "
        f"(dim {world.dataset.dim}) to {out}"
    )
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset(args.manifest, args.embeddings)
    flt = _resolve_tasks(args.known_task)
    grouped_ids = {
        spk: [r for r in recs if flt is None or dataset.record(r).task in flt]
        for spk, recs in dataset.speakers.items()
    }
    grouped_ids = {spk: recs for spk, recs in grouped_ids.items() if recs}
    if not grouped_ids:
        raise _CliError("no recordings left after task filtering")
    all_rows = dataset.rows_for(r for recs in grouped_ids.values() for r in recs)
    params = fit_preprocess(all_rows, length_normalize=not args.no_length_normalize)
    groups = {
        spk: apply_preprocess_batch(params, dataset.rows_for(recs))
        for spk, recs in grouped_ids.items()
    }
    model = train_plda(groups, max_iters=args.max_iters, min_speakers=args.min_speakers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.bin", model, params)
    _echo_config(out, "train", args, {"n_speakers": len(groups), "dim": model.dim})
    print(
        f"trained on {len(groups)} speakers; final loglik {model.loglik_history[-1]:.6g}; "
        f"model written to {out / 'model.bin'}"
    )
    return 0


def _cmd_threshold(args) -> int:
    dataset = load_dataset(args.manifest, args.embeddings)
    model, params = load_model(args.model)
    config = _resolve_dcf(args)
    protocol = _resolve_protocol(args)
    rng = np.random.default_rng(args.seed)
    estimate = averaged_threshold(dataset, model, params, config, protocol, rng=rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "threshold": estimate.threshold,
        "criterion_value": estimate.criterion_value,
        "n_runs_used": estimate.n_runs_used,
        "dcf": asdict(config),
        "protocol": {
            "subset_size": protocol.subset_size,
            "n_runs": protocol.n_runs,
            "max_attempts": protocol.max_attempts,
        },
        "seed": args.seed,
    }
    _write_json(out / "threshold.json", payload)
    _echo_config(out, "threshold", args, {"dcf": asdict(config)})
    print(
        f"threshold {estimate.threshold:.6g} (criterion {estimate.criterion_value:.6g}, "
        f"n_runs_used {estimate.n_runs_used})"
    )
    return 0


def _cmd_attack(args) -> int:
    dataset = load_dataset(args.manifest, args.embeddings)
    model, params = load_model(args.model)
    threshold = json.loads(Path(args.threshold_file).read_text(encoding="utf-8"))["threshold"]
    parse_variant(args.variant)
    spec = _resolve_split_spec(args)
    rng = np.random.default_rng(args.seed)
    split = sample_split(dataset, spec, rng)
    result = run_attack(dataset, model, params, threshold, split, args.variant)
    counts = count_outcomes(result)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "n_known": result.n_known,
        "n_unknown": result.n_unknown,
        "n_overlap": result.n_overlap,
        "n_comparisons": result.n_comparisons,
        "threshold": result.threshold,
        "variant": result.variant,
        "ta": counts.ta,
        "fa": counts.fa,
        "n_target_comparisons": counts.n_target_comparisons,
        "n_nontarget_comparisons": counts.n_nontarget_comparisons,
        "matches": [
            {
                "probe_speaker": m.probe_speaker,
                "matched_known_speaker": m.matched_known_speaker,
                "score": m.score,
                "is_true": m.is_true,
            }
            for m in result.matches
        ],
        "seed": args.seed,
    }
    _write_json(out / "attack.json", payload)
    _echo_config(out, "attack", args)
    print(
        f"attack: {counts.ta} TA / {counts.fa} FA over {result.n_comparisons} comparisons "
        f"(threshold {result.threshold:.6g}, variant {result.variant})"
    )
    return 0


def _cmd_sweep(args) -> int:
    dataset = load_dataset(args.manifest, args.embeddings)
    spec = _resolve_split_spec(args)
    points = _parse_points(args.points, args.axis)
    config = _resolve_dcf(args)
    protocol = _resolve_protocol(args)
    parse_variant(args.variant)
    rows = run_sweep(
        dataset,
        spec,
        axis=args.axis,
        points=points,
        n_splits_per_point=args.splits,
        dcf_config=config,
        protocol=protocol,
        variant=args.variant,
        master_seed=args.seed,
        max_iters=args.max_iters,
        min_speakers=args.min_speakers,
        length_normalize=not args.no_length_normalize,
    )
    summary = aggregate(rows, group_by=args.group_by)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_config = _echo_config(out, "sweep", args, {"dcf": asdict(config), "points": points})
    emit_report(rows, summary, out, formats=("csv", "json"), config=run_config)
    print(f"sweep: {len(rows)} runs over {len(points)} points written to {out}")
    return 0


def _cmd_report(args) -> int:
    rows = load_runs_csv(args.runs)
    summary = aggregate(rows, group_by=args.group_by)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _echo_config(out, "report", args)
    emit_report(rows, summary, out, formats=("csv", "json"), config=config)
    print(f"report: {len(rows)} runs aggregated into {len(summary)} groups under {out}")
    return 0


def _parse_points(text: str, axis: str):
    items = [p.strip() for p in text.split(",") if p.strip()]
    if not items:
        raise _CliError("--points must list at least one size")
    try:
        if axis == "both":
            return [tuple(int(v) for v in item.split("x")) for item in items]
        return [int(item) for item in items]
    except ValueError:
        raise _CliError(
            f"--points: could not parse {text!r} for axis {axis!r} "
            "(expected e.g. '1000,4000' or '1000x163,4000x163')"
        ) from None


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "threshold": _cmd_threshold,
    "attack": _cmd_attack,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (_CliError, *_VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
