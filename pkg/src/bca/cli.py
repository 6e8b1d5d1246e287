"""Command-line frontend: generation, evaluation, sweeps, inspection, export.

Every subcommand echoes its full effective configuration (after defaults),
so any run can be reproduced from its own output.  Exit codes: 0 success,
2 validation failure, 3 I/O or file-format failure, 4 state-invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import core, embio, harness, synthgen
from .core import AdapterConfig, ValidationError
from .embio import FormatError, InvariantViolationError
from .harness import AblationMode, CountBased, MomentumBased

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INVARIANT = 4

PRESETS = {
    "ood": {"tau": 0.3, "n1": 30000, "n2": 10},
    "crossdomain": {"tau": 0.35, "n1": 50000, "n2": 10},
}

MODES = {
    "baseline": AblationMode.BASELINE,
    "la": AblationMode.LIKELIHOOD_ONLY,
    "pa": AblationMode.PRIOR_ONLY,
    "full": AblationMode.FULL,
}

MODE_LABELS = {
    AblationMode.BASELINE: "Baseline",
    AblationMode.LIKELIHOOD_ONLY: "LA",
    AblationMode.PRIOR_ONLY: "PA",
    AblationMode.FULL: "Full",
}


def _build_shifts(raw_specs, num_classes: int):
    shifts = []
    for text in raw_specs:
        kind, _, rest = text.partition(":")
        try:
            if kind == "rotation":
                shifts.append(synthgen.MeanRotation(angle=float(rest)))
            elif kind == "confusion":
                shifts.append(synthgen.cyclic_confusion(num_classes, float(rest)))
            elif kind == "skew":
                shifts.append(
                    synthgen.LabelSkew(tuple(float(x) for x in rest.split(",")))
                )
            else:
                raise ValidationError(
                    f"unknown shift kind {kind!r} "
                    "(expected rotation:R, confusion:D or skew:w1,w2,...)"
                )
        except ValueError as exc:
            raise ValidationError(f"bad shift spec {text!r}: {exc}") from exc
    return tuple(shifts)


def _spec_from_json(path) -> synthgen.StreamSpec:
    payload = json.loads(Path(path).read_text())
    shifts = []
    for item in payload.pop("shifts", []):
        kind = item.get("kind")
        if kind == "rotation":
            shifts.append(synthgen.MeanRotation(angle=float(item["angle"])))
        elif kind == "confusion":
            if "matrix" in item:
                shifts.append(
                    synthgen.ConfusionShift(
                        tuple(tuple(float(x) for x in row) for row in item["matrix"])
                    )
                )
            else:
                shifts.append(
                    synthgen.cyclic_confusion(
                        int(payload["num_classes"]), float(item["diagonal"])
                    )
                )
        elif kind == "skew":
            shifts.append(synthgen.LabelSkew(tuple(float(x) for x in item["weights"])))
        else:
            raise ValidationError(f"unknown shift kind in spec file: {kind!r}")
    return synthgen.StreamSpec(shifts=tuple(shifts), **payload)


def _spec_to_json(spec: synthgen.StreamSpec) -> dict:
    payload = asdict(spec)
    shifts = []
    for shift in spec.shifts:
        if isinstance(shift, synthgen.MeanRotation):
            shifts.append({"kind": "rotation", "angle": shift.angle})
        elif isinstance(shift, synthgen.ConfusionShift):
            shifts.append({"kind": "confusion", "matrix": [list(r) for r in shift.confusion]})
        else:
            shifts.append({"kind": "skew", "weights": list(shift.weights)})
    payload["shifts"] = shifts
    return payload


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _say(args, *lines):
    if not args.quiet:
        for line in lines:
            print(line)


def _out_path(args, name: str) -> Path:
    base = Path(args.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    return base / name


def cmd_gen(args) -> int:
    if args.spec:
        spec = _spec_from_json(args.spec)
        if args.seed is not None:
            raise ValidationError("--seed conflicts with --spec (seed lives in the file)")
    else:
        for field_name in ("classes", "dim", "samples"):
            if getattr(args, field_name) is None:
                raise ValidationError(f"--{field_name} is required without --spec")
        spec = synthgen.StreamSpec(
            num_classes=args.classes,
            embedding_dim=args.dim,
            num_samples=args.samples,
            templates_per_class=args.templates_per_class,
            noise_scale=args.noise,
            text_perturbation=args.text_noise,
            shifts=_build_shifts(args.shift, args.classes),
            seed=args.seed if args.seed is not None else 0,
            min_separation=args.min_separation,
        )
    bank, embeddings, labels = synthgen.stream_bundle(spec)
    stream_path = _out_path(args, f"{args.out}.bcae")
    bank_path = _out_path(args, f"{args.out}.text.bcae")
    meta_path = _out_path(args, f"{args.out}.meta.json")
    embio.write_embeddings(
        stream_path, embeddings, labels, num_classes=spec.num_classes
    )
    embio.write_embeddings(bank_path, bank, num_classes=spec.num_classes)
    embio.write_json_sidecar(
        meta_path,
        {
            "format": "bca-stream-bundle/1",
            "spec": _spec_to_json(spec),
            "files": {
                "stream": stream_path.name,
                "text_bank": bank_path.name,
            },
            "sha256": {
                stream_path.name: _sha256(stream_path),
                bank_path.name: _sha256(bank_path),
            },
        },
    )
    _say(
        args,
        f"spec={json.dumps(_spec_to_json(spec), sort_keys=True)}",
        f"stream={stream_path}",
        f"text_bank={bank_path}",
        f"metadata={meta_path}",
    )
    return EXIT_OK


def _load_pair(args):
    header, vectors, labels = embio.read_embeddings(args.embeddings)
    bank_header, bank, bank_labels = embio.read_embeddings(args.text_embeddings)
    if bank_header.dim != header.dim:
        raise ValidationError(
            f"dimension mismatch: stream d={header.dim}, text bank d={bank_header.dim}"
        )
    num_classes = header.num_classes or bank_header.num_classes
    if num_classes == 0:
        raise ValidationError("neither file declares the class count")
    if bank_header.count < num_classes:
        raise ValidationError(
            f"text bank has {bank_header.count} rows for {num_classes} classes"
        )
    return header, vectors, labels, bank, num_classes


def _resolve_hyperparams(args) -> dict:
    preset = PRESETS[args.preset]
    return {
        "tau": args.tau if args.tau is not None else preset["tau"],
        "n1": args.n1 if args.n1 is not None else preset["n1"],
        "n2": args.n2 if args.n2 is not None else preset["n2"],
        "temperature": args.temperature,
    }


def _strategy(args):
    if args.strategy == "momentum":
        return MomentumBased(alpha=args.alpha)
    return CountBased()


def _report_lines(report, extra: dict | None = None) -> list[str]:
    merged = dict(extra or {})
    merged.update(report.summary_dict())
    return embio.format_summary_lines(merged)


def _write_report(args, report, prefix: str, extra: dict | None = None) -> None:
    if args.out:
        metrics_path = _out_path(args, f"{prefix}.metrics.csv")
        summary_path = _out_path(args, f"{prefix}.summary.csv")
        embio.write_metrics_csv(metrics_path, report.samples)
        merged = dict(extra or {})
        merged.update(report.summary_dict())
        embio.write_summary_csv(summary_path, merged)
        _say(args, f"metrics={metrics_path}", f"summary={summary_path}")


def cmd_run(args) -> int:
    header, vectors, labels, bank, num_classes = _load_pair(args)
    params = _resolve_hyperparams(args)
    if args.resume_from:
        state = embio.load_state(args.resume_from)
        if state.config.embedding_dim != header.dim:
            raise ValidationError("resumed state dimension does not match stream")
    else:
        config = AdapterConfig(
            num_class_embeddings=bank.shape[0],
            num_classes=num_classes,
            embedding_dim=header.dim,
            tau=params["tau"],
            init_count_embedding=params["n1"],
            init_count_prior=params["n2"],
            temperature=params["temperature"],
        )
        state = core.init_state(bank.astype(np.float64), config)
    checkpoint_dir = None
    if args.checkpoint_every:
        checkpoint_dir = _out_path(args, f"{args.out or 'run'}-checkpoints")
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    report = harness.run_stream(
        state,
        vectors.astype(np.float64),
        labels,
        mode=MODES[args.mode],
        strategy=_strategy(args),
        window_size=args.window,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=checkpoint_dir,
    )
    extra = {
        "embeddings": str(args.embeddings),
        "text_embeddings": str(args.text_embeddings),
        "preset": args.preset,
    }
    _say(args, *_report_lines(report, extra))
    _write_report(args, report, args.out or "run", extra)
    if args.save_state:
        embio.save_state(_out_path(args, args.save_state), state)
        _say(args, f"state={_out_path(args, args.save_state)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    header, vectors, labels, bank, num_classes = _load_pair(args)
    params = _resolve_hyperparams(args)
    stream = vectors.astype(np.float64)
    rows = []
    for mode in (
        AblationMode.BASELINE,
        AblationMode.LIKELIHOOD_ONLY,
        AblationMode.PRIOR_ONLY,
        AblationMode.FULL,
    ):
        config = AdapterConfig(
            num_class_embeddings=bank.shape[0],
            num_classes=num_classes,
            embedding_dim=header.dim,
            tau=params["tau"],
            init_count_embedding=params["n1"],
            init_count_prior=params["n2"],
            temperature=params["temperature"],
        )
        state = core.init_state(bank.astype(np.float64), config)
        report = harness.run_stream(
            state,
            stream,
            labels,
            mode=mode,
            strategy=_strategy(args),
            window_size=args.window,
            seed=args.seed,
        )
        rows.append((mode, report))

    echo = dict(params)
    echo.update(
        mode="all", preset=args.preset, window=args.window, strategy=args.strategy,
        embeddings=str(args.embeddings), text_embeddings=str(args.text_embeddings),
    )
    _say(
        args,
        f"config={json.dumps(echo, sort_keys=True)}",
        f"{'mode':<10}{'overall':>10}{'last_half':>12}{'updates':>10}",
    )
    for mode, report in rows:
        _say(
            args,
            f"{MODE_LABELS[mode]:<10}"
            f"{report.overall_accuracy:>10.4f}"
            f"{report.last_half_accuracy:>12.4f}"
            f"{report.updates_fired:>10d}",
        )
    if args.out:
        path = _out_path(args, f"{args.out}.ablation.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["mode", "overall_accuracy", "last_half_accuracy", "updates_fired"]
            )
            for mode, report in rows:
                writer.writerow(
                    [
                        MODE_LABELS[mode],
                        repr(report.overall_accuracy),
                        repr(report.last_half_accuracy),
                        report.updates_fired,
                    ]
                )
        _say(args, f"table={path}")
    return EXIT_OK


def _grid(text: str, cast) -> list:
    try:
        return [cast(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise ValidationError(f"bad grid {text!r}: {exc}") from exc


def cmd_sweep(args) -> int:
    header, vectors, labels, bank, num_classes = _load_pair(args)
    taus = _grid(args.tau_grid, float)
    n1s = _grid(args.n1_grid, int)
    n2s = _grid(args.n2_grid, int)
    results = harness.sweep(
        bank.astype(np.float64),
        vectors.astype(np.float64),
        labels,
        num_classes=num_classes,
        taus=taus,
        n1s=n1s,
        n2s=n2s,
        temperature=args.temperature,
        mode=MODES[args.mode],
        window_size=args.window,
    )
    echo = {
        "mode": args.mode, "preset": args.preset, "temperature": args.temperature,
        "window": args.window, "strategy": args.strategy,
        "embeddings": str(args.embeddings), "text_embeddings": str(args.text_embeddings),
    }
    _say(
        args,
        f"config={json.dumps(echo, sort_keys=True)}",
        f"grid=tau:{taus} n1:{n1s} n2:{n2s}",
        f"{'tau':>8}{'n1':>9}{'n2':>7}{'overall':>10}{'last_half':>12}{'updates':>9}",
    )
    for cell, report in results:
        _say(
            args,
            f"{cell['tau']:>8.3f}{cell['n1']:>9d}{cell['n2']:>7d}"
            f"{report.overall_accuracy:>10.4f}"
            f"{report.last_half_accuracy:>12.4f}"
            f"{report.updates_fired:>9d}",
        )
    if args.out:
        path = _out_path(args, f"{args.out}.sweep.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "tau",
                    "n1",
                    "n2",
                    "overall_accuracy",
                    "last_half_accuracy",
                    "updates_fired",
                ]
            )
            for cell, report in results:
                writer.writerow(
                    [
                        repr(cell["tau"]),
                        cell["n1"],
                        cell["n2"],
                        repr(report.overall_accuracy),
                        repr(report.last_half_accuracy),
                        report.updates_fired,
                    ]
                )
        _say(args, f"table={path}")
    return EXIT_OK


def _entropy(row: np.ndarray) -> float:
    nz = row[row > 0]
    return float(-(nz * np.log(nz)).sum()) + 0.0  # avoid -0.0 for one-hot rows


def cmd_inspect(args) -> int:
    path = Path(args.path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    lines: list[str] = []
    warnings_count = 0
    if magic == embio.STATE_MAGIC:
        state = embio.load_state(path)
        cfg = state.config
        updates = state.c1 - cfg.init_count_embedding
        entropies = np.array([_entropy(row) for row in state.priors])
        norm_err = np.abs(np.linalg.norm(state.bank, axis=1) - 1.0)
        edges = [0, 1, 10, 100, 1000, 10000]
        buckets = []
        for lo, hi in zip(edges, edges[1:] + [None]):
            count = int(
                ((updates >= lo) & ((updates < hi) if hi else True)).sum()
            )
            label = f"{lo}-{hi - 1}" if hi else f"{lo}+"
            buckets.append(f"{label}:{count}")
        lines += [
            f"kind=state-checkpoint version={embio.FORMAT_VERSION}",
            f"num_class_embeddings={cfg.num_class_embeddings} "
            f"num_classes={cfg.num_classes} embedding_dim={cfg.embedding_dim}",
            f"tau={cfg.tau} n1={cfg.init_count_embedding} "
            f"n2={cfg.init_count_prior} temperature={cfg.temperature}",
            f"updates_total={int(updates.sum())}",
            f"updates_per_row_min={int(updates.min())} "
            f"median={float(np.median(updates)):.1f} max={int(updates.max())}",
            "updates_histogram=" + " ".join(buckets),
            f"prior_entropy_min={entropies.min():.6f} "
            f"mean={entropies.mean():.6f} max={entropies.max():.6f}",
            f"bank_norm_error_max={norm_err.max():.3e}",
        ]
        if norm_err.max() > 1e-4:
            warnings_count += 1
            lines.append("warning: bank rows deviate from unit norm beyond 1e-4")
    elif magic == embio.EMBEDDINGS_MAGIC:
        header, vectors, labels = embio.read_embeddings(path)
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        norm_err = np.abs(norms - 1.0)
        lines += [
            f"kind=embeddings version={header.version}",
            f"count={header.count} dim={header.dim} "
            f"num_classes={header.num_classes} labeled={int(header.labeled)}",
            f"norm_error_max={norm_err.max():.3e}",
        ]
        if labels is not None:
            unlabeled = int((labels == -1).sum())
            lines.append(
                f"label_min={int(labels.min())} label_max={int(labels.max())} "
                f"unlabeled={unlabeled}"
            )
        if norm_err.max() > 1e-3:
            warnings_count += 1
            lines.append("warning: vectors deviate from unit norm beyond 1e-3")
    else:
        raise embio.BadMagicError(f"unrecognized magic {magic!r}")
    lines.append(f"warnings={warnings_count}")
    _say(args, *lines)
    return EXIT_OK


def cmd_export_prior(args) -> int:
    state = embio.load_state(args.state)
    out = _out_path(args, args.out)
    embio.export_prior_csv(state, out, top_n=args.top)
    _say(args, f"prior_csv={out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise ValidationError("--iterations must be positive")
    seed = args.seed if args.seed is not None else 0
    num_classes = args.classes
    spec = synthgen.StreamSpec(
        num_classes=num_classes,
        embedding_dim=args.dim,
        num_samples=max(1000, args.iterations),
        templates_per_class=args.templates_per_class,
        noise_scale=0.3,
        seed=seed,
        min_separation=0.0,
    )
    bank, embeddings, _ = synthgen.stream_bundle(spec)
    config = AdapterConfig(
        num_class_embeddings=bank.shape[0],
        num_classes=num_classes,
        embedding_dim=args.dim,
        tau=0.0,
    )
    state = core.init_state(bank, config)
    timings = harness.time_phases(state, embeddings, repetitions=args.repetitions)
    median_s, mean_s = harness.measure_step_latency(state, embeddings, args.iterations)
    _say(
        args,
        f"config=dim:{args.dim} classes:{num_classes} "
        f"embeddings:{bank.shape[0]} iterations:{args.iterations} seed:{seed}",
        f"{'phase':<22}{'median_us':>12}{'mean_us':>12}",
        f"{'t2 membership':<22}{timings.membership_median_s * 1e6:>12.2f}"
        f"{timings.membership_mean_s * 1e6:>12.2f}",
        f"{'t3 mixing':<22}{timings.mixing_median_s * 1e6:>12.2f}"
        f"{timings.mixing_mean_s * 1e6:>12.2f}",
        f"{'t4-cal update':<22}{timings.update_median_s * 1e6:>12.2f}"
        f"{timings.update_mean_s * 1e6:>12.2f}",
        f"{'t4-rw write':<22}{timings.write_median_s * 1e6:>12.2f}"
        f"{timings.write_mean_s * 1e6:>12.2f}",
        f"step_latency_median_ms={median_s * 1e3:.4f}",
        f"step_latency_mean_ms={mean_s * 1e3:.4f}",
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bca",
        description="Streaming Bayesian class adaptation over embedding files.",
    )
    parser.add_argument(
        "--output-dir",
        default=os.environ.get("BCA_OUTPUT_DIR", "."),
        help="directory for generated files (default: $BCA_OUTPUT_DIR or .)",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress stdout")
    # The global flags are also registered on every subcommand (with SUPPRESS
    # defaults so they never clobber the root values), letting them appear on
    # either side of the subcommand name.
    globals_parent = argparse.ArgumentParser(add_help=False)
    globals_parent.add_argument("--output-dir", default=argparse.SUPPRESS)
    globals_parent.add_argument(
        "--quiet", action="store_true", default=argparse.SUPPRESS
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[globals_parent], help="generate a synthetic stream + text bank")
    p.add_argument("--spec", help="JSON StreamSpec file (overrides inline flags)")
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--templates-per-class", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--text-noise", type=float, default=0.0)
    p.add_argument("--min-separation", type=float, default=synthgen.DEFAULT_MIN_SEPARATION)
    p.add_argument(
        "--shift",
        action="append",
        default=[],
        help="rotation:R | confusion:D | skew:w1,w2,... (repeatable)",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output name prefix")
    p.set_defaults(func=cmd_gen)

    def add_run_inputs(p, with_mode=True):
        p.add_argument("--embeddings", required=True)
        p.add_argument("--text-embeddings", required=True)
        p.add_argument("--preset", choices=sorted(PRESETS), default="ood")
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--n1", type=int, default=None)
        p.add_argument("--n2", type=int, default=None)
        p.add_argument("--temperature", type=float, default=100.0)
        p.add_argument("--window", type=int, default=500)
        p.add_argument("--strategy", choices=["count", "momentum"], default="count")
        p.add_argument("--alpha", type=float, default=0.01)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output name prefix")
        if with_mode:
            p.add_argument("--mode", choices=sorted(MODES), default="full")

    p = sub.add_parser("run", parents=[globals_parent], help="evaluate one stream under one mode")
    add_run_inputs(p)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume-from", default=None, help="start from a checkpoint")
    p.add_argument("--save-state", default=None, help="write the final state here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[globals_parent], help="run all four ablation arms on one stream")
    add_run_inputs(p, with_mode=False)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", parents=[globals_parent], help="grid over tau x n1 x n2")
    add_run_inputs(p)
    p.add_argument("--tau-grid", required=True)
    p.add_argument("--n1-grid", required=True)
    p.add_argument("--n2-grid", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect", parents=[globals_parent], help="summarize a checkpoint or embedding file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("export-prior", parents=[globals_parent], help="dump the prior matrix as CSV")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top", type=int, default=None)
    p.set_defaults(func=cmd_export_prior)

    p = sub.add_parser("bench", parents=[globals_parent], help="phase timings and step latency")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--classes", type=int, default=100)
    p.add_argument("--templates-per-class", type=int, default=1)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except InvariantViolationError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
