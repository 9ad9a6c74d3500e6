"""Unified command line: synth, train, index, score, eval, baseline, cost, theory, stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every run writes a JSON run-record (command, options, versions, wall time);
pass --run-record to choose where, otherwise it lands next to the command's
primary output (or ./llsh_run_record.json for print-only commands).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, baselines, data, evaluation, scoring, theory, training
from . import encoder as enc
from . import index as idx
from .errors import DataFormatError, NumericError


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this CLI reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _say(ns, *parts):
    if not ns.quiet:
        print(*parts)


def _write_run_record(ns, command: str, t0: float, default_path, extra: dict | None = None):
    path = ns.run_record or default_path
    if path is None:
        path = "llsh_run_record.json"
    options = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(ns).items()
        if k not in ("func", "quiet", "run_record", "config")
    }
    record = {
        "command": command,
        "options": options,
        "versions": {
            "llsh": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": time.perf_counter() - t0,
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


# ---------------------------------------------------------------- subcommands


def _cmd_synth(ns):
    t0 = time.perf_counter()
    cfg = data.SynthConfig(
        feature_dim=ns.d,
        num_modes=ns.modes,
        mode_spread=ns.spread,
        train_count=ns.train_count,
        videos=ns.videos,
        frames_per_video=ns.frames,
        anomaly_rate=ns.anomaly_rate,
        anomaly_shift=ns.anomaly_shift,
        temporal_correlation=ns.temporal_corr,
        seed=ns.seed,
    )
    train_m, test_m = data.generate_synthetic(cfg, ns.out)
    _say(ns, f"wrote {train_m} and {test_m}")
    _write_run_record(ns, "synth", t0, Path(ns.out) / "run_record.json",
                      {"synth_config": asdict(cfg)})
    return 0


def _load_train_vectors(ns) -> data.FeatureSet:
    if ns.features:
        return data.load_features(ns.features)
    manifest = data.load_manifest(ns.manifest)
    sets = [data.load_features(manifest.feature_path(v)) for v in manifest.videos]
    vectors = np.concatenate([fs.vectors for fs in sets], axis=0)
    if all(fs.timestamped for fs in sets):
        starts = np.concatenate([fs.start_frames for fs in sets])
        spans = np.concatenate([fs.spans for fs in sets])
        return data.FeatureSet(vectors, starts, spans)
    return data.FeatureSet(vectors)


def _cmd_train(ns):
    t0 = time.perf_counter()
    fs = _load_train_vectors(ns)
    d = fs.vectors.shape[1]
    if ns.d is not None and ns.d != d:
        raise DataFormatError(f"--d {ns.d} does not match feature file dimension {d}")
    encoder_cfg = enc.EncoderConfig(d, ns.r, ns.b, not ns.no_normalize_input, ns.seed)
    train_cfg = training.TrainConfig(
        queue_len=ns.queue_len,
        batch_size=ns.batch,
        iterations=ns.iters,
        temperature=ns.tau,
        momentum=ns.momentum,
        learning_rate=ns.lr,
        pair_jitter=ns.jitter,
        seed=ns.seed,
    )
    sampler = training.PairSampler(
        fs.vectors,
        start_frames=fs.start_frames if fs.timestamped else None,
        jitter=ns.jitter,
    )
    result = training.train(sampler, train_cfg, encoder_cfg)
    enc.save_encoder(result.query_encoder, ns.out)
    if ns.loss_log:
        new = not Path(ns.loss_log).exists()
        with open(ns.loss_log, "a") as fh:
            if new:
                fh.write("step,loss\n")
            for step, loss in enumerate(result.losses):
                fh.write(f"{step},{loss!r}\n")
    final = result.losses[-1] if result.losses else float("nan")
    _say(ns, f"trained {ns.iters} steps, final loss {final:.6f}, encoder -> {ns.out}")
    _write_run_record(ns, "train", t0, str(ns.out) + ".run.json",
                      {"final_loss": final,
                       "encoder_fingerprint": enc.fingerprint(result.query_encoder)})
    return 0


def _cmd_index(ns):
    t0 = time.perf_counter()
    fs = _load_train_vectors(ns)
    d = fs.vectors.shape[1]
    if ns.encoder:
        encoder = enc.load_encoder(ns.encoder)
    else:
        encoder = enc.init_random(
            enc.EncoderConfig(d, ns.r, ns.b, not ns.no_normalize_input, ns.seed)
        )
        if ns.encoder_out:
            enc.save_encoder(encoder, ns.encoder_out)
            _say(ns, f"random-init encoder -> {ns.encoder_out}")
    built = idx.build_index(encoder, fs.vectors, variant=ns.variant, workers=ns.workers)
    idx.save_index(built, ns.out)
    _say(ns, f"indexed {built.total_count} features into {built.num_tables} tables -> {ns.out}")
    _write_run_record(ns, "index", t0, str(ns.out) + ".run.json",
                      {"encoder_fingerprint": built.encoder_fingerprint,
                       "variant": built.variant})
    return 0


def _query_config(ns) -> scoring.QueryConfig:
    return scoring.QueryConfig(
        sentinel=getattr(ns, "sentinel", None),
        distance=getattr(ns, "distance", "euclidean"),
        smooth_sigma=ns.sigma,
        per_video_minmax=ns.minmax,
    )


def _cmd_score(ns):
    t0 = time.perf_counter()
    encoder = enc.load_encoder(ns.encoder)
    index = idx.load_index(ns.index, encoder=encoder, strict=ns.strict_fingerprint)
    manifest = data.load_manifest(ns.manifest)
    config = _query_config(ns)
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.videos:
        fs = data.load_features(manifest.feature_path(entry))
        spans = fs.span_array() if fs.timestamped else np.column_stack(
            [np.arange(fs.vectors.shape[0]), np.ones(fs.vectors.shape[0], dtype=np.int64)]
        )
        series = scoring.score_video(
            index, encoder, fs.vectors, spans, entry.frame_count,
            config, video_id=entry.video_id, workers=ns.workers,
        )
        data.save_scores_csv(out / f"{entry.video_id}.csv", series.scores)
    _say(ns, f"scored {len(manifest.videos)} videos -> {out}")
    _write_run_record(ns, "score", t0, out / "run_record.json", {
        "encoder_fingerprint": enc.fingerprint(encoder),
        "index_fingerprint": index.encoder_fingerprint,
        "query_config": asdict(config),
    })
    return 0


def _cmd_eval(ns):
    t0 = time.perf_counter()
    scores_dir, labels_dir = Path(ns.scores_dir), Path(ns.labels_dir)
    run = []
    for score_file in sorted(scores_dir.glob("*.csv")):
        label_file = labels_dir / score_file.name
        if not label_file.exists():
            raise DataFormatError(f"no label file {label_file} for scores {score_file}")
        scores = data.load_scores_csv(score_file)
        labels = data.load_labels(label_file, expected_len=scores.size)
        run.append((scores, labels))
    if not run:
        raise DataFormatError(f"no score CSVs found in {scores_dir}")
    results = {}
    if ns.protocol in ("micro", "both"):
        results["micro"] = evaluation.micro_auc(run)
    if ns.protocol in ("macro", "both"):
        results["macro"] = evaluation.macro_auc(run)
    for name, value in results.items():
        print(f"{name}-AUC: {100.0 * value:.1f}%")
    _write_run_record(ns, "eval", t0, None, {"auc": results})
    return 0


def _cmd_baseline(ns):
    t0 = time.perf_counter()
    train_vecs = _load_train_vectors(ns).vectors
    manifest = data.load_manifest(ns.test_manifest)
    config = _query_config(ns)
    if ns.method == "kmeans":
        centers = baselines.kmeans_fit(train_vecs, ns.k, ns.max_iters, seed=ns.seed)
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = []
    for entry in manifest.videos:
        fs = data.load_features(manifest.feature_path(entry))
        if ns.method == "knn":
            per_feature = baselines.knn_score_batch(train_vecs, fs.vectors, ns.k, ns.metric)
        else:
            per_feature = baselines.kmeans_score_batch(centers, fs.vectors, ns.metric)
        spans = fs.span_array() if fs.timestamped else np.column_stack(
            [np.arange(fs.vectors.shape[0]), np.ones(fs.vectors.shape[0], dtype=np.int64)]
        )
        frames = scoring.assemble_frame_scores(per_feature, spans, entry.frame_count)
        frames = scoring.smooth(frames, config.smooth_sigma)
        if config.per_video_minmax:
            frames = scoring.minmax_normalize(frames)
        data.save_scores_csv(out / f"{entry.video_id}.csv", frames)
        lp = manifest.label_path(entry)
        if lp is not None:
            run.append((frames, data.load_labels(lp, expected_len=entry.frame_count)))
    extra = {}
    if run:
        extra["auc"] = {
            "micro": evaluation.micro_auc(run),
            "macro": evaluation.macro_auc(run),
        }
        for name, value in extra["auc"].items():
            print(f"{name}-AUC: {100.0 * value:.1f}%")
    _write_run_record(ns, f"baseline {ns.method}", t0, out / "run_record.json", extra)
    return 0


_PARAM_ALIASES = {
    "d": "feature_dim", "N": "train_count", "M": "test_count", "K": "num_clusters",
    "t": "max_iters", "r": "code_len", "b": "num_tables", "n": "compared_codes",
    "m": "averaged_codes",
}


def _cmd_cost(ns):
    t0 = time.perf_counter()
    if ns.paper_table:
        for line in baselines.paper_table_lines():
            print(line)
        _write_run_record(ns, "cost", t0, None)
        return 0
    if not ns.method:
        raise DataFormatError("cost requires --method unless --paper-table is given")
    kwargs = {}
    for pair in ns.params or []:
        if "=" not in pair:
            raise DataFormatError(f"--params entries must look like name=value, got {pair!r}")
        key, value = pair.split("=", 1)
        field = _PARAM_ALIASES.get(key, key)
        kwargs[field] = int(value)
    try:
        inputs = baselines.CostInputs(**kwargs)
    except TypeError as e:
        raise DataFormatError(f"unknown cost parameter: {e}") from e
    count = baselines.cost(ns.method, inputs)
    print(f"{count} multiplications ({baselines.format_magnitude(count)})")
    _write_run_record(ns, "cost", t0, None, {"multiplications": count})
    return 0


def _emit_csv(rows, header, out_path):
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_theory_curve(ns):
    t0 = time.perf_counter()
    if ns.preset:
        s = np.linspace(0.0, 1.0, ns.points)
        cols = [s] + [
            theory.multi_table_prob_s(s, r, b) for r, b in theory.REFERENCE_CONFIGS
        ]
        header = ["s"] + [f"p_r{r}_b{b}" for r, b in theory.REFERENCE_CONFIGS]
        _emit_csv(np.column_stack(cols), header, ns.out)
    else:
        pts = theory.curve_points(ns.r, ns.b, ns.points)
        _emit_csv(pts, ["s", "p"], ns.out)
    _write_run_record(ns, "theory curve", t0, None)
    return 0


def _cmd_theory_mc(ns):
    t0 = time.perf_counter()
    if (ns.alpha is None) == (ns.similarity is None):
        raise DataFormatError("theory mc needs exactly one of --alpha or --similarity")
    alpha = ns.alpha if ns.alpha is not None else math.pi * (1.0 - ns.similarity)
    empirical = theory.monte_carlo_collision(alpha, ns.r, ns.b, ns.d, ns.trials, seed=ns.seed)
    expected = theory.multi_table_prob(alpha, ns.r, ns.b)
    _emit_csv([[alpha, expected, empirical]], ["alpha", "theory", "empirical"], ns.out)
    _write_run_record(ns, "theory mc", t0, None,
                      {"alpha": alpha, "theory": expected, "empirical": empirical})
    return 0


def _cmd_stats(ns):
    t0 = time.perf_counter()
    index = idx.load_index(ns.index)
    stats = idx.index_stats(index)
    if ns.json:
        print(json.dumps(stats, indent=2))
    else:
        print(f"variant={stats['variant']} code_len={stats['code_len']} "
              f"tables={stats['num_tables']} stored={stats['total_count']}")
        for j, t in enumerate(stats["tables"]):
            print(f"table {j}: {t['buckets']} buckets, size min/mean/max = "
                  f"{t['min_size']}/{t['mean_size']:.2f}/{t['max_size']}")
    _write_run_record(ns, "stats", t0, None)
    return 0


# ------------------------------------------------------------------- parser


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0, help="RNG seed")
    sp.add_argument("--quiet", action="store_true", help="suppress progress output")
    sp.add_argument("--run-record", default=None, help="path of the JSON run record")


def _add_corpus_source(sp, required=True):
    group = sp.add_mutually_exclusive_group(required=required)
    group.add_argument("--manifest", help="dataset manifest (train split)")
    group.add_argument("--features", help="single feature file")


def build_parser() -> _Parser:
    parser = _Parser(prog="llsh", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None,
                        help="JSON file whose keys override subcommand defaults")
    parser.add_argument("--version", action="version", version=f"llsh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["default"], default="default")
    p.add_argument("--d", type=int, default=data.SynthConfig.feature_dim)
    p.add_argument("--modes", type=int, default=data.SynthConfig.num_modes)
    p.add_argument("--spread", type=float, default=data.SynthConfig.mode_spread)
    p.add_argument("--train-count", type=int, default=data.SynthConfig.train_count)
    p.add_argument("--videos", type=int, default=data.SynthConfig.videos)
    p.add_argument("--frames", type=int, default=data.SynthConfig.frames_per_video)
    p.add_argument("--anomaly-rate", type=float, default=data.SynthConfig.anomaly_rate)
    p.add_argument("--anomaly-shift", type=float, default=data.SynthConfig.anomaly_shift)
    p.add_argument("--temporal-corr", type=float, default=data.SynthConfig.temporal_correlation)
    _add_common(p)
    p.set_defaults(func=_cmd_synth, seed=data.SynthConfig.seed)

    p = sub.add_parser("train", help="momentum-contrastive encoder training")
    _add_corpus_source(p)
    p.add_argument("--d", type=int, default=None, help="feature dim (checked against files)")
    p.add_argument("--r", type=int, default=32, help="code length per table")
    p.add_argument("--b", type=int, default=8, help="number of hash layers/tables")
    p.add_argument("--no-normalize-input", action="store_true")
    p.add_argument("--queue-len", type=int, default=1024)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--momentum", type=float, default=0.999)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output encoder file")
    p.add_argument("--loss-log", default=None, help="CSV to append per-step losses")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("index", help="build the hash tables")
    _add_corpus_source(p)
    p.add_argument("--encoder", default=None, help="encoder file (else random init)")
    p.add_argument("--r", type=int, default=32)
    p.add_argument("--b", type=int, default=8)
    p.add_argument("--no-normalize-input", action="store_true")
    p.add_argument("--encoder-out", default=None, help="where to save a random-init encoder")
    p.add_argument("--variant", choices=["full", "light"], default="full")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("score", help="score test videos against an index")
    p.add_argument("--manifest", required=True, help="test manifest")
    p.add_argument("--encoder", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--strict-fingerprint", action="store_true")
    p.add_argument("--sentinel", type=float, default=None)
    p.add_argument("--distance", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--sigma", type=float, default=10.0, help="temporal Gaussian width (frames)")
    p.add_argument("--minmax", action="store_true", help="per-video min-max normalization")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="frame-level AUC over score/label CSVs")
    p.add_argument("--scores-dir", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--protocol", choices=["micro", "macro", "both"], default="both")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("baseline", help="KNN / K-means scorers")
    p.add_argument("method", choices=["knn", "kmeans"])
    _add_corpus_source(p)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--k", type=int, default=5, help="neighbors (knn) or clusters (kmeans)")
    p.add_argument("--max-iters", type=int, default=100, help="Lloyd iteration cap")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--minmax", action="store_true")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("cost", help="multiplication-count cost model")
    p.add_argument("--method", choices=["knn", "kmeans", "lsh", "llsh", "light"])
    p.add_argument("--params", nargs="*", metavar="name=value",
                   help="cost inputs, e.g. d=9216 N=792855 M=112422")
    p.add_argument("--paper-table", action="store_true",
                   help="print the reference comparison table")
    _add_common(p)
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("theory", help="collision-probability curves and Monte-Carlo checks")
    tsub = p.add_subparsers(dest="theory_command", required=True, parser_class=_Parser)
    pc = tsub.add_parser("curve", help="emit P-s curve CSV")
    pc.add_argument("--r", type=int, default=32)
    pc.add_argument("--b", type=int, default=8)
    pc.add_argument("--points", type=int, default=101)
    pc.add_argument("--preset", action="store_true",
                    help="emit the four reference (r,b) configurations")
    pc.add_argument("--out", default=None, help="CSV path (default stdout)")
    _add_common(pc)
    pc.set_defaults(func=_cmd_theory_curve)
    pm = tsub.add_parser("mc", help="empirical collision probability")
    pm.add_argument("--alpha", type=float, default=None, help="angle in radians")
    pm.add_argument("--similarity", type=float, default=None, help="similarity s in [0,1]")
    pm.add_argument("--r", type=int, default=32)
    pm.add_argument("--b", type=int, default=8)
    pm.add_argument("--d", type=int, default=64)
    pm.add_argument("--trials", type=int, default=10000)
    pm.add_argument("--out", default=None)
    _add_common(pm)
    pm.set_defaults(func=_cmd_theory_mc)

    p = sub.add_parser("stats", help="index statistics")
    p.add_argument("--index", required=True)
    p.add_argument("--json", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_stats)

    return parser


def _apply_config_overrides(parser: _Parser, overrides: dict):
    def visit(pr):
        dests = {a.dest for a in pr._actions}
        usable = {k: v for k, v in overrides.items() if k in dests}
        if usable:
            pr.set_defaults(**usable)
        for action in pr._actions:
            if isinstance(action, argparse._SubParsersAction):
                for child in action.choices.values():
                    visit(child)

    visit(parser)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        known, _ = pre.parse_known_args(argv)
        if known.config:
            try:
                overrides = json.loads(Path(known.config).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise DataFormatError(f"cannot read --config {known.config}: {e}") from e
            if not isinstance(overrides, dict):
                raise DataFormatError("--config JSON must be an object")
            _apply_config_overrides(parser, overrides)
        try:
            ns = parser.parse_args(argv)
        except SystemExit as e:  # argparse exits for usage errors, -h, --version
            return int(e.code or 0)
        return ns.func(ns)
    except (DataFormatError, FileNotFoundError, ValueError) as e:
        print(f"llsh: data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"llsh: numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
