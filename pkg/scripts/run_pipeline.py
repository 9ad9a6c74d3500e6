"""End-to-end desk-scale experiment: synthesize a corpus, score it with
exact KNN, K-means, random-init LSH, trained LLSH and light-LLSH, and print
a comparison table (macro/micro AUC plus measured cost-model counters).

Usage:
    python scripts/run_pipeline.py --out /tmp/llsh_run [--seed 11]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from llsh import baselines as bl
from llsh import data
from llsh import encoder as enc
from llsh import evaluation as ev
from llsh import index as idx
from llsh import scoring
from llsh import training as tr


def frame_scores(per_feature, fs, entry, sigma=10.0):
    raw = scoring.assemble_frame_scores(per_feature, fs.span_array(), entry.frame_count)
    return scoring.smooth(raw, sigma)


def evaluate(run):
    return ev.macro_auc(run), ev.micro_auc(run)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="working directory for the corpus")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--r", type=int, default=32)
    ap.add_argument("--b", type=int, default=8)
    ap.add_argument("--knn-k", type=int, default=5)
    ap.add_argument("--kmeans-k", type=int, default=32)
    ap.add_argument("--iters", type=int, default=1000)
    args = ap.parse_args()

    t0 = time.perf_counter()
    cfg = data.SynthConfig(seed=args.seed)
    train_m, test_m = data.generate_synthetic(cfg, args.out)
    tm = data.load_manifest(train_m)
    sm = data.load_manifest(test_m)
    train_fs = data.load_features(tm.feature_path(tm.videos[0]))
    train = train_fs.vectors
    videos = [
        (data.load_features(sm.feature_path(v)), data.load_labels(sm.label_path(v), v.frame_count), v)
        for v in sm.videos
    ]
    n_test = sum(v.frame_count for _, _, v in videos)
    print(f"corpus: {train.shape[0]} train features, {len(videos)} test videos, "
          f"{n_test} frames ({time.perf_counter() - t0:.1f}s)")

    results = {}

    run = [(frame_scores(bl.knn_score_batch(train, fs.vectors, args.knn_k), fs, v), lab)
           for fs, lab, v in videos]
    results[f"KNN (K={args.knn_k})"] = evaluate(run)

    centers = bl.kmeans_fit(train, args.kmeans_k, 100, seed=args.seed)
    run = [(frame_scores(bl.kmeans_score_batch(centers, fs.vectors), fs, v), lab)
           for fs, lab, v in videos]
    results[f"K-means (K={args.kmeans_k})"] = evaluate(run)

    ecfg = enc.EncoderConfig(cfg.feature_dim, args.r, args.b, seed=args.seed)
    qcfg = scoring.QueryConfig()

    def lsh_eval(encoder, variant="full"):
        built = idx.build_index(encoder, train, variant=variant)
        run = []
        queries = []
        for fs, lab, v in videos:
            series = scoring.score_video(built, encoder, fs.vectors, fs.span_array(),
                                         v.frame_count, qcfg, v.video_id)
            run.append((series.scores, lab))
            queries.append(fs.vectors)
        n, m = bl.measure_n_m(built, encoder, np.vstack(queries))
        return evaluate(run), (n, m)

    e0 = enc.init_random(ecfg)
    results[f"LSH (r={args.r}, b={args.b})"], (n_lsh, _) = lsh_eval(e0)

    sampler = tr.PairSampler(train, start_frames=train_fs.start_frames)
    tcfg = tr.TrainConfig(queue_len=1024, batch_size=64, iterations=args.iters,
                          temperature=0.002, learning_rate=0.5, seed=args.seed)
    sim0 = tr.positive_pair_similarity(e0, sampler, 512, seed=123)
    trained = tr.train(sampler, tcfg, ecfg).query_encoder
    sim1 = tr.positive_pair_similarity(trained, sampler, 512, seed=123)
    results["LLSH (trained)"], (n_llsh, _) = lsh_eval(trained)
    results["light-LLSH"], (n_light, m_light) = lsh_eval(trained, variant="light")

    print(f"\npositive-pair similarity: {sim0:.6f} -> {sim1:.6f}")
    print(f"\n{'method':<22} {'macro-AUC':>9} {'micro-AUC':>9}")
    for name, (macro, micro) in results.items():
        print(f"{name:<22} {100 * macro:>8.1f}% {100 * micro:>8.1f}%")

    d, n_train = cfg.feature_dim, train.shape[0]
    common = dict(feature_dim=d, train_count=n_train, test_count=n_test,
                  code_len=args.r, num_tables=args.b)
    print(f"\nmeasured cost-model counters (n = compared codes, m = averaged codes):")
    for name, method, inputs in [
        ("KNN", "knn", bl.CostInputs(d, n_train, n_test)),
        ("LSH", "lsh", bl.CostInputs(**common, compared_codes=n_lsh)),
        ("LLSH", "llsh", bl.CostInputs(**common, compared_codes=n_llsh)),
        ("light-LLSH", "light", bl.CostInputs(**common, compared_codes=n_light,
                                              averaged_codes=m_light)),
    ]:
        count = bl.cost(method, inputs)
        print(f"  {name:<12} {count:>15,} multiplications ({bl.format_magnitude(count, 'Mega')})")
    print(f"\ntotal wall time {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
