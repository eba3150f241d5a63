#!/usr/bin/env python3
"""Matched-budget comparison of the gated field against the plain baseline.

Trains both field kinds on the same procedural sphere scene across one or
more seeds and prints the comparison table (Avg.-first columns, one method
per row), mirroring the per-scene evaluation layout used for benchmark
reporting. Example:

    python scripts/toy_benchmark.py --out runs/bench --iterations 2000 \
        --hidden 64 --size 32 --views 10 --batch-rays 256 --seeds 0 1 2
"""
import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bionerf import data, field, metrics, rendering, training


def run_one(args, kind: str, seed: int, dataset, spec):
    field_cfg = field.FieldConfig(
        kind=kind, hidden=args.hidden, color_hidden=max(args.hidden // 2, 4)
    )
    render_cfg = rendering.RenderConfig(
        n_coarse=args.n_coarse, n_fine=args.n_fine,
        chunk_rays=args.batch_rays, background=spec.background,
    )
    train_cfg = training.TrainConfig(
        iterations=args.iterations, batch_rays=args.batch_rays,
        seed=seed, field_kind=kind, memory_mode=args.memory,
    )
    out_dir = os.path.join(args.out, f"{kind}_seed{seed}")
    result = training.train(train_cfg, field_cfg, render_cfg, dataset, out_dir=out_dir)
    coarse_fn = field.make_field_fn(result.coarse, dataset.pos_scale, args.memory)
    fine_fn = field.make_field_fn(result.fine, dataset.pos_scale, args.memory)
    return metrics.evaluate_scene(
        coarse_fn, fine_fn, dataset, "test", render_cfg,
        scene_name="sphere", max_views=args.eval_views,
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--views", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--hidden", type=int, default=256)
    ap.add_argument("--batch-rays", type=int, default=1024)
    ap.add_argument("--n-coarse", type=int, default=32)
    ap.add_argument("--n-fine", type=int, default=64)
    ap.add_argument("--memory", default=field.CARRIED)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--eval-views", type=int, default=4)
    args = ap.parse_args()

    spec = data.ToySceneSpec(width=args.size, height=args.size, n_train=args.views)
    dataset = data.generate_toy_scene(spec)

    summary = {}
    reports = {}
    for seed in args.seeds:
        for kind in (field.BIONERF, field.NERF):
            rep = run_one(args, kind, seed, dataset, spec)
            reports[f"{kind}/seed{seed}"] = rep
            summary[f"{kind}/seed{seed}"] = {
                "test_psnr": rep.mean_psnr,
                "test_ssim": rep.mean_ssim,
            }
            print(f"{kind} seed {seed}: test PSNR {rep.mean_psnr:.2f} dB, SSIM {rep.mean_ssim:.3f}")

    table = metrics.comparison_table(reports)
    print(table)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "comparison.txt"), "w") as f:
        f.write(table)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)


if __name__ == "__main__":
    main()
