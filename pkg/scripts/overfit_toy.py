#!/usr/bin/env python3
"""Overfit the procedural sphere scene and report train/held-out PSNR.

The default arguments reproduce the desk-scale budget (20 views at 64x64,
N_c=32/N_f=64, z=1024, 5000 iterations, h=256); smaller values give quick
sanity runs. Example:

    python scripts/overfit_toy.py --out runs/overfit --iterations 500 \
        --hidden 64 --size 32 --views 10 --batch-rays 256
"""
import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bionerf import data, field, metrics, rendering, training


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
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--field", default=field.BIONERF, choices=(field.BIONERF, field.NERF))
    ap.add_argument("--memory", default=field.CARRIED, choices=(field.CARRIED, field.STATELESS))
    ap.add_argument("--eval-train-views", type=int, default=5)
    ap.add_argument("--eval-test-views", type=int, default=4)
    args = ap.parse_args()

    spec = data.ToySceneSpec(width=args.size, height=args.size, n_train=args.views)
    dataset = data.generate_toy_scene(spec)
    field_cfg = field.FieldConfig(
        kind=args.field, hidden=args.hidden, color_hidden=max(args.hidden // 2, 4)
    )
    render_cfg = rendering.RenderConfig(
        n_coarse=args.n_coarse,
        n_fine=args.n_fine,
        chunk_rays=args.batch_rays,
        background=spec.background,
    )
    train_cfg = training.TrainConfig(
        iterations=args.iterations,
        batch_rays=args.batch_rays,
        seed=args.seed,
        field_kind=args.field,
        memory_mode=args.memory,
        checkpoint_interval=max(args.iterations // 4, 1),
    )

    t0 = time.perf_counter()
    result = training.train(train_cfg, field_cfg, render_cfg, dataset, out_dir=args.out)
    train_minutes = (time.perf_counter() - t0) / 60

    coarse_fn = field.make_field_fn(result.coarse, dataset.pos_scale, args.memory)
    fine_fn = field.make_field_fn(result.fine, dataset.pos_scale, args.memory)
    rep_train = metrics.evaluate_scene(
        coarse_fn, fine_fn, dataset, "train", render_cfg,
        scene_name="sphere", max_views=args.eval_train_views,
    )
    rep_test = metrics.evaluate_scene(
        coarse_fn, fine_fn, dataset, "test", render_cfg,
        scene_name="sphere", max_views=args.eval_test_views,
    )
    summary = {
        "field": args.field,
        "memory": args.memory,
        "iterations": args.iterations,
        "train_minutes": round(train_minutes, 2),
        "first_loss": result.records[0].loss if result.records else None,
        "last_loss": result.records[-1].loss if result.records else None,
        "train_psnr": rep_train.mean_psnr,
        "train_ssim": rep_train.mean_ssim,
        "test_psnr": rep_test.mean_psnr,
        "test_ssim": rep_test.mean_ssim,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
