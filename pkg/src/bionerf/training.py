"""Ray-batch training with Adam, exponential LR decay, and checkpoints.

Each iteration draws its randomness from default_rng([seed, iteration]),
so an interrupted run resumed from a checkpoint replays the identical
stream: resume equivalence is bit-exact without serializing generator
state. The parameter/optimizer/memory buffers in a checkpoint are all
float32 tensors in the named-tensor container, plus small meta tensors
(step counter, config hash bytes).

One loop thread owns all mutable state; validation renders use read-only
parameter snapshots.
"""
from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import ndtensor as nd
from .data import SceneDataset
from .encoding import positional_encode
from .field import (
    BIONERF,
    CARRIED,
    FieldConfig,
    FieldParams,
    MemoryState,
    NERF,
    baseline_nerf_forward,
    field_forward,
    init_params,
    make_field_fn,
    params_from_arrays,
    read_tensors,
    write_tensors,
)
from .rendering import RayBatch, RenderConfig, composite, generate_rays, hierarchical_resample, stratified_sample


class OptimizerError(RuntimeError):
    """A parameter arrived at the optimizer without a gradient."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries (iteration, lr, loss)."""

    def __init__(self, iteration: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration} (lr {lr:.3e})")
        self.iteration = iteration
        self.lr = lr
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    lr_final: float = 5e-5
    iterations: int = 400_000
    batch_rays: int = 8192
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    memory_mode: str = CARRIED
    field_kind: str = BIONERF
    checkpoint_interval: int = 0  # 0: only the final checkpoint
    val_interval: int = 0  # 0: no validation renders
    val_views: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_rays <= 0 or self.iterations < 0:
            raise ValueError("learning_rate and batch_rays must be positive")


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    lr: float
    wall_ms: float
    val_psnr: Optional[float] = None

    def csv_row(self) -> str:
        tail = f",{self.val_psnr:.4f}" if self.val_psnr is not None else ","
        return f"{self.iteration},{self.loss:.8f},{self.lr:.8e},{self.wall_ms:.2f}{tail}"


LOG_HEADER = "iteration,loss,lr,wall_ms,val_psnr"


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, named: dict[str, nd.Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.values) for k, p in named.items()},
            v={k: np.zeros_like(p.values) for k, p in named.items()},
        )


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """lr0 * (lr_final/lr0)^(step/T): exact at both endpoints."""
    if cfg.iterations == 0:
        return cfg.learning_rate
    frac = step / cfg.iterations
    return cfg.learning_rate * (cfg.lr_final / cfg.learning_rate) ** frac


def mse_loss(pred: nd.Tensor, target) -> nd.Tensor:
    """Mean over all entries of the squared difference."""
    target_arr = target.values if isinstance(target, nd.Tensor) else np.asarray(target)
    if pred.shape != target_arr.shape:
        raise nd.DimensionError(f"mse_loss: {pred.shape} vs {target_arr.shape}")
    diff = nd.sub(pred, nd.Tensor(target_arr, dtype=pred.values.dtype))
    return nd.mean(nd.hadamard(diff, diff))


def adam_step(named: dict[str, nd.Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place moment update and parameter step, float64 math over float32
    stored state (deterministic and resume-stable)."""
    state.t += 1
    t = state.t
    for name in sorted(named):
        p = named[name]
        if p.grad is None:
            raise OptimizerError(f"parameter {name!r} has no gradient")
        g = p.grad.astype(np.float64)
        m = state.m[name].astype(np.float64)
        v = state.v[name].astype(np.float64)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
        m_hat = state.m[name].astype(np.float64) / (1.0 - beta1**t)
        v_hat = state.v[name].astype(np.float64) / (1.0 - beta2**t)
        p.values = (
            p.values.astype(np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
        ).astype(np.float32)


# -------------------------------------------------------------- ray pool


class RayPool:
    """Every training pixel's ray and target, flattened for O(1) sampling."""

    def __init__(self, origins, directions, targets, image_index, near, far):
        self.origins = origins
        self.directions = directions
        self.targets = targets
        self.image_index = image_index
        self.near = near
        self.far = far

    @classmethod
    def from_dataset(cls, dataset: SceneDataset, split: str = "train") -> "RayPool":
        frames = dataset.frames(split)
        if not frames:
            raise ValueError(f"dataset has no {split!r} frames")
        origins, directions, targets, index = [], [], [], []
        from .rendering import all_pixel_ids

        for i, frame in enumerate(frames):
            cam = frame.camera
            ids = all_pixel_ids(cam.width, cam.height)
            batch = generate_rays(cam, ids, near=dataset.near, far=dataset.far)
            origins.append(batch.origins)
            directions.append(batch.directions)
            targets.append(dataset.target_rgb(frame).reshape(-1, 3))
            index.append(np.full(ids.shape[0], i, dtype=np.int32))
        return cls(
            origins=np.concatenate(origins),
            directions=np.concatenate(directions),
            targets=np.concatenate(targets),
            image_index=np.concatenate(index),
            near=dataset.near,
            far=dataset.far,
        )

    @property
    def count(self) -> int:
        return self.origins.shape[0]

    def sample(self, z: int, rng) -> RayBatch:
        """z pixels uniform with replacement across all training images."""
        picks = rng.integers(0, self.count, size=z)
        return RayBatch(
            origins=self.origins[picks],
            directions=self.directions[picks],
            near=self.near,
            far=self.far,
            target_rgb=self.targets[picks],
        )


def sample_ray_batch(source, z: int, rng) -> RayBatch:
    """Uniform-with-replacement pixel sampling; accepts a SceneDataset (pool
    built on the fly) or a prebuilt RayPool for loops."""
    pool = source if isinstance(source, RayPool) else RayPool.from_dataset(source)
    return pool.sample(z, rng)


# ------------------------------------------------------------ field apply


def _apply_field(params: FieldParams, positions, dirs, state: MemoryState, pos_scale: float):
    cfg = params.config
    x_enc = nd.Tensor(positional_encode(positions * pos_scale, cfg.l_pos, cfg.include_input))
    d_enc = nd.Tensor(positional_encode(dirs, cfg.l_dir, cfg.include_input))
    if cfg.kind == NERF:
        delta, c = baseline_nerf_forward(params, x_enc, d_enc)
        return delta, c, state
    return field_forward(params, x_enc, d_enc, state)


# ------------------------------------------------------------ checkpoints


def config_hash(train_cfg: TrainConfig, field_cfg: FieldConfig, render_cfg: RenderConfig) -> bytes:
    blob = repr((sorted(asdict(train_cfg).items()),
                 sorted(asdict(field_cfg).items()),
                 sorted(asdict(render_cfg).items()))).encode()
    return hashlib.sha256(blob).digest()


def save_checkpoint(
    path,
    coarse: FieldParams,
    fine: FieldParams,
    adam: AdamState,
    states: dict[str, MemoryState],
    step: int,
    cfg_hash: bytes,
) -> None:
    named: dict[str, np.ndarray] = {}
    for prefix, params in (("params/coarse", coarse), ("params/fine", fine)):
        for k, t in params.tensors.items():
            named[f"{prefix}/{k}"] = t.values
    for k, arr in adam.m.items():
        named[f"adam_m/{k}"] = arr
    for k, arr in adam.v.items():
        named[f"adam_v/{k}"] = arr
    for name, state in states.items():
        if state.psi is not None:
            named[f"memory/{name}"] = state.psi
    named["meta/step"] = np.array([step], dtype=np.float32)
    named["meta/adam_t"] = np.array([adam.t], dtype=np.float32)
    named["meta/config_hash"] = np.frombuffer(cfg_hash, dtype=np.uint8).astype(np.float32)
    write_tensors(path, named)


def load_checkpoint(path, field_cfg: FieldConfig, expected_hash: Optional[bytes] = None):
    named = read_tensors(path)
    if expected_hash is not None:
        stored = bytes(named["meta/config_hash"].astype(np.uint8).tobytes())
        if stored != expected_hash:
            raise ValueError("checkpoint was written under a different resolved config")
    coarse = params_from_arrays(field_cfg, named, prefix="params/coarse/")
    fine = params_from_arrays(field_cfg, named, prefix="params/fine/")
    step = int(named["meta/step"][0])
    adam_t = int(named["meta/adam_t"][0])
    m, v = {}, {}
    for key, arr in named.items():
        if key.startswith("adam_m/"):
            m[key[len("adam_m/"):]] = arr.copy()
        elif key.startswith("adam_v/"):
            v[key[len("adam_v/"):]] = arr.copy()
    adam = AdamState(m=m, v=v, t=adam_t)
    memories = {
        key[len("memory/"):]: named[key].copy()
        for key in named
        if key.startswith("memory/")
    }
    return coarse, fine, adam, memories, step


# ------------------------------------------------------------------ train


@dataclass
class TrainResult:
    coarse: FieldParams
    fine: FieldParams
    records: list[TrainRecord]
    final_checkpoint: Optional[str] = None


def train(
    train_cfg: TrainConfig,
    field_cfg: FieldConfig,
    render_cfg: RenderConfig,
    dataset: SceneDataset,
    out_dir: Optional[str] = None,
    resume: Optional[str] = None,
) -> TrainResult:
    """The iteration loop: sample batch, coarse pass, importance resample,
    fine pass, summed MSE, backward, Adam, memory carry. Checkpoints land in
    out_dir/checkpoints, the CSV log in out_dir/logs/train.csv."""
    field_cfg = replace(field_cfg, kind=train_cfg.field_kind)
    cfg_hash = config_hash(train_cfg, field_cfg, render_cfg)
    pool = RayPool.from_dataset(dataset, "train")
    pos_scale = dataset.pos_scale

    coarse = init_params(field_cfg, seed=train_cfg.seed)
    fine = init_params(field_cfg, seed=train_cfg.seed + 1)
    named = {f"coarse/{k}": t for k, t in coarse.tensors.items()}
    named.update({f"fine/{k}": t for k, t in fine.tensors.items()})
    adam = AdamState.for_params(named)
    state_c = MemoryState(None, mode=train_cfg.memory_mode)
    state_f = MemoryState(None, mode=train_cfg.memory_mode)
    start = 0

    if resume is not None:
        coarse, fine, adam, memories, start = load_checkpoint(resume, field_cfg, cfg_hash)
        named = {f"coarse/{k}": t for k, t in coarse.tensors.items()}
        named.update({f"fine/{k}": t for k, t in fine.tensors.items()})
        state_c = MemoryState(memories.get("coarse"), mode=train_cfg.memory_mode, iteration=start)
        state_f = MemoryState(memories.get("fine"), mode=train_cfg.memory_mode, iteration=start)

    ckpt_dir = log_file = None
    if out_dir is not None:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        log_dir = os.path.join(out_dir, "logs")
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, "train.csv")
        if start == 0 or not os.path.exists(log_file):
            with open(log_file, "w") as f:
                f.write(LOG_HEADER + "\n")

    records: list[TrainRecord] = []
    z = train_cfg.batch_rays
    n_c, n_f = render_cfg.n_coarse, render_cfg.n_fine

    for step in range(start, train_cfg.iterations):
        t0 = time.perf_counter()
        rng = np.random.default_rng([train_cfg.seed, step])
        lr = lr_schedule(step, train_cfg)
        batch = pool.sample(z, rng)

        coarse_pts = stratified_sample(batch, n_c, jitter=True, rng=rng)
        dirs_c = np.repeat(batch.directions, n_c, axis=0)
        delta, c, state_c = _apply_field(
            coarse, coarse_pts.positions.reshape(-1, 3), dirs_c, state_c, pos_scale
        )
        out_c = composite(
            nd.reshape(delta, (z, n_c)),
            nd.reshape(c, (z, n_c, 3)),
            coarse_pts.t_vals,
            render_cfg.background,
        )

        fine_pts = hierarchical_resample(
            batch, out_c.weights.values.copy(), coarse_pts.t_vals, n_f, rng
        )
        n_all = n_c + n_f
        dirs_f = np.repeat(batch.directions, n_all, axis=0)
        delta_f, c_f, state_f = _apply_field(
            fine, fine_pts.positions.reshape(-1, 3), dirs_f, state_f, pos_scale
        )
        out_f = composite(
            nd.reshape(delta_f, (z, n_all)),
            nd.reshape(c_f, (z, n_all, 3)),
            fine_pts.t_vals,
            render_cfg.background,
        )

        loss = nd.add(mse_loss(out_c.rgb, batch.target_rgb), mse_loss(out_f.rgb, batch.target_rgb))
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingDiverged(step, lr, loss_value)
        loss.backward()
        adam_step(named, adam, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
        nd.zero_grads(named.values())

        record = TrainRecord(
            iteration=step,
            loss=loss_value,
            lr=lr,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )

        done = step + 1 == train_cfg.iterations
        if train_cfg.val_interval and (step + 1) % train_cfg.val_interval == 0:
            record.val_psnr = _validation_psnr(coarse, fine, dataset, render_cfg, train_cfg, pos_scale)
        records.append(record)
        if log_file is not None:
            with open(log_file, "a") as f:
                f.write(record.csv_row() + "\n")
        if ckpt_dir is not None and (
            done or (train_cfg.checkpoint_interval and (step + 1) % train_cfg.checkpoint_interval == 0)
        ):
            path = os.path.join(ckpt_dir, f"ckpt_{step + 1:07d}.bnrf")
            save_checkpoint(
                path, coarse, fine, adam,
                {"coarse": state_c, "fine": state_f},
                step + 1, cfg_hash,
            )

    final = None
    if ckpt_dir is not None:
        final = os.path.join(ckpt_dir, f"ckpt_{train_cfg.iterations:07d}.bnrf")
        if train_cfg.iterations == 0 or not os.path.exists(final):
            save_checkpoint(
                final, coarse, fine, adam,
                {"coarse": state_c, "fine": state_f},
                train_cfg.iterations, cfg_hash,
            )
    return TrainResult(coarse=coarse, fine=fine, records=records, final_checkpoint=final)


def _validation_psnr(coarse, fine, dataset, render_cfg, train_cfg, pos_scale) -> Optional[float]:
    from .metrics import evaluate_scene

    if not dataset.frames("val"):
        return None
    report = evaluate_scene(
        make_field_fn(coarse, pos_scale, train_cfg.memory_mode),
        make_field_fn(fine, pos_scale, train_cfg.memory_mode),
        dataset,
        "val",
        render_cfg,
        seed=train_cfg.seed,
        max_views=train_cfg.val_views,
    )
    return report.mean_psnr
