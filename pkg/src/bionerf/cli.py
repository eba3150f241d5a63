"""Command-line entry point: make-toy, train, render, eval.

Configuration is INI-style with sections [field], [train], [render],
[data], [metrics]; CLI flags override file values, file values override a
scene's own scene.ini sidecar, which overrides built-in defaults. Unknown
sections or keys are rejected before any work starts, and the fully
resolved configuration is echoed into the run directory.

Exit codes: 0 success, 2 usage/config, 3 data or IO, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from . import data as data_mod
from . import field as field_mod
from . import metrics as metrics_mod
from . import rendering, training
from .field import FieldConfig
from .rendering import RenderConfig

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Bad configuration: unknown key, unparsable value."""


@dataclasses.dataclass
class DataConfig:
    near: float = 2.0
    far: float = 6.0
    background: tuple = (1.0, 1.0, 1.0)


@dataclasses.dataclass
class MetricsConfig:
    max_views: int = 0  # 0: all views


_SECTIONS = {
    "field": FieldConfig,
    "train": training.TrainConfig,
    "render": RenderConfig,
    "data": DataConfig,
    "metrics": MetricsConfig,
}


def _coerce(raw: str, kind, key: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(float(p) for p in raw.split(","))
        if kind is str:
            return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from exc
    raise ConfigError(f"unsupported config type for {key}")


_TYPE_NAMES = {
    "int": int,
    "float": float,
    "str": str,
    "bool": bool,
    "tuple": tuple,
    "Optional[float]": float,
}


def _field_types(cls) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(cls):
        kind = f.type if not isinstance(f.type, str) else _TYPE_NAMES.get(f.type)
        assert kind is not None, f"unmapped config type {f.type!r} for {f.name}"
        out[f.name] = kind
    return out


def read_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = dict(parser.items(section))
    return out


def resolve_configs(layers: list[dict[str, dict[str, str]]]):
    """Later layers override earlier ones; every key is validated against
    its section's dataclass."""
    merged: dict[str, dict[str, str]] = {name: {} for name in _SECTIONS}
    for layer in layers:
        for section, values in layer.items():
            merged[section].update(values)
    built = {}
    for section, cls in _SECTIONS.items():
        types = _field_types(cls)
        kwargs = {}
        for key, raw in merged[section].items():
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _coerce(raw, types[key], f"[{section}] {key}")
        try:
            built[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{section}] config: {exc}") from exc
    return built


def echo_resolved(path, configs) -> None:
    parser = configparser.ConfigParser()
    for section, cfg in configs.items():
        parser[section] = {}
        for f in dataclasses.fields(cfg):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][f.name] = str(value)
    with open(path, "w") as fh:
        parser.write(fh)


def _scene_sidecar(scene_dir) -> dict[str, dict[str, str]]:
    sidecar = os.path.join(scene_dir, "scene.ini")
    if os.path.exists(sidecar):
        return read_config_file(sidecar)
    return {}


def _load_scene(scene_dir, data_cfg: DataConfig) -> data_mod.SceneDataset:
    if not os.path.isdir(scene_dir):
        raise data_mod.SceneIOError(f"scene directory not found: {scene_dir}")
    return data_mod.load_blender_scene(
        scene_dir, near=data_cfg.near, far=data_cfg.far, background=data_cfg.background
    )


def _field_fns(ckpt_path, field_cfg: FieldConfig, pos_scale: float, memory_mode: str):
    named = field_mod.read_tensors(ckpt_path)
    coarse = field_mod.params_from_arrays(field_cfg, named, prefix="params/coarse/")
    fine = field_mod.params_from_arrays(field_cfg, named, prefix="params/fine/")
    return (
        field_mod.make_field_fn(coarse, pos_scale, memory_mode),
        field_mod.make_field_fn(fine, pos_scale, memory_mode),
    )


# ------------------------------------------------------------ subcommands


def cmd_make_toy(args) -> int:
    out = args.out
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    try:
        width, height = (int(p) for p in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"cannot parse --size {args.size!r}, expected WxH") from None
    spec = data_mod.ToySceneSpec(width=width, height=height, n_train=args.views)
    ds = data_mod.generate_toy_scene(spec)
    data_mod.save_blender_scene(out, ds)
    sidecar = configparser.ConfigParser()
    sidecar["data"] = {
        "near": str(spec.near),
        "far": str(spec.far),
        "background": ",".join(str(v) for v in spec.background),
    }
    with open(os.path.join(out, "scene.ini"), "w") as fh:
        sidecar.write(fh)
    print(f"wrote {spec.n_train}/{spec.n_val}/{spec.n_test} train/val/test views to {out}")
    return 0


def cmd_train(args) -> int:
    layers = [_scene_sidecar(args.scene)]
    if args.config:
        layers.append(read_config_file(args.config))
    overrides: dict[str, dict[str, str]] = {"train": {}}
    if args.field:
        overrides["train"]["field_kind"] = args.field
    if args.memory:
        overrides["train"]["memory_mode"] = args.memory
    if args.seed is not None:
        overrides["train"]["seed"] = str(args.seed)
    if args.iterations is not None:
        overrides["train"]["iterations"] = str(args.iterations)
    layers.append(overrides)
    configs = resolve_configs(layers)
    dataset = _load_scene(args.scene, configs["data"])
    os.makedirs(args.out, exist_ok=True)
    echo_resolved(os.path.join(args.out, "config.resolved.ini"), configs)
    result = training.train(
        configs["train"],
        configs["field"],
        configs["render"],
        dataset,
        out_dir=args.out,
        resume=args.resume,
    )
    print(f"finished {configs['train'].iterations} iterations; checkpoint: {result.final_checkpoint}")
    return 0


def cmd_render(args) -> int:
    layers = [_scene_sidecar(args.scene)]
    if args.config:
        layers.append(read_config_file(args.config))
    configs = resolve_configs(layers)
    dataset = _load_scene(args.scene, configs["data"])
    field_cfg = dataclasses.replace(configs["field"], kind=configs["train"].field_kind)
    coarse_fn, fine_fn = _field_fns(
        args.ckpt, field_cfg, dataset.pos_scale, configs["train"].memory_mode
    )
    if os.path.exists(args.pose):
        matrix = np.loadtxt(args.pose).reshape(4, 4)
        width, height = dataset.image_size()
        frames = dataset.frames(args.split) or dataset.frames("train")
        camera = rendering.CameraModel(
            matrix, focal=frames[0].camera.focal, width=width, height=height
        )
    else:
        try:
            index = int(args.pose)
        except ValueError:
            raise ConfigError(f"--pose {args.pose!r} is neither a file nor an index") from None
        frames = dataset.frames(args.split)
        if index >= len(frames):
            raise data_mod.SceneIOError(
                f"pose index {index} out of range for split {args.split!r} ({len(frames)} views)"
            )
        camera = frames[index].camera
    img, _ = rendering.render_image(
        coarse_fn, fine_fn, camera, dataset.near, dataset.far, configs["render"], seed=args.seed
    )
    rendering.write_png(args.out, img)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    layers = [_scene_sidecar(args.scene)]
    if args.config:
        layers.append(read_config_file(args.config))
    configs = resolve_configs(layers)
    dataset = _load_scene(args.scene, configs["data"])
    field_cfg = dataclasses.replace(configs["field"], kind=configs["train"].field_kind)
    coarse_fn, fine_fn = _field_fns(
        args.ckpt, field_cfg, dataset.pos_scale, configs["train"].memory_mode
    )
    max_views = configs["metrics"].max_views or None
    report = metrics_mod.evaluate_scene(
        coarse_fn,
        fine_fn,
        dataset,
        args.split,
        configs["render"],
        scene_name=os.path.basename(os.path.normpath(args.scene)),
        seed=args.seed,
        max_views=max_views,
    )
    with open(args.out, "w") as fh:
        fh.write(report.to_csv())
    table_path = os.path.splitext(args.out)[0] + ".txt"
    with open(table_path, "w") as fh:
        fh.write(report.to_text_table())
    print(report.to_text_table(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bionerf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="generate a procedural sphere scene in Blender layout")
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=20, help="training views (default 20)")
    p.add_argument("--size", default="64x64", help="image size WxH (default 64x64)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_make_toy)

    p = sub.add_parser("train", help="train on a scene directory")
    p.add_argument("--config")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field", choices=(field_mod.BIONERF, field_mod.NERF))
    p.add_argument("--memory", choices=(field_mod.CARRIED, field_mod.STATELESS))
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("render", help="render one view from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pose", required=True, help="view index or path to a 4x4 matrix file")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("eval", help="render a split and score PSNR/SSIM")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True, help="CSV path (text table written alongside)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data_mod.SceneIOError, field_mod.CheckpointFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (training.TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
