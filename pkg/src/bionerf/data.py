"""Scene ingestion: Blender-layout directories and a procedural toy scene.

The toy scene is a homogeneous-density sphere on a camera ring, rendered
by an exact ray/sphere integrator: chord length ell gives the pixel
(1 - e^{-sigma0*ell}) * albedo + e^{-sigma0*ell} * background, no sampling.
It doubles as the ground-truth oracle for the volume renderer and the
acceptance scenes.

Blender layout: transforms_{train,val,test}.json with camera_angle_x in
radians and frames[{file_path, transform_matrix}]; images 8-bit PNG, RGBA
or RGB, decoded to linear [0,1]. focal = 0.5 * W / tan(0.5 * camera_angle_x).
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .rendering import CameraModel, read_png, write_png

SPLITS = ("train", "val", "test")


class SceneIOError(IOError):
    """Missing or malformed scene files."""


@dataclass
class Frame:
    camera: CameraModel
    image: np.ndarray  # (H, W, 4) float32 in [0,1]


@dataclass
class SceneDataset:
    splits: dict[str, list[Frame]]
    near: float
    far: float
    background: np.ndarray  # (3,) float32
    pos_scale: float  # multiplies world positions into roughly [-1, 1]
    camera_angle_x: float

    def frames(self, split: str) -> list[Frame]:
        return self.splits.get(split, [])

    def image_size(self) -> tuple[int, int]:
        for split in SPLITS:
            if self.splits.get(split):
                cam = self.splits[split][0].camera
                return cam.width, cam.height
        raise SceneIOError("dataset has no frames")

    def target_rgb(self, frame: Frame) -> np.ndarray:
        """Ground-truth colors with alpha composited onto the background."""
        rgb = frame.image[..., :3]
        alpha = frame.image[..., 3:4]
        return (rgb * alpha + self.background * (1.0 - alpha)).astype(np.float32)


# ------------------------------------------------------------- blender io


def load_blender_scene(
    directory,
    near: float = 2.0,
    far: float = 6.0,
    background=(1.0, 1.0, 1.0),
) -> SceneDataset:
    directory = os.fspath(directory)
    splits: dict[str, list[Frame]] = {}
    camera_angle_x = None
    for split in SPLITS:
        path = os.path.join(directory, f"transforms_{split}.json")
        if not os.path.exists(path):
            if split == "train":
                raise SceneIOError(f"missing {path}")
            warnings.warn(f"no {os.path.basename(path)}; {split} split left empty")
            splits[split] = []
            continue
        with open(path) as f:
            meta = json.load(f)
        camera_angle_x = float(meta["camera_angle_x"])
        frames = []
        for entry in meta["frames"]:
            rel = entry["file_path"]
            if not rel.endswith(".png"):
                rel += ".png"
            img_path = os.path.normpath(os.path.join(directory, rel))
            if not os.path.exists(img_path):
                raise SceneIOError(f"missing image {img_path}")
            image = read_png(img_path)
            h, w = image.shape[:2]
            focal = 0.5 * w / math.tan(0.5 * camera_angle_x)
            matrix = np.array(entry["transform_matrix"], dtype=np.float64)
            rot = matrix[:3, :3]
            if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-3):
                raise SceneIOError(f"non-orthonormal pose in {path}: frame {rel}")
            camera = CameraModel(matrix, focal=focal, width=w, height=h)
            frames.append(Frame(camera=camera, image=image))
        splits[split] = frames
    return SceneDataset(
        splits=splits,
        near=near,
        far=far,
        background=np.asarray(background, dtype=np.float32),
        pos_scale=1.0 / far,
        camera_angle_x=camera_angle_x,
    )


def save_blender_scene(directory, dataset: SceneDataset) -> None:
    """Write the dataset back out in the Blender layout (used by make-toy
    and the loader round-trip test)."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    for split, frames in dataset.splits.items():
        entries = []
        for i, frame in enumerate(frames):
            rel = f"./{split}/r_{i}"
            img_dir = os.path.join(directory, split)
            os.makedirs(img_dir, exist_ok=True)
            write_png(os.path.join(img_dir, f"r_{i}.png"), frame.image[..., :3])
            entries.append(
                {
                    "file_path": rel,
                    "transform_matrix": frame.camera.camera_to_world.tolist(),
                }
            )
        meta = {"camera_angle_x": dataset.camera_angle_x, "frames": entries}
        with open(os.path.join(directory, f"transforms_{split}.json"), "w") as f:
            json.dump(meta, f, indent=2)


# -------------------------------------------------------------- toy scene


@dataclass(frozen=True)
class ToySceneSpec:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.6
    albedo: tuple = (0.85, 0.35, 0.30)
    background: tuple = (0.0, 0.0, 0.0)
    sigma0: float = 14.0
    width: int = 64
    height: int = 64
    n_train: int = 20
    n_val: int = 4
    n_test: int = 8
    ring_radius: float = 2.5
    elevation_deg: float = 28.0
    camera_angle_x: float = 0.70  # radians
    near: float = 0.5
    far: float = 4.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.sigma0 <= 0:
            raise ValueError("density scale must be positive")
        if self.ring_radius <= self.radius:
            raise ValueError("cameras must sit outside the sphere")


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world with -z pointing from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    backward = eye - np.asarray(target, dtype=np.float64)
    backward /= np.linalg.norm(backward)
    right = np.cross(np.asarray(up, dtype=np.float64), backward)
    right /= np.linalg.norm(right)
    true_up = np.cross(backward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = true_up
    pose[:3, 2] = backward
    pose[:3, 3] = eye
    return pose


def _ring_camera(spec: ToySceneSpec, azimuth: float) -> CameraModel:
    el = math.radians(spec.elevation_deg)
    eye = np.array(spec.center, dtype=np.float64) + spec.ring_radius * np.array(
        [math.cos(azimuth) * math.cos(el), math.sin(azimuth) * math.cos(el), math.sin(el)]
    )
    pose = look_at_pose(eye, spec.center)
    focal = 0.5 * spec.width / math.tan(0.5 * spec.camera_angle_x)
    return CameraModel(pose, focal=focal, width=spec.width, height=spec.height)


_PHI = (1 + 5**0.5) / 2


def split_azimuths(spec: ToySceneSpec) -> dict[str, np.ndarray]:
    """Evenly spaced rings; val/test carry irrational fractional offsets of
    their own spacing (golden-ratio conjugates), so no two splits ever share
    an azimuth whatever the view counts."""
    return {
        "train": 2 * np.pi * np.arange(spec.n_train) / max(spec.n_train, 1),
        "val": 2 * np.pi * (np.arange(spec.n_val) + (2 - _PHI)) / max(spec.n_val, 1),
        "test": 2 * np.pi * (np.arange(spec.n_test) + (_PHI - 1)) / max(spec.n_test, 1),
    }


def analytic_render(spec: ToySceneSpec, camera: CameraModel) -> np.ndarray:
    """Exact image of the homogeneous sphere: per pixel, the chord length
    through the sphere sets the opacity mixing albedo over background."""
    u, v = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    dirs_cam = np.stack(
        [
            (u + 0.5 - camera.width / 2.0) / camera.focal,
            -(v + 0.5 - camera.height / 2.0) / camera.focal,
            -np.ones_like(u, dtype=np.float64),
        ],
        axis=-1,
    )
    rot = camera.camera_to_world[:3, :3]
    d = dirs_cam @ rot.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = camera.camera_to_world[:3, 3]
    oc = o - np.asarray(spec.center, dtype=np.float64)
    b = (d * oc).sum(-1)
    disc = b * b - ((oc * oc).sum() - spec.radius**2)
    chord = np.where(disc > 0, 2.0 * np.sqrt(np.maximum(disc, 0.0)), 0.0)
    opacity = 1.0 - np.exp(-spec.sigma0 * chord)
    albedo = np.asarray(spec.albedo, dtype=np.float64)
    background = np.asarray(spec.background, dtype=np.float64)
    img = opacity[..., None] * albedo + (1.0 - opacity[..., None]) * background
    return img.astype(np.float32)


def analytic_field(spec: ToySceneSpec):
    """The toy scene as a raw field function the renderer can consume:
    density sigma0 inside the sphere, logit(albedo) color everywhere."""
    albedo = np.clip(np.asarray(spec.albedo, dtype=np.float64), 1e-6, 1 - 1e-6)
    logits = np.log(albedo / (1.0 - albedo)).astype(np.float32)
    center = np.asarray(spec.center, dtype=np.float32)

    def run(positions: np.ndarray, dirs: np.ndarray):
        from . import ndtensor as nd

        inside = ((positions - center) ** 2).sum(-1) < spec.radius**2
        delta = np.where(inside, spec.sigma0, 0.0).astype(np.float32)[:, None]
        c = np.tile(logits, (positions.shape[0], 1))
        return nd.Tensor(delta), nd.Tensor(c)

    return run


def generate_toy_scene(spec: ToySceneSpec) -> SceneDataset:
    """Cameras on a ring looking at the sphere; images from the exact
    integrator; splits disjoint in azimuth."""
    azimuths = split_azimuths(spec)
    splits: dict[str, list[Frame]] = {}
    for split, angles in azimuths.items():
        frames = []
        for az in angles:
            camera = _ring_camera(spec, az)
            rgb = analytic_render(spec, camera)
            rgba = np.concatenate([rgb, np.ones_like(rgb[..., :1])], axis=-1)
            frames.append(Frame(camera=camera, image=rgba))
        splits[split] = frames
    return SceneDataset(
        splits=splits,
        near=spec.near,
        far=spec.far,
        background=np.asarray(spec.background, dtype=np.float32),
        pos_scale=1.0 / spec.far,
        camera_angle_x=spec.camera_angle_x,
    )
