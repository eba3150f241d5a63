"""The memory-gated radiance field and a plain baseline field.

The gated field runs four steps per forward pass: twin feature-extraction
MLPs over the encoded position, sigmoid gate computation from those
embeddings, a tanh memory update modulated by the gates, and two output
heads that read the gated memory concatenated with the encoded position
(density) or encoded direction (color). Head outputs are raw; the renderer
applies relu to density and sigmoid to color.

Gradients never flow through the memory buffer across iterations: the
stored buffer enters each forward pass as a constant (truncation window 1).

Also here: the little-endian named-tensor container used for checkpoints
(magic "BNRF", u32 version, then per tensor: u16 name length, UTF-8 name,
u8 rank, u32 extents, raw little-endian f32 payload).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ndtensor as nd
from .encoding import encoded_width, positional_encode

BIONERF = "bionerf"
NERF = "nerf"

CARRIED = "carried"
STATELESS = "stateless"


class StateShapeError(ValueError):
    """Carried memory buffer does not match the incoming batch."""


class CheckpointFormatError(ValueError):
    """Checkpoint bytes do not parse as the named-tensor container."""


@dataclass(frozen=True)
class FieldConfig:
    kind: str = BIONERF
    hidden: int = 256
    color_hidden: int = 128
    l_pos: int = 10
    l_dir: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.kind not in (BIONERF, NERF):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.hidden < 1 or self.color_hidden < 1:
            raise ValueError("hidden widths must be positive")

    @property
    def pos_width(self) -> int:
        return encoded_width(3, self.l_pos, self.include_input)

    @property
    def dir_width(self) -> int:
        return encoded_width(3, self.l_dir, self.include_input)


@dataclass
class MemoryState:
    """The recurrent buffer: rows align to batch slots, not ray identity."""

    psi: Optional[np.ndarray]  # (z, hidden) float32, or None before first use
    mode: str = CARRIED
    iteration: int = 0

    def start_psi(self, z: int, hidden: int) -> np.ndarray:
        """Buffer contents entering a forward pass of z rows."""
        if self.mode == STATELESS or self.psi is None:
            return np.zeros((z, hidden), dtype=np.float32)
        if self.psi.shape != (z, hidden):
            raise StateShapeError(
                f"carried memory has shape {self.psi.shape}, batch needs {(z, hidden)}"
            )
        return self.psi


@dataclass
class Filters:
    """Gate tensors in (0,1) plus the tanh pre-modulation in (-1,1)."""

    f_delta: nd.Tensor
    f_c: nd.Tensor
    f_psi: nd.Tensor
    f_mu: nd.Tensor
    gamma_pre: nd.Tensor


class FieldParams:
    """All weights of one field instance, as an ordered name -> Tensor map."""

    def __init__(self, config: FieldConfig, tensors: dict[str, nd.Tensor]):
        self.config = config
        self.tensors = tensors
        expected = expected_param_count(config)
        actual = sum(t.size for t in tensors.values())
        assert actual == expected, f"parameter count {actual} != expected {expected}"

    def parameters(self) -> list[nd.Tensor]:
        return list(self.tensors.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.values for k, t in self.tensors.items()}

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def __getitem__(self, name: str) -> nd.Tensor:
        return self.tensors[name]


def _bionerf_layout(cfg: FieldConfig) -> list[tuple[str, int, int]]:
    h, ch, pw, dw = cfg.hidden, cfg.color_hidden, cfg.pos_width, cfg.dir_width
    layers = []
    for branch in ("m_delta", "m_c"):
        layers += [(f"{branch}/0", pw, h), (f"{branch}/1", h, h), (f"{branch}/2", h, h)]
    layers += [
        ("filter_delta", h, h),
        ("filter_c", h, h),
        ("filter_psi", 2 * h, h),
        ("filter_mu", 2 * h, h),
        ("gamma", 2 * h, h),
        ("memory", h, h),
        ("head_delta/0", h + pw, h),
        ("head_delta/1", h, h),
        ("head_delta/2", h, 1),
        ("head_color/0", h + dw, ch),
        ("head_color/1", ch, 3),
    ]
    return layers


def _nerf_layout(cfg: FieldConfig) -> list[tuple[str, int, int]]:
    h, ch, pw, dw = cfg.hidden, cfg.color_hidden, cfg.pos_width, cfg.dir_width
    layers = [("trunk/0", pw, h)]
    for i in range(1, 8):
        n_in = h + pw if i == 4 else h  # skip concatenation feeds layer 5
        layers.append((f"trunk/{i}", n_in, h))
    layers += [("sigma", h, 1), ("color/0", h + dw, ch), ("color/1", ch, 3)]
    return layers


def _layout(cfg: FieldConfig) -> list[tuple[str, int, int]]:
    return _bionerf_layout(cfg) if cfg.kind == BIONERF else _nerf_layout(cfg)


def expected_param_count(cfg: FieldConfig) -> int:
    return sum(n_in * n_out + n_out for _, n_in, n_out in _layout(cfg))


def init_params(cfg: FieldConfig, seed: int) -> FieldParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases,
    drawn in fixed layer order so a seed pins every value."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, nd.Tensor] = {}
    for name, n_in, n_out in _layout(cfg):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(np.float32)
        tensors[f"{name}/w"] = nd.parameter(w)
        tensors[f"{name}/b"] = nd.parameter(np.zeros(n_out, dtype=np.float32))
    return FieldParams(cfg, tensors)


def _dense(params: FieldParams, name: str, x: nd.Tensor) -> nd.Tensor:
    return nd.affine(x, params[f"{name}/w"], params[f"{name}/b"])


def extract_positional_features(params: FieldParams, x_enc: nd.Tensor):
    """Twin 3-layer relu MLPs over the encoded position; no shared weights."""
    outs = []
    for branch in ("m_delta", "m_c"):
        h = x_enc
        for i in range(3):
            h = nd.relu(_dense(params, f"{branch}/{i}", h))
        outs.append(h)
    return outs[0], outs[1]


def compute_filters(params: FieldParams, h_delta: nd.Tensor, h_c: nd.Tensor) -> Filters:
    both = nd.concat(h_delta, h_c)
    return Filters(
        f_delta=nd.sigmoid(_dense(params, "filter_delta", h_delta)),
        f_c=nd.sigmoid(_dense(params, "filter_c", h_c)),
        f_psi=nd.sigmoid(_dense(params, "filter_psi", both)),
        f_mu=nd.sigmoid(_dense(params, "filter_mu", both)),
        gamma_pre=nd.tanh(_dense(params, "gamma", both)),
    )


def update_memory(params: FieldParams, filters: Filters, state: MemoryState):
    """mu = f_mu o gamma; psi' = tanh(W (mu + f_psi o psi_prev) + b).

    Returns the live psi tensor (for the heads) and the successor state
    holding the detached buffer. psi_prev enters as a constant.
    """
    z, h = filters.f_mu.shape
    mu = nd.hadamard(filters.f_mu, filters.gamma_pre)
    psi_prev = state.start_psi(z, h)
    # with a zero buffer (stateless, or first carried pass) the retained term
    # vanishes exactly, reducing to tanh(W mu + b); keeping it in the graph
    # gives the forget gate a (zero) gradient instead of none at all
    inner = nd.add(mu, nd.hadamard(filters.f_psi, nd.Tensor(psi_prev)))
    psi = nd.tanh(_dense(params, "memory", inner))
    new_state = MemoryState(
        psi=None if state.mode == STATELESS else psi.values.copy(),
        mode=state.mode,
        iteration=state.iteration + 1,
    )
    return psi, new_state


def contextual_inference(
    params: FieldParams,
    psi: nd.Tensor,
    filters: Filters,
    l_enc: nd.Tensor,
    d_enc: nd.Tensor,
):
    """Heads read the gated memory next to position (density) or direction
    (color). Outputs are pre-activation; density never sees d_enc."""
    h_delta2 = nd.concat(nd.hadamard(psi, filters.f_delta), l_enc)
    t = nd.relu(_dense(params, "head_delta/0", h_delta2))
    t = nd.relu(_dense(params, "head_delta/1", t))
    delta = _dense(params, "head_delta/2", t)

    h_c2 = nd.concat(nd.hadamard(psi, filters.f_c), d_enc)
    u = nd.relu(_dense(params, "head_color/0", h_c2))
    c = _dense(params, "head_color/1", u)
    return delta, c


def field_forward(params: FieldParams, x_enc: nd.Tensor, d_enc: nd.Tensor, state: MemoryState):
    """Extraction -> gates -> memory update -> contextual heads, in order."""
    h_delta, h_c = extract_positional_features(params, x_enc)
    filters = compute_filters(params, h_delta, h_c)
    psi, new_state = update_memory(params, filters, state)
    delta, c = contextual_inference(params, psi, filters, x_enc, d_enc)
    return delta, c, new_state


def baseline_nerf_forward(params: FieldParams, x_enc: nd.Tensor, d_enc: nd.Tensor):
    """8x256 relu trunk with an input skip into layer 5; density from the
    trunk output, color from [trunk, d_enc] -> color_hidden -> 3."""
    h = x_enc
    for i in range(8):
        inp = nd.concat(h, x_enc) if i == 4 else h
        h = nd.relu(_dense(params, f"trunk/{i}", inp))
    delta = _dense(params, "sigma", h)
    u = nd.relu(_dense(params, "color/0", nd.concat(h, d_enc)))
    c = _dense(params, "color/1", u)
    return delta, c


MEMORY_EVAL_TOL = 1e-5
MEMORY_EVAL_CAP = 100


def make_field_fn(params: FieldParams, pos_scale: float = 1.0, memory_mode: str = CARRIED):
    """Adapt a field to the renderer's (positions, dirs) -> (delta, c) shape.

    Rendering never sees training slots, so each chunk starts from a zero
    memory buffer. For carried-mode models the update is iterated to its
    fixed point (the map contracts; trained checkpoints settle in a few
    steps): training drives the network toward the buffer's stationary
    distribution, and stopping after one step from zero renders measurably
    worse than the model trains. Stateless models, whose training buffer is
    always zero, keep the single update. Rows are independent, so outputs
    do not depend on chunk order or size.
    """
    cfg = params.config

    def run(positions: np.ndarray, dirs: np.ndarray):
        x_enc = nd.Tensor(positional_encode(positions * pos_scale, cfg.l_pos, cfg.include_input))
        d_enc = nd.Tensor(positional_encode(dirs, cfg.l_dir, cfg.include_input))
        if cfg.kind == NERF:
            return baseline_nerf_forward(params, x_enc, d_enc)
        if memory_mode == STATELESS:
            delta, c, _ = field_forward(params, x_enc, d_enc, MemoryState(None, mode=STATELESS))
            return delta, c
        h_delta, h_c = extract_positional_features(params, x_enc)
        filters = compute_filters(params, h_delta, h_c)
        state = MemoryState(None, mode=CARRIED)
        prev = None
        for _ in range(MEMORY_EVAL_CAP):
            psi, state = update_memory(params, filters, state)
            if prev is not None and np.abs(psi.values - prev).max() < MEMORY_EVAL_TOL:
                break
            prev = psi.values
        return contextual_inference(params, psi, filters, x_enc, d_enc)

    return run


# ------------------------------------------------- named-tensor container

MAGIC = b"BNRF"
FORMAT_VERSION = 1


def write_tensors(path, named: dict[str, np.ndarray]) -> None:
    """Write name -> float32 array records; round-trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}")
    named: dict[str, np.ndarray] = {}
    off = 8
    total = len(blob)
    try:
        while off < total:
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            named[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"truncated or corrupt record near byte {off}") from exc
    return named


def params_from_arrays(cfg: FieldConfig, named: dict[str, np.ndarray], prefix: str = "") -> FieldParams:
    tensors: dict[str, nd.Tensor] = {}
    for name, n_in, n_out in _layout(cfg):
        for suffix, shape in (("w", (n_in, n_out)), ("b", (n_out,))):
            key = f"{prefix}{name}/{suffix}"
            if key not in named:
                raise CheckpointFormatError(f"missing tensor {key!r}")
            arr = named[key]
            if arr.shape != shape:
                raise CheckpointFormatError(f"tensor {key!r} has shape {arr.shape}, expected {shape}")
            tensors[f"{name}/{suffix}"] = nd.parameter(arr.copy())
    return FieldParams(cfg, tensors)
