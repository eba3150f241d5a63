"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 4 and 5 (and criterion 6's full-budget arm) train at the exact
stated budget — hours of arithmetic on a workstation — and carry the `slow`
marker, deselected by default; run them with `pytest -m slow`. Every other
criterion runs in the default suite. Scaled-down twins of the slow
trainings (same code path, smaller widths/batches) run by default as
smoke coverage.
"""
import math
import time

import numpy as np
import pytest

from bionerf import data, field, metrics, ndtensor as nd, rendering, training

MINIATURE = field.FieldConfig(hidden=8, color_hidden=4, l_pos=2, l_dir=1)


def _report(criterion: int, name: str, detail: str = ""):
    suffix = f" — {detail}" if detail else ""
    print(f"ACCEPTANCE {criterion} ({name}): PASS{suffix}")


# ---------------------------------------------------------------------- 1


def _miniature_loss(params, x_enc, d_enc, psi_prev, t_vals, targets):
    state = field.MemoryState(psi_prev.copy(), mode=field.CARRIED)
    delta, c, _ = field.field_forward(params, nd.Tensor(x_enc), nd.Tensor(d_enc), state)
    out = rendering.composite(
        nd.reshape(delta, (2, 2)),
        nd.reshape(c, (2, 2, 3)),
        t_vals,
        background=(0.5, 0.5, 0.5),
    )
    return training.mse_loss(out.rgb, targets)


class _LeanPipeline:
    """Float64 value-only twin of the miniature pipeline for the FD oracle.

    Mirrors the graph ops call for call (same numpy expressions in the same
    order), skipping the graph machinery; __call__ returns the loss and the
    relu active-set pattern. Bitwise parity with the real graph path is
    asserted per field before use.
    """

    _SIG_LO = np.nextafter(np.float64(0.0), np.float64(1.0))
    _SIG_HI = np.nextafter(np.float64(1.0), np.float64(0.0))

    def __init__(self, arrays, x_enc, d_enc, psi_prev, t_vals, targets, background):
        self.p = arrays  # name -> float64 array, perturbed in place by FD
        self.x = x_enc.astype(np.float64)
        self.d = d_enc.astype(np.float64)
        self.psi_prev = psi_prev.astype(np.float64)
        t = np.asarray(t_vals, dtype=np.float64)
        self.t = t
        last = np.full((t.shape[0], 1), rendering.LAST_INTERVAL_CAP)
        # the graph path stores interval lengths and background as float32
        # constants that promote at use; mirror that exactly for parity
        self.dists = np.concatenate([np.diff(t, axis=1), last], axis=1).astype(np.float32)
        self.targets = targets.astype(np.float64)
        self.bg = np.broadcast_to(np.asarray(background, np.float32), (t.shape[0], 3))

    def _layer(self, name):
        return self.p[f"{name}/w"], self.p[f"{name}/b"]

    def _sigmoid(self, v):
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-v))
        return np.clip(y, self._SIG_LO, self._SIG_HI)

    def _tanh(self, v):
        return np.clip(np.tanh(v), -self._SIG_HI, self._SIG_HI)

    def __call__(self, need_pattern: bool = True):
        # FD perturbs the parameter arrays in place, so direct references
        # captured here stay live across probes
        p = self._layer
        masks: list = []

        def relu_(v):
            masks.append(v > 0)
            return np.maximum(v, 0.0)

        h_d = self.x
        for i in range(3):
            w, b = p(f"m_delta/{i}")
            h_d = relu_(h_d @ w + b)
        h_c = self.x
        for i in range(3):
            w, b = p(f"m_c/{i}")
            h_c = relu_(h_c @ w + b)
        both = np.concatenate([h_d, h_c], axis=1)
        w, b = p("filter_delta"); f_delta = self._sigmoid(h_d @ w + b)
        w, b = p("filter_c"); f_c = self._sigmoid(h_c @ w + b)
        w, b = p("filter_psi"); f_psi = self._sigmoid(both @ w + b)
        w, b = p("filter_mu"); f_mu = self._sigmoid(both @ w + b)
        w, b = p("gamma"); gamma = self._tanh(both @ w + b)
        inner = f_mu * gamma + f_psi * self.psi_prev
        w, b = p("memory"); psi = self._tanh(inner @ w + b)

        hd2 = np.concatenate([psi * f_delta, self.x], axis=1)
        w, b = p("head_delta/0"); u = relu_(hd2 @ w + b)
        w, b = p("head_delta/1"); u = relu_(u @ w + b)
        w, b = p("head_delta/2"); delta = (u @ w + b).reshape(2, 2)
        hc2 = np.concatenate([psi * f_c, self.d], axis=1)
        w, b = p("head_color/0"); v = relu_(hc2 @ w + b)
        w, b = p("head_color/1"); c = (v @ w + b).reshape(2, 2, 3)

        sigma = relu_(delta)
        tau = sigma * self.dists
        inc = np.cumsum(tau, axis=1, dtype=np.float64)
        excl = np.zeros_like(inc)
        excl[:, 1:] = inc[:, :-1]
        transmittance = np.exp(-1.0 * excl + 0.0)
        alpha = -1.0 * np.exp(-1.0 * tau + 0.0) + 1.0
        weights = transmittance * alpha
        acc = weights.sum(axis=1, dtype=np.float64)
        rgb_samples = self._sigmoid(c)
        w3 = np.repeat(weights.reshape(2, 2, 1), 3, axis=-1)
        fg = (w3 * rgb_samples).sum(axis=1, dtype=np.float64)
        leftover = np.repeat((-1.0 * acc + 1.0).reshape(2, 1), 3, axis=-1)
        rgb = fg + leftover * self.bg

        diff = rgb - self.targets
        loss = (1.0 / diff.size) * (diff * diff).sum(dtype=np.float64) + 0.0
        if not need_pattern:
            return float(loss), None
        pattern = b"".join(np.packbits(m.reshape(-1)).tobytes() for m in masks)
        return float(loss), pattern


def _fd_check_lean(lean, arrays, analytic_grads, rel=1e-4, abs_floor=1e-5, step=1e-3):
    """Central differences over every entry via the lean evaluator, with the
    same smaller-step re-measurement and kink exclusion as the generic
    harness. Returns (re-measured, excluded) counts."""

    def probe(flat, idx, width, need_pattern=True):
        orig = flat[idx]
        flat[idx] = orig + width
        hp = flat[idx]
        lp, pat_hi = lean(need_pattern)
        flat[idx] = orig - width
        hm = flat[idx]
        lm, pat_lo = lean(need_pattern)
        flat[idx] = orig
        return (lp - lm) / (hp - hm), pat_hi == pat_lo

    rescreened = excluded = 0
    for name, grad in analytic_grads.items():
        flat = arrays[name].reshape(-1)
        a = np.asarray(grad, dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            fd, _ = probe(flat, idx, step, need_pattern=False)
            if abs(a[idx] - fd) <= max(rel * abs(fd), abs_floor):
                continue
            rescreened += 1
            ok = False
            smooth_seen = False
            for width in (step / 4, step / 16):
                fd_small, smooth = probe(flat, idx, width)
                smooth_seen = smooth_seen or smooth
                if abs(a[idx] - fd_small) <= max(rel * abs(fd_small), abs_floor):
                    ok = True
                    break
            if not ok and not smooth_seen:
                excluded += 1
                continue
            assert ok, (
                f"gradient mismatch at {name}[{idx}]: analytic {a[idx]:.6e} vs fd {fd:.6e} "
                f"(persists at smaller steps with a stable relu active set)"
            )
    return rescreened, excluded


def test_criterion_1_gradient_correctness_50_miniature_fields():
    """Every parameter of the full pipeline (field -> composite -> loss)
    matches central finite differences at 1e-4 rel / 1e-5 abs, 50 fields,
    under 60 s. The oracle runs on a lean float64 twin whose bitwise parity
    with the real graph path is asserted at sampled points per field."""
    start = time.perf_counter()
    rescreened = 0
    excluded = 0
    total_entries = 0
    from bionerf.encoding import positional_encode

    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        positions = rng.uniform(-1, 1, (4, 3)).astype(np.float32)
        dirs = rng.standard_normal((2, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.repeat(dirs, 2, axis=0).astype(np.float32)
        x_enc = positional_encode(positions, MINIATURE.l_pos, MINIATURE.include_input)
        d_enc = positional_encode(dirs, MINIATURE.l_dir, MINIATURE.include_input)
        psi_prev = rng.uniform(-0.5, 0.5, (4, MINIATURE.hidden)).astype(np.float32)
        batch = rendering.RayBatch(
            origins=np.zeros((2, 3), np.float32),
            directions=np.tile([0.0, 0.0, -1.0], (2, 1)).astype(np.float32),
            near=0.1,
            far=1.1,
        )
        t_vals = rendering.stratified_sample(batch, 2, jitter=True, rng=rng).t_vals
        targets = rng.uniform(0, 1, (2, 3)).astype(np.float32)

        params32 = field.init_params(MINIATURE, seed=2000 + trial)
        loss = _miniature_loss(params32, x_enc, d_enc, psi_prev, t_vals, targets)
        loss.backward()

        arrays64 = {k: t.values.astype(np.float64) for k, t in params32.tensors.items()}
        lean = _LeanPipeline(arrays64, x_enc, d_enc, psi_prev, t_vals, targets, (0.5, 0.5, 0.5))

        # parity: the lean twin and the graph twin are the same function
        params64 = field.FieldParams(
            MINIATURE,
            {k: nd.parameter(v, dtype=np.float64) for k, v in arrays64.items()},
        )
        probe_rng = np.random.default_rng(3000 + trial)
        for _ in range(3):
            with nd.no_grad():
                graph_loss = _miniature_loss(
                    params64, x_enc, d_enc, psi_prev, t_vals, targets
                ).item()
            lean_loss, _ = lean()
            assert lean_loss == graph_loss, "lean oracle diverged from the graph path"
            name = probe_rng.choice(list(arrays64))
            flat = arrays64[name].reshape(-1)
            flat[probe_rng.integers(flat.size)] += 1e-3

        # fresh arrays for the actual check (parity probes perturbed them)
        arrays64 = {k: t.values.astype(np.float64) for k, t in params32.tensors.items()}
        lean = _LeanPipeline(arrays64, x_enc, d_enc, psi_prev, t_vals, targets, (0.5, 0.5, 0.5))
        grads = {k: params32[k].grad for k in params32.tensors}
        total_entries += sum(g.size for g in grads.values())
        re_n, ex_n = _fd_check_lean(lean, arrays64, grads)
        rescreened += re_n
        excluded += ex_n
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s (budget 60s)"
    assert excluded <= total_entries * 1e-3, (
        f"{excluded} of {total_entries} entries sat on nondifferentiable points"
    )
    _report(
        1, "gradient correctness",
        f"50 fields ({total_entries} entries) in {elapsed:.1f}s; "
        f"{rescreened} kink re-measurements, {excluded} oracle-invalid points excluded",
    )


# ---------------------------------------------------------------------- 2


def test_criterion_2_rendering_oracle_homogeneous_medium():
    batch = rendering.RayBatch(
        origins=np.zeros((1, 3), np.float32),
        directions=np.array([[0.0, 0.0, -1.0]], np.float32),
        near=0.0,
        far=1.0,
    )
    worst = 0.0
    for sigma in (0.5, 1.0, 2.0):
        errors = []
        for n in (16, 32, 64, 128, 256):
            t = rendering.stratified_sample(batch, n, jitter=False).t_vals
            out = rendering.composite(
                nd.Tensor(np.full((1, n), sigma)),
                nd.Tensor(np.zeros((1, n, 3))),
                t,
                background=(0, 0, 0),
                far_bound=1.0,
            )
            errors.append(abs(out.accumulated_alpha.values[0] - (1 - math.exp(-sigma))))
        assert errors[-1] < 1e-3, f"sigma={sigma}: N=256 error {errors[-1]:.2e}"
        worst = max(worst, errors[-1])
        for a, b in zip(errors, errors[1:]):
            ratio = b / a
            assert 0.4 <= ratio <= 0.6, f"sigma={sigma}: halving ratio {ratio:.3f}"
    _report(2, "rendering oracle", f"worst N=256 error {worst:.2e}, halving within ±20%")


# ---------------------------------------------------------------------- 3


def test_criterion_3_gate_invariants_and_direction_independence():
    cfg = field.FieldConfig()  # full-size field, h=256
    params = field.init_params(cfg, seed=7)
    rng = np.random.default_rng(77)
    with nd.no_grad():
        h_delta = nd.Tensor(rng.uniform(-10, 10, (10_000, cfg.hidden)).astype(np.float32))
        h_c = nd.Tensor(rng.uniform(-10, 10, (10_000, cfg.hidden)).astype(np.float32))
        filters = field.compute_filters(params, h_delta, h_c)
        for gate in (filters.f_delta, filters.f_c, filters.f_psi, filters.f_mu):
            assert (gate.values > 0).all() and (gate.values < 1).all()
        assert (np.abs(filters.gamma_pre.values) < 1).all()
        psi, _ = field.update_memory(
            params, filters, field.MemoryState(None, mode=field.STATELESS)
        )
        assert (np.abs(psi.values) < 1).all()

        x = rng.uniform(-1, 1, (64, cfg.pos_width)).astype(np.float32)
        d1 = rng.uniform(-1, 1, (64, cfg.dir_width)).astype(np.float32)
        d2 = rng.uniform(-1, 1, (64, cfg.dir_width)).astype(np.float32)
        state = field.MemoryState(None, mode=field.STATELESS)
        delta1, _, _ = field.field_forward(params, nd.Tensor(x), nd.Tensor(d1), state)
        delta2, _, _ = field.field_forward(params, nd.Tensor(x), nd.Tensor(d2), state)
        assert delta1.values.tobytes() == delta2.values.tobytes()
    _report(3, "gate invariants", "1e4 rows by 256 gates in range; density bit-identical across directions")


# ------------------------------------------------------------------- 4, 5

CRITERION4_SPEC = data.ToySceneSpec(width=64, height=64, n_train=20)
CRITERION4_FIELD = field.FieldConfig()  # h=256, the full architecture
CRITERION4_RENDER = rendering.RenderConfig(
    n_coarse=32, n_fine=64, chunk_rays=1024, background=CRITERION4_SPEC.background
)


def _criterion4_train_cfg(seed=0, kind=field.BIONERF, memory=field.CARRIED):
    return training.TrainConfig(
        iterations=5000,
        batch_rays=1024,
        seed=seed,
        field_kind=kind,
        memory_mode=memory,
    )


def _train_and_score(train_cfg, dataset, eval_train=False):
    result = training.train(train_cfg, CRITERION4_FIELD, CRITERION4_RENDER, dataset)
    coarse_fn = field.make_field_fn(result.coarse, dataset.pos_scale, train_cfg.memory_mode)
    fine_fn = field.make_field_fn(result.fine, dataset.pos_scale, train_cfg.memory_mode)
    test_rep = metrics.evaluate_scene(
        coarse_fn, fine_fn, dataset, "test", CRITERION4_RENDER, scene_name="sphere"
    )
    train_rep = None
    if eval_train:
        train_rep = metrics.evaluate_scene(
            coarse_fn, fine_fn, dataset, "train", CRITERION4_RENDER,
            scene_name="sphere", max_views=10,
        )
    return result, train_rep, test_rep


@pytest.mark.slow
def test_criterion_4_toy_scene_overfit_full_budget():
    """Exact stated budget: 20 views at 64x64, N_c=32/N_f=64, z=1024, 5000
    iterations, h=256. Train PSNR >= 25 dB, held-out >= 22 dB. The 30-minute
    figure presumes the reference 8-core desktop; wall time is reported."""
    dataset = data.generate_toy_scene(CRITERION4_SPEC)
    t0 = time.perf_counter()
    _, train_rep, test_rep = _train_and_score(
        _criterion4_train_cfg(seed=0), dataset, eval_train=True
    )
    minutes = (time.perf_counter() - t0) / 60
    assert train_rep.mean_psnr >= 25.0, f"train PSNR {train_rep.mean_psnr:.2f} < 25"
    assert test_rep.mean_psnr >= 22.0, f"held-out PSNR {test_rep.mean_psnr:.2f} < 22"
    _report(
        4, "toy-scene overfit",
        f"train {train_rep.mean_psnr:.2f} dB, held-out {test_rep.mean_psnr:.2f} dB, "
        f"{minutes:.0f} min on this host",
    )


@pytest.mark.slow
def test_criterion_5_ablation_non_inferiority_three_seeds():
    """Same budget, both field kinds, three seeds: gated PSNR within 0.5 dB
    of the baseline or better, with a comparison table emitted."""
    dataset = data.generate_toy_scene(CRITERION4_SPEC)
    reports = {}
    for seed in (0, 1, 2):
        for kind in (field.BIONERF, field.NERF):
            _, _, rep = _train_and_score(_criterion4_train_cfg(seed=seed, kind=kind), dataset)
            reports[f"{kind}/seed{seed}"] = rep
    table = metrics.comparison_table(reports)
    print(table)
    for seed in (0, 1, 2):
        gated = reports[f"{field.BIONERF}/seed{seed}"].mean_psnr
        plain = reports[f"{field.NERF}/seed{seed}"].mean_psnr
        assert gated >= plain - 0.5, f"seed {seed}: {gated:.2f} vs baseline {plain:.2f}"
    _report(5, "ablation non-inferiority", "3 seeds, comparison table emitted")


SMOKE_SPEC = data.ToySceneSpec(width=16, height=16, n_train=6, n_val=2, n_test=3)
SMOKE_FIELD = field.FieldConfig(hidden=24, color_hidden=12, l_pos=4, l_dir=2)
SMOKE_RENDER = rendering.RenderConfig(n_coarse=8, n_fine=16, chunk_rays=128, background=(0, 0, 0))


def _smoke_train_cfg(seed=0, kind=field.BIONERF, memory=field.CARRIED, iterations=150):
    return training.TrainConfig(
        iterations=iterations, batch_rays=128, seed=seed, field_kind=kind, memory_mode=memory
    )


def test_criterion_4_smoke_scaled_down_twin():
    """Default-suite twin of criterion 4: same code path at reduced scale;
    asserts healthy learning, not the full-budget thresholds."""
    dataset = data.generate_toy_scene(SMOKE_SPEC)
    result = training.train(_smoke_train_cfg(iterations=400), SMOKE_FIELD, SMOKE_RENDER, dataset)
    losses = [r.loss for r in result.records]
    assert all(math.isfinite(v) for v in losses)
    first = np.mean(losses[:10])
    last = np.mean(losses[-10:])
    assert last < 0.6 * first, f"loss {first:.4f} -> {last:.4f}"
    _report(4, "smoke twin (reduced scale)", f"loss {first:.3f} -> {last:.3f} over 400 iters")


def test_criterion_5_smoke_comparison_table_both_kinds():
    dataset = data.generate_toy_scene(SMOKE_SPEC)
    reports = {}
    for kind in (field.BIONERF, field.NERF):
        cfg = _smoke_train_cfg(kind=kind, iterations=60)
        result = training.train(cfg, SMOKE_FIELD, SMOKE_RENDER, dataset)
        coarse_fn = field.make_field_fn(result.coarse, dataset.pos_scale, cfg.memory_mode)
        fine_fn = field.make_field_fn(result.fine, dataset.pos_scale, cfg.memory_mode)
        reports[kind] = metrics.evaluate_scene(
            coarse_fn, fine_fn, dataset, "test", SMOKE_RENDER, scene_name="sphere", max_views=2
        )
    table = metrics.comparison_table(reports)
    assert field.BIONERF in table and field.NERF in table
    assert "Avg." in table
    _report(5, "smoke comparison table", "emitted for both field kinds")


# ---------------------------------------------------------------------- 6


def test_criterion_6_memory_mode_ablation():
    """Stateless buffers are all-zero at every forward start; carried
    memory converges under frozen parameters; both modes train clean at
    reduced scale (full-budget arm under -m slow)."""
    dataset = data.generate_toy_scene(SMOKE_SPEC)
    for memory in (field.CARRIED, field.STATELESS):
        result = training.train(
            _smoke_train_cfg(memory=memory, iterations=40), SMOKE_FIELD, SMOKE_RENDER, dataset
        )
        assert all(math.isfinite(r.loss) for r in result.records)

    # stateless: psi entering every forward pass is exactly zero
    state = field.MemoryState(None, mode=field.STATELESS)
    params = field.init_params(SMOKE_FIELD, seed=3)
    rng = np.random.default_rng(4)
    for _ in range(5):
        start = state.start_psi(8, SMOKE_FIELD.hidden)
        assert not start.any()
        x = rng.uniform(-1, 1, (8, SMOKE_FIELD.pos_width)).astype(np.float32)
        d = rng.uniform(-1, 1, (8, SMOKE_FIELD.dir_width)).astype(np.float32)
        _, _, state = field.field_forward(params, nd.Tensor(x), nd.Tensor(d), state)
        assert state.psi is None  # nothing is retained between passes

    # carried: frozen params + repeated batch -> psi converges within 100
    cfg = field.FieldConfig()
    params = field.init_params(cfg, seed=11)
    x = np.random.default_rng(8).uniform(-1, 1, (16, cfg.pos_width)).astype(np.float32)
    carried = field.MemoryState(None, mode=field.CARRIED)
    with nd.no_grad():
        h_delta, h_c = field.extract_positional_features(params, nd.Tensor(x))
        filters = field.compute_filters(params, h_delta, h_c)
        prev = None
        converged_at = None
        for repeat in range(100):
            psi, carried = field.update_memory(params, filters, carried)
            if prev is not None and np.abs(psi.values - prev).max() < 1e-5:
                converged_at = repeat
                break
            prev = psi.values
    assert converged_at is not None, "carried memory did not converge in 100 repeats"
    _report(6, "memory-mode ablation", f"carried converged at repeat {converged_at}; stateless zero-start verified")


@pytest.mark.slow
def test_criterion_6_full_budget_trains_without_nan_both_modes():
    dataset = data.generate_toy_scene(CRITERION4_SPEC)
    for memory in (field.CARRIED, field.STATELESS):
        cfg = _criterion4_train_cfg(seed=0, memory=memory)
        result = training.train(cfg, CRITERION4_FIELD, CRITERION4_RENDER, dataset)
        assert all(math.isfinite(r.loss) for r in result.records)
    _report(6, "memory-mode full budget", "both modes trained 5000 iterations without NaN")


# ---------------------------------------------------------------------- 7


def test_criterion_7_metric_correctness():
    a = np.zeros((16, 16, 3))
    b = np.full((16, 16, 3), 0.1)
    assert metrics.psnr(a, b) == pytest.approx(20.0, abs=1e-6)

    img = np.random.default_rng(5).uniform(0, 1, (20, 20, 3))
    assert metrics.ssim(img, img) == 1.0

    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(0, 1, (16, 16, 3))
        y = rng.uniform(0, 1, (16, 16, 3))
        gap = abs(metrics.ssim(x, y) - metrics.ssim(y, x))
        worst = max(worst, gap)
    assert worst <= 1e-7
    _report(7, "metric correctness", f"psnr 20 dB exact, ssim identity 1.0, symmetry gap {worst:.1e}")


# ---------------------------------------------------------------------- 8


def test_criterion_8_persistence_round_trip_and_resume(tmp_path):
    dataset = data.generate_toy_scene(SMOKE_SPEC)
    cfg = _smoke_train_cfg(iterations=6)
    cfg = training.TrainConfig(**{**cfg.__dict__, "checkpoint_interval": 3})

    full = training.train(cfg, SMOKE_FIELD, SMOKE_RENDER, dataset, out_dir=tmp_path / "full")
    ckpt = tmp_path / "full" / "checkpoints" / "ckpt_0000003.bnrf"

    # bit-exact container round trip
    named = field.read_tensors(ckpt)
    rewrite = tmp_path / "rewrite.bnrf"
    field.write_tensors(rewrite, named)
    assert rewrite.read_bytes() == ckpt.read_bytes()

    # interrupted + resumed == uninterrupted, bit for bit
    resumed = training.train(
        cfg, SMOKE_FIELD, SMOKE_RENDER, dataset, out_dir=tmp_path / "resumed", resume=ckpt
    )
    for k in full.coarse.tensors:
        assert np.array_equal(full.coarse[k].values, resumed.coarse[k].values), k
    for k in full.fine.tensors:
        assert np.array_equal(full.fine[k].values, resumed.fine[k].values), k
    final_a = (tmp_path / "full" / "checkpoints" / "ckpt_0000006.bnrf").read_bytes()
    final_b = (tmp_path / "resumed" / "checkpoints" / "ckpt_0000006.bnrf").read_bytes()
    assert final_a == final_b
    _report(8, "persistence", "container round-trip and interrupt/resume bit-exact")
