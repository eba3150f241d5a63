"""Shared oracles for the test suite.

The central-difference gradient oracle is deliberately dumb: perturb one
entry, re-run the forward values, divide. It never touches the backward
rules it is checking. The actual realized step is measured after float32
quantization so the denominator carries no rounding error of its own.
"""
from __future__ import annotations

import numpy as np

from bionerf import ndtensor


def finite_difference_grads(loss_fn, params, step=1e-3):
    """Central finite differences of scalar loss_fn() w.r.t. each tensor.

    loss_fn re-runs the forward pass against the tensors' current values.
    Returns one float64 array per parameter tensor.
    """
    grads = []
    with ndtensor.no_grad():
        for p in params:
            flat = p.values.reshape(-1)
            g = np.zeros(flat.size, dtype=np.float64)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hp = float(flat[i])
                lp = loss_fn().item()
                flat[i] = orig - step
                hm = float(flat[i])
                lm = loss_fn().item()
                flat[i] = orig
                g[i] = (lp - lm) / (hp - hm)
            grads.append(g.reshape(p.shape))
    return grads


def gradcheck(build, param_arrays, rel=1e-4, abs_floor=1e-5, step=1e-3):
    """Check float32 backward against finite differences on a float64 twin.

    `build` maps a dict of named leaf tensors to a scalar loss tensor and is
    called afresh for every evaluation. The float64 twin starts from the
    exact float32-quantized parameter values, so both graphs are evaluated
    at the same point; the oracle sees none of float32's store quantization.
    """
    p32 = {k: ndtensor.parameter(np.asarray(v, dtype=np.float32)) for k, v in param_arrays.items()}
    build(p32).backward()
    p64 = {
        k: ndtensor.parameter(t.values.astype(np.float64), dtype=np.float64)
        for k, t in p32.items()
    }
    fd = finite_difference_grads(lambda: build(p64), list(p64.values()), step=step)
    for (k, t), f in zip(p32.items(), fd):
        assert t.grad is not None, f"no gradient reached parameter {k}"
        assert_grads_match(t.grad, f, rel=rel, abs_floor=abs_floor)


def assert_grads_match(analytic, fd, rel=1e-4, abs_floor=1e-5):
    """|analytic - fd| <= max(rel*|fd|, abs_floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    tol = np.maximum(rel * np.abs(fd), abs_floor)
    err = np.abs(analytic - fd)
    worst = float((err - tol).max())
    assert (err <= tol).all(), (
        f"gradient mismatch: worst excess {worst:.3e}, "
        f"max err {err.max():.3e} at tol {tol[np.unravel_index(err.argmax(), err.shape)]:.3e}"
    )


def _fd_single_entry(loss_fn, tensor, index, step):
    """One central difference plus the relu active-set pattern at each probe."""
    flat = tensor.values.reshape(-1)
    orig = flat[index]
    with ndtensor.no_grad():
        flat[index] = orig + step
        hp = float(flat[index])
        with ndtensor.record_kink_pattern([]) as pat_hi:
            lp = loss_fn().item()
        flat[index] = orig - step
        hm = float(flat[index])
        with ndtensor.record_kink_pattern([]) as pat_lo:
            lm = loss_fn().item()
        flat[index] = orig
    return (lp - lm) / (hp - hm), pat_hi == pat_lo


def verify_param_grads(loss_fn, params_fd, analytic_grads, rel=1e-4, abs_floor=1e-5, step=1e-3):
    """Entry-wise FD check with kink screening.

    Entries that miss tolerance are re-measured at step/4 and step/16. If a
    re-measurement whose probe points share the same relu active set still
    misses, that is a genuine backward bug and the check fails. If every
    re-measurement straddles a kink (active sets differ), the entry sits at
    a nondifferentiable point where a difference quotient measures a slope
    mixture, not the one-sided derivative backward reports; the entry is
    excluded as oracle-invalid. Returns (re-measured, excluded) counts.
    """
    rescreened = 0
    excluded = 0
    fd_all = finite_difference_grads(loss_fn, params_fd, step=step)
    for p, analytic, fd in zip(params_fd, analytic_grads, fd_all):
        a = np.asarray(analytic, dtype=np.float64).reshape(-1)
        f = fd.reshape(-1)
        err = np.abs(a - f)
        tol = np.maximum(rel * np.abs(f), abs_floor)
        for idx in np.nonzero(err > tol)[0]:
            rescreened += 1
            ok = False
            smooth_seen = False
            for smaller in (step / 4, step / 16):
                f_i, smooth = _fd_single_entry(loss_fn, p, idx, smaller)
                smooth_seen = smooth_seen or smooth
                if abs(a[idx] - f_i) <= max(rel * abs(f_i), abs_floor):
                    ok = True
                    break
            if not ok and not smooth_seen:
                excluded += 1  # nondifferentiable point: oracle invalid here
                continue
            assert ok, (
                f"gradient mismatch at entry {idx} of shape {p.shape}: "
                f"analytic {a[idx]:.6e} vs fd {f[idx]:.6e} "
                f"(persists at smaller steps with a stable relu active set)"
            )
    return rescreened, excluded
