"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import math

import numpy as np

from nesr.core.tensor import Tensor, backward, branch_log, recording


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                 entries: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. the flat ``entries`` of ``x``.

    ``x.data`` is perturbed in place and restored. Returns values for the
    selected entries only (all entries when ``entries`` is None).
    """
    flat = x.data.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        out[n] = _probe(fn, flat, i, h)[0]
    return out


def _terms(out: Tensor) -> np.ndarray:
    return np.asarray(out.data, dtype=np.float64).reshape(-1)


def _probe(fn, flat: np.ndarray, i: int, h: float):
    """(central difference, branch signatures at +h and -h) for entry ``i``.

    When ``fn`` returns several additive terms, they are differenced one by
    one and then summed exactly; this keeps rounding of a large total from
    swamping a small difference.
    """
    orig = flat[i]
    try:
        flat[i] = orig + h
        with branch_log() as plus:
            fp = _terms(fn())
        flat[i] = orig - h
        with branch_log() as minus:
            fm = _terms(fn())
    finally:
        flat[i] = orig
    return math.fsum(fp - fm) / (2 * h), plus, minus


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: float = 0.0) -> float:
    """max|analytic - numeric| / max(|numeric|, |analytic|, scale) (infinity-norm relative error)."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return float("nan")
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), scale, 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


@dataclass
class GradCheck:
    error: float
    checked: int
    skipped: int  # probes whose stencil crossed a ReLU / |x| kink


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    max_entries: Optional[int] = None, seed: int = 0,
                    avoid_kinks: bool = True, details: Optional[list] = None) -> list[float]:
    """Relative error of tape gradients vs central differences, one per input.

    ``fn`` must build its output from ``inputs``; a non-scalar output is
    read as the additive terms of the objective ``fn().sum()``. it is called once
    under a tape and repeatedly without one. With ``max_entries`` only a
    seeded random subset of each input's entries is differenced; the error
    is then still scaled by the largest analytic gradient of the whole
    input, as it would be if every entry were checked.

    A central difference only approximates the derivative when the function
    is smooth on [x - h, x + h]. With ``avoid_kinks`` every piecewise-linear
    op reports its branch pattern; a probe that changes any pattern is
    discarded and another entry is drawn instead. ``details`` receives one
    :class:`GradCheck` per input.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with recording() as tape:
        with branch_log() as base:
            out = fn()
        root = out if out.size == 1 else out.sum()
    backward(root, tape)
    errors = []
    for t in inputs:
        n = t.size
        want = n if max_entries is None else min(max_entries, n)
        order = rng.permutation(n) if max_entries is not None and n > max_entries else np.arange(n)
        flat = t.data.reshape(-1)
        taken, nums, skipped = [], [], 0
        for i in order:
            if len(taken) == want:
                break
            value, plus, minus = _probe(fn, flat, int(i), h)
            if avoid_kinks and (plus != base or minus != base):
                skipped += 1
                continue
            taken.append(int(i))
            nums.append(value)
        ana = t.grad.reshape(-1)[np.asarray(taken, dtype=np.intp)]
        err = relative_error(ana, np.asarray(nums), float(np.max(np.abs(t.grad))))
        errors.append(err)
        if details is not None:
            details.append(GradCheck(err, len(taken), skipped))
    return errors
