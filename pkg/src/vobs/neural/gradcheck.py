"""Verification of analytic gradients against central finite differences."""

from __future__ import annotations

import csv

import numpy as np

from .network import RecurrentRegressor


def gradient_check(net: RecurrentRegressor, windows: np.ndarray,
                   prev_state, targets, eps: float = 1e-5,
                   corrupt_forget_gate: bool = False):
    """Compare every analytic gradient coordinate with a central difference.

    Relative error uses max(|analytic|, |numeric|, 1e-6) as the denominator,
    so coordinates where both sides are tiny are judged on absolute terms.
    Returns (max_rel_error, rows) where rows are
    (coordinate, analytic, numeric, rel_error).

    `corrupt_forget_gate` deliberately scales the first cell layer's
    recurrent forget-gate gradient block — a self-test that the check can
    actually catch a wrong gradient.
    """
    _, grads = net.loss_and_gradients(windows, prev_state, targets)
    if corrupt_forget_gate and net.kind == "lstm":
        h = net.cells[0].hidden
        grads[1] = grads[1].copy()
        grads[1][h: 2 * h] *= 1.05

    rows = []
    worst = 0.0
    for (name, arr), g in zip(net.params(), grads):
        flat = arr.ravel()
        gflat = np.asarray(g).ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = net.loss(windows, prev_state, targets)
            flat[idx] = orig - eps
            lm = net.loss(windows, prev_state, targets)
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = gflat[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, rel)
            coord = np.unravel_index(idx, arr.shape)
            rows.append((f"{name}{list(coord)}", analytic, numeric, rel))
    return worst, rows


def write_gradcheck_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coordinate", "analytic", "numeric", "rel_error"])
        for coord, analytic, numeric, rel in rows:
            writer.writerow([coord, repr(float(analytic)), repr(float(numeric)),
                             repr(float(rel))])
