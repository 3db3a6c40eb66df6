"""Self-contained end-to-end gradient verification.

Builds a tiny head over random embeddings, computes analytic gradients on
the float32 graph and compares every parameter against central finite
differences evaluated on a float64 shadow of the same graph.
"""

from __future__ import annotations

import numpy as np

from . import model as md
from . import tensor as tz
from .store import Batch
from .tensor import RngState, Tensor

TINY_CONFIG = md.HeadConfig(dim=8, heads=2, ff_dim=8, dropout=0.0, in_states=2, in_dim=4)
TOLERANCE = 1e-3
_FD_STEP = 1e-3


def _tiny_batch(seed):
    rng = np.random.default_rng(seed)
    cfg = TINY_CONFIG
    b, lmax = 2, 4
    u_lens, v_lens = (4, 3), (3, 4)
    u_raw = np.zeros((b, cfg.in_states, lmax, cfg.in_dim), dtype=np.float32)
    v_raw = np.zeros((b, cfg.in_states, lmax, cfg.in_dim), dtype=np.float32)
    u_mask = np.zeros((b, lmax), dtype=np.float32)
    v_mask = np.zeros((b, lmax), dtype=np.float32)
    for i in range(b):
        u_raw[i, :, : u_lens[i], :] = rng.normal(size=(cfg.in_states, u_lens[i], cfg.in_dim))
        v_raw[i, :, : v_lens[i], :] = rng.normal(size=(cfg.in_states, v_lens[i], cfg.in_dim))
        u_mask[i, : u_lens[i]] = 1.0
        v_mask[i, : v_lens[i]] = 1.0
    labels = rng.integers(0, 3, size=b)
    return Batch(u_raw, v_raw, u_mask, v_mask, labels.astype(np.int64))


def _loss_from_arrays(arrays, batch, dtype):
    attrs = list(md.HeadParams._NAMES)
    params = md.HeadParams(
        **{a: Tensor(arr, requires_grad=True, dtype=dtype) for a, arr in zip(attrs, arrays)}
    )
    logits, _ = md.forward(batch, params, TINY_CONFIG)
    return tz.cross_entropy(logits, batch.labels), params


def run_trial(seed, corrupt=False):
    """One gradcheck trial; returns the max relative error across parameters.

    Central differences at h=1e-3; a coordinate that disagrees is re-probed
    at h=1e-5 before counting, because the graph is only piecewise smooth
    (max pooling, |.|, ReLU) and a kink inside the wide probe window
    invalidates the difference quotient there. A genuine backward bug
    disagrees at every step size.
    """
    batch = _tiny_batch(seed)
    init = md.init_head_params(TINY_CONFIG, RngState(seed))
    arrays = [t.data.copy() for t in init.tensors()]

    loss, params = _loss_from_arrays(arrays, batch, np.float32)
    tz.backward(loss)
    analytic = [t.grad.astype(np.float64) for t in params.tensors()]
    if corrupt:
        analytic[0] = analytic[0] + 0.05  # negative-control hook

    worst = 0.0
    for pi, base in enumerate(arrays):
        shadow = [a.astype(np.float64) for a in arrays]
        flat = shadow[pi].reshape(-1)
        a = analytic[pi].reshape(-1)

        def central(j, h):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(_loss_from_arrays(shadow, batch, np.float64)[0].data)
            flat[j] = orig - h
            fm = float(_loss_from_arrays(shadow, batch, np.float64)[0].data)
            flat[j] = orig
            return (fp - fm) / (2.0 * h)

        for j in range(flat.size):
            fd = central(j, _FD_STEP)
            err = abs(a[j] - fd) / max(abs(a[j]), abs(fd), 1e-4)
            if err > TOLERANCE:
                fd = central(j, _FD_STEP * 1e-2)
                err = abs(a[j] - fd) / max(abs(a[j]), abs(fd), 1e-4)
            worst = max(worst, err)
    return worst


def run_gradcheck(seed=0, trials=1, corrupt=False):
    """Returns (per-trial errors, overall pass flag)."""
    errors = [run_trial(seed + k, corrupt=corrupt) for k in range(trials)]
    return errors, all(e <= TOLERANCE for e in errors)
