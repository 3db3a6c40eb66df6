"""Independent reference implementations used to check the package.

Everything here is deliberately written against plain numpy, without
importing the graph machinery it verifies: a central finite-difference
gradient oracle evaluated on a float64 shadow of the forward function, and
a from-scratch replay of the head computation (projection, alignment,
local combination, self-attention, fusion) driven only by raw parameter
arrays.
"""

import numpy as np


def finite_difference(f, arrays, h=1e-3):
    """Central-difference gradients of scalar f w.r.t. a list of float64 arrays.

    f receives the list and must return a python float. Arrays are perturbed
    elementwise; callers pass float64 copies of the parameters under test.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-4):
    """max |a - n| / max(|a|, |n|, floor) over paired gradient arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------------------
# plain-numpy building blocks


def ref_softmax_masked(scores, key_mask):
    """Row softmax over keys where key_mask==1; fully masked rows -> zeros."""
    scores = np.asarray(scores, dtype=np.float64)
    key_mask = np.asarray(key_mask, dtype=np.float64)
    while key_mask.ndim < scores.ndim:
        key_mask = key_mask[..., None, :]
    shifted = np.where(key_mask > 0, scores, -np.inf)
    mx = shifted.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(shifted - mx)
    e = np.where(key_mask > 0, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def ref_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def ref_head_forward(u_raw, v_raw, u_mask, v_mask, params, heads):
    """Replay the whole head on one batch, eval mode, plain numpy.

    u_raw/v_raw: [B, H, L, D_in]; masks: [B, L]. ``params`` is a dict of raw
    arrays using the checkpoint tensor names. Returns logits [B, 3].
    """
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    u_raw = np.asarray(u_raw, dtype=np.float64)
    v_raw = np.asarray(v_raw, dtype=np.float64)
    um = np.asarray(u_mask, dtype=np.float64)
    vm = np.asarray(v_mask, dtype=np.float64)
    B, H, Lu, Din = u_raw.shape
    Lv = v_raw.shape[2]
    dim = p["proj.w"].shape[1]

    def project(raw, m):
        stacked = raw.transpose(0, 2, 1, 3).reshape(B, raw.shape[2], H * Din)
        seq = stacked @ p["proj.w"] + p["proj.b"]
        return seq * m[..., None]

    u = project(u_raw, um)
    v = project(v_raw, vm)
    u_cls = u[:, 0, :]
    v_cls = v[:, 0, :]

    s_uv = u @ v.transpose(0, 2, 1) / np.sqrt(dim)
    s_vu = v @ u.transpose(0, 2, 1) / np.sqrt(dim)
    u_star = ref_softmax_masked(s_uv, vm) @ v * um[..., None]
    v_star = ref_softmax_masked(s_vu, um) @ u * vm[..., None]

    def combine(a, a_star, m):
        feats = np.concatenate([np.abs(a - a_star), a * a_star], axis=-1)
        return (feats @ p["local.w"] + p["local.b"]) * m[..., None]

    cu = combine(u, u_star, um)
    cv = combine(v, v_star, vm)

    def attend(seq, m):
        L = seq.shape[1]
        dk = dim // heads
        q = (seq @ p["attn.wq"] + p["attn.bq"]).reshape(B, L, heads, dk).transpose(0, 2, 1, 3)
        k = (seq @ p["attn.wk"] + p["attn.bk"]).reshape(B, L, heads, dk).transpose(0, 2, 1, 3)
        w = (seq @ p["attn.wv"] + p["attn.bv"]).reshape(B, L, heads, dk).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dk)
        attn = ref_softmax_masked(scores, m[:, None, :])
        ctx = (attn @ w).transpose(0, 2, 1, 3).reshape(B, L, dim)
        out = ctx @ p["attn.wo"] + p["attn.bo"]
        y = ref_layer_norm(seq + out, p["ln.gain"], p["ln.bias"])
        return y * m[..., None]

    hu = attend(cu, um)
    hv = attend(cv, vm)

    def pool(seq, m):
        filled = np.where(m[..., None] > 0, seq, -np.inf)
        return filled.max(axis=1)

    x = np.concatenate([pool(hu, um), u_cls], axis=-1)
    y = np.concatenate([pool(hv, vm), v_cls], axis=-1)
    feats = np.concatenate([np.abs(x - y), x * y], axis=-1)
    hidden = np.maximum(feats @ p["ff.w"] + p["ff.b"], 0.0)
    return hidden @ p["out.w"] + p["out.b"]


def ref_cross_entropy(logits, gold):
    logits = np.asarray(logits, dtype=np.float64)
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    logits2 = logits.reshape(gold.size, -1)
    mx = logits2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits2 - mx).sum(axis=1)) + mx[:, 0]
    return float(np.mean(lse - logits2[np.arange(gold.size), gold]))
