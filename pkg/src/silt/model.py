"""The siamese pair-classification head and its frozen-encoder baseline.

One shared parameter set processes both sentences: stacked hidden states
are linearly projected to the inner width, the two projected sequences
soft-align against each other through scaled dot-product attention, the
original and aligned sequences are combined (absolute difference and
elementwise product), interpreted by a multi-head self-attention block,
max-pooled, fused with the projected cls vectors, and classified into the
three entailment classes.

Checkpoint format (``params.bin``): for each tensor,
[u16 LE name_len][name UTF-8][u8 rank][u32 LE dims...][f32 LE data],
with the config stored alongside as ``head.json``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tz
from .errors import ConfigError, ShapeError, StoreFormatError
from .store import Batch
from .tensor import RngState, Tensor

N_CLASSES = 3


@dataclass
class HeadConfig:
    """Architecture of the head; in_states/in_dim describe the frozen encoder."""

    dim: int = 768
    heads: int = 8
    ff_dim: int = 768
    dropout: float = 0.1
    in_states: int = 13
    in_dim: int = 768

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("dim", "heads", "ff_dim", "in_states", "in_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        try:
            return cls(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigError(f"bad head config: {e}") from e


@dataclass
class HeadParams:
    """Every trainable tensor; the single set serves both branches."""

    proj_w: Tensor
    proj_b: Tensor
    local_w: Tensor
    local_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln_gain: Tensor
    ln_bias: Tensor
    ff_w: Tensor
    ff_b: Tensor
    out_w: Tensor
    out_b: Tensor

    _NAMES = {
        "proj_w": "proj.w",
        "proj_b": "proj.b",
        "local_w": "local.w",
        "local_b": "local.b",
        "wq": "attn.wq",
        "bq": "attn.bq",
        "wk": "attn.wk",
        "bk": "attn.bk",
        "wv": "attn.wv",
        "bv": "attn.bv",
        "wo": "attn.wo",
        "bo": "attn.bo",
        "ln_gain": "ln.gain",
        "ln_bias": "ln.bias",
        "ff_w": "ff.w",
        "ff_b": "ff.b",
        "out_w": "out.w",
        "out_b": "out.b",
    }

    def named(self):
        return [(public, getattr(self, attr)) for attr, public in self._NAMES.items()]

    def tensors(self):
        return [t for _, t in self.named()]

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def copy_data(self):
        """Snapshot of raw arrays keyed by public tensor name."""
        return {name: t.data.copy() for name, t in self.named()}


@dataclass
class ForwardTrace:
    """Intermediate results of one forward pass, eval or training."""

    u: Tensor
    v: Tensor
    s_uv: Tensor
    s_vu: Tensor
    u_star: Tensor
    v_star: Tensor
    u_max: Tensor
    v_max: Tensor
    u_cls: Tensor
    v_cls: Tensor
    x: Tensor
    y: Tensor
    logits: Tensor


def _xavier(rng: RngState, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(
        (rng.uniform(shape) * 2.0 - 1.0) * limit, requires_grad=True, dtype=np.float32
    )


def _zeros(*shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def init_head_params(cfg: HeadConfig, rng: RngState) -> HeadParams:
    d, ff = cfg.dim, cfg.ff_dim
    stacked = cfg.in_states * cfg.in_dim
    return HeadParams(
        proj_w=_xavier(rng, stacked, d),
        proj_b=_zeros(d),
        local_w=_xavier(rng, 2 * d, d),
        local_b=_zeros(d),
        wq=_xavier(rng, d, d),
        bq=_zeros(d),
        wk=_xavier(rng, d, d),
        bk=_zeros(d),
        wv=_xavier(rng, d, d),
        bv=_zeros(d),
        wo=_xavier(rng, d, d),
        bo=_zeros(d),
        ln_gain=Tensor(np.ones(d, dtype=np.float32), requires_grad=True),
        ln_bias=_zeros(d),
        ff_w=_xavier(rng, 4 * d, ff),
        ff_b=_zeros(ff),
        out_w=_xavier(rng, ff, N_CLASSES),
        out_b=_zeros(N_CLASSES),
    )


def count_trainable(params: HeadParams) -> int:
    return sum(t.size for t in params.tensors())


def parameter_breakdown(params: HeadParams):
    return [(name, t.size) for name, t in params.named()]


# ---------------------------------------------------------------------------
# forward pieces


def _mask_tensor(mask, dtype):
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return Tensor(m.astype(dtype, copy=False))


def _apply_mask(seq: Tensor, mask) -> Tensor:
    """Force padded positions of seq[..., L, D] to exact zero."""
    m = _mask_tensor(mask, seq.dtype)
    return tz.mul(seq, tz.reshape(m, m.shape + (1,)))


def project(batch: Batch, params: HeadParams, cfg: HeadConfig, rng=None, training=False):
    """Concatenate the hidden states per position and map them through the
    shared linear projection; returns (u, v, u_cls, v_cls).

    Dropout is applied to the projection output, so both the alignment path
    and the cls extraction see the same regularized sequences.
    """
    b, h, _, d_in = batch.u_raw.shape
    if h != cfg.in_states or d_in != cfg.in_dim:
        raise ConfigError(
            f"batch provides H={h}, D_in={d_in}; config expects "
            f"H={cfg.in_states}, D_in={cfg.in_dim}"
        )
    dtype = params.proj_w.dtype

    def one_side(raw, mask):
        stacked = raw.transpose(0, 2, 1, 3).reshape(b, raw.shape[2], h * d_in)
        seq = tz.linear(Tensor(stacked, dtype=dtype), params.proj_w, params.proj_b)
        seq = _apply_mask(seq, mask)
        if training and rng is not None:
            seq = tz.dropout(seq, cfg.dropout, rng, training)
        return seq

    u = one_side(batch.u_raw, batch.u_mask)
    v = one_side(batch.v_raw, batch.v_mask)
    return u, v, tz.take_index(u, 0, axis=1), tz.take_index(v, 0, axis=1)


def align(u: Tensor, v: Tensor, u_mask, v_mask):
    """Soft-align each sequence against the other.

    Similarities are scaled dot products over the shared width; each aligned
    row is the softmax-weighted mixture of the other sentence's unmasked
    positions, and rows at padded query positions are zeroed.
    """
    if u.shape[-1] != v.shape[-1]:
        raise ShapeError(f"align: widths differ, {u.shape} vs {v.shape}")
    d = u.shape[-1]
    inv_sqrt_d = 1.0 / math.sqrt(d)
    s_uv = tz.scale(tz.matmul(u, tz.transpose(v, (0, 2, 1))), inv_sqrt_d)
    s_vu = tz.scale(tz.matmul(v, tz.transpose(u, (0, 2, 1))), inv_sqrt_d)
    u_star = _apply_mask(tz.matmul(tz.masked_softmax(s_uv, v_mask), v), u_mask)
    v_star = _apply_mask(tz.matmul(tz.masked_softmax(s_vu, u_mask), u), v_mask)
    return u_star, v_star, s_uv, s_vu


def combine_local(a: Tensor, a_star: Tensor, params: HeadParams, mask) -> Tensor:
    """Absolute difference and elementwise product of a sequence with its
    aligned counterpart, projected back to the inner width."""
    if a.shape != a_star.shape:
        raise ShapeError(f"combine_local: {a.shape} vs {a_star.shape}")
    feats = tz.concat([tz.abs_(tz.sub(a, a_star)), tz.mul(a, a_star)], axis=-1)
    return _apply_mask(tz.linear(feats, params.local_w, params.local_b), mask)


def mhsa_block(seq: Tensor, mask, params: HeadParams, cfg: HeadConfig, rng=None, training=False):
    """Multi-head self-attention with key masking, residual connection and
    layer normalization; padded positions are re-zeroed afterwards."""
    b, l, d = seq.shape
    if d != cfg.dim:
        raise ConfigError(f"sequence width {d} != configured dim {cfg.dim}")
    heads = cfg.heads
    dk = d // heads

    def split_heads(x):
        return tz.transpose(tz.reshape(x, (b, l, heads, dk)), (0, 2, 1, 3))

    q = split_heads(tz.linear(seq, params.wq, params.bq))
    k = split_heads(tz.linear(seq, params.wk, params.bk))
    v = split_heads(tz.linear(seq, params.wv, params.bv))
    scores = tz.scale(tz.matmul(q, tz.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    attn = tz.masked_softmax(scores, m[:, None, :])
    ctx = tz.reshape(tz.transpose(tz.matmul(attn, v), (0, 2, 1, 3)), (b, l, d))
    out = tz.linear(ctx, params.wo, params.bo)
    y = tz.layer_norm(tz.add(seq, out), params.ln_gain, params.ln_bias)
    y = _apply_mask(y, mask)
    if training and rng is not None:
        y = tz.dropout(y, cfg.dropout, rng, training)
    return y, attn


def fuse_and_classify(
    u_seq: Tensor,
    v_seq: Tensor,
    u_mask,
    v_mask,
    u_cls: Tensor,
    v_cls: Tensor,
    params: HeadParams,
    cfg: HeadConfig,
    rng=None,
    training=False,
):
    """Max-pool each interpreted sequence, widen with its cls vector, combine
    the branches and classify. Returns (logits, u_max, v_max, x, y)."""
    u_max = tz.masked_max_pool(u_seq, u_mask)
    v_max = tz.masked_max_pool(v_seq, v_mask)
    x = tz.concat([u_max, u_cls], axis=-1)
    y = tz.concat([v_max, v_cls], axis=-1)
    feats = tz.concat([tz.abs_(tz.sub(x, y)), tz.mul(x, y)], axis=-1)
    hidden = tz.relu(tz.linear(feats, params.ff_w, params.ff_b))
    if training and rng is not None:
        hidden = tz.dropout(hidden, cfg.dropout, rng, training)
    logits = tz.linear(hidden, params.out_w, params.out_b)
    return logits, u_max, v_max, x, y


def forward(batch: Batch, params: HeadParams, cfg: HeadConfig, rng=None, training=False):
    """Full head computation; returns (logits, ForwardTrace)."""
    u, v, u_cls, v_cls = project(batch, params, cfg, rng, training)
    u_star, v_star, s_uv, s_vu = align(u, v, batch.u_mask, batch.v_mask)
    cu = combine_local(u, u_star, params, batch.u_mask)
    cv = combine_local(v, v_star, params, batch.v_mask)
    hu, _ = mhsa_block(cu, batch.u_mask, params, cfg, rng, training)
    hv, _ = mhsa_block(cv, batch.v_mask, params, cfg, rng, training)
    logits, u_max, v_max, x, y = fuse_and_classify(
        hu, hv, batch.u_mask, batch.v_mask, u_cls, v_cls, params, cfg, rng, training
    )
    trace = ForwardTrace(u, v, s_uv, s_vu, u_star, v_star, u_max, v_max, u_cls, v_cls, x, y, logits)
    return logits, trace


# ---------------------------------------------------------------------------
# frozen-encoder baseline: mean-pooled last hidden state -> linear softmax


@dataclass
class BaselineParams:
    w: Tensor
    b: Tensor

    def named(self):
        return [("baseline.w", self.w), ("baseline.b", self.b)]

    def tensors(self):
        return [self.w, self.b]

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()


def init_baseline_params(in_dim, rng: RngState) -> BaselineParams:
    return BaselineParams(w=_xavier(rng, 3 * in_dim, N_CLASSES), b=_zeros(N_CLASSES))


def count_baseline_trainable(params: BaselineParams) -> int:
    return sum(t.size for t in params.tensors())


def baseline_forward(batch: Batch, params: BaselineParams) -> Tensor:
    """Mean-pool the final hidden state per sentence; classify
    concat(a, b, |a-b|) with a single linear layer."""
    def pooled(raw, mask):
        last = raw[:, -1, :, :]
        denom = mask.sum(axis=-1, keepdims=True)
        if (denom == 0).any():
            raise ShapeError("baseline pooling over an empty sequence")
        return (last * mask[..., None]).sum(axis=1) / denom

    a = pooled(batch.u_raw, batch.u_mask)
    b = pooled(batch.v_raw, batch.v_mask)
    feats = Tensor(
        np.concatenate([a, b, np.abs(a - b)], axis=-1), dtype=params.w.dtype
    )
    return tz.linear(feats, params.w, params.b)


# ---------------------------------------------------------------------------
# tensor-file checkpoint IO


def write_tensors(path, named_arrays):
    """[u16 LE name_len][name][u8 rank][u32 LE dims...][f32 LE data] per tensor."""
    with open(path, "wb") as fh:
        for name, arr in named_arrays:
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_tensors(path):
    """Inverse of write_tensors; returns {name: float32 array}."""
    out = {}
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0
    try:
        while pos < len(buf):
            (name_len,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            if name in out:
                raise StoreFormatError(f"duplicate tensor {name!r} in {path}")
            out[name] = arr.copy()
    except struct.error as e:
        raise StoreFormatError(f"truncated tensor file {path}") from e
    return out


def save_head(dirpath, params: HeadParams, cfg: HeadConfig):
    import os

    os.makedirs(dirpath, exist_ok=True)
    write_tensors(os.path.join(dirpath, "params.bin"), [(n, t.data) for n, t in params.named()])
    with open(os.path.join(dirpath, "head.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())


def load_head(dirpath, expect_cfg: HeadConfig | None = None):
    import os

    with open(os.path.join(dirpath, "head.json"), encoding="utf-8") as fh:
        cfg = HeadConfig.from_json(fh.read())
    if expect_cfg is not None and cfg != expect_cfg:
        raise ConfigError(f"checkpoint config {cfg} != expected {expect_cfg}")
    arrays = read_tensors(os.path.join(dirpath, "params.bin"))
    kwargs = {}
    for attr, public in HeadParams._NAMES.items():
        if public not in arrays:
            raise StoreFormatError(f"checkpoint missing tensor {public!r}")
        kwargs[attr] = Tensor(arrays[public], requires_grad=True)
    params = HeadParams(**kwargs)
    _validate_shapes(params, cfg)
    return params, cfg


def _validate_shapes(params: HeadParams, cfg: HeadConfig):
    d, ff = cfg.dim, cfg.ff_dim
    expected = {
        "proj.w": (cfg.in_states * cfg.in_dim, d),
        "proj.b": (d,),
        "local.w": (2 * d, d),
        "local.b": (d,),
        "attn.wq": (d, d),
        "attn.bq": (d,),
        "attn.wk": (d, d),
        "attn.bk": (d,),
        "attn.wv": (d, d),
        "attn.bv": (d,),
        "attn.wo": (d, d),
        "attn.bo": (d,),
        "ln.gain": (d,),
        "ln.bias": (d,),
        "ff.w": (4 * d, ff),
        "ff.b": (ff,),
        "out.w": (ff, N_CLASSES),
        "out.b": (N_CLASSES,),
    }
    for name, t in params.named():
        if t.shape != expected[name]:
            raise ConfigError(
                f"tensor {name!r} has shape {t.shape}, config implies {expected[name]}"
            )
