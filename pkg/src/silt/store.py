"""Binary cache of multi-layer transformer embeddings, plus batch assembly.

A store is a directory holding ``manifest.json`` and ``records.bin``. Each
record is, at its manifest offset:

    [u16 LE id_len][id UTF-8][u8 language: 0=en, 1=es]
    [u32 LE L][u32 LE H][u32 LE D]
    [f32 LE x H*L*D payload, h-major then position then feature]
    [u32 LE CRC32 of payload]

Hidden states are ordered from the embedding-layer output (h=0) up to the
final layer (h=H-1); position 0 of every state is the sentence-level cls
token. All multi-byte values are little-endian for cross-language interop.

Several manifest ids may alias one record (writers may deduplicate
identical sentences); an alias is valid when the id stored in the record
is itself indexed at the same offset. ``record_count`` counts index
entries, aliases included.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import StoreError, StoreFormatError, StoreLookupError

FORMAT_VERSION = 1
LANG_CODES = {"en": 0, "es": 1}
CODE_LANGS = {v: k for k, v in LANG_CODES.items()}

_HEADER_ID_LEN = struct.Struct("<H")
_HEADER_LANG = struct.Struct("<B")
_HEADER_DIMS = struct.Struct("<III")
_TRAILER_CRC = struct.Struct("<I")


@dataclass
class EmbeddingRecord:
    """All hidden states of one tokenized sentence: float32 [H, L, D]."""

    sentence_id: str
    language: str
    data: np.ndarray

    def __post_init__(self):
        if self.language not in LANG_CODES:
            raise StoreError(f"unsupported language {self.language!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise StoreError(
                f"record data must be [H, L, D] with positive dims, got {self.data.shape}"
            )

    @property
    def hidden_states(self):
        return self.data.shape[0]

    @property
    def length(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass
class Batch:
    """Zero-padded premise/hypothesis tensors with {0,1} masks.

    raw tensors are [B, H, Lmax, D]; masks are [B, Lmax] with mask[i, j] = 1
    iff position j is real for item i. Padded raw cells are exactly 0.
    """

    u_raw: np.ndarray
    v_raw: np.ndarray
    u_mask: np.ndarray
    v_mask: np.ndarray
    labels: np.ndarray | None = None
    pair_meta: list = field(default_factory=list)

    @property
    def size(self):
        return self.u_raw.shape[0]


def _encode_record(rec: EmbeddingRecord) -> bytes:
    idb = rec.sentence_id.encode("utf-8")
    if len(idb) > 0xFFFF:
        raise StoreError(f"sentence id too long: {rec.sentence_id[:40]}...")
    h, l, d = rec.data.shape
    payload = rec.data.astype("<f4", copy=False).tobytes()
    return b"".join(
        [
            _HEADER_ID_LEN.pack(len(idb)),
            idb,
            _HEADER_LANG.pack(LANG_CODES[rec.language]),
            _HEADER_DIMS.pack(l, h, d),
            payload,
            _TRAILER_CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF),
        ]
    )


def _decode_record(buf, offset, expect_id=None):
    try:
        (id_len,) = _HEADER_ID_LEN.unpack_from(buf, offset)
        pos = offset + _HEADER_ID_LEN.size
        sid = bytes(buf[pos : pos + id_len]).decode("utf-8")
        pos += id_len
        (lang_code,) = _HEADER_LANG.unpack_from(buf, pos)
        pos += _HEADER_LANG.size
        l, h, d = _HEADER_DIMS.unpack_from(buf, pos)
        pos += _HEADER_DIMS.size
        n_bytes = h * l * d * 4
        payload = bytes(buf[pos : pos + n_bytes])
        if len(payload) != n_bytes:
            raise StoreFormatError(f"record at offset {offset} is truncated")
        pos += n_bytes
        (crc,) = _TRAILER_CRC.unpack_from(buf, pos)
        pos += _TRAILER_CRC.size
    except struct.error as e:
        raise StoreFormatError(f"record at offset {offset} is truncated") from e
    if lang_code not in CODE_LANGS:
        raise StoreFormatError(f"record at offset {offset}: unknown language code {lang_code}")
    if expect_id is not None and sid != expect_id:
        raise StoreFormatError(
            f"record at offset {offset} holds id {sid!r}, manifest says {expect_id!r}"
        )
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise StoreFormatError(f"record {sid!r} at offset {offset}: CRC mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, l, d)
    rec = EmbeddingRecord(sid, CODE_LANGS[lang_code], data.copy())
    return rec, pos


class StoreWriter:
    """Single-writer append; manifest is committed atomically on close."""

    def __init__(self, path, transformer_name, hidden_states, width):
        self.path = path
        self.transformer_name = transformer_name
        self.hidden_states = int(hidden_states)
        self.width = int(width)
        self._index = {}
        os.makedirs(path, exist_ok=True)
        self._fh = open(os.path.join(path, "records.bin"), "wb")

    def write_record(self, rec: EmbeddingRecord) -> int:
        if self._fh is None:
            raise StoreError("writer is closed")
        if rec.sentence_id in self._index:
            raise StoreError(f"duplicate sentence id {rec.sentence_id!r}")
        if rec.hidden_states != self.hidden_states or rec.width != self.width:
            raise StoreError(
                f"record {rec.sentence_id!r} has H={rec.hidden_states}, D={rec.width}; "
                f"store is H={self.hidden_states}, D={self.width}"
            )
        offset = self._fh.tell()
        try:
            self._fh.write(_encode_record(rec))
        except OSError as e:
            raise StoreError(f"write failed in {self.path}: {e}") from e
        self._index[rec.sentence_id] = offset
        return offset

    def close(self):
        if self._fh is None:
            return
        self._fh.close()
        self._fh = None
        manifest = {
            "format_version": FORMAT_VERSION,
            "transformer_name": self.transformer_name,
            "H": self.hidden_states,
            "D": self.width,
            "record_count": len(self._index),
            "index": self._index,
        }
        tmp = os.path.join(self.path, "manifest.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh)
        os.replace(tmp, os.path.join(self.path, "manifest.json"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EmbedStore:
    """Read-only view over a store directory. Safe for concurrent readers."""

    def __init__(self, path, cache=True):
        self.path = path
        try:
            with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
                manifest = json.load(fh)
        except FileNotFoundError as e:
            raise StoreError(f"no manifest.json under {path}") from e
        if manifest.get("format_version") != FORMAT_VERSION:
            raise StoreFormatError(
                f"unsupported store format_version {manifest.get('format_version')}"
            )
        self.transformer_name = manifest["transformer_name"]
        self.hidden_states = int(manifest["H"])
        self.width = int(manifest["D"])
        self.index = dict(manifest["index"])
        if len(self.index) != int(manifest["record_count"]):
            raise StoreFormatError(
                f"manifest record_count {manifest['record_count']} "
                f"!= index size {len(self.index)}"
            )
        self._fh = open(os.path.join(path, "records.bin"), "rb")
        self._cache = {} if cache else None

    def ids(self):
        return self.index.keys()

    def __contains__(self, sentence_id):
        return sentence_id in self.index

    def read_record(self, sentence_id) -> EmbeddingRecord:
        if self._cache is not None and sentence_id in self._cache:
            return self._cache[sentence_id]
        if sentence_id not in self.index:
            raise StoreLookupError(f"unknown sentence id {sentence_id!r} in {self.path}")
        offset = self.index[sentence_id]
        self._fh.seek(offset)
        # read header lazily: id + lang + dims bound the payload size
        head = self._fh.read(_HEADER_ID_LEN.size)
        if len(head) < _HEADER_ID_LEN.size:
            raise StoreFormatError(f"record at offset {offset} is truncated")
        (id_len,) = _HEADER_ID_LEN.unpack(head)
        rest_fixed = self._fh.read(id_len + _HEADER_LANG.size + _HEADER_DIMS.size)
        if len(rest_fixed) != id_len + _HEADER_LANG.size + _HEADER_DIMS.size:
            raise StoreFormatError(f"record at offset {offset} is truncated")
        l, h, d = _HEADER_DIMS.unpack_from(rest_fixed, id_len + _HEADER_LANG.size)
        body = self._fh.read(h * l * d * 4 + _TRAILER_CRC.size)
        rec, _ = _decode_record(head + rest_fixed + body, 0)
        if rec.sentence_id != sentence_id and self.index.get(rec.sentence_id) != offset:
            raise StoreFormatError(
                f"record at offset {offset} holds id {rec.sentence_id!r}, "
                f"manifest says {sentence_id!r} and they are not aliases"
            )
        if self._cache is not None:
            self._cache[sentence_id] = rec
        return rec

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def rebuild_index(path):
    """Linear scan of records.bin; returns {sentence_id: offset}.

    Recovery path for a missing/corrupt manifest, and the independent oracle
    for manifest correctness.
    """
    with open(os.path.join(path, "records.bin"), "rb") as fh:
        buf = fh.read()
    index = {}
    offset = 0
    while offset < len(buf):
        rec, end = _decode_record(buf, offset)
        if rec.sentence_id in index:
            raise StoreFormatError(f"duplicate id {rec.sentence_id!r} at offset {offset}")
        index[rec.sentence_id] = offset
        offset = end
    return index


def assemble_batch(store: EmbedStore, pairs, lcap) -> Batch:
    """Fetch premise/hypothesis records, truncate to lcap, pad to batch max.

    Truncation keeps the sequence prefix, so the cls position survives.
    Labels are attached when every pair carries one.
    """
    if lcap < 1:
        raise StoreError(f"lcap must be >= 1, got {lcap}")
    u_recs = [store.read_record(p.premise_id) for p in pairs]
    v_recs = [store.read_record(p.hypothesis_id) for p in pairs]
    h, d = store.hidden_states, store.width
    u_lens = [min(r.length, lcap) for r in u_recs]
    v_lens = [min(r.length, lcap) for r in v_recs]
    lmax = max(u_lens + v_lens)
    b = len(pairs)
    u_raw = np.zeros((b, h, lmax, d), dtype=np.float32)
    v_raw = np.zeros((b, h, lmax, d), dtype=np.float32)
    u_mask = np.zeros((b, lmax), dtype=np.float32)
    v_mask = np.zeros((b, lmax), dtype=np.float32)
    for i, (ur, vr, ul, vl) in enumerate(zip(u_recs, v_recs, u_lens, v_lens)):
        u_raw[i, :, :ul, :] = ur.data[:, :ul, :]
        v_raw[i, :, :vl, :] = vr.data[:, :vl, :]
        u_mask[i, :ul] = 1.0
        v_mask[i, :vl] = 1.0

    labels = None
    if all(getattr(p, "label", None) is not None for p in pairs) and pairs:
        from .corpus import label_index

        labels = np.array([label_index(p.label) for p in pairs], dtype=np.int64)
    return Batch(u_raw, v_raw, u_mask, v_mask, labels, list(pairs))
