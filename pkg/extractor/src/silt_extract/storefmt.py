"""Standalone writer/checker for the embedding-store directory format.

Independent implementation of the documented interchange format (the
classifier side has its own): ``manifest.json`` plus ``records.bin`` where
each record is

    [u16 LE id_len][id UTF-8][u8 language: 0=en, 1=es]
    [u32 LE L][u32 LE H][u32 LE D]
    [f32 LE x H*L*D payload][u32 LE CRC32 of payload]

The manifest index may map several sentence ids to one record offset
(deduplicated identical sentences); ``record_count`` counts index entries,
aliases included.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

FORMAT_VERSION = 1
LANG_CODES = {"en": 0, "es": 1}


class StoreFormatError(Exception):
    pass


class StoreWriter:
    def __init__(self, path, transformer_name, hidden_states, width):
        self.path = path
        self.transformer_name = transformer_name
        self.hidden_states = int(hidden_states)
        self.width = int(width)
        self.index = {}
        os.makedirs(path, exist_ok=True)
        self._fh = open(os.path.join(path, "records.bin"), "wb")

    def write_record(self, sentence_id, language, data) -> int:
        """Append one [H, L, D] float32 record; returns its offset."""
        if sentence_id in self.index:
            raise StoreFormatError(f"duplicate sentence id {sentence_id!r}")
        data = np.ascontiguousarray(data, dtype="<f4")
        h, l, d = data.shape
        if h != self.hidden_states or d != self.width:
            raise StoreFormatError(
                f"record {sentence_id!r}: got H={h}, D={d}; "
                f"store is H={self.hidden_states}, D={self.width}"
            )
        idb = sentence_id.encode("utf-8")
        payload = data.tobytes()
        offset = self._fh.tell()
        self._fh.write(struct.pack("<H", len(idb)))
        self._fh.write(idb)
        self._fh.write(struct.pack("<B", LANG_CODES[language]))
        self._fh.write(struct.pack("<III", l, h, d))
        self._fh.write(payload)
        self._fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
        self.index[sentence_id] = offset
        return offset

    def add_alias(self, alias_id, offset):
        if alias_id in self.index:
            raise StoreFormatError(f"duplicate sentence id {alias_id!r}")
        self.index[alias_id] = offset

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
            "record_count": len(self.index),
            "index": self.index,
        }
        tmp = os.path.join(self.path, "manifest.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh)
        os.replace(tmp, os.path.join(self.path, "manifest.json"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def scan_store(path):
    """Walk records.bin; yields (offset, sentence_id, H, L, D, crc_ok)."""
    with open(os.path.join(path, "records.bin"), "rb") as fh:
        buf = fh.read()
    offset = 0
    while offset < len(buf):
        try:
            (id_len,) = struct.unpack_from("<H", buf, offset)
            pos = offset + 2
            sid = buf[pos : pos + id_len].decode("utf-8")
            pos += id_len + 1  # skip the language byte
            l, h, d = struct.unpack_from("<III", buf, pos)
            pos += 12
        except (struct.error, UnicodeDecodeError) as e:
            raise StoreFormatError(f"corrupt record header at offset {offset}") from e
        n_bytes = h * l * d * 4
        payload = buf[pos : pos + n_bytes]
        if len(payload) != n_bytes:
            raise StoreFormatError(f"truncated record at offset {offset}")
        pos += n_bytes
        try:
            (crc,) = struct.unpack_from("<I", buf, pos)
        except struct.error as e:
            raise StoreFormatError(f"truncated record at offset {offset}") from e
        pos += 4
        yield offset, sid, h, l, d, (zlib.crc32(payload) & 0xFFFFFFFF) == crc
        offset = pos


def read_manifest(path):
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        return json.load(fh)
