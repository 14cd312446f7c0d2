"""PNG generation, chunk-walking validation, and tEXt-payload blind spots."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from bytelab.fileforge import _donor
from bytelab.fileforge import (
    BlindSpotMap,
    BlindSpotRange,
    CapacityError,
    FormatSpec,
    Violation,
    register,
    sha,
)

SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(ctype: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + ctype + data + struct.pack(">I", zlib.crc32(ctype + data))


def _text_chunk(payload: bytes, keyword: bytes = b"c") -> bytes:
    return _chunk(b"tEXt", keyword + b"\x00" + payload)


def _walk(data: bytes) -> list[tuple[bytes, int, int]]:
    """Yield (type, data_start, data_end) per chunk; raises ValueError on bad structure."""
    if data[:8] != SIGNATURE:
        raise ValueError("bad signature")
    chunks = []
    pos = 8
    n = len(data)
    while pos < n:
        if pos + 8 > n:
            raise ValueError("truncated chunk header")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        ds, de = pos + 8, pos + 8 + length
        if de + 4 > n:
            raise ValueError("chunk overruns file")
        chunks.append((ctype, ds, de))
        pos = de + 4
        if ctype == b"IEND":
            break
    if pos != n:
        raise ValueError("trailing bytes after IEND")
    return chunks


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    w, h = int(rng.integers(16, 64)), int(rng.integers(16, 64))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    head_text = _donor.spiked_binary(rng, int(rng.integers(1000, 1300)))
    tail_text = _donor.spiked_binary(rng, int(rng.integers(280, 460)))
    overhead = 8 + 25 + (12 + 2 + len(head_text)) + (12 + 2 + len(tail_text)) + 12 + 12
    raw_len = max(64, size_hint - overhead - 64)
    idat = zlib.compress(rng.integers(0, 256, raw_len, dtype=np.uint8).tobytes(), 6)
    return (
        SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _text_chunk(head_text)
        + _chunk(b"IDAT", idat)
        + _text_chunk(tail_text)
        + _chunk(b"IEND", b"")
    )


def validate(data: bytes) -> list[Violation]:
    out: list[Violation] = []
    try:
        chunks = _walk(data)
    except ValueError as exc:
        return [Violation("png.structure", str(exc))]
    if not chunks or chunks[0][0] != b"IHDR":
        out.append(Violation("png.ihdr", "first chunk must be IHDR"))
    elif chunks[0][2] - chunks[0][1] != 13:
        out.append(Violation("png.ihdr", "IHDR data must be 13 bytes"))
    if not chunks or chunks[-1][0] != b"IEND":
        out.append(Violation("png.iend", "missing IEND"))
    idat_idx = [i for i, (t, _, _) in enumerate(chunks) if t == b"IDAT"]
    if not idat_idx:
        out.append(Violation("png.idat", "missing IDAT"))
    elif idat_idx != list(range(idat_idx[0], idat_idx[0] + len(idat_idx))):
        out.append(Violation("png.idat", "IDAT chunks must be consecutive"))
    for i, (ctype, ds, de) in enumerate(chunks):
        stored = struct.unpack(">I", data[de : de + 4])[0]
        actual = zlib.crc32(data[ds - 4 : de])
        if stored != actual:
            out.append(Violation(f"png.crc[{i}]", f"chunk {ctype!r} crc {stored:#x} != {actual:#x}"))
    return out


def blindspots(data: bytes) -> BlindSpotMap:
    ranges = []
    for ctype, ds, de in _walk(data):
        if ctype != b"tEXt":
            continue
        nul = data.index(b"\x00", ds, de)
        if nul + 1 < de:
            ranges.append(BlindSpotRange(nul + 1, de, "full", repair_needed=True))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    out = bytearray(data)
    for _, ds, de in _walk(data):
        out[de : de + 4] = struct.pack(">I", zlib.crc32(bytes(out[ds - 4 : de])))
    return bytes(out)


def fingerprint(data: bytes) -> object:
    chunks = _walk(data)
    ihdr = next(data[ds:de] for t, ds, de in chunks if t == b"IHDR")
    idat = b"".join(data[ds:de] for t, ds, de in chunks if t == b"IDAT")
    return ("png", ihdr.hex(), sha(idat))


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    bsmap = blindspots(data)
    deficit = min_free - bsmap.count_in(0, 2048)
    if deficit <= 0:
        return data
    if min_free > 2048 - (8 + 25 + 14):
        raise CapacityError("png cannot host that many free bytes before offset 2048")
    chunks = _walk(data)
    ihdr_end = chunks[0][2] + 4
    rng = np.random.default_rng(zlib.crc32(data))
    payload = rng.integers(0, 256, deficit + 16, dtype=np.uint8).tobytes()
    return data[:ihdr_end] + _text_chunk(payload) + data[ihdr_end:]


register(
    FormatSpec(
        name="png",
        category="parasite",
        min_size=512,
        generate=generate,
        validate=validate,
        blindspots=blindspots,
        repair=repair,
        fingerprint=fingerprint,
        prepare_parasite=prepare_parasite,
    )
)
