"""GIF89a with comment-extension blind spots (header has no room, frames do)."""

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

HEADER = b"GIF89a"
_PALETTE = bytes([0, 0, 0, 255, 255, 255, 255, 0, 0, 0, 0, 255])  # 4 RGB entries


def _sub_blocks(payload: bytes) -> bytes:
    out = bytearray()
    for i in range(0, len(payload), 255):
        part = payload[i : i + 255]
        out.append(len(part))
        out += part
    out.append(0)
    return bytes(out)


def _comment(payload: bytes) -> bytes:
    return b"\x21\xfe" + _sub_blocks(payload)


def _walk(data: bytes) -> list[dict]:
    """Block-level walk; LZW content is not decoded (declared lenient level)."""
    if data[:6] != HEADER and data[:6] != b"GIF87a":
        raise ValueError("bad header")
    if len(data) < 13:
        raise ValueError("truncated logical screen descriptor")
    w, h, packed, _bg, _aspect = struct.unpack("<HHBBB", data[6:13])
    pos = 13
    if packed & 0x80:
        pos += 3 * (2 << (packed & 0x07))
    blocks = [{"kind": "lsd", "start": 0, "end": pos}]

    def chain(p: int) -> tuple[int, list[tuple[int, int]]]:
        spans = []
        while True:
            if p >= len(data):
                raise ValueError("unterminated sub-block chain")
            n = data[p]
            p += 1
            if n == 0:
                return p, spans
            if p + n > len(data):
                raise ValueError("sub-block overruns file")
            spans.append((p, p + n))
            p += n

    while pos < len(data):
        b = data[pos]
        if b == 0x3B:
            blocks.append({"kind": "trailer", "start": pos, "end": pos + 1})
            if pos + 1 != len(data):
                raise ValueError("bytes after trailer")
            return blocks
        if b == 0x21:
            if pos + 2 > len(data):
                raise ValueError("truncated extension")
            label = data[pos + 1]
            end, spans = chain(pos + 2)
            blocks.append({"kind": "ext", "label": label, "start": pos, "end": end, "spans": spans})
            pos = end
        elif b == 0x2C:
            if pos + 10 > len(data):
                raise ValueError("truncated image descriptor")
            ipacked = data[pos + 9]
            p = pos + 10
            if ipacked & 0x80:
                p += 3 * (2 << (ipacked & 0x07))
            if p >= len(data):
                raise ValueError("truncated image data")
            p += 1  # LZW minimum code size
            end, spans = chain(p)
            blocks.append({"kind": "image", "start": pos, "end": end, "spans": spans})
            pos = end
        else:
            raise ValueError(f"unknown block introducer {b:#x} at {pos}")
    raise ValueError("missing trailer")


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    w, h = int(rng.integers(40, 90)), int(rng.integers(40, 90))
    lsd = struct.pack("<HHBBB", w, h, 0x91, 0, 0)  # GCT present, 4 entries
    head_comment = _donor.spiked_binary(rng, int(rng.integers(1000, 1300)))
    tail_comment = _donor.spiked_binary(rng, int(rng.integers(260, 420)))
    img_len = max(128, size_hint - len(head_comment) - len(tail_comment) - 128)
    descriptor = b"\x2c" + struct.pack("<HHHHB", 0, 0, w, h, 0) + b"\x02"
    image = descriptor + _sub_blocks(rng.integers(0, 256, img_len, dtype=np.uint8).tobytes())
    return (
        HEADER + lsd + _PALETTE + _comment(head_comment) + image + _comment(tail_comment) + b"\x3b"
    )


def validate(data: bytes) -> list[Violation]:
    try:
        _walk(data)
    except (ValueError, struct.error) as exc:
        return [Violation("gif.structure", str(exc))]
    return []


def blindspots(data: bytes) -> BlindSpotMap:
    ranges = []
    for blk in _walk(data):
        if blk["kind"] == "ext" and blk.get("label") == 0xFE:
            for s, e in blk["spans"]:
                ranges.append(BlindSpotRange(s, e, "full"))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    return data


def fingerprint(data: bytes) -> object:
    imgs = [blk for blk in _walk(data) if blk["kind"] == "image"]
    body = b"".join(data[s:e] for blk in imgs for s, e in blk["spans"])
    return ("gif", len(imgs), sha(body))


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    current = blindspots(data).count_in(0, 2048)
    deficit = min_free - current
    if deficit <= 0:
        return data
    if min_free > 2048 - 32:
        raise CapacityError("gif cannot host that many free bytes before offset 2048")
    blocks = _walk(data)
    first = next((b for b in blocks if b["kind"] == "ext" and b.get("label") == 0xFE), None)
    rng = np.random.default_rng(zlib.crc32(data))
    extra = _comment(rng.integers(0, 256, deficit + 16, dtype=np.uint8).tobytes())
    at = first["start"] if first is not None else blocks[0]["end"]
    return data[:at] + extra + data[at:]


register(
    FormatSpec(
        name="gif",
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
