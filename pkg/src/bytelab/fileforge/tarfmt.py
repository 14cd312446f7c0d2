"""USTAR archives with a padding member whose content is the blind spot.

Header checksums guard every header byte, so uname/gname edits need the
`repair` pass; padding-member data is not checksummed and is free as-is.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from bytelab.fileforge import _donor
from bytelab.fileforge import (
    ALPHABETS,
    BlindSpotMap,
    BlindSpotRange,
    CapacityError,
    FormatSpec,
    Violation,
    register,
    sha,
)

BLOCK = 512
PAD_PREFIX = b"PAD"


@dataclass
class _Member:
    name: bytes
    data: bytes
    header_off: int = 0
    uname: bytes = b"user"
    gname: bytes = b"group"


def _octal(value: int, width: int) -> bytes:
    return ("%0*o" % (width - 1, value)).encode() + b"\x00"


def _header(m: _Member) -> bytes:
    h = bytearray(BLOCK)
    h[0 : len(m.name)] = m.name
    h[100:108] = _octal(0o644, 8)
    h[108:116] = _octal(0, 8)
    h[116:124] = _octal(0, 8)
    h[124:136] = _octal(len(m.data), 12)
    h[136:148] = _octal(0, 12)
    h[148:156] = b" " * 8
    h[156] = ord("0")
    h[257:263] = b"ustar\x00"
    h[263:265] = b"00"
    h[265 : 265 + len(m.uname)] = m.uname
    h[297 : 297 + len(m.gname)] = m.gname
    chk = sum(h)
    h[148:156] = ("%06o" % chk).encode() + b"\x00 "
    return bytes(h)


def _pad_to_block(data: bytes) -> bytes:
    rem = len(data) % BLOCK
    return data + bytes(BLOCK - rem) if rem else data


def _build(members: list[_Member]) -> bytes:
    parts = []
    for m in members:
        parts.append(_header(m))
        parts.append(_pad_to_block(m.data))
    parts.append(bytes(2 * BLOCK))
    return b"".join(parts)


def _parse(data: bytes, check_sums: bool = True) -> list[_Member]:
    members = []
    pos = 0
    while pos + BLOCK <= len(data):
        header = data[pos : pos + BLOCK]
        if header == bytes(BLOCK):
            if data[pos + BLOCK : pos + 2 * BLOCK] != bytes(BLOCK):
                raise ValueError("lone zero block at end of archive")
            # readers stop here; trailing bytes (blocking-factor padding,
            # concatenated content) are tolerated
            return members
        if header[257:262] != b"ustar":
            raise ValueError(f"bad magic in header at {pos}")
        if check_sums:
            stored = int(header[148:156].split(b"\x00")[0].strip() or b"0", 8)
            actual = sum(header[:148]) + 8 * 32 + sum(header[156:])
            if stored != actual:
                raise ValueError(f"header checksum mismatch at {pos}: {stored} != {actual}")
        size = int(header[124:136].split(b"\x00")[0].strip() or b"0", 8)
        name = header[0:100].split(b"\x00")[0]
        dstart = pos + BLOCK
        if dstart + size > len(data):
            raise ValueError("member data overruns archive")
        members.append(
            _Member(
                name=name,
                data=data[dstart : dstart + size],
                header_off=pos,
                uname=header[265:297].split(b"\x00")[0],
                gname=header[297:329].split(b"\x00")[0],
            )
        )
        pos = dstart + (size + BLOCK - 1) // BLOCK * BLOCK
    raise ValueError("missing end-of-archive blocks")


def _rand_text(rng: np.random.Generator, n: int) -> bytes:
    return rng.choice(ALPHABETS["printable"], size=n).tobytes()


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    pad_name = PAD_PREFIX + _rand_text(rng, 5) + b".bin"
    pad_len = int(rng.integers(1100, 1500))
    tail_len = int(rng.integers(64, 900)) if rng.random() < 0.6 else 0
    bulk = max(256, size_hint - pad_len - tail_len - 4 * BLOCK)
    members = [
        _Member(name=pad_name, data=_donor.spiked_binary(rng, pad_len)),
        _Member(
            name=_rand_text(rng, int(rng.integers(8, 24))),
            data=_donor.mixed(rng, bulk),
        ),
    ]
    return _build(members) + _donor.spiked_binary(rng, tail_len)


def validate(data: bytes) -> list[Violation]:
    try:
        _parse(data)
    except (ValueError, IndexError) as exc:
        return [Violation("tar.structure", str(exc))]
    return []


def _archive_end(data: bytes) -> int:
    """Offset just past the two end-of-archive zero blocks."""
    members = _parse(data)
    pos = 0
    for m in members:
        pos = m.header_off + BLOCK + (len(m.data) + BLOCK - 1) // BLOCK * BLOCK
    return pos + 2 * BLOCK


def blindspots(data: bytes) -> BlindSpotMap:
    ranges = []
    end = _archive_end(data)
    if end < len(data):
        ranges.append(BlindSpotRange(end, len(data), "full"))
    for m in _parse(data):
        # uname/gname fields are checksummed; repair restores the checksum
        ranges.append(BlindSpotRange(m.header_off + 265, m.header_off + 297, "full", repair_needed=True))
        ranges.append(BlindSpotRange(m.header_off + 297, m.header_off + 329, "full", repair_needed=True))
        if m.name.startswith(PAD_PREFIX) and len(m.data):
            dstart = m.header_off + BLOCK
            ranges.append(BlindSpotRange(dstart, dstart + len(m.data), "full"))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    out = bytearray(data)
    for m in _parse(bytes(out), check_sums=False):
        h = out[m.header_off : m.header_off + BLOCK]
        chk = sum(h[:148]) + 8 * 32 + sum(h[156:])
        out[m.header_off + 148 : m.header_off + 156] = ("%06o" % chk).encode() + b"\x00 "
    return bytes(out)


def fingerprint(data: bytes) -> object:
    members = _parse(data)
    return (
        "tar",
        tuple(
            (m.name.decode("latin1"), sha(m.data))
            for m in members
            if not m.name.startswith(PAD_PREFIX)
        ),
    )


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    current = blindspots(data).count_in(0, 2048)
    deficit = min_free - current
    if deficit <= 0:
        return data
    if min_free > 2048 - BLOCK:
        raise CapacityError("tar cannot host that many free bytes before offset 2048")
    members = _parse(data)
    rng = np.random.default_rng(zlib.crc32(data))
    pad = next((m for m in members if m.name.startswith(PAD_PREFIX)), None)
    if pad is None:
        pad = _Member(name=PAD_PREFIX + b"0.bin", data=b"")
        members.insert(0, pad)
    else:
        members.remove(pad)
        members.insert(0, pad)
    pad.data += rng.integers(0, 256, deficit + 16, dtype=np.uint8).tobytes()
    return _build(members)


register(
    FormatSpec(
        name="tar",
        category="parasite",
        min_size=2048,
        generate=generate,
        validate=validate,
        blindspots=blindspots,
        repair=repair,
        fingerprint=fingerprint,
        prepare_parasite=prepare_parasite,
    )
)
