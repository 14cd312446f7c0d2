"""ZIP (stored entries) with a free leading region, name and comment blind spots.

Archives tolerate arbitrary bytes before the first local header (parsers
locate entries through the end-of-central-directory record), so generated
archives carry a leading free region in addition to entry-name and
archive-comment blind spots. Entry names are kept in sync between local
headers and the central directory by `repair`.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from bytelab.fileforge import _donor
from bytelab.fileforge import (
    ALPHABETS,
    BlindSpotMap,
    BlindSpotRange,
    FormatSpec,
    Violation,
    register,
    sha,
)

LOCAL_SIG = b"PK\x03\x04"
CENTRAL_SIG = b"PK\x01\x02"
EOCD_SIG = b"PK\x05\x06"

_TIME, _DATE = 0x6000, 0x5821  # constant timestamp: zips are reproducible per seed


@dataclass
class _Entry:
    name: bytes
    data: bytes
    local_off: int = 0  # populated by the parser
    central_off: int = 0


def _local(entry: _Entry) -> bytes:
    crc = zlib.crc32(entry.data)
    return (
        LOCAL_SIG
        + struct.pack(
            "<HHHHHIIIHH",
            20, 0, 0, _TIME, _DATE, crc, len(entry.data), len(entry.data), len(entry.name), 0,
        )
        + entry.name
        + entry.data
    )


def _central(entry: _Entry, local_off: int) -> bytes:
    crc = zlib.crc32(entry.data)
    return (
        CENTRAL_SIG
        + struct.pack(
            "<HHHHHHIIIHHHHHII",
            20, 20, 0, 0, _TIME, _DATE, crc, len(entry.data), len(entry.data),
            len(entry.name), 0, 0, 0, 0, 0, local_off,
        )
        + entry.name
    )


def _build(lead: bytes, entries: list[_Entry], comment: bytes) -> bytes:
    parts = [lead]
    offsets = []
    pos = len(lead)
    for e in entries:
        offsets.append(pos)
        blob = _local(e)
        parts.append(blob)
        pos += len(blob)
    cd_off = pos
    for e, off in zip(entries, offsets):
        blob = _central(e, off)
        parts.append(blob)
        pos += len(blob)
    eocd = EOCD_SIG + struct.pack(
        "<HHHHIIH", 0, 0, len(entries), len(entries), pos - cd_off, cd_off, len(comment)
    )
    parts.append(eocd + comment)
    return b"".join(parts)


def _parse(data: bytes) -> tuple[list[_Entry], int, bytes]:
    """Returns (entries with offsets, eocd position, comment); raises ValueError."""
    eocd_pos = data.rfind(EOCD_SIG)
    if eocd_pos < 0 or eocd_pos + 22 > len(data):
        raise ValueError("no end-of-central-directory record")
    (_d, _cd, n_disk, n_total, cd_size, cd_off, clen) = struct.unpack(
        "<HHHHIIH", data[eocd_pos + 4 : eocd_pos + 22]
    )
    if eocd_pos + 22 + clen != len(data):
        raise ValueError("archive comment length disagrees with file size")
    if n_disk != n_total:
        raise ValueError("multi-disk archives unsupported")
    if cd_off + cd_size > eocd_pos:
        raise ValueError("central directory out of bounds")
    comment = data[eocd_pos + 22 :]
    entries: list[_Entry] = []
    pos = cd_off
    for _ in range(n_total):
        if data[pos : pos + 4] != CENTRAL_SIG:
            raise ValueError("bad central directory signature")
        (nlen, xlen, mclen) = struct.unpack("<HHH", data[pos + 28 : pos + 34])
        (local_off,) = struct.unpack("<I", data[pos + 42 : pos + 46])
        name = data[pos + 46 : pos + 46 + nlen]
        (lnlen, lxlen) = struct.unpack("<HH", data[local_off + 26 : local_off + 30])
        (usize,) = struct.unpack("<I", data[local_off + 22 : local_off + 26])
        dstart = local_off + 30 + lnlen + lxlen
        entry = _Entry(name=name, data=data[dstart : dstart + usize], local_off=local_off, central_off=pos)
        entries.append(entry)
        pos += 46 + nlen + xlen + mclen
    if pos != cd_off + cd_size:
        raise ValueError("central directory size mismatch")
    return entries, eocd_pos, comment


def _rand_name(rng: np.random.Generator, length: int) -> bytes:
    return rng.choice(ALPHABETS["zip_name"], size=length).tobytes()


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    banner = b"PADREGION-" + rng.choice(ALPHABETS["printable"], size=6).tobytes()
    lead = banner + _donor.spiked_binary(rng, int(rng.integers(1000, 1320)))
    comment = rng.choice(ALPHABETS["zip_comment"], size=int(rng.integers(260, 420))).tobytes()
    entries = [_Entry(name=_rand_name(rng, int(rng.integers(120, 180))), data=b"placeholder payload\n" * 6)]
    bulk = max(128, size_hint - len(lead) - len(comment) - 800)
    entries.append(_Entry(name=_rand_name(rng, int(rng.integers(40, 80))),
                          data=_donor.mixed(rng, bulk)))
    return _build(lead, entries, comment)


def validate(data: bytes) -> list[Violation]:
    out: list[Violation] = []
    try:
        entries, eocd_pos, _comment = _parse(data)
    except (ValueError, struct.error) as exc:
        return [Violation("zip.structure", str(exc))]
    for i, e in enumerate(entries):
        if data[e.local_off : e.local_off + 4] != LOCAL_SIG:
            out.append(Violation(f"zip.local[{i}]", "bad local header signature"))
            continue
        (lnlen,) = struct.unpack("<H", data[e.local_off + 26 : e.local_off + 28])
        local_name = data[e.local_off + 30 : e.local_off + 30 + lnlen]
        if local_name != e.name:
            out.append(Violation(f"zip.name[{i}]", "local and central names differ"))
        (lcrc, lcsize, lusize) = struct.unpack("<III", data[e.local_off + 14 : e.local_off + 26])
        (ccrc,) = struct.unpack("<I", data[e.central_off + 16 : e.central_off + 20])
        actual = zlib.crc32(e.data)
        if lcrc != actual or ccrc != actual:
            out.append(Violation(f"zip.crc[{i}]", f"stored {lcrc:#x}/{ccrc:#x} != {actual:#x}"))
        if lcsize != lusize or lcsize != len(e.data):
            out.append(Violation(f"zip.size[{i}]", "stored sizes inconsistent"))
    return out


def blindspots(data: bytes) -> BlindSpotMap:
    entries, eocd_pos, comment = _parse(data)
    ranges: list[BlindSpotRange] = []
    first_local = min(e.local_off for e in entries)
    if first_local > 0:
        ranges.append(BlindSpotRange(0, first_local, "full"))
    for e in entries:
        if len(e.name):
            ranges.append(
                BlindSpotRange(e.local_off + 30, e.local_off + 30 + len(e.name), "zip_name", repair_needed=True)
            )
    if comment:
        ranges.append(BlindSpotRange(eocd_pos + 22, len(data), "zip_comment"))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    """Recompute entry CRCs and copy local names onto their central records."""
    entries, _, _ = _parse(data)
    out = bytearray(data)
    for e in entries:
        (lnlen,) = struct.unpack("<H", data[e.local_off + 26 : e.local_off + 28])
        local_name = bytes(out[e.local_off + 30 : e.local_off + 30 + lnlen])
        crc = struct.pack("<I", zlib.crc32(e.data))
        out[e.local_off + 14 : e.local_off + 18] = crc
        out[e.central_off + 16 : e.central_off + 20] = crc
        out[e.central_off + 46 : e.central_off + 46 + len(local_name)] = local_name
    return bytes(out)


def fingerprint(data: bytes) -> object:
    entries, _, _ = _parse(data)
    return ("zip", len(entries), tuple(sha(e.data) for e in entries))


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    if blindspots(data).count_in(0, 2048) >= min_free:
        return data
    entries, _, comment = _parse(data)
    first_local = min(e.local_off for e in entries)
    # the lead region alone covers the requirement once it spans min_free bytes
    grow = min(min_free, 2048) + 16 - first_local
    if grow <= 0:
        return data
    rng = np.random.default_rng(zlib.crc32(data))
    lead = data[:first_local] + rng.integers(0, 256, grow, dtype=np.uint8).tobytes()
    order = sorted(entries, key=lambda e: e.local_off)
    return _build(lead, order, comment)


register(
    FormatSpec(
        name="zip",
        category="full_control",
        min_size=1024,
        generate=generate,
        validate=validate,
        blindspots=blindspots,
        repair=repair,
        fingerprint=fingerprint,
        prepare_parasite=prepare_parasite,
    )
)
