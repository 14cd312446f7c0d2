"""Minimal 64-bit relocatable ELF with non-loaded padding sections as blind spots."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

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

MAGIC = b"\x7fELF"
EHSIZE, SHENTSIZE = 64, 64
SHT_NULL, SHT_PROGBITS, SHT_STRTAB = 0, 1, 3


@dataclass
class _Section:
    name: str
    type: int
    data: bytes


def _build(sections: list[_Section], table_first: bool = False) -> bytes:
    """Emit header, section data, and the section header table.

    `table_first` places the table right after the ELF header (legal:
    e_shoff may point anywhere), which real linkers occasionally do and
    which keeps the file tail free of table records.
    """
    names = b"\x00"
    name_off = {}
    for s in sections:
        name_off[s.name] = len(names)
        names += s.name.encode() + b"\x00"
    strtab_payload = sections[-1].data
    full_strtab = names + strtab_payload  # trailing slack after the name strings
    blobs = [s.data for s in sections[:-1]] + [full_strtab]
    shnum = len(sections) + 1
    table_len = shnum * SHENTSIZE

    offset = EHSIZE + (table_len if table_first else 0)
    offs = []
    for blob in blobs:
        offs.append(offset)
        offset += len(blob)
    shoff = EHSIZE if table_first else offset

    ehdr = (
        MAGIC
        + bytes([2, 1, 1, 0, 0])
        + b"\x00" * 7
        + struct.pack(
            "<HHIQQQIHHHHHH",
            1, 62, 1, 0, 0, shoff, 0, EHSIZE, 0, 0, SHENTSIZE, shnum, shnum - 1,
        )
    )
    table = [struct.pack("<IIQQQQIIQQ", 0, SHT_NULL, 0, 0, 0, 0, 0, 0, 0, 0)]
    for s, off, blob in zip(sections, offs, blobs):
        table.append(
            struct.pack(
                "<IIQQQQIIQQ",
                name_off[s.name], s.type, 0, 0, off, len(blob), 0, 0, 1, 0,
            )
        )
    body = b"".join(blobs)
    if table_first:
        return ehdr + b"".join(table) + body
    return ehdr + body + b"".join(table)


def _parse(data: bytes) -> list[dict]:
    if data[:4] != MAGIC:
        raise ValueError("bad ELF magic")
    if data[4] != 2 or data[5] != 1 or data[6] != 1:
        raise ValueError("only 64-bit little-endian version-1 ELF supported")
    if len(data) < EHSIZE:
        raise ValueError("truncated header")
    (_t, _m, _v, _e, _ph, shoff, _f, ehsize, _pes, _pn, shentsize, shnum, shstrndx) = struct.unpack(
        "<HHIQQQIHHHHHH", data[16:64]
    )
    if ehsize != EHSIZE or shentsize != SHENTSIZE:
        raise ValueError("unexpected header sizes")
    if shoff + shnum * SHENTSIZE > len(data):
        raise ValueError("section header table out of bounds")
    if shstrndx >= shnum:
        raise ValueError("shstrndx out of range")
    sections = []
    for i in range(shnum):
        rec = data[shoff + i * SHENTSIZE : shoff + (i + 1) * SHENTSIZE]
        name_off, stype, flags, addr, off, size, link, info, align, entsize = struct.unpack(
            "<IIQQQQIIQQ", rec
        )
        sections.append(
            {"name_off": name_off, "type": stype, "offset": off, "size": size, "index": i}
        )
    if sections[0]["type"] != SHT_NULL:
        raise ValueError("section 0 must be SHT_NULL")
    strtab = sections[shstrndx]
    if strtab["offset"] + strtab["size"] > len(data):
        raise ValueError("string table out of bounds")
    names_blob = data[strtab["offset"] : strtab["offset"] + strtab["size"]]
    for s in sections:
        if s["type"] != SHT_NULL and s["offset"] + s["size"] > len(data):
            raise ValueError(f"section {s['index']} out of bounds")
        if s["name_off"] >= max(1, strtab["size"]):
            raise ValueError(f"section {s['index']} name offset out of range")
        end = names_blob.find(b"\x00", s["name_off"])
        s["name"] = names_blob[s["name_off"] : end if end >= 0 else None].decode("latin1")
    sections[-1]["_strtab_names_end"] = max(
        s["name_off"] + len(s["name"]) + 1 for s in sections
    )
    return sections


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    p0 = int(rng.integers(1000, 1320))
    p1 = int(rng.integers(420, 640))
    text_len = max(256, size_hint - p0 - p1 - 6 * SHENTSIZE - EHSIZE - 128)
    slack = rng.integers(0x20, 0x7F, int(rng.integers(32, 80)), dtype=np.uint8).tobytes()
    ro_len = max(64, text_len // 3)
    sections = [
        _Section(".pad0", SHT_PROGBITS, _donor.spiked_binary(rng, p0)),
        _Section(".text", SHT_PROGBITS, rng.integers(0, 256, text_len - ro_len, dtype=np.uint8).tobytes()),
        _Section(".rodata", SHT_PROGBITS, _donor.prose(rng, ro_len)),
        _Section(".pad1", SHT_PROGBITS, _donor.spiked_binary(rng, p1)),
        _Section(".shstrtab", SHT_STRTAB, slack),
    ]
    return _build(sections, table_first=bool(rng.random() < 0.5))


def validate(data: bytes) -> list[Violation]:
    try:
        _parse(data)
    except (ValueError, struct.error) as exc:
        return [Violation("elf.structure", str(exc))]
    return []


def blindspots(data: bytes) -> BlindSpotMap:
    sections = _parse(data)
    ranges = []
    for s in sections:
        if s.get("name", "").startswith(".pad") and s["size"]:
            ranges.append(BlindSpotRange(s["offset"], s["offset"] + s["size"], "full"))
    strtab = sections[-1]
    slack_start = strtab["offset"] + strtab["_strtab_names_end"]
    slack_end = strtab["offset"] + strtab["size"]
    if slack_start < slack_end:
        ranges.append(BlindSpotRange(slack_start, slack_end, "full"))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    return data


def fingerprint(data: bytes) -> object:
    sections = _parse(data)
    text = next((s for s in sections if s.get("name") == ".text"), None)
    body = data[text["offset"] : text["offset"] + text["size"]] if text else b""
    return ("elf", len(sections), sha(body))


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    current = blindspots(data).count_in(0, 2048)
    deficit = min_free - current
    if deficit <= 0:
        return data
    if min_free > 2048 - EHSIZE:
        raise CapacityError("elf cannot host that many free bytes before offset 2048")
    sections = _parse(data)
    by_offset = sorted((s for s in sections if s["type"] != SHT_NULL), key=lambda s: s["offset"])
    rng = np.random.default_rng(zlib.crc32(data))
    rebuilt = []
    for s in by_offset:
        blob = data[s["offset"] : s["offset"] + s["size"]]
        if s["name"] == ".pad0":
            blob += rng.integers(0, 256, deficit, dtype=np.uint8).tobytes()
        if s["name"] == ".shstrtab":
            blob = blob[s["_strtab_names_end"] :]  # builder re-adds the name strings
        rebuilt.append(_Section(s["name"], s["type"], blob))
    return _build(rebuilt)


register(
    FormatSpec(
        name="elf",
        category="parasite",
        min_size=1024,
        generate=generate,
        validate=validate,
        blindspots=blindspots,
        repair=repair,
        fingerprint=fingerprint,
        prepare_parasite=prepare_parasite,
    )
)
