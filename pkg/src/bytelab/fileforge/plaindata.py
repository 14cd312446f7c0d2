"""JSON, CSV, plain text, and random binary.

JSON and CSV are scattered-category formats: the only free bytes are
bounded descriptive text fields (a designated "pad" string value, the CSV
note column), reported honestly as reduced capacity. TXT and BIN tolerate
anything within their charsets and act as the full-control baseline.
"""

from __future__ import annotations

import json
import zlib

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

JSON_PAD_CAP = 256  # descriptive fields stay small; capacity limits are honest
CSV_NOTE_CAP = 120


def _rand_of(rng: np.random.Generator, alphabet: str, n: int) -> bytes:
    return rng.choice(ALPHABETS[alphabet], size=n).tobytes()


def _word(rng: np.random.Generator) -> bytes:
    return bytes(rng.integers(ord("a"), ord("z") + 1, int(rng.integers(2, 9)), dtype=np.uint8))


# --------------------------------------------------------------------------
# JSON


def generate_json(rng: np.random.Generator, size_hint: int) -> bytes:
    pad = _rand_of(rng, "json_string", int(rng.integers(160, JSON_PAD_CAP)))
    head = b'{"s": "' + _rand_of(rng, "json_string", 6) + b'", "pad": "' + pad + b'"'
    items = []
    budget = max(256, size_hint - len(head) - 64)
    while sum(map(len, items)) < budget:
        items.append(
            b'{"k": "%s", "v": %d, "note": "%s"}'
            % (_word(rng), int(rng.integers(0, 10**9)), _donor.prose(rng, int(rng.integers(50, 170))).replace(b"\n", b" "))
        )
    return head + b', "items": [' + b", ".join(items) + b"]}"


def validate_json(data: bytes) -> list[Violation]:
    try:
        json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        return [Violation("json.parse", str(exc))]
    return []


def _json_pad_span(data: bytes) -> tuple[int, int]:
    tag = b'"pad": "'
    at = data.find(tag)
    if at < 0:
        return (0, 0)
    start = at + len(tag)
    end = data.index(b'"', start)
    return (start, end)


def blindspots_json(data: bytes) -> BlindSpotMap:
    s, e = _json_pad_span(data)
    return BlindSpotMap([BlindSpotRange(s, e, "json_string")] if e > s else [])


def fingerprint_json(data: bytes) -> object:
    obj = json.loads(data)
    if isinstance(obj, dict) and "pad" in obj:
        obj["pad"] = ""
    return ("json", sha(json.dumps(obj, sort_keys=True).encode()))


def prepare_json(data: bytes, min_free: int) -> bytes:
    s, e = _json_pad_span(data)
    have = e - s
    if have >= min_free:
        return data
    if min_free > JSON_PAD_CAP:
        raise CapacityError(f"json pad field is capped at {JSON_PAD_CAP} bytes")
    rng = np.random.default_rng(zlib.crc32(data))
    extra = _rand_of(rng, "json_string", min_free - have)
    return data[:e] + extra + data[e:]


# --------------------------------------------------------------------------
# CSV


def generate_csv(rng: np.random.Generator, size_hint: int) -> bytes:
    rows = [b"id,kind,note,val"]
    i = 0
    while sum(map(len, rows)) < max(512, size_hint - 40):
        note = _donor.prose(rng, int(rng.integers(60, 170))).replace(b"\n", b" ")
        rows.append(b"%d,%s,%s,%d" % (i, _word(rng), note, int(rng.integers(0, 10**6))))
        i += 1
    return b"\n".join(rows) + b"\n"


_CSV_MASK = np.zeros(256, dtype=bool)
_CSV_MASK[0x20:0x7F] = True
_CSV_MASK[0x0A] = True


def validate_csv(data: bytes) -> list[Violation]:
    if data and not _CSV_MASK[np.frombuffer(data, dtype=np.uint8)].all():
        return [Violation("csv.charset", "non-printable byte outside row separators")]
    lines = data.split(b"\n")
    if not lines or lines[0].count(b",") < 1:
        return [Violation("csv.header", "missing delimited header row")]
    n_cols = lines[0].count(b",")
    for k, line in enumerate(lines):
        if line and line.count(b",") != n_cols:
            return [Violation(f"csv.row[{k}]", "column count differs from header")]
    return []


def _csv_note_spans(data: bytes) -> list[tuple[int, int]]:
    spans = []
    pos = 0
    for k, line in enumerate(data.split(b"\n")):
        if k > 0 and line:
            first = line.find(b",")
            second = line.find(b",", first + 1)
            third = line.find(b",", second + 1)
            if 0 <= second < third:
                spans.append((pos + second + 1, pos + third))
        pos += len(line) + 1
    return spans


def blindspots_csv(data: bytes) -> BlindSpotMap:
    return BlindSpotMap(
        [BlindSpotRange(s, e, "csv_field") for s, e in _csv_note_spans(data) if e > s]
    )


def fingerprint_csv(data: bytes) -> object:
    masked = bytearray(data)
    for s, e in _csv_note_spans(data):
        masked[s:e] = b"#" * (e - s)
    return ("csv", sha(bytes(masked)))


def prepare_csv(data: bytes, min_free: int) -> bytes:
    spans = _csv_note_spans(data)
    have = sum(min(e, 2048) - s for s, e in spans if s < 2048)
    if have >= min_free:
        return data
    rng = np.random.default_rng(zlib.crc32(data))
    out = bytearray(data)
    # grow early note fields toward the cap, front to back
    for s, e in reversed([sp for sp in spans if sp[0] < 2048]):
        room = CSV_NOTE_CAP - (e - s)
        if room > 0:
            grow = min(room, min_free - have)
            out[e:e] = _rand_of(rng, "csv_field", grow)
            have += grow
        if have >= min_free:
            return bytes(out)
    raise CapacityError(f"csv notes cannot host {min_free} bytes before offset 2048")


# --------------------------------------------------------------------------
# plain text and random binary


_TXT_OK_SET = frozenset(list(range(0x20, 0x7F)) + [0x09, 0x0A])


def generate_txt(rng: np.random.Generator, size_hint: int) -> bytes:
    head = b"Note " + _rand_of(rng, "printable", 8) + b" *\n"
    lines = [head.rstrip(b"\n")]
    while sum(map(len, lines)) < max(512, size_hint - 16):
        if rng.random() < 0.18:
            # documents quote structured content: tables, configs, code
            block = _donor.mixed(rng, int(rng.integers(80, 300)))
            block = bytes(c if c in _TXT_OK_SET else 0x2E for c in block)
            lines.extend(block.split(b"\n"))
        else:
            lines.append(b" ".join(_word(rng) for _ in range(int(rng.integers(6, 14)))))
    return b"\n".join(lines) + b"\n"


_TXT_MASK = np.zeros(256, dtype=bool)
_TXT_MASK[0x20:0x7F] = True
_TXT_MASK[[0x09, 0x0A, 0x0D]] = True


def validate_txt(data: bytes) -> list[Violation]:
    if not data:
        return []
    ok = _TXT_MASK[np.frombuffer(data, dtype=np.uint8)]
    if ok.all():
        return []
    at = int(np.argmin(ok))
    return [Violation("txt.charset", f"non-text byte {data[at]:#x} at {at}")]


def blindspots_txt(data: bytes) -> BlindSpotMap:
    return BlindSpotMap([BlindSpotRange(0, len(data), "text")] if data else [])


def prepare_txt(data: bytes, min_free: int) -> bytes:
    if len(data) >= min_free:
        return data
    rng = np.random.default_rng(zlib.crc32(data))
    filler = b" ".join(_word(rng) for _ in range(max(8, min_free // 4)))
    return data + filler[: min_free - len(data) + 64] + b"\n"


def generate_bin(rng: np.random.Generator, size_hint: int) -> bytes:
    """Unidentified binary: noise interleaved with damaged structure
    fragments, the way real miscellaneous-binary corpora look."""
    n = max(1024, size_hint)
    out = bytearray(rng.integers(0, 256, n, dtype=np.uint8).tobytes())
    for _ in range(int(rng.integers(2, 6))):
        frag = _donor.broken_structure(rng)
        at = int(rng.integers(0, max(1, n - len(frag))))
        out[at : at + len(frag)] = frag[: n - at]
    if rng.random() < 0.5:
        head = _donor.broken_structure(rng)
        out[: len(head)] = head[:n]
    return bytes(out)


def blindspots_bin(data: bytes) -> BlindSpotMap:
    return BlindSpotMap([BlindSpotRange(0, len(data), "full")] if data else [])


register(
    FormatSpec(
        name="json",
        category="scattered",
        min_size=512,
        generate=generate_json,
        validate=validate_json,
        blindspots=blindspots_json,
        repair=lambda data: data,
        fingerprint=fingerprint_json,
        prepare_parasite=prepare_json,
    )
)

register(
    FormatSpec(
        name="csv",
        category="scattered",
        min_size=512,
        generate=generate_csv,
        validate=validate_csv,
        blindspots=blindspots_csv,
        repair=lambda data: data,
        fingerprint=fingerprint_csv,
        prepare_parasite=prepare_csv,
    )
)

register(
    FormatSpec(
        name="txt",
        category="full_control",
        min_size=512,
        generate=generate_txt,
        validate=validate_txt,
        blindspots=blindspots_txt,
        repair=lambda data: data,
        fingerprint=lambda data: ("txt", len(data)),
        prepare_parasite=prepare_txt,
    )
)

register(
    FormatSpec(
        name="bin",
        category="full_control",
        min_size=512,
        generate=generate_bin,
        validate=lambda data: [],
        blindspots=blindspots_bin,
        repair=lambda data: data,
        fingerprint=lambda data: ("bin", len(data)),
        prepare_parasite=lambda data, min_free: data
        if len(data) >= min_free
        else data + np.random.default_rng(zlib.crc32(data)).integers(0, 256, min_free, dtype=np.uint8).tobytes(),
    )
)
