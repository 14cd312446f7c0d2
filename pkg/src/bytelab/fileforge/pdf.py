"""PDF generation and comment-line blind spots.

Validation is deliberately lenient: header, trailer, and object balance on
comment-stripped content. Full-line % comments are skipped exactly the way
PDF parsers skip them, which also makes the object count immune to bytes
an attacker writes inside a comment.
"""

from __future__ import annotations

import re
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

_OBJ_RE = re.compile(rb"\b\d+\s+\d+\s+obj\b")
_ENDOBJ_RE = re.compile(rb"\bendobj\b")


def _lines(data: bytes) -> list[tuple[int, int]]:
    spans = []
    start = 0
    while start < len(data):
        nl = data.find(b"\n", start)
        end = len(data) if nl < 0 else nl
        spans.append((start, end))
        start = end + 1
    return spans


def _comment_spans(data: bytes) -> list[tuple[int, int]]:
    """Full-line comments, excluding the %PDF header and the %%EOF trailer."""
    out = []
    for i, (s, e) in enumerate(_lines(data)):
        line = data[s:e]
        if not line.startswith(b"%"):
            continue
        if i == 0 and line.startswith(b"%PDF-"):
            continue
        if line.rstrip() == b"%%EOF":
            continue
        out.append((s, e))
    return out


def _strip_comments(data: bytes) -> bytes:
    spans = _comment_spans(data)
    if not spans:
        return data
    out = []
    pos = 0
    for s, e in spans:
        out.append(data[pos:s])
        pos = e
    out.append(data[pos:])
    return b"".join(out)


def _comment_line(rng: np.random.Generator, n: int) -> bytes:
    return b"%" + _donor.spiked_text(rng, n, ALPHABETS["pdf_comment"]) + b"\n"


def _rand_word(rng: np.random.Generator, n: int) -> bytes:
    return bytes(rng.integers(ord("a"), ord("z") + 1, n, dtype=np.uint8))


def generate(rng: np.random.Generator, size_hint: int) -> bytes:
    head = b"%PDF-1.4\n" + _comment_line(rng, 5)
    head += _comment_line(rng, int(rng.integers(1000, 1300)))
    # words stay short enough that structural keywords cannot appear by chance
    words = b" ".join(_rand_word(rng, int(rng.integers(2, 6))) for _ in range(max(8, size_hint // 5)))
    stream = words[: max(64, size_hint - len(head) - 1400)]
    body = (
        b"1 0 obj\n<< /Type /Catalog /Pages 2 0 R >>\nendobj\n"
        b"2 0 obj\n<< /Type /Pages /Kids [3 0 R] /Count 1 >>\nendobj\n"
        b"3 0 obj\n<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R >>\nendobj\n"
        + _comment_line(rng, int(rng.integers(420, 640)))
        + b"4 0 obj\n<< /Length %d >>\nstream\n" % len(stream)
        + stream
        + b"\nendstream\nendobj\n"
    )
    tail = (
        b"trailer\n<< /Root 1 0 R /Size 5 >>\n"
        + _comment_line(rng, int(rng.integers(280, 460)))
        + b"%%EOF"
    )
    return head + body + tail


def validate(data: bytes) -> list[Violation]:
    out: list[Violation] = []
    if not data.startswith(b"%PDF-"):
        out.append(Violation("pdf.header", "missing %PDF- header"))
    if data.rstrip()[-5:] != b"%%EOF":
        out.append(Violation("pdf.trailer", "missing %%EOF trailer"))
    body = _strip_comments(data)
    n_obj = len(_OBJ_RE.findall(body))
    n_end = len(_ENDOBJ_RE.findall(body))
    if n_obj == 0:
        out.append(Violation("pdf.objects", "no objects found"))
    if n_obj != n_end:
        out.append(Violation("pdf.objects", f"{n_obj} obj vs {n_end} endobj"))
    n_end_stream = body.count(b"endstream")
    n_stream_only = body.count(b"stream") - n_end_stream  # 'endstream' contains 'stream'
    if n_stream_only != n_end_stream:
        out.append(Violation("pdf.streams", "stream/endstream imbalance"))
    return out


def blindspots(data: bytes) -> BlindSpotMap:
    ranges = []
    for s, e in _comment_spans(data):
        if e - s > 1:
            ranges.append(BlindSpotRange(s + 1, e, "pdf_comment"))
    return BlindSpotMap(ranges)


def repair(data: bytes) -> bytes:
    return data


def fingerprint(data: bytes) -> object:
    body = _strip_comments(data)
    return ("pdf", len(_OBJ_RE.findall(body)), sha(body))


def prepare_parasite(data: bytes, min_free: int) -> bytes:
    current = blindspots(data).count_in(0, 2048)
    deficit = min_free - current
    if deficit <= 0:
        return data
    if min_free > 2048 - 16:
        raise CapacityError("pdf cannot host that many free bytes before offset 2048")
    spans = _comment_spans(data)
    rng = np.random.default_rng(zlib.crc32(data))
    extra = _comment_line(rng, deficit + 16)
    at = spans[0][0] if spans else len(data.split(b"\n", 1)[0]) + 1
    return data[:at] + extra + data[at:]


register(
    FormatSpec(
        name="pdf",
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
