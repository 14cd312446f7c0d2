"""JavaScript and HTML: comment-aware lenient validation, comment blind spots.

The validator is a scanner, not a grammar: it tracks comment and string
regions, requires every opened comment/string to close, checks aggregate
bracket balance and a printable charset outside comments. Blind-spot
alphabets exclude the bytes that could assemble a closing delimiter, so a
single-position write cannot terminate its comment early.
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

_TEXT_MASK = np.zeros(256, dtype=bool)
_TEXT_MASK[0x20:0x7F] = True
_TEXT_MASK[[0x09, 0x0A, 0x0D]] = True

_JS_TOKEN = re.compile(rb"/\*|//|['\"]")
_BRACKETS = (b"()", b"[]", b"{}")


def _charset_ok(data: bytes, lo: int, hi: int) -> int:
    """Returns -1 if clean, else the offset of the first non-text byte."""
    if hi <= lo:
        return -1
    seg = np.frombuffer(data, dtype=np.uint8, count=hi - lo, offset=lo)
    ok = _TEXT_MASK[seg]
    if ok.all():
        return -1
    return lo + int(np.argmin(ok))


def _scan_js(data: bytes) -> tuple[list[tuple[int, int]], list[Violation]]:
    """Returns (block-comment interior spans, violations)."""
    spans: list[tuple[int, int]] = []
    bad: list[Violation] = []
    code_segments: list[tuple[int, int]] = []
    pos = 0
    n = len(data)
    while pos < n:
        m = _JS_TOKEN.search(data, pos)
        if m is None:
            code_segments.append((pos, n))
            break
        code_segments.append((pos, m.start()))
        tok = m.group()
        if tok == b"/*":
            end = data.find(b"*/", m.end())
            if end < 0:
                bad.append(Violation("js.comment", "unterminated block comment"))
                return spans, bad
            spans.append((m.end(), end))
            pos = end + 2
        elif tok == b"//":
            nl = data.find(b"\n", m.end())
            pos = n if nl < 0 else nl + 1
        else:  # string literal
            i = m.end()
            while True:
                j = data.find(tok, i)
                if j < 0:
                    bad.append(Violation("js.string", f"unterminated string at {m.start()}"))
                    return spans, bad
                back = 0
                while data[j - 1 - back] == 0x5C:
                    back += 1
                if back % 2 == 0:
                    break
                i = j + 1
            if data.find(b"\n", m.end(), j) >= 0:
                bad.append(Violation("js.string", f"newline inside string at {m.start()}"))
            pos = j + 1
    for lo, hi in code_segments:
        at = _charset_ok(data, lo, hi)
        if at >= 0:
            bad.append(Violation("js.charset", f"non-text byte {data[at]:#x} at {at}"))
            return spans, bad
    code = b"".join(data[lo:hi] for lo, hi in code_segments)
    for pair in _BRACKETS:
        if code.count(pair[0:1]) != code.count(pair[1:2]):
            bad.append(Violation("js.brackets", f"unbalanced {pair.decode()}"))
    return spans, bad


def _scan_html(data: bytes) -> tuple[list[tuple[int, int]], list[Violation]]:
    spans: list[tuple[int, int]] = []
    bad: list[Violation] = []
    pos = 0
    while True:
        i = data.find(b"<!--", pos)
        if i < 0:
            at = _charset_ok(data, pos, len(data))
            if at >= 0:
                bad.append(Violation("html.charset", f"non-text byte {data[at]:#x} at {at}"))
            break
        at = _charset_ok(data, pos, i)
        if at >= 0:
            bad.append(Violation("html.charset", f"non-text byte {data[at]:#x} at {at}"))
            return spans, bad
        end = data.find(b"-->", i + 4)
        if end < 0:
            bad.append(Violation("html.comment", "unterminated comment"))
            return spans, bad
        spans.append((i + 4, end))
        pos = end + 3
    return spans, bad


def _rand_of(rng: np.random.Generator, alphabet: str, n: int) -> bytes:
    if n >= 48:
        return _donor.spiked_text(rng, n, ALPHABETS[alphabet])
    return rng.choice(ALPHABETS[alphabet], size=n).tobytes()


def _ident(rng: np.random.Generator, n: int) -> bytes:
    return bytes(rng.integers(ord("a"), ord("z") + 1, n, dtype=np.uint8))


def _js_statements(rng: np.random.Generator, count: int) -> bytes:
    out = []
    for _ in range(count):
        name = _ident(rng, int(rng.integers(3, 10)))
        roll = rng.random()
        if roll < 0.25:
            words = _donor.prose(rng, int(rng.integers(16, 60))).replace(b"\n", b" ")
            out.append(b'var %s = "%s";\n' % (name, words.replace(b'"', b" ").replace(b"\\", b" ")))
        elif roll < 0.4:
            words = _donor.prose(rng, int(rng.integers(12, 48))).replace(b"\n", b" ")
            out.append(b"// %s\n" % words)
        else:
            out.append(b"var %s = %d;\n" % (name, int(rng.integers(0, 10**6))))
    return b"".join(out)


def generate_js(rng: np.random.Generator, size_hint: int) -> bytes:
    head = b"/*" + _rand_of(rng, "js_comment", 6) + b"*/k=1;\n"
    head += b"/*" + _rand_of(rng, "js_comment", int(rng.integers(1000, 1300))) + b"*/\n"
    mid = b"/*" + _rand_of(rng, "js_comment", int(rng.integers(420, 640))) + b"*/\n"
    tail = b"/*" + _rand_of(rng, "js_comment", int(rng.integers(280, 460))) + b"*/\n"
    n_stmt = max(4, (size_hint - len(head) - len(mid) - len(tail)) // 20)
    return head + _js_statements(rng, n_stmt // 2) + mid + _js_statements(rng, n_stmt - n_stmt // 2) + tail


def generate_html(rng: np.random.Generator, size_hint: int) -> bytes:
    head = b"<!-- " + _rand_of(rng, "html_comment", 6) + b" -->\n"
    head += b"<!-- " + _rand_of(rng, "html_comment", int(rng.integers(1000, 1280))) + b" -->\n"
    head += b"<!DOCTYPE html>\n<html>\n<head><title>"
    head += _ident(rng, int(rng.integers(4, 12))) + b"</title></head>\n<body>\n"
    paras = []
    body_budget = max(320, size_hint - len(head) - 1300)
    paras.append(b"<script>" + _donor.jsish(rng, int(rng.integers(120, 360))) + b"</script>\n")
    while sum(map(len, paras)) < body_budget:
        words = _donor.prose(rng, int(rng.integers(90, 300))).replace(b"\n", b" ")
        paras.append(b"<p>" + words + b"</p>\n")
    mid = b"<!-- " + _rand_of(rng, "html_comment", int(rng.integers(400, 620))) + b" -->\n"
    tail = b"<!-- " + _rand_of(rng, "html_comment", int(rng.integers(260, 440))) + b" -->\n"
    k = len(paras) // 2
    return head + b"".join(paras[:k]) + mid + b"".join(paras[k:]) + b"</body>\n</html>\n" + tail


def validate_js(data: bytes) -> list[Violation]:
    _, bad = _scan_js(data)
    return bad


def validate_html(data: bytes) -> list[Violation]:
    spans, bad = _scan_html(data)
    if not bad:
        stripped = _strip_spans(data, spans)
        if b"<html" not in stripped:
            bad.append(Violation("html.root", "missing <html> element"))
    return bad


def _comment_blindspots(spans: list[tuple[int, int]], alphabet: str) -> BlindSpotMap:
    return BlindSpotMap([BlindSpotRange(s, e, alphabet) for s, e in spans if e > s])


def blindspots_js(data: bytes) -> BlindSpotMap:
    spans, _ = _scan_js(data)
    return _comment_blindspots(spans, "js_comment")


def blindspots_html(data: bytes) -> BlindSpotMap:
    spans, _ = _scan_html(data)
    return _comment_blindspots(spans, "html_comment")


def _strip_spans(data: bytes, spans: list[tuple[int, int]]) -> bytes:
    out, pos = [], 0
    for s, e in spans:
        out.append(data[pos:s])
        pos = e
    out.append(data[pos:])
    return b"".join(out)


def fingerprint_js(data: bytes) -> object:
    spans, _ = _scan_js(data)
    return ("js", sha(_strip_spans(data, spans)))


def fingerprint_html(data: bytes) -> object:
    spans, _ = _scan_html(data)
    return ("html", sha(_strip_spans(data, spans)))


def _prepare(data: bytes, min_free: int, name: str, opener: bytes, closer: bytes, alphabet: str,
             blindspot_fn) -> bytes:
    current = blindspot_fn(data).count_in(0, 2048)
    deficit = min_free - current
    if deficit <= 0:
        return data
    if min_free > 2048 - len(opener) - len(closer):
        raise CapacityError(f"{name} cannot host that many free bytes before offset 2048")
    rng = np.random.default_rng(zlib.crc32(data))
    extra = opener + rng.choice(ALPHABETS[alphabet], size=deficit + 16).tobytes() + closer + b"\n"
    return extra + data


def prepare_js(data: bytes, min_free: int) -> bytes:
    return _prepare(data, min_free, "js", b"/*", b"*/", "js_comment", blindspots_js)


def prepare_html(data: bytes, min_free: int) -> bytes:
    return _prepare(data, min_free, "html", b"<!-- ", b" -->", "html_comment", blindspots_html)


register(
    FormatSpec(
        name="js",
        category="parasite",
        min_size=512,
        generate=generate_js,
        validate=validate_js,
        blindspots=blindspots_js,
        repair=lambda data: data,
        fingerprint=fingerprint_js,
        prepare_parasite=prepare_js,
    )
)

register(
    FormatSpec(
        name="html",
        category="parasite",
        min_size=512,
        generate=generate_html,
        validate=validate_html,
        blindspots=blindspots_html,
        repair=lambda data: data,
        fingerprint=fingerprint_html,
        prepare_parasite=prepare_html,
    )
)
