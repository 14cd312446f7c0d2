"""Shared filler content for generators.

Containers (tar, zip) hold files of other kinds, JSON values carry prose,
HTML embeds scripts. Generators draw that embedded content from here so
classes overlap at the byte-statistics level the way real corpora do,
instead of every format being wall-to-wall homogeneous.
"""

from __future__ import annotations

import numpy as np

_WORDS = (
    b"the quick brown fox jumps over a lazy dog while seventeen engineers "
    b"review binary parsers during deployment of the annual report archive "
    b"with metadata checksum records and structured content streams"
).split()


def prose(rng: np.random.Generator, n: int) -> bytes:
    out = bytearray()
    while len(out) < n:
        out += _WORDS[int(rng.integers(0, len(_WORDS)))] + b" "
        if rng.random() < 0.08:
            out += b"\n"
    return bytes(out[:n])


def jsonish(rng: np.random.Generator, n: int) -> bytes:
    out = bytearray(b'{"rows": [')
    i = 0
    while len(out) < n:
        word = _WORDS[int(rng.integers(0, len(_WORDS)))]
        out += b'{"id": %d, "tag": "%s", "x": %d}, ' % (i, word, int(rng.integers(0, 9999)))
        i += 1
    return bytes(out[:n])


def csvish(rng: np.random.Generator, n: int) -> bytes:
    out = bytearray(b"id,tag,x\n")
    i = 0
    while len(out) < n:
        word = _WORDS[int(rng.integers(0, len(_WORDS)))]
        out += b"%d,%s,%d\n" % (i, word, int(rng.integers(0, 9999)))
        i += 1
    return bytes(out[:n])


def jsish(rng: np.random.Generator, n: int) -> bytes:
    out = bytearray()
    while len(out) < n:
        word = _WORDS[int(rng.integers(0, len(_WORDS)))]
        out += b"var %s%d = %d; " % (word, int(rng.integers(0, 99)), int(rng.integers(0, 99999)))
        if rng.random() < 0.2:
            out += b"\n"
    return bytes(out[:n])


def binary(rng: np.random.Generator, n: int) -> bytes:
    return rng.integers(0, 256, n, dtype=np.uint8).tobytes()


def mixed(rng: np.random.Generator, n: int) -> bytes:
    """A random filler kind, mimicking arbitrary archived or embedded files."""
    kind = int(rng.integers(0, 5))
    return (prose, jsonish, csvish, jsish, binary)[kind](rng, n)


def fit_alphabet(data: bytes, alphabet: np.ndarray, fill: int = 0x2E) -> bytes:
    """Clamp bytes to an allowed alphabet, replacing strays with `fill`."""
    ok = np.zeros(256, dtype=bool)
    ok[alphabet] = True
    if not ok[fill]:
        fill = int(alphabet[0])
    arr = np.frombuffer(data, dtype=np.uint8).copy()
    arr[~ok[arr]] = fill
    return arr.tobytes()


def spiked_binary(rng: np.random.Generator, n: int) -> bytes:
    """Noise with damaged-structure fragments and fill runs: realistic
    padding/slack content (uninitialized buffers, zeroed regions, 0xFF
    flash fill, partial records)."""
    out = bytearray(binary(rng, n))
    if n >= 48:
        for _ in range(int(rng.integers(1, 4))):
            frag = broken_structure(rng)
            at = int(rng.integers(0, max(1, n - 24)))
            out[at : at + len(frag)] = frag[: n - at]
        for _ in range(int(rng.integers(1, 4))):
            fill = int(rng.choice([0x00, 0x00, 0xFF, 0x20]))
            run = int(rng.integers(24, 1200))
            at = int(rng.integers(0, max(1, n - 24)))
            out[at : at + run] = bytes([fill]) * min(run, n - at)
    return bytes(out)


def spiked_text(rng: np.random.Generator, n: int, alphabet: np.ndarray) -> bytes:
    """Comment-safe filler: prose with embedded code/data/markup snippets."""
    out = bytearray(prose(rng, n))
    if n >= 32:
        for _ in range(int(rng.integers(1, 4))):
            kind = int(rng.integers(0, 5))
            if kind == 3:
                frag = broken_structure_text(rng)
            elif kind == 4:
                frag = broken_structure(rng)
            else:
                frag = (jsonish, csvish, jsish)[kind](rng, int(rng.integers(16, 80)))
            at = int(rng.integers(0, max(1, n - 16)))
            out[at : at + len(frag)] = frag[: n - at]
    return fit_alphabet(bytes(out), alphabet)


def broken_structure_text(rng: np.random.Generator) -> bytes:
    """Textual near-miss cues: header strings and markup out of context."""
    picks = (
        b"%PDF-1.4 obj << /Type /Page >>",
        b"<html><head><p>sample</p>",
        b"GIF89a palette",
        b"PK archive entry name=",
        b'{"s": "rec-001", "items": [',
        b"id,kind,note,val",
        b"var pad00 = 1; /@ end",
        b"ustar header block",
        b"ELF section .shstrtab",
        b"IHDR IDAT IEND tEXt",
    )
    a = picks[int(rng.integers(0, len(picks)))]
    b_ = picks[int(rng.integers(0, len(picks)))]
    return a + b" " + prose(rng, int(rng.integers(8, 40))) + b" " + b_


def _corrupt(rng: np.random.Generator, blob: bytes, k: int = 1) -> bytes:
    out = bytearray(blob)
    for pos in rng.choice(min(8, len(out)), size=k, replace=False):
        out[pos] ^= int(rng.integers(1, 256))
    return bytes(out)


def broken_structure(rng: np.random.Generator) -> bytes:
    """A corrupted or misplaced structure fragment, as found in real
    unidentified binaries: damaged headers, partial records, truncated
    archives. Magic bytes are always off, so the fragment never makes the
    host file a valid instance of the donor format."""
    kind = int(rng.integers(0, 6))
    if kind == 0:  # executable-ish header plus section-record-like runs
        frag = b"\x7fELF" + bytes([2, 1, 1, 0, 0]) + bytes(7)
        frag += binary(rng, 48)
        for _ in range(int(rng.integers(1, 4))):
            rec = bytearray(64)
            rec[0:4] = int(rng.integers(1, 40)).to_bytes(4, "little")
            rec[4:8] = int(rng.choice([1, 3])).to_bytes(4, "little")
            rec[24:32] = int(rng.integers(64, 8192)).to_bytes(8, "little")
            rec[32:40] = int(rng.integers(16, 4096)).to_bytes(8, "little")
            rec[48:56] = (1).to_bytes(8, "little")
            frag += bytes(rec)
    elif kind == 1:  # archive-ish local record
        frag = b"PK\x03\x04" + binary(rng, 26) + prose(rng, int(rng.integers(24, 96)))
    elif kind == 2:  # tape-archive-ish header block, complete field layout
        frag = bytearray(512)
        frag[0:100] = prose(rng, int(rng.integers(8, 40))).ljust(100, b"\x00")
        frag[100:108] = b"0000644\x00"
        frag[108:116] = b"0000000\x00"
        frag[116:124] = b"0000000\x00"
        frag[124:136] = b"%011o\x00" % int(rng.integers(0, 8**10))
        frag[136:148] = b"%011o\x00" % int(rng.integers(0, 8**11))
        frag[148:156] = b"%06o\x00 " % int(rng.integers(0, 8**6))
        frag[156] = ord("0")
        frag[257:263] = b"ustar\x00"
        frag[263:265] = b"00"
        frag[265:265 + 8] = b"user\x00\x00\x00\x00"
        # corrupt anywhere (possibly nowhere): near-miss and exact-texture
        # header blocks both occur inside unidentified binaries
        for _ in range(int(rng.integers(0, 3))):
            frag[int(rng.integers(0, 512))] ^= int(rng.integers(1, 256))
        return bytes(frag)
    elif kind == 3:  # image-ish chunk run with trailer tokens
        frag = b"\x89PNG\r\n\x1a\n" + b"\x00\x00\x00\rIHDR" + binary(rng, int(rng.integers(16, 48)))
        frag += b"IDAT" + binary(rng, int(rng.integers(8, 32))) + b"tEXt"
        frag += binary(rng, 8) + b"\x00\x00\x00\x00IEND\xaeB`\x82"
    elif kind == 4:  # gif-ish block run
        frag = b"GIF89a" + binary(rng, int(rng.integers(16, 64))) + b"\x21\xfe" + binary(rng, 12)
    else:  # document-ish header
        frag = b"%PDF-1." + binary(rng, 1) + b"\n%" + prose(rng, int(rng.integers(24, 96)))
    return _corrupt(rng, frag, k=int(rng.integers(1, 3)))
