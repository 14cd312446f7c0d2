"""Synthetic corpus generation, format validation, and blind-spot extraction.

Every supported file type registers a `FormatSpec` bundling a deterministic
generator, a structural validator, a blind-spot extractor, a checksum
repair procedure, and a semantic fingerprint. Blind spots are the byte
positions an attacker may freely rewrite (within a per-range alphabet)
such that repair + validate still pass and the fingerprint is unchanged.

Formats fall into three blind-spot categories: full-control formats
tolerate arbitrary leading bytes, parasite formats host free bytes in
comments and metadata, and scattered formats only expose small
descriptive fields.

Validation is intentionally lenient for text formats: JS/HTML are checked
with a comment-aware scanner, not a grammar. "Functionality preservation"
is operationalized as validator + fingerprint, not execution.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from bytelab.windowing import WindowSpec

__all__ = [
    "ALPHABETS",
    "stable_seed",
    "BlindSpotMap",
    "BlindSpotRange",
    "CapacityError",
    "FileSample",
    "FormatSpec",
    "Violation",
    "register",
    "format_spec",
    "format_names",
    "generate",
    "validate",
    "is_valid",
    "blindspots",
    "repair",
    "fingerprint",
    "prepare_parasite",
    "window_blindspots",
    "derive_rng",
]


class CapacityError(ValueError):
    """The format cannot host the requested number of free bytes."""


@dataclass(frozen=True)
class Violation:
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.where}: {self.detail}"


def _alphabet(*, exclude: bytes = b"", base: str = "printable") -> np.ndarray:
    if base == "printable":
        vals = list(range(0x20, 0x7F))
    elif base == "full":
        vals = list(range(256))
    elif base == "text":
        vals = list(range(0x20, 0x7F)) + [0x09, 0x0A]
    else:
        raise ValueError(base)
    return np.array([v for v in vals if v not in exclude], dtype=np.uint8)


ALPHABETS: dict[str, np.ndarray] = {
    "full": _alphabet(base="full"),
    "text": _alphabet(base="text"),
    "printable": _alphabet(base="printable"),
    # ZIP names must stay extractable: no path separators, no NUL.
    "zip_name": _alphabet(exclude=b"/\\"),
    # printable comments cannot spell binary structure signatures
    "zip_comment": _alphabet(),
    # a newline would terminate the PDF comment early
    "pdf_comment": _alphabet(base="full", exclude=b"\r\n"),
    # '*' and '/' could assemble a closing delimiter
    "js_comment": _alphabet(base="text", exclude=b"*/"),
    # '-' and '>' could assemble '-->'
    "html_comment": _alphabet(base="text", exclude=b"->"),
    "json_string": _alphabet(exclude=b'"\\'),
    "csv_field": _alphabet(exclude=b',"'),
}


@dataclass(frozen=True)
class BlindSpotRange:
    start: int
    end: int
    alphabet: str = "full"
    repair_needed: bool = False

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("empty blind-spot range")
        if self.alphabet not in ALPHABETS:
            raise ValueError(f"unknown alphabet {self.alphabet!r}")


@dataclass
class BlindSpotMap:
    """Freely assignable file offsets plus their per-range alphabets."""

    ranges: list[BlindSpotRange] = field(default_factory=list)

    def positions(self) -> np.ndarray:
        if not self.ranges:
            return np.empty(0, dtype=np.int64)
        parts = [np.arange(r.start, r.end, dtype=np.int64) for r in self.ranges]
        return np.unique(np.concatenate(parts))

    def alphabet_of(self, pos: int) -> np.ndarray:
        for r in self.ranges:
            if r.start <= pos < r.end:
                return ALPHABETS[r.alphabet]
        raise KeyError(f"position {pos} is not a blind spot")

    def alphabet_names(self) -> dict[int, str]:
        out: dict[int, str] = {}
        for r in self.ranges:
            for p in range(r.start, r.end):
                out.setdefault(p, r.alphabet)
        return out

    @property
    def repair_needed(self) -> bool:
        return any(r.repair_needed for r in self.ranges)

    def count_in(self, lo: int, hi: int) -> int:
        pos = self.positions()
        return int(((pos >= lo) & (pos < hi)).sum())

    def restricted_to_window(self, spec: WindowSpec, file_len: int) -> "BlindSpotMap":
        """Intersect ranges with the extraction window's real-byte extents."""
        spans = spec.slice_bounds(file_len)
        out: list[BlindSpotRange] = []
        for r in self.ranges:
            for s, e in spans:
                lo, hi = max(r.start, s), min(r.end, e)
                if lo < hi:
                    out.append(BlindSpotRange(lo, hi, r.alphabet, r.repair_needed))
        return BlindSpotMap(out)

    def to_json(self) -> str:
        return json.dumps(
            {
                "ranges": [
                    {
                        "start": r.start,
                        "end": r.end,
                        "alphabet": r.alphabet,
                        "repair_needed": r.repair_needed,
                    }
                    for r in self.ranges
                ]
            },
            indent=None,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "BlindSpotMap":
        raw = json.loads(text)
        return cls(
            [
                BlindSpotRange(r["start"], r["end"], r["alphabet"], r["repair_needed"])
                for r in raw["ranges"]
            ]
        )


@dataclass(frozen=True)
class FileSample:
    data: bytes
    label: str
    seed: int
    size_hint: int

    @property
    def size(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class FormatSpec:
    """One file type's generator, validator, and blind-spot machinery."""

    name: str
    category: str  # full_control | parasite | scattered
    min_size: int
    generate: Callable[[np.random.Generator, int], bytes]
    validate: Callable[[bytes], list[Violation]]
    blindspots: Callable[[bytes], BlindSpotMap]
    repair: Callable[[bytes], bytes]
    fingerprint: Callable[[bytes], object]
    prepare_parasite: Callable[[bytes, int], bytes]


_REGISTRY: dict[str, FormatSpec] = {}


def register(spec: FormatSpec) -> FormatSpec:
    if spec.category not in ("full_control", "parasite", "scattered"):
        raise ValueError(f"bad category {spec.category!r}")
    _REGISTRY[spec.name] = spec
    return spec


def format_spec(name: str) -> FormatSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown format {name!r}; known: {sorted(_REGISTRY)}") from None


def format_names() -> list[str]:
    return sorted(_REGISTRY)


def derive_rng(*parts) -> np.random.Generator:
    """Counter-based generator keyed by a stable hash of the given labels."""
    h = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    key = np.frombuffer(h[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stable_seed(*parts) -> int:
    """Platform- and process-stable 31-bit seed from the given labels."""
    h = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def generate(name: str, seed: int, size_hint: int = 4096) -> FileSample:
    spec = format_spec(name)
    if size_hint < spec.min_size:
        raise ValueError(f"{name} requires at least {spec.min_size} bytes, got {size_hint}")
    rng = derive_rng("gen", name, seed)
    data = spec.generate(rng, size_hint)
    bad = spec.validate(data)
    if bad:
        raise AssertionError(f"generator for {name} produced an invalid file: {bad[:3]}")
    return FileSample(data=data, label=name, seed=seed, size_hint=size_hint)


def validate(name: str, data: bytes) -> list[Violation]:
    return format_spec(name).validate(data)


def is_valid(name: str, data: bytes) -> bool:
    return not validate(name, data)


def blindspots(name: str, data: bytes) -> BlindSpotMap:
    bad = validate(name, data)
    if bad:
        raise ValueError(f"cannot extract blind spots from an invalid {name} file: {bad[:3]}")
    return format_spec(name).blindspots(data)


def repair(name: str, data: bytes) -> bytes:
    return format_spec(name).repair(data)


def fingerprint(name: str, data: bytes) -> object:
    return format_spec(name).fingerprint(data)


def prepare_parasite(name: str, data: bytes, min_free: int) -> tuple[bytes, BlindSpotMap]:
    """Make room: grow/insert metadata so >= min_free blind-spot bytes land in [0, 2048)."""
    spec = format_spec(name)
    bad = spec.validate(data)
    if bad:
        raise ValueError(f"cannot prepare an invalid {name} file: {bad[:3]}")
    out = spec.prepare_parasite(data, min_free)
    bsmap = spec.blindspots(out)
    got = bsmap.count_in(0, 2048)
    if got < min_free:
        raise CapacityError(f"{name}: only {got} free bytes available in [0, 2048), wanted {min_free}")
    if spec.validate(out):
        raise AssertionError(f"prepare_parasite broke a {name} file")
    return out, bsmap


def window_blindspots(name: str, data: bytes, spec: WindowSpec) -> BlindSpotMap:
    return blindspots(name, data).restricted_to_window(spec, len(data))


def sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------
# corpus layout: <root>/<label>/<seed>.bin plus manifest.csv


def write_corpus(
    root: Path | str,
    per_class: int,
    seed: int,
    labels: list[str] | None = None,
    size_range: tuple[int, int] = (3072, 9216),
    sidecars: bool = False,
) -> list[dict]:
    """Generate `per_class` files for each label under `root`; returns manifest rows."""
    root = Path(root)
    labels = labels or format_names()
    rows: list[dict] = []
    for label in labels:
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            file_seed = seed * 1_000_003 + i
            hint_rng = derive_rng("size", label, file_seed)
            lo, hi = size_range
            hint = max(format_spec(label).min_size, int(hint_rng.integers(lo, hi)))
            sample = generate(label, file_seed, hint)
            path = d / f"{file_seed}.bin"
            path.write_bytes(sample.data)
            if sidecars:
                (d / f"{file_seed}.bsmap.json").write_text(
                    blindspots(label, sample.data).to_json()
                )
            rows.append(
                {"path": str(path.relative_to(root)), "label": label, "size": sample.size, "seed": file_seed}
            )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["path", "label", "size", "seed"])
    writer.writeheader()
    for row in sorted(rows, key=lambda r: r["path"]):
        writer.writerow(row)
    (root / "manifest.csv").write_text(buf.getvalue())
    return rows


def read_corpus(root: Path | str) -> list[tuple[bytes, str]]:
    """Load (data, label) pairs listed by a corpus manifest, in manifest order."""
    root = Path(root)
    out: list[tuple[bytes, str]] = []
    with open(root / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(((root / row["path"]).read_bytes(), row["label"]))
    return out


# Register the built-in formats on import.
from bytelab.fileforge import elffmt, gif, pdf, plaindata, png, scripts, tarfmt, zipfmt  # noqa: E402,F401
