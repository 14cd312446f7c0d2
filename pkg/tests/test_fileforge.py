import zlib

import numpy as np
import pytest

from bytelab import fileforge as ff
from bytelab.windowing import WindowSpec

ALL = ff.format_names()
PARASITE_OR_FULL = [n for n in ALL if ff.format_spec(n).category != "scattered"]


# --------------------------------------------------------------------------
# independent CRC32 reference (test-only): reflected polynomial 0xEDB88320


def _crc32_table() -> list[int]:
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ 0xEDB88320 if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _crc32_table()


def ref_crc32(data: bytes) -> int:
    c = 0xFFFFFFFF
    for b in data:
        c = _TABLE[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


def test_crc32_check_value():
    assert ref_crc32(b"123456789") == 0xCBF43926
    assert zlib.crc32(b"123456789") == 0xCBF43926


def test_crc32_reference_agrees_with_production_path():
    rng = np.random.default_rng(0)
    for n in (0, 1, 17, 300):
        buf = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        assert ref_crc32(buf) == zlib.crc32(buf)


# --------------------------------------------------------------------------
# generator / validator closure


@pytest.mark.parametrize("name", ALL)
def test_generated_files_validate(name):
    for seed in (0, 7, 1234):
        sample = ff.generate(name, seed, 4096)
        assert ff.validate(name, sample.data) == []
        assert sample.label == name


@pytest.mark.parametrize("name", ALL)
def test_generation_is_deterministic(name):
    a = ff.generate(name, 42, 5000)
    b = ff.generate(name, 42, 5000)
    assert a.data == b.data
    c = ff.generate(name, 43, 5000)
    assert c.data != a.data


def test_size_hint_below_minimum_rejected():
    with pytest.raises(ValueError):
        ff.generate("zip", 1, 64)


# --------------------------------------------------------------------------
# forced failures


def test_png_crc_flip_is_reported():
    data = bytearray(ff.generate("png", 5, 4096).data)
    # chunk walk: IHDR data starts at 16; its CRC lives at 8+8+13 = 29..33
    data[29] ^= 0xFF
    bad = ff.validate("png", bytes(data))
    assert any("crc" in v.where for v in bad)


def test_zip_eocd_corruption_is_reported():
    data = bytearray(ff.generate("zip", 5, 4096).data)
    eocd = bytes(data).rfind(b"PK\x05\x06")
    data[eocd + 16 : eocd + 20] = b"\xff\xff\xff\xff"  # cd offset
    bad = ff.validate("zip", bytes(data))
    assert bad and "zip" in bad[0].where


def test_tar_checksum_breaks_without_repair():
    sample = ff.generate("tar", 5, 4096)
    bsmap = ff.blindspots("tar", sample.data)
    pos = next(p for p in bsmap.positions() if bsmap.alphabet_of(int(p)).size == 256 and p < 512)
    data = bytearray(sample.data)
    data[pos] ^= 0x5A
    assert ff.validate("tar", bytes(data)) != []
    assert ff.validate("tar", ff.repair("tar", bytes(data))) == []


# --------------------------------------------------------------------------
# blind-spot soundness (sampled; the acceptance suite runs it exhaustively)


@pytest.mark.parametrize("name", ALL)
def test_blindspot_soundness_sampled(name):
    rng = np.random.default_rng(99)
    sample = ff.generate(name, 11, 4096)
    bsmap = ff.blindspots(name, sample.data)
    positions = bsmap.positions()
    if positions.size == 0:
        pytest.skip(f"{name} yields no blind spots at this size")
    base_fp = ff.fingerprint(name, sample.data)
    picks = rng.choice(positions, size=min(40, positions.size), replace=False)
    for pos in picks:
        alphabet = bsmap.alphabet_of(int(pos))
        for val in rng.choice(alphabet, size=4):
            data = bytearray(sample.data)
            data[pos] = val
            repaired = ff.repair(name, bytes(data))
            assert ff.validate(name, repaired) == [], (name, pos, val)
            assert ff.fingerprint(name, repaired) == base_fp, (name, pos, val)


def test_png_signature_never_blind():
    sample = ff.generate("png", 3, 4096)
    positions = ff.blindspots("png", sample.data).positions()
    assert positions.min() >= 8, "PNG signature bytes must stay out of the map"


def test_blindspots_reject_invalid_file():
    with pytest.raises(ValueError):
        ff.blindspots("png", b"\x89PNG\r\n\x1a\x00garbage")


@pytest.mark.parametrize("name", ALL)
def test_repair_idempotent_and_identity(name):
    sample = ff.generate(name, 21, 4096)
    assert ff.repair(name, sample.data) == sample.data
    bsmap = ff.blindspots(name, sample.data)
    positions = bsmap.positions()
    if positions.size == 0:
        return
    data = bytearray(sample.data)
    pos = int(positions[len(positions) // 2])
    data[pos] = int(bsmap.alphabet_of(pos)[0])
    once = ff.repair(name, bytes(data))
    assert ff.repair(name, once) == once


# --------------------------------------------------------------------------
# parasite preparation


def test_prepare_parasite_pdf_1000():
    sample = ff.generate("pdf", 31, 4096)
    out, bsmap = ff.prepare_parasite("pdf", sample.data, 1000)
    assert bsmap.count_in(0, 2048) >= 1000
    assert ff.validate("pdf", out) == []
    assert ff.fingerprint("pdf", out) == ff.fingerprint("pdf", sample.data)


def test_prepare_parasite_zip_2000():
    sample = ff.generate("zip", 31, 4096)
    out, bsmap = ff.prepare_parasite("zip", sample.data, 2000)
    assert bsmap.count_in(0, 2048) >= 2000
    assert ff.validate("zip", out) == []
    assert ff.fingerprint("zip", out) == ff.fingerprint("zip", sample.data)


@pytest.mark.parametrize("name", PARASITE_OR_FULL)
def test_prepare_parasite_1000_everywhere(name):
    sample = ff.generate(name, 33, 4096)
    out, bsmap = ff.prepare_parasite(name, sample.data, 1000)
    assert bsmap.count_in(0, 2048) >= 1000
    assert ff.validate(name, out) == []


def test_prepare_parasite_json_capacity_error():
    sample = ff.generate("json", 31, 4096)
    with pytest.raises(ff.CapacityError):
        ff.prepare_parasite("json", sample.data, 1000)


def test_pdf_head_comment_lands_in_first_slice():
    sample = ff.generate("pdf", 8, 4096)
    bsmap = ff.blindspots("pdf", sample.data)
    assert bsmap.count_in(0, 512) >= 64


# --------------------------------------------------------------------------
# window restriction and serialization


def test_window_restriction():
    sample = ff.generate("pdf", 13, 6000)
    spec = WindowSpec()
    restricted = ff.window_blindspots("pdf", sample.data, spec)
    spans = spec.slice_bounds(len(sample.data))
    for pos in restricted.positions():
        assert any(s <= pos < e for s, e in spans)
    full = ff.blindspots("pdf", sample.data)
    assert restricted.positions().size <= full.positions().size


def test_bsmap_json_round_trip():
    sample = ff.generate("zip", 17, 4096)
    bsmap = ff.blindspots("zip", sample.data)
    again = ff.BlindSpotMap.from_json(bsmap.to_json())
    assert np.array_equal(again.positions(), bsmap.positions())
    assert again.alphabet_names() == bsmap.alphabet_names()


def test_corpus_write_read(tmp_path):
    rows = ff.write_corpus(tmp_path, per_class=2, seed=5, labels=["png", "txt"], sidecars=True)
    assert len(rows) == 4
    pairs = ff.read_corpus(tmp_path)
    assert len(pairs) == 4
    for data, label in pairs:
        assert ff.validate(label, data) == []
    assert (tmp_path / "manifest.csv").exists()
    sidecars = list(tmp_path.glob("*/*.bsmap.json"))
    assert len(sidecars) == 4
