"""Input preprocessing: first/middle/last slicing and AES-round transforms.

A classifier never sees raw files; it sees a 1536-token window built from
three configurable slices (tokens 0-255 plus PAD=256), optionally pushed
through a reduced-round AES-128 ECB transform with a per-model secret key.
Slice geometry is the defender's `WindowSpec`; the AES step is `AesConfig`.

All functions here are pure and safe for unrestricted concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WINDOW_LEN = 1536
PAD = 256
SENTINEL = -1

__all__ = [
    "WINDOW_LEN",
    "PAD",
    "SENTINEL",
    "WindowSpec",
    "ByteWindow",
    "AesConfig",
    "extract",
    "write_back",
    "key_schedule",
    "encrypt_blocks",
    "aes_encrypt_block",
    "aes_preprocess",
]


@dataclass(frozen=True)
class WindowSpec:
    """Slice lengths (b1, b2, b3) and secret offsets (o1, o2, o3).

    b1 bytes are read starting at o1 from the file head; b2 bytes around
    the file midpoint shifted by o2; b3 bytes ending o3 bytes before the
    file tail. Lengths must total 1536 with each slice at least 128.
    """

    b1: int = 512
    b2: int = 512
    b3: int = 512
    o1: int = 0
    o2: int = 0
    o3: int = 0

    def __post_init__(self):
        if self.b1 + self.b2 + self.b3 != WINDOW_LEN:
            raise ValueError(f"slice lengths must sum to {WINDOW_LEN}")
        for b in (self.b1, self.b2, self.b3):
            if b < 128:
                raise ValueError("each slice length must be >= 128")
        if not (0 <= self.o1 <= 512 and 0 <= self.o3 <= 512):
            raise ValueError("o1 and o3 must lie in [0, 512]")
        if not (-512 <= self.o2 <= 512):
            raise ValueError("o2 must lie in [-512, 512]")

    def to_dict(self) -> dict:
        return {
            "b1": self.b1,
            "b2": self.b2,
            "b3": self.b3,
            "o1": self.o1,
            "o2": self.o2,
            "o3": self.o3,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSpec":
        return cls(**{k: int(v) for k, v in d.items()})

    def slice_bounds(self, n: int) -> list[tuple[int, int]]:
        """Real-byte extents [(start, end), ...] of the three slices in a file of n bytes."""
        s1 = min(self.o1, n)
        e1 = min(self.o1 + self.b1, n)

        anchor = n // 2 - self.b2 // 2 + self.o2
        lo, hi = 0, max(0, n - self.b2)
        s2 = min(max(anchor, lo), hi)
        e2 = min(s2 + self.b2, n)

        e3 = max(n - self.o3, 0)
        s3 = max(e3 - self.b3, 0)
        return [(s1, e1), (s2, e2), (s3, e3)]

    def slice_offsets(self) -> list[tuple[int, int]]:
        """Window-index extents of each slice: [(0, b1), (b1, b1+b2), ...]."""
        return [
            (0, self.b1),
            (self.b1, self.b1 + self.b2),
            (self.b1 + self.b2, WINDOW_LEN),
        ]


@dataclass
class ByteWindow:
    """1536 tokens plus the file offset each token came from (SENTINEL for PAD)."""

    tokens: np.ndarray  # int16[1536], values 0..256
    origin: np.ndarray  # int32[1536], file offsets or SENTINEL

    def copy(self) -> "ByteWindow":
        return ByteWindow(self.tokens.copy(), self.origin.copy())


def extract(data: bytes, spec: WindowSpec) -> ByteWindow:
    """Slice a file into its 1536-token window, PAD-filling short slices."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot extract a window from an empty file")
    arr = np.frombuffer(data, dtype=np.uint8)
    tokens = np.full(WINDOW_LEN, PAD, dtype=np.int16)
    origin = np.full(WINDOW_LEN, SENTINEL, dtype=np.int32)
    for (s, e), (ws, _) in zip(spec.slice_bounds(n), spec.slice_offsets()):
        m = e - s
        if m > 0:
            tokens[ws : ws + m] = arr[s:e]
            origin[ws : ws + m] = np.arange(s, e, dtype=np.int32)
    return ByteWindow(tokens, origin)


def write_back(data: bytes, window: ByteWindow) -> bytes:
    """Write window tokens back to their source offsets (inverse of extract).

    Window positions are applied in order, so if slices overlap on a short
    file the later slice wins; windows produced by `extract` plus in-place
    byte substitutions are always self-consistent.
    """
    buf = bytearray(data)
    live = window.origin >= 0
    offs = window.origin[live]
    vals = window.tokens[live]
    if len(offs) and (offs.max() >= len(buf)):
        raise ValueError("window origin out of bounds for this file")
    if np.any(vals > 255):
        raise ValueError("PAD token at a live origin cannot be written back")
    arr = np.frombuffer(bytes(buf), dtype=np.uint8).copy()
    arr[offs] = vals.astype(np.uint8)
    return arr.tobytes()


# ---------------------------------------------------------------------------
# AES-128, vectorized over blocks, with a configurable round count.
#
# Round r applies SubBytes, ShiftRows, MixColumns and AddRoundKey; the
# MixColumns step is skipped only in a true round 10, so rounds=10 is
# exactly standard AES-128 and external test vectors apply.

_SBOX = np.array(
    [
        0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
        0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
        0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
        0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
        0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
        0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
        0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
        0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
        0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
        0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
        0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
        0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
        0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
        0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
        0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
        0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
    ],
    dtype=np.uint8,
)

_RCON = np.array([0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36], dtype=np.uint8)

# Bytes are laid out block[i] = state[row i % 4][col i // 4] (FIPS column order).
# ShiftRows rotates row r left by r; as a flat gather over block indices:
_SHIFT_ROWS_IDX = np.array(
    [(((i // 4) + (i % 4)) % 4) * 4 + (i % 4) for i in range(16)], dtype=np.int64
)

_XTIME = np.arange(256, dtype=np.uint16)
_XTIME = (((_XTIME << 1) ^ np.where(_XTIME & 0x80, 0x1B, 0)) & 0xFF).astype(np.uint8)


@dataclass(frozen=True)
class AesConfig:
    """16-byte key plus the round count R in [1, 10]; R=10 is full AES-128."""

    key: bytes
    rounds: int = 1

    def __post_init__(self):
        if len(self.key) != 16:
            raise ValueError("AES key must be exactly 16 bytes")
        if not 1 <= self.rounds <= 10:
            raise ValueError("AES round count must lie in [1, 10]")

    def to_dict(self) -> dict:
        return {"key_hex": self.key.hex(), "rounds": self.rounds}

    @classmethod
    def from_dict(cls, d: dict) -> "AesConfig":
        return cls(key=bytes.fromhex(d["key_hex"]), rounds=int(d["rounds"]))


def key_schedule(key: bytes) -> np.ndarray:
    """Standard AES-128 expansion to 11 round keys, shape [11, 16] uint8."""
    if len(key) != 16:
        raise ValueError("AES key must be exactly 16 bytes")
    words = [np.frombuffer(key, dtype=np.uint8)[i * 4 : (i + 1) * 4].copy() for i in range(4)]
    for i in range(4, 44):
        temp = words[i - 1].copy()
        if i % 4 == 0:
            temp = np.roll(temp, -1)
            temp = _SBOX[temp]
            temp[0] ^= _RCON[i // 4 - 1]
        words.append(words[i - 4] ^ temp)
    return np.concatenate(words).reshape(11, 16)


def _mix_columns(state: np.ndarray) -> np.ndarray:
    # state: [N, 16] with columns at [:, 4c:4c+4]
    s = state.reshape(-1, 4, 4)  # [N, col, row]
    a0, a1, a2, a3 = s[:, :, 0], s[:, :, 1], s[:, :, 2], s[:, :, 3]
    x0, x1, x2, x3 = _XTIME[a0], _XTIME[a1], _XTIME[a2], _XTIME[a3]
    out = np.empty_like(s)
    out[:, :, 0] = x0 ^ (x1 ^ a1) ^ a2 ^ a3
    out[:, :, 1] = a0 ^ x1 ^ (x2 ^ a2) ^ a3
    out[:, :, 2] = a0 ^ a1 ^ x2 ^ (x3 ^ a3)
    out[:, :, 3] = (x0 ^ a0) ^ a1 ^ a2 ^ x3
    return out.reshape(-1, 16)


def encrypt_blocks(blocks: np.ndarray, round_keys: np.ndarray, rounds: int) -> np.ndarray:
    """Encrypt [N, 16] uint8 blocks with the given schedule and round count."""
    if not 1 <= rounds <= 10:
        raise ValueError("AES round count must lie in [1, 10]")
    state = blocks.astype(np.uint8) ^ round_keys[0]
    for r in range(1, rounds + 1):
        state = _SBOX[state]
        state = state[:, _SHIFT_ROWS_IDX]
        if r != 10:
            state = _mix_columns(state)
        state = state ^ round_keys[r]
    return state


def aes_encrypt_block(block: bytes, key: bytes, rounds: int) -> bytes:
    """Single-block convenience wrapper around `encrypt_blocks`."""
    if len(block) != 16:
        raise ValueError("AES block must be exactly 16 bytes")
    rk = key_schedule(key)
    out = encrypt_blocks(np.frombuffer(block, dtype=np.uint8).reshape(1, 16), rk, rounds)
    return out.tobytes()


def aes_preprocess(window: ByteWindow, cfg: AesConfig, spec: WindowSpec) -> ByteWindow:
    """Encrypt each slice's real bytes in ECB mode, zero-padded to 16-byte blocks.

    PAD tokens never enter the cipher: the real (non-PAD) prefix of each
    slice is zero-padded up to a block boundary, encrypted, and written
    back; the remainder of the slice stays PAD. Origins are preserved
    positionally. With slice lengths that are multiples of 16 (enforced at
    model build time) the ciphertext always fits its slice.
    """
    rk = key_schedule(cfg.key)
    tokens = window.tokens.copy()
    for ws, we in spec.slice_offsets():
        sl = tokens[ws:we]
        real = int((sl != PAD).sum())
        if real == 0:
            continue
        padded = -(-real // 16) * 16
        if padded > we - ws:
            raise ValueError(
                "encrypted slice would overflow its length; "
                "use slice lengths that are multiples of 16 with AES"
            )
        buf = np.zeros(padded, dtype=np.uint8)
        buf[:real] = sl[:real].astype(np.uint8)
        enc = encrypt_blocks(buf.reshape(-1, 16), rk, cfg.rounds).reshape(-1)
        sl[:padded] = enc.astype(np.int16)
    return ByteWindow(tokens, window.origin.copy())
