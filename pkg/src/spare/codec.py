"""Encrypted query-parameter tokens.

A token binds a request to the instant it was minted and the device that
minted it.  The plaintext ``<timestamp>@<device_id>`` is encrypted with
AES-128-CBC (PKCS#7 padding) and carried in the URL as unpadded URL-safe
base64.

.. warning::
   The IV is fixed by configuration, so equal payloads always produce equal
   tokens.  That determinism is deliberate (tokens are reproducible and
   replay detection can key on them) but it leaks plaintext equality and the
   scheme is not authenticated.  Do not reuse the key material for anything
   else.
"""
from __future__ import annotations

import base64
import binascii
import re
from dataclasses import dataclass, field
from functools import lru_cache
from urllib.parse import parse_qs, urlsplit

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from spare.exceptions import (
    InvalidKeyMaterial,
    InvalidPayload,
    MalformedPayload,
    TokenUndecodable,
    TokenUndecryptable,
)

SEPARATOR = "@"
BLOCK_SIZE = 16
MAX_DEVICE_ID_LEN = 64

_DEVICE_ID_RE = re.compile(r"[\x21-\x3f\x41-\x7e]{1,%d}" % MAX_DEVICE_ID_LEN)
_TIMESTAMP_RE = re.compile(r"[0-9]+")
_B64URL_RE = re.compile(r"[A-Za-z0-9_-]*")


@dataclass(frozen=True)
class TokenPayload:
    timestamp_utc: int
    device_id: str


@dataclass(frozen=True)
class Token:
    ciphertext_b64url: str

    def __str__(self) -> str:
        return self.ciphertext_b64url


@dataclass(frozen=True)
class KeyMaterial:
    key: bytes = field(repr=False)
    iv: bytes = field(repr=False)

    def __post_init__(self):
        for name in ("key", "iv"):
            value = getattr(self, name)
            if not isinstance(value, bytes) or len(value) != BLOCK_SIZE:
                raise InvalidKeyMaterial(f"{name} must be exactly {BLOCK_SIZE} bytes")

    @classmethod
    def from_hex(cls, key_hex: str, iv_hex: str) -> "KeyMaterial":
        try:
            return cls(bytes.fromhex(key_hex), bytes.fromhex(iv_hex))
        except ValueError as exc:
            raise InvalidKeyMaterial(str(exc)) from None

    def to_hex(self) -> dict[str, str]:
        return {"key_hex": self.key.hex(), "iv_hex": self.iv.hex()}


def validate_device_id(device_id: str) -> None:
    if not isinstance(device_id, str) or not _DEVICE_ID_RE.fullmatch(device_id):
        raise InvalidPayload(
            f"device_id must be 1-{MAX_DEVICE_ID_LEN} printable ASCII characters "
            f"without whitespace or {SEPARATOR!r}: {device_id!r}"
        )


def format_payload(p: TokenPayload) -> str:
    ts = p.timestamp_utc
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        raise InvalidPayload(f"timestamp_utc must be a non-negative integer: {ts!r}")
    validate_device_id(p.device_id)
    return f"{ts}{SEPARATOR}{p.device_id}"


def parse_payload(s: str) -> TokenPayload:
    parts = s.split(SEPARATOR)
    if len(parts) != 2:
        raise MalformedPayload(f"expected exactly one {SEPARATOR!r} in payload")
    ts, device_id = parts
    if not _TIMESTAMP_RE.fullmatch(ts):
        raise MalformedPayload(f"timestamp is not a decimal integer: {ts!r}")
    try:
        validate_device_id(device_id)
    except InvalidPayload as exc:
        raise MalformedPayload(str(exc)) from None
    return TokenPayload(int(ts), device_id)


@lru_cache(maxsize=32)
def _cipher(key: bytes, iv: bytes) -> Cipher:
    return Cipher(algorithms.AES(key), modes.CBC(iv))


def _pad(data: bytes) -> bytes:
    n = BLOCK_SIZE - len(data) % BLOCK_SIZE
    return data + bytes([n]) * n


def _unpad(data: bytes) -> bytes:
    n = data[-1]
    if not 1 <= n <= BLOCK_SIZE or data[-n:] != bytes([n]) * n:
        raise TokenUndecryptable("invalid PKCS#7 padding")
    return data[:-n]


def b64url_encode(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not _B64URL_RE.fullmatch(text) or len(text) % 4 == 1:
        raise TokenUndecodable("not unpadded URL-safe base64")
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except binascii.Error as exc:
        raise TokenUndecodable(str(exc)) from None


def mint_token(p: TokenPayload, k: KeyMaterial) -> Token:
    plaintext = _pad(format_payload(p).encode("ascii"))
    enc = _cipher(k.key, k.iv).encryptor()
    return Token(b64url_encode(enc.update(plaintext) + enc.finalize()))


def open_token(t: Token, k: KeyMaterial) -> TokenPayload:
    raw = b64url_decode(t.ciphertext_b64url)
    if not raw or len(raw) % BLOCK_SIZE:
        raise TokenUndecodable(f"ciphertext length {len(raw)} is not a positive multiple of 16")
    dec = _cipher(k.key, k.iv).decryptor()
    plaintext = _unpad(dec.update(raw) + dec.finalize())
    try:
        text = plaintext.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedPayload("plaintext is not ASCII") from None
    return parse_payload(text)


def embed_token(base_url: str, t: Token, resubmit: bool = False) -> str:
    if "?" in base_url:
        raise ValueError(f"base_url already has a query string: {base_url!r}")
    flag = "true" if resubmit else "false"
    return f"{base_url}?id={t.ciphertext_b64url}&resubmit={flag}"


def extract_token(url: str) -> tuple[Token | None, bool]:
    """Pull ``(token, resubmit)`` out of a URL or bare query string.

    Absence is a value here: a missing or empty ``id`` gives ``None`` and the
    firewall decides what that means.  ``resubmit`` is true only for the
    literal ``true`` (case-insensitive).
    """
    query = urlsplit(url).query if "?" in url or "://" in url else url
    params = parse_qs(query, keep_blank_values=True)
    ids = params.get("id")
    token = Token(ids[0]) if ids and ids[0] else None
    resubmit = params.get("resubmit", ["false"])[0].lower() == "true"
    return token, resubmit
