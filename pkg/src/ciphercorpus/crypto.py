"""Deterministic entity encryption into typed cipher tokens.

A PII surface is canonicalized, UTF-8 encoded, PKCS7-padded, encrypted with
AES (ECB by default, SIV optional), Base64-encoded, and rendered with a type
prefix, e.g. ``Person_[ZGVhZGJlZWY=...]``. Identical (surface, key) pairs
always produce identical tokens so repeated mentions stay linkable.

Decryption tolerates the two corruption patterns LLM generations introduce:
stripped Base64 padding (repaired by appending ``=``) and broken block
padding (flagged for manual review, never auto-corrected).
"""

from __future__ import annotations

import base64
import hashlib
import re
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESSIV

from .corpus import Document
from .errors import EmptySurface, IoFailure, OverlappingSpans

BLOCK_SIZE = 16

MODE_ECB = "ecb"
MODE_SIV = "siv"

# Fixed rendering prefixes per entity type; unknown types fall back to "Ent".
PREFIX_TABLE = {
    "PERSON": "Person",
    "LOCATION": "Location",
    "PHONE": "Phone",
    "ID_NUMBER": "ID",
    "BANK_CARD": "Card",
    "DATE": "Date",
    "ORG": "Org",
    "OTHER": "Ent",
}
_PREFIX_TO_TYPE = {v: k for k, v in PREFIX_TABLE.items()}

_TOKEN_RE = re.compile(
    r"(?P<prefix>" + "|".join(sorted(PREFIX_TABLE.values())) + r")_\[(?P<payload>[A-Za-z0-9+/=]*)\]"
)

STATUS_OK = "ok"
STATUS_OK_REPAIRED = "ok_repaired_base64"
STATUS_FAIL_BASE64 = "fail_base64"
STATUS_FAIL_PADDING = "fail_padding"
STATUS_FAIL_NOT_IN_INVENTORY = "fail_not_in_inventory"


def canonicalize(surface: str, casefold: bool = False) -> str:
    """Canonical entity form: NFC normalization + trim, optional casefold."""
    out = unicodedata.normalize("NFC", surface).strip()
    if casefold:
        out = out.casefold()
    return out


@dataclass(frozen=True)
class KeyMaterial:
    """An AES key (16 or 32 bytes) with a label recorded into rewrites."""

    key_bytes: bytes
    key_id: str = "default"
    mode: str = MODE_ECB
    casefold: bool = False

    def __post_init__(self):
        if len(self.key_bytes) not in (16, 32):
            raise ValueError("key must be 16 or 32 bytes")
        if self.mode not in (MODE_ECB, MODE_SIV):
            raise ValueError(f"unknown cipher mode {self.mode!r}")
        if self.mode == MODE_SIV and len(self.key_bytes) != 32:
            raise ValueError("siv mode requires a 32-byte key")

    @classmethod
    def from_hex_file(cls, path: str | Path, **kwargs) -> "KeyMaterial":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise IoFailure(path, exc) from exc
        return cls(bytes.fromhex(text), key_id=path.stem, **kwargs)

    @classmethod
    def from_passphrase(cls, passphrase: str, key_len: int = 16, **kwargs) -> "KeyMaterial":
        salt = b"ciphercorpus-kdf-v1"
        key = hashlib.scrypt(
            passphrase.encode("utf-8"), salt=salt, n=2**14, r=8, p=1, dklen=key_len
        )
        kwargs.setdefault("key_id", "passphrase")
        return cls(key, **kwargs)


@dataclass(frozen=True)
class CipherToken:
    """A typed deterministic ciphertext with a canonical text rendering."""

    entity_type: str
    payload_b64: str

    @property
    def rendering(self) -> str:
        prefix = PREFIX_TABLE.get(self.entity_type, "Ent")
        return f"{prefix}_[{self.payload_b64}]"


@dataclass(frozen=True)
class ParsedToken:
    """A token occurrence found in text; malformed payloads kept for repair."""

    token: CipherToken
    start: int
    end: int
    valid: bool


@dataclass(frozen=True)
class DecryptOutcome:
    status: str
    plaintext: str | None = None
    note: str = ""
    payload_b64: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (STATUS_OK, STATUS_OK_REPAIRED)


def pkcs7_pad(data: bytes) -> bytes:
    pad = BLOCK_SIZE - (len(data) % BLOCK_SIZE)
    return data + bytes([pad]) * pad


def pkcs7_unpad(data: bytes) -> bytes:
    """Strip PKCS7 padding; raises ValueError on invalid padding bytes."""
    if not data or len(data) % BLOCK_SIZE != 0:
        raise ValueError("data length is not a multiple of the block size")
    pad = data[-1]
    if pad < 1 or pad > BLOCK_SIZE or data[-pad:] != bytes([pad]) * pad:
        raise ValueError("invalid padding bytes")
    return data[:-pad]


def _raw_encrypt(padded: bytes, key: KeyMaterial) -> bytes:
    if key.mode == MODE_SIV:
        return AESSIV(key.key_bytes).encrypt(padded, None)
    encryptor = Cipher(algorithms.AES(key.key_bytes), modes.ECB()).encryptor()
    return encryptor.update(padded) + encryptor.finalize()


def _raw_decrypt(blob: bytes, key: KeyMaterial) -> bytes:
    if key.mode == MODE_SIV:
        return AESSIV(key.key_bytes).decrypt(blob, None)
    decryptor = Cipher(algorithms.AES(key.key_bytes), modes.ECB()).decryptor()
    return decryptor.update(blob) + decryptor.finalize()


def aes_ecb_encrypt_block(block: bytes, key_bytes: bytes) -> bytes:
    """Encrypt one raw 16-byte block; exposed for reference-vector checks."""
    if len(block) != BLOCK_SIZE:
        raise ValueError("block must be exactly 16 bytes")
    encryptor = Cipher(algorithms.AES(key_bytes), modes.ECB()).encryptor()
    return encryptor.update(block) + encryptor.finalize()


def encrypt_entity(surface: str, entity_type: str, key: KeyMaterial) -> CipherToken:
    """Deterministically encrypt a canonicalized surface into a typed token."""
    canonical = canonicalize(surface, casefold=key.casefold)
    if not canonical:
        raise EmptySurface(f"surface {surface!r} is empty after canonicalization")
    padded = pkcs7_pad(canonical.encode("utf-8"))
    blob = _raw_encrypt(padded, key)
    payload = base64.b64encode(blob).decode("ascii")
    return CipherToken(entity_type=entity_type, payload_b64=payload)


def render(token: CipherToken) -> str:
    return token.rendering


def parse_cipher_tokens(text: str) -> list[ParsedToken]:
    """Find every substring matching the token grammar ``Prefix_[base64]``.

    Malformed payloads (bad alignment, bad length) are still captured with
    valid=False so downstream repair and failure audits can see them.
    """
    out: list[ParsedToken] = []
    for match in _TOKEN_RE.finditer(text):
        payload = match.group("payload")
        entity_type = _PREFIX_TO_TYPE[match.group("prefix")]
        out.append(
            ParsedToken(
                token=CipherToken(entity_type=entity_type, payload_b64=payload),
                start=match.start(),
                end=match.end(),
                valid=_payload_well_formed(payload),
            )
        )
    return out


def _payload_well_formed(payload: str) -> bool:
    if not payload or len(payload) % 4 != 0:
        return False
    try:
        blob = base64.b64decode(payload, validate=True)
    except ValueError:
        return False
    return len(blob) > 0 and len(blob) % BLOCK_SIZE == 0


def repair_base64(s: str) -> tuple[str, bool]:
    """Append ``=`` until the length is a multiple of 4 (at most 3 chars).

    Returns (candidate, repaired); repaired is True only when characters were
    appended and the result actually decodes.
    """
    missing = (-len(s)) % 4
    candidate = s + "=" * missing
    if missing == 0:
        return s, False
    try:
        base64.b64decode(candidate, validate=True)
    except ValueError:
        return candidate, False
    return candidate, True


def decrypt_token(token: CipherToken, key: KeyMaterial) -> DecryptOutcome:
    """Decrypt one token, repairing Base64 alignment but never padding."""
    payload = token.payload_b64
    repaired = False
    if len(payload) % 4 != 0:
        payload, repaired = repair_base64(payload)
        if not repaired:
            return DecryptOutcome(
                status=STATUS_FAIL_BASE64,
                note="payload length not a multiple of 4 and repair failed",
                payload_b64=token.payload_b64,
            )
    try:
        blob = base64.b64decode(payload, validate=True)
    except ValueError:
        return DecryptOutcome(
            status=STATUS_FAIL_BASE64,
            note="payload is not decodable Base64",
            payload_b64=token.payload_b64,
        )
    if len(blob) == 0 or len(blob) % BLOCK_SIZE != 0:
        return DecryptOutcome(
            status=STATUS_FAIL_PADDING,
            note=f"decoded payload is {len(blob)} bytes, not a multiple of {BLOCK_SIZE}",
            payload_b64=token.payload_b64,
        )
    try:
        plain_bytes = pkcs7_unpad(_raw_decrypt(blob, key))
    except Exception:
        return DecryptOutcome(
            status=STATUS_FAIL_PADDING,
            note="block decryption or padding strip failed; flagged for manual review",
            payload_b64=token.payload_b64,
        )
    try:
        plaintext = plain_bytes.decode("utf-8")
    except UnicodeDecodeError:
        return DecryptOutcome(
            status=STATUS_FAIL_PADDING,
            note="plaintext is not valid UTF-8; flagged for manual review",
            payload_b64=token.payload_b64,
        )
    return DecryptOutcome(
        status=STATUS_OK_REPAIRED if repaired else STATUS_OK,
        plaintext=plaintext,
        note="base64 padding restored" if repaired else "",
        payload_b64=token.payload_b64,
    )


def rewrite_encrypt(
    doc: Document, spans: list, key: KeyMaterial
) -> tuple[Document, list[CipherToken]]:
    """Replace each span's surface with its token rendering.

    Spans must be non-overlapping and valid for the document; replacement
    runs right-to-left so earlier offsets stay valid. Token list is returned
    in span order (left-to-right).
    """
    ordered = sorted(spans, key=lambda s: s.start)
    for left, right in zip(ordered, ordered[1:]):
        if left.end > right.start:
            raise OverlappingSpans(f"spans {left} and {right} overlap")
    text = doc.text
    tokens: list[CipherToken] = []
    for span in ordered:
        if text[span.start : span.end] != span.surface:
            raise ValueError(
                f"span surface {span.surface!r} does not match document text"
            )
        tokens.append(encrypt_entity(span.surface, span.entity_type, key))
    for span, token in zip(reversed(ordered), reversed(tokens)):
        text = text[: span.start] + token.rendering + text[span.end :]
    meta = dict(doc.meta)
    meta["key_id"] = key.key_id
    meta["cipher_mode"] = key.mode
    new_doc = replace(doc, text=text, meta=meta)
    return new_doc, tokens


def rewrite_decrypt(text: str, key: KeyMaterial) -> tuple[str, list[DecryptOutcome]]:
    """Replace every decryptable token with its plaintext.

    Failed tokens are left verbatim; one outcome is reported per parsed token
    in text order.
    """
    outcomes: list[DecryptOutcome] = []
    parsed = parse_cipher_tokens(text)
    pieces: list[str] = []
    cursor = 0
    for item in parsed:
        outcome = decrypt_token(item.token, key)
        outcomes.append(outcome)
        pieces.append(text[cursor : item.start])
        pieces.append(outcome.plaintext if outcome.ok else text[item.start : item.end])
        cursor = item.end
    pieces.append(text[cursor:])
    return "".join(pieces), outcomes


def encrypt_text_with_inventory(
    text: str,
    entries: list[tuple[str, str]],
    key: KeyMaterial,
    types: set[str] | None = None,
) -> str:
    """Replace known plaintext surfaces with their cipher renderings.

    ``entries`` is a list of (surface, entity_type). Longer surfaces are
    replaced first so that nested mentions resolve to the longest match.
    Used to encrypt questions at evaluation time with the same key as the
    training corpus.
    """
    chosen = [
        (canonicalize(s, casefold=key.casefold), t)
        for s, t in entries
        if types is None or t in types
    ]
    chosen = [(s, t) for s, t in chosen if s]
    chosen.sort(key=lambda e: (-len(e[0]), e[0]))
    for surface, entity_type in chosen:
        if surface in text:
            token = encrypt_entity(surface, entity_type, key)
            text = text.replace(surface, token.rendering)
    return text
