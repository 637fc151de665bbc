"""AEAD payload encryption and key derivation.

Payloads use AES-256-GCM.  Owner keys are wrapped under the manager's
sealing key (the simulated enclave secret) so jobs can decrypt inputs
without the owner online.  Derived capsules and job results use keys
obtained by HKDF-SHA256 from the same secret.
"""

from __future__ import annotations

import os

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import DecryptFailed

KEY_BYTES = 32
NONCE_BYTES = 12


def generate_key() -> bytes:
    return AESGCM.generate_key(bit_length=256)


def fresh_nonce() -> bytes:
    return os.urandom(NONCE_BYTES)


def check_key(key: bytes) -> bytes:
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_BYTES:
        raise DecryptFailed("keys are 256-bit (32 bytes)")
    return bytes(key)


def encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if len(nonce) != NONCE_BYTES:
        raise ValueError("nonce must be 96 bits")
    return AESGCM(check_key(key)).encrypt(nonce, plaintext, aad)


def decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(check_key(key)).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        raise DecryptFailed("authentication failed: wrong key or tampered data") from None


def derive_key(secret: bytes, purpose: str) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_BYTES,
        salt=None,
        info=b"capsuleguard:" + purpose.encode("utf-8"),
    ).derive(secret)


def wrap_key(sealing_key: bytes, key: bytes, label: str) -> tuple[bytes, bytes]:
    nonce = fresh_nonce()
    return nonce, encrypt(sealing_key, nonce, check_key(key), label.encode("utf-8"))


def unwrap_key(sealing_key: bytes, nonce: bytes, wrapped: bytes, label: str) -> bytes:
    return decrypt(sealing_key, nonce, wrapped, label.encode("utf-8"))
