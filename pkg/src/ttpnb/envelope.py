"""Sign-then-encrypt envelopes for site-to-coordinator payloads.

The sender signs the plaintext with its RSA private key (PSS, SHA-256), then
encrypts the payload under a fresh AES-256-GCM session key. The session key
is wrapped for the recipient with RSA-OAEP (SHA-256). Ciphertext layout::

    wrapped_key (modulus bytes) || nonce (12) || AES-GCM ciphertext+tag

The sender id and scheme id are bound into the GCM associated data.

:class:`NullScheme` is an identity "envelope" for deterministic protocol
tests. It provides no confidentiality or authentication.
"""

from __future__ import annotations

import base64
import functools
import os
from collections import OrderedDict
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import IntegrityError, KeyMismatch, SignatureError, WeakParameters

MIN_RSA_BITS = 2048
RSA_SCHEME_ID = "rsa-oaep-pss+aes256gcm/v1"
NULL_SCHEME_ID = "null-UNSAFE"
_NONCE_BYTES = 12

_OAEP = padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None)
_PSS = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.MAX_LENGTH)


@dataclass(frozen=True, repr=False)
class KeyPair:
    public_part: bytes
    private_part: bytes

    def __repr__(self) -> str:
        return f"KeyPair(public_part=<{len(self.public_part)} bytes>, private_part=<redacted>)"


@dataclass(frozen=True)
class SealedEnvelope:
    sender_id: str
    scheme_id: str
    ciphertext: bytes
    signature: bytes

    def to_dict(self) -> dict:
        return {
            "sender_id": self.sender_id,
            "scheme_id": self.scheme_id,
            "ciphertext": base64.b64encode(self.ciphertext).decode("ascii"),
            "signature": base64.b64encode(self.signature).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SealedEnvelope":
        try:
            return cls(
                sender_id=str(d["sender_id"]),
                scheme_id=str(d["scheme_id"]),
                ciphertext=base64.b64decode(d["ciphertext"], validate=True),
                signature=base64.b64decode(d["signature"], validate=True),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"malformed envelope: {exc}") from None


# Keys generated in this process, so sealing does not re-parse and re-validate them.
_OWN_KEYS: "OrderedDict[bytes, rsa.RSAPrivateKey]" = OrderedDict()
_OWN_KEYS_MAX = 256


def _remember(der: bytes, key: rsa.RSAPrivateKey) -> None:
    _OWN_KEYS[der] = key
    while len(_OWN_KEYS) > _OWN_KEYS_MAX:
        _OWN_KEYS.popitem(last=False)


def _load_private(der: bytes) -> rsa.RSAPrivateKey:
    if der in _OWN_KEYS:
        return _OWN_KEYS[der]
    return _parse_private(der)


@functools.lru_cache(maxsize=64)
def _parse_private(der: bytes) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_der_private_key(der, password=None)
    except (ValueError, TypeError) as exc:
        raise KeyMismatch(f"unreadable private key: {exc}") from None
    if not isinstance(key, rsa.RSAPrivateKey):
        raise KeyMismatch("private key is not RSA")
    return key


@functools.lru_cache(maxsize=256)
def _load_public(der: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(der)
    except (ValueError, TypeError) as exc:
        raise KeyMismatch(f"unreadable public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey):
        raise KeyMismatch("public key is not RSA")
    if key.key_size < MIN_RSA_BITS:
        raise WeakParameters(f"{key.key_size}-bit RSA key is below the {MIN_RSA_BITS}-bit minimum")
    return key


def _aad(sender_id: str, scheme_id: str) -> bytes:
    return f"{scheme_id}\x00{sender_id}".encode("utf-8")


class RsaHybridScheme:
    scheme_id = RSA_SCHEME_ID

    def generate_keypair(self, bits: int = MIN_RSA_BITS) -> KeyPair:
        if bits < MIN_RSA_BITS:
            raise WeakParameters(f"{bits}-bit RSA is below the {MIN_RSA_BITS}-bit minimum")
        key = rsa.generate_private_key(public_exponent=65537, key_size=bits)
        private_der = key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
        _remember(private_der, key)
        return KeyPair(
            public_part=key.public_key().public_bytes(
                serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
            ),
            private_part=private_der,
        )

    def seal(self, payload: bytes, recipient_public: bytes, sender_private: bytes, sender_id: str = "") -> SealedEnvelope:
        recipient = _load_public(recipient_public)
        signer = _load_private(sender_private)
        signature = signer.sign(payload, _PSS, hashes.SHA256())
        session_key = AESGCM.generate_key(bit_length=256)
        nonce = os.urandom(_NONCE_BYTES)
        body = AESGCM(session_key).encrypt(nonce, payload, _aad(sender_id, self.scheme_id))
        wrapped = recipient.encrypt(session_key, _OAEP)
        return SealedEnvelope(sender_id, self.scheme_id, wrapped + nonce + body, signature)

    def open(self, e: SealedEnvelope, recipient_private: bytes, sender_public: bytes) -> bytes:
        if e.scheme_id != self.scheme_id:
            raise KeyMismatch(f"envelope scheme {e.scheme_id!r} is not {self.scheme_id!r}")
        recipient = _load_private(recipient_private)
        sender = _load_public(sender_public)
        k = recipient.key_size // 8
        if len(e.ciphertext) < k + _NONCE_BYTES + 16:
            raise IntegrityError("ciphertext too short")
        wrapped, nonce, body = e.ciphertext[:k], e.ciphertext[k:k + _NONCE_BYTES], e.ciphertext[k + _NONCE_BYTES:]
        try:
            session_key = recipient.decrypt(wrapped, _OAEP)
            payload = AESGCM(session_key).decrypt(nonce, body, _aad(e.sender_id, e.scheme_id))
        except (ValueError, InvalidTag):
            raise IntegrityError("envelope failed to decrypt (tampered or wrong recipient)") from None
        try:
            sender.verify(e.signature, payload, _PSS, hashes.SHA256())
        except InvalidSignature:
            raise SignatureError(f"signature does not verify for sender {e.sender_id!r}") from None
        return payload


class NullScheme:
    """UNSAFE identity envelope. Payload travels in clear and is not signed.

    Exists only so protocol tests can replay sessions byte for byte without
    key generation.
    """

    scheme_id = NULL_SCHEME_ID

    def generate_keypair(self, bits: int = 0) -> KeyPair:
        return KeyPair(public_part=b"null-public", private_part=b"null-private")

    def seal(self, payload: bytes, recipient_public: bytes, sender_private: bytes, sender_id: str = "") -> SealedEnvelope:
        return SealedEnvelope(sender_id, self.scheme_id, bytes(payload), b"")

    def open(self, e: SealedEnvelope, recipient_private: bytes, sender_public: bytes) -> bytes:
        if e.scheme_id != self.scheme_id:
            raise KeyMismatch(f"envelope scheme {e.scheme_id!r} is not {self.scheme_id!r}")
        return e.ciphertext


SCHEMES = {RSA_SCHEME_ID: RsaHybridScheme, NULL_SCHEME_ID: NullScheme}


def get_scheme(name: str):
    """Look up a scheme by id or by the short names ``rsa`` / ``null``."""
    aliases = {"rsa": RSA_SCHEME_ID, "null": NULL_SCHEME_ID}
    try:
        return SCHEMES[aliases.get(name, name)]()
    except KeyError:
        raise ValueError(f"unknown envelope scheme {name!r}") from None


_DEFAULT = RsaHybridScheme()


def generate_keypair(bits: int = MIN_RSA_BITS) -> KeyPair:
    return _DEFAULT.generate_keypair(bits)


def seal(payload: bytes, recipient_public: bytes, sender_private: bytes, sender_id: str = "") -> SealedEnvelope:
    return _DEFAULT.seal(payload, recipient_public, sender_private, sender_id)


def open(e: SealedEnvelope, recipient_private: bytes, sender_public: bytes) -> bytes:  # noqa: A001
    return _DEFAULT.open(e, recipient_private, sender_public)
