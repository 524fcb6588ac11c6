"""Mock threshold-signature scheme.

A share is a ``(signer, tag)`` pair and verification is structural
equality, so signing is free and deterministic.  The :class:`Scheme`
interface is the seam where a real threshold scheme would plug in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

DIGEST_SIZE = 32


class CryptoError(Exception):
    pass


class InsufficientShares(CryptoError):
    pass


class MixedTags(CryptoError):
    pass


def digest(data: bytes) -> bytes:
    """32-byte digest of ``data`` (blake2b; collision-free at simulation scale)."""
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


@dataclass(frozen=True, slots=True)
class SignatureShare:
    signer: int
    tag: bytes


@dataclass(frozen=True, slots=True)
class AggregateSignature:
    signers: frozenset[int]
    tag: bytes


class Scheme:
    """Interface of a signature-share scheme."""

    def sign(self, replica: int, message: bytes) -> SignatureShare:
        raise NotImplementedError

    def verify(self, share: SignatureShare, message: bytes, replica: int) -> bool:
        raise NotImplementedError

    def aggregate(self, shares, threshold: int) -> AggregateSignature:
        raise NotImplementedError

    def verify_aggregate(self, agg: AggregateSignature, message: bytes, threshold: int) -> bool:
        raise NotImplementedError


class MockScheme(Scheme):
    def sign(self, replica, message):
        return SignatureShare(replica, digest(message))

    def verify(self, share, message, replica):
        return share.signer == replica and share.tag == digest(message)

    def aggregate(self, shares, threshold):
        shares = list(shares)
        tags = {s.tag for s in shares}
        if len(tags) > 1:
            raise MixedTags(f"{len(tags)} distinct tags")
        signers = frozenset(s.signer for s in shares)
        if len(signers) < threshold:
            raise InsufficientShares(f"{len(signers)} distinct signers < {threshold}")
        return AggregateSignature(signers, tags.pop())

    def verify_aggregate(self, agg, message, threshold):
        return len(agg.signers) >= threshold and agg.tag == digest(message)


MOCK = MockScheme()


def sign(replica: int, message: bytes) -> SignatureShare:
    return MOCK.sign(replica, message)


def verify(share: SignatureShare, message: bytes, replica: int) -> bool:
    return MOCK.verify(share, message, replica)


def aggregate(shares, threshold: int) -> AggregateSignature:
    return MOCK.aggregate(shares, threshold)


class Signer:
    """Signing capability for one replica.

    Handing out a ``Signer`` is the only way modules obtain shares, so the
    adversary can sign exactly as the replicas it controls.
    """

    __slots__ = ("replica", "_scheme")

    def __init__(self, replica: int, scheme: Scheme = MOCK):
        self.replica = replica
        self._scheme = scheme

    def sign(self, message: bytes) -> SignatureShare:
        return self._scheme.sign(self.replica, message)

    def __repr__(self):
        return f"Signer({self.replica})"


@dataclass(frozen=True)
class ClusterKeys:
    """Key identities for ``n = 3f + 1`` replicas (mock: identity = replica id).

    ``threshold`` defaults to ``2f + 1``; overriding it exists only for the
    checker's mutation canary.
    """

    n: int
    f: int
    threshold: int | None = None
    scheme: Scheme = MOCK

    def __post_init__(self):
        if self.n != 3 * self.f + 1:
            raise ValueError(f"n={self.n} must equal 3f+1 (f={self.f})")
        if self.threshold is None:
            object.__setattr__(self, "threshold", 2 * self.f + 1)

    @property
    def quorum(self) -> int:
        return self.threshold

    def signer(self, replica: int) -> Signer:
        if not 0 <= replica < self.n:
            raise ValueError(f"replica {replica} outside [0, {self.n})")
        return Signer(replica, self.scheme)

    def verify(self, share: SignatureShare, message: bytes, replica: int) -> bool:
        return 0 <= replica < self.n and self.scheme.verify(share, message, replica)

    def aggregate(self, shares) -> AggregateSignature:
        return self.scheme.aggregate(shares, self.threshold)

    def verify_aggregate(self, agg: AggregateSignature, message: bytes) -> bool:
        if any(not 0 <= s < self.n for s in agg.signers):
            return False
        return self.scheme.verify_aggregate(agg, message, self.threshold)
