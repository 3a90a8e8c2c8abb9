"""Synchronous BIAWGN channel: BPSK bits through a sparse signature code.

The received chip value is y_mu = nu_mu + sum_k b_k s_{mu k} with chip noise
nu iid Gaussian(0, sigma0^2).  The power spectral density Q = 1/(2 sigma0^2)
is always derived from sigma0, never stored independently, so the pair can
not drift apart.  Gaussian draws use Generator.standard_normal on the seeded
numpy PCG64 generator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .ensemble import SparseCode
from .errors import DomainError
from .util import as_rng


def psd_Q(sigma0: float) -> float:
    """Power spectral density Q = 1/(2 sigma0^2)."""
    if sigma0 <= 0:
        raise DomainError(f"sigma0 must be positive, got {sigma0}")
    return 1.0 / (2.0 * sigma0 * sigma0)


def sigma0_from_Q(Q: float) -> float:
    if Q <= 0:
        raise DomainError(f"Q must be positive, got {Q}")
    return math.sqrt(1.0 / (2.0 * Q))


def sample_bits(K: int, rng) -> np.ndarray:
    """K iid uniform +/-1 bits."""
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    rng = as_rng(rng)
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=K)


@dataclass
class TransmissionRecord:
    """One channel use: sent bits, noise realisation, received signal.

    sigma0 == 0 encodes a noiseless transmission (noise identically zero);
    Q is then infinite and detection must be run with an explicit Q.
    """

    bits: np.ndarray
    noise: np.ndarray
    received: np.ndarray
    sigma0: float
    code_ref: str | None = None
    seed: int | None = None

    @property
    def Q(self) -> float:
        if self.sigma0 == 0:
            return math.inf
        return psd_Q(self.sigma0)

    @property
    def K(self) -> int:
        return len(self.bits)

    @property
    def N(self) -> int:
        return len(self.received)


def transmit(code: SparseCode, bits, sigma0: float, rng) -> TransmissionRecord:
    """Send `bits` through `code` with chip noise level sigma0 (>= 0)."""
    bits = np.asarray(bits)
    if bits.shape != (code.K,):
        raise DomainError(f"bits must have length K={code.K}, got {bits.shape}")
    if not np.all(np.abs(bits) == 1):
        raise DomainError("bits must be +/-1")
    if sigma0 < 0:
        raise DomainError(f"sigma0 must be >= 0, got {sigma0}")
    rng = as_rng(rng)
    noise = sigma0 * rng.standard_normal(code.N)
    received = noise.copy()
    np.add.at(received, code.edge_chip,
              bits[code.edge_user].astype(float) * code.edge_value)
    return TransmissionRecord(bits=bits.astype(np.int8), noise=noise,
                              received=received, sigma0=float(sigma0))


def signal_only(code: SparseCode, bits) -> np.ndarray:
    """sum_k b_k s_{mu k} per chip, without noise."""
    bits = np.asarray(bits)
    y = np.zeros(code.N)
    np.add.at(y, code.edge_chip, bits[code.edge_user].astype(float) * code.edge_value)
    return y


def max_consistency_error(code: SparseCode, record: TransmissionRecord) -> float:
    """Max relative deviation of received from noise + signal (record invariant)."""
    expect = record.noise + signal_only(code, record.bits)
    scale = np.maximum(1.0, np.abs(expect))
    return float(np.max(np.abs(record.received - expect) / scale))


def record_to_json(record: TransmissionRecord) -> str:
    doc = {
        "bits": record.bits.astype(int).tolist(),
        "noise": record.noise.tolist(),
        "received": record.received.tolist(),
        "sigma0": record.sigma0,
        "Q": record.Q if math.isfinite(record.Q) else None,
        "code_ref": record.code_ref,
        "seed": record.seed,
    }
    return json.dumps(doc)


def record_from_json(text: str) -> TransmissionRecord:
    doc = json.loads(text)
    rec = TransmissionRecord(
        bits=np.asarray(doc["bits"], dtype=np.int8),
        noise=np.asarray(doc["noise"], dtype=float),
        received=np.asarray(doc["received"], dtype=float),
        sigma0=float(doc["sigma0"]),
        code_ref=doc.get("code_ref"),
        seed=doc.get("seed"),
    )
    q = doc.get("Q")
    if q is not None and rec.sigma0 > 0 and abs(q * 2.0 * rec.sigma0 ** 2 - 1.0) > 1e-9:
        raise DomainError("stored Q inconsistent with sigma0")
    return rec


def save_record(record: TransmissionRecord, path) -> None:
    with open(path, "w") as fh:
        fh.write(record_to_json(record))


def load_record(path) -> TransmissionRecord:
    with open(path) as fh:
        return record_from_json(fh.read())
