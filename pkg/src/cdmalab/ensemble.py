"""Sparse signature-code ensembles and their Tanner-graph structure.

Three sampling laws are supported:

* ``pure_random``   -- every (user, chip) entry present independently with
  probability L/K, so the mean user degree is C when K*C = N*L.  Disconnected
  users are a property of this ensemble and are kept.
* ``user_regular``  -- every user accesses exactly C chips, chosen uniformly
  without replacement.
* ``fully_regular`` -- a uniform (C, L)-biregular bipartite graph sampled by
  configuration-model stub pairing, rejecting parallel edges with local
  re-pairing and a full restart when repair stalls.

Non-zero entries take values +/-A under BPSK modulation or +A unmodulated,
with A = 1/sqrt(L).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfeasibleSpecError, SamplingFailureError
from .util import as_rng

BPSK = "bpsk"
UNMODULATED = "unmod"
MODULATIONS = (BPSK, UNMODULATED)

PURE_RANDOM = "pure_random"
USER_REGULAR = "user_regular"
FULLY_REGULAR = "fully_regular"
REGULARITIES = (PURE_RANDOM, USER_REGULAR, FULLY_REGULAR)

# full restarts of stub pairing before giving up
MAX_PAIRING_RESTARTS = 500
# local re-pair rounds within one restart
MAX_REPAIR_ROUNDS = 200


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters of a code ensemble: sizes, degrees, modulation, regularity.

    K users, N chips, user degree C (chips per user), chip degree L (users
    per chip).  The load is alpha = L/C, which equals K/N exactly for
    fully-regular specs.
    """

    K: int
    N: int
    C: int
    L: int
    modulation: str = BPSK
    regularity: str = FULLY_REGULAR

    def __post_init__(self):
        for name in ("K", "N", "C", "L"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise DomainError(f"{name} must be a positive integer, got {v!r}")
        if self.modulation not in MODULATIONS:
            raise DomainError(f"unknown modulation {self.modulation!r}")
        if self.regularity not in REGULARITIES:
            raise DomainError(f"unknown regularity {self.regularity!r}")
        if self.L > self.K:
            raise DomainError(f"chip degree L={self.L} exceeds user count K={self.K}")
        if self.C > self.N:
            raise DomainError(f"user degree C={self.C} exceeds chip count N={self.N}")
        if self.regularity == FULLY_REGULAR and self.K * self.C != self.N * self.L:
            raise InfeasibleSpecError(
                f"fully_regular requires K*C == N*L, got {self.K}*{self.C} != {self.N}*{self.L}"
            )

    @property
    def load(self) -> float:
        """alpha = L/C (equals K/N for fully-regular specs)."""
        return self.L / self.C

    @property
    def amplitude(self) -> float:
        return amplitude(self)

    def to_dict(self) -> dict:
        return {"K": self.K, "N": self.N, "C": self.C, "L": self.L,
                "modulation": self.modulation, "regularity": self.regularity}

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleSpec":
        return cls(K=int(d["K"]), N=int(d["N"]), C=int(d["C"]), L=int(d["L"]),
                   modulation=d.get("modulation", BPSK),
                   regularity=d.get("regularity", FULLY_REGULAR))


def amplitude(spec: EnsembleSpec) -> float:
    """Transmission amplitude A = 1/sqrt(L)."""
    if spec.L < 1:
        raise DomainError("L must be >= 1")
    return 1.0 / np.sqrt(spec.L)


class SparseCode:
    """A sampled K x N signature matrix held as a sorted sparse edge list.

    Entries are stored as parallel arrays (edge_user, edge_chip, edge_sign)
    sorted by (chip, user); the entry value is sign * A.  Chip-major and
    user-major adjacency are both precomputed since detection sweeps the
    graph in both directions.
    """

    def __init__(self, K, N, A, edge_user, edge_chip, edge_sign,
                 modulation=BPSK, regularity=FULLY_REGULAR):
        edge_user = np.asarray(edge_user, dtype=np.int64)
        edge_chip = np.asarray(edge_chip, dtype=np.int64)
        edge_sign = np.asarray(edge_sign, dtype=np.int8)
        if not (edge_user.shape == edge_chip.shape == edge_sign.shape):
            raise DomainError("edge arrays must have identical length")
        order = np.lexsort((edge_user, edge_chip))
        self.K = int(K)
        self.N = int(N)
        self.A = float(A)
        self.edge_user = edge_user[order]
        self.edge_chip = edge_chip[order]
        self.edge_sign = edge_sign[order]
        self.modulation = modulation
        self.regularity = regularity
        if self.n_edges:
            if self.edge_user.min() < 0 or self.edge_user.max() >= self.K:
                raise DomainError("user index out of range")
            if self.edge_chip.min() < 0 or self.edge_chip.max() >= self.N:
                raise DomainError("chip index out of range")
        dup = len(set(zip(self.edge_user.tolist(), self.edge_chip.tolist())))
        if dup != self.n_edges:
            raise DomainError("duplicate (user, chip) entries")
        # chip-major CSR
        self.chip_ptr = np.zeros(self.N + 1, dtype=np.int64)
        np.add.at(self.chip_ptr, self.edge_chip + 1, 1)
        np.cumsum(self.chip_ptr, out=self.chip_ptr)
        # user-major: permutation of edge ids sorted by user
        self.user_order = np.argsort(self.edge_user, kind="stable")
        self.user_ptr = np.zeros(self.K + 1, dtype=np.int64)
        np.add.at(self.user_ptr, self.edge_user + 1, 1)
        np.cumsum(self.user_ptr, out=self.user_ptr)

    @property
    def n_edges(self) -> int:
        return len(self.edge_user)

    @property
    def edge_value(self) -> np.ndarray:
        return self.edge_sign * self.A

    def chip_users(self, mu: int) -> np.ndarray:
        lo, hi = self.chip_ptr[mu], self.chip_ptr[mu + 1]
        return self.edge_user[lo:hi]

    def chip_signs(self, mu: int) -> np.ndarray:
        lo, hi = self.chip_ptr[mu], self.chip_ptr[mu + 1]
        return self.edge_sign[lo:hi]

    def chip_edges(self, mu: int) -> np.ndarray:
        return np.arange(self.chip_ptr[mu], self.chip_ptr[mu + 1])

    def user_chips(self, k: int) -> np.ndarray:
        lo, hi = self.user_ptr[k], self.user_ptr[k + 1]
        return self.edge_chip[self.user_order[lo:hi]]

    def user_edges(self, k: int) -> np.ndarray:
        lo, hi = self.user_ptr[k], self.user_ptr[k + 1]
        return self.user_order[lo:hi]

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    def chip_degrees(self) -> np.ndarray:
        return np.diff(self.chip_ptr)

    def dense(self) -> np.ndarray:
        """Dense (N, K) matrix of entry values; for small instances only."""
        s = np.zeros((self.N, self.K))
        s[self.edge_chip, self.edge_user] = self.edge_value
        return s

    def __eq__(self, other):
        if not isinstance(other, SparseCode):
            return NotImplemented
        return (self.K == other.K and self.N == other.N and self.A == other.A
                and self.modulation == other.modulation
                and self.regularity == other.regularity
                and np.array_equal(self.edge_user, other.edge_user)
                and np.array_equal(self.edge_chip, other.edge_chip)
                and np.array_equal(self.edge_sign, other.edge_sign))

    def __repr__(self):
        return (f"SparseCode(K={self.K}, N={self.N}, edges={self.n_edges}, "
                f"A={self.A:.6g}, {self.modulation}, {self.regularity})")


def _pair_stubs_biregular(K, N, C, L, rng):
    """One restart of configuration-model pairing with local repair.

    Returns (edge_user, edge_chip) arrays or None if repair stalled.
    """
    user_stubs = np.repeat(np.arange(K), C)
    chip_stubs = np.repeat(np.arange(N), L)
    rng.shuffle(chip_stubs)
    seen = set()
    eu, ec = [], []
    pool_u = user_stubs.tolist()
    pool_c = chip_stubs.tolist()
    for _ in range(MAX_REPAIR_ROUNDS):
        retry_u, retry_c = [], []
        for u, c in zip(pool_u, pool_c):
            if (u, c) in seen:
                retry_u.append(u)
                retry_c.append(c)
            else:
                seen.add((u, c))
                eu.append(u)
                ec.append(c)
        if not retry_u:
            return np.array(eu), np.array(ec)
        if len(retry_u) == len(pool_u):
            # no progress this round; shuffling identical multisets of
            # leftover stubs can still succeed, but bail after true stalls
            if len(retry_u) <= 1:
                return None
        perm = rng.permutation(len(retry_c))
        pool_u = retry_u
        pool_c = [retry_c[i] for i in perm]
    return None


def sample_code(spec: EnsembleSpec, rng) -> SparseCode:
    """Draw one code from the ensemble described by `spec`.

    Deterministic given (spec, seed).  Raises InfeasibleSpecError for
    impossible fully-regular shapes and SamplingFailureError if stub
    pairing keeps failing past the restart budget.
    """
    rng = as_rng(rng)
    K, N, C, L = spec.K, spec.N, spec.C, spec.L
    A = amplitude(spec)

    if spec.regularity == PURE_RANDOM:
        mask = rng.random((K, N)) < (L / K)
        edge_user, edge_chip = np.nonzero(mask)
    elif spec.regularity == USER_REGULAR:
        edge_user = np.repeat(np.arange(K), C)
        edge_chip = np.empty(K * C, dtype=np.int64)
        for k in range(K):
            edge_chip[k * C:(k + 1) * C] = rng.choice(N, size=C, replace=False)
    else:  # fully regular
        if K * C != N * L:
            raise InfeasibleSpecError(f"K*C != N*L ({K}*{C} != {N}*{L})")
        edges = None
        for _ in range(MAX_PAIRING_RESTARTS):
            edges = _pair_stubs_biregular(K, N, C, L, rng)
            if edges is not None:
                break
        if edges is None:
            raise SamplingFailureError(
                f"biregular pairing failed after {MAX_PAIRING_RESTARTS} restarts")
        edge_user, edge_chip = edges

    n = len(edge_user)
    if spec.modulation == BPSK:
        edge_sign = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    else:
        edge_sign = np.ones(n, dtype=np.int8)
    return SparseCode(K, N, A, edge_user, edge_chip, edge_sign,
                      modulation=spec.modulation, regularity=spec.regularity)


@dataclass
class CodeValidation:
    """Per-invariant pass/fail report for a sampled code (report-only)."""

    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.checks.values())

    def failed(self):
        return [name for name, ok in self.checks.items() if not ok]


def validate_code(code: SparseCode, spec: EnsembleSpec) -> CodeValidation:
    """Check a code against the invariants its spec implies."""
    rep = CodeValidation()
    rep.checks["shape"] = code.K == spec.K and code.N == spec.N
    expected_a = amplitude(spec)
    rep.checks["amplitude"] = code.A == expected_a
    rep.details["amplitude"] = {"stored": code.A, "expected": expected_a}
    rep.checks["signs"] = bool(np.all(np.abs(code.edge_sign) == 1))
    if spec.modulation == UNMODULATED:
        rep.checks["modulation"] = bool(np.all(code.edge_sign == 1))
    else:
        rep.checks["modulation"] = True
    udeg = code.user_degrees()
    cdeg = code.chip_degrees()
    if spec.regularity in (USER_REGULAR, FULLY_REGULAR):
        bad_users = np.nonzero(udeg != spec.C)[0]
        rep.checks["user_degrees"] = len(bad_users) == 0
        rep.details["user_degrees"] = {"offending_users": bad_users.tolist()}
    else:
        rep.checks["user_degrees"] = True
    if spec.regularity == FULLY_REGULAR:
        bad_chips = np.nonzero(cdeg != spec.L)[0]
        rep.checks["chip_degrees"] = len(bad_chips) == 0
        rep.details["chip_degrees"] = {"offending_chips": bad_chips.tolist()}
    else:
        rep.checks["chip_degrees"] = True
    return rep


def code_to_text(code: SparseCode) -> str:
    """Serialise a code: header 'K N C L modulation regularity A', then one
    line 'k mu sign' per entry with sign in {+,-}.  Round-trips exactly.

    C and L written in the header are the nominal spec degrees inferred from
    the stored regularity: the max user/chip degree (informational for
    irregular ensembles).
    """
    udeg = code.user_degrees()
    cdeg = code.chip_degrees()
    c_nom = int(udeg.max()) if len(udeg) else 0
    l_nom = int(cdeg.max()) if len(cdeg) else 0
    lines = [f"{code.K} {code.N} {c_nom} {l_nom} {code.modulation} "
             f"{code.regularity} {code.A!r}"]
    for k, mu, sg in zip(code.edge_user, code.edge_chip, code.edge_sign):
        lines.append(f"{k} {mu} {'+' if sg > 0 else '-'}")
    return "\n".join(lines) + "\n"


def code_from_text(text: str) -> SparseCode:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise DomainError("empty code file")
    head = lines[0].split()
    if len(head) != 7:
        raise DomainError(f"malformed header: {lines[0]!r}")
    K, N = int(head[0]), int(head[1])
    modulation, regularity = head[4], head[5]
    A = float(head[6])
    if modulation not in MODULATIONS or regularity not in REGULARITIES:
        raise DomainError(f"unknown modulation/regularity in header: {lines[0]!r}")
    eu, ec, es = [], [], []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3 or parts[2] not in ("+", "-"):
            raise DomainError(f"malformed entry line: {ln!r}")
        eu.append(int(parts[0]))
        ec.append(int(parts[1]))
        es.append(1 if parts[2] == "+" else -1)
    return SparseCode(K, N, A, eu, ec, es, modulation=modulation,
                      regularity=regularity)


def save_code(code: SparseCode, path) -> None:
    with open(path, "w") as fh:
        fh.write(code_to_text(code))


def load_code(path) -> SparseCode:
    with open(path) as fh:
        return code_from_text(fh.read())
