"""Coupling/field form of the detection energy and its structure.

The detection energy H(tau) = Q sum_mu (y_mu - sum_k s_{mu k} tau_k)^2 can be
rewritten, up to a constant, as -(sum_{k != k'} J_{kk'} tau_k tau_k'
+ sum_k h_k tau_k) with

    J_{kk'} = -Q sum_mu s_{mu k} s_{mu k'}        (pair couplings)
    h_k     = 2 Q sum_mu y_mu s_{mu k}            (local fields)

Each unordered pair is stored once; the quadratic sum is evaluated as
2 * sum_{k<k'} J tau tau' to reproduce the ordered-pair convention, and the
constant offset is fixed by matching the direct form at tau = (+1, ..., +1).

The module also carries the marginal moment predictors for the gauged field
b_k * h_k and the not-all-equal clique census of the coupling-only energy on
unmodulated codes (fields excluded by construction).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import TransmissionRecord, sigma0_from_Q, transmit, sample_bits
from .ensemble import (EnsembleSpec, FULLY_REGULAR, SparseCode, UNMODULATED,
                       sample_code)
from .errors import CapacityError, DomainError
from .util import as_rng

NAESAT_K_LIMIT = 24

DENSE = "dense"
SPARSE_BPSK = "sparse_bpsk"
SPARSE_UNMODULATED = "sparse_unmod"


def hamiltonian(code: SparseCode, record: TransmissionRecord, tau,
                Q: float | None = None) -> float:
    """Direct quadratic energy Q sum_mu (y_mu - sum_k s_{mu k} tau_k)^2.

    Q defaults to the record's matched value 1/(2 sigma0^2); pass it
    explicitly for noiseless records.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (code.K,) or not np.all(np.abs(tau) == 1):
        raise DomainError("tau must be a +/-1 vector of length K")
    if Q is None:
        Q = record.Q
    resid = record.received.copy()
    np.subtract.at(resid, code.edge_chip, tau[code.edge_user] * code.edge_value)
    return float(Q * np.dot(resid, resid))


@dataclass
class CouplingField:
    """Pair couplings, local fields and the offset tying the two energy forms.

    pair_a/pair_b list each unordered coupled pair once (a < b); the
    Hamiltonian is -(2 sum_pairs J tau_a tau_b + sum_k h tau) + offset.
    """

    pair_a: np.ndarray
    pair_b: np.ndarray
    couplings: np.ndarray
    fields: np.ndarray
    Q: float
    constant_offset: float

    def coupling_energy(self, tau) -> float:
        """-2 sum_{k<k'} J tau tau' : the b-independent part, no fields."""
        tau = np.asarray(tau, dtype=float)
        return float(-2.0 * np.sum(self.couplings * tau[self.pair_a] * tau[self.pair_b]))

    def energy(self, tau) -> float:
        tau = np.asarray(tau, dtype=float)
        quad = 2.0 * np.sum(self.couplings * tau[self.pair_a] * tau[self.pair_b])
        lin = np.dot(self.fields, tau)
        return float(-(quad + lin) + self.constant_offset)

    def as_dict(self) -> dict:
        return {(int(a), int(b)): float(j)
                for a, b, j in zip(self.pair_a, self.pair_b, self.couplings)}


def _pair_couplings(code: SparseCode, Q: float):
    """Accumulate J_{kk'} = -Q sum_mu s_{mu k} s_{mu k'} over chip cliques."""
    acc: dict[tuple[int, int], float] = {}
    a2 = code.A * code.A
    for mu in range(code.N):
        users = code.chip_users(mu)
        signs = code.chip_signs(mu)
        d = len(users)
        for i in range(d):
            for j in range(i + 1, d):
                ki, kj = int(users[i]), int(users[j])
                key = (ki, kj) if ki < kj else (kj, ki)
                acc[key] = acc.get(key, 0.0) - Q * signs[i] * signs[j] * a2
    return acc


def coupling_field_decomposition(code: SparseCode, record: TransmissionRecord,
                                 Q: float) -> CouplingField:
    """Rewrite the instance in coupling/field form."""
    acc = _pair_couplings(code, Q)
    if acc:
        pairs = sorted(acc.keys())
        pair_a = np.array([p[0] for p in pairs], dtype=np.int64)
        pair_b = np.array([p[1] for p in pairs], dtype=np.int64)
        J = np.array([acc[p] for p in pairs])
    else:
        pair_a = np.zeros(0, dtype=np.int64)
        pair_b = np.zeros(0, dtype=np.int64)
        J = np.zeros(0)
    h = np.zeros(code.K)
    np.add.at(h, code.edge_user, 2.0 * Q * record.received[code.edge_chip] * code.edge_value)
    cf = CouplingField(pair_a=pair_a, pair_b=pair_b, couplings=J, fields=h,
                       Q=Q, constant_offset=0.0)
    ones = np.ones(code.K)
    direct = hamiltonian(code, record, ones, Q=Q)
    quad = 2.0 * np.sum(J * ones[pair_a] * ones[pair_b])
    cf.constant_offset = direct + quad + float(h.sum())
    return cf


def energy_difference_check(code: SparseCode, record: TransmissionRecord, Q: float,
                            tau1, tau2) -> tuple[float, float]:
    """Energy difference H(tau2) - H(tau1) by both representations."""
    d_direct = hamiltonian(code, record, tau2, Q=Q) - hamiltonian(code, record, tau1, Q=Q)
    cf = coupling_field_decomposition(code, record, Q)
    d_cf = cf.energy(tau2) - cf.energy(tau1)
    return d_direct, d_cf


@dataclass
class MomentPrediction:
    """Predicted mean/variance of the gauged local field b_k * h_k."""

    mean: float
    variance: float
    ensemble: str
    variance_truncated: float | None = None


def predicted_field_moments(spec: EnsembleSpec, Q: float, ensemble: str) -> MomentPrediction:
    """Gauged-field moment predictions.

    dense        : mean 2Q/alpha, variance (2Q)^2/alpha + 2Q/alpha; the first
                   variance term is also reported dropped (truncated) since it
                   is stated to be negligible for large systems.
    sparse_bpsk  : chip-regular sparse code, mean 2Q/alpha, variance
                   (L-1)(2Q)^2/(alpha L) + 2Q/alpha.
    sparse_unmod : identical first two moments to sparse_bpsk.
    """
    if ensemble == DENSE:
        alpha = spec.K / spec.N
        mean = 2.0 * Q / alpha
        v_noise = 2.0 * Q / alpha
        v_first = (2.0 * Q) ** 2 / alpha
        return MomentPrediction(mean=mean, variance=v_first + v_noise,
                                ensemble=ensemble, variance_truncated=v_noise)
    if ensemble in (SPARSE_BPSK, SPARSE_UNMODULATED):
        if spec.regularity != FULLY_REGULAR:
            raise DomainError(
                f"{ensemble} prediction requires a fully_regular spec")
        alpha = spec.load
        L = spec.L
        mean = 2.0 * Q / alpha
        variance = (L - 1) * (2.0 * Q) ** 2 / (alpha * L) + 2.0 * Q / alpha
        return MomentPrediction(mean=mean, variance=variance, ensemble=ensemble)
    raise DomainError(f"unknown ensemble {ensemble!r}")


def predicted_coupling_moments(spec: EnsembleSpec, Q: float,
                               ensemble: str) -> MomentPrediction:
    """Marginal moments of the pair couplings.

    dense        : Gaussian, mean 0, variance Q^2 / (alpha N).
    sparse_bpsk  : a coupling from one shared chip is +-Q/L with equal
                   probability (mean 0, variance (Q/L)^2).
    sparse_unmod : one shared chip contributes exactly -Q/L.
    """
    if ensemble == DENSE:
        alpha = spec.K / spec.N
        return MomentPrediction(mean=0.0, variance=Q * Q / (alpha * spec.N),
                                ensemble=ensemble)
    unit = Q / spec.L
    if ensemble == SPARSE_BPSK:
        return MomentPrediction(mean=0.0, variance=unit * unit, ensemble=ensemble)
    if ensemble == SPARSE_UNMODULATED:
        return MomentPrediction(mean=-unit, variance=0.0, ensemble=ensemble)
    raise DomainError(f"unknown ensemble {ensemble!r}")


@dataclass
class EmpiricalMoments:
    """Monte Carlo moments of b_k * h_k with per-code clustered errors."""

    mean: float
    variance: float
    mean_se: float
    variance_se: float
    n_samples: int
    n_codes: int
    samples: np.ndarray = field(repr=False, default=None)


def empirical_field_moments(spec: EnsembleSpec, Q: float, trials: int, rng,
                            keep_samples: bool = False) -> EmpiricalMoments:
    """Sample codes/bits/noise and measure moments of the gauged field.

    `trials` counts user-samples (K per sampled code).  Standard errors are
    clustered by code since users within one transmission share noise and
    interference.
    """
    if trials < 100:
        raise DomainError("trials must be >= 100")
    rng = as_rng(rng)
    sigma0 = sigma0_from_Q(Q)
    n_codes = max(2, int(np.ceil(trials / spec.K)))
    per_code_mean = []
    per_code_var = []
    chunks = []
    for _ in range(n_codes):
        code = sample_code(spec, rng)
        bits = sample_bits(spec.K, rng)
        record = transmit(code, bits, sigma0, rng)
        h = np.zeros(spec.K)
        np.add.at(h, code.edge_user,
                  2.0 * Q * record.received[code.edge_chip] * code.edge_value)
        g = bits * h
        per_code_mean.append(g.mean())
        per_code_var.append(g.var(ddof=1))
        chunks.append(g)
    per_code_mean = np.array(per_code_mean)
    per_code_var = np.array(per_code_var)
    allg = np.concatenate(chunks)
    return EmpiricalMoments(
        mean=float(per_code_mean.mean()),
        variance=float(per_code_var.mean()),
        mean_se=float(per_code_mean.std(ddof=1) / np.sqrt(n_codes)),
        variance_se=float(per_code_var.std(ddof=1) / np.sqrt(n_codes)),
        n_samples=len(allg),
        n_codes=n_codes,
        samples=allg if keep_samples else None,
    )


def chip_clique_spin_energy(tau_clique) -> int:
    """sum_{k<k'} tau_k tau_k' over one chip clique.

    For a 3-clique this is 3 when all spins agree and -1 otherwise.
    """
    tau = np.asarray(tau_clique, dtype=np.int64)
    if len(tau) and not np.all(np.abs(tau) == 1):
        raise DomainError("clique spins must be +/-1")
    s = int(tau.sum())
    return (s * s - len(tau)) // 2


@dataclass
class NaesatResult:
    """Census of the coupling-only ground states of an unmodulated code."""

    min_all_equal: int
    n_ground_states: int
    ground_states: list
    n_cliques: int


def naesat_ground_states(code: SparseCode, max_states: int = 64) -> NaesatResult:
    """Exhaustive minimum of the all-equal-clique count over 2^K assignments.

    Chips of degree <= 1 contribute the same constant to every assignment and
    are excluded from the count.  The coupling-only energy ignores fields, so
    the ground-state set is closed under a global spin flip.
    """
    if code.modulation != UNMODULATED:
        raise DomainError("NAE-SAT census is defined for unmodulated codes")
    K = code.K
    if K > NAESAT_K_LIMIT:
        raise CapacityError(f"K={K} exceeds enumeration budget {NAESAT_K_LIMIT}")
    degs = code.chip_degrees()
    cliques = [code.chip_users(mu) for mu in range(code.N) if degs[mu] >= 2]
    total = 1 << K
    chunk = 1 << min(K, 16)
    best = len(cliques) + 1
    n_best = 0
    reps: list[np.ndarray] = []
    kbits = np.arange(K, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        spins = (((idx[:, None] >> kbits[None, :]) & 1) * 2 - 1).astype(np.int8)
        counts = np.zeros(len(idx), dtype=np.int64)
        for users in cliques:
            counts += np.abs(spins[:, users].sum(axis=1, dtype=np.int64)) == len(users)
        cmin = int(counts.min()) if len(counts) else 0
        if cmin < best:
            best = cmin
            n_best = 0
            reps = []
        if cmin == best:
            hits = np.nonzero(counts == best)[0]
            n_best += len(hits)
            for i in hits[:max(0, max_states - len(reps))]:
                reps.append(spins[i].copy())
    return NaesatResult(min_all_equal=best, n_ground_states=n_best,
                        ground_states=reps, n_cliques=len(cliques))


def rank_states_by_field(states, fields) -> list:
    """Order spin assignments by their field alignment sum_k h_k tau_k.

    Analysis utility for probing how the field singles out states among the
    coupling-only ground states; descending alignment.
    """
    fields = np.asarray(fields, dtype=float)
    scored = [(float(np.dot(fields, np.asarray(s, dtype=float))), np.asarray(s))
              for s in states]
    scored.sort(key=lambda t: -t[0])
    return scored
