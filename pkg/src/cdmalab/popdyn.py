"""Population-dynamics solution of the cavity fixed-point equations.

Distributions of cavity biases u (factor-to-variable) and cavity fields h
(variable-to-factor) are represented by finite populations of log-likelihood
ratios (half-LLR convention: a value m stands for the distribution
proportional to exp(m * tau)).  One replacement event draws C-1 biases to
refresh a field slot and L-1 fields, L modulation values and a chip noise to
refresh a bias slot via

    u = 1/2 * sum_{t = +-1} t * log Z(t),
    Z(t) = sum over the 2^(L-1) interior spin configurations of
           exp{ -Q (omega + sum_l x_l (1 - tau_l))^2 + sum_l h_l tau_l }

computed in the log domain.  A sweep performs population_size replacements
with uniformly chosen target slots; draws see slots already refreshed within
the sweep (online update).

Modulated (BPSK) dynamics gauge all sent bits to +1, which the (1 - tau)
structure of Z presumes; tau = +1 then means "decoded correctly".  Without
modulation that gauge cannot absorb the bits, so members carry the site's
true bit a as a label and the interference term uses the effective
modulation x_l * a_l of each drawn neighbour, keeping tau as the correctness
spin.  Values therefore always measure correct recovery, and member labels
record true bits; draws conditioned on a label rebuild the per-bit
distributions W(a, .).

All heavy loops are compiled with numba; every random number is pre-drawn
from the seeded numpy generator outside the kernels, so runs are exactly
reproducible given (params, seed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .channel import sigma0_from_Q
from .ensemble import BPSK, EnsembleSpec, FULLY_REGULAR, UNMODULATED
from .errors import DomainError
from .util import as_rng, log1p_tanh_prod, log_cosh, spin_table

BIAS = "bias"
FIELD = "field"
JOINT_BIAS = "joint_bias"
JOINT_FIELD = "joint_field"
KINDS = (BIAS, FIELD, JOINT_BIAS, JOINT_FIELD)

RANDOM = "random"
INFORMED = "informed"
ZERO = "zero"
INIT_MODES = (RANDOM, INFORMED, ZERO)

_N_CANDIDATES = 16  # pre-drawn slots scanned for a label-conditional pick


@dataclass
class PDParams:
    """Controls for population dynamics runs.

    se_scale / se_offset are the user-supplied affine constants mapping the
    free energy to a spectral-efficiency readout; defaults emit the raw
    free energy.
    """

    population_size: int = 10_000
    max_sweeps: int = 600
    window: int = 50
    tolerance: float = 1e-3
    field_cap: float = 300.0
    seed: int = 0
    ber_samples: int = 20_000
    fe_samples: int = 200_000
    se_scale: float = 1.0
    se_offset: float = 0.0

    def __post_init__(self):
        if self.population_size < 2:
            raise DomainError("population_size must be >= 2")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if self.window < 2:
            raise DomainError("window must be >= 2")
        if self.max_sweeps < 1:
            raise DomainError("max_sweeps must be >= 1")
        if self.field_cap <= 0:
            raise DomainError("field_cap must be positive")


@dataclass
class Population:
    """A flat population of message values, optionally labelled by true bit."""

    kind: str
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown population kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        joint = self.kind in (JOINT_BIAS, JOINT_FIELD)
        if joint:
            if self.labels is None:
                raise DomainError(f"{self.kind} population requires labels")
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != self.values.shape:
                raise DomainError("labels must match values in shape")
        elif self.labels is not None:
            raise DomainError(f"{self.kind} population carries no labels")

    @property
    def size(self) -> int:
        return len(self.values)

    def label_fraction_plus(self) -> float | None:
        if self.labels is None:
            return None
        return float((self.labels > 0).mean())

    def copy(self) -> "Population":
        return Population(self.kind, self.values.copy(),
                          None if self.labels is None else self.labels.copy())


def init_population(mode: str, params: PDParams, rng, kind: str = BIAS) -> Population:
    """Fresh population: random ~ N(0,1), informed = +field_cap/2, zero = 0.

    Informed members are saturated toward correct recovery; in the
    correctness gauge that is +field_cap/2 for every label.  Joint kinds get
    iid uniform +/-1 labels.
    """
    if mode not in INIT_MODES:
        raise DomainError(f"unknown init mode {mode!r}")
    rng = as_rng(rng)
    S = params.population_size
    if mode == RANDOM:
        values = rng.standard_normal(S)
    elif mode == INFORMED:
        values = np.full(S, params.field_cap / 2.0)
    else:
        values = np.zeros(S)
    labels = None
    if kind in (JOINT_BIAS, JOINT_FIELD):
        labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=S)
    return Population(kind, values, labels)


# ---------------------------------------------------------------------------
# compiled replacement loops
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sweep_modulated_kernel(bias, field, T, bias_pick, field_pick,
                            field_tgt, bias_tgt, x, omega, Q, cap):
    S = bias_tgt.shape[0]
    n_cfg, n_int = T.shape
    cm1 = bias_pick.shape[1]
    log_zp = np.empty(n_cfg)
    log_zm = np.empty(n_cfg)
    for i in range(S):
        h_new = 0.0
        for c in range(cm1):
            h_new += bias[bias_pick[i, c]]
        if h_new > cap:
            h_new = cap
        elif h_new < -cap:
            h_new = -cap
        field[field_tgt[i]] = h_new

        sx = 0.0
        for l in range(n_int):
            sx += x[i, l]
        base_p = omega[i] + sx
        base_m = base_p + 2.0 * x[i, n_int]
        mp = -1e300
        mm = -1e300
        for cfg in range(n_cfg):
            p = 0.0
            hc = 0.0
            for l in range(n_int):
                p += T[cfg, l] * x[i, l]
                hc += T[cfg, l] * field[field_pick[i, l]]
            dp = base_p - p
            dm = base_m - p
            vp = -Q * dp * dp + hc
            vm = -Q * dm * dm + hc
            log_zp[cfg] = vp
            log_zm[cfg] = vm
            if vp > mp:
                mp = vp
            if vm > mm:
                mm = vm
        sp = 0.0
        sm = 0.0
        for cfg in range(n_cfg):
            sp += np.exp(log_zp[cfg] - mp)
            sm += np.exp(log_zm[cfg] - mm)
        u = 0.5 * ((mp + np.log(sp)) - (mm + np.log(sm)))
        if u > cap:
            u = cap
        elif u < -cap:
            u = -cap
        bias[bias_tgt[i]] = u


@njit(cache=True)
def _pick_with_label(values, labels, candidates, want):
    for j in range(candidates.shape[0]):
        idx = candidates[j]
        if labels[idx] == want:
            return values[idx]
    for idx in range(labels.shape[0]):
        if labels[idx] == want:
            return values[idx]
    # degenerate single-label population: fall back to an unconditional pick
    return values[candidates[0]]


@njit(cache=True)
def _sweep_joint_kernel(bias, bias_lab, field, field_lab, T,
                        root_lab, nbr_lab, cand_bias, cand_field,
                        field_tgt, bias_tgt, omega, Q, A, cap):
    S = bias_tgt.shape[0]
    n_cfg, n_int = T.shape
    cm1 = cand_bias.shape[1]
    log_zp = np.empty(n_cfg)
    log_zm = np.empty(n_cfg)
    hv = np.empty(n_int)
    xe = np.empty(n_int)
    for i in range(S):
        a_field = root_lab[i, 0]
        h_new = 0.0
        for c in range(cm1):
            h_new += _pick_with_label(bias, bias_lab, cand_bias[i, c], a_field)
        if h_new > cap:
            h_new = cap
        elif h_new < -cap:
            h_new = -cap
        field[field_tgt[i]] = h_new
        field_lab[field_tgt[i]] = a_field

        a_root = root_lab[i, 1]
        for l in range(n_int):
            al = nbr_lab[i, l]
            hv[l] = _pick_with_label(field, field_lab, cand_field[i, l], al)
            xe[l] = A * al  # effective modulation of the neighbour leg
        x_root = A * a_root
        sx = 0.0
        for l in range(n_int):
            sx += xe[l]
        base_p = omega[i] + sx
        base_m = base_p + 2.0 * x_root
        mp = -1e300
        mm = -1e300
        for cfg in range(n_cfg):
            p = 0.0
            hc = 0.0
            for l in range(n_int):
                p += T[cfg, l] * xe[l]
                hc += T[cfg, l] * hv[l]
            dp = base_p - p
            dm = base_m - p
            vp = -Q * dp * dp + hc
            vm = -Q * dm * dm + hc
            log_zp[cfg] = vp
            log_zm[cfg] = vm
            if vp > mp:
                mp = vp
            if vm > mm:
                mm = vm
        sp = 0.0
        sm = 0.0
        for cfg in range(n_cfg):
            sp += np.exp(log_zp[cfg] - mp)
            sm += np.exp(log_zm[cfg] - mm)
        u = 0.5 * ((mp + np.log(sp)) - (mm + np.log(sm)))
        if u > cap:
            u = cap
        elif u < -cap:
            u = -cap
        bias[bias_tgt[i]] = u
        bias_lab[bias_tgt[i]] = a_root


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _check_spec(spec: EnsembleSpec, modulation: str):
    if spec.regularity != FULLY_REGULAR:
        raise DomainError("population dynamics requires a fully_regular spec")
    if spec.modulation != modulation:
        raise DomainError(
            f"this sweep handles {modulation} specs, got {spec.modulation}")


def _derive_field_pop(bias_pop: Population, spec: EnsembleSpec,
                      cap: float, rng) -> Population:
    """Field population consistent with the bias one: sums of C-1 biases."""
    S = bias_pop.size
    if bias_pop.labels is None:
        if spec.C > 1:
            vals = bias_pop.values[rng.integers(0, S, size=(S, spec.C - 1))].sum(axis=1)
        else:
            vals = np.zeros(S)
        return Population(FIELD, np.clip(vals, -cap, cap))
    labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=S)
    vals = np.zeros(S)
    for sign in (-1, 1):
        members = bias_pop.values[bias_pop.labels == sign]
        rows = np.nonzero(labels == sign)[0]
        if len(members) == 0 or len(rows) == 0:
            continue
        if spec.C > 1:
            vals[rows] = members[rng.integers(0, len(members),
                                              size=(len(rows), spec.C - 1))].sum(axis=1)
    return Population(JOINT_FIELD, np.clip(vals, -cap, cap), labels)


def pd_sweep_modulated(bias_pop: Population, spec: EnsembleSpec, Q: float, rng,
                       field_pop: Population | None = None,
                       field_cap: float = 300.0) -> tuple[Population, Population]:
    """One sweep (population_size replacements) of the BPSK saddle point.

    Populations are updated in place and returned; `field_pop` is derived
    from the biases when not supplied.
    """
    _check_spec(spec, BPSK)
    if bias_pop.kind != BIAS:
        raise DomainError("modulated sweep expects an unlabelled bias population")
    rng = as_rng(rng)
    if field_pop is None:
        field_pop = _derive_field_pop(bias_pop, spec, field_cap, rng)
    S = bias_pop.size
    C, L = spec.C, spec.L
    A = 1.0 / np.sqrt(L)
    sigma0 = sigma0_from_Q(Q)
    T = spin_table(L - 1)
    bias_pick = rng.integers(0, S, size=(S, C - 1))
    field_pick = rng.integers(0, S, size=(S, max(L - 1, 0)))
    field_tgt = rng.integers(0, S, size=S)
    bias_tgt = rng.integers(0, S, size=S)
    x = A * rng.choice(np.array([-1.0, 1.0]), size=(S, L))
    omega = sigma0 * rng.standard_normal(S)
    _sweep_modulated_kernel(bias_pop.values, field_pop.values, T,
                            bias_pick, field_pick, field_tgt, bias_tgt,
                            x, omega, Q, field_cap)
    return bias_pop, field_pop


def pd_sweep_unmodulated(bias_pop: Population, spec: EnsembleSpec, Q: float, rng,
                         field_pop: Population | None = None,
                         field_cap: float = 300.0) -> tuple[Population, Population]:
    """One sweep of the joint (label, value) saddle point, unmodulated code.

    Root labels and neighbour labels are drawn iid uniform +/-1 (the true
    bit prior); values drawn conditionally on the wanted label.
    """
    _check_spec(spec, UNMODULATED)
    if bias_pop.kind != JOINT_BIAS:
        raise DomainError("unmodulated sweep expects a joint bias population")
    rng = as_rng(rng)
    if field_pop is None:
        field_pop = _derive_field_pop(bias_pop, spec, field_cap, rng)
    S = bias_pop.size
    C, L = spec.C, spec.L
    A = 1.0 / np.sqrt(L)
    sigma0 = sigma0_from_Q(Q)
    T = spin_table(L - 1)
    pm1 = np.array([-1, 1], dtype=np.int8)
    root_lab = rng.choice(pm1, size=(S, 2))
    nbr_lab = rng.choice(pm1, size=(S, max(L - 1, 0)))
    cand_bias = rng.integers(0, S, size=(S, C - 1, _N_CANDIDATES))
    cand_field = rng.integers(0, S, size=(S, max(L - 1, 0), _N_CANDIDATES))
    field_tgt = rng.integers(0, S, size=S)
    bias_tgt = rng.integers(0, S, size=S)
    omega = sigma0 * rng.standard_normal(S)
    _sweep_joint_kernel(bias_pop.values, bias_pop.labels,
                        field_pop.values, field_pop.labels, T,
                        root_lab, nbr_lab, cand_bias, cand_field,
                        field_tgt, bias_tgt, omega, Q, A, field_cap)
    return bias_pop, field_pop


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def resample_full_fields(bias_pop: Population, C: int, samples: int, rng) -> np.ndarray:
    """Draw full-degree decision fields H = sum of C biases (shared label
    for joint populations)."""
    rng = as_rng(rng)
    S = bias_pop.size
    if bias_pop.labels is None:
        return bias_pop.values[rng.integers(0, S, size=(samples, C))].sum(axis=1)
    labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=samples)
    H = np.zeros(samples)
    for sign in (-1, 1):
        members = bias_pop.values[bias_pop.labels == sign]
        rows = np.nonzero(labels == sign)[0]
        if len(rows) == 0:
            continue
        if len(members) == 0:
            raise DomainError(f"population has no members with label {sign}")
        H[rows] = members[rng.integers(0, len(members), size=(len(rows), C))].sum(axis=1)
    return H


def ber_from_population(bias_pop: Population, spec: EnsembleSpec,
                        samples: int, rng) -> tuple[float, float]:
    """BER = P(H < 0) + P(H = 0)/2 over resampled full-degree fields.

    The returned standard error is the binomial resampling error with a
    rule-of-succession floor; it excludes finite-population fluctuations.
    """
    H = resample_full_fields(bias_pop, spec.C, samples, rng)
    ber = float((H < 0).mean() + 0.5 * (H == 0).mean())
    p_safe = (ber * samples + 1.0) / (samples + 2.0)
    se = float(np.sqrt(p_safe * (1.0 - p_safe) / samples))
    return ber, se


def nishimori_gap(field_pop: Population) -> tuple[float, float]:
    """E[tanh h] - E[tanh^2 h] over the field population, with its SE.

    Vanishes at matched-noise fixed points; a non-zero gap flags an
    inconsistent solution.
    """
    t = np.tanh(field_pop.values)
    diff = t - t * t
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(len(t)))


@dataclass
class FreeEnergyEstimate:
    """Monte Carlo estimate of the variational free energy density."""

    per_chip: float
    per_user: float
    se: float
    terms: dict

    def __float__(self):
        return self.per_chip


def _conditional_draw(values, labels, want_labels, rng):
    out = np.zeros(want_labels.shape, dtype=float)
    for sign in (-1, 1):
        members = values[labels == sign]
        sel = want_labels == sign
        count = int(sel.sum())
        if count == 0:
            continue
        if len(members) == 0:
            raise DomainError(f"population has no members with label {sign}")
        out[sel] = members[rng.integers(0, len(members), size=count)]
    return out


_FE_CHUNK = 1 << 17


def free_energy_from_populations(bias_pop: Population, field_pop: Population,
                                 spec: EnsembleSpec, Q: float, samples: int,
                                 rng) -> FreeEnergyEstimate:
    """Evaluate the free energy functional from converged populations.

    Per chip:  f = alpha*C * E log(1 + tanh u tanh h)
                 + alpha * E[ sum_c log cosh u_c - log cosh(sum_c u_c) ]
                 - E log Z_I  -  alpha * log 2
    with Z_I summed over all 2^L leg configurations in the log domain.  The
    site contributions are paired on common draws, which cancels their large
    fluctuations without changing the expectation.  Samples are processed in
    chunks to bound the (chunk, 2^L) work arrays.
    """
    rng = as_rng(rng)
    C, L = spec.C, spec.L
    alpha = spec.load
    A = 1.0 / np.sqrt(L)
    sigma0 = sigma0_from_Q(Q)
    joint = bias_pop.labels is not None
    pm1 = np.array([-1, 1], dtype=np.int8)
    T = spin_table(L)

    sums = {"edge": 0.0, "site": 0.0, "interaction": 0.0}
    sqsums = {"edge": 0.0, "site": 0.0, "interaction": 0.0}

    def accumulate(name, vals):
        sums[name] += float(vals.sum())
        sqsums[name] += float(np.dot(vals, vals))

    done = 0
    while done < samples:
        n = min(_FE_CHUNK, samples - done)
        done += n

        # edge term: u and h on one edge share the site's true bit
        if joint:
            a = rng.choice(pm1, size=n)
            u = _conditional_draw(bias_pop.values, bias_pop.labels, a, rng)
            h = _conditional_draw(field_pop.values, field_pop.labels, a, rng)
        else:
            u = bias_pop.values[rng.integers(0, bias_pop.size, size=n)]
            h = field_pop.values[rng.integers(0, field_pop.size, size=n)]
        accumulate("edge", alpha * C * log1p_tanh_prod(u, h))

        # site term, paired draws
        if joint:
            a = rng.choice(pm1, size=(n, 1)) * np.ones((1, C), dtype=np.int8)
            uc = _conditional_draw(bias_pop.values, bias_pop.labels, a, rng)
        else:
            uc = bias_pop.values[rng.integers(0, bias_pop.size, size=(n, C))]
        accumulate("site", alpha * (log_cosh(uc).sum(axis=1) - log_cosh(uc.sum(axis=1))))

        # interaction term
        if joint:
            al = rng.choice(pm1, size=(n, L))
            hl = _conditional_draw(field_pop.values, field_pop.labels, al, rng)
            xe = A * al.astype(float)
        else:
            hl = field_pop.values[rng.integers(0, field_pop.size, size=(n, L))]
            if spec.modulation == BPSK:
                xe = A * rng.choice(np.array([-1.0, 1.0]), size=(n, L))
            else:
                xe = np.full((n, L), A)
        omega = sigma0 * rng.standard_normal(n)
        interf = omega[:, None] + (xe.sum(axis=1)[:, None] - xe @ T.T)
        W = hl @ T.T - Q * interf ** 2
        mx = W.max(axis=1)
        log_zi = (mx + np.log(np.exp(W - mx[:, None]).sum(axis=1))
                  - (log_cosh(hl) + np.log(2.0)).sum(axis=1))
        accumulate("interaction", -log_zi)

    terms = {}
    total = float(-alpha * np.log(2.0))
    var = 0.0
    for name in ("edge", "site", "interaction"):
        m = sums[name] / samples
        v = max(sqsums[name] / samples - m * m, 0.0)
        se = float(np.sqrt(v / samples))
        terms[name] = (m, se)
        total += m
        var += se * se
    terms["constant"] = (float(-alpha * np.log(2.0)), 0.0)
    se_total = float(np.sqrt(var))
    return FreeEnergyEstimate(per_chip=total, per_user=total / alpha,
                              se=se_total, terms=terms)


# ---------------------------------------------------------------------------
# convergence driver
# ---------------------------------------------------------------------------

@dataclass
class SaddleSolution:
    """Converged populations plus summary observables and the sweep trace."""

    bias_population: Population
    field_population: Population
    free_energy: float
    free_energy_per_user: float
    free_energy_se: float
    free_energy_terms: dict
    ber: float
    ber_se: float
    sweeps: int
    converged: bool
    init_mode: str
    history: np.ndarray  # (sweeps, 2): per-sweep BER estimate, mean tanh h

    def to_dict(self) -> dict:
        return {
            "free_energy": self.free_energy,
            "free_energy_per_user": self.free_energy_per_user,
            "free_energy_se": self.free_energy_se,
            "free_energy_terms": {k: list(v) for k, v in self.free_energy_terms.items()},
            "ber": self.ber,
            "ber_se": self.ber_se,
            "sweeps": self.sweeps,
            "converged": self.converged,
            "init_mode": self.init_mode,
            "population_size": self.bias_population.size,
        }


def _window_drift(series: list, window: int) -> tuple[float, float]:
    """Half-window mean difference over the trailing window and its SE.

    The noise scale comes from successive differences (trend-insensitive,
    so a smooth transient cannot widen its own allowance); population
    composition fluctuations keep it well above zero however many resamples
    the per-sweep estimates use.
    """
    half = window // 2
    recent = np.asarray(series[-window:])
    drift = abs(recent[half:].mean() - recent[:half].mean())
    step_var = 0.5 * float(np.mean(np.diff(recent) ** 2))
    se = float(np.sqrt(step_var) * 2.0 / np.sqrt(window))
    return drift, se


def _batch_se(series: list, window: int, blocks: int = 5) -> float:
    vals = np.asarray(series[-window:])
    usable = (len(vals) // blocks) * blocks
    if usable < blocks:
        return float(vals.std(ddof=1) / np.sqrt(max(len(vals), 2)))
    means = vals[-usable:].reshape(blocks, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(blocks))


def run_to_convergence(spec: EnsembleSpec, Q: float, params: PDParams,
                       init_mode: str, rng=None) -> SaddleSolution:
    """Iterate sweeps until the BER estimate and mean tanh h are stationary
    across the trailing window, or max_sweeps is reached.

    Stationarity means the half-window mean drift stays within `tolerance`
    plus twice the drift statistic's own sampling error; the summary
    estimates fluctuate at O(1/sqrt(population_size)) per sweep, so the
    tolerance budgets the systematic drift, not the noise.  Non-convergence
    returns converged=False rather than raising.  The final BER is the
    trailing-window mean of per-sweep estimates; its standard error comes
    from batch means over that window, which also captures finite-population
    fluctuations.
    """
    if spec.modulation not in (BPSK, UNMODULATED):
        raise DomainError(f"unknown modulation {spec.modulation!r}")
    rng = as_rng(params.seed if rng is None else rng)
    joint = spec.modulation == UNMODULATED
    kind_b = JOINT_BIAS if joint else BIAS
    kind_f = JOINT_FIELD if joint else FIELD
    bias_pop = init_population(init_mode, params, rng, kind=kind_b)
    field_pop = init_population(init_mode, params, rng, kind=kind_f)
    sweep = pd_sweep_unmodulated if joint else pd_sweep_modulated

    ber_hist: list[float] = []
    tanh_hist: list[float] = []
    converged = False
    sweeps_done = 0
    for t in range(1, params.max_sweeps + 1):
        sweep(bias_pop, spec, Q, rng, field_pop=field_pop,
              field_cap=params.field_cap)
        ber_t, _ = ber_from_population(bias_pop, spec, params.ber_samples, rng)
        ber_hist.append(ber_t)
        tanh_hist.append(float(np.tanh(field_pop.values).mean()))
        sweeps_done = t
        if t >= params.window:
            d_ber, se_ber = _window_drift(ber_hist, params.window)
            d_tanh, se_tanh = _window_drift(tanh_hist, params.window)
            if (d_ber < params.tolerance + 2.0 * se_ber
                    and d_tanh < params.tolerance + 2.0 * se_tanh):
                converged = True
                break

    window = min(params.window, sweeps_done)
    ber = float(np.mean(ber_hist[-window:]))
    # batch-means SE, floored at the binomial resampling noise of the whole
    # window so a branch pinned at a constant estimate keeps a non-zero SE
    n_eff = window * params.ber_samples
    p_safe = (ber * n_eff + 1.0) / (n_eff + 2.0)
    ber_se = max(_batch_se(ber_hist, window),
                 float(np.sqrt(p_safe * (1.0 - p_safe) / n_eff)))
    fe = free_energy_from_populations(bias_pop, field_pop, spec, Q,
                                      params.fe_samples, rng)
    return SaddleSolution(
        bias_population=bias_pop, field_population=field_pop,
        free_energy=fe.per_chip, free_energy_per_user=fe.per_user,
        free_energy_se=fe.se, free_energy_terms=fe.terms,
        ber=ber, ber_se=ber_se, sweeps=sweeps_done, converged=converged,
        init_mode=init_mode,
        history=np.column_stack([ber_hist, tanh_hist]))


def free_energy(solution: SaddleSolution, spec: EnsembleSpec, Q: float,
                samples: int, rng) -> FreeEnergyEstimate:
    """Re-evaluate the free energy of a converged solution."""
    return free_energy_from_populations(solution.bias_population,
                                        solution.field_population,
                                        spec, Q, samples, rng)


# ---------------------------------------------------------------------------
# symmetry diagnostics and the metastability scan
# ---------------------------------------------------------------------------

def symmetry_check(population: Population, bins: int = 41) -> float:
    """Binned L1 distance between the value distributions conditioned on
    label +1 and label -1 (0 = identical, 2 = disjoint)."""
    if population.labels is None:
        raise DomainError("symmetry check needs a labelled population")
    v = population.values
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    p1, _ = np.histogram(v[population.labels > 0], bins=edges)
    p2, _ = np.histogram(v[population.labels < 0], bins=edges)
    if p1.sum() == 0 or p2.sum() == 0:
        raise DomainError("a label class is empty")
    return float(np.abs(p1 / p1.sum() - p2 / p2.sum()).sum())


def symmetry_noise_floor(population: Population, n_boot: int, rng,
                         bins: int = 41, quantile: float = 0.95) -> float:
    """Label-permutation null for the symmetry norm: the given quantile of
    the L1 distance when labels are reassigned at random."""
    if population.labels is None:
        raise DomainError("symmetry floor needs a labelled population")
    rng = as_rng(rng)
    dists = np.empty(n_boot)
    scratch = population.copy()
    for b in range(n_boot):
        scratch.labels = rng.permutation(population.labels)
        dists[b] = symmetry_check(scratch, bins=bins)
    return float(np.quantile(dists, quantile))


def spectral_efficiency(free_energy_value: float, scale: float = 1.0,
                        offset: float = 0.0) -> float:
    """Affine map from free energy to spectral efficiency.

    The constants are not fixed by the model and must be supplied; the
    default identity emits the raw free-energy value.
    """
    return scale * free_energy_value + offset


def metastability_scan(spec: EnsembleSpec, sigma0_grid, params: PDParams) -> list[dict]:
    """Random-init vs informed-init branches across a noise grid.

    A grid point is flagged multivalued when the branch BERs differ by more
    than 5x their combined standard error.  Returns one row per (sigma0,
    init) with keys matching the scan CSV columns, plus the affine
    spectral-efficiency readout under params.se_scale/se_offset.
    """
    rows = []
    for i, sigma0 in enumerate(sigma0_grid):
        Q = 1.0 / (2.0 * sigma0 * sigma0)
        branch = {}
        for j, init_mode in enumerate((RANDOM, INFORMED)):
            seed_seq = np.random.SeedSequence((params.seed, i, j))
            sol = run_to_convergence(spec, Q, params, init_mode,
                                     rng=np.random.default_rng(seed_seq))
            branch[init_mode] = sol
        se_comb = np.sqrt(branch[RANDOM].ber_se ** 2 + branch[INFORMED].ber_se ** 2)
        multivalued = abs(branch[RANDOM].ber - branch[INFORMED].ber) > 5.0 * se_comb
        for init_mode in (RANDOM, INFORMED):
            sol = branch[init_mode]
            rows.append({
                "sigma0": float(sigma0), "Q": Q, "init": init_mode,
                "ber": sol.ber, "ber_se": sol.ber_se,
                "free_energy": sol.free_energy, "fe_se": sol.free_energy_se,
                "converged": sol.converged, "multivalued": bool(multivalued),
                "spectral_efficiency": spectral_efficiency(
                    sol.free_energy, params.se_scale, params.se_offset),
            })
    return rows


def onset_Q(rows: list[dict]) -> float | None:
    """Smallest Q flagged multivalued in a scan table (grid resolution)."""
    qs = [r["Q"] for r in rows if r["multivalued"]]
    return min(qs) if qs else None
