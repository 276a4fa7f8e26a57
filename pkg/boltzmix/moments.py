"""
Polynomial moments of particle ensembles and the constants of the moment
differential inequality dm_k/dt <= -A_* m_2^{-g/(k-2)} m_k^{1+g/(k-2)} + B_k.

Constants whose closed forms raise 2^{k/2} to powers of order k are evaluated
in log space; the linear-scale value is exp of the log and may be inf.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .averaging import AveragingReport, c_tilde
from .errors import BelowThresholdError, ConfigError, MissingMomentError
from .kernels import KernelConstants, KernelSpec
from .kinematics import collide_arrays, unit
from .log import get_logger
from .mixture_model import MixtureSpec, ParticleState, brackets
from .reporting import CheckResult

logger = get_logger(__name__)

ESS_MIN = 100.0
OMEGA_TOL = 1e-9


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else float("inf")


# ---------------------------------------------------------------------------
# Moment vectors
# ---------------------------------------------------------------------------


@dataclass
class MomentVector:
    """Per-species moments m_k^i with Monte-Carlo error bars and effective sample sizes."""

    orders: Tuple[float, ...]
    values: np.ndarray
    stderr: np.ndarray
    ess: np.ndarray
    counts: Tuple[int, ...] = ()

    def _col(self, k: float) -> int:
        for n, o in enumerate(self.orders):
            if abs(o - k) <= 1e-12 * max(1.0, abs(k)):
                return n
        raise MissingMomentError(f"moment of order {k} not available (have {list(self.orders)})")

    def has(self, k: float) -> bool:
        try:
            self._col(k)
        except MissingMomentError:
            return False
        return True

    def species(self, i: int, k: float) -> float:
        """m_k^i for the 1-based species ordinal i."""
        return float(self.values[i - 1, self._col(k)])

    def mixture(self, k: float) -> float:
        return float(self.values[:, self._col(k)].sum())

    def mixture_stderr(self, k: float) -> float:
        return float(np.sqrt(np.sum(self.stderr[:, self._col(k)] ** 2)))

    def reliable(self, k: float) -> bool:
        """False when any species has an effective sample size below ESS_MIN at order k."""
        ess = self.ess[:, self._col(k)]
        return bool(np.all((ess >= ESS_MIN) | (self.values[:, self._col(k)] == 0.0)))

    @property
    def empty_species(self) -> List[int]:
        if not self.has(0.0):
            return []
        return [i + 1 for i in range(self.values.shape[0]) if self.values[i, self._col(0.0)] <= 0.0]

    @classmethod
    def from_values(cls, orders: Sequence[float], values) -> "MomentVector":
        """Exact moments (no sampling error)."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(tuple(float(k) for k in orders), values, np.zeros_like(values), np.full_like(values, np.inf))

    def to_dict(self) -> dict:
        return {
            "orders": list(self.orders),
            "species": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "ess": self.ess.tolist(),
            "mixture": [float(x) for x in self.values.sum(axis=0)],
        }


def species_brackets(ensemble, i: int) -> np.ndarray:
    mixture = ensemble.mixture
    sp = mixture.spec(i)
    return brackets(ensemble.v[i - 1], ensemble.I[i - 1], sp.mass, mixture.total_mass)


def moments_of_ensemble(ensemble, orders: Sequence[float]) -> MomentVector:
    """
    m_k^i = w_i * sum over particles of <state>_i^k for every species.

    Empty species give m_k^i = 0 and are listed in ``empty_species``.
    """
    orders = tuple(float(k) for k in orders)
    P = ensemble.mixture.n_species
    values = np.zeros((P, len(orders)))
    stderr = np.zeros_like(values)
    ess = np.zeros_like(values)
    counts = []
    for i in range(1, P + 1):
        w = float(ensemble.weights[i - 1])
        n = int(ensemble.v[i - 1].shape[0])
        counts.append(n)
        if n == 0:
            logger.warning(f"species {ensemble.mixture.spec(i).label} is empty: m_0 = 0")
            continue
        log_b = np.log(species_brackets(ensemble, i))
        for c, k in enumerate(orders):
            x = k * log_b
            lse = logsumexp(x)
            values[i - 1, c] = w * _exp(lse)
            # ESS of the weights b^k
            ess[i - 1, c] = _exp(2.0 * lse - logsumexp(2.0 * x))
            if n > 1 and np.isfinite(values[i - 1, c]):
                mean = values[i - 1, c] / (w * n)
                var = max(_exp(logsumexp(2.0 * x) - math.log(n)) - mean * mean, 0.0)
                stderr[i - 1, c] = w * n * math.sqrt(var / n)
    return MomentVector(orders, values, stderr, ess, tuple(counts))


def interpolation_check(mom: MomentVector, lambda1: float, lam: float, lambda2: float, rel_tol: float = 1e-12) -> bool:
    """m_lam <= m_lambda1^tau m_lambda2^(1-tau) for every species, lam = tau lambda1 + (1-tau) lambda2."""
    if not 0.0 <= lambda1 <= lam <= lambda2:
        raise ValueError(f"need 0 <= lambda1 <= lambda <= lambda2, got {lambda1}, {lam}, {lambda2}")
    tau = 1.0 if lambda2 == lambda1 else (lambda2 - lam) / (lambda2 - lambda1)
    for i in range(1, mom.values.shape[0] + 1):
        mid = mom.species(i, lam)
        lo, hi = mom.species(i, lambda1), mom.species(i, lambda2)
        if mid == 0.0:
            continue
        rhs = lo**tau * hi ** (1.0 - tau)
        if mid > rhs * (1.0 + rel_tol):
            return False
    return True


# ---------------------------------------------------------------------------
# ODI constants
# ---------------------------------------------------------------------------


@dataclass
class OdiConstants:
    k: float
    A_star: float
    epsilon: float
    B_k: float
    log_B_k: float
    D_k: float
    A_star_ij: np.ndarray
    A_tilde_star_ij: np.ndarray
    K_coll: Optional[float]
    C_H: float
    C_L: float
    E_k: float
    E_tilde_k: Optional[float]
    h_frak: float
    k_bar_star: int
    k_star: float
    gamma_bar: float
    gamma_bar_bar: float
    m0: float
    m2: float
    kappa_ub: np.ndarray
    L: np.ndarray
    C_k: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    flagged_pairs: List[Tuple[int, int]] = field(default_factory=list)
    conservative: bool = False

    @property
    def max_kappa_ub(self) -> float:
        return float(self.kappa_ub.max())

    def to_dict(self) -> dict:
        out = {}
        for name, value in self.__dict__.items():
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        out["flagged_pairs"] = [list(p) for p in self.flagged_pairs]
        out["label"] = "constants from empirical C_k"
        return out


def _log_K1(k, g_i, log_eps, log_A_tilde, m2_i, m0_j, m2_j):
    e = (k - 2.0 + g_i) / g_i
    return (-(k - 2.0) / g_i * log_eps + math.log(g_i / (k - 2.0 + g_i)) + e * log_A_tilde + math.log(m2_i)
            - (k - 2.0) / g_i * math.log(m0_j) + e * math.log(m2_j))


def _log_K2(k, g_i, g_j, log_eps, C_k, m0_i, m2_i, m0_j):
    den = 2.0 + g_j - g_i
    eps_exp = -((k - 2.0 + g_i) + (k + g_j) * g_i / (k - 2.0)) / den
    ratio_exp = (2.0 + g_j) * (k - 2.0 + g_i) / (den * (k - 2.0))
    c_exp = (k + g_j) * (k - 2.0 + g_i) / ((k - 2.0) * den)
    log_c = math.log(4.0 * C_k) + (0.5 * k + 1.0) * math.log(2.0)
    return (eps_exp * log_eps + ratio_exp * math.log((2.0 + g_j) / (k + g_j)) + c_exp * log_c + math.log(m0_j)
            - (k - 2.0 + g_i) / den * math.log(m0_i) + (k + g_j) / den * math.log(m2_i))


def _pair_B(k, i, j, gbb, log_eps, A_tilde, C_k, m0_i, m2_i, m0_j, m2_j):
    """log K1^{ij} and log K2^{ij} (None when the K2 exponents are undefined)."""
    g_i, g_j = gbb[i - 1], gbb[j - 1]
    lk1 = _log_K1(k, g_i, log_eps, math.log(A_tilde), m2_i, m0_j, m2_j)
    if 2.0 + g_j - g_i <= 0.0:
        return lk1, None
    return lk1, _log_K2(k, g_i, g_j, log_eps, C_k, m0_i, m2_i, m0_j)


def _a_star(mom, kc: KernelConstants, report: AveragingReport, mixture: MixtureSpec):
    P = mixture.n_species
    kbs = report.k_bar_star
    A_tilde = np.zeros((P, P))
    for i in range(1, P + 1):
        for j in range(1, P + 1):
            A_tilde[i - 1, j - 1] = kc.kappa_lb[i - 1, j - 1] - 2.0 * report.pair(i, j).C_at(kbs)
    if np.any(A_tilde <= 0.0):
        bad = [(i + 1, j + 1) for i, j in zip(*np.nonzero(A_tilde <= 0.0))]
        raise ConfigError(f"kappa_lb - 2 C_k_bar_star must be positive; fails for pairs {bad}")
    A_ij = A_tilde * kc.L
    m0s = np.array([mom.species(j, 0.0) for j in range(1, P + 1)])
    A_star = 0.5 * float(np.min(A_ij * m0s[None, :]))
    return A_tilde, A_ij, A_star


def _check_preconditions(mom: MomentVector, report: AveragingReport, mixture: MixtureSpec, k: float):
    if report.k_bar_star is None:
        raise BelowThresholdError("averaging threshold not reached on the k grid; ODI constants undefined")
    if k < report.k_bar_star:
        raise BelowThresholdError(f"order k = {k} is below averaging threshold k_bar_star = {report.k_bar_star}")
    if k <= 2.0:
        raise BelowThresholdError(f"ODI constants need k > 2, got {k}")
    for i in range(1, mixture.n_species + 1):
        if not mom.species(i, 0.0) > 0.0:
            raise ConfigError(f"zero species mass: m_0 of species {mixture.spec(i).label} must be positive")
        mom.species(i, 2.0)


def _B_k(mom, kc, report, mixture, k, A_tilde, A_star, conservative):
    P = mixture.n_species
    gbb = mixture.gamma_row_max
    m0 = mom.mixture(0.0)
    m2_mix = mom.mixture(2.0)
    log_eps = math.log(A_star / (2.0 * m0))
    K1 = np.full((P, P), -np.inf)
    K2 = np.full((P, P), -np.inf)
    C = np.zeros((P, P))
    flagged = []
    for i in range(1, P + 1):
        for j in range(1, P + 1):
            C_k = report.pair(i, j).C_at(k)
            C[i - 1, j - 1] = C_k
            m2_i = m2_mix if conservative else mom.species(i, 2.0)
            m2_j = m2_mix if conservative else mom.species(j, 2.0)
            lk1, lk2 = _pair_B(k, i, j, gbb, log_eps, A_tilde[i - 1, j - 1], C_k, mom.species(i, 0.0), m2_i,
                               mom.species(j, 0.0), m2_j)
            K1[i - 1, j - 1] = lk1
            if lk2 is None:
                flagged.append((i, j))
            else:
                K2[i - 1, j - 1] = lk2
    log_B = float(logsumexp(np.concatenate([K1.ravel(), K2.ravel()])))
    return log_B, K1, K2, C, flagged


def generation_root(m2: float, B_k: float, A_star: float, k: float, gamma_bar: float) -> float:
    """E_k = m2^{g/(k-2+g)} (B_k/A_*)^{(k-2)/(k-2+g)}."""
    den = k - 2.0 + gamma_bar
    if not np.isfinite(B_k):
        return float("inf")
    return m2 ** (gamma_bar / den) * (B_k / A_star) ** ((k - 2.0) / den)


def _log_generation_root(m2, log_B, A_star, k, gamma_bar):
    den = k - 2.0 + gamma_bar
    return gamma_bar / den * math.log(m2) + (k - 2.0) / den * (log_B - math.log(A_star))


def D_constant(k: float, kc: KernelConstants, m2: float) -> float:
    """D_k = 2 c~_k max(kappa_ub) m_2."""
    return 2.0 * c_tilde(k) * kc.max_kappa_ub * m2


def _log_E_tilde(log_E, m2, A_star, D_k, k, gamma_bar):
    """Generation envelope at t = 1/D_k; the root of the propagation bound max{E~_k, e m_k(0)}."""
    p = (k - 2.0) / gamma_bar
    return float(np.logaddexp(log_E, math.log(m2) + p * (math.log((k - 2.0) / (gamma_bar * A_star)) + math.log(D_k))))


def cauchy_constants(C_star: float, kernel_constants: KernelConstants) -> Tuple[float, float]:
    """(C_H, C_L) = (6 C_*^{3/2} max kappa_ub, 2 C_* max kappa_ub)."""
    if not C_star > 0.0:
        raise ValueError(f"C_star must be positive, got {C_star}")
    kmax = kernel_constants.max_kappa_ub
    return 6.0 * C_star**1.5 * kmax, 2.0 * C_star * kmax


def _core(mom, kc, report, mixture, k, conservative):
    _check_preconditions(mom, report, mixture, k)
    A_tilde, A_ij, A_star = _a_star(mom, kc, report, mixture)
    log_B, K1, K2, C, flagged = _B_k(mom, kc, report, mixture, k, A_tilde, A_star, conservative)
    log_E = _log_generation_root(mom.mixture(2.0), log_B, A_star, k, mixture.gamma_bar)
    return A_tilde, A_ij, A_star, log_B, K1, K2, C, flagged, log_E


def h_frak(mom: MomentVector, kc: KernelConstants, report: AveragingReport, mixture: MixtureSpec,
           conservative: bool = False) -> float:
    """E_{k*} + B_{k*}."""
    if report.k_star is None:
        raise BelowThresholdError("averaging threshold not reached; k_star undefined")
    *_, log_B, _, _, _, _, log_E = _core(mom, kc, report, mixture, report.k_star, conservative)
    return _exp(log_E) + _exp(log_B)


def compute_odi_constants(mom: MomentVector, kernel_constants: KernelConstants, averaging_report: AveragingReport,
                          mixture: MixtureSpec, k: float, conservative: bool = False,
                          C_star: Optional[float] = None) -> OdiConstants:
    """
    Constants of the moment ODI at order k >= k_bar_star.

    ``conservative`` replaces the species m_2^i by the mixture m_2 in B_k.
    C_H and C_L use ``C_star`` (default: h_frak).

    Raises:
        BelowThresholdError: k below the averaging threshold.
        ConfigError: a species has zero mass.
        MissingMomentError: m_0 or m_2 missing from ``mom``.
    """
    kc = kernel_constants
    A_tilde, A_ij, A_star, log_B, K1, K2, C, flagged, log_E = _core(mom, kc, averaging_report, mixture, k,
                                                                     conservative)
    if flagged:
        logger.warning(f"pairs {flagged} excluded from B_k: 2 + gamma_j - gamma_i <= 0")
    m0 = mom.mixture(0.0)
    m2 = mom.mixture(2.0)
    hf = h_frak(mom, kc, averaging_report, mixture, conservative)
    C_H, C_L = cauchy_constants(C_star if C_star is not None else hf, kc)
    ggg = mixture.gamma_bar_bar
    K_coll = 2.0 * kc.max_kappa_ub * mom.mixture(ggg) if mom.has(ggg) else None
    D_k = D_constant(k, kc, m2)
    E_tilde = None
    if mixture.gamma_bar > 0.0 and D_k > 0.0:
        E_tilde = _exp(_log_E_tilde(log_E, m2, A_star, D_k, k, mixture.gamma_bar))
    return OdiConstants(
        k=float(k), A_star=A_star, epsilon=A_star / (2.0 * m0), B_k=_exp(log_B), log_B_k=log_B,
        D_k=D_k, A_star_ij=A_ij, A_tilde_star_ij=A_tilde, K_coll=K_coll, C_H=C_H, C_L=C_L,
        E_k=_exp(log_E), E_tilde_k=E_tilde, h_frak=hf, k_bar_star=int(averaging_report.k_bar_star),
        k_star=float(averaging_report.k_star), gamma_bar=mixture.gamma_bar, gamma_bar_bar=ggg, m0=m0, m2=m2,
        kappa_ub=kc.kappa_ub.copy(), L=kc.L.copy(), C_k=C, K1=np.exp(K1), K2=np.exp(K2), flagged_pairs=flagged,
        conservative=conservative,
    )


def asymptotic_log_B_k(mom: MomentVector, consts: OdiConstants, mixture: MixtureSpec, report: AveragingReport,
                       k: float) -> float:
    """Log of the large-k form of B_k (diagnostic)."""
    gbb = mixture.gamma_row_max
    best = -np.inf
    for i in range(1, mixture.n_species + 1):
        for j in range(1, mixture.n_species + 1):
            den = 2.0 + gbb[j - 1] - gbb[i - 1]
            if den <= 0.0:
                continue
            inner = 16.0 * report.pair(i, j).C_at(k) * mom.species(i, 2.0) * consts.m0 / (
                mom.species(i, 0.0) * consts.A_star)
            val = (math.log(mom.species(j, 0.0)) + k / den * math.log(inner)
                   + (2.0 + gbb[j - 1]) / den * math.log((2.0 + gbb[j - 1]) / k) + k * k / (2.0 * den) * math.log(2.0))
            best = max(best, val)
    return float(best)


def B_k_growth(mom: MomentVector, kc: KernelConstants, report: AveragingReport, mixture: MixtureSpec,
               ks: Sequence[float]):
    """
    Exact and asymptotic log B_k over ``ks``.

    Returns:
        tuple: (log_exact, log_asymptotic) arrays
    """
    exact, asym = [], []
    for k in ks:
        c = compute_odi_constants(mom, kc, report, mixture, k)
        exact.append(c.log_B_k)
        asym.append(asymptotic_log_B_k(mom, c, mixture, report, k))
    return np.array(exact), np.array(asym)


# ---------------------------------------------------------------------------
# Envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonEnvelope:
    """
    Upper envelope z(t) = E (1 + K t^{-beta}) of y' = B - A m2^{-c} y^{1+c}.

    With m2 = 1 this is the plain comparison lemma for y' <= B - A y^{1+c}.
    """

    A: float
    B: float
    c: float
    m2: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "c", "m2"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"comparison envelope needs positive {name}, got {getattr(self, name)}")

    @property
    def A_eff(self) -> float:
        return self.A * self.m2 ** (-self.c)

    @property
    def log_E(self) -> float:
        return (math.log(self.B) - math.log(self.A_eff)) / (1.0 + self.c)

    @property
    def E(self) -> float:
        return _exp(self.log_E)

    @property
    def beta(self) -> float:
        return 1.0 / self.c

    @property
    def log_coefficient(self) -> float:
        """log of (c A_eff)^{-1/c}."""
        return -math.log(self.c * self.A_eff) / self.c

    @property
    def K(self) -> float:
        return _exp(self.log_coefficient - self.log_E)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0):
            raise ValueError("comparison envelope is defined for t > 0")
        with np.errstate(over="ignore"):
            return self.E + np.exp(self.log_coefficient - self.beta * np.log(t))


def comparison_envelope(A: float, B: float, c: float, m2: float, t):
    """z(t) of the comparison lemma; scalar or array in t."""
    z = ComparisonEnvelope(A, B, c, m2)(t)
    return float(z) if np.ndim(z) == 0 else z


def generation_envelope(consts: OdiConstants, t):
    """E_k + m2 ((k-2)/(g A_*))^{(k-2)/g} t^{-(k-2)/g}."""
    k, g = consts.k, consts.gamma_bar
    p = (k - 2.0) / g
    t = np.asarray(t, dtype=float)
    log_coef = math.log(consts.m2) + p * math.log((k - 2.0) / (g * consts.A_star))
    with np.errstate(over="ignore"):
        return consts.E_k + np.exp(log_coef - p * np.log(t))


def propagation_bound(consts: OdiConstants, m_k0: float) -> float:
    return max(consts.E_k, m_k0)


@dataclass
class SubThresholdEnvelope:
    """Envelopes for 2 < k < k_bar_star, obtained through order k_bar_star + 1."""

    k: float
    k_bar_star: int
    m2: float
    gamma_bar: float
    A_star: float
    E_above: float
    D_k: float

    def __call__(self, t):
        k, kb, g = self.k, self.k_bar_star, self.gamma_bar
        t = np.asarray(t, dtype=float)
        first = self.m2 ** ((kb - k + 1.0) / (kb - 1.0)) * self.E_above ** ((k - 2.0) / (kb - 1.0))
        log_coef = math.log(self.m2) + (k - 2.0) / g * math.log((kb - 1.0) / (g * self.A_star))
        with np.errstate(over="ignore"):
            return first + np.exp(log_coef - (k - 2.0) / g * np.log(t))

    @property
    def E_tilde(self) -> float:
        return float(self(1.0 / self.D_k))

    def propagation(self, m_k0: float) -> float:
        return max(self.E_tilde, math.e * m_k0)


def sub_threshold_envelope(mom: MomentVector, kc: KernelConstants, report: AveragingReport, mixture: MixtureSpec,
                           k: float, conservative: bool = False) -> SubThresholdEnvelope:
    if report.k_bar_star is None:
        raise BelowThresholdError("averaging threshold not reached on the k grid")
    kb = report.k_bar_star
    if not 2.0 < k < kb:
        raise ValueError(f"sub-threshold envelope needs 2 < k < {kb}, got {k}")
    above = compute_odi_constants(mom, kc, report, mixture, kb + 1.0, conservative)
    m2 = mom.mixture(2.0)
    return SubThresholdEnvelope(k=float(k), k_bar_star=kb, m2=m2, gamma_bar=mixture.gamma_bar,
                                A_star=above.A_star, E_above=above.E_k, D_k=D_constant(k, kc, m2))


# ---------------------------------------------------------------------------
# Bilinear bounds and collision frequencies
# ---------------------------------------------------------------------------


def collision_moment_bound(mom_f: MomentVector, mom_g: MomentVector, constants: OdiConstants, k: float, regime: str,
                           pair: Tuple[int, int], mixture: MixtureSpec) -> float:
    """
    Right side of the bilinear estimate for species i of f against species j of g.

    ``any_k``: 2 kappa_ub c~_k (m2^i[f] mk^j[g] + mk^i[f] m2^j[g]).
    ``above_kstar``: negative coercive terms, the epsilon terms and the B terms.

    Raises:
        MissingMomentError: a required order is absent from the inputs.
    """
    i, j = pair
    kappa = float(constants.kappa_ub[i - 1, j - 1])
    if regime == "any_k":
        if k <= 2.0:
            raise ValueError(f"any_k bound needs k > 2, got {k}")
        return 2.0 * kappa * c_tilde(k) * (mom_f.species(i, 2.0) * mom_g.species(j, k)
                                           + mom_f.species(i, k) * mom_g.species(j, 2.0))
    if regime != "above_kstar":
        raise ValueError(f"unknown regime '{regime}'")
    if k < constants.k_bar_star:
        raise BelowThresholdError(f"order k = {k} is below averaging threshold k_bar_star = {constants.k_bar_star}")
    gbb = mixture.gamma_row_max
    g = float(mixture.gamma[i - 1, j - 1])
    m0_i, m0_j = mom_f.species(i, 0.0), mom_g.species(j, 0.0)
    m2_i, m2_j = mom_f.species(i, 2.0), mom_g.species(j, 2.0)
    eps = constants.epsilon
    log_eps = math.log(eps)
    negative = (constants.A_star_ij[i - 1, j - 1] * m0_j * mom_f.species(i, k + g)
                + constants.A_star_ij[j - 1, i - 1] * m0_i * mom_g.species(j, k + g))
    small = 4.0 * eps * (m0_j * mom_f.species(i, k + gbb[i - 1]) + m0_i * mom_g.species(j, k + gbb[j - 1]))
    B = 0.0
    for (a, b, m0a, m2a, m0b, m2b) in ((i, j, m0_i, m2_i, m0_j, m2_j), (j, i, m0_j, m2_j, m0_i, m2_i)):
        lk1, lk2 = _pair_B(k, a, b, gbb, log_eps, constants.A_tilde_star_ij[a - 1, b - 1],
                           float(constants.C_k[a - 1, b - 1]), m0a, m2a, m0b, m2b)
        B += _exp(lk1) + (_exp(lk2) if lk2 is not None else 0.0)
    return -negative + small + B


def collision_frequency_bound(state: ParticleState, mom: MomentVector, kernel_constants: KernelConstants,
                              mixture: MixtureSpec) -> float:
    """(K/2)(1 + <state>^{g}) with K = 2 max(kappa_ub) m_g and g the largest row maximum of gamma."""
    ggg = mixture.gamma_bar_bar
    K = 2.0 * kernel_constants.max_kappa_ub * mom.mixture(ggg)
    sp = mixture.spec(state.species)
    b = float(brackets(state.v, state.I, sp.mass, mixture.total_mass))
    return 0.5 * K * (1.0 + b**ggg)


def collision_frequency(state: ParticleState, ensemble, spec: KernelSpec) -> float:
    """Exact collision frequency of one state against a weighted ensemble."""
    total = 0.0
    i = state.species
    for j in range(1, ensemble.mixture.n_species + 1):
        vb, Ib = ensemble.v[j - 1], ensemble.I[j - 1]
        if vb.shape[0] == 0:
            continue
        pk = spec.pair(i, j)
        va = np.broadcast_to(state.v, vb.shape)
        Ia = np.full(vb.shape[0], state.I)
        total += float(ensemble.weights[j - 1]) * math.fsum(pk.integrated_rate(va, Ia, vb, Ib))
    return total


def moment_production(ensemble, spec: KernelSpec, i: int, j: int, k: float, n_samples: int,
                      rng: np.random.Generator):
    """
    Monte-Carlo estimate of the bilinear form of species i against species j:
    the kernel-weighted change of <a>^k + <b>^k over random collisions.

    Returns:
        tuple: (estimate, standard error)
    """
    mixture = ensemble.mixture
    pk = spec.pair(i, j)
    Ni, Nj = ensemble.v[i - 1].shape[0], ensemble.v[j - 1].shape[0]
    p = rng.integers(0, Ni, n_samples)
    q = rng.integers(0, Nj, n_samples)
    va, Ia = ensemble.v[i - 1][p], ensemble.I[i - 1][p]
    vb, Ib = ensemble.v[j - 1][q], ensemble.I[j - 1][q]
    u = va - vb
    speed = np.linalg.norm(u, axis=1)
    u_hat = np.where(speed[:, None] > 0.0, u / np.where(speed > 0.0, speed, 1.0)[:, None],
                     unit(rng.standard_normal(u.shape)))
    sigma = pk.sample_sigma(rng, u_hat)
    R, r = pk.sample_params(rng, n_samples)
    va2, Ia2, vb2, Ib2, *_ = collide_arrays(va, Ia, vb, Ib, pk.mass_a, pk.mass_b, sigma, R, r, pk.cls)
    m = mixture.total_mass
    delta = (brackets(va2, Ia2, pk.mass_a, m) ** k + brackets(vb2, Ib2, pk.mass_b, m) ** k
             - brackets(va, Ia, pk.mass_a, m) ** k - brackets(vb, Ib, pk.mass_b, m) ** k)
    scale = (ensemble.weights[i - 1] * Ni) * (ensemble.weights[j - 1] * Nj) * pk.b_norm * pk.weight_integral
    values = scale * delta * pk.evaluate_without_angular(va, Ia, vb, Ib, R, r)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples))


def moment_production_check(ensemble, spec: KernelSpec, kc: KernelConstants, k: float, n_samples: int,
                            rng: Optional[np.random.Generator] = None) -> List[CheckResult]:
    """Estimated bilinear forms against the any-order bound, per ordered pair and for the mixture."""
    rng = rng or np.random.default_rng(0)
    mixture = ensemble.mixture
    mom = moments_of_ensemble(ensemble, [0.0, 2.0, k])
    checks = []
    total, total_var = 0.0, 0.0
    for (i, j) in mixture.pairs():
        est, se = moment_production(ensemble, spec, i, j, k, n_samples, rng)
        kappa = float(kc.kappa_ub[i - 1, j - 1])
        bound = 2.0 * kappa * c_tilde(k) * (mom.species(i, 2.0) * mom.species(j, k) + mom.species(i, k)
                                            * mom.species(j, 2.0))
        checks.append(CheckResult.at_most(f"moment_production_vs_bound[{i},{j}]", est - 3.0 * se, bound, k=k,
                                          estimate=est, stderr=se))
        total += 0.5 * est
        total_var += 0.25 * se * se
    D = D_constant(k, kc, mom.mixture(2.0))
    checks.append(CheckResult.at_most("mixture_moment_production_vs_Dk", total - 3.0 * math.sqrt(total_var),
                                      D * mom.mixture(k), k=k, estimate=total))
    return checks


# ---------------------------------------------------------------------------
# Invariant sets of initial data
# ---------------------------------------------------------------------------


@dataclass
class OmegaResult:
    member: bool
    tilde_member: bool
    reasons: List[str]
    diagnostics: Dict[str, float]

    def to_dict(self) -> dict:
        return {"member": self.member, "tilde_member": self.tilde_member, "reasons": list(self.reasons),
                "diagnostics": dict(self.diagnostics)}


def omega_membership(mom: MomentVector, constants: OdiConstants, C0: Sequence[float], C2: float, C_star: float,
                     mixture: MixtureSpec, tol: float = OMEGA_TOL) -> OmegaResult:
    """
    Membership of the ensemble moments in the invariant set of initial data.

    Raises:
        ConfigError: C_star below h_frak (the set is not invariant).
    """
    if C_star < constants.h_frak:
        raise ConfigError(f"C_star = {C_star} is below h_frak = E_k* + B_k* = {constants.h_frak}")
    reasons = []
    diag: Dict[str, float] = {}
    for i in range(1, mixture.n_species + 1):
        m0 = mom.species(i, 0.0)
        target = float(C0[i - 1])
        diag[f"m0[{i}]"] = m0
        if abs(m0 - target) > tol * max(abs(target), 1e-300):
            reasons.append(f"m_0 of species {mixture.spec(i).label} = {m0!r} differs from C_0 = {target!r}")
    m2 = mom.mixture(2.0)
    diag["m2"] = m2
    if abs(m2 - C2) > tol * abs(C2):
        reasons.append(f"mixture m_2 = {m2!r} differs from C_2 = {C2!r}")
    k_star = constants.k_star
    mk = mom.mixture(k_star)
    diag[f"m_{k_star}"] = mk
    if not mk <= C_star:
        reasons.append(f"m_k* = {mk!r} exceeds C_star = {C_star!r} at k* = {k_star}")
    tilde_order = max(2.0 + mixture.gamma_bar_bar - mixture.gamma_bar, 0.0)
    tilde_ok = all(0.0 < mom.species(i, 0.0) < math.inf for i in range(1, mixture.n_species + 1))
    tilde_ok = tilde_ok and math.isfinite(mom.mixture(tilde_order))
    return OmegaResult(member=not reasons, tilde_member=tilde_ok, reasons=reasons, diagnostics=diag)


def default_C_star(mom: MomentVector, constants: OdiConstants) -> float:
    """Smallest admissible C_star that still admits the ensemble: max(h_frak, m_k*)."""
    return max(constants.h_frak, mom.mixture(constants.k_star))
