"""
Averaging over the collision manifold.

For a fixed pair of states the squared post-collision brackets are bounded by
contraction factors times the bracket energy; integrating the k-th power of a
factor against b * partition_ub * weight over (sigma, r, R) gives the
averaged contraction. Its supremum over states is the empirical C_k.

Sphere integrals are reduced to the single coordinate t = V_hat . sigma via
``quadrature.sphere_profile_rule``; the parameter integrals use composite
Gauss-Jacobi rules carrying the weight's endpoint powers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kernels import KernelConstants, KernelSpec, Model23Partition, PairKernel
from .kinematics import split_quantities
from .log import get_logger
from .mixture_model import InteractionClass, MixtureSpec, ParticleState, pair_frame, random_states
from .quadrature import adaptive, composite_rule, sphere_profile_rule
from .reporting import CheckResult

logger = get_logger(__name__)

K_GRID: Tuple[int, ...] = (2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024)
CORNER_XI = 0.999
N_PHI = 32
PARAM_CAP = 32
PP_PARAM_CAP = 16
DECAY_SLOPE_MAX = -0.4
DECAY_RESIDUAL_MAX = 0.1


@dataclass(frozen=True)
class SplitInputs:
    """State-dependent quantities of a pair, reduced to what the averages need."""

    cls: InteractionClass
    s: float
    cos_beta: float
    theta_E: float = 2.0
    rest_E: float = 2.0

    @classmethod
    def from_states(cls, a: ParticleState, b: ParticleState, mixture: MixtureSpec) -> "SplitInputs":
        frame = pair_frame(a, b, mixture)
        m = mixture.total_mass
        speed_V = float(np.linalg.norm(frame.V))
        speed_u = float(np.linalg.norm(frame.u))
        if speed_V == 0.0 or speed_u == 0.0:
            cos_beta = 0.0
        else:
            cos_beta = float(frame.V @ frame.u) / (speed_V * speed_u)
        return cls(
            cls=frame.cls,
            s=frame.s,
            cos_beta=float(np.clip(cos_beta, -1.0, 1.0)),
            theta_E=1.0 + frame.total_mass * float(frame.V @ frame.V) / (2.0 * m),
            rest_E=1.0 + frame.E / m,
        )

    @property
    def energy(self) -> float:
        return self.theta_E + self.rest_E

    @property
    def s_bar(self) -> float:
        return min(self.s, 1.0 - self.s)


def _xi_to_ratio(xi):
    return xi / (1.0 - xi)


def parameter_rule(pk: PairKernel, n: int):
    """
    Nodes and weights in (r, R) for the weight of the pair times partition_ub.

    Returns:
        tuple: (R, r, w), flat arrays; a single unit node for mono-mono pairs.
    """
    if not pk.cls.has_R:
        return np.ones(1), np.full(1, 0.5), np.ones(1)
    left, right = pk.R_exponents
    R, wR = composite_rule(n, 0.0, 1.0, left, right, breaks=pk.partition.R_breaks() or None)
    if not pk.cls.has_r:
        r = np.full(R.shape, 0.5)
        return R, r, wR * pk.partition.ub(r, R)
    ra, rb = pk.r_exponents
    breaks = None
    if isinstance(pk.partition, Model23Partition):
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(R < 1.0, pk.partition.ratio * R / np.maximum(1.0 - R, 1e-300), 1.0)
        breaks = np.stack([np.full(R.shape, 0.5), np.clip(x, 0.0, 1.0), np.clip(1.0 - x, 0.0, 1.0)], axis=-1)
        r, wr = composite_rule(n, 0.0, 1.0, ra, rb, breaks=breaks)
    else:
        r1, wr1 = composite_rule(n, 0.0, 1.0, ra, rb)
        r = np.broadcast_to(r1, R.shape + r1.shape)
        wr = np.broadcast_to(wr1, R.shape + wr1.shape)
    RR = np.broadcast_to(R[:, None], r.shape)
    w = wR[:, None] * wr
    return RR.ravel(), np.asarray(r).ravel(), (w * pk.partition.ub(r, RR)).ravel()


def contraction_factors(inputs: SplitInputs, t_abs, R, r):
    """
    Contraction factors (F_a, F_b) with F_a E bounding the first squared
    post-collision bracket. Inputs broadcast elementwise.
    """
    gap = 1.0 - np.asarray(t_abs, dtype=float)
    R = np.asarray(R, dtype=float)
    cls = inputs.cls
    if cls is InteractionClass.MONO_MONO:
        F = 1.0 - inputs.s_bar * gap + 0.0 * R
        return F, F
    if cls is not InteractionClass.POLY_POLY:
        F = 1.0 - inputs.s_bar * R * gap
        return F, F
    r = np.asarray(r, dtype=float)
    p, q, tt, _, _, _ = split_quantities(inputs.s, inputs.theta_E, inputs.rest_E, inputs.energy, R, cls)
    F_a = 1.0 - q * gap - tt * (1.0 - r)
    F_b = 1.0 - p * gap - tt * r
    return np.clip(F_a, 0.0, 1.0), np.clip(F_b, 0.0, 1.0)


def _powers_sum(F, wP, wT, ks):
    return np.array([wP @ np.power(F, k) @ wT for k in ks])


def contraction_profile(inputs: SplitInputs, pk: PairKernel, ks: Sequence[float], tol: float = 1e-9,
                        n_param: int = 12, n_t_max: int = 512, strict: bool = False):
    """
    Averaged contractions for all orders at once.

    Returns:
        tuple: (A_a, A_b, error) arrays over ``ks``.
    """
    ks = np.asarray(ks, dtype=float)
    cap = PP_PARAM_CAP if pk.cls is InteractionClass.POLY_POLY else PARAM_CAP

    def evaluate(n_t):
        R, r, wP = parameter_rule(pk, min(max(n_param, n_t // 4), cap))
        t, wT = sphere_profile_rule(n_t, N_PHI, pk.dimension, inputs.cos_beta, pk.angular)
        F_a, F_b = contraction_factors(inputs, np.abs(t)[None, :], R[:, None], r[:, None])
        A_a = _powers_sum(F_a, wP, wT, ks)
        A_b = A_a if F_b is F_a else _powers_sum(F_b, wP, wT, ks)
        return np.concatenate([A_a, A_b])

    values, err, _ = adaptive(evaluate, n0=16, n_max=n_t_max, tol=tol, what="averaged contraction", strict=strict)
    n = ks.size
    return values[:n], values[n:], np.maximum(err[:n], err[n:])


def averaged_contraction(cls: InteractionClass, k: float, split_inputs: SplitInputs, kernel_spec: PairKernel,
                         tol: float = 1e-9) -> float:
    """
    Integral of the k-th power of the contraction factor; the larger of the two
    one-sided factors for poly-poly pairs.

    Raises:
        QuadratureError: the rule did not converge.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    if split_inputs.cls is not cls or kernel_spec.cls is not cls:
        raise ValueError(f"class mismatch: {cls.value}, inputs {split_inputs.cls.value}, kernel {kernel_spec.cls.value}")
    A_a, A_b, _ = contraction_profile(split_inputs, kernel_spec, [k], tol=tol, strict=True)
    return float(max(A_a[0], A_b[0]))


def state_strata(pk: PairKernel, n_states: int, rng: np.random.Generator) -> List[SplitInputs]:
    """
    Stratified states covering |V_hat . u_hat| and the energy ratios, plus the
    corners cos_beta in {0, 1} and ratios at 0 and near infinity.
    """
    s = pk.mass_a / (pk.mass_a + pk.mass_b)
    out = []
    if pk.cls is InteractionClass.POLY_POLY:
        m = max(1, int(round(n_states ** (1.0 / 3.0))))
        for a in range(m):
            for b in range(m):
                for c in range(m):
                    cb, xx, xe = (np.array([a, b, c]) + rng.random(3)) / m
                    xx, xe = min(xx, CORNER_XI), min(xe, CORNER_XI)
                    out.append(SplitInputs(pk.cls, s, float(cb), 1.0 + _xi_to_ratio(xx), 1.0 + _xi_to_ratio(xe)))
        for cb in (0.0, 1.0):
            for xx in (0.0, CORNER_XI):
                for xe in (0.0, CORNER_XI):
                    out.append(SplitInputs(pk.cls, s, cb, 1.0 + _xi_to_ratio(xx), 1.0 + _xi_to_ratio(xe)))
        return out
    for a in range(max(1, n_states)):
        cb = (a + rng.random()) / max(1, n_states)
        out.append(SplitInputs(pk.cls, s, float(cb)))
    out.extend([SplitInputs(pk.cls, s, 0.0), SplitInputs(pk.cls, s, 1.0)])
    return out


def estimate_profile(pk: PairKernel, n_states: int, ks: Sequence[float] = K_GRID, tol: float = 1e-9,
                     rng: Optional[np.random.Generator] = None, n_param: int = 12):
    """
    Empirical C_k over the k grid: the supremum over stratified states.

    Returns:
        tuple: (C, error) arrays over ``ks``.
    """
    rng = rng or np.random.default_rng(0)
    best = np.zeros(len(ks))
    best_err = np.zeros(len(ks))
    for inputs in state_strata(pk, n_states, rng):
        A_a, A_b, err = contraction_profile(inputs, pk, ks, tol=tol, n_param=n_param)
        value = np.maximum(A_a, A_b)
        better = value > best
        best = np.where(better, value, best)
        best_err = np.where(better, err, best_err)
    return best, best_err


def estimate_Ck(cls: InteractionClass, k: float, kernel_spec: PairKernel, mixture: MixtureSpec, n_states: int,
                tol: float = 1e-9, rng: Optional[np.random.Generator] = None):
    """
    Empirical C_k of one pair at a single order.

    Returns:
        tuple: (C_k, error bar)
    """
    if n_states < 1:
        raise ValueError(f"n_states must be >= 1, got {n_states}")
    if kernel_spec.cls is not cls:
        raise ValueError(f"class mismatch: {cls.value} vs kernel {kernel_spec.cls.value}")
    C, err = estimate_profile(kernel_spec, n_states, [k], tol=tol, rng=rng)
    return float(C[0]), float(err[0])


def c_tilde(k: float) -> float:
    """Binomial splitting constant 2^{k/2+1}."""
    return 2.0 ** (0.5 * k + 1.0)


@dataclass
class PairAveraging:
    i: int
    j: int
    cls: InteractionClass
    k_grid: np.ndarray
    C: np.ndarray
    error: np.ndarray
    kappa_lb: float
    kappa_ub: float
    k_bar_star: Optional[int]
    decay_slope: float
    decay_residual: float
    method: str = "quadrature"

    @property
    def threshold_reached(self) -> bool:
        return self.k_bar_star is not None

    def C_at(self, k: float) -> float:
        """C at the largest grid order not exceeding k; C is nonincreasing so this bounds C_k."""
        idx = np.searchsorted(self.k_grid, k, side="right") - 1
        if idx < 0:
            raise ValueError(f"order {k} below the averaging grid")
        return float(self.C[idx])

    def to_dict(self) -> dict:
        return {
            "pair": [self.i, self.j],
            "class": self.cls.value,
            "label": "empirical C_k",
            "method": self.method,
            "kappa_lb": self.kappa_lb,
            "kappa_ub": self.kappa_ub,
            "k_bar_star": self.k_bar_star,
            "threshold_reached": self.threshold_reached,
            "decay_slope": self.decay_slope,
            "decay_fit_residual": self.decay_residual,
            "table": [{"k": float(k), "C_k": float(c), "error": float(e)}
                      for k, c, e in zip(self.k_grid, self.C, self.error)],
        }

    def csv_rows(self):
        return [(float(k), float(c), float(e)) for k, c, e in zip(self.k_grid, self.C, self.error)]


@dataclass
class AveragingReport:
    pairs: Dict[Tuple[int, int], PairAveraging]
    k_bar_star: Optional[int]
    k_star: Optional[float]
    gamma_bar_bar: float
    flagged: List[Tuple[int, int]] = field(default_factory=list)

    def pair(self, i: int, j: int) -> PairAveraging:
        return self.pairs[(i, j)]

    def to_dict(self) -> dict:
        return {
            "label": "empirical C_k",
            "k_bar_star": self.k_bar_star,
            "k_star": self.k_star,
            "threshold_reached": self.k_bar_star is not None,
            "flagged_pairs": [list(p) for p in self.flagged],
            "pairs": [p.to_dict() for p in self.pairs.values()],
        }


def decay_fit(ks, C, lo: float = 16.0, hi: float = 256.0) -> Tuple[float, float]:
    """
    Log-log slope of C_k over [lo, hi] and the largest relative residual of the fit.
    """
    ks = np.asarray(ks, dtype=float)
    C = np.asarray(C, dtype=float)
    mask = (ks >= lo) & (ks <= hi) & (C > 0.0)
    if mask.sum() < 2:
        return float("nan"), float("nan")
    x, y = np.log(ks[mask]), np.log(C[mask])
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(np.expm1(y - (slope * x + intercept)))))
    return float(slope), residual


def find_k_bar_star(C: Sequence[float], kappa_lb: float, ks: Sequence[float] = K_GRID) -> Optional[int]:
    """Smallest grid order with C_k < kappa_lb / 2, or None when the grid is exhausted."""
    for k, c in zip(ks, C):
        if c < 0.5 * kappa_lb:
            return int(k)
    return None


def _pair_averaging(pk: PairKernel, constants: KernelConstants, n_states: int, ks, tol, seed, n_param):
    rng = np.random.default_rng([seed, pk.i, pk.j])
    C, err = estimate_profile(pk, n_states, ks, tol=tol, rng=rng, n_param=n_param)
    kappa_lb = float(constants.kappa_lb[pk.i - 1, pk.j - 1])
    kappa_ub = float(constants.kappa_ub[pk.i - 1, pk.j - 1])
    slope, residual = decay_fit(ks, C)
    kbs = find_k_bar_star(C, kappa_lb, ks)
    if kbs is None:
        logger.warning(f"pair ({pk.i},{pk.j}): threshold not reached on the k grid (k > {int(ks[-1])})")
    return PairAveraging(pk.i, pk.j, pk.cls, np.asarray(ks, dtype=float), C, err, kappa_lb, kappa_ub, kbs,
                         slope, residual)


def averaging_report(spec: KernelSpec, mixture: MixtureSpec, constants: KernelConstants, n_states: int = 64,
                     kmax: int = 1024, tol: float = 1e-9, threads: int = 1, seed: int = 0,
                     n_param: int = 12) -> AveragingReport:
    """
    C_k tables for every ordered pair, the threshold per pair and the global
    k_bar_star and k_star. Unordered pairs are computed once; (j, i) mirrors (i, j).
    """
    ks = [k for k in K_GRID if k <= kmax]
    if not ks:
        raise ValueError(f"kmax {kmax} below the smallest grid order {K_GRID[0]}")
    keys = mixture.pairs(ordered=False)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {key: pool.submit(_pair_averaging, spec.pair(*key), constants, n_states, ks, tol, seed, n_param)
                   for key in keys}
        results = {key: fut.result() for key, fut in futures.items()}
    pairs = {}
    for (i, j), res in results.items():
        pairs[(i, j)] = res
        if i != j:
            pairs[(j, i)] = PairAveraging(j, i, res.cls.swapped(), res.k_grid, res.C, res.error, res.kappa_lb,
                                          res.kappa_ub, res.k_bar_star, res.decay_slope, res.decay_residual)
    flagged = sorted(p for p, res in pairs.items() if res.k_bar_star is None)
    kbs = None if flagged else max(res.k_bar_star for res in pairs.values())
    ggg = mixture.gamma_bar_bar
    k_star = None if kbs is None else max(2.0 + 2.0 * ggg, float(kbs))
    logger.info(f"averaging: k_bar_star={kbs} k_star={k_star} over {len(pairs)} ordered pairs")
    return AveragingReport(pairs=dict(sorted(pairs.items())), k_bar_star=kbs, k_star=k_star, gamma_bar_bar=ggg,
                           flagged=flagged)


# ---------------------------------------------------------------------------
# Gain averages
# ---------------------------------------------------------------------------


def gain_profile(inputs: SplitInputs, pk: PairKernel, ks: Sequence[float], n_t: int = 64, n_param: int = 16):
    """
    G+ for each k: the average of <a'>^k + <b'>^k, together with the pointwise
    contraction bound E^{k/2} (A_a(k/2) + A_b(k/2)) on the same rule.

    A pair with zero centre-of-mass velocity has theta_E = 1, so the cross
    term vanishes and cos_beta is irrelevant.

    Returns:
        tuple: (G, bound) arrays over ``ks``.
    """
    ks = np.asarray(ks, dtype=float)
    R, r, wP = parameter_rule(pk, n_param)
    t, wT = sphere_profile_rule(n_t, N_PHI, pk.dimension, inputs.cos_beta, pk.angular)
    E = inputs.energy
    cls = inputs.cls
    Rc = R[:, None]
    p, q, tt, lam, _, _ = split_quantities(inputs.s, inputs.theta_E, inputs.rest_E, E, Rc, cls)
    if cls is InteractionClass.POLY_POLY:
        share = r[:, None]
    elif cls is InteractionClass.POLY_MONO:
        share = 1.0
    else:
        share = 0.0
    cross = lam * t[None, :]
    a2 = np.clip(E * (p + share * tt) + cross, 0.0, None)
    b2 = np.clip(E * (q + (1.0 - share) * tt) - cross, 0.0, None)
    F_a, F_b = contraction_factors(inputs, np.abs(t)[None, :], Rc, r[:, None])
    G = np.array([wP @ (np.power(a2, 0.5 * k) + np.power(b2, 0.5 * k)) @ wT for k in ks])
    bound = np.array([E ** (0.5 * k) * (wP @ (np.power(F_a, 0.5 * k) + np.power(F_b, 0.5 * k)) @ wT) for k in ks])
    return G, bound


def gain_average(cls: InteractionClass, k: float, a: ParticleState, b: ParticleState, kernel_spec: PairKernel,
                 mixture: MixtureSpec, n_t: int = 64, n_param: int = 16) -> float:
    """G+ for a fixed pair of states."""
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    inputs = SplitInputs.from_states(a, b, mixture)
    if inputs.cls is not cls:
        raise ValueError(f"expected a {cls.value} pair, got {inputs.cls.value}")
    G, _ = gain_profile(inputs, kernel_spec, [k], n_t=n_t, n_param=n_param)
    return float(G[0])


def gain_bound_check(spec: KernelSpec, mixture: MixtureSpec, report: Optional[AveragingReport], n_pairs: int,
                     ks: Sequence[float] = (4, 8, 16), rng: Optional[np.random.Generator] = None,
                     tol: float = 1e-10) -> List[CheckResult]:
    """
    Gain averages on random states against the pointwise contraction bound;
    equal-mass isotropic mono-mono pairs are also held to 2 C_k E^{k/2}.
    """
    rng = rng or np.random.default_rng(0)
    checks = []
    d = mixture.dimension
    for (i, j), pk in spec.items():
        va, Ia = random_states(rng, n_pairs, mixture.spec(i), d, decades=1.0)
        vb, Ib = random_states(rng, n_pairs, mixture.spec(j), d, decades=1.0)
        worst = 0.0
        worst_literal = 0.0
        literal = (pk.cls is InteractionClass.MONO_MONO and pk.mass_a == pk.mass_b and report is not None
                   and pk.angular.kind == "isotropic")
        for n in range(n_pairs):
            a = ParticleState(va[n], Ia[n], i)
            b = ParticleState(vb[n], Ib[n], j)
            inputs = SplitInputs.from_states(a, b, mixture)
            G, bound = gain_profile(inputs, pk, ks)
            worst = max(worst, float(np.max((G - bound) / np.maximum(bound, 1e-300))))
            if literal:
                C = np.array([report.pair(i, j).C_at(k) for k in ks])
                lit = 2.0 * C * inputs.energy ** (0.5 * np.asarray(ks, dtype=float))
                worst_literal = max(worst_literal, float(np.max((G - lit) / lit)))
        checks.append(CheckResult.at_most(f"gain_pointwise_bound[{i},{j}]", max(worst, 0.0), tol, n=n_pairs,
                                          ks=list(ks)))
        if literal:
            checks.append(CheckResult.at_most(f"gain_vs_2Ck[{i},{j}]", max(worst_literal, 0.0), tol, n=n_pairs,
                                              label="empirical C_k"))
    return checks


def gain_energy_identity_check(spec: KernelSpec, mixture: MixtureSpec, constants: KernelConstants, n_pairs: int,
                               rng: Optional[np.random.Generator] = None, tol: float = 1e-8) -> List[CheckResult]:
    """At k = 2 the gain average equals kappa_ub times the bracket energy; at k = 0 it is 2 kappa_ub."""
    rng = rng or np.random.default_rng(0)
    checks = []
    d = mixture.dimension
    for (i, j), pk in spec.items():
        if pk.angular.kind != "isotropic":
            continue
        kappa = float(constants.kappa_ub[i - 1, j - 1])
        va, Ia = random_states(rng, n_pairs, mixture.spec(i), d, decades=1.0)
        vb, Ib = random_states(rng, n_pairs, mixture.spec(j), d, decades=1.0)
        worst = 0.0
        for n in range(n_pairs):
            a = ParticleState(va[n], Ia[n], i)
            b = ParticleState(vb[n], Ib[n], j)
            inputs = SplitInputs.from_states(a, b, mixture)
            G, _ = gain_profile(inputs, pk, [0.0, 2.0])
            worst = max(worst, abs(G[0] - 2.0 * kappa) / (2.0 * kappa),
                        abs(G[1] - kappa * inputs.energy) / (kappa * inputs.energy))
        checks.append(CheckResult.at_most(f"gain_energy_identity[{i},{j}]", worst, tol, n=n_pairs))
    return checks


# ---------------------------------------------------------------------------
# Monte-Carlo estimator and scalar inequalities
# ---------------------------------------------------------------------------


def contraction_monte_carlo(inputs: SplitInputs, pk: PairKernel, k: float, n_samples: int,
                            rng: np.random.Generator):
    """
    Monte-Carlo estimate of the one-sided averaged contractions at order k.

    Returns:
        tuple: ((A_a, stderr_a), (A_b, stderr_b))
    """
    d = pk.dimension
    u_hat = np.zeros((n_samples, d))
    u_hat[:, 0] = 1.0
    V_hat = np.zeros(d)
    V_hat[0] = inputs.cos_beta
    V_hat[1] = math.sqrt(max(0.0, 1.0 - inputs.cos_beta**2))
    sigma = pk.sample_sigma(rng, u_hat)
    t = sigma @ V_hat
    R, r = pk.sample_params(rng, n_samples)
    scale = pk.b_norm * pk.weight_integral * pk.partition.ub(r, R)
    out = []
    for which in (0, 1):
        F = contraction_factors(inputs, np.abs(t), R, r)[which]
        values = scale * np.power(F, k)
        out.append((float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples))))
    return tuple(out)


def monte_carlo_agreement_check(spec: KernelSpec, mixture: MixtureSpec, n_samples: int, k: float = 8.0,
                                rng: Optional[np.random.Generator] = None) -> List[CheckResult]:
    """Quadrature and Monte-Carlo averaged contractions agree within 3 standard errors."""
    rng = rng or np.random.default_rng(0)
    checks = []
    for (i, j) in mixture.pairs(ordered=False):
        pk = spec.pair(i, j)
        inputs = state_strata(pk, 1, rng)[0]
        A_a, A_b, err = contraction_profile(inputs, pk, [k])
        mc = contraction_monte_carlo(inputs, pk, k, n_samples, rng)
        for side, quad, (est, se) in (("a", A_a[0], mc[0]), ("b", A_b[0], mc[1])):
            band = 3.0 * se + float(err[0]) + 1e-12
            checks.append(CheckResult.at_most(f"contraction_quadrature_vs_mc[{i},{j}].{side}", abs(est - quad), band,
                                              quadrature=quad, monte_carlo=est, stderr=se, k=k, n=n_samples))
    return checks


def p_binomial_check(x, y, p):
    """(x+y)^p <= x^p + y^p + 2^{p+1}(x y^{p-1} 1{y>=x} + x^{p-1} y 1{x>=y}); vectorized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(x <= 0.0) or np.any(y <= 0.0) or np.any(p <= 1.0):
        raise ValueError("p_binomial_check needs x, y > 0 and p > 1")
    # divide through by max(x, y)^p
    big = np.maximum(x, y)
    a, b = x / big, y / big
    lhs = (a + b) ** p
    rhs = a**p + b**p + 2.0 ** (p + 1.0) * (a * b ** (p - 1.0) * (y >= x) + a ** (p - 1.0) * b * (x >= y))
    ok = lhs <= rhs * (1.0 + 1e-12)
    return bool(ok) if ok.ndim == 0 else ok


def p_binomial_sweep(n_samples: int, rng: Optional[np.random.Generator] = None) -> CheckResult:
    rng = rng or np.random.default_rng(0)
    x = 10.0 ** rng.uniform(-6.0, 6.0, n_samples)
    y = 10.0 ** rng.uniform(-6.0, 6.0, n_samples)
    p = rng.uniform(1.0, 64.0, n_samples)
    p = np.where(p <= 1.0, 1.0 + 1e-9, p)
    ok = p_binomial_check(x, y, p)
    return CheckResult.at_most("p_binomial_violations", float(np.sum(~ok)), 0.0, n=n_samples)


def monotonicity_check(report: AveragingReport) -> List[CheckResult]:
    checks = []
    for (i, j), res in report.pairs.items():
        if i > j:
            continue
        rises = np.diff(res.C) / np.maximum(res.C[:-1], 1e-300)
        checks.append(CheckResult.at_most(f"empirical_Ck_nonincreasing[{i},{j}]", float(max(0.0, rises.max())) if rises.size else 0.0, 1e-12,
                                          label="empirical C_k"))
    return checks


def threshold_checks(report: AveragingReport) -> List[CheckResult]:
    checks = []
    for (i, j), res in report.pairs.items():
        if i > j:
            continue
        if res.k_bar_star is None:
            checks.append(CheckResult(f"threshold_reached[{i},{j}]", float("inf"), float(res.k_grid[-1]), False,
                                      {"reason": "threshold not reached"}))
            continue
        c = res.C_at(res.k_bar_star)
        checks.append(CheckResult.at_most(f"C_kbar_below_half_kappa_lb[{i},{j}]", c - 0.5 * res.kappa_lb, 0.0,
                                          k_bar_star=res.k_bar_star, C=c, kappa_lb=res.kappa_lb))
        if np.isfinite(res.decay_slope):
            checks.append(CheckResult.at_most(f"decay_consistent_with_inverse_sqrt[{i},{j}]", res.decay_slope,
                                              DECAY_SLOPE_MAX, residual=res.decay_residual))
            checks.append(CheckResult.at_most(f"decay_fit_residual[{i},{j}]", res.decay_residual, DECAY_RESIDUAL_MAX,
                                              slope=res.decay_slope))
    return checks
