"""
Space-homogeneous particle solver for the mixture system.

Every unordered species pair draws Poisson-many candidate collisions per step
from a majorant frequency, samples (sigma, R, r) from the kernel's angular and
parameter weights, and thins by the kernel against the majorant. Candidates are
applied in conflict-free batches so each particle takes part in at most one
collision per batch.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, MajorantViolation
from .kernels import AngularKernel, KernelSpec, PairKernel, directions_about
from .kinematics import CollisionParams, collide_arrays, unit
from .log import get_logger
from .mixture_model import InteractionClass, MixtureSpec, ParticleState, brackets
from .moments import MomentVector, moments_of_ensemble

logger = get_logger(__name__)

MAJORANT_SLACK = 1.05
MAJORANT_RETRIES = 8
LOW_ACCEPTANCE = 0.01
STUDENT_NU = 13.0


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct streams never overlap."""
    bits = np.random.Philox(key=int(seed))
    if stream:
        bits = bits.jumped(int(stream))
    return np.random.Generator(bits)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    """Weighted particles per species: w_i N_i is the species mass m_0^i."""

    mixture: MixtureSpec
    v: List[np.ndarray]
    I: List[np.ndarray]
    weights: np.ndarray
    stream: int = 0

    def __post_init__(self):
        P = self.mixture.n_species
        if len(self.v) != P or len(self.I) != P or len(self.weights) != P:
            raise ConfigError(f"ensemble needs arrays for all {P} species")
        self.weights = np.asarray(self.weights, dtype=float)
        for i in range(P):
            self.v[i] = np.array(self.v[i], dtype=float).reshape(-1, self.mixture.dimension)
            self.I[i] = np.array(self.I[i], dtype=float).reshape(-1)
            if self.v[i].shape[0] != self.I[i].shape[0]:
                raise ConfigError(f"species {i + 1}: {self.v[i].shape[0]} velocities but {self.I[i].shape[0]} energies")
            if not self.mixture.spec(i + 1).is_poly and np.any(self.I[i] != 0.0):
                raise ConfigError(f"monatomic species {self.mixture.spec(i + 1).label} cannot carry internal energy")
            if np.any(self.I[i] < 0.0):
                raise ConfigError(f"species {self.mixture.spec(i + 1).label}: negative internal energy")

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(int(v.shape[0]) for v in self.v)

    @property
    def species_mass(self) -> np.ndarray:
        return self.weights * np.array(self.counts, dtype=float)

    def copy(self) -> "Ensemble":
        return Ensemble(self.mixture, [v.copy() for v in self.v], [I.copy() for I in self.I], self.weights.copy(),
                        self.stream)

    def state(self, i: int, p: int) -> ParticleState:
        return ParticleState(self.v[i - 1][p], self.I[i - 1][p], i)

    def momentum(self) -> np.ndarray:
        total = np.zeros(self.mixture.dimension)
        for i in range(1, self.mixture.n_species + 1):
            total += self.weights[i - 1] * self.mixture.spec(i).mass * self.v[i - 1].sum(axis=0)
        return total

    def momentum_scale(self) -> float:
        return float(sum(self.weights[i - 1] * self.mixture.spec(i).mass * np.linalg.norm(self.v[i - 1], axis=1).sum()
                         for i in range(1, self.mixture.n_species + 1)))

    def species_energy(self, i: int) -> float:
        """Kinetic plus internal energy carried by species i."""
        m = self.mixture.spec(i).mass
        v, I = self.v[i - 1], self.I[i - 1]
        return float(self.weights[i - 1] * (0.5 * m * math.fsum(np.einsum("nk,nk->n", v, v)) + math.fsum(I)))

    def temperature(self, i: int) -> float:
        """Kinetic temperature of species i about its own mean velocity."""
        v = self.v[i - 1]
        if v.shape[0] < 2:
            return 0.0
        c = v - v.mean(axis=0)
        return float(self.mixture.spec(i).mass * np.mean(np.einsum("nk,nk->n", c, c)) / self.mixture.dimension)

    def internal_temperature(self, i: int) -> float:
        """Mean internal energy divided by (alpha_i + 1); zero for monatomic species."""
        sp = self.mixture.spec(i)
        if not sp.is_poly or self.I[i - 1].size == 0:
            return 0.0
        return float(self.I[i - 1].mean() / (sp.alpha + 1.0))


def _weights(C0: Sequence[float], n_particles: Sequence[int]) -> np.ndarray:
    n = np.asarray(n_particles, dtype=float)
    if np.any(n < 1):
        raise ConfigError(f"every species needs at least one particle, got {list(n_particles)}")
    C0 = np.asarray(C0, dtype=float)
    if np.any(C0 <= 0.0):
        raise ConfigError(f"species masses C_0 must be positive, got {C0.tolist()}")
    return C0 / n


def _internal(mixture: MixtureSpec, i: int, n: int, temperature: float, rng: np.random.Generator) -> np.ndarray:
    sp = mixture.spec(i)
    if not sp.is_poly:
        return np.zeros(n)
    return rng.gamma(sp.alpha + 1.0, temperature, size=n)


def init_maxwellian(mixture: MixtureSpec, n_particles: Sequence[int], C0: Sequence[float], temperature: float,
                    rng: np.random.Generator, center: bool = True) -> Ensemble:
    """
    Equilibrium ensemble: Gaussian velocities with variance T/m_i per component and
    internal energies with density proportional to I^alpha e^{-I/T}.
    """
    if not temperature > 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    d = mixture.dimension
    vs, Is = [], []
    for i in range(1, mixture.n_species + 1):
        n = int(n_particles[i - 1])
        v = rng.standard_normal((n, d)) * math.sqrt(temperature / mixture.spec(i).mass)
        if center and n > 1:
            v -= v.mean(axis=0)
        vs.append(v)
        Is.append(_internal(mixture, i, n, temperature, rng))
    return Ensemble(mixture, vs, Is, _weights(C0, n_particles))


def init_student_t(mixture: MixtureSpec, n_particles: Sequence[int], C0: Sequence[float], temperature: float,
                   rng: np.random.Generator, nu: float = STUDENT_NU, center: bool = True) -> Ensemble:
    """Heavy-tailed velocities (multivariate Student-t, nu degrees of freedom) with the Maxwellian's covariance."""
    if not nu > 2.0:
        raise ConfigError(f"Student-t degrees of freedom must exceed 2, got {nu}")
    d = mixture.dimension
    vs, Is = [], []
    for i in range(1, mixture.n_species + 1):
        n = int(n_particles[i - 1])
        scale = math.sqrt(temperature / mixture.spec(i).mass * (nu - 2.0) / nu)
        g = rng.standard_normal((n, d))
        chi = rng.chisquare(nu, size=n)
        v = scale * g / np.sqrt(chi / nu)[:, None]
        if center and n > 1:
            v -= v.mean(axis=0)
        vs.append(v)
        Is.append(_internal(mixture, i, n, temperature, rng))
    return Ensemble(mixture, vs, Is, _weights(C0, n_particles))


def init_ensemble(kind: str, mixture: MixtureSpec, n_particles, C0, temperature, rng, **kwargs) -> Ensemble:
    if kind == "maxwellian":
        return init_maxwellian(mixture, n_particles, C0, temperature, rng, **kwargs)
    if kind == "student_t":
        return init_student_t(mixture, n_particles, C0, temperature, rng, **kwargs)
    raise ConfigError(f"unknown initial data '{kind}' (expected maxwellian or student_t)")


# ---------------------------------------------------------------------------
# Parameter sampling
# ---------------------------------------------------------------------------


def bl_beta_parameters(cls: InteractionClass, alphas: Tuple[float, float], dimension: int = 3):
    """Beta parameters of R (and r for poly-poly) under the normalized parameter weight."""
    aa, ab = alphas
    left = 0.5 * dimension
    if cls is InteractionClass.POLY_POLY:
        return (left, aa + ab + 2.0), (aa + 1.0, ab + 1.0)
    if cls is InteractionClass.POLY_MONO:
        return (left, aa + 1.0), None
    if cls is InteractionClass.MONO_POLY:
        return (left, ab + 1.0), None
    return None, None


def sample_bl_params(cls: InteractionClass, alphas: Tuple[float, float], rng: np.random.Generator,
                     dimension: int = 3, angular: Optional[AngularKernel] = None,
                     u_hat: Optional[np.ndarray] = None) -> CollisionParams:
    """
    One draw of (sigma, R, r). sigma follows the angular kernel about ``u_hat``
    (uniform on the sphere when either is missing).
    """
    R_par, r_par = bl_beta_parameters(cls, alphas, dimension)
    R = float(rng.beta(*R_par)) if R_par else None
    r = float(rng.beta(*r_par)) if r_par else None
    if angular is None or u_hat is None:
        sigma = unit(rng.standard_normal(dimension))
    else:
        x = angular.sample_cos(rng, 1, dimension)
        sigma = directions_about(np.asarray(u_hat, dtype=float)[None], x, rng)[0]
    return CollisionParams(sigma, R=R, r=r)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


@dataclass
class SimConfig:
    dt: float
    t_end: float
    seed: int = 0
    orders: Tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0)
    output_times: Tuple[float, ...] = ()
    majorant_refresh: int = 1
    disabled_pairs: FrozenSet[Tuple[int, int]] = frozenset()
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if not self.t_end >= 0.0:
            raise ConfigError(f"t_end must be nonnegative, got {self.t_end}")
        if self.majorant_refresh < 1:
            raise ConfigError(f"majorant refresh interval must be >= 1, got {self.majorant_refresh}")
        self.disabled_pairs = frozenset(tuple(sorted(p)) for p in self.disabled_pairs)
        times = sorted(set(float(t) for t in self.output_times) | {0.0, float(self.t_end)})
        if any(t < 0.0 or t > self.t_end for t in times):
            raise ConfigError(f"output times must lie in [0, t_end], got {list(self.output_times)}")
        self.output_times = tuple(times)
        if 0.0 not in self.orders:
            self.orders = (0.0,) + tuple(self.orders)
        if 2.0 not in self.orders:
            self.orders = tuple(sorted(set(self.orders) | {2.0}))

    def step_index(self, t: float) -> int:
        return int(round(t / self.dt))


@dataclass
class PairCounters:
    candidates: int = 0
    accepted: int = 0
    nulls: int = 0
    majorant_recomputes: int = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.candidates if self.candidates else float("nan")


@dataclass
class SimulationState:
    """Mutable solver state carried between steps."""

    ensemble: Ensemble
    rng: np.random.Generator
    spec: Optional[KernelSpec] = None
    majorant: Dict[Tuple[int, int], float] = field(default_factory=dict)
    counters: Dict[Tuple[int, int], PairCounters] = field(default_factory=dict)
    steps: int = 0


def _species_majorant(ensemble: Ensemble, i: int, gamma: float) -> float:
    """Headroom bound on <state>^gamma: twice the largest squared bracket, to power gamma/2."""
    if gamma == 0.0:
        return 1.0
    sp = ensemble.mixture.spec(i)
    if ensemble.v[i - 1].shape[0] == 0:
        return 1.0
    b2 = brackets(ensemble.v[i - 1], ensemble.I[i - 1], sp.mass, ensemble.mixture.total_mass) ** 2
    return float((2.0 * b2.max()) ** (0.5 * gamma))


def _refresh_majorants(state: SimulationState, spec: KernelSpec):
    state.majorant = {}
    for (i, j) in spec.mixture.pairs(ordered=False):
        pk = spec.pair(i, j)
        state.majorant[(i, j)] = pk.partition.sup_ub * (
            _species_majorant(state.ensemble, i, pk.gamma) + _species_majorant(state.ensemble, j, pk.gamma))


def _batches(p: np.ndarray, q: np.ndarray, same_species: bool) -> List[np.ndarray]:
    """Split candidate indices into batches in which no particle occurs twice."""
    remaining = np.arange(p.size)
    out = []
    while remaining.size:
        _, first_p = np.unique(p[remaining], return_index=True)
        keep = remaining[np.sort(first_p)]
        _, first_q = np.unique(q[keep], return_index=True)
        keep = keep[np.sort(first_q)]
        if same_species:
            clash = np.isin(p[keep], q[keep]) | np.isin(q[keep], p[keep])
            keep = keep[~clash]
            if keep.size == 0:
                keep = remaining[:1]
        out.append(keep)
        remaining = np.setdiff1d(remaining, keep, assume_unique=True)
    return out


def _draw_candidates(rng, n_i, n_j, same, rate):
    if same:
        count = rng.poisson(rate)
        if count == 0 or n_i < 2:
            return np.empty(0, int), np.empty(0, int)
        p = rng.integers(0, n_i, count)
        q = (p + rng.integers(1, n_i, count)) % n_i
        return p, q
    count = rng.poisson(rate)
    return rng.integers(0, n_i, count), rng.integers(0, n_j, count)


def _collide_batch(state: SimulationState, pk: PairKernel, idx, p, q, bound: float, counters: PairCounters) -> bool:
    """
    Thin one conflict-free batch against ``bound`` and apply the accepted collisions.

    Returns:
        bool: False when the bound was stale; the batch is then left untouched
        and the majorants are recomputed.
    """
    ens = state.ensemble
    rng = state.rng
    i, j = pk.i, pk.j
    pb, qb = p[idx], q[idx]
    va, Ia = ens.v[i - 1][pb], ens.I[i - 1][pb]
    vb, Ib = ens.v[j - 1][qb], ens.I[j - 1][qb]
    n = pb.size
    u = va - vb
    speed = np.linalg.norm(u, axis=1)
    safe = np.where(speed > 0.0, speed, 1.0)
    u_hat = np.where((speed > 0.0)[:, None], u / safe[:, None], unit(rng.standard_normal(u.shape)))
    sigma = pk.sample_sigma(rng, u_hat)
    R, r = pk.sample_params(rng, n)
    ratio = pk.evaluate_without_angular(va, Ia, vb, Ib, R, r) / bound
    worst = float(ratio.max()) if n else 0.0
    if worst > 1.0:
        if worst > MAJORANT_SLACK:
            raise MajorantViolation(
                f"pair ({i},{j}): kernel exceeds its majorant by factor {worst:.6g}; "
                "the partition upper envelope or the energy bound of the kernel spec is inconsistent"
            )
        counters.majorant_recomputes += 1
        logger.debug(f"pair ({i},{j}): stale majorant (ratio {worst:.6g}), batch rejected")
        _refresh_majorants(state, state.spec)
        return False
    u_draw = rng.random(n)
    accept = u_draw < ratio
    if not np.any(accept):
        return True
    sel = np.nonzero(accept)[0]
    va2, Ia2, vb2, Ib2, *_, null = collide_arrays(va[sel], Ia[sel], vb[sel], Ib[sel], pk.mass_a, pk.mass_b,
                                                  sigma[sel], R[sel], r[sel], pk.cls)
    live = ~np.asarray(null, dtype=bool)
    counters.nulls += int((~live).sum())
    counters.accepted += int(live.sum())
    sel = sel[live]
    va2, Ia2, vb2, Ib2 = va2[live], Ia2[live], vb2[live], Ib2[live]
    wa, wb = ens.weights[i - 1], ens.weights[j - 1]
    upd_a = np.ones(sel.size, bool) if wa <= wb else rng.random(sel.size) < wb / wa
    upd_b = np.ones(sel.size, bool) if wb <= wa else rng.random(sel.size) < wa / wb
    ens.v[i - 1][pb[sel[upd_a]]] = va2[upd_a]
    ens.I[i - 1][pb[sel[upd_a]]] = Ia2[upd_a]
    ens.v[j - 1][qb[sel[upd_b]]] = vb2[upd_b]
    ens.I[j - 1][qb[sel[upd_b]]] = Ib2[upd_b]
    return True


def _pair_step(state: SimulationState, config: SimConfig, pk: PairKernel) -> None:
    """
    Candidates of one unordered pair over one step. A stale majorant rejects the
    current batch; the rest of the step is redrawn at the recomputed rate.
    """
    ens = state.ensemble
    i, j = pk.i, pk.j
    counters = state.counters.setdefault((i, j), PairCounters())
    n_i, n_j = ens.counts[i - 1], ens.counts[j - 1]
    same = i == j
    w_max = float(max(ens.weights[i - 1], ens.weights[j - 1]))
    remaining = 1.0
    for _ in range(MAJORANT_RETRIES):
        bound = state.majorant[(i, j)]
        M = pk.b_norm * pk.weight_integral * bound
        pairs = 0.5 * n_i * (n_i - 1) if same else n_i * n_j
        per_particle = w_max * (n_i - 1 if same else max(n_i, n_j)) * M * config.dt
        if per_particle > 1.0:
            logger.warning(f"pair ({i},{j}): {per_particle:.3g} candidates per particle per step; reduce dt")
        p, q = _draw_candidates(state.rng, n_i, n_j, same, w_max * pairs * M * config.dt * remaining)
        done = 0
        for idx in _batches(p, q, same):
            if not _collide_batch(state, pk, idx, p, q, bound, counters):
                break
            done += idx.size
        counters.candidates += done
        if done == p.size:
            return
        remaining *= 1.0 - done / p.size
    raise MajorantViolation(f"pair ({i},{j}): majorant still stale after {MAJORANT_RETRIES} recomputations")


def step(state: SimulationState, config: SimConfig, kernel_spec: KernelSpec, mixture: MixtureSpec) -> SimulationState:
    """
    Advance the ensemble by one time step in place.

    Raises:
        MajorantViolation: the kernel exceeded its majorant beyond the slack factor.
    """
    ens = state.ensemble
    state.spec = kernel_spec
    if not state.majorant or state.steps % config.majorant_refresh == 0:
        _refresh_majorants(state, kernel_spec)
    for (i, j) in mixture.pairs(ordered=False):
        if (i, j) in config.disabled_pairs or ens.counts[i - 1] == 0 or ens.counts[j - 1] == 0:
            continue
        _pair_step(state, config, kernel_spec.pair(i, j))
    state.steps += 1
    return state


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass
class ConservationReport:
    initial: Dict[str, object]
    final: Dict[str, object]
    max_m2_drift: float = 0.0
    max_momentum_drift: float = 0.0
    species_mass_exact: bool = True
    equal_weights: bool = True

    def to_dict(self) -> dict:
        return {
            "initial": self.initial,
            "final": self.final,
            "max_relative_m2_drift": self.max_m2_drift,
            "max_relative_momentum_drift": self.max_momentum_drift,
            "species_mass_exact": self.species_mass_exact,
            "equal_weights": self.equal_weights,
        }


def _invariants(ens: Ensemble, mom: MomentVector) -> Dict[str, object]:
    return {
        "species_mass": [float(x) for x in ens.species_mass],
        "counts": list(ens.counts),
        "mixture_m2": mom.mixture(2.0),
        "momentum": ens.momentum().tolist(),
        "energy": float(sum(ens.species_energy(i) for i in range(1, ens.mixture.n_species + 1))),
    }


@dataclass
class MomentReport:
    """Moment time series of one run with its conservation bookkeeping."""

    times: List[float]
    moments: List[MomentVector]
    conservation: ConservationReport
    counters: Dict[Tuple[int, int], PairCounters]
    seed: int
    temperatures: List[List[float]] = field(default_factory=list)

    @property
    def orders(self) -> Tuple[float, ...]:
        return self.moments[0].orders

    def series(self, k: float, species: Optional[int] = None) -> np.ndarray:
        if species is None:
            return np.array([m.mixture(k) for m in self.moments])
        return np.array([m.species(species, k) for m in self.moments])

    def stderr_series(self, k: float, species: Optional[int] = None) -> np.ndarray:
        if species is None:
            return np.array([m.mixture_stderr(k) for m in self.moments])
        return np.array([m.stderr[species - 1, m._col(k)] for m in self.moments])

    def rows(self):
        """(t, species, k, value, stderr) rows with a 'mixture' row per (t, k)."""
        for t, mom in zip(self.times, self.moments):
            for c, k in enumerate(mom.orders):
                for i in range(mom.values.shape[0]):
                    yield (float(t), i + 1, float(k), float(mom.values[i, c]), float(mom.stderr[i, c]))
                yield (float(t), "mixture", float(k), mom.mixture(k), mom.mixture_stderr(k))

    def acceptance(self) -> Dict[str, float]:
        return {f"{i},{j}": c.acceptance for (i, j), c in self.counters.items()}

    def total_accepted(self) -> int:
        return sum(c.accepted for c in self.counters.values())

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "seed": self.seed,
            "conservation": self.conservation.to_dict(),
            "collisions": {f"{i},{j}": {"candidates": c.candidates, "accepted": c.accepted, "nulls": c.nulls,
                                        "majorant_recomputes": c.majorant_recomputes}
                           for (i, j), c in self.counters.items()},
        }


def run(ensemble0: Ensemble, config: SimConfig, kernel_spec: KernelSpec, mixture: MixtureSpec,
        orders: Optional[Sequence[float]] = None) -> MomentReport:
    """
    Simulate from ``ensemble0`` (left untouched) to ``config.t_end`` and record
    moments at every output time. Bit-exact for a fixed seed.

    Raises:
        ConfigError: an empty species or a mixture mismatch.
        MajorantViolation: propagated from ``step``.
    """
    if ensemble0.mixture is not mixture and ensemble0.mixture.n_species != mixture.n_species:
        raise ConfigError("ensemble and mixture disagree on the number of species")
    if any(n == 0 for n in ensemble0.counts):
        raise ConfigError(f"every species needs particles to run, got counts {list(ensemble0.counts)}")
    orders = tuple(orders) if orders is not None else config.orders
    if 0.0 not in orders or 2.0 not in orders:
        orders = tuple(sorted(set(orders) | {0.0, 2.0}))
    state = SimulationState(ensemble0.copy(), make_rng(config.seed, ensemble0.stream))
    ens = state.ensemble
    mom0 = moments_of_ensemble(ens, orders)
    init = _invariants(ens, mom0)
    p0 = ens.momentum()
    p_scale = max(ens.momentum_scale(), 1e-300)
    m2_0 = mom0.mixture(2.0)
    cons = ConservationReport(initial=init, final=init,
                              equal_weights=bool(np.allclose(ens.weights, ens.weights[0], rtol=0.0, atol=0.0)))
    times, moments, temps = [0.0], [mom0], [_temperatures(ens)]
    targets = [t for t in config.output_times if t > 0.0]
    logger.info(f"run: {sum(ens.counts)} particles, dt={config.dt}, t_end={config.t_end}, seed={config.seed}")
    for t_out in targets:
        while state.steps < config.step_index(t_out):
            step(state, config, kernel_spec, mixture)
        mom = moments_of_ensemble(ens, orders)
        times.append(state.steps * config.dt)
        moments.append(mom)
        temps.append(_temperatures(ens))
        cons.max_m2_drift = max(cons.max_m2_drift, abs(mom.mixture(2.0) - m2_0) / abs(m2_0))
        cons.max_momentum_drift = max(cons.max_momentum_drift, float(np.abs(ens.momentum() - p0).max()) / p_scale)
    cons.final = _invariants(ens, moments[-1])
    cons.species_mass_exact = cons.final["species_mass"] == cons.initial["species_mass"]
    report = MomentReport(times, moments, cons, dict(state.counters), config.seed, temps)
    for (i, j), c in state.counters.items():
        if c.candidates >= 100 and c.acceptance < LOW_ACCEPTANCE:
            logger.warning(f"pair ({i},{j}): acceptance rate {c.acceptance:.3%} below 1%")
    logger.info(f"run finished: {report.total_accepted()} accepted collisions, "
                f"max m2 drift {cons.max_m2_drift:.3e}")
    return report


def _temperatures(ens: Ensemble) -> List[float]:
    return [ens.temperature(i) for i in range(1, ens.mixture.n_species + 1)]
