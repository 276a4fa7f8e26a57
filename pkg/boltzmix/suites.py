"""
Verification pipelines behind the CLI subcommands.

Each ``run_*`` function returns a ``SuiteOutcome``: the checks, the JSON
payload for the report, CSV tables keyed by file name, and the live objects
later suites reuse.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from . import averaging, kernels, kinematics, moments
from .config import LoadedConfig
from .dsmc import Ensemble, MomentReport, SimConfig, init_ensemble, make_rng, run
from .errors import BelowThresholdError, MissingMomentError
from .log import get_logger
from .reporting import CheckResult, suite_report

logger = get_logger(__name__)

INIT_STREAM = 1
EQUILIBRIUM_STREAM = 2


@dataclass
class SuiteOutcome:
    name: str
    checks: List[CheckResult] = field(default_factory=list)
    payload: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Tuple[Sequence[str], List[Sequence[Any]]]] = field(default_factory=dict)
    objects: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def report(self) -> dict:
        return suite_report(self.name, self.checks, **self.payload)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return make_rng(seed, stream)


# ---------------------------------------------------------------------------
# Kinematics and kernels
# ---------------------------------------------------------------------------


def run_kinematics(cfg: LoadedConfig, n_samples: int, seed: int = 0) -> SuiteOutcome:
    mixture = cfg.mixture
    rng = _rng(seed, 10)
    n_jac = max(1, min(n_samples, 200))
    checks = []
    checks += kinematics.conservation_check(mixture, n_samples, rng)
    checks += kinematics.involution_check(mixture, n_samples, rng)
    checks += kinematics.jacobian_check(mixture, n_jac, rng)
    checks += kinematics.energy_split_check(mixture, n_samples, rng)
    checks += kinematics.interchange_check(mixture, n_samples, rng)
    checks += kinematics.measure_invariance_check(mixture, max(n_samples, 20000), rng)
    checks += kernels.bracket_upper_bounds_check(mixture, n_samples, rng)
    return SuiteOutcome("verify-kinematics", checks, {"n_samples": n_samples})


def run_kernels(cfg: LoadedConfig, n_samples: int, mc_samples: int, seed: int = 0,
                tol: Optional[float] = None) -> SuiteOutcome:
    mixture, spec = cfg.mixture, cfg.kernels
    constants = kernels.compute_kappas(spec, mixture, *([tol] if tol else []))
    rng = _rng(seed, 20)
    checks = []
    for (i, j), pk in spec.items():
        checks.append(CheckResult.at_most(f"kappa_lb_le_ub[{i},{j}]", constants.kappa_lb[i - 1, j - 1],
                                          constants.kappa_ub[i - 1, j - 1]))
    checks += kernels.kernel_bounds_check(spec, mixture, n_samples, rng)
    checks += kernels.envelope_sandwich_check(mixture, n_samples, rng)
    checks += kernels.micro_reversibility_check(spec, mixture, n_samples, rng)
    checks += kernels.kappa_agreement_check(spec, constants, mc_samples, rng)
    payload = {"constants": constants.to_dict(), "kernels": spec.to_dict()}
    return SuiteOutcome("verify-kernels", checks, payload, objects={"constants": constants})


# ---------------------------------------------------------------------------
# Averaging
# ---------------------------------------------------------------------------


def run_averaging(cfg: LoadedConfig, kmax: int, tol: float, threads: int = 1, seed: int = 0,
                  constants: Optional[kernels.KernelConstants] = None) -> SuiteOutcome:
    mixture, spec = cfg.mixture, cfg.kernels
    constants = constants or kernels.compute_kappas(spec, mixture)
    av = cfg.model.averaging
    report = averaging.averaging_report(spec, mixture, constants, n_states=av.n_states, kmax=kmax, tol=tol,
                                        threads=threads, seed=seed, n_param=av.n_param)
    rng = _rng(seed, 30)
    ver = cfg.model.verification
    checks = []
    checks += averaging.monotonicity_check(report)
    checks += averaging.threshold_checks(report)
    checks += averaging.gain_bound_check(spec, mixture, report, ver.n_state_pairs, rng=rng)
    checks += averaging.gain_energy_identity_check(spec, mixture, constants, min(ver.n_state_pairs, 50), rng=rng)
    checks += averaging.monte_carlo_agreement_check(spec, mixture, ver.mc_samples, rng=rng)
    checks.append(averaging.p_binomial_sweep(ver.n_samples, rng))
    tables = {f"averaging_{i}_{j}.csv": (("k", "C_k", "error"), res.csv_rows())
              for (i, j), res in report.pairs.items()}
    return SuiteOutcome("verify-averaging", checks, {"averaging": report.to_dict()}, tables,
                        {"report": report, "constants": constants})


# ---------------------------------------------------------------------------
# Moments and the comparison lemma
# ---------------------------------------------------------------------------


def initial_ensemble(cfg: LoadedConfig, seed: int, kind: Optional[str] = None, stream: int = INIT_STREAM) -> Ensemble:
    mixture = cfg.mixture
    sim = cfg.model.simulation
    kind = kind or sim.initial
    extra = {"nu": sim.student_nu} if kind == "student_t" else {}
    return init_ensemble(kind, mixture, cfg.particle_counts(mixture), cfg.species_masses(mixture), sim.temperature,
                         _rng(seed, stream), **extra)


def required_orders(mixture, report: averaging.AveragingReport, ks: Sequence[float]) -> List[float]:
    """Every moment order the constants, envelopes and Omega tests read."""
    ggg, gb = mixture.gamma_bar_bar, mixture.gamma_bar
    orders = {0.0, 2.0, ggg, max(2.0 + ggg - gb, 0.0)}
    orders |= {float(k) for k in ks}
    if report.k_star is not None:
        orders.add(float(report.k_star))
    return sorted(orders)


def comparison_ode_check(n_configs: int, rng: np.random.Generator, t_max: float = 100.0, n_grid: int = 10_000,
                         tol: float = 1e-9) -> List[CheckResult]:
    """Numerical solutions of y' = B - A y^{1+c} stay under the comparison envelope."""
    t = np.linspace(t_max / n_grid, t_max, n_grid)
    worst = 0.0
    for _ in range(n_configs):
        A, B = 10.0 ** rng.uniform(-1.0, 1.0, 2)
        c = float(rng.uniform(0.1, 2.0))
        env = moments.ComparisonEnvelope(A, B, c)
        z = env(t)
        for y0 in (0.0, 10.0 * env.E):
            sol = solve_ivp(lambda s, y: B - A * np.maximum(y, 0.0) ** (1.0 + c), (0.0, t_max), [y0], method="LSODA",
                            t_eval=t, rtol=1e-10, atol=1e-12)
            excess = (sol.y[0] - z) / np.maximum(1.0, z)
            worst = max(worst, float(np.max(excess)))
    checks = [CheckResult.at_most("comparison_envelope_vs_ode", worst, tol, n_configs=n_configs, n_grid=n_grid)]
    env = moments.ComparisonEnvelope(1.0, 1.0, 1.0)
    const_err = max(abs(env.E - 1.0), abs(env.beta - 1.0), abs(env.K - 1.0))
    gap = float(np.max(np.tanh(t) - env(t)))
    checks.append(CheckResult.at_most("comparison_envelope_tanh_constants", const_err, tol))
    checks.append(CheckResult.at_most("comparison_envelope_tanh_bound", gap, 0.0))
    return checks


def envelope_rows(consts: moments.OdiConstants, times: np.ndarray) -> List[Tuple[float, float, float]]:
    c = consts.gamma_bar / (consts.k - 2.0)
    env = moments.ComparisonEnvelope(consts.A_star, max(consts.B_k, 1e-300), c, consts.m2)
    z = env(times)
    gen = moments.generation_envelope(consts, times)
    return [(float(t), float(a), float(b)) for t, a, b in zip(times, z, gen)]


def run_moments_ode(cfg: LoadedConfig, k: Optional[float] = None, seed: int = 0, threads: int = 1,
                    averaging_outcome: Optional[SuiteOutcome] = None) -> SuiteOutcome:
    """ODI constants and envelopes at order k; k* of the averaging report when k is None."""
    mixture = cfg.mixture
    m_cfg = cfg.model.moments
    if averaging_outcome is None:
        av = cfg.model.averaging
        averaging_outcome = run_averaging(cfg, av.kmax, av.tol, threads, seed)
    report = averaging_outcome.objects["report"]
    constants = averaging_outcome.objects["constants"]
    if report.k_bar_star is None:
        raise BelowThresholdError("averaging threshold not reached; ODI constants undefined")
    if k is None:
        k = report.k_star
        logger.info(f"moments-ode: no order given, using k* = {k:g}")
    ens = initial_ensemble(cfg, seed)
    mom = moments.moments_of_ensemble(ens, required_orders(mixture, report, [k]))
    consts = moments.compute_odi_constants(mom, constants, report, mixture, k, conservative=m_cfg.conservative,
                                           C_star=cfg.model.omega.C_star)
    times = np.geomspace(m_cfg.t_min, m_cfg.t_max, m_cfg.n_times)
    rows = envelope_rows(consts, times)
    rng = _rng(seed, 40)
    checks = comparison_ode_check(100, rng)
    z = np.array([r[1] for r in rows])
    g = np.array([r[2] for r in rows])
    finite = np.isfinite(z) & np.isfinite(g)
    agree = float(np.max(np.abs(z[finite] - g[finite]) / np.maximum(g[finite], 1e-300))) if finite.any() else 0.0
    checks.append(CheckResult.at_most("comparison_envelope_matches_generation", agree, 1e-9, k=k))
    checks.append(CheckResult.at_least("A_star_positive", consts.A_star, 1e-300))
    payload = {"k": k, "constants": consts.to_dict(), "moments": mom.to_dict()}
    return SuiteOutcome("moments-ode", checks, payload, {"envelope.csv": (("t", "z", "generation"), rows)},
                        {"constants": consts, "moments": mom, "report": report, "kernel_constants": constants})


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def sim_config(cfg: LoadedConfig, seed: Optional[int] = None, threads: int = 1) -> SimConfig:
    sim = cfg.model.simulation
    mixture = cfg.mixture
    disabled = []
    for p, q in sim.disabled_pairs:
        i, j = mixture.from_input_ordinal(p), mixture.from_input_ordinal(q)
        disabled.append((min(i, j), max(i, j)))
    return SimConfig(dt=sim.dt, t_end=sim.t_end, seed=sim.seed if seed is None else seed,
                     orders=tuple(sim.orders), output_times=tuple(sim.output_times),
                     majorant_refresh=sim.majorant_refresh, disabled_pairs=frozenset(disabled), threads=threads)


def conservation_checks(report: MomentReport) -> List[CheckResult]:
    cons = report.conservation
    checks = [CheckResult.at_most("species_mass_exact", 0.0 if cons.species_mass_exact else 1.0, 0.0,
                                  initial=cons.initial["species_mass"], final=cons.final["species_mass"])]
    if cons.equal_weights:
        checks.append(CheckResult.at_most("mixture_m2_drift", cons.max_m2_drift, 1e-8))
        checks.append(CheckResult.at_most("momentum_drift", cons.max_momentum_drift, 1e-10))
    return checks


def maxwell_acceptance_checks(report: MomentReport, cfg: LoadedConfig) -> List[CheckResult]:
    """Acceptance of gamma = 0 product pairs against rho_ub / (2 sup_ub Z)."""
    checks = []
    for (i, j), c in report.counters.items():
        pk = cfg.kernels.pair(i, j)
        if pk.gamma != 0.0 or pk.form != "product" or c.candidates < 100:
            continue
        expected = pk.rho_ub / (2.0 * pk.partition.sup_ub * pk.weight_integral)
        rate = (c.accepted + c.nulls) / c.candidates
        band = 3.0 * math.sqrt(expected * (1.0 - expected) / c.candidates)
        checks.append(CheckResult.at_most(f"maxwell_acceptance[{i},{j}]", abs(rate - expected), band,
                                          expected=expected, observed_rate=rate, candidates=c.candidates))
    return checks


def envelope_checks(report: MomentReport, consts_for, sub_for, k_bar_star: int) -> Tuple[List[CheckResult], list]:
    """
    Moment trajectories against the generation and propagation envelopes.
    Orders with too few effective samples are skipped and listed.
    """
    checks, skipped = [], []
    m0 = report.moments[0]
    for k in report.orders:
        if k <= 2.0:
            continue
        if not all(m.reliable(k) for m in report.moments):
            skipped.append(k)
            continue
        series = report.series(k)
        se = report.stderr_series(k)
        lower = series - 3.0 * se
        if k >= k_bar_star:
            consts = consts_for(k)
            prop = moments.propagation_bound(consts, m0.mixture(k))
            checks.append(CheckResult.at_most(f"propagation[k={k:g}]", float(lower.max()), prop, E_k=consts.E_k))
            t = np.array(report.times[1:])
            if t.size:
                gen = moments.generation_envelope(consts, t)
                checks.append(CheckResult.at_most(f"generation[k={k:g}]", float(np.max(lower[1:] - gen)), 0.0))
        else:
            sub = sub_for(k)
            checks.append(CheckResult.at_most(f"propagation_below_threshold[k={k:g}]", float(lower.max()),
                                              sub.propagation(m0.mixture(k)), E_tilde=sub.E_tilde))
    return checks, skipped


def moment_rate_checks(report: MomentReport, kc: kernels.KernelConstants) -> List[CheckResult]:
    """Finite-difference dm_k/dt over the first output window against D_k m_k."""
    checks = []
    if len(report.times) < 2:
        return checks
    t1 = report.times[1]
    m_a, m_b = report.moments[0], report.moments[1]
    m2 = m_a.mixture(2.0)
    for k in report.orders:
        if k <= 2.0 or not (m_a.reliable(k) and m_b.reliable(k)):
            continue
        slope = (m_b.mixture(k) - m_a.mixture(k)) / t1
        se = math.hypot(m_a.mixture_stderr(k), m_b.mixture_stderr(k)) / t1
        bound = moments.D_constant(k, kc, m2) * max(m_a.mixture(k), m_b.mixture(k))
        checks.append(CheckResult.at_most(f"moment_rate_vs_Dk[k={k:g}]", slope - 3.0 * se, bound, slope=slope))
    return checks


def equilibrium_checks(cfg: LoadedConfig, seed: int) -> List[CheckResult]:
    """Species temperatures of a Maxwellian start stay inside a 3 sqrt(2) sigma band."""
    ens = initial_ensemble(cfg, seed, kind="maxwellian", stream=EQUILIBRIUM_STREAM)
    config = sim_config(cfg, seed)
    report = run(ens, config, cfg.kernels, cfg.mixture)
    mixture = cfg.mixture
    d = mixture.dimension
    T = cfg.model.simulation.temperature
    checks = []
    temps = np.array(report.temperatures)
    for i in range(1, mixture.n_species + 1):
        n = ens.counts[i - 1]
        sigma_T = T * math.sqrt(2.0 / (d * n))
        dev = float(np.max(np.abs(temps[:, i - 1] - temps[0, i - 1])))
        checks.append(CheckResult.at_most(f"equilibrium_temperature[{i}]", dev, 3.0 * math.sqrt(2.0) * sigma_T))
    return checks


def run_simulation(cfg: LoadedConfig, seed: Optional[int] = None, threads: int = 1) -> SuiteOutcome:
    config = sim_config(cfg, seed, threads)
    ens = initial_ensemble(cfg, config.seed)
    report = run(ens, config, cfg.kernels, cfg.mixture)
    checks = conservation_checks(report) + maxwell_acceptance_checks(report, cfg)
    rows = list(report.rows())
    payload = {"simulation": report.to_dict()}
    return SuiteOutcome("simulate", checks, payload, {"moments.csv": (("t", "species", "k", "value", "stderr"), rows)},
                        {"report": report, "ensemble": ens})


def run_trajectory_checks(cfg: LoadedConfig, sim: SuiteOutcome, mom_outcome: SuiteOutcome,
                          seed: int = 0) -> SuiteOutcome:
    """Cross-module checks of a simulated run against the moment theory."""
    report: MomentReport = sim.objects["report"]
    ens: Ensemble = sim.objects["ensemble"]
    av_report = mom_outcome.objects["report"]
    kc = mom_outcome.objects["kernel_constants"]
    mixture = cfg.mixture
    mom = moments.moments_of_ensemble(ens, sorted(set(required_orders(mixture, av_report, report.orders))
                                                  | {av_report.k_bar_star + 1.0}))
    cache: Dict[float, moments.OdiConstants] = {}

    def consts_for(k):
        if k not in cache:
            cache[k] = moments.compute_odi_constants(mom, kc, av_report, mixture, k)
        return cache[k]

    def sub_for(k):
        return moments.sub_threshold_envelope(mom, kc, av_report, mixture, k)

    checks, skipped = envelope_checks(report, consts_for, sub_for, av_report.k_bar_star)
    checks += moment_rate_checks(report, kc)
    checks += moments.moment_production_check(ens, cfg.kernels, kc, 4.0, cfg.model.verification.mc_samples,
                                              _rng(seed, 50))
    k_star = av_report.k_star
    consts = consts_for(k_star) if k_star >= av_report.k_bar_star else None
    omega = None
    if consts is not None:
        C_star = cfg.model.omega.C_star or moments.default_C_star(mom, consts)
        try:
            omega = moments.omega_membership(mom, consts, cfg.species_masses(mixture), mom.mixture(2.0), C_star,
                                             mixture)
        except MissingMomentError as e:
            logger.warning(f"Omega membership skipped: {e}")
        if omega is not None:
            checks.append(CheckResult.at_least("initial_data_in_omega_tilde", float(omega.tilde_member), 1.0))
            checks.append(CheckResult.at_least("initial_data_in_omega", float(omega.member), 1.0,
                                               reasons=omega.reasons))
    checks += equilibrium_checks(cfg, seed)
    payload = {"skipped_orders": skipped, "omega": omega.to_dict() if omega else None}
    return SuiteOutcome("trajectory", checks, payload)
