"""
Exact collision transformations for the four interaction classes.

Every class goes through one vectorized core, ``collide_arrays``: the pair
energy E is redistributed as a kinetic share R*E along the scattering
direction sigma and an internal share (1-R)*E, the latter split by r between
two polyatomic partners. Scalar wrappers return ``CollisionOutcome`` or
``NullCollision`` values.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import chi2

from .errors import DegenerateParametrization
from .mixture_model import (
    InteractionClass,
    MixtureSpec,
    ParticleState,
    brackets,
    frame_bracket_energy,
    pair_frame,
    random_states,
)
from .reporting import CheckResult

SIGMA_TOL = 1e-12
RADICAND_GUARD = 1e-14


@dataclass(frozen=True, eq=False)
class CollisionParams:
    sigma: np.ndarray
    R: Optional[float] = None
    r: Optional[float] = None

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if abs(np.linalg.norm(sigma) - 1.0) > SIGMA_TOL:
            raise ValueError(f"sigma must be a unit vector, |sigma| = {np.linalg.norm(sigma)!r}")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        for name in ("R", "r"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class CollisionOutcome:
    a_out: ParticleState
    b_out: ParticleState
    primed_params: CollisionParams


@dataclass(frozen=True)
class NullCollision:
    """No-op collision: zero relative speed (mono-mono) or zero pair energy."""

    reason: str


Outcome = Union[CollisionOutcome, NullCollision]


def unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def collide_arrays(va, Ia, vb, Ib, ma: float, mb: float, sigma, R, r, cls: InteractionClass):
    """
    Vectorized collision map.

    Args:
        va, vb: velocities, shape (N, d).
        Ia, Ib: internal energies, shape (N,); ignored for monatomic partners.
        sigma: unit scattering directions, shape (N, d).
        R, r: energy-exchange parameters, shape (N,); ignored where the class has none.

    Returns:
        tuple: (va', Ia', vb', Ib', sigma', R', r', null) with ``null`` marking
        pairs left unchanged because the collision degenerates.
    """
    va = np.asarray(va, dtype=float)
    vb = np.asarray(vb, dtype=float)
    n = va.shape[0]
    Ia = np.zeros(n) if cls in (InteractionClass.MONO_MONO, InteractionClass.MONO_POLY) else np.asarray(Ia, float)
    Ib = np.zeros(n) if cls in (InteractionClass.MONO_MONO, InteractionClass.POLY_MONO) else np.asarray(Ib, float)
    M = ma + mb
    mu = ma * mb / M
    V = (ma * va + mb * vb) / M
    u = va - vb
    u2 = np.einsum("nk,nk->n", u, u)
    E = 0.5 * mu * u2 + Ia + Ib
    speed = np.sqrt(u2)

    if cls is InteractionClass.MONO_MONO:
        null = speed == 0.0
        c = speed
        R_in = None
    else:
        null = E == 0.0
        R_in = np.asarray(R, dtype=float)
        c = np.sqrt(2.0 * R_in * E / mu)

    sigma = np.asarray(sigma, dtype=float)
    va_out = V + (mb / M) * c[:, None] * sigma
    vb_out = V - (ma / M) * c[:, None] * sigma

    if cls is InteractionClass.POLY_POLY:
        r_in = np.asarray(r, dtype=float)
        Ia_out = r_in * (1.0 - R_in) * E
        Ib_out = (1.0 - r_in) * (1.0 - R_in) * E
    elif cls is InteractionClass.POLY_MONO:
        Ia_out = (1.0 - R_in) * E
        Ib_out = np.zeros(n)
    elif cls is InteractionClass.MONO_POLY:
        Ia_out = np.zeros(n)
        Ib_out = (1.0 - R_in) * E
    else:
        Ia_out = np.zeros(n)
        Ib_out = np.zeros(n)

    with np.errstate(invalid="ignore", divide="ignore"):
        sigma_p = np.where(speed[:, None] > 0.0, u / np.where(speed > 0.0, speed, 1.0)[:, None], sigma)
        R_p = np.where(E > 0.0, 0.5 * mu * u2 / np.where(E > 0.0, E, 1.0), 1.0) if cls.has_R else None
        internal = Ia + Ib
        r_p = np.where(internal > 0.0, Ia / np.where(internal > 0.0, internal, 1.0), 0.5) if cls.has_r else None

    keep = null[:, None]
    va_out = np.where(keep, va, va_out)
    vb_out = np.where(keep, vb, vb_out)
    Ia_out = np.where(null, Ia, Ia_out)
    Ib_out = np.where(null, Ib, Ib_out)
    return va_out, Ia_out, vb_out, Ib_out, sigma_p, R_p, r_p, null


def _check_class(a: ParticleState, b: ParticleState, mixture: MixtureSpec, expected: InteractionClass):
    a.check(mixture)
    b.check(mixture)
    cls = mixture.interaction_class(a.species, b.species)
    if cls is not expected:
        raise ValueError(f"expected a {expected.value} pair, got {cls.value}")
    return mixture.spec(a.species).mass, mixture.spec(b.species).mass


def _collide(a, b, params: CollisionParams, mixture, cls) -> Outcome:
    ma, mb = _check_class(a, b, mixture, cls)
    if cls.has_R and params.R is None:
        raise ValueError(f"{cls.value} collisions need R")
    if cls.has_r and params.r is None:
        raise ValueError(f"{cls.value} collisions need r")
    R = np.array([params.R if params.R is not None else 1.0])
    r = np.array([params.r if params.r is not None else 0.5])
    va, Ia, vb, Ib, sp, Rp, rp, null = collide_arrays(
        a.v[None, :], np.array([a.I]), b.v[None, :], np.array([b.I]), ma, mb, params.sigma[None, :], R, r, cls
    )
    if null[0]:
        return NullCollision("zero relative speed" if cls is InteractionClass.MONO_MONO else "zero pair energy")
    primed = CollisionParams(
        sigma=unit(sp[0]),
        R=float(np.clip(Rp[0], 0.0, 1.0)) if Rp is not None else None,
        r=float(np.clip(rp[0], 0.0, 1.0)) if rp is not None else None,
    )
    return CollisionOutcome(
        a_out=ParticleState(va[0], float(Ia[0]), a.species),
        b_out=ParticleState(vb[0], float(Ib[0]), b.species),
        primed_params=primed,
    )


def collide_mono_mono(a: ParticleState, b: ParticleState, sigma, mixture: MixtureSpec) -> Outcome:
    """Elastic collision; the primed direction is the pre-collision relative direction."""
    return _collide(a, b, CollisionParams(sigma), mixture, InteractionClass.MONO_MONO)


def collide_poly_poly(a: ParticleState, b: ParticleState, params: CollisionParams, mixture: MixtureSpec) -> Outcome:
    return _collide(a, b, params, mixture, InteractionClass.POLY_POLY)


def collide_poly_mono(a_poly: ParticleState, b_mono: ParticleState, sigma, R: float, mixture: MixtureSpec) -> Outcome:
    return _collide(a_poly, b_mono, CollisionParams(sigma, R=R), mixture, InteractionClass.POLY_MONO)


def collide_mono_poly(a_mono: ParticleState, b_poly: ParticleState, sigma, R: float, mixture: MixtureSpec) -> Outcome:
    return _collide(a_mono, b_poly, CollisionParams(sigma, R=R), mixture, InteractionClass.MONO_POLY)


def collide(a: ParticleState, b: ParticleState, params: CollisionParams, mixture: MixtureSpec) -> Outcome:
    """Dispatch on the interaction class of (a, b)."""
    return _collide(a, b, params, mixture, mixture.interaction_class(a.species, b.species))


def interchange(a: ParticleState, b: ParticleState, params: CollisionParams):
    """
    Swap the roles of the two colliding particles.

    The scattering direction flips and r becomes 1 - r; the collision
    outcome is the same pair of post-collision states in swapped order.
    """
    r = None if params.r is None else 1.0 - params.r
    return b, a, CollisionParams(-params.sigma, R=params.R, r=r)


def jacobian(params: CollisionParams, primed: CollisionParams, cls: InteractionClass, dimension: int = 3) -> float:
    """
    Jacobian of the collision map in the (v, v*, I, I*, sigma, r, R) variables.

    Raises:
        DegenerateParametrization: primed R at a boundary where the formula divides by it.
    """
    if cls is InteractionClass.MONO_MONO:
        return 1.0
    R, Rp = float(params.R), float(primed.R)
    e = 0.5 * (dimension - 2)
    if Rp <= 0.0 or (cls is InteractionClass.POLY_POLY and Rp >= 1.0):
        raise DegenerateParametrization(f"{cls.value} jacobian undefined at R' = {Rp}")
    if cls is InteractionClass.POLY_POLY:
        return (1.0 - R) * R**e / ((1.0 - Rp) * Rp**e)
    return (R / Rp) ** e


def tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the plane orthogonal to the unit vector n, shape (d, d-1)."""
    q, _ = np.linalg.qr(np.asarray(n, dtype=float)[:, None], mode="complete")
    return q[:, 1:]


def _coordinate_layout(cls: InteractionClass, d: int):
    layout = [("va", d), ("vb", d)]
    if cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO):
        layout.append(("Ia", 1))
    if cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY):
        layout.append(("Ib", 1))
    layout.append(("sigma", d - 1))
    if cls.has_r:
        layout.append(("r", 1))
    if cls.has_R:
        layout.append(("R", 1))
    return layout


def finite_difference_jacobian(
    va, Ia, vb, Ib, params: CollisionParams, ma: float, mb: float, cls: InteractionClass, rel_step: float = 1e-6
) -> float:
    """
    Absolute determinant of the collision map by central differences.

    The sphere is charted at sigma by sigma(t) = normalize(sigma + B t) and at the
    primed direction by projection onto its tangent basis.
    """
    va = np.asarray(va, float)
    vb = np.asarray(vb, float)
    d = va.shape[0]
    layout = _coordinate_layout(cls, d)
    B_in = tangent_basis(params.sigma)
    base_out = collide_arrays(
        va[None], np.array([Ia]), vb[None], np.array([Ib]), ma, mb, params.sigma[None],
        np.array([params.R if params.R is not None else 1.0]), np.array([params.r if params.r is not None else 0.5]), cls,
    )
    B_out = tangent_basis(base_out[4][0])

    x0 = []
    for name, size in layout:
        if name == "va":
            x0.extend(va)
        elif name == "vb":
            x0.extend(vb)
        elif name == "Ia":
            x0.append(Ia)
        elif name == "Ib":
            x0.append(Ib)
        elif name == "sigma":
            x0.extend([0.0] * size)
        elif name == "r":
            x0.append(params.r)
        elif name == "R":
            x0.append(params.R)
    x0 = np.array(x0, dtype=float)
    n = x0.size
    h = rel_step * np.maximum(1.0, np.abs(x0))
    X = np.repeat(x0[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    X[2 * idx, idx] += h
    X[2 * idx + 1, idx] -= h

    cols = {}
    pos = 0
    for name, size in layout:
        cols[name] = slice(pos, pos + size)
        pos += size

    m = X.shape[0]
    a_v = X[:, cols["va"]]
    b_v = X[:, cols["vb"]]
    a_I = X[:, cols["Ia"]].ravel() if "Ia" in cols else np.zeros(m)
    b_I = X[:, cols["Ib"]].ravel() if "Ib" in cols else np.zeros(m)
    sig = unit(params.sigma[None, :] + X[:, cols["sigma"]] @ B_in.T)
    r = X[:, cols["r"]].ravel() if "r" in cols else np.full(m, 0.5)
    R = X[:, cols["R"]].ravel() if "R" in cols else np.ones(m)
    out_va, out_Ia, out_vb, out_Ib, out_s, out_R, out_r, _ = collide_arrays(a_v, a_I, b_v, b_I, ma, mb, sig, R, r, cls)

    Y = [out_va, out_vb]
    if "Ia" in cols:
        Y.append(out_Ia[:, None])
    if "Ib" in cols:
        Y.append(out_Ib[:, None])
    Y.append(out_s @ B_out)
    if "r" in cols:
        Y.append(out_r[:, None])
    if "R" in cols:
        Y.append(out_R[:, None])
    Y = np.hstack(Y)
    J = (Y[0::2] - Y[1::2]).T / (2.0 * h[None, :])
    return float(abs(np.linalg.det(J)))


@dataclass(frozen=True)
class EnergySplit:
    """
    Convex decomposition of the post-collision squared brackets.

    ``p_t, q_t, t_t`` form the convex triple; for mono-mono pairs ``t_t`` is 0
    and ``p``/``q`` alias the first two entries.
    """

    cls: InteractionClass
    energy: float
    theta: float
    sigma_split: Optional[float]
    p_t: float
    q_t: float
    t_t: float
    lam: float
    v_hat_dot_sigma: float
    s_bar: float
    R: Optional[float]
    share: float
    zero_center_velocity: bool = False

    @property
    def p(self) -> float:
        return self.p_t

    @property
    def q(self) -> float:
        return self.q_t

    def reconstruct(self) -> Tuple[float, float]:
        """Squared post-collision brackets rebuilt from the split."""
        E, x = self.energy, self.share
        cross = self.lam * self.v_hat_dot_sigma
        return E * (self.p_t + x * self.t_t) + cross, E * (self.q_t + (1.0 - x) * self.t_t) - cross


def _root(x):
    """Square root with radicands in [-RADICAND_GUARD, 0) clamped to zero."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.where((x < 0.0) & (x >= -RADICAND_GUARD), 0.0, x))


def split_quantities(s, Theta_E, rest_E, E, R, cls: InteractionClass):
    """
    Array form of the split.

    Args:
        s: mass fraction of the first particle.
        Theta_E: 1 + M|V|^2/(2m), the centre-of-mass part of the bracket energy.
        rest_E: 1 + E_ij/m.
        E: total bracket energy, Theta_E + rest_E.
        R: kinetic fraction, ignored for mono-mono.

    Returns:
        tuple: (p, q, t, lambda, theta, Sigma)
    """
    theta = Theta_E / E
    sq = 2.0 * np.sqrt(s * (1.0 - s))
    if cls is InteractionClass.MONO_MONO:
        p = s * theta + (1.0 - s) * (1.0 - theta)
        q = 1.0 - p
        t = np.zeros_like(p)
        Sig = None
        lam = sq * _root(Theta_E - 1.0) * _root(rest_E - 1.0)
    else:
        Sig = (1.0 + R * (rest_E - 1.0)) / rest_E
        p = s * theta + (1.0 - s) * Sig * (1.0 - theta)
        q = (1.0 - s) * theta + s * Sig * (1.0 - theta)
        t = (1.0 - Sig) * (1.0 - theta)
        lam = sq * _root(Sig * rest_E - 1.0) * _root(Theta_E - 1.0)
    return p, q, t, lam, theta, Sig


def energy_split(a: ParticleState, b: ParticleState, params: CollisionParams, cls: InteractionClass,
                 mixture: MixtureSpec) -> EnergySplit:
    frame = pair_frame(a, b, mixture)
    if frame.cls is not cls:
        raise ValueError(f"expected a {cls.value} pair, got {frame.cls.value}")
    m = mixture.total_mass
    E = frame_bracket_energy(frame, m)
    Theta_E = 1.0 + frame.total_mass * float(frame.V @ frame.V) / (2.0 * m)
    rest_E = 1.0 + frame.E / m
    R = None if params.R is None else float(params.R)
    p, q, t, lam, theta, Sig = (
        float(x) if x is not None else None for x in split_quantities(frame.s, Theta_E, rest_E, E, R, cls)
    )

    speed_V = float(np.linalg.norm(frame.V))
    zero_V = speed_V == 0.0
    vs = 0.0 if zero_V else float(frame.V @ params.sigma) / speed_V
    if cls is InteractionClass.POLY_POLY:
        share = float(params.r)
    elif cls is InteractionClass.POLY_MONO:
        share = 1.0
    else:
        share = 0.0
    return EnergySplit(
        cls=cls, energy=E, theta=theta, sigma_split=Sig, p_t=p, q_t=q, t_t=t, lam=0.0 if zero_V else lam,
        v_hat_dot_sigma=vs, s_bar=frame.s_bar, R=params.R, share=share, zero_center_velocity=zero_V,
    )


def primed_bracket_bound(split: EnergySplit, params: Optional[CollisionParams] = None,
                         cls: Optional[InteractionClass] = None) -> Tuple[float, float]:
    """Upper bounds on the two squared post-collision brackets."""
    cls = cls or split.cls
    E = split.energy
    gap = 1.0 - abs(split.v_hat_dot_sigma)
    if cls is InteractionClass.MONO_MONO:
        bound = (1.0 - split.s_bar * gap) * E
        return bound, bound
    if cls is InteractionClass.POLY_POLY:
        r = params.r if params is not None and params.r is not None else split.share
        return (
            E * (1.0 - split.q_t * gap - split.t_t * (1.0 - r)),
            E * (1.0 - split.p_t * gap - split.t_t * r),
        )
    R = params.R if params is not None and params.R is not None else split.R
    bound = (1.0 - split.s_bar * R * gap) * E
    return bound, bound


# ---------------------------------------------------------------------------
# Sampling checks
# ---------------------------------------------------------------------------

WINDOW_SPEED = 3.0
WINDOW_ENERGY = 5.0
HIST_BINS = 20


def class_representatives(mixture: MixtureSpec) -> Dict[InteractionClass, Tuple[int, int]]:
    """First ordered species pair of every interaction class present in the mixture."""
    found = {}
    for (i, j) in mixture.pairs():
        found.setdefault(mixture.interaction_class(i, j), (i, j))
    return found


def _pair_draws(rng, mixture: MixtureSpec, i: int, j: int, n: int, lo: float = 1e-3):
    d = mixture.dimension
    va, Ia = random_states(rng, n, mixture.spec(i), d)
    vb, Ib = random_states(rng, n, mixture.spec(j), d)
    sigma = unit(rng.standard_normal((n, d)))
    R = rng.uniform(lo, 1.0 - lo, size=n)
    r = rng.uniform(lo, 1.0 - lo, size=n)
    return va, Ia, vb, Ib, sigma, R, r


def _rel(x, scale):
    return float(np.max(x / np.maximum(scale, 1e-300))) if np.size(x) else 0.0


def _speed_scale(*velocities):
    """Sum of speeds before and after the collision; zero only if every velocity is."""
    return sum(np.linalg.norm(v, axis=1) for v in velocities)


def _momentum_scale(ma, mb, va, vb, va2, vb2):
    return ma * (np.linalg.norm(va, axis=1) + np.linalg.norm(va2, axis=1)) + mb * (
        np.linalg.norm(vb, axis=1) + np.linalg.norm(vb2, axis=1))


def conservation_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                       tol: float = 1e-10) -> List[CheckResult]:
    """Momentum and class-total energy before and after random collisions."""
    rng = rng or np.random.default_rng(0)
    checks = []
    for cls, (i, j) in class_representatives(mixture).items():
        ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
        va, Ia, vb, Ib, sigma, R, r = _pair_draws(rng, mixture, i, j, n_samples)
        va2, Ia2, vb2, Ib2, *_ = collide_arrays(va, Ia, vb, Ib, ma, mb, sigma, R, r, cls)
        Ia = Ia if cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO) else np.zeros(n_samples)
        Ib = Ib if cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY) else np.zeros(n_samples)
        p_err = np.linalg.norm(ma * (va2 - va) + mb * (vb2 - vb), axis=1)
        p_scale = _momentum_scale(ma, mb, va, vb, va2, vb2)
        e0 = 0.5 * ma * np.einsum("nk,nk->n", va, va) + 0.5 * mb * np.einsum("nk,nk->n", vb, vb) + Ia + Ib
        e1 = 0.5 * ma * np.einsum("nk,nk->n", va2, va2) + 0.5 * mb * np.einsum("nk,nk->n", vb2, vb2) + Ia2 + Ib2
        checks.append(CheckResult.at_most(f"momentum_conservation[{cls.value}]", _rel(p_err, p_scale), tol,
                                          n=n_samples))
        checks.append(CheckResult.at_most(f"energy_conservation[{cls.value}]", _rel(np.abs(e1 - e0), e0), tol,
                                          n=n_samples))
    return checks


def involution_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                     tol: float = 1e-10) -> List[CheckResult]:
    """Applying the collision map to its own output with the primed parameters restores the input."""
    rng = rng or np.random.default_rng(0)
    checks = []
    for cls, (i, j) in class_representatives(mixture).items():
        ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
        va, Ia, vb, Ib, sigma, R, r = _pair_draws(rng, mixture, i, j, n_samples)
        va2, Ia2, vb2, Ib2, s2, R2, r2, null = collide_arrays(va, Ia, vb, Ib, ma, mb, sigma, R, r, cls)
        R2 = R2 if R2 is not None else np.ones(n_samples)
        r2 = r2 if r2 is not None else np.full(n_samples, 0.5)
        va3, Ia3, vb3, Ib3, s3, R3, *_ = collide_arrays(va2, Ia2, vb2, Ib2, ma, mb, s2, R2, r2, cls)
        live = ~null
        v_scale = _speed_scale(va, vb, va2, vb2)
        v_err = np.linalg.norm(va3 - va, axis=1) + np.linalg.norm(vb3 - vb, axis=1)
        worst = _rel(v_err[live], v_scale[live])
        if cls is not InteractionClass.MONO_MONO:
            e_scale = 0.5 * ma * mb / (ma + mb) * np.einsum("nk,nk->n", va - vb, va - vb) + Ia + Ib
            i_err = np.abs(Ia3 - Ia) + np.abs(Ib3 - Ib)
            worst = max(worst, _rel(i_err[live], e_scale[live]), _rel(np.abs(R3 - R)[live], np.ones(int(live.sum()))))
        checks.append(CheckResult.at_most(f"involution[{cls.value}]", worst, tol, n=int(live.sum())))
    return checks


def jacobian_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                   tol: float = 1e-6) -> List[CheckResult]:
    """Closed-form Jacobian against a central-difference determinant of the full map."""
    rng = rng or np.random.default_rng(0)
    d = mixture.dimension
    checks = []
    for cls, (i, j) in class_representatives(mixture).items():
        ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
        worst = 0.0
        n_done = 0
        for _ in range(n_samples):
            va, vb = rng.standard_normal(d), rng.standard_normal(d)
            Ia = float(rng.uniform(0.1, 2.0)) if cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO) else 0.0
            Ib = float(rng.uniform(0.1, 2.0)) if cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY) else 0.0
            params = CollisionParams(
                unit(rng.standard_normal(d)),
                R=float(rng.uniform(0.1, 0.9)) if cls.has_R else None,
                r=float(rng.uniform(0.1, 0.9)) if cls.has_r else None,
            )
            out = collide_arrays(va[None], np.array([Ia]), vb[None], np.array([Ib]), ma, mb, params.sigma[None],
                                 np.array([params.R or 1.0]), np.array([params.r or 0.5]), cls)
            primed = CollisionParams(
                unit(out[4][0]),
                R=float(out[5][0]) if out[5] is not None else None,
                r=float(out[6][0]) if out[6] is not None else None,
            )
            try:
                analytic = jacobian(params, primed, cls, d)
            except DegenerateParametrization:
                continue
            numeric = finite_difference_jacobian(va, Ia, vb, Ib, params, ma, mb, cls)
            worst = max(worst, abs(numeric - analytic) / analytic)
            n_done += 1
        checks.append(CheckResult.at_most(f"jacobian_vs_finite_difference[{cls.value}]", worst, tol, n=n_done))
    return checks


def energy_split_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                       tol: float = 1e-10, convex_tol: float = 1e-14, slack: float = 1e-12) -> List[CheckResult]:
    """Convexity, reconstruction and the primed-bracket estimates of the energy split."""
    rng = rng or np.random.default_rng(0)
    m = mixture.total_mass
    checks = []
    for cls, (i, j) in class_representatives(mixture).items():
        ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
        M = ma + mb
        s = ma / M
        s_bar = min(s, 1.0 - s)
        va, Ia, vb, Ib, sigma, R, r = _pair_draws(rng, mixture, i, j, n_samples)
        va2, Ia2, vb2, Ib2, *_ = collide_arrays(va, Ia, vb, Ib, ma, mb, sigma, R, r, cls)
        Ia = Ia if cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO) else np.zeros(n_samples)
        Ib = Ib if cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY) else np.zeros(n_samples)
        V = (ma * va + mb * vb) / M
        u = va - vb
        E_pair = 0.5 * ma * mb / M * np.einsum("nk,nk->n", u, u) + Ia + Ib
        V2 = np.einsum("nk,nk->n", V, V)
        Theta_E = 1.0 + M * V2 / (2.0 * m)
        rest_E = 1.0 + E_pair / m
        E = Theta_E + rest_E
        p, q, t, lam, _, _ = split_quantities(s, Theta_E, rest_E, E, R, cls)
        speed_V = np.sqrt(V2)
        vs = np.where(speed_V > 0.0, np.einsum("nk,nk->n", V, sigma) / np.where(speed_V > 0.0, speed_V, 1.0), 0.0)
        share = {InteractionClass.POLY_POLY: r, InteractionClass.POLY_MONO: 1.0}.get(cls, 0.0)
        recon_a = E * (p + share * t) + lam * vs
        recon_b = E * (q + (1.0 - share) * t) - lam * vs
        actual_a = brackets(va2, Ia2, ma, m) ** 2
        actual_b = brackets(vb2, Ib2, mb, m) ** 2
        gap = 1.0 - np.abs(vs)
        if cls is InteractionClass.MONO_MONO:
            bound_a = bound_b = (1.0 - s_bar * gap) * E
        elif cls is InteractionClass.POLY_POLY:
            bound_a = E * (1.0 - q * gap - t * (1.0 - r))
            bound_b = E * (1.0 - p * gap - t * r)
        else:
            bound_a = bound_b = (1.0 - s_bar * R * gap) * E
        name = cls.value
        checks += [
            CheckResult.at_most(f"split_convexity[{name}]", float(np.max(np.abs(p + q + t - 1.0))), convex_tol),
            CheckResult.at_most(f"split_reconstruction[{name}]",
                                max(_rel(np.abs(recon_a - actual_a), E), _rel(np.abs(recon_b - actual_b), E)), tol),
            CheckResult.at_most(f"split_lambda_bound[{name}]",
                                max(_rel(np.maximum(0.0, lam - p * E), E), _rel(np.maximum(0.0, lam - q * E), E)),
                                slack),
            CheckResult.at_most(f"split_mass_fraction_bound[{name}]",
                                float(np.max(np.maximum(0.0, s_bar - np.minimum(p + t, q + t)))), slack),
            CheckResult.at_most(f"primed_bracket_bound[{name}]",
                                max(_rel(np.maximum(0.0, actual_a - bound_a), E),
                                    _rel(np.maximum(0.0, actual_b - bound_b), E)), slack, n=n_samples),
        ]
    return checks


def interchange_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                      tol: float = 1e-12) -> List[CheckResult]:
    """Mono-poly collision with reversed roles and -sigma reproduces the poly-mono outcome."""
    rng = rng or np.random.default_rng(0)
    reps = class_representatives(mixture)
    if InteractionClass.POLY_MONO not in reps:
        return []
    i, j = reps[InteractionClass.POLY_MONO]
    ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
    va, Ia, vb, Ib, sigma, R, r = _pair_draws(rng, mixture, i, j, n_samples)
    pa, pIa, pb, pIb, *_ = collide_arrays(va, Ia, vb, Ib, ma, mb, sigma, R, r, InteractionClass.POLY_MONO)
    qb, qIb, qa, qIa, *_ = collide_arrays(vb, Ib, va, Ia, mb, ma, -sigma, R, 1.0 - r, InteractionClass.MONO_POLY)
    scale = _speed_scale(va, vb, pa, pb) + np.sqrt(Ia) + np.sqrt(pIa)
    err = np.linalg.norm(pa - qa, axis=1) + np.linalg.norm(pb - qb, axis=1) + np.abs(np.sqrt(pIa) - np.sqrt(qIa))
    return [CheckResult.at_most("reference_interchange[poly-mono]", _rel(err, scale), tol, n=n_samples)]


def _window_sample(rng, mixture: MixtureSpec, cls: InteractionClass, i: int, j: int, n: int):
    d = mixture.dimension
    e = 0.5 * (d - 2)
    a, b = mixture.spec(i), mixture.spec(j)
    va = rng.uniform(-WINDOW_SPEED, WINDOW_SPEED, (n, d))
    vb = rng.uniform(-WINDOW_SPEED, WINDOW_SPEED, (n, d))
    Ia = WINDOW_ENERGY * rng.random(n) ** (1.0 / (a.alpha + 1.0)) if a.is_poly else np.zeros(n)
    Ib = WINDOW_ENERGY * rng.random(n) ** (1.0 / (b.alpha + 1.0)) if b.is_poly else np.zeros(n)
    sigma = unit(rng.standard_normal((n, d)))
    if cls is InteractionClass.POLY_POLY:
        R = rng.beta(e + 1.0, a.alpha + b.alpha + 2.0, n)
        r = rng.beta(a.alpha + 1.0, b.alpha + 1.0, n)
    elif cls.has_R:
        R = rng.beta(e + 1.0, (a.alpha if a.is_poly else b.alpha) + 1.0, n)
        r = np.full(n, 0.5)
    else:
        R, r = np.ones(n), np.full(n, 0.5)
    return va, Ia, vb, Ib, sigma, R, r


def _inside(v_a, v_b, I_a, I_b):
    return ((np.abs(v_a) <= WINDOW_SPEED).all(axis=1) & (np.abs(v_b) <= WINDOW_SPEED).all(axis=1)
            & (I_a <= WINDOW_ENERGY) & (I_b <= WINDOW_ENERGY))


def _two_sample_chi2(x, y, lo, hi, bins=HIST_BINS) -> float:
    """p-value of the chi-square test that two equal-size samples share a law."""
    hx, _ = np.histogram(x, bins=bins, range=(lo, hi))
    hy, _ = np.histogram(y, bins=bins, range=(lo, hi))
    tot = hx + hy
    used = tot > 0
    stat = float(np.sum((hx[used] - hy[used]) ** 2 / tot[used]))
    return float(chi2.sf(stat, max(int(used.sum()) - 1, 1)))


def measure_invariance_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                             p_min: float = 1e-3) -> List[CheckResult]:
    """
    Push the invariant measure, restricted to a compact window, through the
    collision map and compare marginal histograms of the primed variables with
    those of the unprimed ones on the window's self-mapped part.
    """
    rng = rng or np.random.default_rng(0)
    checks = []
    for cls, (i, j) in class_representatives(mixture).items():
        ma, mb = mixture.spec(i).mass, mixture.spec(j).mass
        va, Ia, vb, Ib, sigma, R, r = _window_sample(rng, mixture, cls, i, j, n_samples)
        va2, Ia2, vb2, Ib2, _, R2, r2, null = collide_arrays(va, Ia, vb, Ib, ma, mb, sigma, R, r, cls)
        keep = _inside(va2, vb2, Ia2, Ib2) & ~null
        marginals = [("v_x", va[keep, 0], va2[keep, 0], -WINDOW_SPEED, WINDOW_SPEED)]
        if cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO):
            marginals.append(("I", Ia[keep], Ia2[keep], 0.0, WINDOW_ENERGY))
        if cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY):
            marginals.append(("I_star", Ib[keep], Ib2[keep], 0.0, WINDOW_ENERGY))
        if cls.has_R:
            marginals.append(("R", R[keep], R2[keep], 0.0, 1.0))
        if cls.has_r:
            marginals.append(("r", r[keep], r2[keep], 0.0, 1.0))
        for name, before, after, lo, hi in marginals:
            p = _two_sample_chi2(before, after, lo, hi)
            checks.append(CheckResult.at_least(f"measure_invariance[{cls.value}].{name}", p, p_min,
                                               n=int(keep.sum()), bins=HIST_BINS))
    return checks
