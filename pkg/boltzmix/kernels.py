"""
Collision kernels.

A pair kernel is assembled from an angular part b(u.sigma), a partition
envelope in the energy-exchange parameters (r, R) and the total-energy power
law (E/m)^{gamma/2}. Two forms are supported: ``product`` evaluates
b * partition_ub * energy, ``model23`` evaluates the sum-form kernel whose
envelopes are the min/max functions of ``Model23Partition``.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import beta as beta_fn

from .errors import ConfigError, QuadratureError
from .kinematics import CollisionParams, collide_arrays, unit
from .log import get_logger
from .mixture_model import (
    InteractionClass,
    MixtureSpec,
    ParticleState,
    brackets,
    random_states,
)
from .quadrature import DEFAULT_TOL, quad_weighted, sphere_area
from .reporting import CheckResult

logger = get_logger(__name__)

TABLE_KNOTS = 4096


# ---------------------------------------------------------------------------
# Angular parts
# ---------------------------------------------------------------------------


class AngularKernel(ABC):
    """Nonnegative function of the cosine x = u_hat . sigma on [-1, 1]."""

    kind = "angular"

    @abstractmethod
    def __call__(self, x) -> np.ndarray: ...

    @abstractmethod
    def l1_norm(self, d: int, tol: float = DEFAULT_TOL) -> float: ...

    @property
    @abstractmethod
    def sup(self) -> float: ...

    @abstractmethod
    def params(self) -> dict: ...

    def to_dict(self) -> dict:
        return {"type": self.kind, "params": self.params()}

    def sample_cos(self, rng: np.random.Generator, n: int, d: int) -> np.ndarray:
        """Draw x with density proportional to b(x) (1 - x^2)^{(d-3)/2}."""
        return self._cosine_table(d).sample(rng, n)

    def _cosine_table(self, d: int) -> "_CosineTable":
        tables = self.__dict__.setdefault("_cos_tables", {})
        if d not in tables:
            tables[d] = _CosineTable(self, d)
        return tables[d]


class IsotropicAngular(AngularKernel):
    kind = "isotropic"

    def __init__(self, value: float = 1.0):
        if not value > 0.0:
            raise ConfigError(f"isotropic angular value must be positive, got {value}")
        self.value = float(value)

    @classmethod
    def normalized(cls, d: int) -> "IsotropicAngular":
        return cls(1.0 / sphere_area(d))

    def __call__(self, x):
        return np.full(np.shape(x), self.value)

    def l1_norm(self, d, tol=DEFAULT_TOL):
        return self.value * sphere_area(d)

    @property
    def sup(self):
        return self.value

    def params(self):
        return {"value": self.value}

    def sample_cos(self, rng, n, d):
        if d == 2:
            return np.cos(np.pi * rng.random(n))
        return 2.0 * rng.beta(0.5 * (d - 1), 0.5 * (d - 1), size=n) - 1.0


class TruncatedPowerAngular(AngularKernel):
    """b(x) = c (1 - x)^{-nu} for x <= x_cut, zero above."""

    kind = "truncated_power"

    def __init__(self, c: float = 1.0, nu: float = 0.5, x_cut: float = 1.0):
        if not c > 0.0 or nu < 0.0 or not -1.0 < x_cut <= 1.0:
            raise ConfigError(f"truncated_power needs c > 0, nu >= 0, x_cut in (-1, 1]; got {c}, {nu}, {x_cut}")
        self.c, self.nu, self.x_cut = float(c), float(nu), float(x_cut)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            val = self.c * np.power(np.maximum(1.0 - x, 0.0), -self.nu)
        return np.where(x <= self.x_cut, val, 0.0)

    def l1_norm(self, d, tol=DEFAULT_TOL):
        a = 0.5 * (d - 3)
        if self.x_cut >= 1.0:
            if self.nu >= 0.5 * (d - 1):
                raise QuadratureError(
                    f"truncated_power angular part with nu = {self.nu} is not integrable on S^{d - 1}: "
                    "b_ij must be integrable over the sphere"
                )
            core = quad_weighted(lambda x: self.c, -1.0, 1.0, left=a, right=a - self.nu, tol=tol,
                                 what="angular part b_ij (must be integrable on the sphere)")
        else:
            core = quad_weighted(lambda x: self.c * (1.0 - x) ** (a - self.nu), -1.0, self.x_cut, left=a,
                                 tol=tol, what="angular part b_ij (must be integrable on the sphere)")
        return sphere_area(d - 1) * core

    @property
    def sup(self):
        if self.x_cut < 1.0:
            return self.c * (1.0 - self.x_cut) ** (-self.nu)
        return self.c if self.nu == 0.0 else float("inf")

    def params(self):
        return {"c": self.c, "nu": self.nu, "x_cut": self.x_cut}


class PowerForwardAngular(AngularKernel):
    """b(x) = c ((1 + x)/2)^p."""

    kind = "power_forward"

    def __init__(self, c: float = 1.0, p: float = 1.0):
        if not c > 0.0 or p < 0.0:
            raise ConfigError(f"power_forward needs c > 0 and p >= 0, got {c}, {p}")
        self.c, self.p = float(c), float(p)

    def __call__(self, x):
        return self.c * np.power(0.5 * (1.0 + np.asarray(x, dtype=float)), self.p)

    def l1_norm(self, d, tol=DEFAULT_TOL):
        a = 0.5 * (d - 3)
        core = quad_weighted(lambda x: self.c * 0.5**self.p, -1.0, 1.0, left=a + self.p, right=a, tol=tol,
                             what="angular part b_ij")
        return sphere_area(d - 1) * core

    @property
    def sup(self):
        return self.c

    def params(self):
        return {"c": self.c, "p": self.p}


class _CosineTable:
    """Inverse CDF in theta on TABLE_KNOTS cells, linear within a cell."""

    def __init__(self, angular: AngularKernel, d: int, knots: int = TABLE_KNOTS):
        self.edges = np.linspace(0.0, np.pi, knots + 1)
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.width = self.edges[1] - self.edges[0]
        mass = angular(np.cos(mid)) * np.sin(mid) ** (d - 2) * self.width
        if not np.all(np.isfinite(mass)) or mass.sum() <= 0.0:
            raise QuadratureError(f"cannot tabulate angular part {angular.to_dict()} for sampling")
        self.mass = mass
        self.cdf = np.cumsum(mass)

    def sample(self, rng, n):
        target = rng.random(n) * self.cdf[-1]
        k = np.minimum(np.searchsorted(self.cdf, target, side="right"), self.cdf.size - 1)
        prev = np.where(k > 0, self.cdf[k - 1], 0.0)
        frac = np.clip((target - prev) / self.mass[k], 0.0, 1.0)
        return np.cos(self.edges[k] + frac * self.width)


def directions_about(u_hat: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors sigma with sigma . u_hat = x and uniform azimuth."""
    g = rng.standard_normal(u_hat.shape)
    g -= np.einsum("nk,nk->n", g, u_hat)[:, None] * u_hat
    omega = unit(g)
    return x[:, None] * u_hat + np.sqrt(np.clip(1.0 - x * x, 0.0, None))[:, None] * omega


def build_angular(kind: str, params: dict, d: int) -> AngularKernel:
    params = dict(params or {})
    if kind == "isotropic":
        if params.pop("normalized", False):
            return IsotropicAngular.normalized(d)
        return IsotropicAngular(**params)
    if kind == "truncated_power":
        return TruncatedPowerAngular(**params)
    if kind == "power_forward":
        return PowerForwardAngular(**params)
    raise ConfigError(f"unknown angular kernel type '{kind}'")


# ---------------------------------------------------------------------------
# Partition envelopes
# ---------------------------------------------------------------------------


class Partition(ABC):
    kind = "partition"

    @abstractmethod
    def lb(self, r, R) -> np.ndarray: ...

    @abstractmethod
    def ub(self, r, R) -> np.ndarray: ...

    @property
    @abstractmethod
    def sup_ub(self) -> float: ...

    def R_breaks(self) -> List[float]:
        return []

    def r_breaks(self, R) -> List[float]:
        return []

    def to_dict(self) -> dict:
        return {"type": self.kind}


class UnitPartition(Partition):
    kind = "unit"

    def lb(self, r, R):
        return np.ones(np.broadcast(r, R).shape)

    def ub(self, r, R):
        return np.ones(np.broadcast(r, R).shape)

    @property
    def sup_ub(self):
        return 1.0


class ConstantPartition(Partition):
    kind = "constant"

    def __init__(self, lb: float, ub: float):
        if not 0.0 < lb <= ub:
            raise ConfigError(f"constant partition needs 0 < lb <= ub, got lb={lb}, ub={ub}")
        self._lb, self._ub = float(lb), float(ub)

    def lb(self, r, R):
        return np.full(np.broadcast(r, R).shape, self._lb)

    def ub(self, r, R):
        return np.full(np.broadcast(r, R).shape, self._ub)

    @property
    def sup_ub(self):
        return self._ub

    def to_dict(self):
        return {"type": self.kind, "lb": self._lb, "ub": self._ub}


class Model23Partition(Partition):
    """
    Envelopes of the sum-form kernel.

    With rho = 2m/mu the terms are (rho R, 1-R) for mixed pairs and
    (rho R, r(1-R), (1-r)(1-R)) for poly-poly pairs; lb = min^{g/2} and
    ub = n^{1-g/2} max^{g/2} with n the number of terms.
    """

    kind = "model23"

    def __init__(self, cls: InteractionClass, gamma: float, mu: float, total_mass: float):
        self.cls = cls
        self.gamma = float(gamma)
        self.ratio = 2.0 * total_mass / mu
        self.n_terms = 3 if cls is InteractionClass.POLY_POLY else 2
        self.constant = self.n_terms ** (1.0 - 0.5 * self.gamma)

    def _terms(self, r, R):
        r = np.asarray(r, dtype=float)
        R = np.asarray(R, dtype=float)
        if self.cls is InteractionClass.POLY_POLY:
            return np.stack(np.broadcast_arrays(self.ratio * R, r * (1.0 - R), (1.0 - r) * (1.0 - R)))
        return np.stack(np.broadcast_arrays(self.ratio * R + 0.0 * r, 1.0 - R + 0.0 * r))

    def lb(self, r, R):
        return self._terms(r, R).min(axis=0) ** (0.5 * self.gamma)

    def ub(self, r, R):
        return self.constant * self._terms(r, R).max(axis=0) ** (0.5 * self.gamma)

    @property
    def sup_ub(self):
        return self.constant * max(self.ratio, 1.0) ** (0.5 * self.gamma)

    def R_breaks(self):
        out = [1.0 / (1.0 + self.ratio)]
        if self.cls is InteractionClass.POLY_POLY:
            out.append(1.0 / (1.0 + 2.0 * self.ratio))
        return out

    def r_breaks(self, R):
        if self.cls is not InteractionClass.POLY_POLY or R >= 1.0:
            return []
        x = self.ratio * R / (1.0 - R)
        return [b for b in (0.5, x, 1.0 - x) if 0.0 < b < 1.0]

    def to_dict(self):
        return {"type": self.kind, "ratio": self.ratio}


def build_partition(cfg: dict, cls: InteractionClass, gamma: float, mu: float, total_mass: float,
                    form: str) -> Partition:
    if cls is InteractionClass.MONO_MONO:
        return UnitPartition()
    if form == "model23":
        return Model23Partition(cls, gamma, mu, total_mass)
    kind = (cfg or {}).get("type", "unit")
    if kind == "unit":
        return UnitPartition()
    if kind == "constant":
        return ConstantPartition(cfg.get("lb", 1.0), cfg.get("ub", 1.0))
    if kind == "model23":
        raise ConfigError("partition 'model23' requires form 'model23'")
    raise ConfigError(f"unknown partition type '{kind}'")


# ---------------------------------------------------------------------------
# Weights and energy part
# ---------------------------------------------------------------------------


def weight_di(R, alpha_i: float, dimension: int = 3):
    """Parameter weight of a mixed pair: (1-R)^alpha R^{(d-2)/2}."""
    R = np.asarray(R, dtype=float)
    return (1.0 - R) ** alpha_i * R ** (0.5 * (dimension - 2))


def weight_dij(r, R, alpha_i: float, alpha_j: float, dimension: int = 3):
    """Parameter weight of a poly-poly pair."""
    r = np.asarray(r, dtype=float)
    R = np.asarray(R, dtype=float)
    return r**alpha_i * (1.0 - r) ** alpha_j * (1.0 - R) ** (alpha_i + alpha_j + 1.0) * R ** (0.5 * (dimension - 2))


def energy_kernel(E, gamma_ij: float, mixture: MixtureSpec):
    """(E/m)^{gamma/2}."""
    return (np.asarray(E, dtype=float) / mixture.total_mass) ** (0.5 * gamma_ij)


def L_constant(s_bar: float, gamma: float) -> float:
    return (0.5 * s_bar) ** (0.5 * gamma) * min(1.0, 2.0 ** (1.0 - gamma))


# ---------------------------------------------------------------------------
# Pair kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairKernel:
    i: int
    j: int
    cls: InteractionClass
    gamma: float
    angular: AngularKernel
    partition: Partition
    form: str
    mass_a: float
    mass_b: float
    alpha_a: float
    alpha_b: float
    total_mass: float
    dimension: int

    @property
    def mu(self) -> float:
        return self.mass_a * self.mass_b / (self.mass_a + self.mass_b)

    @property
    def s_bar(self) -> float:
        s = self.mass_a / (self.mass_a + self.mass_b)
        return min(s, 1.0 - s)

    @property
    def L(self) -> float:
        return L_constant(self.s_bar, self.gamma)

    @property
    def R_exponents(self) -> Tuple[float, float]:
        left = 0.5 * (self.dimension - 2)
        if self.cls is InteractionClass.POLY_POLY:
            return left, self.alpha_a + self.alpha_b + 1.0
        if self.cls is InteractionClass.POLY_MONO:
            return left, self.alpha_a
        return left, self.alpha_b

    @property
    def r_exponents(self) -> Tuple[float, float]:
        return self.alpha_a, self.alpha_b

    def weight(self, r, R):
        if self.cls is InteractionClass.MONO_MONO:
            return np.ones(np.broadcast(r, R).shape)
        if self.cls is InteractionClass.POLY_POLY:
            return weight_dij(r, R, self.alpha_a, self.alpha_b, self.dimension)
        return weight_di(R, self.R_exponents[1], self.dimension) + 0.0 * np.asarray(r, dtype=float)

    @cached_property
    def weight_integral(self) -> float:
        """Closed-form integral of the parameter weight."""
        if self.cls is InteractionClass.MONO_MONO:
            return 1.0
        left, right = self.R_exponents
        z = beta_fn(left + 1.0, right + 1.0)
        if self.cls is InteractionClass.POLY_POLY:
            z *= beta_fn(self.alpha_a + 1.0, self.alpha_b + 1.0)
        return float(z)

    @cached_property
    def b_norm(self) -> float:
        return self.angular.l1_norm(self.dimension)

    @cached_property
    def rho_ub(self) -> float:
        return parameter_integral(self, self.partition.ub)

    @cached_property
    def rho_lb(self) -> float:
        return parameter_integral(self, self.partition.lb)

    @property
    def kappa_ub(self) -> float:
        return self.b_norm * self.rho_ub

    @property
    def kappa_lb(self) -> float:
        return self.b_norm * self.rho_lb

    def energy(self, E):
        return (np.asarray(E, dtype=float) / self.total_mass) ** (0.5 * self.gamma)

    def pair_energy(self, va, Ia, vb, Ib):
        u = np.asarray(va, float) - np.asarray(vb, float)
        E = 0.5 * self.mu * np.einsum("...k,...k->...", u, u)
        if self.cls in (InteractionClass.POLY_POLY, InteractionClass.POLY_MONO):
            E = E + Ia
        if self.cls in (InteractionClass.POLY_POLY, InteractionClass.MONO_POLY):
            E = E + Ib
        return E

    def cosines(self, va, vb, sigma):
        u = np.asarray(va, float) - np.asarray(vb, float)
        speed = np.linalg.norm(u, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            x = np.einsum("...k,...k->...", u, sigma) / speed
        return np.where(speed > 0.0, x, 1.0)

    def evaluate(self, va, Ia, vb, Ib, sigma, R, r, angular: bool = True):
        """Kernel values; ``angular=False`` drops the b(u.sigma) factor."""
        b = self.angular(self.cosines(va, vb, sigma)) if angular else 1.0
        return b * self.evaluate_without_angular(va, Ia, vb, Ib, R, r)

    def evaluate_without_angular(self, va, Ia, vb, Ib, R, r):
        if self.form == "product" or self.cls is InteractionClass.MONO_MONO:
            E = self.pair_energy(va, Ia, vb, Ib)
            return self.partition.ub(r, R) * self.energy(E)
        h = 0.5 * self.gamma
        u = np.asarray(va, float) - np.asarray(vb, float)
        u2 = np.einsum("...k,...k->...", u, u)
        m = self.total_mass
        R = np.asarray(R, dtype=float)
        kinetic = (R * u2) ** h
        if self.cls is InteractionClass.POLY_MONO:
            return kinetic + ((1.0 - R) * np.asarray(Ia) / m) ** h
        if self.cls is InteractionClass.MONO_POLY:
            return kinetic + ((1.0 - R) * np.asarray(Ib) / m) ** h
        r = np.asarray(r, dtype=float)
        return kinetic + (r * (1.0 - R) * np.asarray(Ia) / m) ** h + ((1.0 - r) * (1.0 - R) * np.asarray(Ib) / m) ** h

    def envelopes(self, va, Ia, vb, Ib, sigma, R, r):
        """Lower and upper product envelopes b * partition * energy."""
        b = self.angular(self.cosines(va, vb, sigma))
        e = self.energy(self.pair_energy(va, Ia, vb, Ib))
        return b * self.partition.lb(r, R) * e, b * self.partition.ub(r, R) * e

    def integrated_rate(self, va, Ia, vb, Ib):
        """Integral of the kernel over sigma and the weighted parameters for fixed states."""
        if self.form == "product" or self.cls is InteractionClass.MONO_MONO:
            return self.kappa_ub * self.energy(self.pair_energy(va, Ia, vb, Ib))
        h = 0.5 * self.gamma
        e = 0.5 * (self.dimension - 2)
        m = self.total_mass
        u = np.asarray(va, float) - np.asarray(vb, float)
        speed_g = np.einsum("...k,...k->...", u, u) ** h
        if self.cls is InteractionClass.POLY_POLY:
            aa, ab = self.alpha_a, self.alpha_b
            s = aa + ab + 2.0
            kin = beta_fn(aa + 1.0, ab + 1.0) * beta_fn(e + 1.0 + h, s)
            ia = beta_fn(aa + 1.0 + h, ab + 1.0) * beta_fn(e + 1.0, s + h)
            ib = beta_fn(aa + 1.0, ab + 1.0 + h) * beta_fn(e + 1.0, s + h)
            total = kin * speed_g + ia * (np.asarray(Ia) / m) ** h + ib * (np.asarray(Ib) / m) ** h
        else:
            alpha = self.R_exponents[1]
            internal = Ia if self.cls is InteractionClass.POLY_MONO else Ib
            kin = beta_fn(e + 1.0 + h, alpha + 1.0)
            ii = beta_fn(e + 1.0, alpha + 1.0 + h)
            total = kin * speed_g + ii * (np.asarray(internal) / m) ** h
        return self.b_norm * total

    def sample_params(self, rng: np.random.Generator, n: int):
        """Energy-exchange parameters drawn from the normalized weight."""
        if self.cls is InteractionClass.MONO_MONO:
            return np.ones(n), np.full(n, 0.5)
        left, right = self.R_exponents
        R = rng.beta(left + 1.0, right + 1.0, size=n)
        if self.cls is InteractionClass.POLY_POLY:
            r = rng.beta(self.alpha_a + 1.0, self.alpha_b + 1.0, size=n)
        else:
            r = np.full(n, 0.5)
        return R, r

    def sample_sigma(self, rng: np.random.Generator, u_hat: np.ndarray) -> np.ndarray:
        x = self.angular.sample_cos(rng, u_hat.shape[0], self.dimension)
        return directions_about(u_hat, x, rng)

    def to_dict(self) -> dict:
        return {
            "pair": [self.i, self.j],
            "class": self.cls.value,
            "form": self.form,
            "gamma": self.gamma,
            "angular": self.angular.to_dict(),
            "partition": self.partition.to_dict(),
        }


def parameter_integral(pk: PairKernel, fn, tol: float = DEFAULT_TOL) -> float:
    """Integral of fn(r, R) against the pair's parameter weight."""
    if pk.cls is InteractionClass.MONO_MONO:
        return 1.0
    left, right = pk.R_exponents
    what = f"partition of pair ({pk.i},{pk.j}) (must be integrable against the parameter weight)"
    if pk.cls is not InteractionClass.POLY_POLY:
        return quad_weighted(lambda R: float(fn(0.5, R)), 0.0, 1.0, left=left, right=right,
                             breaks=pk.partition.R_breaks(), tol=tol, what=what)
    ra, rb = pk.r_exponents

    def inner(R):
        return quad_weighted(lambda r: float(fn(r, R)), 0.0, 1.0, left=ra, right=rb,
                             breaks=pk.partition.r_breaks(R), tol=tol, what=what)

    return quad_weighted(inner, 0.0, 1.0, left=left, right=right, breaks=pk.partition.R_breaks(), tol=tol,
                         what=what)


class KernelSpec:
    """Kernels for every ordered species pair of a mixture."""

    def __init__(self, mixture: MixtureSpec, pairs: Dict[Tuple[int, int], PairKernel]):
        missing = [p for p in mixture.pairs() if p not in pairs]
        if missing:
            raise ConfigError(f"no kernel for species pairs {missing}")
        self.mixture = mixture
        self._pairs = dict(pairs)

    @classmethod
    def build(cls, mixture: MixtureSpec, angular: Dict[Tuple[int, int], AngularKernel],
              form: Dict[Tuple[int, int], str], partition_cfg: Optional[Dict[Tuple[int, int], dict]] = None
              ) -> "KernelSpec":
        """Assemble ordered pair kernels from per unordered pair (i <= j) choices."""
        partition_cfg = partition_cfg or {}
        pairs = {}
        m = mixture.total_mass
        for (i, j) in mixture.pairs():
            key = (min(i, j), max(i, j))
            if key not in angular:
                raise ConfigError(f"no kernel for species pair {key}")
            a, b = mixture.spec(i), mixture.spec(j)
            c = mixture.interaction_class(i, j)
            g = float(mixture.gamma[i - 1, j - 1])
            mu = a.mass * b.mass / (a.mass + b.mass)
            f = form.get(key, "product")
            pairs[(i, j)] = PairKernel(
                i=i, j=j, cls=c, gamma=g, angular=angular[key],
                partition=build_partition(partition_cfg.get(key, {}), c, g, mu, m, f), form=f,
                mass_a=a.mass, mass_b=b.mass, alpha_a=a.alpha, alpha_b=b.alpha, total_mass=m,
                dimension=mixture.dimension,
            )
        return cls(mixture, pairs)

    @classmethod
    def from_config(cls, entries: Iterable[dict], mixture: MixtureSpec) -> "KernelSpec":
        """
        Kernel section of the config. Entries without ``pair`` set the default;
        ``pair`` uses 1-based input ordinals.
        """
        default = None
        explicit = {}
        for entry in entries:
            if entry.get("pair") is None:
                default = entry
                continue
            p, q = entry["pair"]
            i, j = mixture.from_input_ordinal(int(p)), mixture.from_input_ordinal(int(q))
            key = (min(i, j), max(i, j))
            if key in explicit:
                raise ConfigError(f"duplicate kernel entry for pair {list(entry['pair'])}")
            explicit[key] = entry
        angular, form, part = {}, {}, {}
        for key in mixture.pairs(ordered=False):
            entry = explicit.get(key, default)
            if entry is None:
                raise ConfigError(f"no kernel for species pair {key} and no default kernel entry")
            g = entry.get("gamma")
            if g is not None and float(g) != float(mixture.gamma[key[0] - 1, key[1] - 1]):
                raise ConfigError(
                    f"kernel gamma {g} for pair {key} disagrees with gamma matrix entry "
                    f"{mixture.gamma[key[0] - 1, key[1] - 1]}"
                )
            ang = entry.get("angular") or {"type": "isotropic"}
            angular[key] = build_angular(ang.get("type", "isotropic"), ang.get("params", {}), mixture.dimension)
            form[key] = entry.get("form", "product")
            part[key] = entry.get("partition") or {"type": "unit"}
        return cls.build(mixture, angular, form, part)

    def pair(self, i: int, j: int) -> PairKernel:
        return self._pairs[(i, j)]

    def items(self):
        return self._pairs.items()

    def to_dict(self) -> dict:
        return {f"{i},{j}": pk.to_dict() for (i, j), pk in self._pairs.items()}


def kernel_eval(a: ParticleState, b: ParticleState, params: CollisionParams, spec: KernelSpec) -> float:
    pk = spec.pair(a.species, b.species)
    R = params.R if params.R is not None else 1.0
    r = params.r if params.r is not None else 0.5
    return float(pk.evaluate(a.v[None], np.array([a.I]), b.v[None], np.array([b.I]), params.sigma[None],
                             np.array([R]), np.array([r]))[0])


@dataclass
class KernelConstants:
    kappa_lb: np.ndarray
    kappa_ub: np.ndarray
    L: np.ndarray
    rho_ub: np.ndarray
    rho_lb: np.ndarray
    b_norm: np.ndarray

    @property
    def max_kappa_ub(self) -> float:
        return float(self.kappa_ub.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("kappa_lb", "kappa_ub", "L", "rho_ub", "rho_lb", "b_norm")}


def compute_kappas(spec: KernelSpec, mixture: MixtureSpec, quadrature_tol: float = DEFAULT_TOL) -> KernelConstants:
    """
    Integrate the kernel envelopes over the sphere and the parameter space.

    Raises:
        QuadratureError: the angular part or a partition is not integrable.
    """
    n = mixture.n_species
    out = {k: np.zeros((n, n)) for k in ("kappa_lb", "kappa_ub", "L", "rho_ub", "rho_lb", "b_norm")}
    for (i, j), pk in spec.items():
        b_norm = pk.angular.l1_norm(mixture.dimension, quadrature_tol)
        rho_ub = parameter_integral(pk, pk.partition.ub, quadrature_tol)
        rho_lb = parameter_integral(pk, pk.partition.lb, quadrature_tol)
        out["b_norm"][i - 1, j - 1] = b_norm
        out["rho_ub"][i - 1, j - 1] = rho_ub
        out["rho_lb"][i - 1, j - 1] = rho_lb
        out["kappa_ub"][i - 1, j - 1] = b_norm * rho_ub
        out["kappa_lb"][i - 1, j - 1] = b_norm * rho_lb
        out["L"][i - 1, j - 1] = pk.L
        logger.debug(f"pair ({i},{j}) {pk.cls.value}: kappa_lb={b_norm * rho_lb:.6g} kappa_ub={b_norm * rho_ub:.6g}")
    return KernelConstants(**out)


# ---------------------------------------------------------------------------
# Sampling checks
# ---------------------------------------------------------------------------


def random_pair_sample(rng: np.random.Generator, mixture: MixtureSpec, i: int, j: int, n: int):
    """Random states of species i and j plus uniform parameters (sigma, R, r)."""
    d = mixture.dimension
    va, Ia = random_states(rng, n, mixture.spec(i), d)
    vb, Ib = random_states(rng, n, mixture.spec(j), d)
    sigma = unit(rng.standard_normal((n, d)))
    R = rng.uniform(1e-3, 1.0 - 1e-3, size=n)
    r = rng.uniform(1e-3, 1.0 - 1e-3, size=n)
    return va, Ia, vb, Ib, sigma, R, r


def kernel_bounds_check(spec: KernelSpec, mixture: MixtureSpec, n_samples: int,
                        rng: Optional[np.random.Generator] = None, tol: float = 1e-12) -> List[CheckResult]:
    """L <a>^g - <b>^g <= (E/m)^{g/2} <= <a>^g + <b>^g on random states, per ordered pair."""
    rng = rng or np.random.default_rng(0)
    m = mixture.total_mass
    checks = []
    for (i, j), pk in spec.items():
        va, Ia, vb, Ib, _, _, _ = random_pair_sample(rng, mixture, i, j, n_samples)
        g = pk.gamma
        A = brackets(va, Ia, pk.mass_a, m) ** g
        B = brackets(vb, Ib, pk.mass_b, m) ** g
        Bt = pk.energy(pk.pair_energy(va, Ia, vb, Ib))
        scale = np.maximum(1.0, A + B)
        lower = np.max(np.maximum(0.0, pk.L * A - B - Bt) / scale)
        upper = np.max(np.maximum(0.0, Bt - A - B) / scale)
        checks.append(CheckResult.at_most(f"energy_kernel_bounds[{i},{j}]", max(lower, upper), tol,
                                          L=pk.L, gamma=g, n=n_samples, pair_class=pk.cls.value))
    return checks


def bracket_upper_bounds_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                               tol: float = 1e-12) -> List[CheckResult]:
    """E/m <= <a>^2 <b>^2 and <a>, <b> <= <a'><b'> under random collisions."""
    rng = rng or np.random.default_rng(0)
    m = mixture.total_mass
    checks = []
    for (i, j) in mixture.pairs():
        a, b = mixture.spec(i), mixture.spec(j)
        cls = mixture.interaction_class(i, j)
        va, Ia, vb, Ib, sigma, R, r = random_pair_sample(rng, mixture, i, j, n_samples)
        A = brackets(va, Ia, a.mass, m)
        B = brackets(vb, Ib, b.mass, m)
        mu = a.mass * b.mass / (a.mass + b.mass)
        u = va - vb
        E = 0.5 * mu * np.einsum("nk,nk->n", u, u) + Ia + Ib
        energy_gap = np.max(np.maximum(0.0, E / m - (A * B) ** 2) / (A * B) ** 2)
        va2, Ia2, vb2, Ib2, *_ = collide_arrays(va, Ia, vb, Ib, a.mass, b.mass, sigma, R, r, cls)
        prod = brackets(va2, Ia2, a.mass, m) * brackets(vb2, Ib2, b.mass, m)
        pre_gap = np.max(np.maximum(0.0, np.maximum(A, B) - prod) / prod)
        checks.append(CheckResult.at_most(f"pair_energy_vs_brackets[{i},{j}]", energy_gap, tol, n=n_samples))
        checks.append(CheckResult.at_most(f"bracket_vs_primed_product[{i},{j}]", pre_gap, tol, n=n_samples,
                                          pair_class=cls.value))
    return checks


def envelope_sandwich_check(mixture: MixtureSpec, n_samples: int, rng: Optional[np.random.Generator] = None,
                            tol: float = 1e-12) -> List[CheckResult]:
    """lb * b * (E/m)^{g/2} <= sum-form kernel <= ub * b * (E/m)^{g/2} for every pair with R."""
    rng = rng or np.random.default_rng(0)
    angular = {key: IsotropicAngular(1.0) for key in mixture.pairs(ordered=False)}
    form = {key: "model23" for key in angular}
    spec = KernelSpec.build(mixture, angular, form)
    checks = []
    for (i, j), pk in spec.items():
        if not pk.cls.has_R:
            continue
        va, Ia, vb, Ib, sigma, R, r = random_pair_sample(rng, mixture, i, j, n_samples)
        value = pk.evaluate(va, Ia, vb, Ib, sigma, R, r)
        lo, hi = pk.envelopes(va, Ia, vb, Ib, sigma, R, r)
        scale = np.maximum(hi, 1e-300)
        worst = max(np.max(np.maximum(0.0, lo - value) / scale), np.max(np.maximum(0.0, value - hi) / scale))
        checks.append(CheckResult.at_most(f"model23_envelope_sandwich[{i},{j}]", worst, tol,
                                          constant=pk.partition.constant, n=n_samples))
    return checks


def micro_reversibility_check(spec: KernelSpec, mixture: MixtureSpec, n_samples: int,
                              rng: Optional[np.random.Generator] = None, tol: float = 1e-10) -> List[CheckResult]:
    """Kernel on primed (states, parameters) equals the kernel on unprimed ones."""
    rng = rng or np.random.default_rng(0)
    checks = []
    for (i, j), pk in spec.items():
        va, Ia, vb, Ib, sigma, R, r = random_pair_sample(rng, mixture, i, j, n_samples)
        before = pk.evaluate(va, Ia, vb, Ib, sigma, R, r)
        va2, Ia2, vb2, Ib2, s2, R2, r2, null = collide_arrays(va, Ia, vb, Ib, pk.mass_a, pk.mass_b, sigma, R, r,
                                                              pk.cls)
        R2 = R2 if R2 is not None else R
        r2 = r2 if r2 is not None else r
        after = pk.evaluate(va2, Ia2, vb2, Ib2, s2, R2, r2)
        ok = ~null & (before > 0.0)
        err = np.abs(after[ok] - before[ok]) / before[ok]
        checks.append(CheckResult.at_most(f"micro_reversibility[{i},{j}]", float(err.max()) if err.size else 0.0,
                                          tol, n=int(ok.sum()), form=pk.form))
    return checks


def kappa_monte_carlo(pk: PairKernel, n_samples: int, rng: np.random.Generator, which: str = "ub"):
    """
    Independent Monte-Carlo estimate of kappa: uniform directions and
    parameters drawn from the normalized weight.

    Returns:
        tuple: (estimate, standard error)
    """
    d = pk.dimension
    sigma = unit(rng.standard_normal((n_samples, d)))
    x = sigma[:, 0]
    R, r = pk.sample_params(rng, n_samples)
    env = pk.partition.ub if which == "ub" else pk.partition.lb
    values = pk.angular(x) * sphere_area(d) * env(r, R) * pk.weight_integral
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_samples))


def kappa_agreement_check(spec: KernelSpec, constants: KernelConstants, n_samples: int,
                          rng: Optional[np.random.Generator] = None) -> List[CheckResult]:
    """Quadrature kappa vs Monte-Carlo kappa, in units of the MC standard error."""
    rng = rng or np.random.default_rng(0)
    checks = []
    for (i, j), pk in spec.items():
        for which in ("lb", "ub"):
            est, se = kappa_monte_carlo(pk, n_samples, rng, which)
            quad = (constants.kappa_ub if which == "ub" else constants.kappa_lb)[i - 1, j - 1]
            band = 3.0 * se + 1e-9 * abs(quad)
            checks.append(CheckResult.at_most(f"kappa_{which}_quadrature_vs_mc[{i},{j}]", abs(est - quad), band,
                                              quadrature=quad, monte_carlo=est, stderr=se, n=n_samples))
    return checks
