"""
Domain types shared by every module: species, mixtures, particle states,
Lebesgue brackets and centre-of-mass quantities of a colliding pair.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError


class Kind(str, Enum):
    MONATOMIC = "monatomic"
    POLYATOMIC = "polyatomic"


class InteractionClass(str, Enum):
    """Ordered interaction class of a pair (first particle, second particle)."""

    MONO_MONO = "mono-mono"
    POLY_POLY = "poly-poly"
    POLY_MONO = "poly-mono"
    MONO_POLY = "mono-poly"

    @classmethod
    def of(cls, first: Kind, second: Kind) -> "InteractionClass":
        if first is Kind.MONATOMIC:
            return cls.MONO_MONO if second is Kind.MONATOMIC else cls.MONO_POLY
        return cls.POLY_MONO if second is Kind.MONATOMIC else cls.POLY_POLY

    @property
    def has_R(self) -> bool:
        return self is not InteractionClass.MONO_MONO

    @property
    def has_r(self) -> bool:
        return self is InteractionClass.POLY_POLY

    def swapped(self) -> "InteractionClass":
        if self is InteractionClass.POLY_MONO:
            return InteractionClass.MONO_POLY
        if self is InteractionClass.MONO_POLY:
            return InteractionClass.POLY_MONO
        return self


@dataclass(frozen=True)
class SpeciesSpec:
    index: int
    mass: float
    kind: Kind
    alpha: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.index < 1:
            raise ConfigError(f"species index must be a 1-based ordinal, got {self.index}")
        if not self.mass > 0.0:
            raise ConfigError(f"species {self.label}: mass must be positive, got {self.mass}")
        if self.kind is Kind.POLYATOMIC and not self.alpha > -1.0:
            raise ConfigError(f"species {self.label}: polyatomic alpha must exceed -1, got {self.alpha}")
        if self.kind is Kind.MONATOMIC and self.alpha != 0.0:
            object.__setattr__(self, "alpha", 0.0)

    @property
    def is_poly(self) -> bool:
        return self.kind is Kind.POLYATOMIC

    @property
    def label(self) -> str:
        return self.name or str(self.index)


def validate_gamma(gamma, n_species: int, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """
    Check the rate matrix: square, symmetric, entries in [0, 2] and a positive
    maximum in every row.

    Raises:
        ConfigError: naming the first offending entry or row.
    """
    g = np.array(gamma, dtype=float)
    if g.shape != (n_species, n_species):
        raise ConfigError(f"gamma must be a {n_species}x{n_species} matrix, got shape {g.shape}")
    names = list(names) if names is not None else [str(i + 1) for i in range(n_species)]
    for i in range(n_species):
        for j in range(n_species):
            if not 0.0 <= g[i, j] <= 2.0:
                raise ConfigError(f"gamma[{i + 1}][{j + 1}] = {g[i, j]} outside [0, 2]")
            if g[i, j] != g[j, i]:
                raise ConfigError(f"gamma is not symmetric: gamma[{i + 1}][{j + 1}] != gamma[{j + 1}][{i + 1}]")
    for i in range(n_species):
        if not g[i].max() > 0.0:
            raise ConfigError(
                f"gamma row {i + 1} (species '{names[i]}') violates max_j gamma_ij > 0: "
                "every species needs at least one positive rate"
            )
    return g


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """
    Ordered mixture: monatomic block first, then polyatomic species.

    ``permutation[k]`` is the 0-based position in the input file of the species
    stored at position k.
    """

    species: Tuple[SpeciesSpec, ...]
    gamma: np.ndarray
    dimension: int = 3
    permutation: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.dimension < 2:
            raise ConfigError(f"dimension must be >= 2, got {self.dimension}")
        if not self.species:
            raise ConfigError("mixture needs at least one species")
        seen_poly = False
        for pos, sp in enumerate(self.species):
            if sp.index != pos + 1:
                raise ConfigError(f"species at position {pos + 1} carries index {sp.index}")
            if sp.is_poly:
                seen_poly = True
            elif seen_poly:
                raise ConfigError("monatomic species must precede polyatomic species")
        g = validate_gamma(self.gamma, len(self.species), [s.label for s in self.species])
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if not self.permutation:
            object.__setattr__(self, "permutation", tuple(range(len(self.species))))

    @classmethod
    def from_species(cls, species: Iterable[dict], gamma, dimension: int = 3) -> "MixtureSpec":
        """
        Build a mixture from species listed in any order, re-indexing them with the
        monatomic block first. ``gamma`` is given in input order.
        """
        raw = list(species)
        g_in = validate_gamma(gamma, len(raw), [s.get("name") or str(k + 1) for k, s in enumerate(raw)])
        order = sorted(range(len(raw)), key=lambda k: (Kind(raw[k]["kind"]) is Kind.POLYATOMIC, k))
        specs = []
        for pos, k in enumerate(order):
            item = raw[k]
            kind = Kind(item["kind"])
            alpha = item.get("alpha")
            if kind is Kind.POLYATOMIC and alpha is None:
                raise ConfigError(f"species '{item.get('name') or k + 1}': polyatomic species needs alpha")
            specs.append(
                SpeciesSpec(
                    index=pos + 1,
                    mass=float(item["mass"]),
                    kind=kind,
                    alpha=float(alpha or 0.0),
                    name=item.get("name") or f"s{k + 1}",
                )
            )
        g = g_in[np.ix_(order, order)]
        return cls(species=tuple(specs), gamma=g, dimension=int(dimension), permutation=tuple(order))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_mono(self) -> int:
        return sum(1 for s in self.species if not s.is_poly)

    @property
    def total_mass(self) -> float:
        return float(sum(s.mass for s in self.species))

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.mass for s in self.species])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.species])

    @property
    def gamma_row_max(self) -> np.ndarray:
        """Per-row maxima of the rate matrix."""
        return self.gamma.max(axis=1)

    @property
    def gamma_bar(self) -> float:
        return float(self.gamma_row_max.min())

    @property
    def gamma_bar_bar(self) -> float:
        return float(self.gamma_row_max.max())

    def spec(self, i: int) -> SpeciesSpec:
        """Species by 1-based ordinal."""
        return self.species[i - 1]

    def interaction_class(self, i: int, j: int) -> InteractionClass:
        return InteractionClass.of(self.spec(i).kind, self.spec(j).kind)

    def input_ordinal(self, i: int) -> int:
        """1-based ordinal of species i in the input file."""
        return self.permutation[i - 1] + 1

    def from_input_ordinal(self, k: int) -> int:
        """Internal 1-based ordinal of the species listed k-th in the input file."""
        try:
            return self.permutation.index(k - 1) + 1
        except ValueError:
            raise ConfigError(f"no species with input ordinal {k}") from None

    def pairs(self, ordered: bool = True) -> List[Tuple[int, int]]:
        n = self.n_species
        if ordered:
            return [(i, j) for i in range(1, n + 1) for j in range(1, n + 1)]
        return [(i, j) for i in range(1, n + 1) for j in range(i, n + 1)]


@dataclass(frozen=True, eq=False)
class ParticleState:
    v: np.ndarray
    I: float = 0.0
    species: int = 1

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "I", float(self.I))
        if self.I < 0.0:
            raise ValueError(f"internal energy must be nonnegative, got {self.I}")

    def check(self, mixture: MixtureSpec) -> "ParticleState":
        """Validate the state against its species; returns self."""
        sp = mixture.spec(self.species)
        if self.v.shape != (mixture.dimension,):
            raise ValueError(f"velocity must have {mixture.dimension} components, got {self.v.shape}")
        if not sp.is_poly and self.I != 0.0:
            raise ValueError(f"monatomic species {sp.label} cannot carry internal energy")
        return self


@dataclass(frozen=True, eq=False)
class PairFrame:
    V: np.ndarray
    W: np.ndarray
    u: np.ndarray
    mu: float
    s: float
    s_bar: float
    E: float
    cls: InteractionClass
    total_mass: float = field(default=0.0)


def brackets(v: np.ndarray, I, mass: float, total_mass: float) -> np.ndarray:
    """Vectorized brackets for velocities of shape (..., d) and internal energies (...)."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + mass * np.einsum("...k,...k->...", v, v) / (2.0 * total_mass) + np.asarray(I) / total_mass)


def bracket(state: ParticleState, mixture: MixtureSpec) -> float:
    """Lebesgue bracket of a single state; always >= 1."""
    sp = mixture.spec(state.species)
    return float(brackets(state.v, state.I if sp.is_poly else 0.0, sp.mass, mixture.total_mass))


def pair_frame(a: ParticleState, b: ParticleState, mixture: MixtureSpec) -> PairFrame:
    ma = mixture.spec(a.species).mass
    mb = mixture.spec(b.species).mass
    M = ma + mb
    V = (ma * a.v + mb * b.v) / M
    W = (mb * a.v + ma * b.v) / M
    u = a.v - b.v
    mu = ma * mb / M
    s = ma / M
    cls = mixture.interaction_class(a.species, b.species)
    E = 0.5 * mu * float(u @ u) + a.I + b.I
    return PairFrame(V=V, W=W, u=u, mu=mu, s=s, s_bar=min(s, 1.0 - s), E=E, cls=cls, total_mass=M)


def pair_bracket_energy(a: ParticleState, b: ParticleState, mixture: MixtureSpec) -> float:
    """Sum of the squared brackets of the two states."""
    return bracket(a, mixture) ** 2 + bracket(b, mixture) ** 2


def frame_bracket_energy(frame: PairFrame, total_mass: float) -> float:
    """The same quantity assembled from centre-of-mass variables."""
    return 2.0 + frame.total_mass * float(frame.V @ frame.V) / (2.0 * total_mass) + frame.E / total_mass


def random_states(rng: np.random.Generator, n: int, species: SpeciesSpec, dimension: int,
                  decades: float = 2.0, zero_fraction: float = 0.05):
    """
    Random velocities and internal energies spread over several decades of
    magnitude, with a small share of exact zeros.

    Returns:
        tuple: (v of shape (n, d), I of shape (n,))
    """
    scale = 10.0 ** rng.uniform(-decades, decades, size=n)
    v = rng.standard_normal((n, dimension)) * scale[:, None]
    v[rng.random(n) < zero_fraction] = 0.0
    if species.is_poly:
        I = 10.0 ** rng.uniform(-decades - 1.0, decades + 1.0, size=n)
        I[rng.random(n) < zero_fraction] = 0.0
    else:
        I = np.zeros(n)
    return v, I
