"""Model families, rate functions, jump kernels, and quenched environments.

Four families are supported on finite rings or segments:

* ``misanthrope``: a particle jumps x -> x+z at rate alpha(x) p(z) b(n, m),
  where n, m are the occupations of the departure and arrival sites.
* ``generalized``: the rate is an arbitrary per-site table B(x, z, n, m)
  pinched between an irreducible minorant kernel and a summable majorant.
* ``kstep``: a particle at x draws a random path of k displacements and
  settles at the first site along it holding fewer than K particles, with a
  rate that may depend on how many steps it needed.
* ``traffic``: a particle jumps to a non-full site within distance k chosen
  proportionally to per-site weights; internally lowered to a 2k-step model.

Structural problems (malformed tables, out-of-range values) raise
:class:`StructureError`; violations of the model assumptions are reported
through :class:`ValidationReport` so callers can display them one by one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import master_from_seed


class StructureError(ValueError):
    """Malformed inputs: wrong shapes, values outside declared ranges."""


# ---------------------------------------------------------------------------
# validation reports


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def merged(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(self.checks + other.checks)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name}" + (f"  ({c.detail})" if c.detail else "")
            for c in self.checks
        ]


# ---------------------------------------------------------------------------
# rate functions


class RateFunction:
    """Jump-rate table b(n, m) for occupations n, m in {0..K}."""

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[0] != table.shape[1] or table.shape[0] < 2:
            raise StructureError(f"rate table must be square (K+1)x(K+1) with K >= 1, got shape {table.shape}")
        if not np.all(np.isfinite(table)):
            raise StructureError("rate table contains non-finite entries")
        if np.any(table < 0):
            raise StructureError("rate table contains negative entries")
        self.table = table
        self.table.setflags(write=False)

    @property
    def K(self) -> int:
        return self.table.shape[0] - 1

    @property
    def sup_norm(self) -> float:
        return float(self.table.max())

    def __call__(self, n: int, m: int) -> float:
        return float(self.table[n, m])

    @classmethod
    def exclusion(cls, K: int = 1) -> "RateFunction":
        """b(n, m) = 1{n > 0} 1{m < K}, the simple K-exclusion rate."""
        n = np.arange(K + 1)
        return cls(np.outer(n > 0, n < K).astype(np.float64))

    @classmethod
    def product(cls, K: int) -> "RateFunction":
        """b(n, m) = n (K - m)."""
        n = np.arange(K + 1, dtype=np.float64)
        return cls(np.outer(n, K - n))

    @classmethod
    def from_callable(cls, f: Callable[[int, int], float], K: int) -> "RateFunction":
        tab = np.array([[f(n, m) for m in range(K + 1)] for n in range(K + 1)], dtype=np.float64)
        return cls(tab)

    def descriptor(self) -> dict:
        return {"K": self.K, "table": self.table.tolist()}


def validate_rate(rate: RateFunction) -> ValidationReport:
    """Check the exclusion-rule, non-degeneracy, and monotonicity assumptions."""
    b, K = rate.table, rate.K
    rep = ValidationReport()

    bad = np.argwhere(b[0, :] != 0)
    if bad.size:
        rep.add("A3-left", False, f"b(0, {bad[0][0]}) = {b[0, bad[0][0]]} != 0")
    else:
        rep.add("A3-left", True)
    bad = np.argwhere(b[:, K] != 0)
    if bad.size:
        rep.add("A3-right", False, f"b({bad[0][0]}, K) = {b[bad[0][0], K]} != 0")
    else:
        rep.add("A3-right", True)

    rep.add("A4", b[1, K - 1] > 0, "" if b[1, K - 1] > 0 else f"b(1, K-1) = {b[1, K - 1]}")

    first_bad = ""
    mono_ok = True
    dn = np.diff(b, axis=0)
    if np.any(dn < 0):
        n, m = map(int, np.argwhere(dn < 0)[0])
        mono_ok, first_bad = False, f"decreasing in first argument at ({n},{m})->({n + 1},{m})"
    if mono_ok:
        dm = np.diff(b, axis=1)
        if np.any(dm > 0):
            n, m = map(int, np.argwhere(dm > 0)[0])
            mono_ok, first_bad = False, f"increasing in second argument at ({n},{m})->({n},{m + 1})"
    rep.add("A5", mono_ok, first_bad)
    return rep


# ---------------------------------------------------------------------------
# jump kernels


class JumpKernel:
    """Finite-support probability kernel p(z) on the integer lattice."""

    def __init__(self, values: Sequence[int], probs: Sequence[float]):
        values = np.asarray(values, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if values.size == 0:
            raise StructureError("empty kernel support")
        if values.shape != probs.shape or values.ndim != 1:
            raise StructureError("kernel values and probabilities must be matching 1-d sequences")
        if np.unique(values).size != values.size:
            raise StructureError("duplicate displacements in kernel support")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise StructureError("kernel probabilities must be finite and nonnegative")
        total = probs.sum()
        if total <= 0:
            raise StructureError("kernel probabilities sum to zero")
        self.renormalized = bool(abs(total - 1.0) > 1e-12)
        keep = probs > 0
        order = np.argsort(values[keep])
        self.values = values[keep][order]
        self.probs = probs[keep][order] / total
        self.cdf = np.cumsum(self.probs)
        self.cdf[-1] = 1.0
        for a in (self.values, self.probs, self.cdf):
            a.setflags(write=False)

    @classmethod
    def from_dict(cls, weights: dict) -> "JumpKernel":
        items = sorted((int(z), float(w)) for z, w in weights.items())
        return cls([z for z, _ in items], [w for _, w in items])

    @property
    def mean_abs(self) -> float:
        return float(np.sum(np.abs(self.values) * self.probs))

    @property
    def third_moment(self) -> float:
        return float(np.sum(np.abs(self.values) ** 3 * self.probs))

    def sample_indices(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF indices for uniforms in (0, 1)."""
        return np.searchsorted(self.cdf, u, side="right").astype(np.int64)

    def descriptor(self) -> dict:
        return {"values": self.values.tolist(), "probs": self.probs.tolist()}


def validate_kernel(kernel: JumpKernel) -> ValidationReport:
    """Check irreducibility (A1) and record the moment bookkeeping.

    A1 asks that every displacement be reachable, in either direction, by some
    number of jumps.  For a finite-support kernel this reduces to the gcd of
    the absolute support values: a common divisor d > 1 confines all jump sums
    to the sublattice d*Z, while gcd 1 makes every site reachable modulo the
    sign freedom (rings give reachability in both directions).
    """
    rep = ValidationReport()
    nonzero = [int(abs(z)) for z in kernel.values if z != 0]
    if not nonzero:
        rep.add("A1", False, "support contains no nonzero displacement")
    else:
        g = math.gcd(*nonzero) if len(nonzero) > 1 else nonzero[0]
        rep.add("A1", g == 1, "" if g == 1 else f"support gcd {g} > 1: displacements +-1 unreachable")
    rep.add("A2", True, f"finite support, mean |z| = {kernel.mean_abs:g}")
    rep.add("third-moment", True, f"{kernel.third_moment:g}")
    return rep


# ---------------------------------------------------------------------------
# environment laws (stationary ergodic value sequences)


@dataclass(frozen=True)
class IidLaw:
    """Independent values: point mass, uniform interval, or finite choice.

    ``sample_at`` draws the value of lattice coordinate x as a pure function
    of (seed material, x, stream), so overlapping lattice windows see the
    identical disorder.
    """

    dist: str  # "point" | "uniform" | "choice"
    value: float = 0.0
    low: float = 0.0
    high: float = 0.0
    values: tuple = ()
    weights: tuple = ()

    def sample_at(self, master, coords: np.ndarray, stream: int = 0) -> np.ndarray:
        from ._rng import TAG_ENV, hashed_uniform

        u = hashed_uniform(master, coords, TAG_ENV, np.full(len(coords), stream, dtype=np.uint64))
        if self.dist == "point":
            return np.full(len(coords), self.value, dtype=np.float64)
        if self.dist == "uniform":
            return self.low + (self.high - self.low) * u
        if self.dist == "choice":
            w = np.asarray(self.weights, dtype=np.float64)
            cdf = np.cumsum(w / w.sum())
            cdf[-1] = 1.0
            idx = np.searchsorted(cdf, u, side="right")
            return np.asarray(self.values, dtype=np.float64)[idx]
        raise StructureError(f"unknown iid distribution {self.dist!r}")

    def bounds(self) -> tuple[float, float]:
        if self.dist == "point":
            return self.value, self.value
        if self.dist == "uniform":
            return self.low, self.high
        return min(self.values), max(self.values)

    def descriptor(self) -> dict:
        d = {"kind": f"iid_{self.dist}"}
        if self.dist == "point":
            d["value"] = self.value
        elif self.dist == "uniform":
            d.update(low=self.low, high=self.high)
        else:
            d.update(values=list(self.values), weights=list(self.weights))
        return d


@dataclass(frozen=True)
class MarkovLaw:
    """Values read off an irreducible finite-state chain started at stationarity."""

    values: tuple
    transition: tuple  # row-stochastic matrix as nested tuples

    def _matrix(self) -> np.ndarray:
        P = np.asarray(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != len(self.values):
            raise StructureError("markov transition matrix shape mismatch")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-9):
            raise StructureError("markov transition matrix must be row-stochastic")
        return P

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        P = self._matrix()
        m = P.shape[0]
        reach = np.eye(m, dtype=bool) | (P > 0)
        for _ in range(m):
            reach = reach | (reach @ reach)
        rep.add("markov-irreducible", bool(reach.all()), "" if reach.all() else "chain is reducible")
        return rep

    def stationary(self) -> np.ndarray:
        P = self._matrix()
        m = P.shape[0]
        A = np.vstack([P.T - np.eye(m), np.ones(m)])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        return np.clip(pi, 0, None) / pi.sum()

    def sample_at(self, master, coords: np.ndarray, stream: int = 0) -> np.ndarray:
        """Stationary chain anchored at coordinate 0, extended both ways.

        The state at 0 is drawn from the stationary law; positive coordinates
        step the chain forward, negative ones step the reversed chain, with
        every step's uniform keyed by its coordinate.  Overlapping windows
        therefore agree exactly.
        """
        from ._rng import TAG_ENV, hashed_uniform

        P = self._matrix()
        pi = self.stationary()
        cum = np.cumsum(P, axis=1)
        cum[:, -1] = 1.0
        rev = (P.T * pi[None, :]) / pi[:, None]
        rev = rev / rev.sum(axis=1, keepdims=True)
        cum_rev = np.cumsum(rev, axis=1)
        cum_rev[:, -1] = 1.0

        coords = np.asarray(coords, dtype=np.int64)
        lo, hi = int(coords.min()), int(coords.max())
        span = np.arange(min(lo, 0), max(hi, 0) + 1, dtype=np.int64)
        u = hashed_uniform(master, span, TAG_ENV, np.full(span.size, stream, dtype=np.uint64))
        u0 = hashed_uniform(master, np.array([0], dtype=np.int64), TAG_ENV,
                            np.array([stream + (1 << 32)], dtype=np.uint64))[0]
        zero_pos = int(-span[0])
        states = np.empty(span.size, dtype=np.int64)
        cpi = np.cumsum(pi)
        cpi[-1] = 1.0
        states[zero_pos] = min(int(np.searchsorted(cpi, u0, side="right")), P.shape[0] - 1)
        for i in range(zero_pos + 1, span.size):
            states[i] = np.searchsorted(cum[states[i - 1]], u[i], side="right")
        for i in range(zero_pos - 1, -1, -1):
            states[i] = np.searchsorted(cum_rev[states[i + 1]], u[i], side="right")
        vals = np.asarray(self.values, dtype=np.float64)[states]
        return vals[coords - span[0]]

    def bounds(self) -> tuple[float, float]:
        return min(self.values), max(self.values)

    def descriptor(self) -> dict:
        return {"kind": "markov", "values": list(self.values), "transition": [list(r) for r in self.transition]}


@dataclass(frozen=True)
class PhaseLaw:
    """A fixed periodic pattern shifted by a uniformly random phase."""

    pattern: tuple

    def sample_at(self, master, coords: np.ndarray, stream: int = 0) -> np.ndarray:
        from ._rng import TAG_ENV, hashed_uniform

        pat = np.asarray(self.pattern, dtype=np.float64)
        if pat.size == 0:
            raise StructureError("empty periodic pattern")
        u = hashed_uniform(master, np.array([0], dtype=np.int64), TAG_ENV,
                           np.array([stream + (1 << 32)], dtype=np.uint64))[0]
        offset = min(int(u * pat.size), pat.size - 1)
        return pat[(np.asarray(coords, dtype=np.int64) + offset) % pat.size]

    def bounds(self) -> tuple[float, float]:
        return min(self.pattern), max(self.pattern)

    def descriptor(self) -> dict:
        return {"kind": "periodic_phase", "pattern": list(self.pattern)}


EnvironmentLaw = IidLaw | MarkovLaw | PhaseLaw


def parse_law(cfg: dict) -> EnvironmentLaw:
    kind = cfg.get("kind", "")
    if kind == "iid_point":
        return IidLaw("point", value=float(cfg["value"]))
    if kind == "iid_uniform":
        return IidLaw("uniform", low=float(cfg["low"]), high=float(cfg["high"]))
    if kind == "iid_choice":
        return IidLaw("choice", values=tuple(cfg["values"]), weights=tuple(cfg.get("weights", [1] * len(cfg["values"]))))
    if kind == "markov":
        return MarkovLaw(values=tuple(cfg["values"]), transition=tuple(map(tuple, cfg["transition"])))
    if kind == "periodic_phase":
        return PhaseLaw(pattern=tuple(cfg["pattern"]))
    raise StructureError(f"unknown environment law kind {kind!r}")


# ---------------------------------------------------------------------------
# environment fields


@dataclass
class SiteField:
    """Per-site rate multipliers alpha(x) in [c, 1/c]."""

    alpha: np.ndarray
    c: float
    kind: str = "site"

    @property
    def L(self) -> int:
        return self.alpha.shape[0]

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        lo, hi = self.alpha.min(), self.alpha.max()
        ok = lo >= self.c - 1e-12 and hi <= 1.0 / self.c + 1e-12
        rep.add("ellipticity", ok, f"alpha range [{lo:g}, {hi:g}] vs [{self.c:g}, {1 / self.c:g}]")
        return rep

    def shifted(self, r: int) -> "SiteField":
        return SiteField(np.roll(self.alpha, -r), self.c)

    def to_json(self) -> dict:
        return {"format_version": 1, "kind": "site", "c": self.c, "alpha": self.alpha.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "SiteField":
        return cls(np.asarray(doc["alpha"], dtype=np.float64), float(doc["c"]))


@dataclass
class GeneralField:
    """Full rate tables B(x, z, n, m) with declared minorant/majorant kernels."""

    B: np.ndarray  # shape (L, nz, K+1, K+1)
    zvals: np.ndarray
    minorant: JumpKernel
    majorant: JumpKernel
    c: float
    kind: str = "general_B"

    @property
    def L(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[2] - 1

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        K = self.K
        p = {int(z): float(q) for z, q in zip(self.minorant.values, self.minorant.probs)}
        P = {int(z): float(q) for z, q in zip(self.majorant.values, self.majorant.probs)}
        lower_ok, upper_ok = True, True
        detail_lo = detail_hi = ""
        for j, z in enumerate(self.zvals):
            zi = int(z)
            lo_bound = self.c * p.get(zi, 0.0)
            hi_bound = P.get(zi, 0.0) / self.c
            col_lo = self.B[:, j, 1, K - 1].min()
            col_hi = self.B[:, j, K, 0].max()
            if col_lo < lo_bound - 1e-12 and lower_ok:
                lower_ok, detail_lo = False, f"B(.,{zi},1,K-1) = {col_lo:g} < c p({zi}) = {lo_bound:g}"
            if col_hi > hi_bound + 1e-12 and upper_ok:
                upper_ok, detail_hi = False, f"B(.,{zi},K,0) = {col_hi:g} > P({zi})/c = {hi_bound:g}"
        rep.add("B-lower", lower_ok, detail_lo)
        rep.add("B-upper", upper_ok, detail_hi)

        a3 = np.all(self.B[:, :, 0, :] == 0) and np.all(self.B[:, :, :, K] == 0)
        rep.add("A3-per-site", bool(a3))
        mono = np.all(np.diff(self.B, axis=2) >= 0) and np.all(np.diff(self.B, axis=3) <= 0)
        rep.add("A5-per-site", bool(mono))
        return rep

    def shifted(self, r: int) -> "GeneralField":
        return GeneralField(np.roll(self.B, -r, axis=0), self.zvals, self.minorant, self.majorant, self.c)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "kind": "general_B",
            "c": self.c,
            "zvals": self.zvals.tolist(),
            "B": self.B.tolist(),
            "minorant": self.minorant.descriptor(),
            "majorant": self.majorant.descriptor(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GeneralField":
        return cls(
            np.asarray(doc["B"], dtype=np.float64),
            np.asarray(doc["zvals"], dtype=np.int64),
            JumpKernel(**doc["minorant"]),
            JumpKernel(**doc["majorant"]),
            float(doc["c"]),
        )


@dataclass
class KStepField:
    """Per-site path laws and step rates for the k-step family.

    Paths are stored in one shared support array in canonical (lexicographic)
    order; ``probs[x, i]`` is the probability that a particle at x draws path
    i, and ``beta[x, i, j]`` the rate applied when it settles at step j+1.
    """

    paths: np.ndarray  # (P, k) int64
    probs: np.ndarray  # (L, P)
    beta: np.ndarray  # (L, P, k)
    K: int
    c: float
    minorant: JumpKernel
    majorant: JumpKernel
    kind: str = "kstep"

    def __post_init__(self):
        order = np.lexsort(self.paths.T[::-1])
        if not np.array_equal(order, np.arange(self.paths.shape[0])):
            self.paths = self.paths[order]
            self.probs = self.probs[:, order]
            self.beta = self.beta[:, order, :]
        self.cumq = np.cumsum(self.probs, axis=1)
        self.cumq[:, -1] = 1.0

    @property
    def L(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.paths.shape[1]

    def step_marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """q^i_x(z): distribution of the i-th path entry, per site (1-based i)."""
        zs = np.unique(self.paths[:, i - 1])
        out = np.zeros((self.L, zs.size))
        for j, z in enumerate(zs):
            out[:, j] = self.probs[:, self.paths[:, i - 1] == z].sum(axis=1)
        return zs, out

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        b1 = self.beta[:, :, 0]
        ok1 = bool(np.all(b1 >= self.c - 1e-12) and np.all(self.beta <= 1.0 + 1e-12))
        rep.add("beta-range", ok1, f"beta1 range [{b1.min():g}, {self.beta.max():g}] vs [{self.c:g}, 1]")
        dec = bool(np.all(np.diff(self.beta, axis=2) <= 1e-12))
        rep.add("beta-monotone", dec, "" if dec else "step rates must be nonincreasing in the step index")

        pmap = {int(z): float(q) for z, q in zip(self.minorant.values, self.minorant.probs)}
        zs, q1 = self.step_marginal(1)
        lower_ok, detail = True, ""
        for z, bound in pmap.items():
            j = np.nonzero(zs == z)[0]
            got = q1[:, j[0]].min() if j.size else 0.0
            if got < self.c * bound - 1e-12:
                lower_ok, detail = False, f"inf_x q1_x({z}) = {got:g} < c p({z}) = {self.c * bound:g}"
                break
        rep.add("q1-minorant", lower_ok, detail)

        Pmap = {int(z): float(q) for z, q in zip(self.majorant.values, self.majorant.probs)}
        upper_ok, detail = True, ""
        for i in range(1, self.k + 1):
            zs, qi = self.step_marginal(i)
            for j, z in enumerate(zs):
                if int(z) == 0:
                    continue  # padding / absorbed steps carry no jump
                bound = Pmap.get(int(z), 0.0) / self.c
                got = qi[:, j].max()
                if got > bound + 1e-12:
                    upper_ok, detail = False, f"sup_x q{i}_x({int(z)}) = {got:g} > P({int(z)})/c = {bound:g}"
                    break
            if not upper_ok:
                break
        rep.add("qi-majorant", upper_ok, detail)
        return rep

    def shifted(self, r: int) -> "KStepField":
        return KStepField(self.paths, np.roll(self.probs, -r, axis=0), np.roll(self.beta, -r, axis=0),
                          self.K, self.c, self.minorant, self.majorant)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "kind": "kstep",
            "K": self.K,
            "c": self.c,
            "paths": self.paths.tolist(),
            "probs": self.probs.tolist(),
            "beta": self.beta.tolist(),
            "minorant": self.minorant.descriptor(),
            "majorant": self.majorant.descriptor(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KStepField":
        return cls(
            np.asarray(doc["paths"], dtype=np.int64),
            np.asarray(doc["probs"], dtype=np.float64),
            np.asarray(doc["beta"], dtype=np.float64),
            int(doc["K"]),
            float(doc["c"]),
            JumpKernel(**doc["minorant"]),
            JumpKernel(**doc["majorant"]),
        )


@dataclass
class TrafficField:
    """Per-site overtaking weights and jump rates for the traffic family.

    ``upsilon[x, j]`` is the weight of displacement ``displacements[j]`` where
    the displacement axis enumerates {-k..-1, 1..k} in increasing order.
    """

    upsilon: np.ndarray  # (L, 2k) nonnegative
    beta1: np.ndarray  # (L,) in [c, 1]
    k: int
    K: int
    c: float
    kind: str = "traffic"

    @property
    def L(self) -> int:
        return self.upsilon.shape[0]

    @property
    def displacements(self) -> np.ndarray:
        return np.array([z for z in range(-self.k, self.k + 1) if z != 0], dtype=np.int64)

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        rep.add("weights-nonnegative", bool(np.all(self.upsilon >= 0)))
        rep.add("weights-some-positive", bool(np.all(self.upsilon.sum(axis=1) > 0)),
                "every site needs at least one positive weight")
        ok = bool(np.all(self.beta1 >= self.c - 1e-12) and np.all(self.beta1 <= 1.0 + 1e-12))
        rep.add("beta1-range", ok, f"range [{self.beta1.min():g}, {self.beta1.max():g}] vs [{self.c:g}, 1]")
        return rep

    def shifted(self, r: int) -> "TrafficField":
        return TrafficField(np.roll(self.upsilon, -r, axis=0), np.roll(self.beta1, -r), self.k, self.K, self.c)

    def to_kstep(self) -> KStepField:
        """Lower to a 2k-step field.

        Paths enumerate the orderings of the positive-weight displacements
        (sampled sequentially without replacement, proportionally to the
        remaining weights), padded with zero displacements up to length 2k.
        A zero displacement points back at the departure site, so exhausting
        the positive-weight targets leaves the configuration unchanged, in
        agreement with the direct rate that forbids jumps when no weighted
        site is available.  Path probabilities are computed vectorized over
        all sites sharing a positivity pattern; path counts grow like (2k)!,
        so this lowering is meant for small k.
        """
        L, k2 = self.L, 2 * self.k
        disp = self.displacements
        masks = self.upsilon > 0
        sites_by_mask: dict[tuple, list] = {}
        for x in range(L):
            sites_by_mask.setdefault(tuple(masks[x]), []).append(x)

        resolved = []
        path_set: set[tuple] = set()
        for mask, sites in sites_by_mask.items():
            sites = np.asarray(sites)
            cols = [j for j in range(k2) if mask[j]]
            perms = list(itertools.permutations(cols))
            padded = [tuple(int(disp[j]) for j in perm) + (0,) * (k2 - len(perm)) for perm in perms]
            path_set.update(padded)
            w = self.upsilon[sites]
            total = w[:, cols].sum(axis=1)
            pmat = np.empty((sites.size, len(perms)))
            for pi, perm in enumerate(perms):
                rem = total.copy()
                prob = np.ones(sites.size)
                for j in perm:
                    prob *= w[:, j] / rem
                    rem = rem - w[:, j]
                pmat[:, pi] = prob
            resolved.append((padded, sites, pmat))

        all_paths = sorted(path_set)
        col = {p: i for i, p in enumerate(all_paths)}
        P = len(all_paths)
        paths = np.array(all_paths, dtype=np.int64).reshape(P, k2)
        probs = np.zeros((L, P))
        for padded, sites, pmat in resolved:
            for pi, tup in enumerate(padded):
                probs[sites, col[tup]] = pmat[:, pi]
        beta = np.broadcast_to(self.beta1[:, None, None], (L, P, k2)).copy()

        minorant, c_eff = self._minorant()
        marg = np.zeros(k2)
        for i in range(k2):
            for j, z in enumerate(disp):
                sel = paths[:, i] == z
                if sel.any():
                    marg[j] = max(marg[j], probs[:, sel].sum(axis=1).max())
        total = marg.sum()
        majorant = JumpKernel(disp, marg / total) if total > 0 else minorant
        return KStepField(paths, probs, beta, self.K, min(c_eff, self.c), minorant, majorant)

    def _minorant(self) -> tuple[JumpKernel, float]:
        floor = self.upsilon.min(axis=0) / np.maximum(self.upsilon.sum(axis=1).max(), 1e-300)
        total = floor.sum()
        if total <= 0:
            # fall back to the most asymmetric direction present everywhere
            j = int(np.argmax(self.upsilon.min(axis=0)))
            return JumpKernel([int(self.displacements[j])], [1.0]), self.c
        return JumpKernel(self.displacements, floor / total), min(self.c, float(total))

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "kind": "traffic",
            "k": self.k,
            "K": self.K,
            "c": self.c,
            "upsilon": self.upsilon.tolist(),
            "beta1": self.beta1.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrafficField":
        return cls(np.asarray(doc["upsilon"], dtype=np.float64), np.asarray(doc["beta1"], dtype=np.float64),
                   int(doc["k"]), int(doc["K"]), float(doc["c"]))


EnvironmentField = SiteField | GeneralField | KStepField | TrafficField

_FIELD_KINDS = {"site": SiteField, "general_B": GeneralField, "kstep": KStepField, "traffic": TrafficField}


def field_from_json(doc: dict) -> EnvironmentField:
    kind = doc.get("kind")
    if kind not in _FIELD_KINDS:
        raise StructureError(f"unknown field kind {kind!r}")
    return _FIELD_KINDS[kind].from_json(doc)


# ---------------------------------------------------------------------------
# absorbed random-walk paths (shared by the k-step samplers and exact tests)


def absorbed_walk_paths(k: int, p_right, *, exact: bool = False) -> list[tuple[tuple, object]]:
    """Enumerate the first k steps of a +-1 walk absorbed at the origin.

    Returns (path, probability) pairs where path lists the successive
    positions relative to the start; once the walk revisits the origin it is
    absorbed and the remaining entries stay 0.  With ``exact=True`` the
    probability arithmetic is done in Fractions.
    """
    one = Fraction(1) if exact else 1.0
    p = Fraction(p_right) if exact else float(p_right)
    out = []

    def rec(pos: int, step: int, path: tuple, prob):
        if step == k:
            out.append((path, prob))
            return
        if pos == 0 and step > 0:
            out.append((path + (0,) * (k - step), prob))
            return
        rec(pos + 1, step + 1, path + (pos + 1,), prob * p)
        rec(pos - 1, step + 1, path + (pos - 1,), prob * (one - p))

    rec(0, 0, (), one)
    merged: dict[tuple, object] = {}
    for path, prob in out:
        merged[path] = merged.get(path, 0) + prob
    return sorted(merged.items())


# ---------------------------------------------------------------------------
# model specification


_FAMILIES = ("misanthrope", "generalized", "kstep", "traffic")


@dataclass
class ModelSpec:
    """Declarative description of a model family plus its disorder law."""

    family: str
    K: int
    c: float
    rate: Optional[RateFunction] = None
    kernel: Optional[JumpKernel] = None
    k: int = 1
    law: Optional[EnvironmentLaw] = None
    style: str = ""  # family-specific environment style
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise StructureError(f"unknown family {self.family!r}")
        if not (0 < self.c <= 1):
            raise StructureError(f"ellipticity constant must lie in (0, 1], got {self.c}")
        if self.K < 1:
            raise StructureError("K must be >= 1")

    @property
    def rate_per_site(self) -> float:
        """Total mark mass per site in the event construction."""
        if self.family == "misanthrope":
            return self.rate.sup_norm / self.c
        if self.family == "generalized":
            return 1.0 / self.c
        return 1.0  # kstep and traffic use unit-mass uniform marks

    def validate(self) -> ValidationReport:
        rep = ValidationReport()
        if self.family in ("misanthrope", "generalized"):
            rep = rep.merged(validate_rate(self.rate))
            rep = rep.merged(validate_kernel(self.kernel))
        elif self.family == "kstep":
            if self.style == "site_walk":
                rep = rep.merged(validate_kernel(JumpKernel([-1, 1], [0.5, 0.5])))
            elif self.kernel is not None:
                rep = rep.merged(validate_kernel(self.kernel))
        if isinstance(self.law, MarkovLaw):
            rep = rep.merged(self.law.validate())
        rep.add("rate-per-site-finite", math.isfinite(self.rate_per_site), f"{self.rate_per_site:g}")
        return rep

    def descriptor(self) -> dict:
        d: dict = {"family": self.family, "K": self.K, "c": self.c, "k": self.k, "style": self.style}
        if self.rate is not None:
            d["rate"] = self.rate.descriptor()
        if self.kernel is not None:
            d["kernel"] = self.kernel.descriptor()
        if self.law is not None:
            d["law"] = self.law.descriptor()
        if self.extra:
            d["extra"] = self.extra
        return d


def lipschitz_bound(spec: ModelSpec) -> float:
    """Finite propagation speed for the homogenized flux of this model."""
    if spec.family == "misanthrope":
        return 2.0 / spec.c * spec.rate.sup_norm * spec.kernel.mean_abs
    if spec.family == "generalized":
        return 2.0 / spec.c * spec.kernel.mean_abs
    if spec.family == "kstep":
        return 2.0 * spec.k**2 / spec.c * spec.kernel.mean_abs
    # traffic through its 2k-step representation: majorant is uniform on the
    # overtaking range scaled by 1/c
    k2 = 2 * spec.k
    mean_abs = np.abs(np.arange(1, spec.k + 1)).sum() * 2 / k2
    return 2.0 * k2**2 / spec.c * mean_abs


def sample_environment(spec: ModelSpec, L: int, seed, origin: int = 0) -> EnvironmentField:
    """Draw a quenched environment over L sites, deterministically in the seed.

    Disorder is keyed by lattice coordinate (origin + index), so overlapping
    windows of the same seed carry the identical field regardless of padding.
    """
    if L < 1:
        raise StructureError("lattice size must be >= 1")
    master = master_from_seed(["environment", seed])
    coords = origin + np.arange(L, dtype=np.int64)
    law = spec.law

    if spec.family == "misanthrope":
        lo, hi = law.bounds()
        if lo < spec.c - 1e-12 or hi > 1 / spec.c + 1e-12:
            raise StructureError(f"law range [{lo:g}, {hi:g}] escapes [{spec.c:g}, {1 / spec.c:g}]")
        return SiteField(law.sample_at(master, coords), spec.c)

    if spec.family == "generalized":
        return _sample_generalized(spec, master, coords)

    if spec.family == "kstep":
        return _sample_kstep(spec, master, coords)

    if spec.family == "traffic":
        k2 = 2 * spec.k
        lo, hi = law.bounds()
        if lo < 0:
            raise StructureError("traffic weights must be nonnegative")
        ups = np.stack([law.sample_at(master, coords, stream=j) for j in range(k2)], axis=1)
        beta_law = spec.extra.get("beta_law")
        beta_law = parse_law(beta_law) if isinstance(beta_law, dict) else (beta_law or IidLaw("point", value=1.0))
        beta1 = beta_law.sample_at(master, coords, stream=k2)
        if np.any(beta1 < spec.c - 1e-12) or np.any(beta1 > 1 + 1e-12):
            raise StructureError("traffic jump rates must lie in [c, 1]")
        fld = TrafficField(ups, beta1, spec.k, spec.K, spec.c)
        bad = fld.validate().failed()
        if bad:
            raise StructureError(f"sampled traffic field invalid: {bad[0].detail or bad[0].name}")
        return fld

    raise StructureError(f"unknown family {spec.family!r}")


def _sample_generalized(spec: ModelSpec, master, coords: np.ndarray) -> GeneralField:
    kern, b = spec.kernel, spec.rate
    nz = kern.values.size
    L = coords.shape[0]
    style = spec.style or "bond"
    if style == "bond":
        lo, hi = spec.law.bounds()
        if lo < spec.c - 1e-12 or hi > 1 / spec.c + 1e-12:
            raise StructureError("bond weight law escapes ellipticity bounds")
        w = np.stack([spec.law.sample_at(master, coords, stream=j) for j in range(nz)], axis=1)
        B = w[:, :, None, None] * kern.probs[None, :, None, None] * b.table[None, None, :, :]
        return GeneralField(B, kern.values.copy(), kern, kern, spec.c)
    if style == "switch":
        b0 = spec.rate
        b1 = spec.extra["rate_b"]
        s = spec.law.sample_at(master, coords)
        if not np.all(np.isin(s, (0.0, 1.0))):
            raise StructureError("switch environment law must produce values in {0, 1}")
        mix = (1 - s)[:, None, None] * b0.table[None] + s[:, None, None] * b1.table[None]
        B = kern.probs[None, :, None, None] * mix[:, None, :, :]
        low = min(b0.table[1, spec.K - 1], b1.table[1, spec.K - 1])
        high = max(b0.sup_norm, b1.sup_norm)
        if low < spec.c - 1e-12 or high > 1 / spec.c + 1e-12:
            raise StructureError("switch rates escape ellipticity bounds for declared c")
        return GeneralField(B, kern.values.copy(), kern, kern, spec.c)
    raise StructureError(f"unknown generalized style {style!r}")


def _sample_kstep(spec: ModelSpec, master, coords: np.ndarray) -> KStepField:
    L = coords.shape[0]
    style = spec.style or "site_rate"
    if style == "site_rate":
        # one shared absorbed-walk path law, per-site rate multipliers in [c, 1]
        items = absorbed_walk_paths(spec.k, spec.extra.get("p_right", 0.5))
        paths = np.array([p for p, _ in items], dtype=np.int64)
        base = np.array([q for _, q in items])
        probs = np.tile(base, (L, 1))
        lo, hi = spec.law.bounds()
        if lo < spec.c - 1e-12 or hi > 1 + 1e-12:
            raise StructureError("site_rate law must produce values in [c, 1]")
        alpha = spec.law.sample_at(master, coords)
        beta = np.repeat(alpha[:, None, None], paths.shape[0], axis=1)
        beta = np.repeat(beta, spec.k, axis=2)
        minor, major = _walk_kernels(paths, probs, spec.c)
        return KStepField(paths, probs, beta, spec.K, spec.c, minor, major)
    if style == "site_walk":
        # per-site nearest-neighbour walk bias p_x, unit rates
        lo, hi = spec.law.bounds()
        if lo < spec.c - 1e-12 or hi > 1 - spec.c + 1e-12:
            raise StructureError("site_walk law must produce probabilities in [c, 1-c]")
        p_x = spec.law.sample_at(master, coords)
        support = sorted({p for p, _ in absorbed_walk_paths(spec.k, 0.5)})
        paths = np.array(support, dtype=np.int64)
        probs = np.zeros((L, len(support)))
        col = {p: i for i, p in enumerate(support)}
        # path probability is a polynomial in p_x; evaluate per distinct (+1, -1) step counts
        proto = absorbed_walk_paths(spec.k, 0.5)
        counts = []
        for path, _ in proto:
            ups = downs = 0
            prev = 0
            for pos in path:
                if pos == 0 and prev == 0 and ups + downs > 0:
                    break  # absorbed tail
                if pos > prev:
                    ups += 1
                elif pos < prev:
                    downs += 1
                prev = pos
            counts.append((path, ups, downs))
        for path, ups, downs in counts:
            probs[:, col[path]] += p_x**ups * (1 - p_x) ** downs
        beta = np.ones((L, len(support), spec.k))
        minor, major = _walk_kernels(paths, probs, spec.c)
        return KStepField(paths, probs, beta, spec.K, spec.c, minor, major)
    raise StructureError(f"unknown kstep style {style!r}")


def _walk_kernels(paths: np.ndarray, probs: np.ndarray, c: float) -> tuple[JumpKernel, JumpKernel]:
    """Derive minorant/majorant kernels from the realized step marginals."""
    zs1 = np.unique(paths[:, 0])
    zs1 = zs1[zs1 != 0]
    mins = np.array([probs[:, paths[:, 0] == z].sum(axis=1).min() for z in zs1])
    if mins.sum() <= 0:
        raise StructureError("degenerate path law: no uniformly supported first step")
    minor = JumpKernel(zs1, mins / mins.sum())

    zs_all = np.unique(paths)
    zs_all = zs_all[zs_all != 0]
    marg = np.zeros(zs_all.size)
    for i in range(paths.shape[1]):
        for j, z in enumerate(zs_all):
            sel = paths[:, i] == z
            if sel.any():
                marg[j] = max(marg[j], probs[:, sel].sum(axis=1).max())
    major = JumpKernel(zs_all, marg / marg.sum())
    return minor, major
