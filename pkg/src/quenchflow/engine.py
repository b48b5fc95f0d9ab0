"""Event-driven construction of the particle dynamics.

Every trajectory is a deterministic function of (environment, initial
configuration, event stream).  The stream realizes a space-time Poisson field:
each lattice site rings at the uniform rate fixed by the model family, and
every ring carries two uniform marks (v1, v2).  The update map interprets the
marks: v1 selects a displacement (or a path) by inverse CDF, v2 thins the
jump against the local rate.  Coupled copies are evolved by replaying the
identical event arrays through each copy, which is what preserves sitewise
order for attractive rates.

Site noise is keyed by lattice coordinate, not array index (see ``_rng``), so
extending a segment with padding sites or rotating a ring relabels noise
without altering it.  Tie-breaking of equal event times is by (time, site,
arrival order); with continuous clocks ties have probability zero, but the
rule keeps serialization round-trips exact.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import kernels
from ._rng import TAG_GAP, TAG_V1, TAG_V2, hashed_uniform, master_from_seed
from .models import (
    EnvironmentField,
    GeneralField,
    KStepField,
    ModelSpec,
    SiteField,
    StructureError,
    TrafficField,
)

RING = "ring"
SEGMENT = "segment"


# ---------------------------------------------------------------------------
# configurations


@dataclass
class Configuration:
    """Occupation numbers over a finite lattice window.

    ``origin`` is the lattice coordinate of index 0; a ring identifies
    coordinates modulo its length.
    """

    occ: np.ndarray
    geometry: str = RING
    origin: int = 0

    def __post_init__(self):
        self.occ = np.ascontiguousarray(self.occ, dtype=np.int64)
        if self.geometry not in (RING, SEGMENT):
            raise StructureError(f"unknown geometry {self.geometry!r}")

    @property
    def L(self) -> int:
        return self.occ.shape[0]

    @property
    def particle_count(self) -> int:
        return int(self.occ.sum())

    def copy(self) -> "Configuration":
        return Configuration(self.occ.copy(), self.geometry, self.origin)

    def coords(self) -> np.ndarray:
        return self.origin + np.arange(self.L, dtype=np.int64)

    def validate(self, K: int) -> None:
        if np.any(self.occ < 0) or np.any(self.occ > K):
            raise StructureError("occupancies outside {0..K}")

    def shifted(self, r: int) -> "Configuration":
        if self.geometry != RING:
            raise StructureError("shifted() is defined for rings")
        return Configuration(np.roll(self.occ, -r), RING, self.origin)

    @classmethod
    def empty(cls, L: int, geometry: str = RING, origin: int = 0) -> "Configuration":
        return cls(np.zeros(L, dtype=np.int64), geometry, origin)

    @classmethod
    def full(cls, L: int, K: int, geometry: str = RING, origin: int = 0) -> "Configuration":
        return cls(np.full(L, K, dtype=np.int64), geometry, origin)

    @classmethod
    def with_particle_count(cls, L: int, K: int, n: int, seed, geometry: str = RING,
                            origin: int = 0) -> "Configuration":
        """Deterministic even spread of n particles plus seeded remainder."""
        if not (0 <= n <= K * L):
            raise StructureError("particle count outside [0, K*L]")
        occ = np.full(L, n // L, dtype=np.int64)
        r = n - L * (n // L)
        if r:
            from ._rng import generator

            extra = generator("even-spread", seed).choice(L, size=r, replace=False)
            occ[extra] += 1
        return cls(occ, geometry, origin)


# ---------------------------------------------------------------------------
# event stream


class EventStream:
    """Merged per-site Poisson clocks with uniform marks.

    State is exactly (per-site arrival counters, per-site next ring time,
    current time), so checkpoints restore the identical future.
    """

    FORMAT_VERSION = 1

    def __init__(self, seed, L: int, rate_per_site: float, site_keys: Optional[np.ndarray] = None):
        if rate_per_site <= 0 or not math.isfinite(rate_per_site):
            raise StructureError("rate per site must be positive and finite")
        self.master = master_from_seed(seed if isinstance(seed, (list, tuple)) else [seed])
        self.L = int(L)
        self.rate = float(rate_per_site)
        self.keys = np.arange(L, dtype=np.int64) if site_keys is None else np.asarray(site_keys, dtype=np.int64)
        if self.keys.shape != (L,):
            raise StructureError("site_keys must have one entry per site")
        self.counts = np.zeros(L, dtype=np.int64)
        self.t_now = 0.0
        gaps = -np.log(hashed_uniform(self.master, self.keys, TAG_GAP, self.counts)) / self.rate
        self.t_next = gaps

    def take_until(self, t_end: float):
        """All events with time <= t_end, sorted; advances the stream.

        Returns (times, site_indices, v1, v2) float64/int64 arrays.  Active
        sites draw their pending arrivals in bulk blocks sized to the Poisson
        mean plus tail slack; stragglers loop.
        """
        ts, xs, c0 = [], [], []
        while True:
            active = np.nonzero(self.t_next <= t_end)[0]
            if active.size == 0:
                break
            mu = max(self.rate * (t_end - float(self.t_next[active].min())), 1.0)
            m = min(int(mu + 6.0 * math.sqrt(mu)) + 8, 8192)
            na = active.size
            keys2 = np.repeat(self.keys[active], m).reshape(na, m)
            ctrs2 = self.counts[active][:, None] + 1 + np.arange(m, dtype=np.int64)[None, :]
            gaps = -np.log(hashed_uniform(self.master, keys2.ravel(), TAG_GAP,
                                          ctrs2.ravel())).reshape(na, m) / self.rate
            # sequential recurrence t_j = t_{j-1} + gap_j: arrival times are then
            # independent of block boundaries, which keeps checkpoint resume exact
            times2 = np.cumsum(np.hstack([self.t_next[active][:, None], gaps]), axis=1)
            emit = times2[:, :m] <= t_end
            k = emit.sum(axis=1)  # arrivals emitted per site, capped at m
            ts.append(times2[:, :m][emit])
            xs.append(np.repeat(active.astype(np.int64), k))
            mark_ctrs = self.counts[active][:, None] + np.arange(m, dtype=np.int64)[None, :]
            c0.append(mark_ctrs[emit])
            self.counts[active] += k
            self.t_next[active] = times2[np.arange(na), k]
        self.t_now = t_end
        if not ts:
            z = np.zeros(0)
            return z, np.zeros(0, dtype=np.int64), z, z
        times = np.concatenate(ts)
        sites = np.concatenate(xs)
        counters = np.concatenate(c0)
        order = np.lexsort((sites, times))
        times, sites, counters = times[order], sites[order], counters[order]
        key = self.keys[sites]
        v1 = hashed_uniform(self.master, key, TAG_V1, counters)
        v2 = hashed_uniform(self.master, key, TAG_V2, counters)
        return times, sites, v1, v2

    def checkpoint(self) -> dict:
        return {
            "format_version": self.FORMAT_VERSION,
            "master": int(self.master),
            "L": self.L,
            "rate": self.rate,
            "t_now": self.t_now,
            "keys": _encode_i64(self.keys),
            "counts": _encode_i64(self.counts),
            "t_next": _encode_f64(self.t_next),
        }

    @classmethod
    def restore(cls, doc: dict) -> "EventStream":
        if doc.get("format_version") != cls.FORMAT_VERSION:
            raise StructureError("unsupported stream checkpoint version")
        obj = cls.__new__(cls)
        obj.master = np.uint64(doc["master"])
        obj.L = int(doc["L"])
        obj.rate = float(doc["rate"])
        obj.t_now = float(doc["t_now"])
        obj.keys = _decode_i64(doc["keys"])
        obj.counts = _decode_i64(doc["counts"])
        obj.t_next = _decode_f64(doc["t_next"])
        return obj


def _encode_i64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<i8").tobytes()).decode()


def _decode_i64(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<i8").astype(np.int64)


def _encode_f64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode_f64(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").astype(np.float64)


# ---------------------------------------------------------------------------
# runtime tables


@dataclass
class Runtime:
    """Flat arrays consumed by the event kernels."""

    family: str  # "misanthrope" | "generalized" | "kstep"
    L: int
    K: int
    rate_per_site: float
    spec: ModelSpec
    field_: EnvironmentField
    # misanthrope
    alpha: Optional[np.ndarray] = None
    btab: Optional[np.ndarray] = None
    zvals: Optional[np.ndarray] = None
    zcdf: Optional[np.ndarray] = None
    invnorm: float = 0.0
    zp: Optional[np.ndarray] = None
    # generalized
    B: Optional[np.ndarray] = None
    invP: Optional[np.ndarray] = None
    # kstep (traffic is lowered to this)
    paths: Optional[np.ndarray] = None
    cumq: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None

    def mark_indices(self, v1: np.ndarray) -> Optional[np.ndarray]:
        """Displacement indices for misanthrope/generalized marks."""
        if self.zcdf is None:
            return None
        return np.searchsorted(self.zcdf, v1, side="right").astype(np.int64)


def build_runtime(spec: ModelSpec, field_: EnvironmentField) -> Runtime:
    if spec.family == "misanthrope":
        if not isinstance(field_, SiteField):
            raise StructureError("misanthrope family needs a site field")
        kern = spec.kernel
        if np.any(np.abs(kern.values) >= field_.L):
            raise StructureError("jump range must be smaller than the lattice")
        return Runtime(
            family="misanthrope",
            L=field_.L,
            K=spec.K,
            rate_per_site=spec.rate_per_site,
            spec=spec,
            field_=field_,
            alpha=np.ascontiguousarray(field_.alpha),
            btab=spec.rate.table.copy(),
            zvals=kern.values.copy(),
            zcdf=kern.cdf.copy(),
            invnorm=1.0 / (spec.rate.sup_norm / spec.c),
            zp=np.ascontiguousarray(kern.values * kern.probs),
        )
    if spec.family == "generalized":
        if not isinstance(field_, GeneralField):
            raise StructureError("generalized family needs a general_B field")
        kern = spec.kernel
        if np.any(np.abs(field_.zvals) >= field_.L):
            raise StructureError("jump range must be smaller than the lattice")
        invP = spec.c / kern.probs  # 1 / (P(z)/c)
        return Runtime(
            family="generalized",
            L=field_.L,
            K=spec.K,
            rate_per_site=spec.rate_per_site,
            spec=spec,
            field_=field_,
            B=np.ascontiguousarray(field_.B),
            zvals=field_.zvals.copy(),
            zcdf=kern.cdf.copy(),
            invP=np.ascontiguousarray(invP),
        )
    if spec.family in ("kstep", "traffic"):
        kfield = field_.to_kstep() if isinstance(field_, TrafficField) else field_
        if not isinstance(kfield, KStepField):
            raise StructureError("kstep family needs a kstep field")
        if np.any(np.abs(kfield.paths) >= kfield.L):
            raise StructureError("path range must be smaller than the lattice")
        return Runtime(
            family="kstep",
            L=kfield.L,
            K=kfield.K,
            rate_per_site=spec.rate_per_site,
            spec=spec,
            field_=kfield,
            paths=np.ascontiguousarray(kfield.paths),
            cumq=np.ascontiguousarray(kfield.cumq),
            beta=np.ascontiguousarray(kfield.beta),
        )
    raise StructureError(f"unknown family {spec.family!r}")


def stream_for(runtime: Runtime, config: Configuration, seed) -> EventStream:
    """An event stream keyed by the configuration's lattice coordinates."""
    return EventStream(seed, config.L, runtime.rate_per_site, site_keys=config.coords())


def duration_for_events_per_site(runtime: Runtime, events_per_site: float) -> float:
    return events_per_site / runtime.rate_per_site


# ---------------------------------------------------------------------------
# single-event update map (reference semantics, pure)


def apply_update(runtime: Runtime, config: Configuration, x: int, mark) -> Configuration:
    """Apply one update at site index x with the given mark; returns a copy.

    Marks are (z, u) for misanthrope/generalized and (v1, v2) for kstep.
    """
    out = config.copy()
    eta = out.occ
    ring = config.geometry == RING
    v2 = np.array([float(mark[1])])
    sites = np.array([int(x)], dtype=np.int64)
    impl = kernels.reference()  # single events always go through the reference loop
    if runtime.family == "misanthrope":
        zi = np.nonzero(runtime.zvals == int(mark[0]))[0]
        if zi.size == 0:
            raise StructureError(f"displacement {mark[0]} outside kernel support")
        impl.mis_evolve(eta, runtime.alpha, runtime.btab, runtime.zvals, runtime.invnorm,
                        ring, sites, zi.astype(np.int64), v2)
    elif runtime.family == "generalized":
        zi = np.nonzero(runtime.zvals == int(mark[0]))[0]
        if zi.size == 0:
            raise StructureError(f"displacement {mark[0]} outside kernel support")
        impl.gen_evolve(eta, runtime.B, runtime.zvals, runtime.invP,
                        ring, sites, zi.astype(np.int64), v2)
    else:
        v1 = np.array([float(mark[0])])
        impl.kstep_evolve(eta, runtime.paths, runtime.cumq, runtime.beta, runtime.K,
                          ring, sites, v1, v2)
    return out


def kstep_target(x: int, path: Sequence[int], eta: Configuration | np.ndarray, K: int):
    """First improvable step along a path and the landing site.

    Returns (N, Y) with N the 1-based step index (math.inf when the whole
    path is blocked) and Y the landing coordinate (x itself when blocked).
    Sites outside a segment count as blocked.
    """
    occ = eta.occ if isinstance(eta, Configuration) else np.asarray(eta)
    ring = isinstance(eta, Configuration) and eta.geometry == RING
    L = occ.shape[0]
    for i, z in enumerate(path, start=1):
        s = (x + int(z)) % L if ring else x + int(z)
        if 0 <= s < L and occ[s] < K:
            return i, s
    return math.inf, x


# ---------------------------------------------------------------------------
# traffic path law (exact enumeration and sampling)


class TrafficPathLaw:
    """Distribution of the self-avoiding target-search path of the traffic model.

    The path visits the positive-weight displacements sequentially without
    replacement, each step proportional to the remaining weights; displacements
    of zero weight follow afterwards in uniformly random order.  ``exact=True``
    keeps all probabilities as Fractions.
    """

    def __init__(self, weights: dict | Sequence, k: Optional[int] = None, exact: bool = False):
        if isinstance(weights, dict):
            items = sorted((int(z), w) for z, w in weights.items())
            if k is None:
                k = max(abs(z) for z, _ in items)
            full = {z: 0 for z in range(-k, k + 1) if z != 0}
            for z, w in items:
                if z not in full:
                    raise StructureError(f"displacement {z} outside overtaking range k={k}")
                full[z] = w
            self.disp = sorted(full)
            vals = [full[z] for z in self.disp]
        else:
            vals = list(weights)
            if k is None:
                if len(vals) % 2:
                    raise StructureError("weight vector must have even length (range {-k..k} minus 0)")
                k = len(vals) // 2
            self.disp = [z for z in range(-k, k + 1) if z != 0]
            if len(vals) != len(self.disp):
                raise StructureError("weight vector length must be 2k")
        self.k = k
        conv = (lambda w: Fraction(w)) if exact else float
        self.weights = {z: conv(w) for z, w in zip(self.disp, vals)}
        if any(w < 0 for w in self.weights.values()):
            raise StructureError("negative traffic weight")
        if sum(self.weights.values()) == 0:
            raise StructureError("all traffic weights vanish")
        self.exact = exact

    def enumerate(self) -> list[tuple[tuple, object]]:
        """All paths with their probabilities; exact Fractions when requested."""
        import itertools

        one = Fraction(1) if self.exact else 1.0
        pos = [z for z in self.disp if self.weights[z] > 0]
        zer = [z for z in self.disp if self.weights[z] == 0]
        out = []
        zcount = math.factorial(len(zer))
        for perm in itertools.permutations(pos):
            prob = one
            rem = sum(self.weights[z] for z in pos)
            for z in perm:
                prob = prob * self.weights[z] / rem
                rem = rem - self.weights[z]
            if zer:
                for tail in itertools.permutations(zer):
                    out.append((perm + tail, prob / zcount))
            else:
                out.append((perm, prob))
        return sorted(out)

    def sample(self, rng: np.random.Generator) -> tuple:
        pos = [z for z in self.disp if self.weights[z] > 0]
        zer = [z for z in self.disp if self.weights[z] == 0]
        path = []
        rem = {z: float(self.weights[z]) for z in pos}
        while rem:
            zs = sorted(rem)
            w = np.array([rem[z] for z in zs])
            z = zs[int(rng.choice(len(zs), p=w / w.sum()))]
            path.append(z)
            del rem[z]
        tail = list(zer)
        rng.shuffle(tail)
        return tuple(path + tail)

    def chosen_site_distribution(self, theta: Sequence[int]) -> dict:
        """Law of the first path entry falling in theta (exact enumeration)."""
        theta = set(int(z) for z in theta)
        out: dict[int, object] = {}
        for path, prob in self.enumerate():
            for z in path:
                if z in theta:
                    out[z] = out.get(z, 0) + prob
                    break
        return out


def traffic_path_law(weights, k: Optional[int] = None, exact: bool = False) -> TrafficPathLaw:
    return TrafficPathLaw(weights, k=k, exact=exact)


def traffic_direct_rate(fld: TrafficField, x: int, y: int, eta: Configuration) -> float:
    """Jump rate x -> y of the traffic dynamics, straight from its definition."""
    occ = eta.occ
    L = occ.shape[0]
    ring = eta.geometry == RING
    dx = (y - x) % L if ring else y - x
    if ring and dx > L // 2:
        dx -= L
    if dx == 0 or abs(dx) > fld.k:
        return 0.0
    disp = fld.displacements
    Z = 0.0
    w_target = 0.0
    open_target = False
    for j, z in enumerate(disp):
        s = (x + int(z)) % L if ring else x + int(z)
        if 0 <= s < L and occ[s] < fld.K:
            Z += fld.upsilon[x, j]
            if int(z) == dx:
                w_target = fld.upsilon[x, j]
                open_target = True
    if occ[x] <= 0 or Z <= 0 or not open_target:
        return 0.0
    return float(fld.beta1[x]) * w_target / Z


def kstep_rate_exact(paths, probs_row, beta_row, x: int, y: int, occ, K: int, ring: bool = True):
    """Exact jump rate x -> y under an enumerated path law (any numeric type)."""
    L = len(occ)
    total = 0
    for pi, path in enumerate(paths):
        if probs_row[pi] == 0:
            continue
        for i, z in enumerate(path):
            s = (x + int(z)) % L if ring else x + int(z)
            if 0 <= s < L and occ[s] < K:
                if s == y:
                    total += probs_row[pi] * beta_row[pi][i]
                break
    if occ[x] <= 0:
        return 0 * total
    return total


# ---------------------------------------------------------------------------
# evolution drivers


_CHUNK_EVENTS = 2_000_000


def _chunk_ends(runtime: Runtime, L: int, t_from: float, t_to: float):
    """Absolute chunk end times between t_from and t_to."""
    window = max(_CHUNK_EVENTS / (L * runtime.rate_per_site), 1e-9)
    t = t_from
    while t < t_to:
        t = min(t + window, t_to)
        yield t


def evolve(runtime: Runtime, config: Configuration, horizon: float, stream: EventStream,
           trace: Optional[list] = None) -> Configuration:
    """Evolve a copy of ``config`` for ``horizon`` time units of stream time."""
    out = config.copy()
    _drive(runtime, [out], horizon, stream, trace=trace)
    return out


@dataclass
class CoupledEnsemble:
    """Several configurations sharing one environment and one event stream.

    All copies always sit at the same time point; if copy i <= copy j
    sitewise at any time, the shared noise keeps the order at later times.
    """

    runtime: Runtime
    configs: list
    stream: EventStream
    elapsed: float = 0.0

    def step(self, duration: float) -> None:
        _drive(self.runtime, self.configs, duration, self.stream)
        self.elapsed += duration

    def ordered(self, i: int, j: int) -> bool:
        return bool(np.all(self.configs[i].occ <= self.configs[j].occ))


def evolve_coupled(runtime: Runtime, configs: Sequence[Configuration], horizon: float,
                   stream: EventStream, checkpoints: Optional[Sequence[float]] = None):
    """Evolve several copies under the identical event sequence.

    Returns the list of final configurations; when ``checkpoints`` is given,
    also returns {time: [snapshots]} at those times (relative to the start).
    """
    sizes = {c.L for c in configs}
    if len(sizes) != 1:
        raise StructureError("coupled configurations must share the lattice")
    geos = {c.geometry for c in configs}
    if len(geos) != 1:
        raise StructureError("coupled configurations must share the geometry")
    outs = [c.copy() for c in configs]
    if checkpoints is None:
        _drive(runtime, outs, horizon, stream)
        return outs
    snaps = {}
    t = 0.0
    for tc in sorted(checkpoints):
        if tc > horizon:
            break
        _drive(runtime, outs, tc - t, stream)
        snaps[tc] = [c.copy() for c in outs]
        t = tc
    if t < horizon:
        _drive(runtime, outs, horizon - t, stream)
    return outs, snaps


def _drive(runtime: Runtime, configs: Sequence[Configuration], duration: float,
           stream: EventStream, trace: Optional[list] = None) -> None:
    impl = kernels.active()
    ring = configs[0].geometry == RING
    L = configs[0].L
    if stream.L != L:
        raise StructureError("stream and configuration lattice sizes differ")
    t0 = stream.t_now
    for t2 in _chunk_ends(runtime, L, t0, t0 + duration):
        times, sites, v1, v2 = stream.take_until(t2)
        if sites.size == 0:
            continue
        zi = runtime.mark_indices(v1)
        accepted = np.zeros(sites.size, dtype=np.uint8) if trace is not None else None
        for cfg in configs:
            acc = accepted if cfg is configs[0] else None
            if runtime.family == "misanthrope":
                impl.mis_evolve(cfg.occ, runtime.alpha, runtime.btab, runtime.zvals,
                                runtime.invnorm, ring, sites, zi, v2, acc)
            elif runtime.family == "generalized":
                impl.gen_evolve(cfg.occ, runtime.B, runtime.zvals, runtime.invP,
                                ring, sites, zi, v2, acc)
            else:
                impl.kstep_evolve(cfg.occ, runtime.paths, runtime.cumq, runtime.beta,
                                  runtime.K, ring, sites, v1, v2, acc)
        if trace is not None:
            mark = runtime.zvals[zi] if zi is not None else v1
            trace.extend(zip(times.tolist(), sites.tolist(), np.asarray(mark).tolist(),
                             accepted.tolist()))


# ---------------------------------------------------------------------------
# observer currents


@dataclass
class CurrentResult:
    velocities: np.ndarray
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    phi_tilde: np.ndarray
    positions: np.ndarray  # observer coordinates at the horizon
    final: Configuration

    @property
    def phi(self) -> np.ndarray:
        return self.phi_plus - self.phi_minus + self.phi_tilde


def count_current(runtime: Runtime, config: Configuration, observers, horizon: float,
                  stream: EventStream, start: Optional[Sequence[int]] = None) -> CurrentResult:
    """Net particle current seen by observers moving at constant velocities.

    ``observers`` is a sequence of velocities; each observer starts at
    coordinate ``start[j]`` (default 0) and follows floor(v t).  Static
    observers (v = 0) never contribute self-motion current.
    """
    vel = np.asarray(list(observers), dtype=np.float64)
    m = vel.shape[0]
    pos = np.array(list(start) if start is not None else [0] * m, dtype=np.int64)
    nsteps = np.zeros(m, dtype=np.int64)
    t0 = stream.t_now  # observer clocks measure time from the start of counting
    # floor(v t): rightward paths first step at 1/v, leftward ones at 0+
    next_t = np.array([t0 + 1.0 / v if v > 0 else (t0 if v < 0 else np.inf) for v in vel])
    phi_p = np.zeros(m, dtype=np.int64)
    phi_m = np.zeros(m, dtype=np.int64)
    phi_t = np.zeros(m, dtype=np.int64)

    out = config.copy()
    impl = kernels.active()
    ring = config.geometry == RING
    for t2 in _chunk_ends(runtime, config.L, t0, t0 + horizon):
        times, sites, v1, v2 = stream.take_until(t2)
        zi = runtime.mark_indices(v1)
        if runtime.family == "misanthrope":
            impl.mis_evolve_current(out.occ, runtime.alpha, runtime.btab, runtime.zvals,
                                    runtime.invnorm, ring, config.origin, sites, zi, v2,
                                    times, t2, t0, vel, pos, nsteps, next_t, phi_p, phi_m, phi_t)
        elif runtime.family == "generalized":
            impl.gen_evolve_current(out.occ, runtime.B, runtime.zvals, runtime.invP,
                                    ring, config.origin, sites, zi, v2,
                                    times, t2, t0, vel, pos, nsteps, next_t, phi_p, phi_m, phi_t)
        else:
            impl.kstep_evolve_current(out.occ, runtime.paths, runtime.cumq, runtime.beta,
                                      runtime.K, ring, config.origin, sites, v1, v2,
                                      times, t2, t0, vel, pos, nsteps, next_t, phi_p, phi_m, phi_t)
    return CurrentResult(vel, phi_p, phi_m, phi_t, pos, out)


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def checkpoint_trajectory(config: Configuration, stream: EventStream, clock: float) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "clock": clock,
        "geometry": config.geometry,
        "origin": config.origin,
        "occupancy": _encode_i64(config.occ),
        "stream": stream.checkpoint(),
    }


def restore_trajectory(doc: dict) -> tuple[Configuration, EventStream, float]:
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise StructureError("unsupported checkpoint version")
    cfg = Configuration(_decode_i64(doc["occupancy"]), doc["geometry"], int(doc["origin"]))
    return cfg, EventStream.restore(doc["stream"]), float(doc["clock"])
