"""Sample-path freshness metrics for status-update traces.

The age at the monitor grows with slope one and drops to the system time
``T_n = t'_n - t_n`` whenever packet ``n`` is received. Averages are exact
integrals of that sawtooth, computed segment by segment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import GeneratorError, InvalidPenaltyError, TraceError


@dataclass(frozen=True, eq=False)
class UpdateTrace:
    """Generation times ``gen`` and reception times ``recv`` of delivered packets (FCFS order)."""

    gen: np.ndarray
    recv: np.ndarray

    def __post_init__(self):
        gen = np.asarray(self.gen, dtype=float).ravel()
        recv = np.asarray(self.recv, dtype=float).ravel()
        if gen.shape != recv.shape:
            raise TraceError("generation and reception arrays differ in length")
        if not (np.all(np.isfinite(gen)) and np.all(np.isfinite(recv))):
            raise TraceError("trace times must be finite")
        if np.any(np.diff(gen) <= 0):
            raise TraceError("generation times must be strictly increasing")
        if np.any(np.diff(recv) <= 0):
            raise TraceError("reception times must be strictly increasing (FCFS, no reordering)")
        if np.any(recv < gen):
            raise TraceError("a packet is received before it is generated")
        gen.setflags(write=False)
        recv.setflags(write=False)
        object.__setattr__(self, "gen", gen)
        object.__setattr__(self, "recv", recv)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "UpdateTrace":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0), np.empty(0))
        g, r = zip(*pairs)
        return cls(np.array(g), np.array(r))

    def __len__(self):
        return len(self.gen)

    @property
    def interarrivals(self) -> np.ndarray:
        """X_n for n >= 2."""
        return np.diff(self.gen)

    @property
    def system_times(self) -> np.ndarray:
        """T_n for every packet."""
        return self.recv - self.gen

    def default_start(self) -> float:
        return float(self.gen[0]) if len(self) else 0.0


@dataclass(frozen=True)
class PenaltyFunction:
    """Non-negative, non-decreasing age penalty.

    ``coefficients`` (c0, c1, c2) marks a polynomial of degree <= 2, which
    is integrated in closed form; otherwise ``func`` is integrated
    numerically.
    """

    func: Callable[[float], float]
    coefficients: tuple[float, ...] | None = None
    name: str = "custom"
    check_range: float = 100.0

    def __post_init__(self):
        grid = np.linspace(0.0, self.check_range, 1001)
        values = np.array([self.func(a) for a in grid], dtype=float)
        if not np.all(np.isfinite(values)) or values[0] < 0:
            raise InvalidPenaltyError(f"penalty {self.name!r} must be finite and non-negative")
        if np.any(np.diff(values) < -1e-12 * np.maximum(1.0, np.abs(values[1:]))):
            raise InvalidPenaltyError(f"penalty {self.name!r} is not non-decreasing")

    def __call__(self, age):
        return self.func(age)

    @classmethod
    def polynomial(cls, *coefficients: float) -> "PenaltyFunction":
        """``c0 + c1*a + c2*a**2``."""
        if len(coefficients) > 3:
            raise InvalidPenaltyError("closed-form polynomials are limited to degree 2")
        c = tuple(float(v) for v in coefficients) + (0.0,) * (3 - len(coefficients))
        return cls(lambda a: c[0] + c[1] * a + c[2] * a * a, c, name=f"poly{c}")

    @classmethod
    def linear(cls) -> "PenaltyFunction":
        return cls.polynomial(0.0, 1.0)

    @classmethod
    def constant(cls, value: float) -> "PenaltyFunction":
        return cls.polynomial(value)

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "PenaltyFunction":
        return cls(lambda a: math.expm1(rate * a), name=f"exp({rate})", check_range=10.0 / max(rate, 1e-9))


def _origin_before(trace: UpdateTrace, start: float, a0: float) -> float:
    """Virtual generation instant producing age ``a0`` at ``start``."""
    return start - a0


def aoi_at(trace: UpdateTrace, t: float, a0: float = 0.0, start: float | None = None) -> float:
    start = trace.default_start() if start is None else float(start)
    if t < start:
        raise TraceError(f"time {t} precedes the observation start {start}")
    if a0 < 0:
        raise TraceError("initial age must be non-negative")
    n = int(np.searchsorted(trace.recv, t, side="right"))
    if n:
        return float(t - trace.gen[n - 1])
    return float(a0 + (t - start))


def _segments(trace: UpdateTrace, ta: float, tb: float, a0: float, start: float):
    """(u, v, origin) triples covering [ta, tb]; age is ``t - origin`` on each."""
    if not tb > ta:
        raise TraceError(f"empty averaging window [{ta}, {tb}]")
    if ta < start:
        raise TraceError(f"window start {ta} precedes the observation start {start}")
    recv, gen = trace.recv, trace.gen
    lo = int(np.searchsorted(recv, ta, side="right"))
    hi = int(np.searchsorted(recv, tb, side="left"))
    cuts = np.concatenate(([ta], recv[lo:hi], [tb]))
    origins = np.empty(len(cuts) - 1)
    origins[0] = gen[lo - 1] if lo > 0 else _origin_before(trace, start, a0)
    origins[1:] = gen[lo:hi]
    return cuts[:-1], cuts[1:], origins


def _poly_integral(lo: np.ndarray, hi: np.ndarray, c: tuple[float, float, float]) -> float:
    """Sum over segments of the integral of c0 + c1*a + c2*a**2 from ``lo`` to ``hi``."""
    span = hi - lo
    total = c[0] * span + c[1] * span * (hi + lo) / 2.0 + c[2] * span * (hi * hi + hi * lo + lo * lo) / 3.0
    return float(np.sum(total))


def _window(trace: UpdateTrace, window, start: float) -> tuple[float, float]:
    if window is not None:
        return float(window[0]), float(window[1])
    return start, float(trace.recv[-1]) if len(trace) else start


def average_aoi(trace: UpdateTrace, window: tuple[float, float] | None = None, a0: float = 0.0,
                start: float | None = None) -> float:
    """Exact time-average of the age over ``window`` (default: first generation to last reception)."""
    start = trace.default_start() if start is None else float(start)
    ta, tb = _window(trace, window, start)
    u, v, g = _segments(trace, ta, tb, a0, start)
    return _poly_integral(u - g, v - g, (0.0, 1.0, 0.0)) / (tb - ta)


def peak_aoi(trace: UpdateTrace) -> np.ndarray:
    """A_n = X_n + T_n for packets 2..N (the first packet has no X_n)."""
    if len(trace) < 2:
        return np.empty(0)
    return trace.interarrivals + trace.system_times[1:]


def voiu(trace: UpdateTrace) -> np.ndarray:
    """X_n / A_n for packets 2..N."""
    if len(trace) < 2:
        return np.empty(0)
    return trace.interarrivals / peak_aoi(trace)


def average_coud(trace: UpdateTrace, penalty: PenaltyFunction, window: tuple[float, float] | None = None,
                 a0: float = 0.0, start: float | None = None) -> float:
    start = trace.default_start() if start is None else float(start)
    ta, tb = _window(trace, window, start)
    u, v, g = _segments(trace, ta, tb, a0, start)
    lo, hi = u - g, v - g
    if penalty.coefficients is not None:
        total = _poly_integral(lo, hi, penalty.coefficients)
    else:
        total = 0.0
        for a, b in zip(lo, hi):
            val, _ = integrate.quad(penalty.func, a, b, epsrel=1e-8, epsabs=0.0, limit=200)
            total += val
    return total / (tb - ta)


def packet_table(trace: UpdateTrace) -> list[dict]:
    """Per-packet rows ``n, X, T, A, voiu``; packet 1 has no X, A or VoIU."""
    rows = []
    X = trace.interarrivals
    T = trace.system_times
    A = peak_aoi(trace)
    V = voiu(trace)
    for n in range(len(trace)):
        if n == 0:
            rows.append({"n": 1, "X": "", "T": T[0], "A": "", "voiu": ""})
        else:
            rows.append({"n": n + 1, "X": X[n - 1], "T": T[n], "A": A[n - 1], "voiu": V[n - 1]})
    return rows


def summary(trace: UpdateTrace, a0: float = 0.0, window=None) -> dict[str, float]:
    out = {"packets": float(len(trace))}
    if len(trace):
        out["average_aoi"] = average_aoi(trace, window, a0)
        out["mean_system_time"] = float(trace.system_times.mean())
    if len(trace) >= 2:
        A = peak_aoi(trace)
        out["mean_interarrival"] = float(trace.interarrivals.mean())
        out["mean_peak_aoi"] = float(A.mean())
        out["max_peak_aoi"] = float(A.max())
        out["mean_voiu"] = float(voiu(trace).mean())
    return out


def _sampler(value) -> Callable[[np.random.Generator], float]:
    if callable(value):
        return value
    value = float(value)
    return lambda rng: value


def simulate_fcfs_queue(interarrival, service, n: int, seed: int | None = None) -> UpdateTrace:
    """Single-server FCFS queue; packet 1 is generated at time 0.

    ``interarrival`` and ``service`` are constants or callables taking a
    ``numpy.random.Generator``.
    """
    if n < 1:
        raise GeneratorError("need at least one packet")
    rng = np.random.default_rng(seed)
    draw_x, draw_s = _sampler(interarrival), _sampler(service)
    gen = np.empty(n)
    recv = np.empty(n)
    t = 0.0
    done = -math.inf
    for k in range(n):
        if k:
            x = float(draw_x(rng))
            if not x > 0:
                raise GeneratorError(f"non-positive interarrival sample {x}")
            t += x
        s = float(draw_s(rng))
        if not s > 0:
            raise GeneratorError(f"non-positive service sample {s}")
        done = max(t, done) + s
        gen[k] = t
        recv[k] = done
    return UpdateTrace(gen, recv)


def read_trace_csv(path: str | Path) -> UpdateTrace:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t_gen", "t_recv"} <= set(reader.fieldnames):
            raise TraceError("trace CSV needs columns n,t_gen,t_recv")
        rows = [(float(r["t_gen"]), float(r["t_recv"])) for r in reader]
    return UpdateTrace.from_pairs(rows)


def write_trace_csv(trace: UpdateTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t_gen", "t_recv"])
        for n, (g, r) in enumerate(zip(trace.gen, trace.recv), start=1):
            w.writerow([n, repr(float(g)), repr(float(r))])
