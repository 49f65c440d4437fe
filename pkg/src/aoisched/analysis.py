"""Forward simulation of policies, policy slices and policy diffs."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import metrics
from .errors import InvalidRequestError
from .model import tx_quanta_table
from .mdp import MdpModel, SystemState, action_symbol
from .solver import Policy

N_BATCHES = 20


@dataclass
class Trajectory:
    """Slot-by-slot record; ``states[t]`` is the state at the start of slot ``t``."""

    states: np.ndarray
    actions: np.ndarray
    ages: np.ndarray  # (horizon, K), ages at slot start
    batteries: np.ndarray  # (horizon, K)
    bits: np.ndarray
    seed: int | None
    horizon: int


@dataclass
class SimulationSummary:
    avg_aoi: np.ndarray
    avg_aoi_halfwidth: np.ndarray
    weighted_cost: float
    weighted_cost_halfwidth: float
    throughput: float
    throughput_halfwidth: float
    peak_aoi: list[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_device_avg_aoi": [float(v) for v in self.avg_aoi],
            "per_device_avg_aoi_ci95": [float(v) for v in self.avg_aoi_halfwidth],
            "weighted_cost": float(self.weighted_cost),
            "weighted_cost_ci95": float(self.weighted_cost_halfwidth),
            "throughput_bits_per_slot": float(self.throughput),
            "throughput_ci95": float(self.throughput_halfwidth),
            "per_device_mean_peak_aoi": [float(p.mean()) if len(p) else None for p in self.peak_aoi],
            "per_device_updates": [int(len(p) + 1) if len(p) else 0 for p in self.peak_aoi],
        }


def batch_means(samples: np.ndarray, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Mean and 95% half-width from non-overlapping batch means."""
    samples = np.asarray(samples, dtype=float)
    size = len(samples) // n_batches
    if size == 0:
        return float(samples.mean()), float("inf")
    means = samples[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    half = stats.t.ppf(0.975, n_batches - 1) * means.std(ddof=1) / np.sqrt(n_batches)
    return float(samples.mean()), float(half)


def default_initial_state(model: MdpModel, rng: np.random.Generator) -> int:
    """Empty batteries, ages at their caps, channels drawn from the quantizer law."""
    h = int(rng.choice(model.n_h, p=model.h_probs))
    return model.initial_x * model.n_h + h


def simulate_policy(model: MdpModel, policy: Policy, horizon: int, seed: int | None = 0,
                    initial_state: int | SystemState | None = None, weights=None):
    """Run ``policy`` for ``horizon`` slots; returns ``(Trajectory, SimulationSummary)``."""
    if horizon < 1:
        raise InvalidRequestError("horizon must be at least one slot")
    policy.check(model)
    rng = np.random.default_rng(seed)
    if initial_state is None:
        s0 = default_initial_state(model, rng)
    elif isinstance(initial_state, SystemState):
        s0 = model.encode(initial_state)
    else:
        s0 = int(initial_state)
    n_h, n_a = model.n_h, model.n_actions
    channels = rng.choice(n_h, size=horizon, p=model.h_probs) if n_h > 1 else np.zeros(horizon, dtype=np.int64)
    acts = policy.actions
    rows = np.arange(model.n_states) * n_a + acts

    states = np.empty(horizon, dtype=np.int64)
    if model.deterministic:
        nxt = model.succ.indices[model.succ.indptr[rows]].tolist()
        ch = channels.tolist()
        s = s0
        for t in range(horizon):
            states[t] = s
            if t + 1 < horizon:
                s = nxt[s] * n_h + ch[t + 1]
    else:
        u = rng.random(horizon)
        P = model.succ
        s = s0
        for t in range(horizon):
            states[t] = s
            if t + 1 < horizon:
                lo, hi = P.indptr[rows[s]], P.indptr[rows[s] + 1]
                cdf = np.cumsum(P.data[lo:hi])
                k = min(int(np.searchsorted(cdf, u[t] * cdf[-1], side="right")), hi - lo - 1)
                s = int(P.indices[lo + k]) * n_h + int(channels[t + 1])
    states[0] = s0

    xs = states // n_h
    actions = acts[states]
    traj = Trajectory(
        states=states, actions=actions, ages=model.ages[xs], batteries=model.batteries[xs],
        bits=model.rewards[states, actions], seed=seed, horizon=horizon,
    )
    return traj, summarize(model, traj, weights)


def summarize(model: MdpModel, traj: Trajectory, weights=None) -> SimulationSummary:
    w = model._weights(weights)
    K = model.K
    avg = np.empty(K)
    hw = np.empty(K)
    for i in range(K):
        avg[i], hw[i] = batch_means(traj.ages[:, i])
    wc, wc_hw = batch_means(traj.ages @ w)
    thr, thr_hw = batch_means(traj.bits)
    peaks = []
    slot = model.config.slot_duration if model.config is not None else 1.0
    for i in range(K):
        sent = np.flatnonzero(traj.actions == i + 1).astype(float)
        if len(sent) == 0:
            peaks.append(np.empty(0))
            continue
        # generated at slot start, delivered at slot end
        trace = metrics.UpdateTrace(sent * slot, (sent + 1.0) * slot)
        peaks.append(metrics.peak_aoi(trace) / slot)
    return SimulationSummary(avg, hw, wc, wc_hw, thr, thr_hw, peaks)


def trajectory_rows(model: MdpModel, traj: Trajectory):
    """Rows ``slot,action,b_1..b_K,a_1..a_K,bits`` for CSV export."""
    for t in range(traj.horizon):
        yield ([t, action_symbol(int(traj.actions[t]))] + [int(v) for v in traj.batteries[t]]
               + [int(v) for v in traj.ages[t]] + [float(traj.bits[t])])


# -- policy slices -------------------------------------------------------------

@dataclass
class PolicySlice:
    """Actions on the (battery, channel) grid of one device for several ages.

    ``grid[k, b, h - 1]`` is the action at age ``aoi_values[k]``, battery
    ``b`` and channel level ``h``.
    """

    device: int
    aoi_values: tuple[int, ...]
    grid: np.ndarray
    fixed: dict = field(default_factory=dict)

    def transmit_region(self, aoi: int) -> set[tuple[int, int]]:
        k = self.aoi_values.index(aoi)
        b, h = np.nonzero(self.grid[k] == self.device)
        return {(int(bb), int(hh) + 1) for bb, hh in zip(b, h)}

    def rows(self):
        for k, a in enumerate(self.aoi_values):
            for b in range(self.grid.shape[1]):
                for h in range(self.grid.shape[2]):
                    yield (a, b, h + 1, action_symbol(int(self.grid[k, b, h])))


def policy_slice(model: MdpModel, policy: Policy, device: int = 1, aoi_values=None,
                 fixed: dict | None = None) -> PolicySlice:
    """Slice the action table over (battery, channel) of ``device`` (1-based).

    For K > 1 every other device must be pinned in ``fixed`` as
    ``{j: (battery, channel, aoi)}``. In independent channel mode the
    sliced channel is the uplink and the downlink is set equal to it.
    """
    cfg = model.config
    if cfg is None:
        raise InvalidRequestError("policy slices need a config-built model")
    K = cfg.K
    if not 1 <= device <= K:
        raise InvalidRequestError(f"device {device} out of range 1..{K}")
    fixed = dict(fixed or {})
    missing = [j for j in range(1, K + 1) if j != device and j not in fixed]
    if missing:
        raise InvalidRequestError(f"K={K}: coordinates of devices {missing} must be fixed for a slice")
    cap = int(cfg.devices[device - 1].aoi_cap)
    if aoi_values is None:
        aoi_values = (1, cap)
    aoi_values = tuple(int(a) for a in aoi_values)
    for a in aoi_values:
        if not 1 <= a <= cap:
            raise InvalidRequestError(f"AoI value {a} outside 1..{cap}")
    Lb, Lh = cfg.battery_levels, cfg.channel_levels
    grid = np.empty((len(aoi_values), Lb, Lh), dtype=np.int64)
    for k, a in enumerate(aoi_values):
        for b in range(Lb):
            for h in range(1, Lh + 1):
                coords = [(b, h, a) if j == device else tuple(fixed[j]) for j in range(1, K + 1)]
                bat, up, aoi = zip(*coords)
                s = model.encode(SystemState(bat, up, up, aoi))
                grid[k, b, h - 1] = policy.actions[s]
    return PolicySlice(device, aoi_values, grid, fixed)


# -- policy diffs ----------------------------------------------------------------

def _band(value: int, top: int) -> str:
    if top <= 1:
        return "low"
    frac = value / top
    return "low" if frac < 1 / 3 else ("mid" if frac < 2 / 3 else "high")


@dataclass
class PolicyDiff:
    states: np.ndarray
    actions_a: np.ndarray
    actions_b: np.ndarray
    counts: Counter
    transitions: Counter

    def __len__(self):
        return len(self.states)

    @property
    def empty(self) -> bool:
        return len(self.states) == 0


def compare_policies(model: MdpModel, policy_a: Policy, policy_b: Policy) -> PolicyDiff:
    """States where the two action tables disagree, with banded summary counts.

    ``counts`` is keyed by ``(device, battery band, channel band, aoi band)``
    over every device's coordinates; ``transitions`` by the pair of action
    symbols.
    """
    if len(policy_a) != len(policy_b) or len(policy_a) != model.n_states:
        raise InvalidRequestError("policies cover different state spaces")
    diff = np.flatnonzero(policy_a.actions != policy_b.actions)
    counts: Counter = Counter()
    trans: Counter = Counter()
    if len(diff):
        x, h = np.divmod(diff, model.n_h)
        cfg = model.config
        for i in range(model.K):
            b_top = (cfg.battery_levels - 1) if cfg else 1
            h_top = (cfg.channel_levels - 1) if cfg else 1
            a_top = (int(cfg.devices[i].aoi_cap) - 1) if cfg else 1
            for b, u, a in zip(model.batteries[x, i], model.uplink[h, i], model.ages[x, i]):
                counts[(i + 1, _band(int(b), b_top), _band(int(u) - 1, h_top), _band(int(a) - 1, a_top))] += 1
        for a, b in zip(policy_a.actions[diff], policy_b.actions[diff]):
            trans[(action_symbol(int(a)), action_symbol(int(b)))] += 1
    return PolicyDiff(diff, policy_a.actions[diff], policy_b.actions[diff], counts, trans)


def transmit_nesting(slice_: PolicySlice, inner_aoi: int, outer_aoi: int) -> bool:
    """True when the transmit region at ``inner_aoi`` lies inside the one at ``outer_aoi``."""
    return slice_.transmit_region(inner_aoi) <= slice_.transmit_region(outer_aoi)


def transmits_whenever_feasible(model: MdpModel, slice_: PolicySlice, aoi: int) -> bool:
    """True when, at ``aoi``, every (battery, channel) with enough energy transmits."""
    cost = tx_quanta_table(model.config)[slice_.device - 1]
    k = slice_.aoi_values.index(aoi)
    for b in range(slice_.grid.shape[1]):
        for h in range(slice_.grid.shape[2]):
            feasible = b >= cost[h]
            if feasible != (slice_.grid[k, b, h] == slice_.device):
                return False
    return True


__all__ = [
    "PolicyDiff", "PolicySlice", "SimulationSummary", "Trajectory", "batch_means",
    "compare_policies", "policy_slice", "simulate_policy", "summarize", "transmit_nesting",
    "transmits_whenever_feasible", "trajectory_rows",
]
