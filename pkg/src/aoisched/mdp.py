"""State space, feasible actions and transition law of the scheduling MDP.

A state is the tuple of per-device (battery, channel, age). Internally the
state index factors as ``s = x * n_h + h`` where ``x`` encodes the
batteries and ages (the part that evolves deterministically given the
action) and ``h`` encodes all channel levels (redrawn i.i.d. every slot,
independently of the action). Transitions are therefore stored as a sparse
``(n_states * n_actions, n_x)`` matrix over the ``x`` part, plus the
channel redraw distribution ``h_probs``.

Action 0 is Harvest; action ``j`` (1..K) is Transmit by device ``j``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ContractViolation, InvalidConfigError
from .model import INDEPENDENT, SystemConfig, harvest_quanta_table, tx_quanta_table

DEFAULT_STATE_CAP = 5_000_000
HARVEST = 0


def action_symbol(a: int) -> str:
    return "H" if a == HARVEST else f"T{a}"


def parse_action(symbol: str) -> int:
    symbol = symbol.strip().upper()
    if symbol == "H":
        return HARVEST
    if symbol.startswith("T") and symbol[1:].isdigit() and int(symbol[1:]) >= 1:
        return int(symbol[1:])
    raise ValueError(f"unknown action symbol {symbol!r}")


@dataclass(frozen=True)
class SystemState:
    """Per-device battery (quanta), channel level(s) (1-based) and age (slots).

    ``uplink`` and ``downlink`` coincide in reciprocal mode.
    """

    battery: tuple[int, ...]
    uplink: tuple[int, ...]
    downlink: tuple[int, ...]
    aoi: tuple[int, ...]

    @classmethod
    def reciprocal(cls, battery, channel, aoi) -> "SystemState":
        return cls(tuple(battery), tuple(channel), tuple(channel), tuple(aoi))


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Immutable tabular MDP with factored (x, h) states.

    ``config`` is None for hand-built models (see :func:`tabular_model`);
    in that case ``cost_table`` supplies the stage cost.
    """

    n_x: int
    h_probs: np.ndarray
    n_actions: int
    feasible: np.ndarray  # (n_states, n_actions) bool
    succ: sp.csr_matrix  # (n_states * n_actions, n_x)
    rewards: np.ndarray  # (n_states, n_actions) bits delivered
    ages: np.ndarray  # (n_x, K)
    batteries: np.ndarray  # (n_x, K)
    uplink: np.ndarray  # (n_h, K) 1-based levels
    downlink: np.ndarray  # (n_h, K)
    initial_x: int
    config: SystemConfig | None = None
    cost_table: np.ndarray | None = None
    reference_state: int = 0

    @property
    def n_h(self) -> int:
        return len(self.h_probs)

    @property
    def n_states(self) -> int:
        return self.n_x * self.n_h

    @property
    def K(self) -> int:
        return self.ages.shape[1]

    @property
    def reference_x(self) -> int:
        return self.reference_state // self.n_h

    @property
    def deterministic(self) -> bool:
        """True when every feasible (state, action) has a single x successor."""
        counts = np.diff(self.succ.indptr)
        return bool(np.all(counts[self.feasible.ravel()] == 1))

    def split(self, s):
        return np.divmod(s, self.n_h)

    # -- encoding --------------------------------------------------------
    def encode(self, state: SystemState) -> int:
        if self.config is None:
            raise InvalidConfigError("state encoding needs a config-built model")
        cfg = self.config
        x = _encode_x(cfg, state.battery, state.aoi)
        h = _encode_h(cfg, state.uplink, state.downlink)
        return int(x * self.n_h + h)

    def decode(self, s: int) -> SystemState:
        if not 0 <= s < self.n_states:
            raise IndexError(f"state index {s} out of range")
        x, h = divmod(int(s), self.n_h)
        return SystemState(
            battery=tuple(int(v) for v in self.batteries[x]),
            uplink=tuple(int(v) for v in self.uplink[h]),
            downlink=tuple(int(v) for v in self.downlink[h]),
            aoi=tuple(int(v) for v in self.ages[x]),
        )

    def state_columns(self) -> dict[str, np.ndarray]:
        """Per-state coordinate arrays for every state index, keyed by CSV column name."""
        x, h = np.divmod(np.arange(self.n_states), self.n_h)
        cols = {}
        independent = self.config is not None and self.config.channel_mode == INDEPENDENT
        for i in range(self.K):
            cols[f"b_{i + 1}"] = self.batteries[x, i]
            if independent:
                cols[f"h_up_{i + 1}"] = self.uplink[h, i]
                cols[f"h_down_{i + 1}"] = self.downlink[h, i]
            else:
                cols[f"h_{i + 1}"] = self.uplink[h, i]
            cols[f"a_{i + 1}"] = self.ages[x, i]
        return cols

    # -- dynamics ---------------------------------------------------------
    def successors_x(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        row = s * self.n_actions + a
        lo, hi = self.succ.indptr[row], self.succ.indptr[row + 1]
        return self.succ.indices[lo:hi], self.succ.data[lo:hi]

    def stage_costs(self, objective: str = "aoi", weights=None) -> np.ndarray:
        """(n_states, n_actions) cost to *minimize*; throughput is negated."""
        if objective == "aoi":
            w = self._weights(weights)
            per_x = self.ages @ w
            c = np.repeat(per_x, self.n_h)
            return np.broadcast_to(c[:, None], (self.n_states, self.n_actions)).copy()
        if objective == "throughput":
            return -np.asarray(self.rewards, dtype=float)
        if objective == "cost":
            if self.cost_table is None:
                raise InvalidConfigError("model has no custom cost table")
            return np.asarray(self.cost_table, dtype=float)
        raise InvalidConfigError(f"unknown objective {objective!r}")

    def _weights(self, weights) -> np.ndarray:
        if weights is None:
            if self.config is None:
                return np.ones(self.K)
            return self.config.weights
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.K,):
            raise InvalidConfigError(f"expected {self.K} weights, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidConfigError("weights must be finite and nonnegative")
        return w


def _radices(cfg: SystemConfig):
    x_radix = []
    for dev in cfg.devices:
        x_radix += [cfg.battery_levels, int(dev.aoi_cap)]
    per_ch = cfg.channel_levels ** (2 if cfg.channel_mode == INDEPENDENT else 1)
    return x_radix, [per_ch] * cfg.K


def _encode_x(cfg, battery, aoi) -> int:
    idx = 0
    for i, dev in enumerate(cfg.devices):
        b, a = int(battery[i]), int(aoi[i])
        if not (0 <= b < cfg.battery_levels and 1 <= a <= dev.aoi_cap):
            raise InvalidConfigError(f"device {i + 1}: battery {b} or age {a} out of range")
        idx = (idx * cfg.battery_levels + b) * int(dev.aoi_cap) + (a - 1)
    return idx


def _encode_h(cfg, uplink, downlink) -> int:
    L = cfg.channel_levels
    idx = 0
    for i in range(cfg.K):
        u, d = int(uplink[i]), int(downlink[i])
        if not (1 <= u <= L and 1 <= d <= L):
            raise InvalidConfigError(f"device {i + 1}: channel level out of range")
        if cfg.channel_mode == INDEPENDENT:
            idx = idx * L * L + (u - 1) * L + (d - 1)
        else:
            if u != d:
                raise InvalidConfigError("reciprocal mode needs equal uplink and downlink levels")
            idx = idx * L + (u - 1)
    return idx


def _mixed_radix_digits(n: int, radices: list[int]) -> np.ndarray:
    """(n, len(radices)) digits of 0..n-1, most significant first."""
    out = np.empty((n, len(radices)), dtype=np.int64)
    rem = np.arange(n, dtype=np.int64)
    for j in range(len(radices) - 1, -1, -1):
        rem, out[:, j] = np.divmod(rem, radices[j])
    return out


def build_model(config: SystemConfig, state_cap: int = DEFAULT_STATE_CAP) -> MdpModel:
    """Enumerate states, feasible actions and deterministic (battery, age) successors."""
    cfg = config
    K, Lb, L = cfg.K, cfg.battery_levels, cfg.channel_levels
    x_radix, h_radix = _radices(cfg)
    n_x = int(np.prod(x_radix, dtype=object))
    n_h = int(np.prod(h_radix, dtype=object))
    n_states = n_x * n_h
    if n_states > state_cap:
        dims = {"devices": K, "battery_levels": Lb, "channel_states_per_device": h_radix[0],
                "aoi_caps": [int(d.aoi_cap) for d in cfg.devices]}
        raise CapacityError(
            f"{n_states} states exceed the cap of {state_cap} "
            f"(K={K}, battery levels={Lb}, channel states/device={h_radix[0]}, "
            f"AoI caps={dims['aoi_caps']})",
            dims,
        )

    xd = _mixed_radix_digits(n_x, x_radix)
    batteries = xd[:, 0::2]
    ages = xd[:, 1::2] + 1
    hd = _mixed_radix_digits(n_h, h_radix)
    if cfg.channel_mode == INDEPENDENT:
        uplink, downlink = np.divmod(hd, L)
        uplink, downlink = uplink + 1, downlink + 1
    else:
        uplink = downlink = hd + 1
    q1 = cfg.quantizer.probabilities
    h_probs = np.full(n_h, 1.0 / n_h)
    if not np.allclose(q1, 1.0 / L):  # pragma: no cover - quantizer is equiprobable
        raise AssertionError("non-uniform channel levels")

    tx = tx_quanta_table(cfg)  # (K, L)
    hv = harvest_quanta_table(cfg)
    caps = cfg.aoi_caps
    x_mult = np.ones(2 * K, dtype=np.int64)
    for j in range(2 * K - 2, -1, -1):
        x_mult[j] = x_mult[j + 1] * x_radix[j + 1]

    # per state arrays, state s = x * n_h + h
    xs = np.repeat(np.arange(n_x), n_h)
    hs = np.tile(np.arange(n_h), n_x)
    b = batteries[xs]  # (n, K)
    a = ages[xs]
    up = uplink[hs]
    dn = downlink[hs]
    aged = np.minimum(a + 1, caps)
    dev_idx = np.arange(K)
    cost = tx[dev_idx, up - 1]  # (n, K)
    gain = hv[dev_idx, dn - 1]

    n_actions = K + 1
    feasible = np.zeros((n_states, n_actions), dtype=bool)
    feasible[:, HARVEST] = True
    feasible[:, 1:] = b >= cost
    next_x = np.full((n_states, n_actions), -1, dtype=np.int64)

    def encode(bb, aa):
        digits = np.empty((bb.shape[0], 2 * K), dtype=np.int64)
        digits[:, 0::2] = bb
        digits[:, 1::2] = aa - 1
        return digits @ x_mult

    next_x[:, HARVEST] = encode(np.minimum(b + gain, Lb - 1), aged)
    rewards = np.zeros((n_states, n_actions))
    sizes = np.array([d.packet_size for d in cfg.devices], dtype=float)
    for j in range(K):
        ok = feasible[:, j + 1]
        bb = b[ok].copy()
        aa = aged[ok].copy()
        bb[:, j] -= cost[ok, j]
        aa[:, j] = 1
        next_x[ok, j + 1] = encode(bb, aa)
        rewards[ok, j + 1] = sizes[j]

    flat = next_x.ravel()
    valid = flat >= 0
    indptr = np.concatenate(([0], np.cumsum(valid))).astype(np.int64)
    succ = sp.csr_matrix((np.ones(int(valid.sum())), flat[valid], indptr), shape=(n_states * n_actions, n_x))

    initial_x = _encode_x(cfg, [0] * K, caps)
    for arr in (feasible, rewards, batteries, ages, uplink, downlink, h_probs):
        arr.setflags(write=False)
    return MdpModel(
        n_x=n_x, h_probs=h_probs, n_actions=n_actions, feasible=feasible, succ=succ,
        rewards=rewards, ages=ages, batteries=batteries, uplink=uplink, downlink=downlink,
        initial_x=initial_x, config=cfg,
    )


def tabular_model(transitions, costs, feasible=None, rewards=None, ages=None, initial_state: int = 0) -> MdpModel:
    """Wrap a plain MDP ``transitions[s, a, s']`` / ``costs[s, a]`` as an :class:`MdpModel`.

    There is no channel factor (``n_h == 1``). Infeasible actions may be
    marked with ``feasible``; their transition rows are ignored.
    """
    P = np.asarray(transitions, dtype=float)
    n, n_a, n2 = P.shape
    if n != n2:
        raise InvalidConfigError("transition array must be (S, A, S)")
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (n, n_a):
        raise InvalidConfigError("cost array must be (S, A)")
    feas = np.ones((n, n_a), dtype=bool) if feasible is None else np.asarray(feasible, dtype=bool)
    if not feas.any(axis=1).all():
        raise InvalidConfigError("every state needs a feasible action")
    rows = P.reshape(n * n_a, n) * feas.reshape(-1, 1)
    sums = rows.sum(axis=1)
    if np.any(np.abs(sums[feas.ravel()] - 1.0) > 1e-12):
        raise InvalidConfigError("transition rows must sum to 1")
    ages_arr = np.zeros((n, 1), dtype=np.int64) if ages is None else np.asarray(ages).reshape(n, -1)
    return MdpModel(
        n_x=n, h_probs=np.ones(1), n_actions=n_a, feasible=feas, succ=sp.csr_matrix(rows),
        rewards=np.zeros((n, n_a)) if rewards is None else np.asarray(rewards, dtype=float),
        ages=ages_arr, batteries=np.zeros_like(ages_arr),
        uplink=np.ones((1, ages_arr.shape[1]), dtype=np.int64),
        downlink=np.ones((1, ages_arr.shape[1]), dtype=np.int64),
        initial_x=initial_state, cost_table=costs,
    )


def feasible_actions(model: MdpModel, state) -> list[int]:
    s = model.encode(state) if isinstance(state, SystemState) else int(state)
    return [int(a) for a in np.flatnonzero(model.feasible[s])]


def transition(model: MdpModel, state, action: int) -> dict[int, float]:
    """Successor distribution ``{state_index: probability}``."""
    s = model.encode(state) if isinstance(state, SystemState) else int(state)
    if not (0 <= action < model.n_actions) or not model.feasible[s, action]:
        raise ContractViolation(f"action {action_symbol(action)} is infeasible in state {s}")
    xs, px = model.successors_x(s, action)
    out: dict[int, float] = {}
    for x, p in zip(xs, px):
        for h, q in enumerate(model.h_probs):
            out[int(x) * model.n_h + h] = out.get(int(x) * model.n_h + h, 0.0) + float(p * q)
    return out


def stage_cost_aoi(model: MdpModel, state, weights) -> float:
    s = model.encode(state) if isinstance(state, SystemState) else int(state)
    w = model._weights(weights)
    return float(model.ages[s // model.n_h] @ w)


def stage_reward_throughput(model: MdpModel, state, action: int) -> float:
    s = model.encode(state) if isinstance(state, SystemState) else int(state)
    if not model.feasible[s, action]:
        raise ContractViolation(f"action {action_symbol(action)} is infeasible in state {s}")
    return float(model.rewards[s, action])


def iter_dump_lines(model: MdpModel) -> Iterator[str]:
    """One line per feasible (state, action): ``state_idx action -> succ:prob ...``."""
    for s in range(model.n_states):
        for a in np.flatnonzero(model.feasible[s]):
            dist = transition(model, s, int(a))
            body = " ".join(f"{k}:{v:.17g}" for k, v in sorted(dist.items()))
            yield f"{s} {action_symbol(int(a))} -> {body}"


def dump_model(model: MdpModel) -> str:
    buf = io.StringIO()
    for line in iter_dump_lines(model):
        buf.write(line + "\n")
    return buf.getvalue()
