"""Average-cost solvers: relative value iteration, policy iteration, exact policy evaluation.

Every solver works on the channel-averaged value ``W(x) = sum_h q(h) V(x, h)``.
Because channels are redrawn independently of the action, the Bellman
operator only ever needs ``W`` at the successor, so one sweep costs one
sparse mat-vec over ``(state, action)`` pairs and a reduction over ``h``.

Costs are divided by their largest magnitude before iterating, so ``tol``
is a span tolerance in those normalized units. Gains and relative values
are reported in the original units (bits per slot for throughput, reported
positive).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import ContractViolation, NonConvergenceError, ReducibleChainError
from .mdp import MdpModel, action_symbol

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
TIE_TOL = 1e-9
EXACT_SOLVE_LIMIT = 50_000
GAIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Policy:
    """Action index for every state (0 = Harvest, j = Transmit by device j)."""

    actions: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.actions, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "actions", arr)

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, s):
        return self.actions[s]

    def symbols(self) -> list[str]:
        return [action_symbol(int(a)) for a in self.actions]

    def check(self, model: MdpModel) -> None:
        if self.actions.shape != (model.n_states,):
            raise ContractViolation(f"policy covers {len(self.actions)} states, model has {model.n_states}")
        if np.any(self.actions < 0) or np.any(self.actions >= model.n_actions):
            raise ContractViolation("policy uses an unknown action")
        ok = model.feasible[np.arange(model.n_states), self.actions]
        if not ok.all():
            s = int(np.flatnonzero(~ok)[0])
            raise ContractViolation(f"policy action {action_symbol(int(self.actions[s]))} infeasible in state {s}")

    @classmethod
    def from_rule(cls, model: MdpModel, rule) -> "Policy":
        """Build from ``rule(model, states) -> actions`` evaluated on all state indices."""
        acts = np.asarray(rule(model, np.arange(model.n_states)), dtype=np.int64)
        pol = cls(acts)
        pol.check(model)
        return pol


def always_harvest(model: MdpModel) -> Policy:
    return Policy(np.zeros(model.n_states, dtype=np.int64))


def greedy_transmit(model: MdpModel, device: int = 1) -> Policy:
    """Transmit by ``device`` (1-based) whenever feasible, otherwise harvest."""
    acts = np.where(model.feasible[:, device], device, 0)
    return Policy(acts)


@dataclass
class SolveResult:
    gain: float
    relative_values: np.ndarray
    policy: Policy
    iterations: int
    residual: float
    objective: str
    weights: np.ndarray | None
    method: str
    tol: float = DEFAULT_TOL
    scale: float = 1.0  # cost normalization; tol and residual are in units of scale

    def to_dict(self, evaluation: "PolicyEvaluation | None" = None) -> dict:
        out = {
            "gain": float(self.gain),
            "objective": self.objective,
            "method": self.method,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
        }
        if self.weights is not None:
            out["weights"] = [float(w) for w in self.weights]
        if evaluation is not None:
            out["per_device_avg_aoi"] = [float(v) for v in evaluation.avg_aoi]
            out["throughput_bits_per_slot"] = float(evaluation.throughput)
            out["weighted_cost"] = float(evaluation.weighted_cost)
            out["multichain"] = bool(evaluation.multichain)
            out["recurrent_states"] = int(evaluation.recurrent.sum())
        return out


@dataclass
class PolicyEvaluation:
    avg_aoi: np.ndarray
    weighted_cost: float
    throughput: float
    stationary_x: np.ndarray
    recurrent: np.ndarray  # bool over x
    multichain: bool = False
    n_closed_classes: int = 1
    weights: np.ndarray | None = field(default=None)

    def stationary(self, model: MdpModel) -> np.ndarray:
        """Stationary probability of every full state."""
        return np.outer(self.stationary_x, model.h_probs).ravel()


# -- internals --------------------------------------------------------------

def _normalized_costs(model: MdpModel, objective: str, weights):
    cost = model.stage_costs(objective, weights)
    feas = model.feasible
    scale = float(np.max(np.abs(cost[feas]))) if feas.any() else 1.0
    if scale == 0.0 or not np.isfinite(scale):
        scale = 1.0
    return cost / scale, scale


def _q_values(model: MdpModel, cost: np.ndarray, W: np.ndarray) -> np.ndarray:
    Q = cost + (model.succ @ W).reshape(model.n_states, model.n_actions)
    Q[~model.feasible] = np.inf
    return Q


def _expect_h(model: MdpModel, V: np.ndarray) -> np.ndarray:
    return V.reshape(model.n_x, model.n_h) @ model.h_probs


def _greedy(Q: np.ndarray, current: np.ndarray | None = None) -> np.ndarray:
    """Lowest-index minimizer up to ``TIE_TOL``; keeps ``current`` when it is a minimizer."""
    qmin = Q.min(axis=1)
    cand = Q <= (qmin + TIE_TOL * (1.0 + np.abs(qmin)))[:, None]
    best = cand.argmax(axis=1)
    if current is not None:
        keep = cand[np.arange(len(current)), current]
        best = np.where(keep, current, best)
    return best


def _aggregator(model: MdpModel) -> sp.csr_matrix:
    """(n_x, n_states) matrix averaging over the channel index."""
    n_x, n_h = model.n_x, model.n_h
    return sp.csr_matrix(
        (np.tile(model.h_probs, n_x), np.arange(model.n_states), np.arange(0, model.n_states + 1, n_h)),
        shape=(n_x, model.n_states),
    )


def policy_chain(model: MdpModel, policy: Policy) -> sp.csr_matrix:
    """Transition matrix of the policy on the (battery, age) part of the state."""
    rows = np.arange(model.n_states) * model.n_actions + policy.actions
    return (_aggregator(model) @ model.succ[rows]).tocsr()


def _closed_classes(P: sp.csr_matrix):
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaving & (coo.data > 0)]]] = True
    closed = np.flatnonzero(~open_comp)
    return labels, closed


def _stationary_on(P: sp.csr_matrix, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix."""
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    if n <= EXACT_SOLVE_LIMIT:
        A = (sp.identity(n, format="csr") - P).T.tocoo()
        keep = A.row != 0
        rows = np.concatenate((A.row[keep], np.zeros(n, dtype=A.row.dtype)))
        cols = np.concatenate((A.col[keep], np.arange(n)))
        vals = np.concatenate((A.data[keep], np.ones(n)))
        M = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        rhs = np.zeros(n)
        rhs[0] = 1.0
        pi = spla.splu(M).solve(rhs)
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()
    # lazy chain avoids periodic oscillation, same stationary law
    PT = P.T.tocsr()
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = 0.5 * (pi + PT @ pi)
        if 0.5 * np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise NonConvergenceError("stationary distribution did not converge", residual=0.5 * np.abs(nxt - pi).sum(),
                              iterations=max_iter)


def _bias_solve(model: MdpModel, cost: np.ndarray, policy: np.ndarray):
    """Gain and channel-averaged bias of a policy with a constant gain, bias(reference) = 0.

    Several closed classes are accepted when they share one gain; the bias
    is then pinned to zero at one state of every class.
    """
    pol = Policy(policy)
    Px = policy_chain(model, pol)
    agg = _aggregator(model)
    cbar = agg @ cost[np.arange(model.n_states), policy]
    labels, closed = _closed_classes(Px)
    n = model.n_x
    ref = model.reference_x
    if len(closed) == 1:
        anchors, g = [ref], None
    else:
        gains, anchors = [], []
        for c in closed:
            members = np.flatnonzero(labels == c)
            gains.append(float(_stationary_on(Px[members][:, members].tocsr()) @ cbar[members]))
            anchors.append(int(ref if labels[ref] == c else members[0]))
        if max(gains) - min(gains) > GAIN_TOL * (1.0 + max(abs(v) for v in gains)):
            raise ReducibleChainError(
                f"policy induces {len(closed)} closed classes with gains {min(gains):.6g}..{max(gains):.6g} "
                "on the (battery, age) chain; average-cost evaluation needs a constant gain"
            )
        g = float(np.mean(gains))
    A = (sp.identity(n, format="csr") - Px).tocoo()
    keep = ~np.isin(A.col, anchors)
    if g is None:
        # the anchor column carries the unknown gain
        extra_rows, extra_cols = np.arange(n), np.full(n, ref)
        rhs = cbar
    else:
        # anchor columns become slacks on their own rows; they vanish for a consistent system
        extra_rows, extra_cols = np.array(anchors), np.array(anchors)
        rhs = cbar - g
    rows = np.concatenate((A.row[keep], extra_rows))
    cols = np.concatenate((A.col[keep], extra_cols))
    vals = np.concatenate((A.data[keep], np.ones(len(extra_rows))))
    M = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    try:
        y = spla.splu(M).solve(rhs)
    except RuntimeError as exc:
        raise ReducibleChainError(f"singular evaluation system: {exc}") from None
    if not np.all(np.isfinite(y)):
        raise ReducibleChainError("evaluation system produced non-finite values")
    if g is None:
        g = float(y[ref])
    W = y.copy()
    W[anchors] = 0.0
    return g, W


def _finish(model, Q, g_norm, scale, sign):
    V = Q.min(axis=1) - g_norm
    V = V - V[model.reference_state]
    return sign * g_norm * scale, sign * V * scale


# -- public API -------------------------------------------------------------

def relative_value_iteration(model: MdpModel, objective: str = "aoi", weights=None,
                             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                             damping: float = 0.5) -> SolveResult:
    """Relative value iteration with an aperiodicity transform.

    Each sweep applies ``W <- (1 - damping) W + damping T W`` and re-anchors
    at the reference state; the fixed point and the greedy policy are those
    of the undamped operator, but periodic chains no longer oscillate.
    Stops when ``span(T W - W) <= tol``; the gain is the midpoint of the
    bounds ``min(TW - W) <= g <= max(TW - W)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    cost, scale = _normalized_costs(model, objective, weights)
    sign = -1.0 if objective == "throughput" else 1.0
    ref = model.reference_x
    W = np.zeros(model.n_x)
    residual = np.inf
    for it in range(1, max_iter + 1):
        Q = _q_values(model, cost, W)
        diff = _expect_h(model, Q.min(axis=1)) - W
        lo, hi = float(diff.min()), float(diff.max())
        residual = hi - lo
        if residual <= tol:
            break
        W = W + damping * diff
        W -= W[ref]
    else:
        raise NonConvergenceError(
            f"relative value iteration did not converge in {max_iter} sweeps (span residual {residual:.3e})",
            residual=residual, iterations=max_iter,
        )
    g_norm = 0.5 * (lo + hi)
    gain, values = _finish(model, Q, g_norm, scale, sign)
    w = None if objective != "aoi" else model._weights(weights)
    return SolveResult(gain, values, Policy(_greedy(Q)), it, residual, objective, w, "rvi", tol, scale)


def policy_iteration(model: MdpModel, objective: str = "aoi", weights=None,
                     max_iter: int = 1000, initial_policy: Policy | None = None) -> SolveResult:
    """Howard policy iteration for unichain average-cost MDPs.

    Evaluation solves ``(I - P) W + g = c`` with ``W(reference) = 0`` on the
    channel-averaged chain. Improvement keeps the incumbent action whenever it
    is among the minimizers, which guarantees termination; the returned table
    then uses the lowest-index tie-break.
    """
    cost, scale = _normalized_costs(model, objective, weights)
    sign = -1.0 if objective == "throughput" else 1.0
    if initial_policy is None:
        policy = _greedy(_q_values(model, cost, np.zeros(model.n_x)))
    else:
        initial_policy.check(model)
        policy = initial_policy.actions.copy()
    reseeded = False
    it = 0
    while it < max_iter:
        it += 1
        try:
            g_norm, W = _bias_solve(model, cost, policy)
        except ReducibleChainError as exc:
            if reseeded:
                raise
            # an intermediate policy can split the chain even when the optimum does not;
            # restart from the value-iteration policy
            log.info("policy iteration hit a reducible policy at iteration %d; reseeding from RVI", it)
            try:
                seed = relative_value_iteration(model, objective, weights, tol=1e-6, max_iter=20_000)
            except NonConvergenceError:
                raise exc from None
            policy = seed.policy.actions.copy()
            reseeded = True
            continue
        Q = _q_values(model, cost, W)
        improved = _greedy(Q, current=policy)
        if np.array_equal(improved, policy):
            break
        policy = improved
    else:
        raise NonConvergenceError(f"policy iteration did not stabilize in {max_iter} iterations",
                                  iterations=max_iter)
    diff = _expect_h(model, Q.min(axis=1)) - W
    residual = float(diff.max() - diff.min())
    gain, values = _finish(model, Q, g_norm, scale, sign)
    w = None if objective != "aoi" else model._weights(weights)
    return SolveResult(gain, values, Policy(_greedy(Q)), it, residual, objective, w, "pi", DEFAULT_TOL, scale)


def solve(model: MdpModel, objective: str = "aoi", weights=None, method: str = "pi", **kwargs) -> SolveResult:
    if method == "pi":
        return policy_iteration(model, objective, weights, **kwargs)
    if method == "rvi":
        return relative_value_iteration(model, objective, weights, **kwargs)
    raise ValueError(f"unknown method {method!r}")


def bellman_residual(model: MdpModel, result: SolveResult, objective: str | None = None, weights=None) -> float:
    """``max_s |min_a [c + P V] - V(s) - g|`` in the original cost units."""
    objective = objective or result.objective
    if weights is None:
        weights = result.weights
    cost = model.stage_costs(objective, weights)
    sign = -1.0 if objective == "throughput" else 1.0
    cost = sign * cost  # back to the reported sense
    V = result.relative_values
    Q = cost + (model.succ @ _expect_h(model, V)).reshape(model.n_states, model.n_actions)
    if sign < 0:
        Q[~model.feasible] = -np.inf
        best = Q.max(axis=1)
    else:
        Q[~model.feasible] = np.inf
        best = Q.min(axis=1)
    return float(np.max(np.abs(best - V - result.gain)))


def evaluate_policy(model: MdpModel, policy: Policy, weights=None, initial_x: int | None = None) -> PolicyEvaluation:
    """Exact long-run averages of ``policy`` started from ``initial_x``.

    The stationary law is computed on the closed class(es) reachable from
    the initial (battery, age) configuration. When several closed classes
    are reachable the limit is their mixture weighted by absorption
    probabilities and ``multichain`` is set.
    """
    policy.check(model)
    w = model._weights(weights) if model.K else np.zeros(0)
    x0 = model.initial_x if initial_x is None else int(initial_x)
    Px = policy_chain(model, policy)
    reach = np.sort(breadth_first_order(Px, x0, directed=True, return_predecessors=False))
    sub = Px[reach][:, reach].tocsr()
    labels, closed = _closed_classes(sub)

    pi_sub = np.zeros(len(reach))
    recurrent_sub = np.isin(labels, closed)
    if len(closed) == 1:
        members = np.flatnonzero(labels == closed[0])
        pi_sub[members] = _stationary_on(sub[members][:, members].tocsr())
    else:
        log.warning("policy has %d closed classes reachable from the initial state", len(closed))
        transient = np.flatnonzero(~recurrent_sub)
        start = int(np.searchsorted(reach, x0))
        if recurrent_sub[start]:
            alpha = {int(labels[start]): 1.0}
        else:
            Qtt = sub[transient][:, transient]
            e = np.zeros(len(transient))
            e[int(np.searchsorted(transient, start))] = 1.0
            z = spla.spsolve((sp.identity(len(transient)) - Qtt).T.tocsc(), e)
            z = np.atleast_1d(z)
            alpha = {}
            for c in closed:
                members = np.flatnonzero(labels == c)
                alpha[int(c)] = float(z @ np.asarray(sub[transient][:, members].sum(axis=1)).ravel())
        for c, a in alpha.items():
            if a <= 0:
                continue
            members = np.flatnonzero(labels == c)
            pi_sub[members] += a * _stationary_on(sub[members][:, members].tocsr())
        pi_sub /= pi_sub.sum()

    pi_x = np.zeros(model.n_x)
    pi_x[reach] = pi_sub
    recurrent = np.zeros(model.n_x, dtype=bool)
    recurrent[reach[recurrent_sub]] = True
    avg = pi_x @ model.ages
    reward = model.rewards[np.arange(model.n_states), policy.actions]
    throughput = float(pi_x @ _expect_h(model, reward))
    return PolicyEvaluation(
        avg_aoi=avg, weighted_cost=float(avg @ w) if len(w) else 0.0, throughput=throughput,
        stationary_x=pi_x, recurrent=recurrent, multichain=len(closed) > 1,
        n_closed_classes=len(closed), weights=w,
    )


def evaluate_cost(model: MdpModel, policy: Policy, objective: str = "cost", weights=None,
                  initial_x: int | None = None) -> float:
    """Long-run average of an arbitrary stage-cost table under ``policy``."""
    ev = evaluate_policy(model, policy, weights if objective == "aoi" else None, initial_x)
    c = model.stage_costs(objective, weights)[np.arange(model.n_states), policy.actions]
    return float(ev.stationary_x @ _expect_h(model, c))
