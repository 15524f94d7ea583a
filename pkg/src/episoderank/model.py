"""Log-linear sequence models over a machine: fitting and reach probabilities.

The model generates each event conditioned on the machine state reached by the
greedy walk over the preceding events: ``p(l | H) = exp(u_l + t_i [some
outgoing edge of H labelled l lies in C_i]) / Z_H``. With both boosted edge
sets empty this is the plain independence model. The log-likelihood is concave
in ``(u, t1, t2)``, so a damped Newton iteration finds the global maximum.

Labels that do not occur in the host episode cannot move the machine, so they
are collapsed into one catch-all class; this shrinks the parameter dimension
from |alphabet|+2 to at most |episode|+3 without changing any fitted
probability the rank depends on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .datagen import Alphabet, Dataset
from .machine import Machine

T_CAP = 25.0
RIDGE = 1e-9
GRAD_TOL = 1e-8
MAX_ITER = 200

STAR = "*"


class NumericalFitError(RuntimeError):
    """Newton iteration hit a non-finite likelihood or gradient."""


@dataclass(frozen=True)
class CollapsedAlphabet:
    """Mapping from dataset symbols to model classes; the last class catches
    every symbol absent from the episode."""

    classes: tuple[str, ...]
    star: int
    _by_symbol: dict

    @property
    def size(self) -> int:
        return len(self.classes)

    def class_of(self, symbol: str) -> int:
        return self._by_symbol.get(symbol, self.star)

    def class_of_ids(self, alphabet: Alphabet) -> np.ndarray:
        out = np.full(len(alphabet), self.star, dtype=np.int64)
        for sym, cls in self._by_symbol.items():
            sid = alphabet.id_of(sym)
            if sid is not None:
                out[sid] = cls
        return out


def collapse_alphabet(alphabet: Alphabet, episode) -> CollapsedAlphabet:
    """Each distinct episode label keeps its own class; the rest share one."""
    distinct = sorted(set(episode.labels))
    by_symbol = {lab: i for i, lab in enumerate(distinct)}
    return CollapsedAlphabet(tuple(distinct) + (STAR,), len(distinct), by_symbol)


def identity_collapse(alphabet: Alphabet) -> CollapsedAlphabet:
    """No collapsing: one class per alphabet symbol plus an unused catch-all."""
    by_symbol = {sym: i for i, sym in enumerate(alphabet.symbols)}
    return CollapsedAlphabet(tuple(alphabet.symbols) + (STAR,), len(alphabet), by_symbol)


@dataclass(frozen=True, eq=False)
class PartitionSpec:
    """Two disjoint boosted edge sets of a machine (either may be empty)."""

    c1: frozenset
    c2: frozenset

    def __post_init__(self):
        if self.c1 & self.c2:
            raise ValueError("boosted edge sets must be disjoint")

    @property
    def is_empty(self) -> bool:
        return not self.c1 and not self.c2


EMPTY_SPEC = PartitionSpec(frozenset(), frozenset())


@dataclass(eq=False)
class StateStats:
    """Per-state event counts from one greedy pass over the dataset.

    ``n[H, k]`` counts events of class ``k`` read while the walk sat in state
    ``H``; ``c[H]`` is the row sum. These are the sufficient statistics: the
    likelihood of any boosted model over the same machine depends on the data
    only through them.
    """

    collapsed: CollapsedAlphabet
    c: np.ndarray
    n: np.ndarray

    def total_events(self) -> float:
        return float(self.c.sum())


def collect_statistics(machine: Machine, dataset: Dataset,
                       collapsed: CollapsedAlphabet | None = None) -> tuple[StateStats, int]:
    """One pass over the dataset: sufficient statistics plus the support count.

    Only events whose label occurs in the episode can move the machine, so the
    walk jumps between their occurrences; the noise events in between are
    credited to the current state in bulk.
    """
    if collapsed is None:
        collapsed = collapse_alphabet(dataset.alphabet, machine.episode)
    S = machine.num_states
    K = collapsed.size
    star = collapsed.star
    table = machine.bound_transitions(dataset)
    class_of = collapsed.class_of_ids(dataset.alphabet)

    c_acc = [0] * S
    n_acc = [[0] * K for _ in range(S)]
    sink = machine.sink
    covered = 0
    touched_events = 0
    touched_seqs = 0

    for seq_idx, events in dataset.relevant_events(machine.episode_label_ids(dataset)).items():
        length = len(dataset.sequences[seq_idx])
        touched_events += length
        touched_seqs += 1
        state = machine.source
        last = 0
        for pos, lid in events:
            gap = pos - last
            if gap:
                n_acc[state][star] += gap
                c_acc[state] += gap
            n_acc[state][class_of[lid]] += 1
            c_acc[state] += 1
            nxt = table[state].get(lid)
            if nxt is not None:
                state = nxt
            last = pos + 1
        tail = length - last
        if tail:
            n_acc[state][star] += tail
            c_acc[state] += tail
        if state == sink:
            covered += 1

    rest = dataset.total_events - touched_events
    if rest:
        n_acc[machine.source][star] += rest
        c_acc[machine.source] += rest
    if machine.source == machine.sink:
        covered = dataset.num_sequences

    stats = StateStats(collapsed, np.array(c_acc, dtype=float), np.array(n_acc, dtype=float))
    return stats, covered


def state_statistics(machine: Machine, dataset: Dataset,
                     collapsed: CollapsedAlphabet | None = None) -> StateStats:
    return collect_statistics(machine, dataset, collapsed)[0]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Fitted weights: per-class ``u`` (one coordinate pinned to zero as the
    gauge) and the two transition boosts."""

    collapsed: CollapsedAlphabet
    u: np.ndarray
    t1: float
    t2: float
    pinned: int

    def to_dict(self) -> dict:
        return {
            "u": {lab: float(w) for lab, w in zip(self.collapsed.classes, self.u)},
            "t1": float(self.t1),
            "t2": float(self.t2),
            "pinned": self.collapsed.classes[self.pinned],
        }


# --- boost signatures ---------------------------------------------------------

def boost_signatures(machine: Machine, spec: PartitionSpec,
                     collapsed: CollapsedAlphabet) -> list[tuple[tuple, tuple]]:
    """Per state: which classes its outgoing edges boost with t1 / with t2.

    The conditional distribution of a state depends on the parameters only
    through this signature, so states sharing one can be pooled.
    """
    l1: list[set] = [set() for _ in range(machine.num_states)]
    l2: list[set] = [set() for _ in range(machine.num_states)]
    for idx in spec.c1:
        e = machine.edges[idx]
        l1[e.src].add(collapsed.class_of(e.label))
    for idx in spec.c2:
        e = machine.edges[idx]
        l2[e.src].add(collapsed.class_of(e.label))
    return [(tuple(sorted(a)), tuple(sorted(b))) for a, b in zip(l1, l2)]


def _log_dist(u: np.ndarray, t1: float, t2: float, sig: tuple[tuple, tuple]) -> np.ndarray:
    z = u.copy()
    if sig[0]:
        z[list(sig[0])] += t1
    if sig[1]:
        z[list(sig[1])] += t2
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def state_distribution(params: ModelParams, machine: Machine, spec: PartitionSpec,
                       state: int) -> np.ndarray:
    """Probability over collapsed classes of the next event in this state."""
    sig = boost_signatures(machine, spec, params.collapsed)[state]
    return np.exp(_log_dist(params.u, params.t1, params.t2, sig))


def conditional_label_prob(params: ModelParams, machine: Machine, spec: PartitionSpec,
                           state: int, label: str) -> float:
    """Probability of one model class (an episode label or ``*``) given a state."""
    cls = params.collapsed.classes.index(label)
    return float(state_distribution(params, machine, spec, state)[cls])


# --- likelihood, gradient, hessian ---------------------------------------------

def _grouped(machine: Machine, spec: PartitionSpec, stats: StateStats):
    """Aggregate statistics over states sharing a boost signature."""
    sigs = boost_signatures(machine, spec, stats.collapsed)
    groups: dict[tuple, list[int]] = {}
    for state, sig in enumerate(sigs):
        if stats.c[state] > 0:
            groups.setdefault(sig, []).append(state)
    out = []
    for sig in sorted(groups):
        members = groups[sig]
        out.append((sig, stats.n[members].sum(axis=0), float(stats.c[members].sum())))
    return out


def log_likelihood(stats: StateStats, params: ModelParams, machine: Machine,
                   spec: PartitionSpec) -> float:
    """Sum over states of ``n . log p(. | H)``."""
    total = 0.0
    for sig, n, _c in _grouped(machine, spec, stats):
        total += float(n @ _log_dist(params.u, params.t1, params.t2, sig))
    return total


def _free_layout(params: ModelParams) -> list[int]:
    """Gauge-fixed coordinate order: classes without the pinned one, then t1, t2."""
    K = params.collapsed.size
    return [k for k in range(K) if k != params.pinned] + [K, K + 1]


def gradient_hessian(stats: StateStats, params: ModelParams, machine: Machine,
                     spec: PartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and (negative semidefinite) hessian of the log-likelihood.

    Coordinates follow :func:`_free_layout`: per-class weights with the pinned
    coordinate removed, then the two transition boosts. Per pooled state group
    the contribution is ``d = (n - c v, J(n - c v))`` and ``-c [[V - v v', VJ' -
    v w'], [JV - w v', W - w w']]`` where ``v`` is the conditional distribution,
    ``J`` the boosted-class indicator and ``w = J v``.
    """
    K = params.collapsed.size
    dim = K + 2
    grad = np.zeros(dim)
    curv = np.zeros((dim, dim))  # accumulates the positive-definite part
    for sig, n, c in _grouped(machine, spec, stats):
        v = np.exp(_log_dist(params.u, params.t1, params.t2, sig))
        r = n - c * v
        grad[:K] += r
        w = np.zeros(2)
        for i, cls_list in enumerate(sig):
            if cls_list:
                idx = list(cls_list)
                grad[K + i] += r[idx].sum()
                w[i] = v[idx].sum()
        vv = c * np.outer(v, v)
        curv[:K, :K] += np.diag(c * v) - vv
        for i, cls_list in enumerate(sig):
            col = -c * v * w[i]
            if cls_list:
                idx = list(cls_list)
                col[idx] += c * v[idx]
            curv[:K, K + i] += col
            curv[K + i, :K] += col
        curv[K:, K:] += c * (np.diag(w) - np.outer(w, w))
    layout = _free_layout(params)
    return grad[layout], -curv[np.ix_(layout, layout)]


# --- fitting --------------------------------------------------------------------

def _pick_pinned(collapsed: CollapsedAlphabet, totals: np.ndarray) -> int:
    """Pin the catch-all class unless it never occurs, then the first label
    class with events (the model is shift-invariant in u, so any observed
    class works as the gauge)."""
    if totals[collapsed.star] > 0:
        return collapsed.star
    for k in range(collapsed.size):
        if totals[k] > 0:
            return k
    raise NumericalFitError("cannot fit a model to zero events")


def fit(machine: Machine, spec: PartitionSpec, stats: StateStats,
        t_cap: float = T_CAP, max_iter: int = MAX_ITER,
        grad_tol: float = GRAD_TOL) -> ModelParams:
    """Maximize the likelihood with damped Newton steps inside the box.

    All weights live in ``[-t_cap, t_cap]``; classes with zero total count are
    held at the floor (their gradient only ever points further down), and a
    boost with an empty edge set stays at zero. Steps are backtracked until the
    likelihood is non-decreasing; convergence is a small projected gradient.
    The result is a deterministic function of the inputs.
    """
    collapsed = stats.collapsed
    K = collapsed.size
    totals = stats.n.sum(axis=0)
    if totals.sum() <= 0:
        raise NumericalFitError("cannot fit a model to zero events")
    pinned = _pick_pinned(collapsed, totals)

    u = np.full(K, -t_cap)
    nz = totals > 0
    u[nz] = np.log(totals[nz]) - np.log(totals[pinned])
    np.clip(u, -t_cap, t_cap, out=u)
    u[pinned] = 0.0
    x = np.concatenate([u, [0.0, 0.0]])  # full layout: classes then t1, t2

    layout = [k for k in range(K) if k != pinned] + [K, K + 1]
    # coordinates allowed to move: observed classes, boosts with edges
    movable = np.zeros(K + 2, dtype=bool)
    movable[:K] = nz
    movable[pinned] = False
    movable[K] = bool(spec.c1)
    movable[K + 1] = bool(spec.c2)
    movable_in_layout = movable[layout]

    groups = _grouped(machine, spec, stats)

    def loglik(vec: np.ndarray) -> float:
        uu, tt1, tt2 = vec[:K], vec[K], vec[K + 1]
        total = 0.0
        for sig, n, _c in groups:
            total += float(n @ _log_dist(uu, tt1, tt2, sig))
        return total

    def make_params(vec: np.ndarray) -> ModelParams:
        return ModelParams(collapsed, vec[:K].copy(), float(vec[K]), float(vec[K + 1]), pinned)

    ll = loglik(x)
    if not np.isfinite(ll):
        raise NumericalFitError("non-finite likelihood at the starting point")

    for _ in range(max_iter):
        grad, hess = gradient_hessian(stats, make_params(x), machine, spec)
        if not np.all(np.isfinite(grad)):
            raise NumericalFitError("non-finite gradient during fitting")
        xl = x[layout]
        free = movable_in_layout.copy()
        # freeze coordinates pressed outward against the box
        free &= ~((xl >= t_cap) & (grad > 0)) & ~((xl <= -t_cap) & (grad < 0))
        if not free.any() or float(np.abs(grad[free]).max()) < grad_tol:
            break
        sub = np.ix_(free, free)
        step = np.linalg.solve(-hess[sub] + RIDGE * np.eye(int(free.sum())), grad[free])

        alpha = 1.0
        improved = False
        while alpha > 1e-12:
            trial = xl.copy()
            trial[free] = np.clip(trial[free] + alpha * step, -t_cap, t_cap)
            x_new = x.copy()
            x_new[layout] = trial
            ll_new = loglik(x_new)
            if not np.isfinite(ll_new):
                raise NumericalFitError("non-finite likelihood during line search")
            if ll_new >= ll:
                x, ll = x_new, ll_new
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break  # stationary under the box constraints

    return make_params(x)


# --- reach probabilities ----------------------------------------------------------

def transition_rates(machine: Machine, params: ModelParams,
                     spec: PartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-state stay probability and per-edge traversal probability."""
    sigs = boost_signatures(machine, spec, params.collapsed)
    dist_cache: dict[tuple, np.ndarray] = {}
    edge_p = np.zeros(len(machine.edges))
    stay = np.ones(machine.num_states)
    for state in range(machine.num_states):
        sig = sigs[state]
        dist = dist_cache.get(sig)
        if dist is None:
            dist = np.exp(_log_dist(params.u, params.t1, params.t2, sig))
            dist_cache[sig] = dist
        acc = 0.0
        for idx in machine.out_edges[state]:
            p = float(dist[params.collapsed.class_of(machine.edges[idx].label)])
            edge_p[idx] = p
            acc += p
        stay[state] = max(1.0 - acc, 0.0)
    return stay, edge_p


def transition_rates_from_probs(machine: Machine,
                                label_probs: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Same tables from directly given label probabilities (no fitting)."""
    edge_p = np.zeros(len(machine.edges))
    stay = np.ones(machine.num_states)
    for state in range(machine.num_states):
        acc = 0.0
        for idx in machine.out_edges[state]:
            p = label_probs.get(machine.edges[idx].label, 0.0)
            edge_p[idx] = p
            acc += p
        stay[state] = 1.0 - acc
    return stay, edge_p


def reach_table(machine: Machine, stay: np.ndarray, edge_p: np.ndarray,
                max_length: int) -> np.ndarray:
    """Distribution over states of the greedy walk after 0..max_length events.

    Row ``k`` solves ``p(H, k) = stay_H p(H, k-1) + sum over incoming edges of
    p(edge) p(src, k-1)`` from the point mass on the source.
    """
    src = np.array([e.src for e in machine.edges], dtype=np.int64)
    dst = np.array([e.dst for e in machine.edges], dtype=np.int64)
    table = np.zeros((max_length + 1, machine.num_states))
    table[0, machine.source] = 1.0
    for k in range(1, max_length + 1):
        prev = table[k - 1]
        nxt = prev * stay
        if len(src):
            np.add.at(nxt, dst, edge_p * prev[src])
        table[k] = nxt
    return table


def reach_probabilities(machine: Machine, params: ModelParams, spec: PartitionSpec,
                        max_length: int) -> np.ndarray:
    stay, edge_p = transition_rates(machine, params, spec)
    return reach_table(machine, stay, edge_p, max_length)


def sequence_log_prob(machine: Machine, params: ModelParams, spec: PartitionSpec,
                      sequence: Iterable[str]) -> float:
    """Log-probability of a concrete event sequence under the model."""
    sigs = boost_signatures(machine, spec, params.collapsed)
    log_cache: dict[tuple, np.ndarray] = {}
    state = machine.source
    total = 0.0
    for symbol in sequence:
        sig = sigs[state]
        ld = log_cache.get(sig)
        if ld is None:
            ld = _log_dist(params.u, params.t1, params.t2, sig)
            log_cache[sig] = ld
        total += float(ld[params.collapsed.class_of(symbol)])
        nxt = machine.out[state].get(symbol)
        if nxt is not None:
            state = nxt
    return total
