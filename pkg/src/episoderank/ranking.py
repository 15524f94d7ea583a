"""Turning cover probabilities into surprise ranks.

The observed support is a sum of independent per-sequence Bernoulli indicators
whose success probabilities depend only on sequence length, so its exact law is
Poisson-binomial. The rank of an episode under a model is the negative log
survival probability of the observed support; large rank = the model considers
the support abnormally high. The combined rank takes the best explanation over
all prefix partitions and all same-vertex stricter candidates.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent import futures
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr
from scipy.stats import kendalltau as _scipy_kendalltau

from .datagen import Dataset
from .episodes import Episode, EpisodeError, prefix_graphs
from .machine import Machine, block_prefix, block_super, build_machine
from .miner import CandidateSet
from .model import (
    EMPTY_SPEC,
    ModelParams,
    PartitionSpec,
    collapse_alphabet,
    collect_statistics,
    fit,
    reach_table,
    transition_rates,
)

POISSON_MU_MAX = 10.0  # below this the normal approximation is unreliable
EXACT_LIMIT = 5_000
INDEPENDENCE = "independence"


@dataclass
class CoverProbabilities:
    """Model probability of covering the episode, per sequence length."""

    p_by_length: dict[int, float]
    length_counts: dict[int, int]

    @property
    def mu(self) -> float:
        return sum(c * self.p_by_length[k] for k, c in self.length_counts.items())

    @property
    def sigma2(self) -> float:
        return sum(c * self.p_by_length[k] * (1.0 - self.p_by_length[k])
                   for k, c in self.length_counts.items())

    def per_sequence(self) -> list[float]:
        out = []
        for k in sorted(self.length_counts):
            out.extend([self.p_by_length[k]] * self.length_counts[k])
        return out


def cover_probabilities(machine: Machine, params: ModelParams, spec: PartitionSpec,
                        dataset: Dataset) -> CoverProbabilities:
    """One reach recursion up to the longest sequence; read off the sink row."""
    counts = dataset.length_counts()
    if not counts:
        return CoverProbabilities({}, {})
    stay, edge_p = transition_rates(machine, params, spec)
    table = reach_table(machine, stay, edge_p, max(counts))
    sink = table[:, machine.sink]
    return CoverProbabilities({k: float(sink[k]) for k in counts}, dict(counts))


# --- tail probabilities -----------------------------------------------------------

def tail_exact(probs, n: int) -> float:
    """Log survival P(sum of Bernoulli(p_i) >= n), by count DP in log space.

    Mass reaching n successes is absorbed as it appears, so the result is a sum
    of positive terms and stays accurate even when astronomically small.
    """
    m = len(probs)
    if n <= 0:
        return 0.0
    if n > m:
        return -math.inf
    with np.errstate(divide="ignore"):
        log_p = np.log(np.asarray(probs, dtype=float))
        log_q = np.log1p(-np.asarray(probs, dtype=float))
    log_f = np.full(n, -np.inf)
    log_f[0] = 0.0  # log P(j successes so far), j = 0..n-1
    absorbed = -np.inf
    for lp, lq in zip(log_p, log_q):
        absorbed = np.logaddexp(absorbed, log_f[n - 1] + lp)
        if n > 1:
            log_f[1:] = np.logaddexp(log_f[1:] + lq, log_f[:-1] + lp)
        log_f[0] += lq
    return float(absorbed)


def tail_normal(mu: float, sigma2: float, n: float) -> float:
    """Log survival of N(mu, sigma2) above n - 1/2 (continuity corrected).

    ``log_ndtr`` keeps full accuracy far into the tail, where the survival
    probability itself would underflow long before z reaches the hundreds.
    """
    if sigma2 <= 0.0:
        return 0.0 if n <= mu else -math.inf
    z = (n - 0.5 - mu) / math.sqrt(sigma2)
    return float(log_ndtr(-z))


def tail_poisson(mu: float, n: int) -> float:
    """Log survival P(Poisson(mu) >= n), stable deep into the upper tail."""
    if n <= 0:
        return 0.0
    if mu <= 0.0:
        return -math.inf
    if n <= mu:
        # survival is order one; the short lower sum has no cancellation issue
        k = np.arange(n)
        log_pmf = -mu + k * math.log(mu) - gammaln(k + 1)
        m = log_pmf.max()
        cdf = math.exp(m) * float(np.exp(log_pmf - m).sum())
        return math.log1p(-cdf) if cdf < 1.0 else -math.inf
    # direct series sum_{k>=n} pmf(k): decreasing terms, geometric remainder bound
    log_mu = math.log(mu)
    log_term = -mu + n * log_mu - float(gammaln(n + 1))
    acc = log_term
    k = n
    while True:
        k += 1
        log_term += log_mu - math.log(k)
        acc = np.logaddexp(acc, log_term)
        ratio = mu / (k + 1)
        if log_term + math.log(ratio / (1.0 - ratio)) < acc + math.log(1e-17):
            break
    return float(acc)


# --- ranks -------------------------------------------------------------------------

@dataclass
class RankResult:
    mu: float
    sigma2: float
    observed: int
    rank: float  # -log survival, natural log
    method: str  # exact | normal | poisson
    explainer: str
    zscore: float | None = None


def rank(machine: Machine, params: ModelParams, spec: PartitionSpec, dataset: Dataset,
         observed: int, exact: bool = False, exact_limit: int = EXACT_LIMIT,
         explainer: str = INDEPENDENCE) -> RankResult:
    """Rank the observed support against the model's support distribution.

    Uses the Poisson approximation when the expected support is small (at most
    10), the corrected normal approximation otherwise, or the exact
    Poisson-binomial law on request.
    """
    cp = cover_probabilities(machine, params, spec, dataset)
    return rank_from_cover(cp, observed, exact=exact, exact_limit=exact_limit,
                           explainer=explainer)


def rank_from_cover(cp: CoverProbabilities, observed: int, exact: bool = False,
                    exact_limit: int = EXACT_LIMIT, explainer: str = INDEPENDENCE) -> RankResult:
    mu, sigma2 = cp.mu, cp.sigma2
    zscore = (observed - 0.5 - mu) / math.sqrt(sigma2) if sigma2 > 0 else None
    if exact:
        probs = cp.per_sequence()
        if len(probs) > exact_limit:
            raise EpisodeError(
                f"exact tail limited to {exact_limit} sequences, dataset has {len(probs)}")
        method, log_surv = "exact", tail_exact(probs, observed)
    elif mu <= POISSON_MU_MAX:
        method, log_surv = "poisson", tail_poisson(mu, observed)
    else:
        method, log_surv = "normal", tail_normal(mu, sigma2, observed)
    if observed <= 0:
        log_surv = 0.0  # P(X >= 0) = 1 identically
    return RankResult(mu, sigma2, observed, max(0.0, -log_surv), method, explainer, zscore)


@dataclass
class SpecEvaluation:
    explainer: str
    spec: PartitionSpec
    params: ModelParams | None
    result: RankResult


@dataclass
class EpisodeRanking:
    eid: str
    episode: Episode
    support: int
    ind: RankResult
    part: RankResult
    evaluations: list[SpecEvaluation] = field(default_factory=list)

    @property
    def rho_eta(self) -> tuple[float, float]:
        return rho_eta(self.ind.rank, self.part.rank)


def _prefix_label_set(machine: Machine, mask: int) -> str:
    labels = [machine.episode.labels[v] for v in range(machine.episode.n) if mask >> v & 1]
    return "{" + ",".join(labels) + "}"


def rank_episode(eid: str, episode: Episode, dataset: Dataset,
                 candidates: CandidateSet | None = None, exact: bool = False,
                 keep_evaluations: bool = False) -> EpisodeRanking:
    """Full pipeline for one episode: statistics, every partition model, both ranks.

    Statistics are collected once and reused by every model; prefix partitions
    whose boosted sets are both empty are the independence model and reuse its
    cached rank instead of refitting.
    """
    machine = build_machine(episode)
    collapsed = collapse_alphabet(dataset.alphabet, episode)
    stats, observed = collect_statistics(machine, dataset, collapsed)

    if stats.total_events() == 0:
        zero = RankResult(0.0, 0.0, observed, 0.0, "poisson", INDEPENDENCE)
        return EpisodeRanking(eid, episode, observed, zero, zero)

    params0 = fit(machine, EMPTY_SPEC, stats)
    ind = rank(machine, params0, EMPTY_SPEC, dataset, observed, exact=exact)
    evaluations = [SpecEvaluation(INDEPENDENCE, EMPTY_SPEC, params0, ind)]

    full_mask = (1 << episode.n) - 1
    best: RankResult | None = None
    for w_mask in prefix_graphs(episode):
        if w_mask == 0 or w_mask == full_mask:
            continue
        spec = PartitionSpec(block_prefix(machine, w_mask),
                             block_prefix(machine, full_mask ^ w_mask))
        if spec.is_empty:
            cand = ind  # boosting nothing: this partition is the independence model
            if keep_evaluations:
                evaluations.append(SpecEvaluation(
                    f"prefix:{_prefix_label_set(machine, w_mask)}", spec, params0, ind))
        else:
            params = fit(machine, spec, stats)
            cand = rank(machine, params, spec, dataset, observed, exact=exact,
                        explainer=f"prefix:{_prefix_label_set(machine, w_mask)}")
            if keep_evaluations:
                evaluations.append(SpecEvaluation(cand.explainer, spec, params, cand))
        if best is None or cand.rank < best.rank:
            best = cand

    if candidates is not None:
        for sup in candidates.superepisodes_of(episode):
            spec = PartitionSpec(block_super(machine, sup.episode), frozenset())
            params = fit(machine, spec, stats)
            cand = rank(machine, params, spec, dataset, observed, exact=exact,
                        explainer=f"super:{sup.eid}")
            if keep_evaluations:
                evaluations.append(SpecEvaluation(cand.explainer, spec, params, cand))
            if best is None or cand.rank < best.rank:
                best = cand

    part = best if best is not None else ind
    return EpisodeRanking(eid, episode, observed, ind, part,
                          evaluations if keep_evaluations else [])


def rank_combined(episode: Episode, dataset: Dataset,
                  candidates: CandidateSet | None = None, exact: bool = False) -> RankResult:
    """Smallest rank over all prefix partitions and same-vertex stricter candidates."""
    return rank_episode("", episode, dataset, candidates, exact=exact).part


def rho_eta(r_ind: float, r_part: float) -> tuple[float, float]:
    """Relative rank drops in both directions; infinite sentinels on zero bases."""
    if r_ind == r_part:
        return 0.0, 0.0
    rho = (r_ind - r_part) / r_part if r_part != 0.0 else math.inf * (r_ind - r_part)
    eta = (r_part - r_ind) / r_ind if r_ind != 0.0 else math.inf * (r_part - r_ind)
    return rho, eta


def kendall_tau(ranking_a: list[tuple[str, float]], ranking_b: list[tuple[str, float]]) -> float:
    """Tie-corrected (tau-b) correlation of two scorings of the same ids.

    All-tied inputs score 0; fewer than two items gives the NaN sentinel.
    """
    ids_a = {i for i, _ in ranking_a}
    ids_b = {i for i, _ in ranking_b}
    if ids_a != ids_b:
        raise ValueError("rankings must cover the same ids")
    if len(ranking_a) < 2:
        return math.nan
    score_b = dict(ranking_b)
    xs = [s for _, s in ranking_a]
    ys = [score_b[i] for i, _ in ranking_a]
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        return 0.0
    return float(_scipy_kendalltau(xs, ys).statistic)


# --- batch ranking -----------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(dataset: Dataset, candidates: CandidateSet | None, exact: bool) -> None:
    _WORKER["dataset"] = dataset
    _WORKER["candidates"] = candidates
    _WORKER["exact"] = exact


def _rank_chunk(chunk: list[tuple[str, Episode]]):
    out = []
    for eid, episode in chunk:
        try:
            out.append(rank_episode(eid, episode, _WORKER["dataset"],
                                    _WORKER["candidates"], exact=_WORKER["exact"]))
        except EpisodeError as exc:
            out.append((eid, str(exc)))
    return out


def rank_many(episodes: list[tuple[str, Episode]], dataset: Dataset,
              candidates: CandidateSet | None = None, exact: bool = False,
              threads: int = 1) -> tuple[list[EpisodeRanking], list[tuple[str, str]]]:
    """Rank a batch of episodes, optionally across worker processes.

    Results come back in input order whatever the schedule; per-episode size
    failures are collected instead of aborting the batch.
    """
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:  # platform without fork: run in-process
        ctx = None
    if threads <= 1 or len(episodes) < 4 or ctx is None:
        raw = [_rank_one_safe(eid, ep, dataset, candidates, exact) for eid, ep in episodes]
    else:
        stride = threads * 4
        chunks = [episodes[i::stride] for i in range(stride)]
        with futures.ProcessPoolExecutor(
                max_workers=threads, mp_context=ctx,
                initializer=_init_worker, initargs=(dataset, candidates, exact)) as pool:
            chunk_results = list(pool.map(_rank_chunk, chunks))
        # stitch the strided chunks back into input order
        raw = [None] * len(episodes)
        for start, results in enumerate(chunk_results):
            for within, value in enumerate(results):
                raw[start + within * stride] = value

    rows: list[EpisodeRanking] = []
    errors: list[tuple[str, str]] = []
    for value in raw:
        if isinstance(value, EpisodeRanking):
            rows.append(value)
        else:
            errors.append(value)  # type: ignore[arg-type]
    return rows, errors


def _rank_one_safe(eid, episode, dataset, candidates, exact):
    try:
        return rank_episode(eid, episode, dataset, candidates, exact=exact)
    except EpisodeError as exc:
        return (eid, str(exc))


# --- report ------------------------------------------------------------------------

REPORT_COLUMNS = ("id", "support", "mu_ind", "rank_ind", "mu_part", "rank_part",
                  "method", "explainer", "rho", "eta")


def _fmt(x: float, log10: bool = False) -> str:
    if log10:
        x = x / math.log(10.0) if math.isfinite(x) else x
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def sort_rows(rows: list[EpisodeRanking]) -> list[EpisodeRanking]:
    return sorted(rows, key=lambda r: (-r.part.rank, -r.ind.rank, r.eid))


def render_report(rows: list[EpisodeRanking], header_lines: list[str] = (),
                  log10: bool = False, errors: list[tuple[str, str]] = ()) -> str:
    """Deterministic TSV: one row per episode, worst-explained first."""
    lines = [f"# {h}" for h in header_lines]
    lines.append("\t".join(REPORT_COLUMNS))
    for r in sort_rows(rows):
        rho, eta = r.rho_eta
        lines.append("\t".join((
            r.eid,
            str(r.support),
            _fmt(r.ind.mu),
            _fmt(r.ind.rank, log10),
            _fmt(r.part.mu),
            _fmt(r.part.rank, log10),
            r.part.method,
            r.part.explainer,
            _fmt(rho),
            _fmt(eta),
        )))
    for eid, msg in errors:
        lines.append(f"# skipped {eid}: {msg}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> list[dict]:
    """Read back the TSV produced by :func:`render_report`."""
    rows = []
    header: list[str] | None = None
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if header is None:
            header = parts
            continue
        row = dict(zip(header, parts))
        row["support"] = int(row["support"])
        for col in ("mu_ind", "rank_ind", "mu_part", "rank_part", "rho", "eta"):
            row[col] = float(row[col])
        rows.append(row)
    return rows
