"""Command-line front door: generate, mine, rank, compare, explain.

Every run is deterministic given its flags: randomness flows from --seed only,
reports embed their configuration, and the volatile lines (timestamp, timing)
can be suppressed with --no-timestamp for byte-stable output.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

from . import datagen, episodes, machine as machine_mod, miner, model, ranking

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _echo(args: argparse.Namespace, keys: list[str]) -> str:
    parts = [args.command]
    for key in keys:
        parts.append(f"{key.replace('_', '-')}={getattr(args, key)}")
    return " ".join(parts)


def _load_candidates(args: argparse.Namespace, dataset: datagen.Dataset) -> miner.CandidateSet:
    candidates = miner.CandidateSet()
    for path in args.episodes or []:
        for eid, episode in episodes.load_episodes(path, auto_strictify=args.strictify):
            candidates.add(eid, episode)
    if args.mine:
        for cand in miner.mine_serial(dataset, args.min_support, args.max_len):
            candidates.add(cand.eid, cand.episode, cand.support)
        for cand in miner.mine_parallel(dataset, args.min_support, args.max_size):
            candidates.add(cand.eid, cand.episode, cand.support)
        if args.merge_intersections:
            miner.merge_serial_intersections(candidates, dataset, args.min_support)
    return candidates


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args: argparse.Namespace) -> int:
    counts = None
    if args.plant_counts:
        counts = [int(tok) for tok in args.plant_counts.split(",")]
    config = datagen.default_config(args.kind, args.seed, num_sequences=args.num_sequences,
                                    counts=counts, gap_p=args.gap_p)
    dataset = datagen.generate(config)
    datagen.save_dataset(dataset, args.out)
    if args.episodes_out:
        episodes.save_episodes(
            [(episodes.describe(spec.episode), spec.episode) for spec in config.plants],
            args.episodes_out)
    print(f"wrote {dataset.num_sequences} sequences, {dataset.total_events} events, "
          f"alphabet {len(dataset.alphabet)} to {args.out}")
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    dataset = datagen.load_sequences(args.data)
    candidates = miner.CandidateSet()
    if args.max_len >= 1:
        for cand in miner.mine_serial(dataset, args.min_support, args.max_len):
            candidates.add(cand.eid, cand.episode, cand.support)
    if args.max_size >= 1:
        for cand in miner.mine_parallel(dataset, args.min_support, args.max_size):
            candidates.add(cand.eid, cand.episode, cand.support)
    if args.merge_intersections:
        miner.merge_serial_intersections(candidates, dataset, args.min_support)
    with open(args.out, "w", encoding="utf-8") as fh:
        for cand in candidates:
            obj = {
                "id": cand.eid,
                "labels": list(cand.episode.labels),
                "edges": sorted(list(e) for e in episodes.transitive_reduction(cand.episode)),
            }
            if cand.support is not None:
                obj["support"] = cand.support
            fh.write(json.dumps(obj) + "\n")
    print(f"mined {len(candidates)} episodes to {args.out}")
    return EXIT_OK


def _default_threads() -> int:
    env = os.environ.get("EPISODERANK_THREADS")
    return int(env) if env else 1


def cmd_rank(args: argparse.Namespace) -> int:
    dataset = datagen.load_sequences(args.data)
    candidates = _load_candidates(args, dataset)
    if args.exact and dataset.num_sequences > ranking.EXACT_LIMIT:
        raise datagen.DataError(
            f"--exact supports at most {ranking.EXACT_LIMIT} sequences "
            f"(dataset has {dataset.num_sequences})")

    header = [_echo(args, ["data", "min_support", "max_len", "max_size", "exact",
                           "log10", "threads"]),
              f"candidates={len(candidates)} sequences={dataset.num_sequences}"]
    if not args.no_timestamp:
        header.append("generated-at " + datetime.now(timezone.utc).isoformat())

    t0 = time.perf_counter()
    rows, errors = ranking.rank_many([(c.eid, c.episode) for c in candidates], dataset,
                                     candidates, exact=args.exact, threads=args.threads)
    elapsed = time.perf_counter() - t0

    text = ranking.render_report(rows, header, log10=args.log10, errors=errors)
    if not args.no_timestamp:
        text += f"# timing: ranked {len(rows)} episodes in {elapsed:.2f}s (threads={args.threads})\n"
    _write(text, args.out)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    with open(args.report_a, encoding="utf-8") as fh:
        rows_a = ranking.parse_report(fh.read())
    with open(args.report_b, encoding="utf-8") as fh:
        rows_b = ranking.parse_report(fh.read())
    ids_a = {r["id"] for r in rows_a}
    ids_b = {r["id"] for r in rows_b}
    if ids_a != ids_b:
        only_a = sorted(ids_a - ids_b)[:10]
        only_b = sorted(ids_b - ids_a)[:10]
        raise datagen.DataError(
            f"reports rank different ids (only in A: {only_a}, only in B: {only_b})")

    by_id_b = {r["id"]: r for r in rows_b}
    scores_a = [(r["id"], r[args.score_a]) for r in sorted(rows_a, key=lambda r: r["id"])]
    scores_b = [(i, by_id_b[i][args.score_b]) for i, _ in scores_a]

    lines = [f"# compare {args.report_a} ({args.score_a}) vs {args.report_b} ({args.score_b})",
             f"ids\t{len(scores_a)}",
             f"tau_all\t{ranking.kendall_tau(scores_a, scores_b):.6f}"]

    if args.episodes:
        loaded = dict(episodes.load_episodes(args.episodes, auto_strictify=True))
        par2 = [i for i, _ in scores_a
                if i in loaded and loaded[i].n == 2 and not loaded[i].edges]
        large = [i for i, _ in scores_a if i in loaded and loaded[i].n > 2]
        for name, members in (("tau_parallel2", set(par2)), ("tau_large", set(large))):
            sub_a = [(i, s) for i, s in scores_a if i in members]
            sub_b = [(i, s) for i, s in scores_b if i in members]
            tau = ranking.kendall_tau(sub_a, sub_b) if len(sub_a) >= 2 else math.nan
            lines.append(f"{name}\t{tau:.6f}" if not math.isnan(tau) else f"{name}\tnan")

    score_b_map = dict(scores_b)
    pairs = []
    for i, sa in scores_a:
        rho, eta = ranking.rho_eta(sa, score_b_map[i])
        pairs.append((i, rho, eta))
    finite_rho = sorted((p for p in pairs if math.isfinite(p[1])),
                        key=lambda p: (-p[1], p[0]))
    lines.append(f"top_rho (k={args.top_k})")
    for i, rho, _ in finite_rho[:args.top_k]:
        lines.append(f"  {i}\t{rho:.6g}")
    # eta only where the second model still underestimates the support
    eligible = {r["id"] for r in rows_b if r["support"] >= r["mu_part"]}
    finite_eta = sorted((p for p in pairs if math.isfinite(p[2]) and p[0] in eligible),
                        key=lambda p: (-p[2], p[0]))
    lines.append(f"top_eta (k={args.top_k}, support >= expected)")
    for i, _, eta in finite_eta[:args.top_k]:
        lines.append(f"  {i}\t{eta:.6g}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    dataset = datagen.load_sequences(args.data)
    candidates = _load_candidates(args, dataset)
    target = next((c for c in candidates if c.eid == args.id), None)
    if target is None:
        raise datagen.DataError(f"unknown episode id {args.id!r}")

    mach = machine_mod.build_machine(target.episode)
    lines = [f"episode {target.eid}: {episodes.describe(target.episode)}",
             machine_mod.render_machine(mach)]
    masks = episodes.prefix_graphs(target.episode)
    rendered = ", ".join(
        "{" + ",".join(target.episode.labels[v] for v in range(target.episode.n)
                       if m >> v & 1) + "}" for m in masks)
    lines.append(f"prefix graphs ({len(masks)}): {rendered}")

    if args.block_w is not None:
        w_mask = 0
        for tok in args.block_w.split(","):
            w_mask |= 1 << int(tok)
        if w_mask not in masks and not args.allow_non_prefix:
            raise datagen.DataError(
                "--block-w is not a prefix graph (pass --allow-non-prefix to force)")
        edge_set = machine_mod.block_prefix(mach, w_mask)
        lines.append(machine_mod.render_machine(mach, {"block_w": edge_set}).splitlines()[-1])

    result = ranking.rank_episode(target.eid, target.episode, dataset, candidates,
                                  exact=args.exact, keep_evaluations=True)
    scale = math.log(10.0) if args.log10 else 1.0
    for ev in result.evaluations:
        r = ev.result
        detail = f"mu={r.mu:.6g} rank={r.rank / scale:.6g} method={r.method}"
        if ev.params is not None:
            weights = ",".join(f"{lab}:{w:.4g}" for lab, w in
                               zip(ev.params.collapsed.classes, ev.params.u))
            detail += f" u={{{weights}}} t1={ev.params.t1:.4g} t2={ev.params.t2:.4g}"
        lines.append(f"model {ev.explainer}: {detail}")
    lines.append(f"support {result.support}")
    lines.append(f"winner {result.part.explainer}: rank_part={result.part.rank / scale:.6g} "
                 f"rank_ind={result.ind.rank / scale:.6g}")
    if all(ev.spec.is_empty for ev in result.evaluations):
        lines.append("note: every partition of this episode equals the independence model")
    _write("\n".join(lines) + "\n", args.out)

    if args.dump_model:
        winner = next((ev for ev in result.evaluations
                       if ev.explainer == result.part.explainer), result.evaluations[0])
        params = winner.params.to_dict() if winner.params else {}
        sys.stdout.write(json.dumps(params, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="episoderank")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded synthetic corpus")
    p.add_argument("--kind", choices=("plant", "plant2", "gap"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--num-sequences", type=int, default=None)
    p.add_argument("--gap-p", type=float, default=0.0)
    p.add_argument("--plant-counts", default=None,
                   help="comma-separated occurrence counts, one per pattern")
    p.add_argument("--episodes-out", default=None,
                   help="also write the planted episodes as JSONL")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mine", help="mine frequent serial/parallel episodes")
    p.add_argument("--data", required=True)
    p.add_argument("--min-support", type=int, default=10)
    p.add_argument("--max-len", type=int, default=3, help="serial length cap (0 disables)")
    p.add_argument("--max-size", type=int, default=2, help="parallel size cap (0 disables)")
    p.add_argument("--merge-intersections", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("rank", help="rank candidate episodes against the corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--episodes", action="append", default=[],
                   help="candidate episode JSONL (repeatable)")
    p.add_argument("--strictify", action="store_true",
                   help="auto-repair non-strict episodes on load")
    p.add_argument("--mine", action="store_true", help="also mine candidates")
    p.add_argument("--min-support", type=int, default=10)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--max-size", type=int, default=2)
    p.add_argument("--merge-intersections", action="store_true")
    p.add_argument("--exact", action="store_true", help="exact tail instead of approximations")
    p.add_argument("--log10", action="store_true", help="display ranks in log10")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("compare", help="compare two rank reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--score-a", default="rank_part",
                   choices=("rank_ind", "rank_part"))
    p.add_argument("--score-b", default="rank_part",
                   choices=("rank_ind", "rank_part"))
    p.add_argument("--episodes", default=None, help="episode JSONL for per-stratum tau")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("explain", help="show the machine and every partition model")
    p.add_argument("--data", required=True)
    p.add_argument("--episodes", action="append", default=[], required=True)
    p.add_argument("--strictify", action="store_true")
    p.add_argument("--mine", action="store_true")
    p.add_argument("--min-support", type=int, default=10)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--max-size", type=int, default=2)
    p.add_argument("--merge-intersections", action="store_true")
    p.add_argument("--id", required=True)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--log10", action="store_true")
    p.add_argument("--block-w", default=None,
                   help="comma-separated vertex ids: show the boosted edge set for W")
    p.add_argument("--allow-non-prefix", action="store_true",
                   help="expert: allow --block-w sets that are not prefix graphs")
    p.add_argument("--dump-model", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except model.NumericalFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (datagen.DataError, episodes.EpisodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
