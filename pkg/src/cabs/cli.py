"""Batch front door: extraction, evaluation, rewards, perturbation studies,
rank analysis, MCQ tooling, and serving.

Everything is JSONL in, JSONL/CSV/JSON out, deterministic given inputs,
seeds, and the lexical backend.  Exit codes: 0 success, 2 usage, 3 input
validation, 4 backend failure.  Errors go to stderr as JSON lines.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from . import corpus, divergence, figures, mcq, metrics, service
from .core import ReportDecomposition
from .errors import BackendError, CabsError, InputError, SchemaViolation
from .grpo import ADVANTAGE_EPSILON, ObjectiveConfig, group_advantages
from .llm import LlmClient, ModelConfig, ResponseCache
from .matching import (
    LexicalMatcher,
    LlmMatcher,
    Matcher,
    default_lexicon,
    extract_units,
    match_reports,
)
from .reward import RewardConfig, tif_reward
from .surface import load_external_scores

USAGE_EXIT = 2
INPUT_EXIT = 3
BACKEND_EXIT = 4


def _emit_error(exc: CabsError) -> None:
    sys.stderr.write(json.dumps(exc.to_dict(), ensure_ascii=False) + "\n")


def _build_client(args) -> LlmClient:
    cache = ResponseCache(args.cache_dir) if args.cache_dir else None
    return LlmClient(
        ModelConfig(endpoint=args.endpoint, model=args.model), cache=cache
    )


def _build_matcher(args) -> Matcher:
    if args.matcher == "lexical":
        return LexicalMatcher()
    return LlmMatcher(_build_client(args))


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))  # order-preserving


def _resolve_gt(case: corpus.Case, matcher: Matcher) -> ReportDecomposition:
    if case.gt_units is not None:
        return case.gt_units
    if case.gt_report is None:
        raise SchemaViolation(f"case[{case.case_id}]", "needs gt_units or gt_report")
    return extract_units(case.gt_report, matcher.extractor)


def _resolve_pred(case: corpus.Case):
    if case.pred_units is not None:
        return case.pred_units
    if case.pred_report is None:
        raise SchemaViolation(f"case[{case.case_id}]", "needs pred_units or pred_report")
    return case.pred_report


# --- subcommands -------------------------------------------------------------

def cmd_extract(args) -> int:
    cases = corpus.read_cases(args.input)
    if args.extractor == "rule":
        extractor = LexicalMatcher().extractor
    else:
        extractor = LlmMatcher(_build_client(args)).extractor

    def handle(case: corpus.Case) -> dict:
        row = case.to_dict()
        if case.gt_report is not None and case.gt_units is None:
            row["gt_units"] = extract_units(case.gt_report, extractor).to_dict()
        if case.pred_report is not None and case.pred_units is None:
            row["pred_units"] = extract_units(case.pred_report, extractor).to_dict()
        return row

    corpus.write_jsonl(args.output, _parallel_map(handle, cases, args.jobs))
    return 0


def cmd_eval(args) -> int:
    cases = corpus.read_cases(args.input)
    matcher = _build_matcher(args)

    def handle(case: corpus.Case) -> tuple[str, metrics.MetricReport]:
        gt = _resolve_gt(case, matcher)
        match = match_reports(gt, _resolve_pred(case), matcher)
        return case.case_id, metrics.score_case(match, gt)

    scored = _parallel_map(handle, cases, args.jobs)
    aggregate = metrics.aggregate([r for _, r in scored], mode=args.agg)

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus.write_jsonl(
        out_dir / "per_case.jsonl",
        ({"case_id": cid, **report.to_dict()} for cid, report in scored),
    )
    (out_dir / "per_case.csv").write_text(metrics.reports_to_csv(scored), "utf-8")
    (out_dir / "aggregate.json").write_text(
        json.dumps(aggregate.to_dict(), ensure_ascii=False, indent=2), "utf-8"
    )
    if not args.no_figures:
        figures.save_metric_bars(aggregate, out_dir / "scores.png")
    print(json.dumps(aggregate.to_dict(), ensure_ascii=False))
    return 0


def cmd_reward(args) -> int:
    rows = list(corpus.read_jsonl(args.input))
    matcher = _build_matcher(args)
    cfg = RewardConfig(alpha=args.alpha, gamma=args.gamma)
    objective = ObjectiveConfig(clip_epsilon=args.clip_eps, beta=args.beta)

    def handle(indexed: tuple[int, dict]) -> dict:
        i, row = indexed
        if "gt_units" not in row or "rollouts" not in row:
            raise SchemaViolation(f"line[{i}]", "needs gt_units and rollouts")
        from .core import decomposition_from_obj

        gt = decomposition_from_obj(row["gt_units"], path=f"line[{i}].gt_units")
        rollouts = row["rollouts"]
        if not isinstance(rollouts, list):
            raise SchemaViolation(f"line[{i}].rollouts", "expected array")
        breakdowns = []
        for j, rollout in enumerate(rollouts):
            pred = (
                decomposition_from_obj(rollout, path=f"line[{i}].rollouts[{j}]")
                if isinstance(rollout, dict)
                else rollout
            )
            match = match_reports(gt, pred, matcher)
            breakdowns.append(tif_reward(match.judgments, match.fp_count, match.pred_count, cfg))
        scores = group_advantages([b.total for b in breakdowns], args.adv_epsilon)
        return {
            "case_id": row.get("case_id", str(i)),
            "rewards": [b.to_dict() for b in breakdowns],
            "advantages": list(scores.advantages),
            "mu": scores.mu,
            "sigma": scores.sigma,
            "objective": {
                "clip_epsilon": objective.clip_epsilon,
                "beta": objective.beta,
            },
        }

    corpus.write_jsonl(
        args.output, _parallel_map(handle, list(enumerate(rows)), args.jobs)
    )
    return 0


def _variant_to_dict(variant: divergence.Variant, rank: int) -> dict:
    return {
        "k": variant.k,
        "units": variant.units.to_dict(),
        "text": variant.rendered_text,
        "seed_index": variant.seed_index,
        "text_rank": rank,
    }


def cmd_perturb(args) -> int:
    cases = corpus.read_cases(args.input)
    distractors = args.distractors.split(",") if args.distractors else default_lexicon().names()
    edit_kinds = args.edits.split(",") if args.edits else list(divergence.EDIT_KINDS)
    rows = []
    for i, case in enumerate(cases):
        if case.gt_units is None:
            raise SchemaViolation(f"case[{case.case_id}]", "needs gt_units")
        pool = divergence.build_pool(
            case.gt_units,
            distractors,
            seed=args.seed + i,
            max_edits=args.max_edits,
            edits=edit_kinds,
        )
        rows.append(
            {
                "case_id": case.case_id,
                "base": pool.base.to_dict(),
                "variants": [
                    _variant_to_dict(v, r)
                    for v, r in zip(pool.variants, pool.text_ranks)
                ],
            }
        )
    corpus.write_jsonl(args.output, rows)
    return 0


def _pool_from_row(row: dict, i: int) -> tuple[str, divergence.VariantPool]:
    from .core import decomposition_from_obj

    if "base" not in row or "variants" not in row:
        raise SchemaViolation(f"line[{i}]", "needs base and variants")
    base = decomposition_from_obj(row["base"], path=f"line[{i}].base")
    variants = []
    ranks = []
    for j, v in enumerate(row["variants"]):
        units = decomposition_from_obj(v["units"], path=f"line[{i}].variants[{j}].units")
        variants.append(
            divergence.Variant(
                k=v["k"], units=units, rendered_text=v["text"], seed_index=v["seed_index"]
            )
        )
        ranks.append(v["text_rank"])
    pool = divergence.VariantPool(
        base=base, variants=tuple(variants), text_ranks=tuple(ranks)
    )
    return row.get("case_id", str(i)), pool


def cmd_analyze(args) -> int:
    if not args.pools and not args.scores:
        raise SchemaViolation("analyze", "need --pools and/or --scores")
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary: dict = {}

    if args.pools:
        per_pool = []
        phi_sums: dict[str, float] = {}
        rows = list(corpus.read_jsonl(args.pools))
        for i, row in enumerate(rows):
            case_id, pool = _pool_from_row(row, i)
            results = divergence.pool_concordance(pool)
            per_pool.append(
                {"case_id": case_id, "phi": {k: r.phi for k, r in results.items()}}
            )
            for k, r in results.items():
                phi_sums[k] = phi_sums.get(k, 0.0) + r.phi
        mean_phi = {k: v / len(rows) for k, v in phi_sums.items()}
        analysis = {"mean_phi": mean_phi, "per_pool": per_pool}
        (out_dir / "concordance.json").write_text(
            json.dumps(analysis, ensure_ascii=False, indent=2), "utf-8"
        )
        if not args.no_figures:
            figures.save_phi_bars(mean_phi, out_dir / "concordance.png")
        summary["mean_phi"] = mean_phi

    if args.scores:
        table = load_external_scores(args.scores)
        names, matrix = divergence.correlation_matrix(table)
        lines = ["metric," + ",".join(names)]
        for name, row_values in zip(names, matrix):
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in row_values))
        (out_dir / "spearman_matrix.csv").write_text("\n".join(lines) + "\n", "utf-8")
        if not args.no_figures:
            figures.save_correlation_heatmap(names, matrix, out_dir / "correlation.png")
        summary["metrics"] = names

    print(json.dumps(summary, ensure_ascii=False))
    return 0


def _load_pool_file(path: str | None, key: str) -> list[str]:
    if path is None:
        from importlib import resources

        raw = json.loads(
            resources.files("cabs.data").joinpath("mcq_distractors.json").read_text("utf-8")
        )
        return raw[key]
    return json.loads(Path(path).read_text("utf-8"))[key]


def cmd_mcq(args) -> int:
    if args.predictions:
        if not args.items:
            raise SchemaViolation("mcq", "--predictions requires --items")
        records = []
        for i, row in enumerate(corpus.read_jsonl(args.items)):
            item = mcq.item_from_obj(
                {k: row[k] for k in ("type", "question", "options", "answer")},
                path=f"line[{i}]",
            )
            records.append((row["item_id"], item))
        predictions = {}
        for row in corpus.read_jsonl(args.predictions):
            predictions[row["item_id"]] = row["answer"]
        scores = mcq.score_mcq(records, predictions)
        payload = json.dumps(scores.to_dict(), ensure_ascii=False)
        if args.output:
            Path(args.output).write_text(payload + "\n", "utf-8")
        print(payload)
        return 0

    if not args.input or not args.output:
        raise SchemaViolation("mcq", "build mode needs --input and --output")
    cases = corpus.read_cases(args.input)
    location_pool = _load_pool_file(args.pools, "locations")
    attribute_pool = _load_pool_file(args.pools, "attributes")
    corpus_names = sorted(
        {
            unit.name
            for case in cases
            if case.gt_units is not None
            for unit in case.gt_units.abnormalities
        }
    )
    rows = []
    for i, case in enumerate(cases):
        if case.gt_units is None:
            raise SchemaViolation(f"case[{case.case_id}]", "needs gt_units")
        for u_index, unit in enumerate(case.gt_units.abnormalities):
            unit_seed = args.seed + 7919 * i + u_index
            negative = mcq.sample_negative_name(
                case.gt_units.abnormalities, corpus_names, seed=unit_seed
            )
            items = mcq.build_mcq(
                unit, negative, location_pool, attribute_pool, seed=unit_seed
            )
            for item_index, item in enumerate(items):
                rows.append(
                    {
                        "case_id": case.case_id,
                        "item_id": f"{case.case_id}:{u_index}:{item_index}",
                        **item.to_dict(),
                    }
                )
    corpus.write_jsonl(args.output, rows)
    return 0


def cmd_serve(args) -> int:
    settings = service.load_settings(args.config)
    if args.bind:
        host, _, port = args.bind.rpartition(":")
        settings = replace(settings, host=host or settings.host, port=int(port))
    if args.cache_dir:
        settings = replace(settings, cache_dir=args.cache_dir)
    service.run(settings)
    return 0


# --- parser -------------------------------------------------------------------

def _add_llm_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", default="judge", help="judge model name")
    parser.add_argument(
        "--endpoint",
        default="http://localhost:8080/v1/chat/completions",
        help="chat-completion endpoint URL",
    )
    parser.add_argument("--cache-dir", default=None, help="judge response cache directory")


def _add_matcher_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--matcher", choices=("lexical", "llm"), default="lexical")
    _add_llm_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cabs", description="Clinical abnormality scoring and reward toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="decompose reports into abnormality units")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--extractor", choices=("rule", "llm"), default="rule")
    p.add_argument("--jobs", type=int, default=1)
    _add_llm_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--agg", choices=("macro", "micro"), default="macro")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    _add_matcher_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reward", help="trajectory-integral rewards for rollout groups")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--clip-eps", type=float, default=0.2, help="objective clip range, echoed in output")
    p.add_argument("--beta", type=float, default=0.04, help="objective KL weight, echoed in output")
    p.add_argument("--adv-epsilon", type=float, default=ADVANTAGE_EPSILON)
    p.add_argument("--jobs", type=int, default=1)
    _add_matcher_flags(p)
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("perturb", help="build counterfactual variant pools")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-edits", type=int, default=divergence.MAX_EDITS)
    p.add_argument(
        "--edits", default=None, help="comma-separated edit kinds (default: all)"
    )
    p.add_argument(
        "--distractors", default=None, help="comma-separated distractor names"
    )
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("analyze", help="concordance and rank-correlation analysis")
    p.add_argument("--pools", default=None, help="variant pool JSONL")
    p.add_argument("--scores", default=None, help="case_id,metric,score CSV")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mcq", help="build MCQ items or score predictions")
    p.add_argument("--input", default=None, help="decomposition JSONL (build mode)")
    p.add_argument("--output", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pools", default=None, help="JSON file with distractor pools")
    p.add_argument("--items", default=None, help="MCQ JSONL (score mode)")
    p.add_argument("--predictions", default=None, help="predictions JSONL (score mode)")
    p.set_defaults(func=cmd_mcq)

    p = sub.add_parser("serve", help="start the reward service")
    p.add_argument("--bind", default=None, help="host:port")
    p.add_argument("--config", default=None, help="JSON settings file")
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "mcq" and not args.predictions and args.seed is None:
            parser.error("mcq build mode requires --seed")
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return args.func(args)
    except InputError as exc:
        _emit_error(exc)
        return INPUT_EXIT
    except ValueError as exc:
        sys.stderr.write(
            json.dumps({"code": "invalid_value", "message": str(exc)}) + "\n"
        )
        return INPUT_EXIT
    except BackendError as exc:
        _emit_error(exc)
        return BACKEND_EXIT


if __name__ == "__main__":
    sys.exit(main())
