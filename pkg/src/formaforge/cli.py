"""Command-line entry points for the pipeline stages.

Endpoints and the checker kind come from a YAML config (--config); every
command works fully offline when the config declares mock endpoints backed
by response scripts.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import evaluation, records, rollout
from .consistency import (
    CCRequest,
    check_consistency,
    qualify_recall,
    qualify_specificity,
    strip_comments_and_metadata,
)
from .curation import DEFAULT_MAX_CHARS, build_dataset
from .endpoints import PipelineConfig, build_endpoint, load_config
from .grpo import GrpoConfig
from .leancheck import CheckRequest, pool_from_config
from .mocks import MockChecker
from .rewards import REWARD_MODES, RewardConfig, RewardEngine


def _config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return load_config(path)


def _endpoint(cfg: PipelineConfig, name: str):
    return build_endpoint(cfg.endpoint_spec(name), max_in_flight=cfg.max_in_flight)


def _checker(cfg: PipelineConfig):
    if cfg.checker == "mock":
        return MockChecker()
    if cfg.checker == "repl":
        return pool_from_config(cfg.lean)
    raise click.ClickException(f"unknown checker kind {cfg.checker!r}")


def _read_jsonl(path: str) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise click.ClickException(f"{path}:{lineno}: malformed JSON: {exc}")
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config declaring endpoints and the checker.")
@click.option("-v", "--verbose", is_flag=True, help="Log at INFO level.")
@click.pass_context
def main(ctx, config_path, verbose):
    """Autoformalization reward, rollout, evaluation, and curation pipeline."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
    )
    ctx.obj = _config(config_path)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL of {id, code} records to check.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--jobs", type=int, default=4, show_default=True)
@click.pass_obj
def check(cfg: PipelineConfig, input_path, out_path, timeout, jobs):
    """Syntax-check candidate statements against the Lean toolchain."""
    rows = _read_jsonl(input_path)
    checker = _checker(cfg)
    try:
        reqs = [
            CheckRequest(candidate_id=str(r.get("id", i)), code=r["code"], timeout=timeout)
            for i, r in enumerate(rows)
        ]
        verdicts = checker.check_batch(reqs, parallelism=jobs)
    finally:
        checker.close()
    with open(out_path, "w", encoding="utf-8") as fh:
        for req, verdict in zip(reqs, verdicts):
            fh.write(json.dumps({
                "id": req.candidate_id,
                "status": verdict.status,
                "diagnostics": [d.to_json_obj() for d in verdict.diagnostics],
            }, ensure_ascii=False) + "\n")
    passes = sum(1 for v in verdicts if v.status == "pass")
    click.echo(f"checked {len(verdicts)} statements: {passes} pass")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSONL of {nl, fl} records to judge.")
@click.option("--judge", "judge_name", required=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_obj
def cc(cfg: PipelineConfig, input_path, judge_name, out_path):
    """Run the consistency check on (natural language, formal) pairs."""
    judge = _endpoint(cfg, judge_name)
    rows = _read_jsonl(input_path)
    sink = open(out_path, "w", encoding="utf-8") if out_path else sys.stdout
    try:
        for row in rows:
            verdict = check_consistency(
                CCRequest(row["nl"], strip_comments_and_metadata(row["fl"]), judge)
            )
            sink.write(json.dumps({
                "nl": row["nl"],
                "fl": row["fl"],
                "verdict": verdict.verdict,
                "judge": verdict.judge_identity,
            }, ensure_ascii=False) + "\n")
    finally:
        if out_path:
            sink.close()


@main.command("qualify-cc")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="JSONL of {nl, fl} ground-truth pairs.")
@click.option("--judge", "judge_name", required=True)
@click.option("--generator", "generator_name", required=True)
@click.pass_obj
def qualify_cc(cfg: PipelineConfig, pairs_path, judge_name, generator_name):
    """Estimate judge recall on ground truth and specificity on perturbed
    statements."""
    judge = _endpoint(cfg, judge_name)
    generator = _endpoint(cfg, generator_name)
    pairs = [(row["nl"], row["fl"]) for row in _read_jsonl(pairs_path)]
    recall = qualify_recall(pairs, judge)
    specificity = qualify_specificity(pairs, generator, judge)
    click.echo(json.dumps({
        "recall": recall.rate,
        "recall_accepted": recall.positives,
        "recall_total": recall.total,
        "specificity": specificity.rate,
        "specificity_rejected": specificity.positives,
        "specificity_total": specificity.total,
        "specificity_skipped": specificity.skipped,
    }))


_PROMPT_STATEMENT_MARKER = "### Natural Language Problem\n"


def _statement_from_prompt(prompt: str) -> str:
    # The rollout prompt is the formalization template with the statement
    # substituted at the end, so the suffix after the section header is the
    # original statement.
    idx = prompt.rfind(_PROMPT_STATEMENT_MARKER)
    if idx == -1:
        raise click.ClickException("cannot recover statement from prompt; pass --problems")
    return prompt[idx + len(_PROMPT_STATEMENT_MARKER):].rstrip("\n")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Rollout batch JSONL to rescore.")
@click.option("--mode", type=click.Choice(REWARD_MODES), default="sc_and_cc", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--judge", "judge_name", default=None, help="Judge endpoint (needed unless --mode sc_only).")
@click.option("--problems", "problems_path", default=None, type=click.Path(exists=True),
              help="Problem file to resolve statements; defaults to recovering them from prompts.")
@click.option("--std-floor", type=float, default=0.0, show_default=True)
@click.pass_obj
def reward(cfg: PipelineConfig, input_path, mode, out_path, judge_name, problems_path, std_floor):
    """Rescore a rollout batch under a reward mode and refresh advantages."""
    groups = records.load_rollout_batch(input_path)
    statements = {}
    if problems_path:
        statements = {p.id: p.statement for p in records.load_problem_file(problems_path)}
    judge = _endpoint(cfg, judge_name) if judge_name else None
    checker = _checker(cfg) if mode != "cc_only" else None
    engine = RewardEngine(RewardConfig(mode=mode, cc_judge=judge_name or ""), checker=checker, judge=judge)
    grpo_cfg = GrpoConfig(std_floor=std_floor)
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            for group in groups:
                statement = statements.get(group.problem_id) or _statement_from_prompt(group.prompt)
                verdicts = engine.score_group(group.candidates, statement)
                group.rewards = [v.reward for v in verdicts]
                from .grpo import group_advantages

                group.advantages = group_advantages(group.rewards, grpo_cfg)
                obj = group.to_json_obj()
                obj["verdicts"] = [v.to_json_obj() for v in verdicts]
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    finally:
        if checker is not None:
            checker.close()
    click.echo(f"rescored {len(groups)} groups under {mode}")


@main.command("rollout")
@click.option("--problems", "problems_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--endpoint", "endpoint_name", required=True, help="Sampling endpoint name.")
@click.option("--judge", "judge_name", default=None)
@click.option("--group-size", type=int, default=4, show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--max-tokens", type=int, default=2048, show_default=True)
@click.option("--mode", type=click.Choice(REWARD_MODES), default="sc_and_cc", show_default=True)
@click.option("--parallelism", type=int, default=8, show_default=True)
@click.option("--clip-epsilon", type=float, default=0.2, show_default=True)
@click.option("--std-floor", type=float, default=0.0, show_default=True)
@click.option("--run-id", default=None)
@click.pass_obj
def rollout_cmd(cfg: PipelineConfig, problems_path, out_path, endpoint_name, judge_name,
                group_size, temperature, max_tokens, mode, parallelism,
                clip_epsilon, std_floor, run_id):
    """Sample G candidates per problem, score them, and write the batch."""
    problems = records.load_problem_file(problems_path)
    endpoint = _endpoint(cfg, endpoint_name)
    judge = _endpoint(cfg, judge_name) if judge_name else None
    checker = _checker(cfg) if mode != "cc_only" else None
    engine = RewardEngine(RewardConfig(mode=mode, cc_judge=judge_name or ""), checker=checker, judge=judge)
    sampling = rollout.SamplingConfig(
        group_size=group_size, temperature=temperature, max_completion_tokens=max_tokens
    )
    grpo_cfg = GrpoConfig(clip_epsilon=clip_epsilon, std_floor=std_floor)
    try:
        groups, manifest = rollout.run_rollout(
            problems, endpoint, engine, sampling, grpo_cfg, out_path,
            parallelism=parallelism, run_id=run_id,
        )
    finally:
        if checker is not None:
            checker.close()
    click.echo(f"wrote {len(groups)} groups to {out_path} (run {manifest.run_id})")


@main.command("eval")
@click.option("--problems", "problems_path", required=True, type=click.Path(exists=True))
@click.option("--k", "k_values", default="1", show_default=True,
              help="Comma-separated k values; candidates are sampled once at max(k).")
@click.option("--endpoint", "endpoint_name", required=True)
@click.option("--judge", "judge_name", required=True)
@click.option("--report", "report_format", type=click.Choice(["md", "csv"]), default="md", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--label", default="eval", show_default=True)
@click.option("--temperature", type=float, default=0.6, show_default=True,
              help="Sampling temperature at evaluation time (defaults to the judge-documented settings).")
@click.pass_obj
def eval_cmd(cfg: PipelineConfig, problems_path, k_values, endpoint_name, judge_name,
             report_format, out_dir, label, temperature):
    """Evaluate pass@k and emit a report plus the full verdict table."""
    ks = sorted({int(v) for v in k_values.split(",") if v.strip()})
    if not ks:
        raise click.ClickException("--k needs at least one value")
    problems = records.load_problem_file(problems_path)
    endpoint = _endpoint(cfg, endpoint_name)
    judge = _endpoint(cfg, judge_name)
    checker = _checker(cfg)
    sampling = rollout.SamplingConfig(
        group_size=max(2, max(ks)), temperature=temperature
    )
    try:
        table = evaluation.collect_verdicts(
            problems, max(ks), endpoint, checker, judge, sampling=sampling
        )
    finally:
        checker.close()
    results = [evaluation.result_from_table(table, k, label=label) for k in ks]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_verdict_table(table, out_dir / "verdicts.jsonl")
    fmt = "markdown_table" if report_format == "md" else "csv"
    report = evaluation.render_report(results, format=fmt)
    report_path = out_dir / ("report.md" if report_format == "md" else "report.csv")
    report_path.write_text(report, encoding="utf-8")
    click.echo(report)


@main.command()
@click.option("--docs", "docs_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of .md files.")
@click.option("--category-map", "category_map_path", required=True, type=click.Path(exists=True),
              help="JSON or YAML mapping doc filename (stem) to category.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--extractor", "extractor_name", required=True)
@click.option("--validator", "validator_name", required=True)
@click.option("--max-chars", type=int, default=DEFAULT_MAX_CHARS, show_default=True)
@click.option("--holdout", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--run-id", default=None)
@click.pass_obj
def curate(cfg: PipelineConfig, docs_dir, category_map_path, out_path, extractor_name,
           validator_name, max_chars, holdout, seed, run_id):
    """Build a problem file from markdown textbook content."""
    import yaml

    with open(category_map_path, encoding="utf-8") as fh:
        category_map = yaml.safe_load(fh) or {}
    docs = []
    for path in sorted(Path(docs_dir).glob("*.md")):
        doc_id = path.stem
        if doc_id not in category_map:
            raise click.ClickException(f"no category for document {doc_id!r}")
        docs.append((doc_id, path.read_text(encoding="utf-8"), category_map[doc_id]))
    extractor = _endpoint(cfg, extractor_name)
    validator = _endpoint(cfg, validator_name)
    problems, manifest = build_dataset(
        docs, extractor, validator, out_path,
        max_chars=max_chars, holdout=holdout, seed=seed, run_id=run_id,
    )
    click.echo(
        f"curated {len(problems)} problems from {len(docs)} docs "
        f"(counts: {manifest.metrics})"
    )


if __name__ == "__main__":
    main()
