"""Textbook-to-problem curation: chunk markdown, extract problems with an
LLM, validate them with a second LLM pass, dedup, and write the problem
file.

Chunking splits preferentially at heading boundaries, then paragraph
boundaries, and never inside display math or fenced code; a single
indivisible block longer than the budget becomes its own oversized chunk.
Extraction and validation render the curation prompt templates verbatim.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .consistency import extract_boxed_answer
from .endpoints import EndpointError
from .records import (
    Problem,
    RunManifest,
    append_manifest,
    problem_id_for,
    write_problem_file,
)

log = logging.getLogger("formaforge.curation")

DEFAULT_MAX_CHARS = 6000
MIN_MAX_CHARS = 512

_HEADING_RE = re.compile(r"#{1,6}\s")


@dataclass
class Chunk:
    doc_id: str
    index: int
    text: str
    char_span: tuple[int, int]


@dataclass
class _Block:
    start: int
    end: int
    is_heading: bool


def _segment_blocks(doc: str) -> list[_Block]:
    """Split into contiguous blocks covering the document: headings start
    blocks, blank lines end paragraphs, and display-math / fenced regions
    are atomic."""
    blocks: list[_Block] = []
    cur_start = 0
    cur_has_content = False
    cur_is_heading = False
    pending_break = False
    in_fence = False
    in_math = False
    pos = 0
    for line in doc.splitlines(keepends=True):
        stripped = line.strip()
        protected = in_fence or in_math
        starts_heading = not protected and _HEADING_RE.match(line) is not None
        is_blank = stripped == "" and not protected
        if (pending_break and not is_blank) or (starts_heading and cur_has_content):
            blocks.append(_Block(cur_start, pos, cur_is_heading))
            cur_start = pos
            cur_has_content = False
            cur_is_heading = False
            pending_break = False
        if starts_heading:
            cur_is_heading = True
        if is_blank:
            if cur_has_content:
                pending_break = True
        else:
            cur_has_content = True
        if not in_math and stripped.startswith("```"):
            in_fence = not in_fence
        elif not in_fence and line.count("$$") % 2 == 1:
            in_math = not in_math
        pos += len(line)
    if pos < len(doc) or cur_start < len(doc) or not blocks:
        blocks.append(_Block(cur_start, len(doc), cur_is_heading))
    return blocks


def chunk_markdown(doc: str, max_chars: int = DEFAULT_MAX_CHARS, doc_id: str = "doc") -> list[Chunk]:
    if max_chars < MIN_MAX_CHARS:
        raise ValueError(f"max_chars must be >= {MIN_MAX_CHARS}, got {max_chars}")
    blocks = _segment_blocks(doc)
    chunks: list[Chunk] = []

    def emit(group: list[_Block]) -> None:
        start, end = group[0].start, group[-1].end
        chunks.append(Chunk(doc_id=doc_id, index=len(chunks), text=doc[start:end], char_span=(start, end)))

    cur: list[_Block] = []
    for block in blocks:
        cur_len = (cur[-1].end - cur[0].start) if cur else 0
        if cur and cur_len + (block.end - block.start) > max_chars:
            # Cut here, but prefer the latest heading boundary inside the
            # window so sections travel together.
            heading_at = next(
                (j for j in range(len(cur) - 1, 0, -1) if cur[j].is_heading), None
            )
            if block.is_heading or heading_at is None:
                emit(cur)
                cur = []
            else:
                emit(cur[:heading_at])
                cur = cur[heading_at:]
                if (cur[-1].end - cur[0].start) + (block.end - block.start) > max_chars:
                    emit(cur)
                    cur = []
        cur.append(block)
    if cur:
        emit(cur)
    return chunks


def extract_problems(chunk: Chunk, extractor) -> list[dict]:
    """Extraction prompt goes out as the system message, the chunk text as
    the user message; the reply must be a JSON array of {"problem","type"}.
    Malformed JSON gets one reparse attempt on the largest bracketed
    substring, then the chunk yields nothing (with a warning)."""
    messages = [
        {"role": "system", "content": prompts.template_text("extraction")},
        {"role": "user", "content": chunk.text},
    ]
    try:
        text = extractor.complete(messages, n=1)[0].text
    except EndpointError as exc:
        log.warning("extractor failed on %s[%d]: %s", chunk.doc_id, chunk.index, exc)
        return []
    parsed = _parse_json_array(text)
    if parsed is None:
        log.warning("unparsable extraction output on %s[%d]", chunk.doc_id, chunk.index)
        return []
    records = []
    for entry in parsed:
        if not isinstance(entry, dict):
            continue
        problem = entry.get("problem")
        ptype = entry.get("type")
        if isinstance(problem, str) and problem.strip() and ptype in ("proof", "ans"):
            records.append({"problem": problem, "type": ptype})
        else:
            log.warning("dropping malformed extraction entry on %s[%d]: %r", chunk.doc_id, chunk.index, entry)
    return records


def _parse_json_array(text: str):
    try:
        value = json.loads(text)
        return value if isinstance(value, list) else None
    except json.JSONDecodeError:
        pass
    start, end = text.find("["), text.rfind("]")
    if start != -1 and end > start:
        try:
            value = json.loads(text[start : end + 1])
            return value if isinstance(value, list) else None
        except json.JSONDecodeError:
            return None
    return None


def validate_problem(problem: str, category: str, validator) -> bool:
    """Second LLM pass: boxed true accepts, anything else (including an
    unparsable reply or a dead endpoint) rejects."""
    if not category:
        raise ValueError("validation needs a category for the template slot")
    prompt = prompts.render("validation", problem=problem, category=category)
    try:
        text = validator.complete([{"role": "user", "content": prompt}], n=1)[0].text
    except EndpointError as exc:
        log.warning("validator failed, rejecting problem: %s", exc)
        return False
    return extract_boxed_answer(text) == "true"


def normalized_statement_key(statement: str) -> str:
    normalized = " ".join(statement.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def build_dataset(
    docs: list[tuple[str, str, str]],
    extractor,
    validator,
    out_path,
    max_chars: int = DEFAULT_MAX_CHARS,
    holdout: int = 0,
    seed: int = 0,
    manifest_path=None,
    run_id: str | None = None,
) -> tuple[list[Problem], RunManifest]:
    """Run the full pipeline over (doc_id, markdown, category) triples.

    Ids are content hashes of (statement, source), so re-running on the
    same inputs reproduces the same file; dedup drops any statement whose
    whitespace-normalized hash was already seen.  With ``holdout`` > 0 a
    seeded sample of that many problems lands in a sibling
    ``<out>.holdout.jsonl`` file instead of the main one.
    """
    out_path = Path(out_path)
    n_chunks = 0
    n_extracted = 0
    n_validated = 0
    kept: list[Problem] = []
    seen_keys: set[str] = set()
    seen_ids: set[str] = set()

    for doc_id, markdown, category in docs:
        try:
            chunks = chunk_markdown(markdown, max_chars=max_chars, doc_id=doc_id)
            n_chunks += len(chunks)
            for chunk in chunks:
                records = extract_problems(chunk, extractor)
                n_extracted += len(records)
                for rec in records:
                    if not validate_problem(rec["problem"], category, validator):
                        continue
                    n_validated += 1
                    key = normalized_statement_key(rec["problem"])
                    if key in seen_keys:
                        continue
                    seen_keys.add(key)
                    problem = Problem(
                        id=problem_id_for(rec["problem"], doc_id),
                        statement=rec["problem"],
                        category=category,
                        problem_type=rec["type"],
                        source=doc_id,
                    )
                    if problem.id in seen_ids:
                        continue
                    seen_ids.add(problem.id)
                    kept.append(problem)
        except Exception as exc:
            log.exception("document %s failed, skipping: %s", doc_id, exc)

    holdout_set: list[Problem] = []
    train_set = kept
    if holdout > 0 and kept:
        rng = random.Random(seed)
        held_idx = set(rng.sample(range(len(kept)), min(holdout, len(kept))))
        holdout_set = [p for i, p in enumerate(kept) if i in held_idx]
        train_set = [p for i, p in enumerate(kept) if i not in held_idx]

    write_problem_file(train_set, out_path)
    if holdout > 0:
        write_problem_file(holdout_set, out_path.with_suffix(".holdout.jsonl"))

    manifest = RunManifest.new(
        config_snapshot={"max_chars": max_chars, "holdout": holdout, "seed": seed},
        prompt_template_hashes={
            "extraction": prompts.template_hash("extraction"),
            "validation": prompts.template_hash("validation"),
        },
        endpoints={
            "extractor": getattr(extractor, "identity", str(extractor)),
            "validator": getattr(validator, "identity", str(validator)),
        },
        metrics={
            "docs": len(docs),
            "chunks": n_chunks,
            "extracted": n_extracted,
            "validated": n_validated,
            "deduped": len(kept),
        },
        run_id=run_id,
    )
    append_manifest(manifest, manifest_path or out_path.with_suffix(".manifest.jsonl"))
    return kept, manifest
