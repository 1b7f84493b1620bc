"""Benchmark construction: turn single-table QA sources into a multi-table set.

Each sufficiently large root table is split row-wise or column-wise into 2-3
sub-tables (or left whole), siblings are debiased (caption rewording plus a
random row/column permutation), and the root's surviving queries are merged
into one combined, decontextualized query whose gold set is every sub-table
derived from that root. Difficulty mirrors the split width: Easy = no split,
Medium = 2 parts, Hard = 3 parts. The whole pipeline is a pure function of
(sources, seed).

Output layout (documented in docs/FORMATS.md): ``tables.jsonl`` in the
canonical corpus format, ``examples.jsonl`` with one example per line, and a
``stats.json`` summary per task type.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Query, Table, TableCorpus, TaskType, load_corpus, save_corpus
from .errors import IOFailure, TooFewCols, TooFewQueries, TooFewRows
from .features import STOPWORDS, fit_heuristic, representative_score, tokenize
from .linearize import normalize_whitespace

MIN_SPLIT_DIM = 3  # tables with at most this many rows AND columns are dropped
DEFAULT_STOPWORD_RATIO = 0.7
DEFAULT_MIN_TOKENS = 5
DEFAULT_REDUNDANCY_COSINE = 0.9

DIFFICULTY_BY_PARTS = {1: "Easy", 2: "Medium", 3: "Hard"}

CONNECTORS = ("AND", "Furthermore", "Based on [previous query]")

# Deterministic caption rewriting: a small synonym lexicon plus rephrasing
# templates, cycled per sibling so siblings never share a caption.
_SYNONYMS = {
    "season": "campaign",
    "seasons": "campaigns",
    "statistics": "figures",
    "stats": "figures",
    "list": "roster",
    "results": "outcomes",
    "games": "matches",
    "game": "match",
    "record": "log",
    "records": "logs",
    "summary": "digest",
    "overview": "profile",
    "report": "briefing",
    "data": "information",
    "history": "timeline",
    "players": "members",
    "teams": "clubs",
    "schedule": "calendar",
    "scores": "totals",
    "annual": "yearly",
    "total": "overall",
    "number": "count",
    "average": "mean",
    "population": "residents",
}

_TEMPLATES = (
    "{c}",
    "Overview of {c}",
    "Details on {c}",
    "{c} at a glance",
    "Reference for {c}",
    "A breakdown of {c}",
    "Key facts: {c}",
)

_DECONTEXT_MARKERS = ("it", "this", "that", "they", "these", "there", "here")
_DECONTEXT_RE = re.compile(r"\b(" + "|".join(_DECONTEXT_MARKERS) + r")\b", re.IGNORECASE)


@dataclass(frozen=True)
class SplitPlan:
    mode: str  # "row", "column", or "none" when parts == 1
    parts: int
    seed: int

    def __post_init__(self):
        if self.parts not in (1, 2, 3):
            raise ValueError("parts must be 1, 2, or 3")
        if self.parts == 1 and self.mode != "none":
            raise ValueError("a 1-part plan has no split mode")
        if self.parts > 1 and self.mode not in ("row", "column"):
            raise ValueError("mode must be 'row' or 'column'")


@dataclass
class SourceQuery:
    """A raw single-table query attached to its root table."""

    id: str
    root_table_id: str
    text: str
    task_type: TaskType
    answer: object


@dataclass
class BenchmarkExample:
    query: Query
    gold_table_ids: set[str]
    difficulty: str
    root_table_id: str


@dataclass
class BenchmarkDataset:
    tables: TableCorpus
    examples: list[BenchmarkExample]
    stats: dict


def filter_small(corpus: TableCorpus) -> TableCorpus:
    """Drop tables whose row AND column counts are both at most 3."""
    kept = [t for t in corpus if not (t.n_cols <= MIN_SPLIT_DIM and t.n_rows <= MIN_SPLIT_DIM)]
    return TableCorpus(kept, source_tag=corpus.source_tag)


def _balanced_sizes(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + 1 if i < rem else base for i in range(parts)]


def split_rows(t: Table, n: int, seed: int) -> list[Table]:
    """Shuffle the rows, then cut them into n contiguous near-equal parts.

    Every sub-table keeps the root's caption, headers, and metadata.
    """
    if n not in (2, 3):
        raise ValueError("row splits use 2 or 3 parts")
    if n > t.n_rows:
        raise TooFewRows(f"cannot split {t.n_rows} rows into {n} parts")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    order = rng.permutation(t.n_rows)
    sizes = _balanced_sizes(t.n_rows, n)
    subs: list[Table] = []
    start = 0
    for i, size in enumerate(sizes):
        rows = [list(t.entries[j]) for j in order[start : start + size]]
        start += size
        subs.append(
            Table(
                id=f"{t.id}::part{i + 1}",
                caption=t.caption,
                headers=list(t.headers),
                entries=rows,
                metadata=dict(t.metadata),
            )
        )
    return subs


def split_cols(t: Table, m: int, seed: int) -> list[Table]:
    """Keep the first column everywhere; deal the rest into m balanced groups.

    Headers are sliced along with their columns.
    """
    if m not in (2, 3):
        raise ValueError("column splits use 2 or 3 parts")
    if m > t.n_cols - 1:
        raise TooFewCols(f"cannot split {t.n_cols - 1} non-leading columns into {m} parts")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rest = rng.permutation(np.arange(1, t.n_cols))
    sizes = _balanced_sizes(t.n_cols - 1, m)
    subs: list[Table] = []
    start = 0
    for j, size in enumerate(sizes):
        cols = [0] + [int(c) for c in rest[start : start + size]]
        start += size
        subs.append(
            Table(
                id=f"{t.id}::part{j + 1}",
                caption=t.caption,
                headers=[t.headers[c] for c in cols],
                entries=[[row[c] for c in cols] for row in t.entries],
                metadata=dict(t.metadata),
            )
        )
    return subs


def _reword_caption(caption: str, variant: int) -> str:
    words = caption.split()
    if variant % 2 == 1:
        words = [_SYNONYMS.get(w.lower(), w) for w in words]
    body = " ".join(words)
    template = _TEMPLATES[variant % len(_TEMPLATES)]
    return template.format(c=body) if body else template.format(c="untitled table")


def debias(sub_tables: Sequence[Table], mode: str, seed: int) -> list[Table]:
    """Reword sibling captions (all distinct) and independently permute row
    order (row mode) or non-leading column order (column mode)."""
    if len(sub_tables) < 2:
        raise ValueError("debias expects at least two sibling sub-tables")
    captions: list[str] = []
    for i, t in enumerate(sub_tables):
        variant = i
        cap = _reword_caption(t.caption, variant)
        while cap in captions:
            variant += 1
            cap = _reword_caption(t.caption, variant)
        captions.append(cap)

    out: list[Table] = []
    for i, t in enumerate(sub_tables):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, i]))
        if mode == "row":
            order = rng.permutation(t.n_rows)
            entries = [list(t.entries[j]) for j in order]
            headers = list(t.headers)
        elif mode == "column":
            rest = rng.permutation(np.arange(1, t.n_cols))
            cols = [0] + [int(c) for c in rest]
            headers = [t.headers[c] for c in cols]
            entries = [[row[c] for c in cols] for row in t.entries]
        else:
            raise ValueError("mode must be 'row' or 'column'")
        out.append(
            Table(id=t.id, caption=captions[i], headers=headers, entries=entries, metadata=dict(t.metadata))
        )
    return out


def filter_queries(
    queries: Sequence[SourceQuery],
    stopword_ratio: float = DEFAULT_STOPWORD_RATIO,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    redundancy_cosine: float = DEFAULT_REDUNDANCY_COSINE,
) -> list[SourceQuery]:
    """Drop vague and redundant queries; survivors keep their input order.

    A query goes if its stopword ratio exceeds the threshold, it has fewer
    than min_tokens tokens, or its TF-IDF cosine against an already kept
    query of the same root reaches the redundancy threshold.
    """
    if not queries:
        return []
    vectorizer = fit_heuristic([q.text for q in queries])
    kept: list[SourceQuery] = []
    kept_vecs: dict[str, list] = {}
    for q in queries:
        toks = tokenize(q.text)
        if len(toks) < min_tokens:
            continue
        ratio = sum(1 for t in toks if t in STOPWORDS) / len(toks)
        if ratio > stopword_ratio:
            continue
        vec = vectorizer.transform(q.text)
        redundant = any(
            representative_score(vec, prev) >= redundancy_cosine
            for prev in kept_vecs.get(q.root_table_id, [])
        )
        if redundant:
            continue
        kept.append(q)
        kept_vecs.setdefault(q.root_table_id, []).append(vec)
    return kept


def combine_queries(
    queries: Sequence[SourceQuery],
    connectors: Sequence[str] = CONNECTORS,
    seed: int = 0,
) -> Query:
    """Merge 2-3 same-root queries into one multi-part query.

    Connectors are drawn per junction from the connector pool; the
    "[previous query]" slot, when present, is filled with the preceding
    query's text. Answers become the list of source answers; the task is
    promoted to multi-hop whenever the sources span more than one answer
    cell. All-claim inputs stay TFV with the conjunction of their labels.
    """
    if not 2 <= len(queries) <= 3:
        raise TooFewQueries(f"need 2-3 queries to combine, got {len(queries)}")
    roots = {q.root_table_id for q in queries}
    if len(roots) != 1:
        raise ValueError("combined queries must share one root table")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    text = normalize_whitespace(queries[0].text)
    prev = text
    for q in queries[1:]:
        connector = connectors[int(rng.integers(len(connectors)))]
        piece = connector.replace("[previous query]", prev)
        nxt = normalize_whitespace(q.text)
        text = f"{text} {piece} {nxt}"
        prev = nxt

    task_types = {q.task_type for q in queries}
    if task_types == {TaskType.TFV}:
        answer: object = int(all(int(q.answer) == 1 for q in queries))
        task = TaskType.TFV
    else:
        parts: list[str] = []
        for q in queries:
            if isinstance(q.answer, (list, tuple)):
                parts.extend(str(a) for a in q.answer)
            else:
                parts.append(str(q.answer))
        answer = parts
        task = TaskType.MULTI_HOP if len(parts) > 1 else queries[0].task_type
    return Query(
        id="+".join(q.id for q in queries),
        text=text,
        task_type=task,
        gold_table_ids=set(),
        gold_answer=answer,
    )


def decontextualize(query_text: str, root_caption: str) -> str:
    """Replace discourse markers and demonstrative pronouns with the root
    caption. Idempotent: captions that themselves contain a marker word are
    left alone rather than risk re-replacement."""
    caption = normalize_whitespace(root_caption)
    if not caption:
        return query_text
    if _DECONTEXT_RE.search(caption):
        return query_text
    return normalize_whitespace(_DECONTEXT_RE.sub(caption, query_text))


def _feasible_parts(t: Table, parts: int) -> dict[str, bool]:
    return {
        "row": parts <= t.n_rows,
        "column": parts <= t.n_cols - 1,
    }


def build_benchmark(
    sources: TableCorpus,
    source_queries: Sequence[SourceQuery],
    seed: int = 0,
    connectors: Sequence[str] = CONNECTORS,
) -> BenchmarkDataset:
    """Run the full construction pipeline. Reproducible from the seed."""
    corpus = filter_small(sources)
    queries = filter_queries(source_queries)
    by_root: dict[str, list[SourceQuery]] = {}
    for q in queries:
        by_root.setdefault(q.root_table_id, []).append(q)

    master = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    mode_counts = {"row": 0, "column": 0}
    out_tables: list[Table] = []
    examples: list[BenchmarkExample] = []

    for root in corpus:
        root_seed = int(np.random.SeedSequence([seed, 5, _stable_id_key(root.id)]).generate_state(1)[0])
        parts = int(master.integers(1, 4))
        feasible = _feasible_parts(root, parts)
        while parts > 1 and not any(feasible.values()):
            parts -= 1
            feasible = _feasible_parts(root, parts)

        if parts == 1:
            plan = SplitPlan(mode="none", parts=1, seed=root_seed)
            subs = [root]
        else:
            options = [m for m in ("row", "column") if feasible[m]]
            if len(options) == 2:
                # Keep row-wise and column-wise sub-table counts balanced.
                if mode_counts["row"] < mode_counts["column"]:
                    mode = "row"
                elif mode_counts["column"] < mode_counts["row"]:
                    mode = "column"
                else:
                    mode = options[int(master.integers(2))]
            else:
                mode = options[0]
            plan = SplitPlan(mode=mode, parts=parts, seed=root_seed)
            if mode == "row":
                subs = split_rows(root, parts, root_seed)
            else:
                subs = split_cols(root, parts, root_seed)
            subs = debias(subs, mode, root_seed)
            mode_counts[mode] += len(subs)
        out_tables.extend(subs)

        root_queries = by_root.get(root.id, [])
        if not root_queries:
            continue
        if len(root_queries) >= 2:
            take = 3 if len(root_queries) >= 3 and master.integers(2) == 1 else 2
            combined = combine_queries(root_queries[:take], connectors, seed=plan.seed)
        else:
            src = root_queries[0]
            combined = Query(
                id=src.id,
                text=normalize_whitespace(src.text),
                task_type=src.task_type,
                gold_table_ids=set(),
                gold_answer=src.answer,
            )
        combined.text = decontextualize(combined.text, root.caption)
        combined.gold_table_ids = {s.id for s in subs}
        examples.append(
            BenchmarkExample(
                query=combined,
                gold_table_ids={s.id for s in subs},
                difficulty=DIFFICULTY_BY_PARTS[parts],
                root_table_id=root.id,
            )
        )

    dataset_tables = TableCorpus(out_tables, source_tag=f"{sources.source_tag}:benchmark")
    return BenchmarkDataset(
        tables=dataset_tables,
        examples=examples,
        stats=_summarize(dataset_tables, examples),
    )


def _stable_id_key(table_id: str) -> int:
    # Root-scoped sub-seed that does not depend on corpus position.
    return int.from_bytes(hashlib.blake2b(table_id.encode("utf-8"), digest_size=4).digest(), "little")


def _summarize(tables: TableCorpus, examples: list[BenchmarkExample]) -> dict:
    stats: dict = {"total_tables": len(tables), "total_queries": len(examples), "per_task": {}}
    for task in TaskType:
        exs = [e for e in examples if e.query.task_type == task]
        gold_ids = sorted({tid for e in exs for tid in e.gold_table_ids})
        gold_tables = [tables.get(tid) for tid in gold_ids if tid in tables]
        stats["per_task"][task.value] = {
            "n_queries": len(exs),
            "n_tables": len(gold_tables),
            "avg_rows": round(float(np.mean([t.n_rows for t in gold_tables])), 2) if gold_tables else 0.0,
            "avg_cols": round(float(np.mean([t.n_cols for t in gold_tables])), 2) if gold_tables else 0.0,
        }
    stats["per_difficulty"] = {
        d: sum(1 for e in examples if e.difficulty == d) for d in ("Easy", "Medium", "Hard")
    }
    return stats


# ---------------------------------------------------------------------------
# Dataset and source-query persistence
# ---------------------------------------------------------------------------


def _example_record(e: BenchmarkExample) -> dict:
    return {
        "difficulty": e.difficulty,
        "gold_answer": e.query.gold_answer,
        "gold_table_ids": sorted(e.gold_table_ids),
        "id": e.query.id,
        "root_table_id": e.root_table_id,
        "task_type": e.query.task_type.value,
        "text": e.query.text,
    }


def save_benchmark(ds: BenchmarkDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(ds.tables, out / "tables.jsonl")
    try:
        with (out / "examples.jsonl").open("wb") as f:
            for e in ds.examples:
                f.write(json.dumps(_example_record(e), sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8"))
                f.write(b"\n")
        (out / "stats.json").write_bytes(
            json.dumps(ds.stats, sort_keys=True, ensure_ascii=False, indent=2).encode("utf-8") + b"\n"
        )
    except OSError as exc:
        raise IOFailure(f"cannot write benchmark to {out}: {exc}") from exc


def load_benchmark(in_dir: str | Path) -> BenchmarkDataset:
    src = Path(in_dir)
    tables = load_corpus(src / "tables.jsonl", format="jsonl")
    examples: list[BenchmarkExample] = []
    try:
        lines = (src / "examples.jsonl").read_text(encoding="utf-8").splitlines()
        stats = json.loads((src / "stats.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IOFailure(f"cannot read benchmark from {src}: {exc}") from exc
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        q = Query(
            id=rec["id"],
            text=rec["text"],
            task_type=TaskType(rec["task_type"]),
            gold_table_ids=set(rec["gold_table_ids"]),
            gold_answer=rec["gold_answer"],
        )
        examples.append(
            BenchmarkExample(
                query=q,
                gold_table_ids=set(rec["gold_table_ids"]),
                difficulty=rec["difficulty"],
                root_table_id=rec["root_table_id"],
            )
        )
    return BenchmarkDataset(tables=tables, examples=examples, stats=stats)


def load_source_queries(path: str | Path) -> list[SourceQuery]:
    """Read raw source queries (one JSON record per line)."""
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IOFailure(f"cannot read {p}: {exc}") from exc
    out: list[SourceQuery] = []
    for line in lines:
        if not line.strip():
            continue
        rec = json.loads(line)
        out.append(
            SourceQuery(
                id=str(rec["id"]),
                root_table_id=str(rec["root_table_id"]),
                text=str(rec["text"]),
                task_type=TaskType(rec["task_type"]),
                answer=rec.get("answer"),
            )
        )
    return out
