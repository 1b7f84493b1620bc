"""Retrieval and answer metrics, staged latency accounting, end-to-end runs.

Retrieval metrics: recall@k is the fraction of gold tables inside the top-k;
acc@k is 1 when the gold set is fully covered by the top-k ("all" mode, the
default) or when any gold table appears ("any" mode).

Answer metrics follow the usual QA normalization (lowercase, drop
punctuation, drop articles, collapse whitespace) with token-level F1. List
answers are scored by greedy best-pair matching averaged over the longer
side, so exact-match lists always reach F1 = 1.
"""

from __future__ import annotations

import re
import string
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .benchmark import BenchmarkDataset
from .errors import EmptyGold, MissingAnswerTags
from .features import EmbedderHandle
from .fine import STAGE_COARSE, STAGE_FINE, PPRConfig, retrieve
from .index import HypergraphIndex
from .prompting import GenerateFn, build_prompt, parse_response

STAGE_TABLE_TO_GRAPH = "Table-to-Graph"
STAGES = (STAGE_TABLE_TO_GRAPH, STAGE_COARSE, STAGE_FINE)

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    s = str(s).lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    n_same = sum(common.values())
    if n_same == 0:
        return 0.0
    precision = n_same / len(pred_tokens)
    recall = n_same / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def _as_list(answer) -> list[str]:
    if isinstance(answer, (list, tuple)):
        return [str(a) for a in answer]
    text = str(answer)
    if re.search(r"[;,]", text):
        return [part.strip() for part in re.split(r"[;,]", text) if part.strip()]
    return [text]


def _list_em(pred: list[str], gold: list[str]) -> int:
    return int(sorted(normalize_answer(p) for p in pred) == sorted(normalize_answer(g) for g in gold))


def _list_f1(pred: list[str], gold: list[str]) -> float:
    if not pred or not gold:
        return float(not pred and not gold)
    pairs = sorted(
        ((i, j, token_f1(p, g)) for i, p in enumerate(pred) for j, g in enumerate(gold)),
        key=lambda t: (-t[2], t[0], t[1]),
    )
    used_p: set[int] = set()
    used_g: set[int] = set()
    total = 0.0
    for i, j, f in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        total += f
    return total / max(len(pred), len(gold))


def answer_scores(pred, gold) -> tuple[int, float]:
    """(exact match, token F1) for string or list answers.

    When the gold answer is a list and the prediction is a flat string, the
    prediction is split on commas/semicolons before matching.
    """
    if isinstance(gold, (list, tuple)):
        pred_list = _as_list(pred)
        gold_list = [str(g) for g in gold]
        return _list_em(pred_list, gold_list), _list_f1(pred_list, gold_list)
    em = exact_match(str(pred), str(gold))
    return em, token_f1(str(pred), str(gold))


def acc_at_k(ranked_ids: Sequence[str], gold: set[str], k: int, mode: str = "all") -> int:
    """1 iff the top-k covers the gold set ("all") or hits any of it ("any")."""
    if not gold:
        raise EmptyGold("acc@k needs a non-empty gold set")
    if k < 1:
        raise ValueError("k must be at least 1")
    top = set(ranked_ids[:k])
    if mode == "all":
        return int(gold <= top)
    if mode == "any":
        return int(bool(gold & top))
    raise ValueError(f"unknown acc mode {mode!r}")


def recall_at_k(ranked_ids: Sequence[str], gold: set[str], k: int) -> float:
    if not gold:
        raise EmptyGold("recall@k needs a non-empty gold set")
    return len(set(ranked_ids[:k]) & gold) / len(gold)


# ---------------------------------------------------------------------------
# Staged timers
# ---------------------------------------------------------------------------


class StageTimer:
    """Accumulating wall-clock timer keyed by stage name."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.durations: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        if not self.enabled:
            yield
            return
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.durations[name] = self.durations.get(name, 0.0) + (time.perf_counter() - t0)

    def add(self, name: str, seconds: float) -> None:
        if self.enabled:
            self.durations[name] = self.durations.get(name, 0.0) + seconds


def latency_report(timer: StageTimer | None) -> dict[str, float]:
    """Per-stage wall-clock totals plus their sum; empty when timing is off."""
    if timer is None or not timer.enabled or not timer.durations:
        return {}
    report = dict(timer.durations)
    report["Total"] = sum(timer.durations.values())
    return report


# ---------------------------------------------------------------------------
# Evaluation runs
# ---------------------------------------------------------------------------


@dataclass
class RetrievalReport:
    per_k: dict[int, dict[str, float]]
    ks: list[int]
    acc_mode: str
    n_queries: int
    corpus_size: int
    mean_coarse_retained: float
    mean_coarse_fraction: float
    final_k: int

    def pretty(self) -> str:
        lines = [
            f"queries: {self.n_queries}   corpus: {self.corpus_size} tables",
            f"after coarse (mean): {self.mean_coarse_retained:.1f} tables "
            f"({100 * self.mean_coarse_fraction:.1f}% retained)",
            f"acc mode: {self.acc_mode}",
            "k      acc@k    recall@k",
        ]
        for k in self.ks:
            row = self.per_k[k]
            lines.append(f"{k:<6d} {row['acc']:.4f}   {row['recall']:.4f}")
        return "\n".join(lines)


@dataclass
class AnswerReport:
    em: float
    f1: float
    n_examples: int
    n_parse_failures: int
    n_na: int
    per_example: list[dict] = field(default_factory=list)

    def pretty(self) -> str:
        return (
            f"examples: {self.n_examples}   EM: {self.em:.4f}   F1: {self.f1:.4f}   "
            f"NA: {self.n_na}   parse failures: {self.n_parse_failures}"
        )


def run_retrieval_eval(
    dataset: BenchmarkDataset,
    ix: HypergraphIndex,
    embedder: EmbedderHandle,
    cfg: PPRConfig | None = None,
    tau: float = 0.5,
    ks: Sequence[int] = (10, 20, 50),
    acc_mode: str = "all",
    timer: StageTimer | None = None,
) -> RetrievalReport:
    """Mean acc@k / recall@k over the dataset's examples."""
    cfg = cfg or PPRConfig()
    ks = sorted(ks)
    depth = max(max(ks), cfg.top_n)
    run_cfg = PPRConfig(alpha=cfg.alpha, epsilon=cfg.epsilon, max_iter=cfg.max_iter, top_n=depth)
    sums = {k: {"acc": 0.0, "recall": 0.0} for k in ks}
    retained: list[int] = []
    n = 0
    for example in dataset.examples:
        if not example.gold_table_ids:
            raise EmptyGold(f"example {example.query.id} has no gold tables")
        coarse, result = retrieve(example.query, ix, embedder, run_cfg, tau)
        if timer is not None:
            timer.add(STAGE_COARSE, result.timings.get(STAGE_COARSE, 0.0))
            timer.add(STAGE_FINE, result.timings.get(STAGE_FINE, 0.0))
        ranked_ids = [tid for tid, _ in result.ranked]
        retained.append(len(coarse.union_ids))
        for k in ks:
            sums[k]["acc"] += acc_at_k(ranked_ids, example.gold_table_ids, k, acc_mode)
            sums[k]["recall"] += recall_at_k(ranked_ids, example.gold_table_ids, k)
        n += 1
    if n == 0:
        raise EmptyGold("dataset has no examples")
    per_k = {k: {"acc": sums[k]["acc"] / n, "recall": sums[k]["recall"] / n} for k in ks}
    return RetrievalReport(
        per_k=per_k,
        ks=list(ks),
        acc_mode=acc_mode,
        n_queries=n,
        corpus_size=len(ix),
        mean_coarse_retained=float(np.mean(retained)),
        mean_coarse_fraction=float(np.mean(retained)) / max(len(ix), 1),
        final_k=depth,
    )


def run_e2e_eval(
    dataset: BenchmarkDataset,
    ix: HypergraphIndex,
    embedder: EmbedderHandle,
    generate: GenerateFn,
    cfg: PPRConfig | None = None,
    tau: float = 0.5,
    fewshot: Sequence[str] = (),
    timer: StageTimer | None = None,
) -> AnswerReport:
    """Retrieve, prompt, generate, parse, score. NA and parse failures score 0."""
    cfg = cfg or PPRConfig()
    em_sum = 0.0
    f1_sum = 0.0
    n_parse_failures = 0
    n_na = 0
    per_example: list[dict] = []
    for example in dataset.examples:
        coarse, result = retrieve(example.query, ix, embedder, cfg, tau)
        if timer is not None:
            timer.add(STAGE_COARSE, result.timings.get(STAGE_COARSE, 0.0))
            timer.add(STAGE_FINE, result.timings.get(STAGE_FINE, 0.0))
        tables = [dataset.tables.get(tid) for tid, _ in result.ranked]
        bundle = build_prompt(example.query.text, result, tables, example.query.task_type, fewshot)
        raw = generate(bundle.system, bundle.user)
        record = {"id": example.query.id, "em": 0, "f1": 0.0, "parse_ok": True, "is_na": False}
        try:
            parsed = parse_response(raw)
        except MissingAnswerTags:
            n_parse_failures += 1
            record["parse_ok"] = False
            per_example.append(record)
            continue
        if parsed.is_na:
            n_na += 1
            record["is_na"] = True
            per_example.append(record)
            continue
        em, f1 = answer_scores(parsed.answer, example.query.gold_answer)
        em_sum += em
        f1_sum += f1
        record["em"] = em
        record["f1"] = f1
        record["pred"] = parsed.answer
        per_example.append(record)
    n = len(dataset.examples)
    if n == 0:
        raise EmptyGold("dataset has no examples")
    return AnswerReport(
        em=em_sum / n,
        f1=f1_sum / n,
        n_examples=n,
        n_parse_failures=n_parse_failures,
        n_na=n_na,
        per_example=per_example,
    )
