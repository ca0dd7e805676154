"""Command-line entry point.

Subcommands: ingest, index lexical, index dense, rerank, explore, answer,
eval, cost-report.  Every config-file key has a flag twin; flags override
the file.  Usage and validation problems exit 2, runtime failures exit 1.

An index directory holds up to three files by convention:

    corpus.jsonl   the ingested passages
    lexical.idx    inverted index (from `index lexical`)
    dense.vec      embedding store (from `index dense`)
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from typing import Mapping

import click
import numpy as np

from .config import (BackendSpec, RunConfig, build_run_config, make_backend,
                     parse_config_file)
from .corpus import Corpus, load_corpus, save_corpus
from .dense import build_dense, load_dense, save_dense
from .errors import ConfigError, EngineError, FormatError
from .evalkit import (cost_summary, evaluate_records, render_cost_table,
                      render_eval_table)
from .gate import acquire_exploratory
from .lexical import build_lexical, load_lexical, save_lexical
from .pipeline import MODES, AnswerEngine, run_batch
from .refine import (label_passages, prompt_rerank, refine_query, rerank_kb,
                     save_refiner, train_refiner)

CORPUS_FILE = "corpus.jsonl"
LEXICAL_FILE = "lexical.idx"
DENSE_FILE = "dense.vec"


def _handled(fn):
    """Map engine errors onto the documented exit codes."""
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (EngineError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapped


def _overrides(params: Mapping, keys: Mapping[str, str]) -> dict[str, str]:
    """Collect explicitly-given flags as raw config overrides."""
    out: dict[str, str] = {}
    for name, key in keys.items():
        value = params.get(name)
        if value is None:
            continue
        if isinstance(value, bool):
            out[key] = "true" if value else "false"
        else:
            out[key] = str(value)
    return out


def _backend_overrides(flag: str | None) -> dict[str, str]:
    if flag is None:
        return {}
    spec = BackendSpec.from_flag(flag)
    out = {"backend.kind": spec.kind}
    if spec.url:
        out["backend.url"] = spec.url
    if spec.script:
        out["backend.script"] = spec.script
    return out


def _run_config(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    file_values = parse_config_file(config_path) if config_path else None
    return build_run_config(file_values, overrides)


def _load_indexes(indexes: str, metric: str) -> tuple[Corpus, object, object]:
    base = Path(indexes)
    corpus = load_corpus(base / CORPUS_FILE)
    lex_path = base / LEXICAL_FILE
    dense_path = base / DENSE_FILE
    lexical = load_lexical(lex_path) if lex_path.exists() else None
    dense = load_dense(dense_path, metric=metric) if dense_path.exists() else None
    return corpus, lexical, dense


def _write_records(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_records(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON record ({exc})") from exc
    return records


@click.group()
def main():
    """Retrieval-augmented answering with embedding-level query refinement."""


# -- data and index commands --------------------------------------------------

@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Input passage file, one JSON record per line.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Validated corpus store to write.")
@_handled
def ingest(corpus: str, out: str):
    """Validate a passage file and write the canonical store."""
    loaded = load_corpus(corpus)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(loaded, out)
    click.echo(f"ingested {len(loaded)} passages -> {out}")


@main.group()
def index():
    """Build retrieval indexes over an ingested corpus."""


@index.command("lexical")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_handled
def index_lexical(corpus: str, out: str):
    """Build the inverted index used for first-stage retrieval."""
    idx = build_lexical(load_corpus(corpus))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_lexical(idx, out)
    click.echo(f"indexed {len(idx.doc_len)} passages -> {out}")


@index.command("dense")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", "backend_flag", required=True,
              help="Embedding source: 'toy', 'script:<path>', or an http(s) URL.")
@click.option("--backend-seed", type=int, default=None,
              help="Seed for the toy backend's weights.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_handled
def index_dense(corpus: str, backend_flag: str, backend_seed: int | None, out: str):
    """Embed every passage and write the vector store."""
    spec = BackendSpec.from_flag(backend_flag, seed=backend_seed or 0)
    backend = make_backend(spec)
    idx = build_dense(load_corpus(corpus), backend.embed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dense(idx, out)
    click.echo(f"embedded {len(idx.ids)} passages at dim {idx.matrix.shape[1]} -> {out}")


# -- rerank --------------------------------------------------------------------

_RERANK_KEYS = {
    "metric": "retrieval.metric",
    "tau": "refiner.tau",
    "lr": "refiner.lr",
    "epochs": "refiner.epochs",
    "batch_size": "refiner.batch_size",
    "refiner_seed": "refiner.seed",
    "backend_seed": "backend.seed",
}


@main.command()
@click.option("--indexes", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with corpus.jsonl and dense.vec.")
@click.option("--kb", required=True,
              help="Comma-separated passage ids forming the working set.")
@click.option("--query", required=True)
@click.option("--candidates", required=True,
              help="Comma-separated candidate answers.")
@click.option("--mode", type=click.Choice(["learned", "sum", "prompt"]),
              default="learned", show_default=True,
              help="Query construction: trained refiner, plain sum, or "
                   "per-passage relevance prompts.")
@click.option("--n", type=int, default=10,
              help="Passages to keep (method default: 10).")
@click.option("--backend", "backend_flag", default=None,
              help="'toy', 'script:<path>', or an http(s) URL.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=click.Choice(["dot", "cosine"]), default=None,
              help="Dense similarity (method default: dot).")
@click.option("--tau", type=float, default=None,
              help="Contrastive temperature (method default: 0.1).")
@click.option("--lr", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--refiner-seed", type=int, default=None)
@click.option("--backend-seed", type=int, default=None)
@click.option("--save-weights", type=click.Path(dir_okay=False), default=None,
              help="Write the trained refiner weights (learned mode only).")
@_handled
def rerank(indexes: str, kb: str, query: str, candidates: str, mode: str,
           n: int, backend_flag: str | None, config_path: str | None,
           save_weights: str | None, **params):
    """Rerank a working set of passages for one query."""
    overrides = _overrides(params, _RERANK_KEYS)
    overrides.update(_backend_overrides(backend_flag))
    cfg = _run_config(config_path, overrides)
    backend = make_backend(cfg.backend)

    corpus, _, dense = _load_indexes(indexes, cfg.engine.metric)
    kb_ids = [part.strip() for part in kb.split(",") if part.strip()]
    cand_list = [part.strip() for part in candidates.split(",") if part.strip()]
    if not kb_ids:
        raise ConfigError("--kb lists no passage ids")
    if not cand_list:
        raise ConfigError("--candidates lists no answers")
    passages = [corpus[pid] for pid in kb_ids]

    if mode == "prompt":
        graded = prompt_rerank(backend, query, passages)
        ranked = [(p.id, float(g)) for p, g in graded[:n]]
    else:
        if dense is None:
            raise ConfigError(f"{indexes}/{DENSE_FILE} is missing; embedding "
                              "rerank needs a dense index")
        (e_q,) = backend.embed([query])
        cand_vecs = backend.embed(cand_list)
        e_y = np.mean(np.vstack(cand_vecs), axis=0)
        if mode == "sum":
            e_new = e_y + e_q
        else:
            pos_ids, neg_ids = label_passages(passages, cand_list)
            if not pos_ids:
                raise ConfigError("no passage contains any candidate; cannot "
                                  "train the refiner (try --mode sum)")
            result = train_refiner(dense.rows_for(pos_ids), dense.rows_for(neg_ids),
                                   e_q, e_y, cfg.refiner)
            if save_weights:
                save_refiner(result.weights, save_weights)
            e_new = refine_query(result.weights, e_y, e_q)
        ranked = rerank_kb(dense, kb_ids, e_new, n)

    for pid, score in ranked:
        click.echo(json.dumps({"id": pid, "score": score}, sort_keys=True))


# -- explore -------------------------------------------------------------------

_EXPLORE_KEYS = {
    "threshold": "gate.threshold",
    "p": "gate.p",
    "max_attempts": "gate.max_attempts",
    "standardize": "gate.standardize",
    "gate_seed": "gate.seed",
    "backend_seed": "backend.seed",
}


@main.command()
@click.option("--prompt-file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="File holding the prompt to probe with.")
@click.option("--backend", "backend_flag", default=None,
              help="'toy', 'script:<path>', or an http(s) URL.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=None,
              help="Acceptance bound on the gap statistic (method default: 0.05).")
@click.option("--p", type=int, default=None,
              help="Leading gaps summed (method default: 5).")
@click.option("--max-attempts", type=int, default=None,
              help="Sampling budget (method default: 50).")
@click.option("--standardize/--no-standardize", default=None,
              help="Standardize hidden values before the gap statistic.")
@click.option("--gate-seed", type=int, default=None)
@click.option("--backend-seed", type=int, default=None)
@_handled
def explore(prompt_file: str, backend_flag: str | None, config_path: str | None,
            **params):
    """Sample exploratory embeddings until the gap statistic accepts one."""
    overrides = _overrides(params, _EXPLORE_KEYS)
    overrides.update(_backend_overrides(backend_flag))
    cfg = _run_config(config_path, overrides)
    backend = make_backend(cfg.backend)
    prompt = Path(prompt_file).read_text(encoding="utf-8")
    sample = acquire_exploratory(backend, prompt, cfg.gate)
    click.echo(json.dumps({
        "statistic": sample.statistic,
        "attempts": sample.attempt,
        "accepted": sample.accepted,
        "dim": len(sample.embedding),
    }, sort_keys=True))


# -- answer --------------------------------------------------------------------

_ANSWER_KEYS = {
    "seed": "run.seed",
    "workers": "run.workers",
    "first_stage": "retrieval.first_stage",
    "m": "retrieval.m",
    "n": "retrieval.n",
    "metric": "retrieval.metric",
    "k": "gen.k",
    "max_tokens": "gen.max_tokens",
    "temperature": "gen.temperature",
    "top_logprobs": "gen.top_logprobs",
    "rerank_mode": "rerank.mode",
    "refiner_mode": "refiner.mode",
    "tau": "refiner.tau",
    "lr": "refiner.lr",
    "epochs": "refiner.epochs",
    "batch_size": "refiner.batch_size",
    "refiner_seed": "refiner.seed",
    "threshold": "gate.threshold",
    "p": "gate.p",
    "max_attempts": "gate.max_attempts",
    "standardize": "gate.standardize",
    "gate_seed": "gate.seed",
    "backend_seed": "backend.seed",
}


@main.command()
@click.option("--question", "question_args", multiple=True,
              help="Question text; repeatable for a small batch.")
@click.option("--questions", "questions_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="JSONL file of {qid, question} records.")
@click.option("--indexes", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory with corpus.jsonl, lexical.idx, dense.vec.")
@click.option("--backend", "backend_flag", default=None,
              help="'toy', 'script:<path>', or an http(s) URL.")
@click.option("--mode", "modes", multiple=True, type=click.Choice(MODES),
              help="Pipeline setting (method default: embqa). Single-valued; "
                   "modes cannot be combined.")
@click.option("--report", required=True, type=click.Path(dir_okay=False),
              help="Output JSONL, one record per question.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Run seed (method default: 0).")
@click.option("--workers", type=int, default=None,
              help="Concurrent questions; records are identical at any count.")
@click.option("--first-stage", type=click.Choice(["lexical", "dense"]), default=None)
@click.option("--m", type=int, default=None,
              help="Working-set size (method default: 100).")
@click.option("--n", type=int, default=None,
              help="Context passages per prompt (method default: 10).")
@click.option("--metric", type=click.Choice(["dot", "cosine"]), default=None)
@click.option("--k", type=int, default=None,
              help="Answer candidates per generation (method default: 2).")
@click.option("--max-tokens", type=int, default=None)
@click.option("--temperature", type=float, default=None,
              help="Sampling temperature (method default: 0).")
@click.option("--top-logprobs", type=int, default=None)
@click.option("--rerank-mode", type=click.Choice(["embedding", "prompt", "none"]),
              default=None)
@click.option("--refiner-mode", type=click.Choice(["learned", "sum"]), default=None,
              help="Refined query: trained weights or plain vector sum.")
@click.option("--tau", type=float, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--refiner-seed", type=int, default=None)
@click.option("--threshold", type=float, default=None,
              help="Gate bound (method default: 0.05).")
@click.option("--p", type=int, default=None)
@click.option("--max-attempts", type=int, default=None)
@click.option("--standardize/--no-standardize", default=None)
@click.option("--gate-seed", type=int, default=None)
@click.option("--backend-seed", type=int, default=None)
@_handled
def answer(question_args: tuple[str, ...], questions_path: str | None,
           indexes: str, backend_flag: str | None, modes: tuple[str, ...],
           report: str, config_path: str | None, **params):
    """Answer questions and write one report record per question."""
    if len(modes) > 1:
        raise ConfigError(
            f"--mode given {len(modes)} times ({', '.join(modes)}); settings "
            "cannot be combined. To drop both reranking and exploration use "
            "--mode retrieval-only.")
    if question_args and questions_path:
        raise ConfigError("give either --question or --questions, not both")
    if not question_args and not questions_path:
        raise ConfigError("one of --question or --questions is required")

    overrides = _overrides(params, _ANSWER_KEYS)
    overrides.update(_backend_overrides(backend_flag))
    if modes:
        overrides["run.mode"] = modes[0]
    cfg = _run_config(config_path, overrides)

    if questions_path:
        questions = []
        for rec in _read_records(questions_path):
            if "question" not in rec or not isinstance(rec["question"], str):
                raise FormatError(f"{questions_path}: record without a "
                                  f"'question' string: {rec!r}")
            questions.append(rec)
    else:
        questions = [{"question": q} for q in question_args]

    backend = make_backend(cfg.backend)
    corpus, lexical, dense = _load_indexes(indexes, cfg.engine.metric)
    engine = AnswerEngine(corpus, backend, cfg.engine, refiner=cfg.refiner,
                          gate=cfg.gate, lexical=lexical, dense=dense)
    records = run_batch(engine, questions, workers=cfg.workers)
    Path(report).parent.mkdir(parents=True, exist_ok=True)
    _write_records(report, records)
    click.echo(f"answered {len(records)} questions in mode "
               f"{cfg.engine.mode} -> {report}")


# -- eval and cost -------------------------------------------------------------

@main.command("eval")
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Answer report to score.")
@click.option("--golds", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSONL with {qid, golds: [...]} records.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Machine-readable per-question scores (JSONL).")
@click.option("--corpus", "corpus_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Corpus store; enables gold-in-context scoring.")
@click.option("--at-k", type=int, default=10,
              help="Context depth for gold-in-context (method default: 10).")
@_handled
def eval_cmd(report_path: str, golds: str, out: str, corpus_path: str | None,
             at_k: int):
    """Score an answer report against gold answers."""
    records = _read_records(report_path)
    golds_by_qid: dict[str, list[str]] = {}
    for rec in _read_records(golds):
        if "qid" not in rec or "golds" not in rec:
            raise FormatError(f"{golds}: record needs 'qid' and 'golds': {rec!r}")
        golds_by_qid[rec["qid"]] = list(rec["golds"])
    corpus = load_corpus(corpus_path) if corpus_path else None
    try:
        scored = evaluate_records(records, golds_by_qid, corpus=corpus, k=at_k)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc

    rows = [{"qid": s.qid, "em": s.em, "f1": s.f1, "coverage": s.coverage,
             "gt_initial": s.gt_initial, "gt_reranked": s.gt_reranked}
            for s in scored.scores]
    rows.append({"aggregate": scored.aggregate()})
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    _write_records(out, rows)
    click.echo(render_eval_table(scored))


@main.command("cost-report")
@click.option("--report", "report_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Answer report(s); repeat to compare modes side by side.")
@_handled
def cost_report(report_paths: tuple[str, ...]):
    """Tabulate per-question prompt and token costs by mode."""
    records: list[dict] = []
    for path in report_paths:
        records.extend(_read_records(path))
    click.echo(render_cost_table(cost_summary(records)))


if __name__ == "__main__":
    main()
