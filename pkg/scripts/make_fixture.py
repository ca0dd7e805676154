"""Regenerate the bundled 50-question synthetic fixture.

Writes corpus.jsonl, questions.jsonl, script.json, and run.conf under
fixtures/synth50.  The corpus plants three gold and eight decoy passages per
question inside filler; the script answers every question with its gold plus
an entropy-spread filler candidate.  Rerun after changing the generators;
the output is deterministic.
"""

import argparse
from pathlib import Path

from vecqa.synth import make_planted_corpus, make_script, write_fixture

REPO = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(REPO / "fixtures" / "synth50"))
    ap.add_argument("--questions", type=int, default=50)
    ap.add_argument("--passages", type=int, default=800)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    fixture = make_planted_corpus(n_questions=args.questions,
                                  total_passages=args.passages,
                                  seed=args.seed)
    script = make_script(fixture.questions, seed=args.seed)
    config = [
        "# fifty scripted questions over a planted corpus",
        "run.mode=embqa",
        f"run.seed={args.seed}",
        "retrieval.m=100",
        "retrieval.n=10",
        "backend.kind=scripted",
        # relative to the repo root; run the CLI from there
        f"backend.script={(Path(args.out) / 'script.json').resolve().relative_to(REPO)}",
    ]
    paths = write_fixture(fixture, args.out, script=script, config_lines=config)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
