"""Gate behavior under a calibrated threshold.

Probes the toy model with random exploratory embeddings, takes the median
gap statistic of a prior sample as the acceptance threshold, then reports
how many attempts the gate needs on fresh seeds.  A median threshold should
accept roughly every second attempt.
"""

import argparse

import numpy as np

from vecqa.backends import GenerationRequest
from vecqa.backends.toy import ToyBackend
from vecqa.gate import (GateConfig, acquire_exploratory, gap_statistic,
                        sample_exploratory)

PROMPT = "Question: which word names the planted answer?\n\nAnswer:"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--prior", type=int, default=200,
                    help="Samples used to estimate the threshold.")
    ap.add_argument("--runs", type=int, default=500)
    ap.add_argument("--top-gaps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backend = ToyBackend(seed=args.seed)
    dim = backend.info()["input_dim"]

    def statistic(seed: int) -> float:
        vec = sample_exploratory(dim, seed, 1)
        trace = backend.generate(GenerationRequest(
            prompt=PROMPT, max_tokens=1, inject_embedding=vec,
            return_hidden=True, top_logprobs=1))
        return gap_statistic(trace.injected_hidden, args.top_gaps)

    prior = np.array([statistic(s) for s in range(args.prior)])
    threshold = float(np.median(prior))
    print(f"prior statistics: n={args.prior} "
          f"min={prior.min():.4f} median={threshold:.4f} max={prior.max():.4f}")

    attempts = []
    for i in range(args.runs):
        cfg = GateConfig(threshold=threshold, top_gaps=args.top_gaps,
                         seed=10_000 + i)
        attempts.append(acquire_exploratory(backend, PROMPT, cfg).attempt)
    attempts = np.array(attempts)
    print(f"runs={args.runs} mean attempts={attempts.mean():.3f} "
          f"max={attempts.max()} accepted on first try: "
          f"{(attempts == 1).mean():.1%}")


if __name__ == "__main__":
    main()
