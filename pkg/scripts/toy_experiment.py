#!/usr/bin/env python3
"""Run the desk-scale multilingual experiment and print a metrics report.

Example:
    python scripts/toy_experiment.py --work-dir /tmp/toy --steps 600
"""

import argparse
import json
import tempfile

from multislt.experiment import moving_average, run_toy_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work-dir", default=None,
                    help="dataset/checkpoint directory (default: temp dir)")
    ap.add_argument("--seed", type=int, default=17)
    ap.add_argument("--languages", type=int, default=3)
    ap.add_argument("--n-utt", type=int, default=3000)
    ap.add_argument("--steps", type=int, default=700)
    ap.add_argument("--accum", type=int, default=4)
    ap.add_argument("--warmup", type=int, default=130)
    ap.add_argument("--lr-max", type=float, default=0.003)
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--max-eval", type=int, default=None)
    args = ap.parse_args()

    work_dir = args.work_dir or tempfile.mkdtemp(prefix="toyexp_")
    result = run_toy_experiment(
        work_dir, seed=args.seed, n_languages=args.languages,
        n_utt_per_lang=args.n_utt, steps=args.steps, accum=args.accum,
        warmup=args.warmup,
        lr_max=args.lr_max, checkpoint=args.checkpoint,
        max_eval=args.max_eval, verbose=True)

    ma = moving_average(result["losses"], 20)
    summary = {
        "updates": result["updates"],
        "first_ma20": ma[0],
        "last_ma20": ma[-1],
        "ma20_strictly_decreasing_first_200": all(
            b < a for a, b in zip(ma[:181], ma[1:181])),
        "audit": result["audit"],
        "token_accuracy": result["token_accuracy"],
        "n_eval": result["n_eval"],
        "seconds": round(result["seconds"], 1),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
