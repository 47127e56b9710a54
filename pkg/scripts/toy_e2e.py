"""Train the desk model with the joint SCTC + transducer loss and report dev/test metrics."""

import argparse
import json
import logging
import time

from jointslu.config import toy_config
from jointslu.pipeline import evaluate, load_data, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lam", type=float, default=0.5)
    ap.add_argument("--lr", type=float, default=None, help="override the calibrated step size")
    ap.add_argument("--schedule", choices=["constant", "cosine"], default=None)
    ap.add_argument("--eval-every", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = toy_config(args.seed, args.epochs)
    plan = cfg.stages[0]
    plan.lam, plan.eval_every = args.lam, args.eval_every
    if args.lr is not None:
        plan.lr = args.lr
    if args.schedule is not None:
        plan.lr_schedule = args.schedule
    data = load_data(cfg)
    t0 = time.perf_counter()
    model, record = train(cfg, data, out_dir=args.out)
    for line in record.lines:
        if "dev" in line:
            print(json.dumps({"epoch": line["epoch"], "loss": line["loss"], **line["dev"]}))
    test = evaluate(model, data["test"])
    print(json.dumps({"split": "test", "minutes": (time.perf_counter() - t0) / 60, **test}))


if __name__ == "__main__":
    main()
