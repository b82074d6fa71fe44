"""Train pilot schemes at equal budget and print NMSE, SER and per-subcarrier pilot counts.

    python scripts/scheme_probe.py --schemes A,E --steps 12000
"""

import argparse
import time

import numpy as np

from pilotprune.channel import ChannelConfig, generate_dataset
from pilotprune.evaluation import SerConfig, run_pilot_schemes, scheme_specs, scheme_train_config
from pilotprune.model import ModelConfig
from pilotprune.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--schemes", default="A,E")
    ap.add_argument("--steps", type=int, default=6000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--snr-db", type=float, default=10.0)
    ap.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    channel = ChannelConfig(8, 32, 4)
    train_set, test_set = generate_dataset(channel, 5000, "train", 1), generate_dataset(channel, 500, "test", 1)
    template = TrainConfig(model=ModelConfig(8, 32, 3, conv_width=args.width), steps=args.steps,
                           batch=args.batch, snr_db=args.snr_db, seed=args.seed)
    specs = {s.scheme: s for s in scheme_specs(3, 32)}
    graphs = {}
    for sid in args.schemes.split(","):
        start = time.time()
        graphs[sid] = train(train_set, scheme_train_config(specs[sid], template, args.reg_lambda)).graph
        counts = graphs[sid].mask.mask.sum(axis=0)
        print(f"{sid}: {time.time() - start:.0f} s, pilots per subcarrier {np.bincount(counts).tolist()}", flush=True)
    report = run_pilot_schemes(test_set, args.snr_db, 3, graphs, SerConfig())
    for row in report.rows:
        print(f"{row.scheme}: NMSE {row.nmse_db:.2f} dB, SER {row.ser:.3e}", flush=True)


if __name__ == "__main__":
    main()
