"""Desk-scale comparison runs (N=8, M=32, multipath channel).

Trains the requested models on one shared dataset and prints NMSE per SNR,
plus the LMMSE references. Example:

    python scripts/desk_experiments.py --models dp,sp,dp-attn,dp-s25 --steps 6000
"""

import argparse
import time

from pilotprune.baselines import LmmseEstimator, fft_pilots, subcarrier_stats
from pilotprune.channel import ChannelConfig, generate_dataset
from pilotprune.model import ModelConfig, ModelEstimator
from pilotprune.pruning import PruneConfig
from pilotprune.training import TrainConfig, evaluate_nmse, train

MODELS = {
    "dp": dict(mode="dp"),
    "sp": dict(mode="sp"),
    "dp-attn": dict(mode="dp", attention=True),
    "fft-attn": dict(mode="fft", attention=True),
    "dp-s25": dict(mode="dp", sparsity=0.25),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--models", default="dp,sp")
    ap.add_argument("--steps", type=int, default=6000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--pilot-len", type=int, default=4)
    ap.add_argument("--snr-range", default="-5:10", help="LO:HI, or a single value for fixed-SNR training")
    ap.add_argument("--snr-list", default="-5,0,10")
    ap.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    channel = ChannelConfig(8, 32, 4)
    train_set = generate_dataset(channel, 5000, "train", 1)
    test_set = generate_dataset(channel, 500, "test", 1)
    snrs = [float(s) for s in args.snr_list.split(",")]
    if ":" in args.snr_range:
        lo, hi = (float(v) for v in args.snr_range.split(":"))
        snr_kw = dict(snr_range=(lo, hi))
    else:
        snr_kw = dict(snr_db=float(args.snr_range))
    n_active = args.pilot_len * channel.n_subcarriers
    stats = subcarrier_stats(train_set)

    results = {"lmmse-fft": LmmseEstimator(fft_pilots(args.pilot_len, 8, 32), stats)}
    for name in args.models.split(","):
        spec = dict(MODELS[name])
        sparsity = spec.pop("sparsity", 0.0)
        model = ModelConfig(8, 32, args.pilot_len, conv_width=args.width, **spec)
        prune = PruneConfig(sparsity, args.reg_lambda, args.steps) if sparsity else None
        cfg = TrainConfig(model=model, steps=args.steps, batch=args.batch, seed=args.seed, prune=prune, **snr_kw)
        start = time.time()
        graph = train(train_set, cfg).graph
        print(f"{name}: {time.time() - start:.0f} s, {graph.mask.n_zeros} pruned", flush=True)
        results[name] = ModelEstimator(graph)
        results[name + "/lmmse"] = LmmseEstimator(graph.pilots, stats, graph.mask.mask)

    print("estimator".ljust(16) + "".join(f"{s:>9.1f}" for s in snrs))
    for name, est in results.items():
        row = [evaluate_nmse(est, test_set, s, n_active)[1] for s in snrs]
        print(name.ljust(16) + "".join(f"{v:9.2f}" for v in row), flush=True)


if __name__ == "__main__":
    main()
