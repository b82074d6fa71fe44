"""Experiment harness: ablations, SP/DP comparison, pilot schemes, SER, FLOPs."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .baselines import LmmseEstimator, fft_pilots
from .channel import Dataset, reference_noise_var
from .errors import UsageError
from .model import ModelEstimator, ModelGraph, param_count, table_param_count
from .pruning import PruneConfig, PruneMask, periodic_mask
from .training import TrainConfig, eval_noise, nmse, to_db, train

log = logging.getLogger(__name__)

DEFAULT_EVAL_SEED = 2024
RANDOM_GUESS_SER = 0.75
QAM4 = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


@dataclass
class EvalRow:
    scheme: str
    mode: str
    estimator: str
    L: int
    S: float
    snr_db: float
    nmse_db: float
    ser: float | None = None
    param_count_paper: int | None = None
    param_count_actual: int | None = None
    flops: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.nmse_db):
            raise UsageError(f"non-finite NMSE for {self.scheme} at {self.snr_db} dB")
        if self.ser is not None and not 0.0 <= self.ser <= 1.0:
            raise UsageError(f"SER {self.ser} outside [0, 1]")

    @property
    def key(self):
        return (self.scheme, float(self.snr_db))


_INT_FIELDS = {"L", "param_count_paper", "param_count_actual", "flops"}
_FLOAT_FIELDS = {"S", "snr_db", "nmse_db", "ser"}
COLUMNS = [f.name for f in fields(EvalRow)]


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, row: EvalRow):
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def find(self, scheme, snr_db=None):
        hits = [r for r in self.rows if r.scheme == scheme and (snr_db is None or r.snr_db == snr_db)]
        if not hits:
            raise KeyError(f"no row for scheme {scheme!r} at {snr_db}")
        return hits[0] if snr_db is not None else hits

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(row).items()})
        return buf.getvalue()

    def write(self, path):
        from .persist import atomic_write

        atomic_write(path, self.to_csv().encode("utf-8"))

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            values = {}
            for name in COLUMNS:
                raw = rec.get(name, "")
                if raw in ("", None):
                    values[name] = None
                elif name in _INT_FIELDS:
                    values[name] = int(raw)
                elif name in _FLOAT_FIELDS:
                    values[name] = float(raw)
                else:
                    values[name] = raw
            rows.append(EvalRow(**values))
        return cls(rows)

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())

    @classmethod
    def merge(cls, reports) -> "EvalReport":
        """Concatenate reports; a later row replaces an earlier one with the same (scheme, snr)."""
        merged = {}
        for report in reports:
            for row in report.rows:
                merged[row.key] = row
        return cls(list(merged.values()))


@dataclass(frozen=True)
class SerConfig:
    grid_t: int = 8
    n_symbols: int = 10**6
    seed: int = 7

    def __post_init__(self):
        if self.grid_t < 1 or self.n_symbols < 1:
            raise UsageError("grid length and symbol budget must be positive")


def flops_report(pilot_len, n_antennas, n_subcarriers, rho=3, s=128, t=128, q=128):
    """Leading-order FLOP counts with unit constants."""
    l, n, m = pilot_len, n_antennas, n_subcarriers
    conv = n * m * rho**2 * s * t
    return {
        "dp-attn": l * n * m + conv + n**2 * m**2 * q,
        "dp": l * n * m + conv,
        "sp": l * n * m + conv,
        "lmmse": l * n * m,
        "extended-lmmse": n**2 * m**2,
    }


def _row_counts(estimator_tag, graph: ModelGraph | None, l, n, m):
    if graph is not None:
        cfg = graph.config
        width = cfg.conv_width
        key = "dp" if cfg.mode == "fft" else cfg.mode
        flops_key = "lmmse" if cfg.linear_only else key + ("-attn" if cfg.attention else "")
        flops = flops_report(l, n, m, 3, width, width, width if cfg.attention else 0)
        flops = flops.get(flops_key, flops["dp"])
        return param_count(graph, "paper"), param_count(graph, "actual"), int(flops)
    count = table_param_count(estimator_tag, l, n, m)
    return count, count, int(flops_report(l, n, m)[estimator_tag])


def _budget_noise(test: Dataset, snr_db, n_active, noise_var=None):
    return reference_noise_var(snr_db, test, n_active) if noise_var is None else noise_var


def evaluate_rows(report, entries, test: Dataset, snr_list, n_active, eval_seed=DEFAULT_EVAL_SEED):
    """One row per (entry, snr); every entry sees the same noise draws.

    ``entries`` are dicts with keys scheme, mode, estimator (object), tag,
    L, S and optionally graph.
    """
    h = test.samples
    _, n, m = h.shape
    noise_cache = {}
    for snr in snr_list:
        sigma2 = _budget_noise(test, snr, n_active)
        for e in entries:
            l = e["L"]
            if l not in noise_cache:
                noise_cache[l] = eval_noise(len(test), l, m, eval_seed)
            value = nmse(h, e["estimator"].estimate(h, sigma2, noise_cache[l]))
            paper, actual, flops = _row_counts(e["tag"], e.get("graph"), l, n, m)
            report.add(EvalRow(e["scheme"], e["mode"], e["tag"], l, e.get("S", 0.0), float(snr),
                               to_db(value), None, paper, actual, flops))
    return report


def run_ablation(test: Dataset, snr_list, nn_graph: ModelGraph, fft_graph: ModelGraph, stats,
                 eval_seed=DEFAULT_EVAL_SEED, override=None) -> EvalReport:
    """Four schemes: learned or DFT pilots, each followed by the network or closed-form LMMSE.

    ``override`` substitutes one estimator for all four (plumbing checks).
    """
    l = nn_graph.config.pilot_len
    if fft_graph.config.pilot_len != l:
        raise UsageError("ablation graphs must share the pilot length")
    n = nn_graph.config.n_antennas
    dft = fft_pilots(l, n, nn_graph.config.n_subcarriers)
    entries = [
        dict(scheme="NN+NN+Attention", mode=nn_graph.config.mode, tag="dp-attn",
             estimator=ModelEstimator(nn_graph), graph=nn_graph, L=l),
        dict(scheme="NN+LMMSE", mode=nn_graph.config.mode, tag="lmmse",
             estimator=LmmseEstimator(nn_graph.pilots, stats), L=l),
        dict(scheme="FFT+NN+Attention", mode="fft", tag="dp-attn",
             estimator=ModelEstimator(fft_graph), graph=fft_graph, L=l),
        dict(scheme="FFT+LMMSE", mode="fft", tag="lmmse", estimator=LmmseEstimator(dft, stats), L=l),
    ]
    if override is not None:
        for e in entries:
            e["estimator"] = override
    return evaluate_rows(EvalReport(), entries, test, snr_list, l * nn_graph.config.n_subcarriers, eval_seed)


def run_sp_dp(test: Dataset, snr_list, graphs: dict, eval_seed=DEFAULT_EVAL_SEED) -> EvalReport:
    """Rows for each supplied graph under its label ('SP', 'DP', 'DP+Attention')."""
    if not graphs:
        raise UsageError("no trained graphs supplied")
    lens = {g.config.pilot_len for g in graphs.values()}
    if len(lens) != 1:
        raise UsageError(f"graphs disagree on pilot length: {sorted(lens)}")
    l = lens.pop()
    entries = [dict(scheme=label, mode=g.config.mode, tag=g.config.tag, estimator=ModelEstimator(g),
                    graph=g, L=l) for label, g in graphs.items()]
    m = next(iter(graphs.values())).config.n_subcarriers
    return evaluate_rows(EvalReport(), entries, test, snr_list, l * m, eval_seed)


@dataclass(frozen=True)
class SchemeSpec:
    scheme: str
    pilot_len: int
    sparsity: float
    kind: str  # dense | periodic | pruned
    period: int = 0


def scheme_specs(base_len, n_subcarriers):
    """Schemes A-E for a budget of base_len * M resource elements."""
    if base_len < 3 or base_len % 3:
        raise UsageError(f"base pilot length must be a positive multiple of 3, got {base_len}")
    if n_subcarriers % 4:
        raise UsageError(f"periodic schemes need M divisible by 4, got {n_subcarriers}")
    l0 = base_len
    specs = [
        SchemeSpec("A", l0, 0.0, "dense"),
        SchemeSpec("B", 4 * l0 // 3, 0.25, "periodic", 4),
        SchemeSpec("C", 4 * l0 // 3, 0.25, "pruned"),
        SchemeSpec("D", 2 * l0, 0.5, "periodic", 2),
        SchemeSpec("E", 2 * l0, 0.5, "pruned"),
    ]
    budget = l0 * n_subcarriers
    for s in specs:
        active = scheme_budget(s, n_subcarriers)
        if active != budget:
            raise UsageError(f"scheme {s.scheme} would use {active} resource elements, budget is {budget}")
    return specs


def scheme_budget(spec: SchemeSpec, n_subcarriers):
    size = spec.pilot_len * n_subcarriers
    if spec.kind == "periodic":
        return periodic_mask(spec.pilot_len, n_subcarriers, spec.period).n_active
    if spec.kind == "pruned":
        return size - PruneMask.ones(spec.pilot_len, n_subcarriers, spec.sparsity).final_zeros()
    return size


def scheme_train_config(spec: SchemeSpec, template: TrainConfig, reg_lambda=1e-6) -> TrainConfig:
    model = replace(template.model, pilot_len=spec.pilot_len)
    cfg = replace(template, model=model, prune=None, fixed_mask=None)
    if spec.kind == "periodic":
        cfg = replace(cfg, fixed_mask=periodic_mask(spec.pilot_len, model.n_subcarriers, spec.period))
    elif spec.kind == "pruned":
        cfg = replace(cfg, prune=PruneConfig(spec.sparsity, reg_lambda, template.steps))
    return cfg


def train_schemes(train_set: Dataset, base_len, template: TrainConfig, only=None, reg_lambda=1e-6):
    """Train the scheme models (all, or the ids in ``only``); returns {id: graph}."""
    graphs = {}
    for spec in scheme_specs(base_len, template.model.n_subcarriers):
        if only is not None and spec.scheme not in only:
            continue
        log.info("training scheme %s (L=%d, %s)", spec.scheme, spec.pilot_len, spec.kind)
        graphs[spec.scheme] = train(train_set, scheme_train_config(spec, template, reg_lambda)).graph
    return graphs


def run_pilot_schemes(test: Dataset, snr_db, base_len, graphs: dict, ser_config: SerConfig | None = None,
                      eval_seed=DEFAULT_EVAL_SEED) -> EvalReport:
    """NMSE (and SER when configured) for each trained scheme graph at equal budget."""
    m = test.samples.shape[2]
    specs = {s.scheme: s for s in scheme_specs(base_len, m)}
    budget = base_len * m
    report = EvalReport()
    for sid, graph in graphs.items():
        spec = specs[sid]
        if graph.config.pilot_len != spec.pilot_len or graph.mask.n_active != budget:
            raise UsageError(f"graph for scheme {sid} has L={graph.config.pilot_len}, "
                             f"{graph.mask.n_active} active elements; expected L={spec.pilot_len}, {budget}")
        entry = dict(scheme=sid, mode=graph.config.mode, tag=graph.config.tag,
                     estimator=ModelEstimator(graph), graph=graph, L=spec.pilot_len, S=spec.sparsity)
        row = evaluate_rows(EvalReport(), [entry], test, [snr_db], budget, eval_seed).rows[0]
        if ser_config is not None:
            row.ser = measure_ser(ModelEstimator(graph), test, ser_config, snr_db, graph.mask.mask,
                                  eval_seed=eval_seed)
        report.add(row)
    return report


_INDEX_FROM_SIGNS = np.array([0, 1, 3, 2])  # (re<0) + 2*(im<0) -> QAM4 index


def measure_ser(estimator, test: Dataset, config: SerConfig, snr_db, mask, noise_var=None,
                eval_seed=DEFAULT_EVAL_SEED, perfect_csi=False):
    """4-QAM symbol error rate on the data resource elements of a T x M grid.

    Pilots occupy the active entries of ``mask`` (L x M, rows 0..L-1 of the
    grid); every other grid element carries data. Each data element uses
    the matched beam w = conj(h_hat)/|h_hat| and the scalar equalizer
    1/(h_hat^T w). Data and pilots share the same per-element power, so the
    noise variance follows the pilot budget.
    """
    mask = np.asarray(mask, dtype=np.int64)
    l, m = mask.shape
    if config.grid_t < l:
        raise UsageError(f"grid length T={config.grid_t} shorter than pilot length L={l}")
    h = test.samples.astype(np.complex128)
    k, n, _ = h.shape
    n_active = int(mask.sum())
    sigma2 = _budget_noise(test, snr_db, n_active, noise_var)
    if perfect_csi:
        h_hat = h
    else:
        h_hat = np.asarray(estimator.estimate(h, sigma2, eval_noise(k, l, m, eval_seed)))

    data_per_sub = config.grid_t - mask.sum(axis=0)  # (M,)
    sub_index = np.repeat(np.arange(m), data_per_sub)
    if sub_index.size == 0:
        raise UsageError("the grid has no data resource elements")
    norm = np.linalg.norm(h_hat, axis=1)  # (K, M)
    zero = norm == 0
    safe = np.where(zero, 1.0, norm)
    w = h_hat.conj() / safe[:, None, :]
    gain = np.einsum("knm,knm->km", h, w)  # true effective gain
    est_gain = norm  # h_hat^T w = |h_hat|
    amp = np.sqrt(1.0 / n_active)  # per-element power of unit-total pilots

    rng = np.random.default_rng([int(config.seed), 0x5E2])
    per_pass = k * sub_index.size
    passes = max(1, math.ceil(config.n_symbols / per_pass))
    errors = total = 0
    if zero.any():
        log.warning("%d (channel, subcarrier) pairs have a zero estimate; decided at random", int(zero.sum()))
    for _ in range(passes):
        sym = rng.integers(0, 4, (k, sub_index.size))
        noise = (rng.standard_normal(sym.shape) + 1j * rng.standard_normal(sym.shape)) * np.sqrt(sigma2 / 2.0)
        y = amp * gain[:, sub_index] * QAM4[sym] + noise
        z = y / (amp * np.where(zero, 1.0, est_gain)[:, sub_index])
        decided = _INDEX_FROM_SIGNS[(z.real < 0).astype(np.int64) + 2 * (z.imag < 0).astype(np.int64)]
        rand = zero[:, sub_index]
        if rand.any():
            decided = np.where(rand, rng.integers(0, 4, sym.shape), decided)
        errors += int((decided != sym).sum())
        total += sym.size
    return errors / total
