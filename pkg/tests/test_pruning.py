import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_error
from pilotprune.errors import UsageError
from pilotprune.model import ModelConfig, build_model, reduction_forward
from pilotprune.pilots import PilotSet
from pilotprune.pruning import (LAMBDA_GRID, N_UPDATES, PruneConfig, PruneMask, apply_schedule, compute_phi,
                                cumulative_zeros, periodic_mask, regularized_loss, regularizer,
                                round_half_down, select_prune_targets)
from pilotprune.tensor import Tensor


def _pilots(p, mode="dp"):
    return PilotSet.from_complex(np.asarray(p, dtype=complex), mode=mode, dtype=np.float64)


def test_phi_zero_pilots():
    assert not compute_phi(_pilots(np.zeros((3, 2, 4)))).any()


def test_phi_single_row():
    assert compute_phi(_pilots([[[3, 4j]]]))[0, 0] == pytest.approx(25.0)


def test_phi_loop_oracle(rng):
    p = rng.standard_normal((5, 3, 4)) + 1j * rng.standard_normal((5, 3, 4))
    phi = compute_phi(_pilots(p))
    for i, j in itertools.product(range(3), range(5)):
        assert phi[i, j] == pytest.approx(sum(abs(p[j, i, n]) ** 2 for n in range(4)), abs=1e-6)
    assert np.allclose(compute_phi(p), phi)


def test_phi_shared_mode_broadcasts(rng):
    p = rng.standard_normal((1, 2, 3)) + 0j
    phi = compute_phi(PilotSet.from_complex(np.repeat(p, 4, axis=0), mode="sp", dtype=np.float64))
    assert phi.shape == (2, 4) and np.allclose(phi, phi[:, :1])


def test_regularized_loss_disabled():
    mse = Tensor(np.array(1.5))
    assert regularized_loss(mse, Tensor(np.array(7.0)), 0.0).item() == 1.5


def test_regularized_loss_arithmetic():
    assert regularized_loss(Tensor(np.array(1.0)), Tensor(np.array(2.0)), 0.5).item() == pytest.approx(2.0)


def test_regularized_loss_rejects_negative():
    with pytest.raises(UsageError):
        regularized_loss(Tensor(np.array(1.0)), Tensor(np.array(1.0)), -1.0)


def test_regularizer_gradient(rng):
    lam = 0.3
    p = rng.uniform(-1, 1, (4, 2, 3)) + 1j * rng.uniform(-1, 1, (4, 2, 3))
    mask = np.array([[1, 0, 1, 1], [1, 1, 0, 1]])
    ps = _pilots(p)
    regularized_loss(Tensor(np.array(0.0)), regularizer(ps, mask), lam).backward()

    def f(re, im):
        return lam * float(np.sum((re ** 2 + im ** 2).sum(axis=2) * mask.T))

    arrays = [p.real.copy(), p.imag.copy()]
    assert rel_error(ps.re.grad, numeric_grad(f, arrays, 0)) < 1e-3
    assert rel_error(ps.im.grad, numeric_grad(f, arrays, 1)) < 1e-3
    # d/dRe = 2 lambda Re on active rows
    assert np.allclose(ps.re.grad, 2 * lam * p.real * mask.T[:, :, None])


def test_regularizer_shared_counts_subcarriers(rng):
    p = rng.standard_normal((1, 2, 3)) + 1j * rng.standard_normal((1, 2, 3))
    ps = PilotSet.from_complex(np.repeat(p, 5, axis=0), mode="sp", dtype=np.float64)
    mask = np.ones((2, 5))
    mask[0, :2] = 0
    assert regularizer(ps, mask).item() == pytest.approx(float((compute_phi(ps) * mask).sum()))


def _mask(rows):
    return PruneMask(np.array(rows, dtype=np.uint8))


def test_select_two_smallest():
    phi = np.array([[0.5, 0.1], [0.3, 0.2]])
    assert select_prune_targets(phi, PruneMask.ones(2, 2), 2) == [(0, 1), (1, 1)]


def test_select_zero():
    assert select_prune_targets(np.ones((2, 2)), PruneMask.ones(2, 2), 0) == []


def test_select_too_many():
    with pytest.raises(UsageError):
        select_prune_targets(np.ones((2, 2)), _mask([[1, 0], [0, 1]]), 3)


def test_select_ties_lexicographic():
    phi = np.zeros((2, 3))
    assert select_prune_targets(phi, _mask([[0, 1, 1], [1, 1, 1]]), 3) == [(0, 1), (0, 2), (1, 0)]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.data())
def test_select_matches_full_sort(l, m, data):
    g = np.random.default_rng(data.draw(st.integers(0, 2**31 - 1)))
    phi = np.round(g.uniform(0, 1, (l, m)), 1)  # coarse values force ties
    mask = PruneMask((g.uniform(size=(l, m)) > 0.3).astype(np.uint8))
    k = data.draw(st.integers(0, mask.n_active))
    oracle = sorted(((phi[i, j], i, j) for i, j in itertools.product(range(l), range(m)) if mask.mask[i, j]))
    assert select_prune_targets(phi, mask, k) == [(i, j) for _, i, j in oracle[:k]]


def test_rounding_half_down():
    assert [round_half_down(x) for x in (2.5, 7.5, 12.5, 2.51, 3.0, 0.49)] == [2, 7, 12, 3, 3, 0]


def test_cumulative_counts_quarter_of_hundred():
    assert [cumulative_zeros(t, 0.25, 100) for t in range(1, 11)] == [2, 5, 7, 10, 12, 15, 17, 20, 22, 25]


def _run_schedule(target, l, m, steps=1000, seed=0):
    cfg = PruneConfig(target=target, total_steps=steps)
    mask = PruneMask.ones(l, m, target)
    g = np.random.default_rng(seed)
    history = [mask]
    for step in range(1, steps + 1):
        mask = apply_schedule(cfg, step, mask, g.uniform(size=(l, m)))
        history.append(mask)
    return cfg, history


def test_zero_target_stays_dense():
    _, history = _run_schedule(0.0, 3, 5)
    assert all(h.n_zeros == 0 for h in history)


def test_half_of_sixty_four():
    _, history = _run_schedule(0.5, 4, 16)
    assert history[-1].n_zeros == 32 and history[-1].updates == N_UPDATES


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.95), st.integers(1, 6), st.integers(1, 12), st.integers(0, 1000))
def test_schedule_monotone_and_exact(target, l, m, seed):
    cfg, history = _run_schedule(target, l, m, steps=200, seed=seed)
    for before, after in zip(history, history[1:]):
        assert np.all(after.mask <= before.mask)
    assert history[-1].n_zeros == round_half_down(target * l * m)
    for t, step in enumerate(cfg.schedule, start=1):
        assert history[step].n_zeros == cumulative_zeros(t, target, l * m)


def test_schedule_points():
    cfg = PruneConfig(0.25, total_steps=20000)
    assert cfg.schedule == tuple(1600 * t for t in range(1, 11))
    assert cfg.schedule[-1] == 0.8 * 20000


def test_mask_unchanged_between_points():
    cfg = PruneConfig(0.5, total_steps=100)
    mask = PruneMask.ones(2, 4, 0.5)
    assert apply_schedule(cfg, 1, mask, np.ones((2, 4))) is mask


@pytest.mark.parametrize("kwargs", [dict(target=1.0), dict(target=-0.1), dict(reg_lambda=-1.0),
                                    dict(schedule=(1, 2, 3)), dict(schedule=tuple(range(10, 0, -1)))])
def test_config_validation(kwargs):
    with pytest.raises(UsageError):
        PruneConfig(**kwargs)


def test_lambda_grid():
    assert LAMBDA_GRID == (1e-3, 1e-4, 1e-5, 1e-6)


def test_mask_validation():
    with pytest.raises(UsageError):
        PruneMask(np.array([[0, 2]]))
    m = PruneMask.ones(2, 2)
    with pytest.raises(ValueError):
        m.mask[0, 0] = 0


def test_periodic_masks():
    b = periodic_mask(4, 32, 4)
    d = periodic_mask(6, 32, 2)
    assert b.n_active == 3 * 32 and d.n_active == 3 * 32
    assert np.all(b.mask.sum(axis=0) == 3)  # every subcarrier keeps L0 pilots


def test_snr_bound_cauchy_schwarz(rng):
    cfg = ModelConfig(5, 7, 3, conv_width=2)
    graph = build_model(cfg, seed=2, dtype=np.float64)
    h = rng.standard_normal((6, 5, 7)) + 1j * rng.standard_normal((6, 5, 7))
    yr, yi = reduction_forward(h, graph.pilots, None, 0.0)
    y = (yr.data ** 2 + yi.data ** 2).transpose(2, 1, 0)  # (B, L, M)
    phi = compute_phi(graph.pilots)
    bound = phi[None] * np.sum(np.abs(h) ** 2, axis=1)[:, None, :]
    assert np.all(y <= bound + 1e-6)
