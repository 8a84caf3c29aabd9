import numpy as np
import pytest
import torch

from lmolab.errors import InvalidParameter, UnsupportedNorm
from lmolab.linalg import rms_norm
from lmolab.norms import INF, NormPair, induced_norm
from lmolab.optim import (
    RULES,
    TRUE_PAIRS,
    LabOptimizer,
    OptimizerConfig,
    OptimizerState,
    cosine_lr,
    lmo_direction,
    lmo_optimality_check,
    pair_lmo,
    resolve_rule,
    step,
)


def test_sign_rule():
    m = np.array([[0.5, -2.0], [0.0, 3.0]])
    np.testing.assert_array_equal(lmo_direction(m, "sign"), [[1, -1], [0, 1]])


def test_row_and_col_max():
    m = np.array([[1.0, -3.0], [2.0, 0.5]])
    np.testing.assert_array_equal(lmo_direction(m, "row_max"), [[0, -1], [1, 0]])
    np.testing.assert_array_equal(lmo_direction(m, "col_max"), [[0, -1], [1, 0]])
    m2 = np.array([[1.0, 4.0], [2.0, 0.5]])
    np.testing.assert_array_equal(lmo_direction(m2, "col_max"), [[0, 1], [1, 0]])


@pytest.mark.parametrize("rule", RULES)
def test_lmo_attains_dual_norm_at_unit_radius(rule, rng):
    m = rng.standard_normal((5, 7))
    u = lmo_direction(m, rule)
    pair = TRUE_PAIRS[rule]
    size = np.linalg.norm(u) if pair is None else induced_norm(u, pair)
    assert size == pytest.approx(1.0)


@pytest.mark.parametrize("rule", RULES)
def test_optimality_check_no_violations(rule, rng):
    rep = lmo_optimality_check(rng.standard_normal((4, 6)), rule, trials=100, seed=1)
    assert rep.violations == 0
    assert rep.best_value >= rep.max_competitor - 1e-9


def test_optimality_notes_label_mismatch(rng):
    rep = lmo_optimality_check(rng.standard_normal((3, 3)), "row_max", trials=5)
    assert rep.notes and "(inf,inf)" in rep.notes[0]


@pytest.mark.parametrize("pair", [(1, 1), (1, 2), (1, INF), (2, 2), (INF, INF)])
def test_pair_lmo_is_maximizer(pair, rng):
    m = rng.standard_normal((4, 5))
    u = pair_lmo(m, pair)
    assert induced_norm(u, pair) == pytest.approx(1.0)
    for _ in range(200):
        z = rng.standard_normal((4, 5))
        z /= induced_norm(z, pair)
        assert np.sum(z * m) <= np.sum(u * m) + 1e-12


def test_pair_lmo_unsupported():
    with pytest.raises(UnsupportedNorm):
        pair_lmo(np.eye(2), (2, INF))


def test_resolve_aliases():
    assert resolve_rule("Muon") == "orth"
    assert resolve_rule("signSGD") == "sign"
    assert resolve_rule("adamw") == "adamw"
    with pytest.raises(InvalidParameter):
        resolve_rule("lion")


def test_step_is_rms_aligned(rng):
    cfg = OptimizerConfig(rule="sign", lr=0.1, momentum=0.0)
    w = np.zeros((4, 4))
    g = rng.standard_normal((4, 4))
    step(w, g, OptimizerState(), cfg)
    assert rms_norm(w) == pytest.approx(0.1 * 0.2)


def test_step_momentum_accumulates():
    cfg = OptimizerConfig(rule="raw", lr=1.0, momentum=0.5)
    st = OptimizerState()
    w = np.zeros((1, 2))
    step(w, np.array([[1.0, 0.0]]), st, cfg)
    step(w, np.array([[0.0, 1.0]]), st, cfg)
    np.testing.assert_allclose(st.momentum, [[0.25, 0.5]])
    assert st.step_count == 2


def test_zero_gradient_skips_update():
    cfg = OptimizerConfig(rule="orth", lr=1.0, weight_decay=0.5)
    st = OptimizerState()
    w = np.ones((2, 2))
    step(w, np.zeros((2, 2)), st, cfg)
    np.testing.assert_array_equal(w, np.ones((2, 2)))
    assert st.step_count == 1


def test_weight_decay_decoupled():
    cfg = OptimizerConfig(rule="sign", lr=0.1, weight_decay=0.1, momentum=0.0, rms_scale=0.0)
    w = np.ones((2, 2))
    step(w, np.ones((2, 2)), OptimizerState(), cfg)
    np.testing.assert_allclose(w, 0.99 * np.ones((2, 2)))


def test_adamw_first_step_is_lr_sign():
    cfg = OptimizerConfig(rule="adamw", lr=0.01)
    w = np.zeros((2, 3))
    g = np.array([[1.0, -2.0, 3.0], [-1e-3, 5.0, -7.0]])
    step(w, g, OptimizerState(), cfg)
    np.testing.assert_allclose(w, -0.01 * np.sign(g), rtol=1e-4)


def test_adamw_matches_torch(rng):
    w0 = rng.standard_normal((3, 4))
    grads = [rng.standard_normal((3, 4)) for _ in range(5)]
    cfg = OptimizerConfig(rule="adamw", lr=0.01, weight_decay=0.1)
    w = w0.copy()
    st = OptimizerState()
    for g in grads:
        step(w, g, st, cfg)
    p = torch.nn.Parameter(torch.tensor(w0))
    opt = torch.optim.AdamW([p], lr=0.01, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.1)
    for g in grads:
        p.grad = torch.tensor(g)
        opt.step()
    np.testing.assert_allclose(w, p.detach().numpy(), atol=1e-12)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        OptimizerConfig(momentum=1.0)
    with pytest.raises(InvalidParameter):
        OptimizerConfig(orthogonalizer="svd")


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1.0) == pytest.approx(0.1)
    assert cosine_lr(9, 100, 1.0) == pytest.approx(1.0)
    assert cosine_lr(10, 100, 1.0) == pytest.approx(1.0)
    assert cosine_lr(99, 100, 1.0) < 0.01
    vals = [cosine_lr(i, 100, 1.0) for i in range(10, 100)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_lab_optimizer_matches_reference(rng):
    w0 = rng.standard_normal((4, 3))
    g = rng.standard_normal((4, 3))
    cfg = OptimizerConfig(rule="orth", lr=0.05, orthogonalizer="exact")
    p = torch.nn.Parameter(torch.tensor(w0))
    b = torch.nn.Parameter(torch.zeros(3, dtype=torch.float64))
    opt = LabOptimizer([p], [b], cfg)
    p.grad = torch.tensor(g)
    b.grad = torch.ones(3, dtype=torch.float64)
    opt.step()
    w = w0.copy()
    step(w, g, OptimizerState(), cfg)
    np.testing.assert_allclose(p.detach().numpy(), w, atol=1e-14)
    np.testing.assert_allclose(b.detach().numpy(), -0.05 * np.ones(3), rtol=1e-6)


def test_lab_optimizer_lr_scale():
    p = torch.nn.Parameter(torch.zeros(2, 2))
    opt = LabOptimizer([p], [], OptimizerConfig(lr=0.1))
    opt.set_lr_scale(0.5)
    assert opt.param_groups[0]["lr"] == pytest.approx(0.05)
