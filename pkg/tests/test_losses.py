import math

import numpy as np
import pytest

from edgeuda import losses
from edgeuda.tensor import Tensor, zero_grads

from helpers import finite_diff, max_rel_err


def test_dice_perfect_overlap_is_one():
    rng = np.random.default_rng(1)
    e = (rng.uniform(size=(12, 12)) < 0.3).astype(float)
    assert e.sum() > 0
    d = losses.dice(e, Tensor(e.copy())).item()
    assert abs(d - 1.0) < 1e-6


def test_dice_disjoint_supports_is_zero():
    e = np.zeros((6, 6))
    e[:3] = 1.0
    p = np.zeros((6, 6))
    p[4:] = 0.7
    assert losses.dice(e, Tensor(p)).item() == 0.0


def test_dice_constant_half_prediction_closed_form():
    rng = np.random.default_rng(2)
    e = (rng.uniform(size=(9, 11)) < 0.2).astype(float)
    k = e.sum()
    n_pixels = e.size
    p = np.full_like(e, 0.5)
    want = 2.0 * (0.5 * k) / (k + 0.25 * n_pixels + losses.DICE_EPS)
    got = losses.dice(e, Tensor(p)).item()
    assert got == pytest.approx(want, rel=1e-12)
    # Independent direct summation of the same formula.
    direct = 2 * (e * p).sum() / ((e * e).sum() + (p * p).sum() + 1e-8)
    assert got == pytest.approx(direct, rel=1e-12)


def test_dice_stays_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        e = (rng.uniform(size=(5, 5)) < rng.uniform()).astype(float)
        p = rng.uniform(size=(5, 5))
        d = losses.dice(e, Tensor(p)).item()
        assert 0.0 <= d <= 1.0


def test_dice_symmetric_under_joint_permutation():
    rng = np.random.default_rng(4)
    e = (rng.uniform(size=(6, 6)) < 0.4).astype(float)
    p = rng.uniform(size=(6, 6))
    perm = rng.permutation(36)
    d1 = losses.dice(e, Tensor(p)).item()
    d2 = losses.dice(e.reshape(-1)[perm].reshape(6, 6), Tensor(p.reshape(-1)[perm].reshape(6, 6))).item()
    assert d1 == pytest.approx(d2, rel=1e-12)


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        losses.dice(np.zeros((3, 3)), Tensor(np.zeros((3, 4))))


def test_dice_rejects_non_binary_target():
    with pytest.raises(ValueError):
        losses.dice(np.full((2, 2), 0.5), Tensor(np.zeros((2, 2))))


def test_one_minus_dice_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    e = (rng.uniform(size=(5, 5)) < 0.4).astype(float)
    p = Tensor(rng.uniform(0.1, 0.9, size=(5, 5)), requires_grad=True)

    loss = 1.0 - losses.dice(e, p)
    loss.backward()
    numeric = finite_diff(lambda: (1.0 - losses.dice(e, p)).item(), p.data)
    assert max_rel_err(p.grad, numeric) < 1e-4


def test_edge_loss_perfect_and_disjoint():
    e_s = np.zeros((8, 8))
    e_s[2:5, 2:5] = 1.0
    e_t = np.zeros((8, 8))
    e_t[5:7, 1:4] = 1.0

    l_init, l_final = losses.edge_loss(
        e_s, e_t, Tensor(e_s.copy()), Tensor(e_t.copy()), Tensor(e_s.copy()), Tensor(e_t.copy())
    )
    assert l_init.item() == pytest.approx(0.0, abs=1e-6)
    assert l_final.item() == pytest.approx(0.0, abs=1e-6)

    inv_s = Tensor(np.where(e_s > 0, 0.0, 1.0))
    inv_t = Tensor(np.where(e_t > 0, 0.0, 1.0))
    l_init, l_final = losses.edge_loss(e_s, e_t, inv_s, inv_t, inv_s, inv_t)
    assert l_init.item() == pytest.approx(2.0)
    assert l_final.item() == pytest.approx(2.0)


def test_edge_loss_composes_dice_terms():
    rng = np.random.default_rng(6)
    e_s = (rng.uniform(size=(7, 7)) < 0.3).astype(float)
    e_t = (rng.uniform(size=(7, 7)) < 0.3).astype(float)
    half = np.full((7, 7), 0.5)
    l_init, _ = losses.edge_loss(
        e_s, e_t, Tensor(half), Tensor(half), Tensor(half), Tensor(half)
    )
    want = (1 - losses.dice(e_s, Tensor(half)).item()) + (1 - losses.dice(e_t, Tensor(half)).item())
    assert l_init.item() == pytest.approx(want, rel=1e-12)


def _uniform_probs(c, h, w):
    return np.full((c, h, w), 1.0 / c)


def test_cross_entropy_exact_prediction_is_zero():
    labels = np.array([[0, 1], [1, 0]])
    probs = np.zeros((2, 2, 2))
    for r in range(2):
        for c in range(2):
            probs[labels[r, c], r, c] = 1.0
    assert losses.cross_entropy(labels, Tensor(probs)).item() == 0.0


def test_cross_entropy_uniform_prediction():
    labels = np.zeros((3, 3), dtype=int)
    loss = losses.cross_entropy(labels, Tensor(_uniform_probs(4, 3, 3)))
    assert loss.item() == pytest.approx(math.log(4.0), rel=1e-12)


def test_cross_entropy_all_ignored_is_zero():
    labels = np.full((3, 3), losses.IGNORE_INDEX, dtype=int)
    probs = Tensor(_uniform_probs(4, 3, 3), requires_grad=True)
    loss = losses.cross_entropy(labels, probs)
    assert loss.item() == 0.0
    loss.backward()
    assert probs.grad is None or np.all(probs.grad == 0.0)


def test_cross_entropy_ignores_pixel_contents():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 3, size=(4, 4))
    labels[1, 1] = losses.IGNORE_INDEX
    labels[2, 3] = losses.IGNORE_INDEX

    base = rng.dirichlet(np.ones(3), size=(4, 4)).transpose(2, 0, 1)
    probs = Tensor(base.copy(), requires_grad=True)
    loss = losses.cross_entropy(labels, probs)
    loss.backward()
    value1, grad1 = loss.item(), probs.grad.copy()

    perturbed = base.copy()
    perturbed[:, 1, 1] = [0.98, 0.01, 0.01]
    perturbed[:, 2, 3] = [0.2, 0.5, 0.3]
    probs2 = Tensor(perturbed, requires_grad=True)
    loss2 = losses.cross_entropy(labels, probs2)
    loss2.backward()
    assert loss2.item() == value1
    np.testing.assert_array_equal(probs2.grad, grad1)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 3, size=(3, 3))
    labels[0, 0] = losses.IGNORE_INDEX
    probs = Tensor(rng.dirichlet(np.ones(3), size=(3, 3)).transpose(2, 0, 1), requires_grad=True)
    loss = losses.cross_entropy(labels, probs)
    loss.backward()
    numeric = finite_diff(lambda: losses.cross_entropy(labels, probs).item(), probs.data)
    assert max_rel_err(probs.grad, numeric) < 1e-4
    zero_grads([probs])


def test_cross_entropy_rejects_out_of_range_class():
    labels = np.array([[0, 5]])
    with pytest.raises(ValueError):
        losses.cross_entropy(labels, Tensor(_uniform_probs(3, 1, 2)))


def test_total_loss_arithmetic():
    def scalar(v):
        return Tensor(np.asarray(v))

    total, report = losses.total_loss(scalar(0.5), scalar(0.4), 0.5, scalar(1.0), scalar(0.9))
    assert total.item() == pytest.approx(1.85, rel=1e-12)
    assert report.l_total == total.item()

    total, report = losses.total_loss(scalar(0.5), scalar(0.4), 0.0, scalar(1.0), scalar(0.9))
    assert total.item() == pytest.approx(0.9, rel=1e-12)

    total, report = losses.total_loss(scalar(0.0), scalar(0.0), 1.0, scalar(0.0), scalar(0.0))
    assert total.item() == 0.0

    total, report = losses.total_loss(scalar(0.3), scalar(0.2), 1.0)
    assert total.item() == pytest.approx(0.5, rel=1e-12)
    assert report.l_edge_init == 0.0 and report.l_edge_final == 0.0


def test_total_loss_report_identity():
    rng = np.random.default_rng(9)
    for _ in range(20):
        vals = rng.uniform(0, 2, size=4)
        lam = float(rng.uniform(0, 3))
        total, report = losses.total_loss(
            Tensor(np.asarray(vals[0])), Tensor(np.asarray(vals[1])), lam,
            Tensor(np.asarray(vals[2])), Tensor(np.asarray(vals[3])),
        )
        want = report.l_seg_init + report.l_seg_final + report.lam * (
            report.l_edge_init + report.l_edge_final
        )
        assert report.l_total == pytest.approx(want, rel=1e-12)


def test_log_line_format():
    report = losses.LossReport(0.1, 0.2, 0.3, 0.4, 1.0, 0.5)
    line = report.log_line(7)
    fields = line.split(" ")
    assert fields[0] == "7"
    assert len(fields) == len(losses.METRICS_HEADER.split(" "))
