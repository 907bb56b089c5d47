import math

import numpy as np
import pytest

from mvmtwin.nets import R2UNetConfig
from mvmtwin.toy import ToyConfig, gen_circles, run_toy_comparison

CFG = ToyConfig(n_train=24, n_test=8, epochs=1, batch_size=8, generator=R2UNetConfig(4, 2, 1), disc_base=4)


def test_deterministic():
    a = gen_circles("shape", 5, 3)
    b = gen_circles("shape", 5, 3)
    assert all(np.array_equal(x.input, y.input) and np.array_equal(x.target, y.target) for x, y in zip(a, b))


def test_shape_task_enlarges_and_stays_disjoint():
    for s in gen_circles("shape", 20, 1):
        assert len(s.circles) == 4
        for c, t in zip(s.circles, s.target_circles):
            assert math.pi * t.r**2 > math.pi * c.r**2
            assert (t.cx, t.cy) == (c.cx, c.cy)
        for i, a in enumerate(s.target_circles):
            for b in s.target_circles[i + 1 :]:
                assert math.hypot(a.cx - b.cx, a.cy - b.cy) > a.r + b.r
        assert s.input.min() >= -1 and s.input.max() <= 1


def test_texture_task_keeps_geometry():
    for s in gen_circles("texture", 10, 2):
        assert s.target_circles == s.circles
        assert not np.array_equal(s.input, s.target)


def test_bad_arguments():
    with pytest.raises(ValueError):
        gen_circles("colour", 2, 0)
    with pytest.raises(ValueError):
        gen_circles("shape", 0, 0)


def test_zero_adversarial_weight_matches_plain():
    rep = run_toy_comparison("shape", CFG, adversarial_weight=0.0)
    assert rep["plain"] == rep["adversarial"]
    assert len(rep["plain"]["per_image_mse"]) == CFG.n_test


def test_report_deterministic():
    a = run_toy_comparison("texture", CFG, adversarial_weight=0.5)
    b = run_toy_comparison("texture", CFG, adversarial_weight=0.5)
    assert a == b
    assert a["plain"] != a["adversarial"]


@pytest.mark.slow
def test_texture_direction():
    rep = run_toy_comparison("texture", ToyConfig())
    assert len(rep["plain"]["per_image_mse"]) >= 200
    assert rep["plain"]["mse_mean"] <= rep["adversarial"]["mse_mean"]
