import json

import numpy as np
import pytest

from rncover import agent as rn
from rncover.analysis import (BLACK, CYAN, GREEN, WHITE, FrameImage, gated_kl, kl_to_uniform,
                              masking_study, read_ppm, relation_contributions, render_frame,
                              write_ppm, write_sidecar)
from rncover.observation import FrameHistory, RelationSet, encode, push_history
from rncover.sim import UsageError

from .conftest import make_state


def rand_rel(rng, n):
    return RelationSet(rng.uniform(0, 1, (n, 60)), [None] * n, np.zeros(20))


def uniform_params(seed=0):
    p = rn.init_params(seed)
    p["policy.weight"][:] = 0.0
    p["policy.bias"][:] = 0.3
    return p


@pytest.mark.parametrize("reverse", [False, True])
def test_uniform_policy_has_no_contributions(reverse):
    rng = np.random.default_rng(0)
    rep = relation_contributions(uniform_params(), rand_rel(rng, 6), reverse)
    assert np.all(np.abs(rep.values) < 1e-9)
    assert abs(rep.kl) < 1e-12
    np.testing.assert_allclose(rep.probs, 0.2, rtol=1e-12)


def test_kl_to_uniform():
    assert kl_to_uniform(np.full(5, 0.2)) == pytest.approx(0.0, abs=1e-15)
    p = np.array([0.5, 0.2, 0.1, 0.1, 0.1])
    assert kl_to_uniform(p) == pytest.approx(float(np.sum(0.2 * np.log(0.2 / p))))
    assert kl_to_uniform(p, reverse=True) == pytest.approx(float(np.sum(p * np.log(p / 0.2))))


@pytest.mark.parametrize("reverse", [False, True])
def test_contributions_match_finite_differences(reverse):
    rng = np.random.default_rng(3)
    h = 1e-6
    for seed in range(5):
        p = rn.init_params(seed)
        rel = rand_rel(rng, 5)
        rep = relation_contributions(p, rel, reverse)
        assert rep.kl == pytest.approx(gated_kl(p, rel, np.ones(5), reverse), rel=1e-10)
        for i in range(5):
            g = np.ones(5)
            g[i] += h
            up = gated_kl(p, rel, g, reverse)
            g[i] -= 2 * h
            down = gated_kl(p, rel, g, reverse)
            num = (up - down) / (2 * h)
            assert abs(rep.values[i] - num) <= 1e-4 * max(abs(num), 1e-6)


def test_empty_set_rejected():
    with pytest.raises(UsageError):
        relation_contributions(rn.init_params(0), RelationSet(np.zeros((0, 60)), [], np.zeros(20)))


def test_masking_rank_correlation():
    study = masking_study(draws=100, seed=1)
    assert study.rho > 0 and study.p_value < 0.01
    assert study.mean_top >= study.mean_bottom


def test_ppm_golden(tmp_path):
    path = tmp_path / "w.ppm"
    write_ppm(FrameImage.blank(1, 1), path)
    assert path.read_bytes() == b"P6\n1 1\n255\n\xff\xff\xff"


def test_ppm_round_trip(tmp_path):
    px = np.random.default_rng(0).integers(0, 256, (7, 5, 3), dtype=np.uint8)
    write_ppm(FrameImage(5, 7, px), tmp_path / "r.ppm")
    back = read_ppm(tmp_path / "r.ppm")
    assert (back.width, back.height) == (5, 7)
    np.testing.assert_array_equal(back.pixels, px)


def test_render_layout():
    st = make_state([(0.5, 0.5, 0.2, 0.2)], [(0.1, 0.9, 0.05, 0.05), (0.5, 0.5, 0.04, 0.04)])
    st.objects[1].captured = True
    img = render_frame(st, controlled=0, scale=100)
    assert (img.width, img.height) == (100, 100)
    assert tuple(img.pixels[10, 10]) == BLACK          # y=0.9 is near the top row
    assert tuple(img.pixels[50, 50]) == GREEN
    assert tuple(img.pixels[40, 45]) == CYAN           # top edge of the view
    assert tuple(img.pixels[95, 5]) == WHITE


def test_render_contribution_lines(tmp_path):
    st = make_state([(0.3, 0.3, 0.2, 0.2)], [(0.8, 0.8, 0.04, 0.04)])
    rel = encode(push_history(FrameHistory(), st, 0), 0)
    rep = relation_contributions(rn.init_params(0), rel)
    plain = render_frame(st, 0, scale=50)
    lined = render_frame(st, 0, rep, scale=50)
    assert np.any(plain.pixels != lined.pixels)
    write_sidecar(rep, tmp_path / "c.json", t=3)
    side = json.loads((tmp_path / "c.json").read_text())
    assert side["t"] == 3 and len(side["values"]) == len(rel)
    assert side["pairs"][0] == [["s", 0], ["o", 0]]


def test_render_bad_scale():
    with pytest.raises(ValueError):
        render_frame(make_state([(0.5, 0.5, 0.2, 0.2)], []), scale=0)
