import math

import numpy as np
import pytest

from fpindex.descriptor import Minutia, MinutiaKind
from fpindex.errors import FormatError, ParameterError
from fpindex.synthgen import FingerConfig, gen_finger, gen_impression
from fpindex.template import (
    Correspondence, RigidTransform, Template, angle_diff, build_super_template, correspond, fit_rigid,
    load_template, merge, save_template, template_from_text, template_to_text,
)


def random_template(rng, n=30, with_desc=True, lo=60, hi=260, min_sep=15):
    pts = []
    while len(pts) < n:
        p = rng.uniform(lo, hi, 2)
        if all(math.hypot(*(p - q)) >= min_sep for q in pts):
            pts.append(p)
    ms = tuple(Minutia(x, y, rng.uniform(0, 2 * math.pi), list(MinutiaKind)[rng.integers(3)]) for x, y in pts)
    return Template(ms, rng.normal(size=(n, 25)) if with_desc else None)


def moved(t, tr, jitter=0.0, rng=None):
    out = []
    for m in t.minutiae:
        mm = tr.apply(m)
        if jitter:
            a = rng.uniform(0, 2 * math.pi)
            mm = Minutia(mm.x + jitter * math.cos(a), mm.y + jitter * math.sin(a), mm.theta, mm.kind)
        out.append(mm)
    return Template(tuple(out), t.descriptors)


def test_angle_diff_wraps():
    assert angle_diff(0.1, 2 * math.pi - 0.1) == pytest.approx(0.2)
    assert angle_diff(2 * math.pi - 0.1, 0.1) == pytest.approx(-0.2)


def test_correspond_self(rng):
    a = random_template(rng)
    c = correspond(a, a)
    assert c.pairs == tuple((i, i) for i in range(len(a)))
    assert (c.transform.rotation, c.transform.tx, c.transform.ty) == (0.0, 0.0, 0.0)


def test_correspond_translation(rng):
    a = random_template(rng)
    b = moved(a, RigidTransform(0.0, 5.0, 3.0))
    c = correspond(a, b)
    # the transform maps b back onto a
    assert c.transform.tx == pytest.approx(-5.0, abs=1.0)
    assert c.transform.ty == pytest.approx(-3.0, abs=1.0)
    assert c.pairs == tuple((i, i) for i in range(len(a)))


def test_correspond_rotation_with_jitter(rng):
    a = random_template(rng, n=40)
    rot = math.radians(30)
    cx = cy = 160.0
    c, s = math.cos(rot), math.sin(rot)
    tr = RigidTransform(rot, cx - (c * cx - s * cy), cy - (s * cx + c * cy))
    b = moved(a, tr, jitter=1.0, rng=rng)
    corr = correspond(a, b)
    correct = sum(1 for i, j in corr.pairs if i == j)
    assert correct >= 0.9 * len(a)
    assert abs(math.degrees(angle_diff(corr.transform.rotation, -rot))) <= 3.0


def test_correspond_symmetric_pair_count(rng):
    for seed in range(5):
        f = gen_finger(seed)
        ims = [gen_impression(f, j) for j in range(2)]
        a, b = (Template(tuple(i.minutiae)) for i in ims)
        assert abs(len(correspond(a, b).pairs) - len(correspond(b, a).pairs)) <= 1


def test_correspond_unrelated_is_valid(rng):
    a, b = random_template(rng, 10), random_template(rng, 10)
    c = correspond(a, b)
    assert isinstance(c, Correspondence)
    assert len({i for i, _ in c.pairs}) == len(c.pairs)


def test_fit_rigid_exact(rng):
    p = rng.uniform(0, 100, size=(10, 2))
    tr = RigidTransform(0.7, 12.0, -4.0)
    est = fit_rigid(tr.apply_xy(p), p)
    assert est.rotation == pytest.approx(0.7, abs=1e-12)
    assert (est.tx, est.ty) == pytest.approx((12.0, -4.0), abs=1e-9)


def test_merge_self_is_identity(rng):
    a = random_template(rng)
    m = merge(a, a, correspond(a, a))
    assert len(m) == len(a)
    assert m.minutiae == a.minutiae
    np.testing.assert_array_equal(m.descriptors, a.descriptors)
    assert m.source_count == 2


def test_circular_mean_across_zero():
    a = Template((Minutia(50, 50, math.radians(10)),))
    b = Template((Minutia(50, 50, math.radians(350)),))
    m = merge(a, b, Correspondence(((0, 0),)))
    assert min(m.minutiae[0].theta, 2 * math.pi - m.minutiae[0].theta) < 1e-12
    assert 0 <= m.minutiae[0].theta < 2 * math.pi


def test_opposite_directions_keep_super():
    a = Template((Minutia(50, 50, 0.5),))
    b = Template((Minutia(50, 50, 0.5 + math.pi),))
    assert merge(a, b, Correspondence(((0, 0),))).minutiae[0].theta == pytest.approx(0.5)


def test_merge_adds_unpaired(rng):
    a = random_template(rng, n=20, min_sep=25)
    extra = random_template(np.random.default_rng(99), n=40, with_desc=True, lo=300, hi=500)
    t_ms = a.minutiae[:15] + extra.minutiae[:5]
    t = Template(t_ms, np.vstack([a.descriptors[:15], extra.descriptors[:5]]))
    corr = correspond(a, t)
    assert len(corr.pairs) == 15
    m = merge(a, t, corr)
    assert len(m) == 25
    assert m.descriptors.shape == (25, 25)


def test_merge_count_bounds(rng):
    for seed in range(4):
        f = gen_finger(100 + seed)
        a, b = (Template(tuple(gen_impression(f, j).minutiae)) for j in range(2))
        m = merge(a, b, correspond(a, b))
        assert len(a) <= len(m) <= len(a) + len(b)


def test_weighted_average_of_equal_descriptors(rng):
    a = random_template(rng, 12)
    s = build_super_template([a, a, a, a])
    np.testing.assert_array_equal(s.descriptors, a.descriptors)


def test_super_template_single_and_identical(rng):
    a = random_template(rng)
    assert build_super_template([a]) is a
    assert build_super_template([a]).source_count == 1
    s = build_super_template([a, a, a])
    assert s.minutiae == a.minutiae
    assert s.source_count == 3
    with pytest.raises(ParameterError):
        build_super_template([])


def test_super_template_bit_stable(rng):
    f = gen_finger(5)
    ts = [Template(tuple(gen_impression(f, j).minutiae)) for j in range(3)]
    a, b = build_super_template(ts), build_super_template(ts)
    assert template_to_text(a) == template_to_text(b)


def test_super_template_recovers_ground_truth():
    cfg = FingerConfig(min_minutiae=30, max_minutiae=30)
    for seed in (1, 2, 3):
        f = gen_finger(seed, cfg)
        assert len(f.ground_truth_minutiae) == 30
        imps = [gen_impression(f, j) for j in range(3)]
        s = build_super_template([Template(tuple(i.minutiae)) for i in imps])
        assert 30 <= len(s) <= 45
        # super-template lives in the first impression's frame
        truth = [imps[0].transform.apply(m) for m in f.ground_truth_minutiae]
        xy = np.array([(m.x, m.y) for m in s.minutiae])
        for m in truth:
            assert np.min(np.hypot(xy[:, 0] - m.x, xy[:, 1] - m.y)) <= 3.0


def test_template_text_round_trip(tmp_path, rng):
    for t in (random_template(rng, 7), random_template(rng, 5, with_desc=False)):
        t2 = template_from_text(template_to_text(t))
        assert t2.minutiae == t.minutiae
        if t.descriptors is None:
            assert t2.descriptors is None
        else:
            np.testing.assert_array_equal(t2.descriptors, t.descriptors)
        p1, p2 = tmp_path / "a.fptpl", tmp_path / "b.fptpl"
        save_template(p1, t)
        save_template(p2, load_template(p1))
        assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize("text", [
    "", "FPTPL 2 1 1\n1 2 3 E\n", "FPTPL 1 2 1\n1 2 3 E\n", "FPTPL 1 1 0\n1 2 3 E\n",
    "FPTPL 1 1 1\nD2 1 2\n1 2 3 E\n", "FPTPL 1 1 1\n1 2 3 E\nD2 1\n", "FPTPL 1 1 1\n1 2 3 E\nD2 1 x\n",
])
def test_template_text_errors(text):
    with pytest.raises(FormatError):
        template_from_text(text, "t")


def test_template_validation():
    with pytest.raises(ParameterError):
        Template(())
    with pytest.raises(ParameterError):
        Template((Minutia(1, 1, 0),), np.zeros((2, 25)))
