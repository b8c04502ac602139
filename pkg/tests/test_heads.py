import numpy as np
import pytest

from sfiqa import tensor as T
from sfiqa.distance import dist_l1, dist_l2
from sfiqa.heads import HIDDEN, frrb_forward, init_frrb, init_mlp, init_nrrb, mlp_forward, nrrb_forward
from sfiqa.tensor import ShapeError, Tensor

from conftest import gradcheck


def _zeroed(params):
    return {k: Tensor(np.zeros_like(v.data), requires_grad=True) for k, v in params.items()}


def test_mlp_zero_and_identity(rng):
    p = _zeroed(init_mlp("m", [5, 7, 3], rng))
    assert np.array_equal(mlp_forward(Tensor(rng.normal(size=5)), p, "m").data, np.zeros(3))
    ident = {"id.0.w": Tensor(np.eye(4)), "id.0.b": Tensor(np.zeros(4))}
    x = rng.normal(size=4)
    assert np.array_equal(mlp_forward(Tensor(x), ident, "id").data, x)


def test_mlp_width_mismatch(rng):
    p = init_mlp("m", [5, 3], rng)
    with pytest.raises(ShapeError, match="width"):
        mlp_forward(Tensor(np.zeros(4)), p, "m")


def test_mlp_gradient():
    for seed in range(10):
        r = np.random.default_rng(seed)
        p = init_mlp("m", [4, 6, 2], r)
        names = list(p)
        arrays = [r.normal(size=(3, 4))] + [p[n].data for n in names]
        probe = r.normal(size=(3, 2))

        def fn(x, *ws):
            return T.sum_(T.mul(mlp_forward(x, dict(zip(names, ws)), "m"), Tensor(probe)))

        assert gradcheck(fn, arrays) < 1e-5, seed


def test_frrb_zero_head_gives_half(rng):
    p = _zeroed(init_frrb(8, 8, rng))
    score = frrb_forward(Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8)), p)
    assert score.data == 0.5


def test_frrb_zero_distance_collapse(rng):
    p = init_frrb(3, 3, rng)
    scores = []
    for _ in range(3):
        f = Tensor(rng.normal(size=(3, 2, 2)))
        d = dist_l1(f, f)
        scores.append(frrb_forward(d, d, p).data.item())
    assert scores[0] == scores[1] == scores[2]


def test_frrb_single_branch_width(rng):
    p = init_frrb(5, None, rng)
    assert p["frrb.phi.0.w"].shape == (HIDDEN, HIDDEN)
    assert not any(k.startswith("frrb.g") for k in p)
    score = frrb_forward(Tensor(rng.normal(size=(4, 5))), None, p)
    assert score.shape == (4,)
    p2 = init_frrb(None, 5, rng)
    assert frrb_forward(None, Tensor(rng.normal(size=5)), p2).shape == ()


def test_frrb_symmetric_metrics_ignore_order(rng):
    p = init_frrb(2, 2, rng)
    a, b = Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 3, 3)))
    for fn in (dist_l1, dist_l2):
        s1 = frrb_forward(fn(a, b), fn(a, b), p).data
        s2 = frrb_forward(fn(b, a), fn(b, a), p).data
        assert np.allclose(s1, s2, atol=1e-15)


def test_nrrb_zero_features_half(rng):
    p = init_nrrb(3, 3, rng)
    p = {k: (Tensor(np.zeros_like(v.data)) if k.endswith(".b") else v) for k, v in p.items()}
    z = Tensor(np.zeros((3, 4, 4)))
    assert nrrb_forward(z, z, p).data == 0.5


def test_nrrb_spatial_permutation_invariance(rng):
    p = init_nrrb(3, 3, rng)
    fs, ff = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    perm = rng.permutation(16)
    fs2 = fs.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    ff2 = ff.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    a = nrrb_forward(Tensor(fs), Tensor(ff), p).data
    b = nrrb_forward(Tensor(fs2), Tensor(ff2), p).data
    assert abs(a - b) < 1e-14


def test_nrrb_gradient():
    for seed in range(10):
        r = np.random.default_rng(seed)
        p = init_nrrb(2, 2, r)
        names = list(p)
        arrays = [r.normal(size=(2, 3, 3)), r.normal(size=(2, 3, 3))] + [p[n].data for n in names]

        def fn(fs, ff, *ws):
            return nrrb_forward(fs, ff, dict(zip(names, ws)))

        assert gradcheck(fn, arrays) < 1e-5, seed


def test_frrb_gradient():
    for seed in range(10):
        r = np.random.default_rng(seed)
        p = init_frrb(3, 3, r)
        names = list(p)
        arrays = [r.normal(size=3), r.normal(size=3)] + [p[n].data for n in names]

        def fn(ds, df, *ws):
            return frrb_forward(ds, df, dict(zip(names, ws)))

        assert gradcheck(fn, arrays) < 1e-5, seed


def test_scores_strictly_inside_unit_interval(rng):
    p = init_frrb(4, 4, rng)
    for scale in (1e-3, 1.0, 3.0):
        s = frrb_forward(Tensor(scale * rng.normal(size=(8, 4))), Tensor(scale * rng.normal(size=(8, 4))), p).data
        assert np.all((s > 0) & (s < 1))
