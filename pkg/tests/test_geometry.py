import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointdeeponet import geometry as G
from pointdeeponet.geometry import Shape


@pytest.fixture(scope="module")
def icosphere_shape():
    return Shape.mesh(*G.icosphere(3))


# analytic SDFs -------------------------------------------------------------

@pytest.mark.parametrize("p, expected", [((0, 0, 0), -1.0), ((1, 0, 0), 0.0), ((2, 0, 0), 1.0)])
def test_unit_sphere(p, expected):
    assert G.sdf_analytic(Shape.sphere(), np.array(p, dtype=float)) == pytest.approx(expected, abs=1e-12)


def test_box_probes():
    box = Shape.box((1.0, 0.0, 0.0), (1.0, 2.0, 3.0))
    pts = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [4.0, 0.0, 0.0], [3.0, 3.0, 0.0], [1.5, 1.0, 2.0]])
    # inside: -(distance to the nearest face); outside corner: euclidean to the corner
    expected = [-1.0, 0.0, 2.0, np.sqrt(2.0), -0.5]
    np.testing.assert_allclose(G.sdf_analytic(box, pts), expected, atol=1e-12)


def test_capsule_probes():
    cap = Shape.capsule((0, 0, -1), (0, 0, 1), 0.5)
    pts = np.array([[0, 0, 0], [0.5, 0, 0.3], [0, 0, 2.0], [1.0, 0, 0]], dtype=float)
    np.testing.assert_allclose(G.sdf_analytic(cap, pts), [-0.5, 0.0, 0.5, 0.5], atol=1e-12)


def test_sphere_gradient_has_unit_norm():
    rng = np.random.default_rng(0)
    sphere = Shape.sphere((0.2, -0.1, 0.3), 0.8)
    pts = rng.uniform(-2, 2, (200, 3))
    pts = pts[np.linalg.norm(pts - sphere.params["center"], axis=1) > 0.1]
    h = 1e-6
    grad = np.stack([(G.sdf_analytic(sphere, pts + h * e) - G.sdf_analytic(sphere, pts - h * e)) / (2 * h)
                     for e in np.eye(3)], axis=1)
    np.testing.assert_allclose(np.linalg.norm(grad, axis=1), 1.0, atol=1e-5)


def test_analytic_rejects_mesh(icosphere_shape):
    with pytest.raises(ValueError):
        G.sdf_analytic(icosphere_shape, np.zeros(3))


# mesh SDF ----------------------------------------------------------------

def test_mesh_vertex_is_on_surface(icosphere_shape):
    assert G.sdf_mesh(icosphere_shape, icosphere_shape.vertices[7]) == pytest.approx(0.0, abs=1e-12)


def test_icosphere_center(icosphere_shape):
    assert G.sdf_mesh(icosphere_shape, np.zeros(3)) == pytest.approx(-1.0, abs=0.02)


def test_cube_mesh_matches_box_inside():
    center, half = (0.1, -0.2, 0.3), (1.0, 0.5, 2.0)
    mesh = Shape.mesh(*G.box_mesh(center, half))
    box = Shape.box(center, half)
    rng = np.random.default_rng(3)
    pts = np.asarray(center) + rng.uniform(-1, 1, (500, 3)) * np.asarray(half) * 0.999
    np.testing.assert_allclose(G.sdf_mesh(mesh, pts), G.sdf_analytic(box, pts), atol=1e-9)


def test_cube_mesh_matches_box_outside():
    mesh = Shape.mesh(*G.box_mesh((0, 0, 0), (1, 1, 1)))
    pts = np.random.default_rng(4).uniform(-3, 3, (500, 3))
    np.testing.assert_allclose(G.sdf_mesh(mesh, pts), G.sdf_analytic(Shape.box(), pts), atol=1e-9)


def test_open_mesh_is_rejected():
    v, f = G.box_mesh()
    with pytest.raises(G.TopologyError, match="not closed"):
        Shape.mesh(v, f[:-1])


def test_inconsistent_orientation_is_rejected():
    v, f = G.box_mesh()
    f = f.copy()
    f[0] = f[0][::-1]
    with pytest.raises(G.TopologyError, match="oriented"):
        Shape.mesh(v, f)


def test_winding_number_inside_outside(icosphere_shape):
    w = G.winding_number(icosphere_shape.vertices, icosphere_shape.faces, [[0, 0, 0], [3, 0, 0]])
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


def test_sign_flips_once_along_rays(icosphere_shape):
    rng = np.random.default_rng(5)
    for _ in range(10):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        ts = np.linspace(0.0, 2.0, 81)
        s = np.sign(G.sdf_mesh(icosphere_shape, ts[:, None] * d))
        s = s[s != 0]
        assert s[0] == -1 and s[-1] == 1
        assert np.count_nonzero(np.diff(s)) == 1
        # bisection on the crossing lands on the surface
        lo, hi = 0.0, 2.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if G.sdf_mesh(icosphere_shape, mid * d) < 0:
                lo = mid
            else:
                hi = mid
        assert abs(G.sdf_mesh(icosphere_shape, lo * d)) < 1e-9


def test_obj_round_trip(tmp_path):
    v, f = G.icosphere(1)
    path = tmp_path / "s.obj"
    G.save_obj(path, v, f)
    shape = G.load_obj(path)
    np.testing.assert_array_equal(shape.vertices, v)
    np.testing.assert_array_equal(shape.faces, f)


def test_obj_rejects_quads(tmp_path):
    path = tmp_path / "q.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(G.TopologyError, match="triangular"):
        G.load_obj(path)


# sampling ----------------------------------------------------------------

@pytest.mark.parametrize("shape", [Shape.sphere(), Shape.box((0, 0, 0), (0.5, 1, 2)),
                                   Shape.capsule((0, 0, 0), (1, 1, 0), 0.3)])
def test_sample_volume_interior(shape):
    pts = G.sample_volume(shape, 2000, seed=1)
    assert pts.coords.shape == (2000, 3)
    assert np.all(pts.sdf <= 0)
    np.testing.assert_allclose(pts.sdf, G.sdf(shape, pts.coords))
    assert np.all(np.abs(pts.sdf) <= shape.diagonal())


def test_sample_volume_deterministic():
    a = G.sample_volume(Shape.sphere(), 500, seed=42)
    b = G.sample_volume(Shape.sphere(), 500, seed=42)
    assert a.coords.tobytes() == b.coords.tobytes()


def test_sample_volume_inner_ball_fraction():
    # uniform in the unit ball: P(|x| < 1/2) = (1/2)^3
    pts = G.sample_volume(Shape.sphere(), 10_000, seed=7)
    assert abs(np.mean(pts.sdf < -0.5) - 0.125) < 0.02


def test_sample_volume_mesh(icosphere_shape):
    pts = G.sample_volume(icosphere_shape, 200, seed=0)
    assert np.all(pts.sdf <= 0)
    np.testing.assert_allclose(pts.sdf, G.sdf_mesh(icosphere_shape, pts.coords), rtol=0, atol=1e-15)


def test_sample_volume_degenerate_shape():
    thin = Shape.capsule((0, 0, 0), (1, 1, 1), 1e-7)
    with pytest.raises(G.DegenerateShapeError):
        G.sample_volume(thin, 10, seed=0, batch=100_000)


# resampling --------------------------------------------------------------

def test_resample_equal_is_permutation():
    idx = G.resample_fixed(5, 5, seed=0)
    assert sorted(idx.tolist()) == [0, 1, 2, 3, 4]


def test_resample_deficit_covers_every_index():
    idx = G.resample_fixed(3, 5, seed=0)
    assert len(idx) == 5
    assert set(idx.tolist()) == {0, 1, 2}


def test_resample_surplus_is_distinct():
    idx = G.resample_fixed(1000, 100, seed=3)
    assert len(set(idx.tolist())) == 100


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_resample_properties(m, n, seed):
    idx = G.resample_fixed(m, n, seed)
    assert len(idx) == n
    assert idx.min() >= 0 and idx.max() < m
    if m >= n:
        assert len(np.unique(idx)) == n
    else:
        assert len(np.unique(idx)) == m
    np.testing.assert_array_equal(idx, G.resample_fixed(m, n, seed))


def test_resample_uniform_selection_frequency():
    m, n, trials = 10_000, 100, 10_000
    counts = np.zeros(m)
    for s in range(trials):
        counts[G.resample_fixed(m, n, s)] += 1
    p = n / m
    mean, sd = trials * p, np.sqrt(trials * p * (1 - p))
    # each count is Binomial(trials, n/m); allow the max over m indices ~4.5 sigma
    z = (counts - mean) / sd
    assert abs(counts.mean() - mean) < 1e-9
    assert np.abs(z).max() < 5.0
    assert np.mean(np.abs(z) > 3) < 0.01


def test_resample_rejects_empty():
    with pytest.raises(ValueError):
        G.resample_fixed(0, 5, 0)


# scaling -----------------------------------------------------------------

class _S:
    def __init__(self, coords, sdf, condition, targets):
        self.coords, self.sdf, self.condition, self.targets = coords, sdf, condition, targets


def _samples(rng, k=4, m=50):
    out = []
    for _ in range(k):
        d = rng.normal(size=3)
        out.append(_S(rng.normal(size=(m, 3)), -rng.uniform(0, 1, m),
                      np.array([rng.uniform(0.5, 2), rng.uniform(1, 5), *(d / np.linalg.norm(d))]),
                      rng.normal(size=(m, 4))))
    return out


def _stats_0_10():
    fields = {name: (0.0, 10.0) for name in G.FIELD_NAMES}
    inputs = {name: (0.0, 1.0) for name in G.INPUT_NAMES}
    return G.FieldStats(fields, inputs)


def test_midpoint_maps_to_zero_for_tanh():
    np.testing.assert_allclose(G.normalize_fields(np.full(4, 5.0), _stats_0_10(), "tanh"), 0.0, atol=1e-15)


def test_range_edges():
    stats = _stats_0_10()
    np.testing.assert_allclose(G.normalize_fields(np.full(4, 10.0), stats, "tanh"), 0.95)
    np.testing.assert_allclose(G.normalize_fields(np.zeros(4), stats, "sigmoid"), 0.025)
    np.testing.assert_allclose(G.normalize_fields(np.full(4, 10.0), stats, "sigmoid"), 0.975)


@pytest.mark.parametrize("head", ["tanh", "sigmoid"])
def test_round_trip(head):
    rng = np.random.default_rng(0)
    stats = G.fit_stats(_samples(rng))
    vals = rng.normal(size=(100, 4)) * 10
    back = G.denormalize(G.normalize_fields(vals, stats, head), stats, head)
    assert np.abs(back - vals).max() < 1e-12


@pytest.mark.parametrize("head", ["tanh", "sigmoid"])
def test_training_targets_land_in_head_range(head):
    rng = np.random.default_rng(1)
    samples = _samples(rng)
    stats = G.fit_stats(samples)
    lo, hi = G.HEAD_RANGES[head]
    for s in samples:
        z = G.normalize(s, stats, head)
        assert z.targets.min() >= lo - 1e-12 and z.targets.max() <= hi + 1e-12
        assert z.coords.min() >= -1 - 1e-12 and z.coords.max() <= 1 + 1e-12


def test_constant_field_is_named():
    rng = np.random.default_rng(2)
    samples = _samples(rng)
    for s in samples:
        s.targets[:, 1] = 0.0
    with pytest.raises(G.ConstantFieldError, match="u_y"):
        G.fit_stats(samples)


def test_stats_serialise():
    stats = G.fit_stats(_samples(np.random.default_rng(3)))
    again = G.FieldStats.from_dict(stats.to_dict())
    assert again == stats
    for lo, hi in stats.fields.values():
        assert hi >= lo
