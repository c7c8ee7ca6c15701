import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tunescope.errors import GeometryError
from tunescope.stimulus import Stimulus, project_cone, project_sphere
from tunescope.targets import (
    HyperRanges,
    LevelSpec,
    SthorSpec,
    default_l1_spec,
    default_l2_spec,
    linear_neuron,
    match_fitness,
    quadratic_neuron,
    read_network_weights,
    sample_network_population,
    spec_from_json,
    spec_to_json,
    sthor_network,
    unit_view,
    write_network_weights,
)


def unit_stimulus(values, height, width):
    return project_sphere(np.asarray(values, dtype=float), 1.0, (height, width))


class TestLinearNeuron:
    def test_template_response_is_one(self):
        w = unit_stimulus([1, 2, 3, 4], 2, 2)
        target = linear_neuron(w)
        assert target.evaluate(w)[0] == pytest.approx(1.0, abs=1e-12)

    def test_cone_point_response_is_cosine(self):
        rng = np.random.default_rng(0)
        w = project_sphere(rng.standard_normal(16), 1.0, (4, 4))
        target = linear_neuron(w)
        x = project_sphere(rng.standard_normal(16), 1.0, (4, 4))
        for delta in (0.1 * np.pi, 0.3 * np.pi, 0.5 * np.pi):
            on_cone = project_cone(x, w, delta)
            assert target.evaluate(on_cone)[0] == pytest.approx(np.cos(delta), abs=1e-9)

    def test_antipode_response(self):
        w = unit_stimulus([3, 4], 1, 2)
        target = linear_neuron(w)
        assert target.evaluate(w.replace_values(-w.values))[0] == pytest.approx(-1.0, abs=1e-12)

    def test_norm_precondition(self):
        bad = Stimulus.from_values(np.array([1.0, 1.0]), 1, 2)
        with pytest.raises(ValueError):
            linear_neuron(bad)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        w = project_sphere(rng.standard_normal(9), 1.0, (3, 3))
        target = linear_neuron(w)
        x = rng.standard_normal(9)
        got = target.batch(x[None, :])[0, 0]
        assert got == pytest.approx(float(w.values @ x), abs=1e-12)


class TestQuadraticNeuron:
    def test_identity_form_on_unit_stimulus(self):
        n = 4
        target = quadratic_neuron(np.eye(n), np.zeros(n), 0.0, (2, 2))
        x = unit_stimulus([1, 1, 1, 1], 2, 2)
        assert target.evaluate(x)[0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_q_reduces_to_linear(self):
        rng = np.random.default_rng(1)
        w = project_sphere(rng.standard_normal(4), 1.0, (2, 2))
        quad = quadratic_neuron(np.zeros((4, 4)), w.values, 0.0, (2, 2))
        lin = linear_neuron(w)
        x = unit_stimulus(rng.standard_normal(4), 2, 2)
        assert quad.evaluate(x)[0] == pytest.approx(lin.evaluate(x)[0], abs=1e-12)

    def test_sphere_maximum_from_eigendecomposition(self):
        q = np.diag([3.0, 1.0])
        target = quadratic_neuron(q, np.zeros(2), 0.0, (1, 2))
        eigvals, eigvecs = np.linalg.eigh(q)
        top = eigvecs[:, np.argmax(eigvals)]
        at_top = target.batch(top[None, :])[0, 0]
        assert at_top == pytest.approx(eigvals.max() / 2, abs=1e-12)
        angles = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
        grid = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        assert target.batch(grid).max() <= at_top + 1e-7

    def test_asymmetric_q_rejected(self):
        q = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError):
            quadratic_neuron(q, np.zeros(2), 0.0, (1, 2))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((6, 6))
        q = a + a.T
        l = rng.standard_normal(6)
        c = float(rng.standard_normal())
        target = quadratic_neuron(q, l, c, (2, 3))
        x = rng.standard_normal(6)
        expected = 0.5 * x @ q @ x + l @ x + c
        assert target.batch(x[None, :])[0, 0] == pytest.approx(expected, abs=1e-10)


def naive_forward(spec, kernels, image):
    x = image[None, :, :]
    for level, w in zip(spec.levels, kernels):
        k = level.kernel_size
        hh = x.shape[1] - k + 1
        ww = x.shape[2] - k + 1
        conv = np.zeros((level.n_filters, hh, ww))
        for f in range(level.n_filters):
            for i in range(hh):
                for j in range(ww):
                    conv[f, i, j] = np.sum(w[f] * x[:, i : i + k, j : j + k])
        if level.activation == "halfwave":
            conv = np.maximum(conv, 0.0)
        elif level.activation == "clipped":
            conv = np.clip(conv, *level.clip_bounds)
        p, s, e = level.pool_size, level.pool_stride, level.pool_exponent
        ph = (hh - p) // s + 1
        pw = (ww - p) // s + 1
        pooled = np.zeros((level.n_filters, ph, pw))
        for f in range(level.n_filters):
            for i in range(ph):
                for j in range(pw):
                    window = conv[f, i * s : i * s + p, j * s : j * s + p]
                    m = np.mean(window**e)
                    pooled[f, i, j] = m if e == 1 else max(m, 0.0) ** (1.0 / e)
        if level.norm_enabled:
            r = level.norm_radius
            normed = np.zeros_like(pooled)
            for i in range(ph):
                for j in range(pw):
                    i0, i1 = max(0, i - r), min(ph, i + r + 1)
                    j0, j1 = max(0, j - r), min(pw, j + r + 1)
                    patch = pooled[:, i0:i1, j0:j1]
                    local = np.sqrt(np.mean(patch**2, axis=0).mean())
                    normed[:, i, j] = pooled[:, i, j] / (
                        level.norm_threshold + level.norm_strength * local
                    )
            pooled = normed
        x = pooled
    return x[:, x.shape[1] // 2, x.shape[2] // 2]


class TestSthorNetwork:
    def test_l1_default_geometry(self):
        target = sthor_network(default_l1_spec(weight_seed=1))
        assert target.input_shape == (11, 11)
        assert target.size == 121
        assert target.response_dim == 32

    def test_l2_default_geometry(self):
        target = sthor_network(default_l2_spec(weight_seed=1))
        assert target.input_shape == (21, 21)
        assert target.size == 441
        assert target.response_dim == 32

    def test_transparent_network_returns_center_pixel(self):
        level = LevelSpec(
            kernel_size=3,
            n_filters=1,
            activation="identity",
            pool_size=1,
            pool_stride=1,
            pool_exponent=1.0,
            norm_enabled=False,
        )
        spec = SthorSpec(levels=(level,), top_layer_neurons=1, weight_seed=0)
        delta = np.zeros((1, 1, 3, 3))
        delta[0, 0, 1, 1] = 1.0
        target = sthor_network(spec, kernels=[delta])
        rng = np.random.default_rng(2)
        stim = project_sphere(rng.standard_normal(9), 1.0, (3, 3))
        assert target.evaluate(stim)[0] == pytest.approx(stim.image[1, 1], abs=1e-12)

    def test_deterministic_across_constructions(self):
        rng = np.random.default_rng(3)
        stimuli = rng.standard_normal((100, 121))
        a = sthor_network(default_l1_spec(weight_seed=9)).batch(stimuli)
        b = sthor_network(default_l1_spec(weight_seed=9)).batch(stimuli)
        np.testing.assert_array_equal(a, b)

    def test_purity_bitwise(self):
        target = sthor_network(default_l2_spec(weight_seed=4))
        stim = project_sphere(np.random.default_rng(5).standard_normal(441), 1.0, (21, 21))
        np.testing.assert_array_equal(target.evaluate(stim), target.evaluate(stim))

    def test_halfwave_cascade_nonnegative_and_finite(self):
        target = sthor_network(default_l1_spec(weight_seed=6))
        rng = np.random.default_rng(7)
        responses = target.batch(rng.standard_normal((50, 121)))
        assert np.all(np.isfinite(responses))
        assert np.all(responses >= 0)

    def test_declared_input_mismatch_rejected(self):
        # the composed receptive field of the default single-level
        # cascade is 11, so declaring 13 is a contradiction
        level = LevelSpec(kernel_size=7, n_filters=1, pool_size=5, pool_stride=1)
        with pytest.raises(GeometryError):
            SthorSpec(levels=(level,), top_layer_neurons=1, declared_input=13)

    def test_kernels_zero_mean_unit_norm(self):
        target = sthor_network(default_l2_spec(weight_seed=8))
        for w in target.meta["kernels"]:
            flat = w.reshape(w.shape[0], -1)
            np.testing.assert_allclose(flat.mean(axis=1), 0.0, atol=1e-12)
            np.testing.assert_allclose(np.linalg.norm(flat, axis=1), 1.0, atol=1e-12)

    def test_matches_naive_reference_one_level(self):
        level = LevelSpec(
            kernel_size=3,
            n_filters=4,
            pool_size=2,
            pool_stride=1,
            pool_exponent=2.0,
            norm_enabled=True,
            norm_radius=1,
        )
        spec = SthorSpec(levels=(level,), top_layer_neurons=4, weight_seed=10)
        target = sthor_network(spec)
        kernels = target.meta["kernels"]
        rng = np.random.default_rng(11)
        for _ in range(3):
            stim = project_sphere(rng.standard_normal(16), 1.0, spec.input_shape)
            expected = naive_forward(spec, kernels, stim.image)
            np.testing.assert_allclose(target.evaluate(stim), expected, atol=1e-10)

    def test_matches_naive_reference_two_level(self):
        spec = SthorSpec(
            levels=(
                LevelSpec(kernel_size=3, n_filters=3, pool_size=2, pool_stride=2,
                          pool_exponent=10.0, norm_radius=1),
                LevelSpec(kernel_size=3, n_filters=2, pool_size=2, pool_stride=1,
                          pool_exponent=1.0, norm_strength=0.5),
            ),
            top_layer_neurons=2,
            weight_seed=12,
        )
        target = sthor_network(spec)
        assert target.input_shape == (10, 10)
        kernels = target.meta["kernels"]
        rng = np.random.default_rng(13)
        for _ in range(3):
            stim = project_sphere(rng.standard_normal(100), 1.0, (10, 10))
            expected = naive_forward(spec, kernels, stim.image)
            np.testing.assert_allclose(target.evaluate(stim), expected, atol=1e-10)

    def test_chunked_batch_matches_per_item(self):
        target = sthor_network(default_l1_spec(weight_seed=14))
        rng = np.random.default_rng(15)
        matrix = rng.standard_normal((130, 121))
        batched = target.batch(matrix)
        assert batched.shape == (130, 32)
        for row in (0, 63, 64, 129):
            stim = Stimulus.from_values(matrix[row], 11, 11)
            np.testing.assert_allclose(batched[row], target.evaluate(stim), atol=1e-12)


class TestUnitView:
    def test_scalar_target_unchanged(self):
        w = unit_stimulus([1, 0, 0, 0], 2, 2)
        target = linear_neuron(w)
        view = unit_view(target, 0)
        x = unit_stimulus([1, 1, 0, 0], 2, 2)
        assert view.evaluate(x)[0] == target.evaluate(x)[0]

    def test_component_five_of_network(self):
        target = sthor_network(default_l1_spec(weight_seed=16))
        view = unit_view(target, 5)
        rng = np.random.default_rng(17)
        for _ in range(5):
            stim = project_sphere(rng.standard_normal(121), 1.0, (11, 11))
            assert view.evaluate(stim)[0] == target.evaluate(stim)[5]

    def test_out_of_range(self):
        target = sthor_network(default_l1_spec(weight_seed=18))
        with pytest.raises(IndexError):
            unit_view(target, 32)


class TestMatchFitness:
    def test_exact_match_gives_one(self):
        w = unit_stimulus([0, 1], 1, 2)
        target = linear_neuron(w)
        matcher = match_fitness(target, target.evaluate(w))
        assert matcher.evaluate(w)[0] == pytest.approx(1.0, abs=1e-12)

    def test_unit_residual_gives_inverse_e(self):
        w = unit_stimulus([1, 0], 1, 2)
        target = linear_neuron(w)
        x = unit_stimulus([0, 1], 1, 2)  # response 0
        matcher = match_fitness(target, np.array([1.0]))
        assert matcher.evaluate(x)[0] == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_monotone_in_residual(self):
        w = unit_stimulus([1, 0, 0, 0], 2, 2)
        target = linear_neuron(w)
        matcher = match_fitness(target, np.array([1.0]))
        angles = np.linspace(0, np.pi / 2, 7)
        fits = [
            matcher.batch(np.array([[np.cos(a), np.sin(a), 0.0, 0.0]]))[0, 0] for a in angles
        ]
        assert all(b < a for a, b in zip(fits, fits[1:]))

    def test_dimension_mismatch(self):
        target = sthor_network(default_l1_spec(weight_seed=19))
        with pytest.raises(ValueError):
            match_fitness(target, np.zeros(5))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_range_zero_one(self, seed):
        rng = np.random.default_rng(seed)
        w = project_sphere(rng.standard_normal(4), 1.0, (2, 2))
        matcher = match_fitness(linear_neuron(w), rng.standard_normal(1))
        value = matcher.batch(rng.standard_normal((1, 4)))[0, 0]
        assert 0.0 < value <= 1.0


class TestPopulationSampling:
    def test_single_network(self):
        handles, manifest = sample_network_population(
            default_l1_spec(), 1, HyperRanges(), seed=20
        )
        assert len(handles) == 1 and len(manifest) == 1
        assert handles[0].response_dim == 32

    def test_manifest_reproducible(self):
        _, a = sample_network_population(default_l2_spec(), 5, HyperRanges(), seed=21)
        _, b = sample_network_population(default_l2_spec(), 5, HyperRanges(), seed=21)
        assert a == b

    def test_l2_population_shares_input_shape(self):
        handles, _ = sample_network_population(default_l2_spec(), 20, HyperRanges(), seed=22)
        assert all(h.input_shape == (21, 21) for h in handles)

    def test_drawn_values_inside_ranges(self):
        ranges = HyperRanges()
        handles, manifest = sample_network_population(default_l2_spec(), 10, ranges, seed=23)
        for handle, entry in zip(handles, manifest):
            spec = handle.meta["spec"]
            for level_spec, level_entry in zip(spec.levels, entry["levels"]):
                assert level_spec.pool_exponent in ranges.pool_exponent
                assert level_spec.norm_strength in ranges.norm_strength
                assert level_entry["pool_exponent"] == level_spec.pool_exponent
            assert spec.levels[0].n_filters in ranges.n_filters
            assert spec.levels[-1].n_filters == 32

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            HyperRanges(n_filters=())

    def test_hidden_level_filter_counts_vary(self):
        handles, manifest = sample_network_population(
            default_l2_spec(), 12, HyperRanges(), seed=24
        )
        counts = {m["levels"][0]["n_filters"] for m in manifest}
        assert len(counts) > 1


class TestSerialization:
    def test_spec_json_round_trip(self):
        spec = default_l2_spec(weight_seed=25)
        assert spec_from_json(spec_to_json(spec)) == spec

    def test_weights_round_trip(self, tmp_path):
        target = sthor_network(default_l2_spec(weight_seed=26))
        path = tmp_path / "weights.bin"
        write_network_weights(target.meta["kernels"], path)
        back = read_network_weights(path)
        assert len(back) == 2
        for original, loaded in zip(target.meta["kernels"], back):
            np.testing.assert_array_equal(original, loaded)

    def test_weights_header(self, tmp_path):
        target = sthor_network(default_l1_spec(weight_seed=27))
        path = tmp_path / "weights.bin"
        write_network_weights(target.meta["kernels"], path)
        raw = path.read_bytes()
        assert raw[:8] == b"STHORNET"
        with pytest.raises(ValueError):
            bad = tmp_path / "bad.bin"
            bad.write_bytes(b"NOTMAGIC" + raw[8:])
            read_network_weights(bad)

    def test_rebuilt_network_matches(self, tmp_path):
        spec = default_l1_spec(weight_seed=28)
        target = sthor_network(spec)
        path = tmp_path / "weights.bin"
        write_network_weights(target.meta["kernels"], path)
        rebuilt = sthor_network(spec_from_json(spec_to_json(spec)), kernels=read_network_weights(path))
        rng = np.random.default_rng(29)
        matrix = rng.standard_normal((10, 121))
        np.testing.assert_array_equal(target.batch(matrix), rebuilt.batch(matrix))
