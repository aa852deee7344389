import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bankerwalk.env import EnvSpec, stationary_distribution
from bankerwalk.errors import KernelError, OutOfDomain
from bankerwalk.kernel import (CallableKernel, PerturbationTerm, direction_set, eval_alpha, eval_g, eval_h,
                               eval_p, grad_g, make_kernel, reflected_step_kernel, uniform_kernel,
                               validate_kernel, validation_grid)

from conftest import d1_kernel, perturbed_kernel
from oracles import kernel_fields


def test_direction_order():
    ds = direction_set(3)
    assert len(ds) == 6
    assert ds.vectors.tolist() == [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]


class TestUniform:
    def test_p(self, uniform2):
        assert eval_p(uniform2, 0, [0.3, 1.7]).tolist() == [0.25] * 4

    def test_g_alpha_grad(self, uniform2):
        assert np.all(eval_g(uniform2, 0, [0.2, 0.4]) == 0)
        assert np.allclose(eval_alpha(uniform2, 0, [0.2, 0.4]), 0.5 * np.eye(2))
        assert np.all(grad_g(uniform2, 0, [0.2, 0.4]) == 0)

    @pytest.mark.parametrize("y,h", [((0.5, 0.5), (0, 0)), ((0.0, 0.5), (0.5, 0)), ((0.5, 1.0), (0, -0.5))])
    def test_h(self, uniform2, y, h):
        assert np.allclose(eval_h(uniform2, 0, y), h, atol=1e-15)

    def test_q_interior(self, uniform2):
        assert reflected_step_kernel(uniform2, 0, [0.3, 0.6]).tolist() == [0.25] * 4

    def test_q_face(self, uniform2):
        assert reflected_step_kernel(uniform2, 0, [0.0, 0.5]).tolist() == [0.5, 0.0, 0.25, 0.25]

    def test_q_corner(self, uniform2):
        assert reflected_step_kernel(uniform2, 0, [0.0, 0.0]).tolist() == [0.5, 0.0, 0.5, 0.0]

    def test_q_upper_corner(self, uniform2):
        assert reflected_step_kernel(uniform2, 0, [1.0, 1.0]).tolist() == [0.0, 0.5, 0.0, 0.5]

    def test_out_of_domain(self, uniform2):
        with pytest.raises(OutOfDomain):
            eval_h(uniform2, 0, [1.2, 0.5])
        with pytest.raises(OutOfDomain):
            reflected_step_kernel(uniform2, 0, [-0.01, 0.5])


class TestOneDimensional:
    def test_values(self):
        k = d1_kernel()
        assert np.allclose(eval_p(k, 0, [0.0]), [0.6, 0.4], atol=1e-15)
        assert np.allclose(eval_p(k, 0, [0.25]), [0.5, 0.5], atol=1e-15)
        assert eval_g(k, 0, [0.0])[0] == pytest.approx(0.2, abs=1e-15)
        assert eval_alpha(k, 0, [0.0])[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_derivative(self):
        k = d1_kernel()
        assert grad_g(k, 0, [0.0])[0, 0] == pytest.approx(0.0, abs=1e-14)
        assert grad_g(k, 0, [0.25])[0, 0] == pytest.approx(-4 * np.pi * 0.1, rel=1e-12)
        assert grad_g(k, 0, [0.25])[0, 0] == pytest.approx(-1.2566, abs=1e-4)


class TestConstruction:
    def test_rows_normalised_after_perturbation(self):
        # a lone term on one direction is spread so rows still sum to 1
        k = make_kernel([[0.25] * 4], [PerturbationTerm(0, 0, (1, 0), 0.05)], center=False)
        y = validation_grid(2, 21)
        assert np.abs(k.probs(0, y).sum(axis=1) - 1).max() < 1e-12

    def test_centering_enforced(self, env3):
        k = perturbed_kernel(env3, seed=8)
        mu = stationary_distribution(env3)
        y = np.random.default_rng(0).uniform(0, 2, (300, 2))
        gbar = sum(mu[i] * k.mean_step(i, y) for i in range(3))
        assert np.abs(gbar).max() < 1e-10

    def test_constant_term_folds_into_base(self):
        k = make_kernel([[0.25] * 4], [PerturbationTerm(0, 0, (0, 0), 0.1)], center=False)
        assert k.freqs.shape[0] == 0
        assert np.allclose(k.probs(0, [0.3, 0.3]), [0.325, 0.225, 0.225, 0.225])

    def test_phase_and_negative_frequency(self):
        # cos(2 pi <k,y> + phi) must be the same field whichever sign k is given with
        a = make_kernel([[0.25] * 4], [PerturbationTerm(0, 0, (1, -2), 0.04, 0.7)], center=False)
        b = make_kernel([[0.25] * 4], [PerturbationTerm(0, 0, (-1, 2), 0.04, -0.7)], center=False)
        y = np.random.default_rng(1).uniform(0, 2, (50, 2))
        assert np.allclose(a.probs(0, y), b.probs(0, y), atol=1e-15)
        field = 0.04 * np.cos(2 * np.pi * (y[:, 0] - 2 * y[:, 1]) + 0.7)
        assert np.allclose(a.probs(0, y)[:, 0], 0.25 + 0.75 * field, atol=1e-15)

    def test_positivity_floor(self):
        with pytest.raises(KernelError):
            make_kernel([[0.05, 0.45, 0.25, 0.25]], [PerturbationTerm(0, 0, (1, 0), 0.1)], center=False)

    def test_bad_base(self):
        with pytest.raises(KernelError):
            make_kernel([[0.3, 0.3, 0.3, 0.3]])
        with pytest.raises(KernelError):
            make_kernel([[0.5, 0.5, 0.0]])

    def test_centering_needs_mu(self):
        with pytest.raises(KernelError):
            make_kernel([[0.25] * 4], center=True)

    def test_immutable(self, kernel3):
        with pytest.raises(ValueError):
            kernel3.base[0, 0] = 1.0


class TestFields:
    def test_matches_loop_oracle(self, kernel3):
        rng = np.random.default_rng(4)
        for _ in range(20):
            i, y = int(rng.integers(3)), rng.uniform(0, 2, 2)
            _, g, alpha = kernel_fields(kernel3, i, y)
            assert np.allclose(eval_g(kernel3, i, y), g, atol=1e-15)
            assert np.allclose(eval_alpha(kernel3, i, y), alpha, atol=1e-15)

    def test_grad_matches_finite_differences(self, kernel3):
        rng = np.random.default_rng(5)
        h = 1e-5
        for _ in range(100):
            i, y = int(rng.integers(3)), rng.uniform(0, 2, 2)
            G = grad_g(kernel3, i, y)
            fd = np.stack([(eval_g(kernel3, i, y + h * e) - eval_g(kernel3, i, y - h * e)) / (2 * h)
                           for e in np.eye(2)], axis=1)
            scale = max(np.abs(G).max(), 1e-3)
            assert np.abs(G - fd).max() / scale < 1e-6

    def test_alpha_minus_ggt_psd(self, kernel3):
        y = validation_grid(2, 41)
        for i in range(3):
            g = kernel3.mean_step(i, y)
            a = kernel3.second_moment_diag(i, y)
            m = a[:, :, None] * np.eye(2) - g[:, :, None] * g[:, None, :]
            assert np.linalg.eigvalsh(m)[:, 0].min() > 0
            assert a.min() >= 0 and a.max() <= 1

    def test_reflection_sign_property(self, kernel3):
        # (h - g)_l >= 0 on y_l = 0, <= 0 on y_l = 1, = 0 inside
        t = np.linspace(0, 1, 21)
        pts = np.array([[a, b] for a in t for b in t if a in (0, 1) or b in (0, 1)])
        for i in range(3):
            diff = kernel3.reflected_mean_step(i, pts) - kernel3.mean_step(i, pts)
            for l in range(2):
                lo, hi, mid = pts[:, l] == 0, pts[:, l] == 1, (pts[:, l] > 0) & (pts[:, l] < 1)
                assert np.all(diff[lo, l] >= 0)
                assert np.all(diff[hi, l] <= 0)
                assert np.all(diff[mid, l] == 0)

    def test_q_is_probability(self, kernel3):
        y = validation_grid(2, 11, upper=1.0)
        for i in range(3):
            q = kernel3.reflected_probs(i, y)
            assert np.abs(q.sum(axis=1) - 1).max() < 1e-12 and q.min() >= 0


class TestValidation:
    def test_good_kernel(self, env3, kernel3):
        rep = validate_kernel(kernel3, stationary_distribution(env3))
        assert rep.ok, rep.problems
        assert rep.p_min >= kernel3.p_min - 1e-12
        assert rep.lipschitz_worst_ratio <= 1

    def test_grid_positivity(self, kernel3):
        y = validation_grid(2)
        assert y.shape == (101 ** 2, 2)
        for i in range(3):
            p = kernel3.probs(i, y)
            assert p.min() >= kernel3.p_min - 1e-12
            assert np.abs(p.sum(axis=1) - 1).max() < 1e-12

    def test_broken_centering_reported(self):
        k = make_kernel([[0.255, 0.245, 0.25, 0.25]], center=False)
        rep = validate_kernel(k, np.ones(1))
        assert any(p.startswith("A.4 centering") for p in rep.problems)
        assert rep.max_centering == pytest.approx(0.01, abs=1e-12)

    def test_callable_kernel_checked_not_enforced(self):
        def fn(i, y):
            s = 0.05 * np.sin(2 * np.pi * y[0])
            return [0.25 + s, 0.25 - s, 0.25, 0.25]

        k = CallableKernel(fn, 2, 1)
        rep = validate_kernel(k, np.ones(1))
        assert any(p.startswith("A.4") for p in rep.problems)
        y = np.array([[0.1, 0.3]])
        fd = k.mean_step_grad(0, y)[0, 0, 0]
        assert fd == pytest.approx(0.2 * np.pi * np.cos(0.2 * np.pi), rel=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(1, 3), st.integers(1, 3))
    def test_random_kernels_valid(self, seed, n, d):
        rng = np.random.default_rng(seed)
        P = rng.uniform(0.1, 1, (n, n))
        env = EnvSpec(P / P.sum(axis=1, keepdims=True))
        k = perturbed_kernel(env, d=d, seed=seed, n_terms=4, amp=0.01)
        rep = validate_kernel(k, stationary_distribution(env), grid=validation_grid(d, 11), n_pairs=200)
        assert rep.ok, rep.problems
