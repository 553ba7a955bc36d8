import sys

import numpy as np
import pytest

from rtlkit import autodiff as ad
from rtlkit.errors import ConfigError, ShapeError
from rtlkit.hull import (
    ProjectionHead,
    PrototypeBank,
    coefficient_entropy,
    coefficients,
    hull_contains,
    hull_slack,
    project,
)
from rtlkit.optim import ParamStore

sys.path.insert(0, "tests")


def learned_setup(n=20, k=12, d=8, e=4, lam=0.5, seed=0):
    rng = np.random.default_rng(seed)
    head = ProjectionHead(in_dim=d, key_dim=e, inverse_temperature=lam)
    store = ParamStore(np.float64)
    head.register(store, seed)
    x = rng.standard_normal((n, d))
    protos = rng.standard_normal((k, d))
    return x, protos, head, store


class TestBankAndHead:
    def test_strict_requires_more_prototypes_than_dims(self):
        with pytest.raises(ConfigError):
            PrototypeBank(count=8, dim=8, strict=True)

    def test_relaxed_warns(self):
        with pytest.warns(UserWarning):
            PrototypeBank(count=8, dim=8, strict=False)

    def test_identity_mode_forces_key_dim(self):
        head = ProjectionHead(in_dim=12, key_dim=4, mode="identity")
        assert head.key_dim == 12

    def test_temperature_positive(self):
        with pytest.raises(ConfigError):
            ProjectionHead(in_dim=8, inverse_temperature=0.0)


class TestCoefficients:
    def test_reference_softmax_fixture(self):
        # identity head, lambda 0.5: similarity row (2, 0) scales to (1, 0)
        # and softmax gives (e/(e+1), 1/(e+1))
        head = ProjectionHead(in_dim=2, inverse_temperature=0.5, mode="identity")
        x = ad.Tensor(np.array([[2.0, 0.0]]))
        protos = ad.Tensor(np.eye(2))
        out = coefficients(x, protos, head).data
        np.testing.assert_allclose(out, [[0.7310585786, 0.2689414214]], atol=1e-9)

    def test_lambda_to_zero_limit_is_uniform(self):
        x, protos, head, store = learned_setup(lam=1e-9)
        out = coefficients(
            ad.Tensor(x), ad.Tensor(protos), head, store.leaves()
        ).data
        np.testing.assert_allclose(out, 1.0 / protos.shape[0], atol=1e-6)

    def test_identical_prototypes_give_uniform(self):
        x, protos, head, store = learned_setup(k=6)
        protos = np.tile(protos[:1], (6, 1))
        out = coefficients(ad.Tensor(x), ad.Tensor(protos), head, store.leaves()).data
        np.testing.assert_allclose(out, 1.0 / 6.0, atol=1e-12)

    def test_rows_on_simplex_even_for_extreme_inputs(self):
        x, protos, head, store = learned_setup()
        out = coefficients(
            ad.Tensor(x * 1e6), ad.Tensor(protos), head, store.leaves()
        ).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_dim_mismatch(self):
        x, protos, head, store = learned_setup()
        with pytest.raises(ShapeError):
            coefficients(ad.Tensor(x[:, :4]), ad.Tensor(protos), head, store.leaves())

    def test_entropy_monotone_in_inverse_temperature(self):
        # sharper coefficients at larger lambda: row entropy must not increase
        x, protos, _, store = learned_setup()
        rows = None
        previous = None
        for lam in (0.1, 0.5, 4.0):
            head = ProjectionHead(in_dim=8, key_dim=4, inverse_temperature=lam)
            out = coefficients(ad.Tensor(x), ad.Tensor(protos), head, store.leaves()).data
            entropy = coefficient_entropy(out)
            if previous is not None:
                assert np.all(entropy <= previous + 1e-9)
            previous = entropy


class TestProject:
    def test_single_prototype(self):
        coeff = ad.Tensor(np.ones((5, 1)))
        protos = ad.Tensor(np.array([[3.0, 1.0]]))
        out = project(coeff, protos).data
        np.testing.assert_allclose(out, np.tile([3.0, 1.0], (5, 1)))

    def test_direct_combination(self):
        coeff = ad.Tensor(np.array([[0.25, 0.75]]))
        protos = ad.Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(project(coeff, protos).data, [[0.25, 0.75]])

    def test_one_hot_recovers_prototype(self):
        rng = np.random.default_rng(1)
        protos = rng.standard_normal((7, 5))
        coeff = np.zeros((3, 7))
        coeff[np.arange(3), [2, 0, 6]] = 1.0
        out = project(ad.Tensor(coeff), ad.Tensor(protos)).data
        np.testing.assert_allclose(out, protos[[2, 0, 6]])


class TestHullCertificate:
    def test_projected_batch_inside(self):
        x, protos, head, store = learned_setup(n=50)
        coeff = coefficients(ad.Tensor(x), ad.Tensor(protos), head, store.leaves())
        projected = project(coeff, ad.Tensor(protos)).data
        assert hull_contains(projected, protos, trials=1000, rng=np.random.default_rng(0))

    def test_scaled_point_outside(self):
        # doubling the farthest prototype leaves the hull; the point's own
        # direction is a separating certificate
        rng = np.random.default_rng(2)
        protos = rng.standard_normal((12, 6))
        far = protos[np.linalg.norm(protos, axis=1).argmax()]
        outside = 2.0 * far
        assert not hull_contains(outside, protos, trials=1000, rng=rng)
        direction = far / np.linalg.norm(far)
        support = (protos @ direction).max()
        assert outside @ direction > support + 1e-5

    def test_prototype_itself_inside(self):
        rng = np.random.default_rng(3)
        protos = rng.standard_normal((9, 4))
        assert hull_contains(protos[4], protos, trials=500, rng=rng)

    def test_slack_sign(self):
        protos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        inside = np.array([[0.2, 0.2]])
        outside = np.array([[1.0, 1.0]])
        assert hull_slack(inside, protos, 200, np.random.default_rng(0)) <= 1e-12
        assert hull_slack(outside, protos, 200, np.random.default_rng(0)) > 0.1


class TestGradients:
    def test_coefficients_project_finite_differences(self):
        from test_autodiff import fd_check

        head = ProjectionHead(in_dim=6, key_dim=3, inverse_temperature=0.7)
        rng = np.random.default_rng(4)
        arrays = {
            "x": rng.standard_normal((9, 6)),
            "p": rng.standard_normal((8, 6)),
            "head_key": rng.standard_normal((6, 3)),
            "head_query": rng.standard_normal((6, 3)),
        }
        w = rng.standard_normal((9, 6))

        def build(t):
            coeff = coefficients(t["x"], t["p"], head, t)
            return ad.weighted_sum(project(coeff, t["p"]), w)

        assert fd_check(build, arrays) <= 1e-6

    def test_identity_head_gradients(self):
        from test_autodiff import fd_check

        head = ProjectionHead(in_dim=5, inverse_temperature=0.5, mode="identity")
        rng = np.random.default_rng(5)
        arrays = {"x": rng.standard_normal((7, 5)), "p": rng.standard_normal((9, 5))}
        w = rng.standard_normal((7, 5))

        def build(t):
            coeff = coefficients(t["x"], t["p"], head, None)
            return ad.weighted_sum(project(coeff, t["p"]), w)

        assert fd_check(build, arrays) <= 1e-6
