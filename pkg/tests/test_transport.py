import os
import shutil
import tempfile

import pytest
import numpy as np

from VDEARec import autodiff as ad
from VDEARec import transport
from VDEARec.autodiff import Tensor
from VDEARec.base import ContractError
from VDEARec.vae import GaussianEmbedding, MoGPrior


def _prior(rng, K, D, scale=0.5):
    return MoGPrior(rng.standard_normal(K), scale * rng.standard_normal((K, D)),
                    0.2 * rng.standard_normal((K, D)))


class TestWasserstein(object):
    """Test closed-form Gaussian W2 distances
    """
    def test_values(self):
        """Test identical, shifted and rescaled Gaussians
        """
        assert transport.gaussian_w2([0, 0], [1, 1], [0, 0], [1, 1]) == 0.0
        assert transport.gaussian_w2([0, 0], [1, 1], [3, 4], [1, 1]) == 25.0
        assert transport.gaussian_w2([0], [1], [3], [2.5]) == 11.25

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            m1, m2 = rng.standard_normal((2, 4))
            s1, s2 = rng.uniform(0.1, 2, (2, 4))
            d = transport.gaussian_w2(m1, s1, m2, s2)
            assert d >= 0
            assert d == transport.gaussian_w2(m2, s2, m1, s1)

    def test_errors(self):
        with pytest.raises(ContractError):
            transport.gaussian_w2([0], [0.0], [0], [1])
        with pytest.raises(ContractError):
            transport.gaussian_w2([0, 1], [1, 1], [0], [1])

    def test_pairwise(self):
        """Test that the pairwise matrix agrees with the scalar distance
        """
        rng = np.random.default_rng(1)
        means, stds = rng.standard_normal((4, 3)), rng.uniform(0.5, 1.5, (4, 3))
        dist = transport.pairwise_w2(means, stds)
        for i in range(4):
            for j in range(4):
                assert dist[i, j] == pytest.approx(
                    transport.gaussian_w2(means[i], stds[i], means[j], stds[j]), abs=1e-12)
        np.testing.assert_array_equal(np.diag(dist), 0.0)


class TestAlignmentLosses(object):
    """Test the local and moment alignment losses
    """
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.emb_s = GaussianEmbedding(Tensor(rng.standard_normal((5, 3)), True),
                                       Tensor(rng.standard_normal((5, 3)), True))
        self.emb_t = GaussianEmbedding(Tensor(rng.standard_normal((5, 3)), True),
                                       Tensor(rng.standard_normal((5, 3)), True))
        self.mask = np.array([True, False, True, False, False])

    def test_local_value(self):
        """Test that only masked rows contribute their W2 distance
        """
        loss = transport.local_alignment_loss(self.emb_s, self.emb_t, self.mask)
        sd_s = np.exp(0.5 * self.emb_s.logvar.values)
        sd_t = np.exp(0.5 * self.emb_t.logvar.values)
        expected = sum(transport.gaussian_w2(self.emb_s.mu.values[i], sd_s[i],
                                             self.emb_t.mu.values[i], sd_t[i])
                       for i in (0, 2))
        assert loss.item() == pytest.approx(expected, rel=1e-12)

    def test_local_empty_mask(self):
        loss = transport.local_alignment_loss(self.emb_s, self.emb_t, np.zeros(5, dtype=bool))
        assert loss.item() == 0.0

    def test_local_gradients(self):
        """Test gradients of the local loss, unmasked rows receive none
        """
        params = [self.emb_s.mu, self.emb_s.logvar, self.emb_t.mu, self.emb_t.logvar]
        assert ad.grad_check(
            lambda: transport.local_alignment_loss(self.emb_s, self.emb_t, self.mask),
            params) < 1e-6
        with ad.Tape() as tape:
            grads = tape.backward(
                transport.local_alignment_loss(self.emb_s, self.emb_t, self.mask),
                inputs=[self.emb_s.mu])
        np.testing.assert_array_equal(grads[self.emb_s.mu][~self.mask], 0.0)

    def test_moment_loss(self):
        """Test that identical batches give zero and shifted batches the squared shift
        """
        Z = Tensor(np.random.default_rng(3).standard_normal((50, 2)))
        assert transport.moment_alignment_loss(Z, Z).item() == 0.0
        shifted = transport.moment_alignment_loss(Z, Z + np.array([1.0, 2.0]))
        assert shifted.item() == pytest.approx(5.0, rel=1e-9)
        with pytest.raises(ContractError):
            transport.moment_alignment_loss(Z, Tensor(np.ones((50, 3))))


class TestCostTensor(object):
    """Test the Gromov-Wasserstein cost
    """
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.cost = transport.build_cost_tensor(_prior(rng, 4, 3), _prior(rng, 4, 3))
        self.rng = rng

    def test_invariants(self):
        """Test nonnegativity, pair symmetry and the zero diagonal
        """
        M = self.cost.dense()
        assert M.shape == (4, 4, 4, 4)
        assert np.all(M >= 0)
        np.testing.assert_allclose(M, M.transpose(2, 3, 0, 1))
        for i in range(4):
            for j in range(4):
                assert M[i, j, i, j] == 0.0

    def test_two_cluster_pattern(self):
        """Test the K = 2 cost entries
        """
        a, b = 2.0, 5.0
        M = transport.CostTensor([[0, a], [a, 0]], [[0, b], [b, 0]]).dense()
        assert M[0, 0, 1, 1] == (a - b) ** 2
        assert M[0, 0, 1, 0] == a ** 2
        assert M[0, 0, 0, 1] == b ** 2
        assert M[0, 1, 0, 1] == 0.0

    def test_contraction_matches_dense(self):
        """Test the factored contraction against the explicit tensor
        """
        psi = self.rng.dirichlet(np.ones(16)).reshape(4, 4)
        dense = np.einsum("ijkl,kl->ij", self.cost.dense(), psi)
        np.testing.assert_allclose(self.cost.contract(psi), dense, atol=1e-10)
        assert transport.gw_objective(psi, self.cost) == pytest.approx(
            transport.gw_objective(psi, self.cost.dense()), abs=1e-10)

    def test_two_cluster_objective(self):
        """Test the closed-form objective of the uniform plan on two clusters
        """
        a, b = 1.5, 4.0
        cost = transport.CostTensor([[0, a], [a, 0]], [[0, b], [b, 0]])
        value = transport.gw_objective(np.full((2, 2), 0.25), cost)
        assert value == pytest.approx(((a - b) ** 2 + a ** 2 + b ** 2) / 4, rel=1e-12)

    def test_mismatched_priors(self):
        with pytest.raises(ContractError):
            transport.build_cost_tensor(_prior(self.rng, 3, 2), _prior(self.rng, 4, 2))


class TestSinkhorn(object):
    """Test the entropic GW coupling solver
    """
    def setup_method(self):
        self.rng = np.random.default_rng(5)

    def test_feasible_over_seeds(self):
        """Test marginals and nonnegativity for random problems
        """
        for seed in range(8):
            cost = transport.build_cost_tensor(_prior(self.rng, 5, 3), _prior(self.rng, 5, 3))
            pi_s, pi_t = self.rng.dirichlet(np.ones(5), size=2)
            coupling = transport.gdot_sinkhorn(cost, pi_s, pi_t, seed=seed)
            assert coupling.converged
            assert np.all(coupling.psi >= 0)
            assert coupling.violation() <= 1e-6
            np.testing.assert_allclose(coupling.psi.sum(), 1.0, atol=1e-6)

    @pytest.mark.parametrize("K", [2, 30])
    @pytest.mark.parametrize("epsilon", [1e-3, 1e-2])
    def test_feasible_at_small_epsilon(self, K, epsilon):
        """Test that small regularization still meets the marginals
        """
        for seed in range(4):
            cost = transport.build_cost_tensor(_prior(self.rng, K, 3), _prior(self.rng, K, 3))
            pi_s, pi_t = self.rng.dirichlet(np.ones(K), size=2)
            coupling = transport.gdot_sinkhorn(cost, pi_s, pi_t, epsilon=epsilon, seed=seed)
            assert coupling.converged
            assert coupling.violation() <= 1e-6
            assert np.all(coupling.psi >= 0)

    def test_row_violation_nonincreasing(self):
        """Test that every inner round reduces the L1 row violation
        """
        cost = transport.build_cost_tensor(_prior(self.rng, 6, 2), _prior(self.rng, 6, 2))
        pi = np.full(6, 1 / 6.0)
        coupling = transport.gdot_sinkhorn(cost, pi, pi, seed=0, tol=1e-12)
        for trace in coupling.traces:
            assert np.all(np.diff(trace) <= 1e-12)

    def test_single_cluster(self):
        cost = transport.CostTensor([[0.0]], [[0.0]])
        coupling = transport.gdot_sinkhorn(cost, [1.0], [1.0], seed=0)
        np.testing.assert_allclose(coupling.psi, [[1.0]])

    def test_recovers_planted_permutation(self):
        """Test that an isometric relabeling is found with near-zero cost
        """
        points = np.array([[0.0], [1.0], [3.0]])
        perm = np.array([2, 0, 1])
        source = MoGPrior(np.zeros(3), points, np.zeros((3, 1)))
        target = MoGPrior(np.zeros(3), points[perm], np.zeros((3, 1)))
        cost = transport.build_cost_tensor(source, target)
        pi = np.full(3, 1 / 3.0)
        coupling = transport.gdot_sinkhorn(cost, pi, pi, epsilon=0.1, seed=1)
        planted = np.zeros((3, 3))
        planted[perm, np.arange(3)] = 1 / 3.0
        best = transport.gw_objective(planted, cost)
        assert best == 0.0
        assert transport.gw_objective(coupling, cost) <= best * 1.01 + 1e-9
        np.testing.assert_array_equal(np.argmax(coupling.psi, axis=0), perm)

    @pytest.mark.parametrize("epsilon", [1e-3, 1e-2])
    def test_planted_permutation_at_small_epsilon(self, epsilon):
        """Test that a nearly unregularized solve lands on the planted relabeling
        """
        points = np.array([[0.0], [1.0], [3.0]])
        perm = np.array([2, 0, 1])
        source = MoGPrior(np.zeros(3), points, np.zeros((3, 1)))
        target = MoGPrior(np.zeros(3), points[perm], np.zeros((3, 1)))
        cost = transport.build_cost_tensor(source, target)
        pi = np.full(3, 1 / 3.0)
        for seed in range(5):
            coupling = transport.gdot_sinkhorn(cost, pi, pi, epsilon=epsilon, seed=seed)
            assert coupling.converged
            assert transport.gw_objective(coupling, cost) <= 1e-6
            np.testing.assert_array_equal(np.argmax(coupling.psi, axis=0), perm)

    def test_potentials_carry_over_rounds(self):
        """Test that later rounds start from the previous potentials and need few steps
        """
        points = np.array([[0.0], [1.0], [3.0]])
        source = MoGPrior(np.zeros(3), points, np.zeros((3, 1)))
        target = MoGPrior(np.zeros(3), points[::-1], np.zeros((3, 1)))
        cost = transport.build_cost_tensor(source, target)
        pi = np.full(3, 1 / 3.0)
        coupling = transport.gdot_sinkhorn(cost, pi, pi, epsilon=1e-2, seed=0)
        assert coupling.converged
        assert coupling.n_outer < 10
        assert len(coupling.traces[-1]) <= 5

    def test_scale_covariance(self):
        """Test that scaling distances by c and epsilon by c^2 keeps the plan
        """
        base = transport.build_cost_tensor(_prior(self.rng, 4, 2), _prior(self.rng, 4, 2))
        scaled = transport.CostTensor(2.0 * base.source_dist, 2.0 * base.target_dist)
        pi_s, pi_t = self.rng.dirichlet(np.ones(4), size=2)
        a = transport.gdot_sinkhorn(base, pi_s, pi_t, epsilon=0.1, seed=3)
        b = transport.gdot_sinkhorn(scaled, pi_s, pi_t, epsilon=0.4, seed=3)
        np.testing.assert_allclose(a.psi, b.psi, atol=1e-10)

    def test_deterministic(self):
        cost = transport.build_cost_tensor(_prior(self.rng, 4, 2), _prior(self.rng, 4, 2))
        pi = np.full(4, 0.25)
        a = transport.gdot_sinkhorn(cost, pi, pi, seed=9)
        b = transport.gdot_sinkhorn(cost, pi, pi, seed=9)
        np.testing.assert_array_equal(a.psi, b.psi)

    def test_errors(self):
        """Test marginal and epsilon preconditions
        """
        cost = transport.CostTensor(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ContractError):
            transport.gdot_sinkhorn(cost, [1.0, 0.0], [0.5, 0.5])
        with pytest.raises(ContractError):
            transport.gdot_sinkhorn(cost, [0.6, 0.6], [0.5, 0.5])
        with pytest.raises(ContractError):
            transport.gdot_sinkhorn(cost, [0.5, 0.5], [0.5, 0.5, 0.0])
        with pytest.raises(ContractError):
            transport.gdot_sinkhorn(cost, [0.5, 0.5], [0.5, 0.5], epsilon=0.0)


class TestGlobalLoss(object):
    """Test the coupling-weighted component distance
    """
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.prior_s = _prior(rng, 3, 2)
        self.prior_t = _prior(rng, 3, 2)
        self.rng = rng

    def test_identical_priors_on_diagonal(self):
        psi = np.eye(3) / 3.0
        assert transport.global_alignment_loss(psi, self.prior_s, self.prior_s).item() == 0.0

    def test_value_and_linearity(self):
        """Test the weighted sum of component distances and its linearity in the plan
        """
        a = self.rng.dirichlet(np.ones(9)).reshape(3, 3)
        b = self.rng.dirichlet(np.ones(9)).reshape(3, 3)
        loss = lambda psi: transport.global_alignment_loss(psi, self.prior_s, self.prior_t).item()
        sd_s, sd_t = self.prior_s.std_values(), self.prior_t.std_values()
        expected = sum(a[i, j] * transport.gaussian_w2(
            self.prior_s.means.values[i], sd_s[i], self.prior_t.means.values[j], sd_t[j])
            for i in range(3) for j in range(3))
        assert loss(a) == pytest.approx(expected, rel=1e-12)
        assert loss(0.3 * a + 0.7 * b) == pytest.approx(0.3 * loss(a) + 0.7 * loss(b), rel=1e-12)

    def test_gradients(self):
        psi = self.rng.dirichlet(np.ones(9)).reshape(3, 3)
        params = dict(self.prior_s.parameters())
        params.update({"t." + k: v for k, v in self.prior_t.parameters().items()})
        params = {k: v for k, v in params.items() if not k.endswith("logits")}
        assert ad.grad_check(
            lambda: transport.global_alignment_loss(psi, self.prior_s, self.prior_t),
            params) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            transport.global_alignment_loss(np.eye(2), self.prior_s, self.prior_t)


class TestCouplingFile(object):
    def setup_method(self):
        self.tmpdir = tempfile.mkdtemp()

    def teardown_method(self):
        shutil.rmtree(self.tmpdir)

    def test_write_coupling(self):
        """Test that a written plan reads back exactly
        """
        psi = np.random.default_rng(0).dirichlet(np.ones(6)).reshape(2, 3)
        path = os.path.join(self.tmpdir, "psi.tsv")
        transport.write_coupling(transport.CouplingMatrix(psi, psi.sum(1), psi.sum(0)), path)
        np.testing.assert_array_equal(np.loadtxt(path, delimiter="\t"), psi)


class TestVariants(object):
    """Test the alignment variant registry
    """
    def test_lookup(self):
        assert transport.get_variant("full").uses_gdot
        assert not transport.get_variant("local").uses_gdot
        assert transport.get_variant("moment").global_term == "moment"
        with pytest.raises(ContractError):
            transport.get_variant("adversarial")

    def test_combine(self):
        """Test which terms each variant weighs in
        """
        assert transport.get_variant("full").combine(1.0, 2.0, 3.0, 0.7, 1.0) == pytest.approx(5.4)
        assert transport.get_variant("base").combine(1.0, 2.0, 3.0, 0.7, 1.0) == 1.0
        assert transport.get_variant("local").combine(1.0, 2.0, 3.0, 0.7, 1.0) == pytest.approx(2.4)

    def test_listing(self, capsys):
        transport.available_variants()
        out = capsys.readouterr().out
        for name in ("full", "base", "local", "global", "moment"):
            assert name in out
