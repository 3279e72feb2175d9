import numpy as np
import pytest
from scipy import stats

from jointnets.core import (
    ConditionData,
    ConfigurationError,
    DivergenceError,
    Hyperparams,
    edge_pairs,
)
from jointnets.sampler import (
    compute_weights,
    init_chain,
    run_chain,
    truncated_normal_signed,
    update_augmentation,
    update_concentration,
    update_dp_component,
    update_indicators,
    update_precision,
)
from jointnets.simgen import SimScenario, simulate_scenario


def null_data(p, G, labels=None):
    labels = labels or [f"c{g}" for g in range(G)]
    return [ConditionData(scatter=np.zeros((p, p)), n_obs=0, p=p, label=labels[g])
            for g in range(G)]


class TestInitChain:
    def test_contract(self):
        hp = Hyperparams(seed=7)
        state = init_chain(null_data(5, 2), hp, seed=7)
        assert len(state.precisions) == 2
        for ps in state.precisions:
            assert np.array_equal(ps.omega, np.eye(5))
            assert not ps.delta.any()
            k, l = edge_pairs(5)
            assert np.allclose(ps.tau_slab[k, l], hp.a_tau / hp.b_tau)
            assert np.allclose(ps.tau_spike_var[k, l], 2.0 / hp.lambda0**2)
        assert len(state.dp_components) == 3
        for comp in state.dp_components:
            assert comp.atoms.shape == (1,)
            assert np.all(comp.assignments == 0)
            comp.validate()
        assert state.concentration > 0

    def test_deterministic(self):
        a = init_chain(null_data(5, 2), Hyperparams(), seed=7)
        b = init_chain(null_data(5, 2), Hyperparams(), seed=7)
        assert np.array_equal(a.precisions[0].omega, b.precisions[0].omega)
        assert a.concentration == b.concentration
        for ca, cb in zip(a.dp_components, b.dp_components):
            assert np.array_equal(ca.atoms, cb.atoms)
            assert np.array_equal(ca.sticks, cb.sticks)
            assert np.array_equal(ca.slice_vars, cb.slice_vars)

    def test_single_condition(self):
        state = init_chain(null_data(4, 1), Hyperparams(), seed=1)
        assert state.n_conditions == 1
        assert len(state.dp_components) == 2

    def test_rejects_mismatched_p(self):
        data = [ConditionData(scatter=np.zeros((4, 4)), n_obs=0, p=4, label="a"),
                ConditionData(scatter=np.zeros((5, 5)), n_obs=0, p=5, label="b")]
        with pytest.raises(ConfigurationError):
            init_chain(data, Hyperparams())

    def test_rejects_tiny_p(self):
        with pytest.raises(ConfigurationError):
            init_chain(null_data(1, 1), Hyperparams())

    def test_rejects_duplicate_labels(self):
        with pytest.raises(ConfigurationError):
            init_chain(null_data(4, 2, labels=["a", "a"]), Hyperparams())


class TestUpdatePrecision:
    def test_stays_spd_over_sweeps(self, rng):
        scn = SimScenario(p=10, n_subjects=4, t_points=30, seed=2, edge_prob=0.2)
        _, data = simulate_scenario(scn)
        hp = Hyperparams(seed=3)
        state = init_chain(data, hp)
        weights = compute_weights(state, hp)
        for _ in range(1000):
            for g in range(2):
                update_precision(g, state, data[g], hp)
                update_indicators(g, state, hp, weights[g])
            for g in range(2):
                np.linalg.cholesky(state.precisions[g].omega)  # raises on failure

    def test_diagonal_prior_recovery_no_data(self):
        # with no data and negligible off-diagonal variance the diagonal is
        # an Exp(alpha/2) draw: mean 2/alpha
        hp = Hyperparams(alpha=1.0, seed=5)
        data = null_data(2, 1)
        state = init_chain(data, hp)
        k, l = edge_pairs(2)
        state.precisions[0].tau_spike_var[k, l] = 1e-12
        state.precisions[0].tau_spike_var[l, k] = 1e-12
        draws = []
        for _ in range(4000):
            update_precision(0, state, data[0], hp)
            draws.append(state.precisions[0].omega[1, 1])
        draws = np.asarray(draws)
        assert draws.mean() == pytest.approx(2.0, abs=4 * 2.0 / np.sqrt(len(draws)))

    def test_diagonal_posterior_with_data(self):
        # n = 4, S_jj = 2, alpha = 1 -> gamma part has mean (n/2+1)/((S_jj+alpha)/2) = 2
        hp = Hyperparams(alpha=1.0, seed=6)
        scatter = np.diag([2.0, 2.0])
        data = [ConditionData(scatter=scatter, n_obs=4, p=2, label="c0")]
        state = init_chain(data, hp)
        k, l = edge_pairs(2)
        state.precisions[0].tau_spike_var[k, l] = 1e-12
        state.precisions[0].tau_spike_var[l, k] = 1e-12
        draws = []
        for _ in range(4000):
            update_precision(0, state, data[0], hp)
            draws.append(state.precisions[0].omega[1, 1])
        draws = np.asarray(draws)
        # Gamma(3, 1.5): mean 2, sd 2/sqrt(3)
        assert draws.mean() == pytest.approx(2.0, abs=4 * (2 / np.sqrt(3)) / np.sqrt(len(draws)))
        assert draws.var(ddof=1) == pytest.approx(3.0 / 1.5**2, rel=0.15)


class TestUpdateIndicators:
    def _fixed_state(self, seed, omega01=0.0, tau=1.0):
        hp = Hyperparams(seed=seed)
        data = null_data(2, 1)
        state = init_chain(data, hp)
        state.precisions[0].omega[0, 1] = omega01
        state.precisions[0].omega[1, 0] = omega01
        state.precisions[0].tau_slab[0, 1] = tau
        state.precisions[0].tau_slab[1, 0] = tau
        return hp, state

    def test_inclusion_probability_hand_value(self):
        # w=0.5, omega=0, tau=1: P(delta=1) = phi(0)/(phi(0) + 50) ~ 0.00792
        hits = 0
        n = 30000
        for seed in range(3):
            hp, state = self._fixed_state(seed)
            w = np.full((2, 2), 0.5)
            for _ in range(n // 3):
                state.precisions[0].delta[:] = 0
                state.precisions[0].tau_slab[0, 1] = 1.0
                state.precisions[0].tau_slab[1, 0] = 1.0
                update_indicators(0, state, hp, w)
                hits += int(state.precisions[0].delta[0, 1])
        p_hat = hits / n
        expect = stats.norm.pdf(0) / (stats.norm.pdf(0) + 50.0)
        assert p_hat == pytest.approx(expect, abs=4 * np.sqrt(expect / n))

    def test_weight_boundary_forces_inclusion(self):
        hp, state = self._fixed_state(0)
        w = np.full((2, 2), 1.0 - 1e-12)
        draws = []
        for _ in range(200):
            update_indicators(0, state, hp, w)
            draws.append(int(state.precisions[0].delta[0, 1]))
        assert np.mean(draws) > 0.99

    def test_slab_scale_conjugate_update(self):
        # forced slab, omega = 0, a_tau=0.1, b_tau=1 -> Gamma(0.6, 1)
        hp, state = self._fixed_state(1)
        w = np.full((2, 2), 1.0 - 1e-12)
        draws = []
        for _ in range(20000):
            update_indicators(0, state, hp, w)
            if state.precisions[0].delta[0, 1] == 1:
                draws.append(state.precisions[0].tau_slab[0, 1])
        draws = np.asarray(draws)
        se = np.sqrt(0.6) / np.sqrt(draws.size)
        assert draws.mean() == pytest.approx(0.6, abs=4 * se)

    def test_spike_variance_inverse_gaussian(self):
        # forced spike at omega=0.05: 1/tau* ~ InvGauss(mean 2000, shape 1e4)
        hp, state = self._fixed_state(2, omega01=0.05)
        w = np.full((2, 2), 1e-12)
        draws = []
        for _ in range(20000):
            update_indicators(0, state, hp, w)
            draws.append(1.0 / state.precisions[0].tau_spike_var[0, 1])
        draws = np.asarray(draws)
        mu = hp.lambda0 / 0.05
        sd = np.sqrt(mu**3 / hp.lambda0**2)
        assert draws.mean() == pytest.approx(mu, abs=4 * sd / np.sqrt(draws.size))

    def test_zero_omega_falls_back_to_prior(self):
        hp, state = self._fixed_state(3, omega01=0.0)
        w = np.full((2, 2), 1e-12)
        draws = []
        for _ in range(20000):
            update_indicators(0, state, hp, w)
            draws.append(state.precisions[0].tau_spike_var[0, 1])
        draws = np.asarray(draws)
        mean = 2.0 / hp.lambda0**2
        assert draws.mean() == pytest.approx(mean, abs=4 * mean / np.sqrt(draws.size))


class TestTruncatedNormal:
    @pytest.mark.parametrize("mu,sigma,positive", [
        (0.0, 1.0, True), (2.0, 0.5, True), (-1.5, 2.0, True),
        (0.5, 1.0, False), (-3.0, 0.7, False),
    ])
    def test_moments_match_scipy(self, mu, sigma, positive, rng):
        n = 60000
        draws = truncated_normal_signed(
            np.full(n, mu), np.full(n, sigma), np.full(n, positive), rng)
        if positive:
            a, b = (0 - mu) / sigma, np.inf
            assert np.all(draws > 0)
        else:
            a, b = -np.inf, (0 - mu) / sigma
            assert np.all(draws <= 0)
        ref = stats.truncnorm(a, b, loc=mu, scale=sigma)
        assert draws.mean() == pytest.approx(ref.mean(), abs=5 * ref.std() / np.sqrt(n))
        assert draws.std() == pytest.approx(ref.std(), rel=0.05)

    def test_extreme_tail_is_finite_and_positive(self, rng):
        draws = truncated_normal_signed(
            np.full(20000, -40.0), np.ones(20000), np.ones(20000, dtype=bool), rng)
        assert np.all(draws > 0)
        assert np.all(np.isfinite(draws))
        # excess over the threshold: mean of TN(40, inf) minus 40, ~ 1/40
        ref = stats.truncnorm(40, np.inf).mean() - 40.0
        assert draws.mean() == pytest.approx(ref, abs=5 * ref / np.sqrt(20000))

    def test_never_returns_boundary(self, rng):
        draws = truncated_normal_signed(
            np.full(200000, -8.0), np.ones(200000), np.ones(200000, dtype=bool), rng)
        assert np.all(draws > 0)


class TestAugmentation:
    def test_sign_consistency(self, rng):
        scn = SimScenario(p=8, n_subjects=3, t_points=30, seed=4, edge_prob=0.2)
        _, data = simulate_scenario(scn)
        hp = Hyperparams(seed=9)
        state = init_chain(data, hp)
        weights = compute_weights(state, hp)
        k, l = edge_pairs(8)
        for _ in range(30):
            for g in range(2):
                update_precision(g, state, data[g], hp)
                update_indicators(g, state, hp, weights[g])
            update_augmentation(state, hp)
            for m in range(3):
                update_dp_component(m, state, hp)
            update_concentration(state, hp)
            weights = compute_weights(state, hp)
            for g in range(2):
                u = state.augmentation.u[g, k, l]
                d = state.precisions[g].delta[k, l]
                assert np.array_equal(u > 0, d == 1)
                assert np.all(state.augmentation.sigma_phi_sq[g, k, l] > 0)

    def test_probit_keeps_unit_scale(self):
        data = null_data(3, 1)
        hp = Hyperparams(link="probit", seed=2)
        state = init_chain(data, hp)
        update_augmentation(state, hp)
        assert np.all(state.augmentation.sigma_phi_sq == 1.0)

    def test_base_variance_value(self):
        hp = Hyperparams(phi=7.3)
        assert hp.link_base_variance == pytest.approx(
            np.pi**2 * 5.3 / (3 * 7.3), abs=1e-12)


class TestDPComponent:
    def test_shared_atom_conjugate_posterior(self):
        # G=2, p=2: one edge, residual r observed once per condition with unit
        # variance -> atom | rest ~ N(2r/3, 1/3) under sigma_eta_sq = 1
        r = 0.8
        draws = []
        for seed in range(4000):
            hp = Hyperparams(link="probit", sigma_eta_sq=1.0, seed=seed)
            state = init_chain(null_data(2, 2), hp)
            state.augmentation.u[:, 0, 1] = r
            state.augmentation.u[:, 1, 0] = r
            state.augmentation.sigma_phi_sq[:] = 1.0
            for m in range(3):
                state.dp_components[m].atoms[:] = 0.0
            update_dp_component(0, state, hp)
            draws.append(state.dp_components[0].atoms[state.dp_components[0].assignments[0]])
        draws = np.asarray(draws)
        assert draws.mean() == pytest.approx(2 * r / 3, abs=4 * np.sqrt(1 / 3 / len(draws)))
        assert draws.var(ddof=1) == pytest.approx(1 / 3, rel=0.15)

    def test_single_cluster_stick_update(self):
        # all edges in one cluster: v_1 ~ Beta(1 + E, M)
        E = 10  # p = 5
        M = 2.0
        draws = []
        for seed in range(3000):
            hp = Hyperparams(seed=seed)
            state = init_chain(null_data(5, 1), hp)
            state.concentration = M
            update_dp_component(1, state, hp)
            comp = state.dp_components[1]
            if len(comp.sticks) >= 1 and np.all(comp.assignments == comp.assignments[0]):
                draws.append(comp.sticks[comp.assignments[0]])
        draws = np.asarray(draws)
        expect = (1 + E) / (1 + E + M)
        assert draws.mean() == pytest.approx(expect, abs=0.01)

    def test_divergence_guard(self):
        hp = Hyperparams(seed=1)
        state = init_chain(null_data(3, 1), hp)
        state.concentration = 1e9  # new sticks carry ~1e-9 mass each: runaway
        state.dp_components[0].sticks = np.array([0.01])  # forces deep extension
        with pytest.raises(DivergenceError):
            update_dp_component(0, state, hp)

    def test_assignments_stay_valid(self):
        hp = Hyperparams(seed=12)
        data = null_data(6, 2)
        state = init_chain(data, hp)
        weights = compute_weights(state, hp)
        for _ in range(50):
            for g in range(2):
                update_precision(g, state, data[g], hp)
                update_indicators(g, state, hp, weights[g])
            update_augmentation(state, hp)
            for m in range(3):
                update_dp_component(m, state, hp)
                state.dp_components[m].validate()
            update_concentration(state, hp)
            weights = compute_weights(state, hp)


class TestConcentration:
    def test_conjugate_parameters(self):
        # H=3 sticks with sum log(1-v) = -1.2 and a_m=b_m=1 -> Gamma(4, 2.2)
        v = 1.0 - np.exp(-0.4)
        draws = []
        for seed in range(4000):
            hp = Hyperparams(seed=seed)
            state = init_chain(null_data(2, 2), hp)
            for m in range(3):
                state.dp_components[m].sticks = np.array([v])
            draws.append(update_concentration(state, hp))
        draws = np.asarray(draws)
        assert draws.mean() == pytest.approx(4 / 2.2, abs=4 * np.sqrt(4 / 2.2**2 / len(draws)))

    def test_no_sticks_recovers_prior(self):
        hp = Hyperparams(seed=3)
        state = init_chain(null_data(2, 1), hp)
        for m in range(2):
            state.dp_components[m].sticks = np.array([])
        draws = [update_concentration(state, hp) for _ in range(4000)]
        assert np.mean(draws) == pytest.approx(1.0, abs=4 / np.sqrt(4000))


class TestComputeWeights:
    def test_zero_atoms_give_half(self):
        hp = Hyperparams(seed=0)
        state = init_chain(null_data(4, 2), hp)
        for comp in state.dp_components:
            comp.atoms = np.zeros_like(comp.atoms)
        w = compute_weights(state, hp)
        k, l = edge_pairs(4)
        assert np.allclose(w[:, k, l], 0.5)

    def test_shift_cancellation(self):
        hp = Hyperparams(seed=0)
        state = init_chain(null_data(4, 1), hp)
        state.dp_components[0].atoms = np.array([2.0])
        state.dp_components[1].atoms = np.array([-2.0])
        w = compute_weights(state, hp)
        assert np.allclose(w[0, 0, 1], 0.5)

    def test_log_odds_difference_between_conditions(self):
        hp = Hyperparams(seed=0)
        state = init_chain(null_data(4, 2), hp)
        state.dp_components[0].atoms = np.array([0.3])
        state.dp_components[1].atoms = np.array([1.0])
        state.dp_components[2].atoms = np.array([-0.5])
        w = compute_weights(state, hp)
        k, l = edge_pairs(4)
        logit = lambda x: np.log(x / (1 - x))
        assert np.allclose(logit(w[0, k, l]) - logit(w[1, k, l]), 1.5)


class TestRunChain:
    def test_archive_bookkeeping(self):
        data = null_data(3, 1)
        hp = Hyperparams(n_burnin=0, n_iter=10, thin=1, seed=2)
        arc = run_chain(data, hp)
        assert arc.n_draws == 10
        assert np.array_equal(arc.iterations, np.arange(1, 11))

    def test_thinning(self):
        data = null_data(3, 1)
        hp = Hyperparams(n_burnin=4, n_iter=9, thin=3, seed=2)
        arc = run_chain(data, hp)
        assert arc.n_draws == 3
        assert np.array_equal(arc.iterations, [7, 10, 13])

    def test_bitwise_determinism(self):
        scn = SimScenario(p=6, n_subjects=2, t_points=25, seed=8, edge_prob=0.2)
        _, data = simulate_scenario(scn)
        hp = Hyperparams(n_burnin=20, n_iter=40, seed=14)
        a = run_chain(data, hp)
        b = run_chain(data, hp)
        assert np.array_equal(a.omega_offdiag, b.omega_offdiag)
        assert np.array_equal(a.delta, b.delta)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.concentration, b.concentration)

    def test_condition_exchangeability(self):
        scn = SimScenario(p=5, n_subjects=2, t_points=30, seed=21, edge_prob=0.25)
        _, data = simulate_scenario(scn)
        hp = Hyperparams(n_burnin=15, n_iter=30, seed=5)
        fwd = run_chain(data, hp)
        rev = run_chain(data[::-1], hp)
        assert fwd.labels == rev.labels[::-1]
        for g_fwd, g_rev in ((0, 1), (1, 0)):
            assert np.array_equal(fwd.omega_offdiag[g_fwd], rev.omega_offdiag[g_rev])
            assert np.array_equal(fwd.delta[g_fwd], rev.delta[g_rev])
            assert np.array_equal(fwd.weights[g_fwd], rev.weights[g_rev])
        assert np.array_equal(fwd.concentration, rev.concentration)

    def test_posterior_mean_recovers_strong_edge(self):
        # strong two-node data: posterior mean of omega12 near the truth
        omega_true = np.array([[1.0, 0.4], [0.4, 1.0]])
        from jointnets.simgen import sample_data
        from jointnets.core import substream
        data = sample_data([omega_true], 1, 5000, substream(3, "t"), labels=["c"])
        hp = Hyperparams(n_burnin=200, n_iter=800, seed=4)
        arc = run_chain(data, hp)
        assert arc.omega_offdiag[0, 0].mean() == pytest.approx(0.4, abs=0.05)
