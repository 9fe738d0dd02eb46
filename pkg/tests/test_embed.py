"""Per-subject EM embedding: PG weights, M-step updates, full fits."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from lsgpr import network
from lsgpr.embed import (
    EmConfig,
    Embedding,
    EmbeddingError,
    edge_probability,
    em_update_intercept,
    em_update_latent,
    embed_subject,
    fitted_edge_probabilities,
    init_latent_scales,
    log_posterior,
    pg_expectation,
)


def random_adjacency(rng, p, density=0.4):
    vec = (rng.random(p * (p - 1) // 2) < density).astype(float)
    return network.edge_vector_to_adjacency(vec, p)


class TestEmConfig:
    def test_defaults(self):
        cfg = EmConfig()
        assert cfg.d == 10
        assert cfg.sigma_u_sq == 0.2
        assert cfg.b == 0.5
        assert cfg.prior_term_mode == "verbatim"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"d": 1},
            {"sigma_u_sq": 0.0},
            {"sigma_u_sq": -1.0},
            {"rel_tol": 0.0},
            {"max_iters": 0},
            {"prior_term_mode": "triple"},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            EmConfig(**kwargs)


class TestEmbeddingType:
    def test_pinned_column_enforced(self):
        U = np.zeros((3, 2))
        with pytest.raises(ValueError, match="pinned"):
            Embedding(a=0.0, U=U, b=0.5)

    def test_nonfinite_rejected(self):
        U = np.full((3, 2), 0.5)
        U[1, 1] = np.inf
        with pytest.raises(ValueError, match="finite"):
            Embedding(a=0.0, U=U, b=0.5)

    def test_dict_roundtrip(self):
        rng = np.random.default_rng(0)
        U = rng.standard_normal((4, 3))
        U[:, 0] = 0.5
        emb = Embedding(a=-1.25, U=U, b=0.5)
        back = Embedding.from_dict(emb.to_dict())
        assert back.a == emb.a and back.b == emb.b
        npt.assert_array_equal(back.U, emb.U)


class TestEdgeProbability:
    def test_zero_logit(self):
        assert edge_probability(0.0, np.zeros(3), np.ones(3)) == 0.5

    def test_sigmoid_two(self):
        got = edge_probability(2.0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        npt.assert_allclose(got, 0.8807970779778823, rtol=1e-15)

    @pytest.mark.parametrize("x", [0.3, 1.0, 7.5, 40.0])
    def test_cancellation(self, x):
        u = np.array([x, 0.0])
        v = np.array([1.0, 0.0])
        assert edge_probability(-x, u, v) == 0.5

    def test_extreme_logits_stay_in_unit_interval(self):
        # +-700 is near the float64 exp underflow edge but still representable
        assert 0.0 < edge_probability(-700.0, np.zeros(1), np.zeros(1))
        assert edge_probability(700.0, np.zeros(1), np.zeros(1)) <= 1.0


class TestPgExpectation:
    def test_zero_limit_exact(self):
        assert pg_expectation(0.0) == 0.25

    def test_delta_two(self):
        npt.assert_allclose(pg_expectation(2.0), np.tanh(1.0) / 4.0, rtol=1e-15)
        npt.assert_allclose(pg_expectation(2.0), 0.19039853898894122, rtol=1e-14)

    @given(st.floats(min_value=1e-12, max_value=20.0))
    @settings(max_examples=60, deadline=None)
    def test_even(self, delta):
        npt.assert_allclose(pg_expectation(-delta), pg_expectation(delta), rtol=1e-14)

    def test_strictly_decreasing_and_bounded(self):
        grid = np.linspace(0.0, 20.0, 1000)
        vals = pg_expectation(grid)
        assert np.all(np.diff(vals) < 0.0)
        assert np.all(vals > 0.0) and np.all(vals <= 0.25)

    def test_matches_tanh_form_on_grid(self):
        # spans the series branch and the direct branch
        grid = np.concatenate([np.linspace(-20, 20, 960), np.linspace(-9e-5, 9e-5, 40)])
        grid = grid[grid != 0.0]
        expected = np.tanh(grid / 2.0) / (2.0 * grid)
        npt.assert_allclose(pg_expectation(grid), expected, atol=1e-12, rtol=0.0)

    def test_vector_shape_preserved(self):
        out = pg_expectation(np.zeros((3, 2)))
        assert out.shape == (3, 2)


class TestLogPosterior:
    def test_single_edge_at_zero(self):
        cfg = EmConfig(d=3, sigma_u_sq=0.2)
        U = np.zeros((2, 3))
        U[:, 0] = 0.0  # pin at zero so the inner product vanishes
        emb = Embedding(a=0.0, U=U, b=0.0)
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        # 2(d-1) free coordinates at zero contribute only normalization
        expected = np.log(0.5) - (cfg.d - 1) * np.log(2 * np.pi * cfg.sigma_u_sq)
        npt.assert_allclose(log_posterior(adj, emb, cfg), expected, rtol=1e-12)

    def test_increases_toward_empirical_logit(self):
        cfg = EmConfig(d=2, sigma_u_sq=0.2)
        rng = np.random.default_rng(5)
        adj = random_adjacency(rng, 6, density=0.7)
        density = network.edge_vector(adj).mean()
        target = float(np.log(density / (1 - density))) - 0.25
        U = np.zeros((6, 2))
        U[:, 0] = 0.5
        vals = []
        for a in (target - 2.0, target - 1.0, target):
            vals.append(log_posterior(adj, Embedding(a=a, U=U, b=0.5), cfg))
        assert vals[0] < vals[1] < vals[2]

    def test_matches_edge_loop(self):
        cfg = EmConfig(d=4, sigma_u_sq=0.3)
        rng = np.random.default_rng(9)
        adj = random_adjacency(rng, 5)
        U = rng.standard_normal((5, 4))
        U[:, 0] = 0.5
        emb = Embedding(a=0.4, U=U, b=0.5)
        expected = 0.0
        for k in range(5):
            for l in range(k + 1, 5):
                pi = edge_probability(emb.a, U[k], U[l])
                expected += np.log(pi) if adj[k, l] else np.log1p(-pi)
        free = U[:, 1:]
        expected -= 0.5 * np.sum(free**2) / cfg.sigma_u_sq
        expected += -0.5 * free.size * np.log(2 * np.pi * cfg.sigma_u_sq)
        npt.assert_allclose(log_posterior(adj, emb, cfg), expected, rtol=1e-12)


class TestEmUpdateIntercept:
    def test_single_edge_quarter_weight(self):
        # numerator 1 - 0.5 = 0.5, denominator 0.25
        U = np.zeros((2, 2))
        got = em_update_intercept(np.array([1.0]), np.array([0.25]), U)
        assert got == 2.0

    def test_balanced_edges_give_zero(self):
        # orthogonal rows, half the pairs present, constant weights
        U = np.zeros((4, 2))
        e = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        got = em_update_intercept(e, np.full(6, 0.2), U)
        npt.assert_allclose(got, 0.0, atol=1e-15)

    def test_matches_loop(self):
        rng = np.random.default_rng(2)
        p = 5
        U = rng.standard_normal((p, 3))
        e = (rng.random(10) < 0.5).astype(float)
        omega = rng.uniform(0.05, 0.25, size=10)
        num = den = 0.0
        idx = 0
        for k in range(p):
            for l in range(k + 1, p):
                num += e[idx] - 0.5 - omega[idx] * float(U[k] @ U[l])
                den += omega[idx]
                idx += 1
        npt.assert_allclose(em_update_intercept(e, omega, U), num / den, rtol=1e-12)

    def test_maximizes_augmented_objective(self):
        # gradient of the omega-weighted quadratic objective vanishes at a
        rng = np.random.default_rng(8)
        p = 6
        U = rng.standard_normal((p, 3))
        m = p * (p - 1) // 2
        e = (rng.random(m) < 0.5).astype(float)
        omega = rng.uniform(0.05, 0.25, size=m)
        a = em_update_intercept(e, omega, U)
        ip = (U @ U.T)[np.triu_indices(p, k=1)]
        grad = np.sum(e - 0.5 - omega * (a + ip))
        assert abs(grad) < 1e-10

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            em_update_intercept(np.array([1.0]), np.array([0.0]), np.zeros((2, 2)))


class TestEmUpdateLatent:
    def make_state(self, seed, p=4, d=3, mode="verbatim"):
        rng = np.random.default_rng(seed)
        cfg = EmConfig(d=d, sigma_u_sq=0.2, prior_term_mode=mode)
        U = rng.standard_normal((p, d))
        U[:, 0] = cfg.b
        emb = Embedding(a=float(rng.normal()), U=U, b=cfg.b)
        m = p * (p - 1) // 2
        e = (rng.random(m) < 0.5).astype(float)
        omega = rng.uniform(0.05, 0.25, size=m)
        return cfg, emb, e, omega

    def test_zero_neighbor_returns_zero(self):
        cfg = EmConfig(d=2, sigma_u_sq=0.2)
        U = np.array([[0.5, 0.0], [0.5, 0.3]])
        emb = Embedding(a=0.1, U=U, b=0.5)
        got = em_update_latent(1, np.array([1.0]), np.array([0.2]), 0.1, emb, cfg)
        npt.assert_allclose(got, [0.0], atol=1e-15)

    @pytest.mark.parametrize("mode", ["verbatim", "single-copy"])
    def test_matches_dense_transcription(self, mode):
        cfg, emb, e, omega = self.make_state(3, mode=mode)
        p, d = emb.U.shape
        E = network.edge_vector_to_adjacency(e, p)
        W = network.edge_vector_to_adjacency(omega, p)
        k = 2
        rhs = np.zeros(d - 1)
        mat = np.zeros((d - 1, d - 1))
        for j in range(p):
            if j == k:
                continue
            v = emb.U[j, 1:]
            rhs += (E[j, k] - 0.5 - (emb.a + cfg.b**2) * W[j, k]) * v
            mat += W[j, k] * np.outer(v, v)
            if mode == "verbatim":
                mat += np.eye(d - 1) / cfg.sigma_u_sq
        if mode == "single-copy":
            mat += np.eye(d - 1) / cfg.sigma_u_sq
        expected = np.linalg.solve(mat, rhs)
        got = em_update_latent(k, e, omega, emb.a, emb, cfg)
        npt.assert_allclose(got, expected, rtol=1e-10)

    def test_vanishing_prior_is_weighted_least_squares(self):
        cfg, emb, e, omega = self.make_state(4)
        loose = EmConfig(d=cfg.d, sigma_u_sq=1e12, prior_term_mode="single-copy")
        p = emb.p
        E = network.edge_vector_to_adjacency(e, p)
        W = network.edge_vector_to_adjacency(omega, p)
        k = 0
        idx = np.arange(p) != k
        Vj = emb.U[idx, 1:]
        w = W[idx, k]
        target = (E[idx, k] - 0.5 - (emb.a + cfg.b**2) * w) / w
        wls = np.linalg.lstsq(Vj * np.sqrt(w[:, None]), target * np.sqrt(w), rcond=None)[0]
        got = em_update_latent(k, e, omega, emb.a, emb, loose)
        npt.assert_allclose(got, wls, rtol=1e-6, atol=1e-9)

    def test_single_copy_update_is_stationary(self):
        # gradient of the augmented objective in node k's free block is zero
        cfg, emb, e, omega = self.make_state(6, mode="single-copy")
        p = emb.p
        E = network.edge_vector_to_adjacency(e, p)
        W = network.edge_vector_to_adjacency(omega, p)
        k = 1
        v_new = em_update_latent(k, e, omega, emb.a, emb, cfg)
        grad = -v_new / cfg.sigma_u_sq
        for j in range(p):
            if j == k:
                continue
            vj = emb.U[j, 1:]
            pred = emb.a + cfg.b**2 + float(v_new @ vj)
            grad = grad + (E[j, k] - 0.5 - W[j, k] * pred) * vj
        assert np.linalg.norm(grad) < 1e-8


class TestInitLatentScales:
    def test_first_column_pinned(self):
        rng = np.random.default_rng(0)
        adj = random_adjacency(rng, 8)
        X = init_latent_scales(adj, EmConfig(d=4))
        npt.assert_array_equal(X[:, 0], 0.5)

    def test_dead_columns_filled(self):
        # a path graph has rank-deficient MDS geometry for large d
        adj = network.edge_vector_to_adjacency([1.0, 0.0, 1.0], 3)
        X = init_latent_scales(adj, EmConfig(d=3), rng=np.random.default_rng(1))
        norms = np.linalg.norm(X[:, 1:], axis=0)
        assert np.all(norms > 0.0)

    def test_deterministic_given_rng(self):
        rng = np.random.default_rng(7)
        adj = random_adjacency(rng, 6)
        X1 = init_latent_scales(adj, EmConfig(d=5), rng=np.random.default_rng(3))
        X2 = init_latent_scales(adj, EmConfig(d=5), rng=np.random.default_rng(3))
        npt.assert_array_equal(X1, X2)


class TestEmbedSubject:
    def test_pinned_column_exact(self):
        rng = np.random.default_rng(1)
        adj = random_adjacency(rng, 10)
        emb, _ = embed_subject(adj, EmConfig(d=4), rng=rng)
        npt.assert_array_equal(emb.U[:, 0], 0.5)

    def test_trace_monotone_single_copy(self):
        rng = np.random.default_rng(2)
        for seed in range(3):
            adj = random_adjacency(np.random.default_rng(seed), 12, density=0.35)
            _, trace = embed_subject(
                adj, EmConfig(d=4, prior_term_mode="single-copy"), rng=rng)
            assert np.all(np.diff(trace) >= -1e-8)

    def test_converged_state_is_stationary(self):
        # p=4, d=2, single-copy: finite differences of the MAP objective
        cfg = EmConfig(d=2, prior_term_mode="single-copy", rel_tol=1e-12,
                       max_iters=3000)
        adj = random_adjacency(np.random.default_rng(10), 4, density=0.6)
        emb, _ = embed_subject(adj, cfg, rng=np.random.default_rng(0))

        def objective(vec):
            U = emb.U.copy()
            U[:, 1] = vec[1:]
            state = Embedding(a=vec[0], U=U, b=emb.b)
            return log_posterior(adj, state, cfg)

        x0 = np.concatenate([[emb.a], emb.U[:, 1]])
        grad = np.empty_like(x0)
        h = 1e-6
        for i in range(x0.size):
            up, dn = x0.copy(), x0.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (objective(up) - objective(dn)) / (2 * h)
        assert np.linalg.norm(grad) < 1e-4

    def test_empty_graph_probabilities_near_zero(self):
        emb, _ = embed_subject(np.zeros((10, 10)), EmConfig(d=3),
                               rng=np.random.default_rng(0))
        assert np.all(fitted_edge_probabilities(emb) < 0.05)

    def test_deterministic_rerun(self):
        adj = random_adjacency(np.random.default_rng(3), 8)
        cfg = EmConfig(d=4)
        e1, t1 = embed_subject(adj, cfg, rng=np.random.default_rng(11))
        e2, t2 = embed_subject(adj, cfg, rng=np.random.default_rng(11))
        assert e1.a == e2.a
        npt.assert_array_equal(e1.U, e2.U)
        npt.assert_array_equal(t1, t2)

    def test_explicit_init_pins_first_column(self):
        adj = random_adjacency(np.random.default_rng(4), 6)
        init = np.ones((6, 3))
        emb, _ = embed_subject(adj, EmConfig(d=3, max_iters=1), init=init)
        npt.assert_array_equal(emb.U[:, 0], 0.5)

    def test_init_shape_checked(self):
        adj = random_adjacency(np.random.default_rng(4), 6)
        with pytest.raises(ValueError, match="shape"):
            embed_subject(adj, EmConfig(d=3), init=np.ones((6, 4)))

    def test_d_exceeding_p_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            embed_subject(np.zeros((3, 3)), EmConfig(d=4))

    def test_backends_agree_end_to_end(self):
        from lsgpr import _kernels

        if "cython" not in _kernels.available_backends():
            pytest.skip("compiled core not built")
        adj = random_adjacency(np.random.default_rng(6), 10)
        cfg = EmConfig(d=4)
        e_np, t_np = embed_subject(adj, cfg, rng=np.random.default_rng(0), backend="numpy")
        e_cy, t_cy = embed_subject(adj, cfg, rng=np.random.default_rng(0), backend="cython")
        npt.assert_allclose(e_cy.a, e_np.a, rtol=1e-8)
        npt.assert_allclose(e_cy.U, e_np.U, rtol=1e-6, atol=1e-8)
        assert t_np.shape == t_cy.shape


class TestFittedEdgeProbabilities:
    def test_constant_when_free_part_zero(self):
        U = np.zeros((5, 2))
        U[:, 0] = 0.5
        emb = Embedding(a=0.0, U=U, b=0.5)
        expected = 1.0 / (1.0 + np.exp(-0.25))
        npt.assert_allclose(fitted_edge_probabilities(emb), expected, rtol=1e-15)

    def test_matches_pairwise_loop(self):
        rng = np.random.default_rng(12)
        U = rng.standard_normal((6, 3))
        U[:, 0] = 0.5
        emb = Embedding(a=-0.3, U=U, b=0.5)
        got = fitted_edge_probabilities(emb)
        idx = 0
        for k in range(6):
            for l in range(k + 1, 6):
                npt.assert_allclose(got[idx], edge_probability(emb.a, U[k], U[l]),
                                    rtol=1e-14)
                idx += 1

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(13)
        U = rng.standard_normal((5, 3))
        U[:, 0] = 0.5
        emb = Embedding(a=0.2, U=U, b=0.5)
        perm = np.array([3, 0, 4, 1, 2])
        emb_p = Embedding(a=0.2, U=U[perm], b=0.5)
        probs = network.edge_vector_to_adjacency(fitted_edge_probabilities(emb), 5)
        probs_p = network.edge_vector_to_adjacency(fitted_edge_probabilities(emb_p), 5)
        npt.assert_allclose(probs_p, probs[np.ix_(perm, perm)], rtol=1e-14)
