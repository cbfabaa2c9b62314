import numpy as np
import pytest

from arcil.adversary import Discriminator, concat_sa


def make_disc(rng_seed=0, state_dim=1, action_dim=1, hidden=(16, 16), **kw):
    return Discriminator(state_dim, action_dim, rng=np.random.default_rng(rng_seed),
                         hidden=hidden, **kw)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class TestUpdate:
    def test_zero_net_first_objective_is_log_half(self):
        disc = make_disc()
        disc.net.params[:] = 0.0
        e = (np.zeros((8, 1)), np.zeros((8, 1)))
        a = (np.ones((8, 1)), np.ones((8, 1)))
        obj = disc.update(e, a)
        assert obj == pytest.approx(16 * np.log(0.5), abs=1e-12)

    def test_empty_batch_rejected(self):
        disc = make_disc()
        with pytest.raises(ValueError):
            disc.update((np.zeros((0, 1)), np.zeros((0, 1))),
                        (np.zeros((1, 1)), np.zeros((1, 1))))

    def test_same_distribution_settles_at_half(self):
        rng = np.random.default_rng(1)
        disc = make_disc(1, grad_penalty=0.0, learning_rate=1e-3)
        pool = rng.normal(size=(256, 2))
        for _ in range(400):
            idx_e = rng.integers(0, 256, size=64)
            idx_a = rng.integers(0, 256, size=64)
            disc.update((pool[idx_e, :1], pool[idx_e, 1:]),
                        (pool[idx_a, :1], pool[idx_a, 1:]))
        d = sigmoid(disc.logits(pool))
        assert abs(float(d.mean()) - 0.5) < 0.05

    def test_disjoint_points_saturate_at_clip(self):
        disc = make_disc(2, grad_penalty=0.0, learning_rate=3e-3)
        e = (np.array([[1.0]]), np.array([[1.0]]))
        a = (np.array([[-1.0]]), np.array([[-1.0]]))
        for _ in range(3000):
            disc.update(e, a)
        z_e = disc.logits(concat_sa(*e))[0]
        z_a = disc.logits(concat_sa(*a))[0]
        assert sigmoid(z_e) >= sigmoid(9.0)
        assert sigmoid(z_a) <= sigmoid(-9.0)

    def test_objective_nondecreasing_on_separable_batches(self):
        disc = make_disc(3, grad_penalty=0.0, learning_rate=1e-3)
        e = (np.full((4, 1), 2.0), np.full((4, 1), 2.0))
        a = (np.full((4, 1), -2.0), np.full((4, 1), -2.0))
        values = [disc.update(e, a) for _ in range(150)]
        diffs = np.diff(values)
        assert np.all(diffs >= -1e-12)

    def test_penalty_gradient_matches_finite_differences(self):
        disc = make_disc(4, hidden=(8, 8), grad_penalty=4.0)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 2))

        def penalty_value():
            g = disc.net.input_grad_batch(x, np.ones((6, 1)))
            n = np.linalg.norm(g, axis=1)
            return disc.grad_penalty * float(np.mean((n - 1.0) ** 2))

        g = disc.net.input_grad_batch(x, np.ones((6, 1)))
        norms = np.linalg.norm(g, axis=1)
        coef = 2.0 * (norms - 1.0) / np.maximum(norms, 1e-12)
        tape = disc.net.grad_of_input_grad(x, coef[:, None] * g)
        analytic = (disc.grad_penalty / 6) * tape.flat

        h = 1e-6
        idx = rng.choice(disc.net.n_params, size=40, replace=False)
        for i in idx:
            orig = disc.net.params[i]
            disc.net.params[i] = orig + h
            up = penalty_value()
            disc.net.params[i] = orig - h
            dn = penalty_value()
            disc.net.params[i] = orig
            fd = (up - dn) / (2 * h)
            assert abs(analytic[i] - fd) < 1e-4 * max(1.0, abs(fd))


class TestReward:
    def test_values_at_half(self):
        disc = make_disc()
        disc.net.params[:] = 0.0  # logit 0 -> D = 0.5
        s, a = np.array([0.3]), np.array([-0.2])
        assert disc.reward(s, a, "gail") == pytest.approx(np.log(0.5), abs=1e-12)
        assert disc.reward(s, a, "fmax_rkl") == 0.0

    def test_fmax_reward_is_the_logit(self):
        disc = make_disc(6)
        rng = np.random.default_rng(7)
        S, A = rng.normal(size=(50, 1)), rng.normal(size=(50, 1))
        z = disc.logits(concat_sa(S, A))
        r = disc.reward_batch(S, A, "fmax_rkl")
        assert np.max(np.abs(r - z)) == 0.0

    def test_logit_three_exact(self):
        disc = make_disc()
        disc.net.params[:] = 0.0
        disc.net.biases[-1][0] = 3.0
        assert disc.reward(np.zeros(1), np.zeros(1), "fmax_rkl") == 3.0

    def test_clip_floor_gail_value(self):
        disc = make_disc()
        disc.net.params[:] = 0.0
        disc.net.biases[-1][0] = -25.0   # clipped to -10
        got = disc.reward(np.zeros(1), np.zeros(1), "gail")
        assert got == pytest.approx(np.log(sigmoid(-10.0)), abs=1e-9)
        assert got == pytest.approx(-10.000045398899218, abs=1e-6)

    def test_gail_negative_fmax_bounded(self):
        disc = make_disc(8)
        rng = np.random.default_rng(2)
        S, A = rng.normal(size=(200, 1)) * 3, rng.normal(size=(200, 1)) * 3
        gail = disc.reward_batch(S, A, "gail")
        fmax = disc.reward_batch(S, A, "fmax_rkl")
        assert np.all(gail < 0.0)
        assert np.all((fmax >= -10.0) & (fmax <= 10.0))

    def test_unknown_kind(self):
        disc = make_disc()
        with pytest.raises(ValueError):
            disc.reward(np.zeros(1), np.zeros(1), "wgan")


class TestRewardGrad:
    def test_constant_disc_zero_grad(self):
        disc = make_disc()
        disc.net.params[:] = 0.0
        g = disc.reward_grad_action(np.array([0.5]), np.array([0.1]), "fmax_rkl")
        assert np.array_equal(g, np.zeros(1))

    def test_fmax_grad_is_logit_input_grad(self):
        disc = make_disc(9, state_dim=2, action_dim=2)
        rng = np.random.default_rng(3)
        s, a = rng.normal(size=2), rng.normal(size=2) * 0.1
        g = disc.reward_grad_action(s, a, "fmax_rkl")
        full = disc.net.backward(np.concatenate([s, a]), np.array([1.0])).input_gradient
        assert np.array_equal(g, full[2:])

    @pytest.mark.parametrize("kind", ["gail", "fmax_rkl"])
    def test_matches_finite_differences(self, kind):
        disc = make_disc(10, state_dim=2, action_dim=2)
        rng = np.random.default_rng(4)
        h = 1e-5
        for _ in range(10):
            s, a = rng.normal(size=2), rng.normal(size=2) * 0.1
            g = disc.reward_grad_action(s, a, kind)
            fd = np.zeros(2)
            for j in range(2):
                ap, am = a.copy(), a.copy()
                ap[j] += h
                am[j] -= h
                fd[j] = (disc.reward(s, ap, kind) - disc.reward(s, am, kind)) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
            assert np.max(np.abs(g - fd) / denom) < 1e-4

    def test_zero_grad_when_clip_active(self):
        disc = make_disc()
        disc.net.params[:] = 0.0
        disc.net.biases[-1][0] = 20.0   # deep inside the clip
        g = disc.reward_grad_action(np.array([0.2]), np.array([0.4]), "fmax_rkl")
        assert np.array_equal(g, np.zeros(1))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        disc = make_disc(11, state_dim=2, action_dim=2, kind="gail", grad_penalty=2.5)
        path = tmp_path / "disc.bin"
        disc.save(path)
        again = Discriminator.load(path, state_dim=2)
        assert again.kind == "gail"
        assert again.grad_penalty == 2.5
        assert again.clip == disc.clip
        assert np.array_equal(again.net.params, disc.net.params)
        sidecar = (tmp_path / "disc.bin.json").read_text()
        assert sidecar.count("\n") == 1  # one-line sidecar
