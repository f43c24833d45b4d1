import numpy as np
import pytest
import torch

from sstrl.ddpg import ActorCritic, ReplayBuffer, act, critic_loss, critic_targets, policy_loss
from sstrl.nn import MLP, Adam, named_params, soft_update


class TestSoftUpdate:
    def _pair(self, live_val, tgt_val):
        live, tgt = MLP(1, [], 1), MLP(1, [], 1)
        with torch.no_grad():
            for p in live.parameters():
                p.fill_(live_val)
            for p in tgt.parameters():
                p.fill_(tgt_val)
        return live, tgt

    def test_rho_one(self):
        live, tgt = self._pair(0.7, -3.0)
        soft_update(live, tgt, 1.0)
        assert all(torch.equal(a, b) for a, b in zip(live.parameters(), tgt.parameters()))

    def test_fixed_point(self):
        live, tgt = self._pair(0.25, 0.25)
        soft_update(live, tgt, 0.005)
        assert all(p.item() == 0.25 for p in tgt.parameters())

    def test_half(self):
        live, tgt = self._pair(1.0, 0.0)
        soft_update(live, tgt, 0.5)
        assert all(p.item() == 0.5 for p in tgt.parameters())

    @pytest.mark.parametrize("rho", [0.0, -0.1, 1.5])
    def test_bad_rho(self, rho):
        live, tgt = self._pair(1.0, 0.0)
        with pytest.raises(ValueError):
            soft_update(live, tgt, rho)


class TestReplay:
    def test_capacity_and_membership(self):
        buf = ReplayBuffer(5, 2, 1)
        for k in range(12):
            buf.add([k, k], k, [0.1], 0.0, [k + 1, k + 1], False)
            assert len(buf) <= 5
        b = buf.sample(100, np.random.default_rng(0))
        assert set(b.obs[:, 0].tolist()) <= {7, 8, 9, 10, 11}
        assert np.all(b.demo == b.obs[:, 0])
        assert len(b) == 100

    def test_empty(self):
        with pytest.raises(ValueError):
            ReplayBuffer(2, 1, 1).sample(1, np.random.default_rng(0))


def test_shapes_and_bounds():
    torch.manual_seed(0)
    ac = ActorCritic(4, 3, 2)
    x, z = torch.randn(7, 4), torch.randn(7, 3)
    assert ac.pi(x, z).shape == (7, 2) and ac.q(x, z, ac.pi(x, z)).shape == (7,)
    assert len(ac.actor.layers) == 2 and ac.actor.layers[0].n_out == 64
    assert ac.actor.layers[-1].activation == "tanh"
    rng = np.random.default_rng(0)
    a0 = act(ac, x[:1], z[:1], 0.0, rng)
    assert np.array_equal(a0, act(ac, x[:1], z[:1], 0.0, rng))
    noisy = [act(ac, x[:1], z[:1], 5.0, rng) for _ in range(20)]
    assert all(np.all(np.abs(a) <= 1.0) for a in noisy)
    assert not np.array_equal(noisy[0], noisy[1])


def test_targets():
    torch.manual_seed(1)
    ac = ActorCritic(3, 0, 1)
    nx = torch.randn(4, 3)
    rew = torch.tensor([0.0, 1.0, 0.5, 1.0])
    term = torch.tensor([1.0, 1.0, 0.0, 0.0])
    y = critic_targets(ac, nx, None, rew, term, 0.99)
    assert torch.equal(y[:2], rew[:2])
    y0 = critic_targets(ac, nx, None, rew, torch.zeros(4), 0.0)
    assert torch.equal(y0, rew)
    assert torch.equal(y, critic_targets(ac, nx, None, rew, term, 0.99))
    with pytest.raises(ValueError):
        critic_loss(ac, torch.zeros(0, 3), None, torch.zeros(0, 1), torch.zeros(0))
    with pytest.raises(ValueError):
        policy_loss(ac, torch.zeros(0, 3), None)


def chain_oracle(gamma, grid):
    """Value iteration over a discretized action grid for the two-state chain.

    s0 --any a--> s1 (r = 0); s1 --a--> terminal (r = 1 - a^2).
    """
    q1 = 1.0 - grid ** 2
    v1 = q1.max()
    q0 = np.full_like(grid, gamma * v1)
    return q0, q1


def test_two_state_chain_matches_value_iteration():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    gamma = 0.99
    ac = ActorCritic(2, 0, 1, hidden=64, rho=0.005)
    opt = Adam(named_params(actor=ac.actor, critic=ac.critic), lr=1e-3)
    s = np.eye(2, dtype=np.float32)
    for _ in range(5000):
        which = rng.integers(0, 2, size=64)
        a = rng.uniform(-1, 1, size=(64, 1)).astype(np.float32)
        obs = torch.as_tensor(s[which])
        nxt = torch.as_tensor(s[np.ones(64, dtype=int)])
        rew = torch.as_tensor(np.where(which == 1, 1.0 - a[:, 0] ** 2, 0.0).astype(np.float32))
        term = torch.as_tensor((which == 1).astype(np.float32))
        y = critic_targets(ac, nxt, None, rew, term, gamma)
        loss = critic_loss(ac, obs, None, torch.as_tensor(a), y) + policy_loss(ac, obs, None)
        opt.step(loss)
        ac.update_targets()
    grid = np.linspace(-1, 1, 21)
    q0, q1 = chain_oracle(gamma, grid)
    with torch.no_grad():
        a = torch.as_tensor(grid[:, None], dtype=torch.float32)
        l0 = ac.q(torch.as_tensor(s[[0] * 21]), None, a).numpy()
        l1 = ac.q(torch.as_tensor(s[[1] * 21]), None, a).numpy()
    assert np.max(np.abs(l0 - q0)) <= 0.05
    assert np.max(np.abs(l1 - q1)) <= 0.05
    assert abs(ac.pi(torch.as_tensor(s[1:])).item() - 0.0) <= 0.05


def test_quadratic_critic_optimum():
    torch.manual_seed(2)
    a_star = 0.4
    ac = ActorCritic(2, 0, 1)
    x = torch.tensor([[1.0, 0.0]])
    critic_opt = Adam(named_params(critic=ac.critic), lr=3e-3)
    for _ in range(3000):
        a = torch.rand(128, 1) * 2 - 1
        target = -(a[:, 0] - a_star) ** 2
        critic_opt.step(((ac.q(x.expand(128, -1), None, a) - target) ** 2).mean())
    actor_opt = Adam(named_params(actor=ac.actor), lr=3e-3)
    for _ in range(1500):
        actor_opt.step(policy_loss(ac, x, None))
    assert abs(ac.pi(x).item() - a_star) <= 0.05


def test_policy_step_follows_action_gradient():
    for seed in range(10):
        torch.manual_seed(seed)
        ac = ActorCritic(3, 2, 1)
        x, z = torch.randn(1, 3), torch.randn(1, 2)
        a = ac.pi(x, z).detach().requires_grad_(True)
        dq_da = torch.autograd.grad(ac.q(x, z, a).sum(), a)[0]
        before = ac.pi(x, z).detach()
        loss = policy_loss(ac, x, z)
        grads = torch.autograd.grad(loss, list(ac.actor.parameters()))
        with torch.no_grad():
            for p, g in zip(ac.actor.parameters(), grads):
                p -= 1e-3 * g
        delta = ac.pi(x, z).detach() - before
        assert float(delta * dq_da) > 0


def test_policy_loss_leaves_critic_untouched():
    torch.manual_seed(3)
    ac = ActorCritic(3, 2, 2)
    loss = policy_loss(ac, torch.randn(5, 3), torch.randn(5, 2))
    loss.backward()
    assert all(p.grad is None for p in ac.critic.parameters())
    assert all(p.grad is not None for p in ac.actor.parameters())


def test_zero_gradient_critic_no_change():
    torch.manual_seed(4)
    ac = ActorCritic(3, 0, 2)
    with torch.no_grad():
        ac.critic.layers[-1].weight.zero_()
    before = [p.detach().clone() for p in ac.actor.parameters()]
    Adam(named_params(actor=ac.actor), lr=1e-3).step(policy_loss(ac, torch.randn(8, 3), None))
    assert all(torch.equal(a, b) for a, b in zip(before, ac.actor.parameters()))


def test_gradient_reaches_task_input_through_policy():
    torch.manual_seed(5)
    ac = ActorCritic(3, 2, 1)
    x = torch.randn(4, 3, requires_grad=True)
    z = torch.randn(4, 2, requires_grad=True)
    policy_loss(ac, x, z).backward()
    assert z.grad is not None and z.grad.abs().sum() > 0
    assert x.grad is not None and x.grad.abs().sum() > 0
