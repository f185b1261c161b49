"""Independent reference computations used by the tests."""
import numpy as np

from rewardrank.transferability import TabularMDP


def random_mdp(rng, n_states, n_actions, gamma=None, alpha=None):
    kernel = rng.dirichlet(np.ones(n_states) * rng.uniform(0.2, 2.0), size=(n_actions, n_states))
    kernel /= kernel.sum(axis=2, keepdims=True)
    return TabularMDP(kernel=kernel, reward=rng.normal(size=n_states),
                      gamma=float(gamma if gamma is not None else rng.uniform(0.5, 0.95)),
                      alpha=float(alpha if alpha is not None else rng.uniform(0.2, 2.0)))


def backward_induction_values(mdp, horizon=10_000):
    """Finite-horizon soft values from a zero terminal value, by explicit recursion."""
    n, a_count = mdp.n_states, mdp.n_actions
    k = np.asarray(mdp.kernel)
    v = np.zeros(n)
    for _ in range(horizon):
        q = np.empty((n, a_count))
        for a in range(a_count):
            q[:, a] = mdp.reward + mdp.gamma * (k[a] @ v)
        top = q.max(axis=1)
        v = top + mdp.alpha * np.log(np.exp((q - top[:, None]) / mdp.alpha).sum(axis=1))
    return v


def monte_carlo_ratio(pi, pi_b, rng, draws=1_000_000):
    """Sample mean/variance of rho under pi_b and the standard errors of both."""
    a = rng.choice(len(pi_b), size=draws, p=pi_b)
    rho = np.asarray(pi)[a] / np.asarray(pi_b)[a]
    mean = rho.mean()
    centred = rho - mean
    var = centred.var()
    m4 = np.mean(centred ** 4)
    return mean, var, rho.std() / np.sqrt(draws), np.sqrt(max(m4 - var ** 2, 0.0) / draws)
