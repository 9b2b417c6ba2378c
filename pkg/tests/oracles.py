"""Independent reference computations shared by the unit and acceptance tests."""

import itertools

import numpy as np

from rnnprune import rnn
from rnnprune.rnn import RnnParams, SequenceBatch


def random_net(rng, m, d_x, d_y, activation):
    return RnnParams(
        w_out=rng.normal(size=(d_y, m)),
        w_hid=rng.normal(scale=0.5, size=(m, m)),
        w_in=rng.normal(size=(m, d_x)),
        b_out=rng.normal(size=d_y),
        b_hid=rng.normal(scale=0.3, size=m),
        activation=activation,
    )


def oracle_loss(arrays, activation, x, y, loss):
    """Independent forward pass and loss in extended precision."""
    ld = np.longdouble
    w_out, w_hid, w_in = (arrays[k].astype(ld) for k in ("w_out", "w_hid", "w_in"))
    b_out, b_hid = arrays["b_out"].astype(ld), arrays["b_hid"].astype(ld)
    x = x.astype(ld)
    n, steps, _ = x.shape
    h = np.zeros((n, w_hid.shape[0]), dtype=ld)
    outs = []
    for t in range(steps):
        z = h @ w_hid.T + x[:, t] @ w_in.T + b_hid
        h = np.tanh(z) if activation == "tanh" else np.maximum(z, ld(0))
        outs.append(h @ w_out.T + b_out)
    f = np.stack(outs, axis=1)
    if loss == "squared_error":
        return np.sum((f - y.astype(ld)) ** 2) / (2 * n * steps)
    logits = f[:, -1] if loss == "cross_entropy_final" else f
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, y[..., None], axis=-1)
    return -np.mean(picked)


def numeric_gradient(params, batch, loss, h=1e-5):
    """Central differences of ``oracle_loss``."""
    arrays = params.arrays()
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            lp = oracle_loss({**arrays, name: plus}, params.activation, batch.inputs, batch.targets, loss)
            lm = oracle_loss({**arrays, name: minus}, params.activation, batch.inputs, batch.targets, loss)
            g[idx] = float((lp - lm) / (plus[idx] - minus[idx]))
        grads[name] = g
    return grads


def relative_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradient_check_suite(count=20, seed=0):
    """BPTT against central differences on ``count`` random small nets; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(count):
        activation = ("relu", "tanh")[k % 2]
        m, steps = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        d_x, d_y, n = int(rng.integers(1, 4)), int(rng.integers(2, 4)), 3
        while True:
            # keep every preactivation clear of the ReLU kink so the stencil stays on one side
            params = random_net(rng, m, d_x, d_y, activation)
            x = rng.normal(size=(n, steps, d_x))
            if np.abs(rnn.forward(params, x)[1].preactivations).min() >= 1e-3:
                break
        loss = rnn.LOSSES[k % 3]
        if loss == "cross_entropy_final":
            y = rng.integers(0, d_y, size=n)
        elif loss == "cross_entropy_per_step":
            y = rng.integers(0, d_y, size=(n, steps))
        else:
            y = rng.normal(size=(n, steps, d_y))
        batch = SequenceBatch(x, y)
        _, grads = rnn.bptt_gradients(params, batch, loss)
        num = numeric_gradient(params, batch, loss)
        for name in rnn.PARAM_NAMES:
            worst = max(worst, relative_error(grads[name], num[name]))
    return worst


def normal_equations_oracle(h, j, tau):
    """Minimize ``(1/N)||H - H_J A^T||_F^2 + Tr[A diag(tau) A^T]`` from raw samples ``h`` (N, m).

    Uses LAPACK least squares on an augmented system, so nothing is shared with
    the closed form. Returns ``(A, value)``.
    """
    n, m = h.shape
    hj = h[:, list(j)]
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (len(j),))
    # stacking sqrt(N tau) I under H_J turns the ridge term into extra residual rows
    aug_x = np.vstack([hj, np.diag(np.sqrt(n * tau))])
    aug_y = np.vstack([h, np.zeros((len(j), m))])
    a_t, *_ = np.linalg.lstsq(aug_x, aug_y, rcond=None)
    a = a_t.T
    resid = h - hj @ a.T
    value = np.sum(resid**2) / n + np.sum((a**2) * tau)
    return a, float(value)


def brute_force_input_loss(sigma, j):
    """``Tr[Sigma - Sigma[:, J] pinv(Sigma[J, J]) Sigma[J, :]]`` with numpy's SVD pseudo-inverse."""
    j = list(j)
    s_j = sigma[:, j]
    return float(np.trace(sigma) - np.trace(s_j @ np.linalg.pinv(sigma[np.ix_(j, j)], rcond=1e-12) @ s_j.T))


def brute_force_minimum(sigma, m_sharp):
    """Smallest input loss over all subsets of size ``m_sharp``."""
    m = sigma.shape[0]
    return min(brute_force_input_loss(sigma, j) for j in itertools.combinations(range(m), m_sharp))


def random_samples(rng, n, m, kind):
    if kind == "gaussian":
        return rng.normal(size=(n, m))
    if kind == "relu":
        return np.maximum(rng.normal(size=(n, m)) + 0.2, 0.0)
    # correlated features through a random mixing matrix
    return rng.normal(size=(n, m)) @ rng.normal(size=(m, m))


def dead_units(cov):
    """Nodes whose hidden state is identically zero on the data."""
    return [int(k) for k in np.flatnonzero(np.diag(cov.sigma) == 0.0)]


def train_dead_parity_irnn(seed=3, m=32, steps=8, n=1000, need_dead=10, max_chunks=20):
    """IRNN on one-hot temporal parity, trained in 10-epoch chunks until ``need_dead`` ReLU units die.

    A learning rate of 1e-2 makes some units' pre-activations negative on every
    input, after which they receive no gradient and stay dead.
    """
    from rnnprune.covariance import covariance_of
    from rnnprune.data import synthetic_parity

    data = synthetic_parity(n, steps, seed, encoding="onehot")
    params = rnn.init_irnn(m, 2, 2, seed)
    cov = covariance_of(params, data)
    chunks = 0
    while len(dead_units(cov)) < need_dead and chunks < max_chunks:
        cfg = rnn.TrainConfig(epochs=10, batch_size=100, lr=1e-2, seed=seed * 100 + chunks)
        params = rnn.train(params, data, cfg).params
        cov = covariance_of(params, data)
        chunks += 1
    return params, data, cov, chunks
