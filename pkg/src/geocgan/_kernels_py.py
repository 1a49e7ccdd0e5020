"""Pure-numpy MLP kernels; the reference the compiled core must match.

Parameter layout for layer sizes ``(n0, n1, ..., nL)``: for each layer the
weight matrix ``W`` of shape ``(n_out, n_in)`` in row-major order, then the
bias ``b`` of length ``n_out``.  Hidden layers apply the activation
(0 = tanh, 1 = softplus); the final layer is affine.

``acts`` buffers hold the post-activation values of every layer, input
included, concatenated along axis 1.
"""
import numpy as np

TANH = 0
SOFTPLUS = 1


def _layers(params, sizes):
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = params[off: off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = params[off: off + n_out]
        off += n_out
        yield W, b


def _act(pre, act):
    return np.tanh(pre) if act == TANH else np.logaddexp(0.0, pre)


def _dact(post, act):
    # derivative expressed through the post-activation value
    return 1.0 - post * post if act == TANH else -np.expm1(-post)


def mlp_forward(params, sizes, X, act):
    X = np.ascontiguousarray(X, dtype=np.float64)
    nlayers = len(sizes) - 1
    outs = [X]
    h = X
    for li, (W, b) in enumerate(_layers(params, sizes)):
        pre = h @ W.T + b
        h = pre if li == nlayers - 1 else _act(pre, act)
        outs.append(h)
    return np.concatenate(outs, axis=1)


def mlp_backward(params, sizes, acts, gY, act):
    gY = np.asarray(gY, dtype=np.float64)
    bounds = np.cumsum([0] + list(sizes))
    layers = list(_layers(params, sizes))
    grads = [None] * len(layers)
    g = gY
    nlayers = len(layers)
    for li in range(nlayers - 1, -1, -1):
        W, _ = layers[li]
        h_in = acts[:, bounds[li]:bounds[li + 1]]
        if li != nlayers - 1:
            g = g * _dact(acts[:, bounds[li + 1]:bounds[li + 2]], act)
        grads[li] = np.concatenate([(g.T @ h_in).ravel(), g.sum(axis=0)])
        g = g @ W
    return np.concatenate(grads), g


def mlp_jacobian(params, sizes, X, act, ncols):
    """Forward-mode Jacobian of the outputs w.r.t. the first ``ncols`` inputs.

    Returns an array of shape ``(N, n_out, ncols)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    N = X.shape[0]
    nlayers = len(sizes) - 1
    h = X
    J = np.broadcast_to(np.eye(sizes[0])[:, :ncols], (N, sizes[0], ncols))
    for li, (W, b) in enumerate(_layers(params, sizes)):
        pre = h @ W.T + b
        J = np.einsum("oi,nic->noc", W, J)
        if li != nlayers - 1:
            h = _act(pre, act)
            J = J * _dact(h, act)[:, :, None]
        else:
            h = pre
    return np.ascontiguousarray(J)
