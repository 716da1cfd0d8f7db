"""Shared test utilities: finite-difference oracles and graph builders."""

import numpy as np

from batchweight import autodiff as ad


def central_difference(fn, vec, h=1e-5):
    """Gradient of scalar fn(flat vector) by central differences."""
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += h
        down = vec.copy()
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1.0):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def graph_gradient_check(graph, inputs, seed=None, h=1e-5):
    """Compare graph.backward against central differences on its parameters."""
    out = graph.forward(*inputs)
    if seed is None:
        seed = np.ones_like(out.data)
    analytic = graph.backward(seed)
    base = graph.parameter_vector()

    def scalar(vec):
        graph.set_parameter_vector(vec)
        value = float((graph._fn(*inputs).data * seed).sum())
        return value

    numeric = central_difference(scalar, base, h=h)
    graph.set_parameter_vector(base)
    return analytic, numeric


def random_mlp_graph(rng, sizes, activation=ad.tanh):
    """A dense MLP over random parameters, returning (graph, params)."""
    params = []
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = ad.Tensor(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in), name=f"w{i}")
        b = ad.Tensor(rng.standard_normal(n_out) * 0.1, name=f"b{i}")
        params += [(f"w{i}", w), (f"b{i}", b)]
        layers.append((w, b))

    def fn(x):
        h = x
        for i, (w, b) in enumerate(layers):
            h = ad.add(ad.matmul(h, w), b)
            if i < len(layers) - 1:
                h = activation(h)
        return ad.tensor_sum(h)

    return ad.ParameterGraph(params, fn), params
