"""Independent reference computations in plain Python floats."""
import math

import numpy as np


def mlp_eval(params, x):
    """Straight-line forward pass with explicit loops."""
    h = [float(v) for v in x]
    n_layers = len(params.weights)
    for k in range(n_layers):
        w, b = params.weights[k], params.biases[k]
        z = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += h[i] * float(w[i, j])
            z.append(acc)
        if k < n_layers - 1:
            z = [max(v, 0.0) for v in z]
        h = z
    if params.spec.output_activation == "tanh":
        h = [math.tanh(v) for v in h]
    return h


def logsumexp(vals):
    m = max(vals)
    return m + math.log(sum(math.exp(v - m) for v in vals))


def central_diff(f, flat, h=1e-6):
    """Gradient of scalar f() with respect to the array ``flat``, perturbed in place."""
    out = np.zeros(flat.size)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def grad_close(analytic, numeric, rel=1e-4, abs_tol=1e-7):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((err <= abs_tol) | (err <= rel * scale)))
