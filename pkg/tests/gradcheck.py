"""Central finite-difference checks for the autodiff ops and the model."""

import contextlib
from unittest import mock

import numpy as np

from pointfuse.nn import autograd, model
from pointfuse.nn.autograd import (
    Tensor,
    _result,
    affine,
    backward,
    concat,
    gather,
    group_max,
    interpolate,
    relu,
    weighted_nll,
)
from pointfuse.nn.model import LayerSpec, feature_propagation, set_abstraction

H = 1e-5
FLOOR = 1e-6  # below this magnitude both gradients count as zero-ish


def rel_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), FLOOR)


def check(fn, arrays, n_probes, rng, h=H):
    """fn(tensors) -> scalar Tensor.  Probes random entries of the arrays and
    returns the list of relative errors between analytic and numeric slopes."""
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = fn(tensors)
    backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    keys = list(arrays)
    sizes = np.array([arrays[k].size for k in keys], dtype=float)
    errs = []
    for _ in range(n_probes):
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        i = int(rng.integers(arrays[k].size))
        vals = []
        for sgn in (1, -1):
            pert = {kk: vv.copy() for kk, vv in arrays.items()}
            pert[k].flat[i] += sgn * h
            vals.append(float(fn({kk: Tensor(vv) for kk, vv in pert.items()}).data))
        num = (vals[0] - vals[1]) / (2 * h)
        errs.append(rel_error(float(grads[k].flat[i]), num))
    return errs


def dot_probe(t, r):
    """sum(t * r) for a fixed array r; a test-local op with an obvious gradient."""
    return _result(np.asarray(float((t.data * r).sum())), (t,), lambda g: (g * r,))


_SA_POS = np.random.default_rng(10).uniform(0, 1, size=(30, 3))
_FP_S = np.random.default_rng(11).uniform(0, 1, size=(6, 3))
_FP_Q = np.random.default_rng(12).uniform(0, 1, size=(9, 3))

# name -> (loss of a dict of tensors, maker of the input arrays from a generator)
LAYERS = {
    "affine": (
        lambda t: dot_probe(affine(t["x"], t["W"], t["b"]), np.random.default_rng(1).normal(size=(6, 4))),
        lambda r: {"x": r.normal(size=(6, 3)), "W": r.normal(size=(3, 4)), "b": r.normal(size=4)},
    ),
    "relu": (
        lambda t: dot_probe(relu(t["x"]), np.random.default_rng(2).normal(size=(5, 4))),
        # keep entries away from the kink so h = 1e-5 never crosses it
        lambda r: {"x": np.sign(r.normal(size=(5, 4))) * r.uniform(0.1, 1, size=(5, 4))},
    ),
    "gather": (
        lambda t: dot_probe(gather(t["x"], np.array([[0, 2], [2, 2], [1, 0]])), np.random.default_rng(3).normal(size=(3, 2, 4))),
        lambda r: {"x": r.normal(size=(3, 4))},
    ),
    "concat": (
        lambda t: dot_probe(concat([t["a"], t["b"]]), np.random.default_rng(4).normal(size=(4, 5))),
        lambda r: {"a": r.normal(size=(4, 2)), "b": r.normal(size=(4, 3))},
    ),
    "group_max": (
        lambda t: dot_probe(group_max(t["x"]), np.random.default_rng(5).normal(size=(3, 4))),
        # distinct values spaced well beyond h keep the argmax fixed
        lambda r: {"x": r.permutation(np.arange(3 * 5 * 4) * 0.01).reshape(3, 5, 4)},
    ),
    "interpolate": (
        lambda t: dot_probe(
            interpolate(t["x"], np.array([[0, 1, 2], [3, 3, 1]]), np.array([[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]])),
            np.random.default_rng(6).normal(size=(2, 3)),
        ),
        lambda r: {"x": r.normal(size=(4, 3))},
    ),
    "weighted_nll": (
        lambda t: weighted_nll(t["z"], np.array([0, 2, 1, 2]), np.array([1.0, 0.5, 2.0, 1.0])),
        lambda r: {"z": r.normal(size=(4, 3))},
    ),
    "set_abstraction": (
        lambda t: dot_probe(
            set_abstraction(_SA_POS, t["f"], LayerSpec(6, 0.5, 8, (5,)), [(t["W"], t["b"])]).features,
            np.random.default_rng(8).normal(size=(6, 5)),
        ),
        lambda r: {"f": r.normal(size=(30, 4)), "W": r.normal(size=(7, 5)), "b": r.normal(size=5) * 0.1},
    ),
    "feature_propagation": (
        lambda t: dot_probe(
            feature_propagation(_FP_Q, _FP_S, t["f"], [t["skip"]], [(t["W"], t["b"])]),
            np.random.default_rng(9).normal(size=(9, 3)),
        ),
        lambda r: {"f": r.normal(size=(6, 4)), "skip": r.normal(size=(9, 2)), "W": r.normal(size=(6, 3)), "b": r.normal(size=3) * 0.1},
    ),
}


@contextlib.contextmanager
def record_pieces():
    """Patch the model's ReLU and group-max to log their masks and argmaxes.

    Two evaluations with equal logs ran through the same linear piece of the
    network, which is where a central difference is a valid oracle.
    """
    log = []

    def relu(x):
        log.append(x.data > 0)
        return autograd.relu(x)

    def group_max(x):
        log.append(np.argmax(x.data, axis=-2))
        return autograd.group_max(x)

    with mock.patch.object(model, "relu", relu), mock.patch.object(model, "group_max", group_max):
        yield log


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_model(cfg, params, sub, scene, cw, n_probes, rng, h=H):
    """Probe the composed model's loss gradient at random parameters.

    Entries whose +-h evaluations cross a ReLU or max switch are redrawn, and
    how many were redrawn is returned alongside the errors.
    """

    def loss(p, grad):
        tr = model.forward(sub, scene, cfg, p, requires_grad=grad)
        return tr, model.weighted_cross_entropy(tr.logits, sub.labels, cw)

    with record_pieces() as log:
        tr, L = loss(params, True)
    centre = list(log)
    g = model.gradients(tr, L)
    keys = list(params)
    sizes = np.array([params[k].size for k in keys], dtype=float)
    errs, crossed = [], 0
    while len(errs) < n_probes:
        if crossed > 10 * n_probes:
            raise RuntimeError("almost every probe straddles a kink")
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        i = int(rng.integers(params[k].size))
        vals = []
        same = True
        for sgn in (1, -1):
            p2 = dict(params)
            p2[k] = params[k].copy()
            p2[k].flat[i] += sgn * h
            with record_pieces() as log:
                vals.append(float(loss(p2, False)[1].data))
            same = same and _same(log, centre)
        if not same:
            crossed += 1
            continue
        errs.append(rel_error(float(g[k].flat[i]), (vals[0] - vals[1]) / (2 * h)))
    return errs, crossed
