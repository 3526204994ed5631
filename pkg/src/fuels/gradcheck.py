"""Central finite-difference checks for every op kind and for the full local objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .data import Batch
from .federation import LocalOptions, batch_objective, trainable_names
from .model import bind, init_model

FD_STEP = 1e-5
TOLERANCE = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(fn, params: dict, name: str, step: float = FD_STEP) -> np.ndarray:
    base = params[name]
    out = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        orig = base[idx]
        base[idx] = orig + step
        up = fn(params)
        base[idx] = orig - step
        down = fn(params)
        base[idx] = orig
        out[idx] = (up - down) / (2.0 * step)
    return out


# inputs per op kind: (shapes, positive_only)
_OP_CASES = {
    "matmul": ([(3, 4), (4, 2)], False),
    "add": ([(3, 4), (1, 4)], False),
    "sub": ([(3, 4), (3, 4)], False),
    "mul": ([(3, 4), (3, 1)], False),
    "concat_cols": ([(3, 2), (3, 3)], False),
    "sigmoid": ([(3, 4)], False),
    "tanh": ([(3, 4)], False),
    "relu": ([(3, 4)], False),
    "exp": ([(3, 4)], False),
    "log": ([(3, 4)], True),
    "mean_all": ([(3, 4)], False),
    "sum": ([(3, 4)], False),
    "scalar_mul": ([(3, 4)], False),
    "row_cosine": ([(4, 3), (4, 3)], False),
    "transpose": ([(3, 4)], False),
    "slice_rows": ([(5, 3)], False),
}

_OP_ATTRS = {"scalar_mul": {"c": -1.7}, "slice_rows": {"start": 1, "stop": 4}, "sum": {"axis": 1}}


def op_gradcheck(kind: str, seed: int) -> float:
    """Worst relative error over the inputs of one op, probed through a random linear readout."""
    rng = np.random.default_rng(seed)
    shapes, positive = _OP_CASES[kind]
    params = {}
    for k, shape in enumerate(shapes):
        x = rng.uniform(-2.0, 2.0, size=shape)
        if positive:
            x = np.abs(x) + 0.1
        if kind == "relu":
            # keep clear of the kink
            x = np.where(np.abs(x) < 1e-3, 0.5, x)
        params[f"x{k}"] = x
    attrs = _OP_ATTRS.get(kind, {})

    def build(p):
        g = Graph()
        nodes = [g.leaf(p[f"x{k}"], name=f"x{k}") for k in range(len(shapes))]
        out = g.apply(kind, *nodes, **attrs)
        weights = np.random.default_rng(seed + 1).uniform(-1.0, 1.0, size=out.shape)
        return g, (out * g.constant(weights)).sum()

    g, root = build(params)
    grads = g.backward(root)
    worst = 0.0
    for name in params:
        num = numeric_grad(lambda p: build(p)[1].item(), params, name)
        worst = max(worst, relative_error(grads[name], num))
    return worst


def random_instance(seed: int, B: int = 4, h: int = 3, c: int = 3, q: int = 3):
    """Random parameters, aligned batches and prototypes with entries in [-2, 2]."""
    rng = np.random.default_rng(seed)
    params = init_model(h, B, seed).params
    for name in params:
        params[name] = rng.uniform(-2.0, 2.0, size=params[name].shape)
    y = rng.uniform(-2.0, 2.0, size=B)
    batch = Batch(rng.uniform(-2.0, 2.0, (B, c)), rng.uniform(-2.0, 2.0, (B, q)), y)
    batch_aug = Batch(rng.uniform(-2.0, 2.0, (B, c)), rng.uniform(-2.0, 2.0, (B, q)), y)
    pos = rng.uniform(-2.0, 2.0, (B, 2 * h))
    neg = rng.uniform(-2.0, 2.0, (B, 2 * h))
    return params, batch, batch_aug, pos, neg


def objective_gradcheck(seed: int, tau: float = 0.02, rho: float = 5.0, B: int = 4, h: int = 3) -> dict[str, float]:
    """Relative error per parameter tensor of the combined prediction + intra + inter loss."""
    params, batch, batch_aug, pos, neg = random_instance(seed, B, h)
    opts = LocalOptions(tau=tau, rho=rho, use_intra=True, learn_filter=True)
    names = trainable_names(opts)

    def build(p, trainable=names):
        g = Graph(check_finite=False)
        total, _, _ = batch_objective(g, bind(g, p, trainable), batch, batch_aug, pos, neg, opts)
        return g, total

    g, total = build(params)
    grads = g.backward(total)
    # probes only need the forward value
    probe = lambda p: build(p, ())[1].item()
    return {name: relative_error(grads[name], numeric_grad(probe, params, name)) for name in names}


@dataclass
class GradCheckReport:
    op_errors: dict[str, float] = field(default_factory=dict)
    objective_errors: list[float] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def worst(self) -> float:
        return max([*self.op_errors.values(), *self.objective_errors, 0.0])

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def run_suite(seed: int = 0, instances: int = 20, op_seeds: int = 20) -> GradCheckReport:
    report = GradCheckReport()
    for kind in _OP_CASES:
        report.op_errors[kind] = max(op_gradcheck(kind, seed * 1000 + s) for s in range(op_seeds))
    for k in range(instances):
        report.objective_errors.append(max(objective_gradcheck(seed * 1000 + k).values()))
    return report
