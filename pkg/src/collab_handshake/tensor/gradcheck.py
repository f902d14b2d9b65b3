"""Central finite-difference gradient oracle.

Relative error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. A
coordinate whose +/- eps perturbation flips the sign of any relu input sits
on a kink, where the two one-sided derivatives differ and a central
difference is meaningless; such coordinates are replaced by fresh draws.

The perturbed evaluations run in ``np.longdouble`` by default. With an O(1)
loss, float64 round-off alone puts about 1e-11 of noise on each difference
quotient at eps=1e-5, which swamps legitimately tiny gradient entries; the
x87 extended format pushes that floor down by three orders of magnitude.
Analytic gradients always come from the float64 tape.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .tape import Tape


def _same_side(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _coords(size, max_coords, rng):
    return list(range(size)) if size <= max_coords else list(rng.permutation(size))


def _check_eps(eps):
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"eps {eps} outside [1e-7, 1e-3]")


def _probe(evaluate, set_value, analytic, size, eps, max_coords, rng):
    """Worst relative error over up to ``max_coords`` kink-free coordinates of one tensor."""
    worst, used = 0.0, 0
    for flat in _coords(size, max_coords, rng):
        if used == max_coords:
            break
        orig = set_value(flat, None)
        hi, lo = orig + eps, orig - eps
        set_value(flat, hi)
        up, up_kinks = evaluate()
        set_value(flat, lo)
        down, down_kinks = evaluate()
        set_value(flat, orig)
        if not _same_side(up_kinks, down_kinks):
            continue
        used += 1
        # divide by the step actually taken after float64 rounding
        numeric = float((up - down) / (hi - lo))
        a = float(analytic.flat[flat])
        worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


def finite_diff_check(fn, arrays, eps=1e-5, *, max_coords=24, rng=None, dtype=np.longdouble):
    """Compare tape gradients of a scalar function against central differences.

    ``fn(tape, vars)`` receives a dict of leaf Vars built from ``arrays`` and
    returns a scalar Var. Up to ``max_coords`` coordinates per array are
    sampled. Returns the max relative error.
    """
    _check_eps(eps)
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}

    tape = Tape()
    leaves = {k: tape.input(v) for k, v in arrays.items()}
    out = fn(tape, leaves)
    if len(tape):
        tape.backward(out)
    analytic = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}

    def evaluate():
        t = Tape(grad=False, trace_kinks=True, dtype=dtype)
        return fn(t, {k: t.constant(v) for k, v in arrays.items()}).value[()], t.kinks

    worst = 0.0
    for name, base in arrays.items():
        def set_value(flat, v, base=base):
            if v is None:
                return base.flat[flat]
            base.flat[flat] = v

        worst = max(worst, _probe(evaluate, set_value, analytic[name], base.size, eps, max_coords, rng))
    return worst


def finite_diff_params(fn, store, eps=1e-5, *, names=None, max_coords=8, rng=None, dtype=np.longdouble):
    """Like :func:`finite_diff_check` but over the tensors of a ParamStore.

    ``fn(tape, store)`` builds a scalar loss reading parameters through
    ``tape.param``. The store is restored before returning.
    """
    _check_eps(eps)
    rng = np.random.default_rng(0) if rng is None else rng
    names = list(store.values) if names is None else list(names)
    store.zero_grad()
    tape = Tape()
    tape.backward(fn(tape, store))
    analytic = {k: store.grads[k].copy() for k in names}

    def evaluate():
        t = Tape(grad=False, trace_kinks=True, dtype=dtype)
        return fn(t, store).value[()], t.kinks

    worst = 0.0
    for name in names:
        base = store.values[name]

        def set_value(flat, v, base=base):
            if v is None:
                return base.flat[flat]
            base.flat[flat] = v

        worst = max(worst, _probe(evaluate, set_value, analytic[name], base.size, eps, max_coords, rng))
    return worst
