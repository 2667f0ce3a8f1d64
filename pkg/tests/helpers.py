"""Shared test utilities."""

import numpy as np

from switchtext import Tensor, finite_difference_check


def check_param_gradient(make_loss, holder, attr, h=1e-6):
    """Finite-difference check of the gradient w.r.t. ``holder.<attr>``.

    ``make_loss`` is a zero-argument callable returning a scalar Tensor; it
    must read the parameter through ``holder`` so the probe tensor installed
    here participates in the graph.
    """
    original = getattr(holder, attr)

    def f(probe: Tensor) -> Tensor:
        setattr(holder, attr, probe)
        try:
            return make_loss()
        finally:
            setattr(holder, attr, original)

    return finite_difference_check(f, Tensor(original.data.copy()), h=h)


def check_many_params(make_loss, targets, h=1e-6, tol=1e-4):
    """Run check_param_gradient over (holder, attr) pairs; returns max error."""
    worst = 0.0
    for holder, attr in targets:
        err = check_param_gradient(make_loss, holder, attr, h=h)
        assert err < tol, f"gradient check failed for {type(holder).__name__}.{attr}: {err}"
        worst = max(worst, err)
    return worst
