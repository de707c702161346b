"""Finite-difference gradient oracle.

``finite_diff_grad`` perturbs one element at a time and takes central
differences; ``check_gradients`` compares that against what ``backward``
accumulates for every input of a function. Both expect 64-bit data:
central differences in float32 are dominated by rounding.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from dcaps.core.errors import DCapsError, DimensionError, NumericalError
from dcaps.numerics.tensor import Parameter, Tensor, backward, zero_grads

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
DEFAULT_TOLERANCE = 1e-4

ScalarFn = Callable[[Tensor], Tensor | float]


def _evaluate(f: ScalarFn, x: np.ndarray) -> float:
    out = f(Tensor(x))
    value = out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    if np.size(value) != 1:
        raise DimensionError(f"finite_diff_grad needs a scalar function, got shape {np.shape(value)}")
    value = float(np.reshape(value, ()))
    if not np.isfinite(value):
        raise NumericalError(f"function evaluated to a non-finite value ({value})")
    return value


def finite_diff_grad(f: ScalarFn, at: Tensor | np.ndarray, eps: float = DEFAULT_EPS,
                     indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``at``.

    When ``indices`` is given only those elements are perturbed and every
    other entry of the result is left at zero.

    :raises ValueError: ``eps`` is not positive.
    :raises NumericalError: ``f`` is non-finite at any probe point.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    base = np.array(at.data if isinstance(at, Tensor) else at, dtype=np.float64, copy=True)
    grad = np.zeros_like(base)
    probe = np.ndindex(base.shape) if indices is None else indices
    for idx in probe:
        original = base[idx]
        base[idx] = original + eps
        plus = _evaluate(f, base)
        base[idx] = original - eps
        minus = _evaluate(f, base)
        base[idx] = original
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                    rng: np.random.Generator, eps: float = DEFAULT_EPS,
                    max_probes: int | None = None) -> float:
    """Worst relative error between analytic and numeric gradients of ``fn``.

    ``fn`` is reduced to a scalar with a fixed random projection so every
    output element contributes. With ``max_probes`` set, at most that many
    randomly chosen elements per input are compared.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    out = fn(*(Tensor(a) for a in arrays))
    projection = rng.standard_normal(out.shape)

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = (fn(*leaves) * projection).sum()
    backward(loss)

    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[i])

        def scalar(x: Tensor, i: int = i) -> Tensor:
            args = [x if j == i else Tensor(a) for j, a in enumerate(arrays)]
            return (fn(*args) * projection).sum()

        indices = _probe_indices(arrays[i].shape, rng, max_probes)
        numeric = finite_diff_grad(scalar, arrays[i], eps=eps, indices=indices)
        if indices is not None:
            sel = tuple(np.array(axis) for axis in zip(*indices, strict=True))
            worst = max(worst, relative_error(analytic[sel], numeric[sel]))
        else:
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def _probe_indices(shape: tuple[int, ...], rng: np.random.Generator,
                   max_probes: int | None) -> list[tuple[int, ...]] | None:
    size = int(np.prod(shape, dtype=np.int64))
    if max_probes is None or size <= max_probes:
        return None
    flat = rng.choice(size, size=max_probes, replace=False)
    return [tuple(int(i) for i in np.unravel_index(k, shape)) for k in np.sort(flat)]


def check_parameter_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                              rng: np.random.Generator, eps: float = DEFAULT_EPS,
                              max_probes: int | None = None) -> dict[str, float]:
    """Relative error of the gradient ``backward`` leaves in each parameter.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Values are restored after probing.
    """
    zero_grads(params)
    backward(loss_fn())
    analytic = {p.name: p.grad.astype(np.float64, copy=True) for p in params}

    errors: dict[str, float] = {}
    for p in params:
        original = np.array(p.value.data, copy=True)

        def scalar(x: Tensor, p: Parameter = p) -> Tensor:
            p.assign(x.data)
            return loss_fn()

        indices = _probe_indices(p.shape, rng, max_probes)
        try:
            numeric = finite_diff_grad(scalar, original, eps=eps, indices=indices)
        finally:
            p.assign(original)
        if indices is None:
            errors[p.name] = relative_error(analytic[p.name], numeric)
        else:
            sel = tuple(np.array(axis) for axis in zip(*indices, strict=True))
            errors[p.name] = relative_error(analytic[p.name][sel], numeric[sel])
    zero_grads(params)
    return errors


@dataclass
class GradientCheck:
    """Outcome of one component's gradient check across all seeds."""

    component: str
    worst_error: float
    cases: int
    tolerance: float = DEFAULT_TOLERANCE
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and self.worst_error < self.tolerance

    def to_dict(self) -> dict[str, object]:
        return {
            "component": self.component,
            "worst_error": self.worst_error,
            "cases": self.cases,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "error": self.error,
        }


CaseFn = Callable[[np.random.Generator], float]


def run_gradient_suite(cases: dict[str, CaseFn], seeds: int, base_seed: int = 0,
                       tolerance: float = DEFAULT_TOLERANCE) -> list[GradientCheck]:
    """Run every case for ``seeds`` consecutive seeds starting at ``base_seed``."""
    results: list[GradientCheck] = []
    for offset, (name, case) in enumerate(cases.items()):
        worst = 0.0
        error = ""
        for s in range(seeds):
            rng = np.random.default_rng([base_seed + s, offset])
            try:
                worst = max(worst, case(rng))
            except (DCapsError, ValueError) as e:
                error = f"seed {base_seed + s}: {e}"
                break
        logger.debug("gradcheck %s: worst relative error %.3e", name, worst)
        results.append(GradientCheck(name, worst, seeds, tolerance, error))
    return results
