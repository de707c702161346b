"""``dcaps gradcheck``: analytic vs. central finite-difference gradients, 64-bit.

Every differentiable building block is checked on random inputs whose
shapes are drawn from the seed, plus the reconstruction decoder and the
whole loss of a tiny network. Reports the worst relative error per
component:

- ``ok``    worst relative error below the tolerance (green ✓)
- ``fail``  at or above the tolerance, or the check raised (red ✗)

Exit code:
- 0 if every component passes
- 3 if any fails (the numerical-failure code)

The hidden ``--corrupt OP`` flag scales the analytic gradient of one
operation (by its ``Function.name``) so the suite can be shown to catch it.
"""

from __future__ import annotations

import json
import sys
from collections.abc import Callable

import click
import numpy as np
from rich.table import Table

from dcaps.capsule_layers import (
    CapsuleGrid,
    ConvCapsuleSpec,
    capsule_average_pool,
    conv_capsule_forward,
    dynamic_route,
    form_predictions,
)
from dcaps.cli._shared import console, setup_logging
from dcaps.core.errors import EXIT_NUMERICAL
from dcaps.network.config import tiny_config
from dcaps.network.model import ClassOutput, DCapsNet, build
from dcaps.numerics import ops
from dcaps.numerics.gradcheck import (
    DEFAULT_TOLERANCE,
    GradientCheck,
    check_gradients,
    check_parameter_gradients,
    run_gradient_suite,
)
from dcaps.numerics.tensor import Tensor, function_names, gradient_fault

OK, FAIL = "ok", "fail"

_STATUS_MARKERS = {
    OK: "[green]✓[/green]",
    FAIL: "[red]✗[/red]",
}

NETWORK_PROBES = 4
TINY_SHAPE = (8, 10)


# ---------------------------------------------------------------------------
# Cases: each takes a seeded Generator and returns the worst relative error
# ---------------------------------------------------------------------------


def _away_from_zero(rng: np.random.Generator, shape: tuple[int, ...], low: float = 0.1) -> np.ndarray:
    """Values with ``|x| >= low`` so kinks and singular points stay out of the ±eps window."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def case_conv2d(rng: np.random.Generator) -> float:
    b, h, w = int(rng.integers(1, 3)), int(rng.integers(4, 8)), int(rng.integers(4, 8))
    cin, cout, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3))
    x = rng.standard_normal((b, h, w, cin))
    kernel = rng.standard_normal((k, k, cin, cout))
    bias = rng.standard_normal(cout)
    return check_gradients(lambda x, kk, bb: ops.conv2d(x, kk, bb, stride=stride),
                           [x, kernel, bias], rng)


def case_transposed_conv2d(rng: np.random.Generator) -> float:
    b, h, w = int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    cin, cout, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.choice([2, 3, 4]))
    x = rng.standard_normal((b, h, w, cin))
    kernel = rng.standard_normal((k, k, cin, cout))
    bias = rng.standard_normal(cout)
    return check_gradients(lambda x, kk, bb: ops.transposed_conv2d(x, kk, stride=2, bias=bb),
                           [x, kernel, bias], rng)


def case_squash(rng: np.random.Generator) -> float:
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 9)))
    return check_gradients(ops.squash, [rng.standard_normal(shape)], rng)


def case_softmax(rng: np.random.Generator) -> float:
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 7)))
    return check_gradients(lambda x: ops.softmax(x, axis=-1), [2.0 * rng.standard_normal(shape)], rng)


def case_sigmoid(rng: np.random.Generator) -> float:
    return check_gradients(ops.sigmoid, [2.0 * rng.standard_normal((3, int(rng.integers(1, 6))))], rng)


def case_relu(rng: np.random.Generator) -> float:
    return check_gradients(ops.relu, [_away_from_zero(rng, (3, int(rng.integers(1, 6))))], rng)


def case_log(rng: np.random.Generator) -> float:
    return check_gradients(ops.log, [rng.uniform(0.5, 2.0, size=(2, int(rng.integers(1, 6))))], rng)


def case_l2norm(rng: np.random.Generator) -> float:
    return check_gradients(ops.l2norm, [_away_from_zero(rng, (2, 3, int(rng.integers(2, 6))))], rng)


def _capsule_spec(rng: np.random.Generator, routing: int = 3) -> ConvCapsuleSpec:
    return ConvCapsuleSpec(
        kernel=int(rng.choice([1, 3])),
        stride=int(rng.integers(1, 3)),
        in_types=int(rng.integers(1, 3)),
        out_types=int(rng.integers(1, 3)),
        in_atoms=int(rng.integers(2, 4)),
        out_atoms=int(rng.integers(2, 4)),
        routing_iterations=routing,
    )


def _children(rng: np.random.Generator, spec: ConvCapsuleSpec) -> np.ndarray:
    h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    return 0.5 * rng.standard_normal((1, h, w, spec.in_types, spec.in_atoms))


def case_form_predictions(rng: np.random.Generator) -> float:
    spec = _capsule_spec(rng)
    children = _children(rng, spec)
    transforms = rng.standard_normal(spec.transform_shape)
    return check_gradients(lambda c, t: form_predictions(CapsuleGrid(c), spec, t),
                           [children, transforms], rng)


def _routing_case(iterations: int) -> Callable[[np.random.Generator], float]:
    def case(rng: np.random.Generator) -> float:
        n, t, a = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        predictions = 0.5 * rng.standard_normal((1, 2, 2, n, t, a))
        bias = 0.1 * rng.standard_normal((t, a))
        return check_gradients(lambda u, bb: dynamic_route(u, iterations, bias=bb).activations,
                               [predictions, bias], rng)
    return case


def case_capsule_average_pool(rng: np.random.Generator) -> float:
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4)),
             int(rng.integers(1, 3)), int(rng.integers(2, 5)))
    return check_gradients(lambda g: capsule_average_pool(CapsuleGrid(g)), [rng.standard_normal(shape)], rng)


def case_conv_capsule_forward(rng: np.random.Generator) -> float:
    spec = _capsule_spec(rng, routing=3)
    children = _children(rng, spec)
    transforms = 0.5 * rng.standard_normal(spec.transform_shape)
    bias = 0.1 * rng.standard_normal(spec.bias_shape)
    return check_gradients(
        lambda c, tt, bb: conv_capsule_forward(CapsuleGrid(c), spec, tt, bb).activations,
        [children, transforms, bias], rng,
    )


def _tiny_net(rng: np.random.Generator) -> DCapsNet:
    cfg = tiny_config(*TINY_SHAPE, num_classes=int(rng.integers(1, 3)))
    return build(cfg, seed=int(rng.integers(2**31)), dtype=np.float64)


def case_reconstruction(rng: np.random.Generator) -> float:
    net = _tiny_net(rng)
    cfg = net.config
    vectors = 0.5 * rng.standard_normal((2, cfg.num_classes, cfg.output_atoms))
    worst = check_gradients(net.reconstruct, [vectors], rng, max_probes=NETWORK_PROBES * 4)
    projection = rng.standard_normal((2, *cfg.input_shape))

    def loss() -> Tensor:
        return (net.reconstruct(vectors) * projection).sum()

    errors = check_parameter_gradients(loss, net.decoder_parameters(), rng, max_probes=NETWORK_PROBES)
    return max(worst, *errors.values())


def case_losses(rng: np.random.Generator) -> float:
    """Cross-entropy plus weighted reconstruction MSE, differentiated in scores and reconstruction."""
    net = _tiny_net(rng)
    cfg = net.config
    b = 3
    labels = rng.integers(0, 2, size=b)
    images = rng.uniform(0.0, 1.0, size=(b, *cfg.input_shape))
    scores = rng.uniform(0.05, 0.95, size=(b, cfg.num_classes))
    recon = rng.uniform(0.05, 0.95, size=(b, *cfg.input_shape))
    vectors = Tensor(np.zeros((b, cfg.num_classes, cfg.output_atoms)))

    def total(s: Tensor, r: Tensor) -> Tensor:
        return net.loss(ClassOutput(vectors, s, r), labels, images)

    return check_gradients(total, [scores, recon], rng)


def case_end_to_end(rng: np.random.Generator) -> float:
    """Full loss of a tiny network, checked in every parameter."""
    net = _tiny_net(rng)
    cfg = net.config
    images = rng.uniform(0.0, 1.0, size=(2, *cfg.input_shape))
    labels = np.array([0, 1])

    def loss() -> Tensor:
        return net.loss(net.forward(images, reconstruct=True), labels, images)

    errors = check_parameter_gradients(loss, net.parameters(), rng, max_probes=NETWORK_PROBES)
    return max(errors.values())


CASES: dict[str, Callable[[np.random.Generator], float]] = {
    "conv2d": case_conv2d,
    "transposed_conv2d": case_transposed_conv2d,
    "squash": case_squash,
    "softmax": case_softmax,
    "sigmoid": case_sigmoid,
    "relu": case_relu,
    "log": case_log,
    "l2norm": case_l2norm,
    "form_predictions": case_form_predictions,
    "dynamic_route r=1": _routing_case(1),
    "dynamic_route r=3": _routing_case(3),
    "capsule_average_pool": case_capsule_average_pool,
    "conv_capsule_forward": case_conv_capsule_forward,
    "reconstruction": case_reconstruction,
    "losses": case_losses,
    "end_to_end": case_end_to_end,
}


def run_suite(seeds: int, base_seed: int, tolerance: float = DEFAULT_TOLERANCE,
              components: tuple[str, ...] = (), corrupt: str | None = None) -> list[GradientCheck]:
    """Run the selected components (all by default), optionally with one op's gradient corrupted."""
    unknown = sorted(set(components) - set(CASES))
    if unknown:
        raise click.BadParameter(f"unknown component(s): {', '.join(unknown)}; "
                                 f"choose from {', '.join(CASES)}")
    if corrupt and corrupt not in function_names():
        raise click.BadParameter(f"unknown op {corrupt!r}; choose from {', '.join(sorted(function_names()))}",
                                 param_hint="--corrupt")
    cases = {name: fn for name, fn in CASES.items() if not components or name in components}
    if corrupt:
        with gradient_fault(corrupt):
            return run_gradient_suite(cases, seeds, base_seed, tolerance)
    return run_gradient_suite(cases, seeds, base_seed, tolerance)


def render_report(results: list[GradientCheck]) -> None:
    table = Table(title="Gradient checks (float64, central differences)", title_style="bold cyan")
    table.add_column("", width=2)
    table.add_column("Component", style="bold")
    table.add_column("Worst rel. error", justify="right")
    table.add_column("Seeds", justify="right")
    table.add_column("Detail", style="dim")
    for r in results:
        table.add_row(
            _STATUS_MARKERS[OK if r.passed else FAIL],
            r.component,
            f"{r.worst_error:.2e}",
            str(r.cases),
            r.error,
        )
    console.print(table)


@click.command()
@click.option("--seed", "base_seed", type=int, default=0, show_default=True,
              help="First seed; shapes and values are drawn from it.")
@click.option("--seeds", type=click.IntRange(min=1), default=20, show_default=True,
              help="Seeds per component.")
@click.option("--tolerance", type=float, default=DEFAULT_TOLERANCE, show_default=True,
              help="Maximum relative error.")
@click.option("--component", "components", multiple=True,
              help="Only check these components (repeatable).")
@click.option("--json", "json_output", is_flag=True,
              help="Emit machine-readable JSON instead of a formatted table.")
@click.option("--corrupt", hidden=True, default=None,
              help="Scale the analytic gradient of this op (negative control).")
@click.option("-v", "--verbose", is_flag=True, help="Enable verbose logging.")
def gradcheck(base_seed: int, seeds: int, tolerance: float, components: tuple[str, ...],
              json_output: bool, corrupt: str | None, verbose: bool) -> None:
    """Check every layer's analytic gradient against finite differences."""
    setup_logging(None, verbose)
    results = run_suite(seeds, base_seed, tolerance, components, corrupt)
    failed = [r for r in results if not r.passed]

    if json_output:
        payload = {
            "results": [r.to_dict() for r in results],
            "summary": {"ok": len(results) - len(failed), "fail": len(failed)},
            "seeds": seeds,
            "base_seed": base_seed,
        }
        if corrupt:
            payload["corrupted_op"] = corrupt
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        render_report(results)
        if failed:
            console.print(f"[red]Gradient check failed for: {', '.join(r.component for r in failed)}[/red]")
        else:
            console.print(f"[green]All {len(results)} components passed[/green] "
                          f"(tolerance {tolerance:g}, {seeds} seeds)")

    if failed:
        sys.exit(EXIT_NUMERICAL)
