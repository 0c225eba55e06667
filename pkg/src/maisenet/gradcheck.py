"""Finite-difference verification of analytic gradients.

A scalar probe loss (sum of every output weighted by a fixed random
cotangent) is differentiated two ways: by the backward pass, and by
central differences on every probed coordinate of the inputs and
parameters. Two kinds of uninformative probes are recognized:

* Coordinates whose +h/-h evaluations land on different linear pieces (a
  relu sign or a pooling argmax flipped) are skipped — a finite
  difference across a kink says nothing about the derivative there.
* A |numeric - analytic| difference below the roundoff noise floor of
  the probe loss (~machine epsilon * |loss| / step) counts as agreement.
  Central differences cannot resolve anything finer; this matters at
  coordinates whose true gradient is exactly zero (e.g. a bias that a
  downstream softmax provably cancels), where the relative-error
  denominator floor would otherwise amplify pure cancellation noise.
  Any genuine error above the floor still fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NonFiniteError, PatternTrace, Tensor, no_grad, trace_patterns

__all__ = ["GradCheckResult", "grad_check"]


@dataclass
class GradCheckResult:
    max_relative_error: float
    parameter_count: int
    tolerance: float
    probed_count: int = 0
    skipped_kinks: int = 0
    total_coordinates: int = 0
    worst_coordinate: str = ""
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_relative_error <= self.tolerance

    def to_json_dict(self) -> dict:
        return {
            "max_relative_error": self.max_relative_error,
            "parameter_count": self.parameter_count,
            "tolerance": self.tolerance,
            "probed_count": self.probed_count,
            "skipped_kinks": self.skipped_kinks,
            "worst_coordinate": self.worst_coordinate,
            "failure": self.failure,
            "pass": self.passed,
        }


def _output_list(result) -> list[Tensor]:
    if isinstance(result, Tensor):
        return [result]
    if isinstance(result, (tuple, list)):
        outs = []
        for item in result:
            outs.extend(_output_list(item))
        return outs
    raise TypeError(f"block returned unsupported output type {type(result)!r}")


def grad_check(
    fn,
    inputs,
    params=None,
    *,
    seed: int = 0,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_probes: int | None = None,
) -> GradCheckResult:
    """Compare the backward pass of ``fn`` against central differences.

    ``fn`` maps the given input tensors to a tensor (or nest of tensors).
    ``params`` lists (name, Tensor) pairs; when omitted and ``fn`` has
    ``named_parameters`` those are used. Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8). ``max_probes`` caps how
    many coordinates are probed (seeded choice without replacement); all
    coordinates are probed when it is None or not exceeded.
    """
    if isinstance(inputs, Tensor):
        inputs = (inputs,)
    inputs = tuple(inputs)
    for t in inputs:
        t.requires_grad = True
    if params is None:
        params = list(fn.named_parameters()) if hasattr(fn, "named_parameters") else []
    else:
        params = list(params)

    leaves = [(f"input{i}", t) for i, t in enumerate(inputs)] + params
    param_scalars = sum(p.size for _, p in params)
    total_scalars = sum(t.size for _, t in leaves)

    rng = np.random.default_rng(seed)

    def finish_failure(msg: str) -> GradCheckResult:
        return GradCheckResult(
            max_relative_error=float("inf"),
            parameter_count=param_scalars,
            tolerance=tolerance,
            failure=msg,
        )

    try:
        outs = _output_list(fn(*inputs))
    except NonFiniteError as exc:
        return finish_failure(f"forward pass: {exc}")
    cotangents = [rng.standard_normal(o.data.shape) for o in outs]

    for _, leaf in leaves:
        leaf.zero_grad()
    loss = None
    from . import ops

    for out, cot in zip(outs, cotangents):
        term = ops.tsum(ops.mul(out, Tensor(cot)))
        loss = term if loss is None else ops.add(loss, term)
    loss.backward()

    analytic = {}
    for name, leaf in leaves:
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        analytic[name] = grad.reshape(-1)

    coordinates = []
    for name, leaf in leaves:
        flat = leaf.data.reshape(-1)
        coordinates.extend((name, flat, k) for k in range(flat.size))
    if max_probes is not None and len(coordinates) > max_probes:
        chosen = rng.choice(len(coordinates), size=max_probes, replace=False)
        coordinates = [coordinates[i] for i in sorted(chosen)]

    def probe_loss():
        trace = PatternTrace()
        with no_grad(), trace_patterns(trace):
            vals = _output_list(fn(*inputs))
        total = 0.0
        for out, cot in zip(vals, cotangents):
            total += float(np.sum(out.data * cot))
        return total, trace.digest()

    max_rel = 0.0
    worst = ""
    skipped = 0
    probed = 0
    for name, flat, k in coordinates:
        original = flat[k]
        try:
            flat[k] = original + step
            loss_plus, pattern_plus = probe_loss()
            flat[k] = original - step
            loss_minus, pattern_minus = probe_loss()
        except NonFiniteError as exc:
            flat[k] = original
            return finish_failure(f"probing {name}[{k}]: {exc}")
        finally:
            flat[k] = original
        if pattern_plus != pattern_minus:
            skipped += 1
            continue
        probed += 1
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        exact = float(analytic[name][k])
        noise_floor = (
            32.0 * np.finfo(np.float64).eps
            * max(abs(loss_plus), abs(loss_minus), 1.0) / (2.0 * step)
        )
        diff = abs(numeric - exact)
        rel = 0.0 if diff <= noise_floor else diff / max(abs(exact), abs(numeric), 1e-8)
        if rel > max_rel:
            max_rel = rel
            worst = f"{name}[{k}]"

    return GradCheckResult(
        max_relative_error=max_rel,
        parameter_count=param_scalars,
        tolerance=tolerance,
        probed_count=probed,
        skipped_kinks=skipped,
        total_coordinates=total_scalars,
        worst_coordinate=worst,
    )
