"""The finite-difference suite behind ``echoview gradcheck``.

Each case draws a random instance, reduces the op output to a scalar with a
fixed random weighting (so gradients are not trivially constant) and checks
every differentiable input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses
from .autodiff import BatchNormState, Tensor, grad_check, ops
from .labels import ViewLabel
from .model import ModelConfig, build_model, encode, project

F8 = np.float64


@dataclass
class CaseResult:
    name: str
    instances: int
    checks: int
    max_rel_error: float
    worst: str
    passed: bool
    seconds: float


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(w)))


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.uniform(gap, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x.astype(F8)


def _distinct(rng, shape, gap=0.05):
    """Values with pairwise gaps so small perturbations never reorder them."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 10)).reshape(shape).astype(F8)


# Every builder returns (named inputs, function of those inputs to a Tensor).
Builder = Callable[[np.random.Generator], tuple[dict[str, np.ndarray], Callable[..., Tensor]]]


def _case_add(rng):
    return {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,))}, lambda a, b: ops.add(a, b)


def _case_sub(rng):
    return {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}, lambda a, b: ops.sub(a, b)


def _case_mul(rng):
    return {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}, lambda a, b: ops.mul(a, b)


def _case_matmul(rng):
    return {"a": rng.normal(size=(3, 5)), "b": rng.normal(size=(5, 2))}, lambda a, b: ops.matmul(a, b)


def _case_dense(rng):
    d = {"x": rng.normal(size=(3, 5)), "w": rng.normal(size=(5, 4)), "b": rng.normal(size=(4,))}
    return d, lambda x, w, b: ops.dense(x, w, b)


def _case_relu(rng):
    return {"x": _away_from_zero(rng, (4, 5))}, lambda x: ops.relu(x)


def _case_shaping(rng):
    return {"x": rng.normal(size=(2, 3, 2))}, lambda x: ops.transpose(ops.flatten(ops.reshape(x, (3, 2, 2))))


def _case_mean(rng):
    return {"x": rng.normal(size=(4, 3))}, lambda x: ops.mul(ops.mean(x), ops.mean(x))


def _case_take_rows(rng):
    idx = rng.integers(0, 5, size=4)
    return {"x": rng.normal(size=(4, 5))}, lambda x: ops.take_rows(x, idx)


def _case_conv2d(rng):
    stride = int(rng.choice([1, 2]))
    padding = str(rng.choice(["same", "valid"]))
    layout = str(rng.choice(["NCHW", "CNHW"]))
    b, c, f, k = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.choice([1, 3]))
    h = int(rng.integers(k, 6))
    shape = (b, c, h, h) if layout == "NCHW" else (c, b, h, h)
    d = {"x": rng.normal(size=shape), "k": rng.normal(size=(f, c, k, k)), "b": rng.normal(size=(f,))}
    return d, lambda x, k, b: ops.conv2d(x, k, b, stride=stride, padding=padding, layout=layout)


def _case_batch_norm(rng):
    mode = str(rng.choice(["train", "eval"]))
    layout = str(rng.choice(["NCHW", "CNHW"]))
    c = int(rng.integers(1, 4))
    shape = (3, c, 2, 3) if layout == "NCHW" else (c, 3, 2, 3)
    state = BatchNormState.create(c, F8)
    state.running_mean[:] = rng.normal(size=c)
    state.running_var[:] = rng.uniform(0.5, 2.0, size=c)
    d = {"x": rng.normal(size=shape), "gamma": rng.normal(size=c), "beta": rng.normal(size=c)}
    return d, lambda x, gamma, beta: ops.batch_norm(x, gamma, beta, state, mode=mode, layout=layout)


def _case_max_pool(rng):
    return {"x": _distinct(rng, (2, 2, 4, 4))}, lambda x: ops.max_pool2d(x)


def _case_log_softmax(rng):
    return {"x": rng.normal(size=(3, 6)) * 3}, lambda x: ops.log_softmax(x)


def _case_masked_lse(rng):
    mask = rng.random((4, 5)) < 0.6
    mask[np.arange(4), rng.integers(0, 5, size=4)] = True
    return {"x": rng.normal(size=(4, 5))}, lambda x: ops.masked_logsumexp(x, mask)


def _case_l2(rng):
    return {"x": rng.normal(size=(3, 4))}, lambda x: ops.l2_normalize(x, 1e-12)


def _scalar_case(loss_fn):
    """Losses are scalar already; skip the random weighting."""
    loss_fn.scalar = True
    return loss_fn


@_scalar_case
def _case_cross_entropy(rng):
    targets = [ViewLabel.from_index(int(t)) for t in rng.integers(0, 13, size=4)]
    return {"logits": rng.normal(size=(4, 13)) * 2}, lambda logits: losses.cross_entropy_view(logits, targets)


def random_contrastive_labels(rng, n: int, max_classes: int = 4) -> list[ViewLabel]:
    """Labels for ``2n`` rows laid out as first views then second views."""
    k = int(rng.integers(1, max_classes + 1))
    base = [ViewLabel.from_index(int(i)) for i in rng.integers(0, k, size=n)]
    return base + base


@_scalar_case
def _case_supcon(rng):
    n = 4
    labels = random_contrastive_labels(rng, n)
    twin = [(i + n) % (2 * n) for i in range(2 * n)]
    tau = float(rng.choice([1.0, 1000.0]))
    normalize = bool(rng.integers(0, 2))

    def fn(z):
        p = ops.l2_normalize(z, 1e-12) if normalize else z
        return losses.supcon_loss(losses.ContrastiveBatch(p, labels, twin), losses.LossConfig(tau=tau))

    return {"z": rng.normal(size=(2 * n, 5))}, fn


CASES: dict[str, Builder] = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "matmul": _case_matmul,
    "dense": _case_dense,
    "relu": _case_relu,
    "reshape/flatten/transpose": _case_shaping,
    "mean": _case_mean,
    "take_rows": _case_take_rows,
    "conv2d": _case_conv2d,
    "batch_norm": _case_batch_norm,
    "max_pool2d": _case_max_pool,
    "log_softmax": _case_log_softmax,
    "masked_logsumexp": _case_masked_lse,
    "l2_normalize": _case_l2,
    "cross_entropy_view": _case_cross_entropy,
    "supcon_loss": _case_supcon,
}


def _check_instance(inputs: dict, fn, scalar: bool, rng, h: float, tol: float):
    """Yield (input name, report) for every input of one instance."""
    weight = None
    if not scalar:
        probe = fn(*(Tensor(v) for v in inputs.values()))
        weight = rng.normal(size=probe.shape)
    for name in inputs:
        def f(t, name=name):
            args = [t if k == name else Tensor(v) for k, v in inputs.items()]
            out = fn(*args)
            return out if scalar else _weighted(out, weight)

        yield name, grad_check(f, inputs[name], h=h, tol=tol)


def run_case(name: str, instances: int = 100, seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> CaseResult:
    builder = CASES[name]
    scalar = getattr(builder, "scalar", False)
    t0 = time.perf_counter()
    worst, worst_at, checks, ok = 0.0, "", 0, True
    for i in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C, list(CASES).index(name), i]))
        inputs, fn = builder(rng)
        inputs = {k: np.asarray(v, dtype=F8) for k, v in inputs.items()}
        for arg, rep in _check_instance(inputs, fn, scalar, rng, h, tol):
            checks += 1
            err = rep.max_rel_error
            if rep.failure is not None or not rep.passed:
                ok = False
            if err > worst or (rep.failure and not worst_at):
                worst = err
                worst_at = f"instance {i}, input {arg!r}, element {rep.worst_index}" + (f" ({rep.failure})" if rep.failure else "")
    return CaseResult(name, instances, checks, worst, worst_at, ok, time.perf_counter() - t0)


def tiny_model_config() -> ModelConfig:
    return ModelConfig(input_size=32, block_channels=(2, 2, 2, 2, 2), fc_hidden=4, projection_hidden=4, projection_dim=3)


def run_end_to_end(instances: int = 2, seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> CaseResult:
    """Encoder + projection + SupCon on a 2N=4 batch, every parameter tensor."""
    t0 = time.perf_counter()
    worst, worst_at, checks, ok = 0.0, "", 0, True
    cfg = tiny_model_config()
    for i in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE2E, i]))
        enc, proj, _ = build_model(cfg, seed=int(rng.integers(1 << 31)), dtype=F8)
        images = rng.uniform(0, 1, size=(4, 1, 32, 32))
        labels = [ViewLabel.C_2CH, ViewLabel.NC_RV] * 2
        twin = [2, 3, 0, 1]
        tensors = {**enc.params, **proj.params}
        for name, param in tensors.items():
            base = param.data.copy()
            rep = _param_grad_check(enc, proj, tensors, name, base, images, labels, twin, h, tol)
            checks += 1
            if not rep.passed:
                ok = False
            if rep.max_rel_error > worst or (rep.failure and not worst_at):
                worst = rep.max_rel_error
                worst_at = f"instance {i}, parameter {name!r}, element {rep.worst_index}"
    return CaseResult("end-to-end encoder+supcon", instances, checks, worst, worst_at, ok, time.perf_counter() - t0)


def _param_grad_check(enc, proj, tensors, name, base, images, labels, twin, h, tol):
    """Swap the parameter under test for the probe tensor and run the model."""
    param = tensors[name]

    def f(t):
        original = tensors[name]
        owner = enc.params if name in enc.params else proj.params
        owner[name] = t
        try:
            z = project(proj, encode(enc, images, mode="train"))
            return losses.supcon_loss(losses.ContrastiveBatch(z, labels, twin), losses.LossConfig(tau=1.0))
        finally:
            owner[name] = original

    for p in tensors.values():
        p.requires_grad = False
    try:
        return grad_check(f, base, h=h, tol=tol)
    finally:
        for p in tensors.values():
            p.requires_grad = True
        param.grad = None


def run_suite(instances: int = 100, seed: int = 0, tol: float = 1e-4, h: float = 1e-5, e2e_instances: int = 3):
    results = [run_case(name, instances, seed, h, tol) for name in CASES]
    if e2e_instances > 0:
        results.append(run_end_to_end(e2e_instances, seed, h, tol))
    return results


def format_results(results, tol: float, h: float) -> str:
    lines = [f"gradcheck: float64, h={h:g}, tol={tol:g}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(
            f"{status} {r.name:<28} instances={r.instances:<4} checks={r.checks:<5} "
            f"max_rel_error={r.max_rel_error:.3e} ({r.seconds:.2f}s)"
        )
        if not r.passed:
            lines.append(f"     worst offender: {r.worst}")
    return "\n".join(lines) + "\n"
