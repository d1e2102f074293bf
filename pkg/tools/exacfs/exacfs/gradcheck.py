"""Finite-difference verification of the autodiff engine.

`grad_check` compares the taped gradient of a scalar function against central
differences. `run_suite` applies it to every registered operator and to the
full training objective (classification plus significance-weighted
distillation) on a small network.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DistillConfig, NetworkConfig
from .distillation import batch_distill_losses, temperature, total_loss
from .errors import ContractError
from .network import IncrementalNet, classification_loss, run_forward
from .significance import SignificanceTable, normalize

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-3
TOLERANCE = 1e-4
TRIALS = 10
RELU_MARGIN = 1e-2

ScalarFn = Callable[[Tensor], Tensor]


def grad_check(f: ScalarFn, x: Union[Tensor, np.ndarray], eps: float = DEFAULT_EPS) -> float:
    """Max over components of |analytic - numeric| / max(1, |analytic|, |numeric|)."""
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base, requires_grad=True)
    loss = f(probe)
    ad.backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    with ad.no_grad():
        for index in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[index] += eps
            minus[index] -= eps
            numeric[index] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2 * eps)
    if base.size == 0:
        return 0.0
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


@dataclass
class CheckResult:
    name: str
    max_error: float
    trials: int
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.max_error < TOLERANCE


Builder = Callable[[np.random.Generator], Tuple[ScalarFn, np.ndarray]]


def _uniform(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(RELU_MARGIN, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _weighted(op: Callable[[Tensor], Tensor], weights: np.ndarray) -> ScalarFn:
    """Scalar probe sum(w * op(x)) so every output component gets its own upstream gradient."""
    return lambda x: ad.reduce_sum(op(x) * weights)


def _binary(op, other_shape, probe_shape, probe_second=False) -> Builder:
    def build(rng):
        other = Tensor(_uniform(rng, *other_shape))
        x = _uniform(rng, *probe_shape)
        bound = (lambda t: op(other, t)) if probe_second else (lambda t: op(t, other))
        weights = _uniform(rng, *bound(Tensor(x)).shape)
        return _weighted(bound, weights), x

    return build


def _unary(op, shape, sampler=_uniform) -> Builder:
    def build(rng):
        x = sampler(rng, *shape)
        weights = _uniform(rng, *np.shape(op(Tensor(x)).data))
        return _weighted(op, weights), x

    return build


def _cross_entropy(rng):
    labels = rng.integers(0, 5, size=4)
    weights = rng.uniform(0.5, 1.5, size=4)
    return (lambda t: ad.reduce_sum(ad.cross_entropy(t, labels) * weights)), 2.0 * _uniform(rng, 4, 5)


OPERATOR_CHECKS: Dict[str, Builder] = {
    "add[a]": _binary(ad.add, (4,), (3, 4)),
    "add[b, broadcast]": _binary(ad.add, (3, 4), (4,), probe_second=True),
    "sub[a]": _binary(ad.sub, (3, 4), (3, 4)),
    "sub[b, broadcast]": _binary(ad.sub, (3, 4), (3, 1), probe_second=True),
    "mul[a]": _binary(ad.mul, (3, 4), (3, 4)),
    "mul[b, broadcast]": _binary(ad.mul, (2, 3, 4), (3, 1), probe_second=True),
    "matmul[a]": _binary(ad.matmul, (4, 2), (3, 4)),
    "matmul[b]": _binary(ad.matmul, (3, 4), (4, 2), probe_second=True),
    "relu": _unary(ad.relu, (3, 5), sampler=_away_from_zero),
    "sum": _unary(lambda t: ad.reduce_sum(t, axis=1), (3, 4)),
    "mean": _unary(lambda t: ad.reduce_mean(t, axis=0), (3, 4)),
    "reshape": _unary(lambda t: ad.reshape(t, (3, 4)), (2, 6)),
    "transpose": _unary(ad.transpose, (3, 4)),
    "grid_mean": _unary(ad.grid_mean, (3, 2, 2)),
    "grid_mean[batch]": _unary(ad.grid_mean, (2, 3, 2, 2)),
    "conv2d[x]": _binary(lambda x, k: ad.conv2d(x, k, stride=2, padding=1), (3, 2, 3, 3), (2, 5, 5)),
    "conv2d[kernels]": _binary(
        lambda x, k: ad.conv2d(x, k, stride=1, padding=1), (2, 2, 4, 4), (3, 2, 3, 3), probe_second=True
    ),
    "l2_normalize": _unary(lambda t: ad.l2_normalize(t, axis=1), (3, 4)),
    "l2_normalize[maps]": _unary(lambda t: ad.l2_normalize(t, axis=-1), (2, 3, 6)),
    "cross_entropy": _cross_entropy,
}


E2E_NETWORK = NetworkConfig(stages=[(3, 3, 1), (4, 1, 1)], embed_dim=4, eta=5.0)
E2E_INPUT = (1, 3, 3)
E2E_OLD_CLASSES, E2E_CLASSES, E2E_BATCH = 2, 3, 3
STAGE_OFFSET = 0.5


def _condition(model: IncrementalNet, x: np.ndarray, rng: np.random.Generator, eps: float) -> None:
    """Move the biases after stage 1 so the objective is smooth around the current parameters.

    Even stage-2 channels get every pre-activation at or above +STAGE_OFFSET and odd
    ones at or below -STAGE_OFFSET, so both relu branches are exercised and no kink
    is reachable by a +-eps step of a stage-2 weight. Every active map then has a
    Frobenius norm of at least STAGE_OFFSET. The embedding bias keeps each embedding
    at norm >= 1.
    """
    with ad.no_grad():
        out = model.run(x)
    reach = eps * np.max(np.abs(out.features[0].data))
    if reach >= STAGE_OFFSET:
        raise ContractError(f"a +-{eps:g} weight step moves stage-2 pre-activations by {reach:.3g}")
    bias = model.params["stage2.bias"].data
    conv = out.preactivations[1].data - bias
    shifted = np.empty_like(bias)
    for channel in range(conv.shape[1]):
        values = conv[:, channel]
        if channel % 2 == 0:
            shifted[channel] = STAGE_OFFSET - values.min()
        else:
            shifted[channel] = -STAGE_OFFSET - values.max()
    model.params["stage2.bias"] = Tensor(shifted, requires_grad=True)

    with ad.no_grad():
        out = model.run(x)
    embed_bias = model.params["embed.bias"].data
    spread = np.max(np.linalg.norm(out.features[-1].data - embed_bias, axis=1))
    direction = rng.normal(size=embed_bias.shape)
    direction /= np.linalg.norm(direction)
    model.params["embed.bias"] = Tensor(direction * (spread + 1.0), requires_grad=True)


def _objective_builder(target: str, frobenius: bool, eps: float = DEFAULT_EPS) -> Builder:
    """Full objective CL + alpha * tau * sum DL_j as a function of one parameter tensor."""

    def build(rng):
        seed = int(rng.integers(0, 2**31))
        old_net = IncrementalNet(E2E_NETWORK, E2E_INPUT, seed)
        old_net.grow(E2E_OLD_CLASSES)
        old = old_net.snapshot()
        model = IncrementalNet(E2E_NETWORK, E2E_INPUT, seed + 1)
        model.grow(E2E_CLASSES)
        dims = [3, 4, E2E_NETWORK.embed_dim]
        table = SignificanceTable(
            normalize([rng.uniform(0.1, 1.0, size=(E2E_OLD_CLASSES, d)) for d in dims]), 0.4, 0
        )
        distill = DistillConfig(frobenius_normalize=frobenius)
        tau = temperature(E2E_CLASSES, E2E_CLASSES - E2E_OLD_CLASSES)

        x = rng.uniform(-1.0, 1.0, size=(E2E_BATCH, *E2E_INPUT))
        labels = rng.integers(0, E2E_CLASSES, size=E2E_BATCH)
        _condition(model, x, rng, eps)
        old_features, _ = old.forward_with_features(x)

        def objective(param: Tensor) -> Tensor:
            params = dict(model.params)
            params[target] = param
            out = run_forward(E2E_NETWORK, E2E_INPUT, params, Tensor(x))
            cl = classification_loss(out.logits, labels)
            losses = batch_distill_losses(
                out.features, old_features, labels, table, E2E_OLD_CLASSES, distill, {1, 2, 3}
            )
            return total_loss(cl, losses, distill.alpha, tau)

        return objective, model.params[target].data.copy()

    return build


OBJECTIVE_CHECKS: Dict[str, Builder] = {
    "objective[stage2.weight]": _objective_builder("stage2.weight", frobenius=True),
    "objective[stage2.weight, raw features]": _objective_builder("stage2.weight", frobenius=False),
    "objective[embed.weight]": _objective_builder("embed.weight", frobenius=True),
    "objective[classifier.proxies]": _objective_builder("classifier.proxies", frobenius=True),
}


def registered_checks() -> Dict[str, Builder]:
    return {**OPERATOR_CHECKS, **OBJECTIVE_CHECKS}


def run_suite(seed: int = 0, trials: int = TRIALS, eps: float = DEFAULT_EPS) -> List[CheckResult]:
    """Run every registered check on `trials` seeded inputs; keep the worst error per check."""
    results = []
    for index, (name, build) in enumerate(registered_checks().items()):
        worst, error = 0.0, None
        for trial in range(trials):
            try:
                f, x = build(np.random.default_rng([seed, index, trial]))
            except ContractError as e:
                error = f"trial {trial}: {e}"
                logger.warning("gradcheck %s could not build an input: %s", name, e)
                break
            worst = max(worst, grad_check(f, x, eps))
        logger.debug("gradcheck %s: max relative error %.3e", name, worst)
        results.append(CheckResult(name, worst, trials, error))
    return results
