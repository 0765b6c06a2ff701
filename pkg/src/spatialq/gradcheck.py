"""Central finite-difference check of the analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qnet import NetConfig, backward, forward, init_params

STEP = 1e-6
REL_TOL = 1e-4
ABS_TOL = 1e-8
SMALL_GRAD = 1e-6
# Central differences are only valid where no LeakyReLU input sits within
# reach of the step; cases are redrawn until every pre-activation clears this.
KINK_MARGIN = 1e-5


def gradient_error(analytic: float, numeric: float) -> float:
    """Relative error, or a pass/fail-scaled absolute error for tiny gradients.

    Where both gradients are below ``SMALL_GRAD`` the absolute error is
    rescaled so that ``ABS_TOL`` maps onto ``REL_TOL``.
    """
    if max(abs(analytic), abs(numeric)) < SMALL_GRAD:
        return abs(analytic - numeric) * REL_TOL / ABS_TOL
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric))


def _masks(cache) -> tuple[np.ndarray, ...]:
    return tuple(z > 0 for z in (cache.z1, cache.z2, cache.z3, cache.u))


def kink_distance(cache) -> float:
    return float(min(np.min(np.abs(z)) for z in (cache.z1, cache.z2, cache.z3, cache.u)))


def random_case(net: NetConfig, seed: int, n_frames: int, max_draws: int = 100):
    """Perturbed parameters and a positive random difference tensor.

    Deterministic per seed; draws are repeated until the case is at least
    ``KINK_MARGIN`` away from every activation kink.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        params = init_params(net, seed)
        for name, value in params.items():
            value += rng.normal(0.0, 0.3, value.shape)
        diff = 0.1 * rng.chisquare(1.0, (net.feature_count, net.band_count, n_frames))
        if kink_distance(forward(diff, params, net)[1]) >= KINK_MARGIN:
            return params, diff
    raise RuntimeError("could not draw a case away from activation kinks")


@dataclass
class CheckResult:
    config: NetConfig
    seed: int
    n_frames: int
    worst: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.worst.values())

    @property
    def passed(self) -> bool:
        return self.max_error < REL_TOL


def check_gradients(net: NetConfig, seed: int, n_frames: int) -> CheckResult:
    params, diff = random_case(net, seed, n_frames)
    _, cache = forward(diff, params, net)
    grads = backward(cache, params, net)
    masks = _masks(cache)
    worst = {}
    for name in net.trainable():
        value, grad = getattr(params, name), getattr(grads, name)
        err = 0.0
        for idx in np.ndindex(value.shape):
            keep = value[idx]
            value[idx] = keep + STEP
            plus, c_plus = forward(diff, params, net)
            value[idx] = keep - STEP
            minus, c_minus = forward(diff, params, net)
            value[idx] = keep
            if not all(np.array_equal(a, b) for c in (c_plus, c_minus) for a, b in zip(masks, _masks(c))):
                err = np.inf  # the step crossed a kink: the oracle says nothing here
                continue
            err = max(err, gradient_error(grad[idx], (plus - minus) / (2 * STEP)))
        worst[name] = err
    return CheckResult(net, seed, n_frames, worst)


def suite_configs(signal_seconds: float = 1.0) -> list[tuple[NetConfig, int]]:
    """Both feature counts, both frame lengths, with and without pre-weighting."""
    out = []
    for f in (4, 3):
        for frame_ms in (40, 400):
            for pre in (True, False):
                n_frames = max(1, int(np.ceil(signal_seconds * 1000 / frame_ms)))
                out.append((NetConfig(feature_count=f, frame_ms=frame_ms, use_preweight=pre), n_frames))
    return out


def run_suite(seeds=range(5)) -> list[CheckResult]:
    return [check_gradients(net, seed, t) for net, t in suite_configs() for seed in seeds]
