"""Tensor, gradient and optimizer helpers on top of torch.

torch supplies the tensors, the differentiable operators and reverse mode. This
module adds the pieces the project needs around them: precision selection,
mask broadcasting, a scalar-only ``backward``, Adam with a step decay of the
learning rate per epoch, a central finite-difference check, and an exact
JSON-friendly tensor encoding for checkpoints.
"""

from collections.abc import Callable, Iterable
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
from loguru import logger
from pydantic import BaseModel

from app.models.errors import ShapeMismatchError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

_DTYPES = {"float64": torch.float64, "float32": torch.float32}


def configure_precision(dtype: str = "float64") -> torch.dtype:
    """Set torch's default floating dtype; 64-bit unless speed is requested."""
    try:
        chosen = _DTYPES[dtype]
    except KeyError:
        msg = f"unknown precision '{dtype}', expected one of {sorted(_DTYPES)}"
        raise ValueError(msg) from None
    torch.set_default_dtype(chosen)
    return chosen


def as_tensor(array: Any, dtype: torch.dtype | None = None) -> torch.Tensor:
    """Copy array data into a tensor of the default (or given) dtype."""
    return torch.as_tensor(np.asarray(array), dtype=dtype or torch.get_default_dtype())


def masked_multiply(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Multiply token features by a per-(frame, joint) mask.

    ``features`` is (..., N * J, d) in frame-major token order and ``mask`` is
    (..., N, J); the mask is flattened and broadcast over the feature channel.
    """
    leading = mask.shape[:-2]
    tokens = mask.shape[-2] * mask.shape[-1]
    if features.shape[-2] != tokens or features.shape[: len(leading)] != leading:
        raise ShapeMismatchError(
            "mask", (*features.shape[:-2], features.shape[-2]), tuple(mask.shape)
        )
    return features * mask.reshape(*leading, tokens, 1).to(features.dtype)


def backward(loss: torch.Tensor) -> None:
    """Run reverse mode from a scalar, accumulating into parameter ``.grad``."""
    if loss.numel() != 1:
        raise ShapeMismatchError("backward output", "scalar", tuple(loss.shape))
    loss.backward()


class MissingGradientError(RuntimeError):
    """An optimizer step was requested before gradients were computed."""


@dataclass
class OptimizerState:
    """Adam moments plus the per-epoch step decay of the learning rate."""

    optimizer: torch.optim.Adam
    scheduler: torch.optim.lr_scheduler.StepLR
    epoch: int = 0

    @property
    def learning_rate(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    @property
    def step(self) -> int:
        steps = [
            int(state["step"])
            for state in self.optimizer.state.values()
            if "step" in state
        ]
        return max(steps, default=0)


def make_optimizer(
    params: Iterable[torch.nn.Parameter],
    learning_rate: float,
    *,
    step_size: int = 5,
    gamma: float = 0.99,
) -> OptimizerState:
    """Adam (0.9, 0.999, eps 1e-8) with the rate scaled by ``gamma`` every
    ``step_size`` epochs."""
    optimizer = torch.optim.Adam(
        list(params), lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=step_size, gamma=gamma
    )
    return OptimizerState(optimizer=optimizer, scheduler=scheduler)


def optimizer_step(params: Iterable[torch.nn.Parameter], state: OptimizerState) -> None:
    """Apply one Adam update and clear the gradients."""
    params = [p for p in params if p.requires_grad]
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if len(missing) == len(params):
        msg = "optimizer step requested but no parameter has a gradient"
        raise MissingGradientError(msg)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)


def end_epoch(state: OptimizerState) -> float:
    """Advance the learning-rate schedule by one epoch; returns the new rate."""
    state.scheduler.step()
    state.epoch += 1
    return state.learning_rate


def finite_difference_check(
    fn: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    *,
    eps: float = 1e-5,
    abs_floor: float = 1e-4,
    max_entries: int | None = None,
    generator: torch.Generator | None = None,
) -> float:
    """Maximum relative error between reverse-mode and central-difference gradients.

    ``fn`` must rebuild the scalar from the current parameter values on every
    call. Relative errors are taken against max(|analytic|, |numeric|, abs_floor).
    With ``max_entries`` only that many randomly chosen entries per parameter are
    checked.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [
        torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        for p in params
    ]

    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(params, analytic, strict=True):
            flat = param.view(-1)
            entries = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                shuffled = torch.randperm(flat.numel(), generator=generator)
                entries = shuffled[:max_entries]
            for entry in entries.tolist():
                original = flat[entry].item()
                flat[entry] = original + eps
                upper = fn().item()
                flat[entry] = original - eps
                lower = fn().item()
                flat[entry] = original
                numeric = (upper - lower) / (2.0 * eps)
                exact = grad.view(-1)[entry].item()
                scale = max(abs(exact), abs(numeric), abs_floor)
                worst = max(worst, abs(exact - numeric) / scale)
    for p in params:
        p.grad = None
    logger.debug(f"Finite-difference check: max relative error {worst:.3e}")
    return worst


class TensorRecord(BaseModel):
    """A tensor as shape, dtype name and flat values."""

    shape: list[int]
    dtype: str
    values: list[float] | list[int]


def tensor_record(tensor: torch.Tensor) -> TensorRecord:
    tensor = tensor.detach().cpu()
    dtype = str(tensor.dtype).removeprefix("torch.")
    return TensorRecord(
        shape=list(tensor.shape), dtype=dtype, values=tensor.reshape(-1).tolist()
    )


def restore_tensor(record: TensorRecord) -> torch.Tensor:
    dtype = getattr(torch, record.dtype)
    return torch.tensor(record.values, dtype=dtype).reshape(record.shape)


def encode_state(value: Any) -> Any:
    """Recursively replace tensors in a state dict by ``TensorRecord`` dumps."""
    if isinstance(value, torch.Tensor):
        return {"__tensor__": tensor_record(value).model_dump()}
    if isinstance(value, dict):
        return {str(key): encode_state(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [encode_state(item) for item in value]
    return value


def decode_state(value: Any, *, int_keys: bool = False) -> Any:
    """Inverse of ``encode_state``; ``int_keys`` restores integer dict keys."""
    if isinstance(value, dict):
        if "__tensor__" in value:
            return restore_tensor(TensorRecord.model_validate(value["__tensor__"]))
        return {
            (int(key) if int_keys and key.lstrip("-").isdigit() else key): decode_state(
                item, int_keys=int_keys
            )
            for key, item in value.items()
        }
    if isinstance(value, list):
        return [decode_state(item, int_keys=int_keys) for item in value]
    return value
