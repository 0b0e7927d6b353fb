"""Differentiable tensor substrate.

Every learnable layer in the package is a ``torch.nn.Module`` built from the
ops below. Autograd comes from torch; the ops here pin down the exact contracts
(error behaviour, numerically stable masking, gradient reversal) and the
finite-difference harness verifies gradients against them.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
import torch
from torch import nn


class DimensionError(ValueError):
    pass


class InvalidMaskError(ValueError):
    pass


# --------------------------------------------------------------------------
# seeded randomness
# --------------------------------------------------------------------------

def _tag_words(tags) -> list[int]:
    return [zlib.crc32(str(t).encode()) for t in tags]


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and an arbitrary tag path.

    Different tag paths give statistically independent streams, so adding a
    parameter never shifts the initial values of the others.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *_tag_words(tags)])
    return np.random.Generator(np.random.Philox(ss))


def torch_generator(seed: int, *tags) -> torch.Generator:
    s = int(derive_rng(seed, "torch", *tags).integers(0, 2**62))
    g = torch.Generator()
    g.manual_seed(s)
    return g


def glorot_(param: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)); 1-D tensors are zeroed."""
    with torch.no_grad():
        if param.dim() < 2:
            param.zero_()
            return param
        fan_in = param.shape[0]
        fan_out = int(np.prod(param.shape[1:]))
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        vals = rng.uniform(-bound, bound, size=tuple(param.shape))
        param.copy_(torch.from_numpy(vals).to(param.dtype))
    return param


def init_module(module: nn.Module, seed: int) -> nn.Module:
    """Glorot-initialise every parameter from a stream derived from its name.

    Parameters whose name ends in ``gain`` are set to one (layer-norm scales).
    """
    for name, p in module.named_parameters():
        if name.endswith("gain"):
            with torch.no_grad():
                p.fill_(1.0)
        else:
            glorot_(p, derive_rng(seed, "init", name))
    return module


# --------------------------------------------------------------------------
# ops
# --------------------------------------------------------------------------

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return a @ b


def tanh_act(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over ``dim`` restricted to entries where ``mask`` is true.

    Masked entries come out exactly zero. Every row must keep at least one
    entry; an empty row raises :class:`InvalidMaskError`.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool, device=scores.device)
    mask = mask.expand_as(scores)
    if not bool(mask.any(dim=dim).all()):
        raise InvalidMaskError("masked_softmax: a row has no unmasked entry")
    neg = torch.finfo(scores.dtype).min
    filled = scores.masked_fill(~mask, neg)
    shift = filled.max(dim=dim, keepdim=True).values.detach()
    ex = torch.exp(filled - shift) * mask
    return ex / ex.sum(dim=dim, keepdim=True)


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise DimensionError(
            f"mse_loss: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target.detach()) ** 2).mean()


def cross_entropy_loss(logits: torch.Tensor, label) -> torch.Tensor:
    """Negative log-softmax at ``label``.

    ``logits`` may be ``[n_classes]`` with an int label, or ``[B, n_classes]``
    with a label tensor (mean over the batch).
    """
    n = logits.shape[-1]
    lab = torch.as_tensor(label, dtype=torch.long)
    if bool(((lab < 0) | (lab >= n)).any()):
        raise ValueError(f"cross_entropy_loss: label {label} outside [0, {n})")
    logp = torch.log_softmax(logits, dim=-1)
    if logits.dim() == 1:
        return -logp[lab]
    return -logp.gather(-1, lab.view(-1, 1)).mean()


class _GradientReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, g):
        return -ctx.lam * g, None


def gradient_reverse(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-lam``."""
    if lam < 0:
        raise ValueError("gradient_reverse: lambda must be nonnegative")
    return _GradientReverse.apply(x, float(lam))


def backprop(loss: torch.Tensor) -> None:
    if loss.numel() != 1:
        raise DimensionError(f"backprop: loss must be scalar, got shape {tuple(loss.shape)}")
    loss.backward()


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None) -> torch.Tensor:
    """Inverted dropout with an explicit generator; identity unless training."""
    if not training or p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


# --------------------------------------------------------------------------
# parameter store
# --------------------------------------------------------------------------

@dataclass
class ParamStore:
    """Named parameters in lexicographic order."""

    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        self.tensors = dict(sorted(self.tensors.items()))

    @classmethod
    def from_module(cls, module: nn.Module, seed: int = 0) -> "ParamStore":
        return cls({k: v for k, v in module.state_dict().items()}, seed)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self.tensors.items()}

    def load_into(self, module: nn.Module) -> None:
        """Copy into ``module``; raises listing every name whose shape differs."""
        own = module.state_dict()
        bad = [f"{k}: checkpoint {tuple(v.shape)} vs model {tuple(own[k].shape)}"
               for k, v in self.tensors.items() if k in own and tuple(own[k].shape) != tuple(v.shape)]
        missing = sorted(set(own) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(own))
        if bad or missing or extra:
            parts = []
            if bad:
                parts.append("shape mismatch: " + "; ".join(bad))
            if missing:
                parts.append("missing: " + ", ".join(missing))
            if extra:
                parts.append("unexpected: " + ", ".join(extra))
            raise DimensionError("cannot load parameters (" + " | ".join(parts) + ")")
        module.load_state_dict({k: v.to(own[k].dtype) for k, v in self.tensors.items()})


# --------------------------------------------------------------------------
# finite-difference gradient check
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    nondeterministic: bool = False

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return (not self.nondeterministic) and self.worst < self.tol


def finite_difference_check(
    f: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor] | ParamStore,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``params`` are leaf tensors read by ``f``; they are perturbed in place and
    restored. ``max_coords`` limits the coordinates probed per tensor (picked
    with a fixed stride) to bound runtime on larger layers.
    """
    if isinstance(params, ParamStore):
        params = params.tensors
    params = dict(sorted(params.items()))

    def value() -> float:
        with torch.no_grad():
            return float(f())

    base = value()
    if value() != base:
        return GradCheckReport({}, tol, nondeterministic=True)

    for p in params.values():
        p.grad = None
    loss = f()
    backprop(loss)
    analytic = {k: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for k, p in params.items()}

    errors = {}
    for name, p in params.items():
        flat = p.data.view(-1)
        g = analytic[name].view(-1)
        idx = range(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            stride = flat.numel() / max_coords
            idx = sorted({int(i * stride) for i in range(max_coords)})
        worst = 0.0
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = g[i].item()
            rel = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, rel)
        errors[name] = worst
    return GradCheckReport(errors, tol)
