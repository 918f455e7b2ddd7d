"""
Layers of the training harness, each with an explicit forward and backward
pass.

SubspaceLinear is the only compressible layer. Depending on its mode it keeps
its weight as LowRankWeight factors (wsi-only, wasi, svd-every-step) and/or
caches its input as a TuckerActivation (asi-only, wasi, svd-every-step).
Everything else (embedding, attention, normalization, activations) runs dense.

Every product goes through `contract`, so it is charged to whichever counter
the layer activates in `measure()`. Reading a weight through `effective()` is
never charged.
"""
import logging
from contextlib import nullcontext
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff.services.lowrank_linear import (
    LayerTape,
    forward_dense,
    forward_lowrank,
    grad_input_dense,
    grad_input_lowrank,
    grad_weight_dense,
    grad_weight_lowrank,
)
from rank_select.services.perplexity import probe_gradient
from subspace.services.activation_subspace import (
    RankOutOfBoundsError,
    TuckerActivation,
    asi_step,
    rank_bounds,
)
from subspace.services.weight_subspace import (
    UPDATE_SIGNS,
    WSI_VARIANTS,
    LowRankWeight,
    apply_update,
    reconstruct,
    svd_step,
    wsi_init,
    wsi_step,
)
from tensor_core.services.op_counter import OpCounter, charge, contract, suspended
from tensor_core.services.tensor_ops import ShapeMismatchError

logger = logging.getLogger(__name__)

MODES = ("vanilla", "wsi-only", "asi-only", "wasi", "svd-every-step")
WARM_START_SCOPES = ("iteration", "epoch")

LOW_RANK_WEIGHT_MODES = ("wsi-only", "wasi", "svd-every-step")
COMPRESSED_ACTIVATION_MODES = ("asi-only", "wasi", "svd-every-step")

GELU_COEFF = 0.044715
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
LAYER_NORM_EPS = 1e-5


# ───────────────────────────────────────────────────────────
# Parameters
# ───────────────────────────────────────────────────────────

class Parameter:
    """A dense trainable array and its latest gradient."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None

    def effective(self) -> np.ndarray:
        return self.value

    def step(self, direction: np.ndarray, lr: float) -> None:
        self.value = self.value - lr * direction

    @property
    def stored_elements(self) -> int:
        return int(self.value.size)

    def share_from(self, other: "Parameter") -> None:
        self.value = other.value


class SubspaceWeight(Parameter):
    """
    The weight of a SubspaceLinear seen as a parameter.

    `effective()` is the dense product L.R, formed once per step without
    touching any counter. `step()` charges that product to the layer, applies
    the update to it and re-factorizes with one WSI step, or with a truncated
    SVD in svd-every-step mode.
    """

    def __init__(self, layer: "SubspaceLinear"):
        self.layer = layer
        self.name = f"{layer.name}.weight"
        self.grad = None
        self._product: Optional[np.ndarray] = None

    @property
    def value(self) -> np.ndarray:
        return self.effective()

    def effective(self) -> np.ndarray:
        layer = self.layer
        if not layer.low_rank_weight:
            return layer.dense_weight
        if self._product is None:
            with suspended():
                self._product = reconstruct(layer.lowrank)
        return self._product

    def step(self, direction: np.ndarray, lr: float) -> None:
        layer = self.layer
        if not layer.low_rank_weight:
            layer.dense_weight = layer.dense_weight - lr * direction
            return
        base = self.effective()
        with layer.measure():
            out_features, rank = layer.lowrank.left.shape
            in_features = layer.lowrank.right.shape[1]
            charge("wsi_reconstruct", out_features * rank * in_features, out_features * (rank - 1) * in_features)
            w_eff = apply_update(layer.lowrank, direction, lr, sign=layer.update_sign, base=base)
            if layer.mode == "svd-every-step":
                layer.lowrank = svd_step(w_eff, layer.lowrank)
            else:
                seed = layer.seed + layer.lowrank.iteration + 1
                layer.lowrank = wsi_step(w_eff, layer.lowrank, variant=layer.wsi_variant, seed=seed)
        self._product = None

    @property
    def stored_elements(self) -> int:
        return self.layer.weight_elements

    def invalidate(self) -> None:
        self._product = None

    def share_from(self, other: "Parameter") -> None:
        source = other.layer
        self.layer.lowrank = source.lowrank
        self.layer.dense_weight = source.dense_weight
        self.invalidate()


# ───────────────────────────────────────────────────────────
# Modules
# ───────────────────────────────────────────────────────────

class Module:
    counter: Optional[OpCounter] = None
    counting: bool = True

    def measure(self):
        if self.counting and self.counter is not None:
            return self.counter.activate()
        return nullcontext()

    def parameters(self) -> List[Parameter]:
        return []

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self, name: str):
        value = getattr(self, name, None)
        if value is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return value


class SubspaceLinear(Module):
    """
    Bias-free linear layer y = x.W^T whose weight and cached input may be
    kept in low-rank form.

    activation_ranks: target Tucker ranks, clamped to each batch's bounds;
        None means the full bounds.
    probe_epsilon: when set, the layer caches its dense input and backward
        records a GradientProbe comparing dense and HOSVD-eps weight gradients.
    warm_start_scope: "iteration" warm-starts ASI from the previous step,
        "epoch" from the state at the start of the epoch.
    """

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        mode: str = "wasi",
        epsilon: float = 1.0,
        rank: Optional[int] = None,
        seed: int = 0,
        wsi_variant: str = "refresh",
        update_sign: str = "descent",
        warm_start_scope: str = "iteration",
        compress_batch_mode: bool = True,
        weight: Optional[np.ndarray] = None,
    ):
        if mode not in MODES:
            raise ValueError(f"Unknown mode '{mode}', expected one of {MODES}")
        if wsi_variant not in WSI_VARIANTS:
            raise ValueError(f"Unknown WSI variant '{wsi_variant}', expected one of {WSI_VARIANTS}")
        if update_sign not in UPDATE_SIGNS:
            raise ValueError(f"Unknown update sign '{update_sign}', expected one of {UPDATE_SIGNS}")
        if warm_start_scope not in WARM_START_SCOPES:
            raise ValueError(f"Unknown warm start scope '{warm_start_scope}', expected one of {WARM_START_SCOPES}")
        if in_features < 1 or out_features < 1:
            raise ValueError(f"Layer {name} needs positive widths, got {in_features}x{out_features}")

        self.name = name
        self.mode = mode
        self.in_features = in_features
        self.out_features = out_features
        self.seed = int(seed)
        self.wsi_variant = wsi_variant
        self.update_sign = update_sign
        self.warm_start_scope = warm_start_scope
        self.compress_batch_mode = compress_batch_mode

        rng = np.random.default_rng(self.seed)
        if weight is None:
            weight = rng.standard_normal((out_features, in_features)) / np.sqrt(in_features)
        elif weight.shape != (out_features, in_features):
            raise ShapeMismatchError(f"Layer {name} weight {weight.shape} is not {(out_features, in_features)}")
        self.asi_rng = rng

        self.lowrank: Optional[LowRankWeight] = None
        self.dense_weight: Optional[np.ndarray] = None
        if self.low_rank_weight:
            self.lowrank = wsi_init(weight, epsilon, rank=rank)
        else:
            self.dense_weight = np.array(weight, dtype=np.float64)

        self.activation_ranks: Optional[Tuple[int, ...]] = None
        self.tucker: Optional[TuckerActivation] = None
        self._anchor: Optional[TuckerActivation] = None
        self.tape: Optional[LayerTape] = None
        self.probe_epsilon: Optional[float] = None
        self.last_probe = None
        self.activation_elements = 0
        self.input_shape: Optional[Tuple[int, ...]] = None

        self.counter = OpCounter(name)
        self.weight = SubspaceWeight(self)

    @property
    def low_rank_weight(self) -> bool:
        return self.mode in LOW_RANK_WEIGHT_MODES

    @property
    def compress_activation(self) -> bool:
        return self.mode in COMPRESSED_ACTIVATION_MODES

    @property
    def rank(self) -> int:
        return self.lowrank.rank if self.low_rank_weight else min(self.out_features, self.in_features)

    @property
    def weight_elements(self) -> int:
        return self.lowrank.stored_elements if self.low_rank_weight else int(self.dense_weight.size)

    def parameters(self) -> List[Parameter]:
        return [self.weight]

    def start_epoch(self) -> None:
        if self.warm_start_scope == "epoch":
            self._anchor = self.tucker

    def resolve_ranks(self, shape: Sequence[int]) -> Tuple[int, ...]:
        bounds = rank_bounds(shape)
        if self.activation_ranks is None:
            ranks = bounds
        else:
            if len(self.activation_ranks) != len(bounds):
                raise RankOutOfBoundsError(
                    f"Layer {self.name}: {len(self.activation_ranks)} activation ranks for an order-{len(bounds)} input"
                )
            ranks = tuple(min(int(r), b) for r, b in zip(self.activation_ranks, bounds))
        if not self.compress_batch_mode:
            ranks = (bounds[0],) + tuple(ranks[1:])
        return tuple(ranks)

    def _compress(self, x: np.ndarray) -> TuckerActivation:
        ranks = self.resolve_ranks(x.shape)
        prev = self._anchor if self.warm_start_scope == "epoch" else self.tucker
        if prev is not None and (prev.shape != x.shape or prev.ranks != ranks):
            logger.debug(f"{self.name}: ASI cold start, {prev.shape}@{prev.ranks} -> {x.shape}@{ranks}")
            prev = None
        tucker = asi_step(x, ranks, prev=prev, rng=self.asi_rng)
        self.tucker = tucker
        if self.warm_start_scope == "epoch" and self._anchor is None:
            self._anchor = tucker
        return tucker

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        weight = self.lowrank if self.low_rank_weight else self.dense_weight
        self.input_shape = tuple(x.shape)
        with self.measure():
            y = forward_lowrank(x, weight) if self.low_rank_weight else forward_dense(x, weight)
            if train:
                if self.probe_epsilon is not None or not self.compress_activation:
                    self.tape = LayerTape(x.shape, weight, dense_input=x)
                else:
                    self.tape = LayerTape(x.shape, weight, tucker=self._compress(x))
                self.activation_elements = self.tape.stored_elements
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        tape = self._cached("tape")
        self.tape = None
        with self.measure():
            if self.probe_epsilon is not None:
                self.last_probe = probe_gradient(tape.dense_input, dy, self.probe_epsilon)
                grad_w = self.last_probe.dense_grad
            elif tape.tucker is not None:
                grad_w = grad_weight_lowrank(tape.tucker, dy)
            else:
                grad_w = grad_weight_dense(tape.dense_input, dy)
            if self.low_rank_weight:
                dx = grad_input_lowrank(dy, tape.weight)
            else:
                dx = grad_input_dense(dy, tape.weight)
        self.weight.grad = grad_w
        return dx

    def __repr__(self) -> str:
        return f"SubspaceLinear({self.name!r}, {self.in_features}->{self.out_features}, mode={self.mode}, K={self.rank})"


class Dense(Module):
    """y = x.W^T + b, always dense."""

    def __init__(self, name: str, in_features: int, out_features: int, rng: np.random.Generator):
        self.name = name
        self.w = Parameter(f"{name}.weight", rng.standard_normal((out_features, in_features)) / np.sqrt(in_features))
        self.b = Parameter(f"{name}.bias", np.zeros(out_features))
        self.x = None

    def parameters(self) -> List[Parameter]:
        return [self.w, self.b]

    def forward(self, x, train=True):
        self.x = x
        with self.measure():
            return forward_dense(x, self.w.value) + self.b.value

    def backward(self, dy):
        x = self._cached("x")
        with self.measure():
            self.w.grad = grad_weight_dense(x, dy)
            dx = grad_input_dense(dy, self.w.value)
        self.b.grad = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dx


class LayerNorm(Module):
    def __init__(self, name: str, features: int):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(features))
        self.beta = Parameter(f"{name}.beta", np.zeros(features))
        self.cache = None

    def parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def forward(self, x, train=True):
        mean = x.mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LAYER_NORM_EPS)
        xhat = (x - mean) * inv_std
        self.cache = (xhat, inv_std)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, inv_std = self._cached("cache")
        flat = (-1, dy.shape[-1])
        self.gamma.grad = (dy * xhat).reshape(flat).sum(axis=0)
        self.beta.grad = dy.reshape(flat).sum(axis=0)
        dxhat = dy * self.gamma.value
        return inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )


class GELU(Module):
    """tanh approximation."""

    def __init__(self):
        self.x = None

    def forward(self, x, train=True):
        self.x = x
        return 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + GELU_COEFF * x ** 3)))

    def backward(self, dy):
        x = self._cached("x")
        t = np.tanh(SQRT_2_OVER_PI * (x + GELU_COEFF * x ** 3))
        dt = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x ** 2)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dt)


class SelfAttention(Module):
    """Single-head self-attention over the token axis of (B, N, D), no biases."""

    def __init__(self, name: str, features: int, rng: np.random.Generator):
        self.name = name
        self.scale = 1.0 / np.sqrt(features)
        self.projections: Dict[str, Parameter] = {
            key: Parameter(f"{name}.w{key}", rng.standard_normal((features, features)) / np.sqrt(features))
            for key in ("q", "k", "v", "o")
        }
        self.cache = None

    def parameters(self) -> List[Parameter]:
        return list(self.projections.values())

    def forward(self, x, train=True):
        w = {key: p.value for key, p in self.projections.items()}
        with self.measure():
            q, k, v = (forward_dense(x, w[key]) for key in ("q", "k", "v"))
            scores = contract("bnd,bmd->bnm", q, k, operator="attention_scores") * self.scale
            scores = scores - scores.max(axis=-1, keepdims=True)
            probs = np.exp(scores)
            probs /= probs.sum(axis=-1, keepdims=True)
            mixed = contract("bnm,bmd->bnd", probs, v, operator="attention_mix")
            y = forward_dense(mixed, w["o"])
        self.cache = (x, q, k, v, probs, mixed)
        return y

    def backward(self, dy):
        x, q, k, v, probs, mixed = self._cached("cache")
        p = self.projections
        with self.measure():
            p["o"].grad = grad_weight_dense(mixed, dy)
            dmixed = grad_input_dense(dy, p["o"].value)
            dprobs = contract("bnd,bmd->bnm", dmixed, v, operator="attention_mix_grad")
            dv = contract("bnm,bnd->bmd", probs, dmixed, operator="attention_mix_grad")
            dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * self.scale
            dq = contract("bnm,bmd->bnd", dscores, k, operator="attention_scores_grad")
            dk = contract("bnm,bnd->bmd", dscores, q, operator="attention_scores_grad")
            dx = 0.0
            for key, grad in (("q", dq), ("k", dk), ("v", dv)):
                p[key].grad = grad_weight_dense(x, grad)
                dx = dx + grad_input_dense(grad, p[key].value)
        return dx


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)
