"""
Toy classifiers for the training harness.

    mlp       tokens -> SubspaceLinear -> GELU -> SubspaceLinear -> mean over tokens
    block     dense embedding, single-head attention and an MLP whose two
              linear layers are SubspaceLinear, each behind LayerNorm with a
              residual; mean over tokens; dense head
    windowed  the block with its MLP run on (B, H, W, C) windows

A sample of F features is read as N tokens of F/N features each.
"""
import copy
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from tensor_core.services.op_counter import OpCounter
from training.services.layers import (
    GELU,
    MODES,
    Dense,
    LayerNorm,
    Module,
    Parameter,
    SelfAttention,
    SubspaceLinear,
    cross_entropy,
)

logger = logging.getLogger(__name__)

MODEL_KINDS = ("mlp", "block", "windowed")


class InvalidModelSpecError(ValueError):
    pass


@dataclass
class ModelSpec:
    kind: str = "mlp"
    features: int = 16
    classes: int = 2
    tokens: int = 4
    hidden: int = 32
    width: int = 16
    window: Tuple[int, int] = (2, 2)
    mode: str = "wasi"
    epsilon: float = 1.0
    rank: Optional[int] = None
    wsi_variant: str = "refresh"
    update_sign: str = "descent"
    warm_start_scope: str = "iteration"
    compress_batch_mode: bool = True
    seed: int = 233

    def __post_init__(self):
        self.window = tuple(int(v) for v in self.window)
        if self.kind not in MODEL_KINDS:
            raise InvalidModelSpecError(f"Unknown model kind '{self.kind}', expected one of {MODEL_KINDS}")
        if self.mode not in MODES:
            raise InvalidModelSpecError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        for name in ("features", "tokens", "hidden", "width"):
            if getattr(self, name) < 1:
                raise InvalidModelSpecError(f"{name} must be positive, got {getattr(self, name)}")
        if self.classes < 2:
            raise InvalidModelSpecError(f"Need at least 2 classes, got {self.classes}")
        if self.features % self.tokens:
            raise InvalidModelSpecError(f"{self.features} features do not split into {self.tokens} tokens")
        if self.kind == "windowed" and self.window[0] * self.window[1] != self.tokens:
            raise InvalidModelSpecError(f"Window {self.window} does not hold {self.tokens} tokens")
        if not 0.0 < self.epsilon <= 1.0:
            raise InvalidModelSpecError(f"epsilon must lie in (0, 1], got {self.epsilon}")

    @property
    def token_features(self) -> int:
        return self.features // self.tokens

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["window"] = list(self.window)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(**data)


class Model:
    """Common plumbing: counting, probing, replication, loss."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.dense_counter = OpCounter("dense")
        self.modules: List[Module] = []

    def _register(self, module: Module) -> Module:
        if not isinstance(module, SubspaceLinear):
            module.counter = self.dense_counter
        self.modules.append(module)
        return module

    def _subspace(self, index: int, in_features: int, out_features: int) -> SubspaceLinear:
        spec = self.spec
        return self._register(SubspaceLinear(
            f"layer{index}", in_features, out_features,
            mode=spec.mode,
            epsilon=spec.epsilon,
            rank=None if spec.rank is None else min(spec.rank, in_features, out_features),
            seed=spec.seed * 1009 + index,
            wsi_variant=spec.wsi_variant,
            update_sign=spec.update_sign,
            warm_start_scope=spec.warm_start_scope,
            compress_batch_mode=spec.compress_batch_mode,
        ))

    @property
    def subspace_layers(self) -> List[SubspaceLinear]:
        return [m for m in self.modules if isinstance(m, SubspaceLinear)]

    def parameters(self) -> List[Parameter]:
        return [p for m in self.modules for p in m.parameters()]

    @property
    def parameter_count(self) -> int:
        return sum(p.stored_elements for p in self.parameters())

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dlogits: np.ndarray) -> None:
        raise NotImplementedError

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> float:
        loss, dlogits = cross_entropy(self.forward(x, train=True), y)
        self.backward(dlogits)
        return loss

    def predict(self, x: np.ndarray) -> np.ndarray:
        with self.uncounted():
            return self.forward(x, train=False).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y)) if len(y) else 0.0

    @contextmanager
    def uncounted(self) -> Iterator[None]:
        previous = [m.counting for m in self.modules]
        for m in self.modules:
            m.counting = False
        try:
            yield
        finally:
            for m, flag in zip(self.modules, previous):
                m.counting = flag

    @contextmanager
    def probing(self, epsilon: float) -> Iterator[None]:
        layers = self.subspace_layers
        with self.uncounted():
            for layer in layers:
                layer.probe_epsilon = float(epsilon)
                layer.last_probe = None
            try:
                yield
            finally:
                for layer in layers:
                    layer.probe_epsilon = None

    def start_epoch(self) -> None:
        for layer in self.subspace_layers:
            layer.start_epoch()

    def reset_counters(self) -> None:
        self.dense_counter.reset()
        for layer in self.subspace_layers:
            layer.counter.reset()

    def replicate(self) -> "Model":
        replica = copy.deepcopy(self)
        replica.reset_counters()
        replica.share_weights_from(self)
        return replica

    def share_weights_from(self, other: "Model") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine.share_from(theirs)

    def _tokens(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.spec.features:
            raise InvalidModelSpecError(f"Expected (B, {self.spec.features}) inputs, got {x.shape}")
        return x.reshape(len(x), self.spec.tokens, self.spec.token_features)


class MLPModel(Model):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.fc1 = self._subspace(0, spec.token_features, spec.hidden)
        self.act = self._register(GELU())
        self.fc2 = self._subspace(1, spec.hidden, spec.classes)

    def forward(self, x, train=True):
        h = self.act.forward(self.fc1.forward(self._tokens(x), train), train)
        return self.fc2.forward(h, train).mean(axis=1)

    def backward(self, dlogits):
        tokens = self.spec.tokens
        dz = np.repeat(dlogits[:, None, :] / tokens, tokens, axis=1)
        self.fc1.backward(self.act.backward(self.fc2.backward(dz)))


class BlockModel(Model):
    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        rng = np.random.default_rng([spec.seed, len(MODEL_KINDS)])
        self.embed = self._register(Dense("embed", spec.token_features, spec.width, rng))
        self.ln1 = self._register(LayerNorm("ln1", spec.width))
        self.attn = self._register(SelfAttention("attn", spec.width, rng))
        self.ln2 = self._register(LayerNorm("ln2", spec.width))
        self.fc1 = self._subspace(0, spec.width, spec.hidden)
        self.act = self._register(GELU())
        self.fc2 = self._subspace(1, spec.hidden, spec.width)
        self.head = self._register(Dense("head", spec.width, spec.classes, rng))

    def _to_mlp(self, h: np.ndarray) -> np.ndarray:
        if self.spec.kind == "windowed":
            return h.reshape((len(h),) + self.spec.window + (h.shape[-1],))
        return h

    def _from_mlp(self, h: np.ndarray) -> np.ndarray:
        return h.reshape(len(h), self.spec.tokens, h.shape[-1])

    def forward(self, x, train=True):
        h0 = self.embed.forward(self._tokens(x), train)
        h1 = h0 + self.attn.forward(self.ln1.forward(h0, train), train)
        u = self._to_mlp(self.ln2.forward(h1, train))
        m = self.fc2.forward(self.act.forward(self.fc1.forward(u, train), train), train)
        h2 = h1 + self._from_mlp(m)
        return self.head.forward(h2.mean(axis=1), train)

    def backward(self, dlogits):
        tokens = self.spec.tokens
        dpooled = self.head.backward(dlogits)
        dh2 = np.repeat(dpooled[:, None, :] / tokens, tokens, axis=1)
        du = self.fc1.backward(self.act.backward(self.fc2.backward(self._to_mlp(dh2))))
        dh1 = dh2 + self.ln2.backward(self._from_mlp(du))
        dh0 = dh1 + self.ln1.backward(self.attn.backward(dh1))
        self.embed.backward(dh0)


def build_model(spec: ModelSpec) -> Model:
    model = MLPModel(spec) if spec.kind == "mlp" else BlockModel(spec)
    logger.debug(
        f"Built {spec.kind} model in {spec.mode} mode: "
        + ", ".join(repr(layer) for layer in model.subspace_layers)
    )
    return model
