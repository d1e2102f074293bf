"""The incremental model M = g(P(F(x))).

F is a stack of conv/relu stages producing features f_1..f_{L-1}, P a dense
embedder producing f_L, and g a cosine classifier with one proxy per class seen
so far and a scale eta.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import NetworkConfig
from .errors import ContractError, DimensionError, FormatError
from .serialization import read_tensors, write_tensors

logger = logging.getLogger(__name__)

Shape3 = Tuple[int, int, int]


class ForwardOutput(NamedTuple):
    features: List[Tensor]
    logits: Tensor
    preactivations: List[Tensor]


def parameter_names(num_stages: int) -> List[str]:
    """Parameter order used for snapshots and model files."""
    names = []
    for index in range(1, num_stages + 1):
        names += [f"stage{index}.weight", f"stage{index}.bias"]
    return names + ["embed.weight", "embed.bias", "classifier.proxies", "classifier.eta"]


def stage_shapes(config: NetworkConfig, input_shape: Shape3) -> List[Shape3]:
    """Output shape (d_j, h_j, w_j) of every conv stage."""
    shapes = []
    channels, h, w = input_shape
    for channels_out, kernel, stride in config.stages:
        padding = kernel // 2
        if kernel > h + 2 * padding or kernel > w + 2 * padding:
            raise DimensionError(f"stage kernel {kernel} larger than padded input {(channels, h, w)}")
        h = (h + 2 * padding - kernel) // stride + 1
        w = (w + 2 * padding - kernel) // stride + 1
        channels = channels_out
        shapes.append((channels, h, w))
    return shapes


def cosine_logits(embed: Tensor, proxies: Tensor, eta: Tensor) -> Tensor:
    """eta * cos(embed_k, proxy_c) for every sample k and class c."""
    if proxies.shape[0] == 0:
        raise ContractError("classifier has no classes; grow it before the forward pass")
    norms = np.linalg.norm(proxies.data, axis=1)
    if not np.all(norms > 0):
        dead = np.flatnonzero(~(norms > 0)).tolist()
        raise ContractError(f"classifier proxies {dead} have zero norm")
    directions = ad.l2_normalize(proxies, axis=1)
    return ad.matmul(ad.l2_normalize(embed, axis=1), ad.transpose(directions)) * eta


def run_forward(
    config: NetworkConfig, input_shape: Shape3, params: Mapping[str, Tensor], x: Tensor
) -> ForwardOutput:
    """Forward a batch through F, P and g, keeping every feature f_1..f_L."""
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(input_shape):
        raise DimensionError(f"input batch {x.shape} does not match input shape {tuple(input_shape)}")
    hidden = x
    features, preactivations = [], []
    for index, (_, kernel, stride) in enumerate(config.stages, start=1):
        z = ad.conv2d(hidden, params[f"stage{index}.weight"], stride=stride, padding=kernel // 2)
        z = z + params[f"stage{index}.bias"]
        hidden = ad.relu(z)
        preactivations.append(z)
        features.append(hidden)
    flat = hidden.reshape(x.shape[0], -1)
    embed = ad.matmul(flat, params["embed.weight"]) + params["embed.bias"]
    features.append(embed)
    logits = cosine_logits(embed, params["classifier.proxies"], params["classifier.eta"])
    return ForwardOutput(features, logits, preactivations)


def as_batch(x: Union[Tensor, np.ndarray]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def classification_loss(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean cross-entropy over the batch."""
    return ad.reduce_mean(ad.cross_entropy(logits, labels))


@dataclass(frozen=True)
class ModelSnapshot:
    """Frozen copy of all parameters at the end of a task (the old model)."""

    config: NetworkConfig
    input_shape: Shape3
    task_id: int
    arrays: Mapping[str, np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.arrays["classifier.proxies"].shape[0]

    def forward_with_features(self, x: Union[Tensor, np.ndarray]) -> Tuple[List[Tensor], Tensor]:
        params = {name: Tensor(array) for name, array in self.arrays.items()}
        with ad.no_grad():
            out = run_forward(self.config, self.input_shape, params, as_batch(x))
        return out.features, out.logits


class IncrementalNet:
    """Live model whose classifier grows by one proxy per new class.

    Args:
        config: Stage layout, embedder width and eta
        input_shape: (channels, h, w) of one sample
        seed: Master seed; every random draw of the model derives from it
    """

    def __init__(self, config: NetworkConfig, input_shape: Shape3, seed: int):
        self.config = config
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.task_id = 0
        rng = np.random.default_rng([seed, 0])
        params: Dict[str, Tensor] = {}
        channels_in = self.input_shape[0]
        for index, (channels_out, kernel, _) in enumerate(config.stages, start=1):
            fan_in = channels_in * kernel * kernel
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(channels_out, channels_in, kernel, kernel))
            params[f"stage{index}.weight"] = Tensor(weight, requires_grad=True)
            params[f"stage{index}.bias"] = Tensor(np.zeros((channels_out, 1, 1)), requires_grad=True)
            channels_in = channels_out
        flat_dim = int(np.prod(stage_shapes(config, self.input_shape)[-1]))
        embed = rng.normal(0.0, np.sqrt(1.0 / flat_dim), size=(flat_dim, config.embed_dim))
        params["embed.weight"] = Tensor(embed, requires_grad=True)
        params["embed.bias"] = Tensor(np.zeros(config.embed_dim), requires_grad=True)
        params["classifier.proxies"] = Tensor(np.zeros((0, config.embed_dim)), requires_grad=True)
        params["classifier.eta"] = Tensor([config.eta], requires_grad=config.learn_eta)
        self.params = params

    @property
    def num_classes(self) -> int:
        return self.params["classifier.proxies"].shape[0]

    def parameters(self) -> List[Tensor]:
        """Trainable tensors in file order."""
        return [self.params[name] for name in self.names() if self.params[name].requires_grad]

    def names(self) -> List[str]:
        return parameter_names(len(self.config.stages))

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def grow(self, c_new: int) -> None:
        """Append c_new unit-norm proxies; existing proxies stay bit-identical."""
        if c_new < 1:
            raise ContractError(f"grow needs at least one new class, got {c_new}")
        old = self.params["classifier.proxies"].data
        rng = np.random.default_rng([self.seed, 1, old.shape[0]])
        fresh = rng.normal(0.0, 1.0, size=(c_new, self.config.embed_dim))
        fresh /= np.linalg.norm(fresh, axis=1, keepdims=True)
        self.params["classifier.proxies"] = Tensor(np.concatenate([old, fresh]), requires_grad=True)
        logger.debug("classifier grown by %d to %d classes", c_new, self.num_classes)

    def run(self, x: Union[Tensor, np.ndarray]) -> ForwardOutput:
        return run_forward(self.config, self.input_shape, self.params, as_batch(x))

    def forward_with_features(self, x: Union[Tensor, np.ndarray]) -> Tuple[List[Tensor], Tensor]:
        out = self.run(x)
        return out.features, out.logits

    def snapshot(self) -> ModelSnapshot:
        arrays = {}
        for name in self.names():
            array = self.params[name].data.copy()
            array.flags.writeable = False
            arrays[name] = array
        return ModelSnapshot(self.config, self.input_shape, self.task_id, MappingProxyType(arrays))

    @classmethod
    def from_snapshot(cls, snapshot: ModelSnapshot, seed: int) -> "IncrementalNet":
        """Initialize a live model from a snapshot (M^t <- M^{t-1})."""
        model = cls(snapshot.config, snapshot.input_shape, seed)
        model.load_arrays([snapshot.arrays[name] for name in model.names()])
        model.task_id = snapshot.task_id
        return model

    def load_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        names = self.names()
        if len(arrays) != len(names):
            raise DimensionError(f"expected {len(names)} parameter tensors, got {len(arrays)}")
        for name, array in zip(names, arrays):
            current = self.params[name]
            if name != "classifier.proxies" and array.shape != current.shape:
                raise DimensionError(f"{name}: file shape {array.shape} != model shape {current.shape}")
            self.params[name] = Tensor(array, requires_grad=current.requires_grad)

    def save(self, path: Union[str, Path]) -> None:
        write_tensors(path, [self.params[name].data for name in self.names()])


def load_model(path: Union[str, Path], config: NetworkConfig, input_shape: Shape3, seed: int = 0) -> IncrementalNet:
    """Rebuild a model from a parameter file written by `IncrementalNet.save`."""
    model = IncrementalNet(config, input_shape, seed)
    try:
        model.load_arrays(read_tensors(path))
    except DimensionError as e:
        raise FormatError(str(path), str(e)) from e
    return model
