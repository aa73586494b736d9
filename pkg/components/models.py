"""
Networks of the LOVO training pipeline: the lightweight dynamic filter
front-end, the training-only dynamic embedding branch, and the TENet keyword
classifier, plus the wrapper that wires them together.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from components.layers import Linear, Module, TemporalConv, fan_in_uniform
from utils.errors import DataError, DimensionError
from utils.tensor import Tensor, as_tensor, conv2d_3x3, mean_over_time, no_grad, relu, softmax

logger = logging.getLogger("models")

N_FEATURES = 40


def _as_batch(x) -> Tensor:
    x = as_tensor(x.values if hasattr(x, "values") else x)
    return x.reshape(1, *x.shape) if x.ndim == 2 else x


def _check_features(x: Tensor, freqs: int):
    if x.ndim != 3 or x.shape[1] != freqs:
        raise DimensionError(f"expected features [B x {freqs} x T], got {x.shape}")


class DynamicFilter(Module):
    """
    Lightweight dynamic filter.

    The IDF path pools the input over time and generates a softmax-normalized
    3x3 kernel per utterance; the PDF path is a static 3x3 kernel. Output is
    the input plus both filtered maps, so the shape is preserved.
    """

    def __init__(self, rng: np.random.Generator, freqs: int = N_FEATURES, hidden: int = 40, taps: int = 9):
        super().__init__()
        if taps != 9:
            raise DimensionError(f"the dynamic filter uses a 3x3 kernel (9 taps), got {taps}")
        self.freqs = freqs
        self.taps = taps
        self.idf_fc1 = self.add_child("idf_fc1", Linear(freqs, hidden, rng))
        self.idf_fc2 = self.add_child("idf_fc2", Linear(hidden, taps, rng))
        self.pdf_kernel = self.add_param("pdf_kernel", fan_in_uniform(rng, (taps,), taps))

    def dynamic_kernel(self, x: Tensor) -> Tensor:
        pooled = mean_over_time(x)
        return softmax(self.idf_fc2.forward(relu(self.idf_fc1.forward(pooled))), axis=-1)

    def forward(self, x) -> Tensor:
        """[B x 40 x T] (or [40 x T]) -> same shape."""
        x = _as_batch(x)
        _check_features(x, self.freqs)
        dynamic = conv2d_3x3(x, self.dynamic_kernel(x))
        static = conv2d_3x3(x, self.pdf_kernel)
        return x + dynamic + static

    def flops(self, steps: int) -> Tuple[int, int]:
        plane = self.freqs * steps
        total = self.idf_fc1.flops() + self.idf_fc2.flops()
        total += plane + self.idf_fc1.out_features + 3 * self.taps  # pooling, relu, softmax
        total += 2 * (2 * self.taps * plane)  # dynamic and static 3x3 convolutions
        total += 2 * plane  # residual sum
        return total, steps


class DynamicEmbeddingModel(Module):
    """H = TAP(Conv(max(0, Conv(x', w1)), w2)) with two stride-2 temporal convolutions."""

    def __init__(self, rng: np.random.Generator, freqs: int = N_FEATURES, hidden: int = 40,
                 dim: int = 128, kernel_size: int = 9, stride: int = 2):
        super().__init__()
        self.freqs = freqs
        self.dim = dim
        self.conv1 = self.add_child("conv1", TemporalConv(freqs, hidden, kernel_size, rng, stride=stride, bias=False))
        self.conv2 = self.add_child("conv2", TemporalConv(hidden, dim, kernel_size, rng, stride=stride, bias=False))

    def forward(self, x) -> Tensor:
        """[B x 40 x T] -> [B x 128]; needs T >= 4."""
        x = _as_batch(x)
        _check_features(x, self.freqs)
        if x.shape[2] < 4:
            raise DimensionError(f"dynamic embedding needs at least 4 frames, got {x.shape[2]}")
        return mean_over_time(self.conv2.forward(relu(self.conv1.forward(x))))

    def flops(self, steps: int) -> Tuple[int, int]:
        first, steps = self.conv1.flops(steps)
        relu_count = self.conv1.out_channels * steps
        second, steps = self.conv2.flops(steps)
        return first + relu_count + second + self.dim * steps, 1


class InvertedBottleneck:
    """Pointwise expand -> depthwise temporal -> pointwise project, plus a shortcut."""

    def __init__(self, expand: TemporalConv, depthwise: TemporalConv, project: TemporalConv,
                 shortcut: Optional[TemporalConv]):
        self.expand = expand
        self.depthwise = depthwise
        self.project = project
        self.shortcut = shortcut

    def forward(self, x: Tensor) -> Tensor:
        h = relu(self.expand.forward(x))
        h = relu(self.depthwise.forward(h))
        h = self.project.forward(h)
        residual = self.shortcut.forward(x) if self.shortcut is not None else x
        return h + residual

    def flops(self, steps: int) -> Tuple[int, int]:
        total, _ = self.expand.flops(steps)
        total += self.expand.out_channels * steps
        dw, t_out = self.depthwise.flops(steps)
        total += dw + self.depthwise.out_channels * t_out
        total += self.project.flops(t_out)[0]
        if self.shortcut is not None:
            total += self.shortcut.flops(steps)[0]
        total += self.project.out_channels * t_out
        return total, t_out


class TENetClassifier(Module):
    """
    Temporal efficient network: pointwise stem, inverted bottleneck blocks,
    global average pooling to the keyword embedding E, and a linear classifier.
    """

    def __init__(self, rng: np.random.Generator, num_classes: int = 12, freqs: int = N_FEATURES,
                 channels: int = 32, blocks: int = 12, expansion: int = 3, kernel_size: int = 9,
                 stride_blocks: Sequence[int] = (1, 5)):
        super().__init__()
        self.freqs = freqs
        self.channels = channels
        self.num_classes = num_classes
        self.stem = self.add_child("stem", TemporalConv(freqs, channels, 1, rng))
        hidden = channels * expansion
        self.blocks: List[InvertedBottleneck] = []
        for index in range(1, blocks + 1):
            stride = 2 if index in stride_blocks else 1
            tag = f"block{index:02d}"
            expand = self.add_child(f"{tag}_expand", TemporalConv(channels, hidden, 1, rng))
            depthwise = self.add_child(
                f"{tag}_depthwise", TemporalConv(hidden, hidden, kernel_size, rng, stride=stride, groups=hidden))
            project = self.add_child(f"{tag}_project", TemporalConv(hidden, channels, 1, rng))
            shortcut = None
            if stride != 1:
                shortcut = self.add_child(f"{tag}_shortcut", TemporalConv(channels, channels, 1, rng, stride=stride))
            self.blocks.append(InvertedBottleneck(expand, depthwise, project, shortcut))
        self.fc = self.add_child("fc", Linear(channels, num_classes, rng))

    def forward(self, x) -> Tuple[Tensor, Tensor]:
        """[B x 40 x T] -> (E [B x 32], logits [B x num_classes])."""
        x = _as_batch(x)
        _check_features(x, self.freqs)
        h = self.stem.forward(x)
        for block in self.blocks:
            h = block.forward(h)
        embedding = mean_over_time(h)
        return embedding, self.fc.forward(embedding)

    def flops(self, steps: int) -> Tuple[int, int]:
        total, steps = self.stem.flops(steps)
        for block in self.blocks:
            block_flops, steps = block.flops(steps)
            total += block_flops
        total += self.channels * steps + self.fc.flops()
        return total, 1


@dataclass
class ModelOutput:
    filtered: Tensor
    keyword_embedding: Tensor
    logits: Tensor
    dynamic_embedding: Optional[Tensor] = None


class KwsModel(Module):
    """
    Keyword spotter: optional dynamic filter in front of the classifier. The
    dynamic embedding branch is only built for training graphs.
    """

    def __init__(self, architecture: Dict, num_classes: int, rng: np.random.Generator,
                 inference_only: bool = False, name: str = "model"):
        super().__init__()
        self.name = name
        self.architecture = dict(architecture)
        self.inference_only = inference_only
        self.filter: Optional[DynamicFilter] = None
        self.embedding: Optional[DynamicEmbeddingModel] = None
        if architecture.get("dynamic_filter", False):
            self.filter = self.add_child(
                "filter", DynamicFilter(rng, hidden=architecture.get("idf_hidden", 40),
                                        taps=architecture.get("filter_taps", 9)))
        self.tenet = self.add_child("tenet", TENetClassifier(
            rng, num_classes=num_classes,
            channels=architecture.get("channels", 32),
            blocks=architecture.get("blocks", 12),
            expansion=architecture.get("expansion", 3),
            kernel_size=architecture.get("kernel_size", 9),
            stride_blocks=tuple(architecture.get("stride_blocks", (1, 5)))))
        embedding_spec = architecture.get("embedding")
        if embedding_spec and not inference_only:
            self.embedding = self.add_child("embedding", DynamicEmbeddingModel(
                rng, hidden=embedding_spec.get("hidden", 40), dim=embedding_spec.get("dim", 128),
                kernel_size=embedding_spec.get("kernel_size", 9), stride=embedding_spec.get("stride", 2)))

    def forward(self, x, with_embedding: bool = True) -> ModelOutput:
        x = _as_batch(x)
        filtered = self.filter.forward(x) if self.filter is not None else x
        dynamic = None
        if with_embedding and self.embedding is not None:
            dynamic = self.embedding.forward(filtered)
        keyword, logits = self.tenet.forward(filtered)
        return ModelOutput(filtered, keyword, logits, dynamic)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Class ids for a batch of feature maps, without recording a graph."""
        with no_grad():
            output = self.forward(Tensor(features), with_embedding=False)
        return np.argmax(output.logits.data, axis=1)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.named_parameters()}

    def load_state_dict(self, arrays: Dict[str, np.ndarray], strict: bool = True):
        """Copy named arrays into the parameters; names absent from the model are ignored."""
        for name, tensor in self.named_parameters():
            if name not in arrays:
                if strict:
                    raise DataError(f"checkpoint is missing parameter '{name}'")
                continue
            if arrays[name].shape != tensor.shape:
                raise DataError(f"parameter '{name}' has shape {arrays[name].shape}, model expects {tensor.shape}")
            tensor.data[...] = arrays[name]


def build_model(architecture: Dict, num_classes: int, rng: np.random.Generator,
                inference_only: bool = False, name: str = "model") -> KwsModel:
    model = KwsModel(architecture, num_classes, rng, inference_only=inference_only, name=name)
    logger.debug(f"Built {name} with {model.num_params()} parameters (inference_only={inference_only})")
    return model
