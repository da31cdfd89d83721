"""
Encoder-predictor ConvNet built on the tape primitives.

The encoder is a stack of [conv 2x2 -> relu -> maxpool 2x2] blocks whose last
activation is flattened into the feature vector f; the predictor is a fully
connected tanh network ending in a single sigmoid score, the probability of
Group 2.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..autodiff import ops
from ..autodiff.tape import Tape, Tensor
from ..utils.errors import ShapeError

FEATURE_NODE = "features"
INPUT_NODE = "image"

FeatureTransform = Callable[[Tensor], Tensor]


class ModelSpec(BaseModel):
    """Layer topology; the encoder/predictor boundary defines feature_dim."""
    image_size: int = Field(default=32, ge=2)
    in_channels: int = Field(default=1, ge=1)
    encoder_channels: List[int] = Field(default_factory=lambda: [4, 8, 2])
    predictor_hidden: List[int] = Field(default_factory=lambda: [16])
    feature_dim: Optional[int] = None

    @model_validator(mode="after")
    def check_topology(self) -> "ModelSpec":
        if not self.encoder_channels or any(c < 1 for c in self.encoder_channels):
            raise ValueError("encoder_channels must be a non-empty list of positive widths")
        if any(w < 1 for w in self.predictor_hidden):
            raise ValueError("predictor_hidden widths must be positive")
        if self.image_size % (2 ** len(self.encoder_channels)):
            raise ValueError(
                f"image_size {self.image_size} is not divisible by 2^{len(self.encoder_channels)}"
            )
        expected = self.final_grid ** 2 * self.encoder_channels[-1]
        if self.feature_dim is None:
            self.feature_dim = expected
        elif self.feature_dim != expected:
            raise ValueError(f"feature_dim {self.feature_dim} does not match topology ({expected})")
        return self

    @property
    def final_grid(self) -> int:
        return self.image_size // 2 ** len(self.encoder_channels)

    def parameter_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """Parameter names and shapes in declaration order."""
        shapes: List[Tuple[str, Tuple[int, ...]]] = []
        channels = self.in_channels
        for k, out_channels in enumerate(self.encoder_channels):
            shapes.append((f"encoder.{k}.weight", (out_channels, channels, ops.KERNEL_SIZE, ops.KERNEL_SIZE)))
            shapes.append((f"encoder.{k}.bias", (out_channels,)))
            channels = out_channels
        width = self.feature_dim
        for k, out_width in enumerate(list(self.predictor_hidden) + [1]):
            shapes.append((f"predictor.{k}.weight", (out_width, width)))
            shapes.append((f"predictor.{k}.bias", (out_width,)))
            width = out_width
        return shapes


class TrainingMetadata(BaseModel):
    """Provenance of a parameter set."""
    init_seed: Optional[int] = None
    train_seed: Optional[int] = None
    epochs_run: int = 0
    final_loss: Optional[float] = None


def fan_in(shape: Tuple[int, ...]) -> int:
    return int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])


@dataclass(frozen=True)
class ForwardPass:
    """Result of one forward evaluation; ``tape`` is None for unrecorded passes."""
    tape: Optional[Tape]
    image: Tensor
    feature_node: Tensor
    logit_node: Tensor
    score_node: Tensor
    parameter_nodes: Dict[str, Tensor]

    @property
    def score(self) -> float:
        return self.score_node.item()

    @property
    def logit(self) -> float:
        return self.logit_node.item()

    @property
    def features(self) -> np.ndarray:
        return self.feature_node.data


class ConvNetModel:
    """A ModelSpec plus its named parameter arrays."""

    def __init__(self, spec: ModelSpec, parameters: Dict[str, np.ndarray],
                 metadata: Optional[TrainingMetadata] = None):
        self.spec = spec
        self.metadata = metadata or TrainingMetadata()
        self.parameters: Dict[str, np.ndarray] = {}
        for name, shape in spec.parameter_shapes():
            if name not in parameters:
                raise ShapeError(f"missing parameter {name}")
            value = np.asarray(parameters[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeError(f"parameter {name} has shape {value.shape}, expected {shape}")
            self.parameters[name] = value
        extra = set(parameters) - set(self.parameters)
        if extra:
            raise ShapeError(f"unexpected parameters: {sorted(extra)}")

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    @property
    def image_shape(self) -> Tuple[int, int]:
        return (self.spec.image_size, self.spec.image_size)

    def copy(self) -> "ConvNetModel":
        return ConvNetModel(
            self.spec.model_copy(deep=True),
            {name: value.copy() for name, value in self.parameters.items()},
            self.metadata.model_copy(),
        )

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        size = self.spec.image_size
        if self.spec.in_channels == 1 and image.shape == (size, size):
            return image
        if image.shape == (self.spec.in_channels, size, size):
            return image
        raise ShapeError(f"image shape {image.shape} does not match model input {self.image_shape}")

    def encode(self, x: Tensor, params: Dict[str, Tensor]) -> Tensor:
        """Encoder stacks followed by flatten; returns the feature vector f."""
        for k in range(len(self.spec.encoder_channels)):
            x = ops.conv2d(x, params[f"encoder.{k}.weight"], params[f"encoder.{k}.bias"])
            x = ops.relu(x)
            x = ops.maxpool2(x)
        return ops.flatten(x)

    def predict(self, features: Tensor, params: Dict[str, Tensor]) -> Tuple[Tensor, Tensor]:
        """Fully connected predictor; returns (logit, score)."""
        h = features
        n_hidden = len(self.spec.predictor_hidden)
        for k in range(n_hidden):
            h = ops.tanh(ops.affine(h, params[f"predictor.{k}.weight"], params[f"predictor.{k}.bias"]))
        logit = ops.affine(h, params[f"predictor.{n_hidden}.weight"], params[f"predictor.{n_hidden}.bias"])
        return logit, ops.sigmoid(logit)

    def forward(self, image: np.ndarray, record: bool = True,
                feature_transform: Optional[FeatureTransform] = None) -> ForwardPass:
        """
        Evaluate the model on one image.

        Args:
            image: [H, W] (single channel) or [C, H, W] array.
            record: Record the computation on a fresh tape for gradient queries.
            feature_transform: Layer inserted between encoder and predictor.

        Returns:
            ForwardPass with score, features and (if recorded) the tape; the
            feature node is registered on the tape under ``FEATURE_NODE``.
        """
        image = self._check_image(image)
        tape = Tape() if record else None
        if tape is not None:
            x_in = tape.variable(image, name=INPUT_NODE)
            params = {name: tape.variable(value, name=name) for name, value in self.parameters.items()}
        else:
            x_in = Tensor(image)
            params = {name: Tensor(value) for name, value in self.parameters.items()}

        x = ops.reshape(x_in, (self.spec.in_channels, self.spec.image_size, self.spec.image_size))
        features = self.encode(x, params)
        if tape is not None:
            tape.name_node(features, FEATURE_NODE)
        predictor_input = feature_transform(features) if feature_transform is not None else features
        logit, score = self.predict(predictor_input, params)
        return ForwardPass(tape, x_in, features, logit, score, params)

    def score(self, image: np.ndarray) -> float:
        return self.forward(image, record=False).score

    def features(self, image: np.ndarray) -> np.ndarray:
        return self.forward(image, record=False).features.copy()


def init_parameters(spec: ModelSpec, seed: int) -> Dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng(seed)
    shapes = spec.parameter_shapes()
    parameters: Dict[str, np.ndarray] = {}
    # biases share the fan-in of their layer's weight
    for (w_name, w_shape), (b_name, b_shape) in zip(shapes[0::2], shapes[1::2]):
        bound = 1.0 / np.sqrt(fan_in(w_shape))
        parameters[w_name] = rng.uniform(-bound, bound, size=w_shape)
        parameters[b_name] = rng.uniform(-bound, bound, size=b_shape)
    return parameters


def build_synthetic_model(seed: int) -> ConvNetModel:
    """Three [conv-relu-pool] stacks 1->4->8->2 (32 features), predictor 32->16 tanh->1 sigmoid."""
    spec = ModelSpec()
    return ConvNetModel(spec, init_parameters(spec, seed), TrainingMetadata(init_seed=seed))


def forward(model: ConvNetModel, image: np.ndarray) -> ForwardPass:
    """Recorded forward pass (score, features, tape)."""
    return model.forward(image, record=True)
