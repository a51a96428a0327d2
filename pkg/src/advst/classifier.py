"""LeNet-style digits backbone with a classification head and a projection head.

conv5x5(64) -> pool -> relu -> conv5x5(128) -> pool -> relu -> fc(1024) -> relu
-> fc(1024) -> relu gives the embedding v. Logits are a linear layer on v and the
projection u is a linear layer on v followed by L2 normalization.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .errors import ContractViolation

IMAGE_SIZE = 32
EMBED_DIM = 1024
PROJ_DIM = 128
FLAT_DIM = 128 * 5 * 5


def param_shapes(num_classes):
    return OrderedDict([
        ("conv1.weight", (64, 3, 5, 5)),
        ("conv1.bias", (64,)),
        ("conv2.weight", (128, 64, 5, 5)),
        ("conv2.bias", (128,)),
        ("fc1.weight", (FLAT_DIM, EMBED_DIM)),
        ("fc1.bias", (EMBED_DIM,)),
        ("fc2.weight", (EMBED_DIM, EMBED_DIM)),
        ("fc2.bias", (EMBED_DIM,)),
        ("classifier.weight", (EMBED_DIM, num_classes)),
        ("classifier.bias", (num_classes,)),
        ("projection.weight", (EMBED_DIM, PROJ_DIM)),
        ("projection.bias", (PROJ_DIM,)),
    ])


# uniform(-b, b) with b = sqrt(gain / fan_in)
_GAIN = {"conv1": 1.0, "conv2": 1.0, "fc1": 1.0, "fc2": 1.0, "classifier": 1.0, "projection": 1.0}


@dataclass
class ModelParams:
    arrays: "OrderedDict[str, np.ndarray]"

    @property
    def num_classes(self):
        return self.arrays["classifier.bias"].shape[0]

    def tensors(self, requires_grad=False):
        return OrderedDict((k, Tensor(v, requires_grad=requires_grad, name=k, dtype=v.dtype))
                           for k, v in self.arrays.items())

    def copy(self):
        return ModelParams(OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def astype(self, dtype):
        return ModelParams(OrderedDict((k, v.astype(dtype)) for k, v in self.arrays.items()))


@dataclass
class ForwardOutput:
    embedding: Tensor
    logits: Tensor
    projection: Tensor


def init_model(num_classes, rng, dtype=None):
    if num_classes < 2:
        raise ContractViolation(f"need at least 2 classes, got {num_classes}")
    dtype = dtype or ad.get_default_dtype()
    arrays = OrderedDict()
    for name, shape in param_shapes(num_classes).items():
        layer, kind = name.split(".")
        if kind == "bias":
            arrays[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if layer.startswith("conv") else shape[0]
        bound = np.sqrt(_GAIN[layer] / fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(arrays)


def forward(model, images):
    """Run the network. ``model`` is ModelParams or a mapping of name -> Tensor."""
    p = model.tensors() if isinstance(model, ModelParams) else model
    x = ad.as_tensor(images)
    if x.ndim != 4 or x.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
        raise ContractViolation(f"forward: expected (B, 3, 32, 32) images, got {x.shape}")
    h = ad.relu(ad.maxpool2(ad.conv2d(x, p["conv1.weight"], p["conv1.bias"])))
    h = ad.relu(ad.maxpool2(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"])))
    h = ad.reshape(h, (x.shape[0], FLAT_DIM))
    h = ad.relu(h @ p["fc1.weight"] + p["fc1.bias"])
    v = ad.relu(h @ p["fc2.weight"] + p["fc2.bias"])
    logits = v @ p["classifier.weight"] + p["classifier.bias"]
    u = ad.l2_normalize(v @ p["projection.weight"] + p["projection.bias"])
    return ForwardOutput(v, logits, u)


def predict(model, images, batch_size=256):
    """Class predictions for a numpy batch, evaluated without a graph."""
    preds = []
    with ad.no_graph():
        for i in range(0, len(images), batch_size):
            out = forward(model, Tensor(images[i:i + batch_size], dtype=_dtype(model)))
            preds.append(out.logits.data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def embed(model, images, batch_size=256):
    chunks = []
    with ad.no_graph():
        for i in range(0, len(images), batch_size):
            chunks.append(forward(model, Tensor(images[i:i + batch_size], dtype=_dtype(model))).embedding.data)
    return np.concatenate(chunks) if chunks else np.zeros((0, EMBED_DIM))


def _dtype(model):
    return next(iter(model.arrays.values())).dtype


def save_checkpoint(path, model):
    save_arrays(path, model.arrays)


def load_checkpoint(path):
    arrays = load_arrays(path)
    if "classifier.bias" not in arrays:
        raise ContractViolation(f"{path}: checkpoint lacks classifier.bias")
    expected = param_shapes(arrays["classifier.bias"].shape[0])
    for name, shape in expected.items():
        if name not in arrays:
            raise ContractViolation(f"{path}: checkpoint lacks {name}")
        if arrays[name].shape != shape:
            raise ContractViolation(f"{path}: {name} has shape {arrays[name].shape}, expected {shape}")
    return ModelParams(OrderedDict((k, arrays[k]) for k in expected))
