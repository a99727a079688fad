"""Tied-weight convolutional autoencoder over binary street-network rasters.

The encoder is a chain of strided 'same' convolutions with ReLU; the decoder
mirrors it with transposed convolutions reusing the encoder kernels in
reverse order (decoder layer i reuses encoder kernel L-1-i with in/out roles
swapped). Decoder biases are independent parameters. Flattened bottleneck
activations are the "urban vectors" served downstream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import (
    ConvKernel,
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    conv2d_transpose_backward,
    conv2d_transpose_forward,
    conv_output_size,
    mse_loss,
    read_tensor,
    relu_backward,
    relu_forward,
    write_tensor,
)

CHECKPOINT_MAGIC = b"MSCK"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Raised for inconsistent model or training configuration."""


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss."""

    def __init__(self, epoch: int, batch_index: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass(frozen=True)
class CaeConfig:
    encoder_channels: tuple[int, ...] = (15, 15, 15, 10, 10)
    kernel_size: int = 5
    stride: int = 2
    input_size: int = 256
    input_channels: int = 1
    tied_weights: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if not self.encoder_channels or any(c < 1 for c in self.encoder_channels):
            raise ConfigError(f"bad encoder_channels {self.encoder_channels}")
        if min(self.kernel_size, self.stride, self.input_size, self.input_channels) < 1:
            raise ConfigError("kernel_size, stride, input_size and input_channels must be >= 1")

    @property
    def spatial_chain(self) -> tuple[int, ...]:
        """Spatial size after each layer, starting at the input size."""
        sizes = [self.input_size]
        for _ in self.encoder_channels:
            sizes.append(conv_output_size(sizes[-1], self.stride))
        return tuple(sizes)

    @property
    def bottleneck_size(self) -> int:
        size = self.input_size
        for _ in self.encoder_channels:
            size = conv_output_size(size, self.stride)
        return size

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        return (self.bottleneck_size, self.bottleneck_size, self.encoder_channels[-1])

    @property
    def vector_length(self) -> int:
        h, w, c = self.bottleneck_shape
        return h * w * c

    def to_dict(self) -> dict:
        return {
            "encoder_channels": list(self.encoder_channels),
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "input_size": self.input_size,
            "input_channels": self.input_channels,
            "tied_weights": self.tied_weights,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaeConfig":
        return cls(
            encoder_channels=tuple(d["encoder_channels"]),
            kernel_size=d["kernel_size"],
            stride=d["stride"],
            input_size=d["input_size"],
            input_channels=d["input_channels"],
            tied_weights=d["tied_weights"],
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 50
    learning_rate: float = 1e-3
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    checkpoint_every: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "bce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "shuffle_seed": self.shuffle_seed,
            "checkpoint_every": self.checkpoint_every,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class UrbanVector:
    place_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)


@dataclass
class CaeModel:
    config: CaeConfig
    encoder_kernels: list[ConvKernel]
    decoder_biases: list[np.ndarray]
    rng_seed: int
    decoder_kernels: list[ConvKernel] | None = None  # only when untied

    @property
    def n_layers(self) -> int:
        return len(self.encoder_kernels)

    def decoder_kernel(self, i: int) -> ConvKernel:
        if self.config.tied_weights:
            return self.encoder_kernels[self.n_layers - 1 - i]
        return self.decoder_kernels[i]

    def parameter_arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (weights are shared when tied)."""
        params: list[np.ndarray] = []
        for k in self.encoder_kernels:
            params.append(k.weights)
            params.append(k.bias)
        if not self.config.tied_weights:
            for k in self.decoder_kernels:
                params.append(k.weights)
        params.extend(self.decoder_biases)
        return params

    def weight_count(self) -> int:
        n = sum(k.weights.size for k in self.encoder_kernels)
        if not self.config.tied_weights:
            n += sum(k.weights.size for k in self.decoder_kernels)
        return n


def build_model(config: CaeConfig, seed: int) -> CaeModel:
    """Initialize kernels with scaled-uniform bounds sqrt(6/fan_in); biases zero."""
    rng = np.random.default_rng(seed)
    ks = config.kernel_size
    kernels = []
    in_ch = config.input_channels
    for out_ch in config.encoder_channels:
        bound = np.sqrt(6.0 / (ks * ks * in_ch))
        w = rng.uniform(-bound, bound, size=(ks, ks, in_ch, out_ch)).astype(np.float32)
        kernels.append(ConvKernel(w, np.zeros(out_ch, np.float32)))
        in_ch = out_ch
    decoder_kernels = None
    if not config.tied_weights:
        decoder_kernels = []
        for i in range(len(kernels)):
            mirror = kernels[len(kernels) - 1 - i]
            bound = np.sqrt(6.0 / (ks * ks * mirror.out_channels))
            w = rng.uniform(-bound, bound, size=mirror.weights.shape).astype(np.float32)
            decoder_kernels.append(ConvKernel(w, np.zeros(mirror.out_channels, np.float32)))
    decoder_biases = [
        np.zeros(kernels[len(kernels) - 1 - i].in_channels, np.float32)
        for i in range(len(kernels))
    ]
    return CaeModel(config, kernels, decoder_biases, int(seed), decoder_kernels)


def _check_batch(model: CaeModel, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float32)
    cfg = model.config
    if batch.ndim == 3:
        batch = batch[..., None]
    expected = (cfg.input_size, cfg.input_size, cfg.input_channels)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ShapeError(f"batch shape {batch.shape} does not match {('B',) + expected}")
    return batch


def encode(model: CaeModel, batch: np.ndarray) -> np.ndarray:
    """Bottleneck activations [B, h, w, c] after the conv+ReLU encoder chain."""
    x = _check_batch(model, batch)
    for kernel in model.encoder_kernels:
        x = relu_forward(conv2d_forward(x, kernel, model.config.stride))
    return x


def decode(model: CaeModel, code: np.ndarray) -> np.ndarray:
    """Mirror the encoder back up its spatial chain with tied transposed convs."""
    cfg = model.config
    code = np.asarray(code, dtype=np.float32)
    h, w, c = cfg.bottleneck_shape
    if code.ndim != 4 or code.shape[1:] != (h, w, c):
        raise ShapeError(f"code shape {code.shape} does not match {('B', h, w, c)}")
    chain = cfg.spatial_chain
    y = code
    for i in range(model.n_layers):
        kernel = model.decoder_kernel(i)
        out_size = chain[model.n_layers - 1 - i]
        y = conv2d_transpose_forward(
            y, kernel, cfg.stride, (out_size, out_size), bias=model.decoder_biases[i]
        )
        y = relu_forward(y)
    return y


def reconstruct(model: CaeModel, batch: np.ndarray) -> np.ndarray:
    return decode(model, encode(model, batch))


def _bce_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy on clamped predictions; optional alternative to MSE."""
    eps = 1e-6
    p = np.clip(prediction.astype(np.float64), eps, 1.0 - eps)
    t = target.astype(np.float64)
    n = p.size
    loss = float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).sum() / n)
    grad = ((p - t) / (p * (1 - p)) / n)
    grad = np.where((prediction > eps) & (prediction < 1 - eps), grad, 0.0)
    return loss, grad.astype(np.float32)


def forward_backward(model: CaeModel, batch: np.ndarray, loss_kind: str = "mse"):
    """Reconstruction loss plus gradients for every parameter array.

    Returns (loss, grads) where grads aligns with model.parameter_arrays().
    Tied kernels receive the sum of their encoder-side and decoder-side
    contributions.
    """
    cfg = model.config
    x = _check_batch(model, batch)
    stride = cfg.stride
    chain = cfg.spatial_chain
    n_layers = model.n_layers

    enc_inputs, enc_pres = [], []
    h = x
    for kernel in model.encoder_kernels:
        enc_inputs.append(h)
        pre = conv2d_forward(h, kernel, stride)
        enc_pres.append(pre)
        h = relu_forward(pre)

    dec_inputs, dec_pres = [], []
    y = h
    for i in range(n_layers):
        kernel = model.decoder_kernel(i)
        out_size = chain[n_layers - 1 - i]
        dec_inputs.append(y)
        pre = conv2d_transpose_forward(y, kernel, stride, (out_size, out_size), bias=model.decoder_biases[i])
        dec_pres.append(pre)
        y = relu_forward(pre)

    if loss_kind == "mse":
        loss, g = mse_loss(y, x)
    else:
        loss, g = _bce_loss(y, x)

    enc_w_grads = [np.zeros_like(k.weights, dtype=np.float64) for k in model.encoder_kernels]
    dec_w_grads = None
    if not cfg.tied_weights:
        dec_w_grads = [np.zeros_like(k.weights, dtype=np.float64) for k in model.decoder_kernels]
    enc_b_grads = [None] * n_layers
    dec_b_grads = [None] * n_layers

    for i in reversed(range(n_layers)):
        kernel = model.decoder_kernel(i)
        out_size = chain[n_layers - 1 - i]
        dz = relu_backward(dec_pres[i], g)
        gy, gw, gb = conv2d_transpose_backward(dec_inputs[i], kernel, stride, (out_size, out_size), dz)
        if cfg.tied_weights:
            enc_w_grads[n_layers - 1 - i] += gw.astype(np.float64)
        else:
            dec_w_grads[i] += gw.astype(np.float64)
        dec_b_grads[i] = gb
        g = gy

    for j in reversed(range(n_layers)):
        dpre = relu_backward(enc_pres[j], g)
        gx, gw, gb = conv2d_backward(enc_inputs[j], model.encoder_kernels[j], stride, dpre)
        enc_w_grads[j] += gw.astype(np.float64)
        enc_b_grads[j] = gb
        g = gx

    grads: list[np.ndarray] = []
    for j in range(n_layers):
        grads.append(enc_w_grads[j].astype(np.float32))
        grads.append(enc_b_grads[j])
    if not cfg.tied_weights:
        grads.extend(gw.astype(np.float32) for gw in dec_w_grads)
    grads.extend(dec_b_grads)
    return loss, grads


class _Optimizer:
    """SGD-with-momentum or Adam over a fixed list of parameter arrays."""

    def __init__(self, tc: TrainConfig, params: list[np.ndarray]):
        self.tc = tc
        self.params = params
        self.slot1 = [np.zeros_like(p) for p in params]  # momentum / adam m
        self.slot2 = [np.zeros_like(p) for p in params] if tc.optimizer == "adam" else []
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        tc = self.tc
        self.t += 1
        if tc.optimizer == "sgd_momentum":
            for p, v, g in zip(self.params, self.slot1, grads):
                v *= tc.momentum
                v += g
                p -= tc.learning_rate * v
        else:
            b1, b2 = tc.beta1, tc.beta2
            correction = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
            for p, m, v, g in zip(self.params, self.slot1, self.slot2, grads):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= (tc.learning_rate * correction) * m / (np.sqrt(v) + tc.adam_eps)

    def state_arrays(self) -> list[np.ndarray]:
        return list(self.slot1) + list(self.slot2)

    def load_state(self, arrays: list[np.ndarray], t: int) -> None:
        n1 = len(self.slot1)
        for buf, arr in zip(self.slot1, arrays[:n1]):
            buf[...] = arr
        for buf, arr in zip(self.slot2, arrays[n1:]):
            buf[...] = arr
        self.t = t


def _epoch_order(shuffle_seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((int(shuffle_seed), int(epoch))).permutation(n)


def train(
    model: CaeModel,
    images: np.ndarray,
    tc: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[CaeModel, list[float]]:
    """Minibatch reconstruction training; deterministic given tc.shuffle_seed.

    images: [N, H, W] or [N, H, W, C] array of binary rasters. Returns the
    trained model (updated in place) and the per-epoch mean loss curve.
    """
    data = np.asarray(images, dtype=np.float32)
    if data.ndim == 3:
        data = data[..., None]
    if data.shape[0] == 0:
        raise ConfigError("training dataset is empty")
    if data.shape[1:] != (model.config.input_size, model.config.input_size, model.config.input_channels):
        raise ShapeError(
            f"images shape {data.shape} does not match configured input "
            f"{(model.config.input_size, model.config.input_size, model.config.input_channels)}"
        )

    opt = _Optimizer(tc, model.parameter_arrays())
    start_epoch = 0
    loss_curve: list[float] = []
    if resume_from is not None:
        loaded, meta = load_checkpoint(resume_from)
        _copy_model_params(loaded, model)
        opt.load_state(meta["optimizer_arrays"], meta["optimizer_t"])
        start_epoch = meta["epoch"]
        loss_curve = list(meta.get("loss_curve", []))

    n = data.shape[0]
    for epoch in range(start_epoch, tc.epochs):
        order = _epoch_order(tc.shuffle_seed, epoch, n)
        total = 0.0
        for bi, start in enumerate(range(0, n, tc.batch_size)):
            batch = data[order[start : start + tc.batch_size]]
            loss, grads = forward_backward(model, batch, tc.loss)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, bi)
            opt.step(grads)
            total += loss * batch.shape[0]
        loss_curve.append(total / n)
        if checkpoint_dir is not None and tc.checkpoint_every > 0 and (epoch + 1) % tc.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"checkpoint-{epoch + 1:04d}.msck"
            save_checkpoint(path, model, tc=tc, epoch=epoch + 1, optimizer=opt, loss_curve=loss_curve)
            save_checkpoint(Path(checkpoint_dir) / "latest.msck", model, tc=tc, epoch=epoch + 1, optimizer=opt, loss_curve=loss_curve)
    return model, loss_curve


def _copy_model_params(src: CaeModel, dst: CaeModel) -> None:
    if src.config != dst.config:
        raise ConfigError("checkpoint config does not match model config")
    for a, b in zip(src.parameter_arrays(), dst.parameter_arrays()):
        b[...] = a


def extract_urban_vectors(
    model: CaeModel, images: np.ndarray, place_ids: Sequence[str], batch_size: int = 50
) -> list[UrbanVector]:
    """Encode every image and flatten the bottleneck row-major [h, w, c]."""
    data = np.asarray(images, dtype=np.float32)
    if data.ndim == 3:
        data = data[..., None]
    if len(place_ids) != data.shape[0]:
        raise ConfigError(f"{len(place_ids)} place ids for {data.shape[0]} images")
    if data.shape[1] != model.config.input_size:
        raise ConfigError(
            f"corpus image size {data.shape[1]} does not match model input {model.config.input_size}"
        )
    out: list[UrbanVector] = []
    for start in range(0, data.shape[0], batch_size):
        codes = encode(model, data[start : start + batch_size])
        flat = codes.reshape(codes.shape[0], -1)
        for row, pid in zip(flat, place_ids[start : start + codes.shape[0]]):
            out.append(UrbanVector(pid, row.copy()))
    return out


# -- checkpoint serialization -------------------------------------------------

def _model_tensor_list(model: CaeModel) -> list[tuple[str, np.ndarray]]:
    named = []
    for i, k in enumerate(model.encoder_kernels):
        named.append((f"encoder_kernel_{i}.weights", k.weights))
        named.append((f"encoder_kernel_{i}.bias", k.bias))
    if not model.config.tied_weights:
        for i, k in enumerate(model.decoder_kernels):
            named.append((f"decoder_kernel_{i}.weights", k.weights))
    for i, b in enumerate(model.decoder_biases):
        named.append((f"decoder_bias_{i}", b))
    return named


def save_checkpoint(
    path: str | Path,
    model: CaeModel,
    tc: TrainConfig | None = None,
    epoch: int = 0,
    optimizer: _Optimizer | None = None,
    loss_curve: list[float] | None = None,
) -> None:
    named = _model_tensor_list(model)
    opt_arrays = optimizer.state_arrays() if optimizer is not None else []
    header = {
        "config": model.config.to_dict(),
        "train_config": tc.to_dict() if tc is not None else None,
        "epoch": epoch,
        "rng_seed": model.rng_seed,
        "tensors": [name for name, _ in named],
        "optimizer_tensor_count": len(opt_arrays),
        "optimizer_t": optimizer.t if optimizer is not None else 0,
        "loss_curve": loss_curve or [],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in named:
            write_tensor(fh, arr)
        for arr in opt_arrays:
            write_tensor(fh, arr)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[CaeModel, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode())
        config = CaeConfig.from_dict(header["config"])
        model = build_model(config, header.get("rng_seed", 0))
        named = dict(_model_tensor_list(model))
        for name in header["tensors"]:
            arr = read_tensor(fh)
            named[name][...] = arr
        opt_arrays = [read_tensor(fh) for _ in range(header["optimizer_tensor_count"])]
    meta = {
        "epoch": header["epoch"],
        "train_config": header["train_config"],
        "optimizer_arrays": opt_arrays,
        "optimizer_t": header.get("optimizer_t", 0),
        "loss_curve": header.get("loss_curve", []),
    }
    return model, meta
