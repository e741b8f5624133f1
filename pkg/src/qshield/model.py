"""The character-embedding CNN: configuration, parameters, forward pass, file format.

Pipeline: embedding lookup -> full-width vertical convolutions at several
filter heights -> max-over-time pooling -> dropout (train only) -> linear
output -> softmax. Parameters are immutable once published; training builds
a new ModelParams with a bumped version.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops, vocab
from .labels import CLASSES

MAGIC = b"CCNN"
FORMAT_VERSION = 1

EMBED_INIT_RANGE = 0.05


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class ModelFileError(Exception):
    """Base for model file load failures."""


class BadMagicError(ModelFileError):
    pass


class UnsupportedFormatError(ModelFileError):
    pass


class ChecksumMismatchError(ModelFileError):
    pass


class HeaderError(ModelFileError):
    pass


class VocabMismatchError(ModelFileError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The defaults (k=32, heights 2..5, 32 filters per height) are a standard
    character-CNN scale that trains in minutes on a CPU; they are surfaced
    here because no canonical values exist for this architecture.
    """

    k: int = 32
    filter_heights: tuple[int, ...] = (2, 3, 4, 5)
    filters_per_height: int = 32
    num_classes: int = 5
    max_seq_len: int = vocab.DEFAULT_MAX_SEQ_LEN
    dropout_p: float = 0.5
    use_bias: bool = False
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "filter_heights", tuple(int(h) for h in self.filter_heights))

    @property
    def n_filters(self) -> int:
        return len(self.filter_heights) * self.filters_per_height

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {self.k}")
        if not self.filter_heights:
            raise ConfigError("at least one filter height is required")
        if len(set(self.filter_heights)) != len(self.filter_heights):
            raise ConfigError(f"filter heights must be distinct, got {self.filter_heights}")
        if any(h < 1 for h in self.filter_heights):
            raise ConfigError(f"filter heights must be positive, got {self.filter_heights}")
        if max(self.filter_heights) > self.max_seq_len:
            raise ConfigError(
                f"largest filter height {max(self.filter_heights)} exceeds max_seq_len {self.max_seq_len}"
            )
        if self.filters_per_height < 1:
            raise ConfigError(f"filters_per_height must be >= 1, got {self.filters_per_height}")
        if self.num_classes != len(CLASSES):
            raise ConfigError(f"num_classes must be {len(CLASSES)}, got {self.num_classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")


@dataclass
class Verdict:
    """Classification outcome for a single request parameter string."""

    probs: np.ndarray
    predicted_class: str
    confidence: float
    model_version: int

    def to_dict(self) -> dict:
        return {
            "class": self.predicted_class,
            "probs": [float(p) for p in self.probs],
            "confidence": float(self.confidence),
            "model_version": int(self.model_version),
        }


@dataclass
class ActivationCache:
    """Everything the backward pass needs from one forward call."""

    indices: np.ndarray
    X: np.ndarray
    pre_by_height: dict
    argmax_by_height: dict
    z: np.ndarray
    dropout_mult: np.ndarray  # elementwise multiplier: z_dropped = z * dropout_mult
    z_dropped: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class ModelParams:
    """All trainable tensors plus lineage metadata."""

    config: ModelConfig
    embedding: np.ndarray  # (97, k); rows 95/96 are the OOV/PAD embeddings
    filters: dict[int, np.ndarray]  # height -> (filters_per_height, height, k)
    output_weights: np.ndarray  # (n_filters, num_classes)
    conv_bias: np.ndarray | None = None  # (n_filters,)
    output_bias: np.ndarray | None = None  # (num_classes,)
    version: int = 0
    vocab_hash: str = field(default_factory=vocab.vocab_hash)

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        """Named tensors in canonical (serialization and grad-check) order."""
        items = [("embedding", self.embedding)]
        for h in self.config.filter_heights:
            items.append((f"filters/h{h}", self.filters[h]))
        items.append(("output_weights", self.output_weights))
        if self.config.use_bias:
            items.append(("conv_bias", self.conv_bias))
            items.append(("output_bias", self.output_bias))
        return items

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            embedding=self.embedding.copy(),
            filters={h: f.copy() for h, f in self.filters.items()},
            output_weights=self.output_weights.copy(),
            conv_bias=None if self.conv_bias is None else self.conv_bias.copy(),
            output_bias=None if self.output_bias is None else self.output_bias.copy(),
            version=self.version,
            vocab_hash=self.vocab_hash,
        )

    def check_finite(self) -> None:
        for name, t in self.tensor_items():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"non-finite values in tensor {name}")


def init_params(config: ModelConfig, *, version: int = 0) -> ModelParams:
    """Seeded random initialization.

    Embedding rows start in a small uniform range so initial character
    distances are uninformative; filters and output weights use uniform
    fan-based (Glorot) limits for stable early training.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    embedding = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(vocab.TOTAL_INDICES, config.k))
    filters = {}
    for h in config.filter_heights:
        fan_in = h * config.k
        fan_out = config.filters_per_height
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        filters[h] = rng.uniform(-limit, limit, size=(config.filters_per_height, h, config.k))
    limit = np.sqrt(6.0 / (config.n_filters + config.num_classes))
    output_weights = rng.uniform(-limit, limit, size=(config.n_filters, config.num_classes))
    conv_bias = np.zeros(config.n_filters) if config.use_bias else None
    output_bias = np.zeros(config.num_classes) if config.use_bias else None
    return ModelParams(
        config=config,
        embedding=embedding,
        filters=filters,
        output_weights=output_weights,
        conv_bias=conv_bias,
        output_bias=output_bias,
        version=version,
    )


def forward(
    params: ModelParams,
    seq: vocab.IndexSequence | np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[Verdict, ActivationCache]:
    """Run the full pipeline on one encoded sequence.

    Train mode draws a dropout mask from rng; eval mode is deterministic.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    indices = seq.indices if isinstance(seq, vocab.IndexSequence) else np.asarray(seq)
    if indices.shape != (cfg.max_seq_len,):
        raise ValueError(f"sequence length {indices.shape} != ({cfg.max_seq_len},)")

    X = params.embedding[indices]  # (n, k); padded rows participate in convolution
    z = np.empty(cfg.n_filters, dtype=np.float64)
    pre_by_height = {}
    argmax_by_height = {}
    pos = 0
    for h in cfg.filter_heights:
        bank = params.filters[h]  # (m, h, k)
        m = bank.shape[0]
        windows = sliding_window_view(X, (h, cfg.k))[:, 0]  # (n-h+1, h, k)
        pre = np.tensordot(windows, bank, axes=([1, 2], [1, 2]))  # (n-h+1, m)
        if cfg.use_bias:
            pre = pre + params.conv_bias[pos : pos + m]
        y = np.maximum(pre, 0.0)
        am = np.argmax(y, axis=0)  # ties resolve to the lowest index
        z[pos : pos + m] = y[am, np.arange(m)]
        pre_by_height[h] = pre
        argmax_by_height[h] = am
        pos += m

    if mode == "train" and cfg.dropout_p > 0.0:
        z_dropped, mask = ops.dropout_apply(z, cfg.dropout_p, "train", rng)
        dropout_mult = mask / (1.0 - cfg.dropout_p)
    else:
        z_dropped = z.copy()
        dropout_mult = np.ones_like(z)

    logits = z_dropped @ params.output_weights
    if cfg.use_bias:
        logits = logits + params.output_bias
    probs = ops.softmax(logits)
    pred = int(np.argmax(probs))
    verdict = Verdict(
        probs=probs,
        predicted_class=CLASSES[pred],
        confidence=float(probs[pred]),
        model_version=params.version,
    )
    cache = ActivationCache(
        indices=indices,
        X=X,
        pre_by_height=pre_by_height,
        argmax_by_height=argmax_by_height,
        z=z,
        dropout_mult=dropout_mult,
        z_dropped=z_dropped,
        logits=logits,
        probs=probs,
    )
    return verdict, cache


def predict(params: ModelParams, raw_text: str) -> Verdict:
    """Classify an arbitrary raw string: normalize, encode, eval-mode forward."""
    seq = vocab.encode_normalized(raw_text, params.config.max_seq_len)
    verdict, _ = forward(params, seq, mode="eval")
    return verdict


def embedding_distance(params: ModelParams, char_a: str, char_b: str) -> float:
    """Euclidean distance between two characters' embedding rows."""
    for ch in (char_a, char_b):
        if vocab.char_index(ch) == vocab.OOV_INDEX:
            raise ValueError(f"character {ch!r} is not in the vocabulary")
    a = params.embedding[vocab.char_index(char_a)]
    b = params.embedding[vocab.char_index(char_b)]
    return float(np.linalg.norm(a - b))


# ---------------------------------------------------------------------------
# Model file format: magic, u32 format version, u32 header length, JSON header
# (config, tensor manifest with offsets into the payload, vocab hash, model
# version), little-endian float32 payload, trailing CRC32 over all prior bytes.
# ---------------------------------------------------------------------------


def save_model(params: ModelParams, path) -> None:
    """Serialize to the CCNN container; weights stored at 32-bit precision."""
    params.check_finite()
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in params.tensor_items():
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": asdict(params.config),
        "tensors": manifest,
        "vocab_hash": params.vocab_hash,
        "model_version": params.version,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (
        MAGIC
        + FORMAT_VERSION.to_bytes(4, "little")
        + len(header_bytes).to_bytes(4, "little")
        + header_bytes
        + b"".join(blobs)
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body + crc.to_bytes(4, "little"))


def load_model(path) -> ModelParams:
    """Load and verify a CCNN file; raises a distinct error per failure mode."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise ChecksumMismatchError(f"file too short to be a model ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    fmt = int.from_bytes(raw[4:8], "little")
    if fmt != FORMAT_VERSION:
        raise UnsupportedFormatError(f"unsupported format version {fmt}")
    body, stored_crc = raw[:-4], int.from_bytes(raw[-4:], "little")
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatchError("CRC32 mismatch: file is corrupt or truncated")
    header_len = int.from_bytes(raw[8:12], "little")
    header_end = 12 + header_len
    if header_end > len(body):
        raise HeaderError(f"header length {header_len} exceeds file size")
    try:
        header = json.loads(body[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"unparseable header: {exc}") from exc
    try:
        cfg_dict = dict(header["config"])
        cfg_dict["filter_heights"] = tuple(cfg_dict["filter_heights"])
        config = ModelConfig(**cfg_dict)
        manifest = header["tensors"]
        file_vocab_hash = header["vocab_hash"]
        model_version = int(header["model_version"])
    except (KeyError, TypeError) as exc:
        raise HeaderError(f"header missing required field: {exc}") from exc
    if file_vocab_hash != vocab.vocab_hash():
        raise VocabMismatchError(
            f"model was built against vocab {file_vocab_hash}, this build is {vocab.vocab_hash()}"
        )
    config.validate()
    payload = body[header_end:]
    tensors = {}
    expected_end = 0
    for entry in manifest:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError) as exc:
            raise HeaderError(f"malformed tensor manifest entry: {entry!r}") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset != expected_end:
            raise HeaderError(f"tensor {name} offset {offset} != expected {expected_end}")
        if offset + nbytes > len(payload):
            raise HeaderError(f"tensor {name} extends past payload end")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(shape)
        expected_end = offset + nbytes
    if expected_end != len(payload):
        raise HeaderError(f"payload has {len(payload) - expected_end} trailing bytes")

    expected_names = {name for name, _ in _expected_tensor_names(config)}
    if set(tensors) != expected_names:
        raise HeaderError(f"tensor set {sorted(tensors)} != expected {sorted(expected_names)}")
    for name, shape in _expected_tensor_names(config):
        if tensors[name].shape != shape:
            raise HeaderError(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")

    return ModelParams(
        config=config,
        embedding=tensors["embedding"],
        filters={h: tensors[f"filters/h{h}"] for h in config.filter_heights},
        output_weights=tensors["output_weights"],
        conv_bias=tensors.get("conv_bias"),
        output_bias=tensors.get("output_bias"),
        version=model_version,
        vocab_hash=file_vocab_hash,
    )


def _expected_tensor_names(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    names = [("embedding", (vocab.TOTAL_INDICES, config.k))]
    for h in config.filter_heights:
        names.append((f"filters/h{h}", (config.filters_per_height, h, config.k)))
    names.append(("output_weights", (config.n_filters, config.num_classes)))
    if config.use_bias:
        names.append(("conv_bias", (config.n_filters,)))
        names.append(("output_bias", (config.num_classes,)))
    return names
