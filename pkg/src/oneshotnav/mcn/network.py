"""The matching network: shared per-frame extractor, memory layer, differentiator.

Both windows of a pair go through the same extractor parameters (one
``ParamSet``), their feature sequences are compared by the memory layer and
an LSTM turns the per-step comparison into a match probability.
"""

import zlib

import numpy as np

from ..tensor import DTYPE, ParamSet, ShapeError, Tensor, no_grad
from ..tensor import ops
from ..tensor.ops import BatchNormState
from .config import SEQUENCE_LENGTH, McnConfig
from .similarity import memory_similarity

MATCH_BUDGET = 20_000_000


def _frames_array(frames, image_shape):
    """Stack a frame list (or pass an array through) as N x C x H x W float32."""
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        arr = np.stack([getattr(f, "image", f) for f in frames])
    arr = np.asarray(arr, DTYPE)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != tuple(image_shape):
        raise ShapeError(f"expected images of shape {tuple(image_shape)}, got {arr.shape[1:] if arr.ndim == 4 else arr.shape}")
    return arr


class MCN:
    """Parameters, batchnorm statistics and the forward passes of one model."""

    def __init__(self, config=None, seed=0):
        self.config = config if config is not None else McnConfig()
        self.seed = int(seed)
        self.params = ParamSet()
        self.bn_states = []
        self.history = None
        self._init_params(np.random.default_rng([self.seed & 0xFFFFFFFF, zlib.crc32(b"mcn-init")]))

    # ------------------------------------------------------------ structure

    @property
    def has_extractor(self):
        return self.config.ablation != "remFE"

    @property
    def has_differentiator(self):
        return self.config.ablation != "remDIF"

    @property
    def feature_dim(self):
        cfg = self.config
        return cfg.embedding_dim if self.has_extractor else int(np.prod(cfg.image_shape))

    def _init_params(self, rng):
        cfg = self.config
        if self.has_extractor:
            c_in = cfg.image_shape[0]
            for k in range(cfg.conv_layers):
                bound = np.sqrt(6.0 / (c_in * 9))
                self.params.add(f"conv{k}.weight", rng.uniform(-bound, bound, (cfg.filters, c_in, 3, 3)))
                self.params.add(f"conv{k}.bias", np.zeros(cfg.filters))
                self.params.add(f"bn{k}.gamma", np.ones(cfg.filters))
                self.params.add(f"bn{k}.beta", np.zeros(cfg.filters))
                self.bn_states.append(BatchNormState(cfg.filters))
                c_in = cfg.filters
            fan_in = cfg.flat_features
            bound = cfg.embed_init_scale / np.sqrt(fan_in)
            self.params.add("embed.weight", rng.uniform(-bound, bound, (cfg.embedding_dim, fan_in)))
            self.params.add("embed.bias", np.zeros(cfg.embedding_dim))
        if self.has_differentiator:
            h = cfg.hidden_size
            if cfg.ablation == "remMEM":
                d = 2 * self.feature_dim
            else:
                d = cfg.similarity.width(SEQUENCE_LENGTH, self.feature_dim)
            bound = 1.0 / np.sqrt(h)
            self.params.add("lstm.w_input", rng.uniform(-bound, bound, (d, 4 * h)))
            self.params.add("lstm.w_hidden", rng.uniform(-bound, bound, (h, 4 * h)))
            self.params.add("lstm.bias", np.zeros(4 * h))
            self.params.add("out.weight", rng.uniform(-bound, bound, (1, h)))
            self.params.add("out.bias", np.zeros(1))

    def extractor_params(self):
        return [name for name, _ in self.params if not name.startswith(("lstm.", "out."))]

    def parameter_count(self):
        return self.params.count()

    # ------------------------------------------------------------ forward pieces

    def embed(self, images, training=False):
        """N x C x H x W images -> N x E feature tensor."""
        x = Tensor(images) if not isinstance(images, Tensor) else images
        if not self.has_extractor:
            return ops.reshape(x, (x.shape[0], -1))
        p = self.params
        for k, state in enumerate(self.bn_states):
            x = ops.conv2d(x, p[f"conv{k}.weight"], p[f"conv{k}.bias"])
            # max-pooling commutes with relu, so pooling first is the same map on a quarter of the data
            x = ops.relu(ops.maxpool2x2(x))
            x = ops.batchnorm2d(x, p[f"bn{k}.gamma"], p[f"bn{k}.beta"], state, training)
        x = ops.reshape(x, (x.shape[0], -1))
        return ops.dense(x, p["embed.weight"], p["embed.bias"])

    def similarity_sequence(self, ref, test):
        """B x T x E feature tensors -> the B x T x F sequence fed to the differentiator."""
        if self.config.ablation == "remMEM":
            return ops.concat([ref, test], axis=-1)
        return memory_similarity(ref, test, self.config.similarity)

    def differentiate(self, seq):
        """B x T x F similarity sequence -> B match probabilities."""
        cfg = self.config
        if not self.has_differentiator:
            # remDIF: thresholded mean paired cosine, softened so the extractor still trains
            B, T = seq.shape[0], seq.shape[1]
            m = ops.mean(ops.reshape(seq, (B, T)), axis=1)
            shifted = ops.sub(m, Tensor(np.full(B, cfg.remdif_threshold, DTYPE)))
            return ops.sigmoid(ops.scale(shifted, cfg.remdif_sharpness))
        p = self.params
        last, _ = ops.lstm_forward(seq, p["lstm.w_input"], p["lstm.w_hidden"], p["lstm.bias"])
        logit = ops.dense(last, p["out.weight"], p["out.bias"])
        return ops.sigmoid(ops.reshape(logit, (seq.shape[0],)))

    def head(self, ref, test):
        return self.differentiate(self.similarity_sequence(ref, test))

    def forward_pairs(self, ref_images, test_images, training=False):
        """B x T x C x H x W windows -> B probabilities (a graph when parameters need it)."""
        ref_images = np.asarray(ref_images, DTYPE)
        test_images = np.asarray(test_images, DTYPE)
        if ref_images.shape != test_images.shape or ref_images.ndim != 5:
            raise ShapeError(f"forward_pairs: windows must share a B x T x C x H x W shape, got "
                             f"{ref_images.shape} and {test_images.shape}")
        B, T = ref_images.shape[:2]
        if T != SEQUENCE_LENGTH:
            raise ShapeError(f"windows must hold {SEQUENCE_LENGTH} frames, got {T}")
        flat = np.concatenate([ref_images.reshape((-1,) + ref_images.shape[2:]),
                               test_images.reshape((-1,) + test_images.shape[2:])])
        feats = self.embed(_frames_array(flat, self.config.image_shape), training)
        ref = ops.reshape(ops.select(feats, slice(0, B * T)), (B, T, -1))
        test = ops.reshape(ops.select(feats, slice(B * T, 2 * B * T)), (B, T, -1))
        return self.head(ref, test)

    # ------------------------------------------------------------ inference

    def extract_features(self, frames):
        """Inference-mode features, one row per frame, as a float32 array."""
        arr = _frames_array(frames, self.config.image_shape)
        with no_grad():
            return self.embed(arr, training=False).data.copy()

    def match_features(self, ref_feats, test_feats):
        """Probability from precomputed T x E (or B x T x E) feature sequences."""
        ref = np.asarray(ref_feats, DTYPE)
        test = np.asarray(test_feats, DTYPE)
        if ref.shape != test.shape:
            raise ShapeError(f"feature sequences differ in shape: {ref.shape} vs {test.shape}")
        single = ref.ndim == 2
        if single:
            ref, test = ref[None], test[None]
        if ref.shape[1] != SEQUENCE_LENGTH:
            raise ShapeError(f"feature sequences must hold {SEQUENCE_LENGTH} rows, got {ref.shape[1]}")
        if ref.shape[2] != self.feature_dim:
            raise ShapeError(f"feature width {ref.shape[2]} does not match the model's {self.feature_dim}")
        # cross distances hold B x T x T x E values; keep each chunk near 80 MB
        step = max(1, MATCH_BUDGET // (SEQUENCE_LENGTH * SEQUENCE_LENGTH * ref.shape[2]))
        with no_grad():
            p = np.concatenate([self.head(Tensor(ref[i:i + step]), Tensor(test[i:i + step])).data
                                for i in range(0, len(ref), step)])
        return float(p[0]) if single else p

    def predict_windows(self, ref_frames, test_frames):
        """Match probability for one reference window and one test window."""
        ref = _frames_array(ref_frames, self.config.image_shape)
        test = _frames_array(test_frames, self.config.image_shape)
        if len(ref) != SEQUENCE_LENGTH or len(test) != SEQUENCE_LENGTH:
            raise ShapeError(f"both windows need {SEQUENCE_LENGTH} frames, got {len(ref)} and {len(test)}")
        feats = self.extract_features(np.concatenate([ref, test]))
        return self.match_features(feats[:SEQUENCE_LENGTH], feats[SEQUENCE_LENGTH:])


def build_model(config=None, seed=0):
    return MCN(config, seed)


def extract_features(frames, model):
    return model.extract_features(frames)


def mcn_forward(ref_frames, test_frames, model):
    return model.predict_windows(ref_frames, test_frames)
