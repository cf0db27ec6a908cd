"""Model and training configuration."""

from dataclasses import asdict, dataclass, field, fields, replace

from .similarity import DEFAULT_SIMILARITY, SimilaritySpec

ABLATIONS = ("none", "remFE", "remMEM", "remDIF")
SEQUENCE_LENGTH = 10
IMAGE_SHAPE = (6, 47, 84)
REMDIF_SPEC = SimilaritySpec((("cosSim", "paired"),))


class ConfigError(ValueError):
    """An inconsistent model or training configuration."""


@dataclass(frozen=True)
class McnConfig:
    conv_layers: int = 4
    filters: int = 64
    kernel_size: int = 3
    embedding_dim: int = 50
    similarity: SimilaritySpec = None
    differentiator: str = "lstm"
    hidden_size: int = 10
    ablation: str = "none"
    epochs: int = 10
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    batch_size: int = 8
    batches_per_group: int = None
    max_validation_pairs: int = None
    embed_init_scale: float = 0.1
    remdif_threshold: float = 0.5
    remdif_sharpness: float = 10.0
    seed: int = 0
    image_shape: tuple = field(default=IMAGE_SHAPE)

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.kernel_size != 3:
            raise ConfigError("only 3x3 convolution kernels are supported")
        if self.differentiator != "lstm":
            raise ConfigError(f"unknown differentiator {self.differentiator!r}; only 'lstm' is supported")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for name in ("filters", "embedding_dim", "hidden_size", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        c, h, w = self.image_shape
        if self.ablation != "remFE":
            for _ in range(self.conv_layers):
                if h < 2 or w < 2:
                    raise ConfigError(f"{self.conv_layers} conv layers shrink a {h}x{w} map below the 2x2 pool window")
                h, w = h // 2, w // 2
            if self.conv_layers < 1:
                raise ConfigError("conv_layers must be at least 1")
        sim = self.similarity
        if sim is not None:
            sim = SimilaritySpec.parse(sim)
            object.__setattr__(self, "similarity", sim)
        if self.ablation == "remDIF":
            if sim is not None and sim != REMDIF_SPEC:
                raise ConfigError("remDIF replaces the differentiator with a cosine threshold; similarity must be paired cosSim")
            object.__setattr__(self, "similarity", REMDIF_SPEC)
        elif self.ablation == "remMEM":
            if sim is not None:
                raise ConfigError("remMEM has no memory layer; do not set a similarity spec")
        elif sim is None:
            object.__setattr__(self, "similarity", DEFAULT_SIMILARITY)
        object.__setattr__(self, "image_shape", tuple(self.image_shape))

    @property
    def flat_features(self):
        c, h, w = self.image_shape
        for _ in range(self.conv_layers):
            h, w = h // 2, w // 2
        return self.filters * h * w

    def to_dict(self):
        d = asdict(self)
        d["similarity"] = None if self.similarity is None else self.similarity.to_list()
        d["image_shape"] = list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        d = dict(d)
        if d.get("ablation") == "remMEM":
            d["similarity"] = None
        if d.get("ablation") == "remDIF":
            d["similarity"] = None
        return cls(**d)

    def with_overrides(self, **kw):
        if kw.get("ablation") in ("remMEM", "remDIF") and "similarity" not in kw:
            kw["similarity"] = None
        if kw.get("ablation") in ("none", "remFE") and self.ablation in ("remMEM", "remDIF") and "similarity" not in kw:
            kw["similarity"] = None
        return replace(self, **kw)
