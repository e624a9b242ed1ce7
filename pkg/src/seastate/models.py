"""Classifier construction over pretrained backbones.

A :class:`ClassifierModel` is a backbone (consumed as an opaque feature
extractor), global average pooling and a dense head. ViT gets an extra
GELU dense layer before the output layer. Inputs are RGB images in [0, 1];
the backbone's own mean/std normalization is applied inside the model.

Stage-2 unfreezing is driven by the trainable-parameter budget of each
architecture: whole layers are released from the top of the backbone until
the trainable count (head included) is as close as possible to the budget.
Layer indices do not carry over between frameworks. The budget does.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import AssetError, ConfigError, GeometryError

log = logging.getLogger(__name__)

BUNDLE_FORMAT = 1
ASSET_ENV = "SEASTATE_ASSETS"
IMAGENET_NORM = ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))
VIT_HEAD_WIDTH = 512
M = 1_000_000


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_size: int
    total_layers: int
    unfrozen_layers_stage2: int
    total_params: int
    trainable_params_stage2: int
    batch_size: int
    stage2_epochs: int

    def __post_init__(self):
        if self.unfrozen_layers_stage2 > self.total_layers:
            raise ConfigError(f"{self.name}: unfrozen layers exceed total layers")
        if self.trainable_params_stage2 > self.total_params:
            raise ConfigError(f"{self.name}: trainable params exceed total params")
        if self.input_size != 224:
            raise ConfigError(f"{self.name}: input size must be 224")

    def to_dict(self) -> dict:
        return asdict(self)


_BUILTIN = (
    ArchitectureSpec("resnet101", 224, 345, 305, int(42.7 * M), int(24.8 * M), 250, 230),
    ArchitectureSpec("vit_b32", 224, 19, 14, int(87.5 * M), int(21.3 * M), 200, 230),
    ArchitectureSpec("mobilenet_v2", 224, 154, 134, int(2.7 * M), int(0.7 * M), 250, 430),
    ArchitectureSpec("nasnet_mobile", 224, 769, 649, int(4.3 * M), int(1.6 * M), 250, 1030),
)

# Desk-scale stand-in; a small CNN behind the same adapter interface.
SURROGATE = ArchitectureSpec("surrogate", 224, 8, 7, 80_728, 79_528, 32, 30)


def builtin_specs() -> list[ArchitectureSpec]:
    return list(_BUILTIN)


def get_spec(name: str) -> ArchitectureSpec:
    for spec in (*_BUILTIN, SURROGATE):
        if spec.name == name:
            return spec
    raise ConfigError(f"unknown architecture {name!r}; choose from "
                      f"{[s.name for s in _BUILTIN] + [SURROGATE.name]}")


# -- backbones ---------------------------------------------------------------

class Backbone(nn.Module):
    """Maps normalized images to features: (B, C, H, W) maps or (B, D) vectors."""

    feature_dim: int
    normalization: tuple[tuple[float, ...], tuple[float, ...]] = IMAGENET_NORM

    def layers(self) -> list[tuple[str, nn.Module]]:
        """Modules that directly own parameters, in forward order."""
        return [(name, m) for name, m in self.named_modules()
                if any(True for _ in m.parameters(recurse=False))]


class SequentialBackbone(Backbone):
    def __init__(self, body: nn.Module, feature_dim: int, normalization=IMAGENET_NORM):
        super().__init__()
        self.body = body
        self.feature_dim = feature_dim
        self.normalization = normalization

    def forward(self, x):
        return self.body(x)


class ViTBackbone(Backbone):
    """Class-token embedding of a torchvision ViT (its pooled representation)."""

    def __init__(self, vit):
        super().__init__()
        self.vit = vit
        self.feature_dim = vit.hidden_dim
        self.normalization = IMAGENET_NORM

    def forward(self, x):
        x = self.vit._process_input(x)
        token = self.vit.class_token.expand(x.shape[0], -1, -1)
        x = self.vit.encoder(torch.cat([token, x], dim=1))
        return x[:, 0]


class NASNetBackbone(Backbone):
    def __init__(self, net):
        super().__init__()
        self.net = net
        self.feature_dim = net.last_linear.in_features
        self.normalization = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
        del net.last_linear

    def forward(self, x):
        return torch.relu(self.net.features(x))


class SurrogateBackbone(Backbone):
    def __init__(self, width: tuple[int, ...] = (16, 32, 64, 96)):
        super().__init__()
        c1, c2, c3, c4 = width
        self.body = nn.Sequential(
            nn.Conv2d(3, c1, 5, stride=4, padding=2, bias=False), nn.BatchNorm2d(c1), nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(c2), nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(c3), nn.ReLU(inplace=True),
            nn.Conv2d(c3, c4, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(c4), nn.ReLU(inplace=True),
        )
        self.feature_dim = c4
        self.normalization = ((0.5, 0.5, 0.5), (0.25, 0.25, 0.25))

    def forward(self, x):
        return self.body(x)


def _load_state(model: nn.Module, path: str | None):
    if path is None:
        return model
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing:
        raise AssetError(f"weights {path} lack {len(missing)} tensors, e.g. {missing[:3]}")
    if unexpected:
        log.info("ignoring %d unused tensors in %s", len(unexpected), path)
    return model


def _resnet101(weights):
    from torchvision.models import resnet101

    net = _load_state(resnet101(weights=None), weights)
    body = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3, net.layer4)
    return SequentialBackbone(body, 2048)


def _vit_b32(weights):
    from torchvision.models import vit_b_32

    net = _load_state(vit_b_32(weights=None), weights)
    del net.heads
    return ViTBackbone(net)


def _mobilenet_v2(weights):
    from torchvision.models import mobilenet_v2

    net = _load_state(mobilenet_v2(weights=None), weights)
    return SequentialBackbone(net.features, net.last_channel)


def _nasnet_mobile(weights):
    try:
        import pretrainedmodels
    except ImportError:
        raise AssetError("nasnet_mobile needs the optional 'pretrainedmodels' package") from None
    net = pretrainedmodels.nasnetamobile(num_classes=1000, pretrained=None)
    return NASNetBackbone(_load_state(net, weights))


def _surrogate(weights):
    return _load_state(SurrogateBackbone(), weights)


BACKBONES: dict[str, Callable[[str | None], Backbone]] = {
    "resnet101": _resnet101,
    "vit_b32": _vit_b32,
    "mobilenet_v2": _mobilenet_v2,
    "nasnet_mobile": _nasnet_mobile,
    "surrogate": _surrogate,
}


# -- assets ------------------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class AssetEntry:
    path: str
    sha256: str
    provenance: str = "imagenet"


class PretrainedAssets:
    """Architecture name -> verified weight file."""

    def __init__(self, entries: dict[str, AssetEntry] | None = None, source: str | None = None):
        self.entries = dict(entries or {})
        self.source = source

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PretrainedAssets":
        path = path or os.environ.get(ASSET_ENV)
        if not path:
            return cls()
        path = Path(path)
        if not path.exists():
            raise AssetError(f"asset registry not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise AssetError(f"asset registry {path} is not valid JSON: {exc}") from None
        entries = {}
        for name, item in raw.items():
            weights = Path(item["path"])
            if not weights.is_absolute():
                weights = path.parent / weights
            entries[name] = AssetEntry(str(weights), item["sha256"], item.get("provenance", "imagenet"))
        return cls(entries, str(path))

    def has(self, name: str) -> bool:
        return name in self.entries

    def resolve(self, name: str) -> AssetEntry:
        if name not in self.entries:
            raise AssetError(f"no pretrained weights registered for {name!r}")
        entry = self.entries[name]
        if not Path(entry.path).exists():
            raise AssetError(f"weights for {name!r} missing at {entry.path}")
        digest = file_sha256(entry.path)
        if digest != entry.sha256:
            raise AssetError(f"weights for {name!r} fail hash check ({digest[:12]} != {entry.sha256[:12]})")
        return entry


# -- classifier --------------------------------------------------------------

class ClassifierModel(nn.Module):
    def __init__(self, spec: ArchitectureSpec, backbone: Backbone, num_classes: int,
                 label_range: tuple[int, int] | None = None, head_width: int | None = None):
        super().__init__()
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.spec = spec
        self.backbone = backbone
        self.num_classes = num_classes
        self.label_range = tuple(label_range or (1, num_classes))
        if self.label_range[1] - self.label_range[0] + 1 != num_classes:
            raise ConfigError(f"label range {self.label_range} does not span {num_classes} classes")
        self.head_width = head_width
        layers: list[nn.Module] = []
        width = backbone.feature_dim
        if head_width:
            layers += [nn.Linear(width, head_width), nn.GELU()]
            width = head_width
        layers.append(nn.Linear(width, num_classes))
        self.head = nn.Sequential(*layers)
        mean, std = backbone.normalization
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1), persistent=False)
        self.stage = "all"
        self.unfrozen_layers = len(backbone.layers())

    @property
    def normalization(self):
        return self.backbone.normalization

    def features(self, x):
        feats = self.backbone((x - self.mean) / self.std)
        if feats.dim() == 4:
            feats = feats.mean(dim=(2, 3))
        return feats

    def forward(self, x):
        """``x``: (B, 3, H, W) float in [0, 1]. Returns class scores (logits)."""
        return self.head(self.features(x))

    def train(self, mode: bool = True):
        super().train(mode)
        if mode:
            # Frozen normalization layers keep their running statistics fixed.
            for m in self.backbone.modules():
                if isinstance(m, nn.modules.batchnorm._BatchNorm):
                    params = list(m.parameters(recurse=False))
                    if params and not any(p.requires_grad for p in params):
                        m.eval()
        return self

    def trainable_mask(self) -> list[bool]:
        return [any(p.requires_grad for p in m.parameters(recurse=False)) for _, m in self.backbone.layers()]

    def label_for_index(self, index: int) -> int:
        return self.label_range[0] + int(index)


def count_params(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def count_trainable_by_layer(model: ClassifierModel) -> int:
    """Trainable parameters summed layer by layer (independent of ``count_params``)."""
    total = 0
    for _, layer in model.backbone.layers():
        total += sum(p.numel() for p in layer.parameters(recurse=False) if p.requires_grad)
    for layer in model.head:
        total += sum(p.numel() for p in layer.parameters(recurse=False) if p.requires_grad)
    return total


def _init_head(head: nn.Sequential, seed: int):
    gen = torch.Generator().manual_seed(int(seed))
    for layer in head:
        if isinstance(layer, nn.Linear):
            bound = 1.0 / np.sqrt(layer.in_features)
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)


def build_classifier(spec: ArchitectureSpec | str, num_classes: int, assets: PretrainedAssets | None = None,
                     label_range: tuple[int, int] | None = None, head_width: int | None = None,
                     seed: int = 0, pretrained: bool = True) -> ClassifierModel:
    """Backbone with pretrained weights plus a freshly initialized head.

    ``pretrained=False`` builds the bare architecture, which is only useful
    for parameter accounting. The surrogate backbone has no public weights;
    without a registered asset it gets a deterministic seeded initialization.
    """
    spec = get_spec(spec) if isinstance(spec, str) else spec
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if spec.name not in BACKBONES:
        raise ConfigError(f"no backbone adapter for {spec.name!r}")
    weights = None
    if pretrained:
        assets = assets or PretrainedAssets()
        if assets.has(spec.name):
            weights = assets.resolve(spec.name).path
        elif spec.name != SURROGATE.name:
            raise AssetError(f"no pretrained weights registered for {spec.name!r}")
    if spec.name == "vit_b32" and head_width is None:
        head_width = VIT_HEAD_WIDTH
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) + 7)
        backbone = BACKBONES[spec.name](weights)
    model = ClassifierModel(spec, backbone, num_classes, label_range, head_width)
    _init_head(model.head, seed)
    return model


def select_unfrozen(model: ClassifierModel, budget: int | None = None) -> int:
    """Number of top backbone layers whose release best matches ``budget``."""
    budget = model.spec.trainable_params_stage2 if budget is None else budget
    head = count_params(model.head)
    sizes = [sum(p.numel() for p in m.parameters(recurse=False)) for _, m in model.backbone.layers()]
    best_k, best_err, cum = 0, abs(head - budget), head
    for k, size in enumerate(reversed(sizes), start=1):
        cum += size
        err = abs(cum - budget)
        if err < best_err:
            best_k, best_err = k, err
        if cum > budget and err > best_err:
            break
    return best_k


def configure_stage(model: ClassifierModel, stage: str, budget: int | None = None) -> ClassifierModel:
    if stage not in ("head_only", "fine_tune", "all"):
        raise ConfigError(f"unknown training stage {stage!r}")
    layers = model.backbone.layers()
    for p in model.backbone.parameters():
        p.requires_grad_(stage == "all")
    for p in model.head.parameters():
        p.requires_grad_(True)
    if stage == "head_only":
        model.unfrozen_layers = 0
    elif stage == "fine_tune":
        k = select_unfrozen(model, budget)
        for _, layer in layers[len(layers) - k:]:
            for p in layer.parameters(recurse=False):
                p.requires_grad_(True)
        model.unfrozen_layers = k
    else:
        model.unfrozen_layers = len(layers)
    model.stage = stage
    if model.training:
        model.train()
    return model


def to_tensor(images) -> torch.Tensor:
    """(B, H, W, 3) array in [0, 1] (or uint8) -> (B, 3, H, W) float tensor."""
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float32))


def predict_batch(model: ClassifierModel, images, batch_size: int = 64) -> np.ndarray:
    """Softmax probabilities, one row per image, in inference mode."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    size = model.spec.input_size
    if arr.ndim != 4 or arr.shape[1:] != (size, size, 3):
        raise GeometryError(f"expected images of shape (B, {size}, {size}, 3), got {arr.shape}")
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(arr), batch_size):
            logits = model(to_tensor(arr[start:start + batch_size]))
            out.append(torch.softmax(logits.double(), dim=1).numpy())
    if was_training:
        model.train()
    return np.concatenate(out) if out else np.zeros((0, model.num_classes))


def predict_labels(model: ClassifierModel, images, batch_size: int = 64) -> np.ndarray:
    probs = predict_batch(model, images, batch_size)
    return probs.argmax(axis=1) + model.label_range[0]


# -- bundles -----------------------------------------------------------------

def export_bundle(model: ClassifierModel, path: str | Path, extra: dict | None = None) -> Path:
    """Weights, spec, label range and normalization in one directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path / "weights.pt")
    meta = {
        "format": BUNDLE_FORMAT,
        "spec": model.spec.to_dict(),
        "num_classes": model.num_classes,
        "label_range": list(model.label_range),
        "head_width": model.head_width,
        "normalization": {"mean": list(model.normalization[0]), "std": list(model.normalization[1])},
        "weights_sha256": file_sha256(path / "weights.pt"),
    }
    if extra:
        meta["extra"] = extra
    (path / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_bundle(path: str | Path) -> ClassifierModel:
    path = Path(path)
    meta_path = path / "bundle.json"
    if not meta_path.exists():
        raise AssetError(f"not a model bundle: {path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != BUNDLE_FORMAT:
        raise AssetError(f"unsupported bundle format {meta.get('format')}")
    weights = path / "weights.pt"
    if file_sha256(weights) != meta["weights_sha256"]:
        raise AssetError(f"bundle weights {weights} fail hash check")
    spec = ArchitectureSpec(**meta["spec"])
    model = build_classifier(spec, meta["num_classes"], label_range=tuple(meta["label_range"]),
                             head_width=meta.get("head_width"), pretrained=False)
    model.load_state_dict(torch.load(weights, map_location="cpu", weights_only=True))
    model.eval()
    return model


def with_budget(spec: ArchitectureSpec, **changes) -> ArchitectureSpec:
    return replace(spec, **changes)
