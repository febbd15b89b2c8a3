"""Encoder-decoder alpha prediction network.

The encoder is a 50-layer bottleneck residual network whose last two stages
use dilated 3x3 convolutions (output stride 8), followed by atrous spatial
pyramid pooling. The decoder upsamples with bilinear interpolation, max-unpooling
(using the encoder's pooling indices) and a transposed convolution, with skip
connections from the encoder and the RGB input.

Parameter names inside ``encoder`` follow the torchvision ResNet-50 layout so
ImageNet classifier weights can be copied in by name.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imgcore import Trimap, check_rgb

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
STAGE_BLOCKS = (3, 4, 6, 3)
STAGE_WIDTHS = (64, 128, 256, 512)
EXPANSION = 4
ASPP_RATES = (6, 12, 18)


class UnsupportedConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    output_stride: int = 8
    use_aspp: bool = True
    use_skips: bool = True
    use_multigrid: bool = False
    width_multiplier: float = 1.0
    input_channels: int = 4
    normalize_rgb: bool = True

    def __post_init__(self):
        if self.output_stride not in (8, 16):
            raise ValueError(f"output_stride must be 8 or 16, got {self.output_stride}")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ValueError("width_multiplier must lie in (0, 1]")
        if self.input_channels != 4:
            raise ValueError("the generator takes RGB + trimap (4 channels)")
        if self.use_multigrid:
            raise UnsupportedConfigError("multi-grid dilation is not supported")

    def width(self, channels: int) -> int:
        """Scale a layer width, rounding to the nearest multiple of 8 (minimum 8)."""
        if self.width_multiplier == 1.0:
            return channels
        return max(8, int(channels * self.width_multiplier / 8 + 0.5) * 8)


def conv_bn_relu(cin: int, cout: int, kernel: int, dilation: int = 1) -> nn.Sequential:
    pad = dilation * (kernel // 2)
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, padding=pad, dilation=dilation, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Bottleneck(nn.Module):
    def __init__(self, inplanes: int, planes: int, outplanes: int, stride: int = 1, dilation: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=dilation,
                               dilation=dilation, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, outplanes, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(outplanes)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or inplanes != outplanes:
            self.downsample = nn.Sequential(
                nn.Conv2d(inplanes, outplanes, 1, stride=stride, bias=False),
                nn.BatchNorm2d(outplanes),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class ResNetEncoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        stem = cfg.width(64)
        self.conv1 = nn.Conv2d(cfg.input_channels, stem, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(stem)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1, return_indices=True)

        if cfg.output_stride == 8:
            strides, dilations = (1, 2, 1, 1), (1, 1, 2, 4)
        else:
            strides, dilations = (1, 2, 2, 1), (1, 1, 1, 2)
        inplanes = stem
        for i, (blocks, base) in enumerate(zip(STAGE_BLOCKS, STAGE_WIDTHS)):
            planes, outplanes = cfg.width(base), cfg.width(base * EXPANSION)
            layers = []
            for b in range(blocks):
                layers.append(Bottleneck(inplanes, planes, outplanes,
                                         stride=strides[i] if b == 0 else 1, dilation=dilations[i]))
                inplanes = outplanes
            setattr(self, f"layer{i + 1}", nn.Sequential(*layers))
        self.out_channels = inplanes
        self.skip_os4_channels = cfg.width(STAGE_WIDTHS[0] * EXPANSION)
        self.skip_os2_channels = stem

    def forward(self, x):
        skip_os2 = self.relu(self.bn1(self.conv1(x)))
        x, indices = self.maxpool(skip_os2)
        skip_os4 = self.layer1(x)
        x = self.layer4(self.layer3(self.layer2(skip_os4)))
        return x, skip_os4, skip_os2, indices


class ASPP(nn.Module):
    def __init__(self, cin: int, cout: int, rates=ASPP_RATES):
        super().__init__()
        self.conv1x1 = conv_bn_relu(cin, cout, 1)
        self.atrous = nn.ModuleList(conv_bn_relu(cin, cout, 3, dilation=r) for r in rates)
        self.pooling = conv_bn_relu(cin, cout, 1)
        self.project = conv_bn_relu(cout * (len(rates) + 2), cout, 1)

    def forward(self, x):
        # bilinear upsampling of a 1x1 map is a broadcast
        pooled = self.pooling(F.adaptive_avg_pool2d(x, 1)).expand(-1, -1, *x.shape[-2:])
        branches = [self.conv1x1(x), *(conv(x) for conv in self.atrous), pooled]
        return self.project(torch.cat(branches, dim=1))


class Decoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig, cin: int, skip_os4: int, skip_os2: int):
        super().__init__()
        w = cfg.width
        self.use_skips = cfg.use_skips
        fuse_in = cin
        if cfg.use_skips:
            self.skip_os4 = conv_bn_relu(skip_os4, w(48), 1)
            fuse_in += w(48)
        self.fuse = nn.Sequential(
            conv_bn_relu(fuse_in, w(256), 3),
            conv_bn_relu(w(256), w(128), 3),
            conv_bn_relu(w(128), w(64), 3),
        )
        self.unpool = nn.MaxUnpool2d(3, stride=2, padding=1)
        os2_in = w(64)
        if cfg.use_skips:
            self.skip_os2 = conv_bn_relu(skip_os2, w(32), 1)
            os2_in += w(32)
        self.conv_os2 = conv_bn_relu(os2_in, w(64), 3)
        self.upconv = nn.Sequential(
            nn.ConvTranspose2d(w(64), w(64), 3, stride=2, padding=1, output_padding=1, bias=False),
            nn.BatchNorm2d(w(64)),
            nn.ReLU(inplace=True),
        )
        self.conv_full = conv_bn_relu(w(64), w(32), 3)
        refine_in = w(32) + (3 if cfg.use_skips else 0)
        self.refine = nn.Sequential(conv_bn_relu(refine_in, w(32), 3), conv_bn_relu(w(32), w(32), 3))
        self.head = nn.Conv2d(w(32), 1, 3, padding=1)

    def forward(self, x, skip_os4, skip_os2, indices, rgb):
        x = F.interpolate(x, size=indices.shape[-2:], mode="bilinear", align_corners=False)
        if self.use_skips:
            x = torch.cat([x, self.skip_os4(skip_os4)], dim=1)
        x = self.fuse(x)
        x = self.unpool(x, indices, output_size=skip_os2.shape[-2:])
        if self.use_skips:
            x = torch.cat([x, self.skip_os2(skip_os2)], dim=1)
        x = self.conv_os2(x)
        x = self.conv_full(self.upconv(x))
        if self.use_skips:
            x = torch.cat([x, rgb], dim=1)
        x = self.refine(x)
        return torch.sigmoid(self.head(x))


class Generator(nn.Module):
    """Maps an RGB image (N, 3, H, W) in [0, 1] plus a trimap plane (N, 1, H, W) to alpha."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        self.encoder = ResNetEncoder(cfg)
        if cfg.use_aspp:
            self.aspp = ASPP(self.encoder.out_channels, cfg.width(256))
        else:
            self.aspp = conv_bn_relu(self.encoder.out_channels, cfg.width(256), 1)
        self.decoder = Decoder(cfg, cfg.width(256), self.encoder.skip_os4_channels,
                               self.encoder.skip_os2_channels)
        self.register_buffer("rgb_mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("rgb_std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)

    def encoder_forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input size {h}x{w} must be divisible by 32")
        return self.encoder(x)

    def aspp_forward(self, features):
        return self.aspp(features)

    def decoder_forward(self, bottleneck, skip_os4, skip_os2, indices, rgb):
        return self.decoder(bottleneck, skip_os4, skip_os2, indices, rgb)

    def forward(self, rgb, trimap_plane):
        net_rgb = (rgb - self.rgb_mean) / self.rgb_std if self.cfg.normalize_rgb else rgb
        features, skip_os4, skip_os2, indices = self.encoder_forward(torch.cat([net_rgb, trimap_plane], dim=1))
        return self.decoder_forward(self.aspp_forward(features), skip_os4, skip_os2, indices, rgb)


def architecture_manifest(cfg: GeneratorConfig) -> list[dict]:
    """Name, shape and dtype of every tensor in the generator's state dict."""
    with torch.device("meta"):
        model = Generator(cfg)
    return tensor_manifest(model)


def tensor_manifest(model: nn.Module) -> list[dict]:
    return [
        {"name": name, "shape": list(t.shape), "dtype": str(t.dtype).removeprefix("torch.")}
        for name, t in model.state_dict().items()
    ]


def parameter_count(cfg: GeneratorConfig) -> int:
    with torch.device("meta"):
        model = Generator(cfg)
    return sum(p.numel() for p in model.parameters())


def reset_parameters(model: nn.Module, generator: torch.Generator) -> None:
    """Fan-in scaled uniform init for convolutions, identity affine for batch norm."""
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu", generator=generator)
            if m.bias is not None:
                fan_in = m.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                nn.init.uniform_(m.bias, -bound, bound, generator=generator)
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_running_stats()
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def load_pretrained(path) -> dict[str, torch.Tensor]:
    """Read classifier weights from a torch state-dict file or a tensor-blob directory."""
    path = Path(path)
    if path.is_dir():
        from .checkpoint import read_tensors

        state = read_tensors(path)
    else:
        state = torch.load(path, map_location="cpu", weights_only=True)
        for key in ("state_dict", "model"):
            if isinstance(state, dict) and key in state and isinstance(state[key], dict):
                state = state[key]
    out = {}
    for name, tensor in state.items():
        for prefix in ("module.", "encoder."):
            name = name.removeprefix(prefix)
        out[name] = torch.as_tensor(tensor)
    return out


def copy_pretrained(encoder: ResNetEncoder, source: dict[str, torch.Tensor]) -> None:
    """Copy ResNet-50 tensors by name; the trimap input channel of conv1 starts at zero."""
    target = encoder.state_dict()
    missing = [name for name in target if name not in source and not name.endswith("num_batches_tracked")]
    if missing:
        raise KeyError(f"pretrained weights lack {len(missing)} encoder tensors, e.g. {missing[:3]}")
    with torch.no_grad():
        for name, dst in target.items():
            if name not in source:
                continue
            src = source[name].to(dst.dtype)
            if name == "conv1.weight" and src.shape[1] == dst.shape[1] - 1 and src.shape[2:] == dst.shape[2:] \
                    and src.shape[0] == dst.shape[0]:
                dst[:, : src.shape[1]].copy_(src)
                dst[:, src.shape[1]:].zero_()
                continue
            if src.shape != dst.shape:
                raise ValueError(f"pretrained {name} has shape {tuple(src.shape)}, expected {tuple(dst.shape)}")
            dst.copy_(src)


def init_weights(cfg: GeneratorConfig | None = None, pretrained=None, seed: int = 0) -> Generator:
    """Build a generator; encoder weights come from ``pretrained`` when given.

    ``pretrained`` may be a path or an already-loaded name -> tensor mapping.
    """
    cfg = cfg or GeneratorConfig()
    model = Generator(cfg)
    reset_parameters(model, torch.Generator().manual_seed(seed))
    if pretrained is None:
        log.warning("no pretrained encoder weights given; the whole generator is randomly initialized")
        return model
    source = pretrained if isinstance(pretrained, dict) else load_pretrained(pretrained)
    copy_pretrained(model.encoder, source)
    return model


def pad_to_multiple(array: np.ndarray, multiple: int = 32) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the two leading axes up to the next multiple."""
    h, w = array.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    pads = [(0, ph), (0, pw)] + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, pads, mode="reflect") if ph or pw else array, (h, w)


@torch.no_grad()
def generator_forward(model: Generator, image: np.ndarray, trimap: Trimap) -> np.ndarray:
    """Inference on one image whose sides are multiples of 32. Returns an (H, W) alpha."""
    image = check_rgb(image)
    if image.shape[:2] != trimap.shape:
        raise ValueError(f"image {image.shape[:2]} and trimap {trimap.shape} differ in size")
    was_training = model.training
    model.eval()
    try:
        rgb = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()[None]
        tri = torch.from_numpy(trimap.plane()).float()[None, None]
        alpha = model(rgb, tri)
    finally:
        model.train(was_training)
    return alpha[0, 0].double().numpy()
