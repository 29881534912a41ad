"""Encoders, frequency modulators, decoder and checkpoint I/O."""

import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import spectral
from .data import AUDIO_GRID, FRK_MAGIC, Frame, read_frk_array, write_frk_array
from .errors import ConfigError, ContractError, FormatError


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    stages: int = 4
    widths: tuple = (16, 32, 64, 128)
    expansion: int = 2
    use_vefm: bool = True
    use_avfm: bool = True
    # "modulated" feeds f_mod^i to the decoder skips, "masked" feeds raw f_m^i.
    skip_source: str = "modulated"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        self.validate()

    def validate(self):
        if self.stages < 2:
            raise ConfigError(f"stages must be >= 2, got {self.stages}")
        if len(self.widths) != self.stages:
            raise ConfigError(f"need {self.stages} widths, got {len(self.widths)}")
        if any(w <= 0 for w in self.widths):
            raise ConfigError("widths must be positive")
        if self.expansion < 1:
            raise ConfigError("expansion must be >= 1")
        if self.image_size % (2 ** self.stages):
            raise ConfigError(f"image_size {self.image_size} not divisible by 2^{self.stages}")
        if self.skip_source not in ("modulated", "masked"):
            raise ConfigError(f"unknown skip_source {self.skip_source!r}")
        grid = self.bottleneck_size
        if grid > AUDIO_GRID or AUDIO_GRID % grid or (AUDIO_GRID // grid) & (AUDIO_GRID // grid - 1):
            raise ConfigError(
                f"audio grid {AUDIO_GRID} cannot be halved down to the {grid}x{grid} bottleneck")

    @property
    def bottleneck_size(self):
        return self.image_size // 2 ** self.stages

    @property
    def audio_channels(self):
        return self.widths[-1]

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                kv[k] = v
        kw = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            v = kv[f.name]
            if f.name == "widths":
                kw[f.name] = tuple(int(x) for x in v.split(","))
            elif f.type is bool or f.name.startswith("use_"):
                kw[f.name] = v.lower() in ("1", "true", "yes")
            elif f.name == "skip_source":
                kw[f.name] = v
            else:
                kw[f.name] = int(v)
        return cls(**kw)


def feature_shapes(config):
    """``[(C_i, H_i, W_i)]`` for scales i = 1..t, from the config alone."""
    return [(w, config.image_size // 2 ** i, config.image_size // 2 ** i)
            for i, w in enumerate(config.widths, 1)]


# --- building blocks -----------------------------------------------------------

def _norm(channels):
    # Per-sample, per-channel normalization; independent of batch composition.
    return nn.InstanceNorm2d(channels, affine=True)


class InvertedResidual(nn.Module):
    """1x1 expand -> 3x3 depthwise (stride 1 or 2) -> 1x1 project."""

    def __init__(self, in_ch, out_ch, stride=1, expansion=2, residual=None):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        can_add = stride == 1 and in_ch == out_ch
        if residual and not can_add:
            raise ConfigError(f"residual requested for {in_ch}->{out_ch} stride {stride}")
        self.use_residual = can_add if residual is None else bool(residual)
        hidden = in_ch * expansion
        self.expand = nn.Conv2d(in_ch, hidden, 1, bias=False)
        self.norm1 = _norm(hidden)
        self.depthwise = nn.Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, bias=False)
        self.norm2 = _norm(hidden)
        self.project = nn.Conv2d(hidden, out_ch, 1)
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.act(self.norm1(self.expand(x)))
        h = self.act(self.norm2(self.depthwise(h)))
        h = self.project(h)
        return x + h if self.use_residual else h


class GatedConv(nn.Module):
    """``act(conv_f(x)) * sigmoid(conv_g(x))``, shape preserving."""

    def __init__(self, in_ch, out_ch=None, kernel_size=3, activation=None):
        super().__init__()
        out_ch = out_ch or in_ch
        pad = kernel_size // 2
        self.feature = nn.Conv2d(in_ch, out_ch, kernel_size, padding=pad)
        self.gate = nn.Conv2d(in_ch, out_ch, kernel_size, padding=pad)
        self.activation = nn.ELU() if activation is None else activation

    def forward(self, x):
        return self.activation(self.feature(x)) * torch.sigmoid(self.gate(x))


def _check_spatial(a, b, what):
    if a.shape[-2:] != b.shape[-2:]:
        raise ContractError(f"{what}: spatial sizes differ, {tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}")


class VisualFrequencyModulator(nn.Module):
    """Couples reference and masked features by filtering in Fourier space.

    The real part of the reference spectrum passes through a 1x1 conv to form a
    real filter with the masked branch's channel count; the gated masked
    features are transformed, multiplied by that filter and transformed back.
    """

    def __init__(self, ref_ch, masked_ch, gate_activation=None):
        super().__init__()
        self.filter = nn.Conv2d(ref_ch, masked_ch, 1)
        self.gated = GatedConv(masked_ch, masked_ch, activation=gate_activation)

    def reference_filter(self, f_r):
        return self.filter(spectral.fft2(f_r).data.real)

    def forward(self, f_r, f_m):
        _check_spatial(f_r, f_m, "VEFM")
        h_r = self.reference_filter(f_r)
        spec_m = spectral.fft2(self.gated(f_m))
        return spectral.ifft2(spec_m * h_r)


class AudioFrequencyModulator(nn.Module):
    """Filters the visual spectrum with a 1x1-conv projection of the audio feature."""

    def __init__(self, audio_ch, visual_ch):
        super().__init__()
        self.filter = nn.Conv2d(audio_ch, visual_ch, 1)

    def forward(self, f_mod, f_a):
        _check_spatial(f_mod, f_a, "AVFM")
        return spectral.ifft2(spectral.fft2(f_mod) * self.filter(f_a))


class ConcatFusion(nn.Module):
    """Ablation stand-in for a modulator: channel concat followed by a 1x1 conv."""

    def __init__(self, ch_a, ch_b, out_ch):
        super().__init__()
        self.proj = nn.Conv2d(ch_a + ch_b, out_ch, 1)

    def forward(self, a, b):
        _check_spatial(a, b, "concat fusion")
        return self.proj(torch.cat([a, b], dim=1))


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 3 else x


def _unbatched_like(y, x):
    return y.squeeze(0) if x.dim() == 3 else y


def inverted_residual_block(x, block):
    return _unbatched_like(block(_batched(x)), x)


def gated_conv(x, block):
    return _unbatched_like(block(_batched(x)), x)


def vefm_forward(f_r, f_m, module):
    return _unbatched_like(module(_batched(f_r), _batched(f_m)), f_m)


def avfm_forward(f_mod, f_a, module):
    return _unbatched_like(module(_batched(f_mod), _batched(f_a)), f_mod)


# --- encoders / decoder --------------------------------------------------------

class VisualEncoder(nn.Module):
    """Stem conv, then one stride-2 and one stride-1 block per stage."""

    def __init__(self, widths, expansion):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, padding=1), nn.SiLU())
        stages = []
        prev = widths[0]
        for w in widths:
            stages.append(nn.Sequential(
                InvertedResidual(prev, w, 2, expansion),
                InvertedResidual(w, w, 1, expansion),
            ))
            prev = w
        self.stages = nn.ModuleList(stages)

    def forward(self, img):
        x = self.stem(img)
        pyramid = []
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return pyramid


class AudioEncoder(nn.Module):
    """Halves the 32x32 audio grid down to the visual bottleneck size."""

    def __init__(self, out_ch, target_size, expansion):
        super().__init__()
        if target_size > AUDIO_GRID or AUDIO_GRID % target_size:
            raise ConfigError(f"cannot reduce a {AUDIO_GRID} grid to {target_size}")
        n_down = int(round(math.log2(AUDIO_GRID // target_size)))
        if 2 ** n_down * target_size != AUDIO_GRID:
            raise ConfigError(f"{AUDIO_GRID}/{target_size} is not a power of two")
        layers = []
        prev = AUDIO_GRID
        for k in range(n_down):
            ch = max(out_ch * (k + 1) // n_down, 1)
            layers.append(InvertedResidual(prev, ch, 2, expansion))
            prev = ch
        if prev != out_ch:
            layers.append(nn.Conv2d(prev, out_ch, 1, bias=False))
        layers.append(InvertedResidual(out_ch, out_ch, 1, expansion))
        self.body = nn.Sequential(*layers)

    def forward(self, audio):
        return self.body(audio)


def audio_encoder(audio, encoder):
    """Encode one ``AudioFeatureWindow`` (or a [B,32,32,32] tensor)."""
    x = audio
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x.reshaped), dtype=next(encoder.parameters()).dtype)
    return _unbatched_like(encoder(_batched(x)), x)


class Decoder(nn.Module):
    def __init__(self, widths, expansion):
        super().__init__()
        ups = []
        for i in range(len(widths) - 1, 0, -1):
            ups.append(nn.Sequential(
                InvertedResidual(widths[i] + widths[i - 1], widths[i - 1], 1, expansion),
                InvertedResidual(widths[i - 1], widths[i - 1], 1, expansion),
            ))
        self.ups = nn.ModuleList(ups)
        self.head = nn.Sequential(
            InvertedResidual(widths[0], widths[0], 1, expansion),
            nn.Conv2d(widths[0], 3, 3, padding=1),
        )

    def forward(self, bottom, skips):
        x = bottom
        for block, skip in zip(self.ups, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skip], dim=1))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return torch.sigmoid(self.head(x))


class TalkingPortraitNet(nn.Module):
    """Reference encoder, masked encoder, audio encoder, modulators and decoder."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        w, e = config.widths, config.expansion
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.ref_encoder = VisualEncoder(w, e)
            self.masked_encoder = VisualEncoder(w, e)
            self.audio_encoder = AudioEncoder(config.audio_channels, config.bottleneck_size, e)
            if config.use_vefm:
                self.visual_fusion = nn.ModuleList(VisualFrequencyModulator(c, c) for c in w)
            else:
                self.visual_fusion = nn.ModuleList(ConcatFusion(c, c, c) for c in w)
            if config.use_avfm:
                self.audio_fusion = AudioFrequencyModulator(config.audio_channels, w[-1])
            else:
                self.audio_fusion = ConcatFusion(w[-1], config.audio_channels, w[-1])
            self.decoder = Decoder(w, e)

    def encode(self, reference, masked, audio):
        """Per-scale fused features and the audio-fused bottleneck."""
        f_r = self.ref_encoder(reference)
        f_m = self.masked_encoder(masked)
        f_mod = [fuse(r, m) for fuse, r, m in zip(self.visual_fusion, f_r, f_m)]
        f_a = self.audio_encoder(audio)
        bottom = self.audio_fusion(f_mod[-1], f_a)
        skips = f_mod if self.config.skip_source == "modulated" else f_m
        return f_mod, f_a, bottom, skips[:-1]

    def forward(self, reference, masked, audio):
        size = self.config.image_size
        for name, t in (("reference", reference), ("masked", masked)):
            if t.dim() != 4 or tuple(t.shape[1:]) != (3, size, size):
                raise ContractError(f"{name} must be [B, 3, {size}, {size}], got {tuple(t.shape)}")
        if audio.dim() != 4 or tuple(audio.shape[1:]) != (AUDIO_GRID,) * 3:
            raise ContractError(f"audio must be [B, 32, 32, 32], got {tuple(audio.shape)}")
        _, _, bottom, skips = self.encode(reference, masked, audio)
        return self.decoder(bottom, skips)


def build_model(config):
    return TalkingPortraitNet(config)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def frames_to_tensor(frames, dtype=torch.float32):
    return torch.as_tensor(np.stack([f.pixels for f in frames]), dtype=dtype)


def model_forward(reference, masked, audio, model):
    """Synthesize one frame from a reference frame, masked frame and audio window."""
    dtype = next(model.parameters()).dtype
    ref = torch.as_tensor(reference.pixels, dtype=dtype)[None]
    msk = torch.as_tensor(masked.pixels, dtype=dtype)[None]
    aud = torch.as_tensor(audio.reshaped, dtype=dtype)[None]
    with torch.no_grad():
        out = model(ref, msk, aud)[0]
    px = out.to(torch.float32).numpy()
    return Frame(np.clip(px, 0.0, 1.0), masked.index, masked.head_box)


# --- checkpoints ---------------------------------------------------------------

CKPT_TAG = b"CKPT"


def save_checkpoint(path, model):
    """FRK1 container: tag, config text block, then named FRK1 array records."""
    state = model.state_dict()
    buf = io.BytesIO()
    buf.write(FRK_MAGIC + CKPT_TAG)
    text = model.config.to_text().encode("utf-8")
    buf.write(len(text).to_bytes(4, "little"))
    buf.write(text)
    buf.write(len(state).to_bytes(4, "little"))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        buf.write(len(raw).to_bytes(4, "little"))
        buf.write(raw)
        write_frk_array(buf, tensor.detach().cpu().to(torch.float32).numpy())
    Path(path).write_bytes(buf.getvalue())


def _read_u32(fh, path):
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(path, "truncated checkpoint")
    return int.from_bytes(raw, "little")


def read_checkpoint(path):
    """Return ``(ModelConfig, {name: ndarray})`` without building a model."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != FRK_MAGIC + CKPT_TAG:
            raise FormatError(path, "not an FRK1 checkpoint")
        n = _read_u32(fh, path)
        text = fh.read(n)
        if len(text) != n:
            raise FormatError(path, "truncated config block")
        try:
            config = ModelConfig.from_text(text.decode("utf-8"))
        except (ValueError, ConfigError) as exc:
            raise FormatError(path, f"bad config block: {exc}") from exc
        arrays = {}
        for _ in range(_read_u32(fh, path)):
            k = _read_u32(fh, path)
            name = fh.read(k).decode("utf-8")
            arrays[name] = read_frk_array(fh, path)
    return config, arrays


def load_checkpoint(path, expected_config=None):
    """Build a model from ``path``; rejects a config that differs from ``expected_config``."""
    config, arrays = read_checkpoint(path)
    if expected_config is not None and config != expected_config:
        raise ConfigError(f"{path}: checkpoint config {asdict(config)} != expected {asdict(expected_config)}")
    model = build_model(config)
    state = model.state_dict()
    if set(state) != set(arrays):
        raise FormatError(path, "parameter names do not match the config")
    for name, arr in arrays.items():
        if tuple(state[name].shape) != arr.shape:
            raise FormatError(path, f"{name}: shape {arr.shape} != {tuple(state[name].shape)}")
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
    model.eval()
    return model
