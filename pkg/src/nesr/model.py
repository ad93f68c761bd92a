"""NeSR network: residual encoder, spectral profile interpolation (SPI),
neural attention mapping (NAM) and a coordinate-conditioned MLP decoder.

All stages are plain functions over weight bundles so each can be tested
and gradient-checked on its own; :class:`NeSR` wires them together.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from nesr.core import ops
from nesr.core.tensor import Tensor, active_tape, unwrap
from nesr.data.scene import WL_MAX, WL_MIN, SpectralImage, validate_wavelengths
from nesr.errors import ConfigurationError, DimensionError, DomainError

DECODER_DIMS = (128, 128, 256, 256)
ATTENTION_VARIANTS = ("spatial_spectral", "spectral", "spatial")

# Largest attention logit block (entries) built at once; larger batches are chunked.
_ATTN_CHUNK = 1 << 24
# Rows decoded per chunk when not recording gradients.
_DECODE_CHUNK = 1 << 16


@dataclass
class ModelConfig:
    in_channels: int = 3
    encoder_channels: int = 32
    embed_channels: int = 32
    encoder_blocks: int = 4
    enable_spi: bool = True
    enable_nam: bool = True
    attention_variant: str = "spatial_spectral"
    leaky_slope: float = 0.01
    decoder_dims: tuple = DECODER_DIMS
    wl_min: float = WL_MIN
    wl_max: float = WL_MAX
    # Speculative: append normalized (h, w) to each token. Off by default.
    spatial_coords: bool = False

    def __post_init__(self):
        self.decoder_dims = tuple(self.decoder_dims)
        if self.in_channels < 1 or self.encoder_channels < 1 or self.embed_channels < 1:
            raise ConfigurationError("channel counts must be >= 1")
        if self.encoder_blocks < 0:
            raise ConfigurationError("encoder_blocks must be >= 0")
        if self.decoder_dims != DECODER_DIMS:
            raise ConfigurationError(f"decoder_dims are fixed at {DECODER_DIMS}")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigurationError(
                f"attention_variant must be one of {ATTENTION_VARIANTS}, got {self.attention_variant!r}"
            )
        if not self.wl_min < self.wl_max:
            raise ConfigurationError("wl_min must be below wl_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder_dims"] = list(self.decoder_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# --- weight bundles ---------------------------------------------------------------

@dataclass
class EncoderWeights:
    stem_w: Tensor
    stem_b: Tensor
    blocks: list  # [(w1, b1, w2, b2), ...]

    def named(self) -> dict:
        out = {"encoder.stem.weight": self.stem_w, "encoder.stem.bias": self.stem_b}
        for i, (w1, b1, w2, b2) in enumerate(self.blocks):
            out[f"encoder.block{i}.conv1.weight"] = w1
            out[f"encoder.block{i}.conv1.bias"] = b1
            out[f"encoder.block{i}.conv2.weight"] = w2
            out[f"encoder.block{i}.conv2.bias"] = b2
        return out


@dataclass
class SPIWeights:
    """Two rank-3 convs (2 -> C, C -> C); when SPI is disabled only the 1x1x1 projection F -> C."""

    conv1_w: Optional[Tensor] = None
    conv1_b: Optional[Tensor] = None
    conv2_w: Optional[Tensor] = None
    conv2_b: Optional[Tensor] = None
    proj_w: Optional[Tensor] = None
    proj_b: Optional[Tensor] = None

    def named(self) -> dict:
        names = {"conv1_w": "spi.conv1.weight", "conv1_b": "spi.conv1.bias",
                 "conv2_w": "spi.conv2.weight", "conv2_b": "spi.conv2.bias",
                 "proj_w": "spi.proj.weight", "proj_b": "spi.proj.bias"}
        return {n: getattr(self, a) for a, n in names.items() if getattr(self, a) is not None}


@dataclass
class NAMWeights:
    token_w: Tensor
    token_b: Tensor
    wq: Optional[Tensor] = None
    wk: Optional[Tensor] = None
    wv: Optional[Tensor] = None
    out_w: Optional[Tensor] = None
    out_b: Optional[Tensor] = None

    def named(self) -> dict:
        names = {"token_w": "nam.token.weight", "token_b": "nam.token.bias",
                 "wq": "nam.wq", "wk": "nam.wk", "wv": "nam.wv",
                 "out_w": "nam.out.weight", "out_b": "nam.out.bias"}
        return {n: getattr(self, a) for a, n in names.items() if getattr(self, a) is not None}


@dataclass
class HeadWeights:
    layers: list  # [(w, b), ...] for C -> 128 -> 128 -> 256 -> 256 -> 1

    def named(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"head.fc{i}.weight"] = w
            out[f"head.fc{i}.bias"] = b
        return out


def _uniform(rng, shape, fan_in, dtype) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_weights(cfg: ModelConfig, seed: int = 0, dtype=np.float32):
    """Seeded uniform(+-sqrt(1/fan_in)) initialisation of every bundle."""
    rng = np.random.default_rng(seed)
    F, C = cfg.encoder_channels, cfg.embed_channels

    def conv(c_out, c_in, k, rank):
        fan = c_in * k ** rank
        return (_uniform(rng, (c_out, c_in) + (k,) * rank, fan, dtype),
                _uniform(rng, (c_out,), fan, dtype))

    def lin(n_in, n_out):
        return _uniform(rng, (n_in, n_out), n_in, dtype), _uniform(rng, (n_out,), n_in, dtype)

    stem_w, stem_b = conv(F, cfg.in_channels, 3, 2)
    blocks = []
    for _ in range(cfg.encoder_blocks):
        w1, b1 = conv(F, F, 3, 2)
        w2, b2 = conv(F, F, 3, 2)
        blocks.append((w1, b1, w2, b2))
    enc = EncoderWeights(stem_w, stem_b, blocks)

    if cfg.enable_spi:
        c1w, c1b = conv(C, 2, 3, 3)
        c2w, c2b = conv(C, C, 3, 3)
        spi = SPIWeights(conv1_w=c1w, conv1_b=c1b, conv2_w=c2w, conv2_b=c2b)
    else:
        pw, pb = conv(C, F, 1, 3)
        spi = SPIWeights(proj_w=pw, proj_b=pb)

    n_coord = 3 if cfg.spatial_coords else 1
    tw, tb = lin(C + n_coord, C)
    nam = NAMWeights(tw, tb)
    if cfg.enable_nam:
        nam.wq = _uniform(rng, (C, C), C, dtype)
        nam.wk = _uniform(rng, (C, C), C, dtype)
        nam.wv = _uniform(rng, (C, C), C, dtype)
        nam.out_w, nam.out_b = lin(C, C)

    dims = (C,) + DECODER_DIMS + (1,)
    head = HeadWeights([lin(dims[i], dims[i + 1]) for i in range(len(dims) - 1)])
    return enc, spi, nam, head


# --- coordinates -------------------------------------------------------------------

@dataclass
class CoordinateGrid:
    wavelengths: np.ndarray
    normalized: Tensor  # (bands, H, W)

    @property
    def values(self) -> np.ndarray:
        """One normalized coordinate per band."""
        return self.normalized.data[:, 0, 0]


def normalize_wavelengths(wavelengths, height: int = 1, width: int = 1,
                          wl_min: float = WL_MIN, wl_max: float = WL_MAX,
                          dtype=np.float64, strictly_increasing: bool = True) -> CoordinateGrid:
    """Map wavelengths to 2(l - wl_min)/(wl_max - wl_min) - 1, broadcast over H x W."""
    wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if wl.size == 0:
        raise DomainError("wavelength list is empty")
    if wl.min() < wl_min or wl.max() > wl_max:
        raise DomainError(f"wavelengths must lie in [{wl_min:g}, {wl_max:g}] nm")
    if strictly_increasing:
        validate_wavelengths(wl)
    elif np.unique(wl).size != wl.size:
        raise DomainError("wavelengths must be distinct")
    x = 2.0 * (wl - wl_min) / (wl_max - wl_min) - 1.0
    grid = np.broadcast_to(x[:, None, None], (wl.size, height, width)).astype(dtype)
    return CoordinateGrid(wl, Tensor(grid))


# --- stages -------------------------------------------------------------------------

def encode(x: Tensor, w: EncoderWeights, slope: float = 0.01) -> Tensor:
    """Stem conv + residual blocks ``act(x + conv(act(conv(x))))``; (in, H, W) -> (F, H, W)."""
    if x.ndim != 3:
        raise DimensionError(f"encode expects (channels, H, W), got {x.shape}")
    if x.shape[0] != w.stem_w.shape[1]:
        raise ConfigurationError(
            f"input has {x.shape[0]} channels but the encoder expects {w.stem_w.shape[1]}"
        )
    h = ops.leaky_relu(ops.convolve(x, w.stem_w, w.stem_b, rank=2), slope)
    for w1, b1, w2, b2 in w.blocks:
        r = ops.leaky_relu(ops.convolve(h, w1, b1, rank=2), slope)
        r = ops.convolve(r, w2, b2, rank=2)
        h = ops.leaky_relu(h + r, slope)
    return h


def spectral_profiles(m_in: Tensor, bands: int) -> tuple[Tensor, Tensor]:
    """Upsampled vertical and horizontal profiles reassembled as (bands, H, W) maps.

    Vertical profiles P_w*(h, l) are the (H, F) slices at fixed column w*,
    horizontal profiles P_h*(w, l) the (W, F) slices at fixed row h*; each
    is resized along its feature axis to ``bands`` samples.
    """
    F, H, W = m_in.shape
    vert = ops.transpose(m_in, (2, 1, 0))          # (W, H, F): one H x F profile per column
    vert = ops.resize_linear(ops.reshape(vert, (W * H, F)), bands)
    m_h = ops.transpose(ops.reshape(vert, (W, H, bands)), (2, 1, 0))
    horiz = ops.transpose(m_in, (1, 2, 0))         # (H, W, F): one W x F profile per row
    horiz = ops.resize_linear(ops.reshape(horiz, (H * W, F)), bands)
    m_w = ops.transpose(ops.reshape(horiz, (H, W, bands)), (2, 0, 1))
    return m_h, m_w


def spi_forward(m_in: Tensor, bands: int, w: SPIWeights, slope: float = 0.01,
                return_branches: bool = False):
    """(F, H, W) -> (C, bands, H, W)."""
    if bands < 1:
        raise DomainError(f"output band count must be >= 1, got {bands}")
    if w.conv1_w is None:
        raise ConfigurationError("SPI weights missing (model built with enable_spi=False)")
    m_h, m_w = spectral_profiles(m_in, bands)
    stacked = ops.stack([m_h, m_w], axis=0)        # (2, bands, H, W)
    out = ops.leaky_relu(ops.convolve(stacked, w.conv1_w, w.conv1_b, rank=3), slope)
    out = ops.leaky_relu(ops.convolve(out, w.conv2_w, w.conv2_b, rank=3), slope)
    if return_branches:
        return out, (m_h, m_w)
    return out


def spi_disabled(m_in: Tensor, bands: int, w: SPIWeights, slope: float = 0.01) -> Tensor:
    """Ablation path: replicate M_in over every band, then a 1x1x1 conv F -> C."""
    if bands < 1:
        raise DomainError(f"output band count must be >= 1, got {bands}")
    if w.proj_w is None:
        raise ConfigurationError("projection weights missing (model built with enable_spi=True)")
    F, H, W = m_in.shape
    rep = ops.broadcast_to(ops.reshape(m_in, (F, 1, H, W)), (F, bands, H, W))
    return ops.leaky_relu(ops.convolve(rep, w.proj_w, w.proj_b, rank=3), slope)


def make_tokens(m_out: Tensor, coords: CoordinateGrid, spatial_coords: bool = False) -> Tensor:
    """Per-voxel rows [feature C-vector | normalized wavelength (| h, w)], ordered (band, h, w)."""
    C = m_out.shape[0]
    vox = m_out.shape[1:]
    if coords.normalized.shape != vox:
        raise DimensionError(f"coordinate grid {coords.normalized.shape} does not match features {vox}")
    n = int(np.prod(vox))
    feats = ops.transpose(ops.reshape(m_out, (C, n)), (1, 0))
    cols = [feats, Tensor(coords.normalized.data.reshape(n, 1).astype(m_out.dtype))]
    if spatial_coords:
        b, H, W = vox
        hh = np.linspace(-1, 1, H) if H > 1 else np.zeros(1)
        ww = np.linspace(-1, 1, W) if W > 1 else np.zeros(1)
        grid = np.stack(np.meshgrid(hh, ww, indexing="ij"), axis=-1)
        grid = np.broadcast_to(grid, (b, H, W, 2)).reshape(n, 2).astype(m_out.dtype)
        cols.append(Tensor(grid))
    return ops.concat(cols, axis=1)


def _chunked_attention(q: Tensor, k: Tensor, v: Tensor, maps: Optional[list]) -> Tensor:
    """softmax(q k^T) v over batch axis 0, chunked to bound the logit block size."""
    batch, seq, _ = q.shape
    step = max(1, _ATTN_CHUNK // max(1, seq * seq))
    outs = []
    for s in range(0, batch, step):
        sl = slice(s, min(batch, s + step))
        qs, ks, vs = (q, k, v) if step >= batch else (q[sl], k[sl], v[sl])
        a = ops.softmax(ops.matmul(qs, ops.transpose(ks, (0, 2, 1))))
        if maps is not None:
            maps.append(a.data)
        outs.append(ops.matmul(a, vs))
    return outs[0] if len(outs) == 1 else ops.concat(outs, axis=0)


def attention(v: Tensor, w: NAMWeights, variant: str, vox_shape: tuple,
              return_maps: bool = False):
    """Attention block over token embeddings ``v`` (N, C) laid out as ``vox_shape`` = (bands, H, W).

    spatial_spectral: A = softmax(Q^T K) is C x C and the output is V A.
    spectral: per spatial site, softmax(Q K^T) over the band axis.
    spatial: per band, softmax(Q K^T) over the H*W sites.
    No 1/sqrt(d) scaling is applied.
    """
    if variant not in ATTENTION_VARIANTS:
        raise ConfigurationError(f"unknown attention variant {variant!r}")
    if w.wq is None:
        raise ConfigurationError("attention weights missing (model built with enable_nam=False)")
    n, C = v.shape
    qkv = ops.matmul(v, ops.concat([w.wq, w.wk, w.wv], axis=1))
    q, k, val = qkv[:, :C], qkv[:, C:2 * C], qkv[:, 2 * C:]
    maps: Optional[list] = [] if return_maps else None
    bands, H, W = vox_shape
    if variant == "spatial_spectral":
        a = ops.softmax(ops.matmul(ops.transpose(q, (1, 0)), k))
        if maps is not None:
            maps.append(a.data)
        out = ops.matmul(val, a)
    elif variant == "spectral":
        def by_site(t):
            return ops.transpose(ops.reshape(t, (bands, H * W, C)), (1, 0, 2))
        out = _chunked_attention(by_site(q), by_site(k), by_site(val), maps)
        out = ops.reshape(ops.transpose(out, (1, 0, 2)), (n, C))
    else:
        def by_band(t):
            return ops.reshape(t, (bands, H * W, C))
        out = _chunked_attention(by_band(q), by_band(k), by_band(val), maps)
        out = ops.reshape(out, (n, C))
    if return_maps:
        return out, maps
    return out


def nam_forward(m_out: Tensor, coords: CoordinateGrid, w: NAMWeights,
                variant: str = "spatial_spectral", enabled: bool = True,
                spatial_coords: bool = False, return_maps: bool = False):
    """(C, bands, H, W) features + coordinates -> (bands*H*W, C) token codes."""
    tokens = make_tokens(m_out, coords, spatial_coords)
    if tokens.shape[1] != w.token_w.shape[0]:
        raise ConfigurationError(
            f"token width {tokens.shape[1]} does not match token MLP input {w.token_w.shape[0]}"
        )
    v = ops.relu(ops.linear(tokens, w.token_w, w.token_b))
    if not enabled:
        return (v, []) if return_maps else v
    res = attention(v, w, variant, tuple(m_out.shape[1:]), return_maps=return_maps)
    att, maps = res if return_maps else (res, None)
    out = ops.relu(ops.linear(att, w.out_w, w.out_b))
    return (out, maps) if return_maps else out


def decode(codes: Tensor, w: HeadWeights) -> Tensor:
    """Per-token MLP with ReLU hidden layers; (N, C) -> (N, 1)."""
    if codes.ndim != 2 or codes.shape[1] != w.layers[0][0].shape[0]:
        raise DimensionError(f"decode expects (N, {w.layers[0][0].shape[0]}), got {codes.shape}")
    h = codes
    last = len(w.layers) - 1
    for i, (wt, b) in enumerate(w.layers):
        h = ops.linear(h, wt, b)
        if i < last:
            h = ops.relu(h)
    return h


def mrae_terms(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """Per-voxel |pred - target| / (target + eps) / n; these sum to the MRAE."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise DimensionError(f"mrae_loss: prediction {pred.shape} vs target {t.shape}")
    if eps <= 0:
        raise DomainError("eps must be positive")
    t = t.astype(pred.dtype, copy=False)
    weight = Tensor((1.0 / ((t + eps) * t.size)).astype(pred.dtype, copy=False))
    return ops.absolute(pred - Tensor(t)) * weight


def mrae_loss(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """mean(|pred - target| / (target + eps))."""
    return ops.sum(mrae_terms(pred, target, eps))


# --- full model ---------------------------------------------------------------------

@dataclass
class NeSR:
    config: ModelConfig
    encoder: EncoderWeights
    spi: SPIWeights
    nam: NAMWeights
    head: HeadWeights
    dtype: type = field(default=np.float32)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "NeSR":
        return cls(config, *init_weights(config, seed, dtype), dtype=dtype)

    def parameters(self) -> dict:
        out = {}
        for bundle in (self.encoder, self.spi, self.nam, self.head):
            out.update(bundle.named())
        return out

    def state_arrays(self) -> dict:
        return {k: v.data for k, v in self.parameters().items()}

    def load_arrays(self, arrays: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ConfigurationError(
                f"weight names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in params.items():
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ConfigurationError(f"{name}: shape {a.shape} != {p.shape}")
            p.data[...] = a.astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def features(self, image, bands: int) -> Tensor:
        """Encoder + SPI (or its ablation fallback): (in, H, W) -> (C, bands, H, W)."""
        cfg = self.config
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        if x.ndim != 3 or x.shape[0] != cfg.in_channels:
            raise ConfigurationError(
                f"input shape {x.shape} does not match in_channels={cfg.in_channels}"
            )
        m_in = encode(x, self.encoder, cfg.leaky_slope)
        if cfg.enable_spi:
            return spi_forward(m_in, bands, self.spi, cfg.leaky_slope)
        return spi_disabled(m_in, bands, self.spi, cfg.leaky_slope)

    def codes(self, image, wavelengths, strictly_increasing: bool = True) -> Tensor:
        cfg = self.config
        wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
        H, W = np.shape(unwrap(image))[1:]
        coords = normalize_wavelengths(wl, H, W, cfg.wl_min, cfg.wl_max, dtype=self.dtype,
                                       strictly_increasing=strictly_increasing)
        m_out = self.features(image, wl.size)
        return nam_forward(m_out, coords, self.nam, cfg.attention_variant, cfg.enable_nam,
                           cfg.spatial_coords)

    def forward(self, image, wavelengths, rows: Optional[np.ndarray] = None,
                strictly_increasing: bool = True) -> Tensor:
        """Predicted volume (bands, H, W) at ``wavelengths``.

        With ``rows`` (flat voxel indices in (band, h, w) order) only those
        voxels are decoded and a 1-D tensor is returned.
        """
        wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
        H, W = np.shape(unwrap(image))[1:]
        codes = self.codes(image, wl, strictly_increasing)
        if rows is not None:
            codes = ops.index(codes, np.asarray(rows, dtype=np.intp))
            return ops.reshape(decode(codes, self.head), (len(rows),))
        if active_tape() is None and codes.shape[0] > _DECODE_CHUNK:
            parts = [decode(Tensor(codes.data[s:s + _DECODE_CHUNK]), self.head).data
                     for s in range(0, codes.shape[0], _DECODE_CHUNK)]
            return Tensor(np.concatenate(parts).reshape(wl.size, H, W))
        return ops.reshape(decode(codes, self.head), (wl.size, H, W))

    def predict(self, image, wavelengths) -> SpectralImage:
        """Inference-only reconstruction returned as a :class:`SpectralImage`."""
        wl = validate_wavelengths(wavelengths)
        y = self.forward(image, wl).data
        return SpectralImage(wl, y.astype(np.float64))


def resolved_config(d: Optional[dict] = None, **overrides) -> ModelConfig:
    base = dict(d or {})
    base.update(overrides)
    return ModelConfig.from_dict(base)


def parameter_count(model: NeSR) -> int:
    return int(sum(p.size for p in model.parameters().values()))


def all_finite(tensors: Sequence[Tensor]) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in tensors)
