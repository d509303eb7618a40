"""Network assembly: config, encoder/decoder pyramid, skips, filters.

Layout for depth-4 at input 224: a 3x3 conv then a stride-4 patchify conv
produce the level-0 map (side 56); stride-2 convs step down the encoder
pyramid (56/28/14/7); the decoder mirrors with stride-2 transposed convs and
the head undoes the patchify with a stride-4 transposed conv followed by a
3x3 conv to RGB. The whole network is residual on the input.
"""

import dataclasses
import hashlib
import logging

import torch
from torch import nn

from . import kv
from .dfm import DegenerateFilter
from .errors import ConfigError, ShapeError
from .mit import (
    ConvGatingNetwork,
    MITBlock,
    MultiScaleDeepConv,
    MultiStageAttention,
    PlainTransformerBlock,
)
from .attention import WindowAttention
from .ssc import DfmChain, SameLevelAggregator, StarAggregator

log = logging.getLogger(__name__)

ABLATION_FLAGS = (
    "use_ssc",
    "use_mit",
    "use_dfm",
    "msam_to_va",
    "drop_msdc",
    "drop_cgm",
)


def largest_divisor_leq(n, cap):
    """Largest divisor of n that is <= cap (cap >= 1)."""
    for d in range(min(n, cap), 0, -1):
        if n % d == 0:
            return d
    return 1


@dataclasses.dataclass(frozen=True)
class StarNetConfig:
    depth: int = 4
    channels: tuple[int, ...] = (64, 128, 256, 256)
    input_size: int = 224
    patch_size: int = 4
    window_sizes: tuple[int, ...] = (56, 28, 14, 7)
    sr_ratios: tuple[int, ...] = (8, 8, 4, 2)
    heads: tuple[int, ...] = (2, 4, 4, 2)
    dfm_heads: tuple[int, ...] = (2, 4, 4, 2)
    cbam_reduction: int = 16
    cbam_kernel: int = 7
    msdc_kernels: tuple[int, ...] = (3, 5, 7)
    msdc_depth: int = 3
    cgn_kernel: int = 3
    dfm_gating_kernel: int = 3
    shuffle_groups: int = 4
    chain_kernels: tuple[int, ...] = (7, 5, 3)
    use_ssc: bool = True
    use_mit: bool = True
    use_dfm: bool = True
    msam_to_va: bool = False
    drop_msdc: bool = False
    drop_cgm: bool = False
    block_residual: bool = True
    global_residual: bool = True

    ## ------------------------------------------------------ derived values

    def sides(self):
        base = self.input_size // 4
        return tuple(base // (2**i) for i in range(self.depth))

    def effective_patch(self, level):
        return largest_divisor_leq(self.sides()[level], self.patch_size)

    def effective_sr(self, level):
        return largest_divisor_leq(self.sides()[level], self.sr_ratios[level])

    ## ---------------------------------------------------------- validation

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.depth >= 1, f"depth must be >= 1, got {self.depth}")
        for name, t in (
            ("channels", self.channels),
            ("window_sizes", self.window_sizes),
            ("sr_ratios", self.sr_ratios),
            ("heads", self.heads),
            ("dfm_heads", self.dfm_heads),
        ):
            need(len(t) == self.depth, f"{name} must have {self.depth} entries, got {len(t)}")
        need(
            self.input_size % (4 * 2 ** (self.depth - 1)) == 0,
            f"input_size {self.input_size} not a multiple of {4 * 2 ** (self.depth - 1)}",
        )
        need(self.patch_size >= 1, f"patch_size must be >= 1, got {self.patch_size}")
        need(
            len(self.chain_kernels) == self.depth - 1,
            f"chain_kernels must have {self.depth - 1} entries, got {len(self.chain_kernels)}",
        )
        for k in self.chain_kernels + self.msdc_kernels + (self.cgn_kernel, self.dfm_gating_kernel, self.cbam_kernel):
            need(k >= 1 and k % 2 == 1, f"kernel sizes must be odd, got {k}")
        need(self.msdc_depth >= 1, f"msdc_depth must be >= 1, got {self.msdc_depth}")
        need(self.shuffle_groups >= 1, f"shuffle_groups must be >= 1, got {self.shuffle_groups}")
        sides = self.sides()
        for i in range(self.depth):
            c, s = self.channels[i], sides[i]
            need(s >= 1, f"level {i}: side collapsed to {s}")
            need(c % 4 == 0, f"level {i}: channels {c} not divisible into 4 branch groups")
            need(c % self.shuffle_groups == 0,
                 f"level {i}: channels {c} not divisible by shuffle groups {self.shuffle_groups}")
            need(c % self.cbam_reduction == 0,
                 f"level {i}: channels {c} not divisible by cbam_reduction {self.cbam_reduction}")
            ws = self.window_sizes[i]
            need(s % ws == 0, f"level {i}: side {s} not tileable by window size {ws}")
            p = self.effective_patch(i)
            need(ws % p == 0, f"level {i}: window {ws} not a multiple of patch {p}")
            branch_dim = (c // 4) * p * p
            need(branch_dim % self.heads[i] == 0,
                 f"level {i}: branch token dim {branch_dim} not divisible by {self.heads[i]} heads")
            need(c % self.heads[i] == 0,
                 f"level {i}: channels {c} not divisible by {self.heads[i]} heads")
            dfm_dim = c * p * p
            need(dfm_dim % self.dfm_heads[i] == 0,
                 f"level {i}: token dim {dfm_dim} not divisible by {self.dfm_heads[i]} filter heads")
        return self

    ## ------------------------------------------------------- serialization

    def canonical_text(self):
        return kv.to_text(self)

    @classmethod
    def from_text(cls, text):
        return kv.from_text(cls, text)

    def config_hash(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]


def full_config():
    return StarNetConfig()


def tiny_config():
    return StarNetConfig(
        channels=(8, 16, 32, 32),
        input_size=64,
        window_sizes=(16, 8, 4, 2),
        sr_ratios=(8, 8, 4, 2),
        heads=(1, 2, 2, 1),
        dfm_heads=(1, 2, 2, 1),
        cbam_reduction=4,
    )


PRESETS = {"full": full_config, "tiny": tiny_config}


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def ablate(config, flags):
    """Return a copy of `config` with the given ablation flags applied."""
    for name in flags:
        if name not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation flag {name!r}; choose from {ABLATION_FLAGS}")
    return dataclasses.replace(config, **{k: bool(v) for k, v in flags.items()})


## ------------------------------------------------------------------- model


def _make_block(cfg, level):
    c = cfg.channels[level]
    side = cfg.sides()[level]
    p = cfg.effective_patch(level)
    if not cfg.use_mit:
        return PlainTransformerBlock(c, cfg.heads[level], side, p)
    if cfg.msam_to_va:
        attn = WindowAttention(c, cfg.heads[level], side, p)
    else:
        attn = MultiStageAttention(
            c,
            cfg.heads[level],
            cfg.window_sizes[level],
            cfg.effective_sr(level),
            p,
            cbam_reduction=cfg.cbam_reduction,
            cbam_kernel=cfg.cbam_kernel,
            shuffle_groups=cfg.shuffle_groups,
        )
    msdc = None if cfg.drop_msdc else MultiScaleDeepConv(c, cfg.msdc_kernels, cfg.msdc_depth)
    gate = None if cfg.drop_cgm else ConvGatingNetwork(c, cfg.cgn_kernel)
    return MITBlock(c, attn, msdc, gate, residual=cfg.block_residual)


class StarNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        config.validate()
        self.config = config
        cfg = config
        c = cfg.channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c[0], 3, padding=1),
            nn.Conv2d(c[0], c[0], 4, stride=4),
        )
        self.encoder = nn.ModuleList(_make_block(cfg, i) for i in range(cfg.depth))
        self.enc_down = nn.ModuleList(
            nn.Conv2d(c[i], c[i + 1], 3, stride=2, padding=1) for i in range(cfg.depth - 1)
        )
        agg = StarAggregator if cfg.use_ssc else SameLevelAggregator
        self.enc_to_filter = agg(c)
        self.filter_to_dec = agg(c)
        self.chain = DfmChain(c, cfg.chain_kernels) if cfg.use_ssc and cfg.depth > 1 else None
        if cfg.use_dfm:
            self.filters = nn.ModuleList(
                DegenerateFilter(
                    c[i], cfg.dfm_heads[i], cfg.effective_patch(i), cfg.dfm_gating_kernel
                )
                for i in range(cfg.depth)
            )
        else:
            self.filters = nn.ModuleList(nn.Identity() for _ in range(cfg.depth))
        self.decoder = nn.ModuleList(_make_block(cfg, i) for i in range(cfg.depth))
        self.dec_up = nn.ModuleList(
            nn.ConvTranspose2d(c[i + 1], c[i], 3, stride=2, padding=1, output_padding=1)
            for i in range(cfg.depth - 1)
        )
        self.head = nn.Sequential(
            nn.ConvTranspose2d(c[0], c[0], 4, stride=4),
            nn.Conv2d(c[0], 3, 3, padding=1),
        )

    def _check_input(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        size = self.config.input_size
        _, _, h, w = x.shape
        if h == 0 or w == 0 or h % size != 0 or w % size != 0:
            raise ShapeError(
                f"input {h}x{w}: spatial dims must be positive multiples of {size}"
                f" (stem patchify plus per-level window tiling)"
            )

    def encode(self, x):
        """Run the stem and encoder, returning the per-level feature pyramid."""
        cfg = self.config
        self._check_input(x)
        f = self.stem(x)
        enc = []
        for i in range(cfg.depth):
            f = self.encoder[i](f)
            enc.append(f)
            if i < cfg.depth - 1:
                f = self.enc_down[i](f)
        return enc

    def filter_stage(self, enc):
        """Aggregate the encoder pyramid, apply the filter chain and per-level
        filters; returns (inputs, outputs) lists for the filters."""
        skips = self.enc_to_filter(enc)
        pre, post = [], []
        for i in range(self.config.depth):
            s = skips[i]
            if self.chain is not None and i >= 1:
                s = s + self.chain(post[i - 1], i)
            pre.append(s)
            post.append(self.filters[i](s))
        return pre, post

    def _run(self, x, taps=None):
        cfg = self.config
        enc = self.encode(x)
        pre, filtered = self.filter_stage(enc)
        if taps is not None:
            taps["pre_filter"] = [t.detach() for t in pre]
            taps["post_filter"] = [t.detach() for t in filtered]
        dec_in = self.filter_to_dec(filtered)
        y = None
        for i in reversed(range(cfg.depth)):
            t = dec_in[i] if y is None else dec_in[i] + self.dec_up[i](y)
            y = self.decoder[i](t)
        out = self.head(y)
        if cfg.global_residual:
            out = out + x
        if not self.training:
            out = out.clamp(0.0, 1.0)
        return out

    def forward(self, x):
        return self._run(x)

    def forward_with_taps(self, x):
        """Forward pass that also captures the per-level maps entering and
        leaving the degenerate filters."""
        taps = {"pre_filter": [], "post_filter": []}
        out = self._run(x, taps)
        return out, taps

    def param_count(self):
        return sum(p.numel() for p in self.parameters())


def _init_weights(module):
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def build(config, seed=0):
    """Construct and deterministically initialize a network."""
    config.validate()
    torch.manual_seed(seed)
    model = StarNet(config)
    model.apply(_init_weights)
    log.info("built model: %d parameters, sides %s", model.param_count(), config.sides())
    return model
