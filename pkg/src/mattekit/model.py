"""The matting network.

A shared encoder feeds two decoders with shortcuts taken at different
depths: the trimap decoder fuses the deep and middle encoder taps, the
alpha decoder the middle and shallow taps. Shortcuts pass through global
convolutions, upsampling is sub-pixel, and an optional recurrent
propagation unit refines the alpha. Every one of those choices sits behind
a config flag so ablations are a config edit, not a code edit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .matting import fuse_alpha
from .nn import (
    Conv2d,
    ConvLSTMCell,
    ConvNormRelu,
    Module,
    ModuleList,
    ResBlock,
    UpBlock,
)
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    in_size: int = 64
    stage_widths: tuple = (16, 32, 64)
    blocks_per_stage: int = 1
    gc_kernel: int = 7
    lstm_hidden: int = 16
    prop_steps: int = 3
    use_sp: bool = True
    use_gc: bool = True
    use_pu: bool = True
    shared_encoder: bool = True
    norm: str = "batch"

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if len(self.stage_widths) < 2:
            raise ValueError("need at least 2 encoder stages")
        if any(w < 1 for w in self.stage_widths):
            raise ValueError(f"bad stage widths {self.stage_widths}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if self.gc_kernel % 2 == 0 or self.gc_kernel < 1:
            raise ValueError(f"gc_kernel must be odd and positive, got {self.gc_kernel}")
        if self.prop_steps < 0:
            raise ValueError("prop_steps must be >= 0")
        if self.norm not in ("batch", "none"):
            raise ValueError(f"norm must be 'batch' or 'none', got {self.norm!r}")

    @property
    def downsample(self):
        return 2 ** len(self.stage_widths)

    def as_dict(self):
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        return d


@dataclass
class ForwardOutput:
    """Everything one forward pass produces.

    alpha_final is a plain numpy batch [N,H,W]: the last alpha estimate
    overwritten with hard labels where the adapted trimap is definite. The
    fusion is a readout, not part of the differentiable graph.
    """

    trimap_logits: Tensor
    alpha_intermediate: Tensor
    alpha_steps: list = field(default_factory=list)
    alpha_final: np.ndarray = None
    trimap_labels: np.ndarray = None

    @property
    def alpha_last(self):
        return self.alpha_steps[-1] if self.alpha_steps else self.alpha_intermediate


class Encoder(Module):
    """Stem conv plus one stride-2 residual stage per width entry.

    Taps: shallow after the first stage (H/2), middle after the next-to-last
    (H/4 for three stages), deep after the last.
    """

    def __init__(self, cfg, rng, in_ch=4):
        super().__init__()
        w0 = cfg.stage_widths[0]
        self.stem = ConvNormRelu(in_ch, w0, 3, rng, norm=cfg.norm)
        stages = []
        prev = w0
        for w in cfg.stage_widths:
            blocks = [ResBlock(prev, w, rng, stride=2, norm=cfg.norm)]
            for _ in range(cfg.blocks_per_stage - 1):
                blocks.append(ResBlock(w, w, rng, norm=cfg.norm))
            stages.append(ModuleList(blocks))
            prev = w
        self.stages = ModuleList(stages)

    def forward(self, x):
        x = self.stem(x)
        taps = []
        for stage in self.stages:
            for block in stage:
                x = block(x)
            taps.append(x)
        n = len(taps)
        return {"shallow": taps[0], "middle": taps[max(0, n - 2)], "deep": taps[-1]}


class ShortcutFuse(Module):
    """Merge an encoder tap into the decoder stream at equal resolution.

    The tap passes through a global convolution (or a 1x1 conv when global
    context is ablated), is concatenated onto the stream, and a 3x3 conv
    brings the width back down.
    """

    def __init__(self, stream_ch, tap_ch, cfg, rng):
        super().__init__()
        if cfg.use_gc:
            from .nn import GlobalConv
            self.lateral = GlobalConv(tap_ch, tap_ch, cfg.gc_kernel, rng)
        else:
            self.lateral = Conv2d(tap_ch, tap_ch, 1, rng)
        self.merge = ConvNormRelu(stream_ch + tap_ch, stream_ch, 3, rng, norm=cfg.norm)

    def forward(self, stream, tap):
        return self.merge(T.concat([stream, self.lateral(tap)], axis=1))


class Decoder(Module):
    """Bottleneck to full resolution with two shortcut fusions.

    levels picks which taps fuse where: ("deep", "middle") for the trimap
    head, ("middle", "shallow") for the alpha head. The deep tap fuses
    before any upsampling, middle after the first doubling, shallow after
    the second.
    """

    def __init__(self, cfg, rng, levels, out_ch):
        super().__init__()
        ws = cfg.stage_widths
        n = len(ws)
        tap_w = {"deep": ws[-1], "middle": ws[max(0, n - 2)], "shallow": ws[0]}
        self.levels = tuple(levels)

        self.fuse_deep = (ShortcutFuse(ws[-1], tap_w["deep"], cfg, rng)
                          if "deep" in levels else None)
        # Up step i (0-based) lands at the resolution of encoder stage
        # n-1-i; mirror that stage's width (full resolution reuses ws[0]).
        plan = [ws[n - 2 - i] if n - 2 - i >= 0 else ws[0] for i in range(n)]
        ups = []
        prev = ws[-1]
        for w in plan:
            ups.append(UpBlock(prev, w, rng, use_sp=cfg.use_sp, norm=cfg.norm))
            prev = w
        self.ups = ModuleList(ups)
        # The middle tap lives one doubling above the bottleneck, the
        # shallow tap at half resolution (up step n-2).
        self._middle_at = 0
        self._shallow_at = n - 2
        self.fuse_middle = (ShortcutFuse(plan[self._middle_at], tap_w["middle"], cfg, rng)
                            if "middle" in levels else None)
        self.fuse_shallow = (ShortcutFuse(plan[self._shallow_at], tap_w["shallow"], cfg, rng)
                             if "shallow" in levels else None)
        self.head = Conv2d(prev, out_ch, 3, rng)

    def forward(self, taps):
        x = taps["deep"]
        if self.fuse_deep is not None:
            x = self.fuse_deep(x, taps["deep"])
        for i, up in enumerate(self.ups):
            x = up(x)
            if i == self._middle_at and self.fuse_middle is not None:
                x = self.fuse_middle(x, taps["middle"])
            if i == self._shallow_at and self.fuse_shallow is not None:
                x = self.fuse_shallow(x, taps["shallow"])
        return self.head(x)


class PropagationUnit(Module):
    """Recurrent alpha refinement.

    Each step re-reads the image, the adapted trimap probabilities, and the
    previous alpha, runs them through two residual blocks and a conv-LSTM
    whose state persists across steps, and emits a fresh sigmoid alpha.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        hid = cfg.lstm_hidden
        self.inlet = ConvNormRelu(3 + 3 + 1, hid, 3, rng, norm=cfg.norm)
        self.res1 = ResBlock(hid, hid, rng, norm=cfg.norm)
        self.res2 = ResBlock(hid, hid, rng, norm=cfg.norm)
        self.cell = ConvLSTMCell(hid, hid, rng)
        self.out = Conv2d(hid, 1, 1, rng)

    def forward(self, image, trimap_probs, alpha0, steps):
        n, _, h, w = image.shape
        hstate, cstate = self.cell.init_state(n, h, w, dtype=image.dtype)
        alphas = []
        alpha = alpha0
        for _ in range(steps):
            x = T.concat([image, trimap_probs, alpha], axis=1)
            x = self.inlet(x)
            x = self.res2(self.res1(x))
            hstate_next, cstate = self.cell(x, hstate, cstate)
            hstate = hstate_next
            alpha = T.sigmoid(self.out(hstate))
            alphas.append(alpha)
        return alphas


class MattingNet(Module):
    """Full model; construct with a ModelConfig and a seeded generator."""

    def __init__(self, cfg, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng, in_ch=4)
        self.t_decoder = Decoder(cfg, rng, levels=("deep", "middle"), out_ch=3)
        if not cfg.shared_encoder:
            self.a_encoder = Encoder(cfg, rng, in_ch=4)
        else:
            self.a_encoder = None
        self.a_decoder = Decoder(cfg, rng, levels=("middle", "shallow"), out_ch=1)
        if cfg.use_pu and cfg.prop_steps > 0:
            self.prop = PropagationUnit(cfg, rng)
        else:
            self.prop = None

    def forward(self, input4):
        cfg = self.cfg
        n, c, h, w = input4.shape
        if c != 4:
            raise ShapeError(f"expected 4-channel input, got {c}")
        d = cfg.downsample
        if h % d or w % d:
            raise ShapeError(f"spatial size {h}x{w} not divisible by {d}")

        image = T.narrow(input4, 1, 0, 3)
        taps = self.encoder(input4)
        logits = self.t_decoder(taps)
        probs = T.softmax_channel(logits)

        if self.a_encoder is not None:
            # Cascaded variant: the alpha branch sees the image plus the
            # adapted trimap re-encoded as a single soft value channel
            # (BG 0, UNKNOWN 0.5, FG 1), kept differentiable.
            p_unk = T.narrow(probs, 1, 1, 1)
            p_fg = T.narrow(probs, 1, 2, 1)
            t_value = T.add(p_unk * 0.5, p_fg)
            a_taps = self.a_encoder(T.concat([image, t_value], axis=1))
        else:
            a_taps = taps
        alpha_mid = T.sigmoid(self.a_decoder(a_taps))

        steps = []
        if self.prop is not None:
            steps = self.prop(image, probs, alpha_mid, cfg.prop_steps)
        out = ForwardOutput(trimap_logits=logits, alpha_intermediate=alpha_mid,
                            alpha_steps=steps)

        labels = np.argmax(logits.data, axis=1).astype(np.uint8)
        out.trimap_labels = labels
        last = out.alpha_last.data[:, 0]
        fused = np.stack([fuse_alpha(last[i], labels[i]) for i in range(n)])
        out.alpha_final = fused
        return out

    def parameter_table(self):
        """Per-submodule parameter counts, for documentation and sanity."""
        rows = []
        for name, child in self._children.items():
            rows.append((name, child.param_count()))
        rows.append(("total", self.param_count()))
        return rows


def build_model(cfg, seed=0):
    """Deterministic constructor: same seed, same parameters."""
    return MattingNet(cfg, np.random.default_rng(seed))
