"""Runtime implementations of the building blocks used by discovered configs.

Parameter layouts replicate the upstream libraries the blocks were mined from,
so profiled sizes match the upstream models exactly.  Attention modules report their
matmul MACs to the profiler explicitly.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .profiler import add_macs
from .registry import build, build_act, build_norm, register


@register
class SwishMe(nn.Module):
    """x * sigmoid(x); parameter-free."""

    def __init__(self, inplace=False):
        super().__init__()
        self.inplace = inplace

    def forward(self, x):
        return F.silu(x, inplace=self.inplace)


@register
class DropPath(nn.Module):
    def __init__(self, drop_prob=0.0):
        super().__init__()
        self.drop_prob = float(drop_prob)

    def forward(self, x):
        if not self.training or self.drop_prob == 0.0:
            return x
        keep = 1.0 - self.drop_prob
        mask_shape = (x.shape[0],) + (1,) * (x.dim() - 1)
        mask = x.new_empty(mask_shape).bernoulli_(keep)
        return x * mask / keep


@register
class ImageClassifier(nn.Module):
    def __init__(self, backbone, neck=None, head=None):
        super().__init__()
        self.backbone = build(backbone)
        self.neck = build(neck) if neck is not None else None
        self.head = build(head) if head is not None else None

    def forward(self, x):
        feats = self.backbone(x)
        if self.neck is not None:
            feats = self.neck(feats)
        if self.head is not None:
            feats = self.head(feats)
        return feats


@register
class ConvModule(nn.Module):
    """conv / norm / act block with configurable ordering."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 dilation=1, groups=1, bias="auto", with_spectral_norm=False,
                 order=("conv", "norm", "act"), norm_cfg=None, act_cfg=None):
        super().__init__()
        if bias == "auto":
            bias = norm_cfg is None
        self.order = tuple(order)
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride,
                              padding=padding, dilation=dilation, groups=groups,
                              bias=bias)
        if with_spectral_norm:
            self.conv = nn.utils.spectral_norm(self.conv)
        norm_channels = out_channels if self.order.index("norm") > self.order.index("conv") \
            else in_channels
        self.norm = build_norm(norm_cfg, norm_channels) if norm_cfg is not None else None
        self.act = build_act(act_cfg) if act_cfg is not None else None

    def forward(self, x):
        for step in self.order:
            if step == "conv":
                x = self.conv(x)
            elif step == "norm" and self.norm is not None:
                x = self.norm(x)
            elif step == "act" and self.act is not None:
                x = self.act(x)
        return x


@register
class BasicBlock(nn.Module):
    """Two 3x3 convs with a residual connection."""

    def __init__(self, in_channels, out_channels, expansion=1, stride=1, dilation=1,
                 downsample=None, style="pytorch", with_cp=False, conv_cfg=None,
                 norm_cfg=None, drop_path_rate=0.0, act_cfg=None, init_cfg=None):
        super().__init__()
        mid_channels = out_channels // expansion
        self.conv1 = nn.Conv2d(in_channels, mid_channels, 3, stride=stride,
                               padding=dilation, dilation=dilation, bias=False)
        self.norm1 = build_norm(norm_cfg, mid_channels)
        self.conv2 = nn.Conv2d(mid_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = build_norm(norm_cfg, out_channels)
        self.act = build_act(act_cfg)
        self.downsample = build(downsample) if isinstance(downsample, dict) else None
        self.drop_path = DropPath(drop_path_rate)

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        out = self.drop_path(out)
        return self.act(out + identity)


@register
class SELayer(nn.Module):
    def __init__(self, channels, ratio=16, divisor=8):
        super().__init__()
        mid = max(channels // ratio, divisor)
        self.fc1 = nn.Conv2d(channels, mid, 1)
        self.fc2 = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s


@register
class InvertedResidual(nn.Module):
    """1x1 expand, depthwise, 1x1 project, with an optional residual."""

    def __init__(self, in_channels, out_channels, mid_channels, kernel_size=3,
                 stride=1, se_cfg=None, with_expand_conv=True, conv_cfg=None,
                 norm_cfg=None, act_cfg=None, drop_path_rate=0.0):
        super().__init__()
        self.with_res = stride == 1 and in_channels == out_channels
        self.expand_conv = None
        if with_expand_conv and in_channels != mid_channels:
            self.expand_conv = ConvModule(in_channels, mid_channels, 1, bias=False,
                                          norm_cfg=norm_cfg or {"type": "BatchNorm2d"},
                                          act_cfg=act_cfg or {"type": "ReLU"})
        self.depthwise_conv = ConvModule(mid_channels, mid_channels, kernel_size,
                                         stride=stride, padding=kernel_size // 2,
                                         groups=mid_channels, bias=False,
                                         norm_cfg=norm_cfg or {"type": "BatchNorm2d"},
                                         act_cfg=act_cfg or {"type": "ReLU"})
        self.se = build(dict(type="SELayer", **se_cfg)) if isinstance(se_cfg, dict) else None
        self.linear_conv = ConvModule(mid_channels, out_channels, 1, bias=False,
                                      norm_cfg=norm_cfg or {"type": "BatchNorm2d"},
                                      act_cfg=None)
        self.drop_path = DropPath(drop_path_rate)

    def forward(self, x):
        out = x
        if self.expand_conv is not None:
            out = self.expand_conv(out)
        out = self.depthwise_conv(out)
        if self.se is not None:
            out = self.se(out)
        out = self.linear_conv(out)
        if self.with_res:
            return x + self.drop_path(out)
        return out


class _ConvBN(nn.Sequential):
    def __init__(self, in_channels, out_channels, kernel_size=1, stride=1, padding=0,
                 dilation=1, groups=1):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride,
                      padding=padding, dilation=dilation, groups=groups, bias=False),
            nn.BatchNorm2d(out_channels))


@register
class MBConvBlock(nn.Module):
    """Mobile inverted bottleneck (expand -> depthwise -> project), fused BNs."""

    def __init__(self, in_channels, out_channels, expand_ratio=4.0, drop_path=0.0,
                 act_cfg=None):
        super().__init__()
        hidden = int(in_channels * expand_ratio)
        self.conv1 = _ConvBN(in_channels, hidden, 1)
        self.conv2 = _ConvBN(hidden, hidden, 3, padding=1, groups=hidden)
        self.conv3 = _ConvBN(hidden, out_channels, 1)
        self.act = build_act(act_cfg)
        self.drop_path = DropPath(drop_path)

    def forward(self, x):
        out = self.act(self.conv1(x))
        out = self.act(self.conv2(out))
        out = self.conv3(out)
        out = self.drop_path(out)
        return self.act(out + x)


@register
class ConvNorm(nn.Module):
    def __init__(self, in_dim, out_dim, ks=1, stride=1, pad=0, dilation=1,
                 groups=1, bn_weight_init=1):
        super().__init__()
        self.conv = nn.Conv2d(in_dim, out_dim, ks, stride=stride, padding=pad,
                              dilation=dilation, groups=groups, bias=False)
        self.bn = nn.BatchNorm2d(out_dim)
        nn.init.constant_(self.bn.weight, bn_weight_init)

    def forward(self, x):
        return self.bn(self.conv(x))


@register
class ConvMlp(nn.Module):
    """1x1 conv MLP over feature maps."""

    def __init__(self, in_features, hidden_features=None, out_features=None,
                 norm_cfg=None, act_cfg=None, drop=0.0, init_cfg=None):
        super().__init__()
        hidden_features = hidden_features or in_features
        out_features = out_features or in_features
        self.fc1 = nn.Conv2d(in_features, hidden_features, 1)
        self.norm = build_norm(norm_cfg, hidden_features) if norm_cfg else None
        self.act = build_act(act_cfg)
        self.drop = nn.Dropout(drop)
        self.fc2 = nn.Conv2d(hidden_features, out_features, 1)

    def forward(self, x):
        x = self.fc1(x)
        if self.norm is not None:
            x = self.norm(x)
        x = self.drop(self.act(x))
        return self.fc2(x)


@register
class FFN(nn.Module):
    """Feed-forward over maps: 1x1 conv + BN pairs with a residual."""

    def __init__(self, in_features, hidden_features=None, out_features=None,
                 act_cfg=None, drop_path=0.0):
        super().__init__()
        hidden_features = hidden_features or in_features
        out_features = out_features or in_features
        self.fc1 = nn.Sequential(nn.Conv2d(in_features, hidden_features, 1),
                                 nn.BatchNorm2d(hidden_features))
        self.act = build_act(act_cfg)
        self.fc2 = nn.Sequential(nn.Conv2d(hidden_features, out_features, 1),
                                 nn.BatchNorm2d(out_features))
        self.drop_path = DropPath(drop_path)

    def forward(self, x):
        shortcut = x
        x = self.fc2(self.act(self.fc1(x)))
        return self.drop_path(x) + shortcut


@register
class ContextBlock(nn.Module):
    """Global-context attention with channel add/mul fusion."""

    def __init__(self, in_channels, ratio, pooling_type="att",
                 fusion_types=("channel_add",)):
        super().__init__()
        self.in_channels = in_channels
        planes = int(in_channels * ratio)
        self.pooling_type = pooling_type
        if pooling_type == "att":
            self.conv_mask = nn.Conv2d(in_channels, 1, 1)
        else:
            self.avg_pool = nn.AdaptiveAvgPool2d(1)

        def branch():
            return nn.Sequential(
                nn.Conv2d(in_channels, planes, 1),
                nn.LayerNorm([planes, 1, 1]),
                nn.ReLU(inplace=True),
                nn.Conv2d(planes, in_channels, 1))

        self.channel_add_conv = branch() if "channel_add" in fusion_types else None
        self.channel_mul_conv = branch() if "channel_mul" in fusion_types else None

    def spatial_pool(self, x):
        batch, channels, height, width = x.shape
        if self.pooling_type != "att":
            return self.avg_pool(x)
        input_x = x.view(batch, 1, channels, height * width)
        mask = self.conv_mask(x).view(batch, 1, height * width, 1)
        mask = F.softmax(mask, dim=2)
        add_macs(batch * channels * height * width)
        context = torch.matmul(input_x, mask)
        return context.view(batch, channels, 1, 1)

    def forward(self, x):
        context = self.spatial_pool(x)
        out = x
        if self.channel_mul_conv is not None:
            out = out * torch.sigmoid(self.channel_mul_conv(context))
        if self.channel_add_conv is not None:
            out = out + self.channel_add_conv(context)
        return out


@register
class EfficientAdditiveAttention(nn.Module):
    """Additive token attention; accepts NCHW maps via a token adapter."""

    def __init__(self, in_dims=512, token_dim=256, num_heads=2):
        super().__init__()
        self.token_dim = token_dim
        self.to_query = nn.Linear(in_dims, token_dim * num_heads)
        self.to_key = nn.Linear(in_dims, token_dim * num_heads)
        self.w_g = nn.Parameter(torch.randn(token_dim * num_heads, 1))
        self.scale_factor = token_dim ** -0.5
        self.proj = nn.Linear(token_dim * num_heads, token_dim * num_heads)
        self.final = nn.Linear(token_dim * num_heads, token_dim)

    def forward(self, x):
        spatial = None
        if x.dim() == 4:
            batch, channels, height, width = x.shape
            spatial = (height, width)
            x = x.flatten(2).transpose(1, 2)  # (B, N, C)
        query = F.normalize(self.to_query(x), dim=-1)
        key = F.normalize(self.to_key(x), dim=-1)
        add_macs(query.numel())  # query @ w_g
        weights = query @ self.w_g
        attn = F.normalize(weights * self.scale_factor, dim=1)
        global_query = torch.sum(attn * query, dim=1, keepdim=True)
        out = self.proj(global_query * key) + query
        out = self.final(out)
        if spatial is not None:
            out = out.transpose(1, 2).reshape(-1, self.token_dim, *spatial)
        return out


def _make_divisible(value, divisor=8, min_value=None, round_limit=0.9):
    min_value = min_value or divisor
    new_value = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new_value < round_limit * value:
        new_value += divisor
    return new_value


def _rel_logits_1d(q, rel_k):
    """q: (B, H, W, dim); rel_k: (2W-1, dim) -> (B, H, W, W) via the skew trick."""
    batch, height, width, dim = q.shape
    add_macs(batch * height * width * dim * rel_k.shape[0])
    x = q @ rel_k.transpose(0, 1)  # (B, H, W, 2W-1)
    x = F.pad(x, (0, 1)).flatten(2)
    x = F.pad(x, (0, width - 1))
    x = x.reshape(batch, height, width + 1, 2 * width - 1)
    return x[:, :, :width, width - 1:]


class PosEmbedRel(nn.Module):
    def __init__(self, feat_size, dim_head, scale):
        super().__init__()
        self.height, self.width = feat_size
        self.dim_head = dim_head
        self.height_rel = nn.Parameter(torch.randn(self.height * 2 - 1, dim_head) * scale)
        self.width_rel = nn.Parameter(torch.randn(self.width * 2 - 1, dim_head) * scale)

    def forward(self, q):
        """q: (B, N, dim) with N == height*width -> (B, N, N) position logits."""
        batch = q.shape[0]
        q = q.reshape(batch, self.height, self.width, self.dim_head)
        rel_w = _rel_logits_1d(q, self.width_rel)              # (B, H, W, W)
        rel_w = rel_w.unsqueeze(3).expand(-1, -1, -1, self.height, -1)
        rel_h = _rel_logits_1d(q.transpose(1, 2), self.height_rel)  # (B, W, H, H)
        rel_h = rel_h.permute(0, 2, 1, 3).unsqueeze(4).expand(-1, -1, -1, -1, self.width)
        logits = rel_w + rel_h                                  # (B, H, W, H, W)
        n = self.height * self.width
        return logits.reshape(batch, n, n)


@register
class BottleneckAttn(nn.Module):
    """Relative-position self-attention over feature maps."""

    def __init__(self, dim, dim_out=None, feat_size=None, stride=1, num_heads=4,
                 dim_head=None, qk_ratio=1.0, qkv_bias=False, scale_pos_embed=False):
        super().__init__()
        if feat_size is None:
            raise ValueError("BottleneckAttn requires feat_size")
        dim_out = dim_out or dim
        if dim_out % num_heads:
            raise ValueError("dim_out must be divisible by num_heads")
        self.num_heads = num_heads
        self.dim_head_qk = dim_head or _make_divisible(dim_out * qk_ratio) // num_heads
        self.dim_head_v = dim_out // num_heads
        self.dim_out_qk = num_heads * self.dim_head_qk
        self.dim_out_v = num_heads * self.dim_head_v
        self.scale = self.dim_head_qk ** -0.5
        self.scale_pos_embed = scale_pos_embed
        self.qkv = nn.Conv2d(dim, self.dim_out_qk * 2 + self.dim_out_v, 1, bias=qkv_bias)
        self.pos_embed = PosEmbedRel(tuple(feat_size), self.dim_head_qk, self.scale)
        self.pool = nn.AvgPool2d(2, 2) if stride == 2 else nn.Identity()

    def forward(self, x):
        batch, _, height, width = x.shape
        n = height * width
        qkv = self.qkv(x)
        q, k, v = torch.split(
            qkv, [self.dim_out_qk, self.dim_out_qk, self.dim_out_v], dim=1)
        q = q.reshape(batch * self.num_heads, self.dim_head_qk, n).transpose(-1, -2)
        k = k.reshape(batch * self.num_heads, self.dim_head_qk, n)
        v = v.reshape(batch * self.num_heads, self.dim_head_v, n).transpose(-1, -2)

        add_macs(q.shape[0] * n * n * self.dim_head_qk)
        logits = q @ k
        pos = self.pos_embed(q)
        if self.scale_pos_embed:
            attn = ((logits + pos) * self.scale).softmax(dim=-1)
        else:
            attn = (logits * self.scale + pos).softmax(dim=-1)
        add_macs(q.shape[0] * n * n * self.dim_head_v)
        out = (attn @ v).transpose(-1, -2).reshape(batch, self.dim_out_v, height, width)
        return self.pool(out)


@register
class GlobalAveragePooling(nn.Module):
    def forward(self, x):
        return x.mean(dim=(2, 3))


@register
class CrossEntropyLoss(nn.Module):
    def __init__(self, loss_weight=1.0, label_smoothing=0.0):
        super().__init__()
        self.loss_weight = loss_weight
        self.label_smoothing = label_smoothing

    def forward(self, logits, target):
        return self.loss_weight * F.cross_entropy(
            logits, target, label_smoothing=self.label_smoothing)


@register
class LinearClsHead(nn.Module):
    def __init__(self, in_channels, num_classes, loss=None, topk=(1,), init_cfg=None):
        super().__init__()
        self.num_classes = num_classes
        self.fc = nn.Linear(in_channels, num_classes)
        self.loss_module = build(loss) if loss is not None else CrossEntropyLoss()
        self.topk = topk

    def forward(self, feats):
        return self.fc(feats)

    def loss(self, logits, target):
        return self.loss_module(logits, target)
