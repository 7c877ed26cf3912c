import pytest
import torch

from archeval.registry import BuildError, build, resolve
from archeval import modules, specials  # noqa: F401


def test_suffix_resolution_falls_back_to_base():
    assert resolve("InvertedResidual_3") is resolve("InvertedResidual")
    assert resolve("CrossEntropyLoss_2") is resolve("CrossEntropyLoss")
    assert resolve("ConvNorm_4") is resolve("ConvNorm")


def test_unknown_type_raises():
    with pytest.raises(BuildError):
        build({"type": "NoSuchBlock"})


@pytest.mark.parametrize("cfg,shape_in,shape_out", [
    (dict(type="ConvModule", in_channels=3, out_channels=8, kernel_size=3, stride=1,
          padding=1, bias=False, norm_cfg=dict(type="BatchNorm2d", eps=1e-5),
          act_cfg=dict(type="SiLU", inplace=False)),
     (2, 3, 16, 16), (2, 8, 16, 16)),
    (dict(type="BasicBlock", in_channels=8, out_channels=8, expansion=1,
          norm_cfg=dict(type="BatchNorm2d"), act_cfg=dict(type="SwishMe"),
          drop_path_rate=0.1),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="InvertedResidual_3", in_channels=8, out_channels=16, mid_channels=32,
          kernel_size=3, stride=2, se_cfg=None,
          norm_cfg=dict(type="BatchNorm2d"), act_cfg=dict(type="SiLU")),
     (2, 8, 16, 16), (2, 16, 8, 8)),
    (dict(type="MBConvBlock", in_channels=8, out_channels=8, expand_ratio=2,
          drop_path=0.1, act_cfg=dict(type="SwishMe")),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="ConvNorm_4", in_dim=8, out_dim=8, ks=3, stride=1, pad=1),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="ConvMlp", in_features=8, hidden_features=16, out_features=8,
          norm_cfg=dict(type="BatchNorm2d"), act_cfg=dict(type="GELU"), drop=0.1),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="FFN", in_features=8, hidden_features=32, out_features=8,
          act_cfg=dict(type="SwishMe"), drop_path=0.1),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="ContextBlock", in_channels=8, ratio=0.5, pooling_type="att",
          fusion_types=["channel_add", "channel_mul"]),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="EfficientAdditiveAttention", in_dims=8, token_dim=8, num_heads=1),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="BottleneckAttn", dim=8, dim_out=8, feat_size=(16, 16), stride=1,
          num_heads=4, scale_pos_embed=True),
     (2, 8, 16, 16), (2, 8, 16, 16)),
    (dict(type="MyReshape", shape=[-1, 8, 16, 16]), (2, 8, 16, 16), (2, 8, 16, 16)),
])
def test_module_forward_shapes(cfg, shape_in, shape_out):
    module = build(cfg)
    module.eval()
    out = module(torch.randn(*shape_in))
    assert tuple(out.shape) == shape_out


def test_token_attention_reduces_channels_to_token_dim():
    module = build(dict(type="EfficientAdditiveAttention", in_dims=32,
                        token_dim=16, num_heads=1))
    out = module(torch.randn(2, 32, 8, 8))
    assert tuple(out.shape) == (2, 16, 8, 8)


def test_bottleneck_attn_head_dims_follow_qk_ratio():
    module = build(dict(type="BottleneckAttn", dim=16, dim_out=16,
                        feat_size=(16, 16), num_heads=4, qk_ratio=1.0))
    assert module.dim_head_qk == 4
    assert module.qkv.weight.shape[0] == 48


def test_sequential_and_backbone_compose():
    cfg = dict(type="NAS_Backbone", layer_cfgs=[
        dict(type="Conv2d", in_channels=3, out_channels=8, kernel_size=3, padding=1),
        dict(type="SiLU", inplace=False),
        dict(type="SequentialWithConfig", module_cfgs=[
            dict(type="Conv2d", in_channels=8, out_channels=8, kernel_size=1),
            dict(type="Sigmoid"),
        ]),
    ])
    out = build(cfg)(torch.randn(1, 3, 8, 8))
    assert tuple(out.shape) == (1, 8, 8, 8)


def test_parallel_merge_operations():
    x = torch.randn(2, 4, 6, 6)
    conv = dict(type="Conv2d", in_channels=4, out_channels=4, kernel_size=1)
    for merge, channels in (("add", 4), ("mul", 4), ("concat", 8)):
        module = build(dict(type="ParallelWithConfig", module_cfg1=conv,
                            module_cfg2=dict(type="Identity"),
                            merge_operation=merge, concat_dim=1))
        assert module(x).shape[1] == channels


def test_parallel_rejects_bad_merge():
    with pytest.raises(BuildError):
        build(dict(type="ParallelWithConfig",
                   module_cfg1=dict(type="Identity"),
                   module_cfg2=dict(type="Identity"), merge_operation="divide"))


def test_parallel_zero_branch_identity_probe():
    module = build(dict(
        type="ParallelWithConfig",
        module_cfg1=dict(type="Conv2d", in_channels=4, out_channels=4,
                         kernel_size=3, padding=1),
        module_cfg2=dict(type="Identity"),
        merge_operation="add", concat_dim=1))
    with torch.no_grad():
        module.branch1.weight.zero_()
        module.branch1.bias.zero_()
    x = torch.randn(3, 4, 5, 5)
    assert torch.equal(module(x), x)


def test_classifier_head_and_loss():
    model = build(dict(
        type="ImageClassifier",
        backbone=dict(type="NAS_Backbone", layer_cfgs=[
            dict(type="Conv2d", in_channels=3, out_channels=8, kernel_size=3,
                 padding=1)]),
        neck=dict(type="GlobalAveragePooling"),
        head=dict(type="LinearClsHead", in_channels=8, num_classes=10,
                  loss=dict(type="CrossEntropyLoss_2", loss_weight=1.0),
                  topk=(1, 5))))
    logits = model(torch.randn(4, 3, 8, 8))
    assert tuple(logits.shape) == (4, 10)
    loss = model.head.loss(logits, torch.randint(0, 10, (4,)))
    assert loss.requires_grad
