from .backbone import BackboneSpec, backbone_forward, build_backbone
from .blocks import ASPP, CBR, Attention, EnhanceBlock, FRBlock, UnitAttention
from .pcnet import ForwardOutputs, PCNet, PCNetConfig, check_compatible, load_checkpoint, save_checkpoint, to_score_maps

__all__ = [
    "ASPP",
    "Attention",
    "BackboneSpec",
    "CBR",
    "EnhanceBlock",
    "FRBlock",
    "ForwardOutputs",
    "PCNet",
    "PCNetConfig",
    "UnitAttention",
    "backbone_forward",
    "build_backbone",
    "check_compatible",
    "load_checkpoint",
    "save_checkpoint",
    "to_score_maps",
]
