import torch.nn as nn


class ImageClassifier(nn.Module):
    """Backbone -> neck -> head wrapper used as the top-level model."""

    def __init__(self, backbone, neck=None, head=None):
        super().__init__()
        self.backbone = backbone
        self.neck = neck
        self.head = head

    def forward(self, x):
        feats = self.backbone(x)
        if self.neck is not None:
            feats = self.neck(feats)
        return self.head(feats)
