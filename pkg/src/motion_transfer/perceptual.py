"""Feature extractors for the perceptual loss and the loss itself.

An extractor maps a (B, 3, H, W) image batch to a list of feature maps.
Training and tests use a fixed random-weight extractor; a loader for
pretrained VGG19-style weights covers the production path.
"""

import torch
import torch.nn as nn


class IdentityExtractor(nn.Module):
    """Single layer returning the image itself; reduces the perceptual loss
    to plain L1."""

    num_layers = 1

    def forward(self, x):
        return [x]


class RandomFeatureExtractor(nn.Module):
    """Fixed random conv pyramid, deterministic for a given seed.

    Weights are frozen; gradients still flow to the input image.
    """

    def __init__(self, num_layers=4, base_width=16, seed=0):
        super().__init__()
        self.num_layers = num_layers
        gen = torch.Generator().manual_seed(seed)
        layers = []
        prev = 3
        for i in range(num_layers):
            w = base_width * 2**i
            conv = nn.Conv2d(prev, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (9 * prev)) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            prev = w
        self.convs = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = torch.relu(conv(x))
            feats.append(x)
        return feats


VGG19_DEFAULT_LAYERS = (1, 6, 11, 20, 29)  # relu1_1 .. relu5_1


class Vgg19Extractor(nn.Module):
    """VGG19 feature pyramid loaded from a local weights file.

    `weights_path` holds a torchvision-layout vgg19 state dict; no weights
    are downloaded.
    """

    def __init__(self, weights_path, layers=VGG19_DEFAULT_LAYERS):
        super().__init__()
        from torchvision.models import vgg19

        model = vgg19(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
        self.features = model.features
        self.layers = tuple(layers)
        self.num_layers = len(self.layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.layers:
                feats.append(x)
            if len(feats) == self.num_layers:
                break
        return feats


def perceptual_loss(extractor, a, b, layer_weights=None):
    """Weighted sum of mean absolute feature differences between a and b.

    layer_weights defaults to 1/n per layer; its length must match the
    extractor's layer count.
    """
    feats_a = extractor(a)
    feats_b = extractor(b)
    if layer_weights is None:
        layer_weights = [1.0 / len(feats_a)] * len(feats_a)
    if len(layer_weights) != len(feats_a):
        raise ValueError(
            f"{len(layer_weights)} layer weights for {len(feats_a)} extractor layers"
        )
    if any(w < 0 for w in layer_weights):
        raise ValueError("layer weights must be non-negative")
    loss = 0.0
    for w, fa, fb in zip(layer_weights, feats_a, feats_b):
        loss = loss + w * (fa - fb).abs().mean()
    return loss
