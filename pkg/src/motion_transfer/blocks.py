"""Convolutional building blocks shared by the stage networks."""

import torch
import torch.nn as nn


def conv_norm_relu(in_ch, out_ch, kernel=3, stride=1):
    pad = kernel // 2
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=pad),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetTranslator(nn.Module):
    """c7s1 stem, two stride-2 downsamples, residual trunk, mirrored upsampling.

    The family used for label-map and mask translation: input and output
    spatial dims match, the trunk runs at 1/4 resolution.
    """

    def __init__(self, in_channels, out_channels, base_width=64, n_blocks=9):
        super().__init__()
        w = base_width
        layers = [
            nn.Conv2d(in_channels, w, 7, padding=3),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
            conv_norm_relu(w, 2 * w, stride=2),
            conv_norm_relu(2 * w, 4 * w, stride=2),
        ]
        layers += [ResidualBlock(4 * w) for _ in range(n_blocks)]
        layers += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            conv_norm_relu(4 * w, 2 * w),
            nn.Upsample(scale_factor=2, mode="nearest"),
            conv_norm_relu(2 * w, w),
            nn.Conv2d(w, out_channels, 7, padding=3),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class UNet(nn.Module):
    """Encoder-decoder with skip connections and configurable depth."""

    def __init__(self, in_channels, out_channels, base_width=32, depth=5):
        super().__init__()
        widths = [base_width * 2**i for i in range(depth)]
        self.downs = nn.ModuleList()
        prev = in_channels
        for w in widths:
            self.downs.append(nn.Sequential(conv_norm_relu(prev, w),
                                            conv_norm_relu(w, w)))
            prev = w
        self.pool = nn.MaxPool2d(2)
        self.bottom = nn.Sequential(conv_norm_relu(prev, 2 * prev),
                                    conv_norm_relu(2 * prev, 2 * prev))
        self.ups = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        prev = 2 * widths[-1]
        for w in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(prev, w, 2, stride=2))
            self.up_convs.append(nn.Sequential(conv_norm_relu(2 * w, w),
                                               conv_norm_relu(w, w)))
            prev = w
        self.head = nn.Conv2d(prev, out_channels, 1)

    def forward(self, x):
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottom(x)
        for up, conv, skip in zip(self.ups, self.up_convs, reversed(skips)):
            x = up(x)
            x = conv(torch.cat([x, skip], dim=1))
        return self.head(x)
