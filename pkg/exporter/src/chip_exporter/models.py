"""Model registry: torchvision classifiers plus a CIFAR-style ResNet-56."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1,
                               bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.stride = stride
        self.in_planes = in_planes
        self.planes = planes

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.stride != 1 or self.in_planes != self.planes:
            # Parameter-free shortcut: stride the input and zero-pad channels.
            shortcut = x[:, :, ::self.stride, ::self.stride]
            pad = self.planes - self.in_planes
            shortcut = F.pad(shortcut, (0, 0, 0, 0, pad // 2, pad - pad // 2))
        else:
            shortcut = x
        return F.relu(out + shortcut)


class CifarResNet(nn.Module):
    """ResNet for 32x32 inputs: 16-channel stem, three stages of basic blocks."""

    def __init__(self, blocks_per_stage, num_classes=10):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(16)
        self.layer1 = self._stage(16, 16, blocks_per_stage, 1)
        self.layer2 = self._stage(16, 32, blocks_per_stage, 2)
        self.layer3 = self._stage(32, 64, blocks_per_stage, 2)
        self.fc = nn.Linear(64, num_classes)

    @staticmethod
    def _stage(in_planes, planes, blocks, stride):
        layers = [BasicBlock(in_planes, planes, stride)]
        layers += [BasicBlock(planes, planes) for _ in range(blocks - 1)]
        return nn.Sequential(*layers)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.layer3(self.layer2(self.layer1(out)))
        out = F.adaptive_avg_pool2d(out, 1).flatten(1)
        return self.fc(out)


def resnet56(num_classes=10):
    return CifarResNet(9, num_classes)


# name -> (constructor(pretrained: bool), input resolution)
def _tv_resnet50(pretrained):
    from torchvision.models import resnet50

    return resnet50(weights="IMAGENET1K_V1" if pretrained else None)


def _tv_vgg16(pretrained):
    from torchvision.models import vgg16_bn

    return vgg16_bn(weights="IMAGENET1K_V1" if pretrained else None)


def _local_resnet56(pretrained):
    if pretrained:
        raise ValueError("resnet56 has no downloadable weights; pass --checkpoint")
    return resnet56()


REGISTRY = {
    "resnet50": (_tv_resnet50, 224),
    "vgg16": (_tv_vgg16, 224),
    "resnet56": (_local_resnet56, 32),
}


def build_model(name: str, *, pretrained: bool = False, checkpoint: str | None = None,
                seed: int = 0) -> tuple[nn.Module, int]:
    """Instantiate a registered model in eval mode, plus its input resolution."""
    if name not in REGISTRY:
        raise ValueError(f"unknown model {name!r}; supported: {sorted(REGISTRY)}")
    ctor, resolution = REGISTRY[name]
    torch.manual_seed(seed)
    try:
        model = ctor(pretrained)
    except Exception as exc:  # weight download failures surface here
        raise RuntimeError(f"could not obtain weights for {name}: {exc}") from exc
    if checkpoint:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model, resolution
