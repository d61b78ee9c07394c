"""Extraction-point registry for the supported torchvision classifiers.

Each architecture exposes exactly five tap points, depth 0 (shallowest) to
depth 4 (deepest):

- ``resnet18`` / ``resnet50``: the output of the stem max-pool, then the
  outputs of the four residual stages.
- ``vgg16``: the output of the convolution immediately preceding each
  max-pool, taken *before* the following ReLU (the conv module's own
  output; the in-place ReLU never touches our copy).

Standardization constants ride along so the serving metadata can hand them
to clients — the client standardizes (and masks) images itself; this
package only ever sees standardized tensors.
"""

from dataclasses import dataclass

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ExtractionSpec:
    """An architecture name plus its five activation tap points."""

    architecture: str
    hook_points: tuple[str, ...]
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if len(self.hook_points) != 5:
            raise ValueError(
                f"{self.architecture}: expected exactly 5 hook points, "
                f"got {len(self.hook_points)}"
            )


_RESNET_POINTS = ("maxpool", "layer1", "layer2", "layer3", "layer4")

REGISTRY: dict[str, ExtractionSpec] = {
    "vgg16": ExtractionSpec(
        "vgg16",
        ("features.2", "features.7", "features.14", "features.21", "features.28"),
    ),
    "resnet18": ExtractionSpec("resnet18", _RESNET_POINTS),
    "resnet50": ExtractionSpec("resnet50", _RESNET_POINTS),
}


def get_spec(architecture: str) -> ExtractionSpec:
    try:
        return REGISTRY[architecture]
    except KeyError:
        raise ValueError(
            f"unknown architecture {architecture!r}; "
            f"choose from {sorted(REGISTRY)}"
        ) from None
