"""Torchvision classifiers behind the nasseg oracle interface.

``TorchOracle`` subclasses ``nasseg.oracle.OracleHandle``, so
``nasseg.oracle.serve_oracle`` gives it the standard wire protocol and
``nasseg.oracle.export_store`` the standard file layout with no protocol
code on this side. Inputs arrive already standardized ([C, H, W] float32);
they go straight into the network.
"""

import threading
import warnings

import numpy as np
import torch

from nasseg.oracle import ModelMeta, OracleHandle

from .specs import ExtractionSpec, get_spec


def _load_model(spec: ExtractionSpec, pretrained: bool, seed: int) -> torch.nn.Module:
    import torchvision.models as tvm

    ctor = getattr(tvm, spec.architecture)
    if pretrained:
        try:
            return ctor(weights="IMAGENET1K_V1")
        except Exception as exc:
            warnings.warn(
                f"{spec.architecture}: pretrained weights unavailable ({exc}); "
                f"falling back to seeded random initialization — logits are "
                f"meaningless for real images",
                RuntimeWarning,
                stacklevel=3,
            )
    torch.manual_seed(seed)
    return ctor(weights=None)


class TorchOracle(OracleHandle):
    """A frozen torchvision classifier with five activation tap points.

    A single model instance answers all requests; a lock serializes forward
    passes so the threaded wire server stays a request queue. Logit batches
    are processed in chunks of ``max_batch``.
    """

    backend = "torch"

    def __init__(self, spec: ExtractionSpec | str, input_hw: tuple[int, int] = (96, 96),
                 max_batch: int = 32, pretrained: bool = True, seed: int = 0):
        if isinstance(spec, str):
            spec = get_spec(spec)
        if max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {max_batch}")
        self.spec = spec
        self.max_batch = int(max_batch)
        self._lock = threading.Lock()
        self._model = _load_model(spec, pretrained, seed)
        self._model.eval()
        self._model.requires_grad_(False)

        self._captured: dict[int, torch.Tensor] = {}
        self._capture = False
        for depth, point in enumerate(spec.hook_points):
            module = self._model.get_submodule(point)
            module.register_forward_hook(self._make_hook(depth))

        h, w = int(input_hw[0]), int(input_hw[1])
        logits, acts = self._forward(torch.zeros(1, 3, h, w), capture=True)
        self.meta = ModelMeta(
            num_classes=int(logits.shape[1]),
            depths=5,
            channels=[int(acts[d].shape[1]) for d in range(5)],
            input_size=(h, w, 3),
            mean=list(spec.mean),
            std=list(spec.std),
            spatial=[(int(acts[d].shape[2]), int(acts[d].shape[3])) for d in range(5)],
        )

    def _make_hook(self, depth: int):
        def hook(module, inputs, output):
            if self._capture:
                self._captured[depth] = output.detach().clone()

        return hook

    def _forward(self, x: torch.Tensor, capture: bool):
        with self._lock, torch.inference_mode():
            self._capture = capture
            self._captured = {}
            try:
                logits = self._model(x)
            finally:
                self._capture = False
            return logits, self._captured

    def logits(self, batch: np.ndarray) -> np.ndarray:
        arr = self._check_batch(batch)
        out = []
        for start in range(0, arr.shape[0], self.max_batch):
            chunk = torch.from_numpy(np.ascontiguousarray(arr[start : start + self.max_batch]))
            logits, _ = self._forward(chunk, capture=False)
            out.append(logits.numpy())
        return np.concatenate(out, axis=0).astype(np.float32)

    def activations(self, image: np.ndarray, depths: list[int]) -> list[np.ndarray]:
        arr = self._check_image(image)
        depths = self._check_depths(depths)
        x = torch.from_numpy(np.ascontiguousarray(arr))[None]
        _, captured = self._forward(x, capture=True)
        return [captured[d][0].numpy().astype(np.float32) for d in depths]
