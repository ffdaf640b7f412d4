"""Model registry for the export scripts.

Each export kind has a registry of named backends. The "tiny-*" backends are
small seeded torch networks (and a classical blob segmenter) that run
anywhere with deterministic eval-mode outputs, so the full interchange
pipeline can be produced and tested without GPU checkpoints. Entries for the
usual heavyweight producers are registered as unavailable stubs that explain
what to install; their outputs enter through the same file formats.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy import ndimage
from torch import nn


class ModelUnavailableError(RuntimeError):
    """Requested backend needs packages or checkpoints not installed here."""


def _seeded(seed: int):
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def _init_conv(conv: nn.Conv2d, generator) -> nn.Conv2d:
    with torch.no_grad():
        nn.init.normal_(conv.weight, std=0.3, generator=generator)
        nn.init.zeros_(conv.bias)
    return conv


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None, None]


class TinyGlobalNet(nn.Module):
    """Two conv stages, 4x4 average pooling, linear head, L2-normalized."""

    DIM = 128

    def __init__(self, seed: int = 10001):
        super().__init__()
        generator = _seeded(seed)
        self.conv1 = _init_conv(nn.Conv2d(1, 8, 5, stride=2, padding=2), generator)
        self.conv2 = _init_conv(nn.Conv2d(8, 16, 5, stride=2, padding=2), generator)
        self.head = nn.Linear(16 * 16, self.DIM, bias=False)
        with torch.no_grad():
            nn.init.normal_(self.head.weight, std=0.1, generator=generator)
        self.eval()

    @torch.no_grad()
    def describe(self, image: np.ndarray) -> np.ndarray:
        x = torch.relu(self.conv1(_to_tensor(image)))
        x = torch.relu(self.conv2(x))
        x = torch.nn.functional.adaptive_avg_pool2d(x, (4, 4)).flatten(1)
        x = self.head(x)
        x = torch.nn.functional.normalize(x, dim=1)
        return x[0].numpy().astype(np.float32)


class TinyLocalNet(nn.Module):
    """Conv feature map; keypoints are channel-energy peaks, descriptors are
    the normalized feature columns at those peaks."""

    WIDTH = 32
    MAX_KEYPOINTS = 256
    BORDER = 8

    def __init__(self, seed: int = 20002):
        super().__init__()
        generator = _seeded(seed)
        self.conv1 = _init_conv(nn.Conv2d(1, 16, 5, padding=2), generator)
        self.conv2 = _init_conv(nn.Conv2d(16, self.WIDTH, 3, padding=1), generator)
        self.eval()

    @torch.no_grad()
    def detect(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, w = image.shape
        # zero-mean input: constant images produce zero response, so a flat
        # frame yields no keypoints instead of a plateau of fake peaks
        x = _to_tensor(image)
        x = x - x.mean()
        features = self.conv2(torch.relu(self.conv1(x)))[0]
        response = features.pow(2).mean(dim=0)
        pooled = torch.nn.functional.max_pool2d(
            response[None, None], kernel_size=9, stride=1, padding=4
        )[0, 0]
        peak = float(response.max())
        keep = (response >= pooled) & (response > 0.01 * peak)
        keep[: self.BORDER, :] = False
        keep[h - self.BORDER :, :] = False
        keep[:, : self.BORDER] = False
        keep[:, w - self.BORDER :] = False
        ys, xs = torch.nonzero(keep, as_tuple=True)
        if len(ys) == 0:
            return (
                np.empty((0, 2), dtype=np.float32),
                np.empty((0, self.WIDTH), dtype=np.float32),
            )
        scores = response[ys, xs]
        order = np.lexsort(
            (xs.numpy(), ys.numpy(), -scores.numpy())
        )[: self.MAX_KEYPOINTS]
        ys, xs = ys[order], xs[order]
        descriptors = features[:, ys, xs].T
        descriptors = torch.nn.functional.normalize(descriptors, dim=1)
        points = np.column_stack([xs.numpy() + 0.5, ys.numpy() + 0.5]).astype(np.float32)
        return points, descriptors.numpy().astype(np.float32)


class TinyMatcher:
    """Mutual-nearest-neighbor correspondences on TinyLocalNet features."""

    def __init__(self, seed: int = 20002):
        self.local = TinyLocalNet(seed=seed)

    @torch.no_grad()
    def match(self, image_a: np.ndarray, image_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts_a, desc_a = self.local.detect(image_a)
        pts_b, desc_b = self.local.detect(image_b)
        if len(pts_a) == 0 or len(pts_b) == 0:
            empty = np.empty((0, 2), dtype=np.float32)
            return empty, empty
        dist = torch.cdist(torch.from_numpy(desc_a), torch.from_numpy(desc_b))
        nn_a = dist.argmin(dim=1).numpy()
        nn_b = dist.argmin(dim=0).numpy()
        idx_a = np.arange(len(pts_a))
        mutual = nn_b[nn_a] == idx_a
        return pts_a[mutual], pts_b[nn_a[mutual]]


class BlobSegmenter:
    """Prompt-free instance generator: gaussian smoothing, bright-quantile
    threshold, connected components above a minimum area."""

    def __init__(self, quantile: float = 0.85, sigma: float = 2.0, min_area: int = 16):
        self.quantile = quantile
        self.sigma = sigma
        self.min_area = min_area

    def instances(self, image: np.ndarray) -> list[np.ndarray]:
        smoothed = ndimage.gaussian_filter(image.astype(np.float64), self.sigma)
        threshold = np.quantile(smoothed, self.quantile)
        labeled, count = ndimage.label(smoothed > threshold)
        out = []
        for index in range(1, count + 1):
            bits = labeled == index
            if int(bits.sum()) >= self.min_area:
                out.append(bits)
        return out


def _unavailable(name: str, hint: str):
    def factory():
        raise ModelUnavailableError(
            f"model '{name}' is not installed in this environment; {hint}. "
            f"Use a tiny-* backend or export with the upstream tooling and "
            f"feed the files through the same formats."
        )

    return factory


_GLOBAL = {
    "tiny-global": lambda: TinyGlobalNet(),
    "megaloc": _unavailable("megaloc", "install the upstream retrieval package and weights"),
    "netvlad": _unavailable("netvlad", "install the upstream retrieval package and weights"),
    "mixvpr": _unavailable("mixvpr", "install the upstream retrieval package and weights"),
}

_LOCAL = {
    "tiny-local": lambda: TinyLocalNet(),
    "superpoint": _unavailable("superpoint", "install the upstream detector and weights"),
}

_MATCHER = {
    "tiny-matcher": lambda: TinyMatcher(),
    "lightglue": _unavailable("lightglue", "install the upstream matcher and weights"),
}

_MASKS = {
    "blob-threshold": lambda: BlobSegmenter(),
    "sam2": _unavailable("sam2", "install the upstream segmenter and checkpoints"),
}

_REGISTRY = {
    "global-descriptor": _GLOBAL,
    "local-features": _LOCAL,
    "correspondences": _MATCHER,
    "masks": _MASKS,
}

DEFAULTS = {
    "global-descriptor": "tiny-global",
    "local-features": "tiny-local",
    "correspondences": "tiny-matcher",
    "masks": "blob-threshold",
}


def available(kind: str) -> list[str]:
    return sorted(_REGISTRY[kind])


def load_model(kind: str, name: str):
    try:
        registry = _REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown export kind '{kind}'") from None
    try:
        factory = registry[name]
    except KeyError:
        raise ModelUnavailableError(
            f"unknown model '{name}' for {kind}; available: {', '.join(sorted(registry))}"
        ) from None
    return factory()
