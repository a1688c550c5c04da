"""Classification head and the interface shared by content networks.

A network maps one problem's content to class logits. The softmax
cross-entropy head lives here so every architecture trains against the
same loss; concrete architectures implement ``forward_logits``,
``backward_from_logits`` and ``parameters``.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Return (loss, probs, dlogits) for one sample.

    Computed through log-sum-exp so saturated logits stay finite; probs sum
    to 1 up to roundoff and the loss is non-negative.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if label < 0 or label >= logits.shape[0]:
        raise DimensionError(
            f"label {label} outside {logits.shape[0]}-class output")
    z = logits - np.max(logits)
    lse = np.log(np.sum(np.exp(z)))
    loss = lse - z[label]
    probs = np.exp(z - lse)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, probs, dlogits


def check_finite(arr: np.ndarray, layer: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values after layer '{layer}'")
    return arr


class Network:
    """Base class for the content architectures.

    Subclasses provide:
      forward_logits(content) -> (logits, cache)
      backward_from_logits(dlogits, cache) -> {param name: gradient}
      parameters() -> {param name: live array}
    """

    def forward_logits(self, content):
        raise NotImplementedError

    def backward_from_logits(self, dlogits, cache):
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def loss_and_probs(self, content, label: int):
        """Cross-entropy loss and class probabilities for one sample."""
        logits, _ = self.forward_logits(content)
        loss, probs, _ = softmax_cross_entropy(logits, label)
        return loss, probs

    def predict(self, content) -> int:
        logits, _ = self.forward_logits(content)
        return int(np.argmax(logits))

    def batch_loss_and_grads(self, batch):
        """Mean loss over (content, label) pairs and its parameter gradients."""
        if not batch:
            raise DimensionError("empty batch")
        grads = {name: np.zeros_like(p) for name, p in self.parameters().items()}
        total = 0.0
        for content, label in batch:
            logits, cache = self.forward_logits(content)
            loss, _, dlogits = softmax_cross_entropy(logits, label)
            sample_grads = self.backward_from_logits(dlogits, cache)
            for name in grads:
                grads[name] += sample_grads[name]
            total += loss
        n = len(batch)
        for name in grads:
            grads[name] /= n
        return total / n, grads
