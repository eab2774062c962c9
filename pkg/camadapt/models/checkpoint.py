"""Versioned checkpoint files.

A checkpoint is a `torch.save` pickle of a plain dictionary::

    {
        "format": "camadapt-checkpoint",
        "version": 1,
        "kind": "classifier" | "adaptation",
        "config": {...},            # JSON-compatible architecture config
        "step": int,                # optimizer steps taken
        "modules": {name: state_dict},
        "tensors": {name: tensor},  # e.g. frozen feature statistics
        "provenance": str | None,   # hash of the inputs that produced it
    }

Files are loaded with ``weights_only=True``, so nothing but tensors and
JSON-like containers is ever unpickled.
"""

import hashlib
import logging
import os
import pickle
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
from pydantic import ValidationError
from torch import nn

from camadapt.models.classifier import Classifier, ClassifierConfig
from camadapt.types import ArtifactMismatchError, DatasetIOError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "camadapt-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Contents of a checkpoint file."""

    kind: str
    config: dict[str, Any]
    modules: dict[str, dict[str, torch.Tensor]]
    step: int = 0
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    provenance: str | None = None

    def load_into(self, name: str, module: nn.Module) -> None:
        """Load a stored state dict into a module.

        Raises:
            ArtifactMismatchError: If the module is missing or its tensors do not
                match the module's architecture.
        """
        if name not in self.modules:
            msg = f"{self.kind} checkpoint has no module {name!r}"
            raise ArtifactMismatchError(msg)
        try:
            module.load_state_dict(self.modules[name])
        except RuntimeError as e:
            msg = f"Module {name!r} does not match the checkpoint architecture: {e}"
            raise ArtifactMismatchError(msg) from e


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    """Atomically write a checkpoint file.

    Raises:
        DatasetIOError: If the file cannot be written.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": checkpoint.kind,
        "config": checkpoint.config,
        "step": checkpoint.step,
        "modules": {
            name: {k: v.detach().cpu() for k, v in state.items()}
            for name, state in checkpoint.modules.items()
        },
        "tensors": {k: v.detach().cpu() for k, v in checkpoint.tensors.items()},
        "provenance": checkpoint.provenance,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        os.close(fd)
        torch.save(payload, tmp)
        Path(tmp).replace(path)
    except OSError as e:
        msg = f"Cannot write checkpoint {path}: {e}"
        raise DatasetIOError(msg) from e
    logger.info(
        "Saved %s checkpoint at step %d to %s", checkpoint.kind, checkpoint.step, path
    )


def load_checkpoint(path: Path, kind: str | None = None) -> Checkpoint:
    """Read a checkpoint file.

    Args:
        path: The checkpoint file.
        kind: The expected kind, checked when given.

    Returns:
        Checkpoint: The checkpoint contents.

    Raises:
        DatasetIOError: If the file cannot be read.
        ArtifactMismatchError: If the file is not a checkpoint of this format,
            version or kind.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as e:
        msg = f"Checkpoint not found: {path}"
        raise DatasetIOError(msg) from e
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        msg = f"Cannot read checkpoint {path}: {e}"
        raise ArtifactMismatchError(msg) from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        msg = f"{path} is not a {CHECKPOINT_FORMAT} file"
        raise ArtifactMismatchError(msg)
    if payload.get("version") != CHECKPOINT_VERSION:
        msg = (
            f"{path} has checkpoint version {payload.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
        raise ArtifactMismatchError(msg)
    if kind is not None and payload["kind"] != kind:
        msg = f"{path} holds a {payload['kind']} checkpoint, expected {kind}"
        raise ArtifactMismatchError(msg)

    return Checkpoint(
        kind=payload["kind"],
        config=payload["config"],
        modules=payload["modules"],
        step=payload["step"],
        tensors=payload.get("tensors", {}),
        provenance=payload.get("provenance"),
    )


def parameter_hash(module: nn.Module) -> str:
    """Return a SHA-256 digest of all parameters and buffers of a module."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_classifier(
    path: Path, m: Classifier, step: int = 0, provenance: str | None = None
) -> None:
    """Write a classifier checkpoint, optionally stamped with its provenance."""
    save_checkpoint(
        path,
        Checkpoint(
            kind="classifier",
            config=m.config.model_dump(mode="json"),
            modules={"M": m.state_dict()},
            step=step,
            provenance=provenance,
        ),
    )


def load_classifier(path: Path, expected: ClassifierConfig | None = None) -> Classifier:
    """Rebuild a classifier from its checkpoint in eval mode.

    Args:
        path: The checkpoint file.
        expected: The architecture the caller requires, checked when given.

    Returns:
        Classifier: The restored classifier.

    Raises:
        ArtifactMismatchError: If the checkpoint is not a classifier or does not
            match ``expected``.
    """
    checkpoint = load_checkpoint(path, kind="classifier")
    try:
        config = ClassifierConfig.model_validate(checkpoint.config)
    except ValidationError as e:
        msg = f"Classifier checkpoint {path} has an invalid config: {e}"
        raise ArtifactMismatchError(msg) from e
    if expected is not None and config != expected:
        msg = f"Classifier checkpoint {path} is {config!r}, expected {expected!r}"
        raise ArtifactMismatchError(msg)
    m = Classifier(config)
    checkpoint.load_into("M", m)
    return m.eval()
