"""Single-file checkpoint container.

The container is a dict saved with ``torch.save``:

    format, version, config, step, model, critics, opt_g, opt_d, rng

``model`` carries the encoder, the codebook (vectors, EMA statistics, ages)
and the decoder. Inference only needs ``config`` and ``model``.
"""
import pickle
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from ..codec.model import CodecModel
from ..core.config import CodecConfig
from ..core.exceptions import CheckpointCorruptError, CheckpointVersionError, ConfigurationError
from ..core.logging import get_logger

logger = get_logger(__name__)

FORMAT = "tokencodec-checkpoint"
VERSION = 1
REQUIRED_KEYS = ("format", "version", "config", "step", "model")


def save_checkpoint(state: Dict[str, Any], path: Union[str, Path]) -> Path:
    """Write a container dict, stamping the format and version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": FORMAT, "version": VERSION, **state}, path)
    logger.info(f"Checkpoint written to {path} (step {state.get('step')})")
    return path


def load_checkpoint(path: Union[str, Path], map_location: Optional[Union[str, torch.device]] = "cpu") -> Dict[str, Any]:
    """Read and validate a container.

    Raises:
        CheckpointCorruptError: If the file cannot be unpickled or lacks required keys
        CheckpointVersionError: If the container version is not supported
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        state = torch.load(path, map_location=map_location, weights_only=True)
    except (RuntimeError, pickle.UnpicklingError, zipfile.BadZipFile, EOFError, ValueError) as e:
        raise CheckpointCorruptError(f"Unreadable checkpoint {path}", {"reason": str(e)}) from e

    if not isinstance(state, dict) or state.get("format") != FORMAT:
        raise CheckpointCorruptError(f"{path} is not a codec checkpoint")
    if state.get("version") != VERSION:
        raise CheckpointVersionError(
            f"Checkpoint version {state.get('version')} is not supported",
            {"found": state.get("version"), "supported": VERSION}
        )
    missing = [k for k in REQUIRED_KEYS if k not in state]
    if missing:
        raise CheckpointCorruptError(f"Checkpoint {path} is missing entries", {"missing": missing})
    return state


def config_from_state(state: Dict[str, Any]) -> CodecConfig:
    try:
        return CodecConfig(**state["config"])
    except ConfigurationError as e:
        raise CheckpointCorruptError("Checkpoint carries an invalid config", e.details) from e


def save_trainer(trainer, path: Union[str, Path]) -> Path:
    """Persist everything a resumed run needs. Only valid between iterations."""
    if trainer._expect != "g":
        raise CheckpointCorruptError("cannot checkpoint between a generator and critic step", {"step": trainer.step})
    return save_checkpoint({
        "config": trainer.cfg.model_dump(mode="json"),
        "step": trainer.step,
        "model": trainer.model.state_dict(),
        "critics": trainer.critics.state_dict(),
        "opt_g": trainer.opt_g.state_dict(),
        "opt_d": trainer.opt_d.state_dict(),
        "rng": torch.get_rng_state(),
    }, path)


def restore_trainer(trainer, path: Union[str, Path]) -> int:
    """Load a training checkpoint into an existing trainer; returns the restored step.

    Raises:
        CheckpointCorruptError: If training state is missing or does not fit the trainer
    """
    state = load_checkpoint(path, map_location=trainer.device)
    missing = [k for k in ("critics", "opt_g", "opt_d", "rng") if k not in state]
    if missing:
        raise CheckpointCorruptError("Checkpoint has no training state", {"missing": missing})
    try:
        trainer.model.load_state_dict(state["model"])
        trainer.critics.load_state_dict(state["critics"])
        trainer.opt_g.load_state_dict(state["opt_g"])
        trainer.opt_d.load_state_dict(state["opt_d"])
    except (RuntimeError, KeyError, ValueError) as e:
        raise CheckpointCorruptError("Checkpoint does not match the model layout", {"reason": str(e)}) from e
    torch.set_rng_state(state["rng"].cpu())
    trainer.step = int(state["step"])
    trainer._expect = "g"
    trainer._pending = None
    logger.info(f"Resumed from {path} at step {trainer.step}")
    return trainer.step


def load_model(path: Union[str, Path], device: Optional[Union[str, torch.device]] = "cpu") -> CodecModel:
    """Build a ``CodecModel`` in eval mode from a checkpoint."""
    state = load_checkpoint(path, map_location=device)
    model = CodecModel(config_from_state(state))
    try:
        model.load_state_dict(state["model"])
    except RuntimeError as e:
        raise CheckpointCorruptError("Checkpoint weights do not match its config", {"reason": str(e)}) from e
    return model.to(device).eval()
