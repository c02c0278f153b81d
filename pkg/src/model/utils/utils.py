import os
import json
import logging
import platform
from typing import Dict, List, Optional

import numpy as np
import pydantic
from pydantic import BaseModel

from src.config import DECODER_VARIANTS
from src.model.core.corpus import MODALITIES, MODALITY_ALIASES
from src.model.core.network import CHECKPOINT_VERSION
from src.model.utils.errors import UsageError

MANIFEST_SUFFIX = ".manifest.json"


def parse_modalities(text: str) -> List[str]:
    """
    Parse a comma-separated modality list into canonical order.

    Accepts the short names f, c, o as well as frames, clips, flow.

    Args:
        text (str): e.g. "f,c,o" or "frames,flow"

    Returns:
        List[str]: Modality names in canonical order

    Raises:
        UsageError: If the list is empty or names an unknown modality
    """
    names = [part.strip().lower() for part in text.split(",") if part.strip()]
    if not names:
        raise UsageError("The modality list is empty")
    resolved = set()
    for name in names:
        name = MODALITY_ALIASES.get(name, name)
        if name not in MODALITIES:
            raise UsageError(f"Unknown modality '{name}'. Use f, c, o or {', '.join(MODALITIES)}")
        resolved.add(name)
    return [m for m in MODALITIES if m in resolved]


def write_json(data: Dict, path: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, encoding="utf-8", mode="w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


class RunManifest(BaseModel):
    """
    Record of one command run, written next to its outputs.

    Attributes:
        command (str): Subcommand name
        config (Dict | None): Resolved training configuration
        inputs (Dict[str, str]): Input paths by role
        outputs (Dict[str, str]): Output paths by role
        checkpoint (str | None): Checkpoint written or read
        seed (int | None): Seed of the run
        versions (Dict[str, str]): Versions of the artifacts' producers
    """
    command: str
    config: Optional[Dict] = None
    inputs: Dict[str, str] = {}
    outputs: Dict[str, str] = {}
    checkpoint: Optional[str] = None
    seed: Optional[int] = None
    versions: Dict[str, str] = {}


def artifact_versions() -> Dict[str, str]:
    return {
        "checkpoint_format": str(CHECKPOINT_VERSION),
        "numpy": np.__version__,
        "pydantic": pydantic.VERSION,
        "python": platform.python_version(),
    }


def manifest_path(output: str) -> str:
    """Manifest location for an output file or directory."""
    if os.path.isdir(output) or not os.path.splitext(output)[1]:
        return os.path.join(output, "manifest.json")
    return os.path.splitext(output)[0] + MANIFEST_SUFFIX


def write_manifest(manifest: RunManifest, output: str) -> str:
    manifest.versions = manifest.versions or artifact_versions()
    path = manifest_path(output)
    write_json(manifest.model_dump(), path)
    logging.info(f"Manifest written to {path}")
    return path


def parse_variant(text: str) -> Dict:
    """
    Parse an ablation variant of the form VARIANT[:MODALITIES], e.g. "uniform" or "msan:f,o".

    Returns:
        Dict: {"label", "decoder_variant", "semantic_modalities"}; the modality list is None when omitted

    Raises:
        UsageError: If the variant or a modality is unknown
    """
    name, _, modalities = text.strip().partition(":")
    if name not in DECODER_VARIANTS:
        raise UsageError(f"Unknown decoder variant '{name}'. Expected one of {DECODER_VARIANTS}")
    semantic = parse_modalities(modalities) if modalities else None
    return {"label": text.strip(), "decoder_variant": name, "semantic_modalities": semantic}
