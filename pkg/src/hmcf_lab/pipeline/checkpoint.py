import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..errors import ConfigError, MissingInputError
from ..sphere import RadialGraph

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hmcf-lab/flow-checkpoint"
CHECKPOINT_VERSION = 1


def atomic_write_json(path, data: Any) -> Path:
    """Write JSON next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(data, f, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class SnapshotStore:
    """
    File-based store for one run directory: flow checkpoints and converged leaves.

    Layout::

        <run_dir>/checkpoint.json
        <run_dir>/leaves/leaf_<sigma>.json
    """

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self._ensure_layout()

    def _ensure_layout(self):
        (self.run_dir / "leaves").mkdir(parents=True, exist_ok=True)

    @property
    def checkpoint_path(self) -> Path:
        return self.run_dir / "checkpoint.json"

    def save_checkpoint(self, payload: Dict[str, Any]) -> Path:
        data = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **payload}
        atomic_write_json(self.checkpoint_path, data)
        logger.debug("checkpoint written at step %s", payload.get("step_count"))
        return self.checkpoint_path

    def load_checkpoint(self) -> Dict[str, Any]:
        if not self.checkpoint_path.exists():
            raise MissingInputError(f"no checkpoint in {self.run_dir}")
        with self.checkpoint_path.open("r") as f:
            data = json.load(f)
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint {data.get('format')!r} v{data.get('version')!r}")
        return data

    def has_checkpoint(self) -> bool:
        return self.checkpoint_path.exists()

    def _leaf_path(self, sigma: float) -> Path:
        return self.run_dir / "leaves" / f"leaf_{sigma!r}.json"

    def save_leaf(self, sigma: float, graph: RadialGraph, summary: Dict[str, Any]) -> Path:
        return atomic_write_json(self._leaf_path(sigma), {"surface": graph.to_snapshot(), "summary": summary})

    def load_leaf(self, sigma: float) -> Optional[Dict[str, Any]]:
        """Stored leaf as {'graph', 'summary'}, or None when that sigma was never completed."""
        path = self._leaf_path(sigma)
        if not path.exists():
            return None
        with path.open("r") as f:
            data = json.load(f)
        return {"graph": RadialGraph.from_snapshot(data["surface"]), "summary": data["summary"]}

    def list_leaves(self) -> List[float]:
        sigmas = []
        for p in (self.run_dir / "leaves").glob("leaf_*.json"):
            try:
                sigmas.append(float(p.stem[len("leaf_"):]))
            except ValueError:
                logger.warning("ignoring unexpected file %s", p)
        return sorted(sigmas)
