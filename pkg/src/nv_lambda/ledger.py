# nv-lambda/src/nv_lambda/ledger.py
from __future__ import annotations

import json
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from . import __version__
from . import config
from .hashing import sha256_file
from .logging_cfg import get_logger

log = get_logger(__name__)


class RunLedger:
    """Append-only JSONL record of CLI runs."""

    def __init__(self, path: str | Path | None = None) -> None:
        self._path = Path(path) if path else None
        self.max_bytes = 10_000_000

    @property
    def path(self) -> Path:
        return self._path or Path(config.settings.LOG_JSONL)

    def _rotate_if_needed(self) -> None:
        try:
            if self.path.exists() and self.path.stat().st_size > self.max_bytes:
                ts = time.strftime("%Y%m%d-%H%M%S")
                self.path.rename(self.path.with_name(f"{self.path.stem}-{ts}{self.path.suffix}"))
        except OSError:
            # best effort; never raise
            pass

    def append(self, event: str, **fields: Any) -> None:
        self._rotate_if_needed()
        rec: Dict[str, Any] = {"ts": time.time(), "event": event}
        rec.update(fields)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(rec, ensure_ascii=False, default=str) + "\n")


ledger = RunLedger()


def library_versions() -> Dict[str, str]:
    import numpy
    import pydantic
    import scipy

    return {
        "nv_lambda": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
    }


def write_manifest(
    out_dir: Path,
    command: str,
    config_sha256: str,
    seed: Optional[int],
    outputs: Iterable[Path],
    inputs: Iterable[Path] = (),
) -> Path:
    """manifest.json is the only output that carries a timestamp."""
    manifest = {
        "command": command,
        "config_sha256": config_sha256,
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": sorted(p.name for p in outputs),
        "versions": library_versions(),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    log.debug(f"manifest written to {path}")
    return path
