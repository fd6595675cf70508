# app/schemas/cli.py
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field


class CliConfig(BaseModel):
    """A parsed command with its fully resolved options (defaults < --config file < flags)."""

    command: str
    options: Dict[str, Any] = Field(default_factory=dict)
    config_path: Optional[Path] = None

    def __getitem__(self, key: str) -> Any:
        return self.options[key]
