"""
Run manifests, YAML reports and console rendering.

Every CLI command writes a ``manifest.yaml`` next to its artifacts so the
run can be repeated with ``--config manifest.yaml``.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from ecnn import __version__
from ecnn.config import to_plain

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"


@dataclass
class RunManifest:
    """Record of one CLI invocation."""

    command: str
    parameters: Dict[str, Any]
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    duration_seconds: float = 0.0
    started: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self) -> None:
        self.duration_seconds = round(time.perf_counter() - self.started, 6)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "tool_version": self.tool_version,
            "seed": int(self.seed),
            "parameters": to_plain(self.parameters),
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "results": to_plain(self.results),
            "duration_seconds": self.duration_seconds,
        }

    def write(self, output_dir: Path) -> Path:
        """Write the manifest into ``output_dir`` and return its path."""
        self.finish()
        path = Path(output_dir) / MANIFEST_NAME
        self.outputs.setdefault("manifest", str(path))
        write_yaml(path, self.to_dict())
        return path


def write_yaml(path: Path, payload: Mapping[str, Any]) -> Path:
    """Dump a report mapping as block-style YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as handle:
        yaml.safe_dump(to_plain(payload), handle, sort_keys=False, default_flow_style=None)
    logger.debug("Wrote %s", path)
    return path


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Route library logging through rich."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
        force=True,
    )


def summary_table(
    title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Table:
    """Build a rich table with cyan keys and formatted numeric cells."""
    table = Table(title=title)
    for index, column in enumerate(columns):
        table.add_column(column, style="cyan" if index == 0 else None)
    for row in rows:
        table.add_row(*[format_cell(value) for value in row])
    return table


def format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return "✅" if value else "❌"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_outputs(console: Console, outputs: Mapping[str, str]) -> None:
    console.print("\n[bold]Artifacts:[/bold]")
    for name, path in outputs.items():
        console.print(f"  • {name}: {path}")


def matrix_rows(values: Any, labels: Optional[List[str]] = None) -> List[List[Any]]:
    """Prefix each row of a 2-D array with a label for table rendering."""
    rows = []
    for index, row in enumerate(values):
        label = labels[index] if labels else str(index)
        rows.append([label] + [float(v) for v in row])
    return rows
