"""Collaborative product-information framework: PPCO model, viewpoint
filtering, approval workflow and XML message exchange between nodes."""

from importlib import resources
from pathlib import Path

from ppco.ids import EntityId
from ppco.store import Store, TraceEvent, TraceKind
from ppco.workspace import Workspace

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path of a bundled fixture (``piston.json``, ``viewpoints.json``)."""
    return Path(str(resources.files("ppco") / "data" / name))


def piston_workspace(**kwargs) -> Workspace:
    """In-memory workspace loaded with the bundled piston scenario."""
    ws = Workspace(**kwargs)
    ws.load_fixture(data_path("piston.json"))
    ws.load_fixture(data_path("viewpoints.json"))
    return ws


__all__ = ["EntityId", "Store", "TraceEvent", "TraceKind", "Workspace", "data_path", "piston_workspace"]
