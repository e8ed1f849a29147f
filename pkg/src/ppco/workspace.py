"""One store with the model, viewpoint engine and workflow bound to it."""

from __future__ import annotations

from ppco.fixtures import load_fixture
from ppco.model import ProductModel
from ppco.store import Store
from ppco.viewpoints import ViewpointEngine
from ppco.workflow import Workflow


class Workspace:
    def __init__(self, store: Store | None = None, *, namespace: str = "demo",
                 pending_namespace: str = "pending", service_mode: bool = False):
        self.store = store if store is not None else Store()
        self.model = ProductModel(self.store, namespace=namespace, service_mode=service_mode)
        self.engine = ViewpointEngine(self.store, self.model)
        self.workflow = Workflow(self.store, self.model, self.engine, namespace=pending_namespace)

    @classmethod
    def open(cls, root=None, *, clock=None, **kwargs) -> Workspace:
        store = Store(root, clock=clock) if clock else Store(root)
        return cls(store, **kwargs)

    def load_fixture(self, path) -> dict[str, int]:
        return load_fixture(self, path)

    def close(self):
        self.store.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
