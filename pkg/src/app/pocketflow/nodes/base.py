"""Base node for the command pipeline."""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

from loguru import logger

from app.models.errors import ConfigError, RemosError

Store = dict[str, Any]


class BaseNode(ABC):
    """One step of a subcommand.

    Implements the three-phase lifecycle:
    1. prep() - check that the store holds what the step needs
    2. exec() - do the work
    3. post() - record outputs and set the transition action

    A failure in any phase is written to the store as an "error" action with
    ``error``, ``error_type``, ``error_node`` and ``exit_code``.
    """

    #: Store keys that must be present before ``exec`` runs.
    required: tuple[str, ...] = ()

    def __init__(self, name: str | None = None):
        self.name = name or self.__class__.__name__
        self.logger = logger.bind(node=self.name)

    def prep(self, store: Store) -> Store:
        missing = [key for key in self.required if store.get(key) is None]
        if missing:
            return self._fail(
                store,
                f"Missing required fields: {', '.join(missing)}",
                ConfigError.__name__,
                ConfigError.exit_code,
            )
        return store

    @abstractmethod
    def exec(self, store: Store) -> Store:
        """Main logic; must set ``store["action"]``."""

    def post(self, store: Store) -> Store:
        return store

    def record_output(self, store: Store, path: Path) -> Path:
        store.setdefault("outputs", []).append(Path(path))
        self.logger.info(f"Wrote {path}")
        return path

    def _fail(
        self, store: Store, message: str, error_type: str, exit_code: int
    ) -> Store:
        self.logger.error(f"{error_type} in {self.name}: {message}")
        store.update(
            action="error",
            error=message,
            error_type=error_type,
            error_node=self.name,
            exit_code=exit_code,
        )
        return store

    def run(self, store: Store) -> Store:
        """Run prep, exec and post; errors end up in the store, never raised."""
        self.logger.info(f"Running {self.name}")
        try:
            store = self.prep(store)
            if store.get("action") != "error":
                store = self.exec(store)
            store = self.post(store)
        except Exception as e:
            code = e.exit_code if isinstance(e, RemosError) else 1
            return self._fail(store, str(e), type(e).__name__, code)
        self.logger.info(
            f"Completed {self.name} with action: {store.get('action', 'none')}"
        )
        return store
