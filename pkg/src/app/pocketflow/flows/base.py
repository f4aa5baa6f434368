"""Action-routed flows over pipeline nodes."""

from dataclasses import dataclass, field
from typing import Any

from loguru import logger

END = "end"


@dataclass
class FlowNode:
    """A node class and the node id each of its actions leads to."""

    node_class: type
    transitions: dict[str, str] = field(default_factory=dict)

    def target(self, action: str) -> str:
        """Where ``action`` leads; "default" is the fallback, then the end."""
        return self.transitions.get(action, self.transitions.get("default", END))


class BaseFlow:
    """Runs nodes from "start" until a transition reaches "end".

    Every node shares one store. The action a node leaves in ``store["action"]``
    selects the next node. An "error" action stops the flow unless the node
    routes it somewhere. The store comes back with ``_flow_path`` (node ids in
    visiting order), ``_flow_steps`` and ``_flow_completed``.
    """

    def __init__(self, flow_definition: dict[str, FlowNode], name: str | None = None):
        self.flow_definition = flow_definition
        self.name = name or self.__class__.__name__
        self.logger = logger.bind(flow=self.name)
        self._check_definition()

    def _check_definition(self) -> None:
        if "start" not in self.flow_definition:
            msg = "Flow must have a 'start' node"
            raise ValueError(msg)
        known = {*self.flow_definition, END}
        for node_id, node in self.flow_definition.items():
            for action, target in node.transitions.items():
                if target not in known:
                    msg = (
                        f"Node '{node_id}' has transition '{action}' "
                        f"pointing to unknown node '{target}'"
                    )
                    raise ValueError(msg)

    def _stopped_by_error(self, node_id: str, store: dict[str, Any]) -> bool:
        if store.get("action") != "error":
            return False
        if "error" in self.flow_definition[node_id].transitions:
            return False
        self.logger.error(
            f"{store.get('error_type', 'Error')} in {node_id}: "
            f"{store.get('error', 'unknown error')} "
            f"(exit code {store.get('exit_code', 1)})"
        )
        return True

    def run(
        self, initial_store: dict[str, Any] | None = None, max_steps: int = 100
    ) -> dict[str, Any]:
        """Run from "start"; ``max_steps`` bounds the number of node runs."""
        store = initial_store if initial_store is not None else {}
        store["_flow_name"] = self.name
        path: list[str] = []
        store["_flow_path"] = path

        node_id = "start"
        self.logger.info(f"Starting flow: {self.name}")
        while node_id != END and len(path) < max_steps:
            path.append(node_id)
            flow_node = self.flow_definition[node_id]
            self.logger.debug(f"Executing node: {node_id}")
            store = flow_node.node_class().run(store)
            if self._stopped_by_error(node_id, store):
                break
            action = store.get("action", "default")
            next_id = flow_node.target(action)
            self.logger.info(f"Transition: {node_id} --[{action}]--> {next_id}")
            node_id = next_id

        if node_id != END and len(path) >= max_steps:
            msg = f"Flow exceeded maximum steps ({max_steps})"
            self.logger.error(msg)
            store.update(action="error", error=msg, error_type="FlowError")
            store.setdefault("exit_code", 1)

        store["_flow_steps"] = len(path)
        store["_flow_completed"] = node_id == END
        self.logger.info(
            f"Flow completed: {self.name} "
            f"(steps: {len(path)}, completed: {store['_flow_completed']})"
        )
        return store

    def visualize(self) -> str:
        """Text outline of the nodes and their transitions."""
        title = f"Flow: {self.name}"
        lines = [title, "=" * len(title), ""]
        for node_id, flow_node in self.flow_definition.items():
            lines.append(f"{node_id} ({flow_node.node_class.__name__}):")
            lines.extend(
                f"  --[{action}]--> {target}"
                for action, target in flow_node.transitions.items()
            )
            lines.append("")
        return "\n".join(lines)
