"""The subcommand flow: settings first, then one branch per subcommand."""

from app.pocketflow.flows.base import BaseFlow, FlowNode
from app.pocketflow.nodes.pipeline import (
    EvaluateNode,
    GenerateDataNode,
    InspectNode,
    LoadConstraintNode,
    LoadSettingsNode,
    SampleNode,
    TrainNode,
)

pipeline_flow_definition = {
    "start": FlowNode(
        node_class=LoadSettingsNode,
        transitions={
            "gen-data": "gen_data",
            "train": "train",
            "sample": "sample",
            "edit": "load_constraint",
            "eval": "evaluate",
            "inspect": "inspect",
        },
    ),
    "gen_data": FlowNode(node_class=GenerateDataNode, transitions={"success": "end"}),
    "train": FlowNode(node_class=TrainNode, transitions={"success": "end"}),
    "load_constraint": FlowNode(
        node_class=LoadConstraintNode, transitions={"success": "sample"}
    ),
    "sample": FlowNode(node_class=SampleNode, transitions={"success": "end"}),
    "evaluate": FlowNode(node_class=EvaluateNode, transitions={"success": "end"}),
    "inspect": FlowNode(node_class=InspectNode, transitions={"success": "end"}),
}


def pipeline_flow() -> BaseFlow:
    return BaseFlow(pipeline_flow_definition, name="RemosPipeline")
