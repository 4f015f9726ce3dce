"""Executable A2A and MCP protocol stacks plus the layer that joins them.

The package has four layers:

* protocol value models and wire formats (``agentmesh.a2a``, ``agentmesh.mcp``)
* the skill/tool bridge and orchestration (``agentmesh.bridge``)
* invocation policy and observability (``agentmesh.guard``, ``agentmesh.trace``)
* a deterministic multi-agent scenario harness and CLI (``agentmesh.harness``,
  ``agentmesh.cli``)

Everything below the harness is pure values: operations take a value and
return a new one, so state is explicit and every run is replayable.
"""

__version__ = "0.1.0"
