"""Fault injection: armed hooks that fire exactly once at a trigger index.

Sites name the four layers a run can break in: the agent transport, a
named tool, the message-to-arguments mapping, and the invocation policy.
Each firing is journaled so tests can assert the classifier attributed the
failure to the layer that was actually broken.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

SITE_A2A_TRANSPORT = "a2a-transport"
SITE_MCP_TOOL = "mcp-tool"
SITE_MAPPING = "mapping"
SITE_POLICY = "policy"

MODE_ERROR = "error"
MODE_DROP = "drop"
MODE_DELAY = "delay"

_SPEC_RE = re.compile(
    r"^(?P<site>a2a-transport|mapping|policy|mcp-tool\((?P<tool>[^():]+)\))"
    r":(?P<mode>error|drop|delay\((?P<steps>\d+)\))"
    r":(?P<index>\d+)$"
)


class InvalidFaultError(ValueError):
    pass


class SiteNotPresentError(ValueError):
    def __init__(self, site: str, scenario: str) -> None:
        super().__init__(f"fault site {site!r} does not exist in scenario {scenario!r}")
        self.site = site


@dataclass(frozen=True)
class FaultSpec:
    site: str  # one of the SITE_ constants
    mode: str  # one of the MODE_ constants
    trigger_index: int
    tool_name: str | None = None
    delay_steps: int = 0

    def __post_init__(self) -> None:
        if self.trigger_index < 0:
            raise InvalidFaultError("trigger index must be non-negative")
        if self.site == SITE_MCP_TOOL and not self.tool_name:
            raise InvalidFaultError("mcp-tool faults need a tool name")

    @property
    def site_key(self) -> str:
        if self.site == SITE_MCP_TOOL:
            return f"{SITE_MCP_TOOL}:{self.tool_name}"
        return self.site


def parse_fault_spec(text: str) -> FaultSpec:
    """Parse ``site:mode:index``, e.g. ``mcp-tool(sendEmail):error:0`` or
    ``a2a-transport:delay(3):1``."""
    match = _SPEC_RE.match(text)
    if not match:
        raise InvalidFaultError(f"cannot parse fault spec {text!r}")
    site = match.group("site")
    tool = match.group("tool")
    if tool is not None:
        site = SITE_MCP_TOOL
    mode = match.group("mode")
    steps = 0
    if match.group("steps") is not None:
        mode = MODE_DELAY
        steps = int(match.group("steps"))
    return FaultSpec(site=site, mode=mode, trigger_index=int(match.group("index")), tool_name=tool, delay_steps=steps)


@dataclass(frozen=True)
class FaultFiring:
    site_key: str
    mode: str
    at_index: int


class FaultPlan:
    """Armed hooks plus the firing journal.

    ``check(site_key)`` counts one occurrence of the site and returns the
    spec if this occurrence is the trigger. A spec fires at most once.
    """

    def __init__(self, specs: tuple[FaultSpec, ...] = ()) -> None:
        self.specs = specs
        self._counters: dict[str, int] = {}
        self._fired: set[int] = set()
        self.journal: list[FaultFiring] = []

    def check(self, site_key: str) -> FaultSpec | None:
        index = self._counters.get(site_key, 0)
        self._counters[site_key] = index + 1
        for spec_no, spec in enumerate(self.specs):
            if spec_no in self._fired:
                continue
            if spec.site_key == site_key and spec.trigger_index == index:
                self._fired.add(spec_no)
                self.journal.append(FaultFiring(site_key=site_key, mode=spec.mode, at_index=index))
                return spec
        return None

    @property
    def fired_count(self) -> int:
        return len(self.journal)

    def validate_sites(self, present: set[str], scenario: str) -> None:
        """Arm-time check that each spec's site exists in the scenario.
        Tool sites match on the tool name."""
        for spec in self.specs:
            key = spec.site_key if spec.site == SITE_MCP_TOOL else spec.site
            if key not in present:
                raise SiteNotPresentError(key, scenario)
