"""Runcard parsing and validation.

A runcard is a YAML-subset document with exactly four top-level keys::

    platform: sim_1q          # registered platform name
    qubits: [0]               # non-empty list of distinct non-negative ints
    format: csv               # csv | json
    actions:                  # ordered mapping: protocol name -> parameters
      resonator_spectroscopy:
        freq_width: 2.0e7
        freq_step: 2.0e5
        nshots: 1_024

Anchors, aliases and explicit tags are rejected, as are duplicate keys.
Numbers follow YAML 1.2 rules (``2e7`` is a float, underscores allowed);
``yes``/``no``/``on``/``off`` stay strings.
"""

from __future__ import annotations

import difflib
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from qcal.errors import ParameterError, RuncardSyntaxError, SchemaError, UnknownProtocol, UnknownQubit

FORMATS = ("csv", "json")
TOP_LEVEL = ("platform", "qubits", "format", "actions")

_FLOAT = re.compile(
    r"""^[-+]?(?:
        (?:[0-9][0-9_]*)?\.[0-9_]*(?:[eE][-+]?[0-9]+)?
       |[0-9][0-9_]*[eE][-+]?[0-9]+
       |\.(?:inf|Inf|INF)
       |\.(?:nan|NaN|NAN)
    )$""",
    re.X,
)
_INT = re.compile(r"^[-+]?[0-9][0-9_]*$")
_BOOL = re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$")
_NULL = re.compile(r"^(?:~|null|Null|NULL|)$")


class _Loader(yaml.SafeLoader):
    pass


_Loader.yaml_implicit_resolvers = {}
_Loader.add_implicit_resolver("tag:yaml.org,2002:bool", _BOOL, list("tTfF"))
_Loader.add_implicit_resolver("tag:yaml.org,2002:int", _INT, list("-+0123456789"))
_Loader.add_implicit_resolver("tag:yaml.org,2002:float", _FLOAT, list("-+0123456789."))
_Loader.add_implicit_resolver("tag:yaml.org,2002:null", _NULL, ["~", "n", "N", ""])


def _construct_int(loader, node):
    return int(loader.construct_scalar(node).replace("_", ""))


def _construct_float(loader, node):
    text = loader.construct_scalar(node).replace("_", "").lower()
    if text.lstrip("+-") == ".inf":
        return -math.inf if text.startswith("-") else math.inf
    if text == ".nan":
        return math.nan
    return float(text)


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise RuncardSyntaxError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
    return out


_Loader.add_constructor("tag:yaml.org,2002:int", _construct_int)
_Loader.add_constructor("tag:yaml.org,2002:float", _construct_float)
_Loader.add_constructor("tag:yaml.org,2002:map", _construct_mapping)


def _reject_extensions(text: str) -> None:
    for event in yaml.parse(text, Loader=_Loader):
        line = event.start_mark.line + 1
        if isinstance(event, yaml.AliasEvent) or getattr(event, "anchor", None):
            raise RuncardSyntaxError("anchors and aliases are not supported", line)
        if getattr(event, "tag", None) is not None:
            raise RuncardSyntaxError(f"explicit tag {event.tag} is not supported", line)


@dataclass
class Action:
    name: str
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass
class Runcard:
    platform: str
    qubits: list[int]
    format: str
    actions: list[Action]


def parse_runcard(text: str) -> Runcard:
    try:
        _reject_extensions(text)
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise RuncardSyntaxError(exc.problem or str(exc), mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise RuncardSyntaxError(str(exc)) from None
    if not isinstance(doc, dict):
        raise SchemaError("<document>", "top level must be a mapping")
    unknown = [k for k in doc if k not in TOP_LEVEL]
    if unknown:
        raise SchemaError(str(unknown[0]), "unknown top-level key")
    for key in TOP_LEVEL:
        if key not in doc:
            raise SchemaError(key, "required key missing")

    platform = doc["platform"]
    if not isinstance(platform, str) or not platform:
        raise SchemaError("platform", "must be a non-empty string")
    qubits = doc["qubits"]
    if not isinstance(qubits, list) or not qubits:
        raise SchemaError("qubits", "must be a non-empty list")
    for q in qubits:
        if isinstance(q, bool) or not isinstance(q, int) or q < 0:
            raise SchemaError("qubits", f"{q!r} is not a non-negative integer")
    if len(set(qubits)) != len(qubits):
        raise SchemaError("qubits", "duplicate qubit id")
    fmt = doc["format"]
    if fmt not in FORMATS:
        raise SchemaError("format", f"must be one of {', '.join(FORMATS)}")
    actions = doc["actions"]
    if not isinstance(actions, dict) or not actions:
        raise SchemaError("actions", "must be a non-empty mapping of protocol names")
    parsed = []
    for name, params in actions.items():
        if not isinstance(name, str):
            raise SchemaError("actions", f"action name {name!r} is not a string")
        if params is None:
            params = {}
        if not isinstance(params, dict):
            raise SchemaError(f"actions.{name}", "parameters must be a mapping")
        for k, v in params.items():
            if not isinstance(k, str):
                raise SchemaError(f"actions.{name}", f"parameter name {k!r} is not a string")
            if not _is_value(v):
                raise SchemaError(f"actions.{name}.{k}", "must be a scalar or a list of scalars")
        parsed.append(Action(name, dict(params)))
    return Runcard(platform, list(qubits), fmt, parsed)


def _is_scalar(v) -> bool:
    return v is None or isinstance(v, (bool, int, float, str))


def _is_value(v) -> bool:
    return _is_scalar(v) or (isinstance(v, list) and all(_is_scalar(x) for x in v))


def _printable(c: str) -> bool:
    o = ord(c)
    if c in "\u2028\u2029\ufeff":  # line breaks / BOM to the YAML reader
        return False
    return 0x20 <= o <= 0x7E or 0xA0 <= o <= 0xD7FF or 0xE000 <= o <= 0xFFFD or 0x10000 <= o <= 0x10FFFF


def quote(text: str) -> str:
    """YAML double-quoted scalar; escapes only what YAML cannot carry raw."""
    out = []
    for c in text:
        if c in '"\\':
            out.append("\\" + c)
        elif _printable(c):
            out.append(c)
        elif ord(c) <= 0xFF:
            out.append(f"\\x{ord(c):02x}")
        elif ord(c) <= 0xFFFF:
            out.append(f"\\u{ord(c):04x}")
        else:
            out.append(f"\\U{ord(c):08x}")
    return '"' + "".join(out) + '"'


def _scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, float):
        if math.isnan(v):
            return ".nan"
        if math.isinf(v):
            return ".inf" if v > 0 else "-.inf"
        text = repr(v)
        return text if ("." in text or "e" in text) else text + ".0"
    if isinstance(v, int):
        return str(v)
    return quote(v)


def serialize_runcard(rc: Runcard) -> str:
    lines = [
        f"platform: {quote(rc.platform)}",
        f"qubits: [{', '.join(map(str, rc.qubits))}]",
        f"format: {rc.format}",
        "actions:",
    ]
    for action in rc.actions:
        if not action.parameters:
            lines.append(f"  {quote(action.name)}: {{}}")
            continue
        lines.append(f"  {quote(action.name)}:")
        for k, v in action.parameters.items():
            value = f"[{', '.join(_scalar(x) for x in v)}]" if isinstance(v, list) else _scalar(v)
            lines.append(f"    {quote(k)}: {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Param:
    """One entry of a protocol's parameter schema.

    ``kind`` is ``"float"``, ``"int"`` or ``"int_list"``; bounds are inclusive
    unless ``exclusive_min`` is set.
    """

    name: str
    kind: str
    default: Any = None
    minimum: float | None = None
    maximum: float | None = None
    exclusive_min: bool = False
    choices: tuple | None = None
    doc: str = ""

    @property
    def required(self) -> bool:
        return self.default is None

    def check(self, value) -> str | None:
        if self.kind == "int_list":
            if not isinstance(value, list) or not value:
                return "must be a non-empty list of integers"
            for v in value:
                msg = self._check_number(v, integer=True)
                if msg:
                    return f"element {v!r} {msg}"
            return None
        if self.kind == "str":
            if not isinstance(value, str):
                return "must be a string"
            if self.choices and value not in self.choices:
                return f"must be one of {', '.join(self.choices)}"
            return None
        return self._check_number(value, integer=self.kind == "int")

    def _check_number(self, v, integer: bool) -> str | None:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if integer and not isinstance(v, int):
            return "must be an integer"
        if isinstance(v, float) and not math.isfinite(v):
            return "must be finite"
        if self.minimum is not None:
            if self.exclusive_min and not v > self.minimum:
                return f"must be > {self.minimum:g}"
            if not self.exclusive_min and not v >= self.minimum:
                return f"must be >= {self.minimum:g}"
        if self.maximum is not None and not v <= self.maximum:
            return f"must be <= {self.maximum:g}"
        return None


@dataclass
class PlanStep:
    index: int
    name: str
    protocol: Any
    parameters: dict[str, Any]


@dataclass
class ValidatedPlan:
    runcard: Runcard
    steps: list[PlanStep]

    @property
    def qubits(self) -> list[int]:
        return list(self.runcard.qubits)

    @property
    def format(self) -> str:
        return self.runcard.format


def check_parameters(protocol, name: str, given: Mapping[str, Any]) -> dict[str, Any]:
    schema = {p.name: p for p in protocol.schema}
    problems = {}
    for key in given:
        if key not in schema:
            problems[key] = "unknown parameter"
    resolved = {}
    for p in protocol.schema:
        if p.name in given:
            msg = p.check(given[p.name])
            if msg:
                problems[p.name] = msg
            else:
                resolved[p.name] = given[p.name]
        elif p.required:
            problems[p.name] = "required parameter missing"
        else:
            resolved[p.name] = p.default
    if not problems:
        problems.update(protocol.check(resolved))
    if problems:
        raise ParameterError(name, problems)
    return resolved


def validate_plan(runcard: Runcard, registry: Mapping[str, Any], platform) -> ValidatedPlan:
    """Resolve every action against ``registry`` and the platform's qubits.

    Pure: neither ``runcard`` nor ``platform`` is modified.
    """
    if runcard.platform != platform.name:
        raise SchemaError("platform", f"runcard targets {runcard.platform!r} but platform is {platform.name!r}")
    for q in runcard.qubits:
        if q not in platform.qubits:
            raise UnknownQubit(f"qubit {q} not on platform {platform.name} (qubits {platform.qubits})")
    steps = []
    for i, action in enumerate(runcard.actions):
        protocol = registry.get(action.name)
        if protocol is None:
            raise UnknownProtocol(action.name, difflib.get_close_matches(action.name, list(registry), n=3, cutoff=0.6))
        steps.append(PlanStep(i, action.name, protocol, check_parameters(protocol, action.name, action.parameters)))
    return ValidatedPlan(runcard, steps)
