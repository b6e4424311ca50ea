"""Scenario configuration: a line-oriented dotted-key text format.

One assignment per line, `dotted.key = value`.  Values are JSON literals
(numbers, strings, nested arrays) or bare tokens; the booleans are written
`on` and `off`.  A `#` outside brackets starts a comment.  An assignment
whose brackets are still open continues on the following lines, so
matrices can be written one row per line.

`parse_config` collects every violation with a path such as
`model.beta[0][1]` (array indices are 0-based positions, node ids in
messages stay 1-based) instead of stopping at the first.
`normalize_config` emits every key, defaults filled, in one canonical
order; parsing the dump reproduces the config exactly, and normalizing
again reproduces the dump byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .barrier import BarrierSpec
from .dynamics import NetworkedSystem, SisModel, SisParams
from .errors import ConfigError
from .graph import NetworkGraph

KNOWN_KEYS = (
    "graph.nodes",
    "graph.edges",
    "model.type",
    "model.beta",
    "model.gamma",
    "model.u_max",
    "barrier.x_bar",
    "barrier.eta",
    "barrier.kappa",
    "barrier.udot_policy",
    "sim.x0",
    "sim.nominal",
    "sim.dt",
    "sim.t_final",
    "sim.collaboration",
    "sim.weights",
    "sim.outer_cap",
    "sim.inner_cap",
    "sim.trace",
    "sim.continue_on_infeasible",
    "sim.persist_allocations",
    "output.dir",
)

UDOT_POLICIES = ("zero", "backward_difference")
WEIGHT_MODES = ("coupling", "uniform")


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with every field filled; plain data, no arrays."""

    nodes: int
    edges: tuple[tuple[int, int], ...]
    model_type: str
    beta: tuple[tuple[float, ...], ...]
    gamma: tuple[float, ...]
    u_max: tuple[float, ...]
    x_bar: tuple[float, ...]
    eta: tuple[float, ...]
    kappa: tuple[float, ...]
    udot_policy: str
    x0: tuple[float, ...]
    nominal: tuple[float, ...]
    dt: float
    t_final: float
    collaboration: bool
    weights: str
    outer_cap: int
    inner_cap: int
    trace: bool
    continue_on_infeasible: bool
    persist_allocations: bool
    output_dir: str

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def build_graph(self) -> NetworkGraph:
        return NetworkGraph(self.nodes, self.edges)

    def build_system(self) -> NetworkedSystem:
        graph = self.build_graph()
        import numpy as np

        params = SisParams(np.array(self.beta), np.array(self.gamma), np.array(self.u_max))
        return NetworkedSystem(graph, SisModel(graph, params))

    def build_specs(self) -> dict[int, BarrierSpec]:
        return {i: BarrierSpec(self.x_bar[i - 1], self.eta[i - 1], self.kappa[i - 1])
                for i in range(1, self.nodes + 1)}

    def run_kwargs(self) -> dict:
        """Keyword arguments for run_scenario, minus the trajectory inputs."""
        import numpy as np

        nominal = None
        if any(v != 0.0 for v in self.nominal):
            nominal = {i: np.array([self.nominal[i - 1]]) for i in range(1, self.nodes + 1)}
        return dict(
            dt=self.dt, t_final=self.t_final, nominal=nominal,
            udot_policy=self.udot_policy, collaboration=self.collaboration,
            weights_mode=self.weights, outer_cap=self.outer_cap,
            inner_cap=self.inner_cap,
            continue_on_infeasible=self.continue_on_infeasible,
            persist_allocations=self.persist_allocations,
            collect_messages=self.trace)


def _strip_comment(line: str) -> str:
    depth = 0
    for pos, ch in enumerate(line):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "#" and depth <= 0:
            return line[:pos]
    return line


def _bracket_depth(text: str) -> int:
    return text.count("[") - text.count("]")


def _parse_value(text: str):
    text = text.strip()
    if text == "on":
        return True
    if text == "off":
        return False
    try:
        return json.loads(text)
    except ValueError:
        return text  # bare token string


def _raw_assignments(text: str, problems: list[tuple[str, str]]) -> dict[str, object]:
    raw: dict[str, object] = {}
    pending_key = None
    pending_value = ""
    for lineno, original in enumerate(text.splitlines(), start=1):
        line = _strip_comment(original)
        if pending_key is not None:
            pending_value += " " + line.strip()
            if _bracket_depth(pending_value) > 0:
                continue
            raw[pending_key] = _parse_value(pending_value)
            pending_key, pending_value = None, ""
            continue
        if not line.strip():
            continue
        if "=" not in line:
            problems.append((f"line {lineno}", "expected `key = value`"))
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            problems.append((f"line {lineno}", "missing key before `=`"))
            continue
        if key in raw or key == pending_key:
            problems.append((key, "duplicate key"))
            continue
        if key not in KNOWN_KEYS:
            problems.append((key, "unknown key"))
            continue
        if _bracket_depth(value) > 0:
            pending_key, pending_value = key, value.strip()
            continue
        raw[key] = _parse_value(value)
    if pending_key is not None:
        problems.append((pending_key, "unterminated array value"))
    return raw


def _want_int(raw, key, problems, default=None, minimum=None):
    if key not in raw:
        if default is None:
            problems.append((key, "required key is missing"))
            return None
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append((key, f"must be an integer, got {v!r}"))
        return None
    if minimum is not None and v < minimum:
        problems.append((key, f"must be >= {minimum}, got {v}"))
        return None
    return v


def _want_float(raw, key, problems, default=None, positive=False):
    if key not in raw:
        if default is None:
            problems.append((key, "required key is missing"))
            return None
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append((key, f"must be a number, got {v!r}"))
        return None
    v = float(v)
    if positive and v <= 0.0:
        problems.append((key, f"must be > 0, got {v}"))
        return None
    return v


def _want_bool(raw, key, problems, default):
    if key not in raw:
        return default
    v = raw[key]
    if not isinstance(v, bool):
        problems.append((key, f"must be on or off, got {v!r}"))
        return None
    return v


def _want_choice(raw, key, problems, default, choices):
    if key not in raw:
        if default is None:
            problems.append((key, "required key is missing"))
        return default
    v = raw[key]
    if v not in choices:
        problems.append((key, f"must be one of {', '.join(choices)}, got {v!r}"))
        return None
    return v


def _want_vector(raw, key, problems, n, default=None, low=None, high=None,
                 strict_low=False):
    """A length-n numeric array; a bare scalar broadcasts to all nodes."""
    if key not in raw:
        if default is None:
            problems.append((key, "required key is missing"))
            return None
        return tuple(float(default) for _ in range(n))
    v = raw[key]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v] * n
    if not isinstance(v, list):
        problems.append((key, f"must be an array of {n} numbers"))
        return None
    if len(v) != n:
        problems.append((key, f"must have length {n}, got {len(v)}"))
        return None
    out = []
    ok = True
    for idx, entry in enumerate(v):
        if isinstance(entry, bool) or not isinstance(entry, (int, float)):
            problems.append((f"{key}[{idx}]", f"must be a number, got {entry!r}"))
            ok = False
            continue
        entry = float(entry)
        if low is not None and (entry < low or (strict_low and entry <= low)):
            op = ">" if strict_low else ">="
            problems.append((f"{key}[{idx}]", f"must be {op} {low}, got {entry}"))
            ok = False
        elif high is not None and entry > high:
            problems.append((f"{key}[{idx}]", f"must be <= {high}, got {entry}"))
            ok = False
        else:
            out.append(entry)
    return tuple(out) if ok else None


def _want_edges(raw, problems, n):
    key = "graph.edges"
    if key not in raw:
        problems.append((key, "required key is missing"))
        return None
    v = raw[key]
    if not isinstance(v, list):
        problems.append((key, "must be an array of [source, target] pairs"))
        return None
    edges = []
    ok = True
    for idx, pair in enumerate(v):
        path = f"{key}[{idx}]"
        if (not isinstance(pair, list) or len(pair) != 2
                or any(isinstance(e, bool) or not isinstance(e, int) for e in pair)):
            problems.append((path, f"must be a pair of node ids, got {pair!r}"))
            ok = False
            continue
        j, i = pair
        if j == i:
            problems.append((path, f"self-loop ({j}, {i}) is not allowed"))
            ok = False
            continue
        if n is not None and not (1 <= j <= n and 1 <= i <= n):
            problems.append((path, f"node ids must lie in 1..{n}, got ({j}, {i})"))
            ok = False
            continue
        edges.append((j, i))
    return tuple(sorted(set(edges))) if ok else None


def _want_beta(raw, problems, n, edges):
    key = "model.beta"
    if key not in raw:
        problems.append((key, "required key is missing"))
        return None
    v = raw[key]
    if not isinstance(v, list) or len(v) != n or any(
            not isinstance(row, list) or len(row) != n for row in v):
        problems.append((key, f"must be a {n}x{n} matrix"))
        return None
    ok = True
    beta = []
    for i, row in enumerate(v):
        out_row = []
        for j, entry in enumerate(row):
            path = f"{key}[{i}][{j}]"
            if isinstance(entry, bool) or not isinstance(entry, (int, float)):
                problems.append((path, f"must be a number, got {entry!r}"))
                ok = False
                continue
            entry = float(entry)
            if entry < 0.0:
                problems.append((path, f"must be >= 0, got {entry}"))
                ok = False
                continue
            out_row.append(entry)
        beta.append(tuple(out_row))
    if not ok:
        return None
    if edges is not None:
        edge_set = set(edges)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                # beta rows are 0-based storage; node ids are 1-based
                present = (j + 1, i + 1) in edge_set
                if beta[i][j] > 0.0 and not present:
                    problems.append((f"{key}[{i}][{j}]",
                                     f"positive but edge ({j + 1}, {i + 1}) is missing"))
                    ok = False
                elif beta[i][j] == 0.0 and present:
                    problems.append((f"{key}[{i}][{j}]",
                                     f"zero but edge ({j + 1}, {i + 1}) is present"))
                    ok = False
    return tuple(beta) if ok else None


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate; raises ConfigError carrying every violation."""
    problems: list[tuple[str, str]] = []
    raw = _raw_assignments(text, problems)

    n = _want_int(raw, "graph.nodes", problems, minimum=1)
    edges = _want_edges(raw, problems, n) if n is not None else None
    model_type = _want_choice(raw, "model.type", problems, None, ("sis",))

    beta = gamma = u_max = x_bar = eta = kappa = x0 = nominal = None
    if n is not None:
        beta = _want_beta(raw, problems, n, edges)
        gamma = _want_vector(raw, "model.gamma", problems, n, low=0.0, strict_low=True)
        u_max = _want_vector(raw, "model.u_max", problems, n, low=0.0)
        x_bar = _want_vector(raw, "barrier.x_bar", problems, n, low=0.0, high=1.0,
                             strict_low=True)
        eta = _want_vector(raw, "barrier.eta", problems, n, default=1.0, low=0.0,
                           strict_low=True)
        kappa = _want_vector(raw, "barrier.kappa", problems, n, default=1.0, low=0.0,
                             strict_low=True)
        x0 = _want_vector(raw, "sim.x0", problems, n, low=0.0, high=1.0)
        nominal = _want_vector(raw, "sim.nominal", problems, n, default=0.0, low=0.0)
    udot_policy = _want_choice(raw, "barrier.udot_policy", problems, "zero", UDOT_POLICIES)
    dt = _want_float(raw, "sim.dt", problems, default=0.01, positive=True)
    t_final = _want_float(raw, "sim.t_final", problems, default=100.0, positive=True)
    if dt is not None and t_final is not None and t_final <= dt:
        problems.append(("sim.t_final", f"must be > sim.dt ({dt}), got {t_final}"))
    collaboration = _want_bool(raw, "sim.collaboration", problems, True)
    weights = _want_choice(raw, "sim.weights", problems, "coupling", WEIGHT_MODES)
    outer_cap = _want_int(raw, "sim.outer_cap", problems, default=16, minimum=1)
    inner_cap = _want_int(raw, "sim.inner_cap", problems, default=64, minimum=1)
    trace = _want_bool(raw, "sim.trace", problems, False)
    continue_on_infeasible = _want_bool(raw, "sim.continue_on_infeasible", problems, False)
    persist_allocations = _want_bool(raw, "sim.persist_allocations", problems, False)
    output_dir = raw.get("output.dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        problems.append(("output.dir", f"must be a non-empty string, got {output_dir!r}"))
        output_dir = None

    if problems:
        raise ConfigError(problems)
    return ScenarioConfig(
        nodes=n, edges=edges, model_type=model_type, beta=beta, gamma=gamma,
        u_max=u_max, x_bar=x_bar, eta=eta, kappa=kappa, udot_policy=udot_policy,
        x0=x0, nominal=nominal, dt=dt, t_final=t_final, collaboration=collaboration,
        weights=weights, outer_cap=outer_cap, inner_cap=inner_cap, trace=trace,
        continue_on_infeasible=continue_on_infeasible,
        persist_allocations=persist_allocations, output_dir=output_dir)


def _emit(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        return json.dumps(_untuple(value))
    return json.dumps(value)


def _untuple(value):
    if isinstance(value, tuple):
        return [_untuple(v) for v in value]
    return value


def normalize_config(cfg: ScenarioConfig) -> str:
    """Canonical dump: every key, fixed order, one line per key."""
    pairs = (
        ("graph.nodes", cfg.nodes),
        ("graph.edges", cfg.edges),
        ("model.type", cfg.model_type),
        ("model.beta", cfg.beta),
        ("model.gamma", cfg.gamma),
        ("model.u_max", cfg.u_max),
        ("barrier.x_bar", cfg.x_bar),
        ("barrier.eta", cfg.eta),
        ("barrier.kappa", cfg.kappa),
        ("barrier.udot_policy", cfg.udot_policy),
        ("sim.x0", cfg.x0),
        ("sim.nominal", cfg.nominal),
        ("sim.dt", cfg.dt),
        ("sim.t_final", cfg.t_final),
        ("sim.collaboration", cfg.collaboration),
        ("sim.weights", cfg.weights),
        ("sim.outer_cap", cfg.outer_cap),
        ("sim.inner_cap", cfg.inner_cap),
        ("sim.trace", cfg.trace),
        ("sim.continue_on_infeasible", cfg.continue_on_infeasible),
        ("sim.persist_allocations", cfg.persist_allocations),
        ("output.dir", cfg.output_dir),
    )
    return "".join(f"{key} = {_emit(value)}\n" for key, value in pairs)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
