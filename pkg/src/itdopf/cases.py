"""Grid case data: parsing, validation, serialization, and ITD merging.

All electrical quantities are stored per-unit on the case MVA base; the
only physical-unit field is ``base_mva`` itself.  Cost polynomials are
expressed on per-unit power (a MATPOWER $/MW^2 coefficient times base^2).
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field

import jsonschema

from .exceptions import CaseFormatError, CaseInvariantError

BUS_KINDS = ("slack", "pv", "pq")
REGION_KINDS = ("transmission", "distribution")
LINK_KINDS = ("tso_dso", "tso_tso")

SCHEMA_TAG = "itd-case/1"


@dataclass(frozen=True)
class CostPoly:
    """Quadratic generation cost a*p^2 + b*p + c on per-unit power."""

    a: float
    b: float
    c: float


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str  # slack | pv | pq
    p_load: float = 0.0
    q_load: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1
    shunt_g: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    s_max: float = 0.0  # apparent-power limit, 0 = unlimited
    i_max: float = 0.0  # squared-current limit, 0 = unlimited


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost: CostPoly


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    model_hint: str = "meshed"  # meshed | radial

    def bus_by_id(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(f"no bus {bus_id}")


@dataclass(frozen=True)
class InterconnectionSpec:
    kind: str  # tso_dso | tso_tso
    region_a: int
    region_b: int
    boundary_bus_a: int
    boundary_bus_b: int
    tie_line: Branch


@dataclass(frozen=True)
class ItdCase:
    regions: tuple[tuple[NetworkCase, str], ...]  # (case, transmission|distribution)
    interconnections: tuple[InterconnectionSpec, ...]

    @property
    def n_buses(self) -> int:
        return sum(len(case.buses) for case, _ in self.regions)


# ---------------------------------------------------------------------------
# validation


def _is_radial(case: NetworkCase) -> bool:
    if len(case.branches) != len(case.buses) - 1:
        return False
    return _is_connected(case)


def _is_connected(case: NetworkCase) -> bool:
    if not case.buses:
        return False
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen = {case.buses[0].id}
    stack = [case.buses[0].id]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(case.buses)


def validate_network_case(case: NetworkCase) -> None:
    """Check all NetworkCase invariants; raise CaseInvariantError naming the offender."""
    if case.base_mva <= 0:
        raise CaseInvariantError("base_mva must be positive")
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseInvariantError("duplicate bus ids")
    id_set = set(ids)
    n_slack = 0
    for b in case.buses:
        if b.kind not in BUS_KINDS:
            raise CaseInvariantError(f"bus {b.id}: unknown kind {b.kind!r}")
        if b.kind == "slack":
            n_slack += 1
        if not (b.v_min > 0):
            raise CaseInvariantError(f"bus {b.id}: v_min must be > 0")
        if b.v_min > b.v_max:
            raise CaseInvariantError(f"bus {b.id}: v_min > v_max")
    if n_slack != 1:
        raise CaseInvariantError(f"expected exactly one slack bus, found {n_slack}")
    for k, br in enumerate(case.branches):
        if br.from_bus == br.to_bus:
            raise CaseInvariantError(f"branch {k} ({br.from_bus},{br.to_bus}): from == to")
        if br.from_bus not in id_set or br.to_bus not in id_set:
            raise CaseInvariantError(
                f"branch {k} ({br.from_bus},{br.to_bus}): endpoint not a known bus"
            )
        if br.r < 0:
            raise CaseInvariantError(f"branch {k} ({br.from_bus},{br.to_bus}): r < 0")
    for g in case.generators:
        if g.bus not in id_set:
            raise CaseInvariantError(f"generator at bus {g.bus}: unknown bus")
        if g.p_min > g.p_max:
            raise CaseInvariantError(f"generator at bus {g.bus}: p_min > p_max")
        if g.q_min > g.q_max:
            raise CaseInvariantError(f"generator at bus {g.bus}: q_min > q_max")
        if g.cost.a < 0:
            raise CaseInvariantError(f"generator at bus {g.bus}: cost.a < 0 (nonconvex)")
    if case.model_hint not in ("meshed", "radial"):
        raise CaseInvariantError(f"unknown model_hint {case.model_hint!r}")
    if case.model_hint == "radial" and not _is_radial(case):
        raise CaseInvariantError("model_hint is radial but the branch set is not a tree")


def validate_itd_case(itd: ItdCase) -> None:
    """Check region/interconnection consistency and region-graph connectivity."""
    for r, (case, kind) in enumerate(itd.regions):
        if kind not in REGION_KINDS:
            raise CaseInvariantError(f"region {r}: unknown kind {kind!r}")
        validate_network_case(case)
    n = len(itd.regions)
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for k, icx in enumerate(itd.interconnections):
        if icx.kind not in LINK_KINDS:
            raise CaseInvariantError(f"interconnection {k}: unknown kind {icx.kind!r}")
        for rid in (icx.region_a, icx.region_b):
            if not 0 <= rid < n:
                raise CaseInvariantError(f"interconnection {k}: region {rid} out of range")
        case_a, kind_a = itd.regions[icx.region_a]
        case_b, kind_b = itd.regions[icx.region_b]
        if icx.kind == "tso_dso":
            # region_b is the copying (downstream) side; region_a may itself be a
            # feeder for chained distribution links, which reuse this layout.
            if kind_b != "distribution":
                raise CaseInvariantError(
                    f"interconnection {k}: tso_dso downstream region must be distribution"
                )
        else:
            if kind_a != "transmission" or kind_b != "transmission":
                raise CaseInvariantError(
                    f"interconnection {k}: tso_tso requires two transmission regions"
                )
        if all(b.id != icx.boundary_bus_a for b in case_a.buses):
            raise CaseInvariantError(
                f"interconnection {k}: boundary bus {icx.boundary_bus_a} not in region {icx.region_a}"
            )
        if all(b.id != icx.boundary_bus_b for b in case_b.buses):
            raise CaseInvariantError(
                f"interconnection {k}: boundary bus {icx.boundary_bus_b} not in region {icx.region_b}"
            )
        if icx.tie_line.from_bus != icx.boundary_bus_a or icx.tie_line.to_bus != icx.boundary_bus_b:
            raise CaseInvariantError(
                f"interconnection {k}: tie line endpoints must be (boundary_bus_a, boundary_bus_b)"
            )
        adj[icx.region_a].add(icx.region_b)
        adj[icx.region_b].add(icx.region_a)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        raise CaseInvariantError("region graph is not connected")


# ---------------------------------------------------------------------------
# MATPOWER import

_MAT_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([0-9eE.+-]+)\s*;")
_MAT_OPEN = re.compile(r"mpc\.(\w+)\s*=\s*\[")


def _read_matrices(text: str) -> tuple[dict[str, float], dict[str, list[list[float]]]]:
    scalars: dict[str, float] = {}
    matrices: dict[str, list[list[float]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].split("%")[0].strip()
        m = _MAT_SCALAR.match(line)
        if m:
            scalars[m.group(1)] = float(m.group(2))
            i += 1
            continue
        m = _MAT_OPEN.match(line)
        if m:
            name = m.group(1)
            rows: list[list[float]] = []
            body = line[m.end():]
            closed = False
            while True:
                if "]" in body:
                    body = body.split("]")[0]
                    closed = True
                for chunk in body.split(";"):
                    chunk = chunk.strip()
                    if chunk:
                        try:
                            rows.append([float(tok) for tok in chunk.split()])
                        except ValueError as exc:
                            raise CaseFormatError(
                                f"matrix {name}: bad row {chunk!r}"
                            ) from exc
                if closed:
                    break
                i += 1
                if i >= len(lines):
                    raise CaseFormatError(f"matrix {name}: missing closing bracket")
                body = lines[i].split("%")[0].strip()
            matrices[name] = rows
        i += 1
    return scalars, matrices


def parse_matpower(text: str) -> NetworkCase:
    """Import the polynomial-cost subset of a MATPOWER .m case file.

    Supported matrices: ``mpc.baseMVA``, ``mpc.bus`` (13 columns), ``mpc.gen``
    (first 10 columns), ``mpc.branch`` (13 columns), ``mpc.gencost``
    (polynomial model, degree <= 2).  Off-nominal taps and phase shifters are
    not supported and are ignored; out-of-service rows are dropped.
    """
    scalars, matrices = _read_matrices(text)
    if "baseMVA" not in scalars:
        raise CaseFormatError("missing baseMVA")
    base = scalars["baseMVA"]
    for name in ("bus", "gen", "branch"):
        if name not in matrices or not matrices[name]:
            raise CaseFormatError(f"missing {name} data")
    if "gencost" not in matrices or not matrices["gencost"]:
        raise CaseFormatError("missing cost data")

    kind_map = {1: "pq", 2: "pv", 3: "slack"}
    buses = []
    for row in matrices["bus"]:
        if len(row) < 13:
            raise CaseFormatError(f"bus row has {len(row)} columns, expected >= 13")
        code = int(row[1])
        if code not in kind_map:
            raise CaseFormatError(f"bus {int(row[0])}: unsupported bus type {code}")
        buses.append(
            Bus(
                id=int(row[0]),
                kind=kind_map[code],
                p_load=row[2] / base,
                q_load=row[3] / base,
                v_min=row[12],
                v_max=row[11],
                shunt_g=row[4] / base,
                shunt_b=row[5] / base,
            )
        )

    branches = []
    for k, row in enumerate(matrices["branch"]):
        if len(row) < 13:
            raise CaseFormatError(f"branch row {k} has {len(row)} columns, expected >= 13")
        if int(row[10]) == 0:  # out of service
            continue
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charge=row[4],
                s_max=row[5] / base,
            )
        )

    gen_rows = matrices["gen"]
    cost_rows = matrices["gencost"]
    if len(cost_rows) == 2 * len(gen_rows):
        cost_rows = cost_rows[: len(gen_rows)]  # drop reactive cost block
    if len(cost_rows) != len(gen_rows):
        raise CaseFormatError(
            f"gencost has {len(cost_rows)} rows for {len(gen_rows)} generators"
        )
    generators = []
    for row, cost in zip(gen_rows, cost_rows):
        if len(row) < 10:
            raise CaseFormatError(f"gen row has {len(row)} columns, expected >= 10")
        if int(row[7]) == 0:  # out of service
            continue
        if int(cost[0]) != 2:
            raise CaseFormatError("non-quadratic cost model (piecewise-linear rejected)")
        ncoef = int(cost[3])
        coefs = cost[4 : 4 + ncoef]
        if ncoef > 3 or len(coefs) != ncoef:
            raise CaseFormatError(f"cost row with {ncoef} coefficients unsupported (degree <= 2)")
        padded = [0.0] * (3 - ncoef) + list(coefs)  # [a, b, c] in MW units
        generators.append(
            Generator(
                bus=int(row[0]),
                p_min=row[9] / base,
                p_max=row[8] / base,
                q_min=row[4] / base,
                q_max=row[3] / base,
                cost=CostPoly(a=padded[0] * base * base, b=padded[1] * base, c=padded[2]),
            )
        )

    case = NetworkCase(
        base_mva=base,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        model_hint="radial" if len(branches) == len(buses) - 1 else "meshed",
    )
    validate_network_case(case)
    return case


# ---------------------------------------------------------------------------
# JSON canonical format

_NUM = {"type": "number"}
_BUS_SCHEMA = {
    "type": "object",
    "required": ["id", "kind"],
    "properties": {
        "id": {"type": "integer"},
        "kind": {"enum": list(BUS_KINDS)},
        "p_load": _NUM, "q_load": _NUM,
        "v_min": _NUM, "v_max": _NUM,
        "shunt_g": _NUM, "shunt_b": _NUM,
    },
    "additionalProperties": False,
}
_BRANCH_SCHEMA = {
    "type": "object",
    "required": ["from", "to", "r", "x"],
    "properties": {
        "from": {"type": "integer"}, "to": {"type": "integer"},
        "r": _NUM, "x": _NUM, "b_charge": _NUM, "s_max": _NUM, "i_max": _NUM,
    },
    "additionalProperties": False,
}
_GEN_SCHEMA = {
    "type": "object",
    "required": ["bus", "p_min", "p_max", "q_min", "q_max", "cost"],
    "properties": {
        "bus": {"type": "integer"},
        "p_min": _NUM, "p_max": _NUM, "q_min": _NUM, "q_max": _NUM,
        "cost": {
            "type": "object",
            "required": ["a", "b", "c"],
            "properties": {"a": _NUM, "b": _NUM, "c": _NUM},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}
_NETWORK_PROPS = {
    "base_mva": _NUM,
    "buses": {"type": "array", "items": _BUS_SCHEMA},
    "branches": {"type": "array", "items": _BRANCH_SCHEMA},
    "generators": {"type": "array", "items": _GEN_SCHEMA},
    "model_hint": {"enum": ["meshed", "radial"]},
}
_NETWORK_SCHEMA = {
    "type": "object",
    "required": ["base_mva", "buses", "branches", "generators"],
    "properties": _NETWORK_PROPS,
    "additionalProperties": False,
}
_ITD_SCHEMA = {
    "type": "object",
    "required": ["schema", "regions", "interconnections"],
    "properties": {
        "schema": {"const": SCHEMA_TAG},
        "regions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "case"],
                "properties": {
                    "kind": {"enum": list(REGION_KINDS)},
                    "case": _NETWORK_SCHEMA,
                },
                "additionalProperties": False,
            },
        },
        "interconnections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "region_a", "region_b",
                             "boundary_bus_a", "boundary_bus_b", "tie_line"],
                "properties": {
                    "kind": {"enum": list(LINK_KINDS)},
                    "region_a": {"type": "integer"},
                    "region_b": {"type": "integer"},
                    "boundary_bus_a": {"type": "integer"},
                    "boundary_bus_b": {"type": "integer"},
                    "tie_line": _BRANCH_SCHEMA,
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}
_TOP_NETWORK_SCHEMA = {
    "type": "object",
    "required": ["schema", "base_mva", "buses", "branches", "generators"],
    "properties": {"schema": {"const": SCHEMA_TAG}, **_NETWORK_PROPS},
    "additionalProperties": False,
}


def _bus_from_dict(d: dict) -> Bus:
    return Bus(
        id=d["id"], kind=d["kind"],
        p_load=d.get("p_load", 0.0), q_load=d.get("q_load", 0.0),
        v_min=d.get("v_min", 0.9), v_max=d.get("v_max", 1.1),
        shunt_g=d.get("shunt_g", 0.0), shunt_b=d.get("shunt_b", 0.0),
    )


def _branch_from_dict(d: dict) -> Branch:
    return Branch(
        from_bus=d["from"], to_bus=d["to"], r=d["r"], x=d["x"],
        b_charge=d.get("b_charge", 0.0), s_max=d.get("s_max", 0.0),
        i_max=d.get("i_max", 0.0),
    )


def _network_from_dict(d: dict) -> NetworkCase:
    return NetworkCase(
        base_mva=d["base_mva"],
        buses=tuple(_bus_from_dict(b) for b in d["buses"]),
        branches=tuple(_branch_from_dict(b) for b in d["branches"]),
        generators=tuple(
            Generator(
                bus=g["bus"], p_min=g["p_min"], p_max=g["p_max"],
                q_min=g["q_min"], q_max=g["q_max"],
                cost=CostPoly(**g["cost"]),
            )
            for g in d["generators"]
        ),
        model_hint=d.get("model_hint", "meshed"),
    )


def _bus_to_dict(b: Bus) -> dict:
    return {
        "id": b.id, "kind": b.kind, "p_load": b.p_load, "q_load": b.q_load,
        "v_min": b.v_min, "v_max": b.v_max, "shunt_g": b.shunt_g, "shunt_b": b.shunt_b,
    }


def _branch_to_dict(br: Branch) -> dict:
    return {
        "from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
        "b_charge": br.b_charge, "s_max": br.s_max, "i_max": br.i_max,
    }


def _network_to_dict(case: NetworkCase) -> dict:
    return {
        "base_mva": case.base_mva,
        "buses": [_bus_to_dict(b) for b in case.buses],
        "branches": [_branch_to_dict(b) for b in case.branches],
        "generators": [
            {
                "bus": g.bus, "p_min": g.p_min, "p_max": g.p_max,
                "q_min": g.q_min, "q_max": g.q_max,
                "cost": dataclasses.asdict(g.cost),
            }
            for g in case.generators
        ],
        "model_hint": case.model_hint,
    }


def load_json_case(text: str) -> NetworkCase | ItdCase:
    """Load the canonical JSON format; returns an ItdCase when 'regions' is present."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("top level must be an object")
    schema = _ITD_SCHEMA if "regions" in doc else _TOP_NETWORK_SCHEMA
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        path = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path
        )
        raise CaseFormatError(f"schema violation at {path}: {exc.message}") from exc
    if "regions" in doc:
        itd = ItdCase(
            regions=tuple(
                (_network_from_dict(r["case"]), r["kind"]) for r in doc["regions"]
            ),
            interconnections=tuple(
                InterconnectionSpec(
                    kind=i["kind"], region_a=i["region_a"], region_b=i["region_b"],
                    boundary_bus_a=i["boundary_bus_a"], boundary_bus_b=i["boundary_bus_b"],
                    tie_line=_branch_from_dict(i["tie_line"]),
                )
                for i in doc["interconnections"]
            ),
        )
        validate_itd_case(itd)
        return itd
    case = _network_from_dict(doc)
    validate_network_case(case)
    return case


def dump_json_case(case: NetworkCase | ItdCase, indent: int = 1) -> str:
    """Serialize a case to the canonical JSON format (round-trips exactly)."""
    if isinstance(case, NetworkCase):
        doc = {"schema": SCHEMA_TAG, **_network_to_dict(case)}
    else:
        doc = {
            "schema": SCHEMA_TAG,
            "regions": [
                {"kind": kind, "case": _network_to_dict(c)} for c, kind in case.regions
            ],
            "interconnections": [
                {
                    "kind": i.kind, "region_a": i.region_a, "region_b": i.region_b,
                    "boundary_bus_a": i.boundary_bus_a, "boundary_bus_b": i.boundary_bus_b,
                    "tie_line": _branch_to_dict(i.tie_line),
                }
                for i in case.interconnections
            ],
        }
    return json.dumps(doc, indent=indent)


# ---------------------------------------------------------------------------
# ITD merging


def merge_itd(
    transmission: NetworkCase,
    attachments: list[tuple[int, NetworkCase, Branch]],
    links: list[InterconnectionSpec] = (),
) -> ItdCase:
    """Merge a transmission case with attached regions into one ItdCase.

    Each attachment is ``(bus_id, case, tie)`` where ``bus_id`` is the
    transmission bus the tie line leaves from and ``tie.to_bus`` is the
    attached case's slack (root) bus.  Radial attachments become distribution
    regions; meshed attachments become transmission regions linked tso_tso.
    Extra ``links`` may add interconnections between already-placed regions
    (region 0 is the transmission input, attachments follow in order).

    Where a distribution feeder attaches, the transmission bus keeps its
    shunts but its aggregate load is zeroed (the feeder loads replace it),
    and the feeder's root generators are dropped: the root infeed they model
    now arrives physically over the tie line.
    """
    validate_network_case(transmission)
    t_ids = {b.id for b in transmission.buses}
    regions: list[tuple[NetworkCase, str]] = [(transmission, "transmission")]
    interconnections: list[InterconnectionSpec] = []
    zeroed: set[int] = set()

    for bus_id, case, tie in attachments:
        if bus_id not in t_ids:
            raise CaseInvariantError(f"attachment to nonexistent bus {bus_id}")
        validate_network_case(case)
        is_distribution = case.model_hint == "radial"
        if is_distribution and not _is_radial(case):
            raise CaseInvariantError(
                f"attachment at bus {bus_id}: feeder declared radial is not a tree"
            )
        root = next(b.id for b in case.buses if b.kind == "slack")
        if tie.from_bus != bus_id or tie.to_bus != root:
            raise CaseInvariantError(
                f"attachment at bus {bus_id}: tie must run ({bus_id},{root}), "
                f"got ({tie.from_bus},{tie.to_bus})"
            )
        if is_distribution:
            case = dataclasses.replace(
                case,
                generators=tuple(g for g in case.generators if g.bus != root),
            )
            zeroed.add(bus_id)
        region_id = len(regions)
        regions.append((case, "distribution" if is_distribution else "transmission"))
        interconnections.append(
            InterconnectionSpec(
                kind="tso_dso" if is_distribution else "tso_tso",
                region_a=0,
                region_b=region_id,
                boundary_bus_a=bus_id,
                boundary_bus_b=root,
                tie_line=tie,
            )
        )

    if zeroed:
        new_buses = tuple(
            dataclasses.replace(b, p_load=0.0, q_load=0.0) if b.id in zeroed else b
            for b in transmission.buses
        )
        regions[0] = (dataclasses.replace(transmission, buses=new_buses), "transmission")

    interconnections.extend(links)
    itd = ItdCase(regions=tuple(regions), interconnections=tuple(interconnections))
    validate_itd_case(itd)
    return itd
