"""Instance reading, result writing, and the iteration trace log.

Serialization is deterministic: sorted keys, fixed separators, and floats in
shortest round-trip form, so a seeded rerun produces byte-identical
artifacts. The instance digest is the SHA-256 of the canonical serialization
of the validated instance, which makes it independent of the price unit the
source document happened to use.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .curves import build_curve_book
from .errors import ParseError, SchemaVersionError
from .instance import (BidGrid, DaScenario, DeviceParams, IdChild, Instance,
                       LoadPriceModel, ScenarioTree, Segment, SolverConfig,
                       TimeGrid, validate_instance)

SCHEMA_VERSION = 1

# the iteration log contract: exactly these keys, one JSON object per line
TRACE_KEYS = ("iter", "UB", "LB", "gap", "cuts", "ms_master", "ms_sp")


def _jdefault(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def canonical_json(obj):
    """Deterministic serialization: stable key order, stable spacing."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_jdefault)


def _section(doc, key, path, kind=dict):
    if key not in doc:
        raise ParseError(f"{path}: missing required field {key!r}")
    val = doc[key]
    if not isinstance(val, kind):
        raise ParseError(f"{path}.{key}: expected {kind.__name__}, "
                         f"got {type(val).__name__}")
    return val


def _num(doc, key, path, default=None):
    if key not in doc:
        if default is None:
            raise ParseError(f"{path}: missing required field {key!r}")
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"{path}.{key}: expected a number, "
                         f"got {type(val).__name__}")
    return float(val)


def _num_list(doc, key, path):
    vals = _section(doc, key, path, list)
    out = []
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"{path}.{key}[{i}]: expected a number, "
                             f"got {type(v).__name__}")
        out.append(float(v))
    return out


def _no_extras(doc, allowed, path):
    extra = set(doc) - set(allowed)
    if extra:
        raise ParseError(f"{path}: unknown field(s) {sorted(extra)}")


def _dataclass_from(doc, cls, path, numeric_casts=()):
    names = [f.name for f in fields(cls)]
    _no_extras(doc, names, path)
    kwargs = {}
    for f in fields(cls):
        if f.name not in doc:
            continue
        val = doc[f.name]
        if f.name in numeric_casts:
            val = _num(doc, f.name, path)
        kwargs[f.name] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _segments(doc, key, path):
    table = _section(doc, key, path, list)
    out = []
    for t, segs in enumerate(table):
        if not isinstance(segs, list):
            raise ParseError(f"{path}.{key}[{t}]: expected a list of "
                             "segments")
        row = []
        for m, seg in enumerate(segs):
            spath = f"{path}.{key}[{t}][{m}]"
            if not isinstance(seg, dict):
                raise ParseError(f"{spath}: expected an object")
            _no_extras(seg, ("p_lo", "p_hi", "A", "B"), spath)
            row.append(Segment(_num(seg, "p_lo", spath),
                               _num(seg, "p_hi", spath),
                               _num(seg, "A", spath),
                               _num(seg, "B", spath)))
        out.append(row)
    return out


def load_instance(data) -> Instance:
    """Parse an instance document. Structure only; value invariants are the
    job of validate_instance."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not valid UTF-8: {exc}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level: expected an object")
    _no_extras(doc, ("schema_version", "price_unit", "devices", "time",
                     "scenarios", "load_price", "bid_grid", "config"),
               "top level")

    if "schema_version" not in doc:
        raise ParseError("top level: missing required field 'schema_version'")
    version = doc["schema_version"]
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema_version {version!r} not supported (expected "
            f"{SCHEMA_VERSION})")

    dev_doc = _section(doc, "devices", "devices")
    dev_fields = [f.name for f in fields(DeviceParams)]
    devices = _dataclass_from(dev_doc, DeviceParams, "devices",
                              numeric_casts=dev_fields)

    time_doc = _section(doc, "time", "time")
    _no_extras(time_doc, ("n_hours", "quarters_per_hour"), "time")
    time = TimeGrid(int(_num(time_doc, "n_hours", "time")),
                    int(_num(time_doc, "quarters_per_hour", "time",
                             default=4)))

    sc_doc = _section(doc, "scenarios", "scenarios")
    _no_extras(sc_doc, ("da_scenarios",), "scenarios")
    scens = []
    for a, sd in enumerate(_section(sc_doc, "da_scenarios", "scenarios",
                                    list)):
        spath = f"scenarios.da_scenarios[{a}]"
        if not isinstance(sd, dict):
            raise ParseError(f"{spath}: expected an object")
        _no_extras(sd, ("prob", "da_price", "id_children"), spath)
        children = []
        for c, cd in enumerate(_section(sd, "id_children", spath, list)):
            cpath = f"{spath}.id_children[{c}]"
            if not isinstance(cd, dict):
                raise ParseError(f"{cpath}: expected an object")
            _no_extras(cd, ("prob", "id_price"), cpath)
            children.append(IdChild(_num(cd, "prob", cpath),
                                    np.array(_num_list(cd, "id_price",
                                                       cpath))))
        scens.append(DaScenario(_num(sd, "prob", spath),
                                np.array(_num_list(sd, "da_price", spath)),
                                children))
    scenarios = ScenarioTree(scens)

    lp_doc = _section(doc, "load_price", "load_price")
    _no_extras(lp_doc, ("electricity", "hydrogen"), "load_price")
    load_price = LoadPriceModel(
        electricity=_segments(lp_doc, "electricity", "load_price"),
        hydrogen=_segments(lp_doc, "hydrogen", "load_price"))

    bg_doc = _section(doc, "bid_grid", "bid_grid")
    _no_extras(bg_doc, ("y",), "bid_grid")
    bid_grid = BidGrid(np.array(_num_list(bg_doc, "y", "bid_grid")))

    cfg_doc = doc.get("config", {})
    if not isinstance(cfg_doc, dict):
        raise ParseError("config: expected an object")
    config = _dataclass_from(
        cfg_doc, SolverConfig, "config",
        numeric_casts=("eps_gap", "lp_feas_tol", "lp_opt_tol", "milp_gap"))
    for name in ("max_iter", "sos2_points", "seed", "threads"):
        setattr(config, name, int(getattr(config, name)))

    return Instance(devices=devices, time=time, scenarios=scenarios,
                    load_price=load_price, bid_grid=bid_grid, config=config,
                    schema_version=int(version),
                    price_unit=doc.get("price_unit", "EUR_per_kWh"))


def instance_document(inst):
    """Plain-data form of an instance, ready for serialization."""
    return {
        "schema_version": getattr(inst, "schema_version", SCHEMA_VERSION),
        "price_unit": getattr(inst, "price_unit", "EUR_per_kWh"),
        "devices": asdict(inst.devices),
        "time": {"n_hours": inst.time.n_hours,
                 "quarters_per_hour": inst.time.quarters_per_hour},
        "scenarios": {"da_scenarios": [
            {"prob": da.prob,
             "da_price": np.asarray(da.da_price).tolist(),
             "id_children": [
                 {"prob": ch.prob,
                  "id_price": np.asarray(ch.id_price).tolist()}
                 for ch in da.id_children]}
            for da in inst.scenarios.da_scenarios]},
        "load_price": {
            "electricity": [[asdict(s) for s in segs]
                            for segs in inst.load_price.electricity],
            "hydrogen": [[asdict(s) for s in segs]
                         for segs in inst.load_price.hydrogen]},
        "bid_grid": {"y": np.asarray(inst.bid_grid.y).tolist()},
        "config": asdict(inst.config),
    }


def dump_instance(inst) -> bytes:
    return (canonical_json(instance_document(inst)) + "\n").encode("utf-8")


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round_floats(v) for v in obj]
    return obj


def instance_digest(inst) -> str:
    """SHA-256 of the validated instance in canonical form.

    Floats are hashed at 12 significant digits so the digest survives the
    rounding a unit conversion introduces: the same physical problem digests
    identically whether the document carried EUR/MWh or EUR/kWh prices."""
    doc = json.loads(canonical_json(
        instance_document(validate_instance(inst))))
    blob = canonical_json(_round_floats(doc)).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_trace(records) -> str:
    """Iteration log as newline-delimited JSON, one record per line with
    exactly the contract keys (extra in-memory diagnostics are dropped)."""
    lines = []
    for rec in records:
        lines.append(json.dumps({k: rec[k] for k in TRACE_KEYS},
                                default=_jdefault))
    return "\n".join(lines) + ("\n" if lines else "")


def read_trace(text):
    records = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"trace line {i + 1}: {exc.msg}") from None
        missing = set(TRACE_KEYS) - set(rec)
        if missing:
            raise ParseError(f"trace line {i + 1}: missing {sorted(missing)}")
        records.append(rec)
    return records


@dataclass
class ResultBundle:
    """Everything a solve leaves behind, in plain serializable data: summary
    bounds, the iteration log (timings live in the trace file, not here, so
    reruns serialize byte-identically), curves, per-scenario operation
    tables, and the solution-structure checks."""
    instance_digest: str
    status: str
    objective: float
    ub: float
    lb: float
    gap: float
    iterations: list
    first_stage: dict
    curves: dict
    operations: list
    lemmas: dict
    schema_version: int = SCHEMA_VERSION


def _curve_doc(c):
    doc = {"interval": c.interval, "prices": list(c.prices),
           "volumes": list(c.volumes)}
    if c.scenario is not None:
        doc["scenario"] = c.scenario
    return doc


def make_bundle(vi, rep) -> ResultBundle:
    """Assemble the result bundle for a finished decomposition run."""
    vi = validate_instance(vi)
    book = build_curve_book(vi, rep.first_stage, rep.scenarios)
    fs = rep.first_stage
    first_stage = {
        "load_electricity": fs.le.tolist(),
        "load_hydrogen": fs.lh.tolist(),
        "price_electricity": fs.pe.tolist(),
        "price_hydrogen": fs.ph.tolist(),
    }
    curves = {
        "da": [_curve_doc(c) for c in book.da],
        "id": [_curve_doc(c) for a in sorted(book.id_curves)
               for c in book.id_curves[a]],
    }
    operations = []
    for o in sorted(rep.scenarios, key=lambda s: s.a):
        scen = vi.scenarios.da_scenarios[o.a]
        children = []
        for c, ch in enumerate(scen.id_children):
            children.append({
                "child": c,
                "prob": ch.prob,
                "id_price": np.asarray(ch.id_price).tolist(),
                "purchase_id": o.mi[:, c].tolist(),
                "battery_level": o.ops["bl"][:, c].tolist(),
                "tank_level": o.ops["hl"][:, c].tolist(),
            })
        operations.append({
            "scenario": o.a,
            "prob": scen.prob,
            "da_price": np.asarray(scen.da_price).tolist(),
            "purchase_da": fs.md[:, o.a].tolist(),
            "children": children,
        })
    iterations = [{k: rec[k] for k in ("iter", "UB", "LB", "gap", "cuts")}
                  for rec in rep.iterations]
    lm = rep.lemmas
    lemmas = {
        "battery_applicable": lm.battery_applicable,
        "tank_applicable": lm.tank_applicable,
        "max_battery_overlap": lm.max_battery_overlap,
        "max_tank_overlap": lm.max_tank_overlap,
        "max_balance_slack": lm.max_balance_slack,
        "tol": lm.tol,
        "complementarity_ok": lm.complementarity_ok,
        "balance_ok": lm.balance_ok,
    }
    return ResultBundle(instance_digest=instance_digest(vi),
                        status=rep.status, objective=rep.lb, ub=rep.ub,
                        lb=rep.lb, gap=rep.gap, iterations=iterations,
                        first_stage=first_stage, curves=curves,
                        operations=operations, lemmas=lemmas)


def write_result(bundle: ResultBundle) -> bytes:
    return (canonical_json(asdict(bundle)) + "\n").encode("utf-8")


def read_result(data) -> ResultBundle:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level: expected an object")
    names = [f.name for f in fields(ResultBundle)]
    _no_extras(doc, names, "result")
    missing = set(names) - set(doc)
    if missing:
        raise ParseError(f"result: missing field(s) {sorted(missing)}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema_version {doc['schema_version']!r} not supported")
    bundle = ResultBundle(**doc)
    known = {op["scenario"] for op in bundle.operations}
    for c in bundle.curves.get("id", []):
        if c.get("scenario") not in known:
            raise ParseError(f"result: intraday curve references scenario "
                             f"{c.get('scenario')!r} with no operation table")
    return bundle
