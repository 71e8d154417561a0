"""JSON encoding/decoding of map expressions, cubes, and factor sequences."""

from __future__ import annotations

import numpy as np

from .geometry_core import AffineMapData, Cube
from .map_engine import (
    Affine,
    Blend,
    Compose,
    DistortionCertificate,
    Grid,
    GridMap,
    Identity,
    LogSpiral,
    MapExpr,
    Scaling,
    Translation,
)


class SchemaError(ValueError):
    pass


def cube_to_json(c: Cube) -> dict:
    return {"center": list(c.center), "side": c.side}


def cube_from_json(obj) -> Cube:
    try:
        return Cube(tuple(float(v) for v in obj["center"]), float(obj["side"]))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad cube object: {e}") from e


def map_to_json(m: MapExpr) -> dict:
    if isinstance(m, Identity):
        return {"type": "identity"}
    if isinstance(m, Translation):
        return {"type": "translation", "v": list(m.v)}
    if isinstance(m, Scaling):
        return {"type": "scaling", "a": m.a}
    if isinstance(m, Affine):
        return {
            "type": "affine",
            "matrix": m.map.matrix.tolist(),
            "b": m.map.shift.tolist(),
        }
    if isinstance(m, LogSpiral):
        return {"type": "logspiral", "k": m.k}
    if isinstance(m, Grid):
        return {
            "type": "grid",
            "origin": m.grid.origin.tolist(),
            "pitch": m.grid.pitch,
            "extents": list(m.grid.extents),
            "values": m.grid.values.reshape(-1, m.grid.dim).tolist(),
        }
    if isinstance(m, Blend):
        return {
            "type": "blend",
            "inner": map_to_json(m.inner),
            "cube": cube_to_json(m.cube),
            "lambda": m.lam,
        }
    if isinstance(m, Compose):
        return {"type": "compose", "maps": [map_to_json(f) for f in m.maps]}
    raise SchemaError(f"map expression {type(m).__name__} has no JSON form")


def map_from_json(obj) -> MapExpr:
    if not isinstance(obj, dict) or "type" not in obj:
        raise SchemaError("map object must carry a 'type' field")
    t = obj["type"]
    try:
        if t == "identity":
            return Identity()
        if t == "translation":
            return Translation(tuple(float(v) for v in obj["v"]))
        if t == "scaling":
            return Scaling(float(obj["a"]))
        if t == "affine":
            return Affine(
                AffineMapData(np.asarray(obj["matrix"], dtype=float),
                              np.asarray(obj["b"], dtype=float))
            )
        if t == "logspiral":
            return LogSpiral(float(obj["k"]))
        if t == "grid":
            origin = np.asarray(obj["origin"], dtype=float)
            extents = tuple(int(e) for e in obj["extents"])
            values = np.asarray(obj["values"], dtype=float).reshape(extents + (origin.shape[0],))
            return Grid(GridMap(origin, float(obj["pitch"]), extents, values))
        if t == "blend":
            return Blend(
                map_from_json(obj["inner"]), cube_from_json(obj["cube"]), float(obj["lambda"])
            )
        if t == "compose":
            maps = tuple(map_from_json(o) for o in obj["maps"])
            return Compose(maps)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"bad '{t}' map object: {e}") from e
    raise SchemaError(f"unknown map type {t!r}")


def certificate_to_json(c: DistortionCertificate) -> dict:
    return {
        "region": cube_to_json(c.region),
        "h": c.h,
        "L_lo": c.L_lo,
        "method": c.method,
        "pair_count": c.pair_count,
    }


def factor_sequence_to_json(fs) -> dict:
    return {
        "target": map_to_json(fs.target),
        "factors": [map_to_json(f) for f in fs.factors],
        "region": cube_to_json(fs.region),
        "support": cube_to_json(fs.support) if fs.support is not None else None,
        "certificates": [certificate_to_json(c) for c in fs.certificates],
        "T": fs.T,
    }
