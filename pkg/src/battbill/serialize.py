"""Artifact serialization for Q tables and policies.

A documented binary layout chosen for byte-for-byte reproducibility:

    line 1   ASCII magic and version, e.g. ``battbill-qtable v1``
    line 2   JSON metadata (variant, shape, horizon, block count,
             setup fingerprint, ...)
    then, per block in sorted key order:
             one JSON line ``{"tau": t, "dkey": k, "visits": n}``
             followed by the raw little-endian C-order array bytes
             (float64 values for Q tables, int16 actions for policies).

The fingerprint is a SHA-256 over a canonical description of the grid,
battery, tariff, cost model and variant; loading verifies it so stale
artifacts fail loudly instead of silently mis-indexing.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .battery import BatteryParams
from .grid import CostModel, StateGrid
from .tariff import TariffSchedule
from .trainer import Policy, SparseQ, _Block

Q_MAGIC = "battbill-qtable v1"
POLICY_MAGIC = "battbill-policy v1"


class ArtifactError(ValueError):
    """Version or setup mismatch, or a malformed artifact file."""


def setup_fingerprint(
    grid: StateGrid,
    battery: BatteryParams,
    tariff: TariffSchedule,
    cost: CostModel,
    variant: str,
) -> str:
    """Canonical SHA-256 of everything that shapes table indices."""
    parts = [
        f"h={grid.horizon} dt={grid.dt_seconds!r}",
        f"soc={grid.soc.lo!r},{grid.soc.step!r},{grid.soc.n}",
        f"delta={grid.delta.lo!r},{grid.delta.step!r},{grid.delta.n}",
        f"peak={grid.peak.lo!r},{grid.peak.step!r},{grid.peak.n}",
        f"action={grid.action.lo!r},{grid.action.step!r},{grid.action.n}",
        f"q={battery.q_nominal!r} rho={battery.rho_d!r} cap={battery.capacity_kwh!r}",
    ]
    for name in ("u_ocv", "r_charge", "r_discharge", "p_charge_max", "p_discharge_max"):
        parts.append(f"{name}={getattr(battery, name).knots!r}")
    parts.append("pp=" + tariff.pp_per_step.tobytes().hex())
    parts.append("sp=" + tariff.sp_per_step.tobytes().hex())
    parts.append("peakmask=" + tariff.on_peak.astype(np.uint8).tobytes().hex())
    parts.append(f"mu_d={tariff.mu_daily!r} mu_m={tariff.mu_monthly!r} fees={tariff.fees!r}")
    parts.append(f"cost={cost.peak_rate!r},{cost.uses_peak} variant={variant}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def _meta_line(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def save_q(q: SparseQ, horizon: int, fingerprint: str, path) -> None:
    with open(path, "wb") as fh:
        fh.write((Q_MAGIC + "\n").encode())
        fh.write(
            _meta_line(
                {
                    "variant": q.variant,
                    "uses_peak": q.uses_peak,
                    "peak_rate": q.peak_rate,
                    "shape": list(q.shape),
                    "horizon": horizon,
                    "n_blocks": len(q.blocks),
                    "fingerprint": fingerprint,
                }
            )
        )
        for (tau, dkey), block in q.sorted_items():
            fh.write(_meta_line({"tau": tau, "dkey": dkey, "visits": block.visits}))
            fh.write(np.ascontiguousarray(block.values, dtype="<f8").tobytes())


def load_q(path, expected_fingerprint: str | None = None) -> tuple[SparseQ, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != Q_MAGIC:
            raise ArtifactError(f"bad magic {magic!r}, expected {Q_MAGIC!r}")
        meta = _read_meta(fh)
        _check_fingerprint(meta, expected_fingerprint)
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape)) * 8
        q = SparseQ(meta["variant"], meta["uses_peak"], meta["peak_rate"], shape)
        for _ in range(meta["n_blocks"]):
            head = _read_meta(fh)
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise ArtifactError("truncated block payload")
            values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            q.blocks[(head["tau"], head["dkey"])] = _Block(values, head["visits"])
    return q, meta


def save_policy(policy: Policy, horizon: int, fingerprint: str, path) -> None:
    first = next(iter(policy.blocks.values())) if policy.blocks else None
    shape = list(first.shape) if first is not None else [0, 0]
    with open(path, "wb") as fh:
        fh.write((POLICY_MAGIC + "\n").encode())
        fh.write(
            _meta_line(
                {
                    "variant": policy.variant,
                    "uses_peak": policy.uses_peak,
                    "fallback": policy.fallback,
                    "shape": shape,
                    "horizon": horizon,
                    "n_blocks": len(policy.blocks),
                    "fingerprint": fingerprint,
                }
            )
        )
        for (tau, dkey), actions in sorted(policy.blocks.items()):
            fh.write(_meta_line({"tau": tau, "dkey": dkey}))
            fh.write(np.ascontiguousarray(actions, dtype="<i2").tobytes())


def load_policy(path, expected_fingerprint: str | None = None) -> tuple[Policy, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != POLICY_MAGIC:
            raise ArtifactError(f"bad magic {magic!r}, expected {POLICY_MAGIC!r}")
        meta = _read_meta(fh)
        _check_fingerprint(meta, expected_fingerprint)
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape)) * 2
        blocks = {}
        for _ in range(meta["n_blocks"]):
            head = _read_meta(fh)
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise ArtifactError("truncated block payload")
            blocks[(head["tau"], head["dkey"])] = (
                np.frombuffer(payload, dtype="<i2").reshape(shape).astype(np.int64)
            )
    return Policy(meta["variant"], meta["uses_peak"], blocks, meta["fallback"]), meta


def _read_meta(fh) -> dict:
    line = fh.readline()
    if not line:
        raise ArtifactError("unexpected end of file")
    try:
        return json.loads(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"bad metadata line: {exc}") from exc


def _check_fingerprint(meta: dict, expected: str | None) -> None:
    if expected is not None and meta.get("fingerprint") != expected:
        raise ArtifactError(
            "artifact was produced with a different grid/battery/tariff setup"
        )
