"""Field snapshots, agent tables and PPM renders."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .logs import TRAJECTORY_COLUMNS, CSVLog, read_csv

VMIN, VMAX = -0.45, 0.75
AGENT_COLUMNS = ("agent_id", "x", "y", "vx", "vy", "radius")


def snapshot_stem(step):
    return f"snapshot_{int(step):08d}"


def write_snapshot(flow_state, swarm, grid, step, directory):
    """Write ``<stem>.bin`` (float32 u, v, p), ``<stem>.json`` and ``<stem>_agents.csv``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        stem = directory / snapshot_stem(step)
        arrays = [("u", flow_state.vel.u), ("v", flow_state.vel.v), ("p", flow_state.p)]
        layout, offset = [], 0
        with open(stem.with_suffix(".bin"), "wb") as fh:
            for name, arr in arrays:
                data = np.ascontiguousarray(arr, dtype="<f4")
                fh.write(data.tobytes(order="C"))
                layout.append({"name": name, "shape": list(arr.shape), "dtype": "<f4",
                               "order": "C", "offset": offset})
                offset += data.nbytes
        meta = {"nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "t": float(flow_state.t),
                "step": int(step), "arrays": layout}
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
        if swarm is not None:
            with CSVLog(directory / f"{stem.name}_agents.csv", AGENT_COLUMNS, append=False) as log:
                for i in range(swarm.n):
                    log.write((i, *swarm.pos[i], *swarm.vel[i], swarm.radius))
    except OSError as exc:
        raise OSError(f"failed to write snapshot {step} into {directory}: {exc}") from exc
    return stem


def read_snapshot(path):
    """Return ``(meta, {name: array}, agents)``; ``path`` may name any snapshot file or the stem."""
    path = Path(path)
    stem = path.parent / path.name.removesuffix("_agents.csv").removesuffix(".bin").removesuffix(".json")
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()
    arrays = {}
    for spec in meta["arrays"]:
        n = int(np.prod(spec["shape"]))
        arrays[spec["name"]] = np.frombuffer(raw, dtype=spec["dtype"], count=n,
                                             offset=spec["offset"]).reshape(spec["shape"])
    agents_path = stem.parent / f"{stem.name}_agents.csv"
    agents = []
    if agents_path.exists():
        agents = [{k: float(v) for k, v in row.items()} for row in read_csv(agents_path)]
    return meta, arrays, agents


def colormap(values, vmin=VMIN, vmax=VMAX):
    """Blue-white-red diverging map with white at zero; returns uint8 RGB."""
    v = np.asarray(values, dtype=float)
    neg = np.clip(v / vmin, 0.0, 1.0) * (v < 0)
    pos = np.clip(v / vmax, 0.0, 1.0) * (v > 0)
    rgb = np.empty(v.shape + (3,))
    rgb[..., 0] = 1.0 - neg
    rgb[..., 1] = 1.0 - neg - pos
    rgb[..., 2] = 1.0 - pos
    return np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)


def render_image(u, dx, agents=(), vmin=VMIN, vmax=VMAX):
    """Image (ny, nx, 3) of the cell-centred x-velocity, top row = upper wall."""
    uc = 0.5 * (u[:-1] + u[1:])
    img = colormap(uc.T[::-1], vmin, vmax)
    ny, nx = uc.shape[1], uc.shape[0]
    yy, xx = np.mgrid[0:ny, 0:nx]
    cx = (xx + 0.5) * dx
    cy = (ny - 1 - yy + 0.5) * dx
    for a in agents:
        inside = (cx - a["x"]) ** 2 + (cy - a["y"]) ** 2 <= a["radius"] ** 2
        img[inside] = (40, 40, 40)
    return img


def write_ppm(path, img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    magic, size, maxval, pixels = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PPM")
    w, h = (int(s) for s in size.split())
    return np.frombuffer(pixels, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def render_snapshot(snapshot, out):
    meta, arrays, agents = read_snapshot(snapshot)
    img = render_image(arrays["u"].astype(float), meta["dx"], agents)
    write_ppm(out, img)
    return img.shape[1], img.shape[0]


def write_trajectory(rows, path):
    """Trajectory tuples as recorded by ``SwarmEnv(record_trajectory=True)``."""
    with CSVLog(path, TRAJECTORY_COLUMNS, append=False) as log:
        for row in rows:
            log.write(row)
