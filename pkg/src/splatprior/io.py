"""File formats: splat and mesh PLY, camera JSON, PFM depth, PPM color, scene manifests.

Splat PLY files follow the usual viewer conventions: log scales, logit
opacity, unnormalized ``(w, x, y, z)`` rotations and degree-0 SH colors.
Everything else stays linear in memory.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Union

import numpy as np
from plyfile import PlyData, PlyElement

from .core import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    InvalidInputError,
    SplatFrame,
    SplatMode,
    SplatScene,
)
from .geomeval.mesh import TriangleMesh
from .scenes import AnalyticScene, Plane, Texture

PathLike = Union[str, Path]
SH_C0 = 0.28209479177387814
SCHEMA = 1

_SPLAT_FIELDS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


# --------------------------------------------------------------------------
# splats


def frame_to_ply(frame: SplatFrame, path: PathLike) -> None:
    """Write one frame's splats in row-major pixel order."""
    n = frame.means.shape[0] * frame.means.shape[1]
    with np.errstate(divide="ignore"):
        cols = {
            "x": frame.means[..., 0], "y": frame.means[..., 1], "z": frame.means[..., 2],
            "opacity": np.log(frame.opacities) - np.log1p(-frame.opacities),
        }
        for i in range(3):
            cols[f"f_dc_{i}"] = (frame.colors[..., i] - 0.5) / SH_C0
            cols[f"scale_{i}"] = np.log(frame.scales[..., i])
    for i in range(4):
        cols[f"rot_{i}"] = frame.quats[..., i]
    data = np.empty(n, dtype=[(k, "<f4") for k in _SPLAT_FIELDS])
    for k in _SPLAT_FIELDS:
        data[k] = np.asarray(cols[k]).reshape(-1)
    PlyData([PlyElement.describe(data, "vertex")], byte_order="<").write(str(path))


def frame_from_ply(path: PathLike, intrinsics: CameraIntrinsics, gt_pose=None) -> SplatFrame:
    v = PlyData.read(str(path))["vertex"].data
    H, W = intrinsics.height, intrinsics.width
    if len(v) != H * W:
        raise InvalidInputError(f"{path}: {len(v)} splats, expected {H}x{W}")
    col = lambda k: np.asarray(v[k], dtype=np.float64).reshape(H, W)
    means = np.stack([col("x"), col("y"), col("z")], axis=-1)
    colors = np.stack([col(f"f_dc_{i}") * SH_C0 + 0.5 for i in range(3)], axis=-1)
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=-1))
    quats = np.stack([col(f"rot_{i}") for i in range(4)], axis=-1)
    with np.errstate(over="ignore"):
        opac = 1.0 / (1.0 + np.exp(-col("opacity")))
    return SplatFrame(intrinsics, means, quats, scales, opac, colors, gt_pose)


# --------------------------------------------------------------------------
# cameras


def camera_to_dict(cam: Camera) -> dict:
    K = cam.intrinsics
    return {
        "convention": "pixel-center",
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height,
        "rotation": [float(x) for x in cam.pose.rotation.reshape(-1)],
        "translation": [float(x) for x in cam.pose.translation],
    }


def camera_from_dict(d: dict) -> Camera:
    try:
        if d.get("convention", "pixel-center") != "pixel-center":
            raise InvalidInputError(f"unsupported pixel convention {d['convention']!r}")
        K = CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                             int(d["width"]), int(d["height"]))
        pose = CameraPose(np.reshape(d["rotation"], (3, 3)), d["translation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed camera: {exc}") from exc
    return Camera(K, pose)


def write_camera(cam: Camera, path: PathLike) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")


def read_camera(path: PathLike) -> Camera:
    return camera_from_dict(json.loads(Path(path).read_text()))


def read_cameras(path: PathLike) -> list[Camera]:
    """A camera file holds one camera object or a list of them."""
    d = json.loads(Path(path).read_text())
    items = d["cameras"] if isinstance(d, dict) and "cameras" in d else d
    if isinstance(items, dict):
        items = [items]
    return [camera_from_dict(c) for c in items]


def write_cameras(cams, path: PathLike) -> None:
    Path(path).write_text(json.dumps({"cameras": [camera_to_dict(c) for c in cams]}, indent=2) + "\n")


# --------------------------------------------------------------------------
# images


def write_pfm(path: PathLike, depth) -> None:
    """Grayscale little-endian PFM; NaN and infinities are stored as 0."""
    d = np.nan_to_num(np.asarray(depth, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    if d.ndim != 2:
        raise InvalidInputError("PFM writer expects a 2D map")
    H, W = d.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{W} {H}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(d).astype("<f4").tobytes())


def read_pfm(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        dims = fh.readline().split()
        scale = float(fh.readline().strip())
        payload = fh.read()
    if header not in (b"Pf", b"PF"):
        raise InvalidInputError(f"{path}: not a PFM file")
    W, H = int(dims[0]), int(dims[1])
    channels = 3 if header == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype, count=W * H * channels)
    shape = (H, W, 3) if channels == 3 else (H, W)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_ppm(path: PathLike, image) -> None:
    """Binary P6, 8-bit, encoded with a 1/2.2 gamma from linear RGB."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError("PPM writer expects an HxWx3 image")
    q = np.round(255.0 * img ** (1.0 / 2.2)).astype(np.uint8)
    H, W, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    """Linear RGB image of a binary P6 file."""
    raw = Path(path).read_bytes()
    m = re.match(rb"P6\s+(?:#.*\s+)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise InvalidInputError(f"{path}: not a binary PPM file")
    W, H, maxval = (int(g) for g in m.groups())
    q = np.frombuffer(raw[m.end():], dtype=np.uint8, count=W * H * 3).reshape(H, W, 3)
    return (q.astype(np.float64) / maxval) ** 2.2


# --------------------------------------------------------------------------
# meshes


def write_mesh_ply(mesh: TriangleMesh, path: PathLike) -> None:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if mesh.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    verts = np.empty(len(mesh.vertices), dtype=fields)
    for i, k in enumerate("xyz"):
        verts[k] = mesh.vertices[:, i]
    if mesh.colors is not None:
        rgb = np.round(255.0 * np.clip(mesh.colors, 0.0, 1.0)).astype(np.uint8)
        for i, k in enumerate(("red", "green", "blue")):
            verts[k] = rgb[:, i]
    faces = np.empty(len(mesh.triangles), dtype=[("vertex_indices", "<i4", (3,))])
    faces["vertex_indices"] = mesh.triangles
    PlyData(
        [PlyElement.describe(verts, "vertex"), PlyElement.describe(faces, "face", len_types={"vertex_indices": "u1"})],
        byte_order="<",
    ).write(str(path))


def read_mesh_ply(path: PathLike) -> TriangleMesh:
    ply = PlyData.read(str(path))
    v = ply["vertex"].data
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = None
    if "red" in v.dtype.names:
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1) / 255.0
    tris = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        face = ply["face"].data
        key = "vertex_indices" if "vertex_indices" in face.dtype.names else face.dtype.names[0]
        tris = np.array([list(f) for f in face[key]], dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, tris, colors)


# --------------------------------------------------------------------------
# scene manifests


def save_scene(scene: SplatScene, directory: PathLike) -> Path:
    """Write ``scene.json`` plus one PLY and one camera file per frame."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, f in enumerate(scene.frames):
        ply, cam = f"frame_{i:03d}.ply", f"frame_{i:03d}_camera.json"
        frame_to_ply(f, d / ply)
        write_camera(Camera(f.intrinsics, f.gt_pose or CameraPose()), d / cam)
        frames.append({"splats": ply, "camera": cam, "has_pose": f.gt_pose is not None})
    manifest = {"schema": SCHEMA, "mode": scene.mode.value, "frames": frames}
    path = d / "scene.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_scene(path: PathLike) -> SplatScene:
    p = Path(path)
    if p.is_dir():
        p = p / "scene.json"
    try:
        manifest = json.loads(p.read_text())
        mode = SplatMode(manifest["mode"])
        frames = []
        for entry in manifest["frames"]:
            cam = read_camera(p.parent / entry["camera"])
            pose = cam.pose if entry.get("has_pose", True) else None
            frames.append(frame_from_ply(p.parent / entry["splats"], cam.intrinsics, pose))
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidInputError(f"cannot load scene {p}: {exc}") from exc
    return SplatScene(frames, mode)


def analytic_to_dict(scene: AnalyticScene) -> dict:
    planes = []
    for pl in scene.planes:
        t = pl.texture
        planes.append({
            "origin": pl.origin.tolist(), "edge_u": pl.edge_u.tolist(), "edge_v": pl.edge_v.tolist(),
            "texture": {"base": list(t.base), "checker_size": t.checker_size, "checker_amp": t.checker_amp,
                        "noise_cell": t.noise_cell, "noise_amp": t.noise_amp, "seed": t.seed},
        })
    return {"schema": SCHEMA, "planes": planes, "radius": scene.radius, "center": scene.center.tolist()}


def analytic_from_dict(d: dict) -> AnalyticScene:
    try:
        planes = tuple(
            Plane(p["origin"], p["edge_u"], p["edge_v"], Texture(**{**p["texture"], "base": tuple(p["texture"]["base"])}))
            for p in d["planes"]
        )
        return AnalyticScene(planes, float(d["radius"]), np.asarray(d["center"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed analytic scene: {exc}") from exc


def write_json(obj, path: PathLike) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
