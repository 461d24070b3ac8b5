"""File formats for the peel pipeline.

Depth: 16-bit binary PGM in millimeters, or raw little-endian float32
with a JSON sidecar carrying dimensions, intrinsics, and camera pose.
Mask: 8-bit binary PGM (nonzero = object). Cloud: ASCII PLY. Trajectory:
CSV with position and a fixed quaternion per row.
"""

import json

import numpy as np

from .scene import Camera, DepthScene


def _read_pgm_header(fh):
    fields = []
    while len(fields) < 4:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PGM header")
        text = line.split(b"#")[0]
        fields.extend(text.split())
    magic, width, height, maxval = fields[:4]
    if magic != b"P5":
        raise ValueError("expected binary PGM (P5)")
    return int(width), int(height), int(maxval)


def write_pgm(path, image, maxval):
    arr = np.asarray(image)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (arr.shape[1], arr.shape[0], maxval))
        fh.write(arr.astype(dtype).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        width, height, maxval = _read_pgm_header(fh)
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(fh.read(), dtype=dtype, count=width * height)
    return data.reshape(height, width).astype(np.int64), maxval


def write_depth_pgm(path, depth_m):
    """Depth in meters to 16-bit millimeter PGM (rounded)."""
    mm = np.clip(np.round(np.asarray(depth_m) * 1000.0), 0, 65535)
    write_pgm(path, mm, 65535)


def read_depth_pgm(path):
    data, maxval = read_pgm(path)
    if maxval != 65535:
        raise ValueError("depth PGM must be 16-bit")
    return data / 1000.0


def write_mask_pgm(path, mask):
    write_pgm(path, np.where(mask, 255, 0), 255)


def read_mask_pgm(path):
    data, _ = read_pgm(path)
    return data > 0


def _camera_to_dict(cam):
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
    }


def camera_from_dict(d):
    return Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                  width=d["width"], height=d["height"],
                  rotation=np.array(d["rotation"]),
                  translation=np.array(d["translation"]))


def write_depth_raw(path, depth_m, camera):
    """Raw little-endian float32 depth plus a JSON sidecar."""
    arr = np.asarray(depth_m, dtype="<f4")
    arr.tofile(path)
    sidecar = _camera_to_dict(camera)
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def read_depth_raw(path):
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    camera = camera_from_dict(sidecar)
    depth = np.fromfile(path, dtype="<f4").reshape(
        camera.height, camera.width).astype(float)
    return depth, camera


def load_scene(depth_path, mask_path, camera=None):
    """Assemble a DepthScene from files.

    PGM depth requires an explicit camera; raw depth carries its own.
    """
    if depth_path.endswith(".pgm"):
        if camera is None:
            raise ValueError("PGM depth needs explicit camera parameters")
        depth = read_depth_pgm(depth_path)
    else:
        depth, camera = read_depth_raw(depth_path)
    mask = read_mask_pgm(mask_path) & (depth > 0)
    return DepthScene(depth=depth, mask=mask, camera=camera)


def write_ply(path, points):
    pts = np.asarray(points, dtype=float)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n"
                 "element vertex %d\n"
                 "property float x\nproperty float y\nproperty float z\n"
                 "end_header\n" % len(pts))
        for x, y, z in pts:
            fh.write("%.9g %.9g %.9g\n" % (x, y, z))


def read_ply(path):
    with open(path) as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n = None
        while True:
            line = fh.readline().strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line == "end_header":
                break
        pts = [[float(t) for t in fh.readline().split()] for _ in range(n)]
    return np.array(pts)


def write_trajectory_csv(path, traj):
    qw, qx, qy, qz = traj.orientation
    with open(path, "w") as fh:
        fh.write("x,y,z,qw,qx,qy,qz\n")
        for x, y, z in traj.waypoints:
            fh.write("%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n"
                     % (x, y, z, qw, qx, qy, qz))
