"""On-disk layout for raw records, volumes, and traces.

Arrays are written as little-endian binary (C order) with a text sidecar
header ``<name>.hdr`` describing dtype, shape, byte order, and units, e.g.

    dtype: complex128
    shape: (480, 32, 32, 4)
    byteorder: little
    order: C
    unit: arbitrary
    desc: shot samples

A scan directory holds one such pair per field plus ``scan.json`` with the
timing and scenario metadata, and the trace CSVs.
"""

from __future__ import annotations

import ast
import json
import os
import numpy as np

from .geometry import TimingConfig
from .navigator import NavigatorSignal, ParameterTrace
from .simulator import ShotData, ScanRecord
from .geometry import Trajectory

_LE = {"complex128": "<c16", "float64": "<f8", "int32": "<i4", "int64": "<i8"}


def write_array(path: str, arr: np.ndarray, unit: str = "", desc: str = ""):
    arr = np.ascontiguousarray(arr)
    name = arr.dtype.name
    if name not in _LE:
        raise ValueError(f"unsupported dtype {name}")
    arr.astype(_LE[name]).tofile(path)
    with open(path + ".hdr", "w") as fh:
        fh.write(f"dtype: {name}\nshape: {tuple(arr.shape)}\n"
                 f"byteorder: little\norder: C\nunit: {unit}\ndesc: {desc}\n")


def read_array(path: str) -> np.ndarray:
    hdr = {}
    with open(path + ".hdr") as fh:
        for line in fh:
            key, _, val = line.partition(":")
            hdr[key.strip()] = val.strip()
    shape = ast.literal_eval(hdr["shape"])
    data = np.fromfile(path, dtype=_LE[hdr["dtype"]])
    return data.reshape(shape).astype(hdr["dtype"])


def save_scan(dirpath: str, scan: ScanRecord):
    """Write all shot/navigator records, traces, and metadata of a scan."""
    os.makedirs(dirpath, exist_ok=True)
    shots = scan.shots
    navs = scan.navigators

    def p(name):
        return os.path.join(dirpath, name)

    write_array(p("shot_samples.bin"),
                np.stack([s.samples for s in shots]), "a.u.", "shot samples")
    write_array(p("shot_times.bin"),
                np.stack([s.times_s for s in shots]), "s", "sample times since excitation")
    write_array(p("shot_traj.bin"),
                np.stack([s.traj_coords for s in shots]), "rad/m", "played k-space")
    write_array(p("shot_grid_idx.bin"),
                np.stack([s.grid_idx for s in shots]), "index", "nominal grid indices")
    meta_rows = np.array([[s.kz_index, s.volume_index, s.shot_index]
                          for s in shots], dtype=np.int64)
    write_array(p("shot_meta.bin"), meta_rows, "index", "kz/volume/shot indices")
    write_array(p("shot_t_exc.bin"),
                np.array([s.t_excitation_s for s in shots]), "s", "excitation times")

    write_array(p("nav_samples.bin"),
                np.stack([n.samples for n in navs]), "a.u.", "navigator samples")
    write_array(p("nav_traj.bin"),
                np.stack([n.trajectory.coords for n in navs]), "rad/m",
                "played navigator k-space")
    write_array(p("nav_times.bin"),
                np.stack([n.trajectory.times for n in navs]), "s",
                "navigator sample times since excitation")

    scan.truth.to_csv(p("trace_truth.csv"))
    for name, trace in scan.traces.items():
        trace.to_csv(p(f"trace_{name}.csv"))

    meta = {"timing": scan.timing.to_dict(), "scenario": scan.scenario,
            "t_first_shot_s": scan.t_first_shot_s,
            "traces": sorted(scan.traces), "n_shots": len(shots)}
    with open(p("scan.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_scan(dirpath: str, phantom=None, coils=None) -> ScanRecord:
    """Rebuild a ScanRecord from disk (phantom/coils optional references)."""
    def p(name):
        return os.path.join(dirpath, name)

    with open(p("scan.json")) as fh:
        meta = json.load(fh)
    timing = TimingConfig.from_dict(meta["timing"])

    samples = read_array(p("shot_samples.bin"))
    times = read_array(p("shot_times.bin"))
    traj = read_array(p("shot_traj.bin"))
    grid_idx = read_array(p("shot_grid_idx.bin"))
    rows = read_array(p("shot_meta.bin"))
    t_exc = read_array(p("shot_t_exc.bin"))
    shots = [ShotData(samples[i], times[i], traj[i], grid_idx[i],
                      int(rows[i, 0]), int(rows[i, 1]), int(rows[i, 2]),
                      float(t_exc[i]))
             for i in range(samples.shape[0])]

    nav_samples = read_array(p("nav_samples.bin"))
    nav_traj = read_array(p("nav_traj.bin"))
    nav_times = read_array(p("nav_times.bin"))
    navs = [NavigatorSignal(nav_samples[i],
                            Trajectory(nav_traj[i], nav_times[i]),
                            timing.tnav_s, int(rows[i, 2]), float(t_exc[i]))
            for i in range(nav_samples.shape[0])]

    truth = ParameterTrace.from_csv(p("trace_truth.csv"))
    traces = {name: ParameterTrace.from_csv(p(f"trace_{name}.csv"))
              for name in meta["traces"]}
    return ScanRecord(timing=timing, phantom=phantom, coils=coils,
                      shots=shots, navigators=navs, truth=truth,
                      traces=traces, model=None,
                      t_first_shot_s=meta["t_first_shot_s"],
                      scenario=meta["scenario"])


def save_volumes(path: str, series):
    write_array(path, series.volumes, "a.u.", "reconstructed volumes")
    write_array(path.replace(".bin", "_times.bin"), series.times_s, "s",
                "volume start times")


def write_csv_rows(path: str, columns, rows):
    """Small deterministic CSV writer (12 significant digits)."""
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else f"{v:.12g}"
                        for v in row])
