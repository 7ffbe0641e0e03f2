"""End-to-end driver: config in, reconstruction artifacts out.

Configs are flat INI text (section.key = value); every field can also be
overridden on the command line as --section.key=value.  A run writes
result.ply, metrics.json, energy_trace.csv and run.log into the output
directory.  metrics.json contains only deterministic quantities so repeated
runs of one config are byte-identical; wall-clock timings go to run.log.
"""

import argparse
import configparser
import io
import json
import sys
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mesh as mesh_mod
from . import oracle, scene as scene_mod, solver
from .geometry import VoxelGrid, pairwise_edges

CONFIG_EXIT = 2
INTERNAL_EXIT = 1


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section, key, type, default, validator, doc
_FIELDS = [
    ("scene", "preset", str, "box", lambda v: v in scene_mod.PRESETS,
     "ground-truth preset: box, wall_with_hole, thin_column, two_planes"),
    ("scene", "resolution", int, 16, lambda v: v >= 8,
     "voxels per axis (cubic grid), at least 8"),
    ("scene", "seed", int, 0, None,
     "seed for camera placement and observation noise"),
    ("scene", "cameras", int, 8, lambda v: v >= 1,
     "number of cameras on the viewing ring"),
    ("scene", "image_size", int, 0, lambda v: v >= 0,
     "image width and height in pixels; 0 means equal to resolution"),
    ("cost", "lambda_sem", float, 1.0, lambda v: v >= 0,
     "weight of the semantic cost term (default 1.0)"),
    ("cost", "lambda_dep", float, 1.0, lambda v: v >= 0,
     "weight of the depth cost term (default 1.0)"),
    ("cost", "delta_voxels", float, 2.0, lambda v: v > 0,
     "depth tolerance in voxel units"),
    ("cost", "matches_per_pixel", int, 1, lambda v: 1 <= v <= 3,
     "depth matches kept per pixel (at most 3)"),
    ("cost", "depth_sigma_voxels", float, 0.0, lambda v: v >= 0,
     "std-dev of depth jitter in voxel units"),
    ("cost", "confusion", float, 0.0, lambda v: 0 <= v <= 1,
     "semantic confusion probability smoothing the class one-hot"),
    ("solver", "mode", str, "binary", lambda v: v in ("binary", "multilabel"),
     "binary (occupied/free) or multilabel expansion moves"),
    ("solver", "lambda_pair", float, 0.0, lambda v: v >= 0,
     "smoothness weight per unit boundary area"),
    ("solver", "fixed_point_scale", int, 10000, lambda v: v >= 1,
     "integer scale converting real energies to exact capacities (default 10000)"),
    ("solver", "neighborhood", int, 6, lambda v: v in (6, 26),
     "regularizer neighborhood: 6 face neighbors or 26 with length weights"),
    ("solver", "max_cycles", int, 10, lambda v: v >= 1,
     "maximum expansion cycles in multilabel mode"),
    ("mesh", "smooth_iterations", int, 3, lambda v: v >= 0,
     "surface smoothing iterations (0 disables)"),
    ("mesh", "smooth_step", float, 0.5, lambda v: 0 < v < 1,
     "smoothing step factor in (0, 1)"),
    ("mesh", "binary_ply", _bool, False, None,
     "write result.ply as binary little endian instead of ascii"),
    ("run", "output_dir", str, "out", None,
     "directory for result.ply, metrics.json, energy_trace.csv, run.log"),
    ("run", "threads", int, 1, lambda v: v >= 1,
     "worker threads; affects wall time only, results are identical"),
    ("run", "oracle_check", _bool, False, None,
     "also brute-force small instances and compare (raises budget error on big ones)"),
]


@dataclass
class RunConfig:
    """Validated run settings; see print_config_schema for field docs."""

    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)


def _coerce(section, key, typ, raw):
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})")


def parse_config(path=None, overrides=(), text=None) -> RunConfig:
    """Read config text plus --section.key=value overrides, validating every field."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path)
    known = {(s, k): (t, d, val) for s, k, t, d, val, _ in _FIELDS}
    values = {}
    for s, k, t, d, val, _ in _FIELDS:
        values[k] = d
    for section in parser.sections():
        for key, raw in parser[section].items():
            if (section, key) not in known:
                raise ConfigError(f"unknown config field {section}.{key}")
            typ, _, _ = known[(section, key)]
            values[key] = _coerce(section, key, typ, raw)
    for ov in overrides:
        if not ov.startswith("--") or "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like --section.key=value: {ov!r}")
        dotted, raw = ov[2:].split("=", 1)
        section, key = dotted.split(".", 1)
        if (section, key) not in known:
            raise ConfigError(f"unknown config field {section}.{key}")
        typ, _, _ = known[(section, key)]
        values[key] = _coerce(section, key, typ, raw)
    for s, k, t, d, val, _ in _FIELDS:
        if val is not None and not val(values[k]):
            raise ConfigError(f"{s}.{k}: invalid value {values[k]!r}")
    cfg = RunConfig(values)
    if cfg.mode == "binary" and cfg.preset == "two_planes":
        raise ConfigError("solver.mode: binary needs a two-label preset, "
                          "two_planes has three labels")
    return cfg


def print_config_schema(file=None) -> str:
    """Emit a commented, default-valued config that parses back unchanged."""
    out = io.StringIO()
    section = None
    for s, k, t, d, _, doc in _FIELDS:
        if s != section:
            if section is not None:
                out.write("\n")
            out.write(f"[{s}]\n")
            section = s
        value = str(d).lower() if isinstance(d, bool) else d
        out.write(f"# {doc}\n{k} = {value}\n")
    text = out.getvalue()
    print(text, file=file or sys.stdout, end="")
    return text


def _build_instance(cfg, log):
    t0 = time.perf_counter()
    sc = scene_mod.build_scene(cfg.preset, cfg.resolution, cfg.seed,
                               n_cameras=cfg.cameras,
                               image_size=cfg.image_size or cfg.resolution)
    h = sc.ground_truth.voxel_size
    params = scene_mod.CostParams(
        lambda_sem=cfg.lambda_sem, lambda_dep=cfg.lambda_dep,
        delta=cfg.delta_voxels * h, matches_per_pixel=cfg.matches_per_pixel,
        depth_sigma=cfg.depth_sigma_voxels * h, confusion=cfg.confusion,
        seed=cfg.seed, fixed_point_scale=cfg.fixed_point_scale)
    log("scene", time.perf_counter() - t0)

    t0 = time.perf_counter()
    blocks = []
    for ci in range(len(sc.cameras)):
        obs = scene_mod.render_observations(sc, ci, params)
        blocks.append(scene_mod.build_cost_tables(obs, params, sc.label_set))
    ids = np.concatenate([b[0] for b in blocks])
    var_starts = np.concatenate(
        [[0]] + [b[1][1:] + off for b, off in
                 zip(blocks, np.cumsum([0] + [int(b[1][-1]) for b in blocks]))]
    ).astype(np.int64)
    tables = np.concatenate([b[2] for b in blocks], axis=0)
    table_starts = np.concatenate(
        [[0]] + [b[3][1:] + off for b, off in
                 zip(blocks, np.cumsum([0] + [int(b[3][-1]) for b in blocks]))]
    ).astype(np.int64)
    log("render+costs", time.perf_counter() - t0)

    t0 = time.perf_counter()
    edges = None
    if cfg.lambda_pair > 0:
        eu, ev, ew = pairwise_edges(sc.ground_truth, cfg.lambda_pair,
                                    cfg.neighborhood)
        ew_int = np.rint(ew * cfg.fixed_point_scale).astype(np.int64)
        edges = (eu, ev, ew_int)
    inst = solver.EnergyInstance.from_flat(
        sc.ground_truth, sc.label_set, ids, var_starts, tables, table_starts,
        edges=edges)
    log("instance", time.perf_counter() - t0)
    return sc, params, inst


def run(cfg: RunConfig) -> int:
    """Execute the full pipeline; returns the process exit status."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    timings = []

    def log(stage, seconds):
        timings.append((stage, seconds))

    sc, params, inst = _build_instance(cfg, log)

    t0 = time.perf_counter()
    if cfg.mode == "binary":
        res = solver.solve_binary(inst)
        labeling, energy = res.labeling, res.energy
        lower_bound = res.lower_bound
        trace = [energy]
        stats = res.stats
    else:
        res = solver.alpha_expansion(inst, max_cycles=cfg.max_cycles)
        labeling, energy = res.labeling, res.energy
        lower_bound = float("nan")
        trace = list(res.trace)
        stats = res.stats
    log("solve", time.perf_counter() - t0)

    if cfg.oracle_check:
        t0 = time.perf_counter()
        _oracle_compare(cfg, inst, energy, stats)
        log("oracle-check", time.perf_counter() - t0)

    t0 = time.perf_counter()
    result_grid = VoxelGrid(sc.ground_truth.dims, sc.ground_truth.voxel_size,
                            sc.ground_truth.origin, labels=labeling)
    surface = mesh_mod.marching_cubes(result_grid,
                                      free_index=sc.label_set.free_index)
    if cfg.smooth_iterations:
        surface = mesh_mod.laplacian_smooth(surface, cfg.smooth_iterations,
                                            cfg.smooth_step)
    mesh_mod.write_ply(surface, outdir / "result.ply", binary=cfg.binary_ply)
    log("mesh", time.perf_counter() - t0)

    metrics = scene_mod.compute_metrics(labeling, sc.ground_truth.labels,
                                        sc.label_set)
    doc = {
        "energy": int(energy),
        "lower_bound": None if np.isnan(lower_bound) else lower_bound,
        "energy_trace": [int(e) for e in trace],
        "occupancy_iou": metrics["occupancy_iou"],
        "voxel_accuracy": metrics["voxel_accuracy"],
        "class_iou": metrics["class_iou"],
        "solver": {k: int(v) for k, v in stats.items()},
        "num_rays": int(inst.num_rays),
        "num_voxels": int(inst.num_voxels),
        "mode": cfg.mode,
        "mesh_vertices": int(surface.num_vertices),
        "mesh_triangles": int(surface.num_triangles),
    }
    (outdir / "metrics.json").write_text(json.dumps(doc, sort_keys=True, indent=2)
                                         + "\n")
    with open(outdir / "energy_trace.csv", "w") as fh:
        fh.write("move,energy\n")
        for i, e in enumerate(trace):
            fh.write(f"{i},{int(e)}\n")
    with open(outdir / "run.log", "w") as fh:
        fh.write(f"preset={cfg.preset} resolution={cfg.resolution} "
                 f"mode={cfg.mode} seed={cfg.seed}\n")
        fh.write(f"rays={inst.num_rays} voxels={inst.num_voxels} "
                 f"energy={energy}\n")
        for stage, seconds in timings:
            fh.write(f"{stage}: {seconds:.3f}s\n")
    return 0


def _oracle_compare(cfg, inst, energy, stats):
    if cfg.mode == "binary":
        best, _ = oracle.brute_force_binary(inst)
        if energy < best:
            raise AssertionError("solver energy below brute-force optimum")
        if stats.get("unlabeled", 1) == 0 and energy != best:
            raise AssertionError(
                f"fully labeled solve returned {energy}, optimum is {best}")
        stats["oracle_optimum"] = best
    else:
        _, best = oracle.brute_force_multilabel(inst)
        if energy < best:
            raise AssertionError("solver energy below brute-force optimum")
        stats["oracle_optimum"] = best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="rayopt",
        description="first-hit ray-potential reconstruction on synthetic scenes")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the pipeline from a config file")
    p_run.add_argument("config")
    p_run.add_argument("overrides", nargs="*",
                       help="--section.key=value overrides")
    sub.add_parser("schema", help="print a commented default config")
    p_oc = sub.add_parser("oracle-check",
                          help="run with brute-force verification (small configs)")
    p_oc.add_argument("config")
    p_oc.add_argument("overrides", nargs="*")
    args = ap.parse_args(argv)

    try:
        if args.command == "schema":
            print_config_schema()
            return 0
        cfg = parse_config(args.config, args.overrides)
        if args.command == "oracle-check":
            cfg.values["oracle_check"] = True
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT
    except Exception:
        traceback.print_exc()
        return INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
