"""Verification pipelines and geometry export.

Each subcommand reads a JSON config, runs one pipeline, writes a
residual report plus optional field dumps and geometry exports into the
output directory, and exits 0 when every monitored residual passes its
threshold, 2 on a threshold breach, 1 on a numerical or precondition
failure, and 64 on a malformed config or command line.  All randomness
derives from the single config seed (overridable with --seed).
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import backlund, confocal, kernels, netgrid, sjcalc
from .confocal import (canonical_quadric, diagonal_qwc, elliptic_coords,
                       ivory_identity_suite, q_eval_normal,
                       sample_admissible_z, sample_point)
from .errors import ConfigError, NumericalError, QuadricaError
from .lmap import build_lmap, lmap_identity_suite, tc_z_residual
from .report import ResidualReport
from .sjcalc import random_spec, sj_sqrt

PIPELINES = ("sjcheck", "confocal-verify", "ivory-verify", "lmap-verify",
             "deform", "backlund", "bpt")

DEFAULT_THRESHOLDS = {
    "sjcheck": 1e-12,
    "confocal-verify": 1e-8,
    "ivory-verify": 1e-9,
    "lmap-verify": 1e-9,
    "deform": {"prime_integral": 1e-2, "plaquette_path_diff": 1e-3,
               "vla_gram": 1e-3, "vla0_metric": 1e-3,
               "joined_margin_deficit": 1e-10, "isometry": 1e-2,
               "conjugate_net": 1e-2, "curl": 1e-2},
    "backlund": {"orthogonality": 1e-8, "prime_integral": 1e-9,
                 "roundtrip_V": 1e-9, "roundtrip_Lam": 1e-9,
                 "plaquette": 1e-2, "ricatti_primary": 1e-2},
    "bpt": {"bpt_identity": 1e-10, "orthogonality": 1e-10,
            "closure_V": 1e-8, "closure_Lam": 1e-8, "closure_x": 1e-8,
            "masked_fraction": 1e-12, "prime_a": 1e-9, "prime_b": 1e-9},
}


# ---------------------------------------------------------------------------
# config plumbing

def _as_complex(v, what):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 \
            and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    raise ConfigError(f"{what} must be a number or a [re, im] pair")


def _check_keys(cfg, allowed, where):
    extra = set(cfg) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: "
                          + ", ".join(sorted(extra)))


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def quadric_from_config(d):
    """Quadric from {"kind", "blocks"} or the diagonal shorthand."""
    if not isinstance(d, dict):
        raise ConfigError("quadric must be an object")
    _check_keys(d, {"kind", "blocks", "semiaxes"}, "quadric")
    if "semiaxes" in d:
        if d.get("kind", "QWC") != "QWC":
            raise ConfigError("semiaxes shorthand is for kind QWC")
        axes = d["semiaxes"]
        if not isinstance(axes, list) or not axes:
            raise ConfigError("semiaxes must be a nonempty list")
        return diagonal_qwc([_as_complex(a, "semiaxis") for a in axes])
    if "kind" not in d or "blocks" not in d:
        raise ConfigError("quadric needs kind and blocks (or semiaxes)")
    blocks = []
    for b in d["blocks"]:
        if not isinstance(b, list) or len(b) not in (2, 3):
            raise ConfigError("each block is [a, p] or [a_re, a_im, p]")
        if len(b) == 2:
            blocks.append((_as_complex(b[0], "eigenvalue"), int(b[1])))
        else:
            blocks.append((complex(b[0], b[1]), int(b[2])))
    try:
        return canonical_quadric(d["kind"], tuple(blocks))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def grid_from_config(d):
    if not isinstance(d, dict):
        raise ConfigError("grid must be an object")
    _check_keys(d, {"n", "extra", "h", "extent", "origin"}, "grid")
    try:
        return netgrid.GridSpec.from_json(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc


def _thresholds(cfg, pipeline):
    base = DEFAULT_THRESHOLDS[pipeline]
    thr = dict(base) if isinstance(base, dict) else {"*": base}
    over = cfg.get("thresholds", {})
    if not isinstance(over, dict):
        raise ConfigError("thresholds must be an object")
    for k, v in over.items():
        if not isinstance(v, (int, float)) or v <= 0:
            raise ConfigError(f"threshold {k} must be a positive number")
        thr[k] = float(v)
    return thr


def _apply_thresholds(report, thr):
    """Breached entry names; '*' applies to every unlisted entry."""
    wild = thr.get("*")
    out = []
    for name, e in report.entries.items():
        tol = thr.get(name, wild)
        if tol is not None and not e["max"] < tol:
            out.append(name)
    return out


def _rotation_init(text, n, rng):
    if text is None or text == "identity":
        return np.eye(n, dtype=complex)
    if isinstance(text, str) and text.startswith("random:"):
        try:
            s = int(text.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError("random:<seed> needs an integer seed") from exc
        return sjcalc.random_rotation(n, seed=s)
    raise ConfigError("rotation init must be 'identity' or 'random:<seed>'")


# ---------------------------------------------------------------------------
# artifacts

def dump_field(base, arr, axes):
    """Row-major complex dump `<base>.bin` with a JSON sidecar."""
    base = Path(base)
    arr = np.ascontiguousarray(np.asarray(arr), dtype=np.complex128)
    arr.tofile(base.with_suffix(".bin"))
    sidecar = {"shape": list(arr.shape), "dtype": "complex128",
               "order": "C", "axes": list(axes)}
    base.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_field(base):
    base = Path(base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    if sidecar.get("dtype") != "complex128" or sidecar.get("order") != "C":
        raise ConfigError(f"unsupported field dump layout in {base}")
    arr = np.fromfile(base.with_suffix(".bin"), dtype=np.complex128)
    return arr.reshape(sidecar["shape"]), sidecar


def export_csv(path, x, grid):
    """Grid coordinates plus re/im of every ambient component, %.17g."""
    x = np.asarray(x)
    comps = x.shape[-1]
    flat = x.reshape(-1, comps)
    mesh = [m.ravel() for m in grid.mesh()]
    header = ",".join([f"u{a + 1}" for a in range(grid.axes)]
                      + [f"x{c + 1}_{p}" for c in range(comps)
                         for p in ("re", "im")])
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for i in range(flat.shape[0]):
            row = [f"{m[i]:.17g}" for m in mesh]
            for c in range(comps):
                row.append(f"{flat[i, c].real:.17g}")
                row.append(f"{flat[i, c].imag:.17g}")
            fh.write(",".join(row) + "\n")


def export_ply(path, x, grid, projection=(0, 1, 2), part="re", mask=None):
    """ASCII point cloud of a real 3-projection; faces on full 2D grids.

    `projection` picks three ambient components, `part` their real or
    imaginary parts.  Masked points are dropped (faces are emitted only
    when nothing is masked and the grid has two axes).
    """
    x = np.asarray(x)
    if len(projection) != 3:
        raise ConfigError("ply projection needs exactly three components")
    if part not in ("re", "im"):
        raise ConfigError("ply part must be 're' or 'im'")
    take = x.real if part == "re" else x.imag
    pts = np.stack([take[..., int(c)] for c in projection], axis=-1)
    flat = pts.reshape(-1, 3)
    keep = np.ones(flat.shape[0], dtype=bool) if mask is None \
        else ~np.asarray(mask).ravel()
    flat = flat[keep]
    faces = []
    if mask is None and grid.axes == 2:
        nu, nv = grid.shape
        for i in range(nu - 1):
            for j in range(nv - 1):
                a = i * nv + j
                faces.append((a, a + 1, a + nv + 1, a + nv))
    with open(path, "w", newline="") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {flat.shape[0]}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {len(faces)}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for p in flat:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for f in faces:
            fh.write("4 {} {} {} {}\n".format(*f))


def _run_exports(cfg, outdir, fields, grid):
    for ex in cfg.get("exports", []):
        if not isinstance(ex, dict):
            raise ConfigError("each export must be an object")
        _check_keys(ex, {"kind", "field", "path", "projection", "part"},
                    "export")
        kind = ex.get("kind")
        name = ex.get("field")
        if kind not in ("csv", "ply"):
            raise ConfigError(f"unsupported export kind {kind!r}")
        if name not in fields:
            raise ConfigError(f"export field {name!r} not produced by "
                              "this pipeline")
        path = outdir / ex.get("path", f"{name}.{kind}")
        if kind == "csv":
            export_csv(path, fields[name], grid)
        else:
            export_ply(path, fields[name], grid,
                       projection=ex.get("projection", (0, 1, 2)),
                       part=ex.get("part", "re"))


# ---------------------------------------------------------------------------
# pipelines

def run_sjcheck(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "count", "max_dim", "max_block",
                      "thresholds", "out"}, "sjcheck config")
    count = int(cfg.get("count", 200))
    sq_res, comm_res = [], []
    for _ in range(count):
        spec = random_spec(rng, max_dim=int(cfg.get("max_dim", 8)),
                           max_block=int(cfg.get("max_block", 6)))
        M = spec.matrix()
        S = sj_sqrt(spec)
        sq_res.append(np.abs(S @ S - M).max())
        comm_res.append(np.abs(S @ M - M @ S).max())
    rep = ResidualReport(meta={"count": count})
    rep.add("sqrt_square", np.array(sq_res))
    rep.add("sqrt_commutation", np.array(comm_res))
    return rep, {}, None


def _random_general_qc(n, rng):
    while True:
        eigs = 0.4 + 1.2 * rng.random(n + 1)
        eigs = eigs * np.exp(1j * 2 * np.pi * rng.random(n + 1))
        d = np.abs(eigs[:, None] - eigs[None, :])
        np.fill_diagonal(d, np.inf)
        if d.min() > 0.1:
            return canonical_quadric("QC", tuple((e, 1) for e in eigs))


def run_confocal(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "count", "thresholds",
                      "out"}, "confocal-verify config")
    Q = quadric_from_config(cfg["quadric"]) if "quadric" in cfg \
        else _random_general_qc(2, rng)
    count = int(cfg.get("count", 25))
    root_res, orth_res = [], []
    done = 0
    attempts = 0
    while done < count:
        attempts += 1
        if attempts > 20 * count:
            raise NumericalError("could not sample enough regular points")
        try:
            x = sample_point(Q, seed=int(rng.integers(2 ** 31)))
            roots = elliptic_coords(Q, x)
        except NumericalError:
            continue
        vals, normals = [], []
        for z in roots:
            v, nrm = q_eval_normal(Q, x, z)
            vals.append(abs(v))
            normals.append(nrm)
        for i in range(len(normals)):
            for j in range(i + 1, len(normals)):
                ni, nj = normals[i], normals[j]
                den = max(1e-30, np.linalg.norm(ni) * np.linalg.norm(nj))
                orth_res.append(abs(ni @ nj) / den)
        root_res.extend(vals)
        done += 1
    rep = ResidualReport(meta={"kind": Q.kind, "points": count})
    rep.add("member_value", np.array(root_res))
    rep.add("normal_orthogonality", np.array(orth_res))
    return rep, {}, None


def _random_kind(kind, n, rng):
    """Random canonical quadric of a kind, n + 1 ambient dimensions."""
    if kind == "QC":
        return _random_general_qc(n, rng)
    singles = n if kind == "QWC" else n - 1
    while True:
        eigs = 0.4 + 1.2 * rng.random(singles)
        eigs = eigs * np.exp(1j * 2 * np.pi * rng.random(singles))
        d = np.abs(eigs[:, None] - eigs[None, :])
        np.fill_diagonal(d, np.inf)
        if singles < 2 or d.min() > 0.1:
            break
    blocks = tuple((e, 1) for e in eigs)
    if kind == "QWC":
        return canonical_quadric("QWC", blocks + ((0.0, 1),))
    if kind == "IQWC":
        return canonical_quadric("IQWC", ((0.0, 2),) + blocks)
    raise ConfigError(f"unknown quadric kind {kind!r}")


def run_ivory(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "pairs", "z_count",
                      "thresholds", "out"}, "ivory-verify config")
    pairs = int(cfg.get("pairs", 5))
    z_count = int(cfg.get("z_count", 4))
    rep = ResidualReport()
    if "quadric" in cfg:
        quads = [(quadric_from_config(cfg["quadric"]), "")]
    else:
        quads = [(_random_kind(kind, n, rng), f"{kind}{n}_")
                 for kind in ("QC", "QWC", "IQWC") for n in (2, 3)]
    for Q, tag in quads:
        for _ in range(pairs):
            zs = sample_admissible_z(Q, z_count,
                                     seed=int(rng.integers(2 ** 31)))
            for z in zs:
                sub = ivory_identity_suite(
                    Q, z, sample_count=2, seed=int(rng.integers(2 ** 31)))
                for name, e in sub.entries.items():
                    key = tag + name
                    cur = rep.entries.get(key)
                    if cur is None or e["max"] > cur["max"]:
                        rep.entries[key] = dict(e)
    return rep, {}, None


def run_lmap(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "z_count",
                      "thresholds", "out"}, "lmap-verify config")
    Q = quadric_from_config(cfg["quadric"]) if "quadric" in cfg \
        else diagonal_qwc((1.7, 1.0))
    if Q.kind == "QC":
        raise ConfigError("lmap-verify needs a QWC or IQWC quadric")
    lm = build_lmap(Q)
    rep = ResidualReport(meta={"kind": Q.kind})
    for z in sample_admissible_z(Q, int(cfg.get("z_count", 10)),
                                 seed=int(rng.integers(2 ** 31))):
        sub = lmap_identity_suite(Q, lm, z,
                                  seed=int(rng.integers(2 ** 31)))
        sub.add("tc_pairing", tc_z_residual(Q, lm, z,
                                            seed=int(rng.integers(2 ** 31))))
        for name, e in sub.entries.items():
            cur = rep.entries.get(name)
            if cur is None or e["max"] > cur["max"]:
                rep.entries[name] = dict(e)
    return rep, {}, None


def _seeded_state(cfg, rng, default_h=0.04, default_extent=33):
    Q = quadric_from_config(cfg["quadric"]) if "quadric" in cfg \
        else diagonal_qwc((1.7, 1.0))
    if Q.kind == "QC":
        raise ConfigError("this pipeline needs a QWC or IQWC quadric")
    lm = build_lmap(Q)
    grid = grid_from_config(cfg.get("grid", {
        "n": lm.n, "h": default_h, "extent": [default_extent] * lm.n}))
    seed_st = netgrid.seed_diagonal(Q, lm, grid)
    return Q, lm, grid, seed_st


def run_deform(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "grid", "rotation",
                      "velocity", "substeps", "dumps", "exports",
                      "thresholds", "out"}, "deform config")
    Q, lm, grid, seed_st = _seeded_state(cfg, rng)
    rot = cfg.get("rotation", "kink")
    if rot == "identity":
        st = seed_st
        rep = ResidualReport(grid_h=grid.h)
        rep.add("prime_integral", st.prime_integral(lm))
    elif rot == "kink":
        if grid.n != 2:
            raise ConfigError("the kink rotation needs n = 2")
        R, _ = netgrid.soliton_rotation(
            grid, np.diag(lm.Apn).real,
            velocity=float(cfg.get("velocity", 0.3)))
        M = np.zeros(grid.shape + (grid.n, grid.n), dtype=complex)
        origin = (0,) * grid.axes
        st = netgrid.integrate_moving_frame(
            R, M, np.zeros_like(M),
            (seed_st.V[origin], seed_st.Lam[origin]), lm, grid,
            substeps=int(cfg.get("substeps", 2)))
        rep = st.report
    else:
        raise ConfigError("rotation must be 'identity' or 'kink'")

    fs = netgrid.fundamental_system(st, lm)
    x, rrep = netgrid.realize_surface(fs, lm)
    rep.merge(fs.report)
    rep.merge(rrep)
    fields = {"V": st.V, "Lam": st.Lam, "x": x}
    return rep, fields, grid


def run_backlund(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "grid", "z", "branch",
                      "R1_init", "substeps", "dumps", "exports",
                      "thresholds", "out"}, "backlund config")
    if "z" not in cfg:
        raise ConfigError("backlund needs a transform parameter z")
    z = _as_complex(cfg["z"], "z")
    branch = int(cfg.get("branch", 1))
    Q, lm, grid, st = _seeded_state(cfg, rng, default_h=0.01)
    if not confocal.admissible_z(Q, z):
        raise NumericalError(f"z = {z} is not admissible for this quadric")
    init = _rotation_init(cfg.get("R1_init"), grid.n, rng)
    R1, irep = backlund.integrate_ricatti(
        st, lm, z, branch, init=init, substeps=int(cfg.get("substeps", 1)))
    lf = backlund.leaf(st, R1, lm, z, branch)
    plq, pdiff = backlund.ricatti_plaquette(R1, st, lm, z, branch)
    rt = backlund.roundtrip_residual(st, lf, lm, z, branch)
    rres = backlund.ricatti_residual(R1, st, lm, z, branch)
    rep = ResidualReport(grid_h=grid.h, meta={"z": [z.real, z.imag],
                                              "branch": branch})
    rep.merge(irep)
    rep.add("prime_integral", lf.prime_integral(lm))
    rep.add("plaquette", plq)
    rep.add("plaquette_path_diff", pdiff)
    rep.merge(rt)
    rep.merge(rres)
    fields = {"R1": R1, "V1": lf.V, "Lam1": lf.Lam}
    return rep, fields, grid


def run_bpt(cfg, rng):
    _check_keys(cfg, {"pipeline", "seed", "quadric", "grid", "z1", "z2",
                      "branch1", "branch2", "R1_init", "R2_init",
                      "substeps", "dumps", "exports", "thresholds", "out"},
                "bpt config")
    for key in ("z1", "z2"):
        if key not in cfg:
            raise ConfigError(f"bpt needs both z1 and z2 ({key} missing)")
    z1 = _as_complex(cfg["z1"], "z1")
    z2 = _as_complex(cfg["z2"], "z2")
    Q, lm, grid, st = _seeded_state(cfg, rng, default_h=0.005,
                                    default_extent=17)
    for z in (z1, z2):
        if not confocal.admissible_z(Q, z):
            raise NumericalError(f"z = {z} is not admissible")
    fs = netgrid.fundamental_system(st, lm)
    quad = backlund.bianchi_quad(
        st, fs, lm, z1, z2,
        init_a=_rotation_init(cfg.get("R1_init"), grid.n, rng),
        init_b=_rotation_init(cfg.get("R2_init"), grid.n, rng),
        branch_a=int(cfg.get("branch1", 1)),
        branch_b=int(cfg.get("branch2", 1)),
        substeps=int(cfg.get("substeps", 1)))
    rep = quad["report"]
    fields = {"R3": quad["fields"]["third"],
              "x_fourth": quad["x"]["fourth_a"]}
    return rep, fields, grid


RUNNERS = {
    "sjcheck": run_sjcheck,
    "confocal-verify": run_confocal,
    "ivory-verify": run_ivory,
    "lmap-verify": run_lmap,
    "deform": run_deform,
    "backlund": run_backlund,
    "bpt": run_bpt,
}


# ---------------------------------------------------------------------------
# driver

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(64)


def _build_parser():
    p = _Parser(prog="quadrica",
                description="Residual verification pipelines for confocal "
                            "quadrics and their transformed nets.")
    sub = p.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    return p


def _apply_threads():
    val = os.environ.get("QUADRICA_THREADS")
    if not val:
        return
    try:
        k = int(val)
    except ValueError as exc:
        raise ConfigError("QUADRICA_THREADS must be an integer") from exc
    if k > 0 and kernels.USE_NUMBA:
        import numba
        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))


def run_pipeline(pipeline, cfg, outdir, seed=None):
    """Execute one pipeline; returns (exit_code, report)."""
    if pipeline not in RUNNERS:
        raise ConfigError(f"unknown pipeline {pipeline!r}")
    if "pipeline" in cfg and cfg["pipeline"] != pipeline:
        raise ConfigError(f"config is for pipeline {cfg['pipeline']!r}, "
                          f"not {pipeline!r}")
    if seed is None:
        seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    thr = _thresholds(cfg, pipeline)
    rng = np.random.default_rng(seed)

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    rep, fields, grid = RUNNERS[pipeline](cfg, rng)

    wanted = cfg.get("dumps", [])
    if not isinstance(wanted, list):
        raise ConfigError("dumps must be a list of field names")
    for name in wanted:
        if name not in fields:
            raise ConfigError(f"dump field {name!r} not produced by "
                              f"{pipeline}")
        axes = [] if grid is None \
            else [f"u{a + 1}" for a in range(grid.axes)]
        dump_field(outdir / name, fields[name], axes)
    if grid is not None:
        _run_exports(cfg, outdir, fields, grid)

    breaches = _apply_thresholds(rep, thr)
    status = "ok" if not breaches else "breach"
    doc = {"pipeline": pipeline, "seed": seed, "status": status,
           "thresholds": {k: v for k, v in thr.items()},
           "breaches": breaches, "report": rep.to_dict()}
    (outdir / "report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return (0 if not breaches else 2), rep


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads()
        cfg = load_config(args.config)
        out = args.out if args.out is not None else cfg.get("out", ".")
        code, rep = run_pipeline(args.pipeline, cfg, out, seed=args.seed)
        if code == 0:
            print(f"{args.pipeline}: ok ({len(rep.entries)} entries)")
        else:
            print(f"{args.pipeline}: threshold breach", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 64
    except (NumericalError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except QuadricaError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
