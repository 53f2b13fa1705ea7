"""Command-line front end: `tefmm verify|converge|bench|tables`.

The run configuration is a JSON file:

    {
      "medium": {"interfaces": [0.0, -2.0], "wavenumbers": [0.8, 1.5, 2.0]},
      "blocks": [
        {"shape": "cube", "center": [0.5, 0.5, 1.0], "size": 1.0, "N": 1000, "seed": 1},
        {"shape": "quartic", "center": [0, 0, -1], "a": 0.15, "N": 1000, "seed": 2}
      ],
      "solver": {"p": 6, "variant": "I", "capacity": 60},
      "converge": {"p_values": [1, 2, 3, 4, 5, 6], "variants": ["I", "II"]},
      "bench": {"N_values": [8000, 64000], "p": 3, "variants": ["I"]},
      "tables": {"file": "tables.swt", "variants": ["I", "II"]}
    }

A block's layer is inferred from its center unless given.  Charges are
uniform in (0, 1) from the block seed.  Units are nondimensional.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checks, fmm, oracle, particles
from .medium import LayeredMedium
from .tables import save_tables

CSV_HEADER = ["N", "p", "variant", "component", "err2", "errmax", "time_s"]


class ConfigError(ValueError):
    pass


@dataclass
class Block:
    shape: str
    center: tuple
    N: int
    seed: int
    size: float = 1.0
    a: float = 0.1
    layer: int | None = None

    @property
    def extent(self) -> float:
        return particles.block_extent(self.shape, self.size if self.shape == "cube" else self.a)

    def generate(self, N: int | None = None):
        n = self.N if N is None else N
        if self.shape == "cube":
            pts = particles.generate_cube(self.center, self.size, n, self.seed)
        else:
            pts = particles.generate_quartic(self.center, self.a, n, self.seed)
        return pts, particles.charges(n, self.seed)


@dataclass
class RunConfig:
    medium: LayeredMedium
    blocks: list
    solver: dict = field(default_factory=dict)
    converge: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def fmm_config(self, **over) -> fmm.FmmConfig:
        d = dict(self.solver)
        d.update(over)
        return fmm.FmmConfig(**d)

    def particles(self, N: int | None = None):
        """Points and charges per layer; with N, every block gets N points."""
        pts = [[] for _ in range(self.medium.n_layers)]
        q = [[] for _ in range(self.medium.n_layers)]
        for b in self.blocks:
            x, c = b.generate(N)
            pts[b.layer].append(x)
            q[b.layer].append(c)
        pts = [np.vstack(p) if p else np.zeros((0, 3)) for p in pts]
        q = [np.concatenate(c) if c else np.zeros(0) for c in q]
        return pts, q


def parse_config(data: dict) -> RunConfig:
    """Validate a config dict.  Every block must sit strictly inside one
    layer; nothing is computed before this passes."""
    try:
        med = data["medium"]
        medium = LayeredMedium(med["interfaces"], med["wavenumbers"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad medium block: {exc}") from exc
    blocks = []
    for i, b in enumerate(data.get("blocks", [])):
        b = dict(b)
        shape = b.get("shape", "cube")
        if shape not in ("cube", "quartic"):
            raise ConfigError(f"block {i}: unknown shape {shape!r}")
        for key in ("center", "N", "seed"):
            if key not in b:
                raise ConfigError(f"block {i}: missing {key!r}")
        if shape == "quartic" and not 0.0 < float(b.get("a", 0.1)) < 0.5:
            raise ConfigError(f"block {i}: a must lie in (0, 0.5)")
        if int(b["N"]) < 1:
            raise ConfigError(f"block {i}: N must be >= 1")
        blk = Block(shape, tuple(float(v) for v in b["center"]), int(b["N"]), int(b["seed"]),
                    float(b.get("size", 1.0)), float(b.get("a", 0.1)), b.get("layer"))
        zc, ext = blk.center[2], blk.extent
        layer = medium.layer_of(zc) if blk.layer is None else int(blk.layer)
        if not 0 <= layer < medium.n_layers:
            raise ConfigError(f"block {i}: layer {layer} out of range")
        lo, hi = medium.bottom(layer), medium.top(layer)
        if not (zc - ext > lo and zc + ext < hi):
            raise ConfigError(f"block {i}: z-extent [{zc - ext}, {zc + ext}] not strictly inside "
                              f"layer {layer} ({lo}, {hi})")
        blk.layer = layer
        blocks.append(blk)
    solver = dict(data.get("solver", {}))
    names = {f.name for f in fields(fmm.FmmConfig)}
    unknown = set(solver) - names
    if unknown:
        raise ConfigError(f"unknown solver keys {sorted(unknown)}")
    try:
        fmm.FmmConfig(**solver)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad solver block: {exc}") from exc
    return RunConfig(medium, blocks, solver, dict(data.get("converge", {})),
                     dict(data.get("bench", {})), dict(data.get("tables", {})))


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(json.load(f))


def component_label(key) -> str:
    if isinstance(key, tuple) and key[0] == "free":
        return f"free_{key[1]}"
    return f"{key.layer}{key.src_layer}_{key.direction}"


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg: RunConfig | None, out: Path, names=None) -> int:
    rows = checks.run_checks(names)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "verify.json", "w") as f:
        json.dump([r.as_dict() for r in rows], f, indent=1, default=str)
    bad = [r for r in rows if r.status != "pass"]
    for r in rows:
        print(f"{r.status.upper():4s} {r.check}: {r.value:.3e} (tol {r.tolerance:.0e})")
    print(f"{len(rows) - len(bad)}/{len(rows)} checks passed")
    return 1 if bad else 0


def reference_parts(cfg: RunConfig, pts, q, tol: float = 1e-12) -> dict:
    """Direct-sum values of every part run_total reports."""
    m = cfg.medium
    ref = {}
    for l in range(m.n_layers):
        if len(pts[l]):
            ref[("free", l)] = oracle.free_direct_sum(pts[l], pts[l], q[l], m.k(l), exclude_self=True)
    geometry = fmm.build_geometry(m, pts)
    for comp in fmm.components(m, geometry):
        ref[comp] = oracle.layered_direct_sum(pts[comp.layer], pts[comp.src_layer], q[comp.src_layer],
                                              m, comp.layer, comp.src_layer, (comp.direction,), tol)
    return ref


def _layer_of_key(key) -> int:
    return key[1] if isinstance(key, tuple) else key.layer


def converge_rows(cfg: RunConfig, p_values, variants, ref=None, pts=None, q=None):
    """CSV rows (dicts) for every part, per-layer total and overall total."""
    if pts is None:
        pts, q = cfg.particles()
    if ref is None:
        ref = reference_parts(cfg, pts, q)
    n_layers = cfg.medium.n_layers
    ref_tot = [sum((v for k, v in ref.items() if _layer_of_key(k) == l), np.zeros(len(pts[l]), complex))
               for l in range(n_layers)]
    N = sum(len(p) for p in pts)
    rows = []
    for var in variants:
        base = cfg.fmm_config(variant=var, p=max(p_values))
        geometry = fmm.build_geometry(cfg.medium, pts, base.capacity, base.depth_cap)
        tables = fmm.precompute_tables(geometry, base)
        for p in p_values:
            c = cfg.fmm_config(variant=var, p=p)
            res = fmm.run_total(cfg.medium, pts, q, c, tables=tables)
            for key, exact in ref.items():
                rep = oracle.error_metrics(exact, res.parts[key])
                rows.append(dict(N=N, p=p, variant=var, component=component_label(key), err2=rep.err2,
                                 errmax=rep.errmax, time_s=res.times[key]))
            t_all = sum(v for k, v in res.times.items() if not (isinstance(k, tuple) and k[0] == "tables"))
            for l in range(n_layers):
                if len(pts[l]):
                    rep = oracle.error_metrics(ref_tot[l], res.potentials[l])
                    rows.append(dict(N=N, p=p, variant=var, component=f"total_{l}", err2=rep.err2,
                                     errmax=rep.errmax, time_s=None))
            rep = oracle.error_metrics(np.concatenate(ref_tot), np.concatenate(res.potentials))
            rows.append(dict(N=N, p=p, variant=var, component="total", err2=rep.err2,
                             errmax=rep.errmax, time_s=t_all))
    return rows


def write_csv(path: Path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r["N"], r["p"], r["variant"], r["component"], _fmt(r["err2"]),
                        _fmt(r["errmax"]), _fmt(r["time_s"])])


def cmd_converge(cfg: RunConfig, out: Path) -> int:
    conv = cfg.converge
    p_values = [int(p) for p in conv.get("p_values", range(1, 9))]
    variants = list(conv.get("variants", fmm.VARIANTS))
    rows = converge_rows(cfg, p_values, variants)
    write_csv(out / "converge.csv", rows)
    for r in rows:
        if r["component"] == "total":
            print(f"variant {r['variant']} p={r['p']}: Err2 {r['err2']:.3e} Errmax {r['errmax']:.3e}")
    return 0


def fit_exponent(N_values, times) -> float:
    """gamma in time = c N^gamma by least squares on log-log data."""
    return float(np.polyfit(np.log(np.asarray(N_values, float)), np.log(np.asarray(times, float)), 1)[0])


def bench_rows(cfg: RunConfig, N_values, p: int, variants):
    """Per-component wall times with every block holding N particles.
    Table precompute is timed separately under component "tables"."""
    rows = []
    for var in variants:
        c = cfg.fmm_config(variant=var, p=p)
        for N in N_values:
            pts, q = cfg.particles(N)
            n_tot = sum(len(x) for x in pts)
            t0 = time.perf_counter()
            geometry = fmm.build_geometry(cfg.medium, pts, c.capacity, c.depth_cap)
            tables = fmm.precompute_tables(geometry, c)
            t_tab = time.perf_counter() - t0
            t0 = time.perf_counter()
            res = fmm.run_total(cfg.medium, pts, q, c, tables=tables)
            t_run = time.perf_counter() - t0
            rows.append(dict(N=n_tot, p=p, variant=var, component="tables", err2=None, errmax=None,
                             time_s=t_tab))
            for key, t in res.times.items():
                if isinstance(key, tuple) and key[0] == "tables":
                    continue
                rows.append(dict(N=n_tot, p=p, variant=var, component=component_label(key), err2=None,
                                 errmax=None, time_s=t))
            rows.append(dict(N=n_tot, p=p, variant=var, component="run", err2=None, errmax=None,
                             time_s=t_run))
    return rows


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    b = cfg.bench
    N_values = [int(n) for n in b.get("N_values", [8000, 64000, 216000])]
    p = int(b.get("p", 3))
    variants = list(b.get("variants", [cfg.solver.get("variant", "I")]))
    rows = bench_rows(cfg, N_values, p, variants)
    write_csv(out / "bench.csv", rows)
    summary = {}
    for var in variants:
        run = [r for r in rows if r["variant"] == var and r["component"] == "run"]
        if len(run) >= 2:
            g = fit_exponent([r["N"] for r in run], [r["time_s"] for r in run])
            summary[var] = {"N": [r["N"] for r in run], "time_s": [r["time_s"] for r in run], "gamma": g}
            print(f"variant {var}: gamma = {g:.3f}")
    with open(out / "bench_summary.json", "w") as f:
        json.dump(summary, f, indent=1)
    return 0


def cmd_tables(cfg: RunConfig, out: Path) -> int:
    tb = cfg.tables
    variants = tuple(tb.get("variants", fmm.VARIANTS))
    c = cfg.fmm_config()
    pts, _ = cfg.particles()
    geometry = fmm.build_geometry(cfg.medium, pts, c.capacity, c.depth_cap)
    tables = fmm.precompute_tables(geometry, c, variants=variants)
    out.mkdir(parents=True, exist_ok=True)
    path = out / tb.get("file", "tables.swt")
    h = c.table_hash()
    n = save_tables(path, tables.all_tables(), h)
    print(f"wrote {n} entries to {path} (config hash {h.hex()[:16]})")
    return 0


COMMANDS = {"verify": cmd_verify, "converge": cmd_converge, "bench": cmd_bench, "tables": cmd_tables}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tefmm", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON run configuration (optional for verify)")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--threads", type=int, help="override solver.threads")
    ap.add_argument("--deterministic", action="store_true", help="fixed reduction order")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = None
    if args.config is not None:
        try:
            cfg = load_config(args.config)
        except (ConfigError, OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        if args.threads is not None:
            cfg.solver["threads"] = args.threads
        if args.deterministic:
            cfg.solver["deterministic"] = True
    elif args.command != "verify":
        print("--config is required for this command", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
