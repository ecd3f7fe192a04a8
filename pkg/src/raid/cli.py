"""Command-line driver: fit, discover, test, sweep, simulate, density.

Every command reads one YAML config file; flags override its values. Each
run writes ``manifest-<command>.json`` recording the command, the resolved config
(and its hash), the master seed, timestamps and the SHA-256 of every
artifact, so ``raid replay <manifest> --out-dir <dir>`` can reproduce it.

Exit codes: 0 success, 1 invalid input or config, 2 some study or sweep
cells failed (partial results are still written).
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

from .config import ConfigError, canonical_json, cell_seed, config_hash, load_config, make_rng
from .core import ColumnSpec, DataError, discretize, load_dataset
from .pipeline import PipelineConfig, discover, prepare
from .ptest import PredictiveEngine, PredictiveSample, level_configurations, test_interaction, \
    write_density_grid
from .sampler import PosteriorDraws, compute_lpml, run_mcmc
from .simgen import (MECHANISMS, SCENARIOS, SIGMAS, GeneratorSpec, gen_ordinal_latent,
                     generate, run_study, standardized_skew_normal)

log = logging.getLogger("raid")

EXIT_OK, EXIT_INVALID, EXIT_CELLS_FAILED = 0, 1, 2
DRAWS_NAME = "draws.jsonl"

SWEEP_DEFAULT = {"A": [0.1, 1.0, 10.0], "k0": [0.1, 1.0, 10.0], "cohesion": ["dp", "uniform"]}


class CommandError(Exception):
    """Input problem reported to the user with exit code 1."""


# ----------------------------------------------------------------------- tables

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def write_table(path, header, rows, delimiter="\t"):
    """Delimiter-separated table with a header row; floats use ``repr`` so
    they parse back exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
            w.writerow([_fmt(v) for v in vals])
    return path


def read_table(path, delimiter="\t"):
    """Rows of a table written by :func:`write_table` as dicts; numeric
    cells come back as int or float."""
    def conv(s):
        for t in (int, float):
            try:
                return t(s)
            except ValueError:
                pass
        return s
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh, delimiter=delimiter)
        header = next(r)
        return header, [dict(zip(header, map(conv, row))) for row in r]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(o):
    try:
        import numpy as np
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


# --------------------------------------------------------------------- manifest

def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    args: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    artifacts: dict = field(default_factory=dict)
    exit_code: int = 0

    @property
    def config_hash(self):
        return config_hash(self.config)

    def record(self, out_dir, paths):
        out_dir = Path(out_dir)
        for p in paths:
            p = Path(p)
            self.artifacts[str(p.relative_to(out_dir))] = _sha256(p)

    def to_dict(self):
        d = asdict(self)
        d["config_hash"] = self.config_hash
        return d

    def write(self, out_dir):
        return write_json(Path(out_dir) / f"manifest-{self.command}.json", self.to_dict())

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d.pop("config_hash", None)
        return cls(**d)


# ------------------------------------------------------------------ config glue

def _schema(cols):
    out = []
    for i, c in enumerate(cols or []):
        if not isinstance(c, dict) or "name" not in c:
            raise ConfigError(f"data.columns[{i}]", "needs a name")
        kind = c.get("kind", "continuous")
        if kind == "categorical":
            if not c.get("levels"):
                raise ConfigError(f"data.columns[{i}].levels", "categorical columns need levels")
            out.append(ColumnSpec.categorical(c["name"], [str(v) for v in c["levels"]]))
        elif kind == "continuous":
            out.append(ColumnSpec.continuous(c["name"]))
        else:
            raise ConfigError(f"data.columns[{i}].kind", f"unknown kind {kind!r}")
    return out


def load_data(cfg, base_dir="."):
    """Dataset from the ``data`` section: a file with a declared schema, or a
    generator (``generate``)."""
    data = cfg.get("data")
    if not data:
        raise ConfigError("data", "missing section")
    gen = data.get("generate")
    if gen is not None:
        gen = dict(gen)
        family = gen.get("family", "toy")
        try:
            if family == "ordinal":
                gen.pop("family")
                return gen_ordinal_latent(**gen)
            if gen.pop("sn_standardized", False):
                gen["sn_location"], gen["sn_scale"] = standardized_skew_normal()
            return generate(GeneratorSpec(**gen))
        except (TypeError, ValueError) as e:
            raise ConfigError("data.generate", str(e)) from None
    if "path" not in data:
        raise ConfigError("data.path", "either path or generate is required")
    path = Path(data["path"])
    if not path.is_absolute():
        path = Path(base_dir) / path
    kind = data.get("response_kind", "continuous")
    return load_dataset(path, _schema(data.get("columns")), data.get("response", "Y"), kind,
                        data.get("n_grades"), data.get("delimiter", ","))


def resolve(raw, args):
    """Apply command-line overrides to a raw config mapping."""
    cfg = copy.deepcopy(raw)
    pipe = cfg.setdefault("pipeline", {})
    if args.seed is not None:
        pipe.setdefault("mcmc", {})["seed"] = int(args.seed)
        cfg["seed"] = int(args.seed)
    elif "seed" in cfg:
        # the top-level seed is the master seed; the chain inherits it
        pipe.setdefault("mcmc", {}).setdefault("seed", int(cfg["seed"]))
    if args.bins is not None:
        pipe["bins"] = int(args.bins)
    if args.pred_draws is not None:
        pipe["n_pred"] = int(args.pred_draws)
    if args.permutations is not None:
        pipe["n_perm"] = int(args.permutations)
    if args.filter_cols:
        pipe["filter_cols"] = [c.strip() for c in args.filter_cols.split(",") if c.strip()]
    if args.workers is not None:
        cfg["workers"] = int(args.workers)
    if getattr(args, "columns", None):
        cfg.setdefault("test", {})["columns"] = [c.strip() for c in args.columns.split(",")]
    if getattr(args, "draws", None):
        cfg["draws"] = args.draws
    return cfg


def pipeline_config(cfg):
    return PipelineConfig.from_dict(cfg.get("pipeline"))


def master_seed(cfg):
    return int(cfg.get("seed", cfg.get("pipeline", {}).get("mcmc", {}).get("seed", 0)))


# --------------------------------------------------------------------- commands

def cmd_fit(cfg, out_dir, base_dir="."):
    pc = pipeline_config(cfg)
    ds = prepare(load_data(cfg, base_dir), pc)
    draws = run_mcmc(ds, pc.mcmc)
    dpath = out_dir / DRAWS_NAME
    draws.to_jsonl(dpath)
    k_bar = float(draws.n_clusters().mean())
    try:
        lpml = compute_lpml(draws, ds, pc.mcmc.prior)
    except (ValueError, FloatingPointError) as e:
        log.warning("LPML unavailable: %s", e)
        lpml = None
    report = {"n_draws": len(draws), "mean_clusters": k_bar, "lpml": lpml,
              "acceptance": draws.meta.get("acceptance"), "draws_checksum": draws.checksum}
    rpath = write_json(out_dir / "fit_report.json", report)
    print(f"mean clusters (k-bar): {k_bar:.3f}")
    print(f"LPML: {lpml:.3f}" if lpml is not None else "LPML: unavailable")
    return [dpath, rpath], EXIT_OK


def _draws_path(cfg, out_dir, base_dir):
    p = cfg.get("draws")
    if p is None:
        return out_dir / DRAWS_NAME
    p = Path(p)
    return p if p.is_absolute() else Path(base_dir) / p


def _load_fit(cfg, out_dir, base_dir):
    pc = pipeline_config(cfg)
    path = _draws_path(cfg, out_dir, base_dir)
    if not path.exists():
        raise CommandError(f"draws file not found: {path} (run 'fit' first)")
    draws = PosteriorDraws.from_jsonl(path)
    ds = prepare(load_data(cfg, base_dir), pc)
    if draws.m != ds.m:
        raise CommandError(f"draws file has {draws.m} units, dataset has {ds.m}")
    return pc, ds, draws


SUMMARY_HEADER = ["pair", "Pr", "Supp", "Conf", "|S|"]


def cmd_discover(cfg, out_dir, base_dir="."):
    pc, ds, draws = _load_fit(cfg, out_dir, base_dir)
    _, summaries, candidates, frac = discover(ds, draws, pc)
    detected = [ps for ps in summaries if ps.pr >= pc.detect_threshold]
    tpath = write_table(out_dir / "pairs.tsv", SUMMARY_HEADER, [ps.as_row() for ps in detected])
    jpath = write_json(out_dir / "pairs.json", {
        "detect_threshold": pc.detect_threshold,
        "pairs": [ps.as_row() for ps in detected],
        "candidate_mode": pc.candidate_mode,
        "candidates": [list(c) for c in candidates],
        "top_pair_fraction": {" <=> ".join(k): v for k, v in sorted(frac.items())},
    })
    for ps in detected:
        r = ps.as_row()
        print(f"{r['pair']}\tPr={r['Pr']:.3f}\tSupp={r['Supp']:.3f}\tConf={r['Conf']:.3f}\t|S|={r['|S|']:.1f}")
    if not detected:
        print("no pairs reached the detection threshold")
    return [tpath, jpath], EXIT_OK


def _safe(label):
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)


def cmd_test(cfg, out_dir, base_dir="."):
    pc, ds, draws = _load_fit(cfg, out_dir, base_dir)
    tcfg = cfg.get("test") or {}
    cols = tcfg.get("columns")
    if not cols:
        raise ConfigError("test.columns", "name the columns to test (or pass --columns)")
    unknown = [c for c in cols if c not in ds.names]
    if unknown:
        raise CommandError(f"unknown column(s): {unknown}")
    view = discretize(ds, pc.bins)
    engine = PredictiveEngine(draws, ds, pc.mcmc.prior)
    rng = make_rng(cell_seed(pc.mcmc.seed, "test", list(cols)))
    rep = test_interaction(tuple(cols), engine, view, pc.n_pred, pc.n_perm, pc.replications, rng)
    tag = _safe("_".join(cols))
    jpath = write_json(out_dir / f"test_{tag}.json", rep.to_dict())
    gpath = out_dir / f"density_{tag}.csv"
    write_density_grid(gpath, rep.groups)
    print(f"{' x '.join(cols)}: {len(rep.groups)} groups, statistic={rep.statistic:.4f}, "
          f"p={rep.p_value:.4f}")
    return [jpath, gpath], EXIT_OK


def cmd_density(cfg, out_dir, base_dir="."):
    pc, ds, draws = _load_fit(cfg, out_dir, base_dir)
    dcfg = cfg.get("density") or {}
    cols = dcfg.get("columns") or (cfg.get("test") or {}).get("columns") or []
    unknown = [c for c in cols if c not in ds.names]
    if unknown:
        raise CommandError(f"unknown column(s): {unknown}")
    n = int(dcfg.get("n_draws", 1000))
    n_points = int(dcfg.get("n_points", 512))
    view = discretize(ds, pc.bins)
    engine = PredictiveEngine(draws, ds, pc.mcmc.prior)
    rng = make_rng(cell_seed(pc.mcmc.seed, "density", list(cols)))
    samples = []
    for c in level_configurations(cols, view, ds):
        d, states = engine.sample(c.values, n, rng)
        samples.append(PredictiveSample(c.label, d, states))
    path = out_dir / f"density_{_safe('_'.join(cols) or 'baseline')}.csv"
    write_density_grid(path, samples, n_points)
    print(f"wrote {len(samples)} density curves on a {n_points}-point grid to {path.name}")
    return [path], EXIT_OK


def sweep_grid(cfg):
    grid = {**SWEEP_DEFAULT, **(cfg.get("sweep") or {})}
    out = []
    for A, k0, coh in product(grid["A"], grid["k0"], grid["cohesion"]):
        out.append({"A": float(A), "k0": float(k0), "cohesion": str(coh)})
    return out


def sweep_member_config(cfg, cell, index):
    """Standalone config of one sweep cell, with its derived seed."""
    sub = copy.deepcopy(cfg)
    sub.pop("sweep", None)
    sub.pop("workers", None)
    seed = cell_seed(master_seed(cfg), "sweep", cell)
    pipe = sub.setdefault("pipeline", {})
    mcmc = pipe.setdefault("mcmc", {})
    prior = mcmc.setdefault("prior", {})
    prior["A"] = cell["A"]
    prior.setdefault("similarity", {})["k0"] = cell["k0"]
    coh = prior.get("cohesion") or {}
    coh = {"kind": coh} if isinstance(coh, str) else dict(coh)
    coh["kind"] = cell["cohesion"]
    prior["cohesion"] = coh
    mcmc["seed"] = seed
    sub["seed"] = seed
    return sub


def _run_sweep_member(task):
    sub, sub_dir, base_dir = task
    sub_dir = Path(sub_dir)
    sub_dir.mkdir(parents=True, exist_ok=True)
    try:
        with contextlib.redirect_stdout(io.StringIO()):
            paths, _ = cmd_fit(sub, sub_dir, base_dir)
            p2, _ = cmd_discover(sub, sub_dir, base_dir)
        with open(sub_dir / "config.json", "w", encoding="utf-8") as fh:
            fh.write(canonical_json(sub) + "\n")
        _, rows = read_table(sub_dir / "pairs.tsv")
        return {"ok": True, "pairs": [r["pair"] for r in rows], "paths": [str(p) for p in paths + p2]}
    except Exception as e:  # recorded per cell
        return {"ok": False, "error": f"{type(e).__name__}: {e}", "pairs": [], "paths": []}


def cmd_sweep(cfg, out_dir, base_dir="."):
    cells = sweep_grid(cfg)
    tasks = []
    for i, cell in enumerate(cells):
        tasks.append((sweep_member_config(cfg, cell, i), str(out_dir / f"config_{i + 1:02d}"), base_dir))
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_sweep_member, tasks))
    else:
        results = [_run_sweep_member(t) for t in tasks]
    counts, which = {}, {}
    rows = []
    for i, (cell, res) in enumerate(zip(cells, results)):
        rows.append({"config": i + 1, "A": cell["A"], "k0": cell["k0"], "cohesion": cell["cohesion"],
                     "seed": tasks[i][0]["seed"], "status": "ok" if res["ok"] else "failed",
                     "error": res.get("error", ""), "n_pairs": len(res["pairs"])})
        for pr in res["pairs"]:
            counts[pr] = counts.get(pr, 0) + 1
            which.setdefault(pr, []).append(i + 1)
    cpath = write_table(out_dir / "sweep_configs.tsv",
                        ["config", "A", "k0", "cohesion", "seed", "status", "error", "n_pairs"], rows)
    prior_rows = sorted(({"pair": p, "Prior#": c, "configs": which[p]} for p, c in counts.items()),
                        key=lambda r: (-r["Prior#"], r["pair"]))
    ppath = write_table(out_dir / "prior_count.tsv", ["pair", "Prior#", "configs"], prior_rows)
    for r in prior_rows:
        print(f"{r['pair']}\tPrior#={r['Prior#']}")
    paths = [cpath, ppath] + [Path(p) for res in results for p in res["paths"]]
    paths += [Path(t[1]) / "config.json" for t, res in zip(tasks, results) if res["ok"]]
    failed = sum(1 for r in results if not r["ok"])
    return paths, EXIT_CELLS_FAILED if failed else EXIT_OK


def study_specs(scfg):
    """GeneratorSpecs of a ``study`` section."""
    family = scfg.get("family", "toy")
    n = int(scfg.get("n", 500))
    fractions = scfg.get("fractions", [1.0])
    sn = {}
    if scfg.get("sn_standardized", False):
        sn["sn_location"], sn["sn_scale"] = standardized_skew_normal()
    for key in ("sn_location", "sn_scale"):
        if key in scfg:
            sn[key] = float(scfg[key])
    specs = []
    try:
        if family == "toy":
            for sc, fr in product(scfg.get("scenarios", list(SCENARIOS)), fractions):
                specs.append(GeneratorSpec("toy", scenario=sc, n=n, interaction_fraction=fr, **sn))
        elif family == "osteo":
            for kind, mech, sig, fr in product(scfg.get("covariate_kinds", ["categorical", "continuous"]),
                                               scfg.get("mechanisms", list(MECHANISMS)),
                                               scfg.get("sigmas", list(SIGMAS)), fractions):
                specs.append(GeneratorSpec("osteo", mechanism=mech, covariate_kind=kind,
                                           sigma=float(sig), n=n, interaction_fraction=fr, **sn))
        else:
            raise ConfigError("study.family", f"unknown family {family!r}")
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("study", str(e)) from None
    return specs


def cmd_simulate(cfg, out_dir, base_dir="."):
    scfg = cfg.get("study")
    if not scfg:
        raise ConfigError("study", "missing section")
    specs = study_specs(scfg)
    methods = tuple(scfg.get("methods", ["raid", "lm"]))
    for m in methods:
        if m not in ("raid", "lm"):
            raise ConfigError("study.methods", f"unknown method {m!r}")
    pc = pipeline_config(cfg)
    progress_path = out_dir / "progress.log"
    prog = open(progress_path, "a", encoding="utf-8")

    def progress(o):
        prog.write(f"{o.cell}\t{o.method}\t{o.replicate}\t{'ok' if o.ok else 'failed'}\n")
        prog.flush()

    try:
        res = run_study(specs, methods, int(scfg.get("replicates", 50)), pc, master_seed(cfg),
                        int(cfg.get("workers", 1)), float(scfg.get("alpha", pc.p_cut)), progress)
    finally:
        prog.close()
    paths = []
    for value, name in (("rate", "rates.tsv"), ("mean_fp", "fp.tsv"),
                        ("mean_relaxed_fp", "fp_relaxed.tsv")):
        cells, table = res.pivot(value)
        paths.append(write_table(out_dir / name, ["method"] + cells,
                                 [[m] + vals for m, vals in table]))
    paths.append(write_table(out_dir / "summary.tsv",
                             ["cell", "method", "n_ok", "n_failed", "rate", "mean_fp", "mean_relaxed_fp"],
                             res.summary()))
    paths.append(write_table(out_dir / "outcomes.tsv",
                             ["cell", "method", "replicate", "seed", "tp", "fp", "relaxed_fp",
                              "declared", "error"],
                             [{**asdict(o), "declared": ";".join("-".join(p) for p in o.declared)}
                              for o in res.outcomes]))
    cells, table = res.pivot("rate")
    print("method\t" + "\t".join(cells))
    for m, vals in table:
        print(m + "\t" + "\t".join("nan" if math.isnan(v) else f"{v:.2f}" for v in vals))
    if res.n_failed:
        print(f"{res.n_failed} cell(s) failed; see outcomes.tsv", file=sys.stderr)
    return paths, EXIT_CELLS_FAILED if res.n_failed else EXIT_OK


COMMANDS = {"fit": cmd_fit, "discover": cmd_discover, "test": cmd_test, "sweep": cmd_sweep,
            "simulate": cmd_simulate, "density": cmd_density}


# ------------------------------------------------------------------------ entry

def build_parser():
    p = argparse.ArgumentParser(prog="raid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out-dir", default=".", help="directory for outputs")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--bins", type=int, choices=(2, 3), help="bins per continuous covariate")
        sp.add_argument("--pred-draws", type=int, help="posterior predictive draws per group")
        sp.add_argument("--permutations", type=int, help="permutations for the test")
        sp.add_argument("--filter-cols", help="comma-separated columns pairs must contain")
        sp.add_argument("--draws", help="draws file (default: <out-dir>/draws.jsonl)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("test", "density"):
            sp.add_argument("--columns", help="comma-separated columns to vary")
    rp = sub.add_parser("replay", help="rerun a recorded command")
    rp.add_argument("manifest")
    rp.add_argument("--out-dir", required=True)
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


def execute(command, cfg, out_dir, base_dir=".", args=None):
    """Run one command with a resolved config and write its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if command in ("discover", "test", "density") and "draws" not in cfg:
        cfg = {**cfg, "draws": str((out_dir / DRAWS_NAME).resolve())}
    man = RunManifest(command, cfg, master_seed(cfg), args or {}, started=_now())
    paths, code = COMMANDS[command](cfg, out_dir, base_dir)
    man.finished = _now()
    man.exit_code = code
    man.record(out_dir, paths)
    man.write(out_dir)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            man = RunManifest.read(args.manifest)
            base = man.args.get("base_dir", ".")
            return execute(man.command, man.config, args.out_dir, base, man.args)
        raw = load_config(args.config)
        cfg = resolve(raw, args)
        base = str(Path(args.config).resolve().parent)
        return execute(args.command, cfg, args.out_dir, base, {"base_dir": base})
    except (ConfigError, DataError, CommandError, FileNotFoundError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
