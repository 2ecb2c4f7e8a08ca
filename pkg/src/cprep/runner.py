"""Run directories, manifests and cross-run reports.

Layout of one run::

    <out>/<config-name>/<seed>/
        manifest.json
        contexts.txt
        history_source.csv  history_transferred.csv  history_target.csv
        checkpoint_source   checkpoint_transferred   checkpoint_target
        generalization.csv  (source policy evaluated on the target set)

A failed seed keeps whatever it wrote plus a ``FAILED`` file holding the
traceback.
"""
from __future__ import annotations

import json
import math
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import save_checkpoint
from .config import ExperimentConfig, dump_config
from .gridworld import Context
from .metrics import TrainingHistory, threshold_grid
from .transfer import aggregate, run_session, seed_utilities

__all__ = [
    "OUTPUT_ROOT_ENV",
    "PHASES",
    "output_root",
    "run_seed",
    "run_config",
    "replay",
    "SeedRun",
    "load_runs",
    "ReportError",
    "build_report",
    "format_table",
    "write_report",
]

OUTPUT_ROOT_ENV = "CPREP_OUTPUT_ROOT"
PHASES = ("source", "transferred", "target")
UTILITIES = ("TTT_AUC", "JS", "TR")


def output_root(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """``--out`` beats the environment variable, which beats the config."""
    return Path(override or os.environ.get(OUTPUT_ROOT_ENV) or cfg.output_dir)


def _code_version() -> str:
    from . import __version__
    return __version__


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def run_seed(cfg: ExperimentConfig, seed: int, out_root: str | os.PathLike,
             contexts: tuple[list, list] | None = None) -> Path:
    """Run one transfer session and write its directory.  Raises on failure
    after leaving a ``FAILED`` marker next to any partial artifacts."""
    seed_dir = Path(out_root) / cfg.name / str(seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    (seed_dir / "FAILED").unlink(missing_ok=True)
    started = time.time()
    try:
        rcfg = cfg.repr_config()
        res = run_session(
            cfg.cmdp(), rcfg, cfg.dqn, cfg.n_src, cfg.n_tgt, cfg.steps_src, cfg.steps_tgt, seed,
            eval_episodes=cfg.eval_episodes, sector_size=cfg.sector_size, n_evals=cfg.n_evals,
            track_generalization=cfg.track_generalization, contexts=contexts,
        )
        lines = [f"source\t{json.dumps(c.to_json())}" for c in res.src]
        lines += [f"target\t{json.dumps(c.to_json())}" for c in res.tgt]
        _write(seed_dir / "contexts.txt", "\n".join(lines) + "\n")
        artifacts = {}
        for phase, hist in zip(PHASES, (res.source, res.transferred, res.target)):
            _write(seed_dir / f"history_{phase}.csv", hist.to_csv())
            (seed_dir / f"checkpoint_{phase}").write_bytes(
                save_checkpoint(res.nets[phase], seed, res.env_steps[phase]))
            artifacts[f"history_{phase}"] = f"history_{phase}.csv"
            artifacts[f"checkpoint_{phase}"] = f"checkpoint_{phase}"
        if res.source_on_target is not None:
            _write(seed_dir / "generalization.csv", res.source_on_target.to_csv())
            artifacts["generalization"] = "generalization.csv"
        artifacts["contexts"] = "contexts.txt"
        manifest = {
            "config_name": cfg.name,
            "seed": seed,
            "config": cfg.to_dict(),
            "representation": {
                "name": rcfg.name, "base": rcfg.base, "use_ltl": rcfg.use_ltl,
                "use_dtl": rcfg.use_dtl, "reward_mode": rcfg.reward_mode,
            },
            "contexts": {
                "source": [c.to_json() for c in res.src],
                "target": [c.to_json() for c in res.tgt],
            },
            "artifacts": artifacts,
            "env_steps": res.env_steps,
            "code_version": _code_version(),
            "numpy_version": np.__version__,
            "python_version": platform.python_version(),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
            "wall_clock_seconds": round(time.time() - started, 3),
        }
        _write(seed_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    except BaseException:
        _write(seed_dir / "FAILED", traceback.format_exc())
        raise
    return seed_dir


def _run_seed_safe(args) -> tuple[int, str | None]:
    cfg, seed, root = args
    try:
        run_seed(cfg, seed, root)
        return seed, None
    except Exception as exc:  # recorded in FAILED; reported to the caller
        return seed, f"{type(exc).__name__}: {exc}"


def run_config(cfg: ExperimentConfig, seeds=None, out_root=None, parallel: int = 1,
               log=print) -> list[tuple[int, str | None]]:
    """All seeds of one config.  Returns (seed, error or None) per seed."""
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    root = Path(out_root) if out_root is not None else output_root(cfg)
    (root / cfg.name).mkdir(parents=True, exist_ok=True)
    _write(root / cfg.name / "config.json", dump_config(cfg.replace(seeds=seeds)))
    jobs = [(cfg, s, str(root)) for s in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_seed_safe, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_seed_safe(job))
            seed, err = results[-1]
            log(f"seed {seed}: {'FAILED ' + err if err else 'done'}")
    return results


def replay(seed_dir: str | os.PathLike, out_root: str | os.PathLike) -> Path:
    """Re-run a seed directory from its manifest alone."""
    manifest = json.loads((Path(seed_dir) / "manifest.json").read_text())
    cfg = ExperimentConfig.from_dict(manifest["config"])
    ctx = manifest["contexts"]
    contexts = ([Context.from_json(c) for c in ctx["source"]], [Context.from_json(c) for c in ctx["target"]])
    return run_seed(cfg, int(manifest["seed"]), out_root, contexts=contexts)


# --------------------------------------------------------------------------- reporting


class ReportError(ValueError):
    pass


@dataclass
class SeedRun:
    path: Path
    manifest: dict
    histories: dict

    @property
    def cmdp_label(self) -> str:
        c = self.manifest["config"]
        return f"{c['env_kind']}+{c['context_space']}"

    @property
    def configuration(self) -> str:
        return self.manifest["representation"]["name"]

    @property
    def grid_size(self) -> int:
        return int(self.manifest["config"]["threshold_grid_size"])


def load_runs(paths) -> list[SeedRun]:
    """Every completed seed directory under ``paths`` (searched recursively)."""
    runs = []
    seen = set()
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise ReportError(f"{p} does not exist")
        found = [p / "manifest.json"] if (p / "manifest.json").is_file() else sorted(p.rglob("manifest.json"))
        for mf in found:
            d = mf.parent.resolve()
            if d in seen or (d / "FAILED").exists():
                continue
            seen.add(d)
            manifest = json.loads(mf.read_text())
            hists = {ph: TrainingHistory.from_csv((d / f"history_{ph}.csv").read_text()) for ph in PHASES}
            runs.append(SeedRun(d, manifest, hists))
    if not runs:
        raise ReportError("no completed runs found")
    return runs


def build_report(runs: list[SeedRun], n_resamples: int = 2000, seed: int = 0) -> dict:
    """Nested ``{cmdp: {configuration: summary}}`` with per-seed utilities,
    their aggregates and the TTT-vs-threshold curve."""
    sizes = {r.grid_size for r in runs}
    if len(sizes) != 1:
        raise ReportError(f"runs use different threshold grids: sizes {sorted(sizes)}")
    grid = threshold_grid(sizes.pop())
    lengths = {len(h) for r in runs for h in r.histories.values()}
    if len(lengths) != 1:
        raise ReportError(f"runs use different evaluation grids: lengths {sorted(lengths)}")
    groups: dict = {}
    for r in sorted(runs, key=lambda r: (r.cmdp_label, r.configuration, r.manifest["seed"])):
        groups.setdefault(r.cmdp_label, {}).setdefault(r.configuration, []).append(r)
    rng = np.random.default_rng(seed)
    report: dict = {}
    for cmdp, by_cfg in groups.items():
        for name, rs in by_cfg.items():
            utils = [seed_utilities(r.histories["transferred"], r.histories["target"], grid) for r in rs]
            per = {"TTT_AUC": [u.ttt_auc for u in utils], "JS": [u.js for u in utils], "TR": [u.tr for u in utils]}
            curves = np.array([u.ttt_curve for u in utils])
            curve_rows = []
            for k, theta in enumerate(grid):
                a = aggregate([curves[:, k]], n_resamples, rng)
                curve_rows.append((float(theta), a.iqm, a.ci_low, a.ci_high))
            report.setdefault(cmdp, {})[name] = {
                "seeds": [int(r.manifest["seed"]) for r in rs],
                "utilities": {u: aggregate([per[u]], n_resamples, rng) for u in UTILITIES},
                "curve": curve_rows,
            }
    return report


def _g(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def _cell(a) -> str:
    if a.infinite:
        return "inf"
    return f"{_g(a.iqm)} ± {_g(a.std)} [{_g(a.ci_low)}, {_g(a.ci_high)}]"


def format_table(report: dict) -> str:
    """Aligned text: rows are utility x CMDP, columns are configurations."""
    configs = sorted({c for by_cfg in report.values() for c in by_cfg})
    header = ["utility", "cmdp", *configs]
    rows = []
    for util in UTILITIES:
        for cmdp in sorted(report):
            row = [util, cmdp]
            for c in configs:
                s = report[cmdp].get(c)
                row.append(_cell(s["utilities"][util]) if s else "-")
            rows.append(row)
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * w for w in widths]), *map(fmt, rows)]) + "\n"


def _slug(s: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in s)


def write_report(report: dict, out_dir: str | os.PathLike, svg: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    table = out / "table.txt"
    _write(table, format_table(report))
    written.append(table)

    lines = ["utility,cmdp,configuration,n_seeds,iqm,std,ci_low,ci_high,infinite"]
    utilities = {}
    for cmdp in sorted(report):
        for name in sorted(report[cmdp]):
            s = report[cmdp][name]
            entry = {"seeds": s["seeds"]}
            for util in UTILITIES:
                a = s["utilities"][util]
                lines.append(",".join([util, cmdp, name, str(len(s["seeds"])),
                                       *(repr(float(x)) for x in (a.iqm, a.std, a.ci_low, a.ci_high)),
                                       str(a.infinite).lower()]))
                entry[util] = a.to_json()
            utilities.setdefault(cmdp, {})[name] = entry

            curve = out / f"ttt_curve_{_slug(cmdp)}_{_slug(name)}.csv"
            rows = ["theta,ttt_iqm,ci_low,ci_high"]
            rows += [",".join(repr(float(x)) for x in r) for r in s["curve"]]
            _write(curve, "\n".join(rows) + "\n")
            written.append(curve)
    csv_path = out / "table.csv"
    _write(csv_path, "\n".join(lines) + "\n")
    json_path = out / "utilities.json"
    _write(json_path, json.dumps(utilities, indent=2) + "\n")
    written += [csv_path, json_path]

    if svg:
        written += _plot_curves(report, out)
    return written


def _plot_curves(report: dict, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for cmdp in sorted(report):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name in sorted(report[cmdp]):
            c = np.array(report[cmdp][name]["curve"])
            ax.plot(c[:, 0], c[:, 1], label=name)
            ax.fill_between(c[:, 0], c[:, 2], c[:, 3], alpha=0.2)
        ax.set_xlabel("threshold")
        ax.set_ylabel("TTT (% of training)")
        ax.set_ylim(0, 100)
        ax.set_title(cmdp)
        ax.legend(fontsize=7)
        fig.tight_layout()
        p = out / f"ttt_curve_{_slug(cmdp)}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    return paths
