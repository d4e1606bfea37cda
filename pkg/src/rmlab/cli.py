"""Command-line harness: dataset generation, training, evaluation matrices,
shortcut-failure reports, best-of-N curves, and the consolidated report.

Verbs: gen, train, matrix, sfd, bon, report. All randomness derives from one
master seed through named sub-seeds (sha256 of "seed:component"), so adding a
command never perturbs existing streams and two runs from the same master
seed produce byte-identical reports. Wall-clock timings live only in
manifest.json, which is the one file allowed to differ between runs.

Exit codes: 0 success, 1 assertion failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import bestofn, envs, evaluation, svg
from .errors import ConfigError, LabError, MissingArtifactError
from .training import TrainConfig, TrainRun, train

DEFAULT_OUT = "labout"
DEFAULT_MODES = ["standard", "text_only", "shortcut_aware"]
SFD_MODES = ["standard", "shortcut_aware"]
BON_MODES = ["standard", "shortcut_aware"]
DEFAULT_N_GRID = [1, 2, 4, 8, 16, 32, 64]


def derive_seed(master_seed: int, component: str) -> int:
    """Stable 63-bit sub-seed for a named component of the pipeline."""
    digest = hashlib.sha256(f"{master_seed}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_hash(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ExperimentConfig:
    """Everything one pipeline run needs, hashable in canonical form."""

    master_seed: int = 131
    out_dir: str = DEFAULT_OUT
    family: dict | str = "default"
    n_train: int = 8000
    n_test: int = 1000
    modes: list = field(default_factory=lambda: list(DEFAULT_MODES))
    train: dict = field(default_factory=dict)  # TrainConfig overrides, minus mode/seed
    subsample_fractions: list = field(default_factory=list)
    n_pools: int = 200
    pool_size: int = 64
    n_grid: list = field(default_factory=lambda: list(DEFAULT_N_GRID))
    jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed, "family": self.family,
            "n_train": self.n_train, "n_test": self.n_test,
            "modes": self.modes, "train": self.train,
            "subsample_fractions": self.subsample_fractions,
            "n_pools": self.n_pools, "pool_size": self.pool_size,
            "n_grid": self.n_grid,
        }

    def config_hash(self) -> str:
        # jobs/out_dir affect execution, not results, so they stay out of the hash
        return canonical_hash(self.to_dict())

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def build_family(self):
        if self.family == "default":
            family_seed = derive_seed(self.master_seed, "family")
            return envs.default_family(family_seed, n_train=self.n_train,
                                       n_test=self.n_test)
        doc = self.family
        specs = [envs.spec_from_dict(d) for d in doc["envs"]]
        family = envs.make_family(int(doc["family_seed"]), specs)
        return family, specs

    def train_config(self, mode: str, env_id: str) -> TrainConfig:
        seed = derive_seed(self.master_seed, f"train:{mode}:{env_id}")
        return TrainConfig(mode=mode, seed=seed, **self.train)

    def proxy_config(self, audited_mode: str, env_id: str) -> TrainConfig:
        # Paired proxy: same init seed as the audited model, text-only loss.
        seed = derive_seed(self.master_seed, f"train:{audited_mode}:{env_id}")
        return TrainConfig(mode="text_only", seed=seed, **self.train)


class Workspace:
    """Paths, manifest bookkeeping, and resume logic for one output dir."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = config.out_dir
        self.manifest_path = os.path.join(self.out, "manifest.json")
        self.manifest = {"config_hash": config.config_hash(), "artifacts": {},
                         "timings": {}}
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path, encoding="utf-8") as fh:
                old = json.load(fh)
            if old.get("config_hash") == self.manifest["config_hash"]:
                self.manifest = old

    def path(self, *parts) -> str:
        full = os.path.join(self.out, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def rel(self, path) -> str:
        return os.path.relpath(path, self.out)

    def is_current(self, key: str) -> bool:
        """True when the recorded artifact exists and its hash still matches."""
        entry = self.manifest["artifacts"].get(key)
        if not entry:
            return False
        path = os.path.join(self.out, entry["path"])
        return os.path.exists(path) and _file_sha256(path) == entry["sha256"]

    def record(self, key: str, path) -> None:
        self.manifest["artifacts"][key] = {"path": self.rel(path),
                                           "sha256": _file_sha256(path)}

    def artifact_path(self, key: str) -> str:
        entry = self.manifest["artifacts"].get(key)
        if not entry:
            raise MissingArtifactError(f"artifact {key!r} not in manifest")
        path = os.path.join(self.out, entry["path"])
        if not os.path.exists(path):
            raise MissingArtifactError(f"artifact {key!r} missing on disk: {entry['path']}")
        if _file_sha256(path) != entry["sha256"]:
            raise MissingArtifactError(f"artifact {key!r} failed its hash check")
        return path

    def save_manifest(self, timing_key: str | None = None, seconds: float | None = None):
        if timing_key is not None:
            self.manifest["timings"][timing_key] = seconds
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=1)


class OutputLock:
    """One process owns an output directory at a time."""

    def __init__(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, ".lock")

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LabError(f"output dir is locked by another run: {self.path}")
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def _dataset_key(env_id: str, split: str) -> str:
    return f"dataset:{env_id}:{split}"


def cmd_gen(ws: Workspace) -> None:
    """Write every environment split (plus subsampled variants) to disk."""
    t0 = time.monotonic()
    family, specs = ws.config.build_family()
    fam_path = ws.path("family.json")
    with open(fam_path, "w", encoding="utf-8") as fh:
        json.dump({"family_seed": family.family_seed,
                   "m_scale": envs.M_SCALE,
                   "envs": [envs.spec_to_dict(s) for s in specs]},
                  fh, sort_keys=True, indent=1)
    ws.record("family", fam_path)

    for spec in specs:
        for split in ("train", "test"):
            key = _dataset_key(spec.env_id, split)
            path = ws.path("datasets", f"{spec.env_id}_{split}.jsonl")
            if ws.is_current(key):
                print(f"gen: skip {spec.env_id}/{split} (up to date)")
                continue
            dataset = envs.sample_env(family, spec.env_id, split)
            envs.write_dataset(dataset, path)
            ws.record(key, path)
            ws.manifest["artifacts"][key]["fingerprint"] = dataset.fingerprint
            print(f"gen: wrote {ws.rel(path)} ({len(dataset)} samples)")
        for frac in ws.config.subsample_fractions:
            key = f"dataset:{spec.env_id}:train:sub{frac}"
            path = ws.path("datasets", f"{spec.env_id}_train_sub{frac}.jsonl")
            if ws.is_current(key):
                continue
            full = envs.read_dataset(
                ws.artifact_path(_dataset_key(spec.env_id, "train")))
            sub_seed = derive_seed(ws.config.master_seed,
                                   f"subsample:{spec.env_id}:{frac}")
            sub = envs.subsample(full, frac, sub_seed)
            envs.write_dataset(sub, path)
            ws.record(key, path)
            print(f"gen: wrote {ws.rel(path)} ({len(sub)} samples)")
    ws.save_manifest("gen", time.monotonic() - t0)


def _load_dataset(ws: Workspace, env_id: str, split: str):
    key = _dataset_key(env_id, split)
    path = ws.artifact_path(key)
    fingerprint = ws.manifest["artifacts"][key].get("fingerprint", "")
    return envs.read_dataset(path, fingerprint)


def _train_one(config_doc: dict, dataset_path: str, fingerprint: str, run_dir: str) -> str:
    """Worker-safe single training job (used by the process pool)."""
    dataset = envs.read_dataset(dataset_path, fingerprint)
    run = train(TrainConfig.from_dict(config_doc), dataset)
    run.save(run_dir)
    return run_dir


def _ensure_runs(ws: Workspace, wanted: list) -> None:
    """Train whatever is stale in ``wanted``: (key, TrainConfig, env_id) triples."""
    jobs = []
    for key, config, env_id in wanted:
        if ws.is_current(key):
            continue
        run_dir = ws.path("models", *key.split(":")[1:])
        data_key = _dataset_key(env_id, "train")
        jobs.append((key, config.to_dict(), ws.artifact_path(data_key),
                     ws.manifest["artifacts"][data_key].get("fingerprint", ""),
                     run_dir))
    if not jobs:
        return
    if ws.config.jobs > 1:
        with ProcessPoolExecutor(max_workers=ws.config.jobs) as pool:
            futures = [(key, run_dir,
                        pool.submit(_train_one, cfg, data, fp, run_dir))
                       for key, cfg, data, fp, run_dir in jobs]
            for key, run_dir, fut in futures:
                fut.result()
                ws.record(key, os.path.join(run_dir, "primary.json"))
                print(f"train: finished {key}")
    else:
        for key, cfg, data, fp, run_dir in jobs:
            _train_one(cfg, data, fp, run_dir)
            ws.record(key, os.path.join(run_dir, "primary.json"))
            print(f"train: finished {key}")


def _run_key(mode: str, env_id: str) -> str:
    return f"model:{mode}:{env_id}"


def _proxy_key(mode: str, env_id: str) -> str:
    return f"model:proxy-{mode}:{env_id}"


def _load_run(ws: Workspace, key: str) -> TrainRun:
    ws.artifact_path(key)  # validates existence + hash
    return TrainRun.load(os.path.dirname(
        os.path.join(ws.out, ws.manifest["artifacts"][key]["path"])))


def cmd_train(ws: Workspace, modes=None) -> None:
    """Train one model per (mode, environment)."""
    t0 = time.monotonic()
    _, specs = ws.config.build_family()
    wanted = [(_run_key(mode, s.env_id), ws.config.train_config(mode, s.env_id), s.env_id)
              for mode in (modes or ws.config.modes) for s in specs]
    _ensure_runs(ws, wanted)
    ws.save_manifest("train", time.monotonic() - t0)


def cmd_matrix(ws: Workspace) -> None:
    """Cross-distribution accuracy matrices for every requested mode."""
    t0 = time.monotonic()
    cmd_train(ws)
    _, specs = ws.config.build_family()
    env_order = [s.env_id for s in specs]
    test_sets = {e: _load_dataset(ws, e, "test") for e in env_order}

    summary = {}
    for mode in ws.config.modes:
        nets = {e: _load_run(ws, _run_key(mode, e)).primary for e in env_order}
        matrix = evaluation.gen_matrix(mode, nets, test_sets, env_order)
        csv_path = ws.path("reports", f"matrix_{mode}.csv")
        matrix.write_csv(csv_path)
        ws.record(f"report:matrix:{mode}", csv_path)
        svg_path = ws.path("reports", f"matrix_{mode}.svg")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(svg.heatmap_svg(env_order, env_order, matrix.acc,
                                     f"accuracy matrix ({mode})", lo=0.0, hi=1.0))
        ws.record(f"report:matrix-svg:{mode}", svg_path)
        summary[mode] = {
            "matrix": matrix.to_dict(),
            "mean_iid": matrix.mean_diagonal,
            "mean_ood": matrix.mean_off_diagonal,
            "gap": matrix.mean_diagonal - matrix.mean_off_diagonal,
        }
        print(f"matrix[{mode}]: iid={matrix.mean_diagonal:.4f} "
              f"ood={matrix.mean_off_diagonal:.4f}")
    path = ws.path("reports", "matrix_summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    ws.record("report:matrix-summary", path)
    ws.save_manifest("matrix", time.monotonic() - t0)


def cmd_sfd(ws: Workspace) -> None:
    """Shortcut-failure degradation reports for every o.o.d. cell."""
    t0 = time.monotonic()
    _, specs = ws.config.build_family()
    env_order = [s.env_id for s in specs]
    audit_modes = [m for m in SFD_MODES if m in ws.config.modes]

    cmd_train(ws, modes=audit_modes)
    proxies = [(_proxy_key(mode, e), ws.config.proxy_config(mode, e), e)
               for mode in audit_modes for e in env_order]
    _ensure_runs(ws, proxies)

    test_sets = {e: _load_dataset(ws, e, "test") for e in env_order}
    for mode in audit_modes:
        reports = []
        for train_env in env_order:
            run = _load_run(ws, _run_key(mode, train_env))
            proxy = _load_run(ws, _proxy_key(mode, train_env)).primary
            for test_env in env_order:
                if test_env == train_env:
                    continue
                rep = evaluation.sfd_report(run.primary, proxy, test_sets[test_env],
                                            train_env=train_env, mode=mode)
                reports.append(rep.to_dict())
        path = ws.path("reports", f"sfd_{mode}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(reports, fh, sort_keys=True, indent=1)
        ws.record(f"report:sfd:{mode}", path)
        vals = [r["sfd"] for r in reports if r["sfd"] is not None]
        print(f"sfd[{mode}]: {len(reports)} cells, "
              f"range [{min(vals):.3f}, {max(vals):.3f}]" if vals else
              f"sfd[{mode}]: all splits degenerate")
    ws.save_manifest("sfd", time.monotonic() - t0)


def cmd_bon(ws: Workspace) -> None:
    """Best-of-N curves for every net over i.i.d. and o.o.d. pools."""
    t0 = time.monotonic()
    family, specs = ws.config.build_family()
    env_order = [s.env_id for s in specs]
    bon_modes = [m for m in BON_MODES if m in ws.config.modes]
    cmd_train(ws, modes=bon_modes)

    nets = {(mode, e): _load_run(ws, _run_key(mode, e)).primary
            for mode in bon_modes for e in env_order}

    rows = []
    curves_by_pool_env = {}
    for pool_env in env_order:
        pools = bestofn.make_pools(
            family, ws.config.n_pools, m=ws.config.pool_size,
            seed=derive_seed(ws.config.master_seed, f"pools:{pool_env}"),
            env_id=pool_env)
        names = []
        for (mode, train_env), network in sorted(nets.items()):
            name = f"{mode}/{train_env}"
            names.append(name)
            for pool in pools:
                bestofn.score_pool(pool, network, name)
        curves = bestofn.bon_curve(names, pools, ws.config.n_grid)
        curves_by_pool_env[pool_env] = curves
        for name, curve in sorted(curves.items()):
            mode, train_env = name.split("/")
            for n, score in curve.points:
                rows.append({"mode": mode, "train_env": train_env,
                             "pool_env": pool_env, "n": n, "score": score})
        svg_path = ws.path("reports", f"bon_{pool_env}.svg")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(svg.line_chart_svg(
                {name: curve.points for name, curve in curves.items()},
                f"best-of-N on env {pool_env} pools", "N", "judge score"))
        ws.record(f"report:bon-svg:{pool_env}", svg_path)

    csv_path = ws.path("reports", "bon_curves.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("mode,train_env,pool_env,n,score\n")
        for r in rows:
            fh.write(f"{r['mode']},{r['train_env']},{r['pool_env']},"
                     f"{r['n']},{r['score']!r}\n")
    ws.record("report:bon-curves", csv_path)

    n_max = max(ws.config.n_grid)
    summary = {"n_max": n_max, "ood_best_at_n_max": {}}
    for mode in bon_modes:
        vals = [r["score"] for r in rows
                if r["mode"] == mode and r["n"] == n_max
                and r["train_env"] != r["pool_env"]]
        summary["ood_best_at_n_max"][mode] = sum(vals) / len(vals) if vals else None
    path = ws.path("reports", "bon_summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    ws.record("report:bon-summary", path)
    print(f"bon: ood best-of-{n_max} " +
          " ".join(f"{m}={v:.3f}" for m, v in summary["ood_best_at_n_max"].items()
                   if v is not None))
    ws.save_manifest("bon", time.monotonic() - t0)


def _default_family_checks(summary, sfd_docs, bon_summary, env_order):
    """The directional claims the default pipeline is expected to satisfy."""
    checks = []

    def check(name, ok):
        checks.append({"name": name, "passed": bool(ok)})

    text = summary.get("text_only")
    if text:
        check("text_only mean i.i.d. >= 0.85", text["mean_iid"] >= 0.85)
        check("text_only mean o.o.d. <= 0.60", text["mean_ood"] <= 0.60)
        matrix = evaluation.GenMatrix(**{k: text["matrix"][k]
                                         for k in ("mode", "envs", "acc")})
        if "B" in env_order and "C" in env_order:
            check("text_only B->C <= 0.55", matrix.cell("B", "C") <= 0.55)

    std, sa = summary.get("standard"), summary.get("shortcut_aware")
    if std and sa:
        check("shortcut_aware o.o.d. mean >= standard + 0.05",
              sa["mean_ood"] >= std["mean_ood"] + 0.05)
        check("shortcut_aware i.i.d. mean >= standard - 0.03",
              sa["mean_iid"] >= std["mean_iid"] - 0.03)
        check("gap(standard) > gap(shortcut_aware)", std["gap"] > sa["gap"])
    for mode, docs in sfd_docs.items():
        missing = [d for d in docs if d["sfd"] is None]
        check(f"sfd[{mode}] splits nondegenerate", not missing)
    if "standard" in sfd_docs:
        std_cells = {(d["train_env"], d["test_env"]): d["sfd"]
                     for d in sfd_docs["standard"] if d["sfd"] is not None}
        check("standard sfd > 0 on every o.o.d. cell",
              std_cells and all(v > 0 for v in std_cells.values()))
        if ("B", "C") in std_cells:
            check("standard sfd B->C >= 0.15", std_cells[("B", "C")] >= 0.15)
        if "shortcut_aware" in sfd_docs:
            sa_cells = {(d["train_env"], d["test_env"]): d["sfd"]
                        for d in sfd_docs["shortcut_aware"] if d["sfd"] is not None}
            check("shortcut_aware sfd < standard sfd in every cell",
                  sa_cells.keys() == std_cells.keys()
                  and all(sa_cells[k] < std_cells[k] for k in std_cells))
    if bon_summary:
        best = bon_summary["ood_best_at_n_max"]
        if best.get("standard") is not None and best.get("shortcut_aware") is not None:
            check(f"best-of-{bon_summary['n_max']} shortcut_aware >= standard (o.o.d.)",
                  best["shortcut_aware"] >= best["standard"])
    return checks


def cmd_report(ws: Workspace) -> int:
    """Aggregate all artifacts, run the assertion suite, emit the report."""
    t0 = time.monotonic()
    missing = []
    for key in sorted(ws.manifest["artifacts"]):
        try:
            ws.artifact_path(key)
        except MissingArtifactError as exc:
            missing.append(f"{key}: {exc}")

    _, specs = ws.config.build_family()
    env_order = [s.env_id for s in specs]

    summary = {}
    try:
        with open(ws.artifact_path("report:matrix-summary"), encoding="utf-8") as fh:
            summary = json.load(fh)
    except MissingArtifactError as exc:
        missing.append(str(exc))
    sfd_docs = {}
    for mode in SFD_MODES:
        key = f"report:sfd:{mode}"
        if key in ws.manifest["artifacts"]:
            try:
                with open(ws.artifact_path(key), encoding="utf-8") as fh:
                    sfd_docs[mode] = json.load(fh)
            except MissingArtifactError as exc:
                missing.append(str(exc))
    bon_summary = None
    if "report:bon-summary" in ws.manifest["artifacts"]:
        try:
            with open(ws.artifact_path("report:bon-summary"), encoding="utf-8") as fh:
                bon_summary = json.load(fh)
        except MissingArtifactError as exc:
            missing.append(str(exc))

    checks = _default_family_checks(summary, sfd_docs, bon_summary, env_order)
    failed = [c["name"] for c in checks if not c["passed"]]
    ok = not failed and not missing

    report = {
        "config_hash": ws.config.config_hash(),
        "envs": env_order,
        "matrix_summary": summary,
        "sfd": sfd_docs,
        "bon_summary": bon_summary,
        "checks": checks,
        "missing_artifacts": missing,
        "passed": ok,
    }
    path = ws.path("reports", "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    ws.record("report:final", path)

    lines = [f"lab report (config {report['config_hash'][:12]})", ""]
    for mode in sorted(summary):
        s = summary[mode]
        lines.append(f"{mode:>15}: i.i.d. {s['mean_iid']:.4f}  "
                     f"o.o.d. {s['mean_ood']:.4f}  gap {s['gap']:.4f}")
    for mode, docs in sorted(sfd_docs.items()):
        vals = [d["sfd"] for d in docs if d["sfd"] is not None]
        if vals:
            lines.append(f"{mode:>15}: sfd range [{min(vals):.4f}, {max(vals):.4f}]")
    if bon_summary:
        for mode, val in sorted(bon_summary["ood_best_at_n_max"].items()):
            if val is not None:
                lines.append(f"{mode:>15}: o.o.d. best-of-{bon_summary['n_max']} "
                             f"{val:.4f}")
    lines.append("")
    for c in checks:
        lines.append(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}")
    for m in missing:
        lines.append(f"[FAIL] missing artifact: {m}")
    lines.append("")
    lines.append("RESULT: " + ("PASS" if ok else "FAIL"))
    text = "\n".join(lines) + "\n"
    summary_path = ws.path("reports", "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    ws.record("report:summary", summary_path)
    ws.save_manifest("report", time.monotonic() - t0)
    print(text, end="")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmlab",
        description="shortcut-learning lab for multimodal reward models")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, doc in [("gen", "generate environment datasets"),
                      ("train", "train models for the requested modes"),
                      ("matrix", "cross-distribution accuracy matrices"),
                      ("sfd", "shortcut-failure degradation reports"),
                      ("bon", "best-of-N curves"),
                      ("report", "consolidated report and assertion suite")]:
        p = sub.add_parser(verb, help=doc)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory (env LAB_OUT wins)")
        p.add_argument("--mode", help="comma-separated mode list override")
        p.add_argument("--subsample", type=float, action="append",
                       help="extra train-subsample fraction (repeatable)")
        p.add_argument("--jobs", type=int, help="parallel training jobs")
    return parser


def load_config(args) -> ExperimentConfig:
    config = (ExperimentConfig.from_file(args.config) if args.config
              else ExperimentConfig())
    if args.seed is not None:
        config.master_seed = args.seed
    if args.out:
        config.out_dir = args.out
    env_out = os.environ.get("LAB_OUT")
    if env_out:
        config.out_dir = env_out
    if args.mode:
        modes = [m.strip() for m in args.mode.split(",") if m.strip()]
        for m in modes:
            if m not in DEFAULT_MODES:
                raise ConfigError(f"unknown mode {m!r}")
        config.modes = modes
    if args.subsample:
        config.subsample_fractions = sorted(set(config.subsample_fractions)
                                            | set(args.subsample))
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config.jobs = args.jobs
    return config


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "matrix": cmd_matrix,
    "sfd": cmd_sfd,
    "bon": cmd_bon,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        with OutputLock(config.out_dir):
            ws = Workspace(config)
            if args.verb == "report":
                return cmd_report(ws)
            COMMANDS[args.verb](ws)
            return 0
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
