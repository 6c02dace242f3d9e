"""Command-line front end: ``rxninfer {enumerate,simulate,run,report}``.

Exit codes: 0 success, 1 validation error, 2 runtime failure. The only
environment input is ``RXNINFER_OUTPUT_DIR``, which overrides the output
directory of ``run``, ``simulate`` and ``report``.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .bayes import Dataset, Posterior
from .io import (
    BUNDLED,
    SpecError,
    bundled_path,
    load_network,
    read_dataset_csv,
    sha256_file,
    write_csv,
    write_dataset_csv,
)
from .kinetics import ForwardModel, IntegrationError, IntegratorConfig
from .network import (
    ClusterCapExceeded,
    ModelIndicator,
    ReactionNetwork,
    enumerate_clusters,
    pathway_class,
    pathway_rules,
    validate_network,
)
from .postprocess import build_report
from .sampler import SamplerConfig, Trace, read_trace, run_chain, slot_name, write_trace

log = logging.getLogger("rxninfer")

OUTPUT_ENV = "RXNINFER_OUTPUT_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ConfigError(SpecError):
    """Run configuration problem; the message names the offending field."""


# -- datasets ----------------------------------------------------------------------


def parse_params(net: ReactionNetwork, doc: Mapping | None) -> dict[tuple[int, str], float]:
    """``{"k3f": 0.5}`` style overrides to ``{(3, "f"): 0.5}``."""
    names = {slot_name((r.id, d)): (r.id, d) for r in net.reactions for d in r.directions}
    out = {}
    for name, value in (doc or {}).items():
        if name not in names:
            raise ConfigError(f"synthesis.params: unknown rate constant {name!r}")
        out[names[name]] = float(value)
    return out


def simulate_dataset(
    net: ReactionNetwork,
    model: ModelIndicator,
    params: Mapping[tuple[int, str], float],
    times: Sequence[float],
    noise_variance: float,
    seed: int,
    path: str | Path | None = None,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """G(model, params)(times) plus N(0, noise_variance) noise; written as a
    dataset CSV when ``path`` is given."""
    if noise_variance < 0:
        raise ValueError("noise_variance must be non-negative")
    times = np.asarray(times, dtype=float)
    base = {(r.id, d): v for r in net.reactions for d, v in zip(r.directions, (r.log10_k, r.log10_k_reverse))}
    base.update(params)
    fm = ForwardModel(net, times, cfg)
    pred = fm.predict(net.model_reactions(model), base)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(noise_variance), pred.size) if noise_variance > 0 else np.zeros(pred.size)
    obs = pred + noise
    if path is not None:
        write_dataset_csv(path, times, obs, net.observed)
    return times, obs


# -- run configuration ----------------------------------------------------------------------


@dataclass
class RunConfig:
    network: str
    base_dir: Path
    sampler: SamplerConfig
    integrator: IntegratorConfig
    output_dir: str
    replicates: int = 1
    workers: int | None = None
    dataset: dict | None = None
    synthesis: dict | None = None
    pathways: list = field(default_factory=list)
    enumeration_cap: int = 20

    def resolve(self, p: str) -> str:
        if p in BUNDLED or Path(p).is_absolute():
            return p
        local = self.base_dir / p
        if local.exists():
            return str(local)
        bundled = bundled_path(p)
        return str(bundled) if bundled.exists() else str(local)

    def load_network(self) -> ReactionNetwork:
        return load_network(self.resolve(self.network))

    def load_dataset(self, net: ReactionNetwork) -> Dataset:
        if self.dataset is not None:
            times, obs, names = read_dataset_csv(self.resolve(self.dataset["path"]))
            if tuple(names) != net.observed:
                raise ConfigError(f"dataset.path: columns {names} do not match observed species {list(net.observed)}")
            return Dataset(times, obs, float(self.dataset["noise_variance"]))
        s = self.synthesis
        model = _model_from_doc(net, s.get("model"), "synthesis.model")
        times, obs = simulate_dataset(
            net, model, parse_params(net, s.get("params")), _times(s["times"]), float(s["noise_variance"]),
            int(s.get("seed", 0)), cfg=self.integrator,
        )
        return Dataset(times, obs, float(s["noise_variance"]))

    def materialized(self) -> dict:
        """Every setting, defaults included, as plain data."""
        sampler = dataclasses.asdict(self.sampler)
        sampler["variant"] = self.sampler.variant.value
        return {
            "network": self.network,
            "dataset": self.dataset,
            "synthesis": self.synthesis,
            "sampler": sampler,
            "integrator": dataclasses.asdict(self.integrator),
            "replicates": self.replicates,
            "pathways": self.pathways,
            "enumeration_cap": self.enumeration_cap,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.materialized(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _times(doc) -> np.ndarray:
    if isinstance(doc, Mapping):
        try:
            return np.linspace(float(doc["start"]), float(doc["stop"]), int(doc["count"]))
        except KeyError as exc:
            raise ConfigError(f"times: missing {exc.args[0]!r} (need start, stop, count)") from None
    return np.asarray([float(t) for t in doc], dtype=float)


def _model_from_doc(net: ReactionNetwork, doc, where: str) -> ModelIndicator:
    n = len(net.uncertain_ids)
    if doc is None or doc == "full":
        return ModelIndicator.full(n)
    if isinstance(doc, str):
        try:
            m = ModelIndicator.from_bits(doc)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if len(m) != n:
            raise ConfigError(f"{where}: expected {n} bits, got {len(m)}")
        return m
    ids = [int(x) for x in doc]
    unknown = set(ids) - set(net.reaction_ids)
    if unknown:
        raise ConfigError(f"{where}: unknown reaction ids {sorted(unknown)}")
    return net.model_from_reactions(ids)


_SAMPLER_FIELDS = {f.name for f in dataclasses.fields(SamplerConfig)}
_INTEGRATOR_FIELDS = {f.name for f in dataclasses.fields(IntegratorConfig)}


def run_config_from_dict(doc: Mapping, base_dir: Path = Path("."), overrides: Mapping | None = None) -> RunConfig:
    """Validate a run-config document. ``overrides`` (from CLI flags) only
    fill fields the document leaves unset."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config: expected a mapping at top level")
    doc = dict(doc)
    overrides = dict(overrides or {})
    for key in ("output_dir", "replicates", "workers"):
        if overrides.get(key) is not None and key not in doc:
            doc[key] = overrides[key]
    sampler_doc = dict(doc.get("sampler") or {})
    for key, value in (overrides.get("sampler") or {}).items():
        if value is not None:
            sampler_doc.setdefault(key, value)

    if "network" not in doc:
        raise ConfigError("network: required")
    has_data, has_syn = doc.get("dataset") is not None, doc.get("synthesis") is not None
    if has_data == has_syn:
        raise ConfigError("dataset/synthesis: exactly one of the two must be given")
    if has_data:
        d = doc["dataset"]
        if not isinstance(d, Mapping) or "path" not in d:
            raise ConfigError("dataset.path: required")
        if not float(d.get("noise_variance", 0)) > 0:
            raise ConfigError("dataset.noise_variance: must be positive")
    else:
        s = doc["synthesis"]
        for key in ("times", "noise_variance"):
            if key not in s:
                raise ConfigError(f"synthesis.{key}: required")
        if not float(s["noise_variance"]) > 0:
            raise ConfigError("synthesis.noise_variance: must be positive for inference")

    unknown = set(sampler_doc) - _SAMPLER_FIELDS
    if unknown:
        raise ConfigError(f"sampler: unknown fields {sorted(unknown)}")
    try:
        sampler = SamplerConfig(**sampler_doc)
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from None
    integ_doc = dict(doc.get("integrator") or {})
    unknown = set(integ_doc) - _INTEGRATOR_FIELDS
    if unknown:
        raise ConfigError(f"integrator: unknown fields {sorted(unknown)}")
    try:
        integrator = IntegratorConfig(**integ_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from None

    replicates = int(doc.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates: must be at least 1")
    workers = doc.get("workers")
    if workers is not None and int(workers) < 1:
        raise ConfigError("workers: must be at least 1")
    cfg = RunConfig(
        network=str(doc["network"]),
        base_dir=Path(base_dir),
        sampler=sampler,
        integrator=integrator,
        output_dir=str(doc.get("output_dir", "rxninfer-output")),
        replicates=replicates,
        workers=None if workers is None else int(workers),
        dataset=dict(doc["dataset"]) if has_data else None,
        synthesis=dict(doc["synthesis"]) if has_syn else None,
        pathways=list(doc.get("pathways") or []),
        enumeration_cap=int(doc.get("enumeration_cap", 20)),
    )
    _validate_against_network(cfg)
    return cfg


def _validate_against_network(cfg: RunConfig) -> None:
    try:
        net = cfg.load_network()
    except FileNotFoundError:
        raise ConfigError(f"network: file not found: {cfg.network}") from None
    problems = validate_network(net)
    if problems:
        raise ConfigError("network: " + "; ".join(problems))
    ids = set(net.reaction_ids)
    for i, p in enumerate(cfg.pathways):
        for key in ("requires", "excludes_any"):
            bad = {int(x) for x in p.get(key, ())} - ids
            if bad:
                raise ConfigError(f"pathways[{i}].{key}: unknown reaction ids {sorted(bad)}")
    if cfg.synthesis is not None:
        _model_from_doc(net, cfg.synthesis.get("model"), "synthesis.model")
        parse_params(net, cfg.synthesis.get("params"))


def load_run_config(path: str | Path, overrides: Mapping | None = None) -> RunConfig:
    p = str(path)
    if p in ("example1", "example2"):
        path = bundled_path(f"{p}_run.yaml")
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    return run_config_from_dict(doc, path.parent, overrides)


def output_dir(default: str | Path) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or default)


# -- replicate execution --------------------------------------------------------------------------


def _run_replicate(cfg: RunConfig, index: int, out: Path) -> dict:
    t0 = time.perf_counter()
    net = cfg.load_network()
    data = cfg.load_dataset(net)
    post = Posterior(net, data, cfg.integrator)
    scfg = dataclasses.replace(cfg.sampler, chain_index=index)
    trace = run_chain(post, scfg)
    trace_path = out / f"trace_{index:03d}.csv"
    snap_path = out / f"snapshots_{index:03d}.csv"
    write_trace(trace, trace_path, snap_path if scfg.snapshot_every else None)
    files = [trace_path.name] + ([snap_path.name] if scfg.snapshot_every else [])
    return {
        "index": index,
        "seed": scfg.seed,
        "chain_index": index,
        "status": "ok",
        "files": files,
        "wall_time_s": time.perf_counter() - t0,
        "acceptance": trace.counters,
    }


def _replicate_job(args) -> dict:
    cfg, index, out = args
    try:
        return _run_replicate(cfg, index, out)
    except Exception as exc:  # reported per replicate; completed traces stay on disk
        return {"index": index, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _versions() -> dict:
    import numba
    import scipy

    out = {"rxninfer": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "numba": numba.__version__}
    try:
        from importlib.metadata import version

        out["numbalsoda"] = version("numbalsoda")
    except Exception:
        pass
    return out


def run(cfg: RunConfig) -> tuple[Path, dict]:
    out = output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    jobs = [(cfg, i, out) for i in range(cfg.replicates)]
    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1 or cfg.replicates == 1:
        results = [_replicate_job(j) for j in jobs]
    else:
        with cf.ProcessPoolExecutor(max_workers=min(workers, cfg.replicates)) as pool:
            results = list(pool.map(_replicate_job, jobs))
    results.sort(key=lambda r: r["index"])
    files = {}
    for r in results:
        for name in r.get("files", ()):
            files[name] = sha256_file(out / name)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.materialized(), sort_keys=True))
    files["config.yaml"] = sha256_file(out / "config.yaml")
    manifest = {
        "config_hash": cfg.config_hash(),
        "config": cfg.materialized(),
        "base_dir": str(cfg.base_dir.resolve()),
        "seeds": [{"seed": cfg.sampler.seed, "chain_index": i} for i in range(cfg.replicates)],
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "replicates": results,
        "files": files,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out, manifest


def report(run_dir: Path, out: Path | None = None, burn_in: int | None = None) -> dict:
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    conf = manifest["config"]
    net = _load_network_from_manifest(manifest, run_dir)
    uncertain = net.uncertain_ids
    traces: list[Trace] = []
    for r in manifest["replicates"]:
        if r.get("status") != "ok":
            continue
        trace_file = run_dir / r["files"][0]
        if sha256_file(trace_file) != manifest["files"].get(trace_file.name):
            raise ConfigError(f"{trace_file.name}: content hash does not match the manifest")
        traces.append(read_trace(trace_file, uncertain))
    if not traces:
        raise ConfigError("report: no completed traces in the run directory")
    burn = int(conf["sampler"]["burn_in"] if burn_in is None else burn_in)
    try:
        clusters = enumerate_clusters(net, cap=int(conf.get("enumeration_cap", 20)))
    except ClusterCapExceeded:
        clusters = None
    rules = pathway_rules(conf.get("pathways") or [])
    doc = build_report(traces, burn, net, clusters, rules)
    doc["meta"] = {"config_hash": manifest["config_hash"], "burn_in": burn, "replicates": len(traces)}
    out = out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.yaml", "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    write_csv(
        out / "model_probs.csv",
        ["model_bits", "pathway", "raw", "derandomized"],
        ([b, pathway_class(net, ModelIndicator.from_bits(b), rules), v["raw"], v["derandomized"]]
         for b, v in doc["model_probs"].items()),
    )
    write_csv(out / "feature_probs.csv", ["feature", "raw", "derandomized"],
              ([k, v["raw"], v["derandomized"]] for k, v in doc["feature_probs"].items()))
    write_csv(out / "ess.csv", ["replicate", "statistic", "ess", "degenerate"],
              ([e["replicate"], e["statistic"], e["ess"], e["degenerate"]] for e in doc["ess"]))
    write_csv(out / "acceptance.csv", ["replicate", "move", "accepted", "attempted", "rate"],
              ([a["replicate"], a["move"], a["accepted"], a["attempted"], a["rate"]] for a in doc["acceptance"]))
    if doc["variances"]:
        header = list(doc["variances"][0])
        write_csv(out / "variances.csv", header, ([v[h] for h in header] for v in doc["variances"]))
    return doc


def _load_network_from_manifest(manifest: dict, run_dir: Path) -> ReactionNetwork:
    name = manifest["config"]["network"]
    base = Path(manifest.get("base_dir", "."))
    for candidate in (name, str(base / name), str(bundled_path(name))):
        if candidate in BUNDLED or Path(candidate).exists():
            return load_network(candidate)
    raise ConfigError(f"network: cannot locate {name!r} referenced by the manifest")


# -- argument parsing --------------------------------------------------------------------------


def _cmd_enumerate(args) -> int:
    net = load_network(args.network)
    problems = validate_network(net)
    if problems:
        raise ConfigError("network: " + "; ".join(problems))
    clusters = enumerate_clusters(net, cap=args.cap)
    non_empty = {k: v for k, v in clusters.items() if len(k)}
    n_models = sum(len(v) for v in clusters.values())
    if args.json:
        doc = {
            "n_models": n_models,
            "n_clusters": len(non_empty),
            "clusters": [{"en": k.label, "n_models": len(v)} for k, v in clusters.items()],
        }
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    print(f"{len(non_empty)} effective networks over {n_models} models")
    for key, members in clusters.items():
        tag = "" if len(key) else "  (no reaction reaches an observable)"
        print(f"  {len(members):6d} models  EN {{{', '.join(map(str, key)) }}}{tag}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.config:
        cfg = load_run_config(args.config)
        net = cfg.load_network()
        if cfg.synthesis is None:
            raise ConfigError("synthesis: the config has no synthesis block")
        s = cfg.synthesis
        times, model = _times(s["times"]), _model_from_doc(net, s.get("model"), "synthesis.model")
        params, var, seed = parse_params(net, s.get("params")), float(s["noise_variance"]), int(s.get("seed", 0))
        integ = cfg.integrator
    else:
        if not (args.network and args.times and args.noise_variance is not None):
            raise ConfigError("simulate: give --config, or NETWORK with --times and --noise-variance")
        net = load_network(args.network)
        times = _times(json.loads(args.times) if args.times.strip().startswith(("[", "{")) else
                       [float(x) for x in args.times.split(",")])
        model = _model_from_doc(net, args.model, "--model")
        params, var, seed, integ = {}, float(args.noise_variance), int(args.seed), IntegratorConfig()
    out = Path(args.out)
    if os.environ.get(OUTPUT_ENV) and not out.is_absolute():
        out = output_dir(".") / out
    out.parent.mkdir(parents=True, exist_ok=True)
    simulate_dataset(net, model, params, times, var, seed, out, integ)
    print(f"wrote {out} ({len(times)} times x {len(net.observed)} observed species)")
    return EXIT_OK


def _cmd_run(args) -> int:
    sampler_over = {"n_steps": args.n_steps, "variant": args.variant, "seed": args.seed, "burn_in": args.burn_in}
    overrides = {"output_dir": args.output_dir, "replicates": args.replicates, "workers": args.workers,
                 "sampler": sampler_over}
    cfg = load_run_config(args.config, overrides)
    out, manifest = run(cfg)
    failed = [r for r in manifest["replicates"] if r["status"] != "ok"]
    for r in manifest["replicates"]:
        if r["status"] == "ok":
            between = {k: v for k, v in r["acceptance"].items() if k != "within"}
            att = sum(v["attempted"] for v in between.values())
            acc = sum(v["accepted"] for v in between.values())
            print(f"replicate {r['index']}: {r['wall_time_s']:.1f}s, between-model acceptance {acc}/{att}")
        else:
            print(f"replicate {r['index']}: FAILED {r['error']}", file=sys.stderr)
    print(f"outputs in {out}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    out = Path(os.environ[OUTPUT_ENV]) if os.environ.get(OUTPUT_ENV) else (Path(args.out) if args.out else None)
    doc = report(run_dir, out, args.burn_in)
    top = sorted(doc["model_probs"].items(), key=lambda kv: -(kv[1]["derandomized"] or kv[1]["raw"]))[:8]
    print("model        raw      derandomized")
    for bits, v in top:
        d = "-" if v["derandomized"] is None else f"{v['derandomized']:.4f}"
        print(f"{bits:<12} {v['raw']:.4f}   {d}")
    print(f"report written to {out or run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rxninfer", description="Bayesian inference of reaction network structure")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enumerate", help="partition all models into effective-network clusters")
    e.add_argument("network", help="network YAML, or example1/example2")
    e.add_argument("--cap", type=int, default=20, help="largest number of uncertain reactions to enumerate")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=_cmd_enumerate)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("network", nargs="?")
    s.add_argument("--config", help="run config with a synthesis block")
    s.add_argument("--times", help="comma list, JSON list, or JSON {start, stop, count}")
    s.add_argument("--noise-variance", type=float)
    s.add_argument("--model", default=None, help="model bits (default: full model)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    r = sub.add_parser("run", help="run sampler replicates from a config")
    r.add_argument("config", help="run config YAML, or example1/example2")
    r.add_argument("--output-dir")
    r.add_argument("--replicates", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--n-steps", type=int)
    r.add_argument("--burn-in", type=int)
    r.add_argument("--variant", choices=["NuA", "NA", "SensNuA", "SensNA"])
    r.add_argument("--seed", type=int)
    r.set_defaults(func=_cmd_run)

    q = sub.add_parser("report", help="summarise the traces of a run directory")
    q.add_argument("run_dir")
    q.add_argument("--out")
    q.add_argument("--burn-in", type=int)
    q.set_defaults(func=_cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, ClusterCapExceeded, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
