"""Command-line driver: channel generation, training, BER sweeps, comparison.

Subcommands::

    dnhb gen-channels --config exp.json --out results/
    dnhb train        --config exp.json --methods dnhb_full
    dnhb sweep        --config exp.json --channels results/channels.json
    dnhb run          --config exp.json --jobs 4
    dnhb compare      results/ber_dnhb_full.csv results/ber_omp_hybrid.csv

Flags override keys of the JSON config file, which override built-in
defaults. Exit status is 0 on success, 2 for configuration or usage errors
and 3 for failures during computation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .autoencoder import TrainConfig, build_model, load_model, save_model, train_with_restarts
from .baselines import full_digital_bd, omp_hybrid_transceiver, transceiver_to_dict
from .channel import (
    ChannelFileError,
    ConfigError,
    GeometryParams,
    SystemConfig,
    generate_channel_set,
    load_channel_set,
    save_channel_set,
)
from .modulation import constellation
from .numerics import Rng
from .simulation import (
    BerCurve,
    curve_from_counts,
    read_curves_csv,
    snr_at_ber,
    snr_gap,
    sweep_realization,
    write_curves_csv,
)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "ChannelSettings",
    "ModelSettings",
    "SweepSettings",
    "parse_config",
    "config_from_dict",
    "parse_snr_grid",
    "cmd_gen_channels",
    "cmd_train",
    "cmd_run",
    "cmd_compare",
    "comparison_table",
    "main",
]

log = logging.getLogger("dnhb")

METHODS = ("dnhb_full", "dnhb_partial", "bd_full_digital", "omp_hybrid")
DNHB_TOPOLOGY = {"dnhb_full": "fully_connected", "dnhb_partial": "partially_connected"}
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ExperimentError(RuntimeError):
    """A failure during computation, tagged with the stage it happened in."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class ChannelSettings:
    n_clusters: int = 2
    n_rays: int = 2
    angular_spread_deg: float = 10.0
    realizations: int = 4

    def geometry(self) -> GeometryParams:
        return GeometryParams(self.n_clusters, self.n_rays, math.radians(self.angular_spread_deg))


@dataclass(frozen=True)
class ModelSettings:
    mode: str = "nonlinear"
    tx_layers: int = 2
    rx_layers: int = 2
    restarts: int = 3
    warmup_epochs: int = 5


@dataclass(frozen=True)
class SweepSettings:
    snr_db: tuple[float, ...] = ()
    bits_per_point: int = 200_000


DEFAULT_SNR_GRID = "-10:2.5:20"

# The library default step (1e-3) leaves the desk-scale network short of its
# error floor within the epoch budget; experiments start from a larger step.
EXPERIMENT_LEARNING_RATE = 1e-2


def _experiment_training() -> TrainConfig:
    return TrainConfig(learning_rate=EXPERIMENT_LEARNING_RATE)


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    training: TrainConfig = field(default_factory=_experiment_training)
    model: ModelSettings = field(default_factory=ModelSettings)
    constellation: str = "qpsk"
    sweep: SweepSettings = field(default_factory=lambda: SweepSettings(parse_snr_grid(DEFAULT_SNR_GRID)))
    methods: tuple[str, ...] = METHODS
    output_dir: str = "results"
    seed: int = 0
    jobs: int = 1

    def to_dict(self) -> dict:
        train = self.training.to_dict()
        train.pop("seed")
        return {
            "system": self.system.to_dict(),
            "channel": asdict(self.channel),
            "training": train,
            "model": asdict(self.model),
            "constellation": self.constellation,
            "sweep": {"snr_db": list(self.sweep.snr_db), "bits_per_point": self.sweep.bits_per_point},
            "methods": list(self.methods),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "jobs": self.jobs,
        }


def parse_snr_grid(text: str) -> tuple[float, ...]:
    """``"START:STEP:END"`` with END included (up to rounding)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"SNR grid {text!r} must look like START:STEP:END")
    try:
        start, step, end = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"SNR grid {text!r} has a non-numeric part") from None
    if not step > 0 or end < start:
        raise ConfigError(f"SNR grid {text!r} needs STEP > 0 and END >= START")
    n = int(math.floor((end - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


def _check_type(value, default, path):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return float(value) if isinstance(default, float) else value


def _section(doc, path: str, template, skip=()):
    """Merge ``doc`` into the dataclass instance ``template``, checking keys and types."""
    if doc is None:
        return template
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    names = [f.name for f in fields(template) if f.name not in skip]
    values = {}
    for key, value in doc.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key (allowed: {', '.join(names)})")
        default = getattr(template, key)
        if isinstance(default, tuple):
            if not isinstance(value, (list, int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected a number or a list")
            values[key] = value
        else:
            values[key] = _check_type(value, default, f"{path}.{key}")
    try:
        return replace(template, **values)
    except (ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _sweep_section(doc, path: str) -> SweepSettings:
    base = SweepSettings(parse_snr_grid(DEFAULT_SNR_GRID))
    if doc is None:
        return base
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(doc) - {"snr_db", "bits_per_point"}
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key (allowed: snr_db, bits_per_point)")
    grid = base.snr_db
    if "snr_db" in doc:
        raw = doc["snr_db"]
        if isinstance(raw, str):
            grid = parse_snr_grid(raw)
        elif isinstance(raw, list) and raw and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
        ):
            grid = tuple(float(v) for v in raw)
        else:
            raise ConfigError(f"{path}.snr_db: expected a non-empty list of numbers or \"START:STEP:END\"")
    bits = _check_type(doc.get("bits_per_point", base.bits_per_point), 0, f"{path}.bits_per_point")
    return SweepSettings(grid, bits)


TOP_KEYS = ("system", "channel", "training", "model", "constellation", "sweep", "methods", "output_dir", "seed", "jobs")


def config_from_dict(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validated config from a parsed document, with flag ``overrides`` applied on top."""
    if not isinstance(doc, dict):
        raise ConfigError("$: config must be a JSON object")
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(f"$.{key}: unknown key (allowed: {', '.join(TOP_KEYS)})")
    d = ExperimentConfig()
    system = _section(doc.get("system"), "$.system", d.system)
    channel = _section(doc.get("channel"), "$.channel", d.channel)
    training = _section(doc.get("training"), "$.training", d.training, skip=("seed",))
    model = _section(doc.get("model"), "$.model", d.model)
    sweep = _sweep_section(doc.get("sweep"), "$.sweep")
    methods = doc.get("methods", list(d.methods))
    if not isinstance(methods, list) or not all(isinstance(m, str) for m in methods):
        raise ConfigError("$.methods: expected a list of method names")
    cfg = ExperimentConfig(
        system=system,
        channel=channel,
        training=training,
        model=model,
        constellation=_check_type(doc.get("constellation", d.constellation), "", "$.constellation"),
        sweep=sweep,
        methods=tuple(methods),
        output_dir=_check_type(doc.get("output_dir", d.output_dir), "", "$.output_dir"),
        seed=_check_type(doc.get("seed", d.seed), 0, "$.seed"),
        jobs=_check_type(doc.get("jobs", d.jobs), 0, "$.jobs"),
    )
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "snr":
            cfg = replace(cfg, sweep=replace(cfg.sweep, snr_db=parse_snr_grid(value)))
        elif key == "methods":
            cfg = replace(cfg, methods=tuple(m.strip() for m in value.split(",") if m.strip()))
        elif key == "out":
            cfg = replace(cfg, output_dir=value)
        else:
            cfg = replace(cfg, **{key: value})
    training_doc = doc.get("training") or {}
    if "train_snr_db" not in training_doc:
        # one model serves the whole curve: train over the sweep range
        grid = cfg.sweep.snr_db
        snr = grid[0] if len(grid) == 1 else (min(grid), max(grid))
        cfg = replace(cfg, training=replace(cfg.training, train_snr_db=snr))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Check every precondition of the requested methods before any compute."""
    s = cfg.system
    if not cfg.methods:
        raise ConfigError("$.methods: at least one method is required")
    for m in cfg.methods:
        if m not in METHODS:
            raise ConfigError(f"$.methods: unknown method {m!r} (allowed: {', '.join(METHODS)})")
    if len(set(cfg.methods)) != len(cfg.methods):
        raise ConfigError("$.methods: duplicate method")
    try:
        spec = constellation(cfg.constellation)
    except ValueError as exc:
        raise ConfigError(f"$.constellation: {exc}") from None
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"$.seed: must be an unsigned 64-bit integer, got {cfg.seed}")
    if cfg.jobs < 1:
        raise ConfigError(f"$.jobs: must be >= 1, got {cfg.jobs}")
    if cfg.channel.realizations < 1:
        raise ConfigError("$.channel.realizations: must be >= 1")
    if not cfg.sweep.snr_db:
        raise ConfigError("$.sweep.snr_db: empty SNR grid")
    per_vector = spec.bits_per_symbol * s.total_streams
    if cfg.sweep.bits_per_point < per_vector:
        raise ConfigError(f"$.sweep.bits_per_point: needs at least {per_vector} bits (one symbol vector)")
    if {"bd_full_digital", "omp_hybrid"} & set(cfg.methods) and s.n_t < s.k_users * s.n_r:
        raise ConfigError(
            f"$.system: block diagonalization needs n_t >= K*n_r ({s.n_t} < {s.k_users * s.n_r})"
        )
    if "omp_hybrid" in cfg.methods:
        paths = cfg.channel.n_clusters * cfg.channel.n_rays
        if s.n_rf_t > s.k_users * paths:
            raise ConfigError(f"$.system.n_rf_t: OMP dictionary has only {s.k_users * paths} transmit atoms")
        if s.n_rf_r > paths:
            raise ConfigError(f"$.system.n_rf_r: OMP dictionary has only {paths} receive atoms")
    if "dnhb_partial" in cfg.methods and (s.n_t % s.n_rf_t or s.n_r % s.n_rf_r):
        raise ConfigError("$.system: partially connected topology needs n_t % n_rf_t == 0 and n_r % n_rf_r == 0")
    m = cfg.model
    if m.mode not in ("linear", "nonlinear"):
        raise ConfigError(f"$.model.mode: expected 'linear' or 'nonlinear', got {m.mode!r}")
    if m.tx_layers < 1 or m.rx_layers < 1:
        raise ConfigError("$.model: tx_layers and rx_layers must be >= 1")
    if m.restarts < 1:
        raise ConfigError("$.model.restarts: must be >= 1")
    if not 1 <= m.warmup_epochs <= cfg.training.epochs:
        raise ConfigError("$.model.warmup_epochs: must lie in [1, training.epochs]")


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({}, overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc, overrides)


# -- transceiver factories (picklable, for worker processes) ---------------------------


@dataclass(frozen=True)
class DnhbFactory:
    method: str
    training: TrainConfig
    model: ModelSettings
    constellation: str
    checkpoint_dir: str
    reuse_dir: str | None = None

    def __call__(self, realization, rng: Rng):
        name = f"{self.method}_r{realization.realization_id:03d}.json"
        if self.reuse_dir is not None and (Path(self.reuse_dir) / name).exists():
            model, _ = load_model(Path(self.reuse_dir) / name)
            if model.cfg != realization.cfg:
                raise ConfigError(f"checkpoint {name} was trained for a different system config")
            return model
        m, topology = self.model, DNHB_TOPOLOGY[self.method]

        def builder(r):
            return build_model(realization.cfg, r, topology, m.mode, m.tx_layers, m.rx_layers)

        report = train_with_restarts(
            builder, realization, self.training, constellation(self.constellation), rng,
            restarts=m.restarts, warmup_epochs=m.warmup_epochs,
        )
        log.info("%s realization %d: final loss %.4g", self.method, realization.realization_id, report.final_loss)
        save_model(Path(self.checkpoint_dir) / name, report.model, rng.seed, report.final_loss)
        return report.model


@dataclass(frozen=True)
class BaselineFactory:
    method: str
    checkpoint_dir: str

    def __call__(self, realization, rng: Rng):
        if self.method == "bd_full_digital":
            design = full_digital_bd(realization, equalize=True)
            solution = design
        else:
            design = omp_hybrid_transceiver(realization)
            solution = design.at_noise(realization.cfg.noise_variance)
        path = Path(self.checkpoint_dir) / f"{self.method}_r{realization.realization_id:03d}.json"
        _write_json(path, transceiver_to_dict(solution))
        return design


def _factory(cfg: ExperimentConfig, method: str, checkpoint_dir: Path, reuse_dir=None):
    if method in DNHB_TOPOLOGY:
        return DnhbFactory(method, cfg.training, cfg.model, cfg.constellation, str(checkpoint_dir),
                           None if reuse_dir is None else str(reuse_dir))
    return BaselineFactory(method, str(checkpoint_dir))


# -- seeds and files -------------------------------------------------------------------
#
# master = Rng(seed); channel set from master.child(0); method METHODS[m]
# draws from master.child(1 + m), realization i from its child(i).


def _method_rng(cfg: ExperimentConfig, method: str) -> Rng:
    return Rng(cfg.seed).child(1 + METHODS.index(method))


def _write_json(path: Path, doc: dict) -> None:
    tmp = Path(f"{path}.tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    os.replace(tmp, path)


def _prepare_output(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ExperimentError("output", OSError(f"{out} is not writable: {exc.strerror}")) from None
    return out


def _channels(cfg: ExperimentConfig, out: Path, channels_path=None):
    if channels_path is not None:
        try:
            realizations, _ = load_channel_set(channels_path)
        except (OSError, ChannelFileError) as exc:
            raise ExperimentError("channels", exc) from None
        if realizations[0].cfg != cfg.system:
            raise ConfigError(f"{channels_path}: channel set was generated for a different system config")
        return realizations
    realizations = generate_channel_set(cfg.system, cfg.channel.geometry(), cfg.channel.realizations, Rng(cfg.seed).child(0))
    save_channel_set(out / "channels.json", realizations, cfg.seed)
    return realizations


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- commands --------------------------------------------------------------------------


def cmd_gen_channels(cfg: ExperimentConfig) -> Path:
    out = _prepare_output(cfg)
    _channels(cfg, out)
    log.info("wrote %s", out / "channels.json")
    return out / "channels.json"


def cmd_train(cfg: ExperimentConfig, channels_path=None) -> list[Path]:
    """Train and checkpoint every requested DNHB method on every realization."""
    out = _prepare_output(cfg)
    realizations = _channels(cfg, out, channels_path)
    written = []
    for method in cfg.methods:
        if method not in DNHB_TOPOLOGY:
            log.info("skipping %s: nothing to train", method)
            continue
        factory = _factory(cfg, method, out / "checkpoints")
        base = _method_rng(cfg, method)
        for i, r in enumerate(realizations):
            try:
                factory(r, Rng(base.child(i).seed).child(0))
            except Exception as exc:
                raise ExperimentError(f"training {method} on realization {r.realization_id}", exc) from exc
            written.append(out / "checkpoints" / f"{method}_r{r.realization_id:03d}.json")
    _write_json(out / "train_manifest.json", {
        "version": __version__,
        "config": cfg.to_dict(),
        "checkpoints": [p.name for p in written],
    })
    return written


def _sweep_all(cfg: ExperimentConfig, realizations, out: Path, reuse_dir=None) -> list[BerCurve]:
    spec = constellation(cfg.constellation)
    grid = list(cfg.sweep.snr_db)
    tasks = []
    for method in cfg.methods:
        factory = _factory(cfg, method, out / "checkpoints", reuse_dir)
        base = _method_rng(cfg, method)
        for i, r in enumerate(realizations):
            tasks.append((method, (factory, r, grid, cfg.sweep.bits_per_point, spec, base.child(i).seed)))
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(sweep_realization, *args) for _, args in tasks]
            results = [f.result() for f in futures]
    else:
        results = []
        for method, args in tasks:
            log.info("%s: realization %d", method, args[1].realization_id)
            results.append(sweep_realization(*args))
    curves = []
    for method in cfg.methods:
        counts = [res for (m, _), res in zip(tasks, results) if m == method]
        curves.append(curve_from_counts(method, grid, counts, _method_rng(cfg, method).seed))
    return curves


def cmd_run(cfg: ExperimentConfig, channels_path=None, reuse_dir=None, compare: bool = True) -> dict:
    """Full experiment: channels, per-realization designs, sweeps, CSVs, manifest.

    Returns the manifest. The manifest's ``status`` stays ``"running"`` (or
    becomes ``"failed"``) unless every stage finishes, so partial outputs
    are recognisable.
    """
    out = _prepare_output(cfg)
    manifest = {
        "version": __version__,
        "status": "running",
        "snr_definition": "P / sigma^2 (total transmit power over per-antenna noise variance)",
        "config": cfg.to_dict(),
        "files": {},
    }
    _write_json(out / "manifest.json", manifest)
    stage = "channels"
    try:
        realizations = _channels(cfg, out, channels_path)
        stage = "sweep"
        curves = _sweep_all(cfg, realizations, out, reuse_dir)
        stage = "export"
        for c in curves:
            path = out / f"ber_{c.method}.csv"
            write_curves_csv(path, [c])
            manifest["files"][path.name] = _sha256(path)
        if compare and len(curves) > 1:
            table = comparison_table(curves)
            (out / "comparison.txt").write_text(table)
            print(table, end="")
    except ConfigError:
        manifest["status"] = "failed"
        _write_json(out / "manifest.json", manifest)
        raise
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{stage}: {exc}"
        _write_json(out / "manifest.json", manifest)
        raise ExperimentError(stage, exc) from exc
    manifest["status"] = "complete"
    _write_json(out / "manifest.json", manifest)
    return manifest


def _common_grid(curves: Sequence[BerCurve]) -> list[float]:
    keys = [set(round(s, 9) for s in c.snr_db) for c in curves]
    return sorted(set.intersection(*keys))


def _restrict(c: BerCurve, grid: Sequence[float]) -> BerCurve:
    keep = [i for i, s in enumerate(c.snr_db) if round(s, 9) in set(grid)]
    return BerCurve(c.method, [c.snr_db[i] for i in keep], [c.errors[i] for i in keep],
                    [c.bits[i] for i in keep], c.realizations, c.seed)


def comparison_table(curves: Sequence[BerCurve], reference: str | None = None, target: float = 1e-2) -> str:
    """Per-SNR BER table plus each method's SNR gap to ``reference`` at ``target``.

    A positive gap means the method reaches the target BER at a lower SNR
    than the reference.
    """
    if len(curves) < 2:
        raise ConfigError("comparison needs at least two curves")
    grid = _common_grid(curves)
    if not grid:
        raise ConfigError("curves have disjoint SNR grids")
    curves = [_restrict(c, grid) for c in curves]
    names = [c.method for c in curves]
    if reference is None:
        reference = names[0]
    if reference not in names:
        raise ConfigError(f"reference method {reference!r} not among {', '.join(names)}")
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["snr_db".rjust(8) + "".join(n.rjust(width) for n in names)]
    for j, snr in enumerate(grid):
        lines.append(f"{snr:8.2f}" + "".join(f"{c.ber[j]:{width}.3e}" for c in curves))
    lines.append("")
    lines.append(f"SNR at BER {target:g} (log-linear interpolation):")
    for c in curves:
        x = snr_at_ber(c.snr_db, c.ber, target)
        lines.append(f"  {c.method}: " + ("not reached on grid" if x is None else f"{x:.2f} dB"))
    ref = curves[names.index(reference)]
    lines.append(f"gap relative to {reference} (positive = fewer dB needed):")
    for c in curves:
        if c is ref:
            continue
        gap = snr_gap(ref, c, target)
        if gap.kind == "exact":
            lines.append(f"  {c.method}: {gap.db:+.2f} dB")
        elif gap.kind == "lower_bound":
            lines.append(f"  {c.method}: >= {gap.db:+.2f} dB ({reference} does not reach {target:g} on the grid)")
        else:
            lines.append(f"  {c.method}: undefined")
    return "\n".join(lines) + "\n"


def cmd_compare(paths: Sequence, reference: str | None = None, target: float = 1e-2) -> str:
    if len(paths) < 2:
        raise ConfigError("compare needs at least two curve files")
    curves = []
    for p in paths:
        try:
            curves.extend(read_curves_csv(p))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return comparison_table(curves, reference, target)


# -- entry point -----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed")
    p.add_argument("--jobs", type=int, metavar="N", help="parallel (realization, method) jobs")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--methods", metavar="LIST", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--snr", metavar="START:STEP:END", help="SNR grid in dB, e.g. --snr=-10:2.5:20")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnhb", description="Hybrid beamforming autoencoder simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    quiet = argparse.ArgumentParser(add_help=False)
    quiet.add_argument("-q", "--quiet", action="store_true", help="only print warnings and results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", parents=[quiet], help="generate and save a channel set")
    _add_common(p)
    p = sub.add_parser("train", parents=[quiet], help="train DNHB models and write checkpoints")
    _add_common(p)
    p.add_argument("--channels", metavar="PATH", help="existing channel-set file")
    p = sub.add_parser("sweep", parents=[quiet], help="BER sweep on an existing channel set")
    _add_common(p)
    p.add_argument("--channels", metavar="PATH", required=True, help="channel-set file")
    p.add_argument("--checkpoints", metavar="DIR", help="reuse DNHB checkpoints found here")
    p = sub.add_parser("run", parents=[quiet], help="generate, train, sweep and compare")
    _add_common(p)
    p = sub.add_parser("compare", parents=[quiet], help="tabulate curves and SNR gaps")
    p.add_argument("curves", nargs="+", metavar="CSV")
    p.add_argument("--reference", help="method the gaps are measured against (default: first)")
    p.add_argument("--target", type=float, default=1e-2, help="reference BER (default 1e-2)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "compare":
            if len(args.curves) < 2:
                parser.error("compare needs at least two curve files")
            print(cmd_compare(args.curves, args.reference, args.target), end="")
            return EXIT_OK
        overrides = {"seed": args.seed, "jobs": args.jobs, "out": args.out, "methods": args.methods, "snr": args.snr}
        cfg = parse_config(args.config, overrides)
        log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
        if args.command == "gen-channels":
            cmd_gen_channels(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.channels)
        elif args.command == "sweep":
            cmd_run(cfg, args.channels, args.checkpoints, compare=False)
        else:
            cmd_run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
