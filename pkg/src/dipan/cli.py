"""Command-line harness: degrade, run, transfer, theory, gen-scene, export-png.

Experiments are described by a flat UTF-8 ``key=value`` file whose keys
carry a section prefix, e.g.::

    scene.source = synthetic
    scene.size = 128
    run.methods = EXP,cs_intensity,DiCNN1
    train.iterations = 20000

Every key can also be given on the command line as ``--set key=value``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import architectures as arch
from . import classical, fileio, metrics, nn, resample, synthetic, theory
from .raster import MSImage, PanImage, Role

log = logging.getLogger("dipan")

CLASSICAL = ("cs_intensity", "mra_atwt", "mra_glp")
ALL_METHODS = ("EXP",) + CLASSICAL + arch.KINDS
TRAINING_COLUMNS = ("method", "iterations", "initial_loss", "final_loss", "train_seconds")
TRANSFER_COLUMNS = metrics.CSV_COLUMNS + ("train_seconds", "iterations")

# plain SGD on raw [0, 1] inputs needs small initial weights to tolerate a
# step size that makes progress within a desk-scale budget
DESK_TRAIN = nn.TrainConfig(learning_rate=1e-3, init_scale=0.01)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scene_source: str = "synthetic"
    scene_size: int = 128
    scene_bands: int = 4
    scene_seed: int = 7
    scene_hrms: str | None = None
    scene_pan: str | None = None
    wald: resample.WaldConfig = field(default_factory=resample.WaldConfig)
    methods: tuple = ALL_METHODS
    train: nn.TrainConfig = DESK_TRAIN
    kernels: tuple = arch.DEFAULT_KERNELS
    channels: tuple = arch.DESK_CHANNELS
    output: str = "dipan_out"
    seed: int = 0
    timing: str = "wall"
    png_bands: tuple = (0, 1, 2)
    remove_bands: tuple = ()
    checkpoint: str | None = None
    budget_ratio: int = 30
    source_iterations: int | None = None  # None: train.iterations
    n_init_zero: int = 10_000
    n_init_loss: int = 200
    corpus_size: int = 10
    negative_control: bool = False

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {', '.join(ALL_METHODS)}")
        if self.scene_source not in ("synthetic", "files"):
            raise ConfigError(f"scene.source must be synthetic or files, not {self.scene_source!r}")
        if self.scene_source == "files" and not (self.scene_hrms and self.scene_pan):
            raise ConfigError("scene.source=files needs scene.hrms and scene.pan")
        if self.timing not in ("wall", "off"):
            raise ConfigError("run.timing must be wall or off")
        if self.budget_ratio < 1:
            raise ConfigError("transfer.budget_ratio must be >= 1")
        self.train = replace(self.train, seed=self.seed)

    @property
    def arch_kwargs(self) -> dict:
        return {"kernels": self.kernels, "channels": self.channels}


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.lower() in ("", "none") else int(text)


def _opt_float(text: str):
    return None if text.lower() in ("", "none") else float(text)


# config key -> (target, attribute, parser); target None is ExperimentConfig
_KEYS = {
    "scene.source": (None, "scene_source", str),
    "scene.size": (None, "scene_size", int),
    "scene.bands": (None, "scene_bands", int),
    "scene.seed": (None, "scene_seed", int),
    "scene.hrms": (None, "scene_hrms", str),
    "scene.pan": (None, "scene_pan", str),
    "wald.ratio": ("wald", "ratio", int),
    "wald.gaussian_nyquist_gain": ("wald", "gaussian_nyquist_gain", float),
    "wald.pan_nyquist_gain": ("wald", "pan_nyquist_gain", _opt_float),
    "wald.interpolation": ("wald", "interpolation", str),
    "run.methods": (None, "methods", lambda s: tuple(m.strip() for m in s.split(",") if m.strip())),
    "run.output": (None, "output", str),
    "run.seed": (None, "seed", int),
    "run.timing": (None, "timing", str),
    "run.png_bands": (None, "png_bands", _ints),
    "train.learning_rate": ("train", "learning_rate", float),
    "train.iterations": ("train", "iterations", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.patch_size": ("train", "patch_size", int),
    "train.stride": ("train", "stride", int),
    "train.init": ("train", "init", str),
    "train.init_scale": ("train", "init_scale", _opt_float),
    "train.init_mean": ("train", "init_mean", float),
    "arch.kernels": (None, "kernels", _ints),
    "arch.channels": (None, "channels", _ints),
    "transfer.remove_bands": (None, "remove_bands", _ints),
    "transfer.checkpoint": (None, "checkpoint", str),
    "transfer.budget_ratio": (None, "budget_ratio", int),
    "transfer.source_iterations": (None, "source_iterations", _opt_int),
    "theory.n_init_zero": (None, "n_init_zero", int),
    "theory.n_init_loss": (None, "n_init_loss", int),
    "theory.corpus_size": (None, "corpus_size", int),
    "theory.negative_control": (None, "negative_control", _bool),
}


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment line."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} has no '=': {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        pairs[key] = value
    return pairs


def build_config(pairs: dict) -> ExperimentConfig:
    top, wald, train = {}, {}, {}
    groups = {None: top, "wald": wald, "train": train}
    for key, value in pairs.items():
        target, attr, parse = _KEYS[key]
        try:
            groups[target][attr] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    try:
        return ExperimentConfig(
            wald=resample.WaldConfig(**wald),
            train=replace(DESK_TRAIN, **train),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | None, overrides=()) -> ExperimentConfig:
    pairs = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    for item in overrides:
        pairs.update(parse_config_text(item))
    return build_config(pairs)


def config_lines(cfg: ExperimentConfig) -> list[str]:
    """The resolved configuration in file syntax, for the run record."""
    objs = {None: cfg, "wald": cfg.wald, "train": cfg.train}
    lines = []
    for key, (target, attr, _) in _KEYS.items():
        value = getattr(objs[target], attr)
        if isinstance(value, tuple):
            value = ",".join(map(str, value))
        lines.append(f"{key} = {'' if value is None else value}")
    return lines


# scene handling ------------------------------------------------------------

def load_scene(cfg: ExperimentConfig) -> tuple[MSImage, PanImage]:
    if cfg.scene_source == "synthetic":
        return synthetic.gen_synthetic_scene(synthetic.SyntheticSceneConfig(
            height=cfg.scene_size, width=cfg.scene_size, bands=cfg.scene_bands, seed=cfg.scene_seed))
    hrms = fileio.read_raster(cfg.scene_hrms)
    pan = fileio.read_raster(cfg.scene_pan)
    if not isinstance(hrms, MSImage) or not isinstance(pan, PanImage):
        raise ConfigError("scene.hrms must be a multiband raster and scene.pan a single-band PAN")
    return hrms, pan


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else v


def _png_bands(cfg: ExperimentConfig, n_bands: int) -> tuple:
    if all(b < n_bands for b in cfg.png_bands):
        return cfg.png_bands
    return tuple(min(b, n_bands - 1) for b in range(3))


@dataclass
class MethodOutcome:
    method: str
    fused: MSImage | None = None
    report: metrics.QualityReport | None = None
    details: np.ndarray | None = None
    training: tuple | None = None
    losses: list | None = None
    model: arch.Model | None = None
    error: str | None = None


def _patches(cfg: ExperimentConfig, lrms, pan, ref) -> nn.PatchBatch:
    return nn.extract_patches(lrms, pan, ref, cfg.train.patch_size, cfg.train.stride, seed=cfg.seed)


def run_method(method: str, cfg: ExperimentConfig, lrms: MSImage, pan: PanImage, ref: MSImage,
               patches: nn.PatchBatch | None = None) -> MethodOutcome:
    """Fuse, time and evaluate one method; training comes first for CNNs."""
    out = MethodOutcome(method)
    if method == "EXP":
        # no fusion step: the interpolated LRMS is the output
        out.fused = lrms.with_role(Role.HRMS_PRED)
        out.report = metrics.evaluate(out.fused, ref, cfg.wald.ratio, elapsed_seconds=0.0)
        return out
    if method in CLASSICAL:
        start = time.perf_counter()
        out.fused = classical.pansharpen(lrms, pan, classical.DetailExtractorSpec(method), cfg.wald)
        elapsed = time.perf_counter() - start
        out.details = out.fused.data - lrms.data
    else:
        spec = arch.ArchSpec(method, lrms.n_bands, **cfg.arch_kwargs)
        model = arch.build(spec, cfg.train)
        if patches is None:
            patches = _patches(cfg, lrms, pan, ref)
        result = arch.train(model, patches, cfg.train)
        out.model = result.model
        out.losses = result.losses
        initial = result.losses[0] if result.losses else arch.dataset_loss(model, patches)
        out.training = (method, cfg.train.iterations, initial, arch.dataset_loss(result.model, patches),
                        result.seconds)
        start = time.perf_counter()
        out.fused = arch.predict(result.model, lrms, pan)
        elapsed = time.perf_counter() - start
        if result.model.has_skip:
            out.details = arch.predict_details(result.model, lrms, pan)
    out.report = metrics.evaluate(out.fused, ref, cfg.wald.ratio, elapsed_seconds=elapsed)
    return out


def cmd_run(cfg: ExperimentConfig) -> int:
    """Reduced-resolution benchmark; returns the process exit code."""
    outdir = Path(cfg.output)
    for sub in ("fused", "details", "png", "models", "losses"):
        (outdir / sub).mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text("\n".join(config_lines(cfg)) + "\n", encoding="utf-8")
    hrms, pan = load_scene(cfg)
    lrms, pan_low, ref = resample.wald_degrade(hrms, pan, cfg.wald)
    bands = _png_bands(cfg, ref.n_bands)
    fileio.export_png(ref, outdir / "png" / "reference.png", bands)
    patches = None
    if any(m in arch.KINDS for m in cfg.methods):
        patches = _patches(cfg, lrms, pan_low, ref)
    rows, training_rows, errors = [], [], []
    for method in cfg.methods:
        log.info("running %s", method)
        try:
            res = run_method(method, cfg, lrms, pan_low, ref, patches)
            fileio.write_raster(res.fused, outdir / "fused" / f"{method}.hdr")
            fileio.export_png(res.fused, outdir / "png" / f"{method}.png", bands)
            if res.details is not None:
                fileio.write_raster(MSImage(res.details, Role.HRMS_PRED), outdir / "details" / f"{method}.hdr")
            if res.model is not None:
                arch.save_model(res.model, outdir / "models" / f"{method}.ckpt")
                _write_csv(outdir / "losses" / f"{method}.csv", ("iteration", "loss"), enumerate(res.losses))
                training_rows.append(_timed(res.training, cfg, -1))
        except Exception as exc:  # one method's failure must not abort the run
            log.error("%s failed: %s", method, exc)
            errors.append((method, type(exc).__name__, str(exc)))
            continue
        rows.append(_timed(res.report.as_row(method), cfg, -1))
    _write_csv(outdir / "results.csv", metrics.CSV_COLUMNS, rows)
    _write_csv(outdir / "training.csv", TRAINING_COLUMNS, training_rows)
    _write_csv(outdir / "errors.csv", ("method", "error", "message"), errors)
    for row in rows:
        log.info("%s", ", ".join(str(_fmt(v)) for v in row))
    return 0 if len(rows) == len(cfg.methods) else 1


def _timed(row, cfg: ExperimentConfig, col: int) -> list:
    """Blank the wall-clock column when ``run.timing = off``."""
    row = list(row)
    if cfg.timing == "off":
        row[col] = None
    return row


# degrade / scene / png -------------------------------------------------------

def cmd_degrade(hrms_path, pan_path, outdir, wald: resample.WaldConfig) -> tuple[Path, Path, Path]:
    hrms = fileio.read_raster(hrms_path)
    pan = fileio.read_raster(pan_path)
    if not isinstance(pan, PanImage) or not isinstance(hrms, MSImage):
        raise ConfigError("expected a multiband HRMS raster and a single-band PAN raster")
    lrms, pan_low, ref = resample.wald_degrade(hrms, pan, wald)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in (("lrms_interp", lrms), ("pan_low", pan_low), ("reference", ref)):
        paths.append(fileio.write_raster(img, outdir / f"{name}.hdr")[0])
    return tuple(paths)


def cmd_gen_scene(cfg: synthetic.SyntheticSceneConfig, outdir) -> tuple[Path, Path]:
    hrms, pan = synthetic.gen_synthetic_scene(cfg)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return (fileio.write_raster(hrms, outdir / "hrms.hdr")[0],
            fileio.write_raster(pan, outdir / "pan.hdr")[0])


def cmd_export_png(header_path, png_path, bands=(0, 1, 2)) -> Path:
    img = fileio.read_raster(header_path)
    if isinstance(img, PanImage):
        img = MSImage(img.data[None], Role.HRMS_REF)
        bands = (0, 0, 0)
    return fileio.export_png(img, png_path, bands)


# transfer --------------------------------------------------------------------

def _remaining_bands(n_bands: int, removed) -> list[int]:
    removed = set(removed)
    if not removed:
        raise ConfigError("transfer.remove_bands is empty: there is nothing to transfer")
    bad = [b for b in removed if not 0 <= b < n_bands]
    if bad:
        raise ConfigError(f"bands {bad} do not exist in a {n_bands}-band scene")
    keep = [b for b in range(n_bands) if b not in removed]
    if not keep:
        raise ConfigError("removing every band leaves nothing to fuse")
    return keep


@dataclass
class TransferOutcome:
    kept_bands: list
    tune_iterations: int
    start_loss: float  # adapted model before fine-tuning, over all patches
    end_loss: float
    tune_seconds: float
    scratch_seconds: dict = field(default_factory=dict)
    source_seconds: float | None = None
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    losses: dict = field(default_factory=dict)
    source: arch.Model | None = None

    @property
    def loss_reduced(self) -> bool:
        return self.end_loss < self.start_loss


def run_transfer(cfg: ExperimentConfig) -> TransferOutcome:
    """DiCNN2 last-layer fine-tune versus from-scratch training on fewer bands."""
    hrms, pan = load_scene(cfg)
    keep = _remaining_bands(hrms.n_bands, cfg.remove_bands)
    lrms, pan_low, ref = resample.wald_degrade(hrms, pan, cfg.wald)

    if cfg.checkpoint:
        source = arch.load_model(cfg.checkpoint)
        if source.spec.kind != "DiCNN2":
            raise ConfigError(f"checkpoint holds a {source.spec.kind}, transfer needs DiCNN2")
        if source.spec.n_bands != hrms.n_bands:
            raise ConfigError(f"checkpoint has {source.spec.n_bands} bands, scene has {hrms.n_bands}")
        source_seconds = None
    else:
        spec = arch.ArchSpec("DiCNN2", hrms.n_bands, **cfg.arch_kwargs)
        iters = cfg.source_iterations or cfg.train.iterations
        res = arch.train(arch.build(spec, cfg.train), _patches(cfg, lrms, pan_low, ref), cfg.train,
                         iterations=iters)
        source, source_seconds = res.model, res.seconds

    lrms_s, ref_s = (img.select_bands(keep) for img in (lrms, ref))
    patches = _patches(cfg, lrms_s, pan_low, ref_s)
    tune_iters = max(1, cfg.train.iterations // cfg.budget_ratio)
    frozen_start = arch.fine_tune_last_layer(source, patches, cfg.train, iterations=0).model
    tuned = arch.fine_tune_last_layer(source, patches, cfg.train, iterations=tune_iters)
    out = TransferOutcome(keep, tune_iters, arch.dataset_loss(frozen_start, patches),
                          arch.dataset_loss(tuned.model, patches), tuned.seconds,
                          source_seconds=source_seconds)
    out.losses["DiCNN2_finetune"] = tuned.losses
    out.source = source
    start = time.perf_counter()
    fused = arch.predict(tuned.model, lrms_s, pan_low)
    report = metrics.evaluate(fused, ref_s, cfg.wald.ratio, elapsed_seconds=time.perf_counter() - start)
    out.rows.append(report.as_row("DiCNN2_finetune") + [tuned.seconds, tune_iters])
    for kind in ("PNN", "DRPNN", "DiCNN1"):
        if kind not in cfg.methods:
            continue
        try:
            res = run_method(kind, cfg, lrms_s, pan_low, ref_s, patches)
        except Exception as exc:  # report and keep going, as in cmd_run
            out.errors.append((kind, type(exc).__name__, str(exc)))
            continue
        out.scratch_seconds[kind] = res.training[-1]
        out.losses[kind] = res.losses
        out.rows.append(res.report.as_row(kind) + [res.training[-1], cfg.train.iterations])
    return out


def cmd_transfer(cfg: ExperimentConfig) -> int:
    """Run the transfer experiment and write transfer.csv, transfer.txt and loss curves."""
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    res = run_transfer(cfg)
    if res.source_seconds is not None:
        arch.save_model(res.source, outdir / "DiCNN2_source.ckpt")
    for name, losses in res.losses.items():
        _write_csv(outdir / f"loss_{name}.csv", ("iteration", "loss"), enumerate(losses))
    rows = [list(r) for r in res.rows]
    if cfg.timing == "off":
        for row in rows:
            row[5] = row[6] = None
    _write_csv(outdir / "transfer.csv", TRANSFER_COLUMNS, rows)
    _write_csv(outdir / "errors.csv", ("method", "error", "message"), res.errors)
    summary = [f"kept bands {res.kept_bands}",
               f"fine-tune: {res.tune_iterations} iterations, dataset loss "
               f"{res.start_loss:.6g} -> {res.end_loss:.6g}"]
    if cfg.timing == "wall":
        summary.append(f"fine-tune seconds: {res.tune_seconds:.2f}")
        summary += [f"{k} from scratch seconds: {v:.2f}" for k, v in res.scratch_seconds.items()]
        if res.source_seconds is not None:
            summary.append(f"source DiCNN2 trained in {res.source_seconds:.1f} s")
    (outdir / "transfer.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    return 0 if not res.errors else 1


# theory ------------------------------------------------------------------------

def cmd_theory(cfg: ExperimentConfig) -> tuple[int, list]:
    """Run the four analysis checks; writes theory.csv and theory.txt."""
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []

    corpus = synthetic.synthetic_corpus(cfg.corpus_size, bands=cfg.scene_bands)
    trace_ok = True
    for i, (hrms, pan) in enumerate(corpus):
        lrms, _, ref = resample.wald_degrade(hrms, pan, cfg.wald)
        ts = theory.trace_stats(lrms, ref, dataset=f"synthetic-{i}")
        trace_ok &= ts.inequality_holds
        rows.append(("trace", ts.dataset, ts.t1, ts.t2, ts.inequality_holds))

    hrms, pan = synthetic.gen_synthetic_scene(synthetic.SyntheticSceneConfig(
        height=16, width=16, bands=cfg.scene_bands, seed=cfg.scene_seed))
    spec = arch.ArchSpec("PNN", cfg.scene_bands, **cfg.arch_kwargs)
    x = np.concatenate([hrms.data, pan.data[None]]).transpose(1, 2, 0)
    y = hrms.data.transpose(1, 2, 0)
    mean = 0.05 if cfg.negative_control else 0.0
    mc = theory.expectation_zero_check(spec, x, y, cfg.n_init_zero, nn.TrainConfig(), init_mean=mean)
    rows.append(("zero_expectation", f"init_mean={mean}", mc.estimate, mc.bound, mc.passed))

    hrms, pan = load_scene(cfg)
    lrms, pan_low, ref = resample.wald_degrade(hrms, pan, cfg.wald)
    size = cfg.train.patch_size
    patches = nn.extract_patches(lrms, pan_low, ref, size, size, seed=None)
    summary = theory.initial_loss_compare(patches, hrms.n_bands, cfg.n_init_loss, **cfg.arch_kwargs)
    for kind in summary.kinds:
        rows.append(("initial_loss", kind, summary.mean(kind), summary.sem(kind), ""))
    order_ok = summary.ordering_holds()
    rows.append(("initial_loss_ordering", "4-sigma", min(
        summary.separation(d, p) for d in ("DiCNN1", "DiCNN2") for p in ("PNN", "DRPNN")), "", order_ok))
    rows.append(("pathway_energy_gap", "DiCNN2 vs DiCNN1", summary.energy_gap(), "", ""))

    sens_ok = True
    for kind in arch.KINDS:
        sc = theory.sensitivity_form_check(kind, n_bands=cfg.scene_bands)
        sens_ok &= sc.passed
        rows.append(("sensitivity", kind, float(sc.delta_bit_exact), sc.max_grad_error, sc.passed))

    checks = [("trace inequality", trace_ok), ("zero expectation", mc.passed),
              ("initial-loss ordering", order_ok), ("sensitivity forms", sens_ok)]
    _write_csv(outdir / "theory.csv", ("check", "case", "value", "bound_or_error", "passed"), rows)
    text = [f"{name}: {'PASS' if ok else 'FAIL'}" for name, ok in checks]
    text += ["", "published trace values (documentation only):"]
    text += [f"  {name}: t1={t1} t2={t2}" for name, (t1, t2) in theory.PUBLISHED_TRACES.items()]
    (outdir / "theory.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    return (0 if all(ok for _, ok in checks) else 1), checks


# argument parsing ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dipan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key=value experiment file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--output", help="output directory (run.output)")
        sp.add_argument("--seed", type=int, help="run seed (run.seed)")
        sp.add_argument("--methods", help="comma-separated methods (run.methods)")
        sp.add_argument("--iterations", type=int, help="training iterations (train.iterations)")
        return sp

    with_config(sub.add_parser("run", help="reduced-resolution benchmark"))
    tr = with_config(sub.add_parser("transfer", help="DiCNN2 band-change fine-tune experiment"))
    tr.add_argument("--remove-bands", help="comma-separated band indices to drop")
    tr.add_argument("--checkpoint", help="trained DiCNN2 checkpoint header")
    th = with_config(sub.add_parser("theory", help="verify the initialization analysis"))
    th.add_argument("--negative-control", action="store_true", help="bias the init mean")

    dg = sub.add_parser("degrade", help="Wald degradation of an HRMS/PAN pair")
    dg.add_argument("hrms")
    dg.add_argument("pan")
    dg.add_argument("outdir")
    dg.add_argument("--ratio", type=int, default=4)
    dg.add_argument("--nyquist-gain", type=float, default=0.3)
    dg.add_argument("--interpolation", default="exp_poly", choices=("exp_poly", "bicubic"))

    gs = sub.add_parser("gen-scene", help="write a synthetic HRMS/PAN pair")
    gs.add_argument("outdir")
    gs.add_argument("--size", type=int, default=128)
    gs.add_argument("--bands", type=int, default=4)
    gs.add_argument("--seed", type=int, default=7)

    ep = sub.add_parser("export-png", help="RGB composite of a raster")
    ep.add_argument("header")
    ep.add_argument("png")
    ep.add_argument("--bands", default="0,1,2")
    return p


def _experiment(args) -> ExperimentConfig:
    overrides = list(args.set)
    for flag, key in (("output", "run.output"), ("seed", "run.seed"), ("methods", "run.methods"),
                      ("iterations", "train.iterations"), ("remove_bands", "transfer.remove_bands"),
                      ("checkpoint", "transfer.checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "negative_control", False):
        overrides.append("theory.negative_control=true")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(_experiment(args))
        if args.command == "transfer":
            return cmd_transfer(_experiment(args))
        if args.command == "theory":
            code, checks = cmd_theory(_experiment(args))
            for name, ok in checks:
                print(f"{name}: {'PASS' if ok else 'FAIL'}")
            return code
        if args.command == "degrade":
            wald = resample.WaldConfig(args.ratio, args.nyquist_gain, args.interpolation)
            for path in cmd_degrade(args.hrms, args.pan, args.outdir, wald):
                print(path)
            return 0
        if args.command == "gen-scene":
            cfg = synthetic.SyntheticSceneConfig(height=args.size, width=args.size,
                                                 bands=args.bands, seed=args.seed)
            for path in cmd_gen_scene(cfg, args.outdir):
                print(path)
            return 0
        if args.command == "export-png":
            print(cmd_export_png(args.header, args.png, _ints(args.bands)))
            return 0
    except (ConfigError, fileio.RasterFormatError, OSError, ValueError) as exc:
        print(f"dipan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
