"""Stage orchestration shared by the CLI and the acceptance suite.

Each run_* function reads/writes only the formats owned by the io module
and returns its in-memory artifacts so callers can chain stages without
re-reading from disk.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import analysis, autogeolabel, perturb, rasterizer, regressor, report, synthcity, vae
from .autodiff import Tensor, check_gradient
from .config import RunConfig
from .errors import UsageError
from .io import load_model, read_manifest, save_model
from .rasterizer import NormStats, RasterStack, load_stack

MODEL_DIR = "models"
CORPUS_DIR = "corpus"
CF_DIR = "counterfactuals"


def _path(out_dir, *parts):
    path = os.path.join(out_dir, *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def write_run_manifest(cfg: RunConfig, out_dir: str) -> None:
    with open(_path(out_dir, "run_config.txt"), "w") as fh:
        fh.write(cfg.resolved_text())


def run_synth(cfg: RunConfig, out_dir: str) -> synthcity.CorpusResult:
    corpus_dir = os.path.join(out_dir, CORPUS_DIR)
    os.makedirs(corpus_dir, exist_ok=True)
    return synthcity.generate_corpus(
        cfg["synth.n_scenes"], cfg.scene_params(), cfg.temperature_law(),
        cfg["seed"], corpus_dir,
    )


def load_split(out_dir: str, which: str):
    """Read one split manifest; returns (ids, stacks, temps)."""
    corpus_dir = os.path.join(out_dir, CORPUS_DIR)
    manifest = read_manifest(os.path.join(corpus_dir, f"{which}.csv"))
    ids, stacks, temps = [], [], []
    for sid, rpath, temp in manifest.entries:
        ids.append(sid)
        stacks.append(load_stack(os.path.join(corpus_dir, rpath)))
        temps.append(temp)
    return ids, stacks, np.array(temps)


def run_train_vae(cfg: RunConfig, out_dir: str, train_stacks=None):
    """Compute norm stats on the training split, train, persist both."""
    if train_stacks is None:
        _, train_stacks, _ = load_split(out_dir, "train")
    norm = rasterizer.compute_norm_stats(train_stacks)
    normalized = [rasterizer.normalize(s, norm) for s in train_stacks]
    model, history = vae.train_vae(normalized, cfg.vae_config())
    save_model(rasterizer.norm_stats_tensors(norm), _path(out_dir, MODEL_DIR, "norm.lczm"))
    save_model(vae.vae_tensors(model), _path(out_dir, MODEL_DIR, "vae.lczm"))
    vcfg = cfg.vae_config()
    with open(_path(out_dir, MODEL_DIR, "vae_config.txt"), "w") as fh:
        for key in ("latent_dim", "hidden", "arch", "epochs", "lr", "batch_size", "seed"):
            fh.write(f"{key}={getattr(vcfg, key)}\n")
        fh.write(f"ramp_epochs={vcfg.schedule.ramp_epochs}\n")
        fh.write(f"lambda_max={vcfg.schedule.lambda_max}\n")
        fh.write("optimizer=adam\n")
    return model, norm, history


def load_models(out_dir: str):
    norm = rasterizer.norm_stats_from_tensors(load_model(os.path.join(out_dir, MODEL_DIR, "norm.lczm")))
    vae_model = vae.vae_from_tensors(load_model(os.path.join(out_dir, MODEL_DIR, "vae.lczm")))
    reg_path = os.path.join(out_dir, MODEL_DIR, "reg.lczm")
    reg_model = regressor.regressor_from_tensors(load_model(reg_path)) if os.path.exists(reg_path) else None
    return vae_model, norm, reg_model


def run_train_reg(cfg: RunConfig, out_dir: str, vae_model=None, norm=None):
    if vae_model is None or norm is None:
        vae_model, norm, _ = load_models(out_dir)
    _, train_stacks, train_temps = load_split(out_dir, "train")
    codes = np.stack([
        vae.encode_mean(vae_model, rasterizer.normalize(s, norm)) for s in train_stacks
    ])
    model, err_report = regressor.train_regressor(codes, train_temps, cfg.reg_config())
    save_model(regressor.regressor_tensors(model), _path(out_dir, MODEL_DIR, "reg.lczm"))
    return model, err_report


def run_perturb(cfg: RunConfig, out_dir: str, vae_model=None, norm=None, reg_model=None):
    """Sweep the held-out scenes; persist counterfactual tensors + index."""
    if vae_model is None:
        vae_model, norm, reg_model = load_models(out_dir)
    if reg_model is None:
        raise UsageError("regressor model missing; run train-reg first")
    test_ids, test_stacks, _ = load_split(out_dir, "test")
    n_use = min(cfg["perturb.n_scenes"], len(test_ids))
    scenes = [
        (sid, rasterizer.normalize(stack, norm))
        for sid, stack in zip(test_ids[:n_use], test_stacks[:n_use])
    ]
    zeta = cfg["perturb.zeta"] or None
    result = perturb.batch_perturb(
        vae_model, reg_model, scenes, cfg.dt_sweep(),
        mode=cfg["perturb.mode"], g_floor=cfg["perturb.g_floor"],
        zeta=zeta, steps=cfg["perturb.steps"],
    )
    index_path = _path(out_dir, CF_DIR, "index.csv")
    with open(index_path, "w") as fh:
        fh.write("scene_id,delta_t,achieved_dt,path\n")
        for i, cf in enumerate(result.scenes):
            rel = f"cf_{i:05d}.lczm"
            save_model(
                [("cf/original", cf.original), ("cf/reconstruction", cf.reconstruction),
                 ("cf/counterfactual", cf.counterfactual), ("cf/delta_c", cf.delta_c),
                 ("cf/meta", np.array([cf.requested_dt, cf.achieved_dt]))],
                _path(out_dir, CF_DIR, rel),
            )
            fh.write(f"{cf.scene_id},{cf.requested_dt:.9g},{cf.achieved_dt:.9g},{rel}\n")
    return result


def records_from_batch(batch: perturb.BatchResult, norm: NormStats, rules) -> list:
    """Segment de-normalized counterfactuals into ExperimentRecords."""
    baselines = {}
    for cf in batch.scenes:
        if cf.scene_id not in baselines:
            rec_stack = _stack_like(cf.reconstruction, norm)
            baselines[cf.scene_id] = autogeolabel.vegetation_fraction(
                autogeolabel.segment(rec_stack, rules)
            )
    records = []
    for cf in batch.scenes:
        cf_stack = _stack_like(cf.counterfactual, norm)
        v_prime = autogeolabel.vegetation_fraction(autogeolabel.segment(cf_stack, rules))
        records.append(report.ExperimentRecord(
            scene_id=cf.scene_id, delta_t=cf.requested_dt,
            achieved_dt=cf.achieved_dt, v_prime=v_prime,
            v_baseline=baselines[cf.scene_id],
        ))
    return records


def _stack_like(channels: np.ndarray, norm: NormStats) -> RasterStack:
    c, h, w = channels.shape
    spec = rasterizer.GridSpec(0.0, 0.0, 1.0, w, h)
    raw = rasterizer.denormalize_array(np.asarray(channels, dtype=float), norm)
    return RasterStack(spec, raw)


def run_label(cfg: RunConfig, out_dir: str, batch=None, norm=None) -> list:
    if batch is None:
        _, norm, _ = load_models(out_dir)
        batch = _load_batch(out_dir)
    records = records_from_batch(batch, norm, cfg.label_rules())
    with open(_path(out_dir, "fractions.csv"), "w") as fh:
        fh.write("scene_id,delta_t,achieved_dt,v_prime,v_baseline\n")
        for r in records:
            fh.write(f"{r.scene_id},{r.delta_t:.9g},{r.achieved_dt:.9g},"
                     f"{r.v_prime:.9g},{r.v_baseline:.9g}\n")
    return records


def _load_batch(out_dir: str) -> perturb.BatchResult:
    index_path = os.path.join(out_dir, CF_DIR, "index.csv")
    scenes = []
    with open(index_path) as fh:
        header = fh.readline()
        if header.strip() != "scene_id,delta_t,achieved_dt,path":
            raise UsageError(f"bad counterfactual index header: {header!r}")
        for line in fh:
            sid, dt, adt, rel = line.strip().split(",")
            tensors = dict(load_model(os.path.join(out_dir, CF_DIR, rel)))
            scenes.append(perturb.CounterfactualScene(
                original=np.asarray(tensors["cf/original"], dtype=float),
                reconstruction=np.asarray(tensors["cf/reconstruction"], dtype=float),
                counterfactual=np.asarray(tensors["cf/counterfactual"], dtype=float),
                delta_c=np.asarray(tensors["cf/delta_c"], dtype=float),
                achieved_dt=float(adt), requested_dt=float(dt), scene_id=sid,
            ))
    return perturb.BatchResult(scenes)


def run_analyze(cfg: RunConfig, out_dir: str, records=None, n_excluded=0) -> report.ReportBundle:
    if records is None:
        records = _load_records(out_dir)
    bundle = report.build_report(records, cfg["analysis.alpha"], n_excluded=n_excluded)
    with open(_path(out_dir, "figure.csv"), "w") as fh:
        fh.write(bundle.figure_csv)
    with open(_path(out_dir, "report.txt"), "w") as fh:
        fh.write(bundle.summary)
    return bundle


def _load_records(out_dir: str) -> list:
    records = []
    with open(os.path.join(out_dir, "fractions.csv")) as fh:
        fh.readline()
        for line in fh:
            sid, dt, adt, vp, vb = line.strip().split(",")
            records.append(report.ExperimentRecord(sid, float(dt), float(adt),
                                                   float(vp), float(vb)))
    return records


@dataclass
class PipelineResult:
    corpus: synthcity.CorpusResult
    vae_model: object
    norm: NormStats
    vae_history: list
    reg_model: object
    reg_report: regressor.ErrorReport
    batch: perturb.BatchResult
    records: list
    bundle: report.ReportBundle


def run_pipeline(cfg: RunConfig, out_dir: str) -> PipelineResult:
    """synth -> rasterize -> train-vae -> train-reg -> perturb -> label -> analyze."""
    os.makedirs(out_dir, exist_ok=True)
    write_run_manifest(cfg, out_dir)
    corpus = run_synth(cfg, out_dir)
    vae_model, norm, history = run_train_vae(cfg, out_dir)
    reg_model, reg_report = run_train_reg(cfg, out_dir, vae_model, norm)
    batch = run_perturb(cfg, out_dir, vae_model, norm, reg_model)
    records = run_label(cfg, out_dir, batch, norm)
    bundle = run_analyze(cfg, out_dir, records, n_excluded=len(batch.failures))
    return PipelineResult(corpus, vae_model, norm, history, reg_model,
                          reg_report, batch, records, bundle)


def run_check(seed: int = 0) -> dict:
    """Self-check: gradient-parallel step identities plus finite-difference
    validation of a small composed network. Returns the measured errors."""
    rng = np.random.default_rng(seed)
    max_dot_err = 0.0
    max_cos_err = 0.0
    for _ in range(1000):
        g = rng.standard_normal(64)
        dt = rng.uniform(-10.0, 10.0)
        step = perturb.delta_c(g, dt)
        max_dot_err = max(max_dot_err, abs(step @ g - dt) / max(1e-30, abs(dt)))
        if dt != 0.0:
            cos = abs(step @ g) / (np.linalg.norm(step) * np.linalg.norm(g))
            max_cos_err = max(max_cos_err, abs(cos - 1.0))

    from . import autodiff as ad

    w1 = rng.standard_normal((6, 5)) * 0.5
    b1 = rng.standard_normal(5) * 0.1
    w2 = rng.standard_normal((5, 1)) * 0.5

    def net(x):
        h = ad.tanh(ad.affine(ad.reshape(x, (1, 6)), Tensor(w1), Tensor(b1)))
        return ad.mean_all(ad.matmul(h, Tensor(w2)))

    grad_err = max(
        check_gradient(net, rng.standard_normal(6), h=1e-5) for _ in range(10)
    )
    return {"eq_dot_rel_err": max_dot_err, "eq_cos_err": max_cos_err,
            "grad_max_rel_err": grad_err}
