"""
Experiment commands

Each command takes an ExperimentConfig, writes its artifacts under
`config.output.dir` and records them in the run manifest together with
the config hash. Nothing written here depends on wall-clock time, so a
rerun with the same config reproduces every file.
"""

import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .ablation_profiles import ABLATION_LADDER, AblationRow, get_ablation_config
from .config import ExperimentConfig, override
from .errors import ArgumentError, DatasetError
from .imaging import NORMAL, PhantomSpec, export_dataset, generate_phantoms, load_dataset, save_png
from .logs import BANNER, get_logger
from .metrics import MetricsReport, compute_auc, evaluate_scores, pixel_metrics
from .papc import construct_pseudo_proxy, pick_source_index
from .pipeline import (PROXY_CHECKPOINT, RECON_CHECKPOINT, AnomalyDetector, load_proxy_module,
                       save_proxy_module, save_recon_module, train_detector)
from .proxy_cache import compute_proxies, load_cache, write_cache
from .superpixel import ProxyMode, make_proxy
from .training import TrainedStage, TrainingData, train_stage1_proxy, train_stage2_recon
from .visualization import reconstruction_grid, save_heat_map, score_histogram, sweep_curve

log = get_logger("cli")

MANIFEST = "manifest.txt"
PHANTOM_STAMP = "phantom_spec.txt"
FLOAT_FORMAT = "%.10g"
SCORE_COLUMNS = ["id", "label", "a_img", "a_img_pixelspace", "a_si_error"]
SWEEP_PARAMS = {
    "memory_size": ("memory", "k"),
    "lambda_global": ("weights", "lambda_global"),
    "lambda_local": ("weights", "lambda_local"),
}
GRID_PER_CLASS = 4


# ============================================================
# RUN DIRECTORY
# ============================================================

def run_dir(config: ExperimentConfig):
    path = Path(config.output.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_key_values(path):
    entries = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if " = " in line:
                key, value = line.split(" = ", 1)
                entries[key] = value
    return entries


def write_run_manifest(config: ExperimentConfig, command, artifacts):
    """Merge `command.<name> = artifacts` into the manifest; a new config hash starts it over"""
    path = run_dir(config) / MANIFEST
    entries = _read_key_values(path)
    config_hash = config.config_hash()
    if entries.get("config_hash") != config_hash:
        entries = {}
    entries.update({
        "config_hash": config_hash,
        "seed": str(config.train.seed),
        "ablation": config.ablation_config().tag(),
        f"command.{command}": ", ".join(str(a) for a in artifacts),
    })
    path.write_text("".join(f"{k} = {v}\n" for k, v in entries.items()))
    return path


def _write_frame(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    return path


# ============================================================
# DATA AND PROXIES
# ============================================================

def cmd_phantom_gen(spec: PhantomSpec, out_dir):
    """Generate the phantom dataset and write it in the on-disk dataset layout"""
    out_dir = Path(out_dir)
    train, test = generate_phantoms(spec)
    export_dataset(out_dir, train, test)
    (out_dir / PHANTOM_STAMP).write_text(repr(spec) + "\n")
    return out_dir


def load_data(config: ExperimentConfig):
    """(root, train, test); phantom datasets are generated into `<out>/data` once per phantom setting"""
    if config.is_phantom:
        spec = config.phantom_spec()
        root = run_dir(config) / "data"
        stamp = root / PHANTOM_STAMP
        if not stamp.exists() or stamp.read_text() != repr(spec) + "\n":
            if root.exists():
                shutil.rmtree(root)
            cmd_phantom_gen(spec, root)
    else:
        root = Path(config.data.source)
        if not root.is_dir():
            raise DatasetError("missing dataset directory", file=str(root))
    size = config.data.image_size
    return root, load_dataset(root, "train", size), load_dataset(root, "test", size)


def split_proxies(config: ExperimentConfig, root, split, samples, mode=None):
    """
    Proxies for one split, from the cache when it matches the parameters

    Freshly built proxies are read back from the cache so that a cold
    and a warm run see the same quantized values.
    """
    mode = ProxyMode.parse(mode or config.proxy.mode)
    params = config.proxy_params()
    split_dir = Path(root) / split
    proxies = load_cache(split_dir, samples, mode, params)
    if proxies is None:
        built = compute_proxies([s.image for s in samples], mode, params)
        write_cache(split_dir, samples, built, mode, params)
        proxies = load_cache(split_dir, samples, mode, params)
    return proxies


def make_training_data(train, proxies=None):
    """Without proxies the targets are the images themselves (single-module rows)"""
    images = [s.image for s in train]
    if proxies is None:
        proxies = [image[..., None] for image in images]
    return TrainingData.from_arrays(images, proxies, [s.id for s in train])


def cmd_prepare(config: ExperimentConfig, emit_pseudo=0):
    """Build (or reuse) the proxy cache for both splits; optionally dump PAPC examples"""
    root, train, test = load_data(config)
    train_proxies = split_proxies(config, root, "train", train)
    split_proxies(config, root, "test", test)
    artifacts = [root]

    n_pseudo = min(int(emit_pseudo), len(train))
    if n_pseudo:
        out = run_dir(config) / "pseudo"
        channels = ProxyMode.parse(config.proxy.mode).channel_count
        for i in range(n_pseudo):
            rng = np.random.default_rng([config.train.seed, 0, i])
            src = pick_source_index(rng, len(train), i, config.train.papc_source)
            edges = train_proxies[src][..., 1] if channels > 1 else None
            pseudo = construct_pseudo_proxy(train_proxies[i], train[src].image, rng, train[src].id, edges)
            for c in range(channels):
                save_png(out / f"{train[i].id}_pseudo_{c}.png", pseudo.proxy_prime[..., c])
            save_png(out / f"{train[i].id}_pseudo_mask.png", pseudo.mask, bits=8)
        log.info(f"✓ Wrote {n_pseudo} pseudo-abnormal proxies to {out}")
        artifacts.append(out)

    write_run_manifest(config, "prepare", artifacts)
    return {"train": len(train), "test": len(test), "pseudo": n_pseudo}


# ============================================================
# TRAINING
# ============================================================

def _training_data_for(config, root, train):
    if config.ablation_config().use_si_proxy:
        return make_training_data(train, split_proxies(config, root, "train", train))
    return make_training_data(train)


def cmd_train_proxy(config: ExperimentConfig) -> TrainedStage:
    root, train, _ = load_data(config)
    out = run_dir(config)
    stage1 = train_stage1_proxy(_training_data_for(config, root, train), config.train_config("proxy"))
    config.save(out / "config.ini")
    save_proxy_module(out / PROXY_CHECKPOINT, stage1.module, config)
    _write_frame(stage1.history, out / "loss_proxy.csv")
    write_run_manifest(config, "train-proxy", [PROXY_CHECKPOINT, "loss_proxy.csv"])
    return stage1


def cmd_train_recon(config: ExperimentConfig):
    """Stage 2 on top of the stage-1 checkpoint in the run directory"""
    ablation = config.ablation_config()
    if not ablation.two_stage:
        log.info(f"ℹ️  {ablation.tag()} is a single-module model; nothing to train in stage 2")
        return None
    out = run_dir(config)
    pem, meta = load_proxy_module(out / PROXY_CHECKPOINT)
    if meta.get("config_hash") != config.config_hash():
        log.warning("⚠️  Stage-1 checkpoint was trained with a different config")
    root, train, _ = load_data(config)
    stage2 = train_stage2_recon(_training_data_for(config, root, train), pem, config.train_config("recon"))
    config.save(out / "config.ini")
    save_recon_module(out / RECON_CHECKPOINT, stage2.module, stage2.discriminator, config)
    _write_frame(stage2.history, out / "loss_recon.csv")
    write_run_manifest(config, "train-recon", [RECON_CHECKPOINT, "loss_recon.csv"])
    return stage2


def cmd_train(config: ExperimentConfig):
    """Stage 1 then stage 2"""
    stage1 = cmd_train_proxy(config)
    stage2 = cmd_train_recon(config)
    return stage1, stage2


# ============================================================
# SCORING AND EVALUATION
# ============================================================

def records_frame(records):
    return pd.DataFrame(
        [[r.id, r.label, r.a_img, r.a_img_pixelspace, r.a_si_error] for r in records],
        columns=SCORE_COLUMNS,
    )


def _test_si_targets(detector, config, root, test):
    return split_proxies(config, root, "test", test) if detector.has_si_error else None


def write_scores(out, records):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_frame(records_frame(records), out / "scores.csv")
    np.save(out / "a_pix.npy", np.stack([r.a_pix for r in records]).astype(np.float32))
    masks = [np.zeros(r.a_pix.shape, dtype=bool) if r.lesion_mask is None else r.lesion_mask for r in records]
    np.save(out / "lesion_masks.npy", np.stack(masks).astype(np.uint8))
    return out / "scores.csv"


def _grid_rows(detector, config, test):
    normals = [s for s in test if s.label == NORMAL][:GRID_PER_CLASS]
    abnormals = [s for s in test if s.label != NORMAL][:GRID_PER_CLASS]
    chosen = normals + abnormals
    if not chosen:
        return []
    result = detector.score_images(np.stack([s.image for s in chosen]))
    rows = []
    for i, sample in enumerate(chosen):
        if detector.ablation.use_si_proxy:
            proxy = make_proxy(sample.image, config.proxy.mode, config.proxy_params())
        else:
            proxy = sample.image
        rows.append({
            "id": sample.id,
            "image": sample.image,
            "proxy": proxy,
            "proxy_hat": result["proxy_hat"][i],
            "image_hat": result["image_hat"][i],
            "a_pix": result["a_pix"][i],
        })
    return rows


def cmd_score(config: ExperimentConfig, checkpoint_dir=None):
    """Score the test split with the trained run; writes scores.csv, A_pix maps and figures"""
    out = run_dir(config)
    detector = AnomalyDetector.load(checkpoint_dir or out, config)
    root, _, test = load_data(config)

    log.info(BANNER)
    log.info(f"🔍 SCORING {len(test)} test images ({detector.ablation.tag()})")
    log.info(BANNER)
    records = detector.score(test, _test_si_targets(detector, config, root, test))
    write_scores(out, records)
    for record in records:
        save_heat_map(out / "heatmaps" / f"{record.id}.png", record.a_pix)
    reconstruction_grid(out / "recon_grid.png", _grid_rows(detector, config, test))
    score_histogram(out / "score_hist.png", [detector.primary_score(r) for r in records],
                    [r.label for r in records], "a_img" if detector.ablation.score_in_latent else "a_img_pixelspace")

    write_run_manifest(config, "score", ["scores.csv", "a_pix.npy", "lesion_masks.npy", "heatmaps/",
                                         "recon_grid.png", "score_hist.png"])
    return records


def evaluate_frame(frame, ablation) -> MetricsReport:
    """Report on the primary score plus the AUC of every score column present"""
    primary = "a_img" if ablation.score_in_latent else "a_img_pixelspace"
    labels = frame["label"].tolist()
    report = evaluate_scores(frame[primary].to_numpy(), labels, tag=ablation.tag(), score_name=primary)
    report.extra["auc_a_img"] = compute_auc(frame["a_img"].to_numpy(), labels)
    report.extra["auc_a_img_pixelspace"] = compute_auc(frame["a_img_pixelspace"].to_numpy(), labels)
    si_error = pd.to_numeric(frame["a_si_error"], errors="coerce")
    if si_error.notna().all():
        report.extra["auc_a_si_error"] = compute_auc(si_error.to_numpy(), labels)
    return report


def pixel_report(maps, masks, labels):
    """Pixel metrics over normals (all negative) and abnormals that carry a lesion mask"""
    chosen_maps, chosen_masks = [], []
    for a_pix, mask, label in zip(maps, masks, labels):
        if label == NORMAL:
            chosen_maps.append(a_pix)
            chosen_masks.append(None)
        elif np.any(mask):
            chosen_maps.append(a_pix)
            chosen_masks.append(mask)
    return pixel_metrics(chosen_maps, chosen_masks)


def cmd_eval(config: ExperimentConfig, scores_path=None) -> MetricsReport:
    out = run_dir(config)
    path = Path(scores_path) if scores_path else out / "scores.csv"
    if not path.exists():
        raise DatasetError("scores file not found; run score first", file=str(path))
    frame = pd.read_csv(path, dtype={"id": str, "label": str})
    report = evaluate_frame(frame, config.ablation_config())

    maps_path, masks_path = path.parent / "a_pix.npy", path.parent / "lesion_masks.npy"
    if maps_path.exists() and masks_path.exists():
        report.extra.update(pixel_report(np.load(maps_path), np.load(masks_path), frame["label"].tolist()))

    (out / "metrics.txt").write_text(report.to_text())
    (out / "metrics.json").write_text(report.to_json() + "\n")
    log.info(BANNER)
    for line in report.to_text().splitlines():
        log.info(line)
    log.info(BANNER)
    write_run_manifest(config, "eval", ["metrics.txt", "metrics.json"])
    return report


def cmd_run(config: ExperimentConfig):
    """train + score + eval"""
    cmd_train(config)
    cmd_score(config)
    return cmd_eval(config)


# ============================================================
# STUDIES
# ============================================================

def _fit_and_score(config, data, test, si_test, stage1=None):
    """Train (reusing `stage1` when given), score the test split and write the row artifacts"""
    detector, histories = train_detector(config, data, stage1=stage1)
    return detector, histories, _score_and_report(detector, test, si_test, histories)


def _score_and_report(detector, test, si_test, histories=None):
    out = run_dir(detector.config)
    if histories is not None:
        _write_frame(histories["proxy"], out / "loss_proxy.csv")
        if histories["recon"] is not None:
            _write_frame(histories["recon"], out / "loss_recon.csv")
    records = detector.score(test, si_test if detector.has_si_error else None)
    write_scores(out, records)
    report = evaluate_frame(records_frame(records), detector.ablation)
    (out / "metrics.txt").write_text(report.to_text())
    return records, report


def _report_row(report: MetricsReport, **head):
    return {
        **head,
        "auc": report.auc,
        "acc": report.acc,
        "f1": report.f1,
        "mean_normal": report.mean_normal,
        "mean_abnormal": report.mean_abnormal,
        "gap": report.gap,
        "auc_a_img": report.extra["auc_a_img"],
        "auc_a_img_pixelspace": report.extra["auc_a_img_pixelspace"],
    }


def cmd_ablate(config: ExperimentConfig, rows=None):
    """
    The component ablation ladder on one dataset and seed

    Rows that share stage-1 switches share the stage-1 model; rows that
    differ only in the scoring space share the whole detector. The SI
    error of the rows 4 and 5 proxy modules is reported separately.
    """
    rows = [int(r) for r in (rows or ABLATION_LADDER)]
    base = run_dir(config)
    mode = ProxyMode.parse(config.proxy.mode)
    root, train, test = load_data(config)
    train_si = split_proxies(config, root, "train", train)
    test_si = split_proxies(config, root, "test", test) if mode == ProxyMode.SI else None

    log.info(BANNER)
    log.info(f"🧪 ABLATION: rows {rows} | {len(train)} train / {len(test)} test")
    log.info(BANNER)

    stage1_cache, detector_cache = {}, {}
    table, si_only = [], []
    for row in rows:
        ablation = get_ablation_config(row, mode)
        row_config = config.with_ablation(ablation).with_output(base / "ablation" / f"row{row}")
        model_key = (ablation.stage1_key(), ablation.use_repairing)
        if model_key in detector_cache:
            pem, irm, disc = detector_cache[model_key]
            detector = AnomalyDetector(row_config, pem, irm, disc)
            records, report = _score_and_report(detector, test, test_si)
        else:
            data = make_training_data(train, train_si if ablation.use_si_proxy else None)
            detector, histories, (records, report) = _fit_and_score(
                row_config, data, test, test_si, stage1=stage1_cache.get(ablation.stage1_key()))
            stage1_cache[ablation.stage1_key()] = TrainedStage(detector.pem, histories["proxy"])
            detector_cache[model_key] = (detector.pem, detector.irm, detector.discriminator)
        table.append(_report_row(report, row=row, tag=ablation.tag()))
        log.info(f"✓ Row {row} {ablation.tag()}: AUC {report.auc:.4f} | gap {report.gap:.4f}")

        if row in (AblationRow.SI_BRIDGE.value, AblationRow.SI_MEMORY.value) and detector.has_si_error:
            auc = compute_auc([r.a_si_error for r in records], [r.label for r in records])
            si_only.append({"row": row, "tag": f"{ablation.tag()} SI-error", "auc": auc})

    frame = pd.DataFrame(table)
    _write_frame(frame, base / "ablation.csv")
    artifacts = ["ablation.csv"]
    if si_only:
        _write_frame(pd.DataFrame(si_only), base / "ablation_si_only.csv")
        artifacts.append("ablation_si_only.csv")
    write_run_manifest(config, "ablate", artifacts)
    log.info(f"✅ ABLATION COMPLETE: {len(frame)} rows → {base / 'ablation.csv'}")
    return frame


@torch.no_grad()
def proxy_is_input_independent(detector, samples):
    """True when P̂ is bit-identical for every sample"""
    proxy_hat = detector.score_images(np.stack([s.image for s in samples]))["proxy_hat"]
    return bool(np.all(proxy_hat == proxy_hat[:1]))


def cmd_sweep(config: ExperimentConfig, param, values):
    """AUC against memory size or a repairing weight"""
    if param not in SWEEP_PARAMS:
        raise ArgumentError(f"sweep parameter must be one of {list(SWEEP_PARAMS)}, got {param!r}")
    if not values:
        raise ArgumentError("sweep needs at least one value")
    section, key = SWEEP_PARAMS[param]
    base = run_dir(config)
    root, train, test = load_data(config)
    ablation = config.ablation_config()
    data = make_training_data(train, split_proxies(config, root, "train", train) if ablation.use_si_proxy else None)
    test_si = split_proxies(config, root, "test", test) if ablation.use_si_proxy and \
        ablation.proxy_mode == ProxyMode.SI else None

    log.info(BANNER)
    log.info(f"📈 SWEEP {param}: {list(values)}")
    log.info(BANNER)

    # Repairing weights only act in stage 2
    shared_stage1 = None
    rows = []
    for value in values:
        value_config = override(config, section, key, value).with_output(base / "sweep" / f"{param}_{value}")
        detector, histories, (records, report) = _fit_and_score(value_config, data, test, test_si,
                                                                stage1=shared_stage1)
        if param != "memory_size":
            shared_stage1 = TrainedStage(detector.pem, histories["proxy"])
        rows.append({
            param: value,
            "auc": report.auc,
            "gap": report.gap,
            "proxy_input_independent": proxy_is_input_independent(detector, test),
        })
        log.info(f"✓ {param} = {value}: AUC {report.auc:.4f}")

    frame = pd.DataFrame(rows)
    _write_frame(frame, base / f"sweep_{param}.csv")
    sweep_curve(base / f"sweep_{param}.png", param, list(values), frame["auc"].tolist())
    write_run_manifest(config, f"sweep-{param}", [f"sweep_{param}.csv", f"sweep_{param}.png"])
    return frame


def cmd_compare_proxies(config: ExperimentConfig, modes=None):
    """Two-module model (no memory, no repairing) per proxy type, against the plain autoencoder"""
    modes = [ProxyMode.parse(m) for m in (modes or list(ProxyMode))]
    base = run_dir(config)
    root, train, test = load_data(config)

    baseline = get_ablation_config(AblationRow.AUTOENCODER)
    baseline_config = config.with_ablation(baseline).with_output(base / "proxies" / "autoencoder")
    _, _, (_, report) = _fit_and_score(baseline_config, make_training_data(train), test, None)
    rows = [{"proxy": "none", "tag": baseline.tag(), "auc": report.auc, "gap": report.gap}]

    for mode in modes:
        ablation = get_ablation_config(AblationRow.SI_BRIDGE, mode)
        mode_config = config.with_ablation(ablation).with_output(base / "proxies" / mode.value)
        data = make_training_data(train, split_proxies(mode_config, root, "train", train, mode))
        test_si = split_proxies(mode_config, root, "test", test, mode) if mode == ProxyMode.SI else None
        _, _, (_, report) = _fit_and_score(mode_config, data, test, test_si)
        rows.append({"proxy": mode.value, "tag": ablation.tag(), "auc": report.auc, "gap": report.gap})
        log.info(f"✓ Proxy {mode.value}: AUC {report.auc:.4f}")

    frame = pd.DataFrame(rows)
    _write_frame(frame, base / "compare_proxies.csv")
    write_run_manifest(config, "compare-proxies", ["compare_proxies.csv"])
    return frame
