"""Command-line interface.

One binary with subcommands covering the full workflow: synthesize scene
datasets, train the patch model and the gaze-correction net, run single-scene
inference, Monte Carlo EM, benchmark evaluation, ancestral sampling, and
partition-function estimation.

Config precedence is CLI flag > config file > built-in default. Config files
are flat "key = value" text where keys are the long flag names with
underscores; unknown keys are rejected. Exit codes: 0 success, 2 bad
configuration or usage, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import approxnet, bench, data, em, gdbn, plots
from .grbm import TrainHyper
from .hmc import HmcConfig
from .image import Canvas, load_pnm, save_pnm, to_grayscale
from .infer import InferenceSchedule, infer
from .util import rng_stream
from .warp import CanonicalImage, Gaze, PatchGrid, extract_patch

__all__ = ["main"]


class ConfigError(ValueError):
    """Bad flags, config keys, or missing input files (exit code 2)."""


# ---------------------------------------------------------------------------
# config file handling

def _read_kv_file(path) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
            out[key] = val.strip()
    return out


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _resolve(args: argparse.Namespace, keyspec: dict) -> dict:
    """Merge CLI values over config-file values over defaults."""
    cfg: dict[str, str] = {}
    if getattr(args, "config", None) is not None:
        cfg = _read_kv_file(args.config)
        unknown = sorted(set(cfg) - set(keyspec))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out: dict = {}
    for key, (parse, default) in keyspec.items():
        value = default
        if key in cfg:
            try:
                value = parse(cfg[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
        cli = getattr(args, key, None)
        if cli is not None:
            value = cli
        out[key] = value
    return out


def _require_file(path, what: str) -> str:
    if path is None:
        raise ConfigError(f"{what} required")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _sprite_spec_from_file(path) -> data.SpriteSpec:
    keyspec = {
        "class_count": int, "width": int, "height": int,
        "noise_std": float, "clutter_density": float, "layout_seed": int,
    }
    raw = _read_kv_file(path)
    unknown = sorted(set(raw) - set(keyspec))
    if unknown:
        raise ConfigError(f"unknown sprite-spec keys: {', '.join(unknown)}")
    kwargs = {}
    for key, val in raw.items():
        try:
            kwargs[key] = keyspec[key](val)
        except ValueError as exc:
            raise ConfigError(f"sprite-spec key {key!r}: {exc}") from None
    return data.SpriteSpec(**kwargs)


def _outpath(resolved: dict, name: str) -> str:
    os.makedirs(resolved["out_dir"], exist_ok=True)
    return os.path.join(resolved["out_dir"], name)


def _load_scene_canvas(path, channels: int) -> Canvas:
    canvas = load_pnm(path)
    if canvas.channels == 3 and channels == 1:
        canvas = to_grayscale(canvas)
    if canvas.channels != channels:
        raise ConfigError(
            f"scene has {canvas.channels} channels, model expects {channels}")
    return canvas


def _labeled_records(manifest, what: str) -> list[data.SceneRecord]:
    records = data.load_dataset(manifest)
    labeled = [r for r in records if r.true_gaze is not None]
    if not labeled:
        raise ConfigError(f"{what} contains no labeled rows")
    return labeled


def _crops_from_records(records: list[data.SceneRecord],
                        model: gdbn.GdbnModel) -> np.ndarray:
    grid = PatchGrid.lattice(model.patch_width, model.patch_height)
    crops = []
    for rec in records:
        canvas = _load_scene_canvas(rec.canvas_path, model.channels)
        crops.append(extract_patch(canvas, grid, rec.true_gaze))
    return np.stack(crops)


# ---------------------------------------------------------------------------
# subcommands

_SYNTH_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "sprite_spec": (str, None),
    "n_scenes": (int, 50), "canvas_size": (int, 96),
    "class_index": (int, -1), "unlabeled_fraction": (float, 0.0),
    "scale_low": (float, 0.7), "scale_high": (float, 1.3),
    "rotation": (float, 0.3),
}


def cmd_synth(args: argparse.Namespace) -> int:
    r = _resolve(args, _SYNTH_KEYS)
    spec = (data.SpriteSpec() if r["sprite_spec"] is None
            else _sprite_spec_from_file(_require_file(r["sprite_spec"], "sprite-spec")))
    if not (0.0 <= r["unlabeled_fraction"] <= 1.0):
        raise ConfigError("unlabeled_fraction must be in [0, 1]")
    size = r["canvas_size"]
    margin = r["scale_high"] * math.hypot(spec.width - 1, spec.height - 1) / 2 + 4
    if size - 2 * margin < 1:
        raise ConfigError("canvas_size too small for the sprite scale range")

    rng = rng_stream(r["seed"], "cli.synth")
    if r["class_index"] >= 0:
        if r["class_index"] >= spec.class_count:
            raise ConfigError("class_index out of range")
        sprites = data.generate_class_sprites(spec, r["class_index"],
                                              r["n_scenes"], r["seed"])
        labels = np.full(r["n_scenes"], r["class_index"])
    else:
        sprites, labels = data.generate_labeled_sprites(
            spec, r["n_scenes"], r["seed"])

    clutter = data.ClutterSpec(density=spec.clutter_density)
    scene_dir = os.path.join(r["out_dir"], "scenes")
    os.makedirs(scene_dir, exist_ok=True)
    records = []
    for i in range(r["n_scenes"]):
        sprite = CanonicalImage(sprites[i], spec.width, spec.height)
        theta = rng.uniform(-r["rotation"], r["rotation"])
        scale = rng.uniform(r["scale_low"], r["scale_high"])
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        gaze = approxnet.gaze_at_center(theta, scale, cx, cy,
                                        spec.width, spec.height)
        canvas, _ = data.compose_scene(sprite, size, gaze, clutter,
                                       int(rng.integers(2**62)))
        path = os.path.join(scene_dir, f"scene_{i:04d}.pgm")
        save_pnm(path, canvas)
        keep_label = rng.random() >= r["unlabeled_fraction"]
        records.append(data.SceneRecord(path, gaze if keep_label else None,
                                        int(labels[i])))
    manifest = _outpath(r, "manifest.csv")
    data.write_manifest(manifest, records)
    print(f"wrote {r['n_scenes']} scenes and {manifest}")
    return 0


_TRAIN_GDBN_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "manifest": (str, None), "sprite_spec": (str, None), "model": (str, None),
    "n_patches": (int, 2000), "patch_width": (int, 24), "patch_height": (int, 24),
    "h1": (int, 128), "h2": (int, 32),
    "cd_k": (int, 1), "n_fantasy": (int, 64), "epochs": (int, 10),
    "lr1": (float, 0.001), "lr2": (float, 0.01), "minibatch": (int, 32),
    "momentum": (float, 0.5), "weight_decay": (float, 0.0),
}


def cmd_train_gdbn(args: argparse.Namespace) -> int:
    r = _resolve(args, _TRAIN_GDBN_KEYS)
    if r["manifest"] is None and r["sprite_spec"] is None:
        raise ConfigError("manifest or sprite-spec required")
    if r["manifest"] is not None:
        records = _labeled_records(_require_file(r["manifest"], "manifest"),
                                   "manifest")
        width, height = r["patch_width"], r["patch_height"]
        channels = load_pnm(records[0].canvas_path).channels
        grid = PatchGrid.lattice(width, height)
        patches = []
        for rec in records:
            canvas = _load_scene_canvas(rec.canvas_path, channels)
            patches.append(extract_patch(canvas, grid, rec.true_gaze))
        patches = np.stack(patches)
    else:
        spec = _sprite_spec_from_file(_require_file(r["sprite_spec"], "sprite-spec"))
        patches = data.generate_sprites(spec, r["n_patches"], r["seed"])
        width, height, channels = spec.width, spec.height, 1

    hyper1 = TrainHyper(r["lr1"], r["epochs"], r["minibatch"], r["momentum"],
                        r["weight_decay"], r["seed"])
    hyper2 = TrainHyper(r["lr2"], r["epochs"], r["minibatch"], r["momentum"],
                        r["weight_decay"], r["seed"])

    def monitor(epoch: int, recon: float) -> None:
        print(f"epoch {epoch} recon {recon:.6f}")

    model = gdbn.greedy_train(patches, hyper1, hyper2, width, height, channels,
                              h1=r["h1"], h2=r["h2"], cd_k=r["cd_k"],
                              n_fantasy=r["n_fantasy"], monitor=monitor)
    out = r["model"] or _outpath(r, "model.agen")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    gdbn.save_model(out, model)
    print(f"wrote {out}")
    return 0


_TRAIN_NET_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "manifest": (str, None), "net": (str, None),
    "pairs": (int, 4000), "epochs": (int, 8), "lr": (float, 0.003),
    "minibatch": (int, 128), "momentum": (float, 0.9),
    "translation": (float, 30.0), "rot_jitter": (float, 0.15),
    "scale_jitter_low": (float, 0.5), "scale_jitter_high": (float, 1.5),
}


def cmd_train_net(args: argparse.Namespace) -> int:
    r = _resolve(args, _TRAIN_NET_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    records = _labeled_records(_require_file(r["manifest"], "manifest"),
                               "manifest")
    scenes = [(_load_scene_canvas(rec.canvas_path, model.channels),
               rec.true_gaze) for rec in records]
    canonical = CanonicalImage(model.mean_patch, model.patch_width,
                               model.patch_height, model.channels)
    jitter = approxnet.JitterRanges(r["translation"], r["rot_jitter"],
                                    r["scale_jitter_low"], r["scale_jitter_high"])
    dataset = approxnet.make_training_pairs(scenes, canonical, jitter,
                                            r["pairs"], r["seed"])
    hyper = TrainHyper(r["lr"], r["epochs"], r["minibatch"], r["momentum"],
                       seed=r["seed"])

    def monitor(epoch: int, loss: float) -> None:
        print(f"epoch {epoch} loss {loss:.6f}")

    net, _ = approxnet.sgd_train(dataset, hyper, channels=model.channels,
                                 monitor=monitor)
    out = r["net"] or _outpath(r, "net.agen")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    approxnet.save_net(out, net)
    print(f"wrote {out}")
    return 0


_INFER_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "net": (str, None),
    "image": (str, None), "manifest": (str, None), "index": (int, 0),
    "approx_steps": (int, 4), "hmc_iterations": (int, 5),
    "step_size": (float, 0.02), "n_leapfrog": (int, 20),
    "init_translation": (float, 30.0),
    "scale_low": (float, 0.5), "scale_high": (float, 1.5),
    "u0": (_parse_floats, None), "save_crop": (_parse_bool, False),
    "strict_variance": (_parse_bool, False), "clamp_v": (_parse_bool, False),
}


def cmd_infer(args: argparse.Namespace) -> int:
    r = _resolve(args, _INFER_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    net = None
    if r["net"] is not None:
        net = approxnet.load_net(_require_file(r["net"], "net"))
    elif r["approx_steps"] > 0:
        raise ConfigError("net required unless approx_steps is 0")

    truth = None
    if r["image"] is not None:
        canvas = _load_scene_canvas(_require_file(r["image"], "image"),
                                    model.channels)
    elif r["manifest"] is not None:
        records = data.load_dataset(_require_file(r["manifest"], "manifest"))
        if not (0 <= r["index"] < len(records)):
            raise ConfigError(f"index {r['index']} outside manifest")
        rec = records[r["index"]]
        canvas = _load_scene_canvas(rec.canvas_path, model.channels)
        truth = rec.true_gaze
    else:
        raise ConfigError("image or manifest required")

    m_t = (4.0 / model.patch_width) ** 2
    hmc_cfg = HmcConfig(step_size=r["step_size"], n_leapfrog=r["n_leapfrog"],
                        mass=(1.0, 1.0, m_t, m_t), seed=r["seed"])
    schedule = InferenceSchedule(
        approx_steps=r["approx_steps"], hmc_iterations=r["hmc_iterations"],
        hmc_config=hmc_cfg, init_translation_range=r["init_translation"],
        init_scale_range=(r["scale_low"], r["scale_high"]),
        strict_variance=r["strict_variance"], clamp_v=r["clamp_v"])
    u0 = None
    if r["u0"] is not None:
        if len(r["u0"]) != 4:
            raise ConfigError("u0 must be 'a,b,dx,dy'")
        u0 = Gaze(*r["u0"])

    state, trace = infer(canvas, model, net, schedule, r["seed"], u0=u0)
    trace.write_csv(_outpath(r, "trace.csv"))

    tail = trace.accept_flags[r["approx_steps"]:]
    accept = float(np.mean(tail)) if tail else float("nan")
    final_u = trace.potentials[-1] if trace.potentials else float("nan")
    iou = float("nan")
    if truth is not None:
        grid = PatchGrid.lattice(model.patch_width, model.patch_height)
        iou = bench.gaze_iou(state.u, truth, grid)
    g = state.u
    with open(_outpath(r, "result.csv"), "w", newline="") as fh:
        fh.write("a,b,dx,dy,U,accept_rate,iou\n")
        fh.write(f"{g.a!r},{g.b!r},{g.dx!r},{g.dy!r},"
                 f"{final_u:.6f},{accept:.4f},{iou:.6f}\n")
    if r["save_crop"]:
        grid = PatchGrid.lattice(model.patch_width, model.patch_height)
        crop = extract_patch(canvas, grid, state.u)
        planar = crop.reshape(model.channels, model.patch_height,
                              model.patch_width)
        save_pnm(_outpath(r, "crop.pgm" if model.channels == 1 else "crop.ppm"),
                 Canvas(planar))
    print(f"gaze a={g.a:.4f} b={g.b:.4f} dx={g.dx:.2f} dy={g.dy:.2f} "
          f"U={final_u:.2f} accept={accept:.2f}")
    if truth is not None:
        print(f"iou {iou:.4f}")
    return 0


_EM_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "manifest": (str, None), "net": (str, None),
    "bootstrap_manifest": (str, None), "heldout_manifest": (str, None),
    "rounds": (int, 3), "e_samples": (int, 2),
    "refresh_net": (_parse_bool, False),
    "approx_steps": (int, 4), "hmc_iterations": (int, 5),
    "bootstrap_pairs": (int, 4000), "ais_chains": (int, 64),
    "ais_dists": (int, 1500), "bound_mc": (int, 50),
    "m_lr1": (float, 0.001), "m_lr2": (float, 0.01),
    "m_epochs1": (int, 5), "m_epochs2": (int, 10),
}


def cmd_em(args: argparse.Namespace) -> int:
    r = _resolve(args, _EM_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    records = data.load_dataset(_require_file(r["manifest"], "manifest"))
    if not records:
        raise ConfigError("manifest is empty")
    canvases = [_load_scene_canvas(rec.canvas_path, model.channels)
                for rec in records]
    true_gazes = None
    if all(rec.true_gaze is not None for rec in records):
        true_gazes = [rec.true_gaze for rec in records]

    net = None
    bootstrap: list = []
    if r["net"] is not None:
        net = approxnet.load_net(_require_file(r["net"], "net"))
    else:
        boot_recs = _labeled_records(
            _require_file(r["bootstrap_manifest"], "bootstrap-manifest"),
            "bootstrap-manifest")
        bootstrap = [(_load_scene_canvas(b.canvas_path, model.channels),
                      b.true_gaze) for b in boot_recs]

    heldout = None
    if r["heldout_manifest"] is not None:
        held_recs = _labeled_records(
            _require_file(r["heldout_manifest"], "heldout-manifest"),
            "heldout-manifest")
        heldout = _crops_from_records(held_recs, model)

    config = em.EmConfig(
        rounds=r["rounds"], e_samples_per_image=r["e_samples"],
        m_hyper1=TrainHyper(r["m_lr1"], r["m_epochs1"], momentum=0.5),
        m_hyper2=TrainHyper(r["m_lr2"], r["m_epochs2"], momentum=0.5),
        refresh_net=r["refresh_net"], bootstrap_pairs=r["bootstrap_pairs"],
        ais_chains=r["ais_chains"], ais_dists=r["ais_dists"],
        bound_mc=r["bound_mc"])
    schedule = InferenceSchedule(approx_steps=r["approx_steps"],
                                 hmc_iterations=r["hmc_iterations"])
    os.makedirs(r["out_dir"], exist_ok=True)
    model, net, report = em.run_em(
        model, bootstrap, canvases, config, r["seed"], schedule=schedule,
        net=net, heldout_patches=heldout, true_gazes=true_gazes,
        out_dir=r["out_dir"])
    em.write_report_csv(_outpath(r, "em.csv"), report)
    plots.save_em_figure(_outpath(r, "em.png"), report)
    gdbn.save_model(_outpath(r, "model_em.agen"), model)
    approxnet.save_net(_outpath(r, "net_em.agen"), net)
    for row in report:
        print(f"round {row['round']} samples {row['n_samples']} "
              f"bound {row['heldout_bound_nats']:.2f} iou {row['mean_iou']:.4f}")
    return 0


_EVAL_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "net": (str, None), "manifest": (str, None),
    "method": (str, "infer"),
    "offsets": (_parse_floats, (0.0, 10.0, 20.0, 30.0)),
    "scales": (_parse_floats, (0.6, 0.8, 1.0, 1.2, 1.4)),
    "stride": (int, 2),
    "approx_steps": (int, 4), "hmc_iterations": (int, 5),
}


def cmd_eval(args: argparse.Namespace) -> int:
    r = _resolve(args, _EVAL_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    records = _labeled_records(_require_file(r["manifest"], "manifest"),
                               "manifest")
    methods = [m.strip() for m in r["method"].split(",") if m.strip()]
    bad = [m for m in methods if m not in ("infer", "ncc", "template")]
    if bad:
        raise ConfigError(f"unknown method: {', '.join(bad)}")
    net = None
    if "infer" in methods:
        if r["net"] is None:
            raise ConfigError("net required for method infer")
        net = approxnet.load_net(_require_file(r["net"], "net"))

    schedule = InferenceSchedule(approx_steps=r["approx_steps"],
                                 hmc_iterations=r["hmc_iterations"])
    protocol = bench.BenchProtocol(init_offsets=r["offsets"],
                                   schedule=schedule, scales=r["scales"],
                                   stride=r["stride"], seed=r["seed"])
    template = CanonicalImage(model.mean_patch, model.patch_width,
                              model.patch_height, model.channels)
    summaries = []
    for method in methods:
        summary = bench.run_benchmark(method, records, protocol, model=model,
                                      net=net, template=template)
        summary.write_curve_csv(_outpath(r, f"curve_{method}.csv"))
        summary.write_results_csv(_outpath(r, f"results_{method}.csv"))
        summaries.append(summary)
        overall = float(np.mean([row["iou"] for row in summary.per_scene]))
        print(f"{method}: mean_iou {overall:.4f} evals {summary.total_evals}")
    plots.save_benchmark_figure(_outpath(r, "eval.png"), summaries)
    return 0


_SAMPLE_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "n": (int, 64), "gibbs_steps": (int, 200),
    "cols": (int, 8),
}


def cmd_sample(args: argparse.Namespace) -> int:
    r = _resolve(args, _SAMPLE_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    if r["n"] < 1 or r["cols"] < 1:
        raise ConfigError("n and cols must be >= 1")
    samples = gdbn.sample(model, r["n"], r["gibbs_steps"], r["seed"])
    w, h, c = model.patch_width, model.patch_height, model.channels
    cols = r["cols"]
    rows = (r["n"] + cols - 1) // cols
    montage = np.zeros((c, rows * h, cols * w))
    for i in range(r["n"]):
        tile = samples[i].reshape(c, h, w)
        rr, cc = divmod(i, cols)
        montage[:, rr * h:(rr + 1) * h, cc * w:(cc + 1) * w] = tile
    out = _outpath(r, "samples.pgm" if c == 1 else "samples.ppm")
    save_pnm(out, Canvas(np.clip(montage, 0.0, 1.0)))
    plots.save_montage_figure(_outpath(r, "samples.png"),
                              samples[:, :w * h], w, h, cols)
    print(f"wrote {out} ({rows}x{cols} tiles of {w}x{h})")
    return 0


_AIS_KEYS = {
    "out_dir": (str, "."), "seed": (int, 0), "threads": (int, 1),
    "model": (str, None), "chains": (int, 64), "dists": (int, 3000),
}


def cmd_ais(args: argparse.Namespace) -> int:
    r = _resolve(args, _AIS_KEYS)
    model = gdbn.load_model(_require_file(r["model"], "model"))
    est = gdbn.ais_log_z(model.layer2, r["chains"], r["dists"], r["seed"])
    with open(_outpath(r, "ais.csv"), "w", newline="") as fh:
        fh.write("log_z,ci_low,ci_high,n_chains,n_distributions\n")
        fh.write(f"{est.log_z!r},{est.log_z_ci_low!r},{est.log_z_ci_high!r},"
                 f"{est.n_chains},{est.n_distributions}\n")
    print(f"log_z {est.log_z:.6f} "
          f"ci [{est.log_z_ci_low:.6f}, {est.log_z_ci_high:.6f}] "
          f"chains {est.n_chains} dists {est.n_distributions}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--threads", type=int,
                   help="worker cap (math is vectorized single-process)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agen",
        description="Generative patch model with pose inference over scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    _add_common(p)
    p.add_argument("--sprite-spec", dest="sprite_spec")
    p.add_argument("--n-scenes", dest="n_scenes", type=int)
    p.add_argument("--canvas-size", dest="canvas_size", type=int)
    p.add_argument("--class-index", dest="class_index", type=int)
    p.add_argument("--unlabeled-fraction", dest="unlabeled_fraction", type=float)
    p.add_argument("--scale-low", dest="scale_low", type=float)
    p.add_argument("--scale-high", dest="scale_high", type=float)
    p.add_argument("--rotation", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-gdbn", help="train the two-layer patch model")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--sprite-spec", dest="sprite_spec")
    p.add_argument("--model", help="output model path")
    p.add_argument("--n-patches", dest="n_patches", type=int)
    p.add_argument("--patch-width", dest="patch_width", type=int)
    p.add_argument("--patch-height", dest="patch_height", type=int)
    p.add_argument("--h1", type=int)
    p.add_argument("--h2", type=int)
    p.add_argument("--cd-k", dest="cd_k", type=int)
    p.add_argument("--n-fantasy", dest="n_fantasy", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr1", type=float)
    p.add_argument("--lr2", type=float)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.set_defaults(func=cmd_train_gdbn)

    p = sub.add_parser("train-net", help="train the gaze-correction ConvNet")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--net", help="output net path")
    p.add_argument("--pairs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--minibatch", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--translation", type=float)
    p.add_argument("--rot-jitter", dest="rot_jitter", type=float)
    p.add_argument("--scale-jitter-low", dest="scale_jitter_low", type=float)
    p.add_argument("--scale-jitter-high", dest="scale_jitter_high", type=float)
    p.set_defaults(func=cmd_train_net)

    p = sub.add_parser("infer", help="infer the gaze on one scene")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--net")
    p.add_argument("--image", help="PGM/PPM scene")
    p.add_argument("--manifest", help="take the scene from a manifest row")
    p.add_argument("--index", type=int)
    p.add_argument("--approx-steps", dest="approx_steps", type=int)
    p.add_argument("--hmc-iterations", dest="hmc_iterations", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--n-leapfrog", dest="n_leapfrog", type=int)
    p.add_argument("--init-translation", dest="init_translation", type=float)
    p.add_argument("--scale-low", dest="scale_low", type=float)
    p.add_argument("--scale-high", dest="scale_high", type=float)
    p.add_argument("--u0", type=_parse_floats, help="start gaze 'a,b,dx,dy'")
    p.add_argument("--save-crop", dest="save_crop",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--strict-variance", dest="strict_variance",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--clamp-v", dest="clamp_v",
                   action=argparse.BooleanOptionalAction)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("em", help="Monte Carlo EM on unlabeled scenes")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--net", help="pretrained correction net")
    p.add_argument("--bootstrap-manifest", dest="bootstrap_manifest")
    p.add_argument("--heldout-manifest", dest="heldout_manifest")
    p.add_argument("--rounds", type=int)
    p.add_argument("--e-samples", dest="e_samples", type=int)
    p.add_argument("--refresh-net", dest="refresh_net",
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--approx-steps", dest="approx_steps", type=int)
    p.add_argument("--hmc-iterations", dest="hmc_iterations", type=int)
    p.add_argument("--bootstrap-pairs", dest="bootstrap_pairs", type=int)
    p.add_argument("--ais-chains", dest="ais_chains", type=int)
    p.add_argument("--ais-dists", dest="ais_dists", type=int)
    p.add_argument("--bound-mc", dest="bound_mc", type=int)
    p.add_argument("--m-lr1", dest="m_lr1", type=float)
    p.add_argument("--m-lr2", dest="m_lr2", type=float)
    p.add_argument("--m-epochs1", dest="m_epochs1", type=int)
    p.add_argument("--m-epochs2", dest="m_epochs2", type=int)
    p.set_defaults(func=cmd_em)

    p = sub.add_parser("eval", help="benchmark localization methods")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--net")
    p.add_argument("--manifest")
    p.add_argument("--method", help="comma list: infer,ncc,template")
    p.add_argument("--offsets", type=_parse_floats)
    p.add_argument("--scales", type=_parse_floats)
    p.add_argument("--stride", type=int)
    p.add_argument("--approx-steps", dest="approx_steps", type=int)
    p.add_argument("--hmc-iterations", dest="hmc_iterations", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="ancestral samples as a tiled montage")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--n", type=int)
    p.add_argument("--gibbs-steps", dest="gibbs_steps", type=int)
    p.add_argument("--cols", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ais", help="estimate the top-layer partition function")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--chains", type=int)
    p.add_argument("--dists", type=int)
    p.set_defaults(func=cmd_ais)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
