"""Command-line entry point: gen, augment, train, predict, eval, refine, demo.

Every command takes ``--config run.yaml`` plus dotted overrides such as
``--model.width 32``.  Failures print one JSON object on stderr and exit
with 2 (configuration), 3 (numerical) or 4 (I/O).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .augmentation import synthesize_closeup
from .config import dump_config, load_config, parse_overrides
from .errors import ConfigError, NumericalError, WholeBodyError
from .io import (FormatError, load_clip, load_motion, load_observations, read_json, save_clip, save_motion,
                 save_observations, write_json)
from .kinematics import SkeletonModel, default_skeleton
from .metrics import evaluate
from .model import WholeBodyModel
from .observations import synthesize_observations
from .refinement import foot_sliding, inject_stance_drift, refine_trajectory, world_joints
from .representation import derive_ground_truth_state
from .synthetic import generate_clip
from .training import ClipDataset, build_heldout, predict, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEMO_PRESET = {
    "data.clips_per_kind": 1,
    "data.heldout_per_kind": 1,
    "data.clip_length": 60,
    "data.closeup_variants": 1,
    "model.width": 32,
    "model.layers": 1,
    "model.heads": 2,
    "model.body_feature_dim": 32,
    "model.hand_feature_dim": 32,
    "noise.body_feature_dim": 32,
    "noise.hand_feature_dim": 32,
    "curriculum.stage1_steps": 20,
    "curriculum.stage2_steps": 10,
    "curriculum.batch_size": 2,
    "curriculum.window": 60,
}


def _skeleton(cfg):
    return SkeletonModel.load(cfg.paths.skeleton) if cfg.paths.skeleton else default_skeleton()


def _setup_numerics(cfg):
    if cfg.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif cfg.threads > 0:
        torch.set_num_threads(cfg.threads)


def _check_feature_dims(cfg):
    if cfg.model.body_feature_dim != cfg.noise.body_feature_dim:
        raise ConfigError("model and noise body feature widths differ", "model.body_feature_dim")
    if cfg.model.hand_feature_dim != cfg.noise.hand_feature_dim:
        raise ConfigError("model and noise hand feature widths differ", "model.hand_feature_dim")


# -- commands -----------------------------------------------------------------

def cmd_gen(cfg):
    """Clips, full-body observations and ground-truth motions for train/held-out splits."""
    skeleton = _skeleton(cfg)
    root = Path(cfg.paths.dataset_dir)
    entries = []
    for split, count, base in (("train", cfg.data.clips_per_kind, 0), ("heldout", cfg.data.heldout_per_kind, 10_000)):
        for kind in cfg.data.kinds:
            for k in range(count):
                seed = cfg.seed + base + k
                clip = generate_clip(kind, seed, length=cfg.data.clip_length, fps=cfg.data.fps, skeleton=skeleton)
                cid = f"{split}-{kind}-{k:03d}"
                obs, crop = synthesize_observations(clip, noise=cfg.noise, seed=[cfg.seed, seed, 7],
                                                    skeleton=skeleton, augment=cfg.augment)
                target, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans,
                                                      clip.betas, clip.camera, fps=clip.fps)
                save_clip(root / "clips" / f"{cid}.json", clip)
                cam = clip.camera
                save_observations(root / "observations" / f"{cid}.json", obs, crop, (cam.fx, cam.fy, cam.cx, cam.cy))
                save_motion(root / "targets" / f"{cid}.json", target, clip.fps)
                entries.append({"id": cid, "kind": kind, "category": clip.category, "seed": seed, "split": split,
                                "clip": f"clips/{cid}.json", "observations": f"observations/{cid}.json",
                                "target": f"targets/{cid}.json"})
    drift = _drift_clip(cfg, skeleton)
    save_motion(root / "drift_walk.json", drift, cfg.data.fps)
    manifest = {"seed": cfg.seed, "clips": entries, "drift": "drift_walk.json"}
    write_json(root / "manifest.json", manifest)
    return {"command": "gen", "clips": len(entries), "dataset_dir": str(root)}


def _drift_clip(cfg, skeleton):
    """Ground-truth walk with a 5 mm/frame sideways root drift during planted frames."""
    clip = generate_clip("walk", cfg.seed, length=max(cfg.data.clip_length, 60), fps=cfg.data.fps, skeleton=skeleton)
    state, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans,
                                         clip.betas, clip.camera, fps=clip.fps)
    return inject_stance_drift(state, drift=(0.005, 0.0, 0.0))


def _manifest(cfg):
    root = Path(cfg.paths.dataset_dir)
    return root, read_json(root / "manifest.json")


def cmd_augment(cfg):
    """Close-up crops and recomputed hand visibility for every training clip variant."""
    root, manifest = _manifest(cfg)
    skeleton = _skeleton(cfg)
    rows = []
    for e in manifest["clips"]:
        if e["split"] != "train":
            continue
        clip = load_clip(root / e["clip"])
        for v in range(cfg.data.closeup_variants):
            full, _ = synthesize_observations(clip, noise=cfg.noise, seed=[cfg.seed, e["seed"], v, 0],
                                              skeleton=skeleton, augment=cfg.augment)
            crop = synthesize_closeup(full.body_kp, full.body_valid, seed=[cfg.seed, e["seed"], v, 1],
                                      config=cfg.augment, image_size=(clip.camera.width, clip.camera.height))
            obs, crop = synthesize_observations(clip, crop=crop, noise=cfg.noise, seed=[cfg.seed, e["seed"], v, 2],
                                                skeleton=skeleton, augment=cfg.augment)
            d = crop.to_dict()
            d.update({"id": e["id"], "variant": v, "v_lh": obs.lh_visible.astype(int).tolist(),
                      "v_rh": obs.rh_visible.astype(int).tolist()})
            rows.append(d)
    write_json(root / "augment_manifest.json", {"augment": _plain_cfg(cfg.augment), "crops": rows})
    return {"command": "augment", "crops": len(rows)}


def _plain_cfg(c):
    from dataclasses import asdict
    return json.loads(json.dumps(asdict(c)))


def _load_split(cfg, split):
    root, manifest = _manifest(cfg)
    return [(e, load_clip(root / e["clip"])) for e in manifest["clips"] if e["split"] == split]


def cmd_train(cfg):
    _check_feature_dims(cfg)
    skeleton = _skeleton(cfg)
    train_clips = [c for _, c in _load_split(cfg, "train")]
    held = [c for _, c in _load_split(cfg, "heldout")]
    if not train_clips:
        raise ConfigError("dataset has no training clips", "paths.dataset_dir")
    dataset = ClipDataset(train_clips, noise=cfg.noise, augment=cfg.augment, variants=cfg.data.closeup_variants,
                          seed=cfg.seed, skeleton=skeleton)
    heldout = build_heldout(held, noise=cfg.noise, seed=cfg.seed + 1, skeleton=skeleton) if held else None
    torch.manual_seed(cfg.seed)
    model = WholeBodyModel(cfg.model)
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, dataset, cfg.curriculum, weights={"I": cfg.loss_stage1, "II": cfg.loss_stage2},
                   log_path=out / "train_log.jsonl", heldout=heldout, dump_dir=out)
    ckpt = Path(cfg.paths.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    model.save(ckpt, extra={"stage_end": result.stage_end, "seed": cfg.seed})
    summary = {"command": "train", "steps": len(result.losses), "final_loss": result.losses[-1],
               "stage_end": result.stage_end, "checkpoint": str(ckpt)}
    write_json(out / "train_summary.json", summary)
    return summary


def cmd_predict(cfg, observations, out_path, fps=None):
    model = WholeBodyModel.load(cfg.paths.checkpoint)
    model.eval()
    obs, _ = load_observations(observations)
    state = predict(model, obs)
    save_motion(out_path, state, fps or cfg.data.fps)
    return {"command": "predict", "frames": state.num_frames, "out": str(out_path)}


def eval_motions(pred, gt, skeleton):
    pstate, fps = pred
    gstate, gfps = gt
    if pstate.num_frames != gstate.num_frames:
        raise ValueError("prediction and ground truth have different lengths")
    return evaluate(world_joints(pstate, skeleton), world_joints(gstate, skeleton), skeleton, gfps)


def cmd_eval(cfg, pred_path, gt_path, out_path=None, csv_path=None):
    skeleton = _skeleton(cfg)
    report = eval_motions(load_motion(pred_path), load_motion(gt_path), skeleton)
    d = report.to_dict()
    if out_path:
        write_json(out_path, d)
    if csv_path:
        row = {"pred": str(pred_path), "gt": str(gt_path), **report.flat()}
        new = not Path(csv_path).exists()
        with open(csv_path, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(row))
            if new:
                w.writeheader()
            w.writerow(row)
    return {"command": "eval", "report": d}


def refine_report(state, skeleton, cfg):
    res = refine_trajectory(state, skeleton, cfg.refinement)
    labels = state.contacts.detach().numpy()
    before = foot_sliding(state, skeleton, labels, cfg.refinement.threshold)
    after = foot_sliding(res.state, skeleton, labels, cfg.refinement.threshold)
    defined = not (np.isnan(before) or np.isnan(after))
    report = {"sliding_before_mm": before if defined else None, "sliding_after_mm": after if defined else None,
              "reduction": (1.0 - after / before) if defined and before > 0 else None,
              "defined": defined, "identity": res.identity, "objective": res.objective}
    return res, report


def cmd_refine(cfg, motion_path, out_path, report_path=None):
    skeleton = _skeleton(cfg)
    state, fps = load_motion(motion_path)
    res, report = refine_report(state, skeleton, cfg)
    save_motion(out_path, res.state, fps)
    if report_path:
        write_json(report_path, report)
    return {"command": "refine", "report": report, "out": str(out_path)}


def cmd_demo(cfg):
    """gen -> train -> predict on held-out clips -> eval -> refine; prints a summary table."""
    out = Path(cfg.paths.output_dir)
    cmd_gen(cfg)
    train_summary = cmd_train(cfg)
    root, manifest = _manifest(cfg)
    skeleton = _skeleton(cfg)
    rows = []
    for e in manifest["clips"]:
        if e["split"] != "heldout":
            continue
        pred_path = out / "predictions" / f"{e['id']}.json"
        cmd_predict(cfg, root / e["observations"], pred_path)
        report = cmd_eval(cfg, pred_path, root / e["target"], out / "metrics" / f"{e['id']}.json")["report"]
        rows.append({"clip": e["id"], "all_pa_mpjpe": report["all"]["pa_mpjpe"],
                     "hands_pa_mpjpe": report["hands"]["pa_mpjpe"], "all_mpjve": report["all"]["mpjve"],
                     "all_jitter": report["all"]["jitter"]})
    refine = cmd_refine(cfg, root / manifest["drift"], out / "drift_refined.json", out / "drift_report.json")["report"]
    summary = {"train": {"final_loss": train_summary["final_loss"], "stage_end": train_summary["stage_end"]},
               "heldout": rows,
               "refine": {k: refine[k] for k in ("sliding_before_mm", "sliding_after_mm", "reduction")}}
    write_json(out / "summary.json", summary)
    print(format_table(rows, refine))
    return {"command": "demo", "summary": str(out / "summary.json")}


def format_table(rows, refine):
    head = f"{'clip':<28}{'PA-MPJPE':>10}{'hand PA':>10}{'MPJVE':>10}{'jitter':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['clip']:<28}{r['all_pa_mpjpe']:>10.2f}{r['hands_pa_mpjpe']:>10.2f}"
                     f"{r['all_mpjve']:>10.1f}{r['all_jitter']:>10.2f}")
    if refine["defined"]:
        lines.append(f"foot sliding {refine['sliding_before_mm']:.3f} -> {refine['sliding_after_mm']:.3f} mm "
                     f"({100 * refine['reduction']:.1f}% reduction)")
    return "\n".join(lines)


# -- entry point ------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="wholebody", description="Synthetic whole-body motion recovery toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--deterministic", action="store_true", help="single-threaded deterministic numerics")
        sp.add_argument("--threads", type=int, help="torch intra-op threads")
        return sp

    add("gen", "generate synthetic clips, observations and targets")
    add("augment", "write close-up crops and hand visibility for training clips")
    add("train", "run the two-stage curriculum and save a checkpoint")
    sp = add("predict", "predict a motion file from an observation file")
    sp.add_argument("--observations", required=True)
    sp.add_argument("--out", required=True)
    sp = add("eval", "compare two motion files")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--out", help="report JSON path")
    sp.add_argument("--csv", help="append one CSV row per call")
    sp = add("refine", "contact-aware root trajectory refinement")
    sp.add_argument("--motion", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", help="before/after foot-sliding report JSON")
    add("demo", "gen -> train -> eval -> refine on a tiny configuration")
    return p


def _fail(code, exc, **extra):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    parser = _parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(rest)
        if args.deterministic:
            overrides["deterministic"] = True
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = load_config(args.config, overrides, base=DEMO_PRESET if args.command == "demo" else None)
        _setup_numerics(cfg)
        if args.command == "gen":
            res = cmd_gen(cfg)
        elif args.command == "augment":
            res = cmd_augment(cfg)
        elif args.command == "train":
            res = cmd_train(cfg)
        elif args.command == "predict":
            res = cmd_predict(cfg, args.observations, args.out)
        elif args.command == "eval":
            res = cmd_eval(cfg, args.pred, args.gt, args.out, args.csv)
        elif args.command == "refine":
            res = cmd_refine(cfg, args.motion, args.out, args.report)
        else:
            out = Path(cfg.paths.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            dump_config(cfg, out / "config.yaml")
            res = cmd_demo(cfg)
        if args.command != "demo":
            print(json.dumps(res, default=float))
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, key=exc.key)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc, dump_path=exc.dump_path)
    except (OSError, json.JSONDecodeError, FormatError) as exc:
        return _fail(EXIT_IO, exc)
    except (WholeBodyError, ValueError, KeyError) as exc:
        # malformed inputs that got past config validation
        return _fail(EXIT_CONFIG, exc)


if __name__ == "__main__":
    sys.exit(main())
