"""Command-line surface: dataset generation, training, sampling, embedding,
evaluation, trend sweeps, and the gradient-check suite."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, config_to_text, load_config, make_config
from .data import (SyntheticSpec, gen_dataset, load_split, read_ppm, write_ppm)
from .encoders import tokenize
from .errors import ConfigError
from .evaluation import (build_class_bank, retrieve, trend_sweeps,
                         write_metric_csv, write_sweep_csv, zero_shot_classify)
from .model import bundle_from_checkpoint
from .sampling import GuidanceConfig, sample_image, sample_text_embedding
from .training import train


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else make_config()
    if args.seed is not None:
        cfg = make_config(**{**_cfg_dict(cfg), "seed": args.seed})
    return cfg


def _cfg_dict(cfg):
    from dataclasses import asdict
    return asdict(cfg)


def _add_common(p):
    p.add_argument("--config", help="run config file (flat key = value lines)")
    p.add_argument("--seed", type=int, help="override the config seed")


def _guidance(args, cfg, default_steps, default_w):
    steps = args.steps if args.steps is not None else default_steps
    w = args.guidance if args.guidance is not None else default_w
    if steps > cfg.timesteps:
        raise ConfigError(f"config key 'sample_steps': {steps} exceeds timesteps "
                          f"{cfg.timesteps}")
    return GuidanceConfig(w=w, steps=steps)


def cmd_gen_data(args):
    cfg = _config_from_args(args)
    spec = SyntheticSpec(train_size=cfg.train_size, val_size=cfg.val_size,
                         test_size=cfg.test_size)
    paths = gen_dataset(spec, cfg.seed, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_train(args):
    cfg = _config_from_args(args)
    split = load_split(args.data, "train")
    total = cfg.max_steps

    def progress(step, report):
        if args.verbose and (step % 100 == 0 or step == total):
            print(f"step {step}/{total} l_ig={report.l_ig:.4f} "
                  f"l_ita={report.l_ita:.4f} grad={report.grad_norm:.3f}",
                  flush=True)

    final = train(cfg, split.images, split.token_ids, args.out,
                  progress=progress)
    print(final)
    return 0


def cmd_sample(args):
    bundle, ck = bundle_from_checkpoint(args.checkpoint)
    g = _guidance(args, ck.config, ck.config.sample_steps, ck.config.sample_guidance)
    ids = tokenize(args.caption, bundle.text_encoder.vocab)
    img = sample_image(ids, bundle, g, args.seed if args.seed is not None else 0)
    write_ppm(args.out, img)
    print(args.out)
    return 0


def cmd_embed(args):
    bundle, ck = bundle_from_checkpoint(args.checkpoint)
    g = _guidance(args, ck.config, ck.config.eval_steps, ck.config.eval_guidance)
    if args.image:
        image = read_ppm(args.image)
    else:
        split = load_split(args.data, args.split)
        image = split.images[args.index]
    emb = sample_text_embedding(image, bundle, g, args.seed if args.seed is not None else 0)
    save_checkpoint(args.out, ck.config, ck.step, {"embedding": emb}, {})
    print(args.out)
    return 0


def cmd_classify(args):
    bundle, ck = bundle_from_checkpoint(args.checkpoint)
    g = _guidance(args, ck.config, ck.config.eval_steps, ck.config.eval_guidance)
    split = load_split(args.data, args.split)
    bank = build_class_bank(bundle.text_encoder)
    base_seed = args.seed if args.seed is not None else 0
    accs = []
    for s in range(args.eval_seeds):
        _, acc = zero_shot_classify(split.images, split.class_ids, bank, bundle,
                                    g, seed=base_seed + s)
        accs.append(acc)
    mean = float(np.mean(accs))
    var = float(np.var(accs))
    print(f"accuracy {mean:.4f}" + (f" (var {var:.2e} over {len(accs)} seeds)"
                                    if len(accs) > 1 else ""))
    if args.csv:
        write_metric_csv(args.csv, [("accuracy_mean", mean), ("accuracy_var", var)])
    return 0


def cmd_retrieve(args):
    bundle, ck = bundle_from_checkpoint(args.checkpoint)
    g = _guidance(args, ck.config, ck.config.eval_steps, ck.config.eval_guidance)
    split = load_split(args.data, args.split)
    n = min(args.pairs, len(split.captions))
    report = retrieve(split.images[:n], split.captions[:n], bundle, g,
                      seed=args.seed if args.seed is not None else 0)
    for direction, scores in (("image_to_text", report.i2t), ("text_to_image", report.t2i)):
        for k, v in scores.items():
            print(f"{direction}_r@{k} {v:.4f}")
    print(f"mean_r@1 {report.mean_r1:.4f}")
    if args.csv:
        rows = [(f"i2t_r{k}", v) for k, v in report.i2t.items()]
        rows += [(f"t2i_r{k}", v) for k, v in report.t2i.items()]
        rows.append(("mean_r1", report.mean_r1))
        write_metric_csv(args.csv, rows)
    return 0


def cmd_sweep(args):
    bundle, ck = bundle_from_checkpoint(args.checkpoint)
    split = load_split(args.data, args.split)
    n = min(args.limit, len(split.captions)) if args.limit else len(split.captions)
    bank = build_class_bank(bundle.text_encoder)
    rows = trend_sweeps(bundle, split.images[:n], split.class_ids[:n], bank,
                        seed=args.seed if args.seed is not None else 0)
    os.makedirs(args.out_dir, exist_ok=True)
    print(f"{'axis':<10}{'value':<8}accuracy")
    for axis, value, acc in rows:
        print(f"{axis:<10}{value:<8g}{acc:.4f}")
    write_sweep_csv(os.path.join(args.out_dir, "sweep_guidance.csv"), rows, "guidance")
    write_sweep_csv(os.path.join(args.out_dir, "sweep_steps.csv"), rows, "steps")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import end_to_end_check, negative_control, run_op_suite

    errors = run_op_suite(seeds=args.seeds)
    worst_name = max(errors, key=errors.get)
    for name in sorted(errors):
        print(f"{name:<22}{errors[name]:.3e}")
    e2e, n_params = end_to_end_check()
    neg = negative_control()
    print(f"{'end_to_end':<22}{e2e:.3e}  ({n_params} params)")
    print(f"{'negative_control':<22}{neg:.3e}  (expected >> 1e-2)")
    ok = errors[worst_name] <= 1e-4 and e2e <= 1e-3 and neg > 1e-2
    print(f"max op error {errors[worst_name]:.3e} ({worst_name}); "
          + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualdiff",
        description="Toy dual-task latent diffusion: text-to-image generation "
                    "plus diffusion-based image-text alignment.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run the unified training loop")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample an image from a caption")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("embed", help="sample a text embedding for an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--image", help="PPM image path (instead of --data/--index)")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("classify", help="zero-shot classification on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--eval-seeds", type=int, default=1)
    p.add_argument("--csv")
    _add_common(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("retrieve", help="bidirectional image-text retrieval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--steps", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--csv")
    _add_common(p)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("sweep", help="guidance/steps trend sweeps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, help="cap the number of images")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
