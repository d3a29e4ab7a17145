"""Command-line entry points tying the pipeline together.

Subcommands: extract, train-tokenizer, train-prior, eval-contact,
train-policy, report. Every run echoes its full configuration and seed into
the output directory so artifacts can be regenerated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

OUTPUT_ROOT_ENV = "HANDPRIOR_OUTPUT_ROOT"


def _resolve_output(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _echo_config(out_dir: str, name: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(out_dir, f"{name}_config.json"), "w") as f:
        json.dump(cfg, f, sort_keys=True, indent=2)


def cmd_extract(args) -> int:
    from . import synth
    from .extraction import ExtractionConfig, build_dataset

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "extract", args)
    specs = synth.make_scene_corpus(
        args.num_sequences, base_seed=args.seed,
        timeout_every=args.timeout_every, degenerate_every=args.degenerate_every,
    )
    sequences = {}
    for spec in specs:
        seq, oracle = synth.generate_approach_sequence(spec)
        sequences[seq.ground_truth.video_id] = (seq, oracle)

    result = build_dataset(
        videos=[(vid, seq.num_frames) for vid, (seq, _) in sequences.items()],
        oracle_factory=lambda vid: sequences[vid][1],
        output_dir=out_dir,
        config=ExtractionConfig(seed=args.seed),
        frame_getter=lambda vid, frame: sequences[vid][0].frame_image(frame),
    )
    print(f"wrote {len(result.records)} records to {out_dir}/manifest.jsonl")
    print(f"status counts: {result.status_counts}")
    return 0


def cmd_train_tokenizer(args) -> int:
    from . import synth, tokenizer

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "train_tokenizer", args)
    if args.manifest:
        from .extraction import HandPose, read_manifest

        records = read_manifest(args.manifest)
        poses = [HandPose(np.asarray(r.hand_pose).reshape(21, 3)) for r in records]
    else:
        corpus = synth.generate_pose_corpus(synth.SynthPoseSpec(
            num_prototypes=args.prototypes, noise_std=args.noise_std,
            corpus_size=args.corpus_size, seed=args.seed,
        ))
        poses = corpus.poses
    config = tokenizer.TokenizerConfig(
        num_codebooks=args.num_codebooks, codebook_size=args.codebook_size,
        code_dim=args.code_dim, epochs=args.epochs, seed=args.seed,
    )
    model, report = tokenizer.train_tokenizer(poses, config)
    tokenizer.save_tokenizer(model, os.path.join(out_dir, "tokenizer.pt"))
    with open(os.path.join(out_dir, "tokenizer_report.json"), "w") as f:
        json.dump({"final_loss": report.final_loss,
                   "loss_history": report.loss_history,
                   "utilization": report.utilization}, f, indent=2)
    print(f"final reconstruction loss {report.final_loss:.6f}; "
          f"mean utilization {np.mean(report.utilization):.4f}")
    return 0


def _load_prior_samples(manifest_path: str):
    from PIL import Image

    from .extraction import HandPose, read_manifest
    from .geometry import Point2D
    from .prior_model import PredictionSample

    records = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for r in records:
        img = np.asarray(Image.open(os.path.join(base, r.image_path)).convert("RGB"))
        samples.append(PredictionSample(
            image=img,
            contact_points=(Point2D(*r.thumb_xy), Point2D(*r.index_xy)),
            hand_tokens=r.tokens,
            raw_hand_pose=HandPose(np.asarray(r.hand_pose).reshape(21, 3)),
        ))
    return records, samples


def cmd_train_prior(args) -> int:
    from . import tokenizer as tok
    from .extraction import write_manifest
    from .prior_model import (PriorModelConfig, load_prior, save_prior,
                              train_prior, write_train_log)

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "train_prior", args)
    records, samples = _load_prior_samples(args.manifest)

    hand_mode = "off" if args.no_hand_loss else (
        "regression" if args.hand_regression else "tokens")
    config = PriorModelConfig(
        embedding_dim=args.embedding_dim,
        image_size=samples[0].image.shape[0] if samples else 128,
        lambda_hand=args.lambda_hand,
        hand_head_mode=hand_mode,
        contact_head=not args.no_contact_loss,
        encoder_kind=args.encoder,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        iterations=args.iterations,
        seed=args.seed,
    )
    if hand_mode == "tokens":
        if not args.tokenizer:
            print("error: tokens mode requires --tokenizer", file=sys.stderr)
            return 1
        tok_model = tok.load_tokenizer(args.tokenizer)
        if any(s.hand_tokens is None for s in samples):
            for r, s in zip(records, samples):
                s.hand_tokens = tok.tokenize(tok_model, s.raw_hand_pose)
                r.tokens = s.hand_tokens
            write_manifest(records, args.manifest)

    model, start_step = (None, 0)
    if args.resume:
        model, start_step = load_prior(args.resume)
    result = train_prior(samples, config, checkpoint_dir=out_dir,
                         model=model, start_step=start_step)
    save_prior(result.model, os.path.join(out_dir, "prior.pt"),
               step=config.iterations)
    mode = "a" if args.resume else "w"
    with open(os.path.join(out_dir, "train_log.jsonl"), mode) as f:
        for e in result.log:
            f.write(e.to_json() + "\n")
    if result.log:
        print(f"step {result.log[-1].step}: L_total {result.log[-1].loss_total:.4f}")
    return 0


def cmd_eval_contact(args) -> int:
    import torch

    from .contact_eval import (CvaeConfig, evaluate_head,
                               image_to_heatmap_coords, train_cvae)
    from .geometry import Point2D
    from .prior_model import image_to_tensor, load_prior

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "eval_contact", args)
    model, _ = load_prior(args.prior)
    model.eval()
    records, samples = _load_prior_samples(args.manifest)
    feats, pts, ids = [], [], []
    with torch.no_grad():
        for r, s in zip(records, samples):
            feats.append(model.encode(image_to_tensor(s.image)[None])[0].numpy())
            h, w = s.image.shape[:2]
            p = image_to_heatmap_coords(s.contact_points[0], w, h)
            pts.append([p.x, p.y])
            ids.append(r.sample_id)
    feats = np.stack(feats)
    pts = np.asarray(pts)
    cfg = CvaeConfig(feature_dim=feats.shape[1], iterations=args.iterations,
                     seed=args.seed)
    trained = train_cvae(feats, pts, cfg)
    recs, mean_sim, mean_nss = evaluate_head(trained.head, feats, pts, ids,
                                             seed=args.seed)
    with open(os.path.join(out_dir, "contact_eval.jsonl"), "w") as f:
        for r in recs:
            f.write(json.dumps({"sample_id": r.sample_id, "SIM": r.sim,
                                "NSS": r.nss}) + "\n")
        f.write(json.dumps({"encoder_name": os.path.basename(args.prior),
                            "mean_SIM": mean_sim, "mean_NSS": mean_nss,
                            "n_samples": len(recs)}) + "\n")
    print(f"mean SIM {mean_sim:.4f}, mean NSS {mean_nss:.4f} over {len(recs)} samples")
    return 0


def cmd_train_policy(args) -> int:
    from . import policy as pol

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "train_policy", args)

    def env_factory(view: int):
        return pol.toy_env_reach_grasp_place(view=view)

    if args.encoder == "pixel":
        def encoder_factory(view: int):
            return pol.PixelFeatureEncoder()
    elif args.encoder == "centroid":
        def encoder_factory(view: int):
            return pol.CentroidFeatureEncoder()
    else:
        from .prior_model import load_prior

        prior, _ = load_prior(args.encoder)

        def encoder_factory(view: int):
            return pol.PriorFeatureEncoder(prior)

    config = pol.ProtocolConfig(
        views=args.views, seeds=args.policy_seeds,
        train_steps=args.train_steps, eval_every=args.eval_every,
        rollouts_per_eval=args.rollouts, num_demos=args.demos,
        action_noise_sigma=args.action_noise, base_seed=args.seed,
    )
    report = pol.run_protocol(env_factory, encoder_factory, config)
    with open(os.path.join(out_dir, "protocol_report.json"), "w") as f:
        f.write(report.to_json())
    print(f"final score {report.final_score:.1f} over {len(report.runs)} runs")
    return 0


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .policy import ProtocolReport

    out_dir = _resolve_output(args.output)
    _echo_config(out_dir, "report", args)
    with open(args.protocol_report) as f:
        report = ProtocolReport.from_json(f.read())
    lines = ["run,eval_index,success_rate"]
    for r in report.runs:
        for i, rate in enumerate(r.rates):
            lines.append(f"view{r.view}_seed{r.seed},{i},{rate}")
    with open(os.path.join(out_dir, "success_curves.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
    fig, ax = plt.subplots()
    for r in report.runs:
        ax.plot(range(1, len(r.rates) + 1), r.rates,
                label=f"view {r.view} / seed {r.seed}")
    ax.set_xlabel("evaluation index")
    ax.set_ylabel("success rate [%]")
    ax.set_title(f"final score {report.final_score:.1f}")
    ax.legend(fontsize=6)
    fig.savefig(os.path.join(out_dir, "success_curves.png"), dpi=120)
    plt.close(fig)
    print(f"final score {report.final_score:.1f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handprior",
                                description="manipulation-prior pipeline")
    p.add_argument("--seed", type=int, default=0, help="global RNG seed")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="run supervision extraction on a synthetic corpus")
    ex.add_argument("--num-sequences", type=int, default=20)
    ex.add_argument("--timeout-every", type=int, default=0)
    ex.add_argument("--degenerate-every", type=int, default=0)
    ex.add_argument("-o", "--output", required=True)
    ex.set_defaults(func=cmd_extract)

    tt = sub.add_parser("train-tokenizer", help="train the hand pose tokenizer")
    tt.add_argument("--manifest", help="train on poses from this manifest")
    tt.add_argument("--prototypes", type=int, default=50)
    tt.add_argument("--corpus-size", type=int, default=5000)
    tt.add_argument("--noise-std", type=float, default=0.02)
    tt.add_argument("--epochs", type=int, default=30)
    tt.add_argument("--num-codebooks", type=int, default=8)
    tt.add_argument("--codebook-size", type=int, default=1024)
    tt.add_argument("--code-dim", type=int, default=16)
    tt.add_argument("-o", "--output", required=True)
    tt.set_defaults(func=cmd_train_tokenizer)

    tp = sub.add_parser("train-prior", help="train the contact/pose prior")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--tokenizer", help="tokenizer checkpoint (tokens mode)")
    tp.add_argument("--no-contact-loss", action="store_true")
    tp.add_argument("--no-hand-loss", action="store_true")
    tp.add_argument("--hand-regression", action="store_true")
    tp.add_argument("--lambda-hand", type=float, default=1.0)
    tp.add_argument("--embedding-dim", type=int, default=128)
    tp.add_argument("--encoder", choices=["conv", "transformer"], default="conv")
    tp.add_argument("--lr", type=float, default=5e-5)
    tp.add_argument("--batch-size", type=int, default=32)
    tp.add_argument("--iterations", type=int, default=3000)
    tp.add_argument("--resume", help="checkpoint to resume from")
    tp.add_argument("-o", "--output", required=True)
    tp.set_defaults(func=cmd_train_prior)

    ec = sub.add_parser("eval-contact", help="cVAE contact prediction evaluation")
    ec.add_argument("--prior", required=True)
    ec.add_argument("--manifest", required=True)
    ec.add_argument("--iterations", type=int, default=3000)
    ec.add_argument("-o", "--output", required=True)
    ec.set_defaults(func=cmd_eval_contact)

    po = sub.add_parser("train-policy", help="behavior cloning protocol on the toy env")
    po.add_argument("--encoder", default="centroid",
                    help="'centroid', 'pixel', or a prior checkpoint path")
    po.add_argument("--views", type=int, default=3)
    po.add_argument("--policy-seeds", type=int, default=3)
    po.add_argument("--train-steps", type=int, default=20000)
    po.add_argument("--eval-every", type=int, default=1000)
    po.add_argument("--rollouts", type=int, default=50)
    po.add_argument("--demos", type=int, default=25)
    po.add_argument("--action-noise", type=float, default=0.05)
    po.add_argument("-o", "--output", required=True)
    po.set_defaults(func=cmd_train_policy)

    rp = sub.add_parser("report", help="plot success-rate curves from a protocol report")
    rp.add_argument("--protocol-report", required=True)
    rp.add_argument("-o", "--output", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for attr in ("manifest", "prior", "tokenizer", "resume", "protocol_report"):
        path = getattr(args, attr, None)
        if path and not os.path.exists(path):
            print(f"error: {attr} path not found: {path}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
