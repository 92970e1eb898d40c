"""Command-line interface.

Subcommands: train, edit, eval, ablate, train-oracle, serve. Training,
evaluation, and the ablation sweep run locally as batch jobs; `serve` exposes
the editing operations over HTTP, and `edit --server` talks to such a
service instead of loading a checkpoint itself.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import base64
import os
import sys

import torch

from .config import build_dataset, load_config, write_manifest
from .data import SpriteDataset, SpriteSpec
from .editing import edit_grid, load_png, predict_labels, save_png, transfer
from .errors import ConfigError, DataError, NumericsError
from .evaluation import (attribute_match_rate, evaluate_model, load_oracle,
                         run_ablation, save_oracle, train_oracle)
from .networks import load_checkpoint
from .seeding import derive_seed
from .training import train


def _parse_bits(text: str, n: int | None, name: str) -> torch.Tensor:
    try:
        bits = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{name} must be comma-separated 0/1 values, got {text!r}") from None
    if any(b not in (0, 1) for b in bits):
        raise ConfigError(f"{name} must contain only 0 and 1, got {text!r}")
    if n is not None and len(bits) != n:
        raise ConfigError(f"{name} must have {n} entries for this model, got {len(bits)}")
    return torch.tensor(bits, dtype=torch.float32)


def _parse_bit_rows(text: str, count: int, n: int, name: str) -> list[torch.Tensor]:
    rows = [_parse_bits(part, n, name) for part in text.split(";")]
    if len(rows) == 1 and count > 1:
        rows = rows * count
    if len(rows) != count:
        raise ConfigError(f"{name} has {len(rows)} vectors for {count} images")
    return rows


def _check_image(img: torch.Tensor, size: int, path) -> torch.Tensor:
    if img.shape != (3, size, size):
        raise ConfigError(
            f"{path}: model expects {size}x{size} RGB images, got {tuple(img.shape)}"
        )
    return img


def cmd_train(args) -> int:
    overrides: dict = {}
    if args.out:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["train"] = {"total_steps": args.steps}
    if args.data:
        overrides["data"] = {"source": args.data}
    config = load_config(args.config, overrides=overrides)
    dataset = build_dataset(config)
    manifest = write_manifest(config.out_dir, config, "train")
    print(f"manifest: {manifest}")

    last = config.train.total_steps
    every = max(1, last // 20)

    def progress(step, report):
        if step % every == 0 or step == last:
            print(f"step {step}/{last}  L_G={report.l_g:.4f}  "
                  f"L_D={report.l_d:.4f}  L_rec={report.l_rec:.4f}", flush=True)

    state, _ = train(dataset, config.model, config.train, config.loss,
                     out_dir=config.out_dir, resume=args.resume, progress=progress)
    final = os.path.join(config.out_dir, f"checkpoint_{state.step:07d}.zip")
    if os.path.exists(final):
        print(f"finished at step {state.step}; checkpoint: {final}")
    else:
        print(f"finished at step {state.step}; no new steps were run")
    return 0


def cmd_edit(args) -> int:
    if args.server:
        return _edit_via_server(args)
    if not args.checkpoint:
        raise ConfigError("edit requires --checkpoint (or --server URL)")
    ckpt = load_checkpoint(args.checkpoint)
    generator, critic = ckpt.generator.eval(), ckpt.critic.eval()
    n, size = ckpt.config.n_attrs, ckpt.config.image_size

    sources = [_check_image(load_png(p), size, p) for p in args.source]
    exemplars = [_check_image(load_png(p), size, p) for p in args.exemplar]
    mask = _parse_bits(args.mask, n, "--mask")

    if args.predict_labels:
        ex_rows = [predict_labels(critic, img) for img in exemplars]
        src_rows = [predict_labels(critic, img) for img in sources]
    else:
        if not args.ex_labels:
            raise ConfigError("provide --ex-labels or --predict-labels")
        ex_rows = _parse_bit_rows(args.ex_labels, len(exemplars), n, "--ex-labels")
        src_rows = None
        if args.mode == "mix":
            if not args.src_labels:
                raise ConfigError("mode=mix needs --src-labels (or --predict-labels)")
            src_rows = _parse_bit_rows(args.src_labels, len(sources), n, "--src-labels")

    grid = args.grid or len(sources) > 1 or len(exemplars) > 1
    if grid:
        if src_rows is None:
            src_rows = [torch.zeros(n)] * len(sources)
        out = edit_grid(generator, sources, src_rows, exemplars, ex_rows,
                        mask, args.mode)
    else:
        src = src_rows[0] if src_rows else None
        out = transfer(generator, sources[0], exemplars[0], ex_rows[0],
                       mask, args.mode, src)
    save_png(out, args.out)
    print(args.out)
    return 0


def _edit_via_server(args) -> int:
    import httpx

    if len(args.source) != 1 or len(args.exemplar) != 1 or args.grid:
        raise ConfigError("--server mode edits one source/exemplar pair per call")

    def b64(path):
        with open(path, "rb") as fh:
            return base64.b64encode(fh.read()).decode("ascii")

    payload = {"source_png": b64(args.source[0]), "exemplar_png": b64(args.exemplar[0]),
               "mask": [int(v) for v in args.mask.split(",")], "mode": args.mode,
               "predict_labels": args.predict_labels}
    if args.ex_labels:
        payload["ex_labels"] = [int(v) for v in args.ex_labels.split(",")]
    if args.src_labels:
        payload["src_labels"] = [int(v) for v in args.src_labels.split(",")]
    resp = httpx.post(args.server.rstrip("/") + "/transfer", json=payload, timeout=120)
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text) if resp.content else resp.text
        raise ConfigError(f"server rejected the request ({resp.status_code}): {detail}")
    body = resp.json()
    for note in body.get("warnings", []):
        print(f"warning: {note}", file=sys.stderr)
    with open(args.out, "wb") as fh:
        fh.write(base64.b64decode(body["image_png"]))
    print(args.out)
    return 0


def _eval_dataset(data_arg: str, model_config, seed: int):
    if data_arg == "sprites":
        if model_config.n_attrs != len(SpriteSpec().attributes):
            raise ConfigError(
                f"the default sprite set has {len(SpriteSpec().attributes)} attributes "
                f"but the checkpoint has n_attrs={model_config.n_attrs}; pass a config file"
            )
        return SpriteDataset(SpriteSpec(image_size=model_config.image_size),
                             seed=derive_seed(seed, "data"))
    config = load_config(data_arg)
    if (config.model.image_size, config.model.n_attrs) != (
            model_config.image_size, model_config.n_attrs):
        raise ConfigError(
            f"config model ({config.model.image_size}px, {config.model.n_attrs} attrs) "
            f"does not match checkpoint ({model_config.image_size}px, "
            f"{model_config.n_attrs} attrs)"
        )
    return build_dataset(config)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    oracle = load_oracle(args.oracle)
    if (oracle.image_size, oracle.n_attrs) != (ckpt.config.image_size, ckpt.config.n_attrs):
        raise ConfigError(
            f"oracle ({oracle.image_size}px, {oracle.n_attrs} attrs) does not match "
            f"checkpoint ({ckpt.config.image_size}px, {ckpt.config.n_attrs} attrs)"
        )
    dataset = _eval_dataset(args.data, ckpt.config, args.seed)
    report = evaluate_model(ckpt.generator, dataset, oracle,
                            n_samples=args.samples, seed=args.seed)
    report.save(args.out)
    print(report.format_table())
    print(f"report written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    overrides = {"out_dir": args.out} if args.out else None
    config = load_config(args.config, overrides=overrides)
    try:
        d_values = tuple(int(v) for v in args.d.split(","))
    except ValueError:
        raise ConfigError(f"--d must be comma-separated integers, got {args.d!r}") from None
    dataset = build_dataset(config)
    write_manifest(config.out_dir, config, "ablate")
    if args.oracle:
        oracle = load_oracle(args.oracle)
    elif config.data.source == "sprites":
        print("training a fresh oracle classifier for evaluation", flush=True)
        oracle = train_oracle(dataset, seed=config.seed)
        save_oracle(os.path.join(config.out_dir, "oracle.pt"), oracle)
    else:
        raise ConfigError("ablate on celeba needs --oracle (no procedural ground truth)")

    last = config.train.total_steps
    every = max(1, last // 10)

    def progress(step, report):
        if step % every == 0:
            print(f"  step {step}/{last}  L_G={report.l_g:.4f}", flush=True)

    reports = run_ablation(dataset, config.model, config.train, config.loss, oracle,
                           d_values=d_values, out_dir=config.out_dir, progress=progress)
    for d in d_values:
        rep = reports[d]
        rates = [rep.single_attr[a]["target_rate"] for a in rep.attributes]
        print(f"d={d}: recon MAE {rep.recon_mae:.4f}, FID {rep.fid_recon:.3f}, "
              f"mean transfer rate {sum(rates) / len(rates):.3f}")
    print(f"report and montage written to {config.out_dir}")
    return 0


def cmd_train_oracle(args) -> int:
    config = load_config(args.config, overrides={"seed": args.seed}
                         if args.seed is not None else None)
    dataset = build_dataset(config)
    oracle = train_oracle(dataset, steps=args.steps, seed=config.seed)
    save_oracle(args.out, oracle)
    check = dataset.sample_batch(min(512, len(dataset)),
                                 derive_seed(config.seed, "oracle-check"))
    rates = attribute_match_rate(oracle, check.images, check.labels)
    pairs = ", ".join(f"{a}={r:.3f}" for a, r in zip(dataset.attributes, rates))
    print(f"oracle saved to {args.out}; self-check match rates: {pairs}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.checkpoint), host=args.host, port=args.port,
                log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attrswap",
        description="exemplar-based attribute editing: train, edit, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="YAML run config (defaults apply if omitted)")
    p.add_argument("--data", choices=["sprites", "celeba"], help="override data source")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--steps", type=int, help="override total training steps")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--resume", help="checkpoint archive to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="edit images with a trained model")
    p.add_argument("--checkpoint", help="checkpoint archive")
    p.add_argument("--server", help="edit via a running service instead")
    p.add_argument("--source", nargs="+", required=True, help="source PNG path(s)")
    p.add_argument("--exemplar", nargs="+", required=True, help="exemplar PNG path(s)")
    p.add_argument("--ex-labels", help="exemplar labels, e.g. 1,0,1 (';'-separated per image)")
    p.add_argument("--src-labels", help="source labels (required for mode=mix)")
    p.add_argument("--mask", required=True, help="attributes to transfer, e.g. 1,0,0")
    p.add_argument("--mode", choices=["mix", "replace"], default="mix")
    p.add_argument("--predict-labels", action="store_true",
                   help="fill labels from the model's classifier head")
    p.add_argument("--grid", action="store_true",
                   help="emit a sources-by-exemplars comparison grid")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="sprites",
                   help="'sprites' or a YAML config describing the dataset")
    p.add_argument("--oracle", required=True, help="oracle classifier file")
    p.add_argument("--out", default="report.json")
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="down-sampling depth sweep")
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--d", default="3,4,5", help="depths to sweep, e.g. 3,4,5")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--oracle", help="oracle classifier file (trained fresh if omitted)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("train-oracle", help="train the evaluation oracle classifier")
    p.add_argument("--config", help="YAML run config describing the dataset")
    p.add_argument("--steps", type=int, default=1200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output oracle file")
    p.set_defaults(func=cmd_train_oracle)

    p = sub.add_parser("serve", help="serve editing over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
