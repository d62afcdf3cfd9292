"""Command-line driver.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
failure, 3 non-finite numbers during training or sampling.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .flow_matching import NumericalError
from .pipeline import ConfigError, PipelineConfig

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _say(msg: str) -> None:
    print(msg, flush=True)


def _write_clip_arg(clip, out: str) -> Path:
    from .media import write_clip

    return write_clip(clip, out)


def _clip_array(frames) -> np.ndarray:
    return np.clip(np.asarray(frames, np.float32), 0.0, 1.0)


# --- degrade --------------------------------------------------------------------------


def cmd_degrade_flow(args, cfg: PipelineConfig) -> int:
    from .degrade import degrade_clip
    from .media import read_clip
    from .tensor import Rng

    section = cfg.flow_degrade
    workers = args.workers or section["workers"]
    clip = read_clip(args.input)
    out = degrade_clip(clip, cfg.flow_params(), Rng(section["seed"]), workers=workers)
    path = _write_clip_arg(out, args.output)
    _say(f"wrote {out.num_frames} degraded frames to {path}")
    return EXIT_OK


def _sdedit_field(spec: str, frames: np.ndarray, latent: np.ndarray, seed: int):
    """Velocity field for the pixel-latent of ``frames``: the toy prior or a checkpoint."""
    from .flow_matching import ContractiveToyVelocity

    if spec == "toy":
        return ContractiveToyVelocity(mean=float(latent.mean()), std=float(latent.std()))
    from .codec import encode
    from .model import downsample_frames, load_checkpoint
    from .model.training import condition_for
    from .tensor import Rng

    model, _, _ = load_checkpoint(spec)
    lr = encode(downsample_frames(frames, model.config.upsample))
    cond = condition_for(model, lr, Rng(seed).child("sdedit-cond"), aug_level=0.0)

    def field_(z, t, _c=None):
        return np.asarray(model(z, t, cond))

    return field_


def cmd_degrade_sdedit(args, cfg: PipelineConfig) -> int:
    from .codec import decode_frames, encode
    from .flow_matching import sdedit_degrade
    from .media import Clip, read_clip
    from .tensor import Rng

    section = cfg.sdedit
    alpha = section["alpha"] if args.alpha is None else args.alpha
    steps = section["steps"] if args.steps is None else args.steps
    seed = section["seed"] if args.seed is None else args.seed
    clip = read_clip(args.input)
    latent = encode(clip.frames)
    field_ = _sdedit_field(args.model, clip.frames, latent, seed)
    out = sdedit_degrade(field_, latent, alpha, steps, Rng(seed).child("sdedit"))
    frames = _clip_array(decode_frames(np.asarray(out, np.float32)))
    path = _write_clip_arg(Clip(frames, clip.frame_rate), args.output)
    _say(f"wrote sdedit output (alpha={alpha}, steps={steps}) to {path}")
    return EXIT_OK


# --- curate ---------------------------------------------------------------------------


def _clip_entries(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ConfigError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir() or p.suffix.lower() == ".y4m")


def cmd_curate(args, cfg: PipelineConfig) -> int:
    from .curation import curate_batch, write_verdicts

    config = cfg.curation_config()
    verdicts = curate_batch(_clip_entries(Path(args.directory)), config, args.workers or config.workers)
    path = write_verdicts(verdicts, args.report)
    accepted = sum(v.accepted for v in verdicts)
    _say(f"{accepted}/{len(verdicts)} clips accepted; report at {path}")
    return EXIT_OK


# --- train ----------------------------------------------------------------------------


def _train_sampler(cfg: PipelineConfig):
    from .flow_matching import TimestepDistribution

    section = cfg.sampler
    if section["path"]:
        return TimestepDistribution.from_csv(section["path"])
    if section["t_min"] > 0:
        return TimestepDistribution.truncated(section["t_min"])
    return None


def stage_dataset(stage: int, cfg: PipelineConfig, text_dim: int, workers: int = 1):
    """Synthetic pairs for one stage: bicubic, then flow+sdedit, then long flow+sdedit clips."""
    from .model import make_dataset

    tr = cfg.train
    seed = tr["seed"]
    if stage == 1:
        return make_dataset(tr["clips"], seed, workers, frames=tr["frames"], size=tr["size"],
                            degradation="bicubic", text_dim=text_dim)
    common = dict(degradation="flow+sdedit", text_dim=text_dim, flow_params=cfg.flow_params(),
                  sdedit_alpha=cfg.sdedit["alpha"])
    if stage == 2:
        if tr["size"] < 64:
            raise ConfigError("stage 2 degrades at half resolution and needs size >= 64", "/train/size")
        return make_dataset(tr["clips"], seed, workers, frames=tr["frames"], size=tr["size"], **common)
    return make_dataset(tr["long_clips"], seed + 1, workers, frames=tr["long_frames"],
                        size=tr["long_size"], **common)


def cmd_train(args, cfg: PipelineConfig) -> int:
    from .model import AdamW, GvrModel, TrainConfig, checkpoint_meta, load_checkpoint, save_checkpoint, train

    tr = cfg.train
    stage = args.stage
    steps = args.steps or tr["steps"] or tr["stage_steps"][stage - 1]
    tconf = TrainConfig(steps=steps, batch_size=tr["batch_size"], lr=tr["lr"], weight_decay=tr["weight_decay"],
                        seed=tr["seed"] + 1000 * (stage - 1), grad_clip=tr["grad_clip"], stratified=tr["stratified"])
    start, opt_state = 0, {}
    if args.resume:
        model, opt_state, start = load_checkpoint(args.resume)
        prev = int(checkpoint_meta(args.resume).get("stage", 0))
        if prev > stage:
            raise ConfigError(f"checkpoint is from stage {prev}; cannot go back to stage {stage}")
        if prev != stage:  # a new stage keeps the weights but restarts the optimizer
            start, opt_state = 0, {}
    else:
        model = GvrModel(cfg.model_config())
    workers = args.workers or tr["workers"]
    dataset = stage_dataset(stage, cfg, model.config.text_dim, workers)
    sampler = _train_sampler(cfg)
    out = Path(args.out or f"stage{stage}.gvrm")
    log = Path(args.log) if args.log else out.with_suffix(".csv")
    if stage == 3 and not start:
        # long clips: same parameters, attention sliced into temporal units
        model = model.with_config(model.config.with_(attention=tr["stage3_attention"]))
    opt = AdamW(model.parameters, lr=tconf.lr, weight_decay=tconf.weight_decay)
    if opt_state:
        opt.load_state_dict(opt_state)
    result = train(model, dataset, tconf, sampler, opt, start_step=start, log_path=log)
    end = start + steps
    save_checkpoint(model, out, step=end, extra=result.optimizer.state_dict(), meta={"stage": stage})
    n = min(10, len(result.losses))
    _say(f"stage {stage}: steps {start}..{end - 1}, loss {np.mean(result.losses[:n]):.4f} -> "
         f"{np.mean(result.losses[-n:]):.4f}; checkpoint {out}, log {log}")
    return EXIT_OK


# --- sampler --------------------------------------------------------------------------


def cmd_sampler_build(args, cfg: PipelineConfig) -> int:
    from .flow_matching import build_detail_aware_sampler
    from .model import collect_trace, load_checkpoint, make_dataset

    section = cfg.sampler
    model, _, _ = load_checkpoint(args.model)
    clips = args.clips or section["clips"]
    workers = args.workers or section["workers"]
    tr = cfg.train
    data = make_dataset(clips, section["seed"] + 7, workers, frames=tr["frames"], size=tr["size"],
                        text_dim=model.config.text_dim)
    traces = collect_trace(model, [s.lr for s in data], section["steps"], seed=section["seed"], workers=workers)
    out = Path(args.out)
    curve = Path(args.curve) if args.curve else out.with_suffix(".svg")
    dist = build_detail_aware_sampler(traces, section["hf_cut"], section["norm"], curve_path=curve)
    dist.to_csv(out)
    peak = int(np.argmax(dist.probabilities))
    _say(f"sampler from {clips} traces: peak bin [{dist.edges[peak]:.3f}, {dist.edges[peak + 1]:.3f}]; "
         f"wrote {out} and {curve}")
    return EXIT_OK


# --- infer ----------------------------------------------------------------------------


def cmd_infer(args, cfg: PipelineConfig) -> int:
    from .codec import decode_frames, encode
    from .media import Clip, read_clip
    from .model import infer, load_checkpoint
    from .tensor import Rng

    model, _, _ = load_checkpoint(args.model)
    clip = read_clip(args.input)
    lr = encode(clip.frames)
    if lr.shape[1] != model.config.latent_channels:
        raise ConfigError("clip latent channels do not match the model")
    hr = infer(model, lr, args.steps, args.aug, Rng(args.seed))
    frames = _clip_array(decode_frames(hr))
    path = _write_clip_arg(Clip(frames, clip.frame_rate), args.output)
    h, w = frames.shape[1:3]
    _say(f"upsampled {clip.num_frames} frames to {h}x{w} in {args.steps} steps; wrote {path}")
    return EXIT_OK


# --- bench ----------------------------------------------------------------------------


def _parse_sizes(text: str) -> list[tuple[int, int, int]]:
    try:
        sizes = [tuple(int(v) for v in item.lower().split("x")) for item in text.split(",") if item]
    except ValueError:
        raise ConfigError(f"bad --sizes {text!r}; expected e.g. 1x8x8,2x12x12") from None
    if not sizes or any(len(s) != 3 or min(s) < 1 for s in sizes):
        raise ConfigError(f"bad --sizes {text!r}; expected e.g. 1x8x8,2x12x12")
    return sizes


def cmd_bench_attn(args, cfg: PipelineConfig) -> int:
    from .attention import bench_attention
    from .model.config import ATTENTION_MODES

    section = cfg.attention
    modes = args.modes.split(",") if args.modes else section["modes"]
    bad = [m for m in modes if m not in ATTENTION_MODES]
    if bad:
        raise ConfigError(f"unknown attention modes {bad}")
    sizes = _parse_sizes(args.sizes) if args.sizes else [tuple(s) for s in section["sizes"]]
    rows = bench_attention(modes, sizes, section["repetitions"], section["dim"], section["heads"],
                           tuple(section["window"]), section["top_k"], section["seed"], path=args.out)
    _say(f"{len(rows['mode'])} rows written to {args.out}")
    return EXIT_OK


# --- selftest -------------------------------------------------------------------------


def cmd_selftest(args, cfg: PipelineConfig) -> int:
    from .selftest import run

    results = run(args.filter)
    for name, ok, detail in results:
        _say(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"\n      {detail}" if detail else ""))
    failed = sum(not ok for _, ok, _ in results)
    _say(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# --- wiring ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gvrlab", description="Latent video super-resolution laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(subparsers, name, fn, help_):
        p = subparsers.add_parser(name, help=help_)
        p.add_argument("--config", help="pipeline JSON config (defaults when omitted)")
        p.set_defaults(func=fn)
        return p

    degrade = sub.add_parser("degrade", help="synthesize training degradations")
    dsub = degrade.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    p = add(dsub, "flow", cmd_degrade_flow, "flow-driven blur and color blending")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--workers", type=int)
    p = add(dsub, "sdedit", cmd_degrade_sdedit, "model-guided degradation in latent space")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", default="toy", help="'toy' or a checkpoint path")

    p = add(sub, "curate", cmd_curate, "screen a directory of clips")
    p.add_argument("directory")
    p.add_argument("--report", default="curation.csv")
    p.add_argument("--workers", type=int)

    p = add(sub, "train", cmd_train, "run one stage of the training recipe")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--resume")
    p.add_argument("--out")
    p.add_argument("--log")
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int)

    sampler = sub.add_parser("sampler", help="timestep distributions")
    ssub = sampler.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    p = add(ssub, "build", cmd_sampler_build, "detail-aware distribution from inference traces")
    p.add_argument("--model", required=True)
    p.add_argument("--clips", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--curve")
    p.add_argument("--workers", type=int)

    p = add(sub, "infer", cmd_infer, "upsample a clip with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--aug", type=float, default=0.45)
    p.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="benchmarks")
    bsub = bench.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    p = add(bsub, "attn", cmd_bench_attn, "attention timing and FLOP table")
    p.add_argument("--modes", help="comma list, e.g. full,swin,sparse")
    p.add_argument("--sizes", help="comma list of TxHxW token grids")
    p.add_argument("--out", required=True)

    p = add(sub, "selftest", cmd_selftest, "run the built-in sanity checks")
    p.add_argument("--filter", help="only checks whose name contains this text")
    return parser


def _positive(args) -> None:
    for key in ("workers", "steps", "clips"):
        value = getattr(args, key, None)
        if value is not None and value < 1:
            raise ConfigError(f"--{key} must be >= 1")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        _positive(args)
        cfg = PipelineConfig.load(args.config)
        return args.func(args, cfg)
    except NumericalError as exc:
        print(f"gvrlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"gvrlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything else is a runtime failure
        print(f"gvrlab: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
