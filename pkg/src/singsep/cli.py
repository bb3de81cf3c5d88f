"""Command-line entry points: gen-toy, train, separate, evaluate, ablate.

Exit codes: 0 on success, 1 on a user error (bad arguments, config,
data or checkpoint), 2 on an internal error.
"""

import argparse
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from glob import glob

from .audio_io import read_wav, write_wav
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .data import DatasetError, load_dataset, write_toy_layout
from .dsp import StftConfig, resample
from .losses import TERMS
from .metrics import bss_eval, median_report
from .separation import separate_track
from .training import (
    ConfigError,
    LossLog,
    NonFiniteLossError,
    TrainingConfig,
    TrainState,
    parse_overrides,
    read_config,
    run_training,
    write_config,
)

log = logging.getLogger("singsep")

ABLATION_NAMES = TERMS + ("gan_both",)
MANIFEST = "manifest.jsonl"


class UserError(Exception):
    """Raised for problems the user can fix; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------

def _ensure_empty_dir(path, force):
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise UserError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    os.makedirs(path, exist_ok=True)


def _append_manifest(run_dir, event, **fields):
    record = {"event": event, "time": time.strftime("%Y-%m-%dT%H:%M:%S"), **fields}
    with open(os.path.join(run_dir, MANIFEST), "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_manifest(run_dir):
    path = os.path.join(run_dir, MANIFEST)
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _check_losses(names):
    bad = [n for n in names if n not in ABLATION_NAMES]
    if bad:
        raise UserError(f"unknown loss name(s) {bad}; valid: {', '.join(ABLATION_NAMES)}")


def build_config(args, extra_disabled=()):
    """Preset (sized by --steps), then config file, then ``--set`` pairs, then --seed and --disable-loss."""
    if args.preset == "toy":
        base = TrainingConfig.toy(total_steps=args.steps or 2000)
    else:
        base = TrainingConfig() if args.steps is None else TrainingConfig(total_steps=args.steps)
    cfg = read_config(args.config, base) if args.config else base
    cfg = parse_overrides(args.set or [], cfg)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    disabled = [s for s in cfg.disabled_losses.split(",") if s] + list(args.disable_loss or []) + list(extra_disabled)
    _check_losses(disabled)
    changes["disabled_losses"] = ",".join(dict.fromkeys(disabled))
    return cfg.replace(**changes)


def _latest_checkpoint(run_dir):
    paths = sorted(glob(os.path.join(run_dir, "checkpoints", "step_*.ckpt")))
    return paths[-1] if paths else None


def _truncate_loss_log(path, step):
    """Drop rows written after ``step`` (left behind by an interrupted run)."""
    if not os.path.exists(path):
        return
    with open(path) as fh:
        lines = fh.readlines()
    keep = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
    if len(keep) != len(lines):
        with open(path, "w") as fh:
            fh.writelines(keep)


def train_run(cfg, data_dir, run_dir, force=False, resume=False):
    """Train into ``run_dir``; returns the final TrainState."""
    stft_cfg = cfg.stft_config()
    if resume:
        if any(r["event"] == "end" for r in read_manifest(run_dir)):
            raise UserError(f"run in {run_dir} is finished; start a new run directory")
        ckpt = _latest_checkpoint(run_dir)
        if ckpt is None:
            raise UserError(f"no checkpoint to resume from in {run_dir}")
        state = load_checkpoint(ckpt, expected=cfg)
        state.config = state.config.replace(total_steps=cfg.total_steps)
        cfg = state.config
        _truncate_loss_log(os.path.join(run_dir, "losses.csv"), state.step)
        _append_manifest(run_dir, "resume", checkpoint=ckpt, start_step=state.step)
    else:
        _ensure_empty_dir(run_dir, force)
        state = TrainState.initial(cfg)
        write_config(cfg, os.path.join(run_dir, "config.txt"))
        _append_manifest(run_dir, "start", seed=cfg.seed, start_step=0, config=cfg.to_dict(),
                         disabled_losses=cfg.disabled_losses, data=os.path.abspath(data_dir))
    mixtures = load_dataset(os.path.join(data_dir, "mixtures"), "mixtures", stft_cfg, cfg.seed)
    sources = load_dataset(os.path.join(data_dir, "instrumentals"), "sources", stft_cfg, cfg.seed)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    def checkpoint(st):
        path = os.path.join(ckpt_dir, f"step_{st.step:07d}.ckpt")
        save_checkpoint(st, path)
        _append_manifest(run_dir, "checkpoint", step=st.step, path=os.path.relpath(path, run_dir))

    loss_log = LossLog(os.path.join(run_dir, "losses.csv"))
    try:
        run_training(state, mixtures, sources, loss_log=loss_log, on_checkpoint=checkpoint)
    finally:
        loss_log.close()
    if _latest_checkpoint(run_dir) != os.path.join(ckpt_dir, f"step_{state.step:07d}.ckpt"):
        checkpoint(state)
    _append_manifest(run_dir, "end", end_step=state.step)
    return state


def _read_clip(path):
    try:
        return read_wav(path)
    except (ValueError, OSError) as exc:
        raise UserError(f"cannot read {path}: {exc}") from None


def evaluate_dirs(estimates_dir, references_dir, mixtures_dir=None, filter_len=512, jobs=None):
    """Score every estimate that has a reference with the same file name."""
    names = sorted(os.path.basename(p) for p in glob(os.path.join(estimates_dir, "*.wav")))
    pairs, missing = [], []
    for name in names:
        ref = os.path.join(references_dir, name)
        mix = os.path.join(mixtures_dir, name) if mixtures_dir else None
        if not os.path.exists(ref) or (mix and not os.path.exists(mix)):
            missing.append(name)
        else:
            pairs.append((name, os.path.join(estimates_dir, name), ref, mix))
    for name in missing:
        log.warning("no counterpart for %s; skipped", name)
    if not pairs:
        raise UserError(f"no estimate in {estimates_dir} has a matching reference in {references_dir}")

    def score(item):
        name, est_path, ref_path, mix_path = item
        est, ref = _read_clip(est_path), _read_clip(ref_path)
        if est.sample_rate != ref.sample_rate:
            est = resample(est, ref.sample_rate)
        n = min(len(est), len(ref))
        refs = [ref.samples[:n]]
        if mix_path:
            mix = _read_clip(mix_path)
            if mix.sample_rate != ref.sample_rate:
                mix = resample(mix, ref.sample_rate)
            n = min(n, len(mix))
            refs = [ref.samples[:n], mix.samples[:n] - ref.samples[:n]]
        sdr, sir = bss_eval(est.samples[:n], [r[:n] for r in refs], 0, filter_len)
        return os.path.splitext(name)[0], sdr, sir

    with ThreadPoolExecutor(max_workers=jobs or os.cpu_count() or 1) as pool:
        items = list(pool.map(score, pairs))
    return median_report(items), missing


def separate_dir(checkpoint, mixtures_dir, out_dir):
    """Write <name>.wav vocal estimates for every mixture; returns the TrainState."""
    state = load_checkpoint(checkpoint)
    cfg = state.config.stft_config()
    os.makedirs(out_dir, exist_ok=True)
    for path in sorted(glob(os.path.join(mixtures_dir, "*.wav"))):
        vocals, _ = separate_track(state.g, _read_clip(path), cfg)
        write_wav(os.path.join(out_dir, os.path.basename(path)), vocals)
    return state


# -- commands -------------------------------------------------------------------

def cmd_gen_toy(args):
    if args.mixtures < 0 or args.sources < 0:
        raise UserError("counts must be non-negative")
    if args.mixtures + args.sources == 0:
        raise UserError("counts 0/0 would produce an empty dataset")
    _ensure_empty_dir(args.out_dir, args.force)
    cfg = StftConfig.toy()
    write_toy_layout(args.out_dir, args.seed or 0, (args.mixtures, args.sources), cfg, args.clips)
    print(f"wrote {args.mixtures} mixtures, {args.sources} instrumentals, "
          f"{args.mixtures} references to {args.out_dir}")


def cmd_train(args):
    cfg = build_config(args)
    state = train_run(cfg, args.data, args.run_dir, args.force, args.resume)
    print(f"trained to step {state.step}; run directory {args.run_dir}")


def cmd_separate(args):
    try:
        header = read_header(args.checkpoint)
    except OSError as exc:
        raise UserError(f"cannot read checkpoint: {exc}") from None
    state = load_checkpoint(args.checkpoint)
    audio = _read_clip(args.input)
    vocals, inst = separate_track(state.g, audio, state.config.stft_config())
    assert len(vocals) == len(inst) == len(audio)
    for path, clip in ((args.vocals, vocals), (args.instrumental, inst)):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_wav(path, clip)
    print(f"separated {args.input} ({len(audio)} samples at {audio.sample_rate} Hz, "
          f"checkpoint step {header['step']})")


def cmd_evaluate(args):
    report, _ = evaluate_dirs(args.estimates, args.references, args.mixtures, args.filter_len, args.jobs)
    if args.out:
        report.write_csv(args.out)
    print(report.format())


def cmd_ablate(args):
    losses = list(args.losses or [])
    _check_losses(losses)
    _ensure_empty_dir(args.out_dir, args.force)
    eval_dir = args.eval_data or args.data
    rows = []
    for name in [None] + losses:
        label = "all losses" if name is None else f"w/o {name}"
        cfg = build_config(args, () if name is None else (name,))
        run_dir = os.path.join(args.out_dir, "baseline" if name is None else f"wo_{name}")
        train_run(cfg, args.data, run_dir)
        est_dir = os.path.join(run_dir, "estimates")
        separate_dir(_latest_checkpoint(run_dir), os.path.join(eval_dir, "mixtures"), est_dir)
        report, _ = evaluate_dirs(est_dir, os.path.join(eval_dir, "references"),
                                  os.path.join(eval_dir, "mixtures"), args.filter_len)
        report.write_csv(os.path.join(run_dir, "metrics.csv"))
        _append_manifest(run_dir, "metrics", median_sdr=report.median_sdr, median_sir=report.median_sir)
        rows.append((label, report.median_sdr, report.median_sir))
    table = os.path.join(args.out_dir, "ablation.csv")
    with open(table, "w") as fh:
        fh.write("run,median_sdr,median_sir\n")
        for label, sdr, sir in rows:
            fh.write(f"{label},{sdr:.4f},{sir:.4f}\n")
    width = max(len(r[0]) for r in rows)
    print(f"{'run':<{width}}  {'SDR':>8}  {'SIR':>8}")
    for label, sdr, sir in rows:
        print(f"{label:<{width}}  {sdr:8.2f}  {sir:8.2f}")


# -- parser ---------------------------------------------------------------------

def _add_globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (overrides the config file)")
    p.add_argument("--config", default=d, help="key = value config file")
    p.add_argument("--force", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="overwrite non-empty output directories")


def _add_training_args(p):
    p.add_argument("--data", required=True, help="directory holding mixtures/ and instrumentals/")
    p.add_argument("--preset", choices=("full", "toy"), default="full",
                   help="base configuration before the config file and --set (default: full)")
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--set", nargs="+", metavar="KEY=VALUE", help="config overrides")
    p.add_argument("--disable-loss", action="append", metavar="TERM",
                   help=f"drop a loss term ({', '.join(ABLATION_NAMES)}); repeatable")


def build_parser():
    parser = _Parser(prog="singsep", description="Semi-supervised singing-voice separation.")
    _add_globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-toy", help="write a synthetic dataset")
    _add_globals(p, suppress=True)
    p.add_argument("out_dir")
    p.add_argument("--mixtures", type=int, default=16)
    p.add_argument("--sources", type=int, default=16)
    p.add_argument("--clips", type=int, default=8, help="model-sized clips per track")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train", help="train a separator")
    _add_globals(p, suppress=True)
    _add_training_args(p)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="split a WAV into vocals and instrumental")
    _add_globals(p, suppress=True)
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("vocals")
    p.add_argument("instrumental")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="median SDR/SIR of estimates against references")
    _add_globals(p, suppress=True)
    p.add_argument("estimates")
    p.add_argument("references")
    p.add_argument("--mixtures", help="mixture directory; mixture minus reference becomes the interferer")
    p.add_argument("--filter-len", type=int, default=512)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train with selected losses disabled and compare")
    _add_globals(p, suppress=True)
    _add_training_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--losses", nargs="*", default=[], metavar="TERM")
    p.add_argument("--eval-data", help="directory with mixtures/ and references/ (default: --data)")
    p.add_argument("--filter-len", type=int, default=512)
    p.set_defaults(func=cmd_ablate)
    return parser


USER_ERRORS = (UserError, ConfigError, DatasetError, CheckpointError, NonFiniteLossError, FileNotFoundError)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level guard
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
