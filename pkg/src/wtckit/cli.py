"""Command-line surface: dataset generation, training, evaluation, sweeps,
latent traversal export, and metric rank correlation.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic given an explicit --seed; omitting it draws one from entropy
and prints the value chosen.

File formats (all little-endian, no padding):
  checkpoint  magic "WTCK"; u32 version; u32 metadata length, metadata JSON
              (model kind, latent dim, input dim, config snapshot, final
              step, tensor name order); then per tensor: u8 name length,
              name bytes, u32 rank, u32 dims..., float64 payload.
  reports     CSV with fixed headers, documented per command in --help.
"""

import argparse
import csv
import json
import struct
import sys
import time
from pathlib import Path

import numpy as np

from .adversarial import build_critic
from .data import gen_linear_gaussian, gen_toysprites, load_fds, save_fds
from .metrics import evaluate, rank_correlation
from .models import bernoulli_probs, build_model
from .training import (GAMMA_GRID, TrainConfig, TrainingAborted, TrainLog,
                       train)

CHECKPOINT_MAGIC = b"WTCK"
CHECKPOINT_VERSION = 1

REPORT_FIELDS = ("model", "gamma", "beta", "seed", "steps", "wdg",
                 "factorvae", "mig", "modularity", "recon", "wall_s")
SUMMARY_FIELDS = ("gamma", "cells", "wdg_mean", "wdg_std", "factorvae_mean",
                  "factorvae_std", "mig_mean", "mig_std", "modularity_mean",
                  "modularity_std", "recon_mean", "recon_std")
RANK_METRICS = ("wdg", "factorvae", "mig", "modularity")


class CheckpointError(ValueError):
    """Malformed checkpoint file or version mismatch."""


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def _named_tensors(model, critic_f, critic_g):
    named = list(model.named_parameters())
    if critic_f is not None:
        named += critic_f.named_parameters()
    if critic_g is not None:
        named += critic_g.named_parameters()
    return named


def save_checkpoint(path, model, critic_f, critic_g, config, step):
    named = _named_tensors(model, critic_f, critic_g)
    meta = {
        "kind": model.kind,
        "latent_dim": model.latent_dim,
        "input_dim": model.input_dim,
        "config": config.to_dict(),
        "step": int(step),
        "tensor_names": [n for n, _ in named],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, p in named:
            raw = name.encode("utf-8")
            f.write(struct.pack("<B", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", p.data.ndim))
            f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            f.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Rebuild (model, critic_f, critic_g, config, step) from a checkpoint."""
    with open(path, "rb") as f:
        blob = f.read()

    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = blob[off:off + n]
        off += n
        return out

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported "
                              f"(expected {CHECKPOINT_VERSION})")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    meta = json.loads(take(meta_len, "metadata").decode("utf-8"))
    tensors = {}
    while off < len(blob):
        (name_len,) = struct.unpack("<B", take(1, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "tensor rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "tensor dims"))
        count = int(np.prod(dims)) if rank else 1
        payload = take(8 * count, f"tensor '{name}' payload")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if set(tensors) != set(meta["tensor_names"]):
        raise CheckpointError("tensor names do not match metadata")

    cfg = TrainConfig.from_dict(meta["config"])
    throwaway = np.random.default_rng(0)
    model = build_model(meta["kind"], meta["input_dim"], throwaway, throwaway,
                        latent_dim=meta["latent_dim"],
                        hidden=tuple(cfg.enc_hidden))
    model.encoder.load_state(_strip(tensors, "encoder."))
    model.decoder.load_state(_strip(tensors, "decoder."))
    critic_f = critic_g = None
    if any(n.startswith("critic_f.") for n in tensors):
        critic_f = build_critic(meta["latent_dim"], throwaway,
                                hidden=tuple(cfg.critic_hidden), role="wtc")
        critic_f.net.load_state(_strip(tensors, "critic_f."))
    if any(n.startswith("critic_g.") for n in tensors):
        critic_g = build_critic(meta["latent_dim"], throwaway,
                                hidden=tuple(cfg.critic_hidden), role="prior")
        critic_g.net.load_state(_strip(tensors, "critic_g."))
    return model, critic_f, critic_g, cfg, meta["step"]


def _strip(tensors, prefix):
    return {n[len(prefix):]: a for n, a in tensors.items()
            if n.startswith(prefix)}


# ---------------------------------------------------------------------------
# small output helpers
# ---------------------------------------------------------------------------

def write_pgm(path, image):
    """Grayscale image (H, W) of uint8 as binary PGM (P5)."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM writer expects a 2-D grayscale image")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _write_csv(path, header, rows, append=False):
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        writer = csv.writer(f)
        if fresh:
            writer.writerow(header)
        writer.writerows(rows)


def _write_train_log(path, log):
    _write_csv(path, TrainLog.FIELDS, log.rows())


def _resolve_seed(args):
    if args.seed is not None:
        return int(args.seed)
    seed = int(np.random.SeedSequence().entropy % (2 ** 63))
    print(f"seed: {seed}")
    return seed


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    seed = _resolve_seed(args)
    if args.dataset == "toy-sprites":
        ds = gen_toysprites(seed, height=args.height, width=args.width)
    else:
        ds, _ = gen_linear_gaussian(seed, args.factors, args.dim,
                                    args.noise_sigma)
    save_fds(ds, args.out)
    print(f"wrote {ds.n} images ({'x'.join(map(str, ds.images.shape[1:]))}) "
          f"with factors {dict(zip(ds.factor_names, ds.cardinalities))} "
          f"to {args.out}")
    return 0


def _train_config(args, seed):
    return TrainConfig(kind=args.model, steps=args.steps, seed=seed,
                       beta=args.beta, gamma=args.gamma,
                       learning_rate=args.lr, batch_size=args.batch_size,
                       critic_steps=args.critic_steps,
                       latent_dim=args.latent_dim)


def _run_training(cfg, ds, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = train(cfg, ds)
    except TrainingAborted as err:
        if err.log is not None and len(err.log):
            _write_train_log(out_dir / "train_log.csv", err.log)
        raise
    _write_train_log(out_dir / "train_log.csv", result.log)
    save_checkpoint(out_dir / "checkpoint.wtck", result.model,
                    result.critic_f, result.critic_g, cfg, cfg.steps)
    return result


def cmd_train(args):
    seed = _resolve_seed(args)
    ds = load_fds(args.data)
    cfg = _train_config(args, seed)
    _run_training(cfg, ds, args.out)
    print(f"trained {cfg.kind} for {cfg.steps} steps -> {args.out}")
    return 0


def _report_row(kind, gamma, beta, seed, steps, report, wall_s):
    return [kind, gamma, beta, seed, steps,
            f"{report.wdg:.6f}", f"{report.factorvae:.6f}",
            f"{report.mig:.6f}", f"{report.modularity:.6f}",
            f"{report.recon_nll:.4f}", f"{wall_s:.2f}"]


def _report_std_row(kind, gamma, beta, seed, steps, report):
    return [f"{kind}:std", gamma, beta, seed, steps,
            f"{report.wdg_std:.6f}", f"{report.factorvae_std:.6f}",
            f"{report.mig_std:.6f}", f"{report.modularity_std:.6f}",
            "0.0000", "0.00"]


def cmd_eval(args):
    seed = _resolve_seed(args)
    ds = load_fds(args.data)
    model, _, _, cfg, step = load_checkpoint(args.ckpt)
    if model.input_dim != ds.image_dim:
        raise ValueError(f"checkpoint expects {model.input_dim}-pixel images, "
                         f"dataset provides {ds.image_dim}")
    start = time.perf_counter()
    report = evaluate(model, ds, runs=args.runs,
                      rng=np.random.default_rng(seed))
    wall = time.perf_counter() - start
    rows = [_report_row(model.kind, cfg.gamma, cfg.beta, cfg.seed, step,
                        report, wall),
            _report_std_row(model.kind, cfg.gamma, cfg.beta, cfg.seed, step,
                            report)]
    _write_csv(args.out, REPORT_FIELDS, rows, append=True)
    print(f"wdg={report.wdg:.4f} factorvae={report.factorvae:.4f} "
          f"mig={report.mig:.4f} modularity={report.modularity:.4f} "
          f"recon={report.recon_nll:.2f} ({wall:.1f}s)")
    return 0


def cmd_sweep(args):
    ds = load_fds(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gammas = [float(g) for g in args.gammas.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    by_gamma = {}
    for gamma in gammas:
        for seed in seeds:
            cell = out_dir / f"cell_g{gamma:g}_s{seed}"
            cfg = TrainConfig(kind=args.model, steps=args.steps, seed=seed,
                              beta=args.beta, gamma=gamma,
                              learning_rate=args.lr,
                              batch_size=args.batch_size,
                              critic_steps=args.critic_steps,
                              latent_dim=args.latent_dim)
            start = time.perf_counter()
            try:
                result = _run_training(cfg, ds, cell)
                report = evaluate(result.model, ds, runs=args.runs,
                                  rng=np.random.default_rng(seed))
                wall = time.perf_counter() - start
                rows.append(_report_row(args.model, gamma, args.beta, seed,
                                        args.steps, report, wall) + ["ok"])
                by_gamma.setdefault(gamma, []).append(report)
                print(f"cell gamma={gamma:g} seed={seed}: wdg={report.wdg:.4f} "
                      f"factorvae={report.factorvae:.4f} "
                      f"recon={report.recon_nll:.2f} ({wall:.1f}s)")
            except (TrainingAborted, ValueError) as err:
                wall = time.perf_counter() - start
                rows.append([args.model, gamma, args.beta, seed, args.steps,
                             "", "", "", "", "", f"{wall:.2f}",
                             f"failed: {err}"])
                print(f"cell gamma={gamma:g} seed={seed} failed: {err}",
                      file=sys.stderr)
    _write_csv(out_dir / "report.csv", REPORT_FIELDS + ("status",), rows)

    summary = []
    for gamma in sorted(by_gamma):
        reps = by_gamma[gamma]
        cols = {
            "wdg": [r.wdg for r in reps],
            "factorvae": [r.factorvae for r in reps],
            "mig": [r.mig for r in reps],
            "modularity": [r.modularity for r in reps],
            "recon": [r.recon_nll for r in reps],
        }
        row = [gamma, len(reps)]
        for name in ("wdg", "factorvae", "mig", "modularity", "recon"):
            row += [f"{np.mean(cols[name]):.6f}", f"{np.std(cols[name]):.6f}"]
        summary.append(row)
    _write_csv(out_dir / "summary.csv", SUMMARY_FIELDS, summary)
    print(f"sweep complete: {len(rows)} cells, "
          f"{sum(1 for r in rows if r[-1] == 'ok')} ok -> {out_dir}")
    return 0


def cmd_traverse(args):
    ds = load_fds(args.data)
    model, _, _, _, _ = load_checkpoint(args.ckpt)
    if not 0 <= args.dim < model.latent_dim:
        raise ValueError(f"dim {args.dim} out of range "
                         f"(latent_dim={model.latent_dim})")
    if not 0 <= args.anchor < ds.n:
        raise ValueError(f"anchor {args.anchor} out of range (N={ds.n})")
    pixels = ds.pixels_flat()
    mu = model.encoder.forward_numpy(pixels[args.anchor:args.anchor + 1])
    mu = mu[:, :model.latent_dim]
    lo, hi = args.min, args.max
    if lo is None or hi is None:
        # default range from embedding percentiles of the traversed dimension
        all_mu = model.encoder.forward_numpy(pixels)[:, args.dim]
        center, spread = all_mu.mean(), all_mu.std()
        lo = center - 2 * spread if lo is None else lo
        hi = center + 2 * spread if hi is None else hi
    values = np.linspace(lo, hi, args.steps) if args.steps > 1 \
        else np.array([mu[0, args.dim]])
    frames = []
    h, w = ds.images.shape[1], ds.images.shape[2]
    for v in values:
        z = mu.copy()
        z[0, args.dim] = v
        probs = bernoulli_probs(model.decoder.forward_numpy(z))
        frames.append(np.rint(probs.reshape(h, w, -1)[:, :, 0] * 255.0))
    grid = np.concatenate(frames, axis=1).astype(np.uint8)   # (H, n*W)
    write_pgm(args.out, grid)
    print(f"wrote {len(values)}-frame traversal of dim {args.dim} "
          f"over [{lo:.3f}, {hi:.3f}] to {args.out}")
    return 0


def cmd_rank_corr(args):
    runs = []
    for path in args.reports:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if row["model"].endswith(":std"):
                    continue
                try:
                    runs.append([float(row[m]) for m in RANK_METRICS])
                except (KeyError, ValueError) as err:
                    raise ValueError(f"bad report row in {path}: {err}") from err
    if len(runs) < 3:
        raise ValueError(f"need at least 3 runs for rank correlation, "
                         f"got {len(runs)}")
    scores = np.asarray(runs)
    matrix = np.ones((len(RANK_METRICS), len(RANK_METRICS)))
    for i in range(len(RANK_METRICS)):
        for j in range(i + 1, len(RANK_METRICS)):
            rho = rank_correlation(scores[:, i], scores[:, j])
            matrix[i, j] = matrix[j, i] = rho
    rows = [[RANK_METRICS[i]] + [f"{v:.6f}" for v in matrix[i]]
            for i in range(len(RANK_METRICS))]
    _write_csv(args.out, ("metric",) + RANK_METRICS, rows)
    print(f"rank correlation over {len(runs)} runs -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="wtckit",
        description="Disentangled representation learning with Wasserstein "
                    "total correlation penalties.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled factor dataset",
                       description="Writes an FDS dataset file. toy-sprites: "
                                   "shape(3) x scale(4) x posX(8) x posY(8) "
                                   "grayscale sprites; linear-gaussian: "
                                   "a random linear mix of grid factors.")
    p.add_argument("--dataset", required=True,
                   choices=("toy-sprites", "linear-gaussian"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--factors", type=int, default=4,
                   help="linear-gaussian: number of factors")
    p.add_argument("--dim", type=int, default=8,
                   help="linear-gaussian: observation dimension")
    p.add_argument("--noise-sigma", type=float, default=0.02,
                   help="linear-gaussian: observation noise")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model",
                       description="Trains on an FDS dataset and writes "
                                   "checkpoint.wtck plus train_log.csv "
                                   "(columns: step,recon,kl,wtc_gap,"
                                   "prior_gap,critic_f,critic_g) to --out.")
    p.add_argument("--model", required=True,
                   choices=("vae", "beta-vae", "wae", "wtc-vae", "wtc-wae"))
    p.add_argument("--data", required=True)
    p.add_argument("--gamma", type=float, default=0.0,
                   help=f"WTC weight; grid used at full scale: {GAMMA_GRID}")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--critic-steps", type=int, default=1)
    p.add_argument("--latent-dim", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint",
                       description="Appends a mean row to the report CSV "
                                   "(columns: model,gamma,beta,seed,steps,"
                                   "wdg,factorvae,mig,modularity,recon,"
                                   "wall_s) plus a sibling row whose model "
                                   "field is suffixed ':std' carrying the "
                                   "run standard deviations.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/eval a gamma x seed grid",
                       description="Runs every (gamma, seed) cell, writing "
                                   "per-cell artifacts, report.csv (report "
                                   "columns plus a status column), and "
                                   "summary.csv (per-gamma mean/std of every "
                                   "metric, sorted by gamma).")
    p.add_argument("--model", required=True,
                   choices=("vae", "beta-vae", "wae", "wtc-vae", "wtc-wae"))
    p.add_argument("--gammas", required=True, help="comma-separated")
    p.add_argument("--seeds", required=True, help="comma-separated")
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=3,
                   help="evaluation repetitions per cell")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--critic-steps", type=int, default=1)
    p.add_argument("--latent-dim", type=int, default=10)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("traverse", help="export a latent traversal image",
                       description="Encodes the anchor image, varies one "
                                   "latent dimension linearly, decodes, and "
                                   "writes the frames side by side as a "
                                   "binary PGM (P5) of size (steps*W) x H. "
                                   "Omitted --min/--max default to the "
                                   "dimension's embedding mean +- 2 std.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--min", type=float, default=None)
    p.add_argument("--max", type=float, default=None)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--anchor", type=int, default=0)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("rank-corr", help="rank correlation between metrics",
                       description="Reads report CSVs (mean rows only) and "
                                   "writes the 4x4 Spearman matrix over runs "
                                   "(columns: metric,wdg,factorvae,mig,"
                                   "modularity).")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_corr)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if err.code is not None else 0
    try:
        return args.func(args)
    except TrainingAborted as err:
        print(f"error: training aborted: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
