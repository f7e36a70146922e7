"""Command-line entry points: make-data, train-codebook, train-generator, generate, evaluate, render.

Exit codes: 0 success, 1 user or configuration error, 2 internal failure
(including training divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import torch

from .codebook import DivergenceError, load_checkpoint, save_checkpoint, train_codebook
from .config import ConfigError, echo, resolve
from .core import ParseError, ValidationError, from_document, serialize, validate
from .data import GenerationError, read_dataset, split_dataset, synth_dataset, write_dataset
from .generator import generate, load_generator, save_generator, train_generator
from .metrics import evaluate, summary_csv
from .render import render_svg

log = logging.getLogger("vecplan")

OUTPUT_ROOT_ENV = "VECPLAN_OUTPUT_ROOT"


class UserError(Exception):
    """Bad input from the caller; maps to exit code 1."""


def out_dir(arg: str | None, default: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(arg or default)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_config(args, **overrides):
    flags = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    cfg = resolve(args.preset, args.config, flags)
    return cfg


def _check_budget(cfg, start: float, what: str):
    spent = time.time() - start
    if cfg.time_budget and spent > cfg.time_budget:
        log.warning("%s took %.0f s, over the %.0f s budget for preset %s", what, spent, cfg.time_budget, cfg.preset)


def _dataset(path):
    if path is None or not (Path(path) / "manifest.csv").exists():
        raise UserError(f"no dataset at {path!r} (expected a manifest.csv written by make-data)")
    try:
        return read_dataset(path)
    except (ParseError, OSError) as exc:
        raise UserError(f"cannot read dataset {path}: {exc}") from exc


def read_plan_document(path: str | Path, boundary_only: bool = False):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if boundary_only and isinstance(doc, dict):
        doc.setdefault("rooms", [])
    try:
        return from_document(doc)
    except ParseError as exc:
        raise UserError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------- commands


def cmd_make_data(args) -> int:
    cfg = load_config(args)
    if args.n is not None:
        cfg.data.n_plans = args.n
    out = out_dir(args.out, "data")
    echo(cfg, out)
    try:
        params = cfg.data.synth_params(cfg.seed)
    except ValueError as exc:
        raise UserError(f"invalid synthesis parameters: {exc}") from exc
    try:
        plans = synth_dataset(cfg.data.n_plans, params)
        split = split_dataset(plans, cfg.seed, augment_train=cfg.data.augment)
    except (GenerationError, ValueError) as exc:
        raise UserError(str(exc)) from exc
    write_dataset(out, split)
    print(f"wrote {len(split.train)}/{len(split.val)}/{len(split.test)} plans to {out}")
    return 0


def cmd_train_codebook(args) -> int:
    cfg = load_config(args)
    split = _dataset(args.data)
    out = out_dir(args.out, f"codebook_{args.level}")
    echo(cfg, out)
    vq_cfg = cfg.layout if args.level == "layout" else cfg.polygon
    start = time.time()

    def progress(rec):
        log.info("epoch %d recon %.4f commit %.4f util %.3f", rec["epoch"], rec["recon"], rec["commit"], rec["utilization"])

    model, stats = train_codebook(args.level, split.train, vq_cfg, seed=cfg.seed, progress=progress)
    save_checkpoint(out / f"{args.level}_codebook.pt", model, cfg.seed, stats)
    (out / f"{args.level}_stats.csv").write_text("\n".join(stats.lines()) + "\n")
    _check_budget(cfg, start, f"{args.level} codebook training")
    print(f"saved {out / f'{args.level}_codebook.pt'}")
    return 0


def cmd_train_generator(args) -> int:
    cfg = load_config(args)
    for name, path in (("layout", args.layout), ("polygon", args.polygon)):
        if path is None or not Path(path).exists():
            raise UserError(f"missing {name} codebook checkpoint {path!r}")
    split = _dataset(args.data)
    out = out_dir(args.out, "generator")
    echo(cfg, out)
    try:
        layout_vq, polygon_vq = load_checkpoint(args.layout), load_checkpoint(args.polygon)
    except (ValueError, KeyError, RuntimeError) as exc:
        raise UserError(f"bad codebook checkpoint: {exc}") from exc
    if layout_vq.cfg.level != "layout" or polygon_vq.cfg.level != "polygon":
        raise UserError("--layout and --polygon checkpoints are swapped or of the wrong level")

    def progress(rec):
        log.info("epoch %d code %.4f pos %.4f type %.4f total %.4f", rec["epoch"], rec["code"], rec["pos"], rec["type"], rec["total"])

    start = time.time()
    model, stats = train_generator(split.train, layout_vq, polygon_vq, cfg.generator, seed=cfg.seed,
                                   val_plans=split.val, progress=progress)
    save_generator(out / "generator.pt", model, cfg.seed, stats)
    (out / "generator_stats.csv").write_text("\n".join(stats.lines()) + "\n")
    _check_budget(cfg, start, "generator training")
    print(f"saved {out / 'generator.pt'} ({stats.rejected} plans rejected by the CodeTree cap)")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args, n_samples=args.n)
    if args.top_p is not None:
        cfg.generator.top_p = args.top_p
    if not 0 < cfg.generator.top_p <= 1:
        raise UserError("--top-p must be in (0, 1]")
    if cfg.n_samples < 1:
        raise UserError("--n must be at least 1")
    if not args.model or not Path(args.model).exists():
        raise UserError(f"missing generator checkpoint {args.model!r}")
    if args.boundary:
        sources = [(Path(args.boundary).stem, read_plan_document(args.boundary, boundary_only=True))]
    else:
        root = Path(args.data) if args.data else None
        split = _dataset(root)
        sources = [(f"test_{i:05d}", fp) for i, fp in enumerate(split.test)]
    model = load_generator(args.model)
    out = out_dir(args.out, "generated")
    echo(cfg, out)
    (out / "plans").mkdir(exist_ok=True)
    rows = [["path", "source", "seed", "top_p", "codetree_truncated", "polygons_truncated", "invalid_rooms", "valid"]]
    for sid, fp in sources:
        if not fp.boundary.door_encoded:
            raise UserError(f"{sid}: boundary has no front door")
        for k in range(cfg.n_samples):
            seed = cfg.seed + k
            plan, rep = generate(fp.boundary, model, seed, cfg.generator.top_p, fp.grid_bits, fp.room_types)
            rel = f"plans/{sid}_s{seed}.json"
            (out / rel).write_text(serialize(plan), encoding="utf-8")
            rows.append([rel, sid, seed, cfg.generator.top_p, int(rep.codetree_truncated), int(rep.polygons_truncated),
                         ";".join(map(str, rep.invalid_rooms)), int(rep.validation.ok)])
    with open(out / "manifest.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    print(f"wrote {len(rows) - 1} plans to {out}")
    return 0


def _pair_sets(gen_dir: Path, ref_dir: Path):
    manifest = gen_dir / "manifest.csv"
    if not manifest.exists():
        raise UserError(f"no manifest.csv in {gen_dir}")
    with open(manifest, newline="") as fh:
        gen_rows = list(csv.DictReader(fh))
    refs = {}
    if (ref_dir / "manifest.csv").exists():
        with open(ref_dir / "manifest.csv", newline="") as fh:
            ref_rows = list(csv.DictReader(fh))
        counters: dict[str, int] = {}
        for r in ref_rows:
            i = counters.get(r["split"], 0)
            counters[r["split"]] = i + 1
            refs[f"{r['split']}_{i:05d}"] = ref_dir / r["path"]
            refs[Path(r["path"]).stem] = ref_dir / r["path"]
    else:
        refs = {p.stem: p for p in sorted(ref_dir.glob("*.json"))}
    gen, ref, ids = [], [], []
    for row in gen_rows:
        src = row.get("source") or Path(row["path"]).stem
        if src not in refs:
            raise UserError(f"generated sample {row['path']} has no reference {src!r} in {ref_dir}")
        gen.append(read_plan_document(gen_dir / row["path"]))
        ref.append(read_plan_document(refs[src]))
        ids.append(Path(row["path"]).stem)
    if not gen:
        raise UserError("no generated samples to evaluate")
    return gen, ref, ids


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    gen, ref, ids = _pair_sets(Path(args.generated), Path(args.reference))
    summary, rows = evaluate(gen, ref, ids, cfg.metrics.min_shared)
    text = summary_csv(summary, rows, cfg.metrics.min_shared)
    out = Path(args.out) if args.out else out_dir(None, "evaluation") / "summary.csv"
    if args.out and os.environ.get(OUTPUT_ROOT_ENV) and not out.is_absolute():
        out = Path(os.environ[OUTPUT_ROOT_ENV]) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"N={summary.n_samples} MRG={summary.mrg:.6f} MRO={summary.mro:.6f} MRE={summary.mre:.6f} "
          f"MSE_T={summary.mse_t:.6f} MSE_A={summary.mse_a:.6f} MSE_S={summary.mse_s:.6f}")
    return 0


def cmd_render(args) -> int:
    fp = read_plan_document(args.document)
    if not fp.boundary.door_encoded:
        raise UserError(f"{args.document}: boundary has no front door")
    for v in validate(fp).violations:
        log.warning("%s: %s", args.document, v)
    out = Path(args.out) if args.out else Path(args.document).with_suffix(".svg")
    if os.environ.get(OUTPUT_ROOT_ENV) and not out.is_absolute():
        out = Path(os.environ[OUTPUT_ROOT_ENV]) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(fp))
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON file overriding preset values")
    common.add_argument("--preset", choices=("desk", "paper"), default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help=f"output directory (relative paths go under ${OUTPUT_ROOT_ENV} if set)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="vecplan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", parents=[common], help="synthesize and split a plan dataset")
    p.add_argument("--n", type=int, default=None, help="number of plans (overrides the config)")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train-codebook", parents=[common], help="train a layout or polygon codebook")
    p.add_argument("level", choices=("layout", "polygon"))
    p.add_argument("--data", required=True, help="dataset directory from make-data")
    p.set_defaults(func=cmd_train_codebook)

    p = sub.add_parser("train-generator", parents=[common], help="train the generator on frozen codebooks")
    p.add_argument("--data", required=True)
    p.add_argument("--layout", required=True, help="layout codebook checkpoint")
    p.add_argument("--polygon", required=True, help="polygon codebook checkpoint")
    p.set_defaults(func=cmd_train_generator)

    p = sub.add_parser("generate", parents=[common], help="sample plans for a boundary or a test split")
    p.add_argument("--model", required=True, help="generator checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--boundary", help="document whose boundary (and front door) conditions generation")
    src.add_argument("--data", help="dataset directory; every test-split boundary is used")
    p.add_argument("--n", type=int, default=None, help="samples per boundary")
    p.add_argument("--top-p", type=float, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="compare generated plans with their references")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=[common], help="draw a plan document as SVG")
    p.add_argument("document")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(max(1, min(torch.get_num_threads(), os.cpu_count() or 1)))
    try:
        return args.func(args)
    except (UserError, ConfigError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
