"""Acceptance suite: one PASS/FAIL line per criterion.

Every test records its verdict through ``record`` so the terminal summary
lists all criteria together, then asserts. The slow criteria share one
trained model through the ``overfit`` fixture.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE_LINES
from oracles import argmin_scan, emd_bruteforce, random_rectilinear_plan, raster_areas
from vecplan.codebook import Codebook, emd_loss, train_codebook, vector_quantize
from vecplan.config import ABLATIONS, preset, resolve
from vecplan.core import serialize, structural_problems
from vecplan.data import synth_dataset
from vecplan.generator import (
    EOS,
    check_codetree,
    encode_boundary,
    generate,
    polygon_logits_fn,
    polygon_stream_groups,
    sample_codetree,
    sample_polygon_stream,
    train_generator,
)
from vecplan.metrics import boolean_areas, evaluate, plan_areas


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_emd_oracle():
    g = torch.Generator().manual_seed(0)
    t0 = time.perf_counter()
    worst_val = worst_grad = 0.0
    for _ in range(50):
        k = int(torch.randint(2, 65, (1,), generator=g))
        p = torch.softmax(torch.randn(k, generator=g, dtype=torch.float64) * 2, 0)
        t = int(torch.randint(k, (1,), generator=g))
        worst_val = max(worst_val, abs(emd_loss(p, torch.tensor(t)).item() - emd_bruteforce(p.tolist(), t)))

        x = p.clone().requires_grad_(True)
        emd_loss(x, torch.tensor(t)).backward()
        h = 1e-6
        fd = torch.empty(k, dtype=torch.float64)
        for i in range(k):
            e = torch.zeros(k, dtype=torch.float64)
            e[i] = h
            fd[i] = (emd_bruteforce((p + e).tolist(), t) - emd_bruteforce((p - e).tolist(), t)) / (2 * h)
        rel = ((x.grad - fd).norm() / fd.norm().clamp_min(1e-12)).item()
        worst_grad = max(worst_grad, rel)
    dt = time.perf_counter() - t0
    ok = worst_val <= 1e-9 and worst_grad < 1e-4 and dt < 1.0
    record("EMD oracle", ok, f"max |err|={worst_val:.2e} max grad rel err={worst_grad:.2e} time={dt:.2f}s")


def test_vq_argmin():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(200):
        k = int(rng.integers(1, 513))
        d = int(rng.integers(1, 9))
        cb = rng.integers(-3, 4, size=(k, d)).astype(np.float64)  # small integer grid makes exact ties common
        if k > 2:
            cb[k - 1] = cb[0]
        x = rng.integers(-3, 4, size=(8, d)).astype(np.float64)
        if k > 1:
            x[0] = (cb[0] + cb[1]) / 2  # equidistant from two codewords
        idx, _ = vector_quantize(torch.from_numpy(x), torch.from_numpy(cb))
        want = [argmin_scan(row, cb) for row in x]
        mismatches += int((idx.numpy() != np.array(want)).sum())
    dt = time.perf_counter() - t0
    record("VQ argmin", mismatches == 0 and dt < 5.0, f"mismatches={mismatches} of 1600 queries time={dt:.2f}s")


def test_ema_fixed_point():
    g = torch.Generator().manual_seed(2)
    feats = torch.randn(64, 8, generator=g, dtype=torch.float64)
    assign = torch.arange(64) % 4
    means = torch.stack([feats[assign == j].mean(0) for j in range(4)])
    cb = Codebook(4, 8, decay=0.99).double()
    steps, err = 0, float("inf")
    while steps < 2000:
        cb.ema_update(assign, feats)
        steps += 1
        err = (cb.embed - means).norm(dim=1).max().item()
        if err <= 1e-3:
            break
    record("EMA fixed point", err <= 1e-3, f"max L2 distance {err:.2e} after {steps} updates")


def test_geometry_oracle():
    rng = np.random.default_rng(3)
    mismatches = broken = 0
    spent = 0.0
    for _ in range(1000):
        bnd, rooms = random_rectilinear_plan(rng)
        t0 = time.perf_counter()
        r = boolean_areas(rooms, bnd)
        spent += time.perf_counter() - t0
        mismatches += (r.boundary_area, r.gap_area, r.overlap_area, r.exceed_area) != raster_areas(rooms, bnd)
        broken += r.covered_area + r.gap_area != r.boundary_area
    ok = mismatches == 0 and broken == 0 and spent < 30
    record("Geometry oracle", ok, f"mismatches={mismatches} conservation failures={broken} time={spent:.2f}s")


def test_ground_truth_sanity():
    plans = synth_dataset(200, preset("desk").data.synth_params(4))
    summary, _ = evaluate(plans, plans)
    vals = (summary.mrg, summary.mro, summary.mre, summary.mse_t, summary.mse_a, summary.mse_s)
    record("Ground-truth sanity", all(v == 0 for v in vals),
           "MRG={} MRO={} MRE={} MSE_T={} MSE_A={} MSE_S={}".format(*vals))


@pytest.mark.slow
def test_codebook_overfit():
    cfg = preset("desk")
    plans = synth_dataset(64, cfg.data.synth_params(5))
    t0 = time.perf_counter()
    _, stats = train_codebook("layout", plans, cfg.layout, seed=0)
    dt = time.perf_counter() - t0
    first, last = stats.epochs[0], stats.epochs[-1]
    drop = 1 - last["recon"] / first["recon"]
    ok = len(stats.epochs) <= 200 and drop >= 0.5 and last["utilization"] >= 0.25 and dt <= 15 * 60
    record("Codebook overfit", ok,
           f"recon {first['recon']:.4f}->{last['recon']:.4f} (drop {drop:.1%}) "
           f"utilization={last['utilization']:.3f} time={dt:.0f}s")


@pytest.fixture(scope="module")
def overfit():
    cfg = preset("desk")
    plans = synth_dataset(100, cfg.data.synth_params(6))
    t0 = time.perf_counter()
    layout, _ = train_codebook("layout", plans, cfg.layout, seed=0)
    polygon, _ = train_codebook("polygon", plans, cfg.polygon, seed=0)
    gen, stats = train_generator(plans, layout, polygon, cfg.generator, seed=0)
    return plans, gen, stats, time.perf_counter() - t0


@pytest.mark.slow
def test_generator_overfit(overfit):
    plans, gen, stats, train_time = overfit
    first, last = stats.epochs[0]["total"], stats.epochs[-1]["total"]
    drop = 1 - last / first
    t0 = time.perf_counter()
    gaps, matches = [], 0
    for i, fp in enumerate(plans[:50]):
        out, _ = generate(fp.boundary, gen, seed=i)
        r = plan_areas(out, strict=False)
        gaps.append(r.gap_area / r.boundary_area)
        matches += sorted(x.type for x in out.rooms) == sorted(x.type for x in fp.rooms)
    dt = train_time + time.perf_counter() - t0
    med, rate = float(np.median(gaps)), matches / 50
    ok = len(stats.epochs) <= 400 and drop >= 0.7 and med <= 0.05 and rate >= 0.8 and dt <= 90 * 60
    record("Generator overfit", ok,
           f"total {first:.3f}->{last:.3f} (drop {drop:.1%}) median MRG={med:.4f} "
           f"type match={rate:.0%} time={dt:.0f}s")


@pytest.mark.slow
def test_grammar_validity(overfit):
    plans, gen, _, _ = overfit
    cfg, v = gen.cfg, gen.vocab
    bad = []
    for i in range(200):
        fp = plans[i % len(plans)]
        seed = 1000 + i
        # replay the sampling pipeline to see the raw token streams
        rng = np.random.default_rng(seed)
        memory, _, bcode = encode_boundary(fp.boundary, gen)
        tree = sample_codetree(gen, memory, bcode, cfg.top_p, rng)
        problems = []
        try:
            check_codetree(tree.tokens(v), v, cfg.max_codetree, complete=True)
            toks, _, truncated = sample_polygon_stream(v, len(tree.room_entries), polygon_logits_fn(gen, memory, tree),
                                                       cfg.top_p, rng, cfg.max_vertices, cfg.max_polygon_tokens)
            polygon_stream_groups(toks, v, len(tree.room_entries), cfg.max_vertices, cfg.max_polygon_tokens)
            if truncated or toks[-1] != EOS:
                problems.append("polygon stream truncated")
        except ValueError as exc:
            problems.append(str(exc))
        out, rep = generate(fp.boundary, gen, seed=seed)
        problems += structural_problems(out)
        if tree.truncated or rep.codetree_truncated:
            problems.append("codetree truncated")
        if problems:
            bad.append((i, problems[0]))
    record("Grammar validity", not bad, f"{200 - len(bad)}/200 valid" + (f"; first failure {bad[0]}" if bad else ""))


def test_determinism(tmp_path):
    cfg = preset("desk")
    a = [serialize(p) for p in synth_dataset(30, cfg.data.synth_params(7))]
    b = [serialize(p) for p in synth_dataset(30, cfg.data.synth_params(7))]
    plans = synth_dataset(12, cfg.data.synth_params(8))

    def run():
        lay = replace(cfg.layout, epochs=3, warmup=5)
        pol = replace(cfg.polygon, epochs=2, warmup=5)
        lm, ls = train_codebook("layout", plans, lay, seed=1)
        pm, ps = train_codebook("polygon", plans, pol, seed=1)
        gm, gs = train_generator(plans, lm, pm, replace(cfg.generator, epochs=3, warmup=5), seed=1)
        docs = [serialize(generate(fp.boundary, gm, seed=s)[0]) for s, fp in enumerate(plans[:5])]
        return ls.lines() + ps.lines() + gs.lines(), docs

    curves1, docs1 = run()
    curves2, docs2 = run()
    ok = a == b and curves1 == curves2 and docs1 == docs2
    record("Determinism", ok, f"dataset bytes equal={a == b} curves equal={curves1 == curves2} "
                              f"documents equal={docs1 == docs2}")


@pytest.mark.slow
def test_ablation_plumbing():
    plans = synth_dataset(16, preset("desk").data.synth_params(9))
    short = {"epochs": 3, "warmup": 5}
    done, failures = [], []
    for study, variants in ABLATIONS.items():
        for label, overrides in variants:
            try:
                cfg = resolve("desk", None, overrides)
                lm, ls = train_codebook("layout", plans, replace(cfg.layout, **short), seed=0)
                pm, ps = train_codebook("polygon", plans, replace(cfg.polygon, **short), seed=0)
                finite = all(np.isfinite(s.epochs[-1]["total"]) for s in (ls, ps))
                if study == "bits":
                    gm, gs = train_generator(plans, lm, pm, replace(cfg.generator, **short), seed=0)
                    fp, _ = generate(plans[0].boundary, gm, seed=0)
                    finite = finite and np.isfinite(gs.epochs[-1]["total"]) and not structural_problems(fp)
                if not finite:
                    raise RuntimeError("non-finite loss or invalid sample")
                done.append(f"{study}={label}")
            except Exception as exc:  # report every failing variant, not just the first
                failures.append(f"{study}={label}: {exc}")
    detail = f"{len(done)}/{len(done) + len(failures)} variants trained"
    if failures:
        detail += f"; failures: {failures}"
    record("Ablation plumbing", not failures, detail)
