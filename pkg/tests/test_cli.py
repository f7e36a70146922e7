import csv
import json

import pytest

from vecplan.cli import OUTPUT_ROOT_ENV, main
from vecplan.core import deserialize, structural_problems

TINY = """
data:
  n_plans: 20
layout: {d_model: 32, d_ff: 64, layers: 1, heads: 4, embed_dim: 8, codebook_size: 16, batch_size: 8, epochs: 2, warmup: 5}
polygon: {d_model: 32, d_ff: 64, layers: 1, heads: 4, embed_dim: 8, codebook_size: 16, batch_size: 32, epochs: 1, warmup: 5}
generator: {d_model: 32, d_ff: 64, layers: 1, heads: 4, embed_dim: 8, batch_size: 8, epochs: 2, warmup: 5}
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY)
    c = ["--config", str(cfg), "--seed", "0"]
    assert main(["make-data", *c, "--out", str(root / "data")]) == 0
    assert main(["train-codebook", "layout", *c, "--data", str(root / "data"), "--out", str(root / "cb")]) == 0
    assert main(["train-codebook", "polygon", *c, "--data", str(root / "data"), "--out", str(root / "cb")]) == 0
    assert main(["train-generator", *c, "--data", str(root / "data"), "--layout", str(root / "cb/layout_codebook.pt"),
                 "--polygon", str(root / "cb/polygon_codebook.pt"), "--out", str(root / "gen")]) == 0
    return root, c


def test_make_data_outputs(run):
    root, c = run
    lines = (root / "data/manifest.csv").read_text().splitlines()
    assert len(lines) == 21
    assert sum(1 for l in lines if l.endswith(",train")) == 16
    for line in lines[1:]:
        fp = deserialize((root / "data" / line.split(",")[0]).read_text())
        assert structural_problems(fp) == []
    assert (root / "data/config.resolved.yaml").exists()


def test_make_data_byte_identical(run, tmp_path):
    root, c = run
    assert main(["make-data", *c, "--out", str(tmp_path / "again")]) == 0
    for f in sorted((root / "data/plans").iterdir()):
        assert (tmp_path / "again/plans" / f.name).read_bytes() == f.read_bytes()


def test_training_artifacts(run):
    root, _ = run
    stats = (root / "cb/layout_stats.csv").read_text().splitlines()
    assert len(stats) == 1 + 2
    gstats = (root / "gen/generator_stats.csv").read_text().splitlines()
    assert gstats[0].startswith("epoch,code,pos,type,total")


def test_generator_requires_checkpoints(run, tmp_path, capsys):
    root, c = run
    code = main(["train-generator", *c, "--data", str(root / "data"), "--layout", str(tmp_path / "none.pt"),
                 "--polygon", str(root / "cb/polygon_codebook.pt"), "--out", str(tmp_path / "g")])
    assert code == 1
    assert "layout" in capsys.readouterr().err


def test_missing_dataset(tmp_path):
    assert main(["train-codebook", "layout", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1


def test_generate_and_evaluate(run, tmp_path, capsys):
    root, c = run
    boundary = root / "data/plans/test_00000.json"
    out = tmp_path / "gen"
    assert main(["generate", *c, "--model", str(root / "gen/generator.pt"), "--boundary", str(boundary),
                 "--n", "5", "--top-p", "0.9", "--out", str(out)]) == 0
    with open(out / "manifest.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 == len(list((out / "plans").iterdir()))
    assert [int(r["seed"]) for r in rows] == [0, 1, 2, 3, 4]
    for r in rows:
        assert structural_problems(deserialize((out / r["path"]).read_text())) == []
    again = tmp_path / "gen2"
    main(["generate", *c, "--model", str(root / "gen/generator.pt"), "--boundary", str(boundary),
          "--n", "5", "--top-p", "0.9", "--out", str(again)])
    for r in rows:
        assert (again / r["path"]).read_bytes() == (out / r["path"]).read_bytes()

    capsys.readouterr()
    assert main(["evaluate", "--generated", str(out), "--reference", str(root / "data"),
                 "--out", str(tmp_path / "summary.csv")]) == 0
    printed = capsys.readouterr().out
    assert "N=5" in printed and "MRG=" in printed


def test_generate_from_boundary_only_document(run, tmp_path):
    root, c = run
    doc = json.loads((root / "data/plans/test_00001.json").read_text())
    doc.pop("rooms")
    f = tmp_path / "b.json"
    f.write_text(json.dumps(doc))
    assert main(["generate", *c, "--model", str(root / "gen/generator.pt"), "--boundary", str(f),
                 "--n", "1", "--out", str(tmp_path / "o")]) == 0


def test_generate_bad_boundary(run, tmp_path):
    root, c = run
    f = tmp_path / "bad.json"
    f.write_text("{not json")
    assert main(["generate", *c, "--model", str(root / "gen/generator.pt"), "--boundary", str(f)]) == 1


def test_evaluate_reference_against_itself(run, tmp_path, capsys):
    root, _ = run
    assert main(["evaluate", "--generated", str(root / "data"), "--reference", str(root / "data"),
                 "--out", str(tmp_path / "s.csv")]) == 0
    out = capsys.readouterr().out
    assert "N=20" in out and "MRG=0.000000" in out and "MSE_S=0.000000" in out


def test_render(run, tmp_path):
    root, _ = run
    doc = root / "data/plans/train_00000.json"
    assert main(["render", str(doc), "--out", str(tmp_path / "a.svg")]) == 0
    assert main(["render", str(doc), "--out", str(tmp_path / "b.svg")]) == 0
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    bad = tmp_path / "bad.json"
    bad.write_text('{"boundary": {"vertices": [[0, 0]]}}')
    assert main(["render", str(bad), "--out", str(tmp_path / "c.svg")]) == 1


def test_unknown_config_key(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("bogus: 1\n")
    assert main(["make-data", "--config", str(f), "--out", str(tmp_path / "d")]) == 1


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert main(["make-data", "--n", "10", "--out", "rel"]) == 0
    assert (tmp_path / "rel/manifest.csv").exists()


def test_divergence_exit_code(run, tmp_path):
    root, c = run
    f = tmp_path / "hot.yaml"
    f.write_text(TINY + "\n".join(["", "time_budget: 0"]))
    cfg = f.read_text().replace("epochs: 2, warmup: 5}\npolygon", "epochs: 2, warmup: 5, lr: 1.0e+30}\npolygon")
    f.write_text(cfg)
    code = main(["train-codebook", "layout", "--config", str(f), "--data", str(root / "data"), "--out", str(tmp_path / "x")])
    assert code == 2
