import json
import time

import numpy as np
import pytest

from spatialsim.cli import main
from spatialsim.dataset import read_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def n_records(path):
    return len(read_dataset(path))


@pytest.fixture(scope="module")
def comp_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("comp")
    assert main(["gen-comp", "--n-min", "3", "--n-max", "4", "--train", "60", "--eval", "40",
                 "--seed", "1", "--out", str(d)]) == 0
    return d


def test_gen_ident_default_counts(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-ident", "--n-obj", 5, "--eps", 0.01, "--seed", 3,
                       "--out", tmp_path)
    assert code == 0
    assert [n_records(tmp_path / f"IDS_5{s}.jsonl") for s in ("", "_valid", "_test")] == \
        [10000, 5000, 5000]
    assert len(out.splitlines()) == 3


def test_generation_is_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "gen-ident", "--n-obj", 4, "--train", 50, "--eval", 20,
                   "--seed", 9, "--out", tmp_path / d)[0] == 0
    for name in ("IDS_4", "IDS_4_valid", "IDS_4_test"):
        assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == \
            (tmp_path / "b" / f"{name}.jsonl").read_bytes()
    run(capsys, "gen-ident", "--n-obj", 4, "--train", 50, "--eval", 20, "--seed", 10,
        "--out", tmp_path / "c")
    assert (tmp_path / "c" / "IDS_4.jsonl").read_bytes() != (tmp_path / "a" / "IDS_4.jsonl").read_bytes()


def test_gen_comp_writes_five_stages(comp_dir):
    names = sorted(p.stem for p in comp_dir.glob("*.jsonl"))
    assert names == sorted([f"CDS_3_4_{k}" for k in range(5)] + ["CDS_3_4_valid", "CDS_3_4_test"])
    assert n_records(comp_dir / "CDS_3_4_2.jsonl") == 60


def test_gen_distractors_and_preset(comp_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "gen-distractors", "--base", comp_dir, "--nd-max", 2)
    assert code == 0
    sibling = comp_dir.with_name(comp_dir.name + "_d2")
    assert len(list(sibling.glob("CDS_3_4_d2_*.jsonl"))) == 7
    ds = read_dataset(sibling / "CDS_3_4_d2_test.jsonl")
    assert max(len(c) for c in ds.configs1) <= 6
    code, _, _ = run(capsys, "gen-preset", "--kind", "line", "--n-obj", 4, "--train", 20,
                     "--eval", 10, "--out", tmp_path / "p")
    assert code == 0 and len(list((tmp_path / "p").glob("*.jsonl"))) == 3


def test_train_eval_heatmap_pipeline(comp_dir, tmp_path, capsys):
    start = time.perf_counter()
    ident = tmp_path / "ident"
    assert run(capsys, "gen-ident", "--n-obj", 3, "--train", 200, "--eval", 100,
               "--out", ident)[0] == 0
    ckpt = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", "--task", "ident", "--model", "rds", "--data", ident,
                       "--epochs", 2, "--lr", 1e-3, "--batch", 128, "--seed", 0, "--out", ckpt,
                       "--report", tmp_path / "r.jsonl")
    assert code == 0 and ckpt.exists() and "test accuracy" in out
    assert len(json.loads((tmp_path / "r.jsonl").read_text())["epochs"]) == 2
    code, out, _ = run(capsys, "eval", "--ckpt", ckpt, "--data", ident / "IDS_3_test.jsonl")
    assert code == 0 and out.startswith("accuracy\t")
    code, out, _ = run(capsys, "heatmap", "--ckpt", ckpt, "--data", ident / "IDS_3_test.jsonl",
                       "--sample", 2, "--object", 1, "--res", 16, "--out", tmp_path / "hm")
    assert code == 0
    grid = np.loadtxt(tmp_path / "hm.txt")
    assert grid.shape == (16, 16)
    meta = json.loads((tmp_path / "hm.json").read_text())
    assert meta["object_index"] == 1 and len(meta["star_cell"]) == 2
    assert (tmp_path / "hm.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")

    cc = tmp_path / "c.json"
    code, out, _ = run(capsys, "train", "--task", "comp", "--model", "mpgnn", "--data", comp_dir,
                       "--stage-epochs", 1, "--out", cc, "--report", tmp_path / "rc.jsonl")
    assert code == 0
    assert len(json.loads((tmp_path / "rc.jsonl").read_text())["epochs"]) == 5
    code, out, _ = run(capsys, "train", "--task", "comp", "--model", "deepset", "--data", comp_dir,
                       "--no-curriculum", "--epochs", 2, "--steps-per-epoch", 3,
                       "--out", tmp_path / "c2.json", "--report", tmp_path / "rd.jsonl")
    assert code == 0
    assert json.loads((tmp_path / "rd.jsonl").read_text())["total_steps"] == 6
    code, _, _ = run(capsys, "heatmap", "--ckpt", cc, "--data", comp_dir / "CDS_3_4_test.jsonl",
                     "--res", 8, "--no-image", "--out", tmp_path / "hc")
    assert code == 0 and not (tmp_path / "hc.ppm").exists()
    assert time.perf_counter() - start < 120


def test_eval_untrained_checkpoint_near_chance(tmp_path, capsys):
    data = tmp_path / "d"
    run(capsys, "gen-ident", "--n-obj", 5, "--train", 10, "--eval", 2000, "--seed", 4, "--out", data)
    accs = []
    for seed in range(20):
        ck = tmp_path / f"u{seed}.json"
        assert run(capsys, "train", "--task", "ident", "--model", "deepset", "--data", data,
                   "--max-steps", 0, "--seed", seed, "--out", ck)[0] == 0
        code, out, _ = run(capsys, "eval", "--ckpt", ck, "--data", data / "IDS_5_test.jsonl")
        accs.append(float(out.split("\t")[1]))
    # Chance holds in expectation over initialisations.
    assert abs(np.mean(accs) - 0.5) <= 0.03


def test_bench_smoke(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "table1", "--seeds", 1, "--models", "deepset",
                       "--train", 40, "--eval", 20, "--epochs", 1, "--out", tmp_path / "t1.txt")
    assert code == 0 and "deepset" in out
    assert (tmp_path / "t1.txt").read_text() == out
    for name in ("table2", "gen-matrix", "sweep", "distractors", "presets"):
        code, out, err = run(capsys, "bench", name, "--seeds", 1, "--models", "rds",
                             "--train", 30, "--eval", 20, "--epochs", 1, "--stage-epochs", 1,
                             "--comp-steps", 2)
        assert code == 0, (name, err)
        assert out.strip()


def test_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code != 0 and "usage" in err
    code, _, err = run(capsys, "gen-ident", "--n-obj", 3, "--bogus", 1, "--out", tmp_path)
    assert code != 0 and "usage" in err
    assert run(capsys, "gen-ident", "--n-obj", 0, "--out", tmp_path)[0] == 1
    assert run(capsys, "gen-comp", "--n-min", 5, "--n-max", 3, "--out", tmp_path)[0] == 1
    assert run(capsys, "eval", "--ckpt", tmp_path / "missing.json", "--data", "x")[0] == 1
    assert run(capsys, "bench", "table1", "--models", "cnn", "--train", 10)[0] == 1


def test_incompatible_task_rejected(comp_dir, tmp_path, capsys):
    ident = tmp_path / "i"
    run(capsys, "gen-ident", "--n-obj", 3, "--train", 20, "--eval", 10, "--out", ident)
    ck = tmp_path / "m.json"
    assert run(capsys, "train", "--task", "ident", "--model", "mlp", "--data", ident,
               "--max-steps", 0, "--out", ck)[0] == 0
    code, _, err = run(capsys, "eval", "--ckpt", ck, "--data", comp_dir / "CDS_3_4_test.jsonl")
    assert code == 1 and "comparison" in err
    code, _, err = run(capsys, "train", "--task", "comp", "--model", "rds", "--data", ident,
                       "--out", ck)
    assert code == 1 and "comparison" in err
    code, _, err = run(capsys, "heatmap", "--ckpt", ck, "--data", ident / "IDS_3_test.jsonl",
                       "--object", 7, "--out", tmp_path / "h")
    assert code == 1 and "object" in err
