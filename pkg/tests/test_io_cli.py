import json

import numpy as np
import pytest

from phyloclone import io
from phyloclone.cli import RunManifest, main, parse_clones
from phyloclone.model import ModelParams
from phyloclone.sampler import SamplerConfig, run
from phyloclone.simulate import SimulationSpec, simulate_dataset


def write_tsv(path, rows):
    path.write_text("".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


def test_load_counts_small(tmp_path):
    c = write_tsv(tmp_path / "c.tsv", [["mutation", "s1", "s2"], ["m1", 3, 0], ["m2", 5, 7]])
    d = write_tsv(tmp_path / "d.tsv", [["mutation", "s1", "s2"], ["m1", 10, 4], ["m2", 9, 7]])
    data = io.load_counts(c, d)
    assert data.X.tolist() == [[3, 0], [5, 7]]
    assert data.D.tolist() == [[10, 4], [9, 7]]
    assert data.mutation_ids == ("m1", "m2") and data.sample_ids == ("s1", "s2")


def test_count_above_depth_names_cell(tmp_path):
    c = write_tsv(tmp_path / "c.tsv", [["mutation", "s1", "s2"], ["m1", 3, 0], ["m2", 50, 7]])
    d = write_tsv(tmp_path / "d.tsv", [["mutation", "s1", "s2"], ["m1", 10, 4], ["m2", 9, 7]])
    with pytest.raises(io.FormatError, match="'m2'.*'s1'"):
        io.load_counts(c, d)


def test_non_integer_and_misaligned_input(tmp_path):
    d = write_tsv(tmp_path / "d.tsv", [["mutation", "s1"], ["m1", 10]])
    c = write_tsv(tmp_path / "c.tsv", [["mutation", "s1"], ["m1", "2.5"]])
    with pytest.raises(io.FormatError, match="non-integer"):
        io.load_counts(c, d)
    c = write_tsv(tmp_path / "c2.tsv", [["mutation", "s1"], ["mX", 2]])
    with pytest.raises(io.FormatError, match="mutation identifiers"):
        io.load_counts(c, d)
    c = write_tsv(tmp_path / "c3.tsv", [["mutation", "s1"], ["m1", 2, 3]])
    with pytest.raises(io.FormatError, match="line 2"):
        io.load_counts(c, d)


def test_dataset_and_truth_round_trip(tmp_path):
    data, truth = simulate_dataset(SimulationSpec(J=7, T=2, K=3, seed=4))
    io.save_dataset(data, tmp_path / "c.tsv", tmp_path / "d.tsv")
    back = io.load_counts(tmp_path / "c.tsv", tmp_path / "d.tsv")
    assert np.array_equal(back.X, data.X) and np.array_equal(back.D, data.D)
    io.save_truth(truth, tmp_path / "t.json")
    t2 = io.load_truth(tmp_path / "t.json")
    assert np.array_equal(t2.tree.parents, truth.tree.parents)
    assert np.array_equal(t2.Z, truth.Z) and np.array_equal(t2.F, truth.F)
    assert json.loads((tmp_path / "t.json").read_text())["tree"][0] == 0


def test_saved_outputs(tmp_path):
    data, truth = simulate_dataset(SimulationSpec(J=8, T=2, K=3, seed=1))
    cfg = SamplerConfig(iterations=40, n_chains=2, swap_interval=5)
    trace, est = run(data, 3, ModelParams(), cfg)
    paths = io.save_outputs(trace, est, tmp_path, data=data, truth=truth)
    doc = json.loads(paths["map.json"].read_text())
    assert doc["tree"][0] == 0 and doc["K"] == 3
    assert doc["log_posterior"] == est.log_posterior
    rt = io.load_map(paths["map.json"])
    assert np.array_equal(rt.F, est.F) and np.array_equal(rt.Z, est.Z)
    cols = io.read_trace(paths["trace.tsv"])
    assert len(cols["sweep"]) == len(trace) == cfg.n_retained
    assert np.array_equal(cols["log_posterior"], trace.log_posterior)
    acc = json.loads(paths["acceptance.json"].read_text())
    assert set(acc["moves"]) == {"chain1", "chain2"}
    assert acc["chain_swap_counts"][1] == 8
    scores = json.loads(paths["scores.json"].read_text())
    assert set(scores) == {"Z_err", "F_err", "permutation"}
    assert (tmp_path / "genotypes.tsv").read_text().startswith("mutation\tclone1")


def test_perfect_estimate_scores_zero():
    _, truth = simulate_dataset(SimulationSpec(J=9, T=2, K=3, seed=2))
    est = type("E", (), {"Z": truth.Z, "F": truth.F})()
    s = io.score(est, truth)
    assert s["Z_err"] == 0 and s["F_err"] == 0 and s["permutation"][0] == 1


def test_parse_clones():
    assert parse_clones("4") == [4]
    assert parse_clones("3..5") == [3, 4, 5]
    assert parse_clones("5..3") == []


def test_cli_rejects_empty_range_and_missing_inputs(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--counts", "a", "--depths", "b", "--clones", "5..3"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["run", "--clones", "4"])


def test_cli_missing_file_is_an_error(tmp_path, capsys):
    code = main(["run", "--counts", str(tmp_path / "no.tsv"), "--depths",
                 str(tmp_path / "no.tsv"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "phyloclone:" in capsys.readouterr().err


def test_cli_simulate_run_score(tmp_path):
    d = tmp_path / "data"
    assert main(["simulate", "-J", "15", "-T", "2", "-K", "3", "--seed", "3", "--out",
                 str(d)]) == 0
    out = tmp_path / "out"
    assert main(["run", "--counts", str(d / "counts.tsv"), "--depths", str(d / "depths.tsv"),
                 "--clones", "2..3", "--replicates", "2", "--iterations", "200",
                 "--chains", "2", "--swap-interval", "10", "--truth", str(d / "truth.json"),
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["selected_K"] in (2, 3)
    assert set(summary["candidates"]) == {"2", "3"}
    assert "psrf" in summary["candidates"]["3"] and "scores" in summary["candidates"]["3"]
    for K in (2, 3):
        for r in (1, 2):
            assert (out / f"K{K}" / f"rep{r}" / "map.json").exists()
    manifest = RunManifest.from_file(out / "manifest.json")
    assert manifest.seeds == [0, 1] and manifest.config.iterations == 200
    scores_path = tmp_path / "scores.json"
    assert main(["score", "--map", str(out / "K3" / "rep1" / "map.json"), "--truth",
                 str(d / "truth.json"), "--out", str(scores_path)]) == 0
    assert json.loads(scores_path.read_text()) == json.loads(
        (out / "K3" / "rep1" / "scores.json").read_text())


def test_manifest_runs_are_byte_identical(tmp_path):
    d = tmp_path / "data"
    main(["simulate", "-J", "12", "-T", "2", "-K", "3", "--out", str(d)])
    doc = {"counts": str(d / "counts.tsv"), "depths": str(d / "depths.tsv"), "clones": [3],
           "seeds": [7], "outdir": "out", "config": {"iterations": 150, "n_chains": 3,
                                                      "swap_interval": 10}}
    maps = []
    for name in ("a", "b"):
        run_dir = tmp_path / name
        run_dir.mkdir()
        doc["outdir"] = str(run_dir / "out")
        (run_dir / "m.json").write_text(json.dumps(doc))
        assert main(["run", "--manifest", str(run_dir / "m.json")]) == 0
        maps.append((run_dir / "out" / "K3" / "rep1" / "map.json").read_bytes())
    assert maps[0] == maps[1]


def test_manifest_validation():
    with pytest.raises(ValueError):
        RunManifest(counts="c", depths="d", clones=[], seeds=[1], outdir="o")
    with pytest.raises(ValueError):
        RunManifest(counts="c", depths="d", clones=[3], seeds=[1, 1], outdir="o")
    m = RunManifest(counts="c", depths="d", clones=[3], seeds=[1], outdir="o",
                    config={"iterations": 5, "frozen": ["tree"]})
    assert m.config.frozen == ("tree",)
    assert RunManifest(**json.loads(json.dumps(m.to_dict()))).config == m.config
