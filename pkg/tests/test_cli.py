from click.testing import CliRunner

from deepdist.cli import main
from deepdist.tree import parse_newick, unrooted_equal


def _run(args, **kw):
    return CliRunner().invoke(main, args, catch_exceptions=False, **kw)


def test_pipeline(tmp_path):
    aln, tree, mat, out, log = (tmp_path / x for x in ("a.txt", "t.nwk", "d.csv", "o.nwk", "log.txt"))
    r = _run(["simulate", "--n", "8", "--k", "100000", "--seed", "3", "--out", str(aln), "--tree-out", str(tree)])
    assert r.exit_code == 0, r.output
    r = _run(["distances", str(aln), "--out", str(mat)])
    assert r.exit_code == 0, r.output
    cfg = tmp_path / "deep.cfg"
    cfg.write_text("d = 1.05\nw = 6\n")
    r = _run(["reconstruct", str(mat), "--config", str(cfg), "--out", str(out), "--log", str(log)])
    assert r.exit_code == 0, r.output
    assert unrooted_equal(parse_newick(out.read_text()), parse_newick(tree.read_text()))
    assert log.read_text().startswith("level 0")


def test_simulate_to_stdout():
    r = _run(["simulate", "--n", "4", "--k", "5", "--format", "fasta"])
    assert r.exit_code == 0
    assert r.output.count(">") == 4


def test_reconstruct_failure_exit_code(tmp_path):
    aln, mat = tmp_path / "a.txt", tmp_path / "d.csv"
    _run(["simulate", "--n", "16", "--k", "10", "--out", str(aln)])
    _run(["distances", str(aln), "--out", str(mat)])
    r = _run(["reconstruct", str(mat)])
    assert r.exit_code == 1
    assert "reconstruction failed" in r.output


def test_bad_input_is_a_clean_error(tmp_path):
    r = _run(["simulate", "--n", "12"])
    assert r.exit_code != 0 and "422" in r.output
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    mat = tmp_path / "m.csv"
    mat.write_text("x")
    r = _run(["reconstruct", str(mat), "--config", str(cfg)])
    assert r.exit_code != 0 and "unknown config key" in r.output


def test_unreachable_server():
    r = _run(["--server", "http://127.0.0.1:9", "verify"])
    assert r.exit_code != 0 and "cannot reach" in r.output


def test_sweep_and_verify(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# deepdist-experiment v1\nn = 8\nk = 200000\ntrials = 2\nd = 1.05\n")
    r = _run(["sweep", str(cfg), "--no-timing"])
    assert r.exit_code == 0
    assert "8,200000,eigenvector,deep,1.000000" in r.output
    assert "k90 eigenvector/deep: n=8: 200000" in r.output
    r = _run(["verify"])
    assert r.exit_code == 0 and "FAIL" not in r.output
