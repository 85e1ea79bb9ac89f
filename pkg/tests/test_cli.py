import csv
import io

import pytest

from mcglab.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_env_gen_and_reach(tmp_path, capsys):
    desc = tmp_path / "env.txt"
    code, out, _ = run_cli(capsys, "env", "gen", "--name", "chemical", "--nodes", "3", "--colors", "2",
                           "--out", str(desc), "--trajectory", str(tmp_path / "t.txt"), "--steps", "5")
    assert code == 0 and desc.exists() and (tmp_path / "t.txt").exists()
    code, out, _ = run_cli(capsys, "reach", "--env", str(desc), "--start", "0,0,0")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["state_index", "values", "min_k_reach", "feasible"]
    assert len(rows) == 1 + 8 and rows[1][2] == "0"


def test_train_eval_plan_run_report(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("env.name = lockbox\nmodel.codebook_size = 2\ntrain.steps = 30\ntrain.report_every = 10\n"
                   "eval.samples = 100\neval.episodes = 1\nrun.seeds = 0\neval.variants = mcg\n")
    ckpt = tmp_path / "m.ckpt"
    code, out, _ = run_cli(capsys, "train", "--config", str(cfg), "--out", str(ckpt),
                           "--report", str(tmp_path / "r.csv"))
    assert code == 0 and ckpt.exists() and (tmp_path / "r.csv").exists()

    code, out, _ = run_cli(capsys, "eval", "--checkpoint", str(ckpt), "--noise", "0,1", "--samples", "100")
    metrics = dict(csv.reader(io.StringIO(out)))
    assert code == 0 and "accuracy_noise1" in metrics and "swap_acc" in metrics

    code, out, _ = run_cli(capsys, "plan", "--checkpoint", str(ckpt), "--goal", "1,1,1", "--seeds", "0,1",
                           "--horizon", "3")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["seed", "episode", "reward"] and len(rows) == 3

    code, out, _ = run_cli(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "run"))
    assert code == 0 and (tmp_path / "run" / "metrics.csv").exists()
    code, out, _ = run_cli(capsys, "report", str(tmp_path / "run"))
    assert code == 0 and out.startswith("run_id metric mean std n")


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.codebok_size = 4\n")
    code, _, err = run_cli(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "m.ckpt"))
    assert code == 2 and "model.codebook_size" in err


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
