import math
import re
import subprocess
import sys

import pytest

from coattn.checkpoint import load_checkpoint
from coattn.cli import build_parser, main
from coattn.config import DEFAULTS
from coattn.data_io import read_bundle
from coattn.retrieval import MetricsReport


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def losses(text):
    return [float(m) for m in re.findall(r"^epoch=\d+ loss=(\S+)$", text, flags=re.M)]


@pytest.fixture
def synth(tmp_path, capsys):
    def make(name="s.emb", items=20, dim=16, frames=4, noise=0.05, seed=7):
        path = tmp_path / name
        code, out, _ = run(capsys, "gen-synth", "--items", items, "--dim", dim, "--frames", frames,
                           "--noise", noise, "--seed", seed, "--out", path)
        assert code == 0
        return path
    return make


def test_gen_synth(synth, capsys):
    path = synth()
    b = read_bundle(path)
    assert (len(b.audio), len(b.text), b.dim) == (20, 20, 16)
    again = synth("t.emb")
    assert path.read_bytes() == again.read_bytes()


def test_gen_synth_prints_counts(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-synth", "--items", 3, "--dim", 2, "--out", tmp_path / "x.emb")
    assert code == 0 and "audio=3 text=3 pairs=3 dim=2" in out


@pytest.mark.parametrize("flags", [["--items", "1"], ["--dim", "0"], ["--noise", "-1"]])
def test_gen_synth_usage_errors(tmp_path, capsys, flags):
    code, _, err = run(capsys, "gen-synth", *flags, "--out", tmp_path / "x.emb")
    assert code == 2 and "error" in err


def test_train_logs_and_checkpoint(synth, tmp_path, capsys):
    ckpt, log = tmp_path / "m.ckp", tmp_path / "loss.log"
    code, out, _ = run(capsys, "train", "--bundle", synth(), "--variant", "single", "--depth", 1,
                       "--batch", 8, "--epochs", 3, "--out", ckpt, "--log", log)
    assert code == 0
    assert len(losses(out)) == 3 and f"checkpoint={ckpt}" in out
    assert log.read_text() == "".join(f"{line}\n" for line in out.splitlines() if line.startswith("epoch="))
    assert load_checkpoint(ckpt).epoch == 3


def test_train_clotho_shaped(synth, tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--bundle", synth(items=64), "--variant", "iterating", "--depth", 5,
                       "--batch", 32, "--epochs", 1, "--out", tmp_path / "m.ckp")
    assert code == 0
    assert all(math.isfinite(x) for x in losses(out))


@pytest.mark.parametrize("flags", [
    ["--variant", "single", "--depth", "2"], ["--depth", "9"], ["--heads", "3"],
    ["--batch", "1"], ["--batch", "64"], ["--lambda", "2"], ["--temperature", "0"],
])
def test_train_config_errors(synth, tmp_path, capsys, flags):
    code, _, err = run(capsys, "train", "--bundle", synth(), "--out", tmp_path / "m.ckp", "--epochs", "1", *flags)
    assert code == 2, err


def test_train_missing_bundle(tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--bundle", tmp_path / "none.emb", "--out", tmp_path / "m.ckp")
    assert code == 2


def test_train_non_finite_aborts(synth, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--bundle", synth(), "--out", tmp_path / "m.ckp", "--epochs", 1,
                       "--batch", 8, "--depth", 1, "--temperature", "1e-320")
    assert code == 1 and "step" in err
    assert not (tmp_path / "m.ckp").exists()


def test_config_file(synth, tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# test run\nbundle = {synth()}\nout = {tmp_path / 'm.ckp'}\n"
                    "variant = stacking\ndepth = 1\nbatch_size = 8\nepochs = 2\n")
    code, out, _ = run(capsys, "train", "--config", conf)
    assert code == 0 and len(losses(out)) == 2
    code, out, _ = run(capsys, "train", "--config", conf, "--epochs", 3)
    assert code == 0 and len(losses(out)) == 3


@pytest.mark.parametrize("text", ["colour = red\n", "epochs = 2\nepochs = 3\n", "epochs two\n", "epochs = x\n"])
def test_config_file_strict(synth, tmp_path, capsys, text):
    conf = tmp_path / "bad.conf"
    conf.write_text(text)
    code, _, err = run(capsys, "train", "--config", conf, "--bundle", synth(), "--out", tmp_path / "m.ckp")
    assert code == 2 and "bad.conf" in err


def test_noiseless_full_batch_loss_strictly_decreasing(synth, tmp_path, capsys):
    bundle = synth(items=16, noise=0.0)
    code, out, _ = run(capsys, "train", "--bundle", bundle, "--variant", "single", "--depth", 1,
                       "--batch", 16, "--epochs", 50, "--out", tmp_path / "m.ckp")
    hist = losses(out)
    assert code == 0 and len(hist) == 50
    for prev, cur in zip(hist[4:], hist[5:]):
        assert cur < prev + 1e-6


@pytest.fixture
def trained(synth, tmp_path, capsys):
    bundle = synth(noise=0.0)
    ckpt = tmp_path / "m.ckp"
    code, _, _ = run(capsys, "train", "--bundle", bundle, "--variant", "iterating", "--depth", 2,
                     "--batch", 8, "--epochs", 100, "--out", ckpt)
    assert code == 0
    return bundle, ckpt


def test_eval_directions_agree_when_trained(trained, tmp_path, capsys):
    bundle, ckpt = trained
    code, t2a, _ = run(capsys, "eval", "--checkpoint", ckpt, "--bundle", bundle, "--json", tmp_path / "r.json")
    assert code == 0
    for key in ("map_at_10", "r_at_1", "r_at_5", "r_at_10", "num_queries"):
        assert f"{key}=" in t2a
    code, a2t, _ = run(capsys, "eval", "--checkpoint", ckpt, "--bundle", bundle, "--direction", "a2t")
    assert code == 0
    assert MetricsReport.from_text(a2t) == MetricsReport.from_text(t2a)
    assert MetricsReport.from_text(t2a).map_at_10 >= 0.95
    assert '"map_at_10"' in (tmp_path / "r.json").read_text()


def test_eval_workers_do_not_change_report(synth, capsys):
    bundle = synth(items=8)
    base = ["eval", "--untrained", "--bundle", bundle, "--depth", 1]
    _, one, _ = run(capsys, *base)
    _, three, _ = run(capsys, *base, "--workers", 3)
    assert one == three


def test_eval_errors(synth, tmp_path, capsys):
    bundle = synth()
    assert run(capsys, "eval", "--checkpoint", tmp_path / "missing.ckp", "--bundle", bundle)[0] == 2
    assert run(capsys, "eval", "--bundle", bundle)[0] == 2
    small = synth("d8.emb", items=8, dim=8)
    run(capsys, "train", "--bundle", small, "--depth", 1, "--batch", 4, "--epochs", 1, "--out", tmp_path / "d8.ckp")
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "d8.ckp", "--bundle", bundle)
    assert code == 2 and "dimension" in err


def test_gradcheck_default_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert "failed=0" in out and re.search(r"group=\S+ max_rel_error=", out)


def test_gradcheck_stacking_depth_two(capsys):
    code, out, _ = run(capsys, "gradcheck", "--depth", 2, "--variant", "stacking")
    assert code == 0 and "failed=0" in out


def test_gradcheck_break_me_names_group(capsys):
    code, out, err = run(capsys, "gradcheck", "--variant", "single", "--break-me")
    assert code == 1
    failed = re.findall(r"group=(\S+) .*status=FAIL", out)
    assert failed == ["cascade.layer0.sa_audio.proj.ln_scale"]
    assert failed[0] in err


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and "train" in a.choices)
    for name, p in sub.choices.items():
        text = " ".join(p.format_help().split())
        for action in p._actions:
            if action.help == "==SUPPRESS==" or not action.option_strings or action.dest == "help":
                continue
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.default not in (None, False):
                assert f"default: {action.default}" in text, (name, action.dest)
        for key in ("variant", "depth", "heads", "batch_size", "epochs", "learning_rate", "temperature", "lambda"):
            if name == "train":
                assert f"default: {DEFAULTS[key]}" in text, key


def test_help_exit_code():
    out = subprocess.run([sys.executable, "-m", "coattn", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--variant" in out.stdout
