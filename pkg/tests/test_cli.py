import json

from dude_mec.cli import build_parser, config_from_args, main


def write_cfg(tmp_path, **extra):
    cfg = {"network": {"area_width": 200, "area_height": 200, "n_sbs": 2}, "n_drops": 1}
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_flags_override_config(tmp_path):
    path = write_cfg(tmp_path, seed=3)
    args = build_parser().parse_args(["--config", str(path), "--out", "x", "--drops", "4",
                                      "--sweep-sbs", "1,2", "--schemes", "CUDA", "SPA_FPC"])
    cfg = config_from_args(args)
    assert cfg.n_drops == 4 and cfg.sweep_sbs == [1, 2] and cfg.seed == 3
    assert cfg.schemes == ["CUDA", "SPA_FPC"] and cfg.output_dir == "x"


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "res"
    rc = main(["--config", str(write_cfg(tmp_path)), "--out", str(out),
               "--sweep-sbs", "1,2", "--plots"])
    assert rc == 0
    assert (out / "summary.csv").exists() and (out / "jain_ul.svg").exists()
    assert "2 drops" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"network": {"n_subchannels": 0}}')
    assert main(["--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "o"),
                 "--schemes", "NOMA"]) == 2
    assert main(["--config", str(tmp_path / "missing.json"), "--out", "o"]) == 2
    assert "config error" in capsys.readouterr().err


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    rc = main(["--config", str(write_cfg(tmp_path)), "--out", str(blocker / "sub"),
               "--schemes", "CUDA"])
    assert rc == 1
