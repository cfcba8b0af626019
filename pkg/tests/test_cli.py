import json

import pytest

from cowqkd.cli import EXIT_CALIBRATION, EXIT_CONFIG, EXIT_INSECURE, EXIT_OK, main

SMALL = [
    "--frames", "600000",
    "--set", "distill.block_length=500",
    "--set", "distill.disclosure_size=150",
    "--set", "attack.corr_floor=0.005",
    "--set", "source.mean_photon_number=0.2",
    "--seed", "3",
]


def test_simulate_preset_smoke(capsys, tmp_path):
    code = main(["simulate", "--preset", "5v", "--frames", "50000",
                 "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "sifted" in out
    assert "p_sift" in out
    assert (tmp_path / "rates.csv").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["counts"]["n_sift"] > 0

def test_simulate_attack_pipeline(capsys):
    code = main(["simulate", *SMALL])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "eve-backflash" in out

def test_replicate_command_uses_reference_preset(capsys):
    code = main(["replicate-paper", *SMALL])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "trial(s)" in out

def test_rates_closed_forms_only(capsys):
    code = main(["rates", "--preset", "5v"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "p_sec_finite" in out
    assert "-" in out  # no empirical columns without a run

def test_rates_insecure_exit(capsys):
    code = main(["rates", "--preset", "5v", "--qber", "0.3"])
    err = capsys.readouterr().err
    assert code == EXIT_INSECURE
    assert "clamped" in err

def test_exit_config_on_bad_key(capsys):
    code = main(["simulate", "--preset", "5v", "--set", "spad.nope=1"])
    assert code == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err

def test_exit_config_on_invalid_geometry(capsys):
    code = main(["simulate", "--preset", "5v", "--set", "spad.gate_width_ps=40000"])
    assert code == EXIT_CONFIG

def test_exit_config_on_malformed_set(capsys):
    code = main(["simulate", "--preset", "5v", "--set", "spad.gate_width_ps"])
    assert code == EXIT_CONFIG

def test_exit_calibration_without_eavesdropper_light(capsys):
    code = main(["simulate", *SMALL,
                 "--set", "spad.backflash_probability=0",
                 "--set", "spad.facet_reflectance=0"])
    assert code == EXIT_CALIBRATION
    assert "calibration failed" in capsys.readouterr().err

def test_sweep_writes_csv(capsys, tmp_path):
    code = main(["sweep", "--preset", "5v", "--frames", "30000",
                 "--axis", "distance", "--values", "0,25",
                 "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert (tmp_path / "sweep_distance.csv").exists()
    assert "p_sift" in out

def test_sweep_rejects_unknown_axis():
    with pytest.raises(SystemExit):
        main(["sweep", "--preset", "5v", "--axis", "voltage", "--values", "1"])

def test_correlate_smoke(capsys, tmp_path):
    code = main(["correlate", "--preset", "5v", "--widths", "2000",
                 "--clicks", "3000", "--out", str(tmp_path), "--seed", "1"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "gate_width_ps" in out
    assert (tmp_path / "correlation_w2000.csv").exists()

def test_config_file_loading(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("frames_per_trial = 40000\nattack_enabled = false\n")
    code = main(["simulate", "--preset", "5v", "--config", str(cfg)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "40000 frames" in out
