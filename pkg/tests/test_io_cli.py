import copy
import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from hspm import (
    ArrayLayout,
    GainModel,
    InvalidArgumentError,
    PathParams,
    Scene,
    ValidationError,
    free_space_amp,
    model_mismatch_db,
    reference_truth,
    scene_from_dict,
    synth_hspm,
    synth_swm,
)
from hspm.cli import main
from hspm.dataset import (
    CodebookConfig,
    DatasetManifest,
    denormalize_labels,
    export_dataset,
    load_labels,
    load_manifest,
    load_samples,
)
from hspm.channel import farfield_metric
from hspm.geometry import C_LIGHT
from hspm.sceneio import (
    export_reference_estimate,
    import_external_estimates,
    load_channel,
    load_scene,
    save_channel,
    save_scene,
)
from hspm.sweeps import SweepConfig, run_sweep, scene_for_point

from conftest import FROZEN_B, make_los_scene, small_sampler

MULTI_SUB = dict(
    copy.deepcopy(FROZEN_B),
    tx={"subarray_offsets": [[0, 0], [4, 0], [0, 4], [4, 4]], "na_x": 2, "na_z": 2},
    rx={"subarray_offsets": [[0, 0], [4, 0], [0, 4], [4, 4]], "na_x": 2, "na_z": 2},
)


def through_array_scene() -> Scene:
    f = 1e10
    lam = C_LIGHT / f
    tx = ArrayLayout(((0, 0), (60, 0)), 2, 2, lam / 2)
    rx = ArrayLayout(((0, 0),), 2, 2, lam / 2)
    los = PathParams(1, free_space_amp(2.0, lam), 2.0, 0.2, 0.1, -0.2, -0.1)
    nlos = PathParams(2, free_space_amp(2.7, lam, 0.7), 2.7, 1.2, 0.0,
                      0.3259148411177053, -0.11855852853179259)
    return Scene(f, tx, rx, (los, nlos), GainModel(0.0, (0.7,)))


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def test_scene_roundtrip_exact(two_path_scene, tmp_path):
    p = tmp_path / "scene.json"
    save_scene(two_path_scene, p)
    again = load_scene(p)
    assert again.fingerprint() == two_path_scene.fingerprint()
    assert again.paths == two_path_scene.paths
    assert again.gain_model == two_path_scene.gain_model


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("frequency_hz"), "frequency_hz"),
    (lambda d: d.update(frequency_hz=-1.0), "frequency_hz"),
    (lambda d: d.update(frequency_hz="fast"), "frequency_hz"),
    (lambda d: d.update(d_m=0.02), "d"),
    (lambda d: d["tx"].pop("na_x"), "tx.na_x"),
    (lambda d: d["rx"].update(subarray_offsets=[[0, 0], [0, 0]]),
     "rx.subarray_offsets"),
    (lambda d: d.update(d11_m=0.0), "d11_m"),
    (lambda d: d["los"].update(theta_r=0.3), "los.theta_r"),
    (lambda d: d["los"].update(phi_r=0.2), "los.phi_r"),
    (lambda d: d["nlos"][0].update(refl_coeff=1.5), "nlos[0].refl_coeff"),
    (lambda d: d["nlos"][0].update(theta_r=0.4), "nlos[0]"),
    (lambda d: d["nlos"][0].update(phi_r=0.4), "nlos[0].phi_r"),
    (lambda d: d["gain_model"].update(k_abs=-0.1), "gain_model.k_abs"),
])
def test_scene_from_dict_field_errors(mutate, field):
    doc = copy.deepcopy(FROZEN_B)
    mutate(doc)
    with pytest.raises(ValidationError) as err:
        scene_from_dict(doc)
    assert err.value.field == field


def test_load_scene_file_errors(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_scene(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"frequency_hz": 1e10,,}')
    with pytest.raises(ValidationError, match="line 1"):
        load_scene(bad)


# ---------------------------------------------------------------------------
# channel files
# ---------------------------------------------------------------------------

def test_channel_roundtrip_exact(two_path_scene, tmp_path):
    cm = synth_swm(two_path_scene)
    p = tmp_path / "h.chan"
    save_channel(cm, p)
    again = load_channel(p)
    assert np.array_equal(again.entries, cm.entries)
    assert again.model == "swm"
    assert again.scene_hash == two_path_scene.fingerprint()


def test_channel_file_errors(two_path_scene, tmp_path):
    p = tmp_path / "h.chan"
    save_channel(synth_swm(two_path_scene), p)
    raw = p.read_bytes()
    head, _, payload = raw.partition(b"\n")

    trunc = tmp_path / "trunc.chan"
    trunc.write_bytes(head + b"\n" + payload[:-8])
    with pytest.raises(ValidationError) as err:
        load_channel(trunc)
    assert err.value.field == "payload"

    noheader = tmp_path / "nohead.chan"
    noheader.write_bytes(b'{"rows": 4}\n' + payload)
    with pytest.raises(ValidationError) as err:
        load_channel(noheader)
    assert err.value.field == "header"


# ---------------------------------------------------------------------------
# external estimate files
# ---------------------------------------------------------------------------

def test_external_estimates_roundtrip_exact(two_path_scene, tmp_path):
    ref = reference_truth(two_path_scene)
    p = tmp_path / "est.json"
    export_reference_estimate(ref, p)
    again = import_external_estimates(p)
    assert again.provenance == "external"
    for name in ("amp", "dist", "theta_t", "phi_t", "theta_r", "phi_r"):
        assert np.array_equal(getattr(again, name), getattr(ref, name))


def test_external_estimates_validation(two_path_scene, tmp_path):
    ref = reference_truth(two_path_scene)
    p = tmp_path / "est.json"
    export_reference_estimate(ref, p)
    doc = json.loads(p.read_text())

    doc2 = copy.deepcopy(doc)
    doc2["paths"][1]["theta_r_rad"] = 7.0    # radians, not wrapped
    p2 = tmp_path / "bad_range.json"
    p2.write_text(json.dumps(doc2))
    with pytest.raises(ValidationError) as err:
        import_external_estimates(p2)
    assert err.value.field == "paths[1].theta_r_rad"

    doc3 = copy.deepcopy(doc)
    del doc3["paths"][0]["amp"]
    p3 = tmp_path / "missing.json"
    p3.write_text(json.dumps(doc3))
    with pytest.raises(ValidationError) as err:
        import_external_estimates(p3)
    assert err.value.field == "paths[0].amp"

    p4 = tmp_path / "empty.json"
    p4.write_text('{"paths": []}')
    with pytest.raises(ValidationError):
        import_external_estimates(p4)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_sweep_config_validation():
    ok = dict(axis="distance", points=(1.0, 2.0), template=FROZEN_B)
    SweepConfig(**ok)
    for bad in (dict(ok, axis="power"), dict(ok, points=(1.0,)),
                dict(ok, points=(2.0, 1.0)), dict(ok, points=(-1.0, 2.0)),
                dict(ok, models=("swm",)), dict(ok, template=[1, 2])):
        with pytest.raises(InvalidArgumentError):
            SweepConfig(**bad)


def test_scene_for_point_axes():
    cfg = SweepConfig(axis="distance", points=(2.0, 4.0), template=MULTI_SUB)
    assert scene_for_point(cfg, 4.0).d11 == 4.0

    cfg = SweepConfig(axis="spacing", points=(0.5, 1.0), template=MULTI_SUB)
    sc = scene_for_point(cfg, 1.0)      # one lambda = two half-wave units
    assert sc.tx.subarrays == ((0, 0), (8, 0), (0, 8), (8, 8))
    assert sc.frequency == MULTI_SUB["frequency_hz"]

    cfg = SweepConfig(axis="frequency", points=(1e10, 2e10), template=MULTI_SUB)
    sc = scene_for_point(cfg, 2e10)     # same physical aperture at 2x frequency
    assert sc.frequency == 2e10
    assert sc.tx.subarrays == ((0, 0), (8, 0), (0, 8), (8, 8))
    with pytest.raises(InvalidArgumentError, match="not integral"):
        scene_for_point(SweepConfig(axis="frequency", points=(1e10, 1.1e10),
                                    template=MULTI_SUB), 1.1e10)


def test_run_sweep_distance_csv(tmp_path):
    cfg = SweepConfig(axis="distance", points=(2.0, 4.0, 8.0), template=FROZEN_B)
    out = tmp_path / "sweep.csv"
    summary = run_sweep(cfg, out)
    assert summary["axis"] == "distance" and summary["unit"] == "m"
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r.keys() for r in rows][0] == {
        "axis_value_m", "mismatch_pwm_db", "mismatch_hspm_db",
        "farfield_metric"}.union()
    assert [float(r["axis_value_m"]) for r in rows] == [2.0, 4.0, 8.0]
    mism = [float(r["mismatch_pwm_db"]) for r in rows]
    assert mism[0] > mism[1] > mism[2]     # mismatch falls with distance
    ff = [float(r["farfield_metric"]) for r in rows]
    assert ff[1] == pytest.approx(ff[0] / 2, rel=1e-12)
    # K = 1: the subarray model degenerates to the planar one
    assert mism[0] == pytest.approx(float(rows[0]["mismatch_hspm_db"]), abs=1e-6)


def test_run_sweep_row_error_context(tmp_path):
    cfg = SweepConfig(axis="spacing", points=(0.5, 0.75), template=FROZEN_B)
    with pytest.raises(InvalidArgumentError, match=r"sweep row 1 \(axis value 0.75\)"):
        run_sweep(cfg, tmp_path / "sweep.csv")


# ---------------------------------------------------------------------------
# dataset export
# ---------------------------------------------------------------------------

def test_codebook_config_validation():
    CodebookConfig(4, 4, 4, 4)
    CodebookConfig(8, 4, 2, 4)          # 16 rows each side
    with pytest.raises(InvalidArgumentError, match="square"):
        CodebookConfig(4, 5, 4, 4)
    with pytest.raises(InvalidArgumentError):
        CodebookConfig(0, 4, 4, 4)


def test_export_dataset_files(tmp_path):
    cb = CodebookConfig(4, 4, 4, 4)
    m = export_dataset(small_sampler(), cb, [10.0, None], tmp_path / "ds",
                       seed=77, n_scenes=3)
    assert m.num_samples == 6            # 3 scenes x 2 SNR points
    assert m.sample_shape == (16, 16, 3)
    assert m.label_dim == 12 and m.n_paths == 2
    assert (tmp_path / "ds" / "scenes" / "scene_00002.json").exists()

    again = load_manifest(tmp_path / "ds")
    assert again == m
    x = load_samples(tmp_path / "ds", again)
    y = load_labels(tmp_path / "ds", again)
    assert x.shape == (6, 16, 16, 3) and x.dtype == np.dtype("<f4")
    assert y.shape == (6, 12)
    # labels depend only on the scene, never the SNR draw
    assert np.array_equal(y[0], y[1]) and np.array_equal(y[4], y[5])
    assert ((0.0 <= y) & (y <= 1.0)).all()

    # denormalized labels reproduce the on-disk scene truth to f4 precision
    phys = denormalize_labels(again, y)
    sc0 = load_scene(tmp_path / "ds" / m.samples[0]["scene"])
    t = reference_truth(sc0)
    truth = np.stack([t.amp, t.dist, t.theta_t, t.phi_t, t.theta_r, t.phi_r],
                     axis=1)
    assert np.max(np.abs(phys[0] - truth)) < 1e-5
    with pytest.raises(InvalidArgumentError):
        denormalize_labels(again, y[:, :7])


def test_export_dataset_byte_identical(tmp_path):
    cb = CodebookConfig(4, 4, 4, 4)
    for d in ("a", "b"):
        export_dataset(small_sampler(), cb, [10.0], tmp_path / d,
                       seed=13, n_scenes=2)
    for name in ("samples.bin", "labels.bin", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_export_dataset_validation(tmp_path, two_path_scene):
    cb = CodebookConfig(4, 4, 4, 4)
    with pytest.raises(InvalidArgumentError, match="snr_db"):
        export_dataset(small_sampler(), cb, [], tmp_path / "x", seed=1,
                       n_scenes=1)
    with pytest.raises(InvalidArgumentError, match="n_scenes"):
        export_dataset(small_sampler(), cb, [10.0], tmp_path / "x", seed=1)
    with pytest.raises(InvalidArgumentError, match="paths"):
        export_dataset([two_path_scene, make_los_scene()], cb, [10.0],
                       tmp_path / "x", seed=1)


def test_manifest_from_dict_errors(tmp_path):
    cb = CodebookConfig(4, 4, 4, 4)
    m = export_dataset(small_sampler(), cb, [10.0], tmp_path / "ds",
                       seed=1, n_scenes=1)
    doc = m.to_dict()
    assert DatasetManifest.from_dict(doc) == m
    del doc["normalization"]
    with pytest.raises(ValidationError, match="manifest"):
        DatasetManifest.from_dict(doc)
    with pytest.raises(InvalidArgumentError, match="label_dim"):
        dataclasses.replace(m, label_dim=7)


def test_load_samples_size_check(tmp_path):
    cb = CodebookConfig(4, 4, 4, 4)
    export_dataset(small_sampler(), cb, [10.0], tmp_path / "ds", seed=1,
                   n_scenes=1)
    raw = (tmp_path / "ds" / "samples.bin").read_bytes()
    (tmp_path / "ds" / "samples.bin").write_bytes(raw[:-4])
    with pytest.raises(ValidationError, match="samples.bin"):
        load_samples(tmp_path / "ds")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

@pytest.fixture
def scene_file(tmp_path, two_path_scene):
    p = tmp_path / "scene.json"
    save_scene(two_path_scene, p)
    return p


def test_cli_synth(scene_file, tmp_path, two_path_scene, capsys):
    out = tmp_path / "h.chan"
    rc = main(["synth", "--scene", str(scene_file), "--model", "swm",
               "--out", str(out)])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["scene_hash"] == two_path_scene.fingerprint()
    assert doc["backend"] in ("cython", "numpy")
    cm = load_channel(out)
    assert np.array_equal(cm.entries, synth_swm(two_path_scene).entries)


def test_cli_ffmetric(scene_file, two_path_scene, capsys):
    assert main(["ffmetric", "--scene", str(scene_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["farfield_metric"] == farfield_metric(two_path_scene)
    assert doc["d11_m"] == 2.0


def test_cli_estimate_oracle_deterministic(scene_file, tmp_path,
                                           two_path_scene):
    outs = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        rc = main(["estimate", "--scene", str(scene_file),
                   "--phase1", "oracle", "--out", str(out)])
        assert rc == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]

    rep = json.loads(outs[0])
    assert set(rep) == {"scene_hash", "phase1", "truth_model", "snr_db",
                        "seed", "n_paths", "nmse_db", "angle_err_db",
                        "dist_err_db", "gain_err_db", "runtime_ms"}
    assert rep["phase1"] == "oracle" and rep["snr_db"] is None
    assert rep["angle_err_db"] == rep["dist_err_db"] == -300.0
    # oracle params + exact extension: only the model gap remains
    gap = model_mismatch_db(synth_hspm(two_path_scene),
                            synth_swm(two_path_scene))
    assert rep["nmse_db"] == pytest.approx(gap, abs=1e-9)
    assert set(rep["runtime_ms"].values()) == {0.0}


def test_cli_estimate_timing_flag(scene_file, tmp_path):
    out = tmp_path / "r.json"
    rc = main(["estimate", "--scene", str(scene_file), "--phase1", "oracle",
               "--out", str(out), "--timing"])
    assert rc == 0
    assert json.loads(out.read_text())["runtime_ms"]["total"] > 0.0


def test_cli_estimate_grid(scene_file, tmp_path):
    out = tmp_path / "r.json"
    rc = main(["estimate", "--scene", str(scene_file), "--phase1", "grid",
               "--grid-size", "15", "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["phase1"] == "grid"
    assert math.isfinite(rep["nmse_db"])


def test_cli_estimate_external(scene_file, tmp_path, two_path_scene):
    est = tmp_path / "est.json"
    export_reference_estimate(reference_truth(two_path_scene), est)
    out = tmp_path / "r.json"
    rc = main(["estimate", "--scene", str(scene_file), "--phase1", "external",
               "--estimates", str(est), "--out", str(out)])
    assert rc == 0
    assert json.loads(out.read_text())["angle_err_db"] == -300.0

    short = tmp_path / "short.json"
    export_reference_estimate(reference_truth(make_los_scene()), short)
    rc = main(["estimate", "--scene", str(scene_file), "--phase1", "external",
               "--estimates", str(short), "--out", str(out)])
    assert rc == 2


def test_cli_sweep(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"template": FROZEN_B, "points": [2.0, 4.0]}))
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--axis", "distance", "--config", str(cfg),
               "--out", str(out)])
    assert rc == 0
    header = out.read_text().splitlines()[0]
    assert header == "axis_value_m,mismatch_pwm_db,mismatch_hspm_db,farfield_metric"
    assert json.loads(capsys.readouterr().out)["n_points"] == 2


def test_cli_dataset_and_eval(tmp_path, capsys):
    sampler = {"frequency": 1e10,
               "tx_offsets": [[0, 0], [4, 0], [0, 4], [4, 4]],
               "rx_offsets": [[0, 0], [4, 0], [0, 4], [4, 4]],
               "n_nlos": 1,
               "rx_box": [[-1.0, 1.0], [2.0, 5.0], [-0.8, 0.8]]}
    ds_cfg = tmp_path / "ds.json"
    ds_cfg.write_text(json.dumps({
        "sampler": sampler, "n_scenes": 2, "snr_db": [10.0],
        "codebook": {"n_codewords_tx": 4, "n_codewords_rx": 4,
                     "n_streams_tx": 4, "n_streams_rx": 4}}))
    rc = main(["dataset", "--config", str(ds_cfg), "--out",
               str(tmp_path / "ds"), "--seed", "3"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["num_samples"] == 2
    assert load_manifest(tmp_path / "ds").num_samples == 2

    ev_cfg = tmp_path / "ev.json"
    ev_cfg.write_text(json.dumps({"sampler": sampler, "snr_db": [0.0],
                                  "estimators": ["oracle", "omp"],
                                  "dict_size": 8}))
    out = tmp_path / "ev.csv"
    rc = main(["eval", "--config", str(ev_cfg), "--trials", "2",
               "--out", str(out), "--seed", "5"])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = {r["estimator"]: r for r in csv.DictReader(fh)}
    assert set(rows) == {"oracle", "omp"}
    assert rows["oracle"]["failures"] == "0"
    assert float(rows["oracle"]["mean_nmse_db"]) < \
        float(rows["omp"]["mean_nmse_db"]) - 10.0


def test_cli_exit_codes(scene_file, tmp_path, capsys):
    assert main([]) == 1
    assert main(["synth", "--nope"]) == 1
    assert main(["estimate", "--scene", str(scene_file),
                 "--phase1", "external", "--out", str(tmp_path / "r.json")]) == 1
    assert main(["synth", "--scene", str(tmp_path / "missing.json"),
                 "--model", "swm", "--out", str(tmp_path / "h.chan")]) == 2

    bad = tmp_path / "bad_scene.json"
    save_scene(through_array_scene(), bad)
    assert main(["synth", "--scene", str(bad), "--model", "swm",
                 "--out", str(tmp_path / "h.chan")]) == 3
    err = capsys.readouterr().err
    assert "numerical error" in err
