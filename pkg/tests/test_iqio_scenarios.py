import json

import numpy as np
import pytest

from fdmon import iqio
from fdmon.errors import ParameterError
from fdmon.monitor import build_channel_plan
from fdmon.scenarios import (ConfigError, ScenarioFile, load_document, pairing_scenario,
                             stale_matrix, sweep_provider_from_mapping)
from fdmon.sigmodel import IQBlock, default_coupler


def _block(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return IQBlock(rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n)), 1e6, 2.4e9)


def test_iq_round_trip_at_float32_precision(tmp_path):
    blk = _block()
    path = tmp_path / "cap.iq"
    iqio.write_iq(path, blk)
    assert path.stat().st_size == 4 * blk.n * 4
    meta = json.loads(iqio.sidecar_path(path).read_text())
    assert meta == {"version": 1, "sample_rate_hz": 1e6, "center_freq_hz": 2.4e9,
                    "num_samples": 64, "num_ports": 2}
    back = iqio.read_iq(path)
    np.testing.assert_allclose(back.samples, blk.samples, rtol=1e-6, atol=1e-6)
    assert back.sample_rate_hz == 1e6 and back.center_freq_hz == 2.4e9


def test_iq_layout_is_port_planes_of_interleaved_iq(tmp_path):
    s = np.array([[1 + 2j, 3 + 4j], [5 + 6j, 7 + 8j]])
    iqio.write_iq(tmp_path / "x.iq", IQBlock(s, 1.0))
    np.testing.assert_array_equal(np.fromfile(tmp_path / "x.iq", dtype="<f4"), np.arange(1, 9))


def test_iq_read_errors(tmp_path):
    path = tmp_path / "cap.iq"
    with pytest.raises(FileNotFoundError):
        iqio.read_iq(path)
    iqio.write_iq(path, _block())
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ParameterError, match="float32"):
        iqio.read_iq(path)
    iqio.sidecar_path(path).write_text("{not json")
    with pytest.raises(ParameterError, match="sidecar"):
        iqio.read_iq(path)


def test_no_temporary_files_left(tmp_path):
    iqio.write_iq(tmp_path / "a.iq", _block())
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.iq", "a.iq.json"]


def test_scenario_file_from_toml(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text("""
n = 4096
seed = 3
[tx]
kind = "BPSK"
offset_hz = 2e6
bandwidth_hz = 2e6
[[incident]]
kind = "CW"
offset_hz = -4e6
[mixing]
magnitudes_db = [[0, -10], [-20, 0]]
phases = "zero"
[noise]
sigma2 = 0.0
""")
    sc = ScenarioFile.load(path)
    assert sc.n == 4096 and sc.tx[0].kind == "BPSK" and sc.incident[0].kind == "CW"
    np.testing.assert_allclose(sc.mixing.a, [[1, 10 ** -0.5], [0.1, 1]])
    blk, truth = sc.build()
    np.testing.assert_allclose(blk.samples, sc.mixing.a @ truth, atol=1e-12)
    blk2, _ = ScenarioFile.load(path).build()
    np.testing.assert_array_equal(blk.samples, blk2.samples)


@pytest.mark.parametrize("text, needle", [
    ("n = 10\n[tx]\nkind='BPSK'\n", "'tx' and 'incident'"),
    ("[tx]\nkind='BPSK'\ncolour=1\n[incident]\nkind='CW'\n", "tx[0]"),
    ("[tx]\nkind='QAM'\n[incident]\nkind='CW'\n", "tx[0]"),
    ("[tx\nkind='BPSK'\n", "line 1"),
    ("[tx]\nkind='CW'\n[incident]\nkind='CW'\n[mixing]\nmagnitudes_db=[[0]]\n", "mixing.magnitudes_db"),
])
def test_scenario_errors_name_the_field(tmp_path, text, needle):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigError) as info:
        ScenarioFile.load(path)
    assert needle in str(info.value) and "bad.toml" in str(info.value)


def test_json_documents_accepted(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"tx": {"kind": "CW"}, "incident": {"kind": "CW", "offset_hz": 1e6}}))
    assert load_document(path)["tx"]["kind"] == "CW"
    assert ScenarioFile.load(path).incident[0].offset_hz == 1e6


def test_pairing_scenarios_are_deterministic():
    a, _ = pairing_scenario("BPSK", "OFDM", seed=5).build()
    b, _ = pairing_scenario("BPSK", "OFDM", seed=5).build()
    c, _ = pairing_scenario("BPSK", "OFDM", seed=6).build()
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.allclose(a.samples, c.samples)


def test_stale_matrix_drift():
    a = default_coupler(0)
    s = stale_matrix(a, 3.0)
    ratio = np.abs(s.a / a.a)
    np.testing.assert_allclose(np.diag(ratio), 1.0)
    assert 20 * np.log10(ratio[0, 1]) == pytest.approx(3.0)
    assert 20 * np.log10(ratio[1, 0]) == pytest.approx(-3.0)


def test_sweep_provider_mapping():
    plan = build_channel_plan(1e9, 1e9 + 4 * 27.65e6, 27.65e6)
    prov = sweep_provider_from_mapping(
        {"capture": {"n": 1024, "seed": 2},
         "channel": [{"index": 1, "tx": [{"kind": "BPSK", "offset_hz": 1e6, "bandwidth_hz": 2e6}]}]},
        plan)
    assert prov.n == 1024 and set(prov.contents) == {1}
    with pytest.raises(ConfigError, match=r"channel\[0\].index"):
        sweep_provider_from_mapping({"channel": [{"index": 9}]}, plan)
    with pytest.raises(ConfigError, match="missing field 'index'"):
        sweep_provider_from_mapping({"channel": [{}]}, plan)
