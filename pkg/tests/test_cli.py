import json
import math
import os
import sqlite3

import numpy as np
import pytest

from app import main
from core.tables import read_frame, read_table

TINY = ["--sizes", "4", "6", "--p-grid", "0.0", "0.5", "--samples", "3", "--depth", "2", "-q"]


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def test_sweep_writes_table_and_manifest(out_dir):
    assert main(["sweep", "--family", "hea", "--out", out_dir, "--raw", "--per-layer"] + TINY) == 0
    table = read_table(os.path.join(out_dir, "entropy_hea.csv"), expected_kind="entropy")
    assert len(table.rows) == 4
    assert table.raw is not None and all(v.size == 3 for v in table.raw.values())
    assert os.path.exists(os.path.join(out_dir, "manifest.db"))
    per_layer, header = read_frame(os.path.join(out_dir, "entropy_hea_per_layer.csv"))
    assert len(per_layer) == 4 * 2
    assert list(per_layer.columns) == ["N", "p", "layer", "mean", "std", "stderr"]
    assert header["family"] == "hea"
    assert os.path.exists(os.path.join(out_dir, "entropy_hea_steady_state.csv"))
    assert os.path.exists(os.path.join(out_dir, "entropy_hea_config.json"))


def test_steady_state_report_uses_table_units(tmp_path):
    nats, bits = str(tmp_path / "nats"), str(tmp_path / "bits")
    assert main(["sweep", "--family", "hea", "--per-layer", "--out", nats] + TINY) == 0
    assert main(["sweep", "--family", "hea", "--per-layer", "--entropy-base", "2", "--out", bits] + TINY) == 0
    in_nats, _ = read_frame(os.path.join(nats, "entropy_hea_steady_state.csv"))
    in_bits, _ = read_frame(os.path.join(bits, "entropy_hea_steady_state.csv"))
    assert np.allclose(in_bits["slope"], in_nats["slope"] / math.log(2.0), atol=1e-12)
    assert list(in_bits["plateau"]) == list(in_nats["plateau"])


def test_output_is_independent_of_worker_count(tmp_path):
    one, two = str(tmp_path / "one"), str(tmp_path / "two")
    assert main(["sweep", "--out", one, "--threads", "1"] + TINY) == 0
    assert main(["sweep", "--out", two, "--threads", "2"] + TINY) == 0
    name = "entropy_xxz_hva.csv"
    assert read_bytes(os.path.join(one, name)) == read_bytes(os.path.join(two, name))


def test_interrupted_run_resumes_to_identical_output(tmp_path):
    full, partial = str(tmp_path / "full"), str(tmp_path / "partial")
    assert main(["sweep", "--out", full] + TINY) == 0
    assert main(["sweep", "--out", partial] + TINY) == 0
    conn = sqlite3.connect(os.path.join(partial, "manifest.db"))
    conn.execute("DELETE FROM tasks WHERE task_key LIKE '6:%'")
    conn.commit()
    conn.close()
    os.remove(os.path.join(partial, "entropy_xxz_hva.csv"))
    assert main(["sweep", "--out", partial, "--resume"] + TINY) == 0
    name = "entropy_xxz_hva.csv"
    assert read_bytes(os.path.join(full, name)) == read_bytes(os.path.join(partial, name))


def test_resume_with_changed_config_is_refused(out_dir):
    assert main(["sweep", "--out", out_dir] + TINY) == 0
    assert main(["sweep", "--out", out_dir, "--resume", "--seed", "77"] + TINY) == 2


def test_odd_size_sweep_is_a_config_error(out_dir):
    assert main(["sweep", "--family", "hea", "--sizes", "5", "--out", out_dir, "-q"]) == 2


def test_mutinfo_defaults_to_all_distances(out_dir):
    assert main(["mutinfo", "--family", "hea", "--sizes", "4", "--p-grid", "0.0", "0.5", "--samples", "3",
                 "--depth", "2", "--out", out_dir, "-q"]) == 0
    table = read_table(os.path.join(out_dir, "mutinfo_hea.csv"), expected_kind="mutual_info")
    assert sorted(table.rows["r"].unique()) == [1, 2]


def test_gradvar_command(out_dir):
    assert main(["gradvar", "--family", "hea", "--out", out_dir, "--k-boot", "10"] + TINY) == 0
    table = read_table(os.path.join(out_dir, "gradvar_hea.csv"), expected_kind="grad_variance")
    assert (table.rows["mean"] >= 0).all()
    assert table.metadata["observable"] == "Z0 Z1"
    assert table.metadata["estimator"] == "mixture"


def test_gradvar_parameter_index_out_of_range(out_dir):
    assert main(["gradvar", "--family", "hea", "--param-index", "16", "--out", out_dir] + TINY) == 2
    assert not os.path.exists(os.path.join(out_dir, "gradvar_hea.csv"))


def test_collapse_of_empty_table_leaves_no_output(out_dir):
    path = os.path.join(out_dir, "empty.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write("# schema_version: 1\n# kind: entropy\nfamily,N,p,L,R,mean,std,stderr\n")
    before = set(os.listdir(out_dir))
    assert main(["collapse", "--table", path, "-q"]) == 2
    assert set(os.listdir(out_dir)) == before


def test_synth_then_collapse(out_dir):
    assert main(["synth", "--kind", "collapse", "--seed", "3", "--out", out_dir, "-q"]) == 0
    table_path = os.path.join(out_dir, "synthetic_collapse.csv")
    status = main(["collapse", "--table", table_path, "--p-c", "0.3", "--k-boot", "0", "-q"])
    assert status in (0, 3)
    with open(os.path.join(out_dir, "synthetic_collapse_entropy_fit.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["fit"]["p_c"] == pytest.approx(0.3)
    assert os.path.exists(os.path.join(out_dir, "synthetic_collapse_rescaled.csv"))


def test_gradvar_collapse_needs_critical_point(out_dir):
    assert main(["synth", "--kind", "gradvar", "--out", out_dir, "-q"]) == 0
    path = os.path.join(out_dir, "synthetic_gradvar.csv")
    assert main(["collapse", "--mode", "gradvar", "--table", path, "-q"]) == 2


def test_gradcheck_passes_and_fails_on_corrupted_sign(out_dir):
    assert main(["gradcheck", "--instances", "5", "--out", out_dir, "-q"]) == 0
    assert main(["gradcheck", "--instances", "25", "--sign", "plus", "--out", out_dir, "-q"]) == 4
    with open(os.path.join(out_dir, "gradcheck.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["failing_seeds"]
