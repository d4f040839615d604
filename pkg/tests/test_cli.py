import json

import numpy as np
import pydot
import pytest
from filelock import FileLock

from learnpath.cli import main
from learnpath.eventlog import IngestConfig, SequenceTable, build_sequence_table
from learnpath.hac import ClusterAssignment, adjusted_rand_index
from learnpath.seqdist import CondensedDistanceMatrix, edit_distance_tokens
from learnpath.synth import group_length_stats, tiered_spec

LOG = (
    "student_id,activity_id,timestamp\n"
    "s1,a,2016-01-01T00:00:00Z\n"
    "s1,b,2016-01-01T00:01:00Z\n"
    "s2,a,2016-01-01T00:00:00Z\n"
    "s2,b,2016-01-01T00:02:00Z\n"
    "s2,c,2016-01-01T00:03:00Z\n"
    "s3,c,2016-01-01T00:00:00Z\n"
)

SYNTH = {
    "alphabet_size": 90,
    "seed": 17,
    "groups": [
        {"student_count": 30, "mean_length": 10, "length_sd": 2, "backbone": list(range(0, 30)), "deviation_rate": 0.1},
        {"student_count": 25, "mean_length": 12, "length_sd": 2, "backbone": list(range(30, 60)), "deviation_rate": 0.1},
        {"student_count": 20, "mean_length": 14, "length_sd": 2, "backbone": list(range(60, 90)), "deviation_rate": 0.1},
    ],
}


@pytest.fixture
def small(tmp_path):
    log = tmp_path / "events.csv"
    log.write_text(LOG)
    cfg = tmp_path / "ingest.json"
    cfg.write_text("{}")
    return tmp_path, log, cfg


def run(*argv):
    return main([str(a) for a in argv])


def test_extract_counts_and_reuses(small, capsys):
    tmp, log, cfg = small
    ws = tmp / "ws"
    assert run("extract", log, "-c", cfg, "-w", ws) == 0
    table = SequenceTable.read_csv(open(ws / "sequences.csv"))
    assert table.student_ids == ["s1", "s2", "s3"]
    assert capsys.readouterr().out.startswith("extract: done")
    assert run("extract", log, "-c", cfg, "-w", ws) == 0
    assert capsys.readouterr().out.startswith("extract: fresh")


def test_extract_missing_config_is_usage_error(small):
    tmp, log, _ = small
    ws = tmp / "ws"
    assert run("extract", log, "-c", tmp / "nope.toml", "-w", ws) == 2
    assert not (ws / "sequences.csv").exists()


def test_toml_config_and_malformed_rows(tmp_path):
    log = tmp_path / "ev.tsv"
    log.write_text("user\titem\tms\nu1\tx\t1\nu1\ty\tbad\nu1\tz\t3\n")
    cfg = tmp_path / "c.toml"
    cfg.write_text('timestamp_format = "epoch_ms"\n[column_map]\nstudent_id = "user"\nactivity_id = "item"\ntimestamp = "ms"\n')
    ws = tmp_path / "ws"
    assert run("extract", log, "-c", cfg, "-w", ws) == 0
    assert (ws / "sequences.csv").read_text() == "student_id,activity_ids\nu1,x|z\n"
    assert (ws / "ingest_errors.csv").read_text().splitlines()[1].startswith("3,")


def test_distances_file_and_rerun(small):
    tmp, log, cfg = small
    ws = tmp / "ws"
    run("extract", log, "-c", cfg, "-w", ws)
    assert run("distances", "-w", ws) == 0
    blob = (ws / "distances.pmdm").read_bytes()
    m = CondensedDistanceMatrix.load(ws / "distances.pmdm")
    assert m.n == 3 and len(blob) == 14 + 4 * 3
    assert m[0, 1] == edit_distance_tokens(["a", "b"], ["a", "b", "c"])
    assert run("distances", "-w", ws, "--force") == 0
    assert (ws / "distances.pmdm").read_bytes() == blob


def test_distances_before_extract_is_usage_error(tmp_path):
    assert run("distances", "-w", tmp_path / "empty") == 2


def test_cluster_k1_and_invalid_k(small):
    tmp, log, cfg = small
    ws = tmp / "ws"
    run("extract", log, "-c", cfg, "-w", ws)
    run("distances", "-w", ws)
    assert run("cluster", "-k", 1, "-w", ws) == 0
    _, a = ClusterAssignment.read_csv(open(ws / "assignments.csv"))
    assert a.labels.tolist() == [0, 0, 0]
    assert run("cluster", "-k", 0, "-w", ws) == 2
    assert run("cluster", "-k", 4, "-w", ws) == 2
    assert run("cluster", "-k", 2, "--linkage", "median", "-w", ws) == 2


def _synth_pipeline(tmp, ws):
    spec = tmp / "spec.json"
    spec.write_text(json.dumps(SYNTH))
    events = tmp / "synth.csv"
    cfg = tmp / "ingest.json"
    cfg.write_text("{}")
    assert run("synth", spec, "--out", events) == 0
    assert run("extract", events, "-c", cfg, "-w", ws) == 0
    assert run("distances", "-w", ws) == 0
    assert run("cluster", "-k", 3, "-w", ws) == 0
    return events


def test_planted_groups_recovered(tmp_path):
    ws = tmp_path / "ws"
    events = _synth_pipeline(tmp_path, ws)
    ids, truth = ClusterAssignment.read_csv(open(events.with_name("synth.labels.csv")))
    ids2, found = ClusterAssignment.read_csv(open(ws / "assignments.csv"))
    assert ids == ids2
    assert adjusted_rand_index(truth.labels, found.labels) >= 0.9


def test_mine_filters_and_cluster_sums(tmp_path):
    ws = tmp_path / "ws"
    _synth_pipeline(tmp_path, ws)
    assert run("mine", "-w", ws, "--cluster", "each") == 0
    assert run("mine", "-w", ws, "--cluster", "all") == 0
    graphs = ws / "graphs"

    def total(name):
        lines = (graphs / f"{name}.edges.csv").read_text().splitlines()[1:]
        return sum(int(line.rsplit(",", 1)[1]) for line in lines)

    assert sum(total(f"cluster_{c}") for c in range(3)) == total("all")
    table = SequenceTable.read_csv(open(ws / "sequences.csv"))
    assert total("all") == int(np.sum(np.maximum(table.lengths() - 1, 0)))
    unfiltered = (graphs / "all.edges.csv").read_text()
    assert run("mine", "-w", ws, "--min-weight", 1, "--keep-isolated") == 0
    assert (graphs / "all.edges.csv").read_text() == unfiltered
    assert pydot.graph_from_dot_file(str(graphs / "all.dot"))
    assert run("mine", "-w", ws, "--min-weight", 3) == 0
    lines = (graphs / "all.edges.csv").read_text().splitlines()[1:]
    assert all(int(line.rsplit(",", 1)[1]) >= 3 for line in lines)


def test_stats_outputs(tmp_path, capsys):
    ws = tmp_path / "ws"
    _synth_pipeline(tmp_path, ws)
    assert run("stats", "-w", ws, "--silhouette", "2-4") == 0
    rows = json.loads((ws / "cluster_stats.json").read_text())
    assert sum(r["student_count"] for r in rows) == 75
    graph_rows = json.loads((ws / "graph_stats.json").read_text())
    assert [set(r) for r in graph_rows] == [{"cluster_id", "nodes", "edges"}] * 4
    assert "mean silhouette" in capsys.readouterr().out


def test_synth_deterministic_and_zero_deviation(tmp_path):
    spec = tmp_path / "s.json"
    raw = {**SYNTH, "groups": [{**g, "deviation_rate": 0.0} for g in SYNTH["groups"]]}
    spec.write_text(json.dumps(raw))
    run("synth", spec, "-o", tmp_path / "a.csv")
    run("synth", spec, "-o", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    first = [line.split(",")[1] for line in (tmp_path / "a.csv").read_text().splitlines()[1:5]]
    assert first == ["A00", "A01", "A02", "A03"]


def test_locked_workspace_refused(small):
    tmp, log, cfg = small
    ws = tmp / "ws"
    run("extract", log, "-c", cfg, "-w", ws)
    with FileLock(str(ws / ".lock"), timeout=0):
        assert run("distances", "-w", ws) == 2


def test_missing_workspace_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["distances"])
    assert exc.value.code == 2


def test_synth_tiered_preset_length_stats(tmp_path):
    spec = tmp_path / "tiers.toml"
    spec.write_text('preset = "tiered"\nseed = 1\n')
    out = tmp_path / "tiers.csv"
    assert run("synth", spec, "-o", out) == 0
    table = build_sequence_table(open(out), IngestConfig())[0]
    ids, truth = ClusterAssignment.read_csv(open(tmp_path / "tiers.labels.csv"))
    assert ids == table.student_ids
    for row in group_length_stats(tiered_spec(seed=1), table, truth):
        assert row.standard_errors <= 3.0
