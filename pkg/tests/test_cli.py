import json

import numpy as np
import pytest

from avprune import tensorio
from avprune.cli import main
from tests.test_metrics import constant_retention_trace, zero_schedule_trace

SMALL_CONFIG = {
    "sequence": {"sys_len": 1, "chunks": 2, "n_v": 8, "n_a": 4, "query_len": 2, "d": 16, "seed": 0},
    "model": {"layers": 4, "heads": 2, "d": 16, "seed": 1},
    "schedule": {"p_final": 0.5},
    "tds": {"start_layer": 2},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out


class TestCalibrate:
    def test_canonical_target_values(self, capsys):
        code, out = run_cli(capsys, "calibrate", "--target", "0.30", "--r0", "0.45", "--layers", "28")
        assert code == 0
        values = dict(line.split("=") for line in out.strip().splitlines())
        assert abs(float(values["closed_form_p_final"]) - 0.1452) <= 0.0005
        assert abs(float(values["achieved_mean"]) - 0.30) < 1e-4

    def test_target_equal_r0_rejected(self, capsys):
        code, _ = run_cli(capsys, "calibrate", "--target", "0.45", "--r0", "0.45", "--layers", "28")
        assert code == 1

    def test_tiny_gap_target(self, capsys):
        code, out = run_cli(capsys, "calibrate", "--target", "0.44", "--r0", "0.45", "--layers", "28")
        assert code == 0
        values = dict(line.split("=") for line in out.strip().splitlines())
        assert abs(float(values["achieved_mean"]) - 0.44) < 1e-4

    def test_infeasible_exits_2(self, capsys):
        code, _ = run_cli(capsys, "calibrate", "--target", "0.001", "--r0", "0.45", "--layers", "28")
        assert code == 2


class TestSchedule:
    def test_default_sigmoid_rows_and_mean(self, capsys):
        code, out = run_cli(
            capsys, "schedule", "--p-init", "0", "--p-final", "0.2", "--layers", "28", "--r0", "0.45"
        )
        assert code == 0
        lines = out.strip().splitlines()
        data_rows = [ln for ln in lines if not ln.startswith("#") and not ln.startswith("layer")]
        assert len(data_rows) == 28
        mean = float(lines[-1].split("=")[1])
        assert 0.27 <= mean <= 0.31

    def test_zero_schedule_constant_column(self, capsys):
        code, out = run_cli(
            capsys, "schedule", "--p-init", "0", "--p-final", "0", "--layers", "5", "--r0", "0.5"
        )
        assert code == 0
        retentions = {
            line.split(",")[2]
            for line in out.strip().splitlines()
            if line[0].isdigit()
        }
        assert retentions == {"0.500000000"}

    def test_exponential_endpoints(self, capsys):
        code, out = run_cli(
            capsys,
            "schedule", "--kind", "exponential", "--p-init", "0.02", "--p-final", "0.5",
            "--layers", "28", "--r0", "0.45",
        )
        assert code == 0
        rows = [ln.split(",") for ln in out.strip().splitlines() if ln[0].isdigit()]
        assert float(rows[0][1]) == pytest.approx(0.02)
        assert float(rows[26][1]) == pytest.approx(0.5)

    def test_bad_config_file_exits_1(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, _ = run_cli(capsys, "schedule", "--config", str(bad))
        assert code == 1


class TestSimulate:
    def test_deterministic_rerun_overwrites_byte_identically(self, capsys, small_config, tmp_path):
        out_dir = tmp_path / "out"
        code1, out1 = run_cli(capsys, "simulate", "--config", small_config, "--out", str(out_dir))
        snapshot = {p.name: p.read_bytes() for p in out_dir.iterdir() if p.is_file()}
        code2, out2 = run_cli(capsys, "simulate", "--config", small_config, "--out", str(out_dir))
        assert code1 == code2 == 0
        assert out1 == out2
        for name, blob in snapshot.items():
            assert (out_dir / name).read_bytes() == blob

    def test_dump_inject_round_trip(self, capsys, small_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        code, out = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(a), "--dump-attention"
        )
        assert code == 0
        digest = [ln for ln in out.splitlines() if ln.startswith("trace_digest=")][0]
        code2, out2 = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(b),
            "--inject", str(a / "attention"),
        )
        assert code2 == 0
        digest2 = [ln for ln in out2.splitlines() if ln.startswith("trace_digest=")][0]
        assert digest == digest2
        assert (a / "trace.jsonl").read_bytes() == (b / "trace.jsonl").read_bytes()

    def test_random_selector_stable(self, capsys, small_config, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            _, out = run_cli(
                capsys, "simulate", "--config", small_config, "--selector", "random",
                "--out", str(tmp_path / name),
            )
            outs.append(out)
        assert outs[0] == outs[1]

    def test_set_override_changes_digest(self, capsys, small_config, tmp_path):
        _, out1 = run_cli(capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "x"))
        _, out2 = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "y"),
            "--set", "sequence.seed=9",
        )
        assert out1 != out2

    def test_intra_enabled_run(self, capsys, tmp_path):
        config = json.loads(json.dumps(SMALL_CONFIG))
        config["intra"] = {"enabled": True, "frames_per_chunk": 4, "tokens_per_frame": 2}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        code, _ = run_cli(capsys, "simulate", "--config", str(path), "--out", str(tmp_path / "out"))
        assert code == 0
        trace, _ = tensorio.read_trace_jsonl(tmp_path / "out" / "trace.jsonl")
        assert trace.layers[0].n_audio + trace.layers[0].n_video < 24

    def test_multi_run_fanout(self, capsys, small_config, tmp_path):
        out_dir = tmp_path / "fan"
        code, out = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(out_dir), "--runs", "2"
        )
        assert code == 0
        assert (out_dir / "run_0000" / "trace.jsonl").exists()
        assert (out_dir / "run_0001" / "trace.jsonl").exists()
        lines = [ln for ln in out.splitlines() if "trace_digest=" in ln]
        assert len(lines) == 2
        assert lines[0].split("=")[1] != lines[1].split("=")[1]  # different seeds

    def test_worker_pool_matches_inline_fanout(self, capsys, small_config, tmp_path):
        _, inline = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "inline"),
            "--runs", "2",
        )
        _, pooled = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "pooled"),
            "--runs", "2", "--set", "workers=2",
        )
        # Same per-run digests regardless of how the work was scheduled.
        assert [ln.split("=")[1] for ln in inline.splitlines()] == [
            ln.split("=")[1] for ln in pooled.splitlines()
        ]

    def test_invalid_override_exits_1(self, capsys, small_config, tmp_path):
        code, _ = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "z"),
            "--set", "schedule.p_final=2.0",
        )
        assert code == 1

    def test_unwritable_out_dir_exits_3(self, capsys, small_config, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        code, _ = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(blocker / "sub")
        )
        assert code == 3

    def test_missing_inject_dir_exits_1(self, capsys, small_config, tmp_path):
        code, _ = run_cli(
            capsys, "simulate", "--config", small_config, "--out", str(tmp_path / "w"),
            "--inject", str(tmp_path / "nowhere"),
        )
        assert code == 1


class TestAnalyze:
    def test_recall_on_uniform_map(self, capsys, tmp_path):
        path = tmp_path / "uniform.omtn"
        tensorio.write_tensor(path, np.full((2, 5), 0.2, dtype=np.float32))
        code, out = run_cli(capsys, "analyze", "--metric", "recall", "--attention", str(path))
        assert code == 0
        assert json.loads(out)["recall"] == pytest.approx(0.2)

    def test_retention_of_zero_schedule(self, capsys, tmp_path):
        path = tmp_path / "trace.jsonl"
        tensorio.write_trace_jsonl(path, zero_schedule_trace(), config_digest="cfg")
        code, out = run_cli(capsys, "analyze", "--metric", "retention", "--trace", str(path))
        assert code == 0
        rows = [ln.split(",") for ln in out.strip().splitlines() if ln[0].isdigit()]
        assert all(float(r[1]) == 1.0 and float(r[2]) == 1.0 for r in rows)

    def test_cosine_single_bin(self, capsys, tmp_path):
        emb = tmp_path / "emb.omtn"
        tokens = tmp_path / "tokens.jsonl"
        tensorio.write_tensor(emb, np.tile(np.array([1.0, 2.0], dtype=np.float32), (4, 1)))
        with open(tokens, "w") as fh:
            for i in range(4):
                fh.write(json.dumps({"id": i, "modality": "audio", "chunk_index": 0, "original_position": i}) + "\n")
        code, out = run_cli(
            capsys, "analyze", "--metric", "cosine", "--embeddings", str(emb),
            "--tokens", str(tokens), "--pair", "AA",
        )
        assert code == 0
        rows = [ln.split(",") for ln in out.strip().splitlines() if not ln.startswith(("#", "bin"))]
        assert sum(int(r[2]) for r in rows) == 6
        top_bin = [r for r in rows if r[0] == "0.95"][0]
        assert int(top_bin[2]) == 6

    def test_pca_reports_eigenvalues(self, capsys, tmp_path):
        emb = tmp_path / "emb.omtn"
        rng = np.random.default_rng(0)
        tensorio.write_tensor(emb, rng.normal(size=(50, 3)).astype(np.float32))
        code, out = run_cli(capsys, "analyze", "--metric", "pca", "--embeddings", str(emb))
        assert code == 0
        header = out.splitlines()[0]
        ev1, ev2 = map(float, header.split("=")[1].split(","))
        assert ev1 >= ev2 >= 0.0
        assert len(out.strip().splitlines()) == 52

    def test_missing_required_input_exits_4(self, capsys):
        code, _ = run_cli(capsys, "analyze", "--metric", "recall")
        assert code == 4

    def test_schema_mismatch_exits_4(self, capsys, tmp_path):
        emb = tmp_path / "emb.omtn"
        tokens = tmp_path / "tokens.jsonl"
        tensorio.write_tensor(emb, np.ones((3, 2), dtype=np.float32))
        tokens.write_text(json.dumps({"id": 0, "modality": "audio"}) + "\n")  # 1 token, 3 rows
        code, _ = run_cli(
            capsys, "analyze", "--metric", "cosine", "--embeddings", str(emb), "--tokens", str(tokens)
        )
        assert code == 4


class TestCost:
    def test_zero_schedule_ratios(self, capsys, tmp_path):
        path = tmp_path / "trace.jsonl"
        tensorio.write_trace_jsonl(path, zero_schedule_trace(), config_digest="cfg")
        code, out = run_cli(capsys, "cost", "--trace", str(path), "--d", "16", "--bytes", "2")
        assert code == 0
        report = json.loads(out)
        assert report["flops_ratio"] == 1.0
        assert report["kv_ratio"] == 1.0

    def test_constant_retention_attention_ratio(self, capsys, tmp_path):
        path = tmp_path / "trace.jsonl"
        tensorio.write_trace_jsonl(
            path, constant_retention_trace(layers=6, n0_av=100, later_av=50), config_digest="cfg"
        )
        code, out = run_cli(capsys, "cost", "--trace", str(path), "--d", "64", "--bytes", "2")
        assert code == 0
        report = json.loads(out)
        for row in report["per_layer"][1:]:
            assert abs(row["attention_flops"] / row["baseline_attention_flops"] - 0.25) < 1e-9
        assert report["baseline_total_flops"] >= report["total_flops"]

    def test_missing_trace_exits_4(self, capsys, tmp_path):
        code, _ = run_cli(capsys, "cost", "--trace", str(tmp_path / "nope.jsonl"), "--d", "8")
        assert code == 4
