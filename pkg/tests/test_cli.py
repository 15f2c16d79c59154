import json
import subprocess
import sys

import numpy as np
import pytest

from rolling_align.cli import (EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, EXIT_PROTOCOL, main,
                               read_snippet_dir, write_snippet_dir)
from rolling_align.coalign import CoalignConfig, solve
from rolling_align.core import DepthSnippet
from rolling_align.errors import ManifestMismatch, NonFinite
from rolling_align.npyio import load_array, save_array
from rolling_align.scheduler import build_schedule, load_schedule, save_schedule

FAST = {"steps": 300}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture
def synth_dir(tmp_path):
    corr = write_json(tmp_path / "corrupt.json", {"scale_range": [0.5, 2.0], "shift_range": [-0.2, 0.2]})
    out = tmp_path / "scene"
    code = main(["synth", "--scene", "translating_plane", "--frames", "12", "--height", "8", "--width", "12",
                 "--dilations", "1,3", "--corrupt", corr, "--seed", "3", "--out", str(out)])
    assert code == EXIT_OK
    return out


class TestSchedule:
    def test_seven_frames(self, tmp_path):
        out = tmp_path / "s.json"
        assert main(["schedule", "--frames", "7", "--snippet-len", "3", "--dilations", "1",
                     "--stride", "1", "--out", str(out)]) == EXIT_OK
        assert load_schedule(out).n_snippets == 5

    def test_default_inference_config(self, tmp_path):
        out = tmp_path / "s.json"
        assert main(["schedule", "--frames", "250", "--dilations", "1,10,25", "--out", str(out)]) == EXIT_OK
        assert load_schedule(out).dilations == (1, 10, 25)

    def test_nothing_fits(self, tmp_path):
        assert main(["schedule", "--frames", "2", "--snippet-len", "3", "--dilations", "1",
                     "--out", str(tmp_path / "s.json")]) == EXIT_INVALID


class TestSynth:
    def test_outputs(self, synth_dir):
        names = {p.name for p in synth_dir.iterdir()}
        assert {"gt.npy", "flow.npy", "flow_mask.npy", "schedule.json", "snippets", "hidden_params.json"} <= names
        assert load_array(synth_dir / "gt.npy").shape == (12, 8, 12)
        assert load_array(synth_dir / "flow.npy").shape == (11, 2, 8, 12)
        hidden = json.loads((synth_dir / "hidden_params.json").read_text())
        assert hidden["seed"] == 3 and hidden["corruption"]["seed"] == 3

    def test_unknown_scene(self, tmp_path):
        assert main(["synth", "--scene", "spiral", "--frames", "5", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_unknown_config_key(self, tmp_path):
        corr = write_json(tmp_path / "c.json", {"noise": 1})
        assert main(["synth", "--scene", "translating_plane", "--frames", "5", "--corrupt", corr,
                     "--out", str(tmp_path / "o")]) == EXIT_INVALID


class TestAlign:
    def run(self, tmp_path, snippets, schedule, config):
        save_schedule(schedule, tmp_path / "sched.json")
        cfg = write_json(tmp_path / "cfg.json", config)
        args = ["align", "--snippets", str(snippets), "--schedule", str(tmp_path / "sched.json"),
                "--config", cfg, "--out", str(tmp_path / "depth.npy"), "--solution", str(tmp_path / "sol.json")]
        return main(args)

    def test_matches_in_memory_solve(self, tmp_path, synth_dir):
        sched = load_schedule(synth_dir / "schedule.json")
        assert self.run(tmp_path, synth_dir / "snippets", sched, FAST) == EXIT_OK
        sol = json.loads((tmp_path / "sol.json").read_text())
        ref = solve(sched, read_snippet_dir(synth_dir / "snippets", sched), CoalignConfig(**FAST))
        got = [(p["scale"], p["shift"]) for p in sol["params"]]
        assert got == [(p.scale, p.shift) for p in ref.params]
        assert sol["schedule_hash"] == sched.digest()
        assert "threads" not in sol["config"] and sol["config"]["steps"] == 300

    def test_consistent_snippets_keep_unit_scale(self, tmp_path):
        corr = write_json(tmp_path / "c.json", {"scale_range": [1, 1], "shift_range": [0, 0]})
        out = tmp_path / "scene"
        main(["synth", "--scene", "orbiting_sphere_field", "--frames", "12", "--height", "8", "--width", "12",
              "--dilations", "1,3", "--corrupt", corr, "--out", str(out)])
        sched = load_schedule(out / "schedule.json")
        assert self.run(tmp_path, out / "snippets", sched, FAST) == EXIT_OK
        scales = [p["scale"] for p in json.loads((tmp_path / "sol.json").read_text())["params"]]
        assert all(0.95 <= s <= 1.05 for s in scales)

    def test_single_snippet_is_identity(self, tmp_path, rng):
        sched = build_schedule(3, 3, [1], 1)
        snip = DepthSnippet(rng.uniform(0.5, 1.5, (3, 4, 4)), (0, 1, 2), 1)
        write_snippet_dir(tmp_path / "snips", [snip], sched, {})
        assert self.run(tmp_path, tmp_path / "snips", sched, FAST) == EXIT_OK
        p = json.loads((tmp_path / "sol.json").read_text())["params"][0]
        assert p["scale"] == pytest.approx(1.0, abs=1e-3) and p["shift"] == pytest.approx(0.0, abs=1e-3)
        merged = load_array(tmp_path / "depth.npy")
        np.testing.assert_allclose(merged, snip.frames, atol=2e-3)

    def test_schedule_hash_mismatch_exits_4(self, tmp_path, synth_dir):
        other = build_schedule(12, 3, [1], 1)
        assert self.run(tmp_path, synth_dir / "snippets", other, FAST) == EXIT_PROTOCOL

    def test_missing_snippet_file_exits_4(self, tmp_path, synth_dir):
        (synth_dir / "snippets" / "snippet_00002.npy").unlink()
        sched = load_schedule(synth_dir / "schedule.json")
        assert self.run(tmp_path, synth_dir / "snippets", sched, FAST) == EXIT_PROTOCOL

    def test_wrong_snippet_shape_exits_4(self, tmp_path, synth_dir):
        save_array(synth_dir / "snippets" / "snippet_00000.npy", np.ones((3, 4, 4)))
        sched = load_schedule(synth_dir / "schedule.json")
        assert self.run(tmp_path, synth_dir / "snippets", sched, FAST) == EXIT_PROTOCOL

    def test_non_finite_exits_3(self, tmp_path, synth_dir, monkeypatch):
        def boom(*args, **kwargs):
            raise NonFinite("objective became nan", step=7)

        monkeypatch.setattr("rolling_align.cli.solve", boom)
        sched = load_schedule(synth_dir / "schedule.json")
        assert self.run(tmp_path, synth_dir / "snippets", sched, FAST) == EXIT_NUMERIC

    def test_bad_config_exits_2(self, tmp_path, synth_dir):
        sched = load_schedule(synth_dir / "schedule.json")
        assert self.run(tmp_path, synth_dir / "snippets", sched, {"steps": 0}) == EXIT_INVALID


def test_manifest_round_trip(tmp_path, rng):
    sched = build_schedule(6, 3, [1], 1)
    snips = [DepthSnippet(rng.uniform(0.5, 1.5, (3, 2, 3)).astype(np.float32), s.frame_indices, 1, s.snippet_id)
             for s in sched.snippets]
    write_snippet_dir(tmp_path, snips, sched, {"note": 1})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["video"] == {"n_frames": 6, "height": 2, "width": 3, "space_tag": "inverse_depth"}
    back = read_snippet_dir(tmp_path, sched)
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(snips, back))
    manifest["video"]["n_frames"] = 7
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestMismatch):
        read_snippet_dir(tmp_path, sched)


class TestRefineAndEval:
    def test_refine_identity_is_bit_exact(self, tmp_path, synth_dir):
        cfg = write_json(tmp_path / "r.json", {"noise_scale_schedule": [0.0] * 10})
        out = tmp_path / "r.npy"
        assert main(["refine", "--in", str(synth_dir / "gt.npy"), "--hook", "identity", "--config", cfg,
                     "--out", str(out)]) == EXIT_OK
        assert (out.read_bytes()[128:] == (synth_dir / "gt.npy").read_bytes()[128:])

    def test_external_hook_needs_command(self, tmp_path, synth_dir):
        assert main(["refine", "--in", str(synth_dir / "gt.npy"), "--hook", "external",
                     "--out", str(tmp_path / "r.npy")]) == EXIT_INVALID

    def test_eval_ground_truth_against_itself(self, tmp_path, synth_dir):
        gt = str(synth_dir / "gt.npy")
        out = tmp_path / "report.json"
        assert main(["eval", "--pred", gt, "--gt", gt, "--flow", str(synth_dir / "flow.npy"),
                     "--flow-mask", str(synth_dir / "flow_mask.npy"), "--out", str(out)]) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["abs_rel"] < 1e-6 and report["delta1"] == 1.0
        assert "tool_version" in report and "opw_x1e3" in report

    def test_eval_shape_mismatch(self, tmp_path, synth_dir):
        save_array(tmp_path / "p.npy", np.ones((3, 8, 12)))
        assert main(["eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(synth_dir / "gt.npy")]) == EXIT_INVALID

    def test_eval_wrong_dtype_exits_4(self, tmp_path, synth_dir):
        np.save(tmp_path / "p.npy", np.ones((12, 8, 12)))
        assert main(["eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(synth_dir / "gt.npy")]) == EXIT_PROTOCOL


def test_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rolling_align.cli", "schedule", "--frames", "7",
                           "--dilations", "1", "--out", str(tmp_path / "s.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "5 snippets" in proc.stdout
