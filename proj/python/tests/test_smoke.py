import json
import math

import pytest

import stagerl


def test_pass_at_k_matches_closed_form():
    assert stagerl.pass_at_k_exact(1, 4, 4) == 1.0
    assert stagerl.pass_at_k_exact(2, 4, 1) == pytest.approx(0.5)
    # 1 - C(N-c, K) / C(N, K)
    assert stagerl.pass_at_k_exact(3, 10, 4) == pytest.approx(1 - math.comb(7, 4) / math.comb(10, 4))
    rows = [[True, False, False, False], [False] * 4, [True] * 4]
    est, closed = stagerl.pass_at_k(rows, 4, reps=5, seed=1)
    assert est == closed == pytest.approx(2 / 3)
    mean, std = stagerl.avg_at_n(rows, 4, reps=3)
    assert mean == pytest.approx(5 / 12) and std == 0.0
    with pytest.raises(stagerl.Error):
        stagerl.pass_at_k([[True, False], [True]], 1)


def test_generated_tasks_verify_their_teacher_traces():
    tasks = stagerl.generate_tasks(seed=3, count=20, category_mix={"MATH": 0.5, "CODE": 0.5})
    assert len(tasks) == 20
    for t in tasks:
        line = json.dumps(t)
        for style in ("CONCISE", "VERBOSE"):
            reward, verdict = stagerl.verify(line, stagerl.teacher_trace(line, style))
            assert (reward, verdict) == (1.0, "CORRECT")
        assert stagerl.verify(line, "")[0] == 0.0


def test_minivm_and_curation():
    assert stagerl.run_minivm(["PUSH3", "PUSH4", "MUL", "HALT"]) == (12, "None")
    assert stagerl.run_minivm(["ADD", "HALT"])[0] is None
    assert stagerl.normalize_text("  A  b\tC ") == "a b c"
    kept, removed = stagerl.decontaminate(
        [("x", "one two three four"), ("y", "nothing shared here at all")], [("e", "two three four five")], n=3
    )
    assert kept == ["y"] and removed == ["x"]


def test_scaling_fit_and_cli():
    pts = [(x, y, 2 * math.log2(x) + math.log2(y) + 1) for x in (1, 2, 4, 8) for y in (1, 2, 4)]
    fit = stagerl.fit_scaling(pts)
    assert fit["r_squared"] == pytest.approx(1.0)
    with pytest.raises(stagerl.Degenerate):
        stagerl.fit_scaling(pts[:2])
    code, out, _ = stagerl.cli(["plan"])
    assert code == 0 and json.loads(out) == stagerl.default_plan()
    assert stagerl.cli(["no-such-command"])[0] == 1
