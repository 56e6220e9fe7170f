import csv
import json
from pathlib import Path

import pytest

from modules.descriptor.network import build_model
from modules.percept.render import render_partial
from modules.tasks.demonstration import load_recipe, resolve_recipe
from modules.tasks.policies import EpisodeResult
from workflows.batch_eval import (
    REPORT_FIELDS,
    TaskBench,
    TaskReport,
    episode_seed,
    save_report,
    save_timings,
)

HALF_FOLD = str(Path(__file__).resolve().parents[1] / "demos" / "half_fold.json")


def result(episode, metric, settled=True):
    return EpisodeResult(episode=episode, task="fold", garment="g", seed=episode_seed(2, episode),
                         metric_name="iou", metric=metric, threshold=0.7,
                         success=settled and metric >= 0.7, settled=settled, actions=1, picks=[4, 9])


@pytest.fixture
def report():
    return TaskReport(task="fold", policy="matched", init="flat", seed=2, threshold=0.7,
                      results=[result(0, 0.9), result(1, 0.5), result(2, 0.8, settled=False)])


@pytest.fixture
def bench(top, flat, config):
    state, _ = flat
    obs = render_partial(state, top, render=config.render)
    demo = resolve_recipe(load_recipe(HALF_FOLD), top, state, obs)
    return TaskBench(demo, build_model(config.descriptor), config)


def test_episode_seed():
    assert episode_seed(0, 3) == 3
    assert episode_seed(7, 14) == 7014


def test_report_rates(report):
    assert report.successes == 1
    assert report.success_rate == pytest.approx(1 / 3)
    assert report.mean_metric == pytest.approx((0.9 + 0.5 + 0.8) / 3)
    assert TaskReport("fold", "matched", "flat", 0, 0.7).success_rate == 0.0


def test_csv_report(tmp_path, report):
    path = save_report(report, str(tmp_path / "out" / "fold.csv"))
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0].keys()) == REPORT_FIELDS
    assert [r["episode"] for r in rows] == ["0", "1", "2"]
    assert rows[0]["picks"] == "4 9"
    assert rows[2]["success"] == "False"


def test_json_report_is_stable(tmp_path, report):
    first = save_report(report, str(tmp_path / "a.json"))
    second = save_report(report, str(tmp_path / "b.json"))
    assert Path(first).read_bytes() == Path(second).read_bytes()
    data = json.loads(Path(first).read_text())
    assert data["successes"] == 1
    assert data["episodes"] == 3
    assert data["results"][1]["metric"] == 0.5


def test_timings_sidecar(tmp_path):
    path = save_timings({"episode_1": 0.2, "episode_0": 0.1}, str(tmp_path / "fold.csv"))
    assert path.endswith("fold.timings.json")
    assert list(json.loads(Path(path).read_text())) == ["episode_0", "episode_1"]


def test_bench_rejects_bad_arguments(bench, top):
    with pytest.raises(ValueError):
        bench.run([], 1)
    with pytest.raises(ValueError):
        bench.run([top], 1, policy="greedy")
    with pytest.raises(ValueError):
        bench.run([top], 1, init="crumpled")


@pytest.mark.slow
def test_bench_episodes_are_ordered_and_repeatable(bench, top, other_top):
    progress = []
    timings = {}
    first = bench.run([top, other_top], 2, seed=1, on_progress=lambda done, total: progress.append(done),
                      timings=timings)
    second = bench.run([top, other_top], 2, seed=1)
    assert [r.episode for r in first.results] == [0, 1]
    assert [r.garment for r in first.results] == [top.mesh_id, other_top.mesh_id]
    assert [r.seed for r in first.results] == [1000, 1001]
    assert first.to_dict() == second.to_dict()
    assert progress == [1, 2]
    assert sorted(timings) == ["episode_0", "episode_1"]
    assert first.init == "flat"
