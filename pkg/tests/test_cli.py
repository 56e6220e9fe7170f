import json
from pathlib import Path

import pytest

from core.config import load_config
from modules.descriptor.network import build_model, save_model
from modules.garment.generator import load_garment
from modules.percept.observation import save_observation
from modules.percept.render import render_partial
from modules.sim.state import SimState, build_constraints
from workflows.cli import build_parser, main

HALF_FOLD = str(Path(__file__).resolve().parents[1] / "demos" / "half_fold.json")


def test_parser_lists_pipeline_commands():
    parser = build_parser()
    args = parser.parse_args(["gen", "--out", "x"])
    assert (args.category, args.count, args.seed) == ("top", 8, 0)
    args = parser.parse_args(["eval", "--task", "fold", "--demo", "d", "--ckpt", "c",
                              "--garments", "g", "--report", "r.csv"])
    assert (args.episodes, args.policy, args.init) == (15, "matched", None)


def test_training_commands_take_a_seed():
    parser = build_parser()
    for argv in (["train", "--data", "d", "--out", "o"],
                 ["refine", "--data", "d", "--out", "o", "--ckpt", "c"],
                 ["adapt", "--ckpt", "c", "--annotations", "a", "--out", "o"]):
        assert parser.parse_args(argv).seed is None
        assert parser.parse_args(argv + ["--seed", "7"]).seed == 7


def test_gen_then_demo(tmp_path):
    out = tmp_path / "garments"
    assert main(["gen", "--preset", "test", "--count", "2", "--seed", "3", "--out", str(out)]) == 0
    sidecars = sorted(p for p in out.glob("*.json"))
    assert len(sidecars) == 2
    assert len(list(out.glob("*.obj"))) == 2

    demo_path = tmp_path / "fold.json"
    assert main(["demo", "--preset", "test", "--recipe", HALF_FOLD, "--garment", str(sidecars[0]),
                 "--out", str(demo_path)]) == 0
    demo = json.loads(demo_path.read_text())
    assert demo["task"] == "fold"
    assert (tmp_path / demo["obs"]).exists()


def test_gen_is_repeatable(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "--preset", "test", "--count", "1", "--seed", "5", "--out", str(tmp_path / name)]) == 0
    a = sorted((tmp_path / "a").glob("*.obj"))[0]
    b = sorted((tmp_path / "b").glob("*.obj"))[0]
    assert a.name == b.name
    assert a.read_bytes() == b.read_bytes()


def test_heatmap_command(tmp_path):
    config = load_config(preset="test")
    assert main(["gen", "--preset", "test", "--count", "1", "--out", str(tmp_path)]) == 0
    mesh = load_garment(str(next(tmp_path.glob("*.json"))))
    state = SimState.flat(mesh, build_constraints(mesh, config.sim))
    obs = str(tmp_path / "flat.obs.ugmc")
    save_observation(render_partial(state, mesh, render=config.render), obs)
    ckpt = save_model(build_model(config.descriptor), str(tmp_path / "m.ckpt"))
    out = tmp_path / "heat.ply"
    assert main(["heatmap", "--preset", "test", "--ckpt", ckpt, "--obs", obs, "--query", "0",
                 "--target", obs, "--out", str(out)]) == 0
    assert out.exists()


def test_errors_return_one(tmp_path):
    assert main(["gen", "--preset", "nope", "--count", "1", "--out", str(tmp_path)]) == 1
    assert main(["score", "--ckpt", str(tmp_path / "missing.ckpt"), "--data", str(tmp_path)]) == 1


def run_pipeline(root: Path) -> dict:
    data = root / "data"
    common = ["--preset", "test"]
    assert main(["gen", *common, "--count", "2", "--seed", "1", "--out", str(root / "garments")]) == 0
    assert main(["selfplay", *common, "--mesh", str(root / "garments"), "--k", "1", "--episodes", "1",
                 "--seed", "2", "--out", str(data)]) == 0
    assert main(["train", *common, "--data", str(data), "--out", str(root / "base.ckpt"), "--batches", "2"]) == 0
    assert main(["refine", *common, "--data", str(data), "--ckpt", str(root / "base.ckpt"),
                 "--out", str(root / "refined.ckpt"), "--batches", "1"]) == 0
    assert main(["annotate", *common, "--data", str(data), "--landmark", "hem-L", "--count", "2",
                 "--out", str(root / "ann.json")]) == 0
    assert main(["adapt", *common, "--ckpt", str(root / "refined.ckpt"), "--annotations", str(root / "ann.json"),
                 "--steps", "2", "--out", str(root / "adapted.ckpt")]) == 0
    garment = str(sorted((root / "garments").glob("*.json"))[0])
    assert main(["demo", *common, "--recipe", HALF_FOLD, "--garment", garment,
                 "--out", str(root / "fold.json")]) == 0
    assert main(["eval", *common, "--task", "fold", "--demo", str(root / "fold.json"),
                 "--ckpt", str(root / "adapted.ckpt"), "--garments", str(root / "garments"),
                 "--episodes", "1", "--report", str(root / "report.json")]) == 0
    names = ["base.ckpt", "base.losses.csv", "refined.ckpt", "ann.json", "adapted.ckpt", "report.json"]
    return {name: (root / name).read_bytes() for name in names}


@pytest.mark.slow
def test_pipeline_is_repeatable(tmp_path):
    first = run_pipeline(tmp_path / "a")
    second = run_pipeline(tmp_path / "b")
    for name, content in first.items():
        assert content == second[name], name
