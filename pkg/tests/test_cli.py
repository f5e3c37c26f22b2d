"""Command-line interface: exit codes, JSON shape, determinism, round trips."""

import json
import math

import pytest

from impactdp.cli import main
from impactdp.tree import ScenarioTree, TreeNode, generate, preset
from impactdp.utility import exponential


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, json.loads(out), err


# -- solve -------------------------------------------------------------------

def test_solve_deterministic_example(capsys):
    code, payload, err = run_json(capsys, "solve", "--gen", "det-example")
    assert code == 0 and err == ""
    assert payload["command"] == "solve"
    assert payload["source"] == {"gen": "det-example"}
    assert payload["root_value"] == pytest.approx(exponential(1.0)(1 / 12), abs=1e-3)
    assert {"node": 0, "h": 0.17} in payload["strategy"]
    assert payload["diagnostics"]["monotonicity_violations"] == 0
    assert payload["config"]["action_count"] == 201


def test_solve_output_is_byte_deterministic(capsys):
    argv = ("solve", "--gen", "binomial", "--grid-xi", "11", "--grid-zeta", "5",
            "--grid-x", "5", "--actions", "21")
    code1, out1, _ = run(capsys, *argv)
    code2, out2, _ = run(capsys, *argv)
    assert code1 == code2 == 0
    assert out1 == out2
    payload = json.loads(out1)
    assert out1 == json.dumps(payload, indent=2, sort_keys=True) + "\n"


def test_solve_rejects_even_action_count(capsys):
    code, out, err = run(capsys, "solve", "--gen", "det-example", "--actions", "10")
    assert code == 2 and out == ""
    assert err.startswith("error:") and "odd" in err


def test_solve_rejects_unparseable_utility(capsys):
    code, _, err = run(capsys, "solve", "--gen", "det-example", "--utility", "sqrt")
    assert code == 2 and err.startswith("error:")


def test_out_file_matches_stdout_bytes(tmp_path, capsys):
    target = tmp_path / "report.json"
    code, out, _ = run(capsys, "demo", "nonconvex")
    assert code == 0
    code2 = main(["demo", "nonconvex", "--out", str(target)])
    capsys.readouterr()
    assert code2 == 0
    assert target.read_text() == out


# -- oracle ------------------------------------------------------------------

def test_oracle_agrees_with_itself(capsys):
    code, payload, err = run_json(capsys, "oracle", "--gen", "binomial")
    assert code == 0 and err == ""
    assert payload["methods_identical"] is True
    assert payload["enumerated"] == 5 ** 3
    assert math.isfinite(payload["value"])
    hs = {e["node"]: e["h"] for e in payload["strategy"]}
    assert set(hs) == set(generate(preset("binomial")).node_ids()) - {
        lf.id for lf in generate(preset("binomial")).leaves()
    }


def test_oracle_reports_capacity_exhaustion(capsys, tmp_path):
    from impactdp.tree import GeneratorSpec

    tree = generate(GeneratorSpec(kind="binomial", T=6, resilience=0.1, zeta0=0.0))
    path = tmp_path / "tree.json"
    tree.save(str(path))
    code, out, err = run(capsys, "oracle", "--tree", str(path))
    assert code == 4 and out == ""
    assert err.startswith("error:") and "exceeds the cap" in err


def test_oracle_requires_zero_in_the_grid(capsys):
    code, _, err = run(capsys, "oracle", "--gen", "binomial", "--oracle-grid=0.5,1")
    assert code == 2
    assert "contain 0.0" in err


# -- evaluate ----------------------------------------------------------------

def test_evaluate_round_trips_the_solver_strategy(tmp_path, capsys):
    tree_file = tmp_path / "tree.json"
    solve_file = tmp_path / "solve.json"
    assert main(["gen-tree", "--gen", "binomial", "--out", str(tree_file)]) == 0
    assert main([
        "solve", "--tree", str(tree_file), "--out", str(solve_file),
        "--grid-xi", "11", "--grid-zeta", "5", "--grid-x", "5", "--actions", "21",
    ]) == 0
    capsys.readouterr()
    code, payload, _ = run_json(
        capsys, "evaluate", "--tree", str(tree_file), "--strategy", str(solve_file)
    )
    assert code == 0
    solved = json.loads(solve_file.read_text())
    assert payload["value"] == solved["strategy_value"]


def test_evaluate_accepts_a_bare_strategy_report(tmp_path, capsys):
    tree_file = tmp_path / "tree.json"
    assert main(["gen-tree", "--gen", "det-example", "--out", str(tree_file)]) == 0
    capsys.readouterr()
    strategy = [{"node": 0, "h": 0.5}, {"node": 1, "h": -0.5}]
    strategy_file = tmp_path / "strategy.json"
    strategy_file.write_text(json.dumps(strategy))
    code, payload, _ = run_json(
        capsys, "evaluate", "--tree", str(tree_file), "--strategy", str(strategy_file)
    )
    assert code == 0
    assert payload["value"] == pytest.approx(exponential(1.0)(0.5 - 3 * 0.25), rel=1e-12)


# -- demo --------------------------------------------------------------------

def test_demo_nonconvex_reports_a_positive_margin(capsys):
    code, payload, _ = run_json(capsys, "demo", "nonconvex")
    assert code == 0
    assert payload["margin"] == pytest.approx(0.08125, abs=1e-12)
    assert payload["midpoint_convex"] is False


def test_demo_indirect_utility_csv(capsys):
    code, out, err = run(capsys, "demo", "indirect-utility", "--format", "csv")
    assert code == 0 and err == ""
    lines = out.splitlines()
    assert lines[0] == "z,value"
    assert len(lines) == 30  # 29 grid points, kink at 2.0 already on the grid
    zs = [float(line.split(",")[0]) for line in lines[1:]]
    assert 2.0 in zs
    for line in lines[1:]:
        z, v = (float(tok) for tok in line.split(","))
        assert v == pytest.approx(
            max(math.log(z), 0.5 * (math.log(z + 2.0) + math.log(z - 1.0))), rel=1e-12
        )


def test_demo_nonconvex_has_no_csv_form(capsys):
    code, _, err = run(capsys, "demo", "nonconvex", "--format", "csv")
    assert code == 2 and "indirect-utility" in err


# -- check -------------------------------------------------------------------

def test_check_flags_varying_depth(capsys):
    code, payload, _ = run_json(capsys, "check", "--gen", "notconvex")
    assert code == 1
    assert payload["failures"] == ["monotone-condition"]
    assert payload["valid"] is True
    assert payload["monotone_depth"]["holds"] is False
    assert payload["monotone_depth"]["violations"]


def test_check_passes_on_recovering_depth(capsys):
    code, payload, _ = run_json(capsys, "check", "--gen", "binomial")
    assert code == 0
    assert payload["failures"] == []
    assert payload["monotone_depth"]["holds"] is True
    assert payload["utility_assumptions"]["ok"] is True


def test_check_flags_invalid_trees(tmp_path, capsys):
    nodes = [
        TreeNode(id=0, parent=None, t=0, p=1.0, P=1.0, r=0.1),
        TreeNode(id=1, parent=0, t=1, p=1.0, P=1.5, r=0.2, delta=2.0),
        TreeNode(id=2, parent=1, t=2, p=0.3, P=2.0, delta=1.0, B=0.0),
        TreeNode(id=3, parent=1, t=2, p=0.4, P=0.5, delta=1.0, B=0.0),
    ]
    broken = ScenarioTree(T=2, zeta0=0.25, nodes=nodes)
    path = tmp_path / "broken.json"
    broken.save(str(path))
    code, payload, _ = run_json(capsys, "check", "--tree", str(path))
    assert code == 1
    assert "tree-invalid" in payload["failures"]
    assert payload["valid"] is False and payload["violations"]


# -- input handling ----------------------------------------------------------

def test_missing_tree_file_is_an_input_error(capsys):
    code, out, err = run(capsys, "solve", "--tree", "/nonexistent/tree.json")
    assert code == 2 and out == ""
    assert err.startswith("error:")


def test_malformed_tree_json_is_an_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, "solve", "--tree", str(bad))
    assert code == 2 and err.startswith("error:")


def test_seed_is_echoed_for_generated_trees(capsys):
    code, payload, _ = run_json(capsys, "check", "--gen", "binomial", "--seed", "7")
    assert code == 0
    assert payload["source"] == {"gen": "binomial", "seed": 7}
    code2, unseeded, _ = run_json(capsys, "check", "--gen", "binomial")
    assert unseeded["source"] == {"gen": "binomial"}
    # the built-in generators are deterministic: the seed changes nothing else
    assert payload["monotone_depth"] == unseeded["monotone_depth"]


def test_seed_rejected_with_a_tree_file(tmp_path, capsys):
    tree_file = tmp_path / "tree.json"
    assert main(["gen-tree", "--gen", "binomial", "--out", str(tree_file)]) == 0
    capsys.readouterr()
    code, _, err = run(capsys, "check", "--tree", str(tree_file), "--seed", "1")
    assert code == 2 and "--gen" in err


def test_gen_tree_round_trips(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-tree", "--gen", "zero-price")
    assert code == 0
    assert out == generate(preset("zero-price")).to_json()
    loaded = ScenarioTree.from_json(out)
    assert loaded.T == 3 and loaded.validate().ok
