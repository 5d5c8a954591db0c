import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from conftest import loop_conv2d, rel_err
from winolab.cli import main
from winolab.engines import ConvSpec
from winolab.kerngen import generate_kernel, kernel_from_dict
from winolab.planner import execute_plan, plan_from_dict
from winolab.tensor import read_tensor, write_tensor


def run(capsys, *argv):
    code = main(["--quiet", *argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_banner_on_stderr(capsys):
    assert main(["gen-kernel", "--m", "2", "--r", "2"]) == 0
    out, err = capsys.readouterr()
    assert err.startswith("winolab ") and "winolab" not in out.splitlines()[0]


def test_gen_kernel_text(capsys):
    code, out, _ = run(capsys, "gen-kernel", "--m", "2", "--r", "3")
    assert code == 0
    for name in ("AT", "G", "BT"):
        assert f"{name} (exact)" in out and f"{name} (decimal)" in out
    assert "1/2" in out and "0.5" in out


def test_gen_kernel_bad(capsys):
    code, _, err = run(capsys, "gen-kernel", "--m", "0", "--r", "3")
    assert code == 1 and err


def test_gen_kernel_json_round_trip(capsys):
    code, out, _ = run(capsys, "gen-kernel", "--m", "6", "--r", "3", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert kernel_from_dict(d) == generate_kernel(6, 3)
    assert d["BT_float"][0][0] == float(generate_kernel(6, 3).BT[0][0])


def test_plan_rpn(capsys):
    code, out, _ = run(capsys, "plan", "--filter", "5", "--stride", "2", "--kernel", "2,2", "--rpn")
    assert code == 0 and out.strip() == "K2,2 NEST2 K2,2 REP2 SUM2"


def test_plan_single_leaf(capsys):
    code, out, _ = run(capsys, "plan", "--filter", "3", "--stride", "1", "--kernel", "3,3")
    assert code == 0 and out.strip().startswith("Leaf F(3,3)") and len(out.strip().splitlines()) == 1


def test_plan_json_executes(capsys, rng):
    code, out, _ = run(capsys, "plan", "--filter", "10", "--stride", "3", "--kernel", "2,2", "--json")
    assert code == 0
    p = plan_from_dict(json.loads(out))
    x = rng.standard_normal((22, 22))
    w = rng.standard_normal((10, 10))
    y = execute_plan(p, x, w, ConvSpec.infer(x, w, 3))
    assert rel_err(y, loop_conv2d(x[None], w[None, None], 3)[0]) <= 1e-9


@pytest.fixture
def files(tmp_path, rng):
    x = rng.standard_normal((16, 16))
    w = rng.standard_normal((9, 9))
    write_tensor(tmp_path / "x.wten", x)
    write_tensor(tmp_path / "w.wten", w)
    return tmp_path, x, w


def test_conv_native_vs_nested(capsys, files):
    d, x, w = files
    for engine in ("native", "nested", "plan"):
        code, _, _ = run(capsys, "conv", "--engine", engine, "--input", str(d / "x.wten"),
                         "--filter", str(d / "w.wten"), "--output", str(d / f"{engine}.wten"),
                         "--kernel", "3,3")
        assert code == 0
    native = read_tensor(d / "native.wten")
    assert native.shape == (8, 8)
    assert np.abs(read_tensor(d / "nested.wten") - native).max() <= 1e-6
    assert rel_err(read_tensor(d / "plan.wten"), native) <= 1e-9


def test_conv_delta_crops(capsys, tmp_path, rng):
    x = rng.standard_normal((9, 9))
    w = np.zeros((3, 3))
    w[0, 0] = 1
    write_tensor(tmp_path / "x.wten", x)
    write_tensor(tmp_path / "w.wten", w)
    code, _, _ = run(capsys, "conv", "--engine", "ola", "--kernel", "2,2", "--input", str(tmp_path / "x.wten"),
                     "--filter", str(tmp_path / "w.wten"), "--output", str(tmp_path / "y.wten"))
    assert code == 0
    np.testing.assert_allclose(read_tensor(tmp_path / "y.wten"), x[:7, :7], atol=1e-12)


def test_conv_stride_csv_input(capsys, tmp_path, rng):
    x = rng.standard_normal((12, 12))
    w = rng.standard_normal((5, 5))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",", fmt="%.17g")
    np.savetxt(tmp_path / "w.csv", w, delimiter=",", fmt="%.17g")
    code, _, _ = run(capsys, "conv", "--engine", "plan", "--kernel", "2,2", "--stride", "2",
                     "--input", str(tmp_path / "x.csv"), "--filter", str(tmp_path / "w.csv"),
                     "--output", str(tmp_path / "y.wten"))
    assert code == 0
    assert rel_err(read_tensor(tmp_path / "y.wten"), loop_conv2d(x[None], w[None, None], 2)[0]) <= 1e-9


def test_conv_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "conv", "--engine", "native", "--input", str(tmp_path / "nope.wten"),
                       "--filter", str(tmp_path / "nope.wten"), "--output", str(tmp_path / "y.wten"))
    assert code == 3 and "I/O" in err


def test_conv_needs_kernel(capsys, files):
    d, _, _ = files
    code, _, _ = run(capsys, "conv", "--engine", "nested", "--input", str(d / "x.wten"),
                     "--filter", str(d / "w.wten"), "--output", str(d / "y.wten"))
    assert code == 1


def test_cost_default_grid(capsys):
    code, out, _ = run(capsys, "cost")
    assert code == 0
    assert len(out.strip().splitlines()) == 1 + 10 * 4 * 3


def test_cost_9x9_f33(capsys):
    code, out, _ = run(capsys, "cost", "--filter", "9", "--kernel", "3,3", "--format", "text")
    assert code == 0
    rows = {line.split()[0]: line.split() for line in out.splitlines()[1:4]}
    assert float(rows["ola"][-1]) == 25.0
    assert float(rows["nested"][-1]) == pytest.approx(7.716, abs=1e-3)
    assert "3.2400 (81/25)" in out


def test_cost_csv_file(capsys, tmp_path):
    code, out, _ = run(capsys, "cost", "--filter", "3-5", "--kernel", "2,2", "--csv", str(tmp_path / "c.csv"))
    assert code == 0 and out == ""
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 3
    ola5 = next(l for l in lines if l.startswith("ola,5,"))
    assert Fraction(float(ola5.split(",")[-1])) == Fraction(9 * 9, 4)


def test_cost_empty_methods(capsys):
    code, _, err = run(capsys, "cost", "--methods", "")
    assert code == 1 and "empty" in err


def test_verify_small_and_deterministic(capsys):
    argv = ["verify", "--trials", "2", "--seed", "7", "--kernel", "2,2", "--filter", "3,5", "--strides", "1,2"]
    code, out1, _ = run(capsys, *argv)
    assert code == 0 and "16/16 passed" in out1
    _, out2, _ = run(capsys, *argv)
    assert out1 == out2


def test_verify_tolerance_zero_fails(capsys):
    code, out, _ = run(capsys, "verify", "--trials", "2", "--tolerance", "0", "--kernel", "3,3",
                       "--filter", "7", "--strides", "1")
    assert code == 2 and "FAIL" in out and "max_rel_err" in out


def test_error_json(capsys):
    code, out, _ = run(capsys, "error", "--method", "nested", "--filter", "9", "--kernel", "2,2",
                       "--trials", "3", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert d["precision"] == 32 and 0 < d["max_relative_error"] < 1e-3


def test_usage_error(capsys):
    assert main(["--quiet", "nonsense"]) == 1
    assert main(["--quiet", "plan", "--filter", "3", "--kernel", "x"]) == 1


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "winolab", "--quiet", "plan", "--filter", "5", "--stride", "2",
                        "--kernel", "2,2", "--rpn"], capture_output=True, text=True)
    assert p.returncode == 0 and p.stdout.strip() == "K2,2 NEST2 K2,2 REP2 SUM2" and p.stderr == ""
