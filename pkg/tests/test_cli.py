import csv
import json

import pytest

from hyperbolax import cli
from hyperbolax.constants import default_path


def run(tmp_path, *argv, out="out"):
    code = cli.main([*argv, "--out", str(tmp_path / out)])
    return code, tmp_path / out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_regions_enumerate_writes_manifest(tmp_path):
    code, out = run(tmp_path, "regions", "enumerate", "--set", "N=2", "--set", "r=0.5")
    assert code == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert man["constants_version"] == "1.0.0"
    rows = read_csv(out / "regions.csv")
    assert rows and all(r["constants_version"] == "1.0.0" for r in rows)


def test_invalid_dyadic_level_exits_one(tmp_path):
    code, out = run(tmp_path, "regions", "enumerate", "--set", "N=3")
    assert code == cli.EXIT_INVALID
    assert json.loads((out / "manifest.json").read_text())["status"] != "ok"


def test_unknown_config_key_exits_one(tmp_path):
    code, _ = run(tmp_path, "regions", "enumerate", "--set", "bogus=1")
    assert code == cli.EXIT_INVALID


def test_bad_subcommand_exits_one(tmp_path):
    code, _ = run(tmp_path, "regions", "nonsense")
    assert code == cli.EXIT_INVALID


def test_extend_is_deterministic(tmp_path):
    args = ("extend", "--set", "n_radial=4", "--set", "n_angular=3", "--set", "max_nodes=2e4")
    assert run(tmp_path, *args, out="a")[0] == cli.EXIT_OK
    assert run(tmp_path, *args, out="b")[0] == cli.EXIT_OK
    for name in ("norms.csv", "field.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corrupted_constants_name_the_invariant(tmp_path, capsys):
    text = default_path().read_text().replace("volume_cap_lo = 0.0049", "volume_cap_lo = 5.0")
    bad = tmp_path / "bad.cfg"
    bad.write_text(text)
    code = cli.main(["regions", "enumerate", "--constants", str(bad), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_INVALID
    assert "volume_cap_lo < volume_cap_hi" in capsys.readouterr().err


def test_missing_constants_key(tmp_path, capsys):
    lines = [ln for ln in default_path().read_text().splitlines() if not ln.startswith("delta6")]
    bad = tmp_path / "bad.cfg"
    bad.write_text("\n".join(lines))
    code = cli.main(["regions", "enumerate", "--constants", str(bad), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_INVALID
    assert "delta6" in capsys.readouterr().err


def test_aggregate_refuses_mixed_versions(tmp_path):
    code, out = run(tmp_path, "regions", "enumerate", "--set", "N=1", out="a")
    assert code == cli.EXIT_OK
    src = out / "regions.csv"
    other = tmp_path / "other.csv"
    other.write_text(src.read_text().replace("1.0.0,", "0.9.0,"))
    code, _ = run(tmp_path, "sweep", "aggregate", str(src), str(other), out="agg")
    assert code == cli.EXIT_INVALID
    code, agg = run(tmp_path, "sweep", "aggregate", str(src), str(src), out="agg2")
    assert code == cli.EXIT_OK
    assert len(read_csv(next(agg.glob("*.csv")))) == 2 * len(read_csv(src))


def test_whitney_check_counts(tmp_path):
    code, out = run(tmp_path, "regions", "whitney-check", "--set", "samples=200", "--set", "n_max=2")
    assert code == cli.EXIT_OK
    for row in read_csv(out / "whitney.csv"):
        assert row["missed"] == "0" and row["multiple"] == "0"


def test_verify_only_subset(tmp_path):
    code, out = run(tmp_path, "verify", "quick", "--only", "A3.children", "A2.cover")
    assert code == cli.EXIT_OK
    rows = read_csv(out / "verify.csv")
    assert sorted(r["id"] for r in rows) == ["A2.cover", "A3.children"]
    assert all(r["passed"] == "1" for r in rows)


@pytest.mark.parametrize("action", ["decouple", "bilinear"])
def test_inequality_reports(tmp_path, action):
    code, out = run(tmp_path, "inequality", action, "--set", "max_nodes=2e4")
    assert code == cli.EXIT_OK
    assert read_csv(out / "inequality.csv")
