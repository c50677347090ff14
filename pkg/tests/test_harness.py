import json

import pytest

import splitsim as ss
from splitsim.harness import ExperimentSpec, main

BASE_INI = """
[objective]
family = quadratic
n_clients = 4
dim = 2
curvature = 2.0
heterogeneity = 1.0
sigma = 0.5
seed = 1

[train]
algorithm = sl
rounds = 15
local_steps = 2
lr = 0.01
seeds = 0,1,2
x0 = 1.0, -1.0
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(BASE_INI)
    return path


def read_names(out):
    return sorted(p.name for p in out.iterdir())


class TestSpec:
    def test_ini_and_json_equivalent(self, tmp_path, config):
        spec = ExperimentSpec.load(config)
        jpath = tmp_path / "exp.json"
        jpath.write_text(json.dumps(spec.to_dict()))
        assert ExperimentSpec.load(jpath).config_hash() == spec.config_hash()

    def test_roundtrip(self, config):
        spec = ExperimentSpec.load(config)
        assert ExperimentSpec(spec.to_dict()).to_dict() == spec.to_dict()

    def test_hash_sensitive_to_values(self, config):
        spec = ExperimentSpec.load(config)
        other = ExperimentSpec(spec.to_dict())
        other.sections["train"]["lr"] = "0.02"
        assert other.config_hash() != spec.config_hash()

    def test_missing_field_named(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[objective]\nfamily = quadratic\n")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "n_clients" in err

    def test_usage_error_is_exit_1(self, capsys):
        assert main(["run"]) == 1


class TestRun:
    def test_three_seeds_three_traces_one_manifest(self, tmp_path, config):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config), "--out", str(out)]) == 0
        assert read_names(out) == ["manifest.json", "run_seed0.csv",
                                   "run_seed1.csv", "run_seed2.csv"]

    def test_manifest_lists_every_file(self, tmp_path, config):
        out = tmp_path / "out"
        main(["run", "--config", str(config), "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(manifest["files"]) == read_names(out)
        assert manifest["config_hash"] == ExperimentSpec.load(config).config_hash()

    def test_rerun_byte_identical(self, tmp_path, config):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", str(config), "--out", str(a)])
        main(["run", "--config", str(config), "--out", str(b), "--parallel", "3"])
        for name in ("run_seed0.csv", "run_seed1.csv", "run_seed2.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_hash_embedded_in_csv(self, tmp_path, config):
        out = tmp_path / "out"
        main(["run", "--config", str(config), "--out", str(out)])
        h = ExperimentSpec.load(config).config_hash()
        first = (out / "run_seed0.csv").read_text().splitlines()[0]
        assert first == f"# config_hash={h}"

    def test_json_format(self, tmp_path, config):
        out = tmp_path / "out"
        main(["run", "--config", str(config), "--out", str(out),
              "--format", "json", "--seeds", "7"])
        data = json.loads((out / "run_seed7.json").read_text())
        assert data["seed"] == 7 and data["rounds"] == 15

    def test_seeds_flag_overrides(self, tmp_path, config):
        out = tmp_path / "out"
        main(["run", "--config", str(config), "--out", str(out),
              "--seeds", "5,6"])
        assert read_names(out) == ["manifest.json", "run_seed5.csv",
                                   "run_seed6.csv"]

    def test_env_var_default_out(self, tmp_path, config, monkeypatch):
        out = tmp_path / "envout"
        monkeypatch.setenv("SPLITSIM_OUT", str(out))
        assert main(["run", "--config", str(config)]) == 0
        assert (out / "manifest.json").exists()

    def test_unwritable_out_is_runtime_failure(self, tmp_path, config):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--config", str(config), "--out", str(blocker)]) == 2


class TestBounds:
    def worked_config(self, tmp_path):
        # two unit-curvature clients at +-1 (G=1), start at 2 so the
        # optimality gap is exactly 2
        path = tmp_path / "b.ini"
        path.write_text("""
[objective]
family = quadratic
n_clients = 2
dim = 1
curvature = 1.0
heterogeneity = 1.0
seed = 0

[train]
rounds = 100
local_steps = 1
lr = 0.001
x0 = 2.0
""")
        return path

    def test_worked_total(self, tmp_path):
        out = tmp_path / "out"
        assert main(["bounds", "--config", str(self.worked_config(tmp_path)),
                     "--out", str(out)]) == 0
        data = json.loads((out / "bounds.json").read_text())
        assert data["init_gap"] == pytest.approx(2.0, rel=1e-12)
        assert data["sl"]["total"] == pytest.approx(40.000048, rel=1e-12)
        assert data["sl"]["lr_ok"]

    def test_lr_max_ratio_is_n(self, tmp_path):
        out = tmp_path / "out"
        main(["bounds", "--config", str(self.worked_config(tmp_path)),
              "--out", str(out)])
        data = json.loads((out / "bounds.json").read_text())
        assert data["lr_max_fl"] / data["lr_max_sl"] == pytest.approx(2.0,
                                                                      rel=1e-12)

    def test_too_large_lr_still_reports(self, tmp_path):
        path = self.worked_config(tmp_path)
        path.write_text(path.read_text().replace("lr = 0.001", "lr = 5.0"))
        out = tmp_path / "out"
        assert main(["bounds", "--config", str(path), "--out", str(out)]) == 0
        data = json.loads((out / "bounds.json").read_text())
        assert not data["sl"]["lr_ok"]
        assert data["sl"]["total"] > 0

    def test_partial_participation_refused(self, tmp_path, capsys):
        path = self.worked_config(tmp_path)
        path.write_text(path.read_text() + "clients_per_round = 1\n")
        assert main(["bounds", "--config", str(path),
                     "--out", str(tmp_path / "o")]) == 1
        assert "full participation" in capsys.readouterr().err


class TestCompare:
    def test_equal_effective_lr_rule(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("""
[objective]
family = quadratic
n_clients = 10
dim = 1
heterogeneity = 1.0
seed = 0

[train]
rounds = 100
local_steps = 5
lr = 0.001
x0 = 1.0

[sweep]
grid = 0.001 0.01

[compare]
equal_effective_lr = true
""")
        out = tmp_path / "out"
        assert main(["compare", "--config", str(path), "--out", str(out),
                     "--seeds", "0"]) == 0
        rows = json.loads((out / "compare.json").read_text())["rows"]
        by_algo = {r["algorithm"]: r for r in rows}
        assert by_algo["fl"]["matched_lr"] == pytest.approx(1 / (5 * 10))
        assert by_algo["sl"]["matched_lr"] == pytest.approx(1 / (50 * 10))

    def test_table_shape(self, tmp_path, config):
        out = tmp_path / "out"
        assert main(["compare", "--config", str(config), "--out", str(out),
                     "--seeds", "0,1"]) == 0
        lines = (out / "compare.csv").read_text().strip().splitlines()
        assert lines[1] == "heterogeneity,algorithm,best_metric,best_lr,threshold_lr"
        assert len(lines) == 4  # hash comment + header + fl row + sl row


class TestPartition:
    def write_config(self, tmp_path, mechanism, extra, labels):
        lpath = tmp_path / "labels.txt"
        lpath.write_text("\n".join(str(v) for v in labels))
        path = tmp_path / "p.ini"
        path.write_text(f"[partition]\nlabels = {lpath}\n"
                        f"mechanism = {mechanism}\nn_clients = 10\n"
                        f"seed = 3\n{extra}")
        return path

    def test_stats_rows_equal_n(self, tmp_path):
        labels = [i % 10 for i in range(1000)]
        path = self.write_config(tmp_path, "dirichlet", "alpha = 0.2\n", labels)
        out = tmp_path / "out"
        assert main(["partition", "--config", str(path), "--out", str(out)]) == 0
        lines = (out / "partition_stats.csv").read_text().strip().splitlines()
        assert len(lines) == 12  # hash + header + 10 clients

    def test_class_budget(self, tmp_path):
        labels = [i % 10 for i in range(1000)]
        path = self.write_config(tmp_path, "classes",
                                 "classes_per_client = 2\n", labels)
        out = tmp_path / "out"
        main(["partition", "--config", str(path), "--out", str(out)])
        for line in (out / "partition_stats.csv").read_text().strip().splitlines()[2:]:
            counts = line.rsplit(",", 1)[1]
            assert len(counts.split(";")) <= 3

    def test_same_seed_identical_json(self, tmp_path):
        labels = [i % 5 for i in range(200)]
        path = self.write_config(tmp_path, "dirichlet", "alpha = 0.5\n", labels)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["partition", "--config", str(path), "--out", str(a)])
        main(["partition", "--config", str(path), "--out", str(b)])
        assert (a / "partition.json").read_bytes() == (b / "partition.json").read_bytes()

    def test_infeasible_reported(self, tmp_path, capsys):
        path = self.write_config(tmp_path, "dirichlet", "alpha = 1.0\n",
                                 [0, 1, 0])
        assert main(["partition", "--config", str(path),
                     "--out", str(tmp_path / "o")]) == 2


class TestSweep:
    def test_file_count(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("""
[objective]
family = quadratic
n_clients = 3
dim = 1
seed = 0

[train]
rounds = 10
local_steps = 1
lr = 0.01
x0 = 1.0

[sweep]
algorithms = sl, fl
grid = 0.001 0.01 0.1
heterogeneity_grid = 0.0 1.0 2.0
""")
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(path), "--out", str(out)]) == 0
        names = read_names(out)
        assert len([n for n in names if n.endswith(".csv")]) == 6
        assert len([n for n in names if n.startswith("sweep") and
                    n.endswith(".json")]) == 6
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(manifest["files"]) == names

    def test_all_diverged_exit_zero(self, tmp_path):
        path = tmp_path / "s.ini"
        path.write_text("""
[objective]
family = quadratic
n_clients = 2
dim = 1
curvature = 10.0
seed = 0

[train]
rounds = 30
local_steps = 5
lr = 0.3
x0 = 2.0

[sweep]
algorithms = sl
grid = 0.3 0.5
""")
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(path), "--out", str(out)]) == 0
        data = json.loads((out / "sweep_sl_G0.json").read_text())
        assert data["all_diverged"] is True

    def test_threshold_shrinks_with_heterogeneity(self, tmp_path):
        fam0 = ss.quadratic_family(10, dim=1, curvature=15.0, heterogeneity=0.0,
                                   sigma=3.0, seed=0)
        fam2 = ss.quadratic_family(10, dim=1, curvature=15.0, heterogeneity=2.0,
                                   sigma=3.0, seed=0)
        seeds = range(3)
        res = {}
        for name, fam in (("g0", fam0), ("g2", fam2)):
            cfg = ss.TrainConfig(algorithm="sl", n_clients=10, rounds=60,
                                 local_steps=5, lr=0.01, x0=fam.optimum())
            res[name] = ss.lr_sweep(fam, cfg, seeds=seeds)
        t0 = res["g0"].threshold_lr or float("inf")
        t2 = res["g2"].threshold_lr or float("inf")
        assert t2 <= t0
