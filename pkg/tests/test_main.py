"""End-to-end tests of the pufferkit command line."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from pufferkit.database import write_slice_samples
from pufferkit.main import EXIT_CAPABILITY, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from pufferkit.relations import binary_entropy
from pufferkit.sampling import stream

pytestmark = pytest.mark.integration


def write_json(path: Path, payload: dict) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def bit_framework(tmp_path) -> str:
    return write_json(
        tmp_path / "bit.json",
        {
            "n": 1,
            "k": 1,
            "privates": [{"kind": "row-selector", "index": 0}],
            "theta": {"variant": "discrete", "grid": "uniform"},
        },
    )


@pytest.fixture
def gaussian_framework(tmp_path) -> str:
    return write_json(
        tmp_path / "gauss.json",
        {
            "n": 100,
            "k": 1,
            "preset": "dp",
            "theta": {"variant": "product_gaussian", "m": 1.0, "s": 1.0},
        },
    )


class TestConvert:
    def test_plain_output(self, capsys):
        assert main(["convert", "--from", "pp", "--to", "mipp", "--eps", "1.0"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == "0.5"

    def test_json_output(self, capsys):
        code = main("convert --from mi-dp --to approx-dp --eps 0.02 --eps-prime 0.1 --json".split())
        assert code == EXIT_OK
        record = json.loads(capsys.readouterr().out)
        assert record["output_notion"] == "approx-dp"
        assert record["params_out"] == pytest.approx([0.1, 0.2])

    def test_unknown_pair(self):
        assert main(["convert", "--from", "mipp", "--to", "pp", "--eps", "1.0"]) == EXIT_USAGE


class TestCalibrate:
    def test_sensitivity(self, capsys):
        argv = "calibrate --mechanism gaussian-sensitivity --sensitivity 1 --dim 2 --eps 1"
        code = main(argv.split())
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["b_or_sigma2"] == pytest.approx(1 / (4 * math.expm1(1.0)))
        assert report["family"] == "gaussian"

    def test_framework(self, capsys, gaussian_framework):
        argv = f"calibrate --mechanism laplace --framework {gaussian_framework} --eps 0.1 --seed 0"
        code = main(argv.split())
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["b_or_sigma2"] == pytest.approx(0.01 / math.expm1(0.1))
        assert report["dim"] == 1

    def test_framework_required(self):
        assert main(["calibrate", "--mechanism", "gaussian", "--eps", "1"]) == EXIT_USAGE

    def test_usage_errors(self):
        assert main(["calibrate", "--eps", "1"]) == EXIT_USAGE
        assert main(["no-such-command"]) == EXIT_USAGE


class TestCompose:
    def test_adaptive(self, tmp_path, capsys):
        budget = write_json(
            tmp_path / "b.json", {"entries": [{"id": "a", "eps": 0.25}, {"id": "b", "eps": 0.5}]}
        )
        assert main(["compose", "--budget", budget]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["total"] == pytest.approx(0.75)

    def test_nonadaptive_needs_eta(self, tmp_path):
        budget = write_json(
            tmp_path / "b.json", {"mode": "nonadaptive", "entries": [{"id": "a", "eps": 0.25}]}
        )
        assert main(["compose", "--budget", budget]) == EXIT_USAGE

    def test_uc(self, tmp_path, capsys, bit_framework):
        budget = write_json(
            tmp_path / "b.json", {"mode": "uc", "entries": [{"id": "a", "eps": 1.0}]}
        )
        assert main(["compose", "--budget", budget, "--framework", bit_framework]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["eta_provenance"] == "exact-zero-UC"


class TestOracle:
    def test_kernel_file(self, tmp_path, capsys, bit_framework):
        kernel = tmp_path / "rr.csv"
        kernel.write_text("x0,out:0,out:1\n0,0.9,0.1\n1,0.1,0.9\n")
        code = main(["oracle-mi", "--framework", bit_framework, "--kernel", str(kernel)])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["value"] == pytest.approx(math.log(2) - binary_entropy(0.1))

    def test_continuous_family_is_a_capability_error(self, gaussian_framework):
        code = main(["oracle-mi", "--framework", gaussian_framework, "--scale", "1.0"])
        assert code == EXIT_CAPABILITY


class TestSampleCommands:
    def test_audit_reports_a_violation(self, tmp_path, leaky_samples):
        write_slice_samples(tmp_path / "samples", leaky_samples)
        out = tmp_path / "report.json"
        manifest = tmp_path / "manifest.json"
        estimator = "--inner plugin --bins 5 --projections 4 --seed 1 --threads 1"
        code = main(
            [
                "audit",
                *f"--samples {tmp_path / 'samples'} --eps 0.05 --margin 0.02".split(),
                *estimator.split(),
                *f"--out {out} --manifest {manifest}".split(),
            ]
        )
        assert code == EXIT_VIOLATION
        report = json.loads(out.read_text())
        assert report["decision"] == "violation"
        assert report["argmax_row"] == 1
        record = json.loads(manifest.read_text())
        assert record["command"] == "audit"
        assert len(record["config_digest"]) == 64
        assert record["seeds"] == {"seed": 1}

    def test_audit_rejects_a_bad_margin(self, tmp_path):
        argv = ["audit", "--samples", str(tmp_path), "--eps", "0.1", "--margin", "-1"]
        assert main(argv) == EXIT_USAGE

    def test_smi_estimate_for_one_row(self, tmp_path, capsys, leaky_samples):
        write_slice_samples(tmp_path, leaky_samples)
        estimator = "--inner plugin --bins 5 --projections 3 --threads 1"
        code = main(
            ["smi-estimate", "--samples", str(tmp_path), "--row", "1", *estimator.split()]
        )
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["row"] == 1
        assert report["p"] == 3
        assert report["value"] > 1.0

    def test_smi_estimate_with_the_theory_box(self, tmp_path, capsys, leaky_samples):
        write_slice_samples(tmp_path, leaky_samples)
        estimator = "--inner dv --box-rule theory --neurons 4 --steps 5 --projections 1"
        argv = ["smi-estimate", "--samples", str(tmp_path), "--row", "1", "--threads", "1"]
        assert main([*argv, *estimator.split()]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["p"] == 1
        assert main([*argv, "--box-rule", "loose"]) == EXIT_USAGE

    def test_mean_estimate(self, tmp_path, capsys):
        data = stream(9).normal(loc=0.5, size=(2000, 1))
        path = tmp_path / "samples.csv"
        np.savetxt(path, data, delimiter=",", header="c0", comments="")
        options = "--eps 1 --beta 0.5 --seed 2 --threads 1"
        code = main(["mean-estimate", "--samples", str(path), *options.split()])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["m"] == math.floor(200 * math.log(2))
        assert abs(report["estimate"][0] - 0.5) < 0.2
