#!/usr/bin/env python3
"""Smoke test for the tdiag_py extension module.

Run from the repository root:

    pip install -e . --no-build-isolation
    python python/smoke_test.py

Without the editable install, the script falls back to building the
cdylib with cargo and importing it from a scratch directory.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    try:
        import tdiag_py  # noqa: F401

        return tdiag_py
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "tdiag-py"], check=True, cwd=ROOT
    )
    scratch = Path(tempfile.mkdtemp(prefix="tdiag-py-"))
    shutil.copyfile(
        ROOT / "target" / "release" / "libtdiag_py.so", scratch / "tdiag_py.so"
    )
    sys.path.insert(0, str(scratch))
    import tdiag_py

    return tdiag_py


def main():
    tdiag_py = import_module()

    with tempfile.TemporaryDirectory(prefix="tdiag-smoke-") as tmp:
        manifest = json.loads(
            tdiag_py.generate_scenario("too-large", tmp, seed=42)
        )
        bundle = Path(tmp)
        assert (bundle / "trace.ndjson").exists(), "bundle missing trace"

        report = json.loads(tdiag_py.diagnose_bundle(str(bundle)))
        diagnosis = report["diagnosis"]
        assert diagnosis["bug_category"] == manifest["expected_bug_category"], (
            diagnosis["bug_category"],
            manifest["expected_bug_category"],
        )
        assert diagnosis["root_cause_function"] == manifest["root_cause_function"]
        assert diagnosis["misused_variable"]["id"] == manifest["variable"]
        predicted = diagnosis["prediction"]["t_predict_ms"]
        need = manifest["true_need_ms"]
        assert abs(predicted - need) / need < 1e-6, (predicted, need)
        print(f"diagnose: {diagnosis['bug_category']} at "
              f"{diagnosis['root_cause_function']}, "
              f"predicted {tdiag_py.format_ms(predicted)}")

        dataset = (bundle / "dataset.csv").read_text()
        predictor = tdiag_py.Predictor(dataset, mode="safe")
        features = json.loads((bundle / "alert.json").read_text())["query_features"]
        assert abs(predictor.predict_ms(features) - predicted) / predicted < 1e-9
        print(f"predict:  {predictor!r}")

        runner = ROOT / "target" / "release" / "tdiag"
        if not runner.exists():
            subprocess.run(
                ["cargo", "build", "--release", "-p", "tdiag-cli"],
                check=True,
                cwd=ROOT,
            )
        verdict = json.loads(
            tdiag_py.validate_scenario(
                str(bundle / "scenario.json"),
                str(runner),
                config_key=manifest["config_key"],
                value_ms=round(predicted),
            )
        )
        assert verdict["outcome"] == manifest["expected_outcome"], verdict
        print(f"validate: {verdict['outcome']}")

        normalized = tdiag_py.normalize_trace((bundle / "trace.ndjson").read_text())
        assert normalized == (bundle / "trace.ndjson").read_text()

    assert tdiag_py.format_ms(138680.0) == "138.68s"
    print("smoke test OK")


if __name__ == "__main__":
    main()
