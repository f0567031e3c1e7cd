import csv
import dataclasses
import io

import numpy as np
import pytest

from gbmstrat.config import load_config
from gbmstrat.errors import ConfigError, FormatError, NotFound
from gbmstrat.evaluation.cohort import labelled, labelling_report, load_cohort
from gbmstrat.evaluation.experiment import (
    MetricsReport,
    read_subgroup_table,
    run_experiment,
    run_on_cases,
    subgroup_run,
)
from gbmstrat.fixtures import COHORT_COUNTS, N_EXCLUDED, make_fixtures


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    return make_fixtures(tmp_path_factory.mktemp("fx"), seed=0, with_slide=False)


def quick_config(root, out):
    cfg = load_config(root / "config.toml", out_dir=out)
    cfg.n_folds = 2
    cfg.mil = dataclasses.replace(cfg.mil, epochs=2, hidden=16, attn_hidden=8)
    cfg.gbdt = dataclasses.replace(cfg.gbdt, n_rounds=10)
    return cfg


def test_fixture_cohort_counts(fixture_dir):
    cases = load_cohort(fixture_dir / "cohort.csv", bags_dir=fixture_dir / "bags")
    assert len(cases) == sum(COHORT_COUNTS.values()) + N_EXCLUDED
    lab = labelled(cases)
    assert len(lab) == 188 and sum(c.label_code for c in lab) == 94
    assert sum(c.sex == "male" for c in lab) == 112
    assert sum(c.mgmt == "methylated" for c in lab) == 59 and sum(c.mgmt == "unmethylated" for c in lab) == 50
    assert all(c.clinical is not None and c.bag_path.is_file() for c in lab)
    report = list(csv.DictReader(io.StringIO(labelling_report(cases))))
    assert {r["rule"] for r in report} >= {"deceased_le_9", "deceased_ge_13", "alive_followup_ge_13"}


def _write(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows))


def test_manifest_variants(tmp_path):
    head = ["case_id", "os_days", "vital_status", "sex", "mgmt", "bag_path"]
    _write(tmp_path / "m.csv", head, [["A", "608.8", "Deceased", "Female", "", "a.pbag"]])
    (case,) = load_cohort(tmp_path / "m.csv", bags_dir=tmp_path / "bags")
    assert case.os_months == pytest.approx(20.0) and case.label.value == "long"
    assert case.mgmt == "unknown" and case.bag_path == tmp_path / "bags" / "a.pbag" and case.clinical is None
    _write(tmp_path / "m.csv", head, [["A", "1", "deceased", "male", "", ""], ["A", "2", "deceased", "male", "", ""]])
    with pytest.raises(FormatError, match="duplicate"):
        load_cohort(tmp_path / "m.csv")
    _write(tmp_path / "m.csv", head, [["A", "1", "deceased", "other", "", ""]])
    with pytest.raises(FormatError, match="sex"):
        load_cohort(tmp_path / "m.csv")
    _write(tmp_path / "m.csv", ["case_id", "sex"], [["A", "male"]])
    with pytest.raises(FormatError):
        load_cohort(tmp_path / "m.csv")
    with pytest.raises(NotFound):
        load_cohort(tmp_path / "absent.csv")


def test_absent_case_is_config_error(fixture_dir, tmp_path):
    text = (fixture_dir / "cohort.csv").read_text().splitlines()
    rows = list(csv.reader(text))
    idx = rows[0].index("bag_path")
    first = next(r for r in rows[1:] if r[idx])
    rows = [rows[0]] + [r if r is not first else r[:idx] + ["gone.pbag"] + r[idx + 1:] for r in rows[1:]]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    (tmp_path / "cohort.csv").write_text(buf.getvalue())
    cfg = quick_config(fixture_dir, tmp_path / "out")
    cfg.manifest = tmp_path / "cohort.csv"
    cfg.bags_dir = fixture_dir / "bags"
    cases = load_cohort(cfg.manifest, bags_dir=cfg.bags_dir)
    if not next(c for c in cases if c.case_id == first[0]).labelled:
        pytest.skip("first case happens to be excluded")
    with pytest.raises(ConfigError, match=first[0]):
        run_experiment(cfg, ("imaging",))
    # the clinical model does not need bags
    run_experiment(cfg, ("clinical",), write=False)


def test_experiment_tables_and_reruns(fixture_dir, tmp_path):
    outs = []
    for k in range(2):
        cfg = quick_config(fixture_dir, tmp_path / f"run{k}")
        cfg.threads = 1 + k  # thread count must not change results
        reports = run_experiment(cfg)
        outs.append(cfg.out_dir)
    for m in ("imaging", "clinical", "fusion"):
        a = (outs[0] / f"table_{m}.csv").read_bytes()
        assert a == (outs[1] / f"table_{m}.csv").read_bytes()
        lines = a.decode().splitlines()
        assert lines[0] == "fold,val_auc,val_acc,test_auc,test_acc"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "mean"]
    preds = (outs[0] / "imaging_clinical_fusion" / "predictions_fold0.csv").read_text().splitlines()
    assert preds[0] == "case_id,partition,label,p_imaging,p_clinical,p_fusion"
    assert len(preds) == 1 + 36
    row = preds[1].split(",")
    assert float(row[5]) == pytest.approx((float(row[3]) + float(row[4])) / 2, abs=1e-15)
    assert (outs[0] / "models" / "fold_1" / "gbdt.json").is_file()
    assert (outs[0] / "config.resolved.toml").is_file()
    mean = reports["fusion"].mean
    assert 0 <= mean["test_auc"] <= 1


def test_subgroup_table(fixture_dir, tmp_path):
    cfg = quick_config(fixture_dir, tmp_path / "out")
    rows = subgroup_run(cfg, "mgmt")
    assert [(r["subgroup"], r["n_samples"]) for r in rows] == [("methylated", 59), ("unmethylated", 50)]
    subgroup_run(cfg, "sex")
    table = read_subgroup_table(cfg.out_dir / "table_subgroups.csv")
    assert [(r["criterion"], r["subgroup"]) for r in table] == [
        ("sex", "male"), ("sex", "female"), ("mgmt", "methylated"), ("mgmt", "unmethylated")]
    assert table[0]["n_short"] == 53 and table[0]["n_long"] == 59


def test_degenerate_subgroup(fixture_dir, tmp_path):
    # female short survivors only: a single class
    females = [c for c in load_cohort(fixture_dir / "cohort.csv")
               if c.sex == "female" and c.label.value == "short"]
    cfg = quick_config(fixture_dir, tmp_path / "out")
    with pytest.raises(ConfigError):
        run_on_cases(females, cfg, ("clinical",))


def test_metrics_report_nan_mean():
    rep = MetricsReport("imaging", [{"fold": 0, "val_auc": float("nan"), "val_acc": 1.0, "test_auc": 0.5,
                                     "test_acc": 0.5},
                                    {"fold": 1, "val_auc": 0.75, "val_acc": 0.0, "test_auc": 1.0, "test_acc": 1.0}])
    assert rep.mean["val_auc"] == 0.75
    assert rep.to_csv().splitlines()[1] == "0,nan,1.000000,0.500000,0.500000"
    assert rep.to_csv().splitlines()[-1] == "mean,0.750000,0.500000,0.750000,0.750000"
