"""CLI workflows end to end: simulate, fit, predict, compare, classify."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from codagam.cli import _unconstrain, load_dataset, main
from codagam.errors import ConfigError
from codagam.model import build_design
from codagam.runconfig import load_config, parse_terms
from codagam.model import Intercept, Linear, RandomIntercept, Smooth, Tensor

pytestmark = pytest.mark.filterwarnings("ignore::FutureWarning")


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--design", "linear", "--seed", "7",
                 "--n", "60", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    config = out / "m1.ini"
    config.write_text(
        f"""
[data]
dataset = {sim_dir / 'linear_data.csv'}
composition = y1, y2, y3, y4

[model]
terms = x1 + x2 + x3

[sampler]
chains = 2
warmup = 150
samples = 150
seed = 31

[output]
directory = {out / 'm1'}
"""
    )
    assert main(["fit", "--config", str(config)]) == 0
    return out / "m1"


class TestSimulateCommand:
    def test_linear_schema(self, sim_dir):
        frame = pd.read_csv(sim_dir / "linear_data.csv")
        assert list(frame.columns) == ["y1", "y2", "y3", "y4", "x1", "x2", "x3", "x4"]
        assert len(frame) == 60
        truth = json.loads((sim_dir / "linear_truth.json").read_text())
        assert truth["seed"] == 7

    def test_byte_identical_reruns(self, tmp_path):
        for sub in ("a", "b"):
            assert main(["simulate", "--design", "gam", "--seed", "5",
                         "--n", "40", "--out", str(tmp_path / sub)]) == 0
        a = (tmp_path / "a" / "gam_data.csv").read_bytes()
        b = (tmp_path / "b" / "gam_data.csv").read_bytes()
        assert a == b

    def test_gam_schema(self, tmp_path):
        assert main(["simulate", "--design", "gam", "--seed", "1",
                     "--n", "30", "--out", str(tmp_path)]) == 0
        frame = pd.read_csv(tmp_path / "gam_data.csv")
        assert list(frame.columns) == ["y1", "y2", "y3", "xs1", "xs2", "xs3"]

    def test_invalid_design_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--design", "cubist"])
        assert exc.value.code == 2


class TestTermGrammar:
    def test_full_grammar(self):
        terms = parse_terms(
            "x1 + factor(Lith, ref=1) + random(Year) + s(Elev, k=8) + te(Lon, Lat, k=5)"
        )
        assert isinstance(terms[0], Intercept)
        assert terms[1] == Linear("x1")
        assert terms[2] == Linear("Lith", reference="1")
        assert terms[3] == RandomIntercept("Year")
        assert isinstance(terms[4], Smooth)
        assert terms[4].spec.k == (8,)
        assert isinstance(terms[5], Tensor)
        assert terms[5].spec.k == (5, 5)

    def test_tensor_margin_sizes(self):
        terms = parse_terms("te(a, b, k1=4, k2=7)")
        assert terms[1].spec.k == (4, 7)

    def test_bad_terms_rejected(self):
        for text in ("x1 +", "frobnicate(x)", "s(x, k=3, wat=1)", "s(x", "x-y"):
            with pytest.raises(ConfigError):
                parse_terms(text)


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path, sim_dir):
        config = tmp_path / "bad.ini"
        config.write_text(
            f"""
[data]
dataset = {sim_dir / 'linear_data.csv'}
composition = y1, y2, y3, y4
typo_key = 1

[model]
terms = x1
"""
        )
        with pytest.raises(ConfigError, match="typo_key"):
            load_config(config)

    def test_missing_dataset_rejected(self, tmp_path):
        config = tmp_path / "bad.ini"
        config.write_text(
            """
[data]
dataset = nope.csv
composition = a, b

[model]
terms = x1
"""
        )
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(config)

    def test_fit_exit_code_on_bad_config(self, tmp_path, capsys):
        config = tmp_path / "broken.ini"
        config.write_text("[data]\n")
        assert main(["fit", "--config", str(config)]) == 2

    def test_kappa_autodetect(self, tmp_path):
        frame = pd.DataFrame({"a": [20.0, 30.0], "b": [80.0, 70.0]})
        path = tmp_path / "pct.csv"
        frame.to_csv(path, index=False)
        data = load_dataset(path, ["a", "b"])
        assert data.kappa == 100.0
        frame = pd.DataFrame({"a": [0.2, 0.3], "b": [0.8, 0.7]})
        path2 = tmp_path / "prop.csv"
        frame.to_csv(path2, index=False)
        assert load_dataset(path2, ["a", "b"]).kappa == 1.0


class TestFitArtifacts:
    def test_expected_files(self, fit_dir):
        for name in (
            "draws.csv", "summary.csv", "diagnostics.csv", "effects.csv",
            "pointwise_loglik.csv", "r2_draws.csv", "meta.json", "config.ini",
        ):
            assert (fit_dir / name).exists(), name

    def test_summary_columns(self, fit_dir):
        summary = pd.read_csv(fit_dir / "summary.csv")
        assert list(summary.columns) == ["parameter", "mean", "sd", "q2.5", "q50", "q97.5"]
        assert "b[1].x1" in set(summary["parameter"])
        assert "rho[2,3]" in set(summary["parameter"])

    def test_draws_shape(self, fit_dir):
        draws = pd.read_csv(fit_dir / "draws.csv")
        assert len(draws) == 300  # 2 chains x 150
        assert {"chain__", "lp__", "divergent__"} <= set(draws.columns)

    def test_pointwise_loglik_shape(self, fit_dir):
        pointwise = pd.read_csv(fit_dir / "pointwise_loglik.csv")
        assert pointwise.shape == (300, 60)

    def test_meta_content(self, fit_dir):
        meta = json.loads((fit_dir / "meta.json").read_text())
        assert meta["chains"] == 2
        assert "waic" in meta
        assert 0 <= meta["br_coda_r2"]["mean"] <= 1

    def test_constrained_draw_invariants(self, fit_dir):
        draws = pd.read_csv(fit_dir / "draws.csv")
        for d in (1, 2, 3):
            assert (draws[f"sigma[{d}]"] > 0).all()
        rho_cols = ["rho[1,2]", "rho[1,3]", "rho[2,3]"]
        assert (draws[rho_cols].abs() < 1).all().all()
        # correlation matrices are SPD with unit diagonal for every draw
        rho = draws[rho_cols].to_numpy()
        corr = np.tile(np.eye(3), (len(rho), 1, 1))
        iu = np.triu_indices(3, k=1)
        corr[:, iu[0], iu[1]] = rho
        corr[:, iu[1], iu[0]] = rho
        eigenvalues = np.linalg.eigvalsh(corr)
        assert eigenvalues.min() > 0

    def test_near_constant_composition_concentrates_intercept(self):
        from codagam.fitting import fit as fit_fn
        from codagam.hmc import SamplerConfig
        from codagam.ilr import build_basis, ilr, ilr_inverse_sample
        from codagam.model import Dataset, Intercept, ModelSpec
        from codagam.simplex import closure

        rng = np.random.default_rng(6)
        base = closure([0.5, 0.3, 0.2])
        target = ilr(base, build_basis(3)).coords
        jitter = 1e-3 * rng.normal(size=(40, 2))
        comp = ilr_inverse_sample(target + jitter, build_basis(3)).data
        frame = pd.DataFrame(comp, columns=["y1", "y2", "y3"])
        data = Dataset(frame, ["y1", "y2", "y3"])
        result = fit_fn(
            data,
            ModelSpec(dimension=3, terms=(Intercept(),)),
            SamplerConfig(chains=1, warmup_iterations=150,
                          sampling_iterations=150, seed=8),
        )
        summary = result.summary().set_index("parameter")
        for d in (1, 2):
            mean = summary.loc[f"b[{d}].Intercept", "mean"]
            assert abs(mean - target[d - 1]) < 5e-3

    def test_unconstrain_round_trip(self, sim_dir):
        from codagam.runconfig import load_config as lc

        data = load_dataset(sim_dir / "linear_data.csv", ["y1", "y2", "y3", "y4"])
        terms = parse_terms("x1 + x2 + x3")
        from codagam.model import ModelSpec

        bundle = build_design(data, ModelSpec(dimension=4, terms=terms))
        rng = np.random.default_rng(3)
        params = 0.4 * rng.normal(size=(5, bundle.layout.dim))
        constrained = np.vstack([bundle.constrain(p) for p in params])
        back = _unconstrain(bundle, constrained)
        np.testing.assert_allclose(back, params, atol=1e-9)


class TestPredictCommand:
    def test_predict_roundtrip(self, fit_dir, sim_dir, tmp_path):
        grid = pd.read_csv(sim_dir / "linear_data.csv").head(10)[["x1", "x2", "x3"]]
        grid_path = tmp_path / "grid.csv"
        grid.to_csv(grid_path, index=False)
        out_path = tmp_path / "pred.csv"
        assert main(["predict", "--fit", str(fit_dir), "--grid", str(grid_path),
                     "--out", str(out_path), "--seed", "5"]) == 0
        pred = pd.read_csv(out_path)
        assert len(pred) == 10
        part_means = pred[[f"y{i}_mean" for i in range(1, 5)]].to_numpy()
        assert np.all(part_means > 0)
        np.testing.assert_allclose(part_means.sum(axis=1), 1.0, atol=1e-8)
        assert not pred["extrapolated"].any()

    def test_extrapolation_flagged(self, fit_dir, tmp_path):
        grid = pd.DataFrame({"x1": [0.5, 9.0], "x2": [0.5, 0.5], "x3": [0.5, 0.5]})
        grid_path = tmp_path / "grid.csv"
        grid.to_csv(grid_path, index=False)
        out_path = tmp_path / "pred.csv"
        assert main(["predict", "--fit", str(fit_dir), "--grid", str(grid_path),
                     "--out", str(out_path)]) == 0
        pred = pd.read_csv(out_path)
        # linear model: no smooth terms, so nothing can extrapolate a basis
        assert len(pred) == 2

    def test_missing_covariate_exit(self, fit_dir, tmp_path):
        grid_path = tmp_path / "grid.csv"
        pd.DataFrame({"x1": [0.5]}).to_csv(grid_path, index=False)
        code = main(["predict", "--fit", str(fit_dir), "--grid", str(grid_path),
                     "--out", str(tmp_path / "pred.csv")])
        assert code == 2


class TestDeterminism:
    def test_fit_draws_byte_identical(self, sim_dir, tmp_path):
        outputs = []
        for run in ("r1", "r2"):
            config = tmp_path / f"{run}.ini"
            config.write_text(
                f"""
[data]
dataset = {sim_dir / 'linear_data.csv'}
composition = y1, y2, y3, y4

[model]
terms = x1

[sampler]
chains = 1
warmup = 120
samples = 60
seed = 77

[output]
directory = {tmp_path / run}
"""
            )
            assert main(["fit", "--config", str(config)]) == 0
            outputs.append((tmp_path / run / "draws.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_predict_preserves_grid_order(self, fit_dir, tmp_path):
        grid = pd.DataFrame(
            {"x1": [0.9, 0.1, 0.5], "x2": [0.2, 0.8, 0.5], "x3": [0.3, 0.3, 0.9]}
        )
        grid_path = tmp_path / "grid.csv"
        grid.to_csv(grid_path, index=False)
        out_path = tmp_path / "pred.csv"
        assert main(["predict", "--fit", str(fit_dir), "--grid", str(grid_path),
                     "--out", str(out_path)]) == 0
        pred = pd.read_csv(out_path)
        np.testing.assert_allclose(pred["x1"], grid["x1"])
        np.testing.assert_allclose(pred["x2"], grid["x2"])


class TestCompareCommand:
    def test_self_comparison(self, fit_dir, tmp_path, capsys):
        out = tmp_path / "report.json"
        assert main(["compare", "--fit-a", str(fit_dir), "--fit-b", str(fit_dir),
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["waic_difference_a_minus_b"] == 0.0
        # ties count toward >=, so a model compared with itself gives 1
        assert report["br_comparison"]["probability"] == 1.0

    def test_not_a_fit_dir(self, tmp_path):
        assert main(["compare", "--fit-a", str(tmp_path), "--fit-b", str(tmp_path)]) == 2


class TestClassifyCommand:
    def test_single_triple(self, capsys):
        assert main(["classify", "--sand", "90", "--silt", "5", "--clay", "5"]) == 0
        assert capsys.readouterr().out.strip() == "sand"

    def test_csv_input(self, tmp_path):
        path = tmp_path / "soils.csv"
        pd.DataFrame(
            {"sand": [0.9, 0.2], "silt": [0.05, 0.2], "clay": [0.05, 0.6]}
        ).to_csv(path, index=False)
        out = tmp_path / "labeled.csv"
        assert main(["classify", "--input", str(path), "--out", str(out)]) == 0
        labeled = pd.read_csv(out)
        assert list(labeled["usda_class"]) == ["sand", "clay"]

    def test_invalid_triple_exit(self):
        assert main(["classify", "--sand", "90", "--silt", "30", "--clay", "5"]) == 2
