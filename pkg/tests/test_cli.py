"""End-to-end checks of the command-line pipelines.

Each test drives ``mflab.cli.main`` with a throwaway output directory and a
small configuration, checking emitted files, run invariants (constant energy
for a vanishing potential, unit norm, gauge-route consistency), byte-level
determinism, and the exit-code contract.
"""

import csv
import json

import numpy as np
import pytest

from mflab.cli import main, observable_dictionary
from mflab.errors import ConfigError
from mflab.grid import Grid


def run_cli(command, out_dir, *overrides, seed=None, config=None):
    argv = [command, "--out", str(out_dir)]
    for item in overrides:
        argv += ["--override", item]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if config is not None:
        argv += ["--config", str(config)]
    return main(argv)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


SMALL = ("time.t_final=0.2", "time.dt=0.002")


def test_hartree_minimal_emits_expected_files(tmp_path):
    assert run_cli("hartree", tmp_path) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "hartree_N2_continuity.csv",
        "hartree_N2_diagnostics.csv",
        "hartree_N2_orbitals.npy",
        "run_config.json",
    ]
    rows = read_csv(tmp_path / "hartree_N2_diagnostics.csv")
    assert list(rows[0]) == ["t", "energy", "orthonormality_defect", "d_value"]
    assert float(rows[0]["t"]) == 0.0
    assert float(rows[-1]["t"]) == pytest.approx(1.0, abs=1e-12)
    assert all(float(r["orthonormality_defect"]) < 1e-10 for r in rows)

    stack = np.load(tmp_path / "hartree_N2_orbitals.npy")
    assert stack.shape == (len(rows), 2, 16)

    sidecar = json.loads((tmp_path / "run_config.json").read_text())
    assert sidecar["command"] == "hartree"
    assert sidecar["resolved_epsilon"]["2"] == pytest.approx(2.0 ** (-2.0 / 3.0))
    assert sidecar["observable_dictionary"] == [f"box{j}" for j in range(8)] + ["bump"]
    assert sidecar["config"]["grid"]["sites"] == "16"


def test_hartree_free_potential_has_constant_energy(tmp_path):
    code = run_cli(
        "hartree", tmp_path, "potential.kind=cosine_sum",
        "potential.amplitudes=", "potential.offset=0.0", *SMALL,
    )
    assert code == 0
    energies = [float(r["energy"]) for r in read_csv(tmp_path / "hartree_N2_diagnostics.csv")]
    assert max(energies) - min(energies) < 1e-12
    residuals = [float(r["residual"]) for r in read_csv(tmp_path / "hartree_N2_continuity.csv")]
    assert max(residuals) < 1e-12


def test_same_seed_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("exact", out, *SMALL, seed=7) == 0
    for path_a in sorted(a.iterdir()):
        path_b = b / path_a.name
        if path_a.name == "run_config.json":
            side_a = json.loads(path_a.read_text())
            side_b = json.loads(path_b.read_text())
            assert side_a["config"]["run"].pop("out") != side_b["config"]["run"].pop("out")
            assert side_a == side_b
        else:
            assert path_a.read_bytes() == path_b.read_bytes()


def test_exact_norm_column_and_dense_oracle(tmp_path):
    assert run_cli("exact", tmp_path, *SMALL) == 0
    spectra = read_csv(tmp_path / "exact_N2_spectra.csv")
    assert all(abs(float(r["norm"]) - 1.0) < 1e-10 for r in spectra)
    eigs0 = [float(spectra[0][f"eig{i}"]) for i in range(16)]
    assert eigs0[0] == pytest.approx(0.5, abs=1e-12)
    assert eigs0[2] == pytest.approx(0.0, abs=1e-12)

    traces = read_csv(tmp_path / "exact_N2_observables.csv")
    box_cols = [f"trace_box{j}" for j in range(8)]
    for row in traces:
        assert sum(float(row[c]) for c in box_cols) == pytest.approx(1.0, abs=1e-10)

    oracle = json.loads((tmp_path / "exact_N2_oracle.json").read_text())
    assert oracle["basis_dim"] == 120
    assert oracle["krylov_vs_dense"] < 1e-10


def test_exact_basis_over_budget_is_config_error(tmp_path):
    assert run_cli("exact", tmp_path, "scaling.n=6") == 2


def test_compare_t0_and_gauge_route(tmp_path):
    assert run_cli("compare", tmp_path, "scaling.n=2,3", *SMALL) == 0
    for N in (2, 3):
        rows = read_csv(tmp_path / f"compare_N{N}.csv")
        assert float(rows[0]["comparison_max"]) < 1e-12
        assert float(rows[0]["alpha_n"]) < 1e-12
        assert all(float(r["gauge_defect_max"]) < 1e-12 for r in rows)
        assert all(0.0 <= float(r["alpha_n"]) < 0.5 for r in rows)
    summary = json.loads((tmp_path / "compare_summary.json").read_text())
    assert summary["N2"]["final_comparison_max"] > summary["N2"]["initial_comparison_max"]
    assert "final_comparison_shrinks_from_N2_to_N4" not in summary


def test_aux_small_run_layout(tmp_path):
    code = run_cli(
        "aux", tmp_path, "grid.sites=8", "family.width=1.2",
        "time.t_final=0.1", "time.dt=0.005",
    )
    assert code == 0
    rows = read_csv(tmp_path / "aux_N2.csv")
    assert list(rows[0]) == [
        "t", "alpha_n", "alpha_m_g0p167", "alpha_m_g0p5", "alpha_m_g1",
        "beta", "Eg", "bad_kinetic", "norm_diff_aux_gauged",
    ]
    assert float(rows[0]["alpha_n"]) < 1e-12
    assert abs(float(rows[0]["beta"])) < 1e-10
    assert float(rows[0]["norm_diff_aux_gauged"]) < 1e-12
    assert float(rows[-1]["t"]) == pytest.approx(0.1)


def test_lemmas_writes_clean_report(tmp_path):
    assert run_cli("lemmas", tmp_path, "lemmas.trials=5", seed=11) == 0
    report = json.loads((tmp_path / "lemma_report.json").read_text())
    assert report["seed"] == 11
    assert report["trials"] == 5
    for record in report["asserted"].values():
        assert record["violations"] == []
    assert "q_conversion" in report["asserted"]
    assert "shifted_complement" in report["asserted"]


def test_config_file_layering(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text("[grid]\nsites = 8\n[time]\nt_final = 0.1\ndt = 0.005\n")
    out = tmp_path / "out"
    assert run_cli("hartree", out, config=config) == 0
    sidecar = json.loads((out / "run_config.json").read_text())
    assert sidecar["config"]["grid"]["sites"] == "8"
    assert np.load(out / "hartree_N2_orbitals.npy").shape[-1] == 8

    bad = tmp_path / "bad.ini"
    bad.write_text("[nosuch]\nkey = 1\n")
    assert run_cli("hartree", out, config=bad) == 2
    assert run_cli("hartree", out, config=tmp_path / "missing.ini") == 2


def test_config_error_exit_codes(tmp_path):
    assert run_cli("hartree", tmp_path, "potential.width=abc") == 2
    assert run_cli("hartree", tmp_path, "nosuch.key=1") == 2
    assert run_cli("hartree", tmp_path, "badshape") == 2
    assert run_cli("hartree", tmp_path, seed=-1) == 2
    assert run_cli("aux", tmp_path, "scaling.n=3") == 2  # 16 sites over aux budget
    assert run_cli("hartree", tmp_path, "time.t_final=0.15", "time.dt=0.004") == 2


def test_observable_dictionary_properties():
    grid = Grid(dim=1, sites_per_dim=16, box_length=8.0, kinetic_mode="lattice")
    dictionary = observable_dictionary(grid, boxes=8, include_bump=True)
    assert [name for name, _ in dictionary] == [f"box{j}" for j in range(8)] + ["bump"]

    total = sum(M.values.real for name, M in dictionary if name.startswith("box"))
    np.testing.assert_allclose(total, 1.0)  # indicators partition the box
    for name, M in dictionary:
        assert np.all(M.values.real >= 0.0)
        assert np.all(M.values.imag == 0.0)
        assert np.max(M.values.real) == pytest.approx(1.0)

    bump = dict(dictionary)["bump"].values.real
    assert np.count_nonzero(bump) == 7  # open half-box support on 16 sites
    x = grid.axis_coordinates()
    inside = np.abs(x - 4.0) <= 2.0
    np.testing.assert_allclose(
        bump[inside], np.cos(np.pi * (x[inside] - 4.0) / 4.0) ** 2, atol=1e-15
    )

    two_d = Grid(dim=2, sites_per_dim=4, box_length=8.0, kinetic_mode="lattice")
    for name, M in observable_dictionary(two_d, boxes=4):
        assert M.values.shape == (4, 4)
        assert np.all(M.values == M.values[:, :1])  # constant along the other axis

    with pytest.raises(ConfigError):
        observable_dictionary(grid, boxes=17)
