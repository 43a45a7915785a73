import json

import pytest

from spisim.cli import RunConfig, main
from spisim.imgcore import Image, save_image


def run(*argv):
    return main(list(argv))


@pytest.fixture
def pgm16(tmp_path, rng):
    path = tmp_path / "img.pgm"
    save_image(Image(rng.random((16, 16))), path, depth=16)
    return str(path)


class TestGen:
    def test_prints_counts_and_display_time(self, tmp_path, capsys):
        out = tmp_path / "p.spip"
        assert run("gen", "--kind", "morlet-binary", "--size", "256x256",
                   "--cr", "0.06", "--seed", "7", "--k", "3932",
                   "--out", str(out)) == 0
        text = capsys.readouterr().out
        assert "k=3932" in text and "n=65536" in text
        assert "0.17872" in text  # 3932 / 22000 s
        assert out.exists()

    def test_double_run_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.spip", tmp_path / "b.spip"
        args = ["gen", "--kind", "morlet-real", "--size", "16x16", "--cr", "0.1",
                "--seed", "3"]
        assert run(*args, "--out", str(a)) == 0
        assert run(*args, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_wh_alias_and_pow2_check(self, tmp_path, capsys):
        assert run("gen", "--kind", "wh", "--size", "100x100", "--cr", "0.1",
                   "--out", str(tmp_path / "x.spip")) == 2
        assert "power of 2" in capsys.readouterr().err

    def test_cr_to_k_rounding(self, tmp_path, capsys):
        assert run("gen", "--kind", "morlet-binary", "--size", "256x256",
                   "--cr", "0.06", "--out", str(tmp_path / "p.spip")) == 0
        assert "k=3932" in capsys.readouterr().out


class TestMeasureReconstruct:
    def test_pipeline_identity_at_cr1(self, tmp_path, pgm16, capsys):
        ps = tmp_path / "p.spip"
        m = tmp_path / "m.spim"
        out = tmp_path / "rec.pgm"
        assert run("gen", "--kind", "walsh-hadamard", "--size", "16x16",
                   "--k", "256", "--out", str(ps)) == 0
        assert run("measure", "--image", pgm16, "--patterns", str(ps),
                   "--out", str(m), "--csv", str(tmp_path / "m.csv")) == 0
        assert run("reconstruct", "--patterns", str(ps), "--measurement", str(m),
                   "--method", "pinv", "--out", str(out), "--depth", "16",
                   "--reference", pgm16) == 0
        text = capsys.readouterr().out
        psnr_line = [l for l in text.splitlines() if l.startswith("psnr_db=")][0]
        value = psnr_line.split("=")[1]
        assert value == "inf" or float(value) > 100.0
        assert (tmp_path / "m.csv").exists()

    def test_hash_mismatch_fails(self, tmp_path, pgm16, capsys):
        ps1, ps2 = tmp_path / "p1.spip", tmp_path / "p2.spip"
        m = tmp_path / "m.spim"
        run("gen", "--kind", "morlet-binary", "--size", "16x16", "--k", "10",
            "--seed", "1", "--out", str(ps1))
        run("gen", "--kind", "morlet-binary", "--size", "16x16", "--k", "10",
            "--seed", "2", "--out", str(ps2))
        run("measure", "--image", pgm16, "--patterns", str(ps1), "--out", str(m))
        code = run("reconstruct", "--patterns", str(ps2), "--measurement", str(m),
                   "--out", str(tmp_path / "r.pgm"))
        assert code == 2
        assert "hash mismatch" in capsys.readouterr().err

    def test_tv_method_and_pinv_cache(self, tmp_path, pgm16):
        ps = tmp_path / "p.spip"
        m = tmp_path / "m.spim"
        run("gen", "--kind", "morlet-binary", "--size", "16x16", "--k", "64",
            "--out", str(ps))
        run("measure", "--image", pgm16, "--patterns", str(ps), "--out", str(m))
        assert run("reconstruct", "--patterns", str(ps), "--measurement", str(m),
                   "--method", "tv", "--tv-max-inner", "100",
                   "--out", str(tmp_path / "tv.pgm")) == 0
        cache = tmp_path / "cache"
        assert run("reconstruct", "--patterns", str(ps), "--measurement", str(m),
                   "--method", "pinv", "--cache-dir", str(cache),
                   "--out", str(tmp_path / "pi.pgm")) == 0
        assert len(list(cache.glob("*.spiv"))) == 1

    def test_inputs_not_mutated(self, tmp_path, pgm16):
        ps = tmp_path / "p.spip"
        m = tmp_path / "m.spim"
        run("gen", "--kind", "morlet-binary", "--size", "16x16", "--k", "12",
            "--out", str(ps))
        before = ps.read_bytes() + open(pgm16, "rb").read()
        run("measure", "--image", pgm16, "--patterns", str(ps), "--out", str(m))
        after = ps.read_bytes() + open(pgm16, "rb").read()
        assert before == after


class TestSweepAndFeatures:
    def test_sweep_with_config(self, tmp_path, rng, capsys):
        paths = []
        for i in range(2):
            p = tmp_path / f"c{i}.pgm"
            save_image(Image(rng.random((16, 16))), p, depth=8)
            paths.append(str(p))
        cfg = {
            "kinds": ["walsh-hadamard"], "crs": [1.0], "methods": ["pinv"],
            "size": 16, "seed": 1, "corpus_paths": paths,
            "use_standard_corpus": False, "output_dir": str(tmp_path / "out"),
        }
        cfg_path = tmp_path / "sweep.json"
        cfg_path.write_text(json.dumps(cfg))
        assert run("sweep", "--config", str(cfg_path)) == 0
        cells = (tmp_path / "out" / "sweep_cells.csv").read_text().splitlines()
        assert len(cells) == 1 + 2
        assert (tmp_path / "out" / "sweep_summary.csv").exists()

    def test_sweep_grid_covers_kinds_methods_crs(self, tmp_path, rng, capsys):
        paths = []
        for i in range(2):
            p = tmp_path / f"c{i}.pgm"
            save_image(Image(rng.random((16, 16))), p, depth=8)
            paths.append(str(p))
        cfg = {
            "kinds": ["morlet-real", "morlet-binary"], "crs": [0.2, 0.4],
            "methods": ["pinv", "tv"], "size": 16, "seed": 2,
            "corpus_paths": paths, "use_standard_corpus": False,
            "output_dir": str(tmp_path / "out"), "tv_max_inner": 60,
        }
        cfg_path = tmp_path / "grid.json"
        cfg_path.write_text(json.dumps(cfg))
        assert run("sweep", "--config", str(cfg_path)) == 0
        lines = (tmp_path / "out" / "sweep_cells.csv").read_text().strip().splitlines()
        combos = {tuple(l.split(",")[:3]) for l in lines[1:]}
        assert combos == {(k, repr(c), m)
                          for k in ("morlet-real", "morlet-binary")
                          for c in (0.2, 0.4) for m in ("pinv", "tv")}

    def test_config_rejects_unknown_keys(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"unknown_option": 1}))
        with pytest.raises(ValueError, match="unknown config keys"):
            RunConfig.from_json(bad)

    def test_analyze_features_cli(self, tmp_path, rng):
        paths = []
        for i in range(2):
            p = tmp_path / f"c{i}.pgm"
            save_image(Image(rng.random((32, 32))), p, depth=8)
            paths.append(str(p))
        out = tmp_path / "hist.csv"
        assert run("analyze-features", "--corpus", *paths, "--size", "32",
                   "--dict-size", "48", "--out", str(out)) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("sigma_lo")
