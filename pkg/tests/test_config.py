import copy

import numpy as np
import pytest
import yaml

from spdereg.config import build, build_directions, config_hash, load_config, parse_config
from spdereg.errors import ConfigError
from spdereg.runner import bundled_config, list_examples

BASE = yaml.safe_load(bundled_config("linear_gaussian").read_text())


def variant(**changes):
    raw = copy.deepcopy(BASE)
    raw.update(changes)
    return raw


def field_of(raw):
    with pytest.raises(ConfigError) as info:
        build(parse_config(raw))
    return info.value.field


def test_bundled_configs_load_and_build():
    for e in list_examples():
        cfg = load_config(e["config"])
        b = build(cfg)
        assert b.x0.shape == (b.spectrum.dim,)
        assert cfg.name == e["name"]


@pytest.mark.parametrize("change, field", [
    ({"horizon": -1}, "horizon"),
    ({"steps": 0}, "steps"),
    ({"seed": "abc"}, "seed"),
    ({"colour": "red"}, "colour"),
    ({"spectrum": {"frame": "nowhere", "modes": 4, "alpha": 0.5}}, "spectrum.frame"),
    ({"spectrum": {"eigenvalues": [1.0], "alpha": 0.7}}, "spectrum.alpha"),
    ({"drift": {"kind": "magic"}}, "drift.kind"),
    ({"observable": {"kind": "sin_coord", "coord": 3}}, "observable.coord"),
    ({"x0": [1.0, 2.0]}, "x0.values"),
])
def test_errors_name_the_field(change, field):
    assert field_of(variant(**change)).startswith(field)


def test_probe_time_checks():
    raw = variant()
    raw["probes"]["lipschitz"]["times"] = [0.1, 0.33]
    assert field_of(raw) == "probes.lipschitz.times[1]"
    raw = variant()
    raw["probes"]["semigroup"]["times"] = [2.0]
    assert field_of(raw) == "probes.semigroup.times[0]"


def test_drift_needs_frame_and_alpha():
    raw = variant(drift={"kind": "composition_right", "exponent": 2.0})
    assert field_of(raw) == "drift.kind"
    raw = variant(drift={"kind": "cahn_hilliard", "amplitude": 1.0})
    assert field_of(raw) == "spectrum.alpha"


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("name: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_hash_ignores_output_only():
    a = parse_config(variant())
    assert config_hash(a) == config_hash(a.with_overrides(output="/tmp/elsewhere"))
    assert config_hash(a) != config_hash(a.with_overrides(seed=1))


def test_power_spectrum_and_random_directions():
    raw = variant(spectrum={"power": {"c": 1.0, "p": 2.0}, "modes": 6, "alpha": 0.25}, x0={"kind": "zeros"})
    b = build(parse_config(raw))
    assert b.spectrum.dim == 6 and b.spectrum.alpha == 0.25
    spec = {"kind": "random", "count": 3, "norm": 0.5, "decay": 1.0}
    d1 = build_directions(spec, b.spectrum, 7, "d")
    d2 = build_directions(spec, b.spectrum, 7, "d")
    np.testing.assert_array_equal(d1, d2)
    w = b.spectrum.power(-2 * b.spectrum.alpha)
    np.testing.assert_allclose(np.sqrt(np.sum(w * d1 ** 2, axis=1)), 0.5)
