"""Experiment configuration: one TOML file, versioned schema, unknown keys rejected.

Layout (every table optional, defaults shown by ``default_config()``)::

    schema_version = 1
    seed = 0
    threads = 1
    out = "out"

    [model]
    name = "linear-gaussian"
    [model.params]        # keyword arguments of the gallery factory
    a = -1.0

    [grid]       T, steps
    [particles]  N
    [observation] epsilon, measure, stream
    [filter]     test_functions, resample, ess_threshold
    [control]    preset | values | pieces
    [optimizer]  n_pieces, lambdas, max_iter, fd_step, tol, target
    [laplace]    eps_list, mc_samples, functional, cap, constant, controls, nested, test_functions
    [sweep]      axis, values, diagnostic, test_function, seeds
"""
import copy
import inspect
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .lions import REGISTRY_NAMES
from .model import GALLERY

SCHEMA_VERSION = 1

NUMBER = (int, float)

# section -> key -> (accepted types, default)
SCHEMA = {
    "": {"schema_version": (int, SCHEMA_VERSION), "seed": (int, 0), "threads": (int, 1),
         "out": (str, "out")},
    "model": {"name": (str, "linear-gaussian"), "params": (dict, {})},
    "grid": {"T": (NUMBER, 1.0), "steps": (int, 1000)},
    "particles": {"N": (int, 1000)},
    "observation": {"epsilon": (NUMBER, 1.0), "measure": (str, "physical"), "stream": (int, 0)},
    "filter": {"test_functions": (list, list(REGISTRY_NAMES)), "resample": (bool, False),
               "ess_threshold": (NUMBER, 0.5)},
    "control": {"preset": (str, "one"), "values": (list, None), "pieces": (list, None)},
    "optimizer": {"n_pieces": (int, 10), "lambdas": (list, [1e1, 1e2, 1e3, 1e4, 1e5, 1e6]),
                  "max_iter": (int, 60), "fd_step": (NUMBER, 1e-4), "tol": (NUMBER, 1e-3),
                  "target": (str, "control"), "test_functions": (list, ["x"])},
    "laplace": {"eps_list": (list, [0.5, 0.25, 0.125, 0.0625]), "mc_samples": (int, 10000),
                "functional": (str, "squared-deviation"), "cap": (NUMBER, 10.0),
                "constant": (NUMBER, 0.0), "controls": (list, [-1.0, -0.5, -0.25, 0.0, 0.25,
                                                               0.5, 1.0]),
                "nested": (bool, True), "test_functions": (list, ["x"])},
    "sweep": {"axis": (str, "dt"), "values": (list, [4e-3, 2e-3, 1e-3]),
              "diagnostic": (str, "skeleton_zakai_residual"), "test_function": (str, "x"),
              "seeds": (int, 1)},
}

CHOICES = {
    ("observation", "measure"): ("physical", "reference"),
    ("optimizer", "target"): ("control", "prior"),
    ("laplace", "functional"): ("zero", "constant", "squared-deviation"),
    ("control", "preset"): ("zero", "one", "sine", "ramp"),
    ("sweep", "axis"): ("dt", "N", "eps"),
    ("sweep", "diagnostic"): ("zakai_residual", "ks_residual", "skeleton_zakai_residual",
                              "skeleton_ks_residual", "oracle_rmse", "laplace"),
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def default_config():
    out = {}
    for section, keys in SCHEMA.items():
        target = out if section == "" else out.setdefault(section, {})
        for key, (_, default) in keys.items():
            target[key] = copy.deepcopy(default)
    return out


def _type_ok(value, types):
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def _type_name(types):
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def _validate_model_params(name, params):
    try:
        factory = GALLERY[name]
    except KeyError:
        raise ConfigError("model.name", f"unknown model {name!r}; choose from {sorted(GALLERY)}") \
            from None
    allowed = inspect.signature(factory).parameters
    for key, val in params.items():
        if key not in allowed:
            raise ConfigError(f"model.params.{key}",
                              f"unknown parameter for {name!r}; allowed {sorted(allowed)}")
        if not _type_ok(val, NUMBER):
            raise ConfigError(f"model.params.{key}", "expected a number")


def validate(raw):
    """Merge ``raw`` over the defaults after checking every key; returns a new dict."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a table")
    cfg = default_config()
    for key, value in raw.items():
        if isinstance(value, dict) and key in SCHEMA and key != "":
            section = SCHEMA[key]
            for sub, val in value.items():
                path = f"{key}.{sub}"
                if sub not in section:
                    raise ConfigError(path, f"unknown key; allowed {sorted(section)}")
                types = section[sub][0]
                if val is not None and not _type_ok(val, types):
                    raise ConfigError(path, f"expected {_type_name(types)}, "
                                            f"got {type(val).__name__}")
                cfg[key][sub] = copy.deepcopy(val)
        elif key in SCHEMA[""]:
            types = SCHEMA[""][key][0]
            if not _type_ok(value, types):
                raise ConfigError(key, f"expected {_type_name(types)}, got {type(value).__name__}")
            cfg[key] = value
        else:
            raise ConfigError(key, "unknown key")
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {cfg['schema_version']}; expected {SCHEMA_VERSION}")
    for (section, key), choices in CHOICES.items():
        if cfg[section][key] not in choices:
            raise ConfigError(f"{section}.{key}", f"{cfg[section][key]!r} not in {list(choices)}")
    _validate_model_params(cfg["model"]["name"], cfg["model"]["params"])
    checks = [
        ("grid.T", cfg["grid"]["T"] > 0, "must be positive"),
        ("grid.steps", cfg["grid"]["steps"] >= 1, "must be at least 1"),
        ("particles.N", cfg["particles"]["N"] >= 2, "must be at least 2"),
        ("observation.epsilon", 0 < cfg["observation"]["epsilon"] <= 1, "must lie in (0, 1]"),
        ("seed", 0 <= cfg["seed"] < 2 ** 64, "must lie in [0, 2**64)"),
        ("threads", cfg["threads"] >= 1, "must be at least 1"),
        ("optimizer.tol", cfg["optimizer"]["tol"] > 0, "must be positive"),
        ("laplace.mc_samples", cfg["laplace"]["mc_samples"] >= 2, "must be at least 2"),
    ]
    for path, ok, msg in checks:
        if not ok:
            raise ConfigError(path, msg)
    for section in ("filter", "optimizer", "laplace"):
        for nm in cfg[section]["test_functions"]:
            if nm not in REGISTRY_NAMES:
                raise ConfigError(f"{section}.test_functions",
                                  f"unknown test function {nm!r}; registry has {list(REGISTRY_NAMES)}")
    for path, vals in (("optimizer.lambdas", cfg["optimizer"]["lambdas"]),
                       ("laplace.eps_list", cfg["laplace"]["eps_list"]),
                       ("laplace.controls", cfg["laplace"]["controls"]),
                       ("sweep.values", cfg["sweep"]["values"])):
        for i, v in enumerate(vals):
            if not _type_ok(v, NUMBER):
                raise ConfigError(f"{path}[{i}]", "expected a number")
    for key in ("values", "pieces"):
        vals = cfg["control"][key]
        if vals is None:
            continue
        for i, v in enumerate(vals):
            if not (_type_ok(v, NUMBER) or (isinstance(v, list)
                                            and all(_type_ok(x, NUMBER) for x in v))):
                raise ConfigError(f"control.{key}[{i}]", "expected a number or list of numbers")
    return cfg


def load(path):
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("", f"{path}: invalid TOML ({exc})") from None
    return validate(raw)
