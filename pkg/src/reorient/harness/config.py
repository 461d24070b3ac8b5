"""Experiment configuration: flat key=value files with sections.

The file format is the stdlib INI dialect: `[section]` headers and
`key = value` lines, `#` comments. Values are coerced from the default
value types of the target dataclasses, so every key is documented by
the dataclass it lands in. The config hash is a sha256 over the sorted
canonical `section.key=value` lines, so formatting and comments do not
change it but any semantic change does.
"""

import configparser
import hashlib
import os
from dataclasses import fields

from ..sim import EnvConfig, make_shape
from ..student import DaggerConfig
from ..teacher import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file or key."""


# EnvConfig keys settable from a file (the rest are derived or objects)
ENV_KEYS = ("dt", "inner_per_policy", "n_substeps", "scheme", "kp", "kd",
            "torque_limit", "joint_inertia", "joint_damping", "kn", "cn",
            "kt", "gravity", "action_bound", "horizon", "reset_noise",
            "reset_penetration_tol", "grasp_penetration")


def load_config(path):
    """Parse a config file into {section: {key: raw string}}."""
    if not os.path.exists(path):
        raise ConfigError("config file not found: %s" % path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("cannot parse %s: %s" % (path, exc))
    return {sec: dict(parser[sec]) for sec in parser.sections()}


def config_hash(cfg):
    """sha256 over the canonical sorted key=value lines."""
    lines = sorted("%s.%s=%s" % (sec, k, v)
                   for sec, kv in cfg.items() for k, v in kv.items())
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _coerce(key, raw, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else float
            return tuple(elem(p) for p in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError("bad value %r for key %s" % (raw, key))


def _build(cls, section, allowed=None):
    kwargs = {}
    defaults = {f.name: f.default for f in fields(cls)}
    for key, raw in section.items():
        if key not in defaults or (allowed and key not in allowed):
            raise ConfigError("unknown key %r for %s" % (key, cls.__name__))
        kwargs[key] = _coerce(key, raw, defaults[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid %s: %s" % (cls.__name__, exc))


def _parse_shapes(raw):
    """Semicolon-separated a,b,exponent,mass quadruples in SI units."""
    shapes = []
    for part in raw.split(";"):
        vals = [float(p) for p in part.replace(",", " ").split()]
        if len(vals) != 4:
            raise ConfigError("each shape needs a,b,exponent,mass")
        a, b, p, mass = vals
        shapes.append(make_shape(a, b, mass, exponent=p))
    if not shapes:
        raise ConfigError("empty shape list")
    return shapes


def build_env_config(cfg):
    section = dict(cfg.get("env", {}))
    shapes_raw = section.pop("shapes", None)
    env = _build(EnvConfig, section, allowed=ENV_KEYS)
    if shapes_raw is not None:
        try:
            env.shapes = _parse_shapes(shapes_raw)
        except ValueError as exc:
            raise ConfigError(str(exc))
    return env.finalize()


def build_train_config(cfg, seed=None):
    tc = _build(TrainConfig, cfg.get("teacher", {}))
    if seed is not None:
        tc.seed = seed
    return tc


def build_dagger_config(cfg, seed=None):
    section = dict(cfg.get("student", {}))
    section.pop("teacher_ckpt", None)      # path, handled by the CLI
    dc = _build(DaggerConfig, section)
    if seed is not None:
        dc.seed = seed
    return dc
