"""Suite definitions: parsing, validation, selection, rendering.

A suite is fully described by one YAML document with top-level keys
``suite``, ``defaults``, ``targets`` and ``benchmarks``. Unknown keys are
rejected rather than ignored: silent typos corrupt procurement runs.
"""

from __future__ import annotations

import fnmatch
import hashlib
from dataclasses import dataclass, field, replace
from typing import Any

import yaml

SCALE_MODES = ("single-device", "node-devices", "multi-node")

DEFAULT_OBS_MIN = 30
DEFAULT_OBS_MAX = 60
DEFAULT_TIMEOUT_S = 300.0

# Tag dimensions mirrored by coverage targets. "model_sizes" is the one
# mutually exclusive dimension: every benchmark has exactly one size class.
TAG_DIMENSIONS = ("domains", "architectures", "model_sizes", "parallelism", "libraries")

# Placeholders command templates may use; anything else is a config error.
COMMAND_PLACEHOLDERS = (
    "device_id",
    "device_count",
    "rank",
    "world_size",
    "base_dir",
    "bench_dir",
)


class SuiteError(ValueError):
    """Raised for malformed or inconsistent suite documents."""


@dataclass(frozen=True)
class TaxonomyTags:
    """Design-dimension labels for one benchmark.

    All dimensions may carry several labels except ``model_size_class``,
    which is exactly one.
    """

    domains: frozenset[str] = frozenset()
    architectures: frozenset[str] = frozenset()
    model_size_class: str = ""
    parallelism: frozenset[str] = frozenset()
    libraries: frozenset[str] = frozenset()

    def labels(self, dimension: str) -> frozenset[str]:
        if dimension == "model_sizes":
            return frozenset({self.model_size_class}) if self.model_size_class else frozenset()
        return getattr(self, dimension)


@dataclass(frozen=True)
class BenchmarkDefaults:
    obs_min: int = DEFAULT_OBS_MIN
    obs_max: int = DEFAULT_OBS_MAX
    timeout_s: float = DEFAULT_TIMEOUT_S


@dataclass(frozen=True)
class CoverageTargets:
    """Target proportion per column, per design dimension."""

    dimensions: dict[str, dict[str, float]] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoverageTargets):
            return NotImplemented
        return self.dimensions == other.dimensions

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.dimensions)))


@dataclass(frozen=True)
class BenchmarkSpec:
    """One suite entry."""

    name: str
    weight: float = 1.0
    enabled: bool = True
    scale: str = "single-device"
    install_cmd: str = ""
    prepare_cmd: str = ""
    run_cmd: str = ""
    env: dict[str, str] = field(default_factory=dict)
    unit_of_work: str = "items"
    obs_min: int = DEFAULT_OBS_MIN
    obs_max: int = DEFAULT_OBS_MAX
    timeout_s: float = DEFAULT_TIMEOUT_S
    tags: TaxonomyTags | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BenchmarkSpec):
            return NotImplemented
        return all(
            getattr(self, f) == getattr(other, f)
            for f in (
                "name",
                "weight",
                "enabled",
                "scale",
                "install_cmd",
                "prepare_cmd",
                "run_cmd",
                "env",
                "unit_of_work",
                "obs_min",
                "obs_max",
                "timeout_s",
                "tags",
            )
        )

    def __hash__(self) -> int:
        return hash((self.name, self.weight, self.scale))


@dataclass(frozen=True)
class SuiteConfig:
    """A parsed suite. Immutable after construction; safe to share."""

    suite_name: str
    benchmarks: tuple[BenchmarkSpec, ...]
    defaults: BenchmarkDefaults = BenchmarkDefaults()
    targets: CoverageTargets | None = None

    def enabled_benchmarks(self) -> list[BenchmarkSpec]:
        return [b for b in self.benchmarks if b.enabled]

    def benchmark(self, name: str) -> BenchmarkSpec:
        for bench in self.benchmarks:
            if bench.name == name:
                return bench
        raise SuiteError(f"no benchmark named {name!r}")

    def sha256(self) -> str:
        return hashlib.sha256(render_suite(self).encode("utf-8")).hexdigest()


def parse_suite(text: str) -> SuiteConfig:
    """Parse a YAML suite document into a fully populated SuiteConfig.

    Suite defaults are applied to every per-benchmark field that the
    document leaves absent; per-benchmark values always win.

    Raises:
        SuiteError: on YAML syntax errors (position reported), unknown
            keys, unknown scale modes, duplicate names, or a missing or
            empty ``run_cmd``.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SuiteError(f"suite document is not valid YAML: {exc}") from exc
    if raw is None:
        raise SuiteError("suite document is empty")
    if not isinstance(raw, dict):
        raise SuiteError("suite document must be a mapping")

    _check_keys(raw, {"suite", "defaults", "targets", "benchmarks"}, "top level")

    suite_name = raw.get("suite", "unnamed")
    if not isinstance(suite_name, str) or not suite_name.strip():
        raise SuiteError("'suite' must be a non-empty string")

    defaults = _parse_defaults(raw.get("defaults"))
    targets = _parse_targets(raw.get("targets"))

    raw_benchmarks = raw.get("benchmarks")
    if not raw_benchmarks:
        raise SuiteError("suite must declare at least one benchmark")
    if not isinstance(raw_benchmarks, list):
        raise SuiteError("'benchmarks' must be a list")

    benchmarks: list[BenchmarkSpec] = []
    seen: set[str] = set()
    for i, item in enumerate(raw_benchmarks):
        bench = _parse_benchmark(item, i, defaults)
        if bench.name in seen:
            raise SuiteError(f"duplicate benchmark name {bench.name!r}")
        seen.add(bench.name)
        benchmarks.append(bench)

    return SuiteConfig(
        suite_name=suite_name.strip(),
        benchmarks=tuple(benchmarks),
        defaults=defaults,
        targets=targets,
    )


def load_suite(path: Any) -> SuiteConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_suite(f.read())


def validate_suite(cfg: SuiteConfig) -> list[str]:
    """Check every suite invariant; return one description per violation.

    Violations are data, not failures: an empty list means the suite is
    valid. Each entry names the offending benchmark and field.
    """
    violations: list[str] = []
    if not cfg.benchmarks:
        violations.append("suite: at least one benchmark required")
    for bench in cfg.benchmarks:
        where = f"benchmark {bench.name!r}"
        if bench.weight < 0:
            violations.append(f"{where}: weight must be >= 0, got {bench.weight}")
        if bench.obs_min <= 0:
            violations.append(f"{where}: obs_min must be positive, got {bench.obs_min}")
        if bench.obs_min > bench.obs_max:
            violations.append(
                f"{where}: obs_min <= obs_max required, got {bench.obs_min} > {bench.obs_max}"
            )
        if not bench.run_cmd.strip():
            violations.append(f"{where}: run_cmd must be non-empty")
        if bench.scale not in SCALE_MODES:
            violations.append(f"{where}: scale must be one of {SCALE_MODES}, got {bench.scale!r}")
        if bench.timeout_s <= 0:
            violations.append(f"{where}: timeout_s must be positive, got {bench.timeout_s}")
    enabled_weight = sum(b.weight for b in cfg.benchmarks if b.enabled)
    if cfg.benchmarks and enabled_weight <= 0:
        violations.append("suite: total weight of enabled benchmarks must be > 0")
    if cfg.targets is not None:
        violations.extend(_validate_targets(cfg.targets))
    return violations


def _validate_targets(targets: CoverageTargets) -> list[str]:
    violations: list[str] = []
    for dim, columns in targets.dimensions.items():
        for col, prop in columns.items():
            if not 0.0 <= prop <= 1.0:
                violations.append(f"targets.{dim}.{col}: proportion must be in [0,1], got {prop}")
        if dim == "model_sizes" and columns:
            total = sum(columns.values())
            if abs(total - 1.0) > 1e-9:
                violations.append(
                    f"targets.model_sizes: proportions must sum to 1, got {total!r}"
                )
    return violations


def select_benchmarks(cfg: SuiteConfig, selector: str) -> SuiteConfig:
    """Filter a suite down to the enabled benchmarks matching ``selector``.

    Selector grammar: comma-separated terms, matched as a union. A bare
    term is a glob over benchmark names; ``key=value`` filters on a tag
    dimension (``domain=NLP``, ``arch=CNN``, ``size=70B``,
    ``parallelism=1-Node Data-Par.``, ``library=JAX``) or on
    ``name=<glob>``. Order and weights are untouched.

    Raises:
        SuiteError: when the selection comes out empty, which would
            otherwise produce a silent no-op run.
    """
    terms = [t.strip() for t in selector.split(",") if t.strip()]
    if not terms:
        raise SuiteError("empty selector")

    matched = tuple(
        b for b in cfg.benchmarks if b.enabled and any(_matches(b, t) for t in terms)
    )
    if not matched:
        raise SuiteError(f"selector {selector!r} matches no enabled benchmark")
    return replace(cfg, benchmarks=matched)


_SELECTOR_KEYS = {
    "name": "name",
    "domain": "domains",
    "arch": "architectures",
    "architecture": "architectures",
    "size": "model_sizes",
    "parallelism": "parallelism",
    "library": "libraries",
    "lib": "libraries",
}


def _matches(bench: BenchmarkSpec, term: str) -> bool:
    if "=" not in term:
        return fnmatch.fnmatchcase(bench.name, term)
    key, _, value = term.partition("=")
    key = key.strip().lower()
    value = value.strip()
    if key not in _SELECTOR_KEYS:
        raise SuiteError(
            f"unknown selector key {key!r}; expected one of {sorted(_SELECTOR_KEYS)}"
        )
    target = _SELECTOR_KEYS[key]
    if target == "name":
        return fnmatch.fnmatchcase(bench.name, value)
    if bench.tags is None:
        return False
    return value in bench.tags.labels(target)


def render_suite(cfg: SuiteConfig) -> str:
    """Render a SuiteConfig back to YAML such that reparsing round-trips.

    Every field is written explicitly, so the output is also the
    canonical form hashed by ``SuiteConfig.sha256``.
    """
    doc: dict[str, Any] = {
        "suite": cfg.suite_name,
        "defaults": {
            "obs_min": cfg.defaults.obs_min,
            "obs_max": cfg.defaults.obs_max,
            "timeout_s": cfg.defaults.timeout_s,
        },
        "benchmarks": [_render_benchmark(b) for b in cfg.benchmarks],
    }
    if cfg.targets is not None:
        doc["targets"] = {
            dim: {col: float(p) for col, p in sorted(columns.items())}
            for dim, columns in sorted(cfg.targets.dimensions.items())
        }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def _render_benchmark(bench: BenchmarkSpec) -> dict[str, Any]:
    out: dict[str, Any] = {
        "name": bench.name,
        "weight": float(bench.weight),
        "enabled": bench.enabled,
        "scale": bench.scale,
        "run_cmd": bench.run_cmd,
        "unit_of_work": bench.unit_of_work,
        "obs_min": bench.obs_min,
        "obs_max": bench.obs_max,
        "timeout_s": bench.timeout_s,
    }
    if bench.install_cmd:
        out["install_cmd"] = bench.install_cmd
    if bench.prepare_cmd:
        out["prepare_cmd"] = bench.prepare_cmd
    if bench.env:
        out["env"] = dict(sorted(bench.env.items()))
    if bench.tags is not None:
        out["tags"] = {
            "domains": sorted(bench.tags.domains),
            "architectures": sorted(bench.tags.architectures),
            "model_size_class": bench.tags.model_size_class,
            "parallelism": sorted(bench.tags.parallelism),
            "libraries": sorted(bench.tags.libraries),
        }
    return out


def _check_keys(raw: dict[str, Any], allowed: set[str], context: str) -> None:
    for key in raw:
        if key not in allowed:
            raise SuiteError(
                f"{context}: unknown key {key!r}; allowed keys: {sorted(allowed)}"
            )


def _parse_defaults(raw: Any) -> BenchmarkDefaults:
    if raw is None:
        return BenchmarkDefaults()
    if not isinstance(raw, dict):
        raise SuiteError("'defaults' must be a mapping")
    _check_keys(raw, {"obs_min", "obs_max", "timeout_s"}, "defaults")
    obs_min = _int_field(raw, "obs_min", "defaults", DEFAULT_OBS_MIN, minimum=1)
    obs_max = _int_field(raw, "obs_max", "defaults", DEFAULT_OBS_MAX, minimum=1)
    timeout_s = _number_field(raw, "timeout_s", "defaults", DEFAULT_TIMEOUT_S)
    if obs_min > obs_max:
        raise SuiteError(f"defaults: obs_min <= obs_max required, got {obs_min} > {obs_max}")
    return BenchmarkDefaults(obs_min=obs_min, obs_max=obs_max, timeout_s=timeout_s)


def _parse_targets(raw: Any) -> CoverageTargets | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise SuiteError("'targets' must be a mapping")
    _check_keys(raw, set(TAG_DIMENSIONS), "targets")
    dimensions: dict[str, dict[str, float]] = {}
    for dim, columns in raw.items():
        if not isinstance(columns, dict):
            raise SuiteError(f"targets.{dim}: must be a mapping of column -> proportion")
        parsed: dict[str, float] = {}
        for col, prop in columns.items():
            if isinstance(prop, bool) or not isinstance(prop, (int, float)):
                raise SuiteError(f"targets.{dim}.{col}: proportion must be a number")
            if not 0.0 <= float(prop) <= 1.0:
                raise SuiteError(f"targets.{dim}.{col}: proportion must be in [0,1], got {prop}")
            parsed[str(col)] = float(prop)
        dimensions[dim] = parsed
    if "model_sizes" in dimensions and dimensions["model_sizes"]:
        total = sum(dimensions["model_sizes"].values())
        if abs(total - 1.0) > 1e-9:
            raise SuiteError(f"targets.model_sizes: proportions must sum to 1, got {total!r}")
    return CoverageTargets(dimensions=dimensions)


_BENCH_KEYS = {
    "name",
    "weight",
    "enabled",
    "scale",
    "install_cmd",
    "prepare_cmd",
    "run_cmd",
    "env",
    "unit_of_work",
    "obs_min",
    "obs_max",
    "timeout_s",
    "tags",
}


def _parse_benchmark(item: Any, index: int, defaults: BenchmarkDefaults) -> BenchmarkSpec:
    context = f"benchmarks[{index}]"
    if not isinstance(item, dict):
        raise SuiteError(f"{context}: must be a mapping")
    _check_keys(item, _BENCH_KEYS, context)

    name = item.get("name")
    if not isinstance(name, str) or not name.strip():
        raise SuiteError(f"{context}: missing or empty 'name'")
    name = name.strip()
    context = f"benchmarks[{index}] ({name})"

    run_cmd = item.get("run_cmd")
    if not isinstance(run_cmd, str) or not run_cmd.strip():
        raise SuiteError(f"{context}: missing run_cmd")

    scale = item.get("scale", "single-device")
    if scale not in SCALE_MODES:
        raise SuiteError(f"{context}: unknown scale mode {scale!r}; expected one of {SCALE_MODES}")

    weight = _number_field(item, "weight", context, 1.0, minimum=0.0)
    enabled = item.get("enabled", True)
    if not isinstance(enabled, bool):
        raise SuiteError(f"{context}: 'enabled' must be a boolean")

    obs_min = _int_field(item, "obs_min", context, defaults.obs_min, minimum=1)
    obs_max = _int_field(item, "obs_max", context, defaults.obs_max, minimum=1)
    if obs_min > obs_max:
        raise SuiteError(f"{context}: obs_min <= obs_max required, got {obs_min} > {obs_max}")
    timeout_s = _number_field(item, "timeout_s", context, defaults.timeout_s)
    if timeout_s <= 0:
        raise SuiteError(f"{context}: timeout_s must be positive")

    env_raw = item.get("env") or {}
    if not isinstance(env_raw, dict):
        raise SuiteError(f"{context}: 'env' must be a mapping")
    env = {str(k): str(v) for k, v in env_raw.items()}

    unit_of_work = item.get("unit_of_work", "items")
    if not isinstance(unit_of_work, str) or not unit_of_work:
        raise SuiteError(f"{context}: 'unit_of_work' must be a non-empty string")

    _check_command_template(run_cmd, f"{context}.run_cmd")
    install_cmd = item.get("install_cmd", "")
    prepare_cmd = item.get("prepare_cmd", "")
    for label, cmd in (("install_cmd", install_cmd), ("prepare_cmd", prepare_cmd)):
        if not isinstance(cmd, str):
            raise SuiteError(f"{context}: '{label}' must be a string")
        if cmd:
            _check_command_template(cmd, f"{context}.{label}")

    return BenchmarkSpec(
        name=name,
        weight=weight,
        enabled=enabled,
        scale=scale,
        install_cmd=install_cmd,
        prepare_cmd=prepare_cmd,
        run_cmd=run_cmd,
        env=env,
        unit_of_work=unit_of_work,
        obs_min=obs_min,
        obs_max=obs_max,
        timeout_s=float(timeout_s),
        tags=_parse_tags(item.get("tags"), context),
    )


def _parse_tags(raw: Any, context: str) -> TaxonomyTags | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise SuiteError(f"{context}: 'tags' must be a mapping")
    _check_keys(
        raw,
        {"domains", "architectures", "model_size_class", "parallelism", "libraries"},
        f"{context}.tags",
    )
    size = raw.get("model_size_class", "")
    if not isinstance(size, str):
        raise SuiteError(f"{context}.tags.model_size_class: must be a single text label")

    def label_set(key: str) -> frozenset[str]:
        values = raw.get(key) or []
        if isinstance(values, str):
            values = [values]
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise SuiteError(f"{context}.tags.{key}: must be a list of text labels")
        return frozenset(values)

    return TaxonomyTags(
        domains=label_set("domains"),
        architectures=label_set("architectures"),
        model_size_class=size,
        parallelism=label_set("parallelism"),
        libraries=label_set("libraries"),
    )


def _check_command_template(cmd: str, context: str) -> None:
    try:
        cmd.format_map(_PlaceholderCheck())
    except KeyError as exc:
        raise SuiteError(
            f"{context}: unknown placeholder {{{exc.args[0]}}}; "
            f"allowed: {', '.join('{' + p + '}' for p in COMMAND_PLACEHOLDERS)}"
        ) from None
    except ValueError as exc:
        raise SuiteError(f"{context}: malformed command template: {exc}") from None


class _PlaceholderCheck(dict):
    def __missing__(self, key: str) -> str:
        if key in COMMAND_PLACEHOLDERS:
            return ""
        raise KeyError(key)


def _int_field(raw: dict[str, Any], key: str, context: str, default: int, minimum: int) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SuiteError(f"{context}: '{key}' must be an integer")
    if value < minimum:
        raise SuiteError(f"{context}: '{key}' must be >= {minimum}, got {value}")
    return value


def _number_field(
    raw: dict[str, Any], key: str, context: str, default: float, minimum: float | None = None
) -> float:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SuiteError(f"{context}: '{key}' must be a number")
    if minimum is not None and value < minimum:
        raise SuiteError(f"{context}: '{key}' must be >= {minimum}, got {value}")
    return float(value)
