"""Run configuration: an INI-style ``key = value`` file with bracketed sections.

Example::

    [data]
    source = phantom
    phantom_count = 70
    train_count = 50
    test_count = 20

    [network]
    norm_scheme = instance_batch_first

    [train]
    epochs = 40
    seed = 0

    [augment]
    multiplicity = 2

    [output]
    dir = runs/ibu

Unknown sections or keys are rejected so typos do not silently fall back
to defaults.
"""

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .augmentation import AugPolicy
from .dataio import SPLITS, PhantomParams, gen_phantom, load_manifest, load_split, split_by_patient
from .errors import ConfigError
from .images import DEFAULT_SPACING
from .network import NetworkConfig
from .training import TrainConfig


@dataclass
class DataSource:
    source: str = "phantom"
    phantom_count: int = 70
    phantom_h: int = 32
    phantom_w: int = 32
    train_count: int = 50
    val_count: int = 0
    test_count: int = 20
    seed: int = 0
    manifest: str = ""
    ratios: tuple = (1 / 3, 1 / 3, 1 / 3)
    split_seed: int = 0
    spacing_mm: tuple = DEFAULT_SPACING

    def validate(self):
        if self.source not in ("phantom", "manifest"):
            raise ConfigError("must be 'phantom' or 'manifest'", field="data.source")
        if self.source == "phantom":
            if self.manifest:
                raise ConfigError("give exactly one dataset source (phantom or manifest)", field="data.manifest")
            if self.train_count < 1:
                raise ConfigError("must be >= 1", field="data.train_count")
            if min(self.val_count, self.test_count) < 0:
                raise ConfigError("must be >= 0", field="data.val_count")
            if self.train_count + self.val_count + self.test_count != self.phantom_count:
                raise ConfigError("train_count + val_count + test_count must equal phantom_count",
                                  field="data.phantom_count")
        elif not self.manifest:
            raise ConfigError("manifest source needs a path", field="data.manifest")
        return self


@dataclass
class RunConfig:
    data: DataSource = field(default_factory=DataSource)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugPolicy = field(default_factory=AugPolicy.disabled)
    output_dir: Path = Path("out")
    base_dir: Path = Path(".")

    def validate(self):
        self.data.validate()
        self.network.validate()
        self.train.validate()
        self.augment.validate()
        return self


_SECTIONS = {"data": DataSource, "network": NetworkConfig, "train": TrainConfig, "augment": AugPolicy}
_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _convert(raw, typ, name, line):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected yes/no, got {raw!r}")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(_number(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(str(exc), field=name, line=line) from exc


def _number(s):
    s = s.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def _locate(text, section, key):
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        m = re.match(r"\s*([^=:#;\s]+)\s*[=:]", line)
        if m and current == section and m.group(1).strip().lower() == key:
            return lineno
    return None


def parse_config(text, base_dir=Path(".")):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from exc
    run = RunConfig(base_dir=Path(base_dir))
    for section in parser.sections():
        if section == "output":
            for key, raw in parser.items(section):
                if key != "dir":
                    raise ConfigError("unknown key", field=f"output.{key}", line=_locate(text, section, key))
                run.output_dir = Path(raw.strip())
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown section [{section}]", line=_locate_section(text, section))
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            line = _locate(text, section, key)
            if key not in types:
                raise ConfigError("unknown key", field=f"{section}.{key}", line=line)
            values[key] = _convert(raw, types[key], f"{section}.{key}", line)
        base = getattr(run, section)
        setattr(run, section, dataclasses.replace(base, **values))
    try:
        return run.validate()
    except ConfigError as exc:
        if exc.line is not None or not exc.field:
            raise
        sec, _, key = exc.field.rpartition(".")
        sec = sec or _owner(key)
        raise ConfigError(exc.message, field=f"{sec}.{key}", line=_locate(text, sec, key)) from exc


def _owner(fieldname):
    for name, cls in _SECTIONS.items():
        if fieldname in {f.name for f in dataclasses.fields(cls)}:
            return name
    return "data"


def _locate_section(text, section):
    for lineno, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"\s*\[{re.escape(section)}\]", line):
            return lineno
    return None


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    return parse_config(text, path.parent)


def dump_config(run):
    """Serialize back to the INI text format (round-trips through parse_config)."""
    out = []
    for section, cls in _SECTIONS.items():
        obj = getattr(run, section)
        out.append(f"[{section}]")
        for f in dataclasses.fields(cls):
            v = getattr(obj, f.name)
            if isinstance(v, bool):
                v = "yes" if v else "no"
            elif isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            out.append(f"{f.name} = {v}")
        out.append("")
    out += ["[output]", f"dir = {run.output_dir.as_posix()}", ""]
    return "\n".join(out)


def load_datasets(run):
    """Return {"train": pairs, "val": pairs, "test": pairs} for the configured source."""
    d = run.data
    if d.source == "phantom":
        params = PhantomParams(spacing_mm=d.spacing_mm)
        pairs = gen_phantom(d.phantom_count, d.phantom_h, d.phantom_w, d.seed, params)
        a = d.train_count
        b = a + d.val_count
        return {"train": pairs[:a], "val": pairs[a:b], "test": pairs[b:]}
    path = Path(d.manifest)
    if not path.is_absolute():
        path = run.base_dir / path
    manifest = load_manifest(path)
    if any(not e.split for e in manifest.entries):
        manifest = split_by_patient(manifest, d.ratios, d.split_seed)
    return {s: load_split(manifest, s, d.spacing_mm) for s in SPLITS}
