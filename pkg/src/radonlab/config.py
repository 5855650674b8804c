"""Problem configuration: an INI file (``[section]`` / ``key = value``).

Grammar::

    file     := (comment | section)*
    section  := "[" name "]" NEWLINE (entry | comment)*
    entry    := key "=" value        ; continuation lines are indented
    comment  := ("#" | ";") text

Sections and keys (all optional, defaults in :data:`DEFAULTS`):

``[problem]``   gamma (DSL text), N, n, e (``single`` | ``coordinate`` |
                rows like ``1,0; 0,1``), aliases (``s=t1, t=t2``), name, seed
``[truncation]`` L_t, L_x
``[analysis]``  cutoff, numeric, conditions
``[divide]``    f, generators (``;``-separated, components ``|``-separated)
``[control]``   target (field), degree, fields (``;``-separated), degrees
``[kernel]``    a, k, kind, fixed, J, resolution
``[operator]``  x_points, x_lo, x_hi, psi1_radius, psi1_plateau, psi2_radius,
                psi2_plateau, a, t_nodes, J_min, J_max, p, trials
``[ccball]``    fields, degrees, x0, deltas, paths, segments, seed
``[maximal]``   J, x_points, x_lo, x_hi, a, t_nodes, psi1_radius, psi1_plateau
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .core import DilationSpec, TruncationPolicy

DEFAULTS: dict[str, dict[str, str]] = {
    "problem": {"gamma": "x1 + t1", "N": "", "n": "", "e": "single", "aliases": "", "name": "", "seed": "0"},
    "truncation": {"L_t": "3", "L_x": "3"},
    "analysis": {"cutoff": "", "numeric": "false", "conditions": "I, II.A, II.F, III.A, III.F"},
    "divide": {"f": "", "generators": ""},
    "control": {"target": "", "degree": "", "fields": "", "degrees": ""},
    "kernel": {"a": "0.5", "k": "6", "kind": "odd", "fixed": "true", "J": "8", "J_min": "6",
               "resolution": "4096"},
    "operator": {"x_points": "4096", "x_lo": "-1", "x_hi": "1", "psi1_radius": "0.4", "psi1_plateau": "0.2",
                 "psi2_radius": "", "psi2_plateau": "0", "a": "0.5", "t_nodes": "16", "J_min": "2",
                 "J_max": "8", "p": "2", "trials": "16"},
    "ccball": {"fields": "d1; x1*d2", "degrees": "1; 1", "x0": "0, 0", "deltas": "0.025, 0.05, 0.1, 0.2",
               "paths": "10000", "segments": "32"},
    "maximal": {"J": "1", "x_points": "", "x_lo": "-2", "x_hi": "2", "a": "0.1", "t_nodes": "6",
                "psi1_radius": "0.3", "psi1_plateau": "0.1", "extra_scales": "4"},
}


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def parse_dilations(text: str, N: int) -> DilationSpec:
    text = text.strip()
    if text in ("", "single"):
        return DilationSpec.single(N)
    if text == "coordinate":
        return DilationSpec.coordinate(N)
    rows = [r for r in text.split(";") if r.strip()]
    try:
        e = tuple(tuple(int(v) for v in r.split(",")) for r in rows)
    except ValueError as exc:
        raise ConfigError(f"bad dilation rows {text!r}") from exc
    if len(e) != N:
        raise ConfigError(f"dilations give {len(e)} rows, N = {N}")
    return DilationSpec(e)


def parse_aliases(text: str) -> dict[str, str]:
    out = {}
    for item in text.replace(";", ",").split(","):
        if item.strip():
            k, _, v = item.partition("=")
            if not v:
                raise ConfigError(f"alias {item!r} needs the form name=target")
            out[k.strip()] = v.strip()
    return out


def floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def int_rows(text: str) -> list[tuple[int, ...]]:
    return [tuple(int(v) for v in r.split(",")) for r in text.split(";") if r.strip()]


@dataclass
class ProblemConfig:
    sections: dict[str, dict[str, str]] = field(default_factory=dict)
    source_text: str = ""

    @classmethod
    def from_text(cls, text: str) -> "ProblemConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str  # keep key case (L_t, N, n)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        sections = {k: dict(v) for k, v in DEFAULTS.items()}
        for sec in cp.sections():
            if sec not in sections:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in cp.items(sec):
                if k not in sections[sec]:
                    raise ConfigError(f"unknown key {k!r} in [{sec}]")
                sections[sec][k] = v.strip()
        cfg = cls(sections, text)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ProblemConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def get(self, sec: str, key: str) -> str:
        return self.sections[sec][key]

    def _typed(self, sec: str, key: str, conv):
        raw = self.sections[sec][key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from None

    def geti(self, sec: str, key: str) -> int:
        return self._typed(sec, key, int)

    def getf(self, sec: str, key: str) -> float:
        return self._typed(sec, key, float)

    def getb(self, sec: str, key: str) -> bool:
        return self._typed(sec, key, _bool)

    def set(self, sec: str, key: str, value) -> None:
        self.sections[sec][key] = str(value)

    # derived ------------------------------------------------------------------
    @property
    def policy(self) -> TruncationPolicy:
        return TruncationPolicy(self.geti("truncation", "L_t"), self.geti("truncation", "L_x"))

    @property
    def aliases(self) -> dict[str, str]:
        return parse_aliases(self.get("problem", "aliases"))

    @property
    def seed(self) -> int:
        return self.geti("problem", "seed")

    def dims(self) -> tuple[int, int]:
        from .dsl import infer_dims

        N, n = self.get("problem", "N"), self.get("problem", "n")
        iN, inn = infer_dims(self.get("problem", "gamma"), self.aliases)
        return (int(N) if N else iN), (int(n) if n else inn)

    @property
    def dilations(self) -> DilationSpec:
        N, _ = self.dims()
        return parse_dilations(self.get("problem", "e"), N)

    def surface(self):
        from .dsl import parse_gamma_dsl

        N, n = self.dims()
        return parse_gamma_dsl(self.get("problem", "gamma"), N=N, n=n, dilations=self.dilations,
                               policy=self.policy, aliases=self.aliases,
                               name=self.get("problem", "name") or "gamma")

    def validate(self) -> None:
        """Dimensional consistency and parseability of every DSL entry in use."""
        from .dsl import DSLError

        N, n = self.dims()
        if N < 1 or n < 1:
            raise ConfigError("could not determine N and n from [problem]")
        self.dilations
        try:
            self.surface()
        except DSLError as exc:
            raise ConfigError(f"[problem] gamma: {exc}") from exc
        fields = [f for f in self.get("ccball", "fields").split(";") if f.strip()]
        degs = int_rows(self.get("ccball", "degrees"))
        if len(fields) != len(degs):
            raise ConfigError("[ccball] needs one degree per field")

    def to_dict(self) -> dict:
        return {sec: dict(v) for sec, v in self.sections.items()}
